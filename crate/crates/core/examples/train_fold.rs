//! Train the binary head on one fold of a small synthetic panel and save
//! the best checkpoint.

use carenet::model::{load_checkpoint, Head};
use carenet::pipeline::{
    make_split, patient_subtypes, preprocess_panel, train_fold, PreprocessConfig, TrainConfig,
};
use carenet::synth::{gen_panel, SynthConfig};

fn main() -> carenet::Result<()> {
    let _ = env_logger::try_init();
    let cfg = SynthConfig {
        patients_per_subtype: [3, 3, 3, 3],
        ..SynthConfig::default()
    };
    let pcfg = PreprocessConfig {
        max_spectra_per_core: Some(32),
        ..PreprocessConfig::default()
    };
    let set = preprocess_panel(&gen_panel(&cfg)?, &pcfg)?.spectra;
    let split = make_split(&patient_subtypes(&set)?, 0)?;
    let (train, dev) = split.fold_sets(&set, 0, Head::Type)?;
    println!("{} train / {} dev spectra", train.len(), dev.len());

    let tcfg = TrainConfig {
        epochs: 8,
        batch: 32,
        ..TrainConfig::new(Head::Type, 0)
    };
    let dir = std::env::temp_dir().join("carenet_train_fold");
    let out = train_fold(&tcfg, &train, &dev, Some(0), Some(&dir))?;
    println!("epoch  train_loss  dev_loss  dev_acc  lr");
    for e in &out.history {
        println!(
            "{:>5}  {:>10.4}  {:>8.4}  {:>7.3}  {:e}",
            e.epoch, e.train_loss, e.dev_loss, e.dev_accuracy, e.lr
        );
    }
    let (_, meta) = load_checkpoint(&out.checkpoints[1])?;
    println!(
        "best epoch {} saved to {} (meta epoch {})",
        out.best_epoch,
        out.checkpoints[1].display(),
        meta.epoch
    );
    Ok(())
}
