//! Four-fold training of both heads, then spectrum- and patient-level
//! metrics on dev and test sets as CSV on stdout.

use carenet::evaluation::{metric_rows, predict_set, write_metrics_csv};
use carenet::model::Head;
use carenet::pipeline::{
    make_split, patient_subtypes, preprocess_panel, train_fold, PreprocessConfig, TrainConfig,
    N_FOLDS,
};
use carenet::synth::{gen_panel, SynthConfig};

fn main() -> carenet::Result<()> {
    let pcfg = PreprocessConfig {
        max_spectra_per_core: Some(24),
        ..PreprocessConfig::default()
    };
    let set = preprocess_panel(&gen_panel(&SynthConfig::default())?, &pcfg)?.spectra;
    let split = make_split(&patient_subtypes(&set)?, 0)?;

    let mut rows = Vec::new();
    for head in [Head::Type, Head::Subtype] {
        let tcfg = TrainConfig {
            epochs: 6,
            batch: 32,
            ..TrainConfig::new(head, 0)
        };
        let test = split.test_set(&set, head);
        let (mut dev_preds, mut test_preds) = (Vec::new(), Vec::new());
        for k in 0..N_FOLDS {
            let (train, dev) = split.fold_sets(&set, k, head)?;
            let out = train_fold(&tcfg.for_fold(k), &train, &dev, Some(k), None)?;
            eprintln!(
                "{head} fold {k}: best epoch {}, dev loss {:.4}",
                out.best_epoch,
                out.best_dev_loss()
            );
            dev_preds.push(predict_set(&out.best, &dev)?);
            test_preds.push(predict_set(&out.best, &test)?);
        }
        rows.extend(metric_rows("dev", &dev_preds)?);
        rows.extend(metric_rows("test", &test_preds)?);
    }
    write_metrics_csv(&rows, std::io::stdout().lock())
}
