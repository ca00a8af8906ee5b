//! Train on data whose classes differ only at 1550-1510 cm⁻¹ and check where
//! the class-averaged Grad-CAM heatmaps put their weight.

use carenet::gradcam::{
    build_heatmap, gradcam_batch, heatmap_svg, top_bands, top_decile_mass_near, write_heatmap_csv,
};
use carenet::labels::CoreType;
use carenet::model::Head;
use carenet::pipeline::{
    make_split, patient_subtypes, preprocess_panel, train_fold, PreprocessConfig, TrainConfig,
};
use carenet::synth::{gen_panel, SynthConfig};
use std::fs::File;

fn main() -> carenet::Result<()> {
    let cfg = SynthConfig {
        type_band: [1550.0, 1510.0],
        subtype_separation: 0.0,
        seed: 2,
        ..SynthConfig::default()
    };
    let pcfg = PreprocessConfig {
        max_spectra_per_core: Some(24),
        ..PreprocessConfig::default()
    };
    let set = preprocess_panel(&gen_panel(&cfg)?, &pcfg)?.spectra;
    let split = make_split(&patient_subtypes(&set)?, 2)?;
    let (train, dev) = split.fold_sets(&set, 0, Head::Type)?;
    let tcfg = TrainConfig {
        epochs: 6,
        batch: 32,
        ..TrainConfig::new(Head::Type, 2)
    };
    let model = train_fold(&tcfg, &train, &dev, Some(0), None)?.best;

    let test = split.test_set(&set, Head::Type);
    for (target, core_type) in [(1, CoreType::Cancer), (0, CoreType::Adjacent)] {
        let rows: Vec<&[f32]> = test
            .indices_where(|i| i.core_type == core_type)
            .into_iter()
            .map(|i| test.spectrum(i))
            .collect();
        let maps = gradcam_batch(&model, &rows, target)?;
        let hm = build_heatmap(
            core_type.name(),
            test.axis(),
            &maps,
            "gradcam_heatmap example",
        )?;
        let name = format!("gradcam_{}", core_type.name());
        write_heatmap_csv(&hm, File::create(format!("{name}.csv"))?)?;
        std::fs::write(format!("{name}.svg"), heatmap_svg(&hm, 0.7))?;
        println!(
            "{}: {} spectra, {:.2} of top-decile mass within 20 cm-1 of the band",
            core_type.name(),
            rows.len(),
            top_decile_mass_near(&hm, &cfg.type_band(), 20.0)
        );
        for b in top_bands(&hm, 0.7) {
            println!(
                "  band {:.0}-{:.0} cm-1, peak {:.2}",
                b.high_wn, b.low_wn, b.peak
            );
        }
    }
    Ok(())
}
