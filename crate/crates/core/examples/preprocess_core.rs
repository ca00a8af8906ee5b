//! Full per-core preprocessing: segmentation, truncation, outlier passes,
//! smoothing, EMSC and min-max scaling.

use carenet::labels::CoreType;
use carenet::pipeline::{preprocess_core, preprocess_environment, PreprocessConfig};
use carenet::synth::{panel_records, Generator, SynthConfig};

fn main() -> carenet::Result<()> {
    let cfg = SynthConfig::default();
    let g = Generator::new(cfg.clone())?;
    let pcfg = PreprocessConfig::default();
    let h2o = preprocess_environment(g.axis(), &g.gen_environment(), &pcfg)?;

    for core_type in [CoreType::Cancer, CoreType::Adjacent] {
        let (cube, _) = g.gen_cube(&panel_records(&cfg)[0], core_type)?;
        let out = preprocess_core(&cube, &h2o, &pcfg)?;
        let c = out.counts;
        println!(
            "{}: {} px -> tissue {} (paraffin {}) -> outliers {} -> EMSC {} -> outliers {} -> kept {}",
            core_type.name(),
            cube.n_pixels(),
            c.tissue,
            c.paraffin,
            c.first_outlier,
            c.emsc,
            c.second_outlier,
            c.kept
        );
        let s = out.spectra.spectrum(0);
        let (lo, hi) = s
            .iter()
            .fold((f32::MAX, f32::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
        println!("  {} points per spectrum, range [{lo}, {hi}]", s.len());
    }
    Ok(())
}
