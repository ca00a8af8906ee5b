//! Hotelling T² / Q-residual outlier removal on generated tissue spectra
//! with a few injected spikes.

use carenet::chemometrics::OutlierFilter;
use carenet::dataset::PixelClass;
use carenet::labels::CoreType;
use carenet::spectral::BIOFINGERPRINT;
use carenet::synth::{panel_records, Generator, SynthConfig};

fn main() -> carenet::Result<()> {
    let cfg = SynthConfig {
        spike_fraction: 0.01,
        rows: 48,
        cols: 48,
        ..SynthConfig::default()
    };
    let g = Generator::new(cfg.clone())?;
    let (cube, truth) = g.gen_cube(&panel_records(&cfg)[0], CoreType::Cancer)?;
    let mask = truth.mask(cube.rows(), cube.cols(), PixelClass::Tissue)?;
    let (data, pixels, _) = cube.masked_spectra(&mask, &BIOFINGERPRINT)?;

    let out = OutlierFilter::default().apply(&data)?;
    let r = &out.report;
    println!(
        "{} spectra, {} components, T² limit {:.2}, Q limit {:.4}",
        data.rows(),
        r.n_components,
        r.t2_threshold,
        r.q_threshold
    );
    let spiked: Vec<usize> = (0..pixels.len())
        .filter(|&i| truth.spikes[pixels[i]])
        .collect();
    let caught = spiked.iter().filter(|&&i| !r.kept[i]).count();
    println!(
        "rejected {} ({:.1}%), spikes caught {caught}/{}",
        r.n_rejected(),
        100.0 * r.rejected_fraction(),
        spiked.len()
    );
    Ok(())
}
