//! Generate a small synthetic panel and write it to disk.
//!
//! cargo run --release --example synth_panel -- [out_dir]

use carenet::dataset::PixelClass;
use carenet::synth::{gen_panel, write_panel, SynthConfig};

fn main() -> carenet::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "synth_panel_out".into());
    let cfg = SynthConfig {
        patients_per_subtype: [2, 2, 2, 2],
        ..SynthConfig::default()
    };
    let panel = gen_panel(&cfg)?;
    for (cube, truth) in panel.cubes.iter().take(4) {
        println!(
            "core {:>2} patient {} {:<2} {:?}: tissue {} paraffin {} slide {}",
            cube.meta.core_id,
            cube.meta.patient_id,
            cube.meta.core_type.name(),
            cube.meta.subtype.map(|s| s.name()),
            truth.count(PixelClass::Tissue),
            truth.count(PixelClass::Paraffin),
            truth.count(PixelClass::Slide),
        );
    }
    let (index, files) = write_panel(&cfg, std::path::Path::new(&out))?;
    println!(
        "{} cubes for {} patients, {} files under {out}",
        index.cubes.len(),
        index.records.len(),
        files.len()
    );
    Ok(())
}
