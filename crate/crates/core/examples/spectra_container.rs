//! Round-trip preprocessed spectra through the binary container, export CSV
//! and show that a flipped byte is caught by the checksum.

use carenet::dataset::{read_spectraset, write_spectraset};
use carenet::pipeline::{preprocess_panel, PreprocessConfig};
use carenet::synth::{gen_panel, SynthConfig};

fn main() -> carenet::Result<()> {
    let cfg = SynthConfig {
        patients_per_subtype: [1, 1, 1, 1],
        rows: 16,
        cols: 16,
        ..SynthConfig::default()
    };
    let set = preprocess_panel(&gen_panel(&cfg)?, &PreprocessConfig::default())?.spectra;
    let dir = std::env::temp_dir().join("carenet_container_example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("spectra.crns");
    write_spectraset(&set, &path)?;
    let back = read_spectraset(&path)?;
    println!(
        "{} spectra x {} points, {} bytes on disk, identical after reading: {}",
        back.len(),
        back.width(),
        std::fs::metadata(&path)?.len(),
        back == set
    );

    let mut csv = Vec::new();
    set.subset(&[0, 1]).write_csv(&mut csv)?;
    let text = String::from_utf8_lossy(&csv);
    for line in text.lines() {
        println!("{}...", &line[..line.len().min(90)]);
    }

    let mut bytes = std::fs::read(&path)?;
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&path, &bytes)?;
    match read_spectraset(&path) {
        Err(e) => println!("corrupted file rejected: {e}"),
        Ok(_) => println!("corruption went unnoticed"),
    }
    Ok(())
}
