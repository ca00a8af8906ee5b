//! Two-step K-means segmentation of one generated core, scored against the
//! generator's ground truth. Writes the masks as a PGM image.

use carenet::clustering::{select_paraffin, select_tissue, write_mask_pgm, SegmentationConfig};
use carenet::dataset::PixelClass;
use carenet::labels::CoreType;
use carenet::synth::{panel_records, Generator, SynthConfig};

fn main() -> carenet::Result<()> {
    let cfg = SynthConfig::default();
    let g = Generator::new(cfg.clone())?;
    let (cube, truth) = g.gen_cube(&panel_records(&cfg)[0], CoreType::Cancer)?;

    let seg = SegmentationConfig::default();
    let tissue = select_tissue(&cube, &seg)?;
    let paraffin = select_paraffin(&cube, &tissue.mask, &seg)?;
    let (r, c) = (cube.rows(), cube.cols());
    println!(
        "tissue: {} px, separation {:.1}, accuracy {:.4}",
        tissue.mask.count(),
        tissue.separation,
        tissue
            .mask
            .agreement(&truth.mask(r, c, PixelClass::Tissue)?)
    );
    println!(
        "paraffin: {} px, separation {:.1}, accuracy {:.4}",
        paraffin.mask.count(),
        paraffin.separation,
        paraffin
            .mask
            .agreement(&truth.mask(r, c, PixelClass::Paraffin)?)
    );
    write_mask_pgm(
        std::path::Path::new("masks.pgm"),
        &tissue.mask,
        &paraffin.mask,
    )?;
    println!("wrote masks.pgm (white tissue, grey paraffin)");
    Ok(())
}
