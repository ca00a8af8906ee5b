//! Build an EMSC model from a tissue reference, paraffin and water-vapour
//! spectra, then undo a synthetic distortion.

use carenet::chemometrics::{emsc_build_model, emsc_correct};
use carenet::linalg::Matrix;
use carenet::model::INPUT_LENGTH;
use carenet::spectral::{build_axis, BIOFINGERPRINT};

fn gauss(wn: &[f64], c: f64, s: f64) -> Vec<f64> {
    wn.iter()
        .map(|w| (-0.5 * ((w - c) / s).powi(2)).exp())
        .collect()
}

fn main() -> carenet::Result<()> {
    let axis = build_axis(BIOFINGERPRINT.high, BIOFINGERPRINT.low, INPUT_LENGTH)?;
    let wn = axis.values();
    let amide_i = gauss(&wn, 1655.0, 15.0);
    let amide_ii = gauss(&wn, 1545.0, 14.0);
    let reference: Vec<f64> = amide_i
        .iter()
        .zip(&amide_ii)
        .map(|(a, b)| a + 0.6 * b)
        .collect();

    let (p1, p2) = (gauss(&wn, 1462.0, 6.0), gauss(&wn, 1373.0, 4.0));
    let paraffin: Vec<Vec<f64>> = (0..8)
        .map(|k| {
            p1.iter()
                .zip(&p2)
                .map(|(a, b)| (1.0 + 0.1 * k as f64) * a + 0.25 * b)
                .collect()
        })
        .collect();
    let water: Vec<Vec<f64>> = (0..8)
        .map(|k| {
            let l = [
                gauss(&wn, 1698.0, 2.0),
                gauss(&wn, 1559.0, 2.0),
                gauss(&wn, 1507.0, 2.0),
            ];
            (0..wn.len())
                .map(|i| (0.2 + 0.1 * k as f64) * (l[0][i] + 0.7 * l[1][i] + 0.5 * l[2][i]))
                .collect()
        })
        .collect();
    let model = emsc_build_model(
        &reference,
        &Matrix::from_rows(&paraffin)?,
        &Matrix::from_rows(&water)?,
        &axis,
    )?;
    println!(
        "{} columns: reference, 5 baseline, {} paraffin, {} water",
        model.n_columns(),
        model.paraffin_range().len(),
        model.h2o_range().len()
    );

    // scaled reference on a sloped baseline with paraffin left in
    let scaled = axis.scaled();
    let p = model.paraffin_range().start;
    let x: Vec<f64> = (0..wn.len())
        .map(|i| 1.7 * reference[i] + 0.05 + 0.03 * scaled[i] + 0.4 * model.column(p)[i])
        .collect();
    let out = emsc_correct(&x, &model)?;
    let err = out
        .corrected
        .iter()
        .zip(&reference)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!(
        "reference coefficient {:.6}, max error after correction {err:.1e}",
        out.coefficients[0]
    );
    Ok(())
}
