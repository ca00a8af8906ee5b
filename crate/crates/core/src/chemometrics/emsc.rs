use nalgebra::{DMatrix, DVector};
use std::ops::Range;

use super::pca::{pca_fit, ComponentSelector};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::spectral::{Band, WavenumberAxis, H2O_MASK, PARAFFIN_MASK};

/// Order of the polynomial baseline (five columns).
pub const BASELINE_ORDER: usize = 4;

const INTERFERENT_VARIANCE: f64 = 0.99;
const MIN_REFERENCE_COEFFICIENT: f64 = 1e-6;
// relative residual below which a new interferent column counts as dependent
const DEPENDENT_COLUMN: f64 = 1e-8;

/// Design matrix of reference, baseline and masked interferent columns,
/// with a thin QR factorisation for least-squares solves.
#[derive(Debug, Clone)]
pub struct EmscModel {
    axis: WavenumberAxis,
    columns: Vec<Vec<f64>>,
    paraffin: Range<usize>,
    h2o: Range<usize>,
    dropped: usize,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

/// Corrected spectrum and the fitted coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct EmscResult {
    pub corrected: Vec<f64>,
    /// `[reference, baseline…, paraffin…, h2o…]`
    pub coefficients: Vec<f64>,
    pub residual_norm: f64,
}

impl EmscModel {
    pub fn axis(&self) -> &WavenumberAxis {
        &self.axis
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.columns[i]
    }

    pub fn reference(&self) -> &[f64] {
        &self.columns[0]
    }

    pub fn baseline_range(&self) -> Range<usize> {
        1..2 + BASELINE_ORDER
    }

    pub fn paraffin_range(&self) -> Range<usize> {
        self.paraffin.clone()
    }

    pub fn h2o_range(&self) -> Range<usize> {
        self.h2o.clone()
    }

    /// Interferent columns left out because they were linearly dependent on
    /// earlier ones.
    pub fn dropped_columns(&self) -> usize {
        self.dropped
    }

    fn solve(&self, x: &[f64]) -> Vec<f64> {
        let rhs = self.q.tr_mul(&DVector::from_column_slice(x));
        let m = self.columns.len();
        let mut c = vec![0.0; m];
        for i in (0..m).rev() {
            let mut s = rhs[i];
            for j in i + 1..m {
                s -= self.r[(i, j)] * c[j];
            }
            c[i] = s / self.r[(i, i)];
        }
        c
    }
}

fn masked(values: &[f64], range: &Range<usize>) -> Vec<f64> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| if range.contains(&i) { v } else { 0.0 })
        .collect()
}

/// Mean plus enough principal components for 99% of the variance, all
/// zeroed outside `mask`.
fn interferent_basis(
    set: &Matrix,
    axis: &WavenumberAxis,
    mask: &Band,
    name: &str,
) -> Result<Vec<Vec<f64>>> {
    if set.is_empty() {
        return Err(Error::Degenerate(format!(
            "no {name} spectra for the EMSC model"
        )));
    }
    if set.cols() != axis.len() {
        return Err(Error::LengthMismatch {
            expected: axis.len(),
            got: set.cols(),
        });
    }
    let range = axis.band_range(mask)?;
    let mut basis = vec![masked(&set.column_mean(), &range)];
    if set.rows() >= 2 {
        match pca_fit(
            set,
            ComponentSelector::VarianceThreshold(INTERFERENT_VARIANCE),
        ) {
            Ok(pca) => {
                for l in pca.loadings().iter_rows() {
                    basis.push(masked(l, &range));
                }
            }
            Err(Error::Degenerate(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(basis)
}

/// Residual of `v` after projection on the orthonormal set `ortho`.
fn orthogonal_residual(v: &[f64], ortho: &[Vec<f64>]) -> Vec<f64> {
    let mut r = v.to_vec();
    // two passes of modified Gram-Schmidt
    for _ in 0..2 {
        for o in ortho {
            let p = dot(&r, o);
            r.iter_mut().zip(o).for_each(|(a, b)| *a -= p * b);
        }
    }
    r
}

/// Assembles the EMSC design matrix from a tissue reference and paraffin
/// and water-vapour spectra sharing one axis.
pub fn emsc_build_model(
    tissue_mean: &[f64],
    paraffin: &Matrix,
    h2o: &Matrix,
    axis: &WavenumberAxis,
) -> Result<EmscModel> {
    if tissue_mean.len() != axis.len() {
        return Err(Error::LengthMismatch {
            expected: axis.len(),
            got: tissue_mean.len(),
        });
    }
    let scaled = axis.scaled();
    let mut columns = vec![tissue_mean.to_vec()];
    for p in 0..=BASELINE_ORDER {
        columns.push(scaled.iter().map(|x| x.powi(p as i32)).collect());
    }

    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for c in &columns {
        let r = orthogonal_residual(c, &ortho);
        let norm = dot(&r, &r).sqrt();
        if norm <= DEPENDENT_COLUMN * dot(c, c).sqrt() {
            return Err(Error::Degenerate(
                "tissue reference is collinear with the polynomial baseline".into(),
            ));
        }
        ortho.push(r.iter().map(|v| v / norm).collect());
    }

    let mut dropped = 0;
    let mut push_block = |basis: Vec<Vec<f64>>, columns: &mut Vec<Vec<f64>>| -> Range<usize> {
        let start = columns.len();
        for c in basis {
            let r = orthogonal_residual(&c, &ortho);
            let norm = dot(&r, &r).sqrt();
            let scale = dot(&c, &c).sqrt();
            if scale == 0.0 || norm <= DEPENDENT_COLUMN * scale {
                dropped += 1;
                continue;
            }
            ortho.push(r.iter().map(|v| v / norm).collect());
            columns.push(c);
        }
        start..columns.len()
    };
    let paraffin_range = push_block(
        interferent_basis(paraffin, axis, &PARAFFIN_MASK, "paraffin")?,
        &mut columns,
    );
    let h2o_range = push_block(
        interferent_basis(h2o, axis, &H2O_MASK, "H2O")?,
        &mut columns,
    );
    if dropped > 0 {
        log::debug!("EMSC: dropped {dropped} dependent interferent column(s)");
    }

    if columns.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "EMSC design matrix has non-finite entries".into(),
        ));
    }
    let n = axis.len();
    let design = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
    let qr = design.qr();
    Ok(EmscModel {
        axis: *axis,
        columns,
        paraffin: paraffin_range,
        h2o: h2o_range,
        dropped,
        q: qr.q(),
        r: qr.r(),
    })
}

/// Least-squares EMSC fit; the corrected spectrum is the input minus the
/// fitted baseline and interferents, divided by the reference coefficient.
pub fn emsc_correct(spectrum: &[f64], model: &EmscModel) -> Result<EmscResult> {
    if spectrum.len() != model.axis.len() {
        return Err(Error::LengthMismatch {
            expected: model.axis.len(),
            got: spectrum.len(),
        });
    }
    let coefficients = model.solve(spectrum);
    let mut fitted = vec![0.0; spectrum.len()];
    let mut nuisance = vec![0.0; spectrum.len()];
    for (j, (col, &c)) in model.columns.iter().zip(&coefficients).enumerate() {
        for i in 0..spectrum.len() {
            fitted[i] += c * col[i];
            if j > 0 {
                nuisance[i] += c * col[i];
            }
        }
    }
    let residual_norm = spectrum
        .iter()
        .zip(&fitted)
        .map(|(x, f)| (x - f) * (x - f))
        .sum::<f64>()
        .sqrt();
    let b = coefficients[0];
    if !b.is_finite() || b.abs() < MIN_REFERENCE_COEFFICIENT {
        return Err(Error::Degenerate(format!(
            "reference coefficient {b:e}: spectrum is not tissue-like"
        )));
    }
    let corrected: Vec<f64> = spectrum
        .iter()
        .zip(&nuisance)
        .map(|(x, n)| (x - n) / b)
        .collect();
    if corrected.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("EMSC produced non-finite values".into()));
    }
    Ok(EmscResult {
        corrected,
        coefficients,
        residual_norm,
    })
}
