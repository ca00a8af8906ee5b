use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Components whose variance falls below this are left out of T².
pub const MIN_COMPONENT_VARIANCE: f64 = 1e-12;

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ComponentSelector {
    Fixed(usize),
    /// Smallest count whose cumulative explained-variance ratio reaches the
    /// threshold.
    VarianceThreshold(f64),
}

/// Mean-centred PCA fitted by singular value decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// One orthonormal loading per row.
    loadings: Matrix,
    variances: Vec<f64>,
    total_variance: f64,
}

impl PcaModel {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn loadings(&self) -> &Matrix {
        &self.loadings
    }

    pub fn loading(&self, i: usize) -> &[f64] {
        self.loadings.row(i)
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn n_components(&self) -> usize {
        self.variances.len()
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn explained_ratios(&self) -> Vec<f64> {
        self.variances
            .iter()
            .map(|v| v / self.total_variance)
            .collect()
    }

    pub fn project(&self, spectrum: &[f64]) -> Result<Projection> {
        scores_and_residuals(self, spectrum)
    }
}

/// Scores of one spectrum plus its Hotelling T² and Q residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub scores: Vec<f64>,
    pub t2: f64,
    pub q: f64,
    /// Components skipped in T² because their variance is ~0.
    pub excluded: usize,
}

pub fn pca_fit(data: &Matrix, selector: ComponentSelector) -> Result<PcaModel> {
    let (n, d) = (data.rows(), data.cols());
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    if let ComponentSelector::Fixed(p) = selector {
        if p > n {
            return Err(Error::InvalidParameter(format!(
                "{p} components requested from {n} rows"
            )));
        }
    }
    if let ComponentSelector::VarianceThreshold(t) = selector {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "variance threshold {t} outside (0, 1]"
            )));
        }
    }
    let mean = data.column_mean();
    let mut centred = data.to_nalgebra();
    for mut row in centred.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let dof = (n - 1) as f64;
    let total_variance = centred.norm_squared() / dof;
    if !(total_variance > 0.0) {
        return Err(Error::Degenerate(
            "all rows are identical (zero variance)".into(),
        ));
    }

    let svd = centred.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD did not return right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s_max = svd.singular_values[order[0]];
    let rank_tol = s_max * (n.max(d) as f64) * f64::EPSILON;
    let ranked: Vec<usize> = order
        .into_iter()
        .filter(|&i| svd.singular_values[i] > rank_tol)
        .collect();

    let keep = match selector {
        ComponentSelector::Fixed(p) => p.min(ranked.len()),
        ComponentSelector::VarianceThreshold(t) => {
            let mut cum = 0.0;
            let mut count = ranked.len();
            for (k, &i) in ranked.iter().enumerate() {
                cum += svd.singular_values[i].powi(2) / dof / total_variance;
                if cum >= t - 1e-12 {
                    count = k + 1;
                    break;
                }
            }
            count
        }
    };

    let mut loadings = Matrix::zeros(0, d);
    let mut variances = Vec::with_capacity(keep);
    for &i in &ranked[..keep] {
        let mut row: Vec<f64> = v_t.row(i).iter().copied().collect();
        // sign convention: largest-magnitude entry positive
        let pivot = row
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        loadings.push_row(&row)?;
        variances.push(svd.singular_values[i].powi(2) / dof);
    }
    if keep == 0 {
        loadings = Matrix::zeros(0, d);
    }
    Ok(PcaModel {
        mean,
        loadings,
        variances,
        total_variance,
    })
}

pub fn scores_and_residuals(model: &PcaModel, spectrum: &[f64]) -> Result<Projection> {
    if spectrum.len() != model.n_features() {
        return Err(Error::LengthMismatch {
            expected: model.n_features(),
            got: spectrum.len(),
        });
    }
    let centred: Vec<f64> = spectrum
        .iter()
        .zip(&model.mean)
        .map(|(x, m)| x - m)
        .collect();
    let scores: Vec<f64> = model
        .loadings
        .iter_rows()
        .map(|l| dot(l, &centred))
        .collect();
    let mut residual = centred;
    for (l, &t) in model.loadings.iter_rows().zip(&scores) {
        for (r, v) in residual.iter_mut().zip(l) {
            *r -= t * v;
        }
    }
    let mut t2 = 0.0;
    let mut excluded = 0;
    for (&t, &lambda) in scores.iter().zip(&model.variances) {
        if lambda < MIN_COMPONENT_VARIANCE {
            excluded += 1;
        } else {
            t2 += t * t / lambda;
        }
    }
    if excluded > 0 {
        log::warn!("{excluded} zero-variance component(s) left out of T²");
    }
    let q = dot(&residual, &residual);
    Ok(Projection {
        scores,
        t2,
        q,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn rank_one_data_is_fully_explained_by_one_component() {
        let base = [1.0, -2.0, 0.5, 3.0];
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| base.iter().map(|b| 0.7 + (i as f64 - 2.5) * b).collect())
            .collect();
        let m = pca_fit(
            &Matrix::from_rows(&rows).unwrap(),
            ComponentSelector::Fixed(3),
        )
        .unwrap();
        assert_eq!(m.n_components(), 1);
        assert!((m.explained_ratios()[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn axis_aligned_variances_four_to_one() {
        // closed-form 2x2 eigenproblem: covariance diag(4, 1)
        let rows = vec![
            vec![2.0, 0.0],
            vec![-2.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ];
        // sample variances with n-1 = 3: x -> 8/3, y -> 2/3, ratio 4:1
        let m = pca_fit(
            &Matrix::from_rows(&rows).unwrap(),
            ComponentSelector::Fixed(2),
        )
        .unwrap();
        let r = m.explained_ratios();
        assert!((r[0] - 0.8).abs() < 1e-12 && (r[1] - 0.2).abs() < 1e-12);
        assert!((m.loading(0)[0].abs() - 1.0).abs() < 1e-12);
        assert!((m.variances()[0] - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn variance_threshold_counts_cumulative_ratio() {
        // three orthogonal directions with variance shares 0.7, 0.25, 0.05
        let s = [0.7f64.sqrt(), 0.25f64.sqrt(), 0.05f64.sqrt()];
        let mut rows = Vec::new();
        for (k, &a) in s.iter().enumerate() {
            for sign in [-1.0, 1.0] {
                let mut r = vec![0.0; 5];
                r[k] = sign * a;
                rows.push(r);
            }
        }
        let data = Matrix::from_rows(&rows).unwrap();
        let m = pca_fit(&data, ComponentSelector::VarianceThreshold(0.99)).unwrap();
        assert_eq!(m.n_components(), 3);
        let m = pca_fit(&data, ComponentSelector::VarianceThreshold(0.9)).unwrap();
        assert_eq!(m.n_components(), 2);
    }

    #[test]
    fn model_invariants_hold() {
        let data = random_matrix(30, 8, 1);
        let m = pca_fit(&data, ComponentSelector::Fixed(8)).unwrap();
        for i in 0..m.n_components() {
            for j in 0..m.n_components() {
                let d = dot(m.loading(i), m.loading(j));
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((d - expected).abs() < 1e-8);
            }
        }
        assert!(m.variances().windows(2).all(|w| w[0] >= w[1]));
        assert!(m.explained_ratios().iter().sum::<f64>() <= 1.0 + 1e-12);
        // full reconstruction reproduces the centred data
        for row in data.iter_rows() {
            let p = m.project(row).unwrap();
            assert!(p.q < 1e-16 * 100.0, "q = {}", p.q);
        }
    }

    #[test]
    fn projection_examples_and_oracle() {
        let data = random_matrix(40, 6, 2);
        let m = pca_fit(&data, ComponentSelector::Fixed(3)).unwrap();
        let at_mean = m.project(m.mean()).unwrap();
        assert_eq!((at_mean.t2, at_mean.q), (0.0, 0.0));

        let step: Vec<f64> = m
            .mean()
            .iter()
            .zip(m.loading(0))
            .map(|(mu, l)| mu + l * m.variances()[0].sqrt())
            .collect();
        let p = m.project(&step).unwrap();
        assert!((p.t2 - 1.0).abs() < 1e-12 && p.q < 1e-24);

        // explicit matrix arithmetic oracle
        let x = random_matrix(1, 6, 9).row(0).to_vec();
        let p = m.project(&x).unwrap();
        let c: Vec<f64> = x.iter().zip(m.mean()).map(|(a, b)| a - b).collect();
        let mut t2 = 0.0;
        let mut recon = vec![0.0; 6];
        for k in 0..3 {
            let t: f64 = (0..6).map(|j| m.loading(k)[j] * c[j]).sum();
            t2 += t * t / m.variances()[k];
            for j in 0..6 {
                recon[j] += t * m.loading(k)[j];
            }
        }
        let q: f64 = (0..6).map(|j| (c[j] - recon[j]).powi(2)).sum();
        assert!((p.t2 - t2).abs() < 1e-9 && (p.q - q).abs() < 1e-9);
    }

    #[test]
    fn statistics_do_not_depend_on_row_order() {
        let data = random_matrix(25, 7, 3);
        let mut rows: Vec<Vec<f64>> = data.iter_rows().map(|r| r.to_vec()).collect();
        rows.reverse();
        rows.swap(3, 11);
        let shuffled = Matrix::from_rows(&rows).unwrap();
        let a = pca_fit(&data, ComponentSelector::Fixed(4)).unwrap();
        let b = pca_fit(&shuffled, ComponentSelector::Fixed(4)).unwrap();
        for row in data.iter_rows() {
            let (pa, pb) = (a.project(row).unwrap(), b.project(row).unwrap());
            assert!((pa.t2 - pb.t2).abs() < 1e-9 && (pa.q - pb.q).abs() < 1e-9);
        }
    }

    #[test]
    fn errors() {
        let one = random_matrix(1, 4, 0);
        assert!(pca_fit(&one, ComponentSelector::Fixed(1)).is_err());
        let data = random_matrix(3, 4, 0);
        assert!(pca_fit(&data, ComponentSelector::Fixed(5)).is_err());
        let same = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(matches!(
            pca_fit(&same, ComponentSelector::Fixed(1)),
            Err(Error::Degenerate(_))
        ));
        let m = pca_fit(&data, ComponentSelector::Fixed(2)).unwrap();
        assert!(m.project(&[1.0]).is_err());
    }
}
