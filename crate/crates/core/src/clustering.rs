//! Two-step K-means segmentation of hypercubes into tissue, paraffin and
//! discarded (bare slide) pixels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::{CoreType, Subtype};
use crate::linalg::{squared_distance, Matrix};
use crate::spectral::{trapezoid, Band, WavenumberAxis, AMIDE_BAND, PARAFFIN_BAND};

/// Identity and labels of one imaged core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreMeta {
    pub core_id: u32,
    pub patient_id: u32,
    pub core_type: CoreType,
    pub subtype: Option<Subtype>,
}

impl CoreMeta {
    pub fn new(
        core_id: u32,
        patient_id: u32,
        core_type: CoreType,
        subtype: Option<Subtype>,
    ) -> Result<Self> {
        crate::labels::encode_labels(core_type, subtype)?;
        Ok(Self {
            core_id,
            patient_id,
            core_type,
            subtype,
        })
    }
}

/// Hyperspectral image: `rows × cols` pixels, one spectrum per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    rows: usize,
    cols: usize,
    axis: WavenumberAxis,
    data: Vec<f32>,
    pub meta: CoreMeta,
}

impl HyperCube {
    pub fn new(
        rows: usize,
        cols: usize,
        axis: WavenumberAxis,
        data: Vec<f32>,
        meta: CoreMeta,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::ShapeMismatch("cube needs at least one pixel".into()));
        }
        let expected = rows * cols * axis.len();
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            axis,
            data,
            meta,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn axis(&self) -> &WavenumberAxis {
        &self.axis
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, index: usize) -> &[f32] {
        let n = self.axis.len();
        &self.data[index * n..(index + 1) * n]
    }

    pub fn pixel_mut(&mut self, index: usize) -> &mut [f32] {
        let n = self.axis.len();
        &mut self.data[index * n..(index + 1) * n]
    }

    /// Per-pixel spectra restricted to `band`, one row per pixel.
    pub fn band_matrix(&self, band: &Band) -> Result<(Matrix, WavenumberAxis)> {
        let range = self.axis.band_range(band)?;
        let sub = self.axis.sub_axis(range.clone())?;
        let mut data = Vec::with_capacity(self.n_pixels() * range.len());
        for p in 0..self.n_pixels() {
            data.extend(self.pixel(p)[range.clone()].iter().map(|&v| v as f64));
        }
        Ok((Matrix::from_vec(self.n_pixels(), range.len(), data)?, sub))
    }

    /// Spectra of the pixels selected by `mask`, in raster order, on `band`.
    pub fn masked_spectra(
        &self,
        mask: &PixelMask,
        band: &Band,
    ) -> Result<(Matrix, Vec<usize>, WavenumberAxis)> {
        self.check_mask(mask)?;
        let range = self.axis.band_range(band)?;
        let sub = self.axis.sub_axis(range.clone())?;
        let mut out = Matrix::zeros(0, range.len());
        let mut pixels = Vec::new();
        let mut row = vec![0.0; range.len()];
        for p in (0..self.n_pixels()).filter(|&p| mask.get(p)) {
            for (dst, &v) in row.iter_mut().zip(&self.pixel(p)[range.clone()]) {
                *dst = v as f64;
            }
            out.push_row(&row)?;
            pixels.push(p);
        }
        Ok((out, pixels, sub))
    }

    fn check_mask(&self, mask: &PixelMask) -> Result<()> {
        if mask.rows != self.rows || mask.cols != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} does not match cube {}x{}",
                mask.rows, mask.cols, self.rows, self.cols
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskRole {
    Tissue,
    Paraffin,
}

/// Boolean pixel grid in raster order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    rows: usize,
    cols: usize,
    pub role: MaskRole,
    data: Vec<bool>,
}

impl PixelMask {
    pub fn new(rows: usize, cols: usize, role: MaskRole, data: Vec<bool>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            role,
            data,
        })
    }

    pub fn empty(rows: usize, cols: usize, role: MaskRole) -> Self {
        Self {
            rows,
            cols,
            role,
            data: vec![false; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, index: usize) -> bool {
        self.data[index]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    pub fn is_disjoint(&self, other: &PixelMask) -> bool {
        !self.data.iter().zip(&other.data).any(|(a, b)| *a && *b)
    }

    /// Fraction of pixels on which two masks agree.
    pub fn agreement(&self, other: &PixelMask) -> f64 {
        let same = self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| a == b)
            .count();
        same as f64 / self.data.len() as f64
    }
}

/// Lloyd's algorithm with k-means++ seeding and several restarts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub n_init: usize,
}

impl KMeans {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: 300,
            tol: 1e-6,
            n_init: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    /// Within-cluster sum of squares of the final assignment.
    pub wcss: f64,
    pub iterations: usize,
    /// WCSS after every assignment step of the retained run.
    pub history: Vec<f64>,
}

fn count_distinct(points: &Matrix, limit: usize) -> usize {
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    for row in points.iter_rows() {
        seen.insert(row.iter().map(|v| (v + 0.0).to_bits()).collect());
        if seen.len() >= limit {
            break;
        }
    }
    seen.len()
}

fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter_rows().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_seed(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = points.rows();
    let mut centroids = Matrix::zeros(0, points.cols());
    centroids
        .push_row(points.row(rng.random_range(0..n)))
        .expect("row length");
    let mut d2: Vec<f64> = points
        .iter_rows()
        .map(|p| squared_distance(p, centroids.row(0)))
        .collect();
    while centroids.rows() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push_row(points.row(pick)).expect("row length");
        let last = centroids.rows() - 1;
        for (i, p) in points.iter_rows().enumerate() {
            d2[i] = d2[i].min(squared_distance(p, centroids.row(last)));
        }
    }
    centroids
}

fn lloyd(points: &Matrix, mut centroids: Matrix, max_iter: usize, tol: f64) -> KMeansResult {
    let (n, dim, k) = (points.rows(), points.cols(), centroids.rows());
    let mut assignments = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let mut wcss = 0.0;
        let mut dist = vec![0.0; n];
        for (i, p) in points.iter_rows().enumerate() {
            let (j, d) = nearest(p, &centroids);
            assignments[i] = j;
            dist[i] = d;
            wcss += d;
        }
        history.push(wcss);
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        // empty cluster: steal the point farthest from its own centroid
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[assignments[i]] > 1)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    counts[assignments[i]] -= 1;
                    assignments[i] = j;
                    counts[j] = 1;
                    dist[i] = 0.0;
                }
            }
        }

        let mut next = Matrix::zeros(k, dim);
        for (i, p) in points.iter_rows().enumerate() {
            for (c, v) in next.row_mut(assignments[i]).iter_mut().zip(p) {
                *c += v;
            }
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            let inv = 1.0 / counts[j].max(1) as f64;
            next.row_mut(j).iter_mut().for_each(|c| *c *= inv);
            shift = shift.max(squared_distance(next.row(j), centroids.row(j)).sqrt());
        }
        centroids = next;
        if shift < tol {
            // final assignment against the converged centroids
            let mut wcss = 0.0;
            for (i, p) in points.iter_rows().enumerate() {
                let (j, d) = nearest(p, &centroids);
                assignments[i] = j;
                wcss += d;
            }
            history.push(wcss);
            break;
        }
    }
    let wcss = *history.last().unwrap_or(&0.0);
    KMeansResult {
        assignments,
        centroids,
        wcss,
        iterations,
        history,
    }
}

impl KMeans {
    pub fn fit(&self, points: &Matrix) -> Result<KMeansResult> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if points.rows() == 0 {
            return Err(Error::Degenerate("k-means on an empty point set".into()));
        }
        let distinct = count_distinct(points, self.k);
        if distinct < self.k {
            return Err(Error::Degenerate(format!(
                "k-means with k = {} on {distinct} distinct point(s)",
                self.k
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut best: Option<KMeansResult> = None;
        for _ in 0..self.n_init.max(1) {
            let init = plus_plus_seed(points, self.k, &mut rng);
            let run = lloyd(points, init, self.max_iter, self.tol);
            if best.as_ref().is_none_or(|b| run.wcss < b.wcss) {
                best = Some(run);
            }
        }
        Ok(best.expect("at least one run"))
    }
}

pub fn kmeans(
    points: &Matrix,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<KMeansResult> {
    KMeans {
        max_iter,
        tol,
        ..KMeans::new(k, seed)
    }
    .fit(points)
}

/// Swaps labels 0 and 1 when cluster 0 has the larger mean band area, so
/// that cluster 1 always carries the stronger band. Ties keep the labels.
pub fn order_clusters_by_area(assignments: &[usize], band_areas: &[f64]) -> (Vec<usize>, bool) {
    let (m0, m1) = cluster_mean_areas(assignments, band_areas, |_| true);
    let swap = m0 > m1;
    let out = assignments
        .iter()
        .map(|&a| if swap { 1 - a.min(1) } else { a })
        .collect();
    (out, swap)
}

fn cluster_mean_areas(
    assignments: &[usize],
    areas: &[f64],
    include: impl Fn(usize) -> bool,
) -> (f64, f64) {
    let mut sum = [0.0; 2];
    let mut count = [0usize; 2];
    for (i, (&a, &area)) in assignments.iter().zip(areas).enumerate() {
        if a < 2 && include(i) {
            sum[a] += area;
            count[a] += 1;
        }
    }
    let mean = |j: usize| {
        if count[j] > 0 {
            sum[j] / count[j] as f64
        } else {
            0.0
        }
    };
    (mean(0), mean(1))
}

fn mean_and_var(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return (0.0, 0.0, 0);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
    (mean, var, v.len())
}

/// Standardised gap between the selected cluster's band areas and the rest.
fn separation(selected: &[f64], rest: &[f64]) -> f64 {
    let (m1, v1, n1) = mean_and_var(selected.iter().copied());
    if n1 == 0 {
        return 0.0;
    }
    let (m0, v0, n0) = mean_and_var(rest.iter().copied());
    let (gap, sd) = if n0 >= 2 {
        (m1 - m0, (0.5 * (v0 + v1)).sqrt())
    } else {
        (m1, v1.sqrt())
    };
    if sd == 0.0 {
        if gap > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        gap / sd
    }
}

/// Settings shared by the two segmentation steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    pub seed: u64,
    /// Masks covering less than this pixel fraction are flagged.
    pub plausibility_floor: f64,
    /// Minimum standardised area gap for the selected cluster to count as
    /// a distinct material.
    pub min_separation: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            plausibility_floor: 0.005,
            min_separation: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub mask: PixelMask,
    pub separation: f64,
    /// Set when the selected material looks implausible for the core.
    pub flagged: bool,
}

impl Selection {
    pub fn fraction(&self) -> f64 {
        self.mask.fraction()
    }
}

fn finish_selection(mask: PixelMask, separation: f64, config: &SegmentationConfig) -> Selection {
    let flagged = mask.fraction() < config.plausibility_floor;
    Selection {
        mask,
        separation,
        flagged,
    }
}

/// First step: K-means (k = 2) on the amide region; the cluster with the
/// larger mean amide area is tissue.
pub fn select_tissue(cube: &HyperCube, config: &SegmentationConfig) -> Result<Selection> {
    let (points, sub) = cube.band_matrix(&AMIDE_BAND)?;
    let areas: Vec<f64> = points
        .iter_rows()
        .map(|r| trapezoid(r, sub.spacing()))
        .collect();
    let fit = KMeans::new(2, config.seed).fit(&points)?;
    let (labels, _) = order_clusters_by_area(&fit.assignments, &areas);
    let (sel, rest): (Vec<_>, Vec<_>) = labels.iter().zip(&areas).partition(|(l, _)| **l == 1);
    let sep = separation(
        &sel.iter().map(|(_, a)| **a).collect::<Vec<_>>(),
        &rest.iter().map(|(_, a)| **a).collect::<Vec<_>>(),
    );
    let data = if sep >= config.min_separation {
        labels.iter().map(|&l| l == 1).collect()
    } else {
        vec![false; labels.len()]
    };
    let mask = PixelMask::new(cube.rows, cube.cols, MaskRole::Tissue, data)?;
    Ok(finish_selection(mask, sep, config))
}

/// Second step: tissue pixels are zeroed, then K-means (k = 2) on the
/// paraffin band; the cluster with the larger mean area over non-tissue
/// pixels is paraffin.
pub fn select_paraffin(
    cube: &HyperCube,
    tissue: &PixelMask,
    config: &SegmentationConfig,
) -> Result<Selection> {
    cube.check_mask(tissue)?;
    let (mut points, sub) = cube.band_matrix(&PARAFFIN_BAND)?;
    let free: Vec<bool> = tissue.as_slice().iter().map(|t| !t).collect();
    if !free.iter().any(|&f| f) {
        let mask = PixelMask::empty(cube.rows, cube.cols, MaskRole::Paraffin);
        return Ok(finish_selection(mask, 0.0, config));
    }
    for (p, &is_free) in free.iter().enumerate() {
        if !is_free {
            points.row_mut(p).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let areas: Vec<f64> = points
        .iter_rows()
        .map(|r| trapezoid(r, sub.spacing()))
        .collect();
    let fit = KMeans::new(2, config.seed).fit(&points)?;
    let (m0, m1) = cluster_mean_areas(&fit.assignments, &areas, |i| free[i]);
    let labels: Vec<usize> = if m0 > m1 {
        fit.assignments.iter().map(|&a| 1 - a).collect()
    } else {
        fit.assignments.clone()
    };
    let mut sel = Vec::new();
    let mut rest = Vec::new();
    for i in (0..labels.len()).filter(|&i| free[i]) {
        if labels[i] == 1 {
            sel.push(areas[i]);
        } else {
            rest.push(areas[i]);
        }
    }
    let sep = separation(&sel, &rest);
    let data = if sep >= config.min_separation {
        labels
            .iter()
            .zip(&free)
            .map(|(&l, &f)| l == 1 && f)
            .collect()
    } else {
        vec![false; labels.len()]
    };
    let mask = PixelMask::new(cube.rows, cube.cols, MaskRole::Paraffin, data)?;
    Ok(finish_selection(mask, sep, config))
}

/// Writes a binary PGM: tissue 255, paraffin 128, everything else 0.
pub fn write_mask_pgm(path: &Path, tissue: &PixelMask, paraffin: &PixelMask) -> Result<()> {
    if tissue.rows != paraffin.rows || tissue.cols != paraffin.cols {
        return Err(Error::ShapeMismatch(
            "tissue and paraffin masks differ in shape".into(),
        ));
    }
    let mut bytes = format!("P5\n{} {}\n255\n", tissue.cols, tissue.rows).into_bytes();
    bytes.extend(tissue.data.iter().zip(&paraffin.data).map(|(&t, &p)| {
        if t {
            255u8
        } else if p {
            128
        } else {
            0
        }
    }));
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::build_axis;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    // Exhaustive oracle: minimum WCSS over every assignment into k labels.
    fn brute_force_wcss(points: &[f64], k: usize) -> (f64, Vec<usize>) {
        let n = points.len();
        let mut best = (f64::INFINITY, vec![]);
        let total = k.pow(n as u32);
        for code in 0..total {
            let mut labels = vec![0; n];
            let mut c = code;
            for l in labels.iter_mut() {
                *l = c % k;
                c /= k;
            }
            let mut w = 0.0;
            for j in 0..k {
                let members: Vec<f64> = (0..n)
                    .filter(|&i| labels[i] == j)
                    .map(|i| points[i])
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let m = members.iter().sum::<f64>() / members.len() as f64;
                w += members.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
            }
            if w < best.0 {
                best = (w, labels);
            }
        }
        best
    }

    fn column(values: &[f64]) -> Matrix {
        Matrix::from_vec(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn separated_blobs_split_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let pts: Vec<f64> = (0..12)
            .map(|i| if i < 6 { 0.0 } else { 10.0 } + noise.sample(&mut rng))
            .collect();
        let fit = kmeans(&column(&pts), 2, 11, 300, 1e-6).unwrap();
        let (oracle, labels) = brute_force_wcss(&pts, 2);
        assert!((fit.wcss - oracle).abs() <= 1e-12 * oracle.max(1e-12));
        let same = |a: &[usize], b: &[usize]| {
            (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
        };
        assert!(same(&fit.assignments, &labels));
        assert!(fit.assignments[..6]
            .iter()
            .all(|&a| a == fit.assignments[0]));
        assert!(fit.assignments[6..]
            .iter()
            .all(|&a| a != fit.assignments[0]));
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = [1.0, 2.0, 6.0];
        let fit = kmeans(&column(&pts), 1, 0, 300, 1e-6).unwrap();
        assert!(fit.assignments.iter().all(|&a| a == 0));
        assert!((fit.centroids.row(0)[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn identical_points_are_degenerate() {
        let pts = [5.0; 8];
        assert!(matches!(
            kmeans(&column(&pts), 2, 0, 300, 1e-6),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn area_ordering_rules() {
        let a = vec![0, 0, 1];
        assert_eq!(
            order_clusters_by_area(&a, &[5.0, 5.0, 1.0]),
            (vec![1, 1, 0], true)
        );
        assert_eq!(
            order_clusters_by_area(&a, &[1.0, 1.0, 5.0]),
            (a.clone(), false)
        );
        assert_eq!(
            order_clusters_by_area(&a, &[2.0, 2.0, 2.0]),
            (a.clone(), false)
        );
    }

    fn toy_cube(kind: impl Fn(usize) -> u8) -> (HyperCube, Vec<u8>) {
        let axis = build_axis(1800.0, 1300.0, 260).unwrap();
        let wn = axis.values();
        let (rows, cols) = (10, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.002).unwrap();
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for p in 0..rows * cols {
            let k = kind(p);
            truth.push(k);
            for &w in &wn {
                let g = |c: f64, s: f64| (-(w - c) * (w - c) / (2.0 * s * s)).exp();
                let v = match k {
                    2 => 0.6 * g(1655.0, 15.0) + 0.4 * g(1545.0, 13.0) + 0.1 * g(1462.0, 6.0),
                    1 => 0.5 * g(1462.0, 6.0) + 0.15 * g(1373.0, 4.0),
                    _ => 0.0,
                };
                data.push((v + noise.sample(&mut rng)) as f32);
            }
        }
        let meta = CoreMeta::new(0, 0, CoreType::Adjacent, None).unwrap();
        (HyperCube::new(rows, cols, axis, data, meta).unwrap(), truth)
    }

    #[test]
    fn two_step_selection_recovers_layout() {
        let (cube, truth) = toy_cube(|p| match p % 10 {
            0..=4 => 2,
            5..=7 => 1,
            _ => 0,
        });
        let cfg = SegmentationConfig::default();
        let tissue = select_tissue(&cube, &cfg).unwrap();
        let paraffin = select_paraffin(&cube, &tissue.mask, &cfg).unwrap();
        assert!(!tissue.flagged && !paraffin.flagged);
        assert!(tissue.mask.is_disjoint(&paraffin.mask));
        for (p, &t) in truth.iter().enumerate() {
            assert_eq!(tissue.mask.get(p), t == 2);
            assert_eq!(paraffin.mask.get(p), t == 1);
        }
    }

    #[test]
    fn pure_paraffin_core_flags_missing_tissue() {
        let (cube, _) = toy_cube(|_| 1);
        let t = select_tissue(&cube, &SegmentationConfig::default()).unwrap();
        assert!(t.flagged, "separation {}", t.separation);
    }

    #[test]
    fn missing_paraffin_is_flagged_and_all_tissue_gives_empty_mask() {
        let (cube, _) = toy_cube(|p| if p % 2 == 0 { 2 } else { 0 });
        let cfg = SegmentationConfig::default();
        let t = select_tissue(&cube, &cfg).unwrap();
        let p = select_paraffin(&cube, &t.mask, &cfg).unwrap();
        assert!(p.flagged, "separation {}", p.separation);

        let all = PixelMask::new(10, 10, MaskRole::Tissue, vec![true; 100]).unwrap();
        let p = select_paraffin(&cube, &all, &cfg).unwrap();
        assert_eq!(p.mask.count(), 0);
    }

    #[test]
    fn zero_cube_propagates_degenerate_error() {
        let axis = build_axis(1800.0, 1300.0, 50).unwrap();
        let meta = CoreMeta::new(0, 0, CoreType::Adjacent, None).unwrap();
        let cube = HyperCube::new(4, 4, axis, vec![0.0; 16 * 50], meta).unwrap();
        assert!(matches!(
            select_tissue(&cube, &SegmentationConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn pgm_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let t = PixelMask::new(1, 3, MaskRole::Tissue, vec![true, false, false]).unwrap();
        let p = PixelMask::new(1, 3, MaskRole::Paraffin, vec![false, true, false]).unwrap();
        write_mask_pgm(&path, &t, &p).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes, b"P5\n3 1\n255\n\xff\x80\x00");
    }

    proptest! {
        #[test]
        fn lloyd_never_increases_wcss(seed in 0u64..500, k in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..60).map(|_| rng.random_range(-5.0..5.0)).collect();
            let pts = Matrix::from_vec(30, 2, data).unwrap();
            let fit = KMeans { n_init: 1, ..KMeans::new(k, seed) }.fit(&pts).unwrap();
            for w in fit.history.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
            }
            let again = KMeans { n_init: 1, ..KMeans::new(k, seed) }.fit(&pts).unwrap();
            prop_assert_eq!(fit, again);
        }

        #[test]
        fn small_instances_match_exhaustive_oracle(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let centers = [rng.random_range(-20.0..-5.0), rng.random_range(5.0..20.0)];
            let pts: Vec<f64> = (0..10).map(|i| centers[i % 2] + rng.random_range(-1.0..1.0)).collect();
            let fit = kmeans(&column(&pts), 2, seed, 300, 1e-9).unwrap();
            let (oracle, _) = brute_force_wcss(&pts, 2);
            prop_assert!((fit.wcss - oracle).abs() <= 1e-9 * oracle.max(1.0));
        }
    }
}
