use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chemometrics::{emsc_build_model, emsc_correct, OutlierFilter, OutlierReport};
use crate::clustering::{select_paraffin, select_tissue, HyperCube, PixelMask, SegmentationConfig};
use crate::dataset::{SpectraSet, SpectrumInfo};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::spectral::{minmax_in_place, SavitzkyGolay, WavenumberAxis, BIOFINGERPRINT};
use crate::synth::Panel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub segmentation: SegmentationConfig,
    pub outlier: OutlierFilter,
    pub sg_window: usize,
    pub sg_order: usize,
    /// Keep at most this many tissue spectra per core, sampled without replacement.
    pub max_spectra_per_core: Option<usize>,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            segmentation: SegmentationConfig::default(),
            outlier: OutlierFilter::default(),
            sg_window: 11,
            sg_order: 2,
            max_spectra_per_core: None,
            seed: 0,
        }
    }
}

/// Spectra remaining after each stage of one core.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub tissue: usize,
    pub paraffin: usize,
    pub first_outlier: usize,
    pub smoothed: usize,
    pub emsc: usize,
    pub minmax: usize,
    pub second_outlier: usize,
    /// After the per-core cap.
    pub kept: usize,
}

impl StageCounts {
    /// Tissue counts in pipeline order.
    pub fn sequence(&self) -> [usize; 7] {
        [
            self.tissue,
            self.first_outlier,
            self.smoothed,
            self.emsc,
            self.minmax,
            self.second_outlier,
            self.kept,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct CoreOutput {
    pub spectra: SpectraSet,
    pub counts: StageCounts,
    pub tissue_mask: PixelMask,
    pub paraffin_mask: PixelMask,
    pub first_report: Option<OutlierReport>,
    pub second_report: Option<OutlierReport>,
}

/// Row indices that survive an outlier pass. Too few or identical spectra
/// skip the pass.
fn outlier_pass(
    data: &Matrix,
    filter: &OutlierFilter,
    what: &str,
) -> Result<(Vec<usize>, Option<OutlierReport>)> {
    let all = || (0..data.rows()).collect::<Vec<_>>();
    if data.rows() <= filter.n_pcs {
        log::warn!("{what}: {} spectra, outlier removal skipped", data.rows());
        return Ok((all(), None));
    }
    match filter.apply(data) {
        Ok(out) => {
            let kept = (0..data.rows()).filter(|&i| out.report.kept[i]).collect();
            Ok((kept, Some(out.report)))
        }
        Err(Error::Degenerate(m)) => {
            log::warn!("{what}: {m}; outlier removal skipped");
            Ok((all(), None))
        }
        Err(e) => Err(e),
    }
}

fn smooth_rows(data: &Matrix, sg: &SavitzkyGolay) -> Result<Matrix> {
    let mut out = Matrix::zeros(data.rows(), data.cols());
    for (i, row) in data.iter_rows().enumerate() {
        out.row_mut(i).copy_from_slice(&sg.apply(row)?);
    }
    Ok(out)
}

fn pick_rows(data: &Matrix, rows: &[usize]) -> Matrix {
    let mut keep = vec![false; data.rows()];
    rows.iter().for_each(|&r| keep[r] = true);
    data.select_rows(&keep)
}

/// Truncated axis and column range of the fingerprint region.
fn fingerprint(axis: &WavenumberAxis) -> Result<(WavenumberAxis, std::ops::Range<usize>)> {
    let range = axis.band_range(&BIOFINGERPRINT)?;
    Ok((axis.sub_axis(range.clone())?, range))
}

/// Water-vapour spectra: truncation, outlier removal and smoothing.
pub fn preprocess_environment(
    axis: &WavenumberAxis,
    spectra: &Matrix,
    config: &PreprocessConfig,
) -> Result<Matrix> {
    if spectra.cols() != axis.len() {
        return Err(Error::LengthMismatch {
            expected: axis.len(),
            got: spectra.cols(),
        });
    }
    let (_, range) = fingerprint(axis)?;
    let rows: Vec<Vec<f64>> = spectra
        .iter_rows()
        .map(|r| r[range.clone()].to_vec())
        .collect();
    let truncated = Matrix::from_rows(&rows)?;
    let (kept, _) = outlier_pass(&truncated, &config.outlier, "H2O environment")?;
    let sg = SavitzkyGolay::new(config.sg_window, config.sg_order)?;
    smooth_rows(&pick_rows(&truncated, &kept), &sg)
}

/// Full per-core sequence: cluster, truncate, outliers, smoothing, EMSC,
/// min-max, outliers again. `h2o` comes from [`preprocess_environment`].
pub fn preprocess_core(
    cube: &HyperCube,
    h2o: &Matrix,
    config: &PreprocessConfig,
) -> Result<CoreOutput> {
    let meta = cube.meta;
    let what = format!("core {}", meta.core_id);
    let tissue = select_tissue(cube, &config.segmentation)?;
    if tissue.mask.count() == 0 {
        return Err(Error::Degenerate(format!("{what}: no tissue pixels found")));
    }
    let paraffin = select_paraffin(cube, &tissue.mask, &config.segmentation)?;
    let mut counts = StageCounts {
        tissue: tissue.mask.count(),
        paraffin: paraffin.mask.count(),
        ..StageCounts::default()
    };

    let (axis, _) = fingerprint(cube.axis())?;
    let (raw, pixels, _) = cube.masked_spectra(&tissue.mask, &BIOFINGERPRINT)?;
    let (kept, first_report) = outlier_pass(&raw, &config.outlier, &format!("{what} first pass"))?;
    counts.first_outlier = kept.len();
    let pixels: Vec<usize> = kept.iter().map(|&i| pixels[i]).collect();

    let sg = SavitzkyGolay::new(config.sg_window, config.sg_order)?;
    let smoothed = smooth_rows(&pick_rows(&raw, &kept), &sg)?;
    counts.smoothed = smoothed.rows();

    let (par_raw, _, _) = cube.masked_spectra(&paraffin.mask, &BIOFINGERPRINT)?;
    let par = smooth_rows(&par_raw, &sg)?;
    let model = emsc_build_model(&smoothed.column_mean(), &par, h2o, &axis)?;
    let mut corrected = Matrix::zeros(0, axis.len());
    let mut emsc_pixels = Vec::with_capacity(pixels.len());
    for (row, &px) in smoothed.iter_rows().zip(&pixels) {
        match emsc_correct(row, &model) {
            Ok(fit) => {
                corrected.push_row(&fit.corrected)?;
                emsc_pixels.push(px);
            }
            Err(Error::Degenerate(m)) => log::debug!("{what}: pixel {px} dropped by EMSC: {m}"),
            Err(e) => return Err(e),
        }
    }
    counts.emsc = corrected.rows();

    let mut normalized = Matrix::zeros(0, axis.len());
    let mut norm_pixels = Vec::with_capacity(emsc_pixels.len());
    for (row, &px) in corrected.iter_rows().zip(&emsc_pixels) {
        let mut v = row.to_vec();
        match minmax_in_place(&mut v) {
            Ok(()) => {
                normalized.push_row(&v)?;
                norm_pixels.push(px);
            }
            Err(Error::Degenerate(m)) => log::debug!("{what}: pixel {px} is flat after EMSC: {m}"),
            Err(e) => return Err(e),
        }
    }
    counts.minmax = normalized.rows();
    if normalized.is_empty() {
        return Err(Error::Degenerate(format!(
            "{what}: no tissue spectra left after EMSC"
        )));
    }

    let (mut kept, second_report) =
        outlier_pass(&normalized, &config.outlier, &format!("{what} second pass"))?;
    counts.second_outlier = kept.len();
    if let Some(cap) = config.max_spectra_per_core.filter(|&c| c < kept.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(u64::from(meta.core_id));
        let mut chosen: Vec<usize> = sample(&mut rng, kept.len(), cap)
            .into_iter()
            .map(|i| kept[i])
            .collect();
        chosen.sort_unstable();
        kept = chosen;
    }
    counts.kept = kept.len();

    let mut spectra = SpectraSet::new(axis);
    let cols = cube.cols();
    for &i in &kept {
        let px = norm_pixels[i];
        let row: Vec<f32> = normalized.row(i).iter().map(|&v| v as f32).collect();
        spectra.push(
            &row,
            SpectrumInfo {
                patient_id: meta.patient_id,
                core_id: meta.core_id,
                row: (px / cols) as u32,
                col: (px % cols) as u32,
                core_type: meta.core_type,
                subtype: meta.subtype,
            },
        )?;
    }
    Ok(CoreOutput {
        spectra,
        counts,
        tissue_mask: tissue.mask,
        paraffin_mask: paraffin.mask,
        first_report,
        second_report,
    })
}

/// Outcome of preprocessing many cores; failed cores are reported, not fatal.
#[derive(Debug, Clone)]
pub struct PanelOutput {
    pub spectra: SpectraSet,
    pub counts: Vec<(u32, StageCounts)>,
    pub failures: Vec<(u32, String)>,
}

/// Preprocesses cores in parallel. `load` produces the cube for a core id
/// so callers can stream from disk or from the generator.
pub fn preprocess_cores<F>(
    core_ids: &[u32],
    load: F,
    h2o: &Matrix,
    config: &PreprocessConfig,
) -> Result<PanelOutput>
where
    F: Fn(u32) -> Result<HyperCube> + Sync,
{
    let results: Vec<(u32, Result<CoreOutput>)> = core_ids
        .par_iter()
        .map(|&id| {
            (
                id,
                load(id).and_then(|cube| preprocess_core(&cube, h2o, config)),
            )
        })
        .collect();
    let mut spectra: Option<SpectraSet> = None;
    let mut counts = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in results {
        match r {
            Ok(out) => {
                counts.push((id, out.counts));
                match spectra.as_mut() {
                    Some(s) => s.extend(&out.spectra)?,
                    None => spectra = Some(out.spectra),
                }
            }
            Err(
                e @ (Error::Io(_) | Error::Numerical(_) | Error::Format(_) | Error::Checksum(_)),
            ) => return Err(e),
            Err(e) => {
                log::warn!("core {id} skipped: {e}");
                failures.push((id, e.to_string()));
            }
        }
    }
    let spectra =
        spectra.ok_or_else(|| Error::Degenerate("no core produced any spectra".into()))?;
    Ok(PanelOutput {
        spectra,
        counts,
        failures,
    })
}

/// Preprocesses an in-memory synthetic panel.
pub fn preprocess_panel(panel: &Panel, config: &PreprocessConfig) -> Result<PanelOutput> {
    let (first, _) = panel
        .cubes
        .first()
        .ok_or_else(|| Error::Degenerate("panel has no cubes".into()))?;
    let h2o = preprocess_environment(first.axis(), &panel.environment, config)?;
    let ids: Vec<u32> = panel.cubes.iter().map(|(c, _)| c.meta.core_id).collect();
    let load = |id: u32| {
        panel
            .cubes
            .iter()
            .find(|(c, _)| c.meta.core_id == id)
            .map(|(c, _)| c.clone())
            .ok_or_else(|| Error::Label(format!("core {id} not in panel")))
    };
    preprocess_cores(&ids, load, &h2o, config)
}
