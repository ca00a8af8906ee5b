//! Wavenumber-axis arithmetic and per-spectrum primitives.
//!
//! Axes are stored descending (high wavenumber first), which is how FTIR
//! instruments report them. Band lookups use a nearest-point rule: a grid
//! point belongs to a band when it lies inside `[low, high]` widened by half
//! a grid step on each side.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::error::{Error, Result};

/// Uniformly spaced, strictly descending wavenumber grid in cm⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavenumberAxis {
    start_wn: f64,
    end_wn: f64,
    n_points: usize,
}

impl WavenumberAxis {
    pub fn new(start_wn: f64, end_wn: f64, n_points: usize) -> Result<Self> {
        if !(start_wn.is_finite() && end_wn.is_finite()) {
            return Err(Error::InvalidAxis("non-finite bounds".into()));
        }
        if start_wn <= end_wn {
            return Err(Error::InvalidAxis(format!(
                "axis must descend, got {start_wn} -> {end_wn}"
            )));
        }
        if end_wn < 0.0 {
            return Err(Error::InvalidAxis(format!(
                "wavenumbers must be non-negative, got end {end_wn}"
            )));
        }
        if n_points < 2 {
            return Err(Error::InvalidAxis(format!(
                "need at least 2 points, got {n_points}"
            )));
        }
        Ok(Self {
            start_wn,
            end_wn,
            n_points,
        })
    }

    pub fn start(&self) -> f64 {
        self.start_wn
    }

    pub fn end(&self) -> f64 {
        self.end_wn
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Positive distance between neighbouring grid points.
    pub fn spacing(&self) -> f64 {
        (self.start_wn - self.end_wn) / (self.n_points - 1) as f64
    }

    pub fn value(&self, index: usize) -> f64 {
        if index + 1 == self.n_points {
            self.end_wn
        } else {
            self.start_wn - self.spacing() * index as f64
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.value(i)).collect()
    }

    /// Index of the grid point closest to `wn` (clamped to the axis).
    pub fn nearest_index(&self, wn: f64) -> usize {
        let pos = (self.start_wn - wn) / self.spacing();
        pos.round().clamp(0.0, (self.n_points - 1) as f64) as usize
    }

    /// Maps every grid point onto `[-1, 1]`, `start` to `-1`.
    pub fn scaled(&self) -> Vec<f64> {
        let mid = 0.5 * (self.start_wn + self.end_wn);
        let half = 0.5 * (self.start_wn - self.end_wn);
        (0..self.n_points)
            .map(|i| (mid - self.value(i)) / half)
            .collect()
    }

    pub fn contains_band(&self, band: &Band) -> bool {
        let tol = 0.5 * self.spacing();
        band.high <= self.start_wn + tol && band.low >= self.end_wn - tol
    }

    /// Index range of the grid points inside `band`.
    pub fn band_range(&self, band: &Band) -> Result<Range<usize>> {
        if !self.contains_band(band) {
            return Err(Error::BandOutsideAxis {
                high: band.high,
                low: band.low,
                start: self.start_wn,
                end: self.end_wn,
            });
        }
        let tol = 0.5 * self.spacing();
        let first = (0..self.n_points).find(|&i| self.value(i) <= band.high + tol);
        let last = (0..self.n_points)
            .rev()
            .find(|&i| self.value(i) >= band.low - tol);
        match (first, last) {
            (Some(a), Some(b)) if a <= b => Ok(a..b + 1),
            _ => Err(Error::Degenerate(format!(
                "band {}-{} cm-1 contains no grid point",
                band.high, band.low
            ))),
        }
    }

    /// Axis restricted to `range`; needs at least two points.
    pub fn sub_axis(&self, range: Range<usize>) -> Result<Self> {
        if range.end > self.n_points || range.len() < 2 {
            return Err(Error::Degenerate(format!(
                "sub-axis {range:?} of a {}-point axis",
                self.n_points
            )));
        }
        Self::new(
            self.value(range.start),
            self.value(range.end - 1),
            range.len(),
        )
    }

    /// Equality up to floating rounding of the endpoints.
    pub fn approx_eq(&self, other: &Self) -> bool {
        let tol = 1e-6 * self.spacing();
        self.n_points == other.n_points
            && (self.start_wn - other.start_wn).abs() <= tol
            && (self.end_wn - other.end_wn).abs() <= tol
    }
}

/// Builds a descending axis from `start_wn` down to `end_wn`.
pub fn build_axis(start_wn: f64, end_wn: f64, n_points: usize) -> Result<WavenumberAxis> {
    WavenumberAxis::new(start_wn, end_wn, n_points)
}

/// Closed wavenumber interval with `high > low`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub high: f64,
    pub low: f64,
}

impl Band {
    pub fn new(high: f64, low: f64) -> Result<Self> {
        if !(high > low) {
            return Err(Error::InvalidParameter(format!(
                "band high {high} must exceed low {low}"
            )));
        }
        Ok(Self { high, low })
    }

    pub const fn fixed(high: f64, low: f64) -> Self {
        Self { high, low }
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }

    pub fn contains(&self, wn: f64) -> bool {
        wn <= self.high && wn >= self.low
    }
}

/// Amide I and II region used to find tissue.
pub const AMIDE_BAND: Band = Band::fixed(1700.0, 1500.0);
/// Strongest paraffin absorption, used to find paraffin.
pub const PARAFFIN_BAND: Band = Band::fixed(1480.0, 1450.0);
/// Biofingerprint window fed to the classifier.
pub const BIOFINGERPRINT: Band = Band::fixed(1800.0, 900.0);
/// Region kept by the paraffin interferent model.
pub const PARAFFIN_MASK: Band = Band::fixed(1500.0, 1350.0);
/// Region kept by the water-vapour interferent model.
pub const H2O_MASK: Band = Band::fixed(1800.0, 1300.0);

/// Absorbance values on a wavenumber axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    axis: WavenumberAxis,
    intensities: Vec<f64>,
}

impl Spectrum {
    pub fn new(axis: WavenumberAxis, intensities: Vec<f64>) -> Result<Self> {
        if intensities.len() != axis.len() {
            return Err(Error::LengthMismatch {
                expected: axis.len(),
                got: intensities.len(),
            });
        }
        if intensities.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "spectrum contains non-finite values".into(),
            ));
        }
        Ok(Self { axis, intensities })
    }

    pub fn axis(&self) -> &WavenumberAxis {
        &self.axis
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn into_intensities(self) -> Vec<f64> {
        self.intensities
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }
}

/// Contiguous sub-spectrum whose axis values fall inside `band`.
pub fn truncate(spectrum: &Spectrum, band: &Band) -> Result<Spectrum> {
    let range = spectrum.axis.band_range(band)?;
    let axis = spectrum.axis.sub_axis(range.clone())?;
    Ok(Spectrum {
        axis,
        intensities: spectrum.intensities[range].to_vec(),
    })
}

/// Trapezoidal integral of `values` sampled at uniform `spacing`.
pub fn trapezoid(values: &[f64], spacing: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = values[1..n - 1].iter().sum();
            spacing * (inner + 0.5 * (values[0] + values[n - 1]))
        }
    }
}

/// Area under the spectrum over `band` (absorbance·cm⁻¹).
pub fn integrate_band(spectrum: &Spectrum, band: &Band) -> Result<f64> {
    let range = spectrum.axis.band_range(band)?;
    Ok(trapezoid(
        &spectrum.intensities[range],
        spectrum.axis.spacing(),
    ))
}

/// Precomputed Savitzky-Golay smoothing weights.
///
/// `weights[t]` holds the window weights that evaluate the local fit at
/// offset `t` inside the window; the centre row is the ordinary filter and
/// the others serve the first and last `half` points.
#[derive(Debug, Clone)]
pub struct SavitzkyGolay {
    window: usize,
    poly_order: usize,
    weights: Vec<Vec<f64>>,
}

impl SavitzkyGolay {
    pub fn new(window: usize, poly_order: usize) -> Result<Self> {
        if window % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "Savitzky-Golay window must be odd, got {window}"
            )));
        }
        if window <= poly_order {
            return Err(Error::InvalidParameter(format!(
                "window {window} must exceed polynomial order {poly_order}"
            )));
        }
        let half = (window / 2) as f64;
        let cols = poly_order + 1;
        let vander = DMatrix::from_fn(window, cols, |i, j| {
            let x = (i as f64 - half) / half.max(1.0);
            x.powi(j as i32)
        });
        let pinv = vander
            .clone()
            .svd(true, true)
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        // hat matrix: row t evaluates the fitted polynomial at window position t
        let hat = &vander * &pinv;
        let weights = (0..window)
            .map(|t| hat.row(t).iter().copied().collect())
            .collect();
        Ok(Self {
            window,
            poly_order,
            weights,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn poly_order(&self) -> usize {
        self.poly_order
    }

    pub fn apply(&self, values: &[f64]) -> Result<Vec<f64>> {
        let n = values.len();
        if n < self.window {
            return Err(Error::InvalidParameter(format!(
                "spectrum of {n} points is shorter than window {}",
                self.window
            )));
        }
        let half = self.window / 2;
        let mut out = vec![0.0; n];
        let dot = |w: &[f64], start: usize| -> f64 {
            w.iter()
                .zip(&values[start..start + self.window])
                .map(|(a, b)| a * b)
                .sum()
        };
        for (i, o) in out.iter_mut().enumerate() {
            *o = if i < half {
                dot(&self.weights[i], 0)
            } else if i + half >= n {
                dot(&self.weights[self.window - (n - i)], n - self.window)
            } else {
                dot(&self.weights[half], i - half)
            };
        }
        Ok(out)
    }
}

/// Savitzky-Golay smoothing; output length equals input length.
pub fn savitzky_golay(spectrum: &Spectrum, window: usize, poly_order: usize) -> Result<Spectrum> {
    let filter = SavitzkyGolay::new(window, poly_order)?;
    let smoothed = filter.apply(&spectrum.intensities)?;
    Spectrum::new(spectrum.axis, smoothed)
}

/// Rescales `values` to `[0, 1]` in place.
pub fn minmax_in_place(values: &mut [f64]) -> Result<()> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(hi > lo) {
        return Err(Error::Degenerate(
            "min-max normalisation of a constant signal".into(),
        ));
    }
    let range = hi - lo;
    for v in values.iter_mut() {
        *v = (*v - lo) / range;
    }
    Ok(())
}

pub fn minmax_normalize(spectrum: &Spectrum) -> Result<Spectrum> {
    let mut values = spectrum.intensities.clone();
    minmax_in_place(&mut values)?;
    Ok(Spectrum {
        axis: spectrum.axis,
        intensities: values,
    })
}
