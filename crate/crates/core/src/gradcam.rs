//! One-dimensional Grad-CAM on the last residual feature map.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write;

use crate::chemometrics::percentile;
use crate::error::{Error, Result};
use crate::model::{CarenetModel, Head};
use crate::nn::Tensor;
use crate::spectral::{Band, WavenumberAxis};

const CHUNK: usize = 64;

/// Linear resampling of `values` to `n` points; both endpoints map onto each other.
pub fn interpolate_linear(values: &[f64], n: usize) -> Vec<f64> {
    match (values.len(), n) {
        (_, 0) => Vec::new(),
        (0, _) => vec![0.0; n],
        (1, _) => vec![values[0]; n],
        (m, 1) => vec![values[m - 1]],
        (m, _) => (0..n)
            .map(|i| {
                let x = i as f64 * (m - 1) as f64 / (n - 1) as f64;
                let lo = (x.floor() as usize).min(m - 2);
                let t = x - lo as f64;
                values[lo] * (1.0 - t) + values[lo + 1] * t
            })
            .collect(),
    }
}

/// Raw importance (non-negative, input length) for each spectrum. The score
/// is the logit of `target`; for the binary head target 0 uses the negated logit.
pub fn gradcam_batch(
    model: &CarenetModel,
    spectra: &[&[f32]],
    target: usize,
) -> Result<Vec<Vec<f64>>> {
    let n_classes = model.head.n_classes();
    if target >= n_classes {
        return Err(Error::InvalidParameter(format!(
            "class {target} out of range for a {n_classes}-class model"
        )));
    }
    let length = model.net.input_shape().1;
    let chunks: Vec<Result<Vec<Vec<f64>>>> = spectra
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut net = model.net.clone();
            let pool = model.pool_index();
            let out = model.output_index();
            let x = Tensor::from_rows(chunk)?;
            if x.length() != length {
                return Err(Error::LengthMismatch {
                    expected: length,
                    got: x.length(),
                });
            }
            let a = net.forward_range(&x, 0..pool, true)?;
            let logits = net.forward_range(&a, pool..out, true)?;
            if !logits.is_finite() {
                return Err(Error::Numerical("model produced non-finite scores".into()));
            }
            let b = chunk.len();
            let mut seed = Tensor::zeros(logits.channels(), b, 1);
            let (channel, sign) = match model.head {
                Head::Type => (0, if target == 1 { 1.0 } else { -1.0 }),
                Head::Subtype => (target, 1.0),
            };
            seed.data_mut()[channel * b..(channel + 1) * b].fill(sign);
            let da = net.backward_range(&seed, pool..out)?;
            let (channels, _, len) = a.shape();
            Ok((0..b)
                .map(|j| {
                    let mut cam = vec![0.0f64; len];
                    for c in 0..channels {
                        let g = da.lane(c, j);
                        let w = g.iter().map(|&v| f64::from(v)).sum::<f64>() / len as f64;
                        for (acc, &v) in cam.iter_mut().zip(a.lane(c, j)) {
                            *acc += w * f64::from(v);
                        }
                    }
                    cam.iter_mut().for_each(|v| *v = v.max(0.0));
                    interpolate_linear(&cam, length)
                })
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(spectra.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

pub fn gradcam_spectrum(model: &CarenetModel, spectrum: &[f32], target: usize) -> Result<Vec<f64>> {
    Ok(gradcam_batch(model, &[spectrum], target)?.remove(0))
}

/// Class-averaged, min-max normalised importance on the input axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap1D {
    pub class: String,
    pub wavenumbers: Vec<f64>,
    pub values: Vec<f64>,
    pub n_samples: usize,
    /// The average was constant and the values were set to zero.
    pub degenerate: bool,
    pub source: String,
}

/// Mean over heatmaps, then min-max to [0, 1]. A constant mean yields all
/// zeros and `true`.
pub fn class_average(heatmaps: &[Vec<f64>]) -> Result<(Vec<f64>, bool)> {
    let Some(first) = heatmaps.first() else {
        return Err(Error::InvalidParameter("no heatmaps to average".into()));
    };
    let n = first.len();
    let mut mean = vec![0.0; n];
    for h in heatmaps {
        if h.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: h.len(),
            });
        }
        mean.iter_mut().zip(h).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= heatmaps.len() as f64);
    let lo = mean.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        log::warn!("class-average heatmap is constant; emitting zeros");
        return Ok((vec![0.0; n], true));
    }
    Ok((mean.iter().map(|v| (v - lo) / (hi - lo)).collect(), false))
}

pub fn build_heatmap(
    class: &str,
    axis: &WavenumberAxis,
    heatmaps: &[Vec<f64>],
    source: &str,
) -> Result<Heatmap1D> {
    let (values, degenerate) = class_average(heatmaps)?;
    if values.len() != axis.len() {
        return Err(Error::LengthMismatch {
            expected: axis.len(),
            got: values.len(),
        });
    }
    Ok(Heatmap1D {
        class: class.to_string(),
        wavenumbers: axis.values(),
        values,
        n_samples: heatmaps.len(),
        degenerate,
        source: source.to_string(),
    })
}

/// A run of points at or above the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopBand {
    pub high_wn: f64,
    pub low_wn: f64,
    pub peak: f64,
}

/// Maximal runs of points with importance >= `threshold`.
pub fn top_bands(heatmap: &Heatmap1D, threshold: f64) -> Vec<TopBand> {
    let mut out = Vec::new();
    let mut run: Option<(usize, f64)> = None;
    let wn = &heatmap.wavenumbers;
    let n = heatmap.values.len();
    for i in 0..=n {
        let v = heatmap.values.get(i).copied();
        match (v.filter(|v| *v >= threshold), run) {
            (Some(v), None) => run = Some((i, v)),
            (Some(v), Some((s, p))) => run = Some((s, p.max(v))),
            (None, Some((s, p))) => {
                let (a, b) = (wn[s], wn[i - 1]);
                out.push(TopBand {
                    high_wn: a.max(b),
                    low_wn: a.min(b),
                    peak: p,
                });
                run = None;
            }
            (None, None) => {}
        }
    }
    out
}

/// Share of the top-decile importance mass lying within `margin` cm⁻¹ of `band`.
pub fn top_decile_mass_near(heatmap: &Heatmap1D, band: &Band, margin: f64) -> f64 {
    let cut = percentile(&heatmap.values, 0.9);
    let (mut near, mut total) = (0.0, 0.0);
    for (&w, &v) in heatmap.wavenumbers.iter().zip(&heatmap.values) {
        if v >= cut {
            total += v;
            if w <= band.high + margin && w >= band.low - margin {
                near += v;
            }
        }
    }
    if total > 0.0 {
        near / total
    } else {
        0.0
    }
}

pub fn write_heatmap_csv<W: Write>(heatmap: &Heatmap1D, mut out: W) -> Result<()> {
    writeln!(out, "wavenumber,importance")?;
    for (w, v) in heatmap.wavenumbers.iter().zip(&heatmap.values) {
        writeln!(out, "{w:.4},{v:.6}")?;
    }
    Ok(())
}

/// Line plot of the heatmap over a reversed wavenumber axis with the top
/// bands shaded.
pub fn heatmap_svg(heatmap: &Heatmap1D, threshold: f64) -> String {
    let (w, h, pad) = (800.0, 240.0, 30.0);
    let (hi, lo) = match (heatmap.wavenumbers.first(), heatmap.wavenumbers.last()) {
        (Some(a), Some(b)) if a != b => (a.max(*b), a.min(*b)),
        _ => (1.0, 0.0),
    };
    let x = |wn: f64| pad + (hi - wn) / (hi - lo) * (w - 2.0 * pad);
    let y = |v: f64| h - pad - v * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for b in top_bands(heatmap, threshold) {
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{pad}" width="{:.1}" height="{:.1}" fill="#1f4e9c" fill-opacity="0.25"/>"##,
            x(b.high_wn),
            (x(b.low_wn) - x(b.high_wn)).max(1.0),
            h - 2.0 * pad
        );
    }
    let points: Vec<String> = heatmap
        .wavenumbers
        .iter()
        .zip(&heatmap.values)
        .map(|(&wn, &v)| format!("{:.1},{:.1}", x(wn), y(v)))
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#1f4e9c" stroke-width="1.5" points="{}"/>"##,
        points.join(" ")
    );
    let _ = writeln!(
        s,
        r##"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"##,
        h - pad,
        w - pad
    );
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="{}" font-size="11">{hi:.0}</text><text x="{}" y="{}" font-size="11" text-anchor="end">{lo:.0} cm-1</text>"#,
        h - 10.0,
        w - pad,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="18" font-size="13">{} (n = {})</text>"#,
        heatmap.class, heatmap.n_samples
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_carenet;
    use crate::spectral::build_axis;

    fn heatmap(values: Vec<f64>) -> Heatmap1D {
        let axis = build_axis(1800.0, 900.0, values.len()).unwrap();
        Heatmap1D {
            class: "x".into(),
            wavenumbers: axis.values(),
            values,
            n_samples: 1,
            degenerate: false,
            source: String::new(),
        }
    }

    #[test]
    fn interpolation_keeps_endpoints_and_lines() {
        let v: Vec<f64> = (0..30).map(|i| 2.0 * i as f64 + 1.0).collect();
        let up = interpolate_linear(&v, 467);
        assert_eq!(up.len(), 467);
        assert_eq!(up[0], 1.0);
        assert_eq!(up[466], 59.0);
        for (i, u) in up.iter().enumerate() {
            let expected = 1.0 + 58.0 * i as f64 / 466.0;
            assert!((u - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn raw_maps_are_non_negative_and_full_length() {
        let model = build_carenet(Head::Subtype, 3).unwrap();
        let spectra: Vec<Vec<f32>> = (0..3)
            .map(|k| {
                (0..467)
                    .map(|i| ((i * (k + 2)) % 17) as f32 / 17.0)
                    .collect()
            })
            .collect();
        let refs: Vec<&[f32]> = spectra.iter().map(|s| s.as_slice()).collect();
        for target in 0..4 {
            let maps = gradcam_batch(&model, &refs, target).unwrap();
            assert_eq!(maps.len(), 3);
            assert!(maps
                .iter()
                .all(|m| m.len() == 467 && m.iter().all(|v| *v >= 0.0)));
        }
        assert!(gradcam_batch(&model, &refs, 4).is_err());
        let single = gradcam_spectrum(&model, &spectra[1], 2).unwrap();
        assert_eq!(single, gradcam_batch(&model, &refs, 2).unwrap()[1]);
    }

    #[test]
    fn binary_targets_are_mirror_scores() {
        // negating the logit flips every channel weight, so at the feature
        // grid points (the endpoints land exactly on them) one map is zero
        let model = build_carenet(Head::Type, 5).unwrap();
        let s: Vec<f32> = (0..467).map(|i| (i as f32 / 40.0).sin().abs()).collect();
        let ca = gradcam_spectrum(&model, &s, 1).unwrap();
        let at = gradcam_spectrum(&model, &s, 0).unwrap();
        assert!(ca[0] == 0.0 || at[0] == 0.0);
        assert!(ca[466] == 0.0 || at[466] == 0.0);
        assert_ne!(ca, at);
    }

    #[test]
    fn averaging_and_degenerate_case() {
        let h = vec![0.0, 2.0, 4.0];
        let (avg, deg) = class_average(&[h.clone(), h.clone()]).unwrap();
        assert_eq!(avg, vec![0.0, 0.5, 1.0]);
        assert!(!deg);
        let (avg, deg) = class_average(&[vec![3.0; 4]]).unwrap();
        assert_eq!(avg, vec![0.0; 4]);
        assert!(deg);
        assert!(class_average(&[]).is_err());
        let a = class_average(&[vec![0.0, 1.0, 5.0], vec![2.0, 0.0, 1.0]]).unwrap();
        let b = class_average(&[vec![2.0, 0.0, 1.0], vec![0.0, 1.0, 5.0]]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn band_runs() {
        assert!(top_bands(&heatmap(vec![0.0; 50]), 0.5).is_empty());

        let tri: Vec<f64> = (0..41)
            .map(|i| 1.0 - (i as f64 - 20.0).abs() / 20.0)
            .collect();
        let hm = heatmap(tri);
        let bands = top_bands(&hm, 0.5);
        assert_eq!(bands.len(), 1);
        assert_eq!(bands[0].peak, 1.0);
        assert!(bands[0].high_wn >= hm.wavenumbers[20] && bands[0].low_wn <= hm.wavenumbers[20]);

        let mut two = vec![0.0; 100];
        two[10..15].fill(0.9);
        two[60..70].fill(0.8);
        two[30] = 0.6;
        assert_eq!(top_bands(&heatmap(two), 0.7).len(), 2);
    }

    #[test]
    fn decile_mass_oracle() {
        let mut v = vec![0.0; 467];
        let hm0 = heatmap(v.clone());
        let i = hm0.wavenumbers.iter().position(|w| *w <= 1530.0).unwrap();
        for k in i - 5..=i + 5 {
            v[k] = 1.0;
        }
        let hm = heatmap(v);
        let near = top_decile_mass_near(&hm, &Band::fixed(1550.0, 1510.0), 20.0);
        assert_eq!(near, 1.0);
        assert_eq!(
            top_decile_mass_near(&hm, &Band::fixed(1200.0, 1150.0), 20.0),
            0.0
        );
    }

    #[test]
    fn svg_mentions_every_band() {
        let mut v = vec![0.0; 100];
        v[40..50].fill(1.0);
        let svg = heatmap_svg(&heatmap(v), 0.5);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("fill-opacity").count(), 1);
    }
}
