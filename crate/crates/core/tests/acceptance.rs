//! One PASS/FAIL line per acceptance criterion.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use carenet::chemometrics::{emsc_build_model, emsc_correct, OutlierFilter};
use carenet::clustering::{kmeans, select_paraffin, select_tissue, SegmentationConfig};
use carenet::dataset::{read_cube, write_cube, PixelClass};
use carenet::gradcam::{build_heatmap, gradcam_batch};
use carenet::labels::CoreType;
use carenet::labels::Subtype;
use carenet::linalg::Matrix;
use carenet::model::{build_carenet, count_params, Head, INPUT_LENGTH, REPORTED_PARAM_COUNT};
use carenet::nn::{
    bce_loss, cce_loss, check_network, GradCheckConfig, LayerSpec, Network, PlateauScheduler,
    Tensor,
};
use carenet::pipeline::{make_split, train_fold, N_FOLDS};
use carenet::spectral::{
    build_axis, trapezoid, Band, SavitzkyGolay, AMIDE_BAND, BIOFINGERPRINT, PARAFFIN_BAND,
};
use carenet::synth::{gen_panel, panel_records, Generator, SynthConfig};

use common::*;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn random_tensor(
    rng: &mut ChaCha8Rng,
    c: usize,
    b: usize,
    l: usize,
    lo: f64,
    hi: f64,
) -> Tensor<f64> {
    Tensor::from_vec(
        c,
        b,
        l,
        (0..c * b * l).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

fn conv(i: usize, o: usize, k: usize, s: usize) -> LayerSpec {
    LayerSpec::Conv1d {
        in_channels: i,
        out_channels: o,
        kernel: k,
        stride: s,
    }
}

fn binary_tail(c: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::GlobalAvgPool,
        LayerSpec::Dense {
            inputs: c,
            outputs: 1,
        },
        LayerSpec::Sigmoid,
    ]
}

fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            p[i] += h;
            let fp = f(&p);
            p[i] -= 2.0 * h;
            (fp - f(&p)) / (2.0 * h)
        })
        .collect()
}

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
}

fn c1_gradients() -> Verdict {
    let start = Instant::now();
    let relu_stack = [vec![conv(2, 3, 3, 1), LayerSpec::Relu], binary_tail(3)].concat();
    let identity = [
        vec![
            conv(2, 3, 3, 1),
            LayerSpec::ResidualAdd {
                body: vec![conv(3, 3, 3, 1), LayerSpec::Relu, conv(3, 3, 3, 1)],
                projection: None,
            },
        ],
        binary_tail(3),
    ]
    .concat();
    let projection = [
        vec![LayerSpec::ResidualAdd {
            body: vec![conv(2, 4, 3, 2), LayerSpec::Relu, conv(4, 4, 3, 1)],
            projection: Some(Box::new(conv(2, 4, 1, 2))),
        }],
        binary_tail(4),
    ]
    .concat();
    let softmax = vec![
        conv(2, 3, 5, 2),
        LayerSpec::GlobalAvgPool,
        LayerSpec::Dense {
            inputs: 3,
            outputs: 4,
        },
        LayerSpec::Softmax,
    ];
    let nets: [(&str, Vec<LayerSpec>); 6] = [
        ("conv1d", [vec![conv(2, 3, 5, 2)], binary_tail(3)].concat()),
        ("relu", relu_stack),
        ("residual", identity),
        ("residual+projection", projection),
        ("pool+dense+sigmoid", binary_tail(2)),
        ("dense+softmax", softmax),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let bce_t = [1.0, 0.0, 1.0];
    let cce_t = Tensor::from_vec(
        4,
        3,
        1,
        vec![1., 0., 0., 0., 1., 0., 0., 0., 0., 0., 0., 1.],
    )
    .unwrap();
    for (name, specs) in &nets {
        let multi = matches!(specs.last(), Some(LayerSpec::Softmax));
        for case in 0..20 {
            let x = random_tensor(&mut rng, 2, 3, 13, -1.0, 1.0);
            let mut net = Network::<f64>::from_specs(specs, (2, 13), &mut rng).unwrap();
            let cfg = GradCheckConfig {
                seed: case,
                ..Default::default()
            };
            let r = if multi {
                check_network(&mut net, &x, &|y| cce_loss(y, &cce_t), cfg)
            } else {
                check_network(&mut net, &x, &|y| bce_loss(y, &bce_t), cfg)
            }
            .unwrap();
            if r.max_rel_error >= 1e-4 {
                return verdict(false, format!("{name} case {case}: {}", r.worst));
            }
            worst = worst.max(r.max_rel_error);
            checked += r.checked;
        }
    }

    // losses against central differences of the closed forms
    for _ in 0..20 {
        let p: Vec<f64> = (0..6).map(|_| rng.random_range(0.05..0.95)).collect();
        let t: Vec<f64> = (0..6)
            .map(|_| f64::from(rng.random_range(0..2u8)))
            .collect();
        let f = |q: &[f64]| {
            -q.iter()
                .zip(&t)
                .map(|(p, t)| t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                .sum::<f64>()
                / q.len() as f64
        };
        let (l, g) = bce_loss(&Tensor::from_vec(1, 6, 1, p.clone()).unwrap(), &t).unwrap();
        let n = central_difference(&f, &p, 1e-6);
        let e = g
            .data()
            .iter()
            .zip(&n)
            .map(|(a, b)| rel(*a, *b))
            .fold(rel(l, f(&p)), f64::max);
        if e >= 1e-4 {
            return verdict(false, format!("BCE gradient error {e:e}"));
        }
        worst = worst.max(e);

        let raw: Vec<f64> = (0..8).map(|_| rng.random_range(0.05..1.0)).collect();
        let p: Vec<f64> = raw
            .chunks(4)
            .flat_map(|c| {
                c.iter()
                    .map(|v| v / c.iter().sum::<f64>())
                    .collect::<Vec<_>>()
            })
            .collect();
        // channel-major layout: value (class c, sample b) at c * 2 + b
        let cm: Vec<f64> = (0..4)
            .flat_map(|c| (0..2).map(move |b| (c, b)))
            .map(|(c, b)| p[b * 4 + c])
            .collect();
        let hot: Vec<f64> = (0..8)
            .map(|i| if i == 2 || i == 7 { 1.0 } else { 0.0 })
            .collect();
        let f = |q: &[f64]| -q.iter().zip(&hot).map(|(p, t)| t * p.ln()).sum::<f64>() / 2.0;
        let targets = Tensor::from_vec(4, 2, 1, hot.clone()).unwrap();
        let (l, g) = cce_loss(&Tensor::from_vec(4, 2, 1, cm.clone()).unwrap(), &targets).unwrap();
        let n = central_difference(&f, &cm, 1e-6);
        let e = g
            .data()
            .iter()
            .zip(&n)
            .map(|(a, b)| rel(*a, *b))
            .fold(rel(l, f(&cm)), f64::max);
        if e >= 1e-4 {
            return verdict(false, format!("CCE gradient error {e:e}"));
        }
        worst = worst.max(e);
    }

    for head in [Head::Type, Head::Subtype] {
        let model = build_carenet(head, 7).unwrap();
        let mut net = model.net.cast::<f64>();
        let x = random_tensor(&mut rng, 1, 3, INPUT_LENGTH, 0.0, 1.0);
        let cfg = GradCheckConfig {
            entries_per_tensor: 3,
            input_entries: 6,
            seed: 11,
            ..Default::default()
        };
        let t = Tensor::from_vec(
            4,
            3,
            1,
            vec![1., 0., 0., 0., 0., 0., 0., 1., 0., 0., 0., 1.],
        )
        .unwrap();
        let r = match head {
            Head::Type => check_network(&mut net, &x, &|y| bce_loss(y, &bce_t), cfg),
            Head::Subtype => check_network(&mut net, &x, &|y| cce_loss(y, &t), cfg),
        }
        .unwrap();
        if r.max_rel_error >= 1e-4 || r.checked == 0 {
            return verdict(
                false,
                format!("full {head} model: {} ({} checked)", r.worst, r.checked),
            );
        }
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        secs < 120.0,
        format!("max rel error {worst:.2e} over {checked} entries + loss cases, {secs:.1}s"),
    )
}

fn c2_savgol() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(30..300);
        let (a, b, c) = (
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        );
        let window = [5, 7, 11, 15, 21][rng.random_range(0..5)];
        let order = rng.random_range(2..4);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let x = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
                a + b * x + c * x * x
            })
            .collect();
        let out = SavitzkyGolay::new(window, order)
            .unwrap()
            .apply(&y)
            .unwrap();
        worst = y
            .iter()
            .zip(&out)
            .map(|(p, q)| (p - q).abs())
            .fold(worst, f64::max);
    }
    verdict(
        worst <= 1e-10,
        format!("max abs error {worst:.2e} over 100 quadratics"),
    )
}

fn gauss(wn: &[f64], center: f64, sigma: f64) -> Vec<f64> {
    wn.iter()
        .map(|w| (-0.5 * ((w - center) / sigma).powi(2)).exp())
        .collect()
}

fn c3_emsc() -> Verdict {
    let axis = build_axis(BIOFINGERPRINT.high, BIOFINGERPRINT.low, INPUT_LENGTH).unwrap();
    let wn = axis.values();
    let scaled = axis.scaled();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut coef_err, mut corr_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..4 {
        let mut m = vec![0.0; wn.len()];
        for (c, s) in [
            (1655.0, 15.0),
            (1545.0, 14.0),
            (1240.0, 20.0),
            (1080.0, 18.0),
            (1400.0, 12.0),
        ] {
            let amp = rng.random_range(0.3..1.0);
            gauss(&wn, c + rng.random_range(-5.0..5.0), s)
                .iter()
                .zip(m.iter_mut())
                .for_each(|(g, v)| *v += amp * g);
        }
        let (p1, p2) = (gauss(&wn, 1462.0, 6.0), gauss(&wn, 1373.0, 4.0));
        let paraffin: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                let (a, b) = (rng.random_range(0.5..1.5), rng.random_range(0.1..0.3));
                p1.iter().zip(&p2).map(|(x, y)| a * x + b * y).collect()
            })
            .collect();
        let lines: Vec<Vec<f64>> = [
            1750.0, 1698.0, 1652.0, 1559.0, 1507.0, 1457.0, 1396.0, 1340.0,
        ]
        .iter()
        .map(|&c| gauss(&wn, c, 2.0))
        .collect();
        let h2o: Vec<Vec<f64>> = (0..16)
            .map(|_| {
                let a = rng.random_range(0.0..1.0);
                let tilt = rng.random_range(-0.2..0.2);
                (0..wn.len())
                    .map(|i| {
                        lines
                            .iter()
                            .enumerate()
                            .map(|(k, l)| a * (1.0 + tilt * k as f64) * l[i])
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let model = emsc_build_model(
            &m,
            &Matrix::from_rows(&paraffin).unwrap(),
            &Matrix::from_rows(&h2o).unwrap(),
            &axis,
        )
        .unwrap();
        for _ in 0..50 {
            let mut truth = vec![0.0; model.n_columns()];
            truth[0] = rng.random_range(0.5..2.0);
            for t in truth.iter_mut().take(6).skip(1) {
                *t = rng.random_range(-0.2..0.2);
            }
            for j in model.paraffin_range().chain(model.h2o_range()) {
                truth[j] = rng.random_range(-0.5..0.5);
            }
            let mut x: Vec<f64> = m.iter().map(|v| truth[0] * v).collect();
            for (p, t) in truth[1..6].iter().enumerate() {
                x.iter_mut()
                    .zip(&scaled)
                    .for_each(|(v, s)| *v += t * s.powi(p as i32));
            }
            for j in model.paraffin_range().chain(model.h2o_range()) {
                x.iter_mut()
                    .zip(model.column(j))
                    .for_each(|(v, c)| *v += truth[j] * c);
            }
            let out = emsc_correct(&x, &model).unwrap();
            coef_err = out
                .coefficients
                .iter()
                .zip(&truth)
                .map(|(a, b)| (a - b).abs())
                .fold(coef_err, f64::max);
            corr_err = out
                .corrected
                .iter()
                .zip(&m)
                .map(|(a, b)| (a - b).abs())
                .fold(corr_err, f64::max);
        }
    }
    verdict(
        coef_err <= 1e-6 && corr_err <= 1e-6,
        format!("200 mixtures: coefficient error {coef_err:.2e}, corrected error {corr_err:.2e}"),
    )
}

fn c4_outliers() -> Verdict {
    let filter = OutlierFilter::default();
    let cfg = SynthConfig {
        patients_per_subtype: [1, 1, 1, 1],
        spike_fraction: 0.01,
        seed: 4,
        ..SynthConfig::default()
    };
    let panel = gen_panel(&cfg).unwrap();
    let (mut spikes, mut caught) = (0, 0);
    for (cube, truth) in &panel.cubes {
        let mask = truth
            .mask(cube.rows(), cube.cols(), PixelClass::Tissue)
            .unwrap();
        let (data, pixels, _) = cube.masked_spectra(&mask, &BIOFINGERPRINT).unwrap();
        let out = filter.apply(&data).unwrap();
        for (row, &p) in pixels.iter().enumerate() {
            if truth.spikes[p] {
                spikes += 1;
                caught += usize::from(!out.report.kept[row]);
            }
        }
    }
    let mut fractions = Vec::new();
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let data: Vec<f64> = (0..400 * 30)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let out = filter
            .apply(&Matrix::from_vec(400, 30, data).unwrap())
            .unwrap();
        fractions.push(out.report.rejected_fraction());
    }
    let g = mean(&fractions);
    verdict(
        spikes > 0 && caught == spikes && (0.05..=0.12).contains(&g),
        format!("spikes rejected {caught}/{spikes}; clean Gaussian rejection {g:.4} (10 seeds)"),
    )
}

fn band_area(cube: &carenet::clustering::HyperCube, band: &Band, pixels: &[usize]) -> f64 {
    let r = cube.axis().band_range(band).unwrap();
    let s = cube.axis().spacing();
    let total: f64 = pixels
        .iter()
        .map(|&p| {
            trapezoid(
                &cube.pixel(p)[r.clone()]
                    .iter()
                    .map(|v| f64::from(*v))
                    .collect::<Vec<_>>(),
                s,
            )
        })
        .sum();
    total / pixels.len() as f64
}

/// Minimum WCSS over every labelling into at most `k` groups.
fn exhaustive_wcss(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let d = points[0].len();
    let mut best = f64::INFINITY;
    for code in 0..k.pow(n as u32) {
        let mut c = code;
        let mut sums = vec![vec![0.0; d]; k];
        let mut sq = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for p in points {
            let l = c % k;
            c /= k;
            counts[l] += 1;
            for j in 0..d {
                sums[l][j] += p[j];
                sq[l] += p[j] * p[j];
            }
        }
        let w: f64 = (0..k)
            .filter(|&l| counts[l] > 0)
            .map(|l| sq[l] - sums[l].iter().map(|s| s * s).sum::<f64>() / counts[l] as f64)
            .sum();
        best = best.min(w);
    }
    best
}

fn c5_clustering() -> Verdict {
    let cfg = SynthConfig {
        patients_per_subtype: [1, 1, 1, 1],
        seed: 5,
        ..SynthConfig::default()
    };
    let panel = gen_panel(&cfg).unwrap();
    let seg = SegmentationConfig::default();
    let (mut worst_t, mut worst_p, mut min_ratio) = (1.0f64, 1.0f64, f64::INFINITY);
    for (cube, truth) in &panel.cubes {
        let (rows, cols) = (cube.rows(), cube.cols());
        let class_pixels = |c: PixelClass| {
            (0..cube.n_pixels())
                .filter(|&i| truth.classes[i] == c)
                .collect::<Vec<_>>()
        };
        let (tis, par, sli) = (
            class_pixels(PixelClass::Tissue),
            class_pixels(PixelClass::Paraffin),
            class_pixels(PixelClass::Slide),
        );
        let amide = band_area(cube, &AMIDE_BAND, &tis)
            / band_area(cube, &AMIDE_BAND, &[par.clone(), sli.clone()].concat())
                .abs()
                .max(1e-12);
        let paraffin = band_area(cube, &PARAFFIN_BAND, &par)
            / band_area(cube, &PARAFFIN_BAND, &sli).abs().max(1e-12);
        min_ratio = min_ratio.min(amide).min(paraffin);

        let t = select_tissue(cube, &seg).unwrap();
        let p = select_paraffin(cube, &t.mask, &seg).unwrap();
        worst_t = worst_t.min(
            t.mask
                .agreement(&truth.mask(rows, cols, PixelClass::Tissue).unwrap()),
        );
        worst_p = worst_p.min(
            p.mask
                .agreement(&truth.mask(rows, cols, PixelClass::Paraffin).unwrap()),
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut mismatches = 0;
    let instances = 60;
    for i in 0..instances {
        let n = rng.random_range(4..=12);
        let d = rng.random_range(1..=2);
        let k = if n <= 10 { rng.random_range(2..=3) } else { 2 };
        let centers: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..d).map(|_| rng.random_range(-10.0..10.0)).collect())
            .collect();
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                centers[j % k]
                    .iter()
                    .map(|c| c + rng.random_range(-1.5..1.5))
                    .collect()
            })
            .collect();
        let fit = kmeans(&Matrix::from_rows(&pts).unwrap(), k, i, 300, 1e-12).unwrap();
        let oracle = exhaustive_wcss(&pts, k);
        if (fit.wcss - oracle).abs() > 1e-9 * oracle.max(1.0) {
            mismatches += 1;
        }
    }
    verdict(
        min_ratio >= 5.0 && worst_t >= 0.99 && worst_p >= 0.99 && mismatches == 0,
        format!(
            "band separation >= {min_ratio:.1}x; worst mask accuracy tissue {worst_t:.4}, paraffin {worst_p:.4}; \
             k-means vs exhaustive oracle {}/{instances} equal",
            instances - mismatches
        ),
    )
}

fn c6_split() -> Verdict {
    let patients: Vec<(u32, Subtype)> = (0..30u32)
        .map(|p| {
            let s = match p {
                0..=7 => Subtype::LuminalA,
                8..=15 => Subtype::LuminalB,
                16..=22 => Subtype::Her2,
                _ => Subtype::TripleNegative,
            };
            (p, s)
        })
        .collect();
    for seed in 0..20 {
        let plan = make_split(&patients, seed).unwrap();
        let mut subtypes: Vec<Subtype> = plan.test.iter().map(|t| t.subtype).collect();
        subtypes.sort_by_key(|s| s.index());
        if plan.test.len() != 4 || subtypes != Subtype::ALL.to_vec() {
            return verdict(false, format!("seed {seed}: test patients {:?}", plan.test));
        }
        let sizes: Vec<(usize, usize)> = plan
            .folds
            .iter()
            .map(|f| (f.train.len(), f.dev.len()))
            .collect();
        if sizes != [(21, 5), (21, 5), (21, 5), (20, 6)] {
            return verdict(false, format!("seed {seed}: fold sizes {sizes:?}"));
        }
        let test = plan.test_ids();
        let mut seen_dev: Vec<u32> = Vec::new();
        for f in &plan.folds {
            for (p, _) in &patients {
                let places = [f.train.contains(p), f.dev.contains(p), test.contains(p)];
                if places.iter().filter(|b| **b).count() != 1 {
                    return verdict(false, format!("seed {seed}: patient {p} placed {places:?}"));
                }
            }
            if let Some(p) = f.dev.iter().find(|p| seen_dev.contains(p)) {
                return verdict(false, format!("seed {seed}: patient {p} in two dev sets"));
            }
            seen_dev.extend(&f.dev);
        }
    }
    verdict(true, "20 seeds: 4 test patients, one per subtype; folds 21/5 x3 + 20/6; disjoint dev sets; no leakage")
}

fn c7_learning() -> Verdict {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for seed in 0..3u64 {
        let cfg = SynthConfig {
            seed: 100 + seed,
            ..SynthConfig::default()
        };
        let set = panel_spectra(&cfg, DESK_CAP);
        let split = split_for(&set, seed);
        let folds: Vec<usize> = (0..N_FOLDS).collect();
        let ty = train_and_test(&set, &split, &desk_train(Head::Type, seed), &folds);
        let st = train_and_test(&set, &split, &desk_train(Head::Subtype, seed), &folds);
        let a = mean(
            &ty.iter()
                .map(|r| r.test_patient_accuracy)
                .collect::<Vec<_>>(),
        );
        let b = mean(
            &st.iter()
                .map(|r| r.test_patient_accuracy)
                .collect::<Vec<_>>(),
        );
        pass &= a >= 0.95 && b >= 0.90;
        lines.push(format!("seed {seed}: type {a:.3} subtype {b:.3}"));
    }
    let strong_secs = start.elapsed().as_secs_f64();

    let mut null = Vec::new();
    for seed in 0..20u64 {
        let cfg = SynthConfig {
            seed: 200 + seed,
            patients_per_subtype: [3, 3, 3, 3],
            rows: 16,
            cols: 16,
            type_separation: 0.0,
            subtype_separation: 0.0,
            ..SynthConfig::default()
        };
        let set = panel_spectra(&cfg, DESK_CAP);
        let split = split_for(&set, seed);
        let r = train_and_test(&set, &split, &desk_train(Head::Type, seed), &[0]);
        null.push(r[0].test_patient_accuracy);
    }
    let null_mean = mean(&null);
    pass &= (null_mean - 0.5).abs() <= 0.15 && strong_secs < 900.0;
    verdict(
        pass,
        format!(
            "{}; separation 0 over 20 seeds: type patient accuracy {null_mean:.3}; strong runs {strong_secs:.0}s",
            lines.join(", ")
        ),
    )
}

/// Share of the top-decile heatmap mass within `margin` of `band`. The
/// top decile is the `ceil(n/10)` largest values.
fn top_decile_share(values: &[f64], wavenumbers: &[f64], band: &Band, margin: f64) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let top = &order[..values.len().div_ceil(10)];
    let total: f64 = top.iter().map(|&i| values[i]).sum();
    let near: f64 = top
        .iter()
        .filter(|&&i| wavenumbers[i] <= band.high + margin && wavenumbers[i] >= band.low - margin)
        .map(|&i| values[i])
        .sum();
    if total > 0.0 {
        near / total
    } else {
        0.0
    }
}

fn c8_gradcam() -> Verdict {
    let cfg = SynthConfig {
        seed: 8,
        type_band: [1550.0, 1510.0],
        subtype_separation: 0.0,
        ..SynthConfig::default()
    };
    let band = cfg.type_band();
    let set = panel_spectra(&cfg, DESK_CAP);
    let split = split_for(&set, 8);
    let tcfg = desk_train(Head::Type, 8);
    let best = (0..N_FOLDS)
        .map(|k| {
            let (train, dev) = split.fold_sets(&set, k, Head::Type).unwrap();
            train_fold(&tcfg.for_fold(k), &train, &dev, Some(k), None).unwrap()
        })
        .min_by(|a, b| a.best_dev_loss().total_cmp(&b.best_dev_loss()))
        .unwrap();
    let test = split.test_set(&set, Head::Type);
    let mut parts = Vec::new();
    let mut pass = true;
    for (target, core_type) in [(1, CoreType::Cancer), (0, CoreType::Adjacent)] {
        let rows: Vec<&[f32]> = test
            .indices_where(|i| i.core_type == core_type)
            .into_iter()
            .map(|i| test.spectrum(i))
            .collect();
        let maps = gradcam_batch(&best.best, &rows, target).unwrap();
        let hm = build_heatmap(core_type.name(), test.axis(), &maps, "acceptance").unwrap();
        let in_range = hm.values.iter().all(|v| (0.0..=1.0).contains(v));
        let share = top_decile_share(&hm.values, &hm.wavenumbers, &band, 20.0);
        pass &= hm.values.len() == INPUT_LENGTH && in_range && share >= 0.5;
        parts.push(format!(
            "{}: {share:.3} of top-decile mass near {:.0}-{:.0} (n={}, len {}, in [0,1] {in_range})",
            core_type.name(),
            band.high,
            band.low,
            rows.len(),
            hm.values.len()
        ));
    }
    verdict(
        pass,
        format!("best-dev fold {:?}; {}", best.fold, parts.join("; ")),
    )
}

fn c9_scheduler() -> Verdict {
    let mut s = PlateauScheduler::new(1e-3);
    let mut seq = vec![s.lr];
    for _ in 0..60 {
        let lr = s.step(1.0);
        if lr != *seq.last().unwrap() {
            seq.push(lr);
        }
    }
    let expected = [1e-3, 5e-4, 2.5e-4, 1.25e-4, 1e-4];
    verdict(seq == expected, format!("plateau lr sequence {seq:?}"))
}

fn c10_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    std::fs::write(
        &config,
        "[synth]\npatients_per_subtype = [2, 2, 2, 2]\nrows = 16\ncols = 16\n[train]\nepochs = 2\nbatch = 32\n",
    )
    .unwrap();
    let run = |tag: &str| {
        let out = dir.path().join(tag);
        let go = |name: &str, rest: &[&str]| {
            let mut args = vec![
                "carenet".to_string(),
                "--seed".into(),
                "10".into(),
                "--config".into(),
                config.display().to_string(),
                "--out-dir".into(),
                out.display().to_string(),
                "--run-name".into(),
                name.into(),
            ];
            args.extend(rest.iter().map(|s| s.to_string()));
            let cli = <carenet::cli::Cli as clap::Parser>::try_parse_from(args).unwrap();
            carenet::cli::run(&cli).unwrap()
        };
        let syn = go("synth", &["synth"]);
        let spectra = out.join("pre/spectra.crns").display().to_string();
        go(
            "pre",
            &[
                "preprocess",
                "--panel",
                &syn.join("panel").display().to_string(),
                "--max-per-core",
                "16",
            ],
        );
        let tr = go("train", &["train", "--spectra", &spectra, "--head", "type"])
            .display()
            .to_string();
        go("eval", &["eval", "--spectra", &spectra, "--train-run", &tr]);
        go(
            "gradcam",
            &["gradcam", "--spectra", &spectra, "--train-run", &tr],
        );
        ["synth", "pre", "train", "eval", "gradcam"]
            .iter()
            .flat_map(|r| {
                carenet::cli::RunManifest::read(&out.join(r))
                    .unwrap()
                    .outputs
            })
            .collect::<Vec<_>>()
    };
    let (a, b) = (run("a"), run("b"));
    let kinds = |ext: &str| {
        a.iter()
            .filter(|o| o.path.extension().is_some_and(|e| e == ext))
            .count()
    };
    verdict(
        a == b && !a.is_empty(),
        format!(
            "{} output files identical by size and CRC-32 ({} containers, {} checkpoints, {} CSVs)",
            a.len(),
            kinds("crns"),
            kinds("ckpt"),
            kinds("csv")
        ),
    )
}

fn c11_scale() -> Verdict {
    let cfg = SynthConfig {
        rows: 320,
        cols: 320,
        patients_per_subtype: [1, 1, 1, 1],
        ..SynthConfig::default()
    };
    let g = Generator::new(cfg.clone()).unwrap();
    let (cube, truth) = g
        .gen_cube(&panel_records(&cfg)[0], CoreType::Cancer)
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mosaic.crns");
    let t = Instant::now();
    write_cube(&path, &cube, Some(&truth)).unwrap();
    let (back, _) = read_cube(&path).unwrap();
    let io_secs = t.elapsed().as_secs_f64();
    let n = back.n_pixels();
    let binary = count_params(&build_carenet(Head::Type, 0).unwrap());
    let subtype = count_params(&build_carenet(Head::Subtype, 0).unwrap());
    verdict(
        n == 102_400 && binary == 241_057 && subtype == 241_444,
        format!(
            "320x320 mosaic: {n} raw spectra (write+read {io_secs:.1}s); parameters binary {binary}, \
             subtype {subtype}; reported original {REPORTED_PARAM_COUNT}"
        ),
    )
}

fn main() {
    let _ = env_logger::builder().is_test(true).try_init();
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("gradient correctness", c1_gradients),
        ("Savitzky-Golay exactness", c2_savgol),
        ("EMSC recovery", c3_emsc),
        ("outlier detection", c4_outliers),
        ("clustering", c5_clustering),
        ("split protocol", c6_split),
        ("end-to-end learning", c7_learning),
        ("Grad-CAM localization", c8_gradcam),
        ("learning-rate schedule", c9_scheduler),
        ("determinism", c10_determinism),
        ("scale anchors", c11_scale),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!v.pass);
        println!(
            "{} {:>2} {name}: {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
