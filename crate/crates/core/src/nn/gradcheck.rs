use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Network, Tensor};
use crate::error::Result;

/// `|a - n| / max(|a|, |n|, 1e-7)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

/// Central differences of a scalar function.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let fp = f(&probe);
            probe[i] = x[i] - h;
            let fm = f(&probe);
            probe[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub h: f64,
    /// Entries sampled per parameter tensor (all entries if the tensor is smaller).
    pub entries_per_tensor: usize,
    pub input_entries: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-3,
            entries_per_tensor: 8,
            input_entries: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    /// Against the extrapolated difference quotient.
    pub max_rel_error: f64,
    /// Against the plain central difference with step `h`.
    pub max_rel_error_plain: f64,
    pub checked: usize,
    /// Perturbations that flipped a ReLU and were not compared.
    pub skipped_kinks: usize,
    pub worst: String,
}

impl GradCheckReport {
    fn record(&mut self, what: String, analytic: f64, numeric: f64, plain: f64) {
        let e = relative_error(analytic, numeric);
        self.max_rel_error_plain = self
            .max_rel_error_plain
            .max(relative_error(analytic, plain));
        self.checked += 1;
        if e > self.max_rel_error {
            self.max_rel_error = e;
            self.worst = format!("{what}: analytic {analytic:e} numeric {numeric:e}");
        }
    }
}

type LossFn<'a> = dyn Fn(&Tensor<f64>) -> Result<(f64, Tensor<f64>)> + 'a;

fn perturbed_loss(
    net: &mut Network<f64>,
    x: &Tensor<f64>,
    loss: &LossFn,
) -> Result<(f64, Vec<bool>)> {
    let y = net.forward(x, true)?;
    Ok((loss(&y)?.0, net.relu_pattern()))
}

struct Differences {
    plain: f64,
    extrapolated: f64,
}

impl Differences {
    /// Central differences at `h` and `h/2` combined as `(4·D(h/2) − D(h)) / 3`.
    /// `None` when any probe changes the ReLU pattern.
    fn measure(
        eval: &mut dyn FnMut(f64) -> Result<(f64, Vec<bool>)>,
        h: f64,
        base: &[bool],
    ) -> Result<Option<Self>> {
        let mut q = [0.0; 2];
        for (k, step) in [h, h / 2.0].into_iter().enumerate() {
            let (lp, pp) = eval(step)?;
            let (lm, pm) = eval(-step)?;
            if pp != base || pm != base {
                return Ok(None);
            }
            q[k] = (lp - lm) / (2.0 * step);
        }
        Ok(Some(Self {
            plain: q[0],
            extrapolated: (4.0 * q[1] - q[0]) / 3.0,
        }))
    }
}

fn set_param(net: &mut Network<f64>, tensor: usize, index: usize, value: f64) {
    let mut t = 0;
    net.visit_params_mut(&mut |p| {
        if t == tensor {
            p.value[index] = value;
        }
        t += 1;
    });
}

/// Compares backpropagated gradients of `loss(net(x))` with central
/// differences on sampled parameter and input entries, in f64.
/// Plain central differences at `h` carry an O(h²) truncation error, so
/// the pass/fail figure uses the Richardson-extrapolated quotient.
pub fn check_network(
    net: &mut Network<f64>,
    x: &Tensor<f64>,
    loss: &LossFn,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let y = net.forward(x, true)?;
    let (_, dy) = loss(&y)?;
    let dx = net.backward(&dy)?;
    let base = net.relu_pattern();
    let mut grads = Vec::new();
    let mut values = Vec::new();
    net.visit_params(&mut |p| {
        grads.push(p.grad.clone());
        values.push(p.value.clone());
    });

    let mut report = GradCheckReport::default();
    let h = cfg.h;
    for (t, (g, v)) in grads.iter().zip(&values).enumerate() {
        let picks = sample(&mut rng, g.len(), cfg.entries_per_tensor.min(g.len()));
        for i in picks {
            let mut eval = |dx: f64| {
                set_param(net, t, i, v[i] + dx);
                perturbed_loss(net, x, loss)
            };
            let d = Differences::measure(&mut eval, h, &base)?;
            set_param(net, t, i, v[i]);
            match d {
                Some(d) => report.record(
                    format!("param tensor {t}[{i}]"),
                    g[i],
                    d.extrapolated,
                    d.plain,
                ),
                None => report.skipped_kinks += 1,
            }
        }
    }

    let picks = sample(
        &mut rng,
        x.data().len(),
        cfg.input_entries.min(x.data().len()),
    );
    let mut probe = x.clone();
    for i in picks {
        let x0 = x.data()[i];
        let mut eval = |d: f64| {
            probe.data_mut()[i] = x0 + d;
            perturbed_loss(net, &probe, loss)
        };
        let d = Differences::measure(&mut eval, h, &base)?;
        probe.data_mut()[i] = x0;
        match d {
            Some(d) => report.record(format!("input[{i}]"), dx.data()[i], d.extrapolated, d.plain),
            None => report.skipped_kinks += 1,
        }
    }
    Ok(report)
}
