use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::he_normal_fill;
use super::real::gemm;
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Serializable description of one layer; the network's architecture
/// descriptor is a list of these.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Sigmoid,
    Softmax,
    GlobalAvgPool,
    /// `body(x) + shortcut(x)`; the shortcut is the identity unless a
    /// projection convolution is given.
    ResidualAdd {
        body: Vec<LayerSpec>,
        projection: Option<Box<LayerSpec>>,
    },
}

/// Output length and left padding of a zero-padded "same" convolution.
pub fn same_padding(len: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out.saturating_sub(1)) * stride + kernel).saturating_sub(len);
    (out, total / 2)
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if kernel % 2 == 0 {
                    return Err(Error::InvalidParameter(format!(
                        "conv kernel {kernel} is not odd"
                    )));
                }
                if *stride == 0 || *in_channels == 0 || *out_channels == 0 {
                    return Err(Error::InvalidParameter(
                        "conv stride and channels must be ≥ 1".into(),
                    ));
                }
            }
            LayerSpec::Dense { inputs, outputs } => {
                if *inputs == 0 || *outputs == 0 {
                    return Err(Error::InvalidParameter("dense sizes must be ≥ 1".into()));
                }
            }
            LayerSpec::ResidualAdd { body, projection } => {
                body.iter().try_for_each(LayerSpec::validate)?;
                if let Some(p) = projection {
                    if !matches!(**p, LayerSpec::Conv1d { .. }) {
                        return Err(Error::InvalidParameter(
                            "residual projection must be a conv".into(),
                        ));
                    }
                    p.validate()?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// `(channels, length)` after this layer.
    pub fn output_shape(&self, (c, l): (usize, usize)) -> Result<(usize, usize)> {
        let mismatch = |what: &str| {
            Err(Error::ShapeMismatch(format!(
                "{what} cannot take input {c}×{l}"
            )))
        };
        match self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if c != *in_channels {
                    return mismatch("conv1d");
                }
                Ok((*out_channels, same_padding(l, *kernel, *stride).0))
            }
            LayerSpec::Dense { inputs, outputs } => {
                if c != *inputs || l != 1 {
                    return mismatch("dense");
                }
                Ok((*outputs, 1))
            }
            LayerSpec::GlobalAvgPool => Ok((c, 1)),
            LayerSpec::ResidualAdd { body, projection } => {
                let main = body
                    .iter()
                    .try_fold((c, l), |s, layer| layer.output_shape(s))?;
                let short = match projection {
                    Some(p) => p.output_shape((c, l))?,
                    None => (c, l),
                };
                if main != short {
                    return Err(Error::ShapeMismatch(format!(
                        "residual body gives {main:?} but shortcut gives {short:?}"
                    )));
                }
                Ok(main)
            }
            _ => Ok((c, l)),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * in_channels * kernel + out_channels,
            LayerSpec::Dense { inputs, outputs } => outputs * inputs + outputs,
            LayerSpec::ResidualAdd { body, projection } => {
                body.iter().map(LayerSpec::param_count).sum::<usize>()
                    + projection.as_ref().map_or(0, |p| p.param_count())
            }
            _ => 0,
        }
    }
}

/// Trainable tensor with its gradient from the latest backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    fn zeros(len: usize) -> Self {
        Self {
            value: vec![T::zero(); len],
            grad: vec![T::zero(); len],
        }
    }

    fn cast<U: Real>(&self) -> Param<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::lit(x.as_f64())).collect();
        Param {
            value: c(&self.value),
            grad: c(&self.grad),
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Debug, Clone)]
struct ConvCache<T> {
    col: Vec<T>,
    batch: usize,
    in_len: usize,
}

/// Zero-padded "same" 1D cross-correlation, lowered to a matrix product.
#[derive(Debug, Clone)]
pub struct Conv1d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `[out_channels][in_channels][kernel]`
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<ConvCache<T>>,
}

impl<T: Real> Conv1d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        LayerSpec::Conv1d {
            in_channels,
            out_channels,
            kernel,
            stride,
        }
        .validate()?;
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: Param::zeros(out_channels * in_channels * kernel),
            bias: Param::zeros(out_channels),
            cache: None,
        })
    }

    fn im2col(&self, x: &Tensor<T>, out_len: usize, pad: usize) -> Vec<T> {
        let (cin, batch, len) = x.shape();
        let n = batch * out_len;
        let (k, s) = (self.kernel, self.stride);
        let mut col = vec![T::zero(); cin * k * n];
        for c in 0..cin {
            for kk in 0..k {
                // valid t: 0 ≤ t*s + kk - pad < len
                let t0 = if pad > kk { (pad - kk).div_ceil(s) } else { 0 };
                let t1 = if len + pad > kk {
                    ((len + pad - kk - 1) / s + 1).min(out_len)
                } else {
                    0
                };
                let row = &mut col[(c * k + kk) * n..(c * k + kk + 1) * n];
                for b in 0..batch {
                    let lane = x.lane(c, b);
                    let dst = &mut row[b * out_len..(b + 1) * out_len];
                    for t in t0..t1 {
                        dst[t] = lane[t * s + kk - pad];
                    }
                }
            }
        }
        col
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let (cin, batch, len) = x.shape();
        if cin != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "conv1d expects {} input channels, got {cin}",
                self.in_channels
            )));
        }
        let (out_len, pad) = same_padding(len, self.kernel, self.stride);
        let col = self.im2col(x, out_len, pad);
        let n = batch * out_len;
        let mut y = vec![T::zero(); self.out_channels * n];
        gemm(
            false,
            false,
            self.out_channels,
            n,
            cin * self.kernel,
            &self.weight.value,
            &col,
            &mut y,
            false,
        );
        for (row, &b) in y.chunks_mut(n.max(1)).zip(&self.bias.value) {
            row.iter_mut().for_each(|v| *v += b);
        }
        self.cache = train.then_some(ConvCache {
            col,
            batch,
            in_len: len,
        });
        Tensor::from_vec(self.out_channels, batch, out_len, y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or(Error::NoForwardCache("conv1d"))?;
        let (batch, len) = (cache.batch, cache.in_len);
        let (out_len, pad) = same_padding(len, self.kernel, self.stride);
        if dy.shape() != (self.out_channels, batch, out_len) {
            return Err(Error::ShapeMismatch(format!(
                "conv1d gradient shape {:?} does not match output",
                dy.shape()
            )));
        }
        let n = batch * out_len;
        let ck = self.in_channels * self.kernel;
        gemm(
            false,
            true,
            self.out_channels,
            ck,
            n,
            dy.data(),
            &cache.col,
            &mut self.weight.grad,
            false,
        );
        for (g, row) in self.bias.grad.iter_mut().zip(dy.data().chunks(n.max(1))) {
            *g = row.iter().copied().sum();
        }
        let mut dcol = vec![T::zero(); ck * n];
        gemm(
            true,
            false,
            ck,
            n,
            self.out_channels,
            &self.weight.value,
            dy.data(),
            &mut dcol,
            false,
        );

        let (k, s) = (self.kernel, self.stride);
        let mut dx = Tensor::zeros(self.in_channels, batch, len);
        let dxd = dx.data_mut();
        for c in 0..self.in_channels {
            for kk in 0..k {
                let t0 = if pad > kk { (pad - kk).div_ceil(s) } else { 0 };
                let t1 = if len + pad > kk {
                    ((len + pad - kk - 1) / s + 1).min(out_len)
                } else {
                    0
                };
                let row = &dcol[(c * k + kk) * n..(c * k + kk + 1) * n];
                for b in 0..batch {
                    let src = &row[b * out_len..(b + 1) * out_len];
                    let lane = &mut dxd[(c * batch + b) * len..(c * batch + b + 1) * len];
                    for t in t0..t1 {
                        lane[t * s + kk - pad] += src[t];
                    }
                }
            }
        }
        Ok(dx)
    }
}

/// Fully connected layer over `length == 1` tensors.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `[outputs][inputs]`
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new(inputs: usize, outputs: usize) -> Result<Self> {
        LayerSpec::Dense { inputs, outputs }.validate()?;
        Ok(Self {
            inputs,
            outputs,
            weight: Param::zeros(inputs * outputs),
            bias: Param::zeros(outputs),
            cache: None,
        })
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let (f, batch, l) = x.shape();
        if f != self.inputs || l != 1 {
            return Err(Error::ShapeMismatch(format!(
                "dense expects {}×B×1, got {f}×{batch}×{l}",
                self.inputs
            )));
        }
        let mut y = vec![T::zero(); self.outputs * batch];
        gemm(
            false,
            false,
            self.outputs,
            batch,
            f,
            &self.weight.value,
            x.data(),
            &mut y,
            false,
        );
        for (row, &b) in y.chunks_mut(batch.max(1)).zip(&self.bias.value) {
            row.iter_mut().for_each(|v| *v += b);
        }
        self.cache = train.then(|| x.clone());
        Tensor::from_vec(self.outputs, batch, 1, y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.as_ref().ok_or(Error::NoForwardCache("dense"))?;
        let batch = x.batch();
        if dy.shape() != (self.outputs, batch, 1) {
            return Err(Error::ShapeMismatch(
                "dense gradient shape does not match output".into(),
            ));
        }
        gemm(
            false,
            true,
            self.outputs,
            self.inputs,
            batch,
            dy.data(),
            x.data(),
            &mut self.weight.grad,
            false,
        );
        for (g, row) in self
            .bias
            .grad
            .iter_mut()
            .zip(dy.data().chunks(batch.max(1)))
        {
            *g = row.iter().copied().sum();
        }
        let mut dx = vec![T::zero(); self.inputs * batch];
        gemm(
            true,
            false,
            self.inputs,
            batch,
            self.outputs,
            &self.weight.value,
            dy.data(),
            &mut dx,
            false,
        );
        Tensor::from_vec(self.inputs, batch, 1, dx)
    }
}

/// `body(x) + shortcut(x)`.
#[derive(Debug, Clone)]
pub struct Residual<T> {
    pub body: Vec<Layer<T>>,
    pub projection: Option<Conv1d<T>>,
}

impl<T: Real> Residual<T> {
    fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for layer in &mut self.body {
            h = layer.forward(&h, train)?;
        }
        let shortcut = match &mut self.projection {
            Some(p) => p.forward(x, train)?,
            None => x.clone(),
        };
        if h.shape() != shortcut.shape() {
            return Err(Error::ShapeMismatch(format!(
                "residual add of {:?} and {:?}",
                h.shape(),
                shortcut.shape()
            )));
        }
        h.data_mut()
            .iter_mut()
            .zip(shortcut.data())
            .for_each(|(a, b)| *a += *b);
        Ok(h)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = dy.clone();
        for layer in self.body.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        let gs = match &mut self.projection {
            Some(p) => p.backward(dy)?,
            None => dy.clone(),
        };
        g.data_mut()
            .iter_mut()
            .zip(gs.data())
            .for_each(|(a, b)| *a += *b);
        Ok(g)
    }
}

/// One node of the sequential graph.
#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv1d<T>),
    Dense(Dense<T>),
    /// Caches its output; gradient passes where the output is positive.
    Relu(Option<Tensor<T>>),
    Sigmoid(Option<Tensor<T>>),
    /// Softmax over channels for every (sample, position).
    Softmax(Option<Tensor<T>>),
    /// Caches the input length.
    GlobalAvgPool(Option<usize>),
    Residual(Residual<T>),
}

impl<T: Real> Layer<T> {
    /// Builds a layer with He-normal weights and zero biases.
    pub fn from_spec<R: Rng + ?Sized>(spec: &LayerSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        Ok(match spec {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let mut c = Conv1d::new(*in_channels, *out_channels, *kernel, *stride)?;
                he_normal_fill(in_channels * kernel, &mut c.weight.value, rng);
                Layer::Conv(c)
            }
            LayerSpec::Dense { inputs, outputs } => {
                let mut d = Dense::new(*inputs, *outputs)?;
                he_normal_fill(*inputs, &mut d.weight.value, rng);
                Layer::Dense(d)
            }
            LayerSpec::Relu => Layer::Relu(None),
            LayerSpec::Sigmoid => Layer::Sigmoid(None),
            LayerSpec::Softmax => Layer::Softmax(None),
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool(None),
            LayerSpec::ResidualAdd { body, projection } => {
                let body = body
                    .iter()
                    .map(|s| Layer::from_spec(s, rng))
                    .collect::<Result<_>>()?;
                let projection = match projection {
                    Some(p) => match Layer::from_spec(p, rng)? {
                        Layer::Conv(c) => Some(c),
                        _ => unreachable!("validated as conv"),
                    },
                    None => None,
                };
                Layer::Residual(Residual { body, projection })
            }
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv(c) => LayerSpec::Conv1d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                stride: c.stride,
            },
            Layer::Dense(d) => LayerSpec::Dense {
                inputs: d.inputs,
                outputs: d.outputs,
            },
            Layer::Relu(_) => LayerSpec::Relu,
            Layer::Sigmoid(_) => LayerSpec::Sigmoid,
            Layer::Softmax(_) => LayerSpec::Softmax,
            Layer::GlobalAvgPool(_) => LayerSpec::GlobalAvgPool,
            Layer::Residual(r) => LayerSpec::ResidualAdd {
                body: r.body.iter().map(Layer::spec).collect(),
                projection: r
                    .projection
                    .as_ref()
                    .map(|p| Box::new(Layer::Conv(p.clone()).spec())),
            },
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let y = match self {
            Layer::Conv(c) => c.forward(x, train)?,
            Layer::Dense(d) => d.forward(x, train)?,
            Layer::Relu(cache) => {
                let mut y = x.clone();
                y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
                *cache = train.then(|| y.clone());
                y
            }
            Layer::Sigmoid(cache) => {
                let mut y = x.clone();
                y.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
                *cache = train.then(|| y.clone());
                y
            }
            Layer::Softmax(cache) => {
                let y = softmax_channels(x);
                *cache = train.then(|| y.clone());
                y
            }
            Layer::GlobalAvgPool(cache) => {
                let (c, b, l) = x.shape();
                if l == 0 {
                    return Err(Error::ShapeMismatch("pooling over zero length".into()));
                }
                let inv = T::lit(1.0 / l as f64);
                let data = x
                    .data()
                    .chunks(l)
                    .map(|lane| lane.iter().copied().sum::<T>() * inv)
                    .collect();
                *cache = train.then_some(l);
                Tensor::from_vec(c, b, 1, data)?
            }
            Layer::Residual(r) => r.forward(x, train)?,
        };
        y.check_finite("forward")?;
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let same = |y: &Tensor<T>| -> Result<()> {
            if y.shape() != dy.shape() {
                return Err(Error::ShapeMismatch(
                    "activation gradient shape mismatch".into(),
                ));
            }
            Ok(())
        };
        match self {
            Layer::Conv(c) => c.backward(dy),
            Layer::Dense(d) => d.backward(dy),
            Layer::Relu(cache) => {
                let y = cache.as_ref().ok_or(Error::NoForwardCache("relu"))?;
                same(y)?;
                let mut dx = dy.clone();
                dx.data_mut().iter_mut().zip(y.data()).for_each(|(g, &v)| {
                    if v <= T::zero() {
                        *g = T::zero()
                    }
                });
                Ok(dx)
            }
            Layer::Sigmoid(cache) => {
                let y = cache.as_ref().ok_or(Error::NoForwardCache("sigmoid"))?;
                same(y)?;
                let mut dx = dy.clone();
                dx.data_mut()
                    .iter_mut()
                    .zip(y.data())
                    .for_each(|(g, &p)| *g *= p * (T::one() - p));
                Ok(dx)
            }
            Layer::Softmax(cache) => {
                let y = cache.as_ref().ok_or(Error::NoForwardCache("softmax"))?;
                same(y)?;
                let (c, b, l) = y.shape();
                let mut dx = Tensor::zeros(c, b, l);
                let stride = b * l;
                for pos in 0..stride {
                    let inner: T = (0..c)
                        .map(|k| dy.data()[k * stride + pos] * y.data()[k * stride + pos])
                        .sum();
                    for k in 0..c {
                        let i = k * stride + pos;
                        dx.data_mut()[i] = y.data()[i] * (dy.data()[i] - inner);
                    }
                }
                Ok(dx)
            }
            Layer::GlobalAvgPool(cache) => {
                let l = cache.ok_or(Error::NoForwardCache("global_avg_pool"))?;
                if dy.length() != 1 {
                    return Err(Error::ShapeMismatch(
                        "pooled gradient must have length 1".into(),
                    ));
                }
                let inv = T::lit(1.0 / l as f64);
                let data = dy
                    .data()
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g * inv, l))
                    .collect();
                Tensor::from_vec(dy.channels(), dy.batch(), l, data)
            }
            Layer::Residual(r) => r.backward(dy),
        }
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        match self {
            Layer::Conv(c) => {
                f(&c.weight);
                f(&c.bias);
            }
            Layer::Dense(d) => {
                f(&d.weight);
                f(&d.bias);
            }
            Layer::Residual(r) => {
                r.body.iter().for_each(|l| l.visit_params(f));
                if let Some(p) = &r.projection {
                    f(&p.weight);
                    f(&p.bias);
                }
            }
            _ => {}
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        match self {
            Layer::Conv(c) => {
                f(&mut c.weight);
                f(&mut c.bias);
            }
            Layer::Dense(d) => {
                f(&mut d.weight);
                f(&mut d.bias);
            }
            Layer::Residual(r) => {
                r.body.iter_mut().for_each(|l| l.visit_params_mut(f));
                if let Some(p) = &mut r.projection {
                    f(&mut p.weight);
                    f(&mut p.bias);
                }
            }
            _ => {}
        }
    }

    /// Appends the positive-output pattern of every cached ReLU.
    pub fn relu_pattern(&self, out: &mut Vec<bool>) {
        match self {
            Layer::Relu(Some(y)) => out.extend(y.data().iter().map(|v| *v > T::zero())),
            Layer::Residual(r) => r.body.iter().for_each(|l| l.relu_pattern(out)),
            _ => {}
        }
    }

    pub fn cast<U: Real>(&self) -> Layer<U> {
        let conv = |c: &Conv1d<T>| Conv1d {
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            kernel: c.kernel,
            stride: c.stride,
            weight: c.weight.cast(),
            bias: c.bias.cast(),
            cache: None,
        };
        match self {
            Layer::Conv(c) => Layer::Conv(conv(c)),
            Layer::Dense(d) => Layer::Dense(Dense {
                inputs: d.inputs,
                outputs: d.outputs,
                weight: d.weight.cast(),
                bias: d.bias.cast(),
                cache: None,
            }),
            Layer::Relu(_) => Layer::Relu(None),
            Layer::Sigmoid(_) => Layer::Sigmoid(None),
            Layer::Softmax(_) => Layer::Softmax(None),
            Layer::GlobalAvgPool(_) => Layer::GlobalAvgPool(None),
            Layer::Residual(r) => Layer::Residual(Residual {
                body: r.body.iter().map(Layer::cast).collect(),
                projection: r.projection.as_ref().map(conv),
            }),
        }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softmax_channels<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (c, b, l) = x.shape();
    let stride = b * l;
    let mut y = x.clone();
    let d = y.data_mut();
    for pos in 0..stride {
        let mut m = T::neg_infinity();
        for k in 0..c {
            m = m.max(d[k * stride + pos]);
        }
        let mut sum = T::zero();
        for k in 0..c {
            let e = (d[k * stride + pos] - m).exp();
            d[k * stride + pos] = e;
            sum += e;
        }
        for k in 0..c {
            d[k * stride + pos] /= sum;
        }
    }
    y
}
