use super::Real;
use crate::error::{Error, Result};

/// Activation tensor stored channel-major: index `(c, b, l)` lives at
/// `(c * batch + b) * length + l`.
///
/// Dense activations use `length == 1`, so a batch of `n` feature vectors
/// of width `f` is an `f × n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    channels: usize,
    batch: usize,
    length: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(channels: usize, batch: usize, length: usize) -> Self {
        Self {
            channels,
            batch,
            length,
            data: vec![T::zero(); channels * batch * length],
        }
    }

    pub fn from_vec(channels: usize, batch: usize, length: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * batch * length {
            return Err(Error::ShapeMismatch(format!(
                "tensor {channels}×{batch}×{length} needs {} values, got {}",
                channels * batch * length,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            batch,
            length,
            data,
        })
    }

    /// Single-channel batch from equally long rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let length = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * length);
        for r in rows {
            let r = r.as_ref();
            if r.len() != length {
                return Err(Error::LengthMismatch {
                    expected: length,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(1, rows.len(), length, data)
    }

    /// Per-sample output rows `[batch][channels]` of a `length == 1` tensor.
    pub fn sample_rows(&self) -> Vec<Vec<T>> {
        assert_eq!(self.length, 1, "sample_rows expects pooled or dense output");
        (0..self.batch)
            .map(|b| {
                (0..self.channels)
                    .map(|c| self.data[c * self.batch + b])
                    .collect()
            })
            .collect()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.batch, self.length)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, c: usize, b: usize, l: usize) -> T {
        self.data[(c * self.batch + b) * self.length + l]
    }

    /// Contiguous run for channel `c`, sample `b`.
    pub fn lane(&self, c: usize, b: usize) -> &[T] {
        let start = (c * self.batch + b) * self.length;
        &self.data[start..start + self.length]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            channels: self.channels,
            batch: self.batch,
            length: self.length,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    pub(crate) fn check_finite(&self, what: &str) -> Result<()> {
        if cfg!(debug_assertions) && !self.is_finite() {
            return Err(Error::Numerical(format!("non-finite values after {what}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_major_indexing() {
        let t = Tensor::from_vec(2, 3, 2, (0..12).map(|v| v as f32).collect()).unwrap();
        assert_eq!(t.get(1, 2, 1), 11.0);
        assert_eq!(t.lane(0, 1), &[2.0, 3.0]);
        assert!(Tensor::<f32>::from_vec(2, 2, 2, vec![0.0; 7]).is_err());
        let d = Tensor::from_vec(2, 3, 1, vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(
            d.sample_rows(),
            vec![vec![1.0, 4.0], vec![2.0, 5.0], vec![3.0, 6.0]]
        );
    }
}
