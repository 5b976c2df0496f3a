//! Dense rank-4 `f32` tensors in batch-channel-height-width order.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Extents of an NCHW tensor. Every extent is at least 1.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorShape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl TensorShape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidShape([n, c, h, w]));
        }
        n.checked_mul(c)
            .and_then(|x| x.checked_mul(h))
            .and_then(|x| x.checked_mul(w))
            .and_then(|x| x.checked_mul(4))
            .filter(|&bytes| bytes <= isize::MAX as usize)
            .ok_or(Error::InvalidShape([n, c, h, w]))?;
        Ok(Self { n, c, h, w })
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one channel plane.
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn with_channels(self, c: usize) -> Result<Self> {
        Self::new(self.n, c, self.h, self.w)
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Debug for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// How to populate a freshly created tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    Value(f32),
    /// Uniform in `[low, high)` from a ChaCha8 stream seeded with `seed`.
    Uniform { seed: u64, low: f32, high: f32 },
}

impl Fill {
    /// Seeded uniform fill over `[-1, 1)`.
    pub fn seeded(seed: u64) -> Self {
        Fill::Uniform {
            seed,
            low: -1.0,
            high: 1.0,
        }
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: TensorShape,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: TensorShape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::DataLength {
                shape,
                len: data.len(),
                expected: shape.numel(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn create(shape: TensorShape, fill: Fill) -> Self {
        let data = match fill {
            Fill::Value(v) => vec![v; shape.numel()],
            Fill::Uniform { seed, low, high } => uniform_vec(seed, shape.numel(), low, high),
        };
        Self { shape, data }
    }

    pub fn zeros(shape: TensorShape) -> Self {
        Self::create(shape, Fill::Value(0.0))
    }

    pub fn shape(&self) -> TensorShape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = &self.shape;
        ((n * s.c + c) * s.h + y) * s.w + x
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(n, c, y, x)]
    }

    /// The `h*w` plane for batch `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(())
    }

    /// Elementwise sum of two tensors of identical shape.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor {
            shape: self.shape,
            data,
        })
    }

    /// Channel concatenation; `self`'s channels come first.
    pub fn concat_channels(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape, other.shape);
        if a.n != b.n || a.h != b.h || a.w != b.w {
            return Err(Error::ConcatMismatch { left: a, right: b });
        }
        let shape = TensorShape::new(a.n, a.c + b.c, a.h, a.w)?;
        let (la, lb) = (a.c * a.plane(), b.c * b.plane());
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..a.n {
            data.extend_from_slice(&self.data[n * la..(n + 1) * la]);
            data.extend_from_slice(&other.data[n * lb..(n + 1) * lb]);
        }
        Ok(Tensor { shape, data })
    }

    /// Copy of the channels in `range`.
    pub fn slice_channels(&self, range: Range<usize>) -> Result<Tensor> {
        let s = self.shape;
        if range.start >= range.end || range.end > s.c {
            return Err(Error::InvalidShape([s.n, range.end.saturating_sub(range.start), s.h, s.w]));
        }
        self.select_channels(&range.collect::<Vec<_>>())
    }

    /// Copy of the given channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Tensor> {
        let s = self.shape;
        let shape = s.with_channels(channels.len())?;
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..s.n {
            for &c in channels {
                assert!(c < s.c, "channel {c} out of range for {s}");
                data.extend_from_slice(self.plane(n, c));
            }
        }
        debug_assert_eq!(data.len(), shape.numel());
        Ok(Tensor { shape, data })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Deterministic uniform samples in `[low, high)`.
pub fn uniform_vec(seed: u64, len: usize, low: f32, high: f32) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = high - low;
    (0..len).map(|_| low + span * rng.random::<f32>()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(n: usize, c: usize, h: usize, w: usize) -> TensorShape {
        TensorShape::new(n, c, h, w).unwrap()
    }

    #[test]
    fn zero_fill() {
        let t = Tensor::create(shape(1, 1, 2, 2), Fill::Value(0.0));
        assert_eq!(t.data(), &[0.0; 4]);
    }

    #[test]
    fn seeded_fill_is_reproducible() {
        let s = shape(1, 3, 224, 224);
        let a = Tensor::create(s, Fill::seeded(42));
        let b = Tensor::create(s, Fill::seeded(42));
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = Tensor::create(s, Fill::seeded(43));
        assert_ne!(a, c);
    }

    #[test]
    fn ones_sum_counts_elements() {
        let t = Tensor::create(shape(1, 1024, 7, 7), Fill::Value(1.0));
        assert_eq!(t.sum(), 50176.0);
    }

    #[test]
    fn rejects_zero_extents() {
        for dims in [[0, 1, 1, 1], [1, 0, 1, 1], [1, 1, 0, 1], [1, 1, 1, 0]] {
            assert_eq!(
                TensorShape::new(dims[0], dims[1], dims[2], dims[3]),
                Err(Error::InvalidShape(dims))
            );
        }
        assert!(TensorShape::new(usize::MAX, 2, 2, 2).is_err());
    }

    #[test]
    fn add_examples() {
        let s = shape(1, 1, 1, 2);
        let a = Tensor::new(s, vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(s, vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(a.add(&Tensor::zeros(s)).unwrap(), a);
        assert_eq!(a.add(&a).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn add_shape_mismatch_names_both() {
        let a = Tensor::zeros(shape(1, 2, 3, 3));
        let b = Tensor::zeros(shape(1, 3, 3, 3));
        let err = a.add(&b).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("(1,2,3,3)") && msg.contains("(1,3,3,3)"), "{msg}");
    }

    #[test]
    fn concat_shapes_and_order() {
        let a = Tensor::create(shape(1, 2, 4, 4), Fill::seeded(1));
        let b = Tensor::create(shape(1, 3, 4, 4), Fill::seeded(2));
        let c = a.concat_channels(&b).unwrap();
        assert_eq!(c.shape(), shape(1, 5, 4, 4));
        assert_eq!(c.plane(0, 0), a.plane(0, 0));
        assert_eq!(c.plane(0, 2), b.plane(0, 0));
        assert!(a.concat_channels(&Tensor::zeros(shape(1, 1, 4, 5))).is_err());
        // An empty operand cannot exist: c >= 1 is enforced at construction.
        assert!(TensorShape::new(1, 0, 4, 4).is_err());
    }
}
