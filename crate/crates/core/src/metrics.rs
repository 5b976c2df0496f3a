//! Depth accuracy metrics over valid (ground truth > 0) pixels.

use crate::error::{Error, Result};
use crate::math::sqrt_f64;
use crate::tensor::Tensor;

/// Predictions below this depth (meters) are clamped before ratio metrics.
pub const MIN_DEPTH: f32 = 1e-3;

/// δ1 threshold on `max(pred/gt, gt/pred)`.
pub const DELTA1_THRESHOLD: f64 = 1.25;

/// Prediction and ground truth of equal shape, in meters.
#[derive(Debug, Clone, Copy)]
pub struct DepthPair<'a> {
    prediction: &'a Tensor,
    truth: &'a Tensor,
}

impl<'a> DepthPair<'a> {
    pub fn new(prediction: &'a Tensor, truth: &'a Tensor) -> Result<Self> {
        if prediction.shape() != truth.shape() {
            return Err(Error::ShapeMismatch {
                left: prediction.shape(),
                right: truth.shape(),
            });
        }
        Ok(Self { prediction, truth })
    }

    pub fn valid_count(&self) -> usize {
        self.truth.data().iter().filter(|&&g| g > 0.0).count()
    }

    /// `(pred, gt)` over valid pixels.
    fn valid(&self) -> impl Iterator<Item = (f32, f32)> + 'a {
        self.prediction
            .data()
            .iter()
            .zip(self.truth.data())
            .filter(|(_, &g)| g > 0.0)
            .map(|(&p, &g)| (p, g))
    }
}

/// Fraction of valid pixels whose prediction is within 25% of the truth.
pub fn delta1(pair: &DepthPair) -> Result<f64> {
    let n = pair.valid_count();
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    let hits = pair
        .valid()
        .filter(|&(p, g)| {
            let (p, g) = (p.max(MIN_DEPTH) as f64, g as f64);
            (p / g).max(g / p) < DELTA1_THRESHOLD
        })
        .count();
    Ok(hits as f64 / n as f64)
}

/// Root mean squared error over valid pixels, in meters.
pub fn rmse(pair: &DepthPair) -> Result<f64> {
    let n = pair.valid_count();
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    let sum: f64 = pair
        .valid()
        .map(|(p, g)| {
            let d = (p - g) as f64;
            d * d
        })
        .sum();
    Ok(sqrt_f64(sum / n as f64))
}

/// Per-pixel `|pred - gt|`, zero where the truth is invalid.
pub fn error_map(pair: &DepthPair) -> Tensor {
    let mut out = Tensor::zeros(pair.truth.shape());
    for ((o, &p), &g) in out.data_mut().iter_mut().zip(pair.prediction.data()).zip(pair.truth.data()) {
        if g > 0.0 {
            *o = (p - g).abs();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorShape;

    fn t(v: &[f32]) -> Tensor {
        Tensor::new(TensorShape::new(1, 1, 1, v.len()).unwrap(), v.to_vec()).unwrap()
    }

    #[test]
    fn delta1_examples() {
        let gt = t(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(delta1(&DepthPair::new(&gt, &gt).unwrap()).unwrap(), 1.0);
        let pred = t(&[1.2, 1.26, 0.81, 0.79]);
        assert_eq!(delta1(&DepthPair::new(&pred, &gt).unwrap()).unwrap(), 0.5);
        let far = t(&[1.3, 1.3, 1.3, 1.3]);
        assert_eq!(delta1(&DepthPair::new(&far, &gt).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn rmse_examples() {
        let gt = t(&[1.0, 3.0]);
        let pred = t(&[2.0, 5.0]);
        let r = rmse(&DepthPair::new(&pred, &gt).unwrap()).unwrap();
        assert!((r - 1.581_138_8).abs() < 1e-6);
        assert_eq!(rmse(&DepthPair::new(&gt, &gt).unwrap()).unwrap(), 0.0);
        let shifted = gt.map(|v| v + 0.5);
        assert!((rmse(&DepthPair::new(&shifted, &gt).unwrap()).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn invalid_pixels_are_ignored() {
        let gt = t(&[0.0, 2.0, 0.0]);
        let pred = t(&[9.0, 2.0, -4.0]);
        let pair = DepthPair::new(&pred, &gt).unwrap();
        assert_eq!(rmse(&pair).unwrap(), 0.0);
        assert_eq!(delta1(&pair).unwrap(), 1.0);
        assert_eq!(error_map(&pair).data(), &[0.0, 0.0, 0.0]);
        let zeros = t(&[0.0, 0.0, 0.0]);
        assert_eq!(rmse(&DepthPair::new(&pred, &zeros).unwrap()), Err(Error::NoValidPixels));
        assert_eq!(delta1(&DepthPair::new(&pred, &zeros).unwrap()), Err(Error::NoValidPixels));
    }

    #[test]
    fn error_map_single_pixel() {
        let gt = t(&[1.0, 2.0, 3.0]);
        let pred = t(&[1.0, 2.5, 3.0]);
        assert_eq!(error_map(&DepthPair::new(&pred, &gt).unwrap()).data(), &[0.0, 0.5, 0.0]);
    }

    #[test]
    fn negative_predictions_are_clamped_for_ratios() {
        let gt = t(&[1.0]);
        let pred = t(&[-1.0]);
        assert_eq!(delta1(&DepthPair::new(&pred, &gt).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(DepthPair::new(&t(&[1.0]), &t(&[1.0, 2.0])).is_err());
    }
}
