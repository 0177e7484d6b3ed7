use crate::error::{Error, Result};

/// Scalar quantizer with strictly increasing thresholds `t_1 < ... < t_{R-1}`.
///
/// Level `r` (1-based) covers the left-open, right-closed region
/// `(t_{r-1}, t_r]`, with `t_0 = -inf` and `t_R = +inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    thresholds: Vec<f64>,
}

impl Quantizer {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::InvalidQuantizer("at least one threshold is required".into()));
        }
        if let Some(t) = thresholds.iter().find(|t| !t.is_finite()) {
            return Err(Error::InvalidQuantizer(format!("threshold {t} is not finite")));
        }
        if let Some(w) = thresholds.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidQuantizer(format!(
                "thresholds must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { thresholds })
    }

    /// `count` thresholds `start, start + step, ...`.
    pub fn uniform(start: f64, step: f64, count: usize) -> Result<Self> {
        Self::new((0..count).map(|i| start + step * i as f64).collect())
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Number of levels `R`.
    pub fn levels(&self) -> usize {
        self.thresholds.len() + 1
    }

    /// Edges `(t_{r-1}, t_r)` of 1-based level `r`.
    pub fn region(&self, level: usize) -> (f64, f64) {
        let lo = if level <= 1 { f64::NEG_INFINITY } else { self.thresholds[level - 2] };
        let hi = if level >= self.levels() { f64::INFINITY } else { self.thresholds[level - 1] };
        (lo, hi)
    }

    pub fn quantize(&self, x: f64) -> Result<usize> {
        if x.is_nan() {
            return Err(Error::NonFinite("cannot quantize NaN".into()));
        }
        Ok(self.thresholds.partition_point(|&t| t < x) + 1)
    }
}

/// Map a real value to its 1-based quantization level.
pub fn quantize(x: f64, quantizer: &Quantizer) -> Result<usize> {
    quantizer.quantize(x)
}
