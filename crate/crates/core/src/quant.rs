//! Symmetric signed fake quantization with straight-through gradients.
//!
//! A value `x` is mapped to `s * round(clamp(x / s, -2^(n-1), 2^(n-1) - 1))`.
//! Rounding is half-to-even. The backward pass lets the upstream gradient
//! through unchanged wherever `x / s` fell inside the clamp range and zeroes
//! it elsewhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported bit width. Levels must stay exactly representable.
pub const MAX_BITS: u32 = 32;

/// Quantization grid for one tensor: `{ s * k : -2^(n-1) <= k <= 2^(n-1) - 1 }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    bits: u32,
    scale: f64,
}

impl QuantSpec {
    pub fn new(bits: u32, scale: f64) -> Result<Self> {
        if !(2..=MAX_BITS).contains(&bits) {
            return Err(Error::InvalidQuantSpec(format!(
                "bit width {bits} outside [2, {MAX_BITS}]"
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidQuantSpec(format!(
                "scale must be positive and finite, got {scale}"
            )));
        }
        Ok(Self { bits, scale })
    }

    /// Min-max calibration: the largest magnitude maps onto the top level.
    ///
    /// An all-zero tensor has no range to calibrate against and gets scale 1.
    pub fn calibrate(bits: u32, values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut max_abs = 0.0f64;
        for (index, value) in values.into_iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { index, value });
            }
            max_abs = max_abs.max(value.abs());
        }
        // Validate bits before using them in the level computation.
        let probe = Self::new(bits, 1.0)?;
        if max_abs == 0.0 {
            return Ok(probe);
        }
        Self::new(bits, max_abs / probe.level_max())
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Lowest integer level, `-2^(n-1)`.
    pub fn level_min(&self) -> f64 {
        -(2f64.powi(self.bits as i32 - 1))
    }

    /// Highest integer level, `2^(n-1) - 1`.
    pub fn level_max(&self) -> f64 {
        2f64.powi(self.bits as i32 - 1) - 1.0
    }

    /// Quantize one value. Returns the grid value and whether `x / s` was
    /// inside the clamp range (the STE pass-through condition).
    pub fn quantize_value(&self, x: f64) -> (f64, bool) {
        let t = x / self.scale;
        let (lo, hi) = (self.level_min(), self.level_max());
        let inside = (lo..=hi).contains(&t);
        let level = t.clamp(lo, hi).round_ties_even();
        (self.scale * level, inside)
    }

    /// True when `x` is exactly `s * k` for an admissible integer level `k`.
    pub fn on_grid(&self, x: f64) -> bool {
        let k = (x / self.scale).round_ties_even();
        k >= self.level_min() && k <= self.level_max() && self.scale * k == x
    }
}

/// Per-element record of which inputs were inside the clamp range.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SteMask(Vec<bool>);

impl SteMask {
    pub fn new(inside: Vec<bool>) -> Self {
        Self(inside)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    /// Applies the mask in place: entries outside the clamp range are zeroed.
    pub(crate) fn apply_in_place(&self, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.0.len());
        for (g, &inside) in grad.iter_mut().zip(&self.0) {
            if !inside {
                *g = 0.0;
            }
        }
    }
}

/// Fake-quantize every element of `x`.
pub fn quantize(x: &[f64], spec: &QuantSpec) -> Result<(Vec<f64>, SteMask)> {
    let mut out = Vec::with_capacity(x.len());
    let mut mask = Vec::with_capacity(x.len());
    for (index, &value) in x.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite { index, value });
        }
        let (q, inside) = spec.quantize_value(value);
        out.push(q);
        mask.push(inside);
    }
    Ok((out, SteMask(mask)))
}

/// Straight-through backward: pass `upstream` where the mask is set, zero elsewhere.
pub fn ste_backward(upstream: &[f64], mask: &SteMask) -> Result<Vec<f64>> {
    if upstream.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "upstream has {} elements, mask has {}",
            upstream.len(),
            mask.len()
        )));
    }
    let mut out = upstream.to_vec();
    mask.apply_in_place(&mut out);
    Ok(out)
}
