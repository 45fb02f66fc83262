use serde::{Deserialize, Serialize};

use crate::codes::NUM_BASES;

/// Largest magnitude a single adder-tree sum can reach (256 · 128).
pub const MAX_TILE_SUM: i64 = 256 * 128;

/// Basis coefficients as 16-bit fixed point sharing one exponent:
/// `ω_i ≈ values[i] · 2^-shift`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasisWeights {
    pub values: [i16; NUM_BASES],
    pub shift: i8,
}

impl BasisWeights {
    /// Rounds `omega` at scale `2^shift`, saturating to the i16 range.
    pub fn quantize(omega: &[f64; NUM_BASES], shift: i8) -> Self {
        let scale = 2f64.powi(shift as i32);
        let values = std::array::from_fn(|i| (omega[i] * scale).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16);
        Self { values, shift }
    }

    /// Picks the largest exponent such that the rounded values fit in i16
    /// and a full row of `tiles` adder-tree tiles cannot overflow a 32-bit
    /// accumulator: `tiles · 256 · 128 · Σ|values_i| < 2³¹`.
    pub fn for_layer(omega: &[f64; NUM_BASES], tiles: usize) -> Self {
        let tiles = tiles.max(1) as i64;
        for shift in (i8::MIN..=i8::MAX).rev() {
            let scale = 2f64.powi(shift as i32);
            if omega.iter().any(|w| (w * scale).round().abs() > i16::MAX as f64) {
                continue;
            }
            let b = Self::quantize(omega, shift);
            let total: i64 = b.values.iter().map(|&v| (v as i64).abs()).sum();
            if tiles * MAX_TILE_SUM * total < 1 << 31 {
                return b;
            }
        }
        Self::quantize(&[0.0; NUM_BASES], 0)
    }

    pub fn scale(&self) -> f64 {
        2f64.powi(-(self.shift as i32))
    }

    pub fn dequantized(&self) -> [f64; NUM_BASES] {
        std::array::from_fn(|i| self.values[i] as f64 * self.scale())
    }
}
