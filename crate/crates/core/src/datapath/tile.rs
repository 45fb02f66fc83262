use serde::{Deserialize, Serialize};

use super::basis::BasisWeights;
use crate::codec::TILE_WIDTH;
use crate::codes::NUM_BASES;

/// Which 8-bit half of each 16-bit activation register feeds the adders.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HalfSelect {
    #[default]
    Low,
    High,
}

/// Whether selected activations are added to or subtracted from the sums.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignMode {
    #[default]
    Add,
    Subtract,
}

/// 256 activation registers of 16 bits; the int8 values occupy the half named
/// by `half` and padding registers are zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationTile {
    regs: [u16; TILE_WIDTH],
    half: HalfSelect,
    width: usize,
}

impl ActivationTile {
    /// Loads up to 256 values; the rest of the tile is zero.
    pub fn load(values: &[i8], half: HalfSelect) -> Self {
        assert!(values.len() <= TILE_WIDTH, "tile holds at most 256 activations");
        let mut regs = [0u16; TILE_WIDTH];
        for (r, &v) in regs.iter_mut().zip(values) {
            let byte = v as u8 as u16;
            *r = match half {
                HalfSelect::Low => byte,
                HalfSelect::High => byte << 8,
            };
        }
        Self {
            regs,
            half,
            width: values.len(),
        }
    }

    /// Number of real (non-padding) positions.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn half(&self) -> HalfSelect {
        self.half
    }

    pub fn register(&self, j: usize) -> u16 {
        self.regs[j]
    }

    /// Signed value of position `j` read through the half select.
    #[inline]
    pub fn value(&self, j: usize) -> i8 {
        let r = self.regs[j];
        match self.half {
            HalfSelect::Low => r as u8 as i8,
            HalfSelect::High => (r >> 8) as u8 as i8,
        }
    }

    pub fn values(&self) -> [i8; TILE_WIDTH] {
        std::array::from_fn(|j| self.value(j))
    }
}

/// Four 16-bit basis sums and how many of them wrapped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdderSums {
    pub sums: [i16; NUM_BASES],
    pub overflows: u32,
}

/// Sums the tile's activations once per basis bit: `sums[i] = Σ_j a_j·bit_i(ids_j)`.
///
/// Sums are produced in 16-bit two's complement. The only reachable overflow
/// is subtracting 256 × −128; it wraps and is counted in `overflows`.
pub fn adder_tree(tile: &ActivationTile, ids: &[u8; TILE_WIDTH], sign_mode: SignMode) -> AdderSums {
    let values = tile.values();
    let mut wide = [0i32; NUM_BASES];
    for (&a, &id) in values.iter().zip(ids) {
        let a = a as i32;
        for (i, s) in wide.iter_mut().enumerate() {
            *s += a * ((id >> i) & 1) as i32;
        }
    }
    let mut overflows = 0;
    let sums = std::array::from_fn(|i| {
        let s = match sign_mode {
            SignMode::Add => wide[i],
            SignMode::Subtract => -wide[i],
        };
        if s < i16::MIN as i32 || s > i16::MAX as i32 {
            overflows += 1;
        }
        s as i16
    });
    AdderSums { sums, overflows }
}

/// `Σ_i sums_i · ω_i` with 16×16→32-bit products. `None` when the total
/// leaves the signed 32-bit range.
pub fn mac_array(sums: &[i16; NUM_BASES], omega: &BasisWeights) -> Option<i32> {
    let total: i64 = sums
        .iter()
        .zip(&omega.values)
        .map(|(&s, &w)| s as i32 as i64 * w as i32 as i64)
        .sum();
    i32::try_from(total).ok()
}
