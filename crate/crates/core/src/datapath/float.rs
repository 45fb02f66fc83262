//! Single-precision arithmetic of the post-accumulation stage, modelled on bit
//! patterns. Multiplication and addition truncate toward zero and flush
//! subnormal inputs and results to zero.

const SIGN: u32 = 0x8000_0000;
const FRAC: u32 = 0x007f_ffff;
const HIDDEN: u32 = 0x0080_0000;

/// Converts an accumulator word to single precision by leading-one detection.
///
/// The magnitude is normalised and its top 24 bits kept (truncation toward
/// zero above 2²⁴); the sign is re-applied afterwards. Zero maps to `+0.0`.
pub fn fixed_to_float(mac: i32) -> f32 {
    if mac == 0 {
        return 0.0;
    }
    let sign = if mac < 0 { SIGN } else { 0 };
    let m = mac.unsigned_abs();
    let lead = 31 - m.leading_zeros();
    let exponent = lead + 127;
    let mantissa = if lead <= 23 {
        (m << (23 - lead)) & FRAC
    } else {
        (m >> (lead - 23)) & FRAC
    };
    f32::from_bits(sign | exponent << 23 | mantissa)
}

/// Splits a finite float into (sign, biased exponent, significand with the
/// hidden bit). Subnormals and zeros come back with a zero significand.
fn unpack(x: f32) -> (u32, i32, u64) {
    let b = x.to_bits();
    let exp = ((b >> 23) & 0xff) as i32;
    if exp == 0 {
        (b & SIGN, 0, 0)
    } else {
        (b & SIGN, exp, (HIDDEN | (b & FRAC)) as u64)
    }
}

fn infinity(sign: u32) -> f32 {
    f32::from_bits(sign | 0x7f80_0000)
}

/// Packs a normalised significand (hidden bit at position 23) with overflow
/// to infinity and underflow flushed to signed zero.
fn pack(sign: u32, exp: i32, significand: u64) -> f32 {
    debug_assert!(significand >> 23 == 1);
    if exp >= 255 {
        infinity(sign)
    } else if exp <= 0 {
        f32::from_bits(sign)
    } else {
        f32::from_bits(sign | (exp as u32) << 23 | (significand as u32 & FRAC))
    }
}

/// Product with a 48-bit significand product, truncated to 24 bits.
pub fn float_multiply(a: f32, b: f32) -> f32 {
    if a.is_nan() || b.is_nan() {
        return f32::NAN;
    }
    let sign = (a.to_bits() ^ b.to_bits()) & SIGN;
    let (_, ea, ma) = unpack(a);
    let (_, eb, mb) = unpack(b);
    if a.is_infinite() || b.is_infinite() {
        return if ma == 0 || mb == 0 { f32::NAN } else { infinity(sign) };
    }
    if ma == 0 || mb == 0 {
        return f32::from_bits(sign);
    }
    let p = ma * mb;
    let (significand, exp) = if p >> 47 == 1 {
        (p >> 24, ea + eb - 127 + 1)
    } else {
        (p >> 23, ea + eb - 127)
    };
    pack(sign, exp, significand)
}

/// Sum truncated toward zero. The smaller operand is aligned with 32 guard
/// bits and a sticky bit, enough to make truncation of the exact sum exact.
pub fn float_add(a: f32, b: f32) -> f32 {
    if a.is_nan() || b.is_nan() {
        return f32::NAN;
    }
    match (a.is_infinite(), b.is_infinite()) {
        (true, true) => return if a == b { a } else { f32::NAN },
        (true, false) => return a,
        (false, true) => return b,
        _ => {}
    }
    let (sa, ea, ma) = unpack(a);
    let (sb, eb, mb) = unpack(b);
    if mb == 0 {
        return if ma == 0 { f32::from_bits(sa & sb) } else { f32::from_bits(a.to_bits()) };
    }
    if ma == 0 {
        return f32::from_bits(b.to_bits());
    }
    // Order by magnitude so the result takes the larger operand's sign.
    let ((s_big, e_big, m_big), (s_small, e_small, m_small)) = if (ea, ma) >= (eb, mb) {
        ((sa, ea, ma), (sb, eb, mb))
    } else {
        ((sb, eb, mb), (sa, ea, ma))
    };
    let big = m_big << 32;
    let shift = (e_big - e_small) as u32;
    let small = if shift >= 60 {
        1
    } else {
        let full = m_small << 32;
        let kept = full >> shift;
        kept | ((kept << shift != full) as u64)
    };
    let sum = if s_big == s_small { big + small } else { big - small };
    if sum == 0 {
        return 0.0;
    }
    // Hidden bit of `big` sits at position 55.
    let lead = 63 - sum.leading_zeros() as i32;
    let exp = e_big + lead - 55;
    let significand = sum >> (lead - 23);
    pack(s_big, exp, significand)
}

/// Rounding used for the float stage of the datapath.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FloatRounding {
    /// Truncating soft-float model of the hardware units.
    #[default]
    Truncate,
    /// Native IEEE round-to-nearest-even, for comparison.
    Nearest,
}

impl FloatRounding {
    pub fn mul(self, a: f32, b: f32) -> f32 {
        match self {
            FloatRounding::Truncate => float_multiply(a, b),
            FloatRounding::Nearest => a * b,
        }
    }

    pub fn add(self, a: f32, b: f32) -> f32 {
        match self {
            FloatRounding::Truncate => float_add(a, b),
            FloatRounding::Nearest => a + b,
        }
    }
}
