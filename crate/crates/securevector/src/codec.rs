//! The carry-free token codec.
//!
//! A record's permutation secrets — `K` scale indices, `K` parity-encoded
//! sign codes and one quantized log-norm — are concatenated as digits of a
//! single base-`4L` integer. Scale indices and sign codes live in
//! `{0, …, 2L−1}`, half the digit capacity, and the norm code occupies the
//! top digits with one spare, so adding two tokens never carries between
//! digit positions: the digits of a pairwise sum are exactly the
//! componentwise sums of the constituents. That is what lets a matcher
//! decrypt only the sum of two encrypted tokens and still recover the
//! combined permutation (scale-index sums, sign products, summed log-norm)
//! without ever seeing either record's own secret.
//!
//! Every packing step is exact integer arithmetic. The only lossy
//! operations in the whole pipeline are [`quantize_norm`] and its inverse
//! [`log_norm_sum`], which grid the admissible log-norm range into
//! `2¹⁵·L⁸` equal intervals.

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::{Rng, RngCore};

use crate::error::{Error, Result};

/// One record's sampled permutation secrets, ready for packing.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationSecret {
    /// Scale indices in `{0, …, 2L−1}`, one per segment.
    pub scale_indices: Vec<u64>,
    /// Sign flips, each `+1` or `−1`.
    pub signs: Vec<i8>,
    /// Parity encoding of the signs: even codes mean `+1`, odd mean `−1`,
    /// uniformly random within the parity class.
    pub sign_codes: Vec<u64>,
    /// Quantized log-norm in `{0, …, 2¹⁵·L⁸ − 1}`.
    pub norm_code: BigUint,
}

impl PermutationSecret {
    pub fn validate(&self, scale_bound: u64) -> Result<()> {
        let limit = 2 * scale_bound;
        if self.signs.len() != self.scale_indices.len()
            || self.sign_codes.len() != self.scale_indices.len()
        {
            return Err(Error::OutOfRange(
                "secret component arrays differ in length".into(),
            ));
        }
        for (&idx, (&sign, &code)) in self
            .scale_indices
            .iter()
            .zip(self.signs.iter().zip(self.sign_codes.iter()))
        {
            if idx >= limit || code >= limit {
                return Err(Error::OutOfRange(format!(
                    "secret component {idx}/{code} outside {{0, …, {}}}",
                    limit - 1
                )));
            }
            if sign != 1 && sign != -1 {
                return Err(Error::OutOfRange(format!("sign {sign} is not ±1")));
            }
            if (code % 2 == 0) != (sign == 1) {
                return Err(Error::OutOfRange(
                    "sign code parity does not encode the sign".into(),
                ));
            }
        }
        if self.norm_code >= quant_intervals(scale_bound) {
            return Err(Error::OutOfRange("norm code outside quantization range".into()));
        }
        Ok(())
    }
}

/// A packed token: all of one record's secrets as a single integer below
/// `(4L)^(2K+8)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedToken(BigUint);

impl PackedToken {
    pub fn value(&self) -> &BigUint {
        &self.0
    }

    pub fn into_value(self) -> BigUint {
        self.0
    }
}

/// The decrypted sum of two tokens — the only plaintext a matcher ever
/// produces. Componentwise: scale-index sums (each at most `4L−2`), sign
/// products, and the summed norm code.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedSecret {
    pub scale_sums: Vec<u64>,
    pub sign_products: Vec<i8>,
    pub norm_code_sum: BigUint,
}

impl CombinedSecret {
    pub fn validate(&self, scale_bound: u64) -> Result<()> {
        let limit = 4 * scale_bound - 1; // no-carry bound: sums stay ≤ 4L−2
        if self.scale_sums.iter().any(|&s| s >= limit) {
            return Err(Error::CorruptToken);
        }
        let max_norm_sum = (quant_intervals(scale_bound) << 1) - 2u32;
        if self.norm_code_sum > max_norm_sum {
            return Err(Error::CorruptToken);
        }
        Ok(())
    }
}

/// Number of quantization intervals for the log-norm: `2¹⁵·L⁸`.
pub fn quant_intervals(scale_bound: u64) -> BigUint {
    BigUint::from(scale_bound).pow(8) << 15
}

/// Draws a uniformly random parity encoding of each sign: an even code in
/// `{0, …, 2L−1}` for `+1`, an odd one for `−1`.
pub fn encode_signs<R: RngCore + ?Sized>(
    signs: &[i8],
    scale_bound: u64,
    rng: &mut R,
) -> Result<Vec<u64>> {
    if scale_bound < 2 {
        return Err(Error::InvalidParams(
            "scale bound must be at least 2 to offer both parities".into(),
        ));
    }
    signs
        .iter()
        .map(|&sign| {
            let offset = match sign {
                1 => 0,
                -1 => 1,
                other => return Err(Error::OutOfRange(format!("sign {other} is not ±1"))),
            };
            Ok(2 * rng.gen_range(0..scale_bound) + offset)
        })
        .collect()
}

/// Inverts the parity encoding on combined sign codes.
pub fn decode_signs(sign_codes: &[u64]) -> Vec<i8> {
    sign_codes
        .iter()
        .map(|code| if code % 2 == 0 { 1 } else { -1 })
        .collect()
}

/// Quantizes a permuted norm `W` onto the grid over
/// `log W ∈ [−L/M, L/M)` with `2¹⁵·L⁸` intervals, clamping the upper edge
/// down into range. `W` must lie within the admissible norm bounds
/// `[e^(−L/M), e^((L−1)/M)]`.
pub fn quantize_norm(norm: f64, scale_bound: u64, lm_ratio: f64) -> Result<BigUint> {
    if scale_bound < 2 {
        return Err(Error::InvalidParams("scale bound must be at least 2".into()));
    }
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::NormOutOfRange {
            value: norm,
            lo: (-lm_ratio).exp(),
            hi: (lm_ratio * (scale_bound - 1) as f64 / scale_bound as f64).exp(),
        });
    }
    let log_norm = norm.ln();
    let hi = lm_ratio * (scale_bound - 1) as f64 / scale_bound as f64;
    let slack = 1e-9 * (1.0 + lm_ratio);
    if log_norm < -lm_ratio - slack || log_norm > hi + slack {
        return Err(Error::NormOutOfRange {
            value: norm,
            lo: (-lm_ratio).exp(),
            hi: hi.exp(),
        });
    }
    // position in [0, 1): (log W + L/M) / (2L/M)
    let t = (log_norm / lm_ratio + 1.0) / 2.0;
    let intervals = quant_intervals(scale_bound);
    let code = floor_scaled(t, &intervals);
    Ok(if code >= intervals {
        intervals - 1u32
    } else {
        code
    })
}

/// Exact `floor(t · n)` for `t ≥ 0`, via the binary mantissa of `t`. Keeps
/// quantization exact even when the interval count exceeds 2⁵³.
fn floor_scaled(t: f64, n: &BigUint) -> BigUint {
    if t <= 0.0 {
        return BigUint::zero();
    }
    let bits = t.to_bits();
    let raw_exponent = ((bits >> 52) & 0x7ff) as i64;
    let fraction = bits & ((1u64 << 52) - 1);
    let (mantissa, exponent) = if raw_exponent == 0 {
        (fraction, -1074i64)
    } else {
        (fraction | (1u64 << 52), raw_exponent - 1075)
    };
    let scaled = n * mantissa;
    if exponent >= 0 {
        scaled << exponent as u64
    } else {
        scaled >> (-exponent) as u64
    }
}

/// Recovers `log W_x + log W_y` from a summed norm code:
/// `(w − 2¹⁵·L⁸) / (2¹⁴·L⁷·M)`.
pub fn log_norm_sum(norm_code_sum: &BigUint, scale_bound: u64, lm_ratio: f64) -> f64 {
    let midpoint = BigInt::from(quant_intervals(scale_bound));
    let diff = BigInt::from(norm_code_sum.clone()) - midpoint;
    let denom = (scale_bound as f64).powi(8) * (1u64 << 14) as f64;
    let magnitude = diff.abs().to_f64().unwrap_or(f64::MAX);
    let signed = if diff.is_negative() { -magnitude } else { magnitude };
    signed * lm_ratio / denom
}

/// Concatenates the secret components as base-`4L` digits:
/// scale indices in positions `0…K−1`, sign codes in `K…2K−1`, the norm
/// code from position `2K` up.
pub fn pack(
    scale_indices: &[u64],
    sign_codes: &[u64],
    norm_code: &BigUint,
    scale_bound: u64,
) -> Result<PackedToken> {
    if scale_bound < 2 {
        return Err(Error::InvalidParams("scale bound must be at least 2".into()));
    }
    if scale_indices.len() != sign_codes.len() {
        return Err(Error::OutOfRange(
            "scale index and sign code arrays differ in length".into(),
        ));
    }
    let limit = 2 * scale_bound;
    for &digit in scale_indices.iter().chain(sign_codes.iter()) {
        if digit >= limit {
            return Err(Error::OutOfRange(format!(
                "digit {digit} outside {{0, …, {}}}",
                limit - 1
            )));
        }
    }
    if norm_code >= &quant_intervals(scale_bound) {
        return Err(Error::OutOfRange("norm code outside quantization range".into()));
    }
    let base = 4 * scale_bound;
    let mut value = norm_code.clone();
    for &digit in sign_codes.iter().rev() {
        value = value * base + digit;
    }
    for &digit in scale_indices.iter().rev() {
        value = value * base + digit;
    }
    Ok(PackedToken(value))
}

/// Splits a token sum (or a lone token) back into base-`4L` digits.
/// Values at or beyond `(4L)^(2K+9)` are rejected as corrupt.
pub fn unpack(
    value: &BigUint,
    segments: usize,
    scale_bound: u64,
) -> Result<(Vec<u64>, Vec<u64>, BigUint)> {
    let base = 4 * scale_bound;
    let limit = BigUint::from(base).pow(2 * segments as u32 + 9);
    if value >= &limit {
        return Err(Error::CorruptToken);
    }
    let base_big = BigUint::from(base);
    let mut rest = value.clone();
    let mut digits = Vec::with_capacity(2 * segments);
    for _ in 0..2 * segments {
        let (quotient, remainder) = rest.div_rem(&base_big);
        digits.push(remainder.to_u64().expect("digit below base"));
        rest = quotient;
    }
    let sign_code_sums = digits.split_off(segments);
    Ok((digits, sign_code_sums, rest))
}
