//! Pairwise scoring over protected records.
//!
//! Matching never decrypts an individual record's token: the two sealed
//! tokens are first added homomorphically, and only their sum is decrypted.
//! The carry-free codec turns that sum into per-segment scale-index sums,
//! sign products and the summed log-norm, which — together with the two
//! sanitized vectors — reconstruct the original similarity exactly up to
//! norm quantization. Singleton decryption exists nowhere on this path;
//! [`combine_tokens`] is the only consumer of the private key.

use crate::codec::{decode_signs, log_norm_sum, unpack, CombinedSecret};
use crate::enroll::{params_fingerprint, EnrolledRecord};
use crate::error::{Error, Result};
use crate::paillier::{decrypt, homomorphic_add, Ciphertext, KeyPair};
use crate::params::{MetricMode, ParamSet};

/// A reconstructed similarity, tagged with the metric it was computed
/// under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub score: f64,
    pub mode: MetricMode,
}

/// Homomorphically adds two sealed tokens, decrypts the sum once, and
/// decodes the combined permutation secrets.
pub fn combine_tokens(
    token_x: &Ciphertext,
    token_y: &Ciphertext,
    keys: &KeyPair,
    params: &ParamSet,
) -> Result<CombinedSecret> {
    let sum = homomorphic_add(&keys.public, token_x, token_y)?;
    let combined_value = decrypt(&keys.private, &keys.public, &sum)?;
    let (scale_sums, sign_code_sums, norm_code_sum) = unpack(
        &combined_value,
        params.segments as usize,
        params.scale_bound,
    )?;
    // sums of honest digits never reach 4L−1
    if sign_code_sums.iter().any(|&v| v >= 4 * params.scale_bound - 1) {
        return Err(Error::CorruptToken);
    }
    let combined = CombinedSecret {
        sign_products: decode_signs(&sign_code_sums),
        scale_sums,
        norm_code_sum,
    };
    combined.validate(params.scale_bound)?;
    Ok(combined)
}

/// Evaluates the reconstruction sum
/// `Σ_i s_z^i · e^(log W_x + log W_y − (u_z^i − 2L)/M) · (c̄_x^i)ᵀ c̄_y^i`,
/// which equals `xᵀy` up to norm quantization. Each per-segment factor is
/// assembled in log space and exponentiated once.
pub fn score_cosine(
    sanitized_x: &[f64],
    sanitized_y: &[f64],
    combined: &CombinedSecret,
    params: &ParamSet,
) -> Result<f64> {
    if sanitized_x.len() != params.dim {
        return Err(Error::DimensionMismatch {
            expected: params.dim,
            got: sanitized_x.len(),
        });
    }
    if sanitized_y.len() != params.dim {
        return Err(Error::DimensionMismatch {
            expected: params.dim,
            got: sanitized_y.len(),
        });
    }
    if combined.scale_sums.len() != params.segments as usize {
        return Err(Error::DimensionMismatch {
            expected: params.segments as usize,
            got: combined.scale_sums.len(),
        });
    }
    let log_norms = log_norm_sum(&combined.norm_code_sum, params.scale_bound, params.lm_ratio);
    let inv_m = params.inv_m();
    let double_bound = 2.0 * params.scale_bound as f64;
    let seg_len = params.segment_len();
    let mut score = 0.0;
    for (i, (&scale_sum, &sign)) in combined
        .scale_sums
        .iter()
        .zip(combined.sign_products.iter())
        .enumerate()
    {
        let lo = i * seg_len;
        let hi = lo + seg_len;
        let dot: f64 = sanitized_x[lo..hi]
            .iter()
            .zip(&sanitized_y[lo..hi])
            .map(|(a, b)| a * b)
            .sum();
        let exponent = log_norms - (scale_sum as f64 - double_bound) * inv_m;
        score += sign as f64 * exponent.exp() * dot;
    }
    Ok(score)
}

/// Maps the reconstruction sum onto the deployment's metric.
pub fn score_metric(
    sanitized_x: &[f64],
    sanitized_y: &[f64],
    combined: &CombinedSecret,
    params: &ParamSet,
) -> Result<MatchResult> {
    let dot = score_cosine(sanitized_x, sanitized_y, combined, params)?;
    let score = match params.metric {
        MetricMode::CosineNormalized | MetricMode::DotUnnormalized => dot,
        MetricMode::EuclideanNormalized => 2.0 - 2.0 * dot,
        MetricMode::EuclideanUnnormalized => {
            // sanitized norms equal the original norms in unnormalized modes
            let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
            sq(sanitized_x) + sq(sanitized_y) - 2.0 * dot
        }
    };
    Ok(MatchResult {
        score,
        mode: params.metric,
    })
}

/// Scores a pair of enrolled records after checking that both carry the
/// fingerprint of the supplied parameter set and key.
pub fn match_pair(
    record_x: &EnrolledRecord,
    record_y: &EnrolledRecord,
    keys: &KeyPair,
    params: &ParamSet,
) -> Result<MatchResult> {
    let expected = params_fingerprint(params, keys.public.modulus());
    if record_x.fingerprint != expected || record_y.fingerprint != expected {
        return Err(Error::FingerprintMismatch);
    }
    let combined = combine_tokens(&record_x.token, &record_y.token, keys, params)?;
    score_metric(&record_x.sanitized, &record_y.sanitized, &combined, params)
}
