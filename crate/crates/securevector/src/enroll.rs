//! The enrollment pipeline: segment, permute, normalize, quantize, pack,
//! encrypt.
//!
//! A raw feature is split into `K` equal segments; each segment is scaled by
//! `e^((u−L)/M)` for a uniformly random scale index `u` and flipped by a
//! random sign. The permuted vector is renormalized and stored in the clear
//! as the sanitized vector, while the permutation secrets — together with
//! the quantized log of the discarded norm — travel only inside a single
//! Paillier ciphertext. Re-enrolling the same feature draws a fresh
//! permutation and fresh encryption randomness, so records are renewable
//! and unlinkable.

use std::collections::HashMap;

use num_bigint::BigUint;
use rand::{Rng, RngCore};
use sha2::{Digest, Sha256};

use crate::codec::{encode_signs, pack, quantize_norm, PermutationSecret};
use crate::error::{Error, Result};
use crate::paillier::{encrypt, Ciphertext, PublicKey};
use crate::params::{MetricMode, ParamSet};

/// Tolerance for the unit-norm requirement on inputs in normalized modes.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// A d-dimensional real feature awaiting protection.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    /// Wraps raw values, rejecting NaN/infinite components and the zero
    /// vector.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidFeature("empty feature vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidFeature(
                "feature contains NaN or infinite components".into(),
            ));
        }
        let feature = FeatureVector { values };
        if feature.norm() == 0.0 {
            return Err(Error::InvalidFeature("zero feature vector".into()));
        }
        Ok(feature)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Rescales to unit norm. Callers opt in explicitly; enrollment never
    /// normalizes silently.
    pub fn normalized(mut self) -> Self {
        let norm = self.norm();
        for v in &mut self.values {
            *v /= norm;
        }
        self
    }

    fn check_mode(&self, metric: MetricMode) -> Result<()> {
        if metric.is_normalized() && (self.norm() - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::InvalidFeature(format!(
                "norm {} is not within {UNIT_NORM_TOLERANCE} of 1 (required by {metric}); \
                 normalize the feature or use an unnormalized mode",
                self.norm()
            )));
        }
        Ok(())
    }
}

/// The protected form of one feature: the sanitized vector in the clear,
/// every permutation secret sealed inside one ciphertext, and a fingerprint
/// binding the record to its parameter set and public key.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrolledRecord {
    pub sanitized: Vec<f64>,
    pub token: Ciphertext,
    pub fingerprint: String,
    pub label: Option<String>,
}

/// Digest binding a parameter set and a public modulus. Records carrying
/// different fingerprints refuse to match.
pub fn params_fingerprint(params: &ParamSet, modulus: &BigUint) -> String {
    let mut hasher = Sha256::new();
    hasher.update(
        format!(
            "securevector.v1|{}|{}|{}|{}|{}|{}|{}",
            params.key_bits,
            params.segments,
            params.scale_bound,
            params.lm_ratio,
            params.dim,
            params.metric,
            modulus
        )
        .as_bytes(),
    );
    let digest = hasher.finalize();
    let mut out = String::with_capacity(digest.len() * 2);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Draws a fresh permutation: i.i.d. uniform scale indices over
/// `{0, …, 2L−1}` and i.i.d. uniform signs.
pub fn sample_permutation<R: RngCore + ?Sized>(
    segments: u32,
    scale_bound: u64,
    rng: &mut R,
) -> (Vec<u64>, Vec<i8>) {
    let scale_indices = (0..segments)
        .map(|_| rng.gen_range(0..2 * scale_bound))
        .collect();
    let signs = (0..segments)
        .map(|_| if rng.gen_bool(0.5) { 1 } else { -1 })
        .collect();
    (scale_indices, signs)
}

/// Applies a permutation to a feature: segment `i` becomes
/// `s_i · e^((u_i−L)/M) · x̄_i`. Returns the permuted vector together with
/// the normalizer `W` (`‖b‖` in normalized modes, `‖b‖/‖x‖` otherwise).
pub fn permute(
    feature: &FeatureVector,
    scale_indices: &[u64],
    signs: &[i8],
    params: &ParamSet,
) -> Result<(Vec<f64>, f64)> {
    if feature.dim() != params.dim {
        return Err(Error::DimensionMismatch {
            expected: params.dim,
            got: feature.dim(),
        });
    }
    if scale_indices.len() != params.segments as usize || signs.len() != scale_indices.len() {
        return Err(Error::DimensionMismatch {
            expected: params.segments as usize,
            got: scale_indices.len().min(signs.len()),
        });
    }
    let inv_m = params.inv_m();
    let bound = params.scale_bound as f64;
    // at most 2L distinct indices appear; compute each exponential once so
    // repeated segments scale bit-identically
    let mut factors: HashMap<u64, f64> = HashMap::new();
    let seg_len = params.segment_len();
    let mut permuted = Vec::with_capacity(feature.dim());
    for (i, (&idx, &sign)) in scale_indices.iter().zip(signs.iter()).enumerate() {
        let factor = *factors
            .entry(idx)
            .or_insert_with(|| ((idx as f64 - bound) * inv_m).exp());
        let signed = factor * sign as f64;
        let segment = &feature.values()[i * seg_len..(i + 1) * seg_len];
        permuted.extend(segment.iter().map(|v| signed * v));
    }
    let permuted_norm = permuted.iter().map(|v| v * v).sum::<f64>().sqrt();
    let normalizer = if params.metric.is_normalized() {
        permuted_norm
    } else {
        permuted_norm / feature.norm()
    };
    Ok((permuted, normalizer))
}

/// Runs the full enrollment pipeline and seals the permutation secrets
/// under `public`.
pub fn enroll<R: RngCore + ?Sized>(
    feature: &FeatureVector,
    params: &ParamSet,
    public: &PublicKey,
    rng: &mut R,
) -> Result<EnrolledRecord> {
    params.validate()?;
    if public.bits() != params.key_bits {
        return Err(Error::InvalidParams(format!(
            "public key has {} bits but the parameter set requires {}",
            public.bits(),
            params.key_bits
        )));
    }
    feature.check_mode(params.metric)?;

    let (scale_indices, signs) = sample_permutation(params.segments, params.scale_bound, rng);
    let (permuted, normalizer) = permute(feature, &scale_indices, &signs, params)?;
    let sanitized: Vec<f64> = permuted.iter().map(|v| v / normalizer).collect();

    let sign_codes = encode_signs(&signs, params.scale_bound, rng)?;
    let norm_code = quantize_norm(normalizer, params.scale_bound, params.lm_ratio)?;
    let secret = PermutationSecret {
        scale_indices,
        signs,
        sign_codes,
        norm_code,
    };
    debug_assert!(secret.validate(params.scale_bound).is_ok());
    let token = pack(
        &secret.scale_indices,
        &secret.sign_codes,
        &secret.norm_code,
        params.scale_bound,
    )?;
    let sealed = encrypt(public, token.value(), rng)?;
    Ok(EnrolledRecord {
        sanitized,
        token: sealed,
        fingerprint: params_fingerprint(params, public.modulus()),
        label: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paillier::keygen;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn random_unit(dim: usize, r: &mut ChaCha12Rng) -> FeatureVector {
        let values: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        FeatureVector::new(values).unwrap().normalized()
    }

    fn test_params(metric: MetricMode) -> ParamSet {
        ParamSet::new(128, 16, 2, 128.0, 32, metric).unwrap()
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn feature_validation() {
        assert!(FeatureVector::new(vec![]).is_err());
        assert!(FeatureVector::new(vec![0.0, 0.0]).is_err());
        assert!(FeatureVector::new(vec![f64::NAN, 1.0]).is_err());
        assert!(FeatureVector::new(vec![1.0, f64::INFINITY]).is_err());
        let f = FeatureVector::new(vec![3.0, 4.0]).unwrap();
        assert_eq!(f.norm(), 5.0);
        let unit = f.normalized();
        assert!((unit.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampled_permutations_stay_in_range() {
        let mut r = rng(1);
        for _ in 0..100 {
            let (indices, signs) = sample_permutation(64, 3, &mut r);
            assert_eq!(indices.len(), 64);
            assert!(indices.iter().all(|&u| u < 6));
            assert!(signs.iter().all(|&s| s == 1 || s == -1));
        }
    }

    #[test]
    fn scale_index_frequencies_are_uniform() {
        // 10⁵ draws; each of the 2L=6 values should land within 3σ of n/6
        let mut r = rng(2);
        let draws = 100_000usize;
        let mut counts = [0usize; 6];
        let (indices, _) = sample_permutation(draws as u32, 3, &mut r);
        for idx in indices {
            counts[idx as usize] += 1;
        }
        let p = 1.0 / 6.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (value, &count) in counts.iter().enumerate() {
            let deviation = (count as f64 - draws as f64 * p).abs();
            assert!(
                deviation <= 3.0 * sigma,
                "value {value}: count {count} deviates {deviation:.1} (3σ = {:.1})",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn independent_samples_differ() {
        let mut r = rng(3);
        let a = sample_permutation(64, 3, &mut r);
        let b = sample_permutation(64, 3, &mut r);
        assert_ne!(a, b);
    }

    #[test]
    fn identity_permutation_preserves_the_feature() {
        let mut r = rng(4);
        let params = test_params(MetricMode::CosineNormalized);
        let x = random_unit(32, &mut r);
        let indices = vec![params.scale_bound; 16]; // u = L ⇒ factor e⁰ = 1
        let plus = vec![1i8; 16];
        let (b, w) = permute(&x, &indices, &plus, &params).unwrap();
        assert_eq!(b, x.values());
        assert!((w - x.norm()).abs() < 1e-12);

        let minus = vec![-1i8; 16];
        let (b_neg, _) = permute(&x, &indices, &minus, &params).unwrap();
        let negated: Vec<f64> = x.values().iter().map(|v| -v).collect();
        assert_eq!(b_neg, negated);
    }

    #[test]
    fn permute_rejects_mismatched_shapes() {
        let mut r = rng(5);
        let params = test_params(MetricMode::CosineNormalized);
        let x = random_unit(32, &mut r);
        let (indices, signs) = sample_permutation(16, 2, &mut r);
        let short = &indices[..8];
        assert!(permute(&x, short, &signs, &params).is_err());
        let y = random_unit(16, &mut r);
        assert!(permute(&y, &indices, &signs, &params).is_err());
    }

    #[test]
    fn permuted_norms_respect_the_bound() {
        // W ∈ [e^(−L/M), e^((L−1)/M)] for unit features
        let mut r = rng(6);
        let params = test_params(MetricMode::CosineNormalized);
        let lo = (-params.lm_ratio).exp();
        let hi = (params.lm_ratio * (params.scale_bound - 1) as f64 / params.scale_bound as f64)
            .exp();
        for _ in 0..10_000 {
            let x = random_unit(32, &mut r);
            let (indices, signs) = sample_permutation(16, 2, &mut r);
            let (_, w) = permute(&x, &indices, &signs, &params).unwrap();
            assert!(w >= lo * (1.0 - 1e-12) && w <= hi * (1.0 + 1e-12), "W = {w}");
        }
    }

    #[test]
    fn sign_flips_decorrelate_on_average() {
        // full permutation: cos(x, c) is symmetric around zero
        let mut r = rng(7);
        let params = test_params(MetricMode::CosineNormalized);
        let x = random_unit(32, &mut r);
        let mut total = 0.0;
        let trials = 1000;
        for _ in 0..trials {
            let (indices, signs) = sample_permutation(16, 2, &mut r);
            let (b, _) = permute(&x, &indices, &signs, &params).unwrap();
            total += cosine(x.values(), &b);
        }
        let mean = total / trials as f64;
        assert!(mean.abs() < 0.1, "mean cosine {mean}");
    }

    #[test]
    fn enrollment_normalizes_and_fingerprints() {
        let mut r = rng(8);
        let params = test_params(MetricMode::CosineNormalized);
        let keys = keygen(params.key_bits, &mut r).unwrap();
        for _ in 0..200 {
            let x = random_unit(32, &mut r);
            let record = enroll(&x, &params, &keys.public, &mut r).unwrap();
            let norm: f64 = record.sanitized.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-9);
            assert_eq!(
                record.fingerprint,
                params_fingerprint(&params, keys.public.modulus())
            );
        }
    }

    #[test]
    fn unnormalized_modes_preserve_the_input_norm() {
        let mut r = rng(9);
        let params = test_params(MetricMode::DotUnnormalized);
        let keys = keygen(params.key_bits, &mut r).unwrap();
        for _ in 0..200 {
            let scale = r.gen_range(0.1..10.0);
            let values: Vec<f64> = (0..32).map(|_| r.gen_range(-1.0..1.0) * scale).collect();
            let x = FeatureVector::new(values).unwrap();
            let record = enroll(&x, &params, &keys.public, &mut r).unwrap();
            let norm: f64 = record.sanitized.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(
                (norm - x.norm()).abs() <= 1e-9 * x.norm(),
                "‖c‖ = {norm}, ‖x‖ = {}",
                x.norm()
            );
        }
    }

    #[test]
    fn re_enrollment_renews_both_outputs() {
        let mut r = rng(10);
        let params = test_params(MetricMode::CosineNormalized);
        let keys = keygen(params.key_bits, &mut r).unwrap();
        let x = random_unit(32, &mut r);
        let a = enroll(&x, &params, &keys.public, &mut r).unwrap();
        let b = enroll(&x, &params, &keys.public, &mut r).unwrap();
        assert_ne!(a.sanitized, b.sanitized);
        assert_ne!(a.token, b.token);
    }

    #[test]
    fn seeded_enrollment_is_deterministic() {
        let params = test_params(MetricMode::CosineNormalized);
        let mut key_rng = rng(11);
        let keys = keygen(params.key_bits, &mut key_rng).unwrap();
        let x = random_unit(32, &mut rng(12));
        let a = enroll(&x, &params, &keys.public, &mut rng(77)).unwrap();
        let b = enroll(&x, &params, &keys.public, &mut rng(77)).unwrap();
        // bit-identical sanitized vector and identical sealed token
        assert_eq!(a.sanitized, b.sanitized);
        assert_eq!(a.token, b.token);
    }

    #[test]
    fn enrollment_rejects_bad_inputs() {
        let mut r = rng(13);
        let params = test_params(MetricMode::CosineNormalized);
        let keys = keygen(params.key_bits, &mut r).unwrap();

        // non-unit feature in a normalized mode
        let skewed = FeatureVector::new(vec![1.0; 32]).unwrap();
        assert!(matches!(
            enroll(&skewed, &params, &keys.public, &mut r),
            Err(Error::InvalidFeature(_))
        ));

        // dimension mismatch
        let short = random_unit(16, &mut r);
        assert!(matches!(
            enroll(&short, &params, &keys.public, &mut r),
            Err(Error::DimensionMismatch { .. })
        ));

        // key size disagrees with the parameter set
        let small_keys = keygen(64, &mut r).unwrap();
        let x = random_unit(32, &mut r);
        assert!(enroll(&x, &params, &small_keys.public, &mut r).is_err());
    }

    #[test]
    fn fingerprints_separate_configurations() {
        let mut r = rng(14);
        let keys = keygen(128, &mut r).unwrap();
        let a = test_params(MetricMode::CosineNormalized);
        let b = test_params(MetricMode::EuclideanNormalized);
        assert_ne!(
            params_fingerprint(&a, keys.public.modulus()),
            params_fingerprint(&b, keys.public.modulus())
        );
        let other_keys = keygen(128, &mut r).unwrap();
        assert_ne!(
            params_fingerprint(&a, keys.public.modulus()),
            params_fingerprint(&a, other_keys.public.modulus())
        );
    }
}
