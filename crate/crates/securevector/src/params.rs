//! Hyper-parameter selection and security accounting.
//!
//! A protected deployment is governed by five numbers: the Paillier key size
//! in bits, the segment count `K`, the scale bound `L` (per-segment scale
//! indices are drawn from `{0, …, 2L−1}`), the ratio `L/M` steering how
//! aggressively scaling perturbs the feature, and the feature dimension.
//! The capacity rule `S ≥ (2K+9)·log2(4L)` keeps every packed token and every
//! pairwise token sum below the key modulus, so homomorphic addition never
//! wraps around.
//!
//! The brute-force search space over one record's permutation secrets has
//! `2^K·(2L)^K` elements, i.e. `2K + K·log2(L)` bits. [`optimal_params`]
//! maximizes that count over the divisors of the feature dimension.
//!
//! Note on terminology: the key size is accounted here as "security bits" of
//! the cryptosystem in the sense of the keyspace exponent. A 512-bit Paillier
//! modulus offers far less cryptanalytic security than 512 bits; deployments
//! that need conservative guarantees should size the modulus per current
//! factoring estimates (2048 bits or more).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Scale bounds are kept below 2^32 so digit arithmetic and norm
/// quantization stay exact in 64-bit / double-precision intermediates.
pub const MAX_SCALE_BOUND: u64 = u32::MAX as u64;

/// Absolute slack for snapping floor/ceil arguments that land within
/// representation error of an integer.
const SNAP_EPS: f64 = 1e-9;

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= SNAP_EPS {
        r
    } else {
        x
    }
}

/// Which similarity the deployment reconstructs, and whether enrolled
/// features are unit-norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricMode {
    /// Unit-norm features, cosine similarity.
    CosineNormalized,
    /// Unit-norm features, squared Euclidean distance `2 − 2·x·y`.
    EuclideanNormalized,
    /// Arbitrary-norm features, dot product.
    DotUnnormalized,
    /// Arbitrary-norm features, squared Euclidean distance.
    EuclideanUnnormalized,
}

impl MetricMode {
    /// True when enrollment requires (and preserves) unit norm.
    pub fn is_normalized(self) -> bool {
        matches!(
            self,
            MetricMode::CosineNormalized | MetricMode::EuclideanNormalized
        )
    }

    pub const ALL: [MetricMode; 4] = [
        MetricMode::CosineNormalized,
        MetricMode::EuclideanNormalized,
        MetricMode::DotUnnormalized,
        MetricMode::EuclideanUnnormalized,
    ];
}

impl fmt::Display for MetricMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MetricMode::CosineNormalized => "cosine-normalized",
            MetricMode::EuclideanNormalized => "euclidean-normalized",
            MetricMode::DotUnnormalized => "dot-unnormalized",
            MetricMode::EuclideanUnnormalized => "euclidean-unnormalized",
        };
        f.write_str(s)
    }
}

impl FromStr for MetricMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine-normalized" => Ok(MetricMode::CosineNormalized),
            "euclidean-normalized" => Ok(MetricMode::EuclideanNormalized),
            "dot-unnormalized" => Ok(MetricMode::DotUnnormalized),
            "euclidean-unnormalized" => Ok(MetricMode::EuclideanUnnormalized),
            other => Err(Error::Parse(format!("unknown metric mode `{other}`"))),
        }
    }
}

/// The full hyper-parameter set governing enrollment and matching.
///
/// `M` is carried implicitly as `scale_bound / lm_ratio`: the recommended
/// ratio 128 makes `M` fractional for small scale bounds, so every formula
/// uses `1/M = lm_ratio / scale_bound` directly instead of materializing an
/// integer `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    /// Paillier key size in bits (`S`).
    pub key_bits: u32,
    /// Number of equal-length feature segments (`K`).
    pub segments: u32,
    /// Scale bound (`L`); scale indices range over `{0, …, 2L−1}`.
    pub scale_bound: u64,
    /// Ratio `L/M` controlling permutation strength. Default 128.
    pub lm_ratio: f64,
    /// Feature dimension; must be a multiple of `segments`.
    pub dim: usize,
    /// Similarity reconstructed at match time.
    pub metric: MetricMode,
}

impl ParamSet {
    pub const DEFAULT_LM_RATIO: f64 = 128.0;

    pub fn new(
        key_bits: u32,
        segments: u32,
        scale_bound: u64,
        lm_ratio: f64,
        dim: usize,
        metric: MetricMode,
    ) -> Result<Self> {
        let params = ParamSet {
            key_bits,
            segments,
            scale_bound,
            lm_ratio,
            dim,
            metric,
        };
        params.validate()?;
        Ok(params)
    }

    /// Checks every structural invariant, including the capacity rule.
    pub fn validate(&self) -> Result<()> {
        if self.segments < 1 {
            return Err(Error::InvalidParams("segment count must be at least 1".into()));
        }
        if self.scale_bound < 2 {
            return Err(Error::InvalidParams("scale bound must be at least 2".into()));
        }
        if self.scale_bound > MAX_SCALE_BOUND {
            return Err(Error::InvalidParams(format!(
                "scale bound {} exceeds the supported maximum {}",
                self.scale_bound, MAX_SCALE_BOUND
            )));
        }
        if !(self.lm_ratio > 0.0) || !self.lm_ratio.is_finite() {
            return Err(Error::InvalidParams("lm-ratio must be a positive finite number".into()));
        }
        if self.dim == 0 {
            return Err(Error::InvalidParams("dimension must be positive".into()));
        }
        if self.dim % self.segments as usize != 0 {
            return Err(Error::InvalidParams(format!(
                "segment count {} does not divide dimension {}",
                self.segments, self.dim
            )));
        }
        let needed = min_key_size(self.segments, self.scale_bound)?;
        if self.key_bits < needed {
            return Err(Error::InvalidParams(format!(
                "key size {} below the capacity requirement {} for K={}, L={}",
                self.key_bits, needed, self.segments, self.scale_bound
            )));
        }
        Ok(())
    }

    /// Length of each feature segment.
    pub fn segment_len(&self) -> usize {
        self.dim / self.segments as usize
    }

    /// `1/M = lm_ratio / L`, the factor by which scale-index offsets enter
    /// the exponent.
    pub fn inv_m(&self) -> f64 {
        self.lm_ratio / self.scale_bound as f64
    }

    /// Keyspace exponent of this parameter set.
    pub fn security_bits(&self) -> u64 {
        // validated params always satisfy the preconditions
        security_bits(self.segments, self.scale_bound).expect("validated params")
    }
}

impl fmt::Display for ParamSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "key-bits={} segments={} scale-bound={} lm-ratio={} dim={} metric={}",
            self.key_bits, self.segments, self.scale_bound, self.lm_ratio, self.dim, self.metric
        )
    }
}

/// Largest scale bound a key of `key_bits` bits can host with `segments`
/// segments: `floor(2^(S/(2K+9) − 2))`.
pub fn max_scale_bound(key_bits: u32, segments: u32) -> Result<u64> {
    if segments < 1 {
        return Err(Error::InvalidParams("segment count must be at least 1".into()));
    }
    let exponent = key_bits as f64 / (2 * segments + 9) as f64 - 2.0;
    let bound = snap(exponent.exp2()).floor();
    if bound < 2.0 {
        return Err(Error::Infeasible(format!(
            "key size {key_bits} with {segments} segments admits no scale bound >= 2"
        )));
    }
    if bound > MAX_SCALE_BOUND as f64 {
        return Err(Error::InvalidParams(format!(
            "scale bound for key size {key_bits} with {segments} segments exceeds the supported maximum {MAX_SCALE_BOUND}"
        )));
    }
    Ok(bound as u64)
}

/// Keyspace exponent `floor(2K + K·log2(L))` of a permutation with
/// `segments` segments and scale bound `scale_bound`.
pub fn security_bits(segments: u32, scale_bound: u64) -> Result<u64> {
    if segments < 1 {
        return Err(Error::InvalidParams("segment count must be at least 1".into()));
    }
    if scale_bound < 2 {
        return Err(Error::InvalidParams("scale bound must be at least 2".into()));
    }
    let bits = 2.0 * segments as f64 + segments as f64 * (scale_bound as f64).log2();
    Ok(snap(bits).floor() as u64)
}

/// Smallest key size avoiding token overflow: `ceil((2K+9)·log2(4L))`.
pub fn min_key_size(segments: u32, scale_bound: u64) -> Result<u32> {
    if segments < 1 {
        return Err(Error::InvalidParams("segment count must be at least 1".into()));
    }
    if scale_bound < 2 {
        return Err(Error::InvalidParams("scale bound must be at least 2".into()));
    }
    let bits = (2 * segments + 9) as f64 * (4.0 * scale_bound as f64).log2();
    Ok(snap(bits).ceil() as u32)
}

/// Selects the divisor of `dim` that maximizes the keyspace exponent under a
/// key of `key_bits`, pairing it with the largest admissible scale bound and
/// the default lm-ratio. Ties break toward fewer segments (cheaper matching).
pub fn optimal_params(key_bits: u32, dim: usize) -> Result<ParamSet> {
    if dim == 0 {
        return Err(Error::InvalidParams("dimension must be positive".into()));
    }
    let mut best: Option<(u32, u64, u64)> = None; // (segments, scale_bound, bits)
    for k in 1..=dim {
        if dim % k != 0 {
            continue;
        }
        let segments = u32::try_from(k)
            .map_err(|_| Error::InvalidParams("segment count exceeds u32 range".into()))?;
        let exponent = key_bits as f64 / (2 * segments + 9) as f64 - 2.0;
        let bound_f = snap(exponent.exp2()).floor();
        if bound_f < 2.0 {
            continue;
        }
        let (scale_bound, bits) = if bound_f <= MAX_SCALE_BOUND as f64 {
            let scale_bound = bound_f as u64;
            (scale_bound, security_bits(segments, scale_bound)?)
        } else {
            // The floor is invisible at this magnitude; score the candidate
            // by the closed form so the comparison stays faithful.
            let bits = snap(2.0 * segments as f64 + segments as f64 * exponent).floor() as u64;
            (u64::MAX, bits)
        };
        let better = match best {
            None => true,
            Some((_, _, best_bits)) => bits > best_bits,
        };
        if better {
            best = Some((segments, scale_bound, bits));
        }
    }
    let (segments, scale_bound, _) = best.ok_or_else(|| {
        Error::Infeasible(format!(
            "no divisor of dimension {dim} admits a scale bound >= 2 at key size {key_bits}"
        ))
    })?;
    if scale_bound > MAX_SCALE_BOUND {
        return Err(Error::InvalidParams(format!(
            "selected scale bound exceeds the supported maximum {MAX_SCALE_BOUND}; use a larger dimension or smaller key"
        )));
    }
    ParamSet::new(
        key_bits,
        segments,
        scale_bound,
        ParamSet::DEFAULT_LM_RATIO,
        dim,
        MetricMode::CosineNormalized,
    )
}
