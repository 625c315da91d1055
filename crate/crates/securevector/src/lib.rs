//! Privacy-preserving feature matching over sanitized vectors.
//!
//! Stored feature vectors leak: nearest-neighbor lookups, attribute
//! classifiers and inversion models all recover sensitive information from
//! raw embeddings. This crate protects a vector by permuting each of its
//! `K` segments with a random scale `e^((u−L)/M)` and sign flip, storing
//! only the renormalized result in the clear. The permutation secrets and
//! the quantized log of the discarded norm are packed into a single
//! base-`4L` integer and sealed under Paillier encryption.
//!
//! Because digit lanes in the packed token never carry into each other,
//! adding two sealed tokens homomorphically and decrypting *only the sum*
//! yields exactly the combined permutation — scale-index sums, sign
//! products, summed log-norm — from which the original cosine similarity,
//! dot product or Euclidean distance between the two features is
//! reconstructed losslessly up to norm quantization. No individual record
//! is ever decrypted, and one encryption per enrollment plus one addition
//! and one decryption per comparison keeps matching fast.
//!
//! # Pipeline
//!
//! ```text
//! feature ── permute (scale+sign per segment) ── normalize ──► sanitized vector
//!                   └─ secrets ── parity/quantize ── pack ── encrypt ──► sealed token
//!
//! match:  sealed_x * sealed_y ── decrypt sum ── unpack ── score(sanitized_x, sanitized_y)
//! ```
//!
//! # Example
//!
//! ```
//! use rand::SeedableRng;
//! use securevector::{enroll, keygen, match_pair, optimal_params, FeatureVector};
//!
//! let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
//! let params = optimal_params(128, 32)?;
//! let keys = keygen(params.key_bits, &mut rng)?;
//!
//! let x = FeatureVector::new(vec![0.5; 32])?.normalized();
//! let a = enroll(&x, &params, &keys.public, &mut rng)?;
//! let b = enroll(&x, &params, &keys.public, &mut rng)?;
//!
//! let result = match_pair(&a, &b, &keys, &params)?;
//! assert!((result.score - 1.0).abs() < 1e-4);
//! # Ok::<(), securevector::Error>(())
//! ```

pub mod codec;
pub mod enroll;
pub mod error;
pub mod matching;
pub mod paillier;
pub mod params;
pub mod store;

pub use codec::{CombinedSecret, PackedToken, PermutationSecret};
pub use enroll::{enroll, params_fingerprint, EnrolledRecord, FeatureVector};
pub use error::{Error, Result};
pub use matching::{combine_tokens, match_pair, score_metric, MatchResult};
pub use paillier::{keygen, Ciphertext, KeyPair, PrivateKey, PublicKey};
pub use params::{max_scale_bound, min_key_size, optimal_params, security_bits, MetricMode, ParamSet};
pub use store::{gallery_topk, GalleryFile};
