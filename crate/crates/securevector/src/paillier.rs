//! Additive homomorphic cryptosystem over arbitrary-precision integers.
//!
//! This is the simplified variant with generator fixed to `n + 1`:
//! encryption reduces to `(1 + m·n) · r^n mod n²`, decryption to
//! `L(c^λ mod n²) · μ mod n` with `L(x) = (x − 1)/n`, `λ = lcm(p−1, q−1)`
//! and `μ = λ⁻¹ mod n`. Multiplying two ciphertexts modulo `n²` adds their
//! plaintexts modulo `n`; callers must keep sums below `n` (the parameter
//! module's capacity rule discharges that obligation for packed tokens).
//!
//! All operations are pure given their inputs plus an explicit random
//! source, so keys and ciphertexts can be shared freely across threads.
//! Nothing here is hardened against timing side channels.

use std::sync::OnceLock;

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::RngCore;

use crate::error::{Error, Result};

/// Rounds of Miller-Rabin witness testing. Each round passes a composite
/// with probability at most 1/4, so 50 rounds keep the acceptance error
/// below 2⁻¹⁰⁰.
const MILLER_RABIN_ROUNDS: usize = 50;

/// Smallest supported key size; anything below cannot host a valid
/// parameter set.
pub const MIN_KEY_BITS: u32 = 64;

/// Public encryption material: the modulus `n` (product of two distinct
/// equal-size primes) with `n²` cached. The generator is fixed to `n + 1`
/// and never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    n_squared: BigUint,
}

impl PublicKey {
    pub fn from_modulus(n: BigUint) -> Self {
        let n_squared = &n * &n;
        PublicKey { n, n_squared }
    }

    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn modulus_squared(&self) -> &BigUint {
        &self.n_squared
    }

    /// Key size in bits.
    pub fn bits(&self) -> u32 {
        self.n.bits() as u32
    }
}

/// Private decryption material.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrivateKey {
    lambda: BigUint,
    mu: BigUint,
}

impl PrivateKey {
    pub fn lambda(&self) -> &BigUint {
        &self.lambda
    }

    pub fn mu(&self) -> &BigUint {
        &self.mu
    }
}

/// Public and private halves kept together for the matching role.
#[derive(Debug, Clone)]
pub struct KeyPair {
    pub public: PublicKey,
    pub private: PrivateKey,
}

/// An encrypted value in `[0, n²)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    value: BigUint,
}

impl Ciphertext {
    pub fn from_value(value: BigUint) -> Self {
        Ciphertext { value }
    }

    pub fn value(&self) -> &BigUint {
        &self.value
    }
}

/// Generates a fresh key pair with a modulus of exactly `bits` bits.
///
/// `bits` must be even and at least [`MIN_KEY_BITS`]. The two primes carry
/// `bits/2` bits each with their top two bits forced, which pins the
/// product's bit length; the pair is regenerated on the (vanishing) chance
/// of a collision.
pub fn keygen<R: RngCore + ?Sized>(bits: u32, rng: &mut R) -> Result<KeyPair> {
    if bits < MIN_KEY_BITS || bits % 2 != 0 {
        return Err(Error::InvalidKeySize { bits });
    }
    let half = bits / 2;
    let p = generate_prime(half, rng);
    let q = loop {
        let q = generate_prime(half, rng);
        if q != p {
            break q;
        }
    };
    let n = &p * &q;
    debug_assert_eq!(n.bits() as u32, bits);
    let lambda = (&p - 1u32).lcm(&(&q - 1u32));
    let mu = lambda
        .modinv(&n)
        .ok_or_else(|| Error::InvalidParams("carmichael value not invertible mod n".into()))?;
    Ok(KeyPair {
        public: PublicKey::from_modulus(n),
        private: PrivateKey { lambda, mu },
    })
}

/// Encrypts `0 ≤ m < n` under a fresh uniformly random blinding factor.
pub fn encrypt<R: RngCore + ?Sized>(
    public: &PublicKey,
    m: &BigUint,
    rng: &mut R,
) -> Result<Ciphertext> {
    if m >= &public.n {
        return Err(Error::PlaintextOutOfRange);
    }
    let one = BigUint::one();
    let r = loop {
        let r = rng.gen_biguint_range(&one, &public.n);
        if r.gcd(&public.n).is_one() {
            break r;
        }
    };
    // g = n + 1 makes g^m mod n² collapse to 1 + m·n
    let g_m = (BigUint::one() + m * &public.n) % &public.n_squared;
    let r_n = r.modpow(&public.n, &public.n_squared);
    Ok(Ciphertext {
        value: (g_m * r_n) % &public.n_squared,
    })
}

/// Recovers the plaintext of a ciphertext produced under `public`.
///
/// Ciphertexts from a different key decrypt to an undefined value; no
/// detection is attempted.
pub fn decrypt(private: &PrivateKey, public: &PublicKey, ct: &Ciphertext) -> Result<BigUint> {
    if ct.value >= public.n_squared {
        return Err(Error::CiphertextOutOfRange);
    }
    let x = ct.value.modpow(&private.lambda, &public.n_squared);
    let l = (x - BigUint::one()) / &public.n;
    Ok((l * &private.mu) % &public.n)
}

/// Adds two plaintexts in the encrypted domain. Wraps silently modulo `n`
/// if the plaintext sum reaches `n`; callers guarantee capacity.
pub fn homomorphic_add(public: &PublicKey, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
    if a.value >= public.n_squared || b.value >= public.n_squared {
        return Err(Error::CiphertextOutOfRange);
    }
    Ok(Ciphertext {
        value: (&a.value * &b.value) % &public.n_squared,
    })
}

fn small_primes() -> &'static [u64] {
    static PRIMES: OnceLock<Vec<u64>> = OnceLock::new();
    PRIMES.get_or_init(|| {
        let limit = 2048usize;
        let mut sieve = vec![true; limit];
        sieve[0] = false;
        sieve[1] = false;
        for i in 2..limit {
            if sieve[i] {
                for j in (i * i..limit).step_by(i) {
                    sieve[j] = false;
                }
            }
        }
        (2..limit).filter(|&i| sieve[i]).map(|i| i as u64).collect()
    })
}

/// Draws an odd candidate of exactly `bits` bits with the top two bits set
/// (so products of two such primes keep their full width) and repeats until
/// the primality test accepts.
fn generate_prime<R: RngCore + ?Sized>(bits: u32, rng: &mut R) -> BigUint {
    loop {
        let mut candidate = rng.gen_biguint(bits as u64);
        candidate.set_bit(bits as u64 - 1, true);
        candidate.set_bit(bits as u64 - 2, true);
        candidate.set_bit(0, true);
        if is_probable_prime(&candidate, rng) {
            return candidate;
        }
    }
}

/// Miller-Rabin with random witnesses.
fn is_probable_prime<R: RngCore + ?Sized>(candidate: &BigUint, rng: &mut R) -> bool {
    for &p in small_primes() {
        let p_big = BigUint::from(p);
        if candidate == &p_big {
            return true;
        }
        if (candidate % p_big).is_zero() {
            return false;
        }
    }
    let one = BigUint::one();
    let minus_one = candidate - &one;
    let s = minus_one.trailing_zeros().expect("candidate > 1");
    let d = &minus_one >> s;
    let two = BigUint::from(2u32);
    'witness: for _ in 0..MILLER_RABIN_ROUNDS {
        let a = rng.gen_biguint_range(&two, &minus_one);
        let mut x = a.modpow(&d, candidate);
        if x == one || x == minus_one {
            continue;
        }
        for _ in 1..s {
            x = (&x * &x) % candidate;
            if x == minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

const KEY_DOC_VERSION: &str = "1";
const KIND_PUBLIC: &str = "securevector-public-key";
const KIND_PRIVATE: &str = "securevector-private-key";

/// Renders the public half as a text document.
pub fn write_public_key_document(public: &PublicKey) -> String {
    format!(
        "version: {}\nkind: {}\nS: {}\nn: {}\n",
        KEY_DOC_VERSION,
        KIND_PUBLIC,
        public.bits(),
        public.n
    )
}

/// Renders the full key pair as a text document.
pub fn write_private_key_document(keys: &KeyPair) -> String {
    format!(
        "version: {}\nkind: {}\nS: {}\nn: {}\nlambda: {}\nmu: {}\n",
        KEY_DOC_VERSION,
        KIND_PRIVATE,
        keys.public.bits(),
        keys.public.n,
        keys.private.lambda,
        keys.private.mu
    )
}

/// Parses either key document kind, returning the private half when present.
pub fn parse_key_document(text: &str) -> Result<(PublicKey, Option<PrivateKey>)> {
    let mut fields = std::collections::HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("expected `key: value`, got `{line}`")))?;
        fields.insert(key.trim().to_string(), value.trim().to_string());
    }
    let version = fields
        .get("version")
        .ok_or_else(|| Error::Parse("missing version field".into()))?;
    if version != KEY_DOC_VERSION {
        return Err(Error::VersionMismatch {
            found: version.clone(),
        });
    }
    let kind = fields
        .get("kind")
        .ok_or_else(|| Error::Parse("missing kind field".into()))?
        .clone();
    let is_private = match kind.as_str() {
        KIND_PUBLIC => false,
        KIND_PRIVATE => true,
        other => return Err(Error::Parse(format!("unknown document kind `{other}`"))),
    };
    let get_int = |name: &str| -> Result<BigUint> {
        let raw = fields
            .get(name)
            .ok_or_else(|| Error::Parse(format!("missing {name} field")))?;
        raw.parse::<BigUint>()
            .map_err(|_| Error::Parse(format!("field {name} is not a decimal integer")))
    };
    let declared_bits: u32 = fields
        .get("S")
        .ok_or_else(|| Error::Parse("missing S field".into()))?
        .parse()
        .map_err(|_| Error::Parse("field S is not an integer".into()))?;
    let n = get_int("n")?;
    let public = PublicKey::from_modulus(n);
    if public.bits() != declared_bits {
        return Err(Error::Parse(format!(
            "declared key size {} does not match modulus width {}",
            declared_bits,
            public.bits()
        )));
    }
    if !is_private {
        return Ok((public, None));
    }
    let lambda = get_int("lambda")?;
    let mu = get_int("mu")?;
    if (&lambda * &mu) % public.modulus() != BigUint::one() {
        return Err(Error::Parse(
            "inconsistent private key: lambda·mu ≢ 1 (mod n)".into(),
        ));
    }
    Ok((public, Some(PrivateKey { lambda, mu })))
}
