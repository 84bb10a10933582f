//! Prime-field arithmetic, fixed-point encoding of real-valued weights, and
//! the commitment group the field acts on as an exponent ring.

use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::FieldError;

/// Mersenne prime 2^61 - 1, the default field order.
pub const MERSENNE_61: u64 = (1u64 << 61) - 1;

/// Default fixed-point scale (2^16).
pub const DEFAULT_SCALE: u64 = 1 << 16;

/// Cofactor of the 67-bit test group: p = 52 * (2^61 - 1) + 1.
const TEST_COFACTOR: u64 = 52;

/// The 2048-bit group uses p = (2^1987 + SECURE_OFFSET) * (2^61 - 1) + 1.
const SECURE_COFACTOR_BITS: u64 = 1987;
const SECURE_OFFSET: u64 = 3352;

/// Named parameter profiles selectable from experiment configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 61-bit field with a 67-bit commitment modulus; fast enough for CI.
    Test,
    /// Same field, 2048-bit commitment modulus.
    Secure,
    /// Toy group (q = 1009, p = 10091) small enough to brute-force.
    Tiny,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Test => "test",
            Profile::Secure => "secure",
            Profile::Tiny => "tiny",
        })
    }
}

/// A field element in `[0, q)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Fe(pub u64);

impl fmt::Display for Fe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Schnorr subgroup of `Z_p^*` of prime order `q`, with two generators whose
/// relative discrete log nobody knows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupParams {
    pub p: BigUint,
    pub g: BigUint,
    pub h: BigUint,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldParams {
    pub profile: Profile,
    pub q: u64,
    pub scale: u64,
    pub group: GroupParams,
}

impl FieldParams {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Test => Self::test(),
            Profile::Secure => Self::secure(),
            Profile::Tiny => Self::tiny(),
        }
    }

    pub fn test() -> Self {
        let p = BigUint::from(TEST_COFACTOR) * BigUint::from(MERSENNE_61) + 1u32;
        Self::with_modulus(Profile::Test, MERSENNE_61, DEFAULT_SCALE, p)
    }

    pub fn secure() -> Self {
        let cofactor = (BigUint::one() << SECURE_COFACTOR_BITS) + SECURE_OFFSET;
        let p = cofactor * BigUint::from(MERSENNE_61) + 1u32;
        Self::with_modulus(Profile::Secure, MERSENNE_61, DEFAULT_SCALE, p)
    }

    pub fn tiny() -> Self {
        Self::with_modulus(Profile::Tiny, 1009, 2, BigUint::from(10_091u32))
    }

    /// Builds parameters for a caller-chosen `q | p - 1`. Generators are
    /// derived by hashing public labels into the order-`q` subgroup.
    pub fn with_modulus(profile: Profile, q: u64, scale: u64, p: BigUint) -> Self {
        let g = hash_to_subgroup(&p, q, b"fldeco/generator/g");
        let h = hash_to_subgroup(&p, q, b"fldeco/generator/h");
        FieldParams {
            profile,
            q,
            scale,
            group: GroupParams { p, g, h },
        }
    }

    /// Checks primality of `q` and `p`, subgroup membership of `g`/`h`, and
    /// the scale lower bound.
    pub fn validate(&self) -> Result<(), FieldError> {
        if self.scale < 2 {
            return Err(FieldError::InvalidParams("scale must be at least 2".into()));
        }
        if !is_probable_prime(&BigUint::from(self.q)) {
            return Err(FieldError::InvalidParams("q is not prime".into()));
        }
        let p = &self.group.p;
        if !is_probable_prime(p) {
            return Err(FieldError::InvalidParams("p is not prime".into()));
        }
        let q = BigUint::from(self.q);
        if !((p - 1u32) % &q).is_zero() {
            return Err(FieldError::InvalidParams("q does not divide p - 1".into()));
        }
        for (name, gen) in [("g", &self.group.g), ("h", &self.group.h)] {
            if gen.is_one() || !gen.modpow(&q, p).is_one() {
                return Err(FieldError::InvalidParams(format!("{name} is not of order q")));
            }
        }
        Ok(())
    }

    /// Overflow headroom: `q > 2 * scale^2 * max_abs_weight * max_total_samples`.
    pub fn check_capacity(&self, max_abs_weight: f64, max_total_samples: u64) -> Result<(), FieldError> {
        let need = 2.0 * (self.scale as f64).powi(2) * max_abs_weight * max_total_samples as f64;
        if (self.q as f64) > need {
            Ok(())
        } else {
            Err(FieldError::InvalidParams(format!(
                "field order {} too small for |w| <= {max_abs_weight} over {max_total_samples} samples",
                self.q
            )))
        }
    }

    #[inline]
    pub fn add(&self, a: Fe, b: Fe) -> Fe {
        Fe(((a.0 as u128 + b.0 as u128) % self.q as u128) as u64)
    }

    #[inline]
    pub fn sub(&self, a: Fe, b: Fe) -> Fe {
        Fe(((a.0 as u128 + self.q as u128 - b.0 as u128) % self.q as u128) as u64)
    }

    #[inline]
    pub fn mul(&self, a: Fe, b: Fe) -> Fe {
        Fe(((a.0 as u128 * b.0 as u128) % self.q as u128) as u64)
    }

    pub fn sum<I: IntoIterator<Item = Fe>>(&self, items: I) -> Fe {
        items.into_iter().fold(Fe(0), |acc, x| self.add(acc, x))
    }

    /// Reduces an arbitrary signed integer into the field.
    pub fn from_signed(&self, v: i128) -> Fe {
        Fe(v.rem_euclid(self.q as i128) as u64)
    }

    /// Centered lift: elements above `q/2` map to negatives.
    pub fn to_signed(&self, e: Fe) -> i128 {
        if e.0 > self.q / 2 {
            e.0 as i128 - self.q as i128
        } else {
            e.0 as i128
        }
    }

    /// Uniform element from 64 random bits (rejection sampling).
    pub fn random<R: rand::RngCore + ?Sized>(&self, rng: &mut R) -> Fe {
        let bits = 64 - self.q.leading_zeros();
        let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
        loop {
            let v = rng.next_u64() & mask;
            if v < self.q {
                return Fe(v);
            }
        }
    }

    /// Uniform nonzero element.
    pub fn random_nonzero<R: rand::RngCore + ?Sized>(&self, rng: &mut R) -> Fe {
        loop {
            let v = self.random(rng);
            if v.0 != 0 {
                return v;
            }
        }
    }
}

/// Fixed-point encoding: `round(x * scale) mod q`, negatives as `q - |.|`.
pub fn encode_fixed(x: f64, params: &FieldParams) -> Result<Fe, FieldError> {
    let scaled = x * params.scale as f64;
    if !scaled.is_finite() || scaled.abs() >= params.q as f64 / 2.0 {
        return Err(FieldError::Overflow { value: x });
    }
    let rounded = scaled.round() as i128;
    if rounded.unsigned_abs() >= (params.q / 2) as u128 {
        return Err(FieldError::Overflow { value: x });
    }
    Ok(params.from_signed(rounded))
}

pub fn decode_fixed(e: Fe, params: &FieldParams) -> f64 {
    params.to_signed(e) as f64 / params.scale as f64
}

/// Value `x` as it survives a round trip through the field.
pub fn quantize(x: f64, params: &FieldParams) -> Result<f64, FieldError> {
    encode_fixed(x, params).map(|e| decode_fixed(e, params))
}

fn hash_to_subgroup(p: &BigUint, q: u64, label: &[u8]) -> BigUint {
    let cofactor = (p - 1u32) / BigUint::from(q);
    let width = (p.bits() as usize).div_ceil(8) + 16;
    for ctr in 0u64.. {
        let mut bytes = Vec::with_capacity(width + 32);
        let mut block = 0u32;
        while bytes.len() < width {
            let mut hasher = Sha256::new();
            hasher.update(label);
            hasher.update(ctr.to_be_bytes());
            hasher.update(block.to_be_bytes());
            bytes.extend_from_slice(&hasher.finalize());
            block += 1;
        }
        let candidate = BigUint::from_bytes_be(&bytes[..width]) % p;
        let elem = candidate.modpow(&cofactor, p);
        if !elem.is_one() && !elem.is_zero() {
            return elem;
        }
    }
    unreachable!("subgroup of prime order has non-identity elements")
}

/// Miller-Rabin with the first twenty prime bases; deterministic for
/// 64-bit inputs and overwhelmingly reliable beyond.
pub fn is_probable_prime(n: &BigUint) -> bool {
    const BASES: [u32; 20] = [
        2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71,
    ];
    let two = BigUint::from(2u32);
    if *n < two {
        return false;
    }
    for b in BASES {
        let b = BigUint::from(b);
        if *n == b {
            return true;
        }
        if (n % &b).is_zero() {
            return false;
        }
    }
    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    'witness: for b in BASES {
        let mut x = BigUint::from(b).modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}
