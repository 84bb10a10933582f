//! Cryptographic building blocks over the commitment group in
//! [`FieldParams`](crate::field::FieldParams).
//!
//! Nothing here is hardened against side channels; the constructions are
//! sized for a simulator, not for deployment.

mod aead;
mod commitment;
mod keys;
mod sharing;

pub use aead::{aead_decrypt, aead_encrypt, Ciphertext};
pub use commitment::{commit, open_check, Commitment};
pub use keys::{keygen, sign, verify, KeyPair, PublicKey, Signature};
pub use sharing::{reconstruct, share_additive, ShareSet};

use num_bigint::BigUint;
use sha2::{Digest as _, Sha256};

use crate::field::{Fe, FieldParams};

/// Hashes domain-separated parts to a field element.
pub(crate) fn hash_to_field(params: &FieldParams, domain: &[u8], parts: &[&[u8]]) -> Fe {
    let mut hasher = Sha256::new();
    hasher.update((domain.len() as u32).to_be_bytes());
    hasher.update(domain);
    for part in parts {
        hasher.update((part.len() as u32).to_be_bytes());
        hasher.update(part);
    }
    let wide = BigUint::from_bytes_be(&hasher.finalize()) % BigUint::from(params.q);
    Fe(wide.to_u64_digits().first().copied().unwrap_or(0))
}

#[inline]
pub(crate) fn gexp(params: &FieldParams, base: &BigUint, e: Fe) -> BigUint {
    base.modpow(&BigUint::from(e.0), &params.group.p)
}
