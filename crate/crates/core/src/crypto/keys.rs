use num_bigint::BigUint;
use num_traits::One;
use serde::{Deserialize, Serialize};

use super::{gexp, hash_to_field};
use crate::error::WireError;
use crate::field::{Fe, FieldParams};
use crate::rng::SimRng;
use crate::wire::{Canonical, Decode, Reader, Writer};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PublicKey(pub BigUint);

impl Canonical for PublicKey {
    fn write_to(&self, w: &mut Writer) {
        w.big(&self.0);
    }
}

impl Decode for PublicKey {
    fn read_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        r.big().map(PublicKey)
    }
}

impl Serialize for PublicKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0.to_bytes_be()))
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(s).map_err(serde::de::Error::custom)?;
        Ok(PublicKey(BigUint::from_bytes_be(&bytes)))
    }
}

#[derive(Clone, Debug)]
pub struct KeyPair {
    pub sk: Fe,
    pub pk: PublicKey,
}

/// Schnorr signature `(e, s)` with `e = H(g^k, pk, m)` and `s = k + e*sk`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Signature {
    pub e: Fe,
    pub s: Fe,
}

impl Canonical for Signature {
    fn write_to(&self, w: &mut Writer) {
        w.fe(self.e).fe(self.s);
    }
}

impl Decode for Signature {
    fn read_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(Signature { e: r.fe()?, s: r.fe()? })
    }
}

pub fn keygen(rng: &mut SimRng, params: &FieldParams) -> KeyPair {
    let sk = params.random_nonzero(rng);
    let pk = PublicKey(gexp(params, &params.group.g, sk));
    KeyPair { sk, pk }
}

fn challenge(params: &FieldParams, commitment: &BigUint, pk: &PublicKey, message: &[u8]) -> Fe {
    hash_to_field(
        params,
        b"fldeco/schnorr/challenge",
        &[&commitment.to_bytes_be(), &pk.0.to_bytes_be(), message],
    )
}

/// Signs with a nonce derived from the secret key and message, so signing
/// needs no randomness and is reproducible.
pub fn sign(keypair: &KeyPair, message: &[u8], params: &FieldParams) -> Signature {
    let mut k = hash_to_field(params, b"fldeco/schnorr/nonce", &[&keypair.sk.0.to_be_bytes(), message]);
    if k.0 == 0 {
        k = Fe(1);
    }
    let r = gexp(params, &params.group.g, k);
    let e = challenge(params, &r, &keypair.pk, message);
    let s = params.add(k, params.mul(e, keypair.sk));
    Signature { e, s }
}

pub fn verify(pk: &PublicKey, message: &[u8], sig: &Signature, params: &FieldParams) -> bool {
    let p = &params.group.p;
    if pk.0 <= BigUint::one() || pk.0 >= *p || sig.e.0 >= params.q || sig.s.0 >= params.q {
        return false;
    }
    // g^s * pk^(-e) = g^k when the signature is honest.
    let neg_e = params.sub(Fe(0), sig.e);
    let r = (gexp(params, &params.group.g, sig.s) * gexp(params, &pk.0, neg_e)) % p;
    challenge(params, &r, pk, message) == sig.e
}
