//! Authenticated encryption between two registered key holders.
//!
//! Both sides derive a shared secret by exponentiation key agreement. The
//! payload is XORed with an HMAC-SHA256 keystream, and the tag is an
//! HMAC over nonce, recipient, sender key and ciphertext.

use hmac::{Hmac, Mac};
use sha2::{Digest as _, Sha256};

use super::keys::{KeyPair, PublicKey};
use crate::error::{CryptoError, WireError};
use crate::field::FieldParams;
use crate::types::{NodeId, Nonce};
use crate::wire::{Canonical, Decode, Reader, Writer};

type HmacSha256 = Hmac<Sha256>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    pub payload: Vec<u8>,
    pub sender_pk: PublicKey,
    pub recipient: NodeId,
    pub nonce: Nonce,
    pub tag: [u8; 32],
}

impl Ciphertext {
    /// Header fields without the payload. The tag already authenticates
    /// the payload, so signing the header binds both.
    pub fn write_header(&self, w: &mut Writer) {
        self.sender_pk.write_to(w);
        w.str(self.recipient.as_str()).u128(self.nonce.0).bytes(&self.tag);
    }
}

impl Canonical for Ciphertext {
    fn write_to(&self, w: &mut Writer) {
        w.bytes(&self.payload);
        self.write_header(w);
    }
}

impl Decode for Ciphertext {
    fn read_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let payload = r.bytes()?.to_vec();
        let sender_pk = PublicKey::read_from(r)?;
        let recipient = NodeId(r.str()?);
        let nonce = Nonce(r.u128()?);
        let tag_raw = r.bytes()?;
        let tag = tag_raw.try_into().map_err(|_| WireError::BadLength(tag_raw.len()))?;
        Ok(Ciphertext {
            payload,
            sender_pk,
            recipient,
            nonce,
            tag,
        })
    }
}

fn session_key(my_sk: &KeyPair, their_pk: &PublicKey, params: &FieldParams) -> [u8; 32] {
    let shared = their_pk
        .0
        .modpow(&num_bigint::BigUint::from(my_sk.sk.0), &params.group.p);
    let mut hasher = Sha256::new();
    hasher.update(b"fldeco/aead/key");
    hasher.update(shared.to_bytes_be());
    hasher.finalize().into()
}

fn keystream_xor(key: &[u8; 32], nonce: Nonce, data: &mut [u8]) {
    for (block, chunk) in data.chunks_mut(32).enumerate() {
        let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
        mac.update(b"stream");
        mac.update(&nonce.0.to_be_bytes());
        mac.update(&(block as u64).to_be_bytes());
        let pad = mac.finalize().into_bytes();
        for (b, k) in chunk.iter_mut().zip(pad.iter()) {
            *b ^= k;
        }
    }
}

fn tag(key: &[u8; 32], nonce: Nonce, recipient: &NodeId, sender_pk: &PublicKey, payload: &[u8]) -> HmacSha256 {
    let mut w = Writer::new();
    w.u128(nonce.0).str(recipient.as_str());
    sender_pk.write_to(&mut w);
    w.bytes(payload);
    let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(b"tag");
    mac.update(&w.into_bytes());
    mac
}

pub fn aead_encrypt(
    sender: &KeyPair,
    recipient: &NodeId,
    recipient_pk: &PublicKey,
    plaintext: &[u8],
    nonce: Nonce,
    params: &FieldParams,
) -> Ciphertext {
    let key = session_key(sender, recipient_pk, params);
    let mut payload = plaintext.to_vec();
    keystream_xor(&key, nonce, &mut payload);
    let tag = tag(&key, nonce, recipient, &sender.pk, &payload)
        .finalize()
        .into_bytes()
        .into();
    Ciphertext {
        payload,
        sender_pk: sender.pk.clone(),
        recipient: recipient.clone(),
        nonce,
        tag,
    }
}

/// Decrypts a ciphertext addressed to `me`. `expected_sender` is the key the
/// recipient has on record for the claimed sender; a ciphertext carrying
/// any other key is refused.
pub fn aead_decrypt(
    recipient: &KeyPair,
    me: &NodeId,
    expected_sender: &PublicKey,
    ct: &Ciphertext,
    params: &FieldParams,
) -> Result<Vec<u8>, CryptoError> {
    if &ct.recipient != me || &ct.sender_pk != expected_sender {
        return Err(CryptoError::AuthFailure);
    }
    let key = session_key(recipient, &ct.sender_pk, params);
    tag(&key, ct.nonce, &ct.recipient, &ct.sender_pk, &ct.payload)
        .verify_slice(&ct.tag)
        .map_err(|_| CryptoError::AuthFailure)?;
    let mut plain = ct.payload.clone();
    keystream_xor(&key, ct.nonce, &mut plain);
    Ok(plain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::keygen;
    use crate::rng::SimRng;

    struct Fixture {
        params: FieldParams,
        alice: KeyPair,
        bob: KeyPair,
        bob_id: NodeId,
    }

    fn fixture() -> Fixture {
        let params = FieldParams::test();
        let mut rng = SimRng::new(9);
        Fixture {
            alice: keygen(&mut rng, &params),
            bob: keygen(&mut rng, &params),
            bob_id: NodeId::new("orc-0"),
            params,
        }
    }

    #[test]
    fn round_trip() {
        let f = fixture();
        let msg = b"share vector for oracle 0, which is longer than one block of keystream".to_vec();
        let ct = aead_encrypt(&f.alice, &f.bob_id, &f.bob.pk, &msg, Nonce(77), &f.params);
        assert_ne!(ct.payload, msg);
        let back = aead_decrypt(&f.bob, &f.bob_id, &f.alice.pk, &ct, &f.params).unwrap();
        assert_eq!(back, msg);
    }

    #[test]
    fn every_single_byte_flip_is_rejected() {
        let f = fixture();
        let msg = b"w=[0.25,-1.5]".to_vec();
        let ct = aead_encrypt(&f.alice, &f.bob_id, &f.bob.pk, &msg, Nonce(1), &f.params);
        for i in 0..ct.payload.len() {
            for mask in [0x01u8, 0x80, 0xff] {
                let mut bad = ct.clone();
                bad.payload[i] ^= mask;
                assert_eq!(
                    aead_decrypt(&f.bob, &f.bob_id, &f.alice.pk, &bad, &f.params),
                    Err(CryptoError::AuthFailure)
                );
            }
        }
        for i in 0..32 {
            let mut bad = ct.clone();
            bad.tag[i] ^= 1;
            assert!(aead_decrypt(&f.bob, &f.bob_id, &f.alice.pk, &bad, &f.params).is_err());
        }
    }

    #[test]
    fn nonce_recipient_and_sender_are_bound() {
        let f = fixture();
        let ct = aead_encrypt(&f.alice, &f.bob_id, &f.bob.pk, b"x", Nonce(5), &f.params);

        let mut bad = ct.clone();
        bad.nonce = Nonce(6);
        assert!(aead_decrypt(&f.bob, &f.bob_id, &f.alice.pk, &bad, &f.params).is_err());

        let mut bad = ct.clone();
        bad.recipient = NodeId::new("orc-1");
        assert!(aead_decrypt(&f.bob, &NodeId::new("orc-1"), &f.alice.pk, &bad, &f.params).is_err());

        // A third party re-encrypting under its own key while claiming to
        // be alice is refused by the registry key check.
        let mallory = keygen(&mut SimRng::new(99), &f.params);
        let forged = aead_encrypt(&mallory, &f.bob_id, &f.bob.pk, b"x", Nonce(5), &f.params);
        assert!(aead_decrypt(&f.bob, &f.bob_id, &f.alice.pk, &forged, &f.params).is_err());

        // Swapping in alice's key on mallory's ciphertext breaks the tag.
        let mut swapped = forged.clone();
        swapped.sender_pk = f.alice.pk.clone();
        assert!(aead_decrypt(&f.bob, &f.bob_id, &f.alice.pk, &swapped, &f.params).is_err());
    }

    #[test]
    fn canonical_round_trip() {
        let f = fixture();
        let ct = aead_encrypt(&f.alice, &f.bob_id, &f.bob.pk, b"abc", Nonce(u128::MAX), &f.params);
        assert_eq!(Ciphertext::from_canonical(&ct.to_canonical()).unwrap(), ct);
    }
}
