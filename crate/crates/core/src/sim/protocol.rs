//! Message construction and opening shared by honest nodes and the
//! adversary.

use crate::crypto::{aead_decrypt, aead_encrypt, Ciphertext, KeyPair, PublicKey, Signature};
use crate::error::SmpcError;
use crate::field::{Fe, FieldParams};
use crate::oracle::Submission;
use crate::rng::SimRng;
use crate::smpc::{make_envelopes, ShareEnvelope};
use crate::types::{NodeId, Nonce, RoundId, Timestamp};
use crate::wire::{Canonical, Decode};

pub struct SubmissionInput<'a> {
    pub round: RoundId,
    /// Identity written into the submission.
    pub sender: &'a NodeId,
    /// Key that encrypts and signs. Differs from the sender's registered key
    /// only when an adversary forges.
    pub signer: &'a KeyPair,
    pub weights: &'a [f64],
    pub n_samples: u64,
    pub oracles: &'a [(NodeId, PublicKey)],
    pub clock: Timestamp,
    pub secure: bool,
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Secret-shares the sample-weighted weights over `oracles`, seals one
/// envelope per oracle, and signs the result.
pub fn build_submission(
    input: &SubmissionInput<'_>,
    params: &FieldParams,
    rng: &mut SimRng,
) -> Result<Submission, SmpcError> {
    let ids: Vec<NodeId> = input.oracles.iter().map(|(id, _)| id.clone()).collect();
    let sharing = make_envelopes(
        input.round,
        input.sender,
        &ids,
        input.weights,
        input.n_samples,
        params,
        rng,
    )?;
    let nonce = Nonce(rng.next_u128());
    let ciphertexts = sharing
        .envelopes
        .iter()
        .zip(input.oracles)
        .map(|(env, (oid, opk))| {
            let plain = env.to_canonical();
            if input.secure {
                aead_encrypt(input.signer, oid, opk, &plain, nonce, params)
            } else {
                Ciphertext {
                    payload: plain,
                    sender_pk: input.signer.pk.clone(),
                    recipient: oid.clone(),
                    nonce,
                    tag: [0; 32],
                }
            }
        })
        .collect();
    let mut sub = Submission {
        round: input.round,
        sender: input.sender.clone(),
        nonce,
        timestamp: input.clock,
        n_samples: input.n_samples,
        declared_norm: l2_norm(input.weights),
        ciphertexts,
        share_commitments: sharing.commitments,
        sig: Signature { e: Fe(0), s: Fe(0) },
    };
    sub.sign_with(input.signer, params);
    Ok(sub)
}

/// Why an oracle could not use the envelope addressed to it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpenFailure {
    /// AEAD tag or sender key mismatch.
    Auth,
    /// Decrypted bytes are not a well-formed envelope for this slot.
    Format,
}

/// A computation oracle together with its position in the sharing order.
#[derive(Clone, Copy)]
pub struct OracleSeat<'a> {
    pub id: &'a NodeId,
    pub keypair: &'a KeyPair,
    pub index: usize,
}

/// The oracle in `seat` opens its envelope from `sub`. `sender_pk` is the
/// key the registry holds for the claimed sender.
pub fn open_envelope(
    seat: OracleSeat<'_>,
    sender_pk: &PublicKey,
    sub: &Submission,
    dim: usize,
    secure: bool,
    params: &FieldParams,
) -> Result<ShareEnvelope, OpenFailure> {
    let OracleSeat {
        id: oracle,
        keypair,
        index,
    } = seat;
    let ct = sub.ciphertexts.get(index).ok_or(OpenFailure::Format)?;
    let plain = if secure {
        aead_decrypt(keypair, oracle, sender_pk, ct, params).map_err(|_| OpenFailure::Auth)?
    } else {
        if &ct.recipient != oracle {
            return Err(OpenFailure::Format);
        }
        ct.payload.clone()
    };
    let env = ShareEnvelope::from_canonical(&plain).map_err(|_| OpenFailure::Format)?;
    let well_formed = env.round == sub.round
        && env.from == sub.sender
        && &env.to_oracle == oracle
        && env.coords.len() == dim
        && env.blindings.len() == dim
        && env.coords.iter().chain(&env.blindings).all(|e| e.0 < params.q);
    if well_formed {
        Ok(env)
    } else {
        Err(OpenFailure::Format)
    }
}
