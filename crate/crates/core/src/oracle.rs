//! The decentralized oracle layer: staked registration, submission
//! validation, single-shot quorum voting, and slashing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::{sign, verify, Ciphertext, Commitment, KeyPair, PublicKey, Signature};
use crate::error::{OracleError, WireError};
use crate::field::FieldParams;
use crate::ledger::{Ledger, LedgerEvent, NonceRegistry, Role};
use crate::types::{NodeId, Nonce, RoundId, Timestamp};
use crate::wire::{Canonical, Decode, Digest, Reader, Writer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Active,
    Slashed,
}

/// Public registry entry for a staked vehicle or oracle.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Participant {
    pub id: NodeId,
    pub role: Role,
    #[serde(skip)]
    pub pk: PublicKey,
    pub stake: u64,
    pub reputation: f64,
    pub status: Status,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Refusal {
    InsufficientStake,
    DuplicateId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Admission {
    Admitted,
    Refused(Refusal),
}

/// Reputation lost per slash event.
pub const REPUTATION_PENALTY: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct Registry {
    min_stake: u64,
    vehicles_stake: bool,
    entries: BTreeMap<NodeId, Participant>,
}

impl Registry {
    /// `vehicles_stake = false` admits data contributors without collateral.
    pub fn new(min_stake: u64, vehicles_stake: bool) -> Self {
        Registry {
            min_stake,
            vehicles_stake,
            entries: BTreeMap::new(),
        }
    }

    pub fn min_stake(&self) -> u64 {
        self.min_stake
    }

    pub fn get(&self, id: &NodeId) -> Option<&Participant> {
        self.entries.get(id)
    }

    pub fn participants(&self) -> impl Iterator<Item = &Participant> {
        self.entries.values()
    }

    pub fn active_oracles(&self) -> Vec<&Participant> {
        self.entries
            .values()
            .filter(|p| p.role == Role::Oracle && p.status == Status::Active)
            .collect()
    }

    /// Admits `id` iff it is new and brings at least `min_stake`; admitted
    /// entries are recorded on the ledger.
    pub fn register_participant(
        &mut self,
        id: NodeId,
        role: Role,
        pk: PublicKey,
        stake: u64,
        ledger: &mut Ledger,
        clock: Timestamp,
    ) -> Admission {
        if self.entries.contains_key(&id) {
            return Admission::Refused(Refusal::DuplicateId);
        }
        let needs_stake = role == Role::Oracle || self.vehicles_stake;
        if needs_stake && stake < self.min_stake {
            return Admission::Refused(Refusal::InsufficientStake);
        }
        ledger
            .append(
                LedgerEvent::Registration {
                    id: id.clone(),
                    role,
                    pk: pk.clone(),
                    stake,
                },
                clock,
            )
            .expect("registrations are always appendable");
        self.entries.insert(
            id.clone(),
            Participant {
                id,
                role,
                pk,
                stake,
                reputation: 1.0,
                status: Status::Active,
            },
        );
        Admission::Admitted
    }

    /// Burns `fraction` of the stake; drops the participant to `Slashed`
    /// once stake falls below the minimum.
    pub fn slash(
        &mut self,
        id: &NodeId,
        fraction: f64,
        reason: &str,
        ledger: &mut Ledger,
        clock: Timestamp,
    ) -> Result<Participant, OracleError> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(OracleError::BadFraction(fraction.to_string()));
        }
        let min_stake = self.min_stake;
        let entry = self
            .entries
            .get_mut(id)
            .ok_or_else(|| OracleError::UnknownParticipant(id.clone()))?;
        if entry.status == Status::Slashed {
            return Err(OracleError::AlreadySlashed(id.clone()));
        }
        entry.stake = (entry.stake as f64 * (1.0 - fraction)).floor() as u64;
        entry.reputation = (entry.reputation - REPUTATION_PENALTY).max(0.0);
        if entry.stake < min_stake {
            entry.status = Status::Slashed;
        }
        let updated = entry.clone();
        ledger
            .append(
                LedgerEvent::SlashEvent {
                    oracle: id.clone(),
                    fraction,
                    reason: reason.to_string(),
                    stake_after: updated.stake,
                    slashed: updated.status == Status::Slashed,
                },
                clock,
            )
            .expect("slash events are always appendable");
        Ok(updated)
    }
}

/// Signed, nonce-stamped upload of one participant's encrypted shares.
#[derive(Clone, Debug, PartialEq)]
pub struct Submission {
    pub round: RoundId,
    pub sender: NodeId,
    pub nonce: Nonce,
    pub timestamp: Timestamp,
    /// Public FedAvg weight.
    pub n_samples: u64,
    /// Self-declared L2 norm of the submitted weight vector.
    pub declared_norm: f64,
    /// One ciphertext per computation oracle, in oracle order.
    pub ciphertexts: Vec<Ciphertext>,
    /// Oracle-major commitments, `k * dim` of them.
    pub share_commitments: Vec<Commitment>,
    pub sig: Signature,
}

impl Submission {
    /// Everything the signature covers. Ciphertexts enter through their
    /// headers, whose AEAD tags authenticate the payloads.
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.str("submission")
            .u64(self.round.0)
            .str(self.sender.as_str())
            .u128(self.nonce.0)
            .u64(self.timestamp.0)
            .u64(self.n_samples)
            .f64(self.declared_norm);
        w.list(&self.ciphertexts, |w, ct| ct.write_header(w));
        w.list(&self.share_commitments, |w, c| c.write_to(w));
        w.into_bytes()
    }

    pub fn sign_with(&mut self, keypair: &KeyPair, params: &FieldParams) {
        self.sig = sign(keypair, &self.signed_bytes(), params);
    }

    pub fn digest(&self) -> Digest {
        Digest::of_canonical(self)
    }

    pub fn ciphertext_digest(&self) -> Digest {
        let mut w = Writer::new();
        w.list(&self.ciphertexts, |w, ct| ct.write_to(w));
        Digest::of(&w.into_bytes())
    }
}

impl Canonical for Submission {
    fn write_to(&self, w: &mut Writer) {
        w.u64(self.round.0)
            .str(self.sender.as_str())
            .u128(self.nonce.0)
            .u64(self.timestamp.0)
            .u64(self.n_samples)
            .f64(self.declared_norm);
        w.list(&self.ciphertexts, |w, ct| ct.write_to(w));
        w.list(&self.share_commitments, |w, c| c.write_to(w));
        self.sig.write_to(w);
    }
}

impl Decode for Submission {
    fn read_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(Submission {
            round: RoundId(r.u64()?),
            sender: NodeId(r.str()?),
            nonce: Nonce(r.u128()?),
            timestamp: Timestamp(r.u64()?),
            n_samples: r.u64()?,
            declared_norm: r.f64()?,
            ciphertexts: r.list(Ciphertext::read_from)?,
            share_commitments: r.list(Commitment::read_from)?,
            sig: Signature::read_from(r)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum RejectReason {
    UnregisteredSender,
    BadSignature,
    StaleTimestamp,
    ReplayedNonce,
    AnomalousMagnitude,
    /// Wrong number of ciphertexts or commitments for the round layout.
    Malformed,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ValidationVerdict {
    Accept,
    Reject(RejectReason),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationPolicy {
    /// Maximum |timestamp - clock| in ticks.
    pub max_clock_skew: u64,
    /// Upper bound on the declared norm; `None` disables the filter.
    pub norm_bound: Option<f64>,
    pub oracles: usize,
    pub dim: usize,
}

/// Checks, in order: registration, signature, timestamp window, nonce
/// freshness, layout, and the magnitude filter. Pure in its inputs.
pub fn validate_submission(
    sub: &Submission,
    registry: &Registry,
    nonces: &NonceRegistry,
    clock: Timestamp,
    policy: &ValidationPolicy,
    params: &FieldParams,
) -> ValidationVerdict {
    use RejectReason::*;
    let Some(sender) = registry.get(&sub.sender) else {
        return ValidationVerdict::Reject(UnregisteredSender);
    };
    if sender.status != Status::Active || sender.role != Role::Vehicle {
        return ValidationVerdict::Reject(UnregisteredSender);
    }
    if !verify(&sender.pk, &sub.signed_bytes(), &sub.sig, params) {
        return ValidationVerdict::Reject(BadSignature);
    }
    if sub.timestamp.distance(clock) > policy.max_clock_skew {
        return ValidationVerdict::Reject(StaleTimestamp);
    }
    if nonces.contains(&sub.sender, sub.nonce) {
        return ValidationVerdict::Reject(ReplayedNonce);
    }
    if sub.ciphertexts.len() != policy.oracles
        || sub.share_commitments.len() != policy.oracles * policy.dim
        || sub.n_samples == 0
    {
        return ValidationVerdict::Reject(Malformed);
    }
    if !sub.declared_norm.is_finite() || sub.declared_norm < 0.0 {
        return ValidationVerdict::Reject(AnomalousMagnitude);
    }
    if let Some(bound) = policy.norm_bound {
        if sub.declared_norm > bound {
            return ValidationVerdict::Reject(AnomalousMagnitude);
        }
    }
    ValidationVerdict::Accept
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ConsensusOutcome {
    Committed,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsensusDecision {
    pub proposal: Digest,
    pub votes: BTreeMap<NodeId, bool>,
    pub yes: usize,
    pub threshold: usize,
    pub outcome: ConsensusOutcome,
}

/// Scripted behaviour of a Byzantine voter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByzantineVote {
    AlwaysNo,
    AlwaysYes,
    /// Votes the opposite of what honest validation says.
    Invert,
}

/// Single-shot quorum vote among the active oracles of a `3f + 1`
/// membership. Honest oracles vote with their own check of the proposal;
/// scripted oracles follow `byzantine`. Commits iff at least `2f + 1` yes.
pub fn consensus_round<F>(
    active: &[NodeId],
    f: usize,
    proposal: Digest,
    honest_check: F,
    byzantine: &BTreeMap<NodeId, ByzantineVote>,
) -> Result<ConsensusDecision, OracleError>
where
    F: Fn(&NodeId) -> bool,
{
    let threshold = 2 * f + 1;
    let unique: BTreeSet<&NodeId> = active.iter().collect();
    if unique.len() < threshold || unique.len() > 3 * f + 1 {
        return Err(OracleError::QuorumUnreachable {
            active: unique.len(),
            required: threshold,
        });
    }
    let votes: BTreeMap<NodeId, bool> = unique
        .into_iter()
        .map(|id| {
            let honest = honest_check(id);
            let vote = match byzantine.get(id) {
                None => honest,
                Some(ByzantineVote::AlwaysNo) => false,
                Some(ByzantineVote::AlwaysYes) => true,
                Some(ByzantineVote::Invert) => !honest,
            };
            (id.clone(), vote)
        })
        .collect();
    let yes = votes.values().filter(|v| **v).count();
    Ok(ConsensusDecision {
        proposal,
        votes,
        yes,
        threshold,
        outcome: if yes >= threshold {
            ConsensusOutcome::Committed
        } else {
            ConsensusOutcome::Aborted
        },
    })
}
