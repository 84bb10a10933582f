//! Hash-chained append-only ledger with one event per block, provenance
//! tracing, and the per-sender nonce registry.
//!
//! Export format: one block per line, each line the lowercase hex of the
//! block's canonical bytes.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::crypto::{Commitment, PublicKey};
use crate::error::{LedgerError, WireError};
use crate::smpc::AggregateResult;
use crate::types::{NodeId, Nonce, RoundId, Timestamp};
use crate::wire::{Canonical, Decode, Digest, Reader, Writer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Vehicle,
    Oracle,
}

impl Role {
    fn tag(self) -> u8 {
        match self {
            Role::Vehicle => 0,
            Role::Oracle => 1,
        }
    }

    fn from_tag(t: u8) -> Result<Role, WireError> {
        match t {
            0 => Ok(Role::Vehicle),
            1 => Ok(Role::Oracle),
            t => Err(WireError::BadTag(t)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProvenanceRecord {
    pub round: RoundId,
    pub model_hash: Digest,
    /// `Digest::ZERO` marks the genesis model.
    pub parent_model_hash: Digest,
    pub contributor_ids: Vec<NodeId>,
    pub oracle_ids: Vec<NodeId>,
    pub submission_digests: Vec<Digest>,
    pub proof_bundle_hash: Digest,
}

impl Canonical for ProvenanceRecord {
    fn write_to(&self, w: &mut Writer) {
        w.u64(self.round.0)
            .digest(&self.model_hash)
            .digest(&self.parent_model_hash);
        w.list(&self.contributor_ids, |w, id| {
            w.str(id.as_str());
        });
        w.list(&self.oracle_ids, |w, id| {
            w.str(id.as_str());
        });
        w.list(&self.submission_digests, |w, d| {
            w.digest(d);
        });
        w.digest(&self.proof_bundle_hash);
    }
}

impl Decode for ProvenanceRecord {
    fn read_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(ProvenanceRecord {
            round: RoundId(r.u64()?),
            model_hash: r.digest()?,
            parent_model_hash: r.digest()?,
            contributor_ids: r.list(|r| r.str().map(NodeId))?,
            oracle_ids: r.list(|r| r.str().map(NodeId))?,
            submission_digests: r.list(|r| r.digest())?,
            proof_bundle_hash: r.digest()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LedgerEvent {
    Registration {
        id: NodeId,
        role: Role,
        pk: PublicKey,
        stake: u64,
    },
    /// Accepted upload: digest of the ciphertexts plus the public share
    /// commitments. Plaintext never reaches the chain.
    SubmissionDigest {
        round: RoundId,
        sender: NodeId,
        nonce: Nonce,
        ciphertext_digest: Digest,
        commitments: Vec<Commitment>,
    },
    AggregateCommit(AggregateResult),
    SlashEvent {
        oracle: NodeId,
        fraction: f64,
        reason: String,
        stake_after: u64,
        slashed: bool,
    },
    Provenance(ProvenanceRecord),
}

impl LedgerEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            LedgerEvent::Registration { .. } => "registration",
            LedgerEvent::SubmissionDigest { .. } => "submission",
            LedgerEvent::AggregateCommit(_) => "aggregate",
            LedgerEvent::SlashEvent { .. } => "slash",
            LedgerEvent::Provenance(_) => "provenance",
        }
    }
}

impl Canonical for LedgerEvent {
    fn write_to(&self, w: &mut Writer) {
        match self {
            LedgerEvent::Registration { id, role, pk, stake } => {
                w.u8(1).str(id.as_str()).u8(role.tag());
                pk.write_to(w);
                w.u64(*stake);
            }
            LedgerEvent::SubmissionDigest {
                round,
                sender,
                nonce,
                ciphertext_digest,
                commitments,
            } => {
                w.u8(2)
                    .u64(round.0)
                    .str(sender.as_str())
                    .u128(nonce.0)
                    .digest(ciphertext_digest);
                w.list(commitments, |w, c| c.write_to(w));
            }
            LedgerEvent::AggregateCommit(result) => {
                w.u8(3);
                result.write_to(w);
            }
            LedgerEvent::SlashEvent {
                oracle,
                fraction,
                reason,
                stake_after,
                slashed,
            } => {
                w.u8(4)
                    .str(oracle.as_str())
                    .f64(*fraction)
                    .str(reason)
                    .u64(*stake_after)
                    .bool(*slashed);
            }
            LedgerEvent::Provenance(record) => {
                w.u8(5);
                record.write_to(w);
            }
        }
    }
}

impl Decode for LedgerEvent {
    fn read_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(match r.u8()? {
            1 => LedgerEvent::Registration {
                id: NodeId(r.str()?),
                role: Role::from_tag(r.u8()?)?,
                pk: PublicKey::read_from(r)?,
                stake: r.u64()?,
            },
            2 => LedgerEvent::SubmissionDigest {
                round: RoundId(r.u64()?),
                sender: NodeId(r.str()?),
                nonce: Nonce(r.u128()?),
                ciphertext_digest: r.digest()?,
                commitments: r.list(Commitment::read_from)?,
            },
            3 => LedgerEvent::AggregateCommit(AggregateResult::read_from(r)?),
            4 => LedgerEvent::SlashEvent {
                oracle: NodeId(r.str()?),
                fraction: r.f64()?,
                reason: r.str()?,
                stake_after: r.u64()?,
                slashed: r.bool()?,
            },
            5 => LedgerEvent::Provenance(ProvenanceRecord::read_from(r)?),
            t => return Err(WireError::BadTag(t)),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub index: u64,
    pub prev_hash: Digest,
    pub timestamp: Timestamp,
    pub payload: LedgerEvent,
    pub hash: Digest,
}

impl Block {
    fn header_bytes(index: u64, prev_hash: &Digest, timestamp: Timestamp, payload: &LedgerEvent) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(index).digest(prev_hash).u64(timestamp.0);
        payload.write_to(&mut w);
        w.into_bytes()
    }

    pub fn compute_hash(&self) -> Digest {
        Digest::of(&Self::header_bytes(
            self.index,
            &self.prev_hash,
            self.timestamp,
            &self.payload,
        ))
    }
}

impl Canonical for Block {
    fn write_to(&self, w: &mut Writer) {
        w.u64(self.index).digest(&self.prev_hash).u64(self.timestamp.0);
        self.payload.write_to(w);
        w.digest(&self.hash);
    }
}

impl Decode for Block {
    fn read_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(Block {
            index: r.u64()?,
            prev_hash: r.digest()?,
            timestamp: Timestamp(r.u64()?),
            payload: LedgerEvent::read_from(r)?,
            hash: r.digest()?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ChainStatus {
    Valid,
    BrokenAt(u64),
}

/// Single-writer chain. Readers take `blocks()` snapshots.
#[derive(Clone, Debug, Default)]
pub struct Ledger {
    blocks: Vec<Block>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_blocks(blocks: Vec<Block>) -> Self {
        Ledger { blocks }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip_hash(&self) -> Digest {
        self.blocks.last().map(|b| b.hash).unwrap_or(Digest::ZERO)
    }

    /// Appends one event. Aggregates enter the chain only with a verified
    /// proof bundle.
    pub fn append(&mut self, payload: LedgerEvent, clock: Timestamp) -> Result<&Block, LedgerError> {
        if let LedgerEvent::AggregateCommit(result) = &payload {
            if !result.verified || result.proof_bundle.is_empty() {
                return Err(LedgerError::UnverifiedAggregate);
            }
        }
        let index = self.blocks.len() as u64;
        let prev_hash = self.tip_hash();
        let hash = Digest::of(&Block::header_bytes(index, &prev_hash, clock, &payload));
        self.blocks.push(Block {
            index,
            prev_hash,
            timestamp: clock,
            payload,
            hash,
        });
        Ok(self.blocks.last().expect("just pushed"))
    }

    pub fn verify(&self) -> ChainStatus {
        verify_chain(&self.blocks)
    }

    pub fn export(&self) -> String {
        export_chain(&self.blocks)
    }

    pub fn trace_provenance(&self, model_hash: &Digest) -> Result<Vec<ProvenanceRecord>, LedgerError> {
        trace_provenance(&self.blocks, model_hash)
    }
}

/// Recomputes every hash and link; reports the first inconsistent index.
pub fn verify_chain(blocks: &[Block]) -> ChainStatus {
    let mut prev = Digest::ZERO;
    for (i, block) in blocks.iter().enumerate() {
        let i = i as u64;
        if block.index != i || block.prev_hash != prev || block.compute_hash() != block.hash {
            return ChainStatus::BrokenAt(i);
        }
        prev = block.hash;
    }
    ChainStatus::Valid
}

pub fn export_chain(blocks: &[Block]) -> String {
    let mut out = String::new();
    for block in blocks {
        out.push_str(&hex::encode(block.to_canonical()));
        out.push('\n');
    }
    out
}

pub fn import_chain(text: &str) -> Result<Vec<Block>, LedgerError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(line, l)| {
            let bytes = hex::decode(l.trim()).map_err(|_| LedgerError::Parse {
                line,
                source: WireError::BadHex,
            })?;
            Block::from_canonical(&bytes).map_err(|source| LedgerError::Parse { line, source })
        })
        .collect()
}

/// Parses and verifies an exported chain. A line that no longer parses is
/// reported as a break at that block.
pub fn verify_export(text: &str) -> ChainStatus {
    match import_chain(text) {
        Ok(blocks) => verify_chain(&blocks),
        Err(LedgerError::Parse { line, .. }) => {
            // Blocks before the unparseable line may already be inconsistent.
            let prefix: String = text.lines().take(line).map(|l| format!("{l}\n")).collect();
            match import_chain(&prefix).map(|b| verify_chain(&b)) {
                Ok(ChainStatus::BrokenAt(j)) => ChainStatus::BrokenAt(j),
                _ => ChainStatus::BrokenAt(line as u64),
            }
        }
        Err(_) => ChainStatus::BrokenAt(0),
    }
}

/// Lineage of `model_hash` back to genesis, newest first.
pub fn trace_provenance(blocks: &[Block], model_hash: &Digest) -> Result<Vec<ProvenanceRecord>, LedgerError> {
    let by_model: HashMap<Digest, &ProvenanceRecord> = blocks
        .iter()
        .filter_map(|b| match &b.payload {
            LedgerEvent::Provenance(rec) => Some((rec.model_hash, rec)),
            _ => None,
        })
        .collect();
    let mut lineage = Vec::new();
    let mut cursor = *model_hash;
    let Some(_) = by_model.get(&cursor) else {
        return Err(LedgerError::UnknownModel(model_hash.to_hex()));
    };
    while cursor != Digest::ZERO {
        let rec = by_model
            .get(&cursor)
            .ok_or_else(|| LedgerError::UnknownModel(cursor.to_hex()))?;
        if lineage.len() > by_model.len() {
            // A cycle can only come from a forged chain.
            return Err(LedgerError::UnknownModel(cursor.to_hex()));
        }
        lineage.push((*rec).clone());
        cursor = rec.parent_model_hash;
    }
    Ok(lineage)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NonceStatus {
    Fresh,
    Replayed,
}

/// Insert-only set of `(sender, nonce)` pairs with the round first seen.
#[derive(Clone, Debug, Default)]
pub struct NonceRegistry {
    seen: BTreeMap<(NodeId, Nonce), RoundId>,
}

impl NonceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, sender: &NodeId, nonce: Nonce) -> bool {
        self.seen.contains_key(&(sender.clone(), nonce))
    }

    /// Records the pair on first use.
    pub fn check_nonce(&mut self, sender: &NodeId, nonce: Nonce, round: RoundId) -> NonceStatus {
        use std::collections::btree_map::Entry;
        match self.seen.entry((sender.clone(), nonce)) {
            Entry::Occupied(_) => NonceStatus::Replayed,
            Entry::Vacant(slot) => {
                slot.insert(round);
                NonceStatus::Fresh
            }
        }
    }

    pub fn first_seen(&self, sender: &NodeId, nonce: Nonce) -> Option<RoundId> {
        self.seen.get(&(sender.clone(), nonce)).copied()
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}
