//! Verifiable secure aggregation.
//!
//! Each participant secret-shares `encode(n_i * w_i)` coordinate-wise across
//! the computation oracles together with a blinding value, and publishes a
//! commitment to every (oracle, coordinate) share. An oracle's partial sum is
//! checked against the product of the participants' commitments for that
//! oracle, which pins down exactly who cheated when a check fails.

use serde::Serialize;

use crate::crypto::{commit, reconstruct, share_additive, sign, verify, Commitment, KeyPair, PublicKey, Signature};
use crate::error::{SmpcError, WireError};
use crate::exec::Exec;
use crate::field::{encode_fixed, Fe, FieldParams};
use crate::rng::SimRng;
use crate::types::{NodeId, RoundId};
use crate::wire::{Canonical, Decode, Digest, Reader, Writer};

/// One participant's shares destined for one oracle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareEnvelope {
    pub round: RoundId,
    pub from: NodeId,
    pub to_oracle: NodeId,
    pub coords: Vec<Fe>,
    pub blindings: Vec<Fe>,
}

impl Canonical for ShareEnvelope {
    fn write_to(&self, w: &mut Writer) {
        w.u64(self.round.0).str(self.from.as_str()).str(self.to_oracle.as_str());
        w.list(&self.coords, |w, e| {
            w.fe(*e);
        });
        w.list(&self.blindings, |w, e| {
            w.fe(*e);
        });
    }
}

impl Decode for ShareEnvelope {
    fn read_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(ShareEnvelope {
            round: RoundId(r.u64()?),
            from: NodeId(r.str()?),
            to_oracle: NodeId(r.str()?),
            coords: r.list(|r| r.fe())?,
            blindings: r.list(|r| r.fe())?,
        })
    }
}

/// An oracle's committed partial aggregate and its opening.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialSumProof {
    pub oracle: NodeId,
    pub round: RoundId,
    pub partial: Vec<Fe>,
    pub blinding_sum: Vec<Fe>,
    pub sig: Signature,
}

impl PartialSumProof {
    fn signed_bytes(oracle: &NodeId, round: RoundId, partial: &[Fe], blinding_sum: &[Fe]) -> Vec<u8> {
        let mut w = Writer::new();
        w.str("partial-sum-proof").str(oracle.as_str()).u64(round.0);
        w.list(partial, |w, e| {
            w.fe(*e);
        });
        w.list(blinding_sum, |w, e| {
            w.fe(*e);
        });
        w.into_bytes()
    }

    pub fn verify_signature(&self, pk: &PublicKey, params: &FieldParams) -> bool {
        let bytes = Self::signed_bytes(&self.oracle, self.round, &self.partial, &self.blinding_sum);
        verify(pk, &bytes, &self.sig, params)
    }
}

impl Canonical for PartialSumProof {
    fn write_to(&self, w: &mut Writer) {
        w.str(self.oracle.as_str()).u64(self.round.0);
        w.list(&self.partial, |w, e| {
            w.fe(*e);
        });
        w.list(&self.blinding_sum, |w, e| {
            w.fe(*e);
        });
        self.sig.write_to(w);
    }
}

impl Decode for PartialSumProof {
    fn read_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(PartialSumProof {
            oracle: NodeId(r.str()?),
            round: RoundId(r.u64()?),
            partial: r.list(|r| r.fe())?,
            blinding_sum: r.list(|r| r.fe())?,
            sig: Signature::read_from(r)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateResult {
    pub round: RoundId,
    /// Decoded FedAvg weights.
    pub weights: Vec<f64>,
    pub total_samples: u64,
    pub contributing: Vec<NodeId>,
    #[serde(skip)]
    pub proof_bundle: Vec<PartialSumProof>,
    /// Field-level sum of `encode(n_i * w_i)`, before decoding.
    #[serde(skip)]
    pub encoded_sum: Vec<Fe>,
    pub verified: bool,
}

impl AggregateResult {
    pub fn model_hash(&self) -> Digest {
        Digest::of_canonical(self)
    }

    pub fn proof_bundle_hash(&self) -> Digest {
        let mut w = Writer::new();
        w.list(&self.proof_bundle, |w, p| p.write_to(w));
        Digest::of(&w.into_bytes())
    }
}

impl Canonical for AggregateResult {
    fn write_to(&self, w: &mut Writer) {
        w.u64(self.round.0);
        w.list(&self.weights, |w, x| {
            w.f64(*x);
        });
        w.u64(self.total_samples);
        w.list(&self.contributing, |w, id| {
            w.str(id.as_str());
        });
        w.list(&self.proof_bundle, |w, p| p.write_to(w));
        w.list(&self.encoded_sum, |w, e| {
            w.fe(*e);
        });
        w.bool(self.verified);
    }
}

impl Decode for AggregateResult {
    fn read_from(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(AggregateResult {
            round: RoundId(r.u64()?),
            weights: r.list(|r| r.f64())?,
            total_samples: r.u64()?,
            contributing: r.list(|r| r.str().map(NodeId))?,
            proof_bundle: r.list(PartialSumProof::read_from)?,
            encoded_sum: r.list(|r| r.fe())?,
            verified: r.bool()?,
        })
    }
}

/// A participant's full sharing: one envelope per oracle plus the public
/// commitments, laid out oracle-major (`oracle * dim + coord`).
#[derive(Clone, Debug)]
pub struct Sharing {
    pub envelopes: Vec<ShareEnvelope>,
    pub commitments: Vec<Commitment>,
}

/// Fixed-point encoding of the sample-weighted update `n * w`.
pub fn encode_weighted(weights: &[f64], n_samples: u64, params: &FieldParams) -> Result<Vec<Fe>, SmpcError> {
    weights
        .iter()
        .map(|w| encode_fixed(n_samples as f64 * w, params).map_err(SmpcError::from))
        .collect()
}

pub fn make_envelopes(
    round: RoundId,
    from: &NodeId,
    oracles: &[NodeId],
    weights: &[f64],
    n_samples: u64,
    params: &FieldParams,
    rng: &mut SimRng,
) -> Result<Sharing, SmpcError> {
    let k = oracles.len();
    if k < 2 {
        return Err(SmpcError::InvalidInput(format!("need at least 2 oracles, got {k}")));
    }
    let dim = weights.len();
    let encoded = encode_weighted(weights, n_samples, params)?;
    let mut envelopes: Vec<ShareEnvelope> = oracles
        .iter()
        .map(|o| ShareEnvelope {
            round,
            from: from.clone(),
            to_oracle: o.clone(),
            coords: Vec::with_capacity(dim),
            blindings: Vec::with_capacity(dim),
        })
        .collect();
    for value in &encoded {
        let blinding = params.random(rng);
        let value_shares = share_additive(*value, k, params, rng);
        let blind_shares = share_additive(blinding, k, params, rng);
        for (env, (v, b)) in envelopes.iter_mut().zip(value_shares.into_iter().zip(blind_shares)) {
            env.coords.push(v);
            env.blindings.push(b);
        }
    }
    let commitments = envelopes
        .iter()
        .flat_map(|env| {
            env.coords
                .iter()
                .zip(&env.blindings)
                .map(|(v, b)| commit(*v, *b, params))
        })
        .collect();
    Ok(Sharing { envelopes, commitments })
}

/// Coordinate-wise sum of the shares and blindings an oracle received.
pub fn oracle_partial(
    oracle: &NodeId,
    keypair: &KeyPair,
    envelopes: &[ShareEnvelope],
    params: &FieldParams,
) -> Result<PartialSumProof, SmpcError> {
    let first = envelopes.first().ok_or(SmpcError::EmptyRound)?;
    let round = first.round;
    let dim = first.coords.len();
    let mut partial = vec![Fe(0); dim];
    let mut blinding_sum = vec![Fe(0); dim];
    for env in envelopes {
        if env.round != round {
            return Err(SmpcError::RoundMismatch);
        }
        if &env.to_oracle != oracle {
            return Err(SmpcError::InvalidInput(format!(
                "envelope for {} delivered to {oracle}",
                env.to_oracle
            )));
        }
        if env.coords.len() != dim || env.blindings.len() != dim {
            return Err(SmpcError::DimensionMismatch {
                expected: dim,
                got: env.coords.len().min(env.blindings.len()),
            });
        }
        for j in 0..dim {
            partial[j] = params.add(partial[j], env.coords[j]);
            blinding_sum[j] = params.add(blinding_sum[j], env.blindings[j]);
        }
    }
    Ok(seal_partial(oracle, keypair, round, partial, blinding_sum, params))
}

/// Signs an (already computed) partial. Exposed so fault injection can
/// produce well-signed but wrong partials.
pub fn seal_partial(
    oracle: &NodeId,
    keypair: &KeyPair,
    round: RoundId,
    partial: Vec<Fe>,
    blinding_sum: Vec<Fe>,
    params: &FieldParams,
) -> PartialSumProof {
    let bytes = PartialSumProof::signed_bytes(oracle, round, &partial, &blinding_sum);
    PartialSumProof {
        oracle: oracle.clone(),
        round,
        sig: sign(keypair, &bytes, params),
        partial,
        blinding_sum,
    }
}

/// Public inputs against which partial-sum proofs are checked.
pub struct AggregationContext<'a> {
    pub round: RoundId,
    /// Computation oracles in sharing order, with their registered keys.
    pub oracles: &'a [(NodeId, PublicKey)],
    /// Per contributing participant: id, sample count, commitments.
    pub contributions: &'a [(NodeId, u64, &'a [Commitment])],
    pub dim: usize,
    pub exec: Exec,
}

/// Checks every partial against the participants' commitments and, if all
/// pass, reconstructs and decodes the FedAvg weights.
pub fn verify_aggregate(
    ctx: &AggregationContext<'_>,
    partials: &[PartialSumProof],
    params: &FieldParams,
) -> Result<AggregateResult, SmpcError> {
    if ctx.contributions.is_empty() {
        return Err(SmpcError::EmptyRound);
    }
    let k = ctx.oracles.len();
    let dim = ctx.dim;
    for (_, _, commits) in ctx.contributions {
        if commits.len() != k * dim {
            return Err(SmpcError::DimensionMismatch {
                expected: k * dim,
                got: commits.len(),
            });
        }
    }
    let checks = ctx.exec.map_range(k, |j| {
        let (oracle, pk) = &ctx.oracles[j];
        let Some(proof) = partials.iter().find(|p| &p.oracle == oracle) else {
            return false;
        };
        if proof.round != ctx.round
            || proof.partial.len() != dim
            || proof.blinding_sum.len() != dim
            || !proof.verify_signature(pk, params)
        {
            return false;
        }
        (0..dim).all(|c| {
            let expected = Commitment::product(ctx.contributions.iter().map(|(_, _, cs)| &cs[j * dim + c]), params);
            commit(proof.partial[c], proof.blinding_sum[c], params) == expected
        })
    });
    let failed: Vec<NodeId> = ctx
        .oracles
        .iter()
        .zip(&checks)
        .filter(|(_, ok)| !**ok)
        .map(|((id, _), _)| id.clone())
        .collect();
    if !failed.is_empty() {
        return Err(SmpcError::ProofFailure(failed));
    }
    let ordered: Vec<PartialSumProof> = ctx
        .oracles
        .iter()
        .map(|(id, _)| {
            partials
                .iter()
                .find(|p| &p.oracle == id)
                .cloned()
                .expect("checked above")
        })
        .collect();
    let total_samples: u64 = ctx.contributions.iter().map(|(_, n, _)| *n).sum();
    if total_samples == 0 {
        return Err(SmpcError::InvalidInput("total sample count is zero".into()));
    }
    let encoded_sum: Vec<Fe> = (0..dim)
        .map(|c| reconstruct(&ordered.iter().map(|p| p.partial[c]).collect::<Vec<_>>(), params))
        .collect();
    let weights = decode_average(&encoded_sum, total_samples, params);
    Ok(AggregateResult {
        round: ctx.round,
        weights,
        total_samples,
        contributing: ctx.contributions.iter().map(|(id, _, _)| id.clone()).collect(),
        proof_bundle: ordered,
        encoded_sum,
        verified: true,
    })
}

/// `decode(sum) / total_samples`, computed from the exact signed integer.
pub fn decode_average(encoded_sum: &[Fe], total_samples: u64, params: &FieldParams) -> Vec<f64> {
    encoded_sum
        .iter()
        .map(|e| params.to_signed(*e) as f64 / params.scale as f64 / total_samples as f64)
        .collect()
}

/// Reference FedAvg in floating point: `sum n_i w_i / sum n_i`.
pub fn fedavg_plaintext(inputs: &[(Vec<f64>, u64)]) -> Result<Vec<f64>, SmpcError> {
    let (first, _) = inputs.first().ok_or(SmpcError::EmptyRound)?;
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    let mut total = 0u64;
    for (w, n) in inputs {
        if w.len() != dim {
            return Err(SmpcError::DimensionMismatch {
                expected: dim,
                got: w.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(w) {
            *a += *n as f64 * x;
        }
        total += n;
    }
    if total == 0 {
        return Err(SmpcError::InvalidInput("total sample count is zero".into()));
    }
    Ok(acc.into_iter().map(|a| a / total as f64).collect())
}
