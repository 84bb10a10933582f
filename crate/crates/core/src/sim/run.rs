//! Lock-step orchestration of the full pipeline. Each round walks the
//! phases train, submit, validate, deliver, aggregate and commit, one
//! clock tick per phase (submit/validate/deliver repeat for
//! retransmissions and for re-sharing after an oracle is excluded).

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adversary::{Adversary, ChannelEnv, InFlight, Origin};
use super::config::{AttackKind, ByzantineMode, SimConfig};
use super::protocol::{build_submission, l2_norm, open_envelope, OpenFailure, OracleSeat, SubmissionInput};
use crate::crypto::{keygen, Commitment, KeyPair, PublicKey};
use crate::error::{SimError, SmpcError};
use crate::exec::Exec;
use crate::field::{encode_fixed, Fe, FieldParams};
use crate::ledger::{Ledger, LedgerEvent, NonceRegistry, ProvenanceRecord, Role};
use crate::oracle::{
    consensus_round, validate_submission, Admission, ByzantineVote, ConsensusOutcome, Registry, RejectReason,
    Submission, ValidationPolicy, ValidationVerdict,
};
use crate::rng::SimRng;
use crate::smpc::{
    fedavg_plaintext, oracle_partial, seal_partial, verify_aggregate, AggregateResult, AggregationContext,
    ShareEnvelope,
};
use crate::training::{
    generate_dataset, generate_ground_truth, local_loss, Dataset, LocalModel, Vehicle, VehicleProfile,
};
use crate::types::{NodeId, RoundId, Timestamp};
use crate::wire::Digest;

/// Retransmissions allowed per vehicle per sharing attempt.
pub const MAX_RETRANSMITS: u32 = 1;

pub fn vehicle_id(i: usize) -> NodeId {
    NodeId::new(format!("v{i:02}"))
}

pub fn oracle_id(j: usize) -> NodeId {
    NodeId::new(format!("o{j}"))
}

/// Ground truth, per-vehicle data and the held-out evaluation set, all
/// derived from the seed alone.
pub struct Population {
    pub ground_truth: Vec<f64>,
    pub vehicles: Vec<(VehicleProfile, Dataset)>,
    pub eval: Dataset,
}

pub fn build_population(cfg: &SimConfig) -> Result<Population, SimError> {
    let root = SimRng::new(cfg.seed);
    let ground_truth = generate_ground_truth(cfg.dim, &mut root.fork("ground-truth"));
    let poisoners = match &cfg.attack {
        Some(a) if a.kind == AttackKind::DataPoisoning => a.poisoners,
        _ => 0,
    };
    let features = cfg.dim - 1;
    let mut vehicles = Vec::with_capacity(cfg.n_vehicles);
    for i in 0..cfg.n_vehicles {
        let mut rng = root.fork(&format!("population/{i}"));
        let s = cfg.shift_spread;
        let feature_shift = (0..features)
            .map(|_| if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 })
            .collect();
        let profile = VehicleProfile {
            node_id: vehicle_id(i),
            n_samples: cfg.samples_per_vehicle,
            noise_std: cfg.noise_std,
            feature_shift,
            is_malicious: i < poisoners,
        };
        let data = generate_dataset(&profile, &ground_truth, &mut rng)?;
        vehicles.push((profile, data));
    }
    let eval_profile = VehicleProfile {
        node_id: NodeId::new("eval"),
        n_samples: cfg.eval_samples,
        noise_std: cfg.noise_std,
        feature_shift: vec![0.0; features],
        is_malicious: false,
    };
    let eval = generate_dataset(&eval_profile, &ground_truth, &mut root.fork("eval"))?;
    Ok(Population {
        ground_truth,
        vehicles,
        eval,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Rejected { reason: String, mechanism: String },
}

impl Verdict {
    fn rejected(reason: &str, mechanism: &str) -> Self {
        Verdict::Rejected {
            reason: reason.to_string(),
            mechanism: mechanism.to_string(),
        }
    }

    pub fn is_accepted(&self) -> bool {
        matches!(self, Verdict::Accepted)
    }

    pub fn mechanism(&self) -> Option<&str> {
        match self {
            Verdict::Accepted => None,
            Verdict::Rejected { mechanism, .. } => Some(mechanism),
        }
    }
}

/// Detection mechanism tag for a validation rejection.
pub fn mechanism_of(reason: RejectReason) -> &'static str {
    match reason {
        RejectReason::UnregisteredSender => "registry",
        RejectReason::BadSignature => "signature",
        RejectReason::StaleTimestamp => "timestamp",
        RejectReason::ReplayedNonce => "nonce",
        RejectReason::AnomalousMagnitude => "norm-filter",
        RejectReason::Malformed => "format",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubmissionRecord {
    pub sender: NodeId,
    pub origin: Origin,
    pub attempt: u32,
    pub transmission: u32,
    pub nonce: String,
    pub declared_norm: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttemptRecord {
    pub oracles: Vec<NodeId>,
    pub contributors: usize,
    pub failed_oracles: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsensusSummary {
    pub votes: BTreeMap<NodeId, bool>,
    pub yes: usize,
    pub threshold: usize,
    pub outcome: ConsensusOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: u64,
    pub committed: bool,
    /// Global model after this round.
    pub global_weights: Vec<f64>,
    /// MSE of the global model on the held-out evaluation set.
    pub global_loss: f64,
    /// `|w - w*|`.
    pub param_error: f64,
    pub contributors: Vec<NodeId>,
    pub submissions: Vec<SubmissionRecord>,
    pub attempts: Vec<AttemptRecord>,
    pub excluded_oracles: Vec<NodeId>,
    pub consensus: Option<ConsensusSummary>,
    /// Whether the field-level aggregate equals the integer sum of the
    /// contributors' encoded updates. `None` when the harness cannot see
    /// every contributor's plaintext.
    pub exact_match: Option<bool>,
    /// Largest coordinate gap to plaintext FedAvg on quantized inputs.
    pub plaintext_gap: Option<f64>,
    pub note: Option<String>,
    pub ledger_tip: Digest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbortInfo {
    pub round: u64,
    pub reason: String,
    pub excluded_oracles: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundTrace {
    pub ground_truth: Vec<f64>,
    pub tau: Option<f64>,
    pub rounds: Vec<RoundRecord>,
    pub abort: Option<AbortInfo>,
}

impl RoundTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    pub fn final_weights(&self) -> Option<&[f64]> {
        self.rounds.last().map(|r| r.global_weights.as_slice())
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.rounds.last().map(|r| r.global_loss)
    }
}

/// Plaintext update a vehicle released to the protocol, retained only for
/// audits and equivalence checks.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalUpdate {
    pub round: u64,
    pub vehicle: NodeId,
    pub n_samples: u64,
    pub weights: Vec<f64>,
}

pub struct RunOutput {
    pub config: SimConfig,
    pub trace: RoundTrace,
    pub ledger: Ledger,
    pub adversary_log: Vec<u8>,
    pub adversary_recovered: usize,
    pub local_updates: Vec<LocalUpdate>,
    /// Every raw feature and target value held by any vehicle.
    pub raw_values: Vec<f64>,
    pub sybil_admitted: Vec<NodeId>,
    pub sybil_refused: Vec<NodeId>,
    /// Oracles slashed during the run.
    pub slashed: Vec<NodeId>,
}

pub fn run_simulation(cfg: &SimConfig) -> Result<RunOutput, SimError> {
    run_simulation_with(cfg, Exec::default())
}

pub fn run_simulation_with(cfg: &SimConfig, exec: Exec) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    let mut sim = Sim::new(cfg, exec)?;
    let mut rounds = Vec::new();
    let mut abort = None;
    for r in 1..=cfg.rounds {
        let (record, aborted) = sim.round(r)?;
        rounds.push(record);
        if let Some(info) = aborted {
            abort = Some(info);
            break;
        }
    }
    let raw_values = sim.vehicles.iter().flat_map(Vehicle::raw_value_fingerprints).collect();
    let (adversary_log, adversary_recovered) = match &sim.adversary {
        Some(a) => (a.log().to_vec(), a.recovered()),
        None => (Vec::new(), 0),
    };
    Ok(RunOutput {
        config: cfg.clone(),
        trace: RoundTrace {
            ground_truth: sim.ground_truth.clone(),
            tau: sim.tau,
            rounds,
            abort,
        },
        ledger: sim.ledger,
        adversary_log,
        adversary_recovered,
        local_updates: sim.local_updates,
        raw_values,
        sybil_admitted: sim.sybil_admitted,
        sybil_refused: sim.sybil_refused,
        slashed: sim.excluded,
    })
}

struct Accepted {
    record: usize,
    sub: Submission,
    envelopes: Vec<ShareEnvelope>,
}

struct Sim<'c> {
    cfg: &'c SimConfig,
    params: FieldParams,
    exec: Exec,
    root: SimRng,
    ground_truth: Vec<f64>,
    eval: Dataset,
    vehicles: Vec<Vehicle>,
    vehicle_keys: Vec<KeyPair>,
    oracle_keys: BTreeMap<NodeId, KeyPair>,
    /// Oracle ids in creation order; attack configs index into this.
    oracle_order: Vec<NodeId>,
    registry: Registry,
    ledger: Ledger,
    nonces: NonceRegistry,
    adversary: Option<Adversary>,
    clock: u64,
    global: Vec<f64>,
    parent: Digest,
    tau: Option<f64>,
    excluded: Vec<NodeId>,
    local_updates: Vec<LocalUpdate>,
    sybil_admitted: Vec<NodeId>,
    sybil_refused: Vec<NodeId>,
}

impl<'c> Sim<'c> {
    fn new(cfg: &'c SimConfig, exec: Exec) -> Result<Self, SimError> {
        let params = FieldParams::for_profile(cfg.profile);
        let pop = build_population(cfg)?;
        let max_abs = poison_bound(cfg, &pop.ground_truth);
        params.check_capacity(max_abs, cfg.n_vehicles as u64 * cfg.samples_per_vehicle as u64 + 10_000)?;
        let root = SimRng::new(cfg.seed);
        let mut ledger = Ledger::new();
        let mut registry = Registry::new(cfg.min_stake, true);
        let genesis = Timestamp(0);

        let mut oracle_keys = BTreeMap::new();
        let mut oracle_order = Vec::new();
        for j in 0..cfg.oracle_count() {
            let id = oracle_id(j);
            let kp = keygen(&mut root.fork(&format!("keys/oracle/{j}")), &params);
            let admission = registry.register_participant(
                id.clone(),
                Role::Oracle,
                kp.pk.clone(),
                cfg.oracle_stake,
                &mut ledger,
                genesis,
            );
            debug_assert_eq!(admission, Admission::Admitted);
            oracle_keys.insert(id.clone(), kp);
            oracle_order.push(id);
        }
        let mut vehicles = Vec::new();
        let mut vehicle_keys = Vec::new();
        for (i, (profile, data)) in pop.vehicles.into_iter().enumerate() {
            let kp = keygen(&mut root.fork(&format!("keys/vehicle/{i}")), &params);
            registry.register_participant(
                profile.node_id.clone(),
                Role::Vehicle,
                kp.pk.clone(),
                cfg.vehicle_stake,
                &mut ledger,
                genesis,
            );
            vehicles.push(Vehicle::new(profile, data));
            vehicle_keys.push(kp);
        }

        let adversary = cfg
            .attack
            .as_ref()
            .map(|a| Adversary::new(a.clone(), root.fork("adversary"), &params));
        let mut sybil_admitted = Vec::new();
        let mut sybil_refused = Vec::new();
        if let Some(adv) = &adversary {
            for (id, pk, stake) in adv.sybil_registrations() {
                match registry.register_participant(id.clone(), Role::Vehicle, pk, stake, &mut ledger, genesis) {
                    Admission::Admitted => sybil_admitted.push(id),
                    Admission::Refused(_) => sybil_refused.push(id),
                }
            }
        }

        Ok(Sim {
            cfg,
            params,
            exec,
            root,
            ground_truth: pop.ground_truth,
            eval: pop.eval,
            vehicles,
            vehicle_keys,
            oracle_keys,
            oracle_order,
            registry,
            ledger,
            nonces: NonceRegistry::new(),
            adversary,
            clock: 0,
            global: vec![0.0; cfg.dim],
            parent: Digest::ZERO,
            tau: cfg.tau,
            excluded: Vec::new(),
            local_updates: Vec::new(),
            sybil_admitted,
            sybil_refused,
        })
    }

    fn tick(&mut self) -> Timestamp {
        self.clock += 1;
        Timestamp(self.clock)
    }

    fn attack_active(&self, round: u64) -> bool {
        self.adversary.as_ref().is_some_and(|a| a.scenario().is_active(round))
    }

    fn attack_kind(&self) -> Option<AttackKind> {
        self.adversary.as_ref().map(|a| a.scenario().kind)
    }

    fn corrupted_oracles(&self, round: u64, mode: ByzantineMode) -> BTreeSet<NodeId> {
        match &self.adversary {
            Some(a)
                if a.scenario().kind == AttackKind::ByzantineOracle
                    && a.scenario().byzantine_mode == mode
                    && a.scenario().is_active(round) =>
            {
                a.scenario()
                    .corrupted
                    .iter()
                    .map(|&i| self.oracle_order[i].clone())
                    .collect()
            }
            _ => BTreeSet::new(),
        }
    }

    fn current_oracles(&self) -> Vec<(NodeId, PublicKey)> {
        self.registry
            .active_oracles()
            .into_iter()
            .filter(|p| !self.excluded.contains(&p.id))
            .map(|p| (p.id.clone(), p.pk.clone()))
            .collect()
    }

    /// Local training, or the poison update for malicious vehicles.
    fn train(&mut self, round: u64) -> Result<Vec<Vec<f64>>, SimError> {
        let poison_on = self.attack_active(round) && self.attack_kind() == Some(AttackKind::DataPoisoning);
        let lambda = self.cfg.attack.as_ref().map_or(0.0, |a| a.lambda);
        let poison: Vec<f64> = self.ground_truth.iter().map(|w| -lambda * w).collect();
        let init = LocalModel::from_weights(self.global.clone());
        let (epochs, lr) = (self.cfg.epochs, self.cfg.lr);
        let models = self.exec.map_mut(&mut self.vehicles, |_, v| {
            if poison_on && v.profile().is_malicious {
                Ok(poison.clone())
            } else {
                v.train(&init, epochs, lr).map(|m| m.weights)
            }
        });
        let models = models.into_iter().collect::<Result<Vec<_>, _>>()?;
        for (v, w) in self.vehicles.iter().zip(&models) {
            self.local_updates.push(LocalUpdate {
                round,
                vehicle: v.id().clone(),
                n_samples: v.n_samples() as u64,
                weights: w.clone(),
            });
        }
        Ok(models)
    }

    fn round(&mut self, r: u64) -> Result<(RoundRecord, Option<AbortInfo>), SimError> {
        let round = RoundId(r);
        self.tick();
        let models = self.train(r)?;
        let known: BTreeMap<NodeId, (Vec<f64>, u64)> = self
            .vehicles
            .iter()
            .zip(&models)
            .map(|(v, w)| (v.id().clone(), (w.clone(), v.n_samples() as u64)))
            .collect();

        let mut records: Vec<SubmissionRecord> = Vec::new();
        let mut attempts: Vec<AttemptRecord> = Vec::new();
        let mut excluded_now: Vec<NodeId> = Vec::new();
        let mut attempt = 0u32;

        let (aggregate, oracles, accepted) = loop {
            let oracles = self.current_oracles();
            let accepted = self.collect_submissions(round, attempt, &oracles, &models, &mut records)?;
            if accepted.is_empty() {
                let record = self.finish_round(
                    r,
                    records,
                    attempts,
                    excluded_now,
                    None,
                    None,
                    &known,
                    Some("no valid submissions"),
                );
                return Ok((record, None));
            }

            let now = self.tick();
            let partials = self.partials(r, &oracles, &accepted)?;
            let contributions: Vec<(NodeId, u64, &[Commitment])> = accepted
                .iter()
                .map(|(id, a)| (id.clone(), a.sub.n_samples, a.sub.share_commitments.as_slice()))
                .collect();
            let ctx = AggregationContext {
                round,
                oracles: &oracles,
                contributions: &contributions,
                dim: self.cfg.dim,
                exec: self.exec,
            };
            match verify_aggregate(&ctx, &partials, &self.params) {
                Ok(agg) => {
                    attempts.push(AttemptRecord {
                        oracles: oracles.iter().map(|o| o.0.clone()).collect(),
                        contributors: accepted.len(),
                        failed_oracles: Vec::new(),
                    });
                    break (agg, oracles, accepted);
                }
                Err(SmpcError::ProofFailure(bad)) => {
                    attempts.push(AttemptRecord {
                        oracles: oracles.iter().map(|o| o.0.clone()).collect(),
                        contributors: accepted.len(),
                        failed_oracles: bad.clone(),
                    });
                    for id in &bad {
                        self.registry.slash(
                            id,
                            self.cfg.slash_fraction,
                            "partial sum failed commitment check",
                            &mut self.ledger,
                            now,
                        )?;
                        self.excluded.push(id.clone());
                        excluded_now.push(id.clone());
                    }
                    if self.excluded.len() > self.cfg.f {
                        let info = AbortInfo {
                            round: r,
                            reason: format!(
                                "abort cascade: {} oracles excluded, tolerance f = {}",
                                self.excluded.len(),
                                self.cfg.f
                            ),
                            excluded_oracles: self.excluded.clone(),
                        };
                        let record = self.finish_round(
                            r,
                            records,
                            attempts,
                            excluded_now,
                            None,
                            None,
                            &known,
                            Some("abort cascade"),
                        );
                        return Ok((record, Some(info)));
                    }
                    attempt += 1;
                }
                Err(e) => return Err(e.into()),
            }
        };

        if self.cfg.defenses.norm_filter && !self.norm_audit(&aggregate, &accepted) {
            let record = self.finish_round(
                r,
                records,
                attempts,
                excluded_now,
                None,
                None,
                &known,
                Some("aggregate norm exceeds declared norms"),
            );
            return Ok((record, None));
        }

        let consensus = if self.cfg.defenses.quorum {
            let ids: Vec<NodeId> = oracles.iter().map(|o| o.0.clone()).collect();
            let voters = self.corrupted_oracles(r, ByzantineMode::Vote);
            let vote = self.cfg.attack.as_ref().map_or(ByzantineVote::AlwaysNo, |a| a.vote);
            let byzantine: BTreeMap<NodeId, ByzantineVote> = voters.into_iter().map(|id| (id, vote)).collect();
            // Honest oracles re-run the public commitment check, which the
            // aggregate has just passed.
            let d = consensus_round(&ids, self.cfg.f, aggregate.model_hash(), |_| true, &byzantine)?;
            Some(ConsensusSummary {
                votes: d.votes,
                yes: d.yes,
                threshold: d.threshold,
                outcome: d.outcome,
            })
        } else {
            None
        };
        if consensus
            .as_ref()
            .is_some_and(|c| c.outcome == ConsensusOutcome::Aborted)
        {
            let record = self.finish_round(
                r,
                records,
                attempts,
                excluded_now,
                consensus,
                None,
                &known,
                Some("quorum not reached"),
            );
            return Ok((record, None));
        }

        let now = self.tick();
        let model_hash = aggregate.model_hash();
        let provenance = ProvenanceRecord {
            round,
            model_hash,
            parent_model_hash: self.parent,
            contributor_ids: aggregate.contributing.clone(),
            oracle_ids: oracles.iter().map(|o| o.0.clone()).collect(),
            submission_digests: accepted.values().map(|a| a.sub.digest()).collect(),
            proof_bundle_hash: aggregate.proof_bundle_hash(),
        };
        self.ledger
            .append(LedgerEvent::AggregateCommit(aggregate.clone()), now)?;
        self.ledger.append(LedgerEvent::Provenance(provenance), now)?;
        self.parent = model_hash;
        self.global = aggregate.weights.clone();
        let record = self.finish_round(
            r,
            records,
            attempts,
            excluded_now,
            consensus,
            Some(&aggregate),
            &known,
            None,
        );
        Ok((record, None))
    }

    /// Submit, validate and deliver, with up to `MAX_RETRANSMITS`
    /// retransmissions for vehicles that got no receipt.
    fn collect_submissions(
        &mut self,
        round: RoundId,
        attempt: u32,
        oracles: &[(NodeId, PublicKey)],
        models: &[Vec<f64>],
        records: &mut Vec<SubmissionRecord>,
    ) -> Result<BTreeMap<NodeId, Accepted>, SimError> {
        let r = round.0;
        let mut accepted: BTreeMap<NodeId, Accepted> = BTreeMap::new();
        for tx in 0..=MAX_RETRANSMITS {
            let pending: Vec<usize> = (0..self.vehicles.len())
                .filter(|&i| !accepted.contains_key(self.vehicles[i].id()))
                .collect();
            if pending.is_empty() {
                break;
            }
            let submit_clock = self.tick();
            let built = {
                let (params, root, secure) = (&self.params, &self.root, self.cfg.defenses.secure_channel);
                let (vehicles, keys) = (&self.vehicles, &self.vehicle_keys);
                self.exec.map(&pending, |&i| {
                    let mut rng = root.fork(&format!("round/{r}/attempt/{attempt}/tx/{tx}/vehicle/{i}"));
                    let input = SubmissionInput {
                        round,
                        sender: vehicles[i].id(),
                        signer: &keys[i],
                        weights: &models[i],
                        n_samples: vehicles[i].n_samples() as u64,
                        oracles,
                        clock: submit_clock,
                        secure,
                    };
                    build_submission(&input, params, &mut rng)
                })
            };

            let first = attempt == 0 && tx == 0;
            let active = self.attack_active(r);
            let eavesdrop = self.attack_kind() == Some(AttackKind::Eavesdrop);
            let victim = self
                .cfg
                .attack
                .as_ref()
                .map_or(0, |a| a.victim)
                .min(self.vehicles.len() - 1);
            let victim_id = self.vehicles[victim].id().clone();
            let env = ChannelEnv {
                round,
                clock: submit_clock,
                oracles,
                dim: self.cfg.dim,
                secure: self.cfg.defenses.secure_channel,
                victim: &victim_id,
                params: &self.params,
            };
            let mut in_flight: Vec<InFlight> = Vec::new();
            for sub in built {
                let sub = sub?;
                match self.adversary.as_mut() {
                    Some(adv) if active && (first || eavesdrop) => in_flight.extend(adv.channel_transform(sub, &env)),
                    _ => in_flight.push(InFlight::honest(sub)),
                }
            }
            if active && first {
                if let Some(adv) = self.adversary.as_mut() {
                    in_flight.extend(adv.inject(&env));
                }
            }

            let validate_clock = self.tick();
            let mut policy = ValidationPolicy {
                max_clock_skew: self.cfg.delta,
                norm_bound: None,
                oracles: oracles.len(),
                dim: self.cfg.dim,
            };
            if self.tau.is_none() {
                self.tau = Some(self.calibrate_tau(&in_flight, validate_clock, &policy));
            }
            if self.cfg.defenses.norm_filter {
                policy.norm_bound = self.tau;
            }
            let mut passed: Vec<(usize, Submission)> = Vec::new();
            for m in in_flight {
                let verdict = validate_submission(
                    &m.sub,
                    &self.registry,
                    &self.nonces,
                    validate_clock,
                    &policy,
                    &self.params,
                );
                let idx = records.len();
                records.push(SubmissionRecord {
                    sender: m.sub.sender.clone(),
                    origin: m.origin,
                    attempt,
                    transmission: tx,
                    nonce: format!("{:032x}", m.sub.nonce.0),
                    declared_norm: m.sub.declared_norm,
                    verdict: match verdict {
                        ValidationVerdict::Accept => Verdict::Accepted,
                        ValidationVerdict::Reject(reason) => {
                            Verdict::rejected(&reason.to_string(), mechanism_of(reason))
                        }
                    },
                });
                if verdict == ValidationVerdict::Accept {
                    self.nonces.check_nonce(&m.sub.sender, m.sub.nonce, round);
                    self.ledger.append(
                        LedgerEvent::SubmissionDigest {
                            round,
                            sender: m.sub.sender.clone(),
                            nonce: m.sub.nonce,
                            ciphertext_digest: m.sub.ciphertext_digest(),
                            commitments: m.sub.share_commitments.clone(),
                        },
                        validate_clock,
                    )?;
                    passed.push((idx, m.sub));
                }
            }

            self.tick();
            let opened = {
                let (params, registry, oracle_keys) = (&self.params, &self.registry, &self.oracle_keys);
                let (dim, secure) = (self.cfg.dim, self.cfg.defenses.secure_channel);
                self.exec.map(&passed, |(_, sub)| {
                    let sender_pk = &registry.get(&sub.sender).expect("validated sender is registered").pk;
                    oracles
                        .iter()
                        .enumerate()
                        .map(|(j, (oid, _))| {
                            let seat = OracleSeat {
                                id: oid,
                                keypair: &oracle_keys[oid],
                                index: j,
                            };
                            open_envelope(seat, sender_pk, sub, dim, secure, params)
                        })
                        .collect::<Result<Vec<_>, _>>()
                })
            };
            for ((idx, sub), result) in passed.into_iter().zip(opened) {
                match result {
                    Ok(envelopes) if !accepted.contains_key(&sub.sender) => {
                        accepted.insert(
                            sub.sender.clone(),
                            Accepted {
                                record: idx,
                                sub,
                                envelopes,
                            },
                        );
                    }
                    Ok(_) => records[idx].verdict = Verdict::rejected("DuplicateSender", "nonce"),
                    Err(OpenFailure::Auth) => records[idx].verdict = Verdict::rejected("AuthFailure", "AEAD-tag"),
                    Err(OpenFailure::Format) => records[idx].verdict = Verdict::rejected("MalformedEnvelope", "format"),
                }
            }
        }
        debug_assert!(accepted.values().all(|a| records[a.record].verdict.is_accepted()));
        Ok(accepted)
    }

    /// `tau_multiplier` times the median declared norm among messages that
    /// pass every other check.
    fn calibrate_tau(&self, in_flight: &[InFlight], clock: Timestamp, policy: &ValidationPolicy) -> f64 {
        let mut norms: Vec<f64> = in_flight
            .iter()
            .filter(|m| {
                validate_submission(&m.sub, &self.registry, &self.nonces, clock, policy, &self.params)
                    == ValidationVerdict::Accept
            })
            .map(|m| m.sub.declared_norm)
            .collect();
        norms.sort_by(f64::total_cmp);
        let median = match norms.len() {
            0 => return f64::INFINITY,
            n if n % 2 == 1 => norms[n / 2],
            n => 0.5 * (norms[n / 2 - 1] + norms[n / 2]),
        };
        self.cfg.tau_multiplier * median
    }

    fn partials(
        &self,
        r: u64,
        oracles: &[(NodeId, PublicKey)],
        accepted: &BTreeMap<NodeId, Accepted>,
    ) -> Result<Vec<crate::smpc::PartialSumProof>, SimError> {
        let corrupted = self.corrupted_oracles(r, ByzantineMode::Partial);
        let results = self.exec.map_range(oracles.len(), |j| {
            let oid = &oracles[j].0;
            let kp = &self.oracle_keys[oid];
            let envelopes: Vec<ShareEnvelope> = accepted.values().map(|a| a.envelopes[j].clone()).collect();
            let mut proof = oracle_partial(oid, kp, &envelopes, &self.params)?;
            if corrupted.contains(oid) {
                let mut partial = proof.partial.clone();
                partial[0] = self.params.add(partial[0], Fe(1));
                proof = seal_partial(oid, kp, proof.round, partial, proof.blinding_sum, &self.params);
            }
            Ok::<_, SmpcError>(proof)
        });
        results.into_iter().map(|p| p.map_err(SimError::from)).collect()
    }

    /// `|sum_i n_i w_i| <= sum_i n_i |w_i|` must hold when every declared
    /// norm is honest; a violation means some sender under-declared.
    fn norm_audit(&self, agg: &AggregateResult, accepted: &BTreeMap<NodeId, Accepted>) -> bool {
        let scale = self.params.scale as f64;
        let actual = agg
            .encoded_sum
            .iter()
            .map(|e| (self.params.to_signed(*e) as f64 / scale).powi(2))
            .sum::<f64>()
            .sqrt();
        let declared: f64 = accepted
            .values()
            .map(|a| a.sub.n_samples as f64 * a.sub.declared_norm)
            .sum();
        let slack = accepted.len() as f64 * (self.cfg.dim as f64).sqrt() * 0.5 / scale;
        actual <= declared * (1.0 + 1e-12) + slack
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_round(
        &mut self,
        r: u64,
        submissions: Vec<SubmissionRecord>,
        attempts: Vec<AttemptRecord>,
        excluded_oracles: Vec<NodeId>,
        consensus: Option<ConsensusSummary>,
        aggregate: Option<&AggregateResult>,
        known: &BTreeMap<NodeId, (Vec<f64>, u64)>,
        note: Option<&str>,
    ) -> RoundRecord {
        let (exact_match, plaintext_gap) = match aggregate {
            Some(agg) => self.equivalence(agg, known),
            None => (None, None),
        };
        let param_error = l2_norm(
            &self
                .global
                .iter()
                .zip(&self.ground_truth)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        RoundRecord {
            round: r,
            committed: aggregate.is_some(),
            global_weights: self.global.clone(),
            global_loss: local_loss(&self.global, &self.eval),
            param_error,
            contributors: aggregate.map(|a| a.contributing.clone()).unwrap_or_default(),
            submissions,
            attempts,
            excluded_oracles,
            consensus,
            exact_match,
            plaintext_gap,
            note: note.map(str::to_string),
            ledger_tip: self.ledger.tip_hash(),
        }
    }

    /// Compares the SMPC aggregate with the plaintext pipeline on the same
    /// quantized inputs.
    fn equivalence(
        &self,
        agg: &AggregateResult,
        known: &BTreeMap<NodeId, (Vec<f64>, u64)>,
    ) -> (Option<bool>, Option<f64>) {
        let inputs: Option<Vec<&(Vec<f64>, u64)>> = agg.contributing.iter().map(|id| known.get(id)).collect();
        let Some(inputs) = inputs else { return (None, None) };
        let scale = self.params.scale as f64;
        let mut int_sum = vec![0i128; self.cfg.dim];
        let mut quantized = Vec::with_capacity(inputs.len());
        for (w, n) in inputs {
            let mut q = Vec::with_capacity(w.len());
            for (c, x) in w.iter().enumerate() {
                let e = encode_fixed(*n as f64 * x, &self.params).expect("validated at submission");
                let v = self.params.to_signed(e);
                int_sum[c] += v;
                q.push(v as f64 / scale / *n as f64);
            }
            quantized.push((q, *n));
        }
        let exact = int_sum
            .iter()
            .zip(&agg.encoded_sum)
            .all(|(s, e)| *s == self.params.to_signed(*e));
        let plain = fedavg_plaintext(&quantized).expect("non-empty inputs");
        let gap = plain
            .iter()
            .zip(&agg.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        (Some(exact), Some(gap))
    }
}

/// Largest absolute weight any participant may submit under `cfg`.
fn poison_bound(cfg: &SimConfig, ground_truth: &[f64]) -> f64 {
    let gt_max = ground_truth.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let lambda = cfg.attack.as_ref().map_or(0.0, |a| a.lambda);
    (lambda * gt_max.max(1.0)).max(10.0)
}
