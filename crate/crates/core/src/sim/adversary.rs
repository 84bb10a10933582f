//! The network adversary. It sits on the vehicle-to-oracle channel, sees
//! every submission in flight, and can drop, duplicate, alter or inject
//! messages. It holds its own key pairs but none of the honest ones.

use serde::Serialize;

use super::config::{AttackKind, AttackScenario};
use super::protocol::{build_submission, SubmissionInput};
use crate::crypto::{keygen, KeyPair, PublicKey};
use crate::field::FieldParams;
use crate::oracle::Submission;
use crate::rng::SimRng;
use crate::smpc::ShareEnvelope;
use crate::types::{NodeId, RoundId, Timestamp};
use crate::wire::{Canonical, Decode, Writer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Honest,
    Adversarial,
}

#[derive(Clone, Debug)]
pub struct InFlight {
    pub sub: Submission,
    pub origin: Origin,
}

impl InFlight {
    pub fn honest(sub: Submission) -> Self {
        InFlight {
            sub,
            origin: Origin::Honest,
        }
    }
}

/// Public context the adversary observes for the current transmission.
pub struct ChannelEnv<'a> {
    pub round: RoundId,
    pub clock: Timestamp,
    pub oracles: &'a [(NodeId, PublicKey)],
    pub dim: usize,
    pub secure: bool,
    pub victim: &'a NodeId,
    pub params: &'a FieldParams,
}

pub const GHOST_ID: &str = "x-ghost";

pub struct Adversary {
    scenario: AttackScenario,
    keypair: KeyPair,
    sybils: Vec<(NodeId, KeyPair)>,
    rng: SimRng,
    log: Vec<u8>,
    recovered: usize,
}

impl Adversary {
    pub fn new(scenario: AttackScenario, rng: SimRng, params: &FieldParams) -> Self {
        let mut key_rng = rng.fork("keys");
        let keypair = keygen(&mut key_rng, params);
        let sybils = if scenario.kind == AttackKind::Sybil {
            (0..scenario.sybil_ids)
                .map(|i| (NodeId::new(format!("s{i:02}")), keygen(&mut key_rng, params)))
                .collect()
        } else {
            Vec::new()
        };
        Adversary {
            scenario,
            keypair,
            sybils,
            rng: rng.fork("channel"),
            log: Vec::new(),
            recovered: 0,
        }
    }

    pub fn scenario(&self) -> &AttackScenario {
        &self.scenario
    }

    /// Registration requests for the Sybil identities: the budget split
    /// evenly, remainder to the first identity.
    pub fn sybil_registrations(&self) -> Vec<(NodeId, PublicKey, u64)> {
        let n = self.sybils.len() as u64;
        if n == 0 {
            return Vec::new();
        }
        let each = self.scenario.sybil_budget / n;
        let extra = self.scenario.sybil_budget % n;
        self.sybils
            .iter()
            .enumerate()
            .map(|(i, (id, kp))| (id.clone(), kp.pk.clone(), each + if i == 0 { extra } else { 0 }))
            .collect()
    }

    /// Bytes captured by eavesdropping, plus anything it managed to decode.
    pub fn log(&self) -> &[u8] {
        &self.log
    }

    /// Submissions whose shares were all readable.
    pub fn recovered(&self) -> usize {
        self.recovered
    }

    fn forged_weights(&self, dim: usize) -> Vec<f64> {
        vec![self.scenario.lambda; dim]
    }

    fn forge(&mut self, sender: &NodeId, signer: &KeyPair, env: &ChannelEnv<'_>) -> Submission {
        let weights = self.forged_weights(env.dim);
        let input = SubmissionInput {
            round: env.round,
            sender,
            signer,
            weights: &weights,
            n_samples: 100,
            oracles: env.oracles,
            clock: env.clock,
            secure: env.secure,
        };
        build_submission(&input, env.params, &mut self.rng).expect("forged weights fit the field")
    }

    /// What the channel delivers for one transmitted message while the
    /// adversary is active.
    pub fn channel_transform(&mut self, msg: Submission, env: &ChannelEnv<'_>) -> Vec<InFlight> {
        match self.scenario.kind {
            AttackKind::Replay => {
                let copy = msg.clone();
                vec![
                    InFlight::honest(msg),
                    InFlight {
                        sub: copy,
                        origin: Origin::Adversarial,
                    },
                ]
            }
            AttackKind::MessageModification => {
                let mut sub = msg;
                if let Some(ct) = sub.ciphertexts.first_mut() {
                    let len = ct.payload.len();
                    for &off in &self.scenario.flip_offsets {
                        if len > 0 {
                            ct.payload[off % len] ^= 0xff;
                        }
                    }
                }
                vec![InFlight {
                    sub,
                    origin: Origin::Adversarial,
                }]
            }
            AttackKind::ManInTheMiddle if &msg.sender == env.victim => {
                let signer = self.keypair.clone();
                let sub = self.forge(&msg.sender, &signer, env);
                vec![InFlight {
                    sub,
                    origin: Origin::Adversarial,
                }]
            }
            AttackKind::Eavesdrop => {
                self.eavesdrop(&msg, env.params);
                vec![InFlight::honest(msg)]
            }
            _ => vec![InFlight::honest(msg)],
        }
    }

    /// Messages the adversary originates on its own in a round.
    pub fn inject(&mut self, env: &ChannelEnv<'_>) -> Vec<InFlight> {
        match self.scenario.kind {
            AttackKind::Impersonation => {
                let sender = if self.scenario.masquerade {
                    NodeId::new(GHOST_ID)
                } else {
                    env.victim.clone()
                };
                let signer = self.keypair.clone();
                let sub = self.forge(&sender, &signer, env);
                vec![InFlight {
                    sub,
                    origin: Origin::Adversarial,
                }]
            }
            AttackKind::Sybil => {
                let sybils = self.sybils.clone();
                sybils
                    .iter()
                    .map(|(id, kp)| InFlight {
                        sub: self.forge(id, kp, env),
                        origin: Origin::Adversarial,
                    })
                    .collect()
            }
            _ => Vec::new(),
        }
    }

    /// Logs the wire bytes and tries to read the shares. Only succeeds when
    /// the payloads travel unencrypted.
    fn eavesdrop(&mut self, msg: &Submission, params: &FieldParams) {
        self.log.extend_from_slice(&msg.to_canonical());
        let envelopes: Result<Vec<ShareEnvelope>, _> = msg
            .ciphertexts
            .iter()
            .map(|ct| ShareEnvelope::from_canonical(&ct.payload))
            .collect();
        let Ok(envelopes) = envelopes else { return };
        let Some(dim) = envelopes.first().map(|e| e.coords.len()) else {
            return;
        };
        if envelopes.iter().any(|e| e.coords.len() != dim) {
            return;
        }
        let mut w = Writer::new();
        for c in 0..dim {
            let sum = params.sum(envelopes.iter().map(|e| e.coords[c]));
            w.fe(sum);
        }
        self.log.extend_from_slice(&w.into_bytes());
        self.recovered += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Fe;

    struct Fixture {
        params: FieldParams,
        oracles: Vec<(NodeId, PublicKey)>,
        vehicle: KeyPair,
        victim: NodeId,
    }

    fn fixture() -> Fixture {
        let params = FieldParams::test();
        let mut rng = SimRng::new(77);
        let oracles = (0..4)
            .map(|i| (NodeId::new(format!("o{i}")), keygen(&mut rng, &params).pk))
            .collect();
        let vehicle = keygen(&mut rng, &params);
        Fixture {
            params,
            oracles,
            vehicle,
            victim: NodeId::new("v01"),
        }
    }

    fn env<'a>(fx: &'a Fixture, secure: bool) -> ChannelEnv<'a> {
        ChannelEnv {
            round: RoundId(1),
            clock: Timestamp(2),
            oracles: &fx.oracles,
            dim: 3,
            secure,
            victim: &fx.victim,
            params: &fx.params,
        }
    }

    fn honest(fx: &Fixture, secure: bool) -> Submission {
        let input = SubmissionInput {
            round: RoundId(1),
            sender: &fx.victim,
            signer: &fx.vehicle,
            weights: &[0.25, -0.75, 1.5],
            n_samples: 40,
            oracles: &fx.oracles,
            clock: Timestamp(2),
            secure,
        };
        build_submission(&input, &fx.params, &mut SimRng::new(1)).unwrap()
    }

    fn adversary(kind: AttackKind, fx: &Fixture) -> Adversary {
        Adversary::new(AttackScenario::new(kind), SimRng::new(5).fork("adv"), &fx.params)
    }

    #[test]
    fn replay_duplicates() {
        let fx = fixture();
        let msg = honest(&fx, true);
        let out = adversary(AttackKind::Replay, &fx).channel_transform(msg.clone(), &env(&fx, true));
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].sub, msg);
        assert_eq!(out[1].sub, msg);
        assert_eq!(out[1].origin, Origin::Adversarial);
    }

    #[test]
    fn modification_keeps_signature_but_changes_payload() {
        let fx = fixture();
        let msg = honest(&fx, true);
        let out = adversary(AttackKind::MessageModification, &fx).channel_transform(msg.clone(), &env(&fx, true));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].sub.sig, msg.sig);
        assert_eq!(out[0].sub.signed_bytes(), msg.signed_bytes());
        assert_ne!(out[0].sub.ciphertexts[0].payload, msg.ciphertexts[0].payload);
    }

    #[test]
    fn mitm_replaces_only_the_victim() {
        let fx = fixture();
        let msg = honest(&fx, true);
        let mut adv = adversary(AttackKind::ManInTheMiddle, &fx);
        let out = adv.channel_transform(msg.clone(), &env(&fx, true));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].sub.sender, fx.victim);
        assert_ne!(out[0].sub.sig, msg.sig);
        let mut other = msg;
        other.sender = NodeId::new("v05");
        let out = adv.channel_transform(other.clone(), &env(&fx, true));
        assert_eq!(out[0].sub, other);
        assert_eq!(out[0].origin, Origin::Honest);
    }

    #[test]
    fn passive_kinds_are_identity() {
        let fx = fixture();
        for kind in [
            AttackKind::Eavesdrop,
            AttackKind::DataPoisoning,
            AttackKind::ByzantineOracle,
            AttackKind::Sybil,
        ] {
            let msg = honest(&fx, true);
            let out = adversary(kind, &fx).channel_transform(msg.clone(), &env(&fx, true));
            assert_eq!(out.len(), 1);
            assert_eq!(out[0].sub, msg);
            assert_eq!(out[0].origin, Origin::Honest);
        }
    }

    #[test]
    fn eavesdropper_reads_nothing_through_encryption() {
        let fx = fixture();
        let mut adv = adversary(AttackKind::Eavesdrop, &fx);
        adv.channel_transform(honest(&fx, true), &env(&fx, true));
        assert_eq!(adv.recovered(), 0);
        assert!(!adv.log().is_empty());
    }

    #[test]
    fn eavesdropper_recovers_plaintext_channels() {
        let fx = fixture();
        let mut adv = adversary(AttackKind::Eavesdrop, &fx);
        adv.channel_transform(honest(&fx, false), &env(&fx, false));
        assert_eq!(adv.recovered(), 1);
        // 40 * 0.25 = 10 at scale 2^16, written as a length-prefixed element.
        let mut needle = vec![0, 0, 0, 8];
        needle.extend_from_slice(&Fe(10 * 65536).0.to_be_bytes());
        assert!(adv.log().windows(12).any(|w| w == needle.as_slice()));
    }

    #[test]
    fn sybil_budget_is_split() {
        let fx = fixture();
        let mut sc = AttackScenario::new(AttackKind::Sybil);
        sc.sybil_ids = 4;
        sc.sybil_budget = 130;
        let adv = Adversary::new(sc, SimRng::new(1), &fx.params);
        let stakes: Vec<u64> = adv.sybil_registrations().iter().map(|r| r.2).collect();
        assert_eq!(stakes, vec![34, 32, 32, 32]);
    }

    #[test]
    fn impersonation_injects_one_forgery() {
        let fx = fixture();
        let mut adv = adversary(AttackKind::Impersonation, &fx);
        let out = adv.inject(&env(&fx, true));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].sub.sender, fx.victim);
        let mut sc = AttackScenario::new(AttackKind::Impersonation);
        sc.masquerade = true;
        let mut ghost = Adversary::new(sc, SimRng::new(2), &fx.params);
        assert_eq!(ghost.inject(&env(&fx, true))[0].sub.sender.as_str(), GHOST_ID);
        assert!(adversary(AttackKind::Replay, &fx).inject(&env(&fx, true)).is_empty());
    }
}
