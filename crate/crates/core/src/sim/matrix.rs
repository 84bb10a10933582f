//! Attack scenarios evaluated against a paired attack-free baseline, one
//! report per row of the comparison table.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::audit::{export_bytes, Needles};
use super::config::{AttackKind, AttackScenario, ByzantineMode, SimConfig};
use super::run::{run_simulation_with, vehicle_id, RunOutput};
use crate::error::SimError;
use crate::exec::Exec;
use crate::field::FieldParams;
use crate::types::NodeId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub row: String,
    pub kind: AttackKind,
    /// More Byzantine oracles than the protocol tolerates.
    pub over_threshold: bool,
    /// A defense was deliberately disabled for comparison.
    pub control: bool,
    pub detected: bool,
    pub blocked: bool,
    pub detection_mechanism: String,
    /// |final global loss - final baseline loss| at the same seed; absent
    /// when either run committed no model.
    pub accuracy_delta: Option<f64>,
    pub slashed_nodes: Vec<NodeId>,
    pub outcome: String,
    /// The table's entry for the proposed framework.
    pub paper_claim: String,
}

impl AttackReport {
    pub fn within_tolerance(&self) -> bool {
        !self.over_threshold && !self.control
    }
}

/// Table rows with no scenario in this harness.
pub const UNMAPPED_CLAIMS: [&str; 10] = [
    "Front Running Attack",
    "Spoofing Attacks",
    "Tampering Attacks",
    "Backdoor attacks",
    "Centralized Server Compromise",
    "Model Inversion",
    "Location Pinpointing",
    "Traffic Analysis",
    "Side Channel Attack",
    "Collusion Attack",
];

/// What a matrix row runs and how it is scored.
#[derive(Clone, Debug)]
pub struct Row {
    pub label: &'static str,
    pub config: SimConfig,
    pub scoring: Scoring,
    pub paper_claim: &'static str,
    pub control: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scoring {
    Attack,
    LedgerAnonymity,
}

fn with_attack(base: &SimConfig, scenario: AttackScenario) -> SimConfig {
    let mut cfg = base.clone();
    cfg.attack = Some(scenario);
    cfg
}

/// The scenario list for `base`, in table order.
pub fn matrix_rows(base: &SimConfig) -> Vec<Row> {
    let sc = AttackScenario::new;
    let row = |label, config, claim| Row {
        label,
        config,
        scoring: Scoring::Attack,
        paper_claim: claim,
        control: false,
    };
    let mut control = with_attack(base, sc(AttackKind::DataPoisoning));
    control.defenses.norm_filter = false;
    let within = AttackScenario {
        corrupted: (0..base.f).collect(),
        ..sc(AttackKind::ByzantineOracle)
    };
    let mut over = with_attack(
        base,
        AttackScenario {
            corrupted: (0..=base.f).collect(),
            ..sc(AttackKind::ByzantineOracle)
        },
    );
    over.defenses.quorum = false;
    let masquerade = AttackScenario {
        masquerade: true,
        ..sc(AttackKind::Impersonation)
    };
    vec![
        row("Replay Attacks", with_attack(base, sc(AttackKind::Replay)), "Yes"),
        row(
            "Message Modification",
            with_attack(base, sc(AttackKind::MessageModification)),
            "Yes",
        ),
        row(
            "Man in the Middle Attack",
            with_attack(base, sc(AttackKind::ManInTheMiddle)),
            "Yes",
        ),
        row("DoS Attacks (Sybil)", with_attack(base, sc(AttackKind::Sybil)), "Yes"),
        row(
            "Data Poisoning",
            with_attack(base, sc(AttackKind::DataPoisoning)),
            "Yes",
        ),
        Row {
            control: true,
            ..row("Data Poisoning (filter disabled)", control, "n/a")
        },
        row("Byzantine Fault Tolerance Attack", with_attack(base, within), "Yes"),
        row("Byzantine Fault Tolerance Attack (f+1)", over, "n/a"),
        row("Masquerading Attacks", with_attack(base, masquerade), "Yes"),
        row("Eavesdropping", with_attack(base, sc(AttackKind::Eavesdrop)), "Yes"),
        Row {
            label: "Anonymity",
            config: with_attack(base, sc(AttackKind::Eavesdrop)),
            scoring: Scoring::LedgerAnonymity,
            paper_claim: "Yes",
            control: false,
        },
        row(
            "Non-traceability and Impersonation Attacks",
            with_attack(base, sc(AttackKind::Impersonation)),
            "Yes",
        ),
    ]
}

/// Runs the baseline and every row at the seed of `base`.
pub fn run_matrix(base: &SimConfig, exec: Exec) -> Result<Vec<AttackReport>, SimError> {
    let mut clean = base.clone();
    clean.attack = None;
    let baseline = run_simulation_with(&clean, exec)?;
    let rows = matrix_rows(base);
    let runs = exec.map(&rows, |row| run_simulation_with(&row.config, exec));
    rows.iter()
        .zip(runs)
        .map(|(row, run)| Ok(evaluate(row, &run?, &baseline)))
        .collect()
}

/// Most frequent mechanism tag; ties go to the alphabetically first.
fn dominant<'a>(tags: impl Iterator<Item = &'a str>) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in tags {
        *counts.entry(t).or_default() += 1;
    }
    counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(t, _)| t.to_string())
        .unwrap_or_default()
}

fn outcome_text(run: &RunOutput) -> String {
    if let Some(abort) = &run.trace.abort {
        return format!("aborted in round {}: {}", abort.round, abort.reason);
    }
    let committed = run.trace.rounds.iter().filter(|r| r.committed).count();
    let mut notes: BTreeSet<&str> = BTreeSet::new();
    for r in &run.trace.rounds {
        if let Some(n) = &r.note {
            notes.insert(n);
        }
    }
    let mut text = format!("committed {committed}/{} rounds", run.config.rounds);
    if !notes.is_empty() {
        text.push_str(&format!(" ({})", notes.into_iter().collect::<Vec<_>>().join("; ")));
    }
    text
}

/// Scores one attacked run against the baseline.
pub fn evaluate(row: &Row, run: &RunOutput, baseline: &RunOutput) -> AttackReport {
    let scenario = run.config.attack.clone().expect("matrix rows carry an attack");
    let params = FieldParams::for_profile(run.config.profile);
    let f = run.config.f;
    let aborted = run.trace.abort.is_some();
    let same_model = run.trace.final_weights() == baseline.trace.final_weights();
    let delta = match (run.trace.final_loss(), baseline.trace.final_loss()) {
        (Some(a), Some(b)) => Some((a - b).abs()),
        _ => None,
    };
    let adversarial: Vec<_> = run
        .trace
        .rounds
        .iter()
        .flat_map(|r| &r.submissions)
        .filter(|s| s.origin == super::adversary::Origin::Adversarial)
        .collect();
    let all_rejected = !adversarial.is_empty() && adversarial.iter().all(|s| !s.verdict.is_accepted());
    let adv_mechanism = dominant(adversarial.iter().filter_map(|s| s.verdict.mechanism()));

    let (detected, blocked, mechanism) = match (row.scoring, scenario.kind) {
        (Scoring::LedgerAnonymity, _) => {
            let needles = Needles::private_values(&run.local_updates, &run.raw_values, &params);
            let clean = needles.count_in(&export_bytes(&run.ledger.export())) == 0;
            (clean, clean, "ledger-audit".to_string())
        }
        (_, AttackKind::Eavesdrop) => {
            let needles = Needles::private_values(&run.local_updates, &run.raw_values, &params);
            let clean = run.adversary_recovered == 0 && needles.count_in(&run.adversary_log) == 0;
            (clean, clean, "encryption".to_string())
        }
        (
            _,
            AttackKind::Replay
            | AttackKind::MessageModification
            | AttackKind::ManInTheMiddle
            | AttackKind::Impersonation,
        ) => (all_rejected, all_rejected && same_model && !aborted, adv_mechanism),
        (_, AttackKind::Sybil) => {
            let cap = (scenario.sybil_budget / run.config.min_stake.max(1)) as usize;
            let detected = !run.sybil_refused.is_empty();
            let blocked = detected && all_rejected && run.sybil_admitted.len() <= cap && same_model;
            (detected, blocked, "stake".to_string())
        }
        (_, AttackKind::DataPoisoning) => {
            let poisoners: BTreeSet<NodeId> = (0..scenario.poisoners).map(vehicle_id).collect();
            let attacked = |r: &&super::run::RoundRecord| scenario.is_active(r.round);
            let flagged = run
                .trace
                .rounds
                .iter()
                .filter(attacked)
                .flat_map(|r| &r.submissions)
                .any(|s| poisoners.contains(&s.sender) && s.verdict.mechanism() == Some("norm-filter"));
            let leaked = run
                .trace
                .rounds
                .iter()
                .filter(attacked)
                .any(|r| r.committed && r.contributors.iter().any(|c| poisoners.contains(c)));
            (flagged, flagged && !leaked && !aborted, "norm-filter".to_string())
        }
        (_, AttackKind::ByzantineOracle) => match scenario.byzantine_mode {
            ByzantineMode::Partial => {
                let corrupted: BTreeSet<NodeId> =
                    scenario.corrupted.iter().map(|&i| super::run::oracle_id(i)).collect();
                let flagged: BTreeSet<NodeId> = run
                    .trace
                    .rounds
                    .iter()
                    .flat_map(|r| &r.attempts)
                    .flat_map(|a| a.failed_oracles.iter().cloned())
                    .collect();
                let detected = flagged == corrupted;
                (detected, detected && !aborted && same_model, "commitment".to_string())
            }
            ByzantineMode::Vote => {
                let corrupted: BTreeSet<NodeId> =
                    scenario.corrupted.iter().map(|&i| super::run::oracle_id(i)).collect();
                let dissent_seen = run.trace.rounds.iter().filter_map(|r| r.consensus.as_ref()).any(|c| {
                    c.votes
                        .iter()
                        .filter(|(id, _)| corrupted.contains(*id))
                        .any(|(_, v)| !v)
                });
                let all_committed = run.trace.rounds.iter().all(|r| r.committed);
                (
                    dissent_seen,
                    dissent_seen && all_committed && same_model,
                    "quorum".to_string(),
                )
            }
        },
    };
    let mut slashed = run.slashed.clone();
    slashed.sort();
    AttackReport {
        row: row.label.to_string(),
        kind: scenario.kind,
        over_threshold: scenario.over_threshold(f),
        control: row.control,
        detected,
        blocked: blocked && detected,
        detection_mechanism: if detected { mechanism } else { String::new() },
        accuracy_delta: delta,
        slashed_nodes: slashed,
        outcome: outcome_text(run),
        paper_claim: row.paper_claim.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dominant_breaks_ties_alphabetically() {
        assert_eq!(dominant(["nonce", "signature", "nonce"].into_iter()), "nonce");
        assert_eq!(dominant(["signature", "nonce"].into_iter()), "nonce");
        assert_eq!(dominant(std::iter::empty()), "");
    }

    #[test]
    fn rows_cover_the_table() {
        let rows = matrix_rows(&SimConfig::default());
        assert_eq!(rows.len(), 12);
        let over = rows.iter().find(|r| r.label.ends_with("(f+1)")).unwrap();
        assert_eq!(over.config.attack.as_ref().unwrap().corrupted, vec![0, 1]);
        assert!(!over.config.defenses.quorum);
        for r in &rows {
            r.config.validate().unwrap();
        }
    }
}
