//! Machine-readable reports. Every report embeds the seed, a digest of the
//! effective configuration and the code version, and contains nothing that
//! depends on wall-clock time, so identical inputs give identical bytes.

use serde::{Deserialize, Serialize};

use crate::ban::BanReport;
use crate::sim::{AbortInfo, AttackKind, AttackReport, RunOutput, SimConfig, UNMAPPED_CLAIMS};
use crate::types::NodeId;
use crate::wire::Digest;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub version: String,
    pub seed: u64,
    pub profile: String,
    /// SHA-256 of the effective configuration in canonical JSON.
    pub config_digest: Digest,
    /// SHA-256 of the experiment file as read, when there was one.
    pub config_file_digest: Option<Digest>,
}

impl Meta {
    pub fn new(cfg: &SimConfig, file_bytes: Option<&[u8]>) -> Self {
        Meta {
            version: VERSION.to_string(),
            seed: cfg.seed,
            profile: cfg.profile.to_string(),
            config_digest: Digest::of(cfg.canonical_json().as_bytes()),
            config_file_digest: file_bytes.map(Digest::of),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: u64,
    pub committed: bool,
    pub global_loss: f64,
    pub param_error: f64,
    pub accepted: usize,
    pub rejected: usize,
    pub contributors: usize,
    pub excluded_oracles: Vec<NodeId>,
    /// "committed", "aborted" or absent when the vote is disabled.
    pub consensus: Option<String>,
    pub note: Option<String>,
    pub ledger_tip: Digest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanSummary {
    pub goals_proved: bool,
    pub ablations_unproved: bool,
    pub cases: usize,
}

impl From<&BanReport> for BanSummary {
    fn from(r: &BanReport) -> Self {
        BanSummary {
            goals_proved: r.goals_proved(),
            ablations_unproved: r.ablations_unproved(),
            cases: r.cases.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub meta: Meta,
    pub ground_truth: Vec<f64>,
    pub tau: Option<f64>,
    pub rounds: Vec<RoundRow>,
    pub final_weights: Vec<f64>,
    pub final_loss: Option<f64>,
    pub ledger_blocks: usize,
    pub ledger_tip: Digest,
    pub abort: Option<AbortInfo>,
    pub attack: Option<AttackReport>,
    pub ban: BanSummary,
}

impl RunReport {
    pub fn new(run: &RunOutput, meta: Meta, attack: Option<AttackReport>, ban: &BanReport) -> Self {
        let rounds = run
            .trace
            .rounds
            .iter()
            .map(|r| {
                let accepted = r.submissions.iter().filter(|s| s.verdict.is_accepted()).count();
                RoundRow {
                    round: r.round,
                    committed: r.committed,
                    global_loss: r.global_loss,
                    param_error: r.param_error,
                    accepted,
                    rejected: r.submissions.len() - accepted,
                    contributors: r.contributors.len(),
                    excluded_oracles: r.excluded_oracles.clone(),
                    consensus: r.consensus.as_ref().map(|c| format!("{:?}", c.outcome).to_lowercase()),
                    note: r.note.clone(),
                    ledger_tip: r.ledger_tip,
                }
            })
            .collect();
        RunReport {
            meta,
            ground_truth: run.trace.ground_truth.clone(),
            tau: run.trace.tau.filter(|t| t.is_finite()),
            rounds,
            final_weights: run.trace.final_weights().map(<[f64]>::to_vec).unwrap_or_default(),
            final_loss: run.trace.final_loss(),
            ledger_blocks: run.ledger.len(),
            ledger_tip: run.ledger.tip_hash(),
            abort: run.trace.abort.clone(),
            attack,
            ban: BanSummary::from(ban),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub meta: Meta,
    pub rows: Vec<AttackReport>,
    /// Table rows with no corresponding scenario.
    pub unmapped_claims: Vec<String>,
}

/// Flat CSV form of one matrix row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub row: String,
    pub kind: AttackKind,
    pub over_threshold: bool,
    pub control: bool,
    pub detected: bool,
    pub blocked: bool,
    pub detection_mechanism: String,
    /// Empty when no model was committed.
    pub accuracy_delta: Option<f64>,
    /// Semicolon-separated.
    pub slashed_nodes: String,
    pub outcome: String,
    pub paper_claim: String,
}

pub const CSV_HEADER: &str =
    "row,kind,over_threshold,control,detected,blocked,detection_mechanism,accuracy_delta,slashed_nodes,outcome,paper_claim";

impl From<&AttackReport> for CsvRow {
    fn from(r: &AttackReport) -> Self {
        CsvRow {
            row: r.row.clone(),
            kind: r.kind,
            over_threshold: r.over_threshold,
            control: r.control,
            detected: r.detected,
            blocked: r.blocked,
            detection_mechanism: r.detection_mechanism.clone(),
            accuracy_delta: r.accuracy_delta,
            slashed_nodes: r.slashed_nodes.iter().map(NodeId::as_str).collect::<Vec<_>>().join(";"),
            outcome: r.outcome.clone(),
            paper_claim: r.paper_claim.clone(),
        }
    }
}

impl MatrixReport {
    pub fn new(meta: Meta, rows: Vec<AttackReport>) -> Self {
        MatrixReport {
            meta,
            rows,
            unmapped_claims: UNMAPPED_CLAIMS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(CsvRow::from(r)).expect("csv rows serialize");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
    }

    /// Every within-tolerance row that the table marks "Yes" is blocked.
    pub fn claims_hold(&self) -> bool {
        self.rows
            .iter()
            .filter(|r| r.within_tolerance() && r.paper_claim == "Yes")
            .all(|r| r.blocked)
    }
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_row() -> AttackReport {
        AttackReport {
            row: "Replay Attacks".into(),
            kind: AttackKind::Replay,
            over_threshold: false,
            control: false,
            detected: true,
            blocked: true,
            detection_mechanism: "nonce".into(),
            accuracy_delta: Some(0.0),
            slashed_nodes: vec![NodeId::new("o0"), NodeId::new("o1")],
            outcome: "committed 3/3 rounds, with \"notes\"".into(),
            paper_claim: "Yes".into(),
        }
    }

    #[test]
    fn csv_header_is_stable_and_round_trips() {
        let report = MatrixReport::new(Meta::new(&SimConfig::default(), None), vec![sample_row()]);
        let csv = report.to_csv();
        assert_eq!(csv.lines().next(), Some(CSV_HEADER));
        let parsed = parse_csv(&csv).unwrap();
        assert_eq!(parsed, vec![CsvRow::from(&report.rows[0])]);
        assert_eq!(parsed[0].slashed_nodes, "o0;o1");
    }

    #[test]
    fn missing_delta_round_trips() {
        let mut row = sample_row();
        row.accuracy_delta = None;
        let report = MatrixReport::new(Meta::new(&SimConfig::default(), None), vec![row]);
        assert_eq!(parse_csv(&report.to_csv()).unwrap()[0].accuracy_delta, None);
        let back: MatrixReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn matrix_json_round_trips() {
        let report = MatrixReport::new(Meta::new(&SimConfig::default(), Some(b"seed = 7")), vec![sample_row()]);
        let back: MatrixReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);
        assert!(report.claims_hold());
        assert_eq!(report.unmapped_claims[0], "Front Running Attack");
    }

    #[test]
    fn digest_tracks_config() {
        let a = Meta::new(&SimConfig::default(), None);
        let b = Meta::new(
            &SimConfig {
                seed: 8,
                ..SimConfig::default()
            },
            None,
        );
        assert_ne!(a.config_digest, b.config_digest);
        assert_eq!(a, Meta::new(&SimConfig::default(), None));
    }
}
