use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::field::Profile;
use crate::oracle::ByzantineVote;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Replay,
    MessageModification,
    ManInTheMiddle,
    Sybil,
    DataPoisoning,
    ByzantineOracle,
    Impersonation,
    Eavesdrop,
}

impl AttackKind {
    pub const ALL: [AttackKind; 8] = [
        AttackKind::Replay,
        AttackKind::MessageModification,
        AttackKind::ManInTheMiddle,
        AttackKind::Sybil,
        AttackKind::DataPoisoning,
        AttackKind::ByzantineOracle,
        AttackKind::Impersonation,
        AttackKind::Eavesdrop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Replay => "replay",
            AttackKind::MessageModification => "message_modification",
            AttackKind::ManInTheMiddle => "man_in_the_middle",
            AttackKind::Sybil => "sybil",
            AttackKind::DataPoisoning => "data_poisoning",
            AttackKind::ByzantineOracle => "byzantine_oracle",
            AttackKind::Impersonation => "impersonation",
            AttackKind::Eavesdrop => "eavesdrop",
        }
    }

    pub fn parse(s: &str) -> Option<AttackKind> {
        AttackKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// How corrupted computation oracles misbehave.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByzantineMode {
    /// Submit a well-signed partial sum that is off by one in a coordinate.
    Partial,
    /// Compute honestly but vote according to the scripted vote.
    Vote,
}

/// Adversary configuration. Fields that do not apply to `kind` are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackScenario {
    pub kind: AttackKind,
    /// First round (1-based) in which the adversary acts.
    pub start_round: u64,
    /// Poison strength: a poisoner submits `-lambda * w*`.
    pub lambda: f64,
    /// Number of poisoning vehicles, taken from the lowest vehicle indices.
    pub poisoners: usize,
    pub sybil_ids: usize,
    /// Total stake the Sybil adversary can spread over its identities.
    pub sybil_budget: u64,
    /// Indices of corrupted computation oracles.
    pub corrupted: Vec<usize>,
    pub byzantine_mode: ByzantineMode,
    pub vote: ByzantineVote,
    /// Byte offsets flipped in the first ciphertext payload.
    pub flip_offsets: Vec<usize>,
    /// Vehicle index targeted by interception attacks.
    pub victim: usize,
    /// Impersonate an identity that was never registered instead of a
    /// registered vehicle.
    pub masquerade: bool,
}

impl Default for AttackScenario {
    fn default() -> Self {
        AttackScenario {
            kind: AttackKind::Replay,
            start_round: 1,
            lambda: 100.0,
            poisoners: 1,
            sybil_ids: 10,
            sybil_budget: 120,
            corrupted: vec![0],
            byzantine_mode: ByzantineMode::Partial,
            vote: ByzantineVote::AlwaysNo,
            flip_offsets: vec![0],
            victim: 1,
            masquerade: false,
        }
    }
}

impl AttackScenario {
    pub fn new(kind: AttackKind) -> Self {
        AttackScenario {
            kind,
            ..AttackScenario::default()
        }
    }

    pub fn is_active(&self, round: u64) -> bool {
        round >= self.start_round
    }

    /// More corrupted oracles than the protocol tolerates.
    pub fn over_threshold(&self, f: usize) -> bool {
        self.kind == AttackKind::ByzantineOracle && self.corrupted.len() > f
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Defenses {
    /// Reject submissions whose declared norm exceeds the threshold.
    pub norm_filter: bool,
    /// Require a 2f+1 oracle vote before committing an aggregate.
    pub quorum: bool,
    /// Encrypt and authenticate share envelopes. Turning this off models a
    /// violated secure-channel assumption.
    pub secure_channel: bool,
}

impl Default for Defenses {
    fn default() -> Self {
        Defenses {
            norm_filter: true,
            quorum: true,
            secure_channel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub seed: u64,
    pub n_vehicles: usize,
    pub f: usize,
    /// Must equal `3f + 1` when given; derived otherwise.
    pub n_oracles: Option<usize>,
    pub rounds: u64,
    /// Model dimension including the bias term.
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub noise_std: f64,
    pub samples_per_vehicle: usize,
    /// Per-vehicle feature shifts are uniform in `[-shift_spread, shift_spread]`.
    pub shift_spread: f64,
    pub eval_samples: usize,
    pub min_stake: u64,
    pub vehicle_stake: u64,
    pub oracle_stake: u64,
    pub slash_fraction: f64,
    /// Norm threshold. When absent it is calibrated in the first round as
    /// `tau_multiplier` times the median declared norm.
    pub tau: Option<f64>,
    pub tau_multiplier: f64,
    /// Timestamp acceptance window in ticks.
    pub delta: u64,
    pub profile: Profile,
    pub defenses: Defenses,
    pub attack: Option<AttackScenario>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 7,
            n_vehicles: 10,
            f: 1,
            n_oracles: None,
            rounds: 20,
            dim: 4,
            epochs: 20,
            lr: 0.1,
            noise_std: 0.1,
            samples_per_vehicle: 100,
            shift_spread: 0.5,
            eval_samples: 10_000,
            min_stake: 60,
            vehicle_stake: 60,
            oracle_stake: 100,
            slash_fraction: 0.5,
            tau: None,
            tau_multiplier: 5.0,
            delta: 2,
            profile: Profile::Test,
            defenses: Defenses::default(),
            attack: None,
        }
    }
}

impl SimConfig {
    pub fn oracle_count(&self) -> usize {
        3 * self.f + 1
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("n_vehicles", self.n_vehicles as u64),
            ("f", self.f as u64),
            ("rounds", self.rounds),
            ("epochs", self.epochs as u64),
            ("samples_per_vehicle", self.samples_per_vehicle as u64),
            ("eval_samples", self.eval_samples as u64),
            ("delta", self.delta),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(ConfigError::new(field, "must be >= 1"));
            }
        }
        if let Some(n) = self.n_oracles {
            if n != self.oracle_count() {
                return Err(ConfigError::new(
                    "n_oracles",
                    format!("{n} != 3f+1 = {} for f = {}", self.oracle_count(), self.f),
                ));
            }
        }
        if self.dim < 2 {
            return Err(ConfigError::new(
                "dim",
                "must be >= 2 (at least one feature plus the bias)",
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ConfigError::new("lr", "must be a positive finite number"));
        }
        for (field, v) in [("noise_std", self.noise_std), ("shift_spread", self.shift_spread)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::new(field, "must be a non-negative finite number"));
            }
        }
        if !(0.0..=1.0).contains(&self.slash_fraction) {
            return Err(ConfigError::new("slash_fraction", "must lie in [0, 1]"));
        }
        if self.oracle_stake < self.min_stake {
            return Err(ConfigError::new(
                "oracle_stake",
                "below min_stake, oracles could not register",
            ));
        }
        if self.vehicle_stake < self.min_stake {
            return Err(ConfigError::new(
                "vehicle_stake",
                "below min_stake, vehicles could not register",
            ));
        }
        if let Some(tau) = self.tau {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(ConfigError::new("tau", "must be a positive finite number"));
            }
        }
        if !(self.tau_multiplier > 0.0 && self.tau_multiplier.is_finite()) {
            return Err(ConfigError::new("tau_multiplier", "must be a positive finite number"));
        }
        if self.profile == Profile::Tiny {
            return Err(ConfigError::new(
                "profile",
                "the tiny group is for tests only; use \"test\" or \"secure\"",
            ));
        }
        if let Some(attack) = &self.attack {
            self.validate_attack(attack)?;
        }
        Ok(())
    }

    fn validate_attack(&self, a: &AttackScenario) -> Result<(), ConfigError> {
        if a.start_round == 0 {
            return Err(ConfigError::new("attack.start_round", "rounds are 1-based"));
        }
        match a.kind {
            AttackKind::DataPoisoning => {
                if a.poisoners == 0 || a.poisoners >= self.n_vehicles {
                    return Err(ConfigError::new("attack.poisoners", "must be in [1, n_vehicles)"));
                }
                if !(a.lambda.is_finite() && a.lambda > 0.0) {
                    return Err(ConfigError::new("attack.lambda", "must be a positive finite number"));
                }
            }
            AttackKind::ByzantineOracle => {
                let n = self.oracle_count();
                let mut seen = a.corrupted.clone();
                seen.sort_unstable();
                seen.dedup();
                if seen.is_empty() || seen.len() != a.corrupted.len() || seen.iter().any(|&i| i >= n) {
                    return Err(ConfigError::new(
                        "attack.corrupted",
                        format!("must list distinct oracle indices below {n}"),
                    ));
                }
            }
            AttackKind::Sybil if a.sybil_ids == 0 => {
                return Err(ConfigError::new("attack.sybil_ids", "must be >= 1"));
            }
            AttackKind::ManInTheMiddle
            | AttackKind::Impersonation
            | AttackKind::Replay
            | AttackKind::MessageModification
                if a.victim >= self.n_vehicles =>
            {
                return Err(ConfigError::new("attack.victim", "must index an existing vehicle"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Canonical JSON used for digests and embedded in reports.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Experiment file: simulation parameters plus output settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentFile {
    pub simulation: SimConfig,
    pub output: OutputSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: String,
    /// Also write the chain export next to the run report.
    pub export_chain: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: "out".into(),
            export_chain: true,
        }
    }
}

impl ExperimentFile {
    /// Parses and validates an experiment file. Errors carry the line of
    /// the offending key where the parser can locate it.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let file: ExperimentFile = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            let message = e.message().to_string();
            let field = message
                .split('`')
                .nth(1)
                .filter(|_| message.starts_with("unknown field"))
                .unwrap_or("<document>")
                .to_string();
            ConfigError { field, line, message }
        })?;
        file.simulation.validate().map_err(|mut e| {
            e.line = locate_key(text, &e.field);
            e.field = format!("simulation.{}", e.field);
            e
        })?;
        Ok(file)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment file serializes")
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

/// Line of `key = ...` for a possibly dotted field name, searching the
/// matching table when the field is nested.
fn locate_key(text: &str, field: &str) -> Option<usize> {
    let (table, key) = match field.rsplit_once('.') {
        Some((t, k)) => (format!("simulation.{t}"), k),
        None => ("simulation".to_string(), field),
    };
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if current == table && line.split('=').next().map(str::trim) == Some(key) {
            return Some(i + 1);
        }
    }
    None
}
