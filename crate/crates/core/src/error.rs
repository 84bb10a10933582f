use thiserror::Error;

use crate::types::NodeId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("value {value} does not fit the field at this scale")]
    Overflow { value: f64 },
    #[error("invalid field parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("input truncated")]
    Truncated,
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
    #[error("unknown tag {0}")]
    BadTag(u8),
    #[error("unexpected length {0}")]
    BadLength(usize),
    #[error("invalid utf-8")]
    BadUtf8,
    #[error("invalid hex")]
    BadHex,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainingError {
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },
    #[error("invalid training input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("authentication tag mismatch")]
    AuthFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("oracle {0} is already slashed")]
    AlreadySlashed(NodeId),
    #[error("unknown participant {0}")]
    UnknownParticipant(NodeId),
    #[error("quorum unreachable: {active} active of {required} required")]
    QuorumUnreachable { active: usize, required: usize },
    #[error("slash fraction {0} outside [0, 1]")]
    BadFraction(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SmpcError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("envelopes span several rounds")]
    RoundMismatch,
    #[error("partial-sum proofs failed for oracles {0:?}")]
    ProofFailure(Vec<NodeId>),
    #[error("no participants in round")]
    EmptyRound,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid aggregation input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("aggregate commit rejected: proof bundle not verified")]
    UnverifiedAggregate,
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("chain broken at block {0}")]
    BrokenChain(u64),
    #[error("chain file line {line}: {source}")]
    Parse { line: usize, source: WireError },
}

/// Invalid experiment configuration, pointing at the offending field and,
/// when parsed from a file, its line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            line: None,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(line) => write!(
                f,
                "config error at line {line}, field `{}`: {}",
                self.field, self.message
            ),
            None => write!(f, "config error, field `{}`: {}", self.field, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Smpc(#[from] SmpcError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}
