//! Simulation harness: configuration, the channel adversary, round
//! orchestration, the attack matrix and leak audits.

pub mod adversary;
pub mod audit;
pub mod config;
pub mod matrix;
pub mod protocol;
pub mod run;

pub use adversary::{Adversary, ChannelEnv, InFlight, Origin};
pub use config::{AttackKind, AttackScenario, ByzantineMode, Defenses, ExperimentFile, OutputSpec, SimConfig};
pub use matrix::{evaluate, matrix_rows, run_matrix, AttackReport, Row, Scoring, UNMAPPED_CLAIMS};
pub use run::{
    build_population, run_simulation, run_simulation_with, AbortInfo, LocalUpdate, Population, RoundRecord, RoundTrace,
    RunOutput,
};
