pub mod ban;
pub mod crypto;
pub mod error;
pub mod exec;
pub mod field;
pub mod ledger;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod sim;
pub mod smpc;
pub mod training;
pub mod types;
pub mod wire;
