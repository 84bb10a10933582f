//! `fldeco`: run the federated-learning simulation, the attack matrix, the
//! BAN checks and offline ledger audits.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 invalid configuration,
//! 3 aborted run (Byzantine oracles beyond the threshold), 4 ledger audit
//! failure (broken chain or unknown model), 5 BAN goals not established.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fldeco_core::ban::check_protocols;
use fldeco_core::error::{ConfigError, LedgerError, SimError};
use fldeco_core::exec::Exec;
use fldeco_core::field::Profile;
use fldeco_core::ledger::{import_chain, trace_provenance, verify_chain, ChainStatus, LedgerEvent};
use fldeco_core::report::{MatrixReport, Meta, RunReport};
use fldeco_core::sim::{
    evaluate, run_matrix, run_simulation_with, AttackKind, AttackScenario, ExperimentFile, Row, RunOutput, Scoring,
};
use fldeco_core::wire::Digest;

#[derive(Parser)]
#[command(
    name = "fldeco",
    version,
    about = "Secure federated learning simulation for vehicular networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its trace, report and chain.
    Run(SimArgs),
    /// Run every attack scenario against a paired baseline.
    Matrix(SimArgs),
    /// Check the BAN-logic goals and their ablations.
    Ban {
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Verify an exported chain and print the lineage of a model.
    Audit {
        chain: PathBuf,
        /// Hex model hash as printed by `run`.
        model_hash: String,
    },
}

#[derive(Args, Clone)]
struct SimArgs {
    /// Experiment file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<u64>,
    /// Attack scenario for `run`, e.g. replay or data_poisoning.
    #[arg(long, value_parser = parse_attack)]
    attack: Option<AttackKind>,
    /// Disable the norm filter (the control configuration).
    #[arg(long)]
    no_defense: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    /// Run on a single thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Test,
    Secure,
}

fn parse_attack(s: &str) -> Result<AttackKind, String> {
    AttackKind::parse(s).ok_or_else(|| {
        let names: Vec<_> = AttackKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown attack {s:?}; expected one of {}", names.join(", "))
    })
}

enum Outcome {
    Ok,
    Aborted,
    AuditFailed,
    BanFailed,
}

struct Resolved {
    file: ExperimentFile,
    file_bytes: Option<Vec<u8>>,
    out_dir: PathBuf,
    exec: Exec,
}

fn resolve(args: &SimArgs) -> Result<Resolved> {
    let (mut file, file_bytes) = match &args.config {
        Some(path) => {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            let text = String::from_utf8(bytes.clone()).with_context(|| format!("{} is not UTF-8", path.display()))?;
            (ExperimentFile::from_toml(&text)?, Some(bytes))
        }
        None => (ExperimentFile::default(), None),
    };
    let sim = &mut file.simulation;
    if let Some(seed) = args.seed {
        sim.seed = seed;
    }
    if let Some(rounds) = args.rounds {
        sim.rounds = rounds;
    }
    if let Some(kind) = args.attack {
        sim.attack = Some(AttackScenario::new(kind));
    }
    if args.no_defense {
        sim.defenses.norm_filter = false;
    }
    if let Some(p) = args.profile {
        sim.profile = match p {
            ProfileArg::Test => Profile::Test,
            ProfileArg::Secure => Profile::Secure,
        };
    }
    sim.validate()?;
    let out_dir = args.out_dir.clone().unwrap_or_else(|| PathBuf::from(&file.output.dir));
    let exec = if args.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    Ok(Resolved {
        file,
        file_bytes,
        out_dir,
        exec,
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(args: &SimArgs) -> Result<Outcome> {
    let r = resolve(args)?;
    let cfg = &r.file.simulation;
    let run = run_simulation_with(cfg, r.exec)?;
    let attack = match &cfg.attack {
        Some(scenario) => {
            let mut clean = cfg.clone();
            clean.attack = None;
            let baseline = run_simulation_with(&clean, r.exec)?;
            let row = Row {
                label: scenario.kind.name(),
                config: cfg.clone(),
                scoring: Scoring::Attack,
                paper_claim: "",
                control: !cfg.defenses.norm_filter,
            };
            Some(evaluate(&row, &run, &baseline))
        }
        None => None,
    };
    let ban = check_protocols();
    let report = RunReport::new(&run, Meta::new(cfg, r.file_bytes.as_deref()), attack, &ban);

    write(&r.out_dir, "trace.json", &run.trace.to_json())?;
    write(&r.out_dir, "report.json", &report.to_json())?;
    if r.file.output.export_chain {
        write(&r.out_dir, "chain.txt", &run.ledger.export())?;
    }

    println!("seed {} profile {} rounds {}", cfg.seed, cfg.profile, cfg.rounds);
    println!(
        "{:>5}  {:>9}  {:>12}  {:>12}",
        "round", "committed", "loss", "param_error"
    );
    for row in &report.rounds {
        println!(
            "{:>5}  {:>9}  {:>12.6}  {:>12.6}",
            row.round, row.committed, row.global_loss, row.param_error
        );
    }
    if let Some(a) = &report.attack {
        println!(
            "attack {}: detected={} blocked={} mechanism={} delta={}",
            a.kind.name(),
            a.detected,
            a.blocked,
            if a.detection_mechanism.is_empty() {
                "-"
            } else {
                &a.detection_mechanism
            },
            fmt_delta(a.accuracy_delta)
        );
    }
    if let Some(hash) = final_model_hash(&run) {
        println!("final model {hash}");
    }
    println!("ledger tip {} ({} blocks)", report.ledger_tip, report.ledger_blocks);
    println!("wrote {}", r.out_dir.display());
    if let Some(abort) = &report.abort {
        eprintln!("error: run aborted in round {}: {}", abort.round, abort.reason);
        return Ok(Outcome::Aborted);
    }
    Ok(Outcome::Ok)
}

/// Hash of the last model committed to the ledger.
fn final_model_hash(run: &RunOutput) -> Option<Digest> {
    run.ledger.blocks().iter().rev().find_map(|b| match &b.payload {
        LedgerEvent::Provenance(p) => Some(p.model_hash),
        _ => None,
    })
}

fn cmd_matrix(args: &SimArgs) -> Result<Outcome> {
    if args.attack.is_some() {
        bail!("--attack selects a single scenario; use `run` for that");
    }
    let r = resolve(args)?;
    let cfg = &r.file.simulation;
    let rows = run_matrix(cfg, r.exec)?;
    let report = MatrixReport::new(Meta::new(cfg, r.file_bytes.as_deref()), rows);
    write(&r.out_dir, "matrix.json", &report.to_json())?;
    write(&r.out_dir, "matrix.csv", &report.to_csv())?;

    println!(
        "{:<44} {:>8} {:>7} {:<13} {:>10}  claim",
        "scenario", "detected", "blocked", "mechanism", "delta"
    );
    for row in &report.rows {
        println!(
            "{:<44} {:>8} {:>7} {:<13} {:>10}  {}",
            row.row,
            row.detected,
            row.blocked,
            if row.detection_mechanism.is_empty() {
                "-"
            } else {
                &row.detection_mechanism
            },
            fmt_delta(row.accuracy_delta),
            row.paper_claim
        );
    }
    println!("not simulated: {}", report.unmapped_claims.join(", "));
    println!("wrote {}", r.out_dir.display());
    Ok(Outcome::Ok)
}

fn fmt_delta(d: Option<f64>) -> String {
    d.map_or_else(|| "-".to_string(), |d| format!("{d:.3e}"))
}

fn cmd_ban(out_dir: Option<&Path>) -> Result<Outcome> {
    let report = check_protocols();
    let text = report.render_text();
    print!("{text}");
    if let Some(dir) = out_dir {
        write(dir, "ban.txt", &text)?;
    }
    if report.goals_proved() && report.ablations_unproved() {
        Ok(Outcome::Ok)
    } else {
        eprintln!("error: BAN goals not established as expected");
        Ok(Outcome::BanFailed)
    }
}

fn cmd_audit(chain: &Path, model_hash: &str) -> Result<Outcome> {
    let text = fs::read_to_string(chain).with_context(|| format!("reading {}", chain.display()))?;
    let hash = Digest::from_hex(model_hash.trim()).map_err(|e| anyhow::anyhow!("model hash: {e}"))?;
    let blocks = match import_chain(&text) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(Outcome::AuditFailed);
        }
    };
    if let ChainStatus::BrokenAt(i) = verify_chain(&blocks) {
        eprintln!("error: {}", LedgerError::BrokenChain(i));
        return Ok(Outcome::AuditFailed);
    }
    println!("chain valid: {} blocks", blocks.len());
    match trace_provenance(&blocks, &hash) {
        Ok(lineage) => {
            for rec in &lineage {
                let contributors: Vec<_> = rec.contributor_ids.iter().map(|c| c.as_str()).collect();
                let oracles: Vec<_> = rec.oracle_ids.iter().map(|c| c.as_str()).collect();
                println!(
                    "round {:>3}  model {}  parent {}  contributors [{}]  oracles [{}]  proof {}",
                    rec.round.0,
                    rec.model_hash,
                    rec.parent_model_hash,
                    contributors.join(","),
                    oracles.join(","),
                    rec.proof_bundle_hash
                );
            }
            Ok(Outcome::Ok)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Ok(Outcome::AuditFailed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Matrix(args) => cmd_matrix(args),
        Command::Ban { out_dir } => cmd_ban(out_dir.as_deref()),
        Command::Audit { chain, model_hash } => cmd_audit(chain, model_hash),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Aborted) => ExitCode::from(3),
        Ok(Outcome::AuditFailed) => ExitCode::from(4),
        Ok(Outcome::BanFailed) => ExitCode::from(5),
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<ConfigError>().is_some()
                || matches!(e.downcast_ref::<SimError>(), Some(SimError::Config(_)));
            if config {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
