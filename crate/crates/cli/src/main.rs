//! `consentledger` command-line driver.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use consentledger_core::anchor::AnchorRegistry;
use consentledger_core::audit::{anchor_mismatches, import_blocks_jsonl, recompute_and_check};
use consentledger_core::poc::NetworkConfig;
use consentledger_core::scenario::{fixtures, run_scenario, write_bundle, FixtureSet, RunConfig};
use consentledger_core::verifier::{verify_trails, Claim, TrailStatus};

#[derive(Parser)]
#[command(name = "consentledger", version, about = "Consent-based access control with an auditable compliance ledger")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario script and write the report bundle.
    Run {
        #[arg(long)]
        fixtures: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Replaces the fixture directory's policies.jsonl.
        #[arg(long)]
        policy_file: Option<PathBuf>,
        /// JSON network config (auditors, validators, quorum, faults, ...).
        #[arg(long)]
        network: Option<PathBuf>,
    },
    /// Check a subject's own trail entries against the chain and anchors.
    Verify {
        #[arg(long)]
        subject: String,
        /// JSONL of {height, transaction}, as written under claims/.
        #[arg(long)]
        claims: PathBuf,
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        anchors: PathBuf,
    },
    /// Recompute a chain export and compare it with an anchor dump.
    CheckChain {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        anchors: PathBuf,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_chain(chain: &Path, anchors: &Path) -> Result<(Vec<Vec<u8>>, std::sync::Arc<AnchorRegistry>)> {
    let blocks = import_blocks_jsonl(&read(chain)?)?;
    let registry = AnchorRegistry::import_jsonl(&read(anchors)?)?;
    Ok((blocks, registry))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Cmd::Run { fixtures: dir, scenario, seed, out, policy_file, network } => {
            let mut set = FixtureSet::read(&dir)?;
            if let Some(p) = policy_file {
                set.policies = fixtures::read_jsonl(&p)?;
            }
            let mut config = RunConfig::new(seed);
            if let Some(p) = network {
                config.network = serde_json::from_str::<NetworkConfig>(&read(&p)?).context("network config")?;
            }
            let bundle = run_scenario(&set, &read(&scenario)?, &config)?;
            write_bundle(&bundle, &out)?;
            print!("{}", bundle.summary.text());
            for v in &bundle.violations {
                eprintln!("violation: {v}");
            }
            Ok(bundle.is_clean())
        }
        Cmd::Verify { subject, claims, chain, anchors } => {
            let (blocks, registry) = load_chain(&chain, &anchors)?;
            let claims: Vec<Claim> = fixtures::read_jsonl(&claims)?;
            let report = verify_trails(&blocks, &registry, &subject, &claims)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(report.overall == TrailStatus::NotModified)
        }
        Cmd::CheckChain { chain, anchors } => {
            let (blocks, registry) = load_chain(&chain, &anchors)?;
            let check = recompute_and_check(&blocks);
            let mismatches = anchor_mismatches(&blocks, &registry);
            let out = BTreeMap::from([
                ("chain_check", serde_json::to_value(&check)?),
                ("anchor_mismatches", serde_json::to_value(&mismatches)?),
            ]);
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(check.is_ok() && mismatches.is_empty())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
