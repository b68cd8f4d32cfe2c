//! Configuration-driven front end for `ldp-core`.
//!
//! Every subcommand reads one TOML experiment file, applies `--override`
//! edits, and writes CSV (or path/trajectory text) artifacts carrying a `#`
//! preamble with the tool version, config hash and seed.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use ldp_core::torus_spectral::SpectralCache;
use ldp_core::{Error, Model};

use crate::commands::Outcome;
use crate::config::LoadedConfig;
use crate::output::Metadata;

#[derive(Debug, Clone, Parser)]
#[command(name = "jumpldp", version, about = "Rate functions and rare-event checks for jump processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Experiment file (TOML).
    #[arg(long, global = true, env = "JUMPLDP_CONFIG")]
    pub config: Option<PathBuf>,

    /// Output directory; defaults to `output.dir` or `./jumpldp-out`.
    #[arg(long, global = true, env = "JUMPLDP_OUT")]
    pub out: Option<PathBuf>,

    /// Directory for cached spectral solves.
    #[arg(long, global = true, env = "JUMPLDP_CACHE")]
    pub cache: Option<PathBuf>,

    /// Replaces `simulation.seed`.
    #[arg(long, global = true, env = "JUMPLDP_SEED")]
    pub seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "JUMPLDP_WORKERS")]
    pub workers: Option<usize>,

    /// `KEY=VALUE` edit of the config, with dotted keys. Repeatable; the
    /// environment variable takes a `;`-separated list.
    #[arg(
        long = "override",
        global = true,
        env = "JUMPLDP_OVERRIDE",
        value_delimiter = ';'
    )]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Kernel and environment invariant suite.
    Validate,
    /// `H(λ)` on a tilt grid.
    HamiltonianScan,
    /// `L(ζ)` on a velocity grid.
    LagrangianScan,
    /// Principal-eigenvalue region membership on a tilt grid.
    GammaRegion,
    /// Effective drift, diffusion and correctors at zero tilt.
    EffectiveCoeffs,
    /// Action of a piecewise-linear path.
    Rate,
    /// Effective flow from a starting point.
    Flow,
    /// Sample trajectories.
    Simulate,
    /// Rare-event estimates over a sequence of scales, against theory.
    LdpVerify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::HamiltonianScan => "hamiltonian-scan",
            Command::LagrangianScan => "lagrangian-scan",
            Command::GammaRegion => "gamma-region",
            Command::EffectiveCoeffs => "effective-coeffs",
            Command::Rate => "rate",
            Command::Flow => "flow",
            Command::Simulate => "simulate",
            Command::LdpVerify => "ldp-verify",
        }
    }

    fn uses_seed(self) -> bool {
        matches!(self, Command::Simulate | Command::LdpVerify)
    }
}

/// Outcome of a run together with where its artifacts went.
#[derive(Debug, Clone)]
pub struct Report {
    pub outcome: Outcome,
    pub written: Vec<PathBuf>,
    pub metadata: Metadata,
}

pub fn load(cli: &Cli) -> Result<LoadedConfig, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("--config is required".into()))?;
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("simulation.seed={seed}"));
    }
    LoadedConfig::load(path, &overrides)
}

fn out_dir(cli: &Cli, cfg: &LoadedConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.config.output.dir.as_ref().map(|d| cfg.resolve(d)))
        .unwrap_or_else(|| PathBuf::from("jumpldp-out"))
}

/// Runs the subcommand on an already loaded config without writing files.
pub fn execute(command: Command, cfg: &LoadedConfig, cache: Option<PathBuf>) -> Result<Outcome, Error> {
    let mut model: Model = cfg.model()?;
    if let Some(dir) = cache.or_else(|| cfg.config.output.cache.as_ref().map(|d| cfg.resolve(d))) {
        model = model.with_cache(SpectralCache::new(dir)?);
    }
    match command {
        Command::Validate => commands::validate(cfg, &model),
        Command::HamiltonianScan => commands::hamiltonian_scan(cfg, &model),
        Command::LagrangianScan => commands::lagrangian_scan(cfg, &model),
        Command::GammaRegion => commands::gamma_region_cmd(cfg, &model),
        Command::EffectiveCoeffs => commands::effective_coeffs(cfg, &model),
        Command::Rate => commands::rate_cmd(cfg, &model),
        Command::Flow => commands::flow_cmd(cfg, &model),
        Command::Simulate => commands::simulate(cfg, &model),
        Command::LdpVerify => commands::ldp_verify(cfg, &model),
    }
}

/// Loads the config, runs the subcommand on a pool of `--workers` threads
/// and writes the artifacts.
pub fn run(cli: &Cli) -> Result<Report, Error> {
    let cfg = load(cli)?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.workers {
            b = b.num_threads(n);
        }
        b.build()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?
    };
    let outcome = pool.install(|| execute(cli.command, &cfg, cli.cache.clone()))?;
    let metadata = Metadata {
        command: cli.command.name().into(),
        config_hash: cfg.hash.clone(),
        seed: if cli.command.uses_seed() {
            cfg.config.simulation.as_ref().map(|s| s.seed)
        } else {
            None
        },
    };
    let dir = out_dir(cli, &cfg);
    let written = outcome
        .artifacts
        .iter()
        .map(|a| a.write(&dir, &metadata))
        .collect::<Result<_, _>>()?;
    Ok(Report {
        outcome,
        written,
        metadata,
    })
}
