mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::commands::Rendered;
use crate::manifest::{default_manifest_path, sha256_hex, write_atomic, OutputDigest, RunManifest};

#[derive(Parser, Debug, Serialize)]
#[command(
    name = "profile-lp",
    version,
    about = "Profile estimation from Bernoulli subsamples, modulus LPs and Laguerre witnesses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Master seed; every random draw derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file (standard output when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Run manifest path (default `<out>.manifest.json`, or standard error).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Worker threads.
    #[arg(long, global = true, env = "PROFILE_LP_THREADS")]
    threads: Option<usize>,

    /// Add wall-clock timings to the outputs. Such outputs cannot be replayed bit-for-bit.
    #[arg(long, global = true)]
    timings: bool,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Estimate the profile of an urn from a Bernoulli subsample.
    Estimate(commands::EstimateArgs),
    /// Solve one modulus-of-continuity program.
    Modulus(commands::ModulusArgs),
    /// Build a Laguerre witness, or certify a lower bound on delta_*(t).
    Witness(commands::WitnessArgs),
    /// Monte Carlo risk over a grid of (k, p).
    RiskSweep(commands::RiskSweepArgs),
    /// Lower bound on the estimation error of the mean type size.
    Impossibility(commands::ImpossibilityArgs),
    /// Rerun a manifest and compare output digests.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Serialize)]
struct ReplayArgs {
    /// Manifest written by an earlier run.
    path: PathBuf,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Estimate(_) => "estimate",
            Command::Modulus(_) => "modulus",
            Command::Witness(_) => "witness",
            Command::RiskSweep(_) => "risk-sweep",
            Command::Impossibility(_) => "impossibility",
            Command::Replay(_) => "replay",
        }
    }
}

/// Maps an error to an exit status: 2 for numerical failures, 1 otherwise.
fn exit_status(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<profile_lp::Error>() {
        Some(
            profile_lp::Error::Lp(_)
            | profile_lp::Error::Solver(_)
            | profile_lp::Error::WitnessInfeasible(_)
            | profile_lp::Error::Overflow(_),
        ) => 2,
        _ => 1,
    }
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    Ok(())
}

/// Runs the parsed command, writes its output and manifest, and returns the exit status.
fn execute(cli: &Cli, argv: &[String]) -> Result<u8> {
    let wall = Instant::now();
    let started_unix_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);

    let compute = Instant::now();
    let rendered = match &cli.command {
        Command::Estimate(a) => commands::estimate(a, cli.seed, cli.timings)?,
        Command::Modulus(a) => commands::modulus(a, cli.timings)?,
        Command::Witness(a) => commands::witness(a)?,
        Command::RiskSweep(a) => commands::risk_sweep(a, cli.seed, cli.timings)?,
        Command::Impossibility(a) => commands::impossibility(a)?,
        Command::Replay(a) => return replay(&a.path),
    };
    let compute_ms = compute.elapsed().as_secs_f64() * 1e3;
    let Rendered {
        bytes,
        seed,
        failure,
        default_out,
    } = rendered;

    let (out_label, manifest_path) = match cli.out.as_ref().or(default_out.as_ref()) {
        Some(path) => {
            write_atomic(path, &bytes)?;
            let m = cli
                .manifest
                .clone()
                .unwrap_or_else(|| default_manifest_path(path));
            (path.display().to_string(), Some(m))
        }
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&bytes)?;
            ("-".to_string(), cli.manifest.clone())
        }
    };

    let status = if let Some(msg) = &failure {
        log::error!("numerical failure: {msg}");
        eprintln!("error: numerical failure: {msg}");
        2
    } else {
        0
    };

    let manifest = RunManifest {
        subcommand: cli.command.name().to_string(),
        argv: argv.to_vec(),
        params: serde_json::to_value(cli)?,
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix_ms,
        compute_ms,
        wall_ms: wall.elapsed().as_secs_f64() * 1e3,
        outputs: vec![OutputDigest {
            path: out_label,
            sha256: sha256_hex(&bytes),
            bytes: bytes.len(),
        }],
        exit_code: status as i32,
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    match manifest_path {
        Some(path) => write_atomic(&path, text.as_bytes())?,
        None => eprint!("{text}"),
    }
    Ok(status)
}

/// Reruns the recorded arguments into a scratch directory and checks each digest.
fn replay(path: &Path) -> Result<u8> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read manifest {}", path.display()))?;
    let recorded: RunManifest = serde_json::from_str(&text)
        .with_context(|| format!("{} is not a run manifest", path.display()))?;
    let mut cli = Cli::try_parse_from(
        std::iter::once("profile-lp".to_string()).chain(recorded.argv.iter().cloned()),
    )
    .context("recorded arguments no longer parse")?;
    if matches!(cli.command, Command::Replay(_)) {
        bail!("a replay manifest cannot itself be replayed");
    }
    if cli.timings {
        bail!("the run recorded wall-clock timings in its outputs; they cannot match on replay");
    }
    let scratch = tempfile::tempdir()?;
    let out = scratch.path().join("output");
    cli.out = Some(out.clone());
    cli.manifest = Some(scratch.path().join("manifest.json"));
    // The pool was already configured for this process.
    cli.threads = None;
    let status = execute(&cli, &recorded.argv)?;
    let bytes = std::fs::read(&out)?;
    let digest = sha256_hex(&bytes);
    let expected = recorded
        .outputs
        .first()
        .context("manifest lists no outputs")?;
    if digest != expected.sha256 || status as i32 != recorded.exit_code {
        eprintln!(
            "replay mismatch: sha256 {digest} (recorded {}), exit {status} (recorded {})",
            expected.sha256, recorded.exit_code
        );
        return Ok(2);
    }
    println!("replay ok: {} sha256 {digest}", expected.path);
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = init_threads(cli.threads).and_then(|()| execute(&cli, &argv));
    match result {
        Ok(status) => ExitCode::from(status),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_status(&err))
        }
    }
}
