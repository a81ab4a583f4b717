use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use serde::Serialize;

use profile_lp::estimator::{
    default_support_cap, distinct_elements_estimate, min_distance_estimate, SupportCap,
};
use profile_lp::lp::LpStatus;
use profile_lp::modulus::{default_truncation, delta_star, delta_tv, Program};
use profile_lp::population::{
    fingerprint, profile_of_urn, sample_bernoulli, sorted_empirical_baseline, tv_distance,
    wasserstein1, Profile, Urn,
};
use profile_lp::risk_lab::{
    mu_impossibility_bound, run_risk_sweep, EstimatorKind, ExperimentConfig,
};
use profile_lp::witness::{build_witness, certified_delta_star_lower};

/// Bytes destined for the output file.
pub struct Rendered {
    pub bytes: Vec<u8>,
    /// Effective master seed.
    pub seed: u64,
    /// Set when the output was written but a check failed; the exit status is 2.
    pub failure: Option<String>,
    /// Output path named by an input file, used when `--out` is absent.
    pub default_out: Option<PathBuf>,
}

impl Rendered {
    fn new(bytes: Vec<u8>) -> Self {
        Self {
            bytes,
            seed: 0,
            failure: None,
            default_out: None,
        }
    }
}

fn read_file(path: &Path, what: &str) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {what} {}", path.display()))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    Ok((serde_json::to_string_pretty(value)? + "\n").into_bytes())
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

#[derive(Args, Debug, Serialize)]
pub struct EstimateArgs {
    /// Urn JSON `{"k": .., "counts": [..]}`; a subsample is drawn with `--seed`.
    #[arg(long, conflicts_with = "sample", required_unless_present = "sample")]
    pub urn: Option<PathBuf>,

    /// Observed per-type counts, in the same JSON layout as an urn.
    #[arg(long)]
    pub sample: Option<PathBuf>,

    /// Sampling probability.
    #[arg(long)]
    pub p: f64,

    /// `auto` or the largest type size the estimate may use.
    #[arg(long, default_value = "auto")]
    pub support_cap: String,

    /// `min_distance` or `sorted_baseline`.
    #[arg(long, default_value = "min_distance")]
    pub estimator: String,
}

#[derive(Serialize)]
struct TruthComparison {
    tv: f64,
    w1: f64,
}

#[derive(Serialize)]
struct EstimateTimings {
    solve_ms: f64,
}

#[derive(Serialize)]
struct EstimateOutput {
    k: usize,
    p: f64,
    estimator: EstimatorKind,
    /// Seed of the subsample; absent when counts were supplied.
    seed: Option<u64>,
    support_cap: Option<usize>,
    observed_max: usize,
    objective: Option<f64>,
    lp_status: Option<LpStatus>,
    lp_iterations: Option<usize>,
    lp_residual: Option<f64>,
    distinct_elements: f64,
    pi_hat: Profile,
    nu_hat: Option<Profile>,
    truth: Option<TruthComparison>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timings: Option<EstimateTimings>,
}

pub fn estimate(a: &EstimateArgs, seed: Option<u64>, timings: bool) -> Result<Rendered> {
    let cap: SupportCap = a.support_cap.parse()?;
    let kind: EstimatorKind = a.estimator.parse()?;
    let (x, urn, used_seed) = match (&a.urn, &a.sample) {
        (Some(path), _) => {
            let urn = Urn::from_json(&read_file(path, "urn")?)
                .with_context(|| format!("{} is not a valid urn", path.display()))?;
            let seed = seed.unwrap_or(0);
            (sample_bernoulli(&urn, a.p, seed)?, Some(urn), Some(seed))
        }
        (None, Some(path)) => {
            let counts = Urn::from_json(&read_file(path, "sample")?)
                .with_context(|| format!("{} is not a valid sample", path.display()))?;
            (counts.counts().to_vec(), None, None)
        }
        (None, None) => bail!("one of --urn or --sample is required"),
    };
    let fp = fingerprint(&x);
    let k = fp.k();
    let mut out = EstimateOutput {
        k,
        p: a.p,
        estimator: kind,
        seed: used_seed,
        support_cap: None,
        observed_max: fp.max_count(),
        objective: None,
        lp_status: None,
        lp_iterations: None,
        lp_residual: None,
        distinct_elements: 0.0,
        pi_hat: Profile::delta(0),
        nu_hat: None,
        truth: None,
        timings: None,
    };
    let mut failure = None;
    match kind {
        EstimatorKind::MinDistance => {
            let r = min_distance_estimate(&fp, a.p, cap)?;
            if r.lp_status != LpStatus::Optimal {
                failure = Some(format!("estimation LP ended with {:?}", r.lp_status));
            }
            out.support_cap = Some(r.support_cap);
            out.objective = Some(r.objective);
            out.lp_status = Some(r.lp_status);
            out.lp_iterations = Some(r.lp_iterations);
            out.lp_residual = Some(r.lp_residual);
            out.distinct_elements = distinct_elements_estimate(&r);
            out.nu_hat = Some(r.nu_hat.clone());
            out.timings = timings.then_some(EstimateTimings {
                solve_ms: r.solve_ms,
            });
            out.pi_hat = r.pi_hat;
        }
        EstimatorKind::SortedBaseline => {
            if let SupportCap::Fixed(_) = cap {
                log::warn!("--support-cap is ignored by the sorted baseline");
            }
            let pi = sorted_empirical_baseline(&x, a.p)?;
            out.distinct_elements = k as f64 * (1.0 - pi.mass()[0]);
            out.pi_hat = pi;
        }
    }
    if let Some(urn) = &urn {
        let truth = profile_of_urn(urn);
        out.truth = Some(TruthComparison {
            tv: tv_distance(out.pi_hat.mass(), truth.mass()),
            w1: wasserstein1(out.pi_hat.mass(), truth.mass()),
        });
    }
    log::info!(
        "default support cap at k = {k}: {}",
        default_support_cap(k, a.p)
    );
    Ok(Rendered {
        seed: used_seed.unwrap_or(0),
        failure,
        ..Rendered::new(json_bytes(&out)?)
    })
}

#[derive(Args, Debug, Serialize)]
pub struct ModulusArgs {
    /// `tv` or `star`.
    #[arg(long)]
    pub program: Program,

    #[arg(long)]
    pub t: f64,

    #[arg(long)]
    pub p: f64,

    /// Truncation order, or `auto`.
    #[arg(long = "M", default_value = "auto")]
    pub m: String,
}

/// One CSV row of `modulus`.
#[derive(Debug, Serialize)]
pub struct ModulusRow {
    pub program: Program,
    pub t: f64,
    pub p: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub value_lower: f64,
    pub value_upper: f64,
    pub max_violation: f64,
    pub lp_solves: usize,
    pub lp_failures: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve_ms: Option<f64>,
}

pub fn parse_truncation(s: &str, t: f64, p: f64) -> Result<usize> {
    if s == "auto" {
        return Ok(default_truncation(t, p));
    }
    let m: usize = s
        .parse()
        .with_context(|| format!("--M `{s}` is neither `auto` nor an integer"))?;
    if m == 0 {
        bail!("--M must be positive");
    }
    Ok(m)
}

pub fn modulus(a: &ModulusArgs, timings: bool) -> Result<Rendered> {
    if !(a.t > 0.0 && a.t.is_finite()) {
        bail!("--t must be positive, got {}", a.t);
    }
    let m = parse_truncation(&a.m, a.t, a.p)?;
    let r = match a.program {
        Program::Tv => delta_tv(a.t, a.p, m)?,
        Program::Star => delta_star(a.t, a.p, m)?,
    };
    let failure =
        (r.lp_solves == r.lp_failures).then(|| format!("all {} LP solves failed", r.lp_solves));
    let row = ModulusRow {
        program: r.program,
        t: r.t,
        p: r.p,
        m: r.m,
        value_lower: r.value_lower,
        value_upper: r.value_upper,
        max_violation: r.max_violation,
        lp_solves: r.lp_solves,
        lp_failures: r.lp_failures,
        solve_ms: timings.then_some(r.solve_ms),
    };
    Ok(Rendered {
        failure,
        ..Rendered::new(csv_bytes(&[row])?)
    })
}

#[derive(Args, Debug, Serialize)]
#[command(args_conflicts_with_subcommands = true)]
pub struct WitnessArgs {
    #[command(subcommand)]
    pub action: Option<WitnessAction>,

    /// Witness parameter.
    #[arg(long)]
    pub beta: Option<f64>,

    #[arg(long)]
    pub p: Option<f64>,

    /// Contraction `tau`; defaults to `1/beta`.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WitnessAction {
    /// Certified lower bound on delta_*(t) from the best feasible witness.
    Certify {
        #[arg(long)]
        t: f64,
        #[arg(long)]
        p: f64,
    },
}

/// One CSV row of `witness`.
#[derive(Debug, Serialize)]
pub struct WitnessRow {
    pub beta: f64,
    pub tau: f64,
    /// Image budget the scaled witness meets.
    pub t: f64,
    pub norm_a: f64,
    pub weighted: f64,
    pub image: f64,
    pub certified_bound: f64,
    pub support: usize,
}

pub fn witness(a: &WitnessArgs) -> Result<Rendered> {
    match &a.action {
        Some(WitnessAction::Certify { t, p }) => {
            let c = certified_delta_star_lower(*t, *p)?;
            let row = WitnessRow {
                beta: c.beta,
                tau: c.tau,
                t: c.t,
                norm_a: c.norm_a,
                weighted: c.weighted,
                image: c.image,
                certified_bound: c.value,
                support: c.support,
            };
            Ok(Rendered::new(csv_bytes(&[row])?))
        }
        None => {
            let (Some(beta), Some(p)) = (a.beta, a.p) else {
                bail!("witness needs --beta and --p, or the `certify` action");
            };
            let w = build_witness(beta, a.tau, p)?;
            let mut failure = None;
            if !(w.meets_weighted_bound() && w.meets_image_bound()) {
                failure = Some(format!(
                    "witness at beta = {beta} misses its bounds: weighted {} (bound {}), ln image {} (bound {})",
                    w.f_weighted, w.weighted_bound, w.log_image_norm, w.log_image_bound
                ));
            }
            let row = WitnessRow {
                beta,
                tau: w.coefficients.tau,
                t: w.budget,
                norm_a: w.coefficients.norm_a,
                weighted: w.f_weighted,
                image: w.f_image,
                certified_bound: w.f_norm,
                support: w.f.len(),
            };
            Ok(Rendered {
                failure,
                ..Rendered::new(csv_bytes(&[row])?)
            })
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct RiskSweepArgs {
    /// Experiment config JSON; `--seed` overrides its `master_seed`.
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Serialize)]
struct RiskCsvRow {
    k: usize,
    p: f64,
    family: String,
    estimator: String,
    seeds: u64,
    failures: u64,
    mean_tv: f64,
    se_tv: f64,
    mean_w1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_runtime_ms: Option<f64>,
    out_of_regime: bool,
}

pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config: ExperimentConfig = serde_json::from_str(&read_file(path, "config")?)
        .with_context(|| format!("{} is not a valid experiment config", path.display()))?;
    if let Some(s) = seed {
        config.master_seed = s;
    }
    config.validate()?;
    Ok(config)
}

pub fn risk_sweep(a: &RiskSweepArgs, seed: Option<u64>, timings: bool) -> Result<Rendered> {
    let config = load_config(&a.config, seed)?;
    let rows = run_risk_sweep(&config)?;
    let failed: u64 = rows.iter().map(|r| r.failures).sum();
    let csv_rows: Vec<RiskCsvRow> = rows
        .into_iter()
        .map(|r| RiskCsvRow {
            k: r.k,
            p: r.p,
            family: r.family,
            estimator: r.estimator,
            seeds: r.seeds,
            failures: r.failures,
            mean_tv: r.mean_tv,
            se_tv: r.se_tv,
            mean_w1: r.mean_w1,
            mean_runtime_ms: timings.then_some(r.mean_runtime_ms),
            out_of_regime: r.out_of_regime,
        })
        .collect();
    Ok(Rendered {
        seed: config.master_seed,
        failure: (failed > 0).then(|| format!("{failed} replicates failed")),
        default_out: config.output.map(PathBuf::from),
        ..Rendered::new(csv_bytes(&csv_rows)?)
    })
}

#[derive(Args, Debug, Serialize)]
pub struct ImpossibilityArgs {
    /// Population size.
    #[arg(long)]
    pub k: usize,

    #[arg(long)]
    pub p: f64,
}

#[derive(Debug, Serialize)]
struct ImpossibilityOutput {
    k: usize,
    p: f64,
    /// No estimator of the mean type size attains smaller worst-case error.
    bound: f64,
}

pub fn impossibility(a: &ImpossibilityArgs) -> Result<Rendered> {
    let bound = mu_impossibility_bound(a.k, a.p)?;
    Ok(Rendered::new(json_bytes(&ImpossibilityOutput {
        k: a.k,
        p: a.p,
        bound,
    })?))
}
