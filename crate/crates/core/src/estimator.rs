//! Minimum-distance profile estimation:
//! `pi_hat = argmin { ||pi' P - nu||_TV : pi' on {0..M}, sum pi' = 1, mean <= 1 }`.
//!
//! Rows of the fingerprint beyond the largest observed count `M'` are zero,
//! so their contribution to the TV objective is `sum_i pi'_i P(i, > M')`,
//! which is linear in `pi'` and enters the objective directly.

use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::error::{check_probability, Error, Result};
use crate::kernel::BinomialKernel;
use crate::lp::{solve_lp, LpProblem, LpStatus, Relation, Sense};
use crate::modulus::{default_truncation, delta_tv_with, ModulusOptions};
use crate::population::{observed_distribution, tv_distance, Fingerprint, Profile};

/// Largest truncation used when evaluating the deterministic error bound.
pub const CERTIFY_MAX_TRUNCATION: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SupportCap {
    /// `min(k, ceil(20 ln k / p))`, raised to the largest observed count.
    Auto,
    Fixed(usize),
}

impl FromStr for SupportCap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        s.parse().map(Self::Fixed).map_err(|_| {
            Error::InvalidParameter(format!(
                "support cap `{s}` is neither `auto` nor an integer"
            ))
        })
    }
}

/// `min(k, ceil(20 ln k / p))`.
pub fn default_support_cap(k: usize, p: f64) -> usize {
    let raw = (20.0 * (k as f64).ln() / p).ceil();
    if raw.is_finite() {
        (raw.max(0.0) as usize).min(k)
    } else {
        k
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimateReport {
    pub k: usize,
    pub p: f64,
    pub pi_hat: Profile,
    /// `||pi_hat P - nu||_TV` evaluated directly.
    pub objective: f64,
    pub lp_objective: f64,
    pub lp_status: LpStatus,
    pub lp_iterations: usize,
    pub lp_residual: f64,
    pub support_cap: usize,
    pub observed_max: usize,
    pub nu_hat: Profile,
    pub solve_ms: f64,
}

/// Solves the minimum-distance program for the fingerprint `fp`.
pub fn min_distance_estimate(fp: &Fingerprint, p: f64, cap: SupportCap) -> Result<EstimateReport> {
    check_probability(p)?;
    if p == 0.0 {
        return Err(Error::InvalidProbability(p));
    }
    let start = Instant::now();
    let k = fp.k();
    let observed_max = fp.max_count();
    let m = match cap {
        SupportCap::Auto => default_support_cap(k, p).max(observed_max),
        SupportCap::Fixed(c) if c > k => {
            return Err(Error::InvalidParameter(format!(
                "support cap {c} exceeds k = {k}"
            )));
        }
        SupportCap::Fixed(c) => c,
    };
    let nu = observed_distribution(fp);
    let nu_m = nu.mass();
    let kernel = BinomialKernel::new(p, m.max(observed_max))?;

    // Variables: pi'_0..pi'_M, then s_0..s_{M'}.
    let n_pi = m + 1;
    let n_s = observed_max + 1;
    let nv = n_pi + n_s;
    let mut obj = vec![0.0; nv];
    for (i, c) in obj[..n_pi].iter_mut().enumerate() {
        *c = 0.5 * kernel.row(i)?.iter().skip(n_s).sum::<f64>();
    }
    obj[n_pi..].iter_mut().for_each(|c| *c = 0.5);
    let mut lp = LpProblem::new(Sense::Minimize, obj);
    for (r, &target) in nu_m.iter().enumerate() {
        let mut row = vec![0.0; nv];
        for (i, x) in row.iter_mut().enumerate().take(n_pi).skip(r) {
            *x = kernel.entry(i, r)?;
        }
        row[n_pi + r] = -1.0;
        let neg: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(j, &x)| if j == n_pi + r { -1.0 } else { -x })
            .collect();
        lp.add_constraint(row, Relation::Le, target)?;
        lp.add_constraint(neg, Relation::Le, -target)?;
    }
    let mut mass = vec![0.0; nv];
    mass[..n_pi].iter_mut().for_each(|x| *x = 1.0);
    lp.add_constraint(mass, Relation::Eq, 1.0)?;
    let mut mean = vec![0.0; nv];
    for (i, x) in mean.iter_mut().enumerate().take(n_pi) {
        *x = i as f64;
    }
    lp.add_constraint(mean, Relation::Le, 1.0)?;

    let sol = solve_lp(&lp)?;
    if !matches!(sol.status, LpStatus::Optimal | LpStatus::NumericalFailure) {
        return Err(Error::Solver(format!(
            "minimum-distance LP returned {:?}",
            sol.status
        )));
    }
    if sol.status == LpStatus::NumericalFailure {
        log::warn!(
            "minimum-distance LP residual {:.3e}; the solution is repaired",
            sol.max_residual
        );
    }
    let pi_hat = repair(&sol.x[..n_pi])?;
    let image = kernel.push_forward(pi_hat.mass())?;
    let objective = tv_distance(&image, nu_m);
    Ok(EstimateReport {
        k,
        p,
        pi_hat,
        objective,
        lp_objective: sol.objective,
        lp_status: sol.status,
        lp_iterations: sol.iterations,
        lp_residual: sol.max_residual,
        support_cap: m,
        observed_max,
        nu_hat: nu,
        solve_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Clips rounding noise, renormalizes, and mixes with `delta_0` if the mean
/// exceeds one.
fn repair(x: &[f64]) -> Result<Profile> {
    let mut v: Vec<f64> = x.iter().map(|a| a.max(0.0)).collect();
    let s: f64 = v.iter().sum();
    if s <= 0.0 {
        return Err(Error::Solver(
            "minimum-distance LP returned zero mass".into(),
        ));
    }
    v.iter_mut().for_each(|a| *a /= s);
    let mu: f64 = v.iter().enumerate().map(|(m, a)| m as f64 * a).sum();
    if mu > 1.0 {
        let lambda = 1.0 / mu;
        v.iter_mut().for_each(|a| *a *= lambda);
        v[0] += 1.0 - lambda;
    }
    Profile::with_mean_constraint(v)
}

/// `sum_m pi_hat_m T(m)`.
pub fn estimate_functional(report: &EstimateReport, t: impl Fn(usize) -> f64) -> f64 {
    let mut sup = 0.0f64;
    let mut total = 0.0;
    for (m, &x) in report.pi_hat.mass().iter().enumerate() {
        let v = t(m);
        sup = sup.max(v.abs());
        total += x * v;
    }
    if sup > 1.0 {
        log::warn!("functional has sup norm {sup} > 1 on the estimated support");
    }
    total
}

/// `k (1 - pi_hat_0)`.
pub fn distinct_elements_estimate(report: &EstimateReport) -> f64 {
    let pi0 = report.pi_hat.mass()[0];
    (report.k as f64 * (1.0 - pi0)).clamp(0.0, report.k as f64)
}

#[derive(Clone, Debug, Serialize)]
pub struct ErrorBoundCheck {
    /// `2 ||pi P - nu||_TV`.
    pub t: f64,
    /// `||pi_hat - pi||_TV`.
    pub error: f64,
    /// `||pi P - nu||_TV`, the objective the true profile attains.
    pub truth_objective: f64,
    /// The estimator's objective does not exceed the true profile's.
    pub dominance_ok: bool,
    pub modulus_m: usize,
    pub modulus_lower: f64,
    /// Truncation-corrected modulus value the error is compared against.
    pub modulus_upper: f64,
    pub holds: bool,
}

/// Checks `||pi_hat - pi||_TV <= delta_TV(2 ||pi P - nu||_TV)` for a known
/// true profile. The pair `(pi, pi_hat)` is feasible for the modulus program
/// at that argument, so it seeds the search alongside the default starts.
pub fn check_error_bound(report: &EstimateReport, truth: &Profile) -> Result<ErrorBoundCheck> {
    let p = report.p;
    let n = truth.mass().len().max(report.nu_hat.mass().len());
    let kernel = BinomialKernel::new(p, n)?;
    let image = kernel.push_forward(truth.mass())?;
    let truth_objective = tv_distance(&image, report.nu_hat.mass());
    let t = 2.0 * truth_objective;
    let error = tv_distance(report.pi_hat.mass(), truth.mass());
    let dominance_ok = report.objective <= truth_objective + 1e-9;

    let (modulus_m, lower, upper) = if t >= 1.0 {
        (0, 1.0, 1.0)
    } else if t < 1e-12 {
        // Identical images: the kernel is injective on finite supports.
        (0, 0.0, 1e-8)
    } else {
        let support = truth.support_bound().max(report.pi_hat.support_bound());
        let m = default_truncation(t, p)
            .min(support.max(20))
            .min(CERTIFY_MAX_TRUNCATION);
        let pair = (truth.mass().to_vec(), report.pi_hat.mass().to_vec());
        let r = delta_tv_with(t, p, m, &[], &[pair], &ModulusOptions::default())?;
        (m, r.value_lower, r.value_upper.min(1.0))
    };
    Ok(ErrorBoundCheck {
        t,
        error,
        truth_objective,
        dominance_ok,
        modulus_m,
        modulus_lower: lower,
        modulus_upper: upper,
        holds: error <= upper + 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{fingerprint, profile_of_urn, sample_bernoulli, Urn};

    #[test]
    fn exact_recovery_at_p_one() {
        let urn = Urn::new(10, vec![4, 3, 2, 1, 0, 0, 0, 0, 0, 0]).unwrap();
        let x = sample_bernoulli(&urn, 1.0, 0).unwrap();
        let r = min_distance_estimate(&fingerprint(&x), 1.0, SupportCap::Auto).unwrap();
        let truth = profile_of_urn(&urn);
        assert!(tv_distance(r.pi_hat.mass(), truth.mass()) < 1e-9);
        assert!(r.objective < 1e-9);
        assert!((distinct_elements_estimate(&r) - 4.0).abs() < 1e-8);
        assert!((estimate_functional(&r, |_| 1.0) - 1.0).abs() < 1e-12);
        assert!(
            (estimate_functional(&r, |m| (m == 0) as u8 as f64) - truth.mass()[0]).abs() < 1e-9
        );
    }

    #[test]
    fn empty_sample_gives_delta_zero() {
        let fp = Fingerprint::new(vec![50], 50).unwrap();
        let r = min_distance_estimate(&fp, 0.9, SupportCap::Auto).unwrap();
        assert!(r.objective < 1e-9);
        assert!((r.pi_hat.mass()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn report_invariants_and_dominance() {
        let urn = Urn::new(200, vec![1; 200]).unwrap();
        let truth = profile_of_urn(&urn);
        for seed in 0..5 {
            let x = sample_bernoulli(&urn, 0.5, seed).unwrap();
            let r = min_distance_estimate(&fingerprint(&x), 0.5, SupportCap::Auto).unwrap();
            let mass = r.pi_hat.mass();
            assert!((mass.iter().sum::<f64>() - 1.0).abs() < 1e-8);
            assert!(r.pi_hat.mean() <= 1.0 + 1e-8);
            assert!(r.pi_hat.support_bound() <= 200);
            let c = check_error_bound(&r, &truth).unwrap();
            assert!(c.dominance_ok, "seed {seed}: {c:?}");
            assert!(c.holds, "seed {seed}: {c:?}");
        }
    }

    #[test]
    fn cap_parsing_and_limits() {
        assert_eq!("auto".parse::<SupportCap>().unwrap(), SupportCap::Auto);
        assert_eq!("12".parse::<SupportCap>().unwrap(), SupportCap::Fixed(12));
        assert!("x".parse::<SupportCap>().is_err());
        let fp = Fingerprint::new(vec![3, 2], 5).unwrap();
        assert!(min_distance_estimate(&fp, 0.5, SupportCap::Fixed(6)).is_err());
        assert!(min_distance_estimate(&fp, 0.0, SupportCap::Auto).is_err());
        assert_eq!(default_support_cap(1, 0.5), 0);
        assert_eq!(default_support_cap(1000, 0.5), 277);
    }
}
