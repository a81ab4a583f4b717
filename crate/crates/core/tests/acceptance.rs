//! End-to-end acceptance checks. Everything runs inside one test so that the
//! timed criteria are not competing with other tests for cores. Each check
//! prints a single PASS/FAIL line; the test fails if any check fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use profile_lp::estimator::{min_distance_estimate, SupportCap};
use profile_lp::modulus::{delta_star_with, modulus_sweep, rate_upper_bound, ModulusOptions};
use profile_lp::population::{
    fingerprint, profile_of_urn, sample_bernoulli, tv_distance, wasserstein1, Urn, UrnFamily,
};
use profile_lp::risk_lab::{
    binary_entropy, concentration_check, mu_impossibility_bound, random_urn, run_risk_sweep,
    EstimatorKind, ExperimentConfig, SweepFamily,
};
use profile_lp::witness::{
    build_witness, certified_delta_star_lower, consecutive_coefficient_check, consecutive_onset,
    generating_check, laguerre_scaled, max_scaled_len,
};

type Check = (bool, String);

fn log_grid(hi_exp: f64, lo_exp: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 10f64.powf(hi_exp + (lo_exp - hi_exp) * i as f64 / (n - 1) as f64))
        .collect()
}

fn exact_recovery() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..50 {
        let k = rng.random_range(1..=200);
        let urn = random_urn(k, 1000 + i).unwrap();
        let x = sample_bernoulli(&urn, 1.0, i).unwrap();
        let r = min_distance_estimate(&fingerprint(&x), 1.0, SupportCap::Auto).unwrap();
        worst = worst.max(tv_distance(r.pi_hat.mass(), profile_of_urn(&urn).mass()));
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst <= 1e-8 && secs < 10.0,
        format!("exact recovery at p = 1: 50 urns, max TV {worst:.2e}, {secs:.2} s"),
    )
}

/// Reverse DPI, the sandwich between the two programs, and coefficient decay,
/// all on one 20 x 3 grid at M = 200.
fn modulus_grid() -> Vec<Check> {
    let ts = log_grid(-1.0, -6.0, 20);
    let start = Instant::now();
    let mut rows = Vec::new();
    for p in [0.1, 0.5, 0.9] {
        let brackets = modulus_sweep(&ts, p, 200, &ModulusOptions::default()).unwrap();
        for (&t, b) in ts.iter().zip(brackets) {
            rows.push((t, p, b));
        }
    }
    let secs = start.elapsed().as_secs_f64();

    let dpi_gap = rows
        .iter()
        .map(|(t, _, b)| t - 1e-8 - b.tv.value_lower)
        .fold(f64::NEG_INFINITY, f64::max);
    let violation = rows
        .iter()
        .map(|(_, _, b)| b.tv.max_violation.max(b.star.max_violation))
        .fold(0.0, f64::max);
    let dpi = (
        dpi_gap <= 0.0 && secs < 300.0,
        format!(
            "reverse DPI: {} points, max (t - value) {dpi_gap:.2e} (tolerance 1e-8), worst constraint violation {violation:.1e}, {secs:.1} s",
            rows.len()
        ),
    );

    let mut sandwich_gap = f64::NEG_INFINITY;
    for (t, _, b) in &rows {
        let (tv, star) = (b.tv.value_lower, b.star.value_lower);
        sandwich_gap = sandwich_gap.max(tv - star).max(0.5 * (star - t) - tv);
    }
    let sandwich = (
        sandwich_gap <= 1e-6,
        format!(
            "sandwich (star - t)/2 <= tv <= star: worst excess {sandwich_gap:.2e} over {} points",
            rows.len()
        ),
    );

    let mut decay_gap = f64::NEG_INFINITY;
    let mut missing = 0;
    for (t, p, b) in &rows {
        let Some(d) = &b.star.delta else {
            missing += 1;
            continue;
        };
        let c = t.powf(p / 3.0);
        for (l, x) in d.iter().enumerate() {
            decay_gap = decay_gap.max(x.abs() - 2f64.powi(l as i32) * c - 1e-8);
        }
    }
    let decay = (
        decay_gap <= 0.0 && missing == 0,
        format!("coefficient decay |D_l| <= 2^l t^(p/3): worst excess {decay_gap:.2e}, {missing} optimizers missing"),
    );
    vec![dpi, sandwich, decay]
}

fn generating_identity() -> Check {
    let mut worst = 0.0f64;
    for x in [1.0, 10.0, 50.0, 200.0] {
        for v in [0.1, 0.3, 0.5] {
            worst = worst.max(generating_check(x, v, 2000).unwrap().rel_residual);
        }
    }
    (
        worst <= 1e-9,
        format!("Laguerre generating identity: 12 (x, v) pairs, N = 2000, max relative residual {worst:.2e}"),
    )
}

fn witness_feasibility() -> Check {
    let mut failed = Vec::new();
    let mut cells = 0;
    for beta in [20.0, 50.0, 100.0, 200.0, 300.0] {
        for p in [0.1, 0.5, 0.9] {
            cells += 1;
            match build_witness(beta, None, p) {
                Ok(w) if w.meets_weighted_bound() && w.meets_image_bound() => {}
                Ok(_) => failed.push(format!("beta={beta} p={p}")),
                Err(e) => failed.push(format!("beta={beta} p={p}: {e}")),
            }
        }
    }
    (
        failed.is_empty(),
        format!(
            "witness weighted and image bounds: {}/{cells} cells pass {failed:?}",
            cells - failed.len()
        ),
    )
}

fn consecutive_coefficients() -> Check {
    let mut worst = f64::INFINITY;
    let mut ok = true;
    for beta in [50.0, 100.0, 200.0, 300.0] {
        let r = consecutive_coefficient_check(beta, None).unwrap();
        ok &= r.pass;
        worst = worst.min(r.min_ratio);
    }
    let onset = consecutive_onset(49).unwrap();
    (
        ok,
        format!(
            "consecutive-coefficient bound for beta in {{50, 100, 200, 300}}: min ratio {worst:.3}; holds for every integer beta in [{}, 49]",
            onset.map_or("none".to_string(), |b| b.to_string())
        ),
    )
}

fn certified_vs_lp() -> Check {
    let start = Instant::now();
    let opts = ModulusOptions {
        laguerre_betas: Vec::new(),
        ..ModulusOptions::default()
    };
    let mut points = Vec::new();
    for (p, hi, lo) in [(0.3, -2.0, -8.0), (0.5, -1.0, -4.0), (0.7, -1.0, -3.0)] {
        for t in log_grid(hi, lo, 10) {
            points.push((t, p));
        }
    }
    let mut worst_lp = f64::NEG_INFINITY;
    let mut worst_rate = f64::NEG_INFINITY;
    for &(t, p) in &points {
        let c = certified_delta_star_lower(t, p).unwrap();
        let m = c.support - 1;
        let star = delta_star_with(t, p, m, std::slice::from_ref(&c.f), &[], &opts).unwrap();
        worst_lp = worst_lp.max(c.value - star.value_lower);
        let rate = rate_upper_bound(t, p) + 2.0 / m as f64;
        worst_rate = worst_rate.max(c.value - rate).max(star.value_lower - rate);
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst_lp <= 1e-12 && worst_rate <= 0.0,
        format!(
            "certified lower <= LP value at matched truncation: {} points, max (certified - LP) {worst_lp:.2e}, max excess over rate bound + 2/M {worst_rate:.2e}, {secs:.1} s",
            points.len()
        ),
    )
}

fn rate_shape() -> Check {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        k_grid: vec![100, 1_000, 10_000, 100_000],
        p_grid: vec![0.5],
        seeds: 50,
        family: SweepFamily::Fixed(UrnFamily::UniformSingletons),
        estimator: EstimatorKind::MinDistance,
        master_seed: 0,
        output: None,
    };
    let rows = run_risk_sweep(&cfg).unwrap();
    let products: Vec<f64> = rows.iter().map(|r| r.mean_tv * (r.k as f64).ln()).collect();
    let worst = products
        .windows(2)
        .map(|w| (w[0] / w[1]).max(w[1] / w[0]))
        .fold(1.0, f64::max);
    let failures: u64 = rows.iter().map(|r| r.failures).sum();
    let secs = start.elapsed().as_secs_f64();
    (
        worst <= 3.0 && failures == 0 && secs < 1800.0,
        format!(
            "rate shape on singletons, p = 0.5: risk * ln k = {products:.4?}, largest consecutive ratio {worst:.2}, {secs:.1} s"
        ),
    )
}

fn concentration() -> Check {
    let mut normalized = Vec::new();
    let mut variance_ok = true;
    for k in [1_000, 10_000, 100_000] {
        let urn = Urn::generate(UrnFamily::UniformSingletons, k).unwrap();
        let r = concentration_check(k, 0.5, &urn, 200, 0).unwrap();
        normalized.push(r.normalized);
        variance_ok &= r.variance_ok;
    }
    let hi = normalized.iter().copied().fold(f64::MIN, f64::max);
    let lo = normalized.iter().copied().fold(f64::MAX, f64::min);
    (
        hi / lo <= 2.0 && variance_ok,
        format!(
            "concentration: mean TV * sqrt(k / ln k) = {normalized:.4?} (spread {:.2}), per-coordinate variance bound {}",
            hi / lo,
            if variance_ok { "holds" } else { "violated" }
        ),
    )
}

/// Profiles of two uniformly random distributions on `[k]` with masses in `(1/k) Z`.
fn sorted_tv_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let k = rng.random_range(1..=20);
        let mut draw = || {
            let mut counts = vec![0u64; k];
            for _ in 0..k {
                counts[rng.random_range(0..k)] += 1;
            }
            counts
        };
        let (a, b) = (draw(), draw());
        let mut sa: Vec<f64> = a.iter().map(|&c| c as f64 / k as f64).collect();
        let mut sb: Vec<f64> = b.iter().map(|&c| c as f64 / k as f64).collect();
        sa.sort_by(|x, y| y.total_cmp(x));
        sb.sort_by(|x, y| y.total_cmp(x));
        let sorted_tv = tv_distance(&sa, &sb);
        let pa = profile_of_urn(&Urn::new(k, a).unwrap());
        let pb = profile_of_urn(&Urn::new(k, b).unwrap());
        worst = worst.max((wasserstein1(pa.mass(), pb.mass()) - 2.0 * sorted_tv).abs());
    }
    (
        worst <= 1e-12,
        format!("W1 of profiles = 2 TV of sorted distributions: 200 pairs, max error {worst:.2e}"),
    )
}

/// Newton iteration on the binary entropy, started on the steep side.
fn entropy_inverse_newton(y: f64) -> f64 {
    let mut x = 1e-3f64;
    for _ in 0..200 {
        let f = binary_entropy(x) - y;
        let df = ((1.0 - x) / x).log2();
        let next = (x - f / df).clamp(1e-300, 0.5);
        if (next - x).abs() < 1e-17 {
            break;
        }
        x = next;
    }
    x
}

fn impossibility_calculator() -> Check {
    let mut worst = 0.0f64;
    for k in [2, 10, 100, 1_000, 10_000, 1_000_000] {
        for p in [0.0, 0.1, 0.3, 0.5, 0.7, 0.9] {
            let kf = k as f64;
            let arg = 1.0 - p - (kf + 1.0).log2() / (kf - 1.0);
            let oracle = if arg <= 0.0 {
                0.0
            } else {
                (kf - 1.0) / (4.0 * kf) * entropy_inverse_newton(arg)
            };
            worst = worst.max((mu_impossibility_bound(k, p).unwrap() - oracle).abs());
        }
    }
    let anchor = mu_impossibility_bound(1_000_000, 0.5).unwrap();
    (
        worst <= 1e-10 && (anchor - 0.0275).abs() < 5e-5,
        format!("impossibility calculator: max deviation from Newton oracle {worst:.2e}; k = 1e6, p = 0.5 gives {anchor:.5}"),
    )
}

/// `n! L_n^{(-1)}(x)` is an integer for integer `x`:
/// `A_{n+1} = (2n - x) A_n - n (n - 1) A_{n-1}`.
fn laguerre_exact(x: i64, n_max: usize) -> Vec<(BigInt, BigInt)> {
    let mut out = Vec::with_capacity(n_max + 1);
    let mut fact = BigInt::from(1);
    let mut prev = BigInt::from(1);
    let mut cur = BigInt::from(-x);
    out.push((prev.clone(), fact.clone()));
    out.push((cur.clone(), fact.clone()));
    for n in 1..n_max {
        let n_big = BigInt::from(n as i64);
        let next =
            BigInt::from(2 * n as i64 - x) * &cur - &n_big * BigInt::from(n as i64 - 1) * &prev;
        fact *= BigInt::from(n as i64 + 1);
        prev = std::mem::replace(&mut cur, next);
        out.push((cur.clone(), fact.clone()));
    }
    out
}

fn ratio(a: &BigInt, b: &BigInt) -> f64 {
    if a.is_zero() {
        return 0.0;
    }
    let s = a.bits().max(b.bits()).saturating_sub(1000);
    let v = (a.abs() >> s).to_f64().unwrap() / (b >> s).to_f64().unwrap();
    if a.is_negative() {
        -v
    } else {
        v
    }
}

fn laguerre_stability() -> Check {
    let beta = 200.0;
    let n_max = max_scaled_len(beta);
    let scaled = laguerre_scaled(beta, n_max).unwrap();
    let exact = laguerre_exact(400, n_max);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    let mut worst_at = 0;
    for _ in 0..50 {
        let m = rng.random_range(0..=n_max);
        let (a, f) = &exact[m];
        let truth = ratio(a, f) * (-beta).exp();
        let err = ((scaled[m] - truth) / truth).abs();
        if err > worst {
            worst = err;
            worst_at = m;
        }
    }
    (
        worst <= 1e-8,
        format!("scaled Laguerre recurrence at beta = 200 vs exact integers: 50 indices, max relative error {worst:.2e} (n = {worst_at})"),
    )
}

fn run(name: &str, f: impl FnOnce() -> Vec<Check>) -> Vec<bool> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(checks) => checks
            .into_iter()
            .map(|(pass, msg)| {
                println!("{} {msg}", if pass { "PASS" } else { "FAIL" });
                pass
            })
            .collect(),
        Err(_) => {
            println!("FAIL {name}: panicked");
            vec![false]
        }
    }
}

#[test]
fn acceptance_criteria() {
    let mut results = Vec::new();
    results.extend(run("exact recovery", || vec![exact_recovery()]));
    results.extend(run("modulus grid", modulus_grid));
    results.extend(run("generating identity", || vec![generating_identity()]));
    results.extend(run("witness feasibility", || vec![witness_feasibility()]));
    results.extend(run("consecutive coefficients", || {
        vec![consecutive_coefficients()]
    }));
    results.extend(run("certified vs LP", || vec![certified_vs_lp()]));
    results.extend(run("rate shape", || vec![rate_shape()]));
    results.extend(run("concentration", || vec![concentration()]));
    results.extend(run("sorted TV identity", || vec![sorted_tv_identity()]));
    results.extend(run("impossibility calculator", || {
        vec![impossibility_calculator()]
    }));
    results.extend(run("Laguerre stability", || vec![laguerre_stability()]));
    let failed = results.iter().filter(|&&p| !p).count();
    println!(
        "{} of {} acceptance checks passed",
        results.len() - failed,
        results.len()
    );
    assert_eq!(failed, 0, "{failed} acceptance checks failed");
}
