use profile_lp::estimator::{check_error_bound, min_distance_estimate, SupportCap};
use profile_lp::kernel::BinomialKernel;
use profile_lp::modulus::{delta_star_with, delta_tv_with, ModulusOptions, ModulusResult};
use profile_lp::population::{
    fingerprint, observed_distribution, profile_of_urn, sample_bernoulli, tv_distance, Urn,
    UrnFamily,
};

/// `C(i, m) p^m (1-p)^(i-m)` by the multiplicative formula.
fn binomial_pmf(i: usize, m: usize, p: f64) -> f64 {
    let mut c = 1.0;
    for j in 0..m {
        c *= (i - j) as f64 / (j + 1) as f64;
    }
    c * p.powi(m as i32) * (1.0 - p).powi((i - m) as i32)
}

#[test]
fn observed_distribution_is_unbiased_for_the_image() {
    let k = 2000;
    let p = 0.4;
    let urn = Urn::generate(UrnFamily::Geometric, k).unwrap();
    let pi = profile_of_urn(&urn);
    let n = pi.mass().len();
    let image: Vec<f64> = (0..n)
        .map(|m| (m..n).map(|i| pi.mass()[i] * binomial_pmf(i, m, p)).sum())
        .collect();

    let kernel = BinomialKernel::new(p, n).unwrap();
    let pushed = kernel.push_forward(pi.mass()).unwrap();
    assert!(tv_distance(&pushed, &image) < 1e-12);

    let seeds = 200;
    let mut mean = vec![0.0; n];
    for seed in 0..seeds {
        let nu = observed_distribution(&fingerprint(&sample_bernoulli(&urn, p, seed).unwrap()));
        for (acc, v) in mean.iter_mut().zip(nu.mass()) {
            *acc += v / seeds as f64;
        }
    }
    // Each coordinate has standard error below 1e-3 over 200 x 2000 draws.
    let gap = tv_distance(&mean, &image);
    assert!(
        gap < 5e-3,
        "mean observed distribution is {gap} from the image"
    );
}

#[test]
fn estimates_satisfy_the_error_bound() {
    let p = 0.5;
    for (family, k) in [
        (UrnFamily::Geometric, 300),
        (UrnFamily::TwoPoint, 200),
        (UrnFamily::UniformSingletons, 500),
    ] {
        let urn = Urn::generate(family, k).unwrap();
        let truth = profile_of_urn(&urn);
        for seed in [1, 2] {
            let x = sample_bernoulli(&urn, p, seed).unwrap();
            let report = min_distance_estimate(&fingerprint(&x), p, SupportCap::Auto).unwrap();
            let check = check_error_bound(&report, &truth).unwrap();
            assert!(check.dominance_ok, "{family} seed {seed}: {check:?}");
            assert!(check.holds, "{family} seed {seed}: {check:?}");
        }
    }
}

fn pad(v: &[f64], len: usize) -> Vec<f64> {
    let mut out = v.to_vec();
    out.resize(len, 0.0);
    out
}

#[test]
fn modulus_values_grow_with_truncation() {
    let (t, p) = (1e-3, 0.5);
    let opts = ModulusOptions::default();
    let mut prev: Option<(ModulusResult, ModulusResult)> = None;
    for m in [50, 100, 200] {
        // Smaller-M optimizers, padded with zeros, stay feasible at larger M.
        let (pairs, deltas) = match &prev {
            Some((tv, star)) => {
                let (a, b) = tv.pair.as_ref().unwrap();
                (
                    vec![(pad(a, m + 1), pad(b, m + 1))],
                    vec![pad(star.delta.as_ref().unwrap(), m + 1)],
                )
            }
            None => (vec![], vec![]),
        };
        let tv = delta_tv_with(t, p, m, &[], &pairs, &opts).unwrap();
        let tv_pair = [tv.pair.clone().unwrap()];
        let star = delta_star_with(t, p, m, &deltas, &tv_pair, &opts).unwrap();

        assert!(tv.max_violation < 1e-8 && star.max_violation < 1e-8);
        if let Some((tv_prev, star_prev)) = &prev {
            assert!(
                tv.value_lower >= tv_prev.value_lower - 1e-12,
                "tv at M = {m}: {} < {}",
                tv.value_lower,
                tv_prev.value_lower
            );
            assert!(
                star.value_lower >= star_prev.value_lower - 1e-12,
                "star at M = {m}: {} < {}",
                star.value_lower,
                star_prev.value_lower
            );
        }
        // The delta_TV optimizer seeds the delta_* search.
        assert!(star.value_lower >= tv.value_lower - 1e-9);
        prev = Some((tv, star));
    }
}
