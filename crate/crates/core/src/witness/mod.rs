//! Lower-bound witnesses built from the Taylor coefficients of
//! `h(z) = exp(-beta (1 + alpha z) / (1 - alpha z))`, which are
//! `Delta_m = e^{-beta} alpha^m L_m^{(-1)}(2 beta)`.

pub mod laguerre;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{check_probability, Error, Result};
use crate::kernel::BinomialKernel;

pub use laguerre::{
    generating_check, laguerre_log, laguerre_scaled, max_scaled_len, GeneratingCheck, MAX_BETA,
};

/// Coefficients below this fraction of the peak count as negligible.
const NEGLIGIBLE: f64 = 1e-16;
/// Run of negligible coefficients that ends the sequence.
const NEGLIGIBLE_RUN: usize = 50;
/// Required bound on the discarded tail relative to `norm_a`.
const TAIL_REL: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct WitnessCoefficients {
    pub beta: f64,
    pub tau: f64,
    pub alpha: f64,
    /// `Delta_0..=Delta_{M_w}`.
    pub coeffs: Vec<f64>,
    /// `sum |Delta_m|` over the stored coefficients.
    pub norm_a: f64,
    /// `sum m |Delta_m|` over the stored coefficients.
    pub weighted_norm: f64,
    /// Upper bound on `sum_{m > M_w} |Delta_m|`, from `|L_m^{(-1)}(x)| <= x e^{x/2}`.
    pub tail_bound: f64,
    /// Upper bound on `sum_{m > M_w} m |Delta_m|`.
    pub weighted_tail_bound: f64,
}

impl WitnessCoefficients {
    pub fn new(beta: f64, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tau = {tau} must lie in (0, 1)"
            )));
        }
        let alpha = 1.0 - tau;
        let cap = max_scaled_len(beta);
        let s = laguerre_scaled(beta, cap)?;

        let mut coeffs = Vec::with_capacity(s.len());
        let mut a = 1.0f64;
        for &sm in &s {
            coeffs.push(a * sm);
            a *= alpha;
        }
        let peak = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));

        // Stop after a run of negligible coefficients past the peak region.
        let mut end = coeffs.len() - 1;
        let mut run = 0;
        let start = (2.0 * beta).ceil() as usize;
        for (m, c) in coeffs.iter().enumerate().skip(start) {
            if c.abs() < NEGLIGIBLE * peak {
                run += 1;
                if run == NEGLIGIBLE_RUN {
                    end = m;
                    break;
                }
            } else {
                run = 0;
            }
        }
        // Extend until the envelope certifies the tail.
        let envelope = |m: usize| 2.0 * beta * alpha.powf(m as f64 + 1.0) / tau;
        let norm_head: f64 = coeffs[..=end].iter().map(|c| c.abs()).sum();
        while end + 1 < coeffs.len() && envelope(end) > TAIL_REL * norm_head {
            end += 1;
        }
        if envelope(end) > TAIL_REL * norm_head {
            return Err(Error::OutOfRegime(format!(
                "witness tail for beta = {beta}, tau = {tau} is not negligible within {cap} coefficients"
            )));
        }
        coeffs.truncate(end + 1);
        let norm_a = coeffs.iter().map(|c| c.abs()).sum();
        let weighted_norm = coeffs
            .iter()
            .enumerate()
            .map(|(m, c)| m as f64 * c.abs())
            .sum();
        let next = (end + 1) as f64;
        let a_next = alpha.powf(next);
        let weighted_tail_bound = 2.0 * beta * a_next * (next / tau + alpha / (tau * tau));
        Ok(Self {
            beta,
            tau,
            alpha,
            coeffs,
            norm_a,
            weighted_norm,
            tail_bound: envelope(end),
            weighted_tail_bound,
        })
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `||Delta P||_1` of the untruncated sequence, from the closed form
    /// `(Delta P)_n = e^{-beta E} r^n e^{-X/2} L_n^{(-1)}(X)` with
    /// `E = alpha q / (1 - alpha q)`, `r = alpha p / (1 - alpha q)`,
    /// `X = 2 beta / (1 - alpha q)`, `q = 1 - p`.
    ///
    /// The returned value includes an upper bound on the unsummed tail.
    pub fn image_norm(&self, p: f64) -> Result<f64> {
        Ok(self.log_image_norm(p)?.exp())
    }

    /// Natural logarithm of [`Self::image_norm`], accurate far below the `f64` range.
    pub fn log_image_norm(&self, p: f64) -> Result<f64> {
        check_probability(p)?;
        let q = 1.0 - p;
        let d = 1.0 - self.alpha * q;
        let e = self.alpha * q / d;
        let x = 2.0 * self.beta / d;
        if p == 0.0 {
            // The kernel sends all mass to zero; the image is the single value h(1).
            return Ok(-self.beta * (1.0 + 2.0 * e));
        }
        let r = self.alpha * p / d;
        let log_front = -self.beta * e - x / 2.0;
        let log_r = r.ln();
        let mut n_max = 1024usize;
        loop {
            let logs: Vec<f64> = laguerre_log(x, n_max)
                .iter()
                .enumerate()
                .filter(|(_, (sign, _))| *sign != 0.0)
                .map(|(n, &(_, ln))| log_front + n as f64 * log_r + ln)
                .collect();
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logs.iter().map(|l| (l - top).exp()).sum();
            let log_sum = top + sum.ln();
            // |e^{-X/2} L_n(X)| <= X bounds the remaining terms geometrically.
            let log_tail = -self.beta * e + x.ln() + (n_max as f64 + 1.0) * log_r - (1.0 - r).ln();
            if log_tail <= log_sum + (1e-15f64).ln() || n_max >= 1 << 22 {
                let hi = log_sum.max(log_tail);
                return Ok(hi + ((log_sum - hi).exp() + (log_tail - hi).exp()).ln());
            }
            n_max *= 2;
        }
    }

    /// `||Delta P||_1` of the stored (truncated) sequence by direct summation.
    pub fn image_norm_direct(&self, kernel: &BinomialKernel) -> Result<f64> {
        kernel.l1_image_norm(&self.coeffs)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Witness {
    pub coefficients: WitnessCoefficients,
    pub p: f64,
    /// `||Delta P||_1` of the untruncated sequence.
    pub image_norm: f64,
    /// `ln ||Delta P||_1`, finite even when `image_norm` underflows.
    pub log_image_norm: f64,
    /// Scale `tau^{3/2} / 2` applied to obtain the feasible sequence.
    pub scale: f64,
    /// `f = scale * Delta`.
    pub f: Vec<f64>,
    /// `sum |f_m|`.
    pub f_norm: f64,
    /// Upper bound on `sum m |f_m|` including the truncated tail.
    pub f_weighted: f64,
    /// Upper bound on `||f P||_1` including the truncated tail.
    pub f_image: f64,
    /// `2 tau^{-3/2}`.
    pub weighted_bound: f64,
    /// `tau^{-1/2} e^{-beta E}` with `E = (1 - tau)(1 - p) / (p + (1 - p) tau)`.
    pub image_bound: f64,
    pub log_image_bound: f64,
    /// `(tau / 2) e^{-beta E}`, the budget the scaled sequence meets.
    pub budget: f64,
}

impl Witness {
    /// `sum m |Delta_m| <= 2 tau^{-3/2}`, tail included.
    pub fn meets_weighted_bound(&self) -> bool {
        let c = &self.coefficients;
        c.weighted_norm + c.weighted_tail_bound <= self.weighted_bound
    }

    /// `||Delta P||_1 <= tau^{-1/2} e^{-beta E}`, compared in the log domain.
    pub fn meets_image_bound(&self) -> bool {
        self.log_image_norm <= self.log_image_bound
    }
}

pub fn exponent_e(tau: f64, p: f64) -> f64 {
    (1.0 - tau) * (1.0 - p) / (p + (1.0 - p) * tau)
}

/// Witness for `(beta, tau)` at sampling probability `p`; `tau` defaults to `1/beta`.
pub fn build_witness(beta: f64, tau: Option<f64>, p: f64) -> Result<Witness> {
    check_probability(p)?;
    if !(2.0..=MAX_BETA).contains(&beta) {
        return Err(Error::OutOfRegime(format!(
            "beta = {beta} outside [2, {MAX_BETA}]"
        )));
    }
    let tau = tau.unwrap_or(1.0 / beta);
    let coefficients = WitnessCoefficients::new(beta, tau)?;
    let log_image_norm = coefficients.log_image_norm(p)?;
    let image_norm = log_image_norm.exp();
    let scale = 0.5 * tau.powf(1.5);
    let f: Vec<f64> = coefficients.coeffs.iter().map(|c| scale * c).collect();
    let e = exponent_e(tau, p);
    Ok(Witness {
        p,
        image_norm,
        scale,
        f_norm: scale * coefficients.norm_a,
        f_weighted: scale * (coefficients.weighted_norm + coefficients.weighted_tail_bound),
        f_image: scale * (image_norm + coefficients.tail_bound),
        f,
        weighted_bound: 2.0 * tau.powf(-1.5),
        image_bound: tau.powf(-0.5) * (-beta * e).exp(),
        log_image_bound: -0.5 * tau.ln() - beta * e,
        log_image_norm,
        budget: 0.5 * tau * (-beta * e).exp(),
        coefficients,
    })
}

/// `(tau/2) e^{-beta E}` at `tau = 1/beta`: the image budget met by the witness at `beta`.
pub fn witness_budget(beta: f64, p: f64) -> f64 {
    let tau = 1.0 / beta;
    0.5 * tau * (-beta * exponent_e(tau, p)).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BetaChoice {
    Bisection,
    ClosedForm,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertifiedBound {
    pub t: f64,
    pub p: f64,
    pub beta: f64,
    pub tau: f64,
    pub choice: BetaChoice,
    /// `sum |f_m|`: a lower bound on `delta_*(t)`.
    pub value: f64,
    /// Same witness rescaled until one constraint is tight; also a lower bound.
    pub rescaled_value: f64,
    pub weighted: f64,
    pub image: f64,
    pub norm_a: f64,
    pub support: usize,
    /// The feasible sequence whose norm is `value`.
    pub f: Vec<f64>,
}

/// A lower bound on `delta_*(t)` from an explicitly checked feasible witness.
pub fn certified_delta_star_lower(t: f64, p: f64) -> Result<CertifiedBound> {
    check_probability(p)?;
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "t = {t} must lie in (0, 1)"
        )));
    }
    if p == 0.0 || p == 1.0 {
        return Err(Error::OutOfRegime(format!("p = {p} must lie in (0, 1)")));
    }
    if witness_budget(2.0, p) < t {
        return Err(Error::OutOfRegime(format!(
            "t = {t} is too large: the witness needs beta < 2 at p = {p}"
        )));
    }
    if witness_budget(MAX_BETA, p) > t {
        return Err(Error::OutOfRegime(format!(
            "t = {t} needs beta > {MAX_BETA} at p = {p}"
        )));
    }
    // budget(beta) decreases in beta; keep `hi` feasible.
    let (mut lo, mut hi) = (2.0, MAX_BETA);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if witness_budget(mid, p) <= t {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut candidates = vec![(hi, BetaChoice::Bisection)];
    let mu = 4.0 / (1.0 - p) * (1.0 / t).ln();
    let closed = (mu * p).max(mu.sqrt());
    if (2.0..=MAX_BETA).contains(&closed) {
        candidates.push((closed, BetaChoice::ClosedForm));
    }

    let mut best: Option<CertifiedBound> = None;
    let mut failure = None;
    for (beta, choice) in candidates {
        let w = build_witness(beta, None, p)?;
        let tol = 1e-10;
        if w.f_weighted > 1.0 + tol || w.f_image > t * (1.0 + tol) {
            failure = Some(format!(
                "beta = {beta}: weighted {} image {} budget {t}",
                w.f_weighted, w.f_image
            ));
            continue;
        }
        let grow = (1.0 / w.f_weighted).min(t / w.f_image);
        let cand = CertifiedBound {
            t,
            p,
            beta,
            tau: w.coefficients.tau,
            choice,
            value: w.f_norm,
            rescaled_value: w.f_norm * grow.max(1.0) * (1.0 - 1e-12),
            weighted: w.f_weighted,
            image: w.f_image,
            norm_a: w.coefficients.norm_a,
            support: w.f.len(),
            f: w.f,
        };
        if best.as_ref().is_none_or(|b| cand.value > b.value) {
            best = Some(cand);
        }
    }
    best.ok_or_else(|| Error::WitnessInfeasible(failure.unwrap_or_default()))
}

#[derive(Clone, Debug, Serialize)]
pub struct ConsecutiveReport {
    pub beta: f64,
    pub tau: f64,
    pub threshold: f64,
    pub min_ratio: f64,
    pub argmin: usize,
    pub checked: usize,
    pub pass: bool,
    /// `sum_{beta <= m <= 3 beta / 2} |Delta_m|`.
    pub window_norm: f64,
    /// `alpha^{3 beta / 2} sqrt(2 beta) / 24`.
    pub window_bound: f64,
}

/// Checks `|Delta_m| + |Delta_{m+1}| >= alpha^{3 beta/2} beta^{-1/2} sqrt(2)/6`
/// for every integer `m` in `(beta, 3 beta / 2)`.
pub fn consecutive_coefficient_check(beta: f64, tau: Option<f64>) -> Result<ConsecutiveReport> {
    let tau = tau.unwrap_or(1.0 / beta);
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tau = {tau} must lie in (0, 1)"
        )));
    }
    let alpha = 1.0 - tau;
    let hi = 1.5 * beta;
    let m_top = hi.ceil() as usize + 1;
    let s = laguerre_scaled(beta, m_top)?;
    let delta = |m: usize| alpha.powi(m as i32) * s[m];
    let threshold = alpha.powf(hi) / beta.sqrt() * 2f64.sqrt() / 6.0;
    let mut min_ratio = f64::INFINITY;
    let mut argmin = 0;
    let mut checked = 0;
    let first = beta.floor() as usize + 1;
    for m in first..m_top {
        if (m as f64) >= hi {
            break;
        }
        let ratio = (delta(m).abs() + delta(m + 1).abs()) / threshold;
        checked += 1;
        if ratio < min_ratio {
            min_ratio = ratio;
            argmin = m;
        }
    }
    let window_norm = (beta.ceil() as usize..=hi.floor() as usize)
        .map(|m| delta(m).abs())
        .sum();
    Ok(ConsecutiveReport {
        beta,
        tau,
        threshold,
        min_ratio,
        argmin,
        checked,
        pass: checked > 0 && min_ratio >= 1.0,
        window_norm,
        window_bound: alpha.powf(hi) * (2.0 * beta).sqrt() / 24.0,
    })
}

/// Smallest integer `beta0 <= upto` such that the consecutive-coefficient check
/// passes for every integer `beta` in `[beta0, upto]`, or `None` if it fails at `upto`.
pub fn consecutive_onset(upto: usize) -> Result<Option<usize>> {
    let mut onset = None;
    for b in (2..=upto).rev() {
        if consecutive_coefficient_check(b as f64, None)?.pass {
            onset = Some(b);
        } else {
            break;
        }
    }
    Ok(onset)
}

#[derive(Clone, Debug, Serialize)]
pub struct HinfReport {
    pub t: f64,
    pub p: f64,
    pub c_p: f64,
    pub disk_max: f64,
    pub horodisk_max: f64,
    pub horodisk_bound: f64,
    pub value_at_minus_one: f64,
    pub expected_at_minus_one: f64,
    pub horodisk_ok: bool,
    pub minus_one_ok: bool,
}

/// `f(z) = (c_p / ln(1/t)) (1 - z)^2 t^{(p/q)(1+z)/(1-z)}`, `q = 1 - p`.
pub fn hinf_witness(z: Complex64, t: f64, p: f64, c_p: f64) -> Complex64 {
    let q = 1.0 - p;
    let w = (1.0 + z) / (1.0 - z);
    let one_minus = 1.0 - z;
    (c_p / (1.0 / t).ln()) * one_minus * one_minus * (w * (p / q * t.ln())).exp()
}

/// Radius inset used for boundary sampling.
pub const BOUNDARY_INSET: f64 = 1e-6;

fn circle(center: f64, radius: f64, n: usize) -> impl Iterator<Item = Complex64> {
    (0..n).map(move |j| {
        let theta = std::f64::consts::TAU * (j as f64 + 0.5) / n as f64;
        center + Complex64::from_polar(radius, theta)
    })
}

/// Samples the witness on the (inset) unit circle and on the boundary of the
/// horodisk `q + p D`.
pub fn hinf_witness_eval(t: f64, p: f64, c_p: f64, n_samples: usize) -> Result<HinfReport> {
    if !(t > 0.0 && t < 1.0) || !(p > 0.0 && p < 1.0) || n_samples == 0 {
        return Err(Error::InvalidParameter(
            "need t, p in (0, 1) and n_samples > 0".into(),
        ));
    }
    let r = 1.0 - BOUNDARY_INSET;
    let f = |z| hinf_witness(z, t, p, c_p).norm();
    let disk_max = circle(0.0, r, n_samples).map(f).fold(0.0, f64::max);
    let horodisk_max = circle(1.0 - p, p * r, n_samples).map(f).fold(0.0, f64::max);
    let log_inv = (1.0 / t).ln();
    let horodisk_bound = 4.0 * c_p * t / log_inv;
    let value_at_minus_one = f(Complex64::new(-1.0, 0.0));
    let expected_at_minus_one = 4.0 * c_p / log_inv;
    Ok(HinfReport {
        t,
        p,
        c_p,
        disk_max,
        horodisk_max,
        horodisk_bound,
        value_at_minus_one,
        expected_at_minus_one,
        horodisk_ok: horodisk_max <= horodisk_bound * (1.0 + 1e-3),
        minus_one_ok: (value_at_minus_one - expected_at_minus_one).abs()
            <= 1e-12 * expected_at_minus_one,
    })
}

/// Sampled maximum of `|exp(-beta (1+z)/(1-z))|` on the circle `1 - q + q e^{i theta}`
/// (the point `z = 1` is never sampled).
pub fn horodisk_sup(beta: f64, q: f64, n_samples: usize) -> f64 {
    circle(1.0 - q, q, n_samples)
        .map(|z| (-beta * (1.0 + z) / (1.0 - z)).exp().norm())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct NormConversionReport {
    pub r: f64,
    pub norm_a: f64,
    pub boundary_max: f64,
    pub bound: f64,
    pub unit_disk_max: f64,
    /// `bound / norm_a`.
    pub margin: f64,
    pub a_norm_ok: bool,
    pub hinf_ok: bool,
}

/// Checks `||f||_A <= (1 - r^{-2})^{-1/2} max_{|z|=r} |f(z)|` and
/// `max_{|z|<1} |f| <= ||f||_A` by boundary sampling. `eval` overrides the
/// polynomial evaluation of `coeffs` (useful when the coefficients truncate a
/// function known in closed form).
pub fn norm_conversion_check(
    coeffs: &[f64],
    r: f64,
    eval: Option<&dyn Fn(Complex64) -> Complex64>,
    n_samples: usize,
) -> Result<NormConversionReport> {
    if !r.is_finite() || r <= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "radius r = {r} must exceed 1"
        )));
    }
    let horner = |z: Complex64| {
        coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
    };
    let value = |z: Complex64| match eval {
        Some(g) => g(z),
        None => horner(z),
    };
    let boundary_max = circle(0.0, r, n_samples)
        .map(|z| value(z).norm())
        .fold(0.0, f64::max);
    if !boundary_max.is_finite() {
        return Err(Error::Overflow(format!("series diverges on |z| = {r}")));
    }
    let unit_disk_max = circle(0.0, 1.0, n_samples)
        .map(|z| horner(z).norm())
        .fold(0.0, f64::max);
    let norm_a: f64 = coeffs.iter().map(|c| c.abs()).sum();
    let bound = boundary_max / (1.0 - r.powi(-2)).sqrt();
    Ok(NormConversionReport {
        r,
        norm_a,
        boundary_max,
        bound,
        unit_disk_max,
        margin: bound / norm_a,
        a_norm_ok: norm_a <= bound * (1.0 + 1e-9),
        hinf_ok: unit_disk_max <= norm_a * (1.0 + 1e-12),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_coefficient_is_e_minus_beta() {
        let w = WitnessCoefficients::new(20.0, 0.05).unwrap();
        assert_eq!(w.coeffs[0], (-20.0f64).exp());
        assert!(w.tail_bound <= 1e-12 * w.norm_a);
    }

    #[test]
    fn closed_form_image_matches_direct_sum() {
        for &(beta, p) in &[(5.0, 0.5), (20.0, 0.1), (20.0, 0.9), (50.0, 0.5)] {
            let w = WitnessCoefficients::new(beta, 1.0 / beta).unwrap();
            let k = BinomialKernel::new(p, w.len() - 1).unwrap();
            let direct = w.image_norm_direct(&k).unwrap();
            let closed = w.image_norm(p).unwrap();
            let tol = 1e-9 * closed + 1e-14 + w.tail_bound;
            assert!(
                (direct - closed).abs() <= tol,
                "beta={beta} p={p}: {direct} vs {closed}"
            );
        }
    }

    #[test]
    fn witness_bounds_hold_on_a_small_grid() {
        for &beta in &[20.0, 50.0] {
            for &p in &[0.1, 0.5, 0.9] {
                let w = build_witness(beta, None, p).unwrap();
                assert!(w.meets_weighted_bound(), "beta={beta} p={p}");
                assert!(w.meets_image_bound(), "beta={beta} p={p}");
                assert!(w.coefficients.norm_a <= 1.0 / w.coefficients.tau.sqrt());
            }
        }
    }

    #[test]
    fn certified_bound_is_feasible() {
        let c = certified_delta_star_lower(1e-6, 0.5).unwrap();
        assert!(c.weighted <= 1.0 + 1e-10);
        assert!(c.image <= 1e-6 * (1.0 + 1e-10));
        assert!(c.value > 0.0 && c.rescaled_value >= c.value);
        assert!(certified_delta_star_lower(0.9, 0.5).is_err());
        assert!(certified_delta_star_lower(1e-6, 1.0).is_err());
    }

    #[test]
    fn hinf_values() {
        let rep = hinf_witness_eval(1e-6, 0.5, 1.0, 1 << 12).unwrap();
        assert!(rep.minus_one_ok);
        assert!(rep.horodisk_ok);
        for q in [0.3f64, 0.5, 1.0] {
            for beta in [1.0f64, 10.0] {
                let expect = (-beta * (1.0 - q) / q).exp();
                let got = horodisk_sup(beta, q, 1 << 12);
                assert!((got - expect).abs() <= 1e-6 * expect, "q={q} beta={beta}");
            }
        }
    }

    #[test]
    fn norm_conversion_on_identity() {
        let rep = norm_conversion_check(&[0.0, 1.0], 1.5, None, 256).unwrap();
        assert!(rep.a_norm_ok && rep.hinf_ok);
        assert!(norm_conversion_check(&[1.0], 1.0, None, 16).is_err());
    }

    #[test]
    fn lemma_check_reports_small_beta() {
        let rep = consecutive_coefficient_check(5.0, None).unwrap();
        assert!(rep.checked > 0);
        let rep = consecutive_coefficient_check(100.0, None).unwrap();
        assert!(rep.pass, "min ratio {}", rep.min_ratio);
    }
}
