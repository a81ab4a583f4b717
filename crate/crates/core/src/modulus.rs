//! Finite truncations of the two modulus-of-continuity programs
//!
//! * `delta_TV(t) = sup { TV(pi, pi') : pi, pi' in Pi_M, TV(pi P, pi' P) <= t }`
//! * `delta_*(t)  = sup { sum |D_m| : sum m |D_m| <= 1, ||D P||_1 <= t }`
//!
//! Both maximize a convex function over a polytope, so neither is a single
//! LP. For a fixed sign vector `s` the linear objective `s . D` (or
//! `s . (pi - pi') / 2`) is an LP; the search alternates between solving it
//! and replacing `s` by the signs of the optimizer. Every step is a feasible
//! point and the objective never decreases. Several sign vectors seed the
//! search: the Laguerre witness patterns, an alternating pattern, a trivial
//! feasible point and whatever the caller supplies. Reported values are the
//! norms of explicitly feasible points, hence lower bounds of the truncated
//! programs and of the untruncated ones.

use std::time::Instant;

use serde::Serialize;

use crate::error::{check_probability, Error, Result};
use crate::kernel::BinomialKernel;
use crate::lp::{solve_lp_with, LpProblem, LpStatus, Relation, Sense, SolverOptions};
use crate::population::Profile;
use crate::witness::laguerre_log;

/// Upper clamp on the automatic truncation order.
pub const MAX_AUTO_TRUNCATION: usize = 600;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Program {
    Tv,
    Star,
}

impl std::str::FromStr for Program {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tv" => Ok(Self::Tv),
            "star" => Ok(Self::Star),
            other => Err(Error::InvalidParameter(format!(
                "unknown program `{other}` (expected tv or star)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModulusOptions {
    /// Sign-update rounds per start.
    pub max_rounds: usize,
    /// Witness parameters whose sign patterns seed the search.
    pub laguerre_betas: Vec<f64>,
    pub solver: SolverOptions,
}

impl Default for ModulusOptions {
    fn default() -> Self {
        Self {
            max_rounds: 20,
            laguerre_betas: vec![2.0, 8.0, 32.0],
            // A search start that needs more pivots than this is dropped.
            solver: SolverOptions {
                max_iterations: 20_000,
                ..SolverOptions::default()
            },
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ModulusResult {
    pub program: Program,
    pub t: f64,
    pub p: f64,
    /// Truncation order: supports are `{0..=m}`.
    pub m: usize,
    /// Value of the best feasible point found.
    pub value_lower: f64,
    /// `value_lower + 2 / m`.
    pub value_upper: f64,
    /// Optimizer of `delta_*`.
    pub delta: Option<Vec<f64>>,
    /// Optimizer of `delta_TV`.
    pub pair: Option<(Vec<f64>, Vec<f64>)>,
    /// Largest constraint violation of the reported optimizer.
    pub max_violation: f64,
    /// Largest `min(D+_m, D-_m)` seen in an LP optimizer of the split form.
    pub split_overlap: f64,
    pub lp_solves: usize,
    pub lp_failures: usize,
    pub solve_ms: f64,
}

impl ModulusResult {
    fn new(program: Program, t: f64, p: f64, m: usize) -> Self {
        Self {
            program,
            t,
            p,
            m,
            value_lower: 0.0,
            value_upper: 2.0 / m as f64,
            delta: None,
            pair: None,
            max_violation: 0.0,
            split_overlap: 0.0,
            lp_solves: 0,
            lp_failures: 0,
            solve_ms: 0.0,
        }
    }
}

/// `max(100, ceil(40 ln(1/t) / max(p, 0.05)))`, clamped to [`MAX_AUTO_TRUNCATION`].
pub fn default_truncation(t: f64, p: f64) -> usize {
    let raw = (40.0 * (1.0 / t).ln() / p.max(0.05)).ceil();
    (raw.max(100.0) as usize).min(MAX_AUTO_TRUNCATION)
}

fn check_inputs(t: f64, p: f64, m: usize) -> Result<()> {
    check_probability(p)?;
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "t = {t} must lie in (0, 1)"
        )));
    }
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "truncation M = {m} must be at least 2"
        )));
    }
    Ok(())
}

/// Column-major copy of the truncated kernel: `cols[n][i - n] = P(i, n)`.
struct KernelColumns {
    p_rows: Vec<Vec<f64>>,
}

impl KernelColumns {
    fn new(p: f64, m: usize) -> Result<Self> {
        let k = BinomialKernel::new(p, m)?;
        let p_rows = (0..=m)
            .map(|i| k.row(i).map(|r| r.into_owned()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { p_rows })
    }

    fn m(&self) -> usize {
        self.p_rows.len() - 1
    }

    fn push(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                for (o, &pm) in out.iter_mut().zip(&self.p_rows[i]) {
                    *o += vi * pm;
                }
            }
        }
        out
    }

    fn image_l1(&self, v: &[f64]) -> f64 {
        self.push(v).iter().map(|x| x.abs()).sum()
    }
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn weighted(v: &[f64]) -> f64 {
    v.iter().enumerate().map(|(m, x)| m as f64 * x.abs()).sum()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().enumerate().map(|(m, x)| m as f64 * x).sum()
}

fn signs_of(v: &[f64], fallback: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(fallback)
        .map(|(&x, &f)| {
            if x > 1e-15 {
                1.0
            } else if x < -1e-15 {
                -1.0
            } else {
                f
            }
        })
        .collect()
}

/// Sign patterns of `L_m^{(-1)}(2 beta)`, `m = 0..=m_max`.
fn laguerre_patterns(betas: &[f64], m_max: usize) -> Vec<Vec<f64>> {
    betas
        .iter()
        .filter(|&&b| 1.5 * b < m_max as f64)
        .map(|&b| {
            laguerre_log(2.0 * b, m_max)
                .iter()
                .map(|&(s, _)| if s < 0.0 { -1.0 } else { 1.0 })
                .collect()
        })
        .collect()
}

fn alternating(m_max: usize) -> Vec<f64> {
    (0..=m_max)
        .map(|m| if m % 2 == 0 { 1.0 } else { -1.0 })
        .collect()
}

fn pad(v: &[f64], len: usize) -> Vec<f64> {
    let mut out = v.to_vec();
    out.resize(len, 0.0);
    out
}

/// Scales `d` into the `delta_*` feasible set.
fn polish_delta(kc: &KernelColumns, t: f64, mut d: Vec<f64>) -> (Vec<f64>, f64) {
    let w = weighted(&d);
    let img = kc.image_l1(&d);
    let mut s = 1.0f64;
    if w > 1.0 {
        s = s.min(1.0 / w);
    }
    if img > t {
        s = s.min(t / img);
    }
    if s < 1.0 {
        s *= 1.0 - 1e-14;
        d.iter_mut().for_each(|x| *x *= s);
    }
    let viol = (weighted(&d) - 1.0).max(kc.image_l1(&d) - t).max(0.0);
    (d, viol)
}

/// Moves a nearly feasible pair into the `delta_TV` feasible set by
/// renormalizing and mixing both members with `delta_0`.
fn polish_pair(kc: &KernelColumns, t: f64, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let clean = |v: &[f64]| {
        let mut v: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            v.iter_mut().for_each(|x| *x /= s);
        } else {
            v[0] = 1.0;
        }
        v
    };
    let mut a = clean(a);
    let mut b = clean(b);
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let img_tv = 0.5 * kc.image_l1(&diff);
    let mut lambda = 1.0f64;
    for mu in [mean(&a), mean(&b)] {
        if mu > 1.0 {
            lambda = lambda.min(1.0 / mu);
        }
    }
    if img_tv > t {
        lambda = lambda.min(t / img_tv);
    }
    if lambda < 1.0 {
        lambda *= 1.0 - 1e-14;
        for v in [&mut a, &mut b] {
            v.iter_mut().for_each(|x| *x *= lambda);
            v[0] += 1.0 - lambda;
        }
    }
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let viol = (0.5 * kc.image_l1(&diff) - t)
        .max(mean(&a) - 1.0)
        .max(mean(&b) - 1.0)
        .max((a.iter().sum::<f64>() - 1.0).abs())
        .max((b.iter().sum::<f64>() - 1.0).abs())
        .max(0.0);
    (a, b, viol)
}

/// Kernel entries below this are left out of the LP rows. Candidates are
/// always polished against the full kernel, so this only affects which
/// vertex the search reaches, never feasibility.
const LP_DROP: f64 = 1e-12;

/// Image rows `(v P)_n - t u+_n + t u-_n = 0` for `v = x[plus..] - x[minus..]`,
/// with `u+` at `u..=u+M` and `u-` right after. One equality per coordinate
/// keeps the tableau half the height of the two-inequality form; measuring
/// `u` in units of `t` keeps the budget row of order one for tiny `t`.
fn add_image_rows(
    lp: &mut LpProblem,
    kc: &KernelColumns,
    plus: usize,
    minus: usize,
    u: usize,
    t: f64,
    eliminate_zero: bool,
) -> Result<()> {
    let m = kc.m();
    let nv = lp.num_vars();
    for n in 0..=m {
        let mut row = vec![0.0; nv];
        for i in n..=m {
            let mut pin = kc.p_rows[i][n];
            if pin < LP_DROP {
                pin = 0.0;
            }
            if eliminate_zero && n == 0 {
                // Column 0 is folded into the others: P(0, 0) = 1.
                pin -= if i == 0 { pin } else { 1.0 };
            }
            row[plus + i] = pin;
            row[minus + i] = -pin;
        }
        row[u + n] = -t;
        row[u + m + 1 + n] = t;
        lp.add_constraint(row, Relation::Eq, 0.0)?;
    }
    Ok(())
}

/// Problem data shared by all sign patterns for `delta_*`: variables
/// `D+ (0..=M)`, `D- (M+1..=2M+1)`, then the image parts `u+`, `u-`.
fn star_lp(kc: &KernelColumns, t: f64, sigma: &[f64]) -> Result<LpProblem> {
    let m = kc.m();
    let n1 = m + 1;
    let mut obj = vec![0.0; 4 * n1];
    for i in 0..n1 {
        obj[i] = sigma[i];
        obj[n1 + i] = -sigma[i];
    }
    let mut lp = LpProblem::new(Sense::Maximize, obj);
    add_image_rows(&mut lp, kc, 0, n1, 2 * n1, t, false)?;
    // Weighted and mean rows are divided by M so that no row dwarfs the kernel entries.
    let mut w = vec![0.0; 4 * n1];
    for i in 0..n1 {
        w[i] = i as f64 / m as f64;
        w[n1 + i] = i as f64 / m as f64;
    }
    lp.add_constraint(w, Relation::Le, 1.0 / m as f64)?;
    let mut budget = vec![0.0; 4 * n1];
    budget[2 * n1..].iter_mut().for_each(|x| *x = 1.0);
    lp.add_constraint(budget, Relation::Le, 1.0)?;
    // |D_0| <= t + sum_{m>=1} |D_m| <= 1 + t; the bound removes the zero-cost ray D+_0 = D-_0.
    lp.set_upper_bound(0, 2.0)?;
    lp.set_upper_bound(n1, 2.0)?;
    Ok(lp)
}

/// Variables `pi (0..=M)`, `pi' (M+1..=2M+1)`, then `u+`, `u-`. The mass
/// at zero is eliminated through `pi_0 = 1 - sum_{i>=1} pi_i`, which leaves
/// columns `0` and `M+1` empty and every right-hand side zero or positive.
fn tv_lp(kc: &KernelColumns, t: f64, sigma: &[f64]) -> Result<LpProblem> {
    let m = kc.m();
    let n1 = m + 1;
    let mut obj = vec![0.0; 4 * n1];
    for i in 1..n1 {
        obj[i] = 0.5 * (sigma[i] - sigma[0]);
        obj[n1 + i] = -obj[i];
    }
    let mut lp = LpProblem::new(Sense::Maximize, obj);
    add_image_rows(&mut lp, kc, 0, n1, 2 * n1, t, true)?;
    let mut budget = vec![0.0; 4 * n1];
    budget[2 * n1..].iter_mut().for_each(|x| *x = 1.0);
    lp.add_constraint(budget, Relation::Le, 2.0)?;
    // The mean constraint also keeps sum_{i>=1} pi_i <= 1.
    for off in [0, n1] {
        let mut mu = vec![0.0; 4 * n1];
        for i in 1..n1 {
            mu[off + i] = i as f64 / m as f64;
        }
        lp.add_constraint(mu, Relation::Le, 1.0 / m as f64)?;
    }
    Ok(lp)
}

struct Search<'a> {
    kc: &'a KernelColumns,
    t: f64,
    opts: &'a ModulusOptions,
    result: ModulusResult,
}

impl Search<'_> {
    fn offer_delta(&mut self, d: Vec<f64>) {
        let (d, viol) = polish_delta(self.kc, self.t, d);
        let v = l1(&d);
        if v > self.result.value_lower {
            self.result.value_lower = v;
            self.result.max_violation = viol;
            self.result.delta = Some(d);
        }
    }

    fn offer_pair(&mut self, a: &[f64], b: &[f64]) {
        let (a, b, viol) = polish_pair(self.kc, self.t, a, b);
        let v = 0.5 * a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>();
        if v > self.result.value_lower {
            self.result.value_lower = v;
            self.result.max_violation = viol;
            self.result.pair = Some((a, b));
        }
    }

    /// Alternating sign search from `sigma`; returns the final value.
    fn climb(&mut self, mut sigma: Vec<f64>) -> Result<()> {
        let n1 = self.kc.m() + 1;
        let mut last = f64::NEG_INFINITY;
        for _ in 0..self.opts.max_rounds {
            let lp = match self.result.program {
                Program::Star => star_lp(self.kc, self.t, &sigma)?,
                Program::Tv => tv_lp(self.kc, self.t, &sigma)?,
            };
            let sol = solve_lp_with(&lp, &self.opts.solver)?;
            self.result.lp_solves += 1;
            let usable = matches!(sol.status, LpStatus::Optimal | LpStatus::NumericalFailure);
            if !usable || sol.x.len() < 2 * n1 {
                self.result.lp_failures += 1;
                log::warn!(
                    "modulus LP returned {:?} (t = {}, p = {})",
                    sol.status,
                    self.t,
                    self.result.p
                );
                return Ok(());
            }
            if sol.status == LpStatus::NumericalFailure {
                self.result.lp_failures += 1;
            }
            let (mut a, mut b) = (sol.x[..n1].to_vec(), sol.x[n1..2 * n1].to_vec());
            if self.result.program == Program::Tv {
                a[0] = 1.0 - a[1..].iter().sum::<f64>();
                b[0] = 1.0 - b[1..].iter().sum::<f64>();
            }
            let (a, b) = (&a[..], &b[..]);
            let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            let value = match self.result.program {
                Program::Star => {
                    let overlap = a
                        .iter()
                        .zip(b)
                        .skip(1)
                        .map(|(x, y)| x.min(*y))
                        .fold(0.0, f64::max);
                    self.result.split_overlap = self.result.split_overlap.max(overlap);
                    let before = self.result.value_lower;
                    self.offer_delta(diff.clone());
                    self.result.value_lower.max(before)
                }
                Program::Tv => {
                    let before = self.result.value_lower;
                    self.offer_pair(a, b);
                    self.result.value_lower.max(before)
                }
            };
            let next = signs_of(&diff, &sigma);
            if next == sigma || value <= last + 1e-12 {
                break;
            }
            last = value;
            sigma = next;
        }
        Ok(())
    }
}

fn run_search(
    program: Program,
    t: f64,
    p: f64,
    m: usize,
    delta_seeds: &[Vec<f64>],
    pair_seeds: &[(Vec<f64>, Vec<f64>)],
    opts: &ModulusOptions,
) -> Result<ModulusResult> {
    check_inputs(t, p, m)?;
    let start = Instant::now();
    let kc = KernelColumns::new(p, m)?;
    let n1 = m + 1;
    let mut s = Search {
        kc: &kc,
        t,
        opts,
        result: ModulusResult::new(program, t, p, m),
    };

    // Trivial feasible points and the sign patterns of every seed.
    let mut patterns = Vec::new();
    match program {
        Program::Star => {
            let mut d = vec![0.0; n1];
            let c = if p > 0.0 {
                (t / (2.0 * p)).min(1.0)
            } else {
                1.0
            };
            d[0] = -c;
            d[1] = c;
            s.offer_delta(d);
        }
        Program::Tv => {
            let a = pad(&[1.0], n1);
            let mut b = pad(&[1.0 - t, t], n1);
            b[0] = 1.0 - t;
            s.offer_pair(&a, &b);
        }
    }
    for d in delta_seeds {
        let d = pad(&d[..d.len().min(n1)], n1);
        patterns.push(signs_of(&d, &alternating(m)));
        match program {
            Program::Star => s.offer_delta(d),
            Program::Tv => {
                if let Ok((a, b)) = delta_pair_from_sequence(&d) {
                    s.offer_pair(a.mass(), b.mass());
                }
            }
        }
    }
    for (a, b) in pair_seeds {
        let a = pad(&a[..a.len().min(n1)], n1);
        let b = pad(&b[..b.len().min(n1)], n1);
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        patterns.push(signs_of(&diff, &alternating(m)));
        match program {
            Program::Star => s.offer_delta(diff.iter().map(|x| 0.5 * x).collect()),
            Program::Tv => s.offer_pair(&a, &b),
        }
    }
    patterns.extend(laguerre_patterns(&opts.laguerre_betas, m));
    patterns.push(alternating(m));
    let mut seen: Vec<Vec<f64>> = Vec::new();
    for sigma in patterns {
        if seen.contains(&sigma) {
            continue;
        }
        seen.push(sigma.clone());
        s.climb(sigma)?;
    }

    let mut result = s.result;
    result.value_upper = result.value_lower + 2.0 / m as f64;
    result.solve_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(result)
}

/// Lower bound on the truncated `delta_TV(t)` with default seeds.
pub fn delta_tv(t: f64, p: f64, m: usize) -> Result<ModulusResult> {
    delta_tv_with(t, p, m, &[], &[], &ModulusOptions::default())
}

/// Lower bound on the truncated `delta_*(t)` with default seeds.
pub fn delta_star(t: f64, p: f64, m: usize) -> Result<ModulusResult> {
    delta_star_with(t, p, m, &[], &[], &ModulusOptions::default())
}

/// `delta_TV` search with extra seeds: sequences are converted with
/// [`delta_pair_from_sequence`], pairs are used as given.
pub fn delta_tv_with(
    t: f64,
    p: f64,
    m: usize,
    delta_seeds: &[Vec<f64>],
    pair_seeds: &[(Vec<f64>, Vec<f64>)],
    opts: &ModulusOptions,
) -> Result<ModulusResult> {
    run_search(Program::Tv, t, p, m, delta_seeds, pair_seeds, opts)
}

/// `delta_*` search with extra seeds: pairs enter as `(pi - pi') / 2`.
pub fn delta_star_with(
    t: f64,
    p: f64,
    m: usize,
    delta_seeds: &[Vec<f64>],
    pair_seeds: &[(Vec<f64>, Vec<f64>)],
    opts: &ModulusOptions,
) -> Result<ModulusResult> {
    run_search(Program::Star, t, p, m, delta_seeds, pair_seeds, opts)
}

#[derive(Clone, Debug, Serialize)]
pub struct ModulusBracket {
    pub tv: ModulusResult,
    pub star: ModulusResult,
    pub exchanges: usize,
}

/// Solves both programs at the same `(t, p, M)`, feeding each optimizer into
/// the other program until neither improves. On return
/// `(star - t) / 2 <= tv <= star` holds for the reported lower values.
pub fn modulus_bracket(
    t: f64,
    p: f64,
    m: usize,
    delta_seeds: &[Vec<f64>],
    pair_seeds: &[(Vec<f64>, Vec<f64>)],
    opts: &ModulusOptions,
) -> Result<ModulusBracket> {
    let mut star = delta_star_with(t, p, m, delta_seeds, pair_seeds, opts)?;
    let mut tv = delta_tv_with(
        t,
        p,
        m,
        &[star.delta.clone().unwrap_or_default()],
        pair_seeds,
        opts,
    )?;
    let mut exchanges = 1;
    for _ in 0..6 {
        let sandwich_ok =
            tv.value_lower <= star.value_lower && 2.0 * tv.value_lower >= star.value_lower - t;
        if sandwich_ok {
            break;
        }
        let mut pair = pair_seeds.to_vec();
        pair.extend(tv.pair.clone());
        let mut seeds = delta_seeds.to_vec();
        seeds.extend(star.delta.clone());
        let next_star = delta_star_with(t, p, m, &seeds, &pair, opts)?;
        let lp_total = star.lp_solves + next_star.lp_solves;
        if next_star.value_lower >= star.value_lower {
            star = ModulusResult {
                lp_solves: lp_total,
                ..next_star
            };
        }
        let next_tv = delta_tv_with(
            t,
            p,
            m,
            &[star.delta.clone().unwrap_or_default()],
            &pair,
            opts,
        )?;
        let lp_total = tv.lp_solves + next_tv.lp_solves;
        if next_tv.value_lower >= tv.value_lower {
            tv = ModulusResult {
                lp_solves: lp_total,
                ..next_tv
            };
        }
        exchanges += 1;
    }
    Ok(ModulusBracket {
        tv,
        star,
        exchanges,
    })
}

/// Brackets over several `t` at fixed `(p, M)`. Points are visited in
/// increasing `t` and each starts from the optimizers of the previous one,
/// which stay feasible as `t` grows; the lower values are therefore
/// nondecreasing in `t`. Results come back in input order.
pub fn modulus_sweep(
    ts: &[f64],
    p: f64,
    m: usize,
    opts: &ModulusOptions,
) -> Result<Vec<ModulusBracket>> {
    let mut order: Vec<usize> = (0..ts.len()).collect();
    order.sort_by(|&a, &b| ts[a].total_cmp(&ts[b]));
    let mut out: Vec<Option<ModulusBracket>> = vec![None; ts.len()];
    let mut delta_seeds: Vec<Vec<f64>> = Vec::new();
    let mut pair_seeds: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for i in order {
        let b = modulus_bracket(ts[i], p, m, &delta_seeds, &pair_seeds, opts)?;
        delta_seeds = b.star.delta.clone().into_iter().collect();
        pair_seeds = b.tv.pair.clone().into_iter().collect();
        out[i] = Some(b);
    }
    Ok(out.into_iter().flatten().collect())
}

/// Splits a sequence into a pair of profiles with `pi - pi' = D` after
/// moving `sum D` out of the zeroth coordinate.
pub fn delta_pair_from_sequence(delta: &[f64]) -> Result<(Profile, Profile)> {
    if delta.is_empty() {
        return Err(Error::InvalidParameter("empty sequence".into()));
    }
    if delta.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("non-finite entry".into()));
    }
    let w = weighted(delta);
    if w > 1.0 + 1e-9 {
        return Err(Error::InvalidProfile(format!(
            "sum m |D_m| = {w} exceeds 1"
        )));
    }
    let mut d = delta.to_vec();
    let eps: f64 = d.iter().sum();
    d[0] -= eps;
    let mut a = vec![0.0; d.len()];
    let mut b = vec![0.0; d.len()];
    for m in 1..d.len() {
        a[m] = d[m].max(0.0);
        b[m] = (-d[m]).max(0.0);
    }
    a[0] = 1.0 - a[1..].iter().sum::<f64>();
    b[0] = 1.0 - b[1..].iter().sum::<f64>();
    Ok((
        Profile::with_mean_constraint(a)?,
        Profile::with_mean_constraint(b)?,
    ))
}

/// `min(2/J, 1)` with `J = floor(p ln(1/t) / (3 ln 6))`, or 1 when `J = 0`.
pub fn rate_upper_bound(t: f64, p: f64) -> f64 {
    let j = (p * (1.0 / t).ln() / (3.0 * 6f64.ln())).floor();
    if j >= 1.0 {
        (2.0 / j).min(1.0)
    } else {
        1.0
    }
}

/// `min_{J >= 1} (J 2^J t^{p/3} + 1/J)`, a bound on every feasible `delta_*` value.
pub fn star_upper_bound(t: f64, p: f64) -> f64 {
    let c = t.powf(p / 3.0);
    (1..=200)
        .map(|j| j as f64 * 2f64.powi(j) * c + 1.0 / j as f64)
        .fold(f64::INFINITY, f64::min)
}

/// Constants of the risk sandwich whose values are not known.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SandwichConstants {
    /// Multiplier inside the upper modulus argument; unspecified in the literature, default 1.
    pub c1: f64,
    /// Subtracted `C2 / sqrt(k)` term of the lower expression; unspecified, default 0.
    pub c2: f64,
}

impl Default for SandwichConstants {
    fn default() -> Self {
        Self { c1: 1.0, c2: 0.0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RiskSandwich {
    pub k: usize,
    pub p: f64,
    pub constants: SandwichConstants,
    pub t_lower: f64,
    pub t_upper: f64,
    /// `delta_TV(1/(6k)) / 72 - C2 / sqrt(k)`.
    pub lower: f64,
    /// `2 delta_TV(sqrt(C1 ln k / k))`, using the truncation-corrected value.
    pub upper: f64,
    pub m_lower: usize,
    pub m_upper: usize,
}

/// Lower and upper risk expressions built from the modulus at `1/(6k)` and
/// `sqrt(C1 ln k / k)`.
pub fn risk_sandwich(
    k: usize,
    p: f64,
    constants: SandwichConstants,
    opts: &ModulusOptions,
) -> Result<RiskSandwich> {
    if k < 2 {
        return Err(Error::InvalidParameter("k must be at least 2".into()));
    }
    let kf = k as f64;
    let t_lower = 1.0 / (6.0 * kf);
    let t_upper = (constants.c1 * kf.ln() / kf).sqrt();
    if !(t_upper > 0.0 && t_upper < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "sqrt(C1 ln k / k) = {t_upper} must lie in (0, 1)"
        )));
    }
    let m_lower = default_truncation(t_lower, p);
    let m_upper = default_truncation(t_upper, p);
    let lo = delta_tv_with(t_lower, p, m_lower, &[], &[], opts)?;
    let hi = delta_tv_with(t_upper, p, m_upper, &[], &[], opts)?;
    Ok(RiskSandwich {
        k,
        p,
        constants,
        t_lower,
        t_upper,
        lower: lo.value_lower / 72.0 - constants.c2 / kf.sqrt(),
        upper: 2.0 * hi.value_upper.min(1.0),
        m_lower,
        m_upper,
    })
}
