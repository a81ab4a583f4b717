//! Dense two-phase primal simplex.
//!
//! Problems are stated over nonnegative variables with optional finite upper
//! bounds. Callers encode free variables as differences of two nonnegatives.
//! Pivoting uses Dantzig's most-negative reduced cost with lowest-index tie
//! breaking and a two-pass (Harris) ratio test. A run of degenerate pivots
//! first perturbs the basic values; a second one switches to Bland's rule
//! until the objective moves again, so every run is deterministic and
//! cycling cannot occur.
//! After the final pivot the basic solution is recomputed from the original
//! data with a fresh LU factorization of the basis.
//!
//! # Text format
//!
//! [`LpProblem::to_text`] writes a line-oriented dump that [`LpProblem::from_text`]
//! reads back:
//!
//! ```text
//! lp v1
//! sense max
//! vars 2
//! obj 1 1
//! row le 1 : 1 1
//! upper 0 4
//! ```
//!
//! `row` lines carry the relation (`le`, `eq`, `ge`), the right-hand side, a
//! colon and one coefficient per variable. `upper j u` bounds variable `j`
//! above by `u`. Numbers are printed in shortest round-trip form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl Relation {
    fn flipped(self) -> Self {
        match self {
            Relation::Le => Relation::Ge,
            Relation::Ge => Relation::Le,
            Relation::Eq => Relation::Eq,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Relation::Le => "le",
            Relation::Eq => "eq",
            Relation::Ge => "ge",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// A dense linear program over `x >= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LpProblem {
    sense: Sense,
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
    upper: Vec<Option<f64>>,
}

impl LpProblem {
    pub fn new(sense: Sense, objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            sense,
            objective,
            constraints: Vec::new(),
            upper: vec![None; n],
        }
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn upper_bounds(&self) -> &[Option<f64>] {
        &self.upper
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn add_constraint(
        &mut self,
        coeffs: Vec<f64>,
        relation: Relation,
        rhs: f64,
    ) -> Result<usize> {
        if coeffs.len() != self.num_vars() {
            return Err(Error::Lp(format!(
                "constraint has {} coefficients, problem has {} variables",
                coeffs.len(),
                self.num_vars()
            )));
        }
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
        Ok(self.constraints.len() - 1)
    }

    /// Adds a constraint given as `(variable, coefficient)` pairs; repeated
    /// variables accumulate.
    pub fn add_sparse_constraint(
        &mut self,
        terms: &[(usize, f64)],
        relation: Relation,
        rhs: f64,
    ) -> Result<usize> {
        let mut coeffs = vec![0.0; self.num_vars()];
        for &(j, a) in terms {
            if j >= coeffs.len() {
                return Err(Error::Lp(format!("variable index {j} out of range")));
            }
            coeffs[j] += a;
        }
        self.add_constraint(coeffs, relation, rhs)
    }

    pub fn set_upper_bound(&mut self, var: usize, upper: f64) -> Result<()> {
        if var >= self.num_vars() {
            return Err(Error::Lp(format!("variable index {var} out of range")));
        }
        self.upper[var] = Some(upper);
        Ok(())
    }

    /// Checks that every entry is finite and bounds are nonnegative.
    pub fn validate(&self) -> Result<()> {
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::Lp("non-finite objective coefficient".into()));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != self.num_vars() {
                return Err(Error::Lp(format!("row {i} has wrong length")));
            }
            if !c.rhs.is_finite() || c.coeffs.iter().any(|a| !a.is_finite()) {
                return Err(Error::Lp(format!("row {i} has a non-finite entry")));
            }
        }
        for (j, u) in self.upper.iter().enumerate() {
            if let Some(u) = u {
                if !u.is_finite() || *u < 0.0 {
                    return Err(Error::Lp(format!(
                        "upper bound of variable {j} must be finite and >= 0"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("lp v1\n");
        let sense = match self.sense {
            Sense::Minimize => "min",
            Sense::Maximize => "max",
        };
        let _ = writeln!(s, "sense {sense}");
        let _ = writeln!(s, "vars {}", self.num_vars());
        s.push_str("obj");
        for c in &self.objective {
            let _ = write!(s, " {c}");
        }
        s.push('\n');
        for c in &self.constraints {
            let _ = write!(s, "row {} {} :", c.relation.tag(), c.rhs);
            for a in &c.coeffs {
                let _ = write!(s, " {a}");
            }
            s.push('\n');
        }
        for (j, u) in self.upper.iter().enumerate() {
            if let Some(u) = u {
                let _ = writeln!(s, "upper {j} {u}");
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Lp(format!("line {}: {msg}", line + 1));
        let num = |tok: &str, line: usize| {
            tok.parse::<f64>()
                .map_err(|_| bad(line, "expected a number"))
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == "lp v1" => {}
            _ => return Err(Error::Lp("missing `lp v1` header".into())),
        }
        let mut sense = None;
        let mut n = None;
        let mut problem: Option<LpProblem> = None;
        for (ln, line) in lines {
            let mut toks = line.split_whitespace();
            match toks.next() {
                Some("sense") => {
                    sense = Some(match toks.next() {
                        Some("min") => Sense::Minimize,
                        Some("max") => Sense::Maximize,
                        _ => return Err(bad(ln, "sense must be min or max")),
                    })
                }
                Some("vars") => {
                    n = Some(
                        toks.next()
                            .and_then(|t| t.parse::<usize>().ok())
                            .ok_or_else(|| bad(ln, "expected a variable count"))?,
                    )
                }
                Some("obj") => {
                    let c = toks.map(|t| num(t, ln)).collect::<Result<Vec<_>>>()?;
                    if Some(c.len()) != n {
                        return Err(bad(ln, "objective length differs from `vars`"));
                    }
                    let sense = sense.ok_or_else(|| bad(ln, "`sense` must precede `obj`"))?;
                    problem = Some(LpProblem::new(sense, c));
                }
                Some("row") => {
                    let p = problem
                        .as_mut()
                        .ok_or_else(|| bad(ln, "`obj` must precede rows"))?;
                    let rel = match toks.next() {
                        Some("le") => Relation::Le,
                        Some("eq") => Relation::Eq,
                        Some("ge") => Relation::Ge,
                        _ => return Err(bad(ln, "relation must be le, eq or ge")),
                    };
                    let rhs = num(toks.next().unwrap_or(""), ln)?;
                    if toks.next() != Some(":") {
                        return Err(bad(ln, "expected `:` after the right-hand side"));
                    }
                    let coeffs = toks.map(|t| num(t, ln)).collect::<Result<Vec<_>>>()?;
                    p.add_constraint(coeffs, rel, rhs)
                        .map_err(|_| bad(ln, "row length differs from `vars`"))?;
                }
                Some("upper") => {
                    let p = problem
                        .as_mut()
                        .ok_or_else(|| bad(ln, "`obj` must precede bounds"))?;
                    let j = toks
                        .next()
                        .and_then(|t| t.parse::<usize>().ok())
                        .ok_or_else(|| bad(ln, "expected a variable index"))?;
                    let u = num(toks.next().unwrap_or(""), ln)?;
                    p.set_upper_bound(j, u)
                        .map_err(|_| bad(ln, "bad upper bound"))?;
                }
                _ => return Err(bad(ln, "unknown directive")),
            }
        }
        problem.ok_or_else(|| Error::Lp("no objective line".into()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// A basis was found but the recovered point misses the feasibility tolerance.
    NumericalFailure,
    IterationLimit,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective: f64,
    pub x: Vec<f64>,
    /// Multipliers of the explicit constraints, signed so that for an optimal
    /// solution `objective == sum_i rhs_i * duals_i` (bound rows excluded).
    pub duals: Vec<f64>,
    /// Multipliers of the upper-bound rows, one per variable (zero when unbounded).
    pub bound_duals: Vec<f64>,
    pub max_residual: f64,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    /// Tableau entries below this magnitude are never used as pivots.
    pub pivot_tol: f64,
    pub max_iterations: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
    /// Pivots between refactorizations of the tableau; 0 disables them.
    pub reinvert_every: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-9,
            optimality_tol: 1e-9,
            pivot_tol: 1e-9,
            max_iterations: 500_000,
            bland_after: 50,
            reinvert_every: 2000,
        }
    }
}

pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution> {
    solve_lp_with(problem, &SolverOptions::default())
}

pub fn solve_lp_with(problem: &LpProblem, opts: &SolverOptions) -> Result<LpSolution> {
    problem.validate()?;
    let std = StandardForm::build(problem);
    let mut tab = Tableau::initial(&std);
    let mut iterations = 0usize;

    let empty = |status| LpSolution {
        status,
        objective: f64::NAN,
        x: Vec::new(),
        duals: Vec::new(),
        bound_duals: Vec::new(),
        max_residual: f64::INFINITY,
        iterations: 0,
    };

    // Phase 1.
    if std.n_art > 0 {
        tab.set_phase_one_costs(&std);
        // Artificials that all start at zero only need to be pivoted out.
        let already_feasible = tab.objective_value() <= 0.0;
        let outcome = if already_feasible {
            RunOutcome::Optimal
        } else {
            tab.run(&std, opts, tab.width - 1, true, &mut iterations)
        };
        match outcome {
            RunOutcome::Optimal => {}
            RunOutcome::IterationLimit => {
                return Ok(LpSolution {
                    iterations,
                    ..empty(LpStatus::IterationLimit)
                })
            }
            // The phase-1 objective is bounded below by zero.
            RunOutcome::Unbounded | RunOutcome::Breakdown => {
                return Ok(LpSolution {
                    iterations,
                    ..empty(LpStatus::NumericalFailure)
                })
            }
        }
        let scale = 1.0 + std.b.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if tab.objective_value() > 1e-7 * scale {
            return Ok(LpSolution {
                iterations,
                ..empty(LpStatus::Infeasible)
            });
        }
        tab.drive_out_artificials(&std, opts);
        tab.drop_artificial_columns(&std);
    }

    // Phase 2.
    tab.set_phase_two_costs(&std);
    let active = std.n_struct + std.n_slack;
    match tab.run(&std, opts, active, false, &mut iterations) {
        RunOutcome::Optimal => {}
        RunOutcome::Unbounded => {
            return Ok(LpSolution {
                iterations,
                ..empty(LpStatus::Unbounded)
            })
        }
        RunOutcome::IterationLimit => {
            return Ok(LpSolution {
                iterations,
                ..empty(LpStatus::IterationLimit)
            })
        }
        RunOutcome::Breakdown => {
            return Ok(LpSolution {
                iterations,
                ..empty(LpStatus::NumericalFailure)
            })
        }
    }

    Ok(tab.extract(problem, &std, opts, iterations))
}

/// Problem rewritten as `min c.x, A x + s = b, b >= 0` with slack, surplus
/// and artificial columns.
struct StandardForm {
    n_struct: usize,
    n_slack: usize,
    n_art: usize,
    rows: Vec<Vec<f64>>,
    rel: Vec<Relation>,
    b: Vec<f64>,
    /// +1 or -1: the multiplier applied to the source row.
    row_sign: Vec<f64>,
    slack_col: Vec<Option<usize>>,
    art_col: Vec<Option<usize>>,
    /// Minimization costs of the structural variables.
    cost: Vec<f64>,
    /// Number of rows that come from explicit constraints; the rest are bound rows.
    n_explicit: usize,
    /// For each bound row, the variable it bounds.
    bound_var: Vec<usize>,
}

impl StandardForm {
    fn build(p: &LpProblem) -> Self {
        let n = p.num_vars();
        let mut rows = Vec::new();
        let mut rel = Vec::new();
        let mut b = Vec::new();
        let mut row_sign = Vec::new();
        for c in &p.constraints {
            if c.rhs < 0.0 {
                rows.push(c.coeffs.iter().map(|a| -a).collect::<Vec<_>>());
                rel.push(c.relation.flipped());
                b.push(-c.rhs);
                row_sign.push(-1.0);
            } else {
                rows.push(c.coeffs.clone());
                rel.push(c.relation);
                b.push(c.rhs);
                row_sign.push(1.0);
            }
        }
        let n_explicit = rows.len();
        let mut bound_var = Vec::new();
        for (j, u) in p.upper.iter().enumerate() {
            if let Some(u) = u {
                let mut r = vec![0.0; n];
                r[j] = 1.0;
                rows.push(r);
                rel.push(Relation::Le);
                b.push(*u);
                row_sign.push(1.0);
                bound_var.push(j);
            }
        }
        let m = rows.len();
        let mut slack_col = vec![None; m];
        let mut art_col = vec![None; m];
        let mut n_slack = 0;
        for i in 0..m {
            if rel[i] != Relation::Eq {
                slack_col[i] = Some(n + n_slack);
                n_slack += 1;
            }
        }
        let mut n_art = 0;
        for i in 0..m {
            if rel[i] != Relation::Le {
                art_col[i] = Some(n + n_slack + n_art);
                n_art += 1;
            }
        }
        let cost = match p.sense {
            Sense::Minimize => p.objective.clone(),
            Sense::Maximize => p.objective.iter().map(|c| -c).collect(),
        };
        Self {
            n_struct: n,
            n_slack,
            n_art,
            rows,
            rel,
            b,
            row_sign,
            slack_col,
            art_col,
            cost,
            n_explicit,
            bound_var,
        }
    }

    fn m(&self) -> usize {
        self.rows.len()
    }

    /// Column `j` (structural, slack or artificial) of row `i`.
    fn full_entry(&self, i: usize, j: usize) -> f64 {
        if Some(j) == self.art_col[i] {
            1.0
        } else {
            self.entry(i, j)
        }
    }

    /// Column `j` (structural or slack) of row `i` in the standardized matrix.
    fn entry(&self, i: usize, j: usize) -> f64 {
        if j < self.n_struct {
            self.rows[i][j]
        } else if Some(j) == self.slack_col[i] {
            if self.rel[i] == Relation::Le {
                1.0
            } else {
                -1.0
            }
        } else {
            0.0
        }
    }
}

enum RunOutcome {
    Optimal,
    Unbounded,
    IterationLimit,
    /// Restoring the unperturbed right-hand side failed.
    Breakdown,
}

struct Tableau {
    /// Row-major `rows x width`; the last column is the right-hand side.
    data: Vec<f64>,
    width: usize,
    /// Reduced costs, last entry holds minus the objective value.
    cost: Vec<f64>,
    basis: Vec<usize>,
    /// Original standardized row index of each tableau row.
    origin: Vec<usize>,
    scratch: Vec<usize>,
    /// Right-hand side in use, indexed by original row; differs from the
    /// problem data only while a perturbation is active.
    rhs: Vec<f64>,
    perturbed: bool,
}

impl Tableau {
    fn initial(std: &StandardForm) -> Self {
        let m = std.m();
        let ncols = std.n_struct + std.n_slack + std.n_art;
        let width = ncols + 1;
        let mut data = vec![0.0; m * width];
        let mut basis = vec![0; m];
        for i in 0..m {
            let row = &mut data[i * width..(i + 1) * width];
            row[..std.n_struct].copy_from_slice(&std.rows[i]);
            if let Some(s) = std.slack_col[i] {
                row[s] = if std.rel[i] == Relation::Le {
                    1.0
                } else {
                    -1.0
                };
            }
            if let Some(a) = std.art_col[i] {
                row[a] = 1.0;
                basis[i] = a;
            } else {
                basis[i] = std.slack_col[i].expect("le rows carry a slack");
            }
            row[ncols] = std.b[i];
        }
        Self {
            data,
            width,
            cost: vec![0.0; width],
            basis,
            origin: (0..m).collect(),
            scratch: Vec::new(),
            rhs: std.b.clone(),
            perturbed: false,
        }
    }

    fn rows(&self) -> usize {
        self.basis.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    fn objective_value(&self) -> f64 {
        -self.cost[self.width - 1]
    }

    fn set_phase_one_costs(&mut self, std: &StandardForm) {
        let w = self.width;
        let first_art = std.n_struct + std.n_slack;
        self.cost.iter_mut().for_each(|c| *c = 0.0);
        self.cost[first_art..w - 1]
            .iter_mut()
            .for_each(|c| *c = 1.0);
        for i in 0..self.rows() {
            if self.basis[i] >= first_art {
                for (c, a) in self.cost.iter_mut().zip(&self.data[i * w..(i + 1) * w]) {
                    *c -= a;
                }
            }
        }
        for i in 0..self.rows() {
            let b = self.basis[i];
            self.cost[b] = 0.0;
        }
    }

    fn set_phase_two_costs(&mut self, std: &StandardForm) {
        self.cost.iter_mut().for_each(|c| *c = 0.0);
        self.cost[..std.n_struct].copy_from_slice(&std.cost);
        let w = self.width;
        for i in 0..self.rows() {
            let cb = if self.basis[i] < std.n_struct {
                std.cost[self.basis[i]]
            } else {
                0.0
            };
            if cb != 0.0 {
                let row = &self.data[i * w..(i + 1) * w];
                for (c, a) in self.cost.iter_mut().zip(row) {
                    *c -= cb * a;
                }
            }
        }
        for i in 0..self.rows() {
            let b = self.basis[i];
            self.cost[b] = 0.0;
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let w = self.width;
        let piv = self.data[r * w + q];
        {
            let row = &mut self.data[r * w..(r + 1) * w];
            let inv = 1.0 / piv;
            row.iter_mut().for_each(|a| *a *= inv);
            row[q] = 1.0;
        }
        self.scratch.clear();
        for (j, a) in self.data[r * w..(r + 1) * w].iter().enumerate() {
            if *a != 0.0 {
                self.scratch.push(j);
            }
        }
        let sparse = self.scratch.len() * 3 < w;
        let (before, rest) = self.data.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        let update = |row: &mut [f64], idx: &[usize]| {
            let f = row[q];
            if f == 0.0 {
                return;
            }
            if sparse {
                for &j in idx {
                    row[j] -= f * prow[j];
                }
            } else {
                for (a, p) in row.iter_mut().zip(prow.iter()) {
                    *a -= f * p;
                }
            }
            row[q] = 0.0;
        };
        for row in before.chunks_exact_mut(w) {
            update(row, &self.scratch);
        }
        for row in after.chunks_exact_mut(w) {
            update(row, &self.scratch);
        }
        update(&mut self.cost, &self.scratch);
        // Feasibility drift on the right-hand side.
        for i in 0..self.basis.len() {
            let v = &mut self.data[i * w + w - 1];
            if *v < 0.0 && *v > -1e-12 {
                *v = 0.0;
            }
        }
        self.basis[r] = q;
    }

    /// Runs the simplex method on columns `0..active`.
    fn run(
        &mut self,
        std: &StandardForm,
        opts: &SolverOptions,
        active: usize,
        phase_one: bool,
        iterations: &mut usize,
    ) -> RunOutcome {
        let mut degenerate_streak = 0usize;
        let mut bland = false;
        let mut since_reinvert = 0usize;
        loop {
            if *iterations >= opts.max_iterations {
                return RunOutcome::IterationLimit;
            }
            if opts.reinvert_every > 0 && since_reinvert >= opts.reinvert_every {
                self.reinvert(std, phase_one);
                since_reinvert = 0;
            }
            if degenerate_streak >= opts.bland_after {
                // A stall: first perturb the right-hand side, and if the
                // perturbed problem stalls too, use Bland's rule until the
                // next nondegenerate pivot.
                if !self.perturbed {
                    self.perturb(std, phase_one);
                } else {
                    bland = true;
                }
                degenerate_streak = 0;
            }
            let mut enter = None;
            let mut best = -opts.optimality_tol;
            for j in 0..active {
                let d = self.cost[j];
                if d < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(q) = enter else {
                if self.perturbed {
                    self.perturbed = false;
                    self.rhs.clone_from(&std.b);
                    self.reinvert(std, phase_one);
                    since_reinvert = 0;
                    if !self.dual_cleanup(opts, active, iterations) {
                        return RunOutcome::Breakdown;
                    }
                    continue;
                }
                // Confirm optimality on a fresh factorization before stopping;
                // this also undoes the ratio-test shifts.
                if since_reinvert > 0 && opts.reinvert_every > 0 && self.reinvert(std, phase_one) {
                    since_reinvert = 0;
                    if !self.dual_cleanup(opts, active, iterations) {
                        return RunOutcome::Breakdown;
                    }
                    if (0..active).any(|j| self.cost[j] < -opts.optimality_tol) {
                        continue;
                    }
                }
                return RunOutcome::Optimal;
            };
            let Some((r, ratio)) = self.ratio_test(q, opts, bland) else {
                return RunOutcome::Unbounded;
            };
            if ratio <= 1e-14 {
                degenerate_streak += 1;
            } else {
                degenerate_streak = 0;
                bland = false;
            }
            // The Harris test may pick a row that is infeasible within
            // tolerance; shift it to zero so the step is never backwards.
            let w = self.width;
            if self.data[r * w + w - 1] < 0.0 {
                self.data[r * w + w - 1] = 0.0;
            }
            self.pivot(r, q);
            *iterations += 1;
            since_reinvert += 1;
        }
    }

    /// Raises every basic value by a small deterministic amount so that none
    /// sits at zero. The values are moved in place rather than through a
    /// perturbed `b` and a refactorization: with an ill-conditioned basis
    /// `B^-1 e` can be large and would leave the point infeasible. `rhs`
    /// records the matching `b + B d` for later refactorizations.
    fn perturb(&mut self, std: &StandardForm, phase_one: bool) {
        let w = self.width;
        let m = self.rows();
        let mut state = 0x9e37_79b9_7f4a_7c15u64;
        let mut shift = vec![0.0; m];
        for (r, d) in shift.iter_mut().enumerate() {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let u = (state >> 11) as f64 / (1u64 << 53) as f64;
            let x = &mut self.data[r * w + w - 1];
            let moved = x.max(0.0) + 1e-7 * (1.0 + x.abs()) * (1.0 + u);
            *d = moved - *x;
            *x = moved;
        }
        for r in 0..m {
            let o = self.origin[r];
            let bd: f64 = self
                .basis
                .iter()
                .zip(&shift)
                .map(|(&j, d)| std.full_entry(o, j) * d)
                .sum();
            self.rhs[o] += bd;
        }
        if phase_one {
            self.set_phase_one_costs(std);
        } else {
            self.set_phase_two_costs(std);
        }
        self.perturbed = true;
    }

    /// Dual simplex pivots that restore primal feasibility while keeping the
    /// reduced costs nonnegative. Returns false if some row proves the
    /// current right-hand side infeasible. The target is tighter than the
    /// primal tolerance: values left slightly negative here are clamped on
    /// extraction, and each one moves `Ax` by its whole column.
    fn dual_cleanup(
        &mut self,
        opts: &SolverOptions,
        active: usize,
        iterations: &mut usize,
    ) -> bool {
        let w = self.width;
        let target = 1e-3 * opts.feasibility_tol;
        while *iterations < opts.max_iterations {
            let Some((r, b)) = (0..self.rows())
                .map(|i| (i, self.data[i * w + w - 1]))
                .min_by(|x, y| x.1.total_cmp(&y.1))
            else {
                return true;
            };
            if b >= -target {
                return true;
            }
            let mut enter: Option<(usize, f64, f64)> = None;
            for j in 0..active {
                let a = self.data[r * w + j];
                if a >= -opts.pivot_tol {
                    continue;
                }
                let ratio = self.cost[j].max(0.0) / -a;
                let better = match enter {
                    None => true,
                    Some((_, er, ea)) => ratio < er - 1e-12 || (ratio <= er + 1e-12 && -a > -ea),
                };
                if better {
                    enter = Some((j, ratio, a));
                }
            }
            let Some((q, _, _)) = enter else {
                return false;
            };
            self.pivot(r, q);
            *iterations += 1;
        }
        true
    }

    /// Two-pass (Harris) ratio test: bound the step with the feasibility
    /// tolerance relaxed, then choose among the rows that block it. Dantzig
    /// mode takes the largest pivot; Bland mode takes the lowest basic index
    /// among pivots within a factor 100 of the largest.
    fn ratio_test(&self, q: usize, opts: &SolverOptions, bland: bool) -> Option<(usize, f64)> {
        let w = self.width;
        let mut theta = f64::INFINITY;
        for i in 0..self.rows() {
            let a = self.data[i * w + q];
            if a > opts.pivot_tol {
                theta = theta.min((self.data[i * w + w - 1].max(0.0) + opts.feasibility_tol) / a);
            }
        }
        if !theta.is_finite() {
            return None;
        }
        let candidates = (0..self.rows()).filter_map(|i| {
            let a = self.data[i * w + q];
            let ratio = self.data[i * w + w - 1].max(0.0) / a;
            (a > opts.pivot_tol && ratio <= theta).then_some((i, ratio, a))
        });
        let largest = candidates.clone().fold(0.0f64, |m, (_, _, a)| m.max(a));
        let mut leave: Option<(usize, f64, f64)> = None;
        for (i, ratio, a) in candidates {
            let better = match leave {
                None => !bland || a >= 1e-2 * largest,
                Some((li, _, _)) if bland => a >= 1e-2 * largest && self.basis[i] < self.basis[li],
                Some((li, _, la)) => a > la || (a == la && self.basis[i] < self.basis[li]),
            };
            if better {
                leave = Some((i, ratio, a));
            }
        }
        leave.map(|(i, r, _)| (i, r))
    }

    /// Rebuilds every tableau column from the original data through a fresh
    /// LU factorization of the current basis. Returns false, leaving the
    /// tableau untouched, if the basis matrix is numerically singular.
    fn reinvert(&mut self, std: &StandardForm, phase_one: bool) -> bool {
        let m = self.rows();
        let w = self.width;
        let ncols = w - 1;
        let basis_matrix: Vec<f64> = (0..m)
            .flat_map(|r| {
                let o = self.origin[r];
                self.basis.iter().map(move |&j| std.full_entry(o, j))
            })
            .collect();
        let Some(lu) = Lu::factor(basis_matrix, m) else {
            return false;
        };
        let mut col = vec![0.0; m];
        for j in 0..=ncols {
            for (r, c) in col.iter_mut().enumerate() {
                let o = self.origin[r];
                *c = if j == ncols {
                    self.rhs[o]
                } else {
                    std.full_entry(o, j)
                };
            }
            let x = lu.solve(&col);
            for (r, v) in x.into_iter().enumerate() {
                self.data[r * w + j] = if v.abs() < 1e-14 { 0.0 } else { v };
            }
        }
        for (r, &j) in self.basis.iter().enumerate() {
            for i in 0..m {
                self.data[i * w + j] = if i == r { 1.0 } else { 0.0 };
            }
        }
        if phase_one {
            self.set_phase_one_costs(std);
        } else {
            self.set_phase_two_costs(std);
        }
        true
    }

    fn drive_out_artificials(&mut self, std: &StandardForm, opts: &SolverOptions) {
        let first_art = std.n_struct + std.n_slack;
        let mut i = 0;
        while i < self.rows() {
            if self.basis[i] >= first_art {
                let row = self.row(i);
                let mut best: Option<(usize, f64)> = None;
                for (j, a) in row[..first_art].iter().enumerate() {
                    if a.abs() > opts.pivot_tol && best.is_none_or(|(_, b)| a.abs() > b) {
                        best = Some((j, a.abs()));
                    }
                }
                match best {
                    Some((q, _)) => {
                        self.pivot(i, q);
                        i += 1;
                    }
                    None => self.remove_row(i),
                }
            } else {
                i += 1;
            }
        }
    }

    fn remove_row(&mut self, i: usize) {
        let w = self.width;
        self.data.drain(i * w..(i + 1) * w);
        self.basis.remove(i);
        self.origin.remove(i);
    }

    fn drop_artificial_columns(&mut self, std: &StandardForm) {
        let keep = std.n_struct + std.n_slack;
        let new_w = keep + 1;
        let mut data = Vec::with_capacity(self.rows() * new_w);
        for i in 0..self.rows() {
            let row = self.row(i);
            data.extend_from_slice(&row[..keep]);
            data.push(row[self.width - 1]);
        }
        let mut cost = self.cost[..keep].to_vec();
        cost.push(self.cost[self.width - 1]);
        self.data = data;
        self.cost = cost;
        self.width = new_w;
    }

    fn extract(
        &self,
        problem: &LpProblem,
        std: &StandardForm,
        opts: &SolverOptions,
        iterations: usize,
    ) -> LpSolution {
        let n = std.n_struct;
        let m = self.rows();
        let mut x_tab = vec![0.0; n];
        for i in 0..m {
            if self.basis[i] < n {
                x_tab[self.basis[i]] = self.row(i)[self.width - 1].max(0.0);
            }
        }

        // Refactor the basis from the original data.
        let basis_matrix: Vec<f64> = (0..m)
            .flat_map(|r| {
                let origin = self.origin[r];
                self.basis.iter().map(move |&j| std.entry(origin, j))
            })
            .collect();
        let lu = Lu::factor(basis_matrix, m);
        let mut x = x_tab.clone();
        let mut residual = max_residual(problem, &x_tab);
        if let Some(lu) = &lu {
            let rhs: Vec<f64> = self.origin.iter().map(|&o| std.b[o]).collect();
            let xb = lu.solve(&rhs);
            let mut x_lu = vec![0.0; n];
            for (i, &j) in self.basis.iter().enumerate() {
                if j < n {
                    x_lu[j] = xb[i].max(0.0);
                }
            }
            let r_lu = max_residual(problem, &x_lu);
            if r_lu < residual {
                residual = r_lu;
                x = x_lu;
            }
        }

        let mut duals = vec![0.0; problem.num_constraints()];
        let mut bound_duals = vec![0.0; n];
        if let Some(lu) = &lu {
            let cb: Vec<f64> = self
                .basis
                .iter()
                .map(|&j| if j < n { std.cost[j] } else { 0.0 })
                .collect();
            let y = lu.solve_transpose(&cb);
            let flip = if problem.sense == Sense::Maximize {
                -1.0
            } else {
                1.0
            };
            for (r, &o) in self.origin.iter().enumerate() {
                let v = flip * std.row_sign[o] * y[r];
                if o < std.n_explicit {
                    duals[o] = v;
                } else {
                    bound_duals[std.bound_var[o - std.n_explicit]] = v;
                }
            }
        }

        let objective = problem.objective.iter().zip(&x).map(|(c, x)| c * x).sum();
        let scale = 1.0 + std.b.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let status = if residual <= opts.feasibility_tol * scale {
            LpStatus::Optimal
        } else {
            LpStatus::NumericalFailure
        };
        LpSolution {
            status,
            objective,
            x,
            duals,
            bound_duals,
            max_residual: residual,
            iterations,
        }
    }
}

/// Largest violation of the constraints, bounds and sign restrictions at `x`.
pub fn max_residual(problem: &LpProblem, x: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for c in &problem.constraints {
        let ax: f64 = c.coeffs.iter().zip(x).map(|(a, x)| a * x).sum();
        let v = match c.relation {
            Relation::Le => ax - c.rhs,
            Relation::Ge => c.rhs - ax,
            Relation::Eq => (ax - c.rhs).abs(),
        };
        worst = worst.max(v);
    }
    for (j, &xj) in x.iter().enumerate() {
        worst = worst.max(-xj);
        if let Some(u) = problem.upper[j] {
            worst = worst.max(xj - u);
        }
    }
    worst
}

/// Dense LU with partial pivoting.
struct Lu {
    n: usize,
    a: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(mut a: Vec<f64>, n: usize) -> Option<Self> {
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for k in 0..n {
            let (p, pv) = (k..n)
                .map(|i| (i, a[i * n + k].abs()))
                .fold(
                    (k, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
            if pv <= 1e-14 * scale {
                return None;
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let d = a[k * n + k];
            for i in k + 1..n {
                let f = a[i * n + k] / d;
                if f == 0.0 {
                    continue;
                }
                a[i * n + k] = f;
                for j in k + 1..n {
                    a[i * n + j] -= f * a[k * n + j];
                }
            }
        }
        Some(Self { n, a, perm })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.a[i * n + j] * y[j]).sum();
            y[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.a[i * n + j] * y[j]).sum();
            y[i] = (y[i] - s) / self.a[i * n + i];
        }
        y
    }

    /// Solves `A^T y = c`.
    fn solve_transpose(&self, c: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut z = c.to_vec();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.a[j * n + i] * z[j]).sum();
            z[i] = (z[i] - s) / self.a[i * n + i];
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.a[j * n + i] * z[j]).sum();
            z[i] -= s;
        }
        let mut y = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            y[p] = z[k];
        }
        y
    }
}
