//! Small random LPs against brute-force vertex enumeration.

use profile_lp::lp::{max_residual, solve_lp, LpProblem, LpStatus, Relation, Sense};
use proptest::prelude::*;

const BOX: f64 = 10.0;

#[derive(Clone, Debug)]
struct Case {
    sense: Sense,
    c: Vec<f64>,
    rows: Vec<(Vec<f64>, Relation, f64)>,
}

fn relation() -> impl Strategy<Value = Relation> {
    prop_oneof![Just(Relation::Le), Just(Relation::Ge), Just(Relation::Eq)]
}

fn case() -> impl Strategy<Value = Case> {
    (2usize..=3, 1usize..=4).prop_flat_map(|(n, m)| {
        let coef = -5i32..=5;
        (
            prop_oneof![Just(Sense::Minimize), Just(Sense::Maximize)],
            prop::collection::vec(coef.clone(), n),
            prop::collection::vec((prop::collection::vec(coef, n), relation(), -8i32..=12), m),
        )
            .prop_map(|(sense, c, rows)| Case {
                sense,
                c: c.into_iter().map(f64::from).collect(),
                rows: rows
                    .into_iter()
                    .map(|(a, r, b)| (a.into_iter().map(f64::from).collect(), r, f64::from(b)))
                    .collect(),
            })
    })
}

fn build(case: &Case) -> LpProblem {
    let mut lp = LpProblem::new(case.sense, case.c.clone());
    for (a, r, b) in &case.rows {
        lp.add_constraint(a.clone(), *r, *b).unwrap();
    }
    for j in 0..case.c.len() {
        lp.set_upper_bound(j, BOX).unwrap();
    }
    lp
}

/// Solves the square system by Gaussian elimination with partial pivoting.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            let (top, bottom) = a.split_at_mut(r);
            for (x, y) in bottom[0][col..].iter_mut().zip(&top[col][col..]) {
                *x -= f * y;
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if n < k {
        return vec![];
    }
    let mut out = combinations(n - 1, k);
    for mut c in combinations(n - 1, k - 1) {
        c.push(n - 1);
        out.push(c);
    }
    out
}

/// Best objective over all basic feasible points, or `None` if the box-bounded
/// region is empty.
fn vertex_oracle(case: &Case) -> Option<f64> {
    let n = case.c.len();
    let mut planes: Vec<(Vec<f64>, f64)> =
        case.rows.iter().map(|(a, _, b)| (a.clone(), *b)).collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        planes.push((e.clone(), 0.0));
        planes.push((e, BOX));
    }
    let feasible = |x: &[f64]| {
        x.iter().all(|&v| (-1e-9..=BOX + 1e-9).contains(&v))
            && case.rows.iter().all(|(a, r, b)| {
                let ax: f64 = a.iter().zip(x).map(|(a, x)| a * x).sum();
                match r {
                    Relation::Le => ax <= b + 1e-9,
                    Relation::Ge => ax >= b - 1e-9,
                    Relation::Eq => (ax - b).abs() <= 1e-9,
                }
            })
    };
    let mut best: Option<f64> = None;
    for set in combinations(planes.len(), n) {
        let a = set.iter().map(|&i| planes[i].0.clone()).collect();
        let b = set.iter().map(|&i| planes[i].1).collect();
        let Some(x) = solve_square(a, b) else {
            continue;
        };
        if !feasible(&x) {
            continue;
        }
        let v: f64 = case.c.iter().zip(&x).map(|(c, x)| c * x).sum();
        best = Some(match (best, case.sense) {
            (None, _) => v,
            (Some(b), Sense::Maximize) => b.max(v),
            (Some(b), Sense::Minimize) => b.min(v),
        });
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn matches_vertex_enumeration(case in case()) {
        let lp = build(&case);
        let sol = solve_lp(&lp).unwrap();
        match vertex_oracle(&case) {
            None => prop_assert_eq!(sol.status, LpStatus::Infeasible),
            Some(best) => {
                prop_assert_eq!(sol.status, LpStatus::Optimal);
                prop_assert!((sol.objective - best).abs() <= 1e-7 * (1.0 + best.abs()),
                    "solver {} oracle {}", sol.objective, best);
                prop_assert!(max_residual(&lp, &sol.x) <= 1e-9);
            }
        }
    }

    #[test]
    fn strong_duality(case in case()) {
        let lp = build(&case);
        let sol = solve_lp(&lp).unwrap();
        if sol.status == LpStatus::Optimal {
            let dual: f64 = case.rows.iter().zip(&sol.duals).map(|((_, _, b), y)| b * y).sum::<f64>()
                + sol.bound_duals.iter().map(|w| BOX * w).sum::<f64>();
            prop_assert!((dual - sol.objective).abs() <= 1e-7 * (1.0 + sol.objective.abs()),
                "primal {} dual {}", sol.objective, dual);
        }
    }
}

#[test]
fn text_dump_solves_identically() {
    let mut lp = LpProblem::new(Sense::Maximize, vec![3.0, 2.0, -1.0]);
    lp.add_constraint(vec![1.0, 1.0, 1.0], Relation::Le, 4.0)
        .unwrap();
    lp.add_constraint(vec![1.0, -1.0, 0.0], Relation::Ge, -1.0)
        .unwrap();
    lp.add_constraint(vec![0.0, 1.0, 2.0], Relation::Eq, 3.0)
        .unwrap();
    lp.set_upper_bound(0, 2.5).unwrap();
    let a = solve_lp(&lp).unwrap();
    let b = solve_lp(&LpProblem::from_text(&lp.to_text()).unwrap()).unwrap();
    assert_eq!(a.status, LpStatus::Optimal);
    assert_eq!(a.x, b.x);
    assert_eq!(a.objective, b.objective);
}
