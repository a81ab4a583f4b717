//! Generalized Laguerre polynomials `L_n^{(-1)}(x)` by the three-term recurrence
//! `(n+1) L_{n+1} = (2n - x) L_n - (n-1) L_{n-1}`, `L_0 = 1`, `L_1 = -x`.

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};

/// Largest `beta` for which `e^{-beta} L_n^{(-1)}(2 beta)` is carried directly in `f64`.
pub const MAX_BETA: f64 = 300.0;

/// Longest sequence [`laguerre_scaled`] will produce for a given `beta`.
pub fn max_scaled_len(beta: f64) -> usize {
    (50.0 * beta).ceil() as usize + 1000
}

/// `s_m = e^{-beta} L_m^{(-1)}(2 beta)` for `m = 0..=m_max`.
///
/// The recurrence is linear, so it runs directly on the scaled values.
pub fn laguerre_scaled(beta: f64, m_max: usize) -> Result<Vec<f64>> {
    if !(beta > 0.0 && beta <= MAX_BETA) {
        return Err(Error::OutOfRegime(format!(
            "beta = {beta} outside (0, {MAX_BETA}]"
        )));
    }
    if m_max > max_scaled_len(beta) {
        return Err(Error::InvalidParameter(format!(
            "m_max = {m_max} exceeds {} for beta = {beta}",
            max_scaled_len(beta)
        )));
    }
    let x = 2.0 * beta;
    let mut s = Vec::with_capacity(m_max + 1);
    s.push((-beta).exp());
    if m_max >= 1 {
        s.push(-x * s[0]);
    }
    for n in 1..m_max {
        let nf = n as f64;
        let next = ((2.0 * nf - x) * s[n] - (nf - 1.0) * s[n - 1]) / (nf + 1.0);
        if !next.is_finite() {
            return Err(Error::Overflow(format!(
                "Laguerre recurrence overflowed at n = {}",
                n + 1
            )));
        }
        s.push(next);
    }
    Ok(s)
}

/// `(sign, ln |L_n^{(-1)}(x)|)` for `n = 0..=n_max`, for any `x >= 0`.
///
/// The recurrence state is renormalized whenever it leaves `[1e-200, 1e200]`
/// and the accumulated scale is tracked separately, so neither the values nor
/// the intermediate state can overflow or underflow.
pub fn laguerre_log(x: f64, n_max: usize) -> Vec<(f64, f64)> {
    const BIG: f64 = 1e200;
    let mut out = Vec::with_capacity(n_max + 1);
    let mut prev = 1.0f64;
    let mut cur = -x;
    let mut log_scale = 0.0f64;
    let entry = |v: f64, log_scale: f64| {
        if v == 0.0 {
            (0.0, f64::NEG_INFINITY)
        } else {
            (v.signum(), v.abs().ln() + log_scale)
        }
    };
    out.push((1.0, 0.0));
    if n_max >= 1 {
        out.push(entry(cur, 0.0));
    }
    for n in 1..n_max {
        let nf = n as f64;
        let next = ((2.0 * nf - x) * cur - (nf - 1.0) * prev) / (nf + 1.0);
        prev = cur;
        cur = next;
        let mag = cur.abs().max(prev.abs());
        if mag > BIG || (mag < 1.0 / BIG && mag > 0.0) {
            let shift = mag.ln();
            let f = (-shift).exp();
            cur *= f;
            prev *= f;
            log_scale += shift;
        }
        out.push(entry(cur, log_scale));
    }
    out
}

/// Fractional bits of the fixed-point arithmetic in [`generating_check`].
const FIXED_BITS: u64 = 1536;

/// Exact binary fixed-point image of a finite `f64`.
fn to_fixed(v: f64) -> BigInt {
    if v == 0.0 {
        return BigInt::zero();
    }
    let bits = v.abs().to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mant, e) = if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp - 1075)
    };
    let shift = FIXED_BITS as i64 + e;
    let m = BigInt::from(mant);
    let out = if shift >= 0 {
        m << shift as u64
    } else {
        m >> (-shift) as u64
    };
    if v < 0.0 {
        -out
    } else {
        out
    }
}

/// `a / b` as `f64` for integers far outside the `f64` range.
fn big_ratio(a: &BigInt, b: &BigInt) -> f64 {
    let s = a.bits().max(b.bits()).saturating_sub(1000);
    let fa = (a >> s).to_f64().unwrap_or(f64::NAN);
    let fb = (b >> s).to_f64().unwrap_or(f64::NAN);
    fa / fb
}

#[derive(Clone, Debug, Serialize)]
pub struct GeneratingCheck {
    pub x: f64,
    pub v: f64,
    pub terms: usize,
    /// `sum_{n <= N} v^n L_n^{(-1)}(x)`.
    pub partial_sum: f64,
    /// `exp(-x v / (1 - v))`.
    pub closed_form: f64,
    pub rel_residual: f64,
}

/// Compares partial sums of `sum_n v^n L_n^{(-1)}(x)` with `exp(-x v / (1 - v))`.
///
/// The sum cancels catastrophically in `f64` (terms reach `e^{x/2}` while the
/// limit is `e^{-x v/(1-v)}`), so the recurrence runs in binary fixed point
/// with enough bits that rounding stays far below the limit. The inputs are
/// converted exactly.
pub fn generating_check(x: f64, v: f64, terms: usize) -> Result<GeneratingCheck> {
    if !(0.0..=1e3).contains(&x) {
        return Err(Error::InvalidParameter(format!(
            "x = {x} outside [0, 1000]"
        )));
    }
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "v = {v} must lie in (0, 1)"
        )));
    }
    let one = BigInt::from(1) << FIXED_BITS;
    let xf = to_fixed(x);
    let vf = to_fixed(v);
    let mul = |a: &BigInt, b: &BigInt| (a * b) >> FIXED_BITS;

    let mut prev = one.clone();
    let mut cur = -xf.clone();
    let mut pow = one.clone();
    let mut sum = one.clone();
    if terms >= 1 {
        pow = vf.clone();
        sum += mul(&cur, &pow);
    }
    for n in 1..terms {
        let two_n = BigInt::from(2 * n as u64) << FIXED_BITS;
        let next = (mul(&(two_n - &xf), &cur) - &prev * BigInt::from(n as u64 - 1))
            / BigInt::from(n as u64 + 1);
        prev = std::mem::replace(&mut cur, next);
        pow = mul(&pow, &vf);
        sum += mul(&cur, &pow);
    }
    let closed_form = (-x * v / (1.0 - v)).exp();
    let target = to_fixed(closed_form);
    let rel_residual = big_ratio(&(&sum - &target).abs(), &target);
    let partial_sum = closed_form * big_ratio(&sum, &target);
    Ok(GeneratingCheck {
        x,
        v,
        terms,
        partial_sum,
        closed_form,
        rel_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_degree_values() {
        for &x in &[0.5, 2.0, 7.0] {
            let b = x / 2.0;
            let s = laguerre_scaled(b, 2).unwrap();
            let e = (-b).exp();
            assert!((s[0] / e - 1.0).abs() < 1e-15);
            assert!((s[1] / e + x).abs() < 1e-13);
            assert!((s[2] / e - (x * x / 2.0 - x)).abs() < 1e-12);
        }
    }

    #[test]
    fn generating_low_order_and_convergence() {
        // Order two: 1 - x v + (x^2/2 - x) v^2.
        let c = generating_check(3.0, 0.25, 2).unwrap();
        let expect = 1.0 - 0.75 + (4.5 - 3.0) * 0.0625;
        assert!((c.partial_sum - expect).abs() < 1e-15);
        let c = generating_check(10.0, 0.3, 2000).unwrap();
        assert!(c.rel_residual < 1e-12, "{c:?}");
        assert!(generating_check(1.0, 1.0, 10).is_err());
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(laguerre_scaled(0.0, 5).is_err());
        assert!(laguerre_scaled(301.0, 5).is_err());
        assert!(laguerre_scaled(1.0, 10_000).is_err());
    }

    #[test]
    fn log_form_agrees_with_scaled() {
        let beta = 40.0;
        let s = laguerre_scaled(beta, 600).unwrap();
        let l = laguerre_log(2.0 * beta, 600);
        for (n, (&sn, &(sign, ln))) in s.iter().zip(&l).enumerate() {
            let v = sign * (ln - beta).exp();
            assert!(
                (v - sn).abs() <= 1e-12 * sn.abs().max(1e-300),
                "n={n}: {v} vs {sn}"
            );
        }
        // Far outside the f64 range of the raw polynomial.
        let big = laguerre_log(3000.0, 4000);
        assert!(big.iter().all(|(s, l)| s.abs() <= 1.0 && !l.is_nan()));
    }
}
