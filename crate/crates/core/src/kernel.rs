//! The binomial thinning kernel `P(i, m) = C(i, m) p^m (1-p)^(i-m)`.

use std::borrow::Cow;

use crate::error::{check_probability, Error, Result};

/// Kernels up to this dimension keep every row in memory.
pub const DENSE_LIMIT: usize = 5000;

const UNDERFLOW: f64 = 1e-300;
const FLUSH: f64 = 1e-320;

#[derive(Clone, Debug)]
pub struct BinomialKernel {
    p: f64,
    dim: usize,
    /// Packed lower triangle: row `i` occupies `i*(i+1)/2 .. (i+1)*(i+2)/2`.
    dense: Option<Vec<f64>>,
}

impl BinomialKernel {
    /// Kernel on states `0..=dim`.
    pub fn new(p: f64, dim: usize) -> Result<Self> {
        check_probability(p)?;
        let dense = (dim <= DENSE_LIMIT).then(|| {
            let mut data = Vec::with_capacity((dim + 1) * (dim + 2) / 2);
            for i in 0..=dim {
                data.extend(binomial_row(i, p));
            }
            data
        });
        Ok(Self { p, dim, dense })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Largest state index `N`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `Binomial(i, p)` pmf on `0..=i`.
    pub fn row(&self, i: usize) -> Result<Cow<'_, [f64]>> {
        if i > self.dim {
            return Err(Error::IndexOutOfRange {
                index: i,
                dim: self.dim,
            });
        }
        Ok(match &self.dense {
            Some(d) => {
                let start = i * (i + 1) / 2;
                Cow::Borrowed(&d[start..start + i + 1])
            }
            None => Cow::Owned(binomial_row(i, self.p)),
        })
    }

    pub fn entry(&self, i: usize, m: usize) -> Result<f64> {
        let row = self.row(i)?;
        Ok(row.get(m).copied().unwrap_or(0.0))
    }

    /// `(vP)_m = sum_i v_i P(i, m)`; the output has the length of `v`.
    pub fn push_forward(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() > self.dim + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.dim + 1,
                got: v.len(),
            });
        }
        let mut out = vec![0.0; v.len()];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            let row = self.row(i)?;
            for (o, &pm) in out.iter_mut().zip(row.iter()) {
                *o += vi * pm;
            }
        }
        Ok(out)
    }

    /// `sum_m |(vP)_m|`.
    pub fn l1_image_norm(&self, v: &[f64]) -> Result<f64> {
        Ok(self.push_forward(v)?.iter().map(|x| x.abs()).sum())
    }
}

/// `Binomial(i, p)` pmf. Entries that would fall below `1e-320` are zero.
pub fn binomial_row(i: usize, p: f64) -> Vec<f64> {
    let mut row = vec![0.0; i + 1];
    if p == 0.0 {
        row[0] = 1.0;
        return row;
    }
    if p == 1.0 {
        row[i] = 1.0;
        return row;
    }
    let q = 1.0 - p;
    let ratio = p / q;
    let log_q = (-p).ln_1p();
    let start = i as f64 * log_q;
    if start >= UNDERFLOW.ln() {
        let mut v = start.exp();
        row[0] = v;
        for m in 0..i {
            v *= (i - m) as f64 / (m + 1) as f64 * ratio;
            if v < FLUSH && m as f64 + 1.0 > i as f64 * p {
                break;
            }
            row[m + 1] = if v < FLUSH { 0.0 } else { v };
        }
        normalize(&mut row);
        return row;
    }

    // (1-p)^i underflows: start from the mode in the log domain and walk outwards.
    let mode = (((i + 1) as f64 * p).floor() as usize).min(i);
    let log_choose: f64 = (1..=mode)
        .map(|j| ((i - mode + j) as f64 / j as f64).ln())
        .sum();
    let log_mode = log_choose + mode as f64 * p.ln() + (i - mode) as f64 * log_q;
    let peak = log_mode.exp();
    row[mode] = peak;
    let mut v = peak;
    for m in mode..i {
        v *= (i - m) as f64 / (m + 1) as f64 * ratio;
        if v < FLUSH {
            break;
        }
        row[m + 1] = v;
    }
    v = peak;
    for m in (1..=mode).rev() {
        v *= m as f64 / (i - m + 1) as f64 / ratio;
        if v < FLUSH {
            break;
        }
        row[m - 1] = v;
    }
    normalize(&mut row);
    row
}

/// Removes the common rounding drift of the recurrence; the exact row sums to one.
fn normalize(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    if s > 0.0 {
        row.iter_mut().for_each(|x| *x /= s);
    }
}
