//! Urns, profiles, fingerprints, Bernoulli subsampling and profile distances.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_probability, Error, Result};

const MASS_TOL: f64 = 1e-9;

/// A population of `k` types; `counts[j]` balls have color `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Urn {
    k: usize,
    counts: Vec<u64>,
}

#[derive(Deserialize)]
struct RawUrn {
    k: usize,
    counts: Vec<u64>,
}

impl<'de> Deserialize<'de> for Urn {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawUrn::deserialize(d)?;
        Urn::new(raw.k, raw.counts).map_err(D::Error::custom)
    }
}

impl Urn {
    pub fn new(k: usize, counts: Vec<u64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidUrn("k must be positive".into()));
        }
        if counts.len() != k {
            return Err(Error::InvalidUrn(format!(
                "expected {k} counts, got {}",
                counts.len()
            )));
        }
        let total = counts.iter().try_fold(0u64, |a, &c| a.checked_add(c));
        match total {
            Some(t) if t <= k as u64 => Ok(Self { k, counts }),
            _ => Err(Error::InvalidUrn(format!("more than k = {k} balls"))),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn balls(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("urn serializes")
    }

    /// Builds an urn of `k` types from a named family.
    pub fn generate(family: UrnFamily, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidUrn("k must be positive".into()));
        }
        match family {
            UrnFamily::UniformSingletons => Urn::new(k, vec![1; k]),
            UrnFamily::SingleColor => {
                let mut counts = vec![0; k];
                counts[0] = k as u64;
                Urn::new(k, counts)
            }
            UrnFamily::Geometric => {
                // pi_m = 2^-(m+1) has mean exactly 1.
                let mut mass = Vec::new();
                let mut w = 0.5;
                while w * k as f64 >= 1e-3 && mass.len() < 64 {
                    mass.push(w);
                    w *= 0.5;
                }
                let rest: f64 = 1.0 - mass.iter().sum::<f64>();
                mass[0] += rest;
                Ok(urn_from_profile(&mass, k)?.0)
            }
            UrnFamily::TwoPoint => Ok(urn_from_profile(&[0.5, 0.0, 0.5], k)?.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UrnFamily {
    /// Every type holds one ball.
    UniformSingletons,
    /// One type holds all `k` balls.
    SingleColor,
    /// Type sizes follow `2^-(m+1)`, mean one.
    Geometric,
    /// Half the types empty, half of size two.
    TwoPoint,
}

impl std::str::FromStr for UrnFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_singletons" | "singletons" => Ok(Self::UniformSingletons),
            "single_color" => Ok(Self::SingleColor),
            "geometric" => Ok(Self::Geometric),
            "two_point" => Ok(Self::TwoPoint),
            other => Err(Error::InvalidParameter(format!(
                "unknown urn family `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for UrnFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::UniformSingletons => "uniform_singletons",
            Self::SingleColor => "single_color",
            Self::Geometric => "geometric",
            Self::TwoPoint => "two_point",
        })
    }
}

/// Rounds `k * pi` to integer type counts with the largest-remainder method,
/// then moves types from the top of the support downward until the ball count
/// is at most `k`. Returns the urn and the TV distance between its profile and
/// `pi`.
pub fn urn_from_profile(pi: &[f64], k: usize) -> Result<(Urn, f64)> {
    if k == 0 || pi.is_empty() {
        return Err(Error::InvalidParameter("empty profile or k = 0".into()));
    }
    if pi.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidProfile(
            "masses must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = pi.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::InvalidProfile(format!("mass sums to {total}")));
    }
    let scaled: Vec<f64> = pi.iter().map(|x| x / total * k as f64).collect();
    let mut n: Vec<u64> = scaled.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = n.iter().sum();
    let mut order: Vec<usize> = (0..pi.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &m in order
        .iter()
        .take((k as u64).saturating_sub(assigned) as usize)
    {
        n[m] += 1;
    }

    let mut balls: u64 = n.iter().enumerate().map(|(m, c)| m as u64 * c).sum();
    while balls > k as u64 {
        let top = n
            .iter()
            .rposition(|&c| c > 0)
            .expect("some type is occupied");
        if top == 0 {
            break;
        }
        let excess = balls - k as u64;
        let dest = top.saturating_sub(excess as usize);
        n[top] -= 1;
        n[dest] += 1;
        balls -= (top - dest) as u64;
    }

    let mut counts = Vec::with_capacity(k);
    for (m, &c) in n.iter().enumerate().rev() {
        counts.extend(std::iter::repeat_n(m as u64, c as usize));
    }
    let urn = Urn::new(k, counts)?;
    let prof = profile_of_urn(&urn);
    let err = tv_distance(prof.mass(), pi);
    Ok((urn, err))
}

/// A probability vector `(pi_0, ..., pi_M)` over type sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    mass: Vec<f64>,
    mean_constrained: bool,
}

impl Profile {
    /// A probability vector; the mean is not constrained.
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        Self::build(mass, false)
    }

    /// A probability vector with mean at most one.
    pub fn with_mean_constraint(mass: Vec<f64>) -> Result<Self> {
        Self::build(mass, true)
    }

    fn build(mut mass: Vec<f64>, mean_constrained: bool) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::InvalidProfile("empty mass vector".into()));
        }
        for x in mass.iter_mut() {
            if !x.is_finite() || *x < -1e-12 {
                return Err(Error::InvalidProfile(format!("invalid mass entry {x}")));
            }
            *x = x.max(0.0);
        }
        let s: f64 = mass.iter().sum();
        if (s - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidProfile(format!("mass sums to {s}")));
        }
        let profile = Self {
            mass,
            mean_constrained,
        };
        if mean_constrained && profile.mean() > 1.0 + MASS_TOL {
            return Err(Error::InvalidProfile(format!(
                "mean {} exceeds 1",
                profile.mean()
            )));
        }
        Ok(profile)
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn into_mass(self) -> Vec<f64> {
        self.mass
    }

    /// Largest index of the stored support.
    pub fn support_bound(&self) -> usize {
        self.mass.len() - 1
    }

    pub fn is_mean_constrained(&self) -> bool {
        self.mean_constrained
    }

    pub fn mean(&self) -> f64 {
        self.mass
            .iter()
            .enumerate()
            .map(|(m, x)| m as f64 * x)
            .sum()
    }

    pub fn delta(m: usize) -> Self {
        let mut mass = vec![0.0; m + 1];
        mass[m] = 1.0;
        Self {
            mass,
            mean_constrained: m <= 1,
        }
    }
}

impl Serialize for Profile {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.mass.iter().map(|x| x.to_string()))
    }
}

impl<'de> Deserialize<'de> for Profile {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        let mass = raw
            .iter()
            .map(|s| s.parse::<f64>().map_err(D::Error::custom))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Profile::new(mass).map_err(D::Error::custom)
    }
}

/// Type-count histogram `Y_m = #{j : X_j = m}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    y: Vec<u64>,
    k: usize,
}

impl Fingerprint {
    pub fn new(y: Vec<u64>, k: usize) -> Result<Self> {
        if k == 0 || y.iter().sum::<u64>() != k as u64 {
            return Err(Error::InvalidParameter(format!(
                "fingerprint counts must sum to k = {k}"
            )));
        }
        Ok(Self { y, k })
    }

    pub fn y(&self) -> &[u64] {
        &self.y
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Largest observed count.
    pub fn max_count(&self) -> usize {
        self.y.iter().rposition(|&c| c > 0).unwrap_or(0)
    }
}

/// Profile of the urn: the fraction of types of each size.
pub fn profile_of_urn(urn: &Urn) -> Profile {
    let max = urn.counts.iter().copied().max().unwrap_or(0) as usize;
    let mut hist = vec![0u64; max + 1];
    for &c in &urn.counts {
        hist[c as usize] += 1;
    }
    let k = urn.k as f64;
    Profile {
        mass: hist.iter().map(|&h| h as f64 / k).collect(),
        mean_constrained: true,
    }
}

/// Independent `Binomial(theta_j, p)` draws from a ChaCha8 stream seeded by `seed`.
pub fn sample_bernoulli(urn: &Urn, p: f64, seed: u64) -> Result<Vec<u64>> {
    check_probability(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    urn.counts
        .iter()
        .map(|&theta| {
            if theta == 0 || p == 0.0 {
                Ok(0)
            } else if p == 1.0 {
                Ok(theta)
            } else {
                let b =
                    Binomial::new(theta, p).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                Ok(b.sample(&mut rng))
            }
        })
        .collect()
}

pub fn fingerprint(x: &[u64]) -> Fingerprint {
    let max = x.iter().copied().max().unwrap_or(0) as usize;
    let mut y = vec![0u64; max + 1];
    for &xi in x {
        y[xi as usize] += 1;
    }
    Fingerprint { y, k: x.len() }
}

/// `nu_m = Y_m / k` for `m >= 1`, with `nu_0` recovered as the complement.
pub fn observed_distribution(fp: &Fingerprint) -> Profile {
    let k = fp.k as f64;
    let mut mass: Vec<f64> = fp.y.iter().map(|&c| c as f64 / k).collect();
    mass[0] = 1.0 - mass[1..].iter().sum::<f64>();
    Profile {
        mass,
        mean_constrained: false,
    }
}

/// `1/2 sum |a_m - b_m|` with zero padding.
pub fn tv_distance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    0.5 * (0..n).map(|i| (get(a, i) - get(b, i)).abs()).sum::<f64>()
}

/// `sum_{j>=1} |sum_{i>=j} (a_i - b_i)|`, the L1 distance between survival functions.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let mut tail = 0.0;
    let mut total = 0.0;
    for j in (1..n).rev() {
        tail += get(a, j) - get(b, j);
        total += tail.abs();
    }
    total
}

/// Profile of the urn `round(X_j / p)`, trimmed to at most `k` balls by
/// repeatedly decrementing the largest entry (lowest index first on ties).
pub fn sorted_empirical_baseline(x: &[u64], p: f64) -> Result<Profile> {
    check_probability(p)?;
    if p == 0.0 {
        return Err(Error::InvalidProbability(p));
    }
    let k = x.len();
    let mut theta: Vec<u64> = x.iter().map(|&xi| (xi as f64 / p).round() as u64).collect();
    let mut total: u64 = theta.iter().sum();
    if total > k as u64 {
        let mut heap: BinaryHeap<(u64, Reverse<usize>)> = theta
            .iter()
            .enumerate()
            .filter(|(_, &t)| t > 0)
            .map(|(j, &t)| (t, Reverse(j)))
            .collect();
        while total > k as u64 {
            let (t, Reverse(j)) = heap.pop().expect("positive total has a positive entry");
            theta[j] = t - 1;
            total -= 1;
            if t > 1 {
                heap.push((t - 1, Reverse(j)));
            }
        }
    }
    Ok(profile_of_urn(&Urn::new(k, theta)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn profiles_of_small_urns() {
        let u = Urn::new(4, vec![4, 0, 0, 0]).unwrap();
        assert_eq!(profile_of_urn(&u).mass(), &[0.75, 0.0, 0.0, 0.0, 0.25]);
        let u = Urn::new(3, vec![1, 1, 1]).unwrap();
        assert_eq!(profile_of_urn(&u).mass(), &[0.0, 1.0]);
        let u = Urn::new(2, vec![2, 0]).unwrap();
        assert_eq!(profile_of_urn(&u).mass(), &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn urn_validation() {
        assert!(Urn::new(2, vec![2, 1]).is_err());
        assert!(Urn::new(2, vec![1]).is_err());
        assert!(Urn::from_json(r#"{"k":3,"counts":[3,1,0]}"#).is_err());
        let u = Urn::from_json(r#"{"k":3,"counts":[1,2,0]}"#).unwrap();
        assert_eq!(Urn::from_json(&u.to_json()).unwrap(), u);
    }

    #[test]
    fn fingerprints_and_observed() {
        let fp = fingerprint(&[0, 0, 3]);
        assert_eq!(fp.y(), &[2, 0, 0, 1]);
        let nu = observed_distribution(&fp);
        assert!(tv_distance(nu.mass(), &[2.0 / 3.0, 0.0, 0.0, 1.0 / 3.0]) < 1e-15);
        assert_eq!(fingerprint(&[1, 1, 1]).y(), &[0, 3]);
        assert_eq!(
            observed_distribution(&fingerprint(&[1, 1, 1])).mass(),
            &[0.0, 1.0]
        );
        assert_eq!(observed_distribution(&fingerprint(&[0; 5])).mass(), &[1.0]);
    }

    #[test]
    fn sampling_extremes() {
        let u = Urn::new(5, vec![2, 0, 3, 0, 0]).unwrap();
        assert_eq!(sample_bernoulli(&u, 1.0, 3).unwrap(), u.counts());
        assert_eq!(sample_bernoulli(&u, 0.0, 3).unwrap(), vec![0; 5]);
        assert_eq!(
            sample_bernoulli(&u, 0.4, 11).unwrap(),
            sample_bernoulli(&u, 0.4, 11).unwrap()
        );
        assert!(sample_bernoulli(&u, -0.1, 0).is_err());
    }

    #[test]
    fn distances() {
        assert_eq!(tv_distance(&[1.0], &[0.0, 1.0]), 1.0);
        assert_eq!(wasserstein1(&[1.0], &[0.0, 1.0]), 1.0);
        assert_eq!(
            tv_distance(&[0.75, 0.0, 0.0, 0.0, 0.25], &[0.5, 0.0, 0.5]),
            0.5
        );
        let pi = [0.2, 0.3, 0.5];
        assert_eq!(tv_distance(&pi, &pi), 0.0);
        assert_eq!(wasserstein1(&pi, &pi), 0.0);
    }

    #[test]
    fn baseline_examples() {
        let u = Urn::new(6, vec![3, 1, 1, 0, 1, 0]).unwrap();
        assert_eq!(
            sorted_empirical_baseline(u.counts(), 1.0).unwrap(),
            profile_of_urn(&u)
        );
        assert_eq!(
            sorted_empirical_baseline(&[0; 4], 0.3).unwrap().mass(),
            &[1.0]
        );
        // round(3/0.5) = 6 exceeds k = 3 and is trimmed to 3.
        let b = sorted_empirical_baseline(&[3, 0, 0], 0.5).unwrap();
        assert_eq!(b.mass(), &[2.0 / 3.0, 0.0, 0.0, 1.0 / 3.0]);
        assert!(sorted_empirical_baseline(&[1], 0.0).is_err());
    }

    #[test]
    fn quantization() {
        let (u, err) = urn_from_profile(&[0.75, 0.0, 0.0, 0.0, 0.25], 8).unwrap();
        assert_eq!(u.counts(), &[4, 4, 0, 0, 0, 0, 0, 0]);
        assert_eq!(err, 0.0);
        let (u, _) = urn_from_profile(&[0.0, 1.0], 7).unwrap();
        assert_eq!(u.counts(), &[1; 7]);
        for fam in [
            UrnFamily::UniformSingletons,
            UrnFamily::SingleColor,
            UrnFamily::Geometric,
            UrnFamily::TwoPoint,
        ] {
            for k in [1usize, 2, 3, 10, 1000] {
                let u = Urn::generate(fam, k).unwrap();
                assert!(u.balls() <= k as u64, "{fam} k={k}");
                assert_eq!(fam.to_string().parse::<UrnFamily>().unwrap(), fam);
            }
        }
    }

    #[test]
    fn profile_json_round_trip() {
        let p = Profile::new(vec![0.1, 0.2, 0.7]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"["0.1","0.2","0.7"]"#);
        let back: Profile = serde_json::from_str(&s).unwrap();
        assert_eq!(back.mass(), p.mass());
        assert!(Profile::with_mean_constraint(vec![0.0, 0.0, 1.0]).is_err());
        assert!(Profile::new(vec![0.5, 0.4]).is_err());
    }

    fn urn_strategy(max_k: usize) -> impl Strategy<Value = Urn> {
        (1..=max_k).prop_flat_map(|k| {
            prop::collection::vec(0..=k as u64, k).prop_map(move |mut counts| {
                // Trim greedily to respect the ball budget.
                let mut budget = k as u64;
                for c in counts.iter_mut() {
                    *c = (*c).min(budget);
                    budget -= *c;
                }
                Urn::new(k, counts).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn profile_invariants(u in urn_strategy(50)) {
            let pi = profile_of_urn(&u);
            prop_assert!((pi.mass().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!((pi.mean() - u.balls() as f64 / u.k() as f64).abs() < 1e-12);
            prop_assert!(pi.mean() <= 1.0 + 1e-12);
        }

        #[test]
        fn exact_sampling_recovers_profile(u in urn_strategy(50), seed in any::<u64>()) {
            let x = sample_bernoulli(&u, 1.0, seed).unwrap();
            let fp = fingerprint(&x);
            let pi = profile_of_urn(&u);
            for (m, &y) in fp.y().iter().enumerate() {
                prop_assert_eq!(y as f64, (pi.mass()[m] * u.k() as f64).round());
            }
        }

        #[test]
        fn metrics(a in prop::collection::vec(0.0f64..1.0, 1..12),
                   b in prop::collection::vec(0.0f64..1.0, 1..12),
                   c in prop::collection::vec(0.0f64..1.0, 1..12)) {
            prop_assert_eq!(tv_distance(&a, &b), tv_distance(&b, &a));
            prop_assert_eq!(wasserstein1(&a, &b), wasserstein1(&b, &a));
            prop_assert!(tv_distance(&a, &c) <= tv_distance(&a, &b) + tv_distance(&b, &c) + 1e-12);
            prop_assert!(wasserstein1(&a, &c) <= wasserstein1(&a, &b) + wasserstein1(&b, &c) + 1e-12);
        }

        #[test]
        fn quantized_urns_are_valid(w in prop::collection::vec(0.0f64..1.0, 1..10), k in 1usize..300) {
            let s: f64 = w.iter().sum();
            prop_assume!(s > 0.0);
            let pi: Vec<f64> = w.iter().map(|x| x / s).collect();
            let (u, err) = urn_from_profile(&pi, k).unwrap();
            prop_assert!(u.balls() <= k as u64);
            prop_assert!((tv_distance(profile_of_urn(&u).mass(), &pi) - err).abs() < 1e-15);
        }
    }
}
