//! Exact and asymptotic facts about maxima of (truncated) geometric draws.
//!
//! Exact quantities are generic over [`Probability`]; instantiate with
//! [`Rational`](crate::Rational) for exact answers and `f64` for quick ones.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::scalar::Probability;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("distribution support must be strictly increasing")]
    Unsorted,
    #[error("distribution support and masses differ in length")]
    Shape,
    #[error("masses must be positive")]
    NonPositive,
    #[error("masses sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("empty distribution")]
    Empty,
    #[error("approximation needs 2^(1-x)/s <= 1/2 (s={s}, x={x})")]
    OutOfRange { s: u64, x: f64 },
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// A finitely supported distribution over integers.
#[derive(Clone, Debug, PartialEq)]
pub struct Dist<P> {
    support: Vec<i64>,
    masses: Vec<P>,
}

impl<P: Probability> Dist<P> {
    pub fn new(support: Vec<i64>, masses: Vec<P>) -> Result<Self, AnalysisError> {
        if support.len() != masses.len() {
            return Err(AnalysisError::Shape);
        }
        if support.is_empty() {
            return Err(AnalysisError::Empty);
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AnalysisError::Unsorted);
        }
        if masses.iter().any(|m| *m <= P::zero()) {
            return Err(AnalysisError::NonPositive);
        }
        let total = masses.iter().cloned().fold(P::zero(), |a, m| a + m);
        let ok = if P::is_exact() { total == P::one() } else { (total.to_f64() - 1.0).abs() < 1e-6 };
        if !ok {
            return Err(AnalysisError::NotNormalized(total.to_f64()));
        }
        Ok(Dist { support, masses })
    }

    pub fn point(v: i64) -> Self {
        Dist { support: vec![v], masses: vec![P::one()] }
    }

    /// Empirical distribution of a sample.
    pub fn empirical(values: &[i64]) -> Result<Self, AnalysisError> {
        if values.is_empty() {
            return Err(AnalysisError::Empty);
        }
        let mut counts = BTreeMap::new();
        for &v in values {
            *counts.entry(v).or_insert(0u64) += 1;
        }
        let total = values.len() as u64;
        let (support, masses) = counts.into_iter().map(|(v, c)| (v, P::from_ratio(c, total))).unzip();
        Ok(Dist { support, masses })
    }

    pub fn support(&self) -> &[i64] {
        &self.support
    }

    pub fn masses(&self) -> &[P] {
        &self.masses
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &P)> {
        self.support.iter().copied().zip(self.masses.iter())
    }

    pub fn mass(&self, v: i64) -> P {
        match self.support.binary_search(&v) {
            Ok(i) => self.masses[i].clone(),
            Err(_) => P::zero(),
        }
    }

    /// `P[X <= v]`.
    pub fn cdf(&self, v: i64) -> P {
        self.iter().take_while(|(x, _)| *x <= v).fold(P::zero(), |a, (_, m)| a + m.clone())
    }

    /// `P[X >= v]`.
    pub fn tail(&self, v: i64) -> P {
        self.iter().filter(|(x, _)| *x >= v).fold(P::zero(), |a, (_, m)| a + m.clone())
    }

    /// Distribution of the maximum of `s` independent copies.
    pub fn max_of(&self, s: u64) -> Self {
        assert!(s >= 1);
        let mut prev = P::zero();
        let mut cum = P::zero();
        let mut support = Vec::new();
        let mut masses = Vec::new();
        for (v, m) in self.iter() {
            cum = cum + m.clone();
            let here = cum.powu(s);
            let mass = here.clone() - prev;
            prev = here;
            if mass > P::zero() {
                support.push(v);
                masses.push(mass);
            }
        }
        Dist { support, masses }
    }

    pub fn to_f64(&self) -> Dist<f64> {
        Dist { support: self.support.clone(), masses: self.masses.iter().map(|m| m.to_f64()).collect() }
    }
}

/// Geometric(1/2) on `1..=b` with the tail folded into `b`.
pub fn trunc_geom<P: Probability>(b: u32) -> Dist<P> {
    assert!(b >= 1, "b >= 1");
    let support = (1..=i64::from(b)).collect();
    let masses = (1..=b).map(|l| if l < b { P::half_pow(l) } else { P::half_pow(b - 1) }).collect();
    Dist { support, masses }
}

/// `P[max of s draws >= v]`, truncated at `b` when given.
pub fn max_tail_exact<P: Probability>(s: u64, v: i64, b: Option<u32>) -> P {
    assert!(s >= 1, "s >= 1");
    if v <= 1 {
        return P::one();
    }
    if b.is_some_and(|b| v > i64::from(b)) {
        return P::zero();
    }
    let single = P::half_pow((v - 1) as u32);
    single.complement().powu(s).complement()
}

/// `P[max of s draws == v]`.
pub fn max_point_mass<P: Probability>(s: u64, v: i64, b: Option<u32>) -> P {
    max_tail_exact::<P>(s, v, b) - max_tail_exact::<P>(s, v + 1, b)
}

/// The approximation `1 - exp(-2^(1-x))` of `P[max of s draws >= log2 s + x]`
/// together with the bound `exp(-2^(1-x)) * 4^(1-x) / s` on the error of the
/// complement.
pub fn max_tail_approx(s: u64, x: f64) -> Result<(f64, f64), AnalysisError> {
    let a = (1.0 - x).exp2();
    if s == 0 || a / s as f64 > 0.5 {
        return Err(AnalysisError::OutOfRange { s, x });
    }
    let e = (-a).exp();
    Ok((1.0 - e, e * a * a / s as f64))
}

/// One grid point of the approximation check. Both the exact and the
/// approximate quantity are kept in complement and tail form; the error is
/// measured in whichever form is small, so neither side loses its digits to
/// cancellation.
#[derive(Clone, Debug, PartialEq)]
pub struct ApproxPoint {
    pub s: u64,
    pub x: i64,
    /// Exact `P[max < log2 s + x]`, as a float.
    pub complement: f64,
    /// Exact `P[max >= log2 s + x]`, as a float.
    pub tail: f64,
    /// `exp(-2^(1-x))`.
    pub approx_complement: f64,
    pub approx_tail: f64,
    pub bound: f64,
}

impl ApproxPoint {
    pub fn error(&self) -> f64 {
        if self.complement <= 0.5 {
            (self.complement - self.approx_complement).abs()
        } else {
            (self.tail - self.approx_tail).abs()
        }
    }

    pub fn holds(&self) -> bool {
        self.error() <= self.bound * (1.0 + 1e-12)
    }
}

/// Compares exact and approximate complements at `s = 2^j`, integer `x` with
/// `x >= 2 - j` and `x <= x_max`, wherever the approximation applies.
pub fn approx_grid<P: Probability>(j: u32, x_max: i64) -> Vec<ApproxPoint> {
    let s = 1u64 << j;
    let mut out = Vec::new();
    for x in (2 - i64::from(j))..=x_max {
        let Ok((_, bound)) = max_tail_approx(s, x as f64) else { continue };
        let a = (1.0 - x as f64).exp2();
        let v = i64::from(j) + x;
        let tail = max_tail_exact::<P>(s, v, None);
        out.push(ApproxPoint {
            s,
            x,
            complement: tail.complement().to_f64(),
            tail: tail.to_f64(),
            approx_complement: (-a).exp(),
            approx_tail: -(-a).exp_m1(),
            bound,
        });
    }
    out
}

/// Probability that `m` iid draws from `trunc_geom(b)` have a unique maximum.
pub fn unique_max_prob<P: Probability>(m: u64, b: u32) -> P {
    assert!(m >= 1 && b >= 1);
    let d = trunc_geom::<P>(b);
    let mut cdf = P::zero();
    let mut total = P::zero();
    for (_, mass) in d.iter() {
        let term = P::from_ratio(m, 1) * mass.clone() * cdf.powu(m - 1);
        total = total + term;
        cdf = cdf + mass.clone();
    }
    total
}

/// `unique_max_prob(m, b)` for `m = 1..=m_max`, sharing the powers.
pub fn unique_max_sweep<P: Probability>(m_max: u64, b: u32) -> Vec<P> {
    let d = trunc_geom::<P>(b);
    let mut cdfs = Vec::with_capacity(b as usize);
    let mut cdf = P::zero();
    for (_, mass) in d.iter() {
        cdfs.push(cdf.clone());
        cdf = cdf + mass.clone();
    }
    let mut powers = vec![P::one(); cdfs.len()];
    let mut out = Vec::with_capacity(m_max as usize);
    for m in 1..=m_max {
        let sum = d
            .masses()
            .iter()
            .zip(&powers)
            .fold(P::zero(), |acc, (mass, pw)| acc + mass.clone() * pw.clone());
        out.push(P::from_ratio(m, 1) * sum);
        for (pw, c) in powers.iter_mut().zip(&cdfs) {
            *pw = pw.clone() * c.clone();
        }
    }
    out
}

/// `X <= Y` in the stochastic order: `P[X >= x] <= P[Y >= x]` for every `x`.
pub fn stochastically_leq<P: Probability>(x: &Dist<P>, y: &Dist<P>) -> bool {
    let mut points: Vec<i64> = x.support().iter().chain(y.support()).copied().collect();
    points.sort_unstable();
    points.dedup();
    points.into_iter().all(|v| x.tail(v) <= y.tail(v))
}

/// `(x, P[B >= x | B <= A], P[B >= x])` for independent `A`, `B`, with a
/// zero-probability condition giving a zero conditional.
pub fn cond_tail_values<P: Probability>(b: &Dist<P>, a: &Dist<P>) -> Vec<(i64, P, P)> {
    let weight: Vec<P> = b.iter().map(|(v, m)| m.clone() * a.tail(v)).collect();
    let cond_mass = weight.iter().cloned().fold(P::zero(), |acc, w| acc + w);
    b.support()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let num = weight[i..].iter().cloned().fold(P::zero(), |acc, w| acc + w);
            let cond = if cond_mass.is_zero() { P::zero() } else { num / cond_mass.clone() };
            (x, cond, b.tail(x))
        })
        .collect()
}

/// Checks `P[B >= x | B <= A] <= P[B >= x]` at every support point of `B`,
/// assuming independence.
pub fn cond_tail_check<P: Probability>(b: &Dist<P>, a: &Dist<P>) -> bool {
    cond_tail_values(b, a).into_iter().all(|(_, c, u)| c <= u)
}

/// The same inequality for an arbitrary joint law on `(b, a)` pairs. Without
/// independence it can fail.
pub fn cond_tail_check_joint<P: Probability>(joint: &[((i64, i64), P)]) -> bool {
    let cond_mass = joint.iter().filter(|((b, a), _)| b <= a).fold(P::zero(), |s, (_, m)| s + m.clone());
    let mut xs: Vec<i64> = joint.iter().map(|((b, _), _)| *b).collect();
    xs.sort_unstable();
    xs.dedup();
    xs.into_iter().all(|x| {
        let tail = joint.iter().filter(|((b, _), _)| *b >= x).fold(P::zero(), |s, (_, m)| s + m.clone());
        let num =
            joint.iter().filter(|((b, a), _)| *b >= x && b <= a).fold(P::zero(), |s, (_, m)| s + m.clone());
        let cond = if cond_mass.is_zero() { P::zero() } else { num / cond_mass.clone() };
        cond <= tail
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesBound {
    pub series: f64,
    pub bound: f64,
}

impl SeriesBound {
    pub fn holds(&self) -> bool {
        self.series <= self.bound
    }
}

/// `sum_{x>=6} (2^(1-x)/n) (1 - 2^(1-x)/r)^(eta n)` against `r / (eta n^2)`.
pub fn t34_series_bound(n: u64, r: u64, eta: f64) -> Result<SeriesBound, AnalysisError> {
    if !n.is_power_of_two() {
        return Err(AnalysisError::Argument(format!("n={n} is not a power of two")));
    }
    if r < 2 {
        return Err(AnalysisError::Argument(format!("r={r} < 2")));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(AnalysisError::Argument(format!("eta={eta} outside (0, 1]")));
    }
    let (nf, rf) = (n as f64, r as f64);
    let mut series = 0.0;
    for x in 6..1100 {
        let a = (1.0 - f64::from(x)).exp2();
        let term = a / nf * (1.0 - a / rf).powf(eta * nf);
        series += term;
        if term < series * 1e-18 {
            break;
        }
    }
    Ok(SeriesBound { series, bound: rf / (eta * nf * nf) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Rational;
    use num_traits::Zero;

    type Q = Rational;

    fn q(n: i64, d: i64) -> Q {
        Q::new(n, d)
    }

    /// All `s`-tuples over `1..=b` with their exact probabilities.
    fn tuples(s: usize, b: u32) -> Vec<(Vec<i64>, Q)> {
        let d = trunc_geom::<Q>(b);
        let mut out = vec![(Vec::new(), Q::from_integer(1))];
        for _ in 0..s {
            out = out
                .into_iter()
                .flat_map(|(t, p)| {
                    d.iter().map(move |(v, m)| {
                        let mut t = t.clone();
                        t.push(v);
                        (t, p.clone() * m.clone())
                    })
                })
                .collect();
        }
        out
    }

    #[test]
    fn truncated_geometric() {
        assert_eq!(trunc_geom::<Q>(1).masses(), &[q(1, 1)]);
        assert_eq!(trunc_geom::<Q>(3).masses(), &[q(1, 2), q(1, 4), q(1, 4)]);
        for b in 1..20 {
            let d = trunc_geom::<Q>(b);
            assert!(Dist::new(d.support().to_vec(), d.masses().to_vec()).is_ok());
        }
        assert!(Dist::<Q>::new(vec![1, 2], vec![q(1, 2), q(1, 4)]).is_err());
        assert!(Dist::<Q>::new(vec![2, 1], vec![q(1, 2), q(1, 2)]).is_err());
    }

    #[test]
    fn tail_examples() {
        assert_eq!(max_tail_exact::<Q>(1, 2, None), q(1, 2));
        assert_eq!(max_tail_exact::<Q>(2, 2, None), q(3, 4));
        assert_eq!(max_tail_exact::<Q>(64, 2, Some(10)), Q::from_integer(1) - Q::half_pow(64));
        assert_eq!(max_tail_exact::<Q>(5, 11, Some(10)), q(0, 1));
        assert_eq!(max_tail_exact::<Q>(5, -3, Some(10)), q(1, 1));
        for k in 1..12 {
            assert_eq!(max_point_mass::<Q>(1, k, None), Q::half_pow(k as u32));
        }
        let m = max_point_mass::<Q>(64, 6, None).to_f64();
        assert!((m - 0.2339).abs() < 1e-3 && m >= 0.17);
        assert!(max_point_mass::<Q>(64, 11, None).to_f64() >= 0.01);
    }

    #[test]
    fn tail_matches_enumeration() {
        for s in 1..=4 {
            for b in 1..=6u32 {
                let all = tuples(s, b);
                for v in -1..=(b as i64 + 1) {
                    let brute = all
                        .iter()
                        .filter(|(t, _)| t.iter().max().copied().unwrap() >= v)
                        .fold(Q::from_integer(0), |a, (_, p)| a + p.clone());
                    assert_eq!(max_tail_exact::<Q>(s as u64, v, Some(b)), brute, "s={s} b={b} v={v}");
                    assert_eq!(trunc_geom::<Q>(b).max_of(s as u64).tail(v), brute);
                }
            }
        }
    }

    #[test]
    fn approximation_examples() {
        let (a, _) = max_tail_approx(1 << 10, -4.0).unwrap();
        assert!((a - (1.0 - (-32f64).exp())).abs() < 1e-15);
        let (a, _) = max_tail_approx(64, 8.0).unwrap();
        assert!((a - 0.00778).abs() < 1e-4 && a <= 0.01);
        assert!(max_tail_approx(2, -1.0).is_err());
        let p = &approx_grid::<Q>(6, 1).into_iter().find(|p| p.x == 1).unwrap();
        assert!((p.complement - (63f64 / 64.0).powi(64)).abs() < 1e-15);
        assert!(p.error() <= (-1f64).exp() / 64.0 && p.holds());
    }

    #[test]
    fn unique_max_examples() {
        assert_eq!(unique_max_prob::<Q>(1, 9), q(1, 1));
        assert_eq!(unique_max_prob::<Q>(2, 5), q(85, 128));
        for b in 2..10u32 {
            let closed = q(2, 3) * (Q::from_integer(1) - Q::half_pow(2 * (b - 1)));
            assert_eq!(unique_max_prob::<Q>(2, b), closed);
        }
        let sweep = unique_max_sweep::<Q>(40, 9);
        for (i, v) in sweep.iter().enumerate() {
            assert_eq!(*v, unique_max_prob::<Q>(i as u64 + 1, 9));
        }
    }

    #[test]
    fn unique_max_matches_enumeration_and_is_symmetric() {
        for m in 1..=4 {
            for b in 2..=6u32 {
                let all = tuples(m, b);
                let mut unique = Q::from_integer(0);
                let mut by_index = vec![Q::from_integer(0); m];
                for (t, p) in &all {
                    let top = *t.iter().max().unwrap();
                    let at: Vec<usize> = (0..m).filter(|&i| t[i] == top).collect();
                    if at.len() == 1 {
                        unique = unique + p.clone();
                        by_index[at[0]] = by_index[at[0]].clone() + p.clone();
                    }
                }
                assert_eq!(unique_max_prob::<Q>(m as u64, b), unique);
                for w in &by_index {
                    assert_eq!(w.clone() * Q::from_integer(m as i64), unique);
                }
            }
        }
    }

    #[test]
    fn stochastic_order() {
        let g4 = trunc_geom::<Q>(4);
        let g8 = trunc_geom::<Q>(8);
        assert!(stochastically_leq(&g4, &g4));
        assert!(stochastically_leq(&g4, &g8));
        assert!(!stochastically_leq(&g8, &g4));
        let m2 = g8.max_of(2);
        assert!(!stochastically_leq(&m2, &g8));
        assert!(stochastically_leq(&g8, &m2));
        let e = Dist::<Q>::empirical(&[1, 1, 2, 5]).unwrap();
        assert_eq!(e.mass(1), q(1, 2));
    }

    #[test]
    fn conditional_tails() {
        let b5 = trunc_geom::<Q>(5);
        let big = Dist::<Q>::point(9);
        for (_, c, u) in cond_tail_values(&b5, &big) {
            assert_eq!(c, u);
        }
        assert!(cond_tail_check(&b5, &b5));
        let never = Dist::<Q>::point(0);
        assert!(cond_tail_values(&b5, &never).iter().all(|(_, c, _)| c.is_zero()));
        assert!(cond_tail_check(&b5, &never));

        // Brute force over the 25 pairs.
        let mut joint = Vec::new();
        for (x, mx) in b5.iter() {
            for (y, my) in b5.iter() {
                joint.push(((x, y), mx.clone() * my.clone()));
            }
        }
        assert!(cond_tail_check_joint(&joint));

        // A = B when B is large, A = 0 otherwise: conditioning now favors large B.
        let dependent = vec![((1, 0), q(1, 2)), ((2, 2), q(1, 2))];
        assert!(!cond_tail_check_joint(&dependent));
    }

    #[test]
    fn series_bound_examples() {
        let r = t34_series_bound(1024, 100, 0.3).unwrap();
        assert!(r.holds());
        assert!((r.bound - 100.0 / (0.3 * 1024.0 * 1024.0)).abs() < 1e-15);
        assert!(t34_series_bound(64, 2, 0.3).unwrap().holds());
        let s: Vec<f64> = [64, 128, 256].iter().map(|&n| t34_series_bound(n, 2, 0.3).unwrap().series).collect();
        assert!(s[0] > s[1] && s[1] > s[2]);
        assert!(t34_series_bound(100, 2, 0.3).is_err());
        assert!(t34_series_bound(64, 1, 0.3).is_err());
    }

    #[test]
    fn float_and_exact_agree() {
        for b in [3u32, 7, 12] {
            for m in [1u64, 2, 7, 30] {
                let e = unique_max_prob::<Q>(m, b).to_f64();
                assert!((unique_max_prob::<f64>(m, b) - e).abs() < 1e-12);
                assert!((unique_max_prob::<f32>(m, b) as f64 - e).abs() < 1e-5);
            }
        }
    }
}
