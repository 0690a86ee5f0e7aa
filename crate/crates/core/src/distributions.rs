//! Probability mass functions on `0..=N`, the binomial law, and histogram
//! intersection.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `Σ mass = 1` accepted by [`Pmf::new`].
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Upper bound of the eat-out count support (3 meals × 7 days).
pub const MEALS_PER_WEEK: usize = 21;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PmfError {
    #[error("pmf supports differ: 0..={0} vs 0..={1}")]
    SupportMismatch(usize, usize),
    #[error("pmf mass at {index} is invalid: {value}")]
    NegativeMass { index: usize, value: f64 },
    #[error("pmf mass sums to {0}, not 1")]
    NotNormalized(f64),
    #[error("pmf must have at least one support point")]
    Empty,
}

/// A normalized mass vector on `0..=support_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Pmf {
    mass: Vec<f64>,
}

impl Pmf {
    pub fn new(mass: Vec<f64>) -> Result<Self, PmfError> {
        if mass.is_empty() {
            return Err(PmfError::Empty);
        }
        if let Some((index, &value)) = mass
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(PmfError::NegativeMass { index, value });
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(PmfError::NotNormalized(total));
        }
        Ok(Pmf { mass })
    }

    /// Normalizes nonnegative counts or weights into a pmf.
    pub fn from_counts(counts: &[f64]) -> Result<Self, PmfError> {
        let total: f64 = counts.iter().sum();
        if counts.is_empty() {
            return Err(PmfError::Empty);
        }
        if !(total > 0.0) {
            return Err(PmfError::NotNormalized(total));
        }
        Pmf::new(counts.iter().map(|c| c / total).collect())
    }

    pub fn point_mass(at: usize, support_max: usize) -> Self {
        let mut mass = vec![0.0; support_max + 1];
        mass[at] = 1.0;
        Pmf { mass }
    }

    pub fn support_max(&self) -> usize {
        self.mass.len() - 1
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn get(&self, k: usize) -> f64 {
        self.mass.get(k).copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.mass.iter().enumerate().map(|(k, m)| k as f64 * m).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.mass).expect("f64 vector serializes")
    }

    /// Writes the two-column `k,mass` CSV form.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "mass"])?;
        for (k, m) in self.mass.iter().enumerate() {
            w.write_record([k.to_string(), m.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for Pmf {
    type Error = PmfError;
    fn try_from(mass: Vec<f64>) -> Result<Self, Self::Error> {
        Pmf::new(mass)
    }
}

impl From<Pmf> for Vec<f64> {
    fn from(pmf: Pmf) -> Self {
        pmf.mass
    }
}

/// Largest `n` for which the binomial coefficient is built with exact integer arithmetic.
const EXACT_N: u64 = 60;

fn exact_choose(n: u64, k: u64) -> u128 {
    let (n, k) = (u128::from(n), u128::from(k.min(n - k)));
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (1..=k)
        .map(|i| ((n - k + i) as f64 / i as f64).ln())
        .sum()
}

/// `C(n,k) p^k (1-p)^(n-k)`, zero for `k > n`.
///
/// Small `n` uses an exact integer coefficient; larger `n` is evaluated in
/// log space so that `n` up to 10^4 neither overflows nor underflows early.
pub fn binomial_pmf(n: u64, p: f64, k: u64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p), "p = {p}");
    if k > n {
        return 0.0;
    }
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    if n <= EXACT_N {
        let q = 1.0 - p;
        return exact_choose(n, k) as f64 * p.powi(k as i32) * q.powi((n - k) as i32);
    }
    let log = ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p();
    log.exp()
}

/// Binomial law on `0..=support_max`; mass beyond the support is folded onto
/// the last point.
pub fn binomial_folded(n: u64, p: f64, support_max: usize) -> Vec<f64> {
    let mut mass = vec![0.0; support_max + 1];
    let top = support_max as u64;
    let mut tail = 0.0;
    for k in 0..=n {
        let m = binomial_pmf(n, p, k);
        if k >= top {
            tail += m;
        } else {
            mass[k as usize] = m;
        }
    }
    if n >= top {
        mass[support_max] = tail;
    }
    mass
}

/// One binomial mixture component, anchored at peak `k_target` with requested
/// variance `sigma2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialComponent {
    #[serde(rename = "k")]
    pub k_target: u32,
    pub sigma2: f64,
    pub n: u64,
    pub p: f64,
}

impl BinomialComponent {
    /// `floor((n + 1) p)`, the (upper) mode of the law.
    pub fn mode(&self) -> u64 {
        ((self.n + 1) as f64 * self.p).floor() as u64
    }

    pub fn mean(&self) -> f64 {
        self.n as f64 * self.p
    }

    pub fn pmf(&self, k: u64) -> f64 {
        binomial_pmf(self.n, self.p, k)
    }
}

/// `mass[k] = Σ_j w_j · Binom(n_j, p_j)(k)` on `0..=support_max`, with any
/// component mass above the support folded onto `support_max`.
pub fn mixture_pmf(components: &[BinomialComponent], weights: &[f64], support_max: usize) -> Pmf {
    assert_eq!(components.len(), weights.len(), "one weight per component");
    let mut mass = vec![0.0; support_max + 1];
    for (c, &w) in components.iter().zip(weights) {
        for (acc, m) in mass.iter_mut().zip(binomial_folded(c.n, c.p, support_max)) {
            *acc += w * m;
        }
    }
    Pmf::new(mass).expect("simplex-weighted mixture of pmfs is a pmf")
}

/// `Σ_k min(a_k, b_k)`.
pub fn histogram_intersection(a: &Pmf, b: &Pmf) -> Result<f64, PmfError> {
    if a.support_max() != b.support_max() {
        return Err(PmfError::SupportMismatch(a.support_max(), b.support_max()));
    }
    Ok(a.mass
        .iter()
        .zip(&b.mass)
        .map(|(x, y)| x.min(*y))
        .sum::<f64>()
        .min(1.0))
}
