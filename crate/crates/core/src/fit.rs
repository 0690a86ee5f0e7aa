//! Binomial components from peak specifications, and simplex weights from an
//! over-specified least-squares system.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{
    binomial_pmf, histogram_intersection, mixture_pmf, BinomialComponent, Pmf, PmfError,
};
use crate::modulation::ModulationSpec;

/// Weights in `[-NEG_TOL, 0)` are treated as rounding noise.
pub const NEG_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("invalid peak (k={k}, sigma2={sigma2}): {reason}")]
    InvalidPeak { k: u32, sigma2: f64, reason: String },
    #[error("component for peak k={k} has mode {mode} (n={n}, p={p})")]
    ModeMismatch { k: u32, n: u64, p: f64, mode: u64 },
    #[error("degenerate weight system: {0}")]
    DegenerateSystem(String),
    #[error("{points} evaluation points cannot determine {components} weights")]
    TooFewEvalPoints { points: usize, components: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Pmf(#[from] PmfError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakSpec {
    pub k: u32,
    pub sigma2: f64,
}

impl PeakSpec {
    pub fn new(k: u32, sigma2: f64) -> Self {
        PeakSpec { k, sigma2 }
    }
}

/// How a peak at `k = 0` is realized, since `p = 1 - σ²/k` is undefined there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ZeroPeakRule {
    /// `n = 1, p = σ²`.
    #[default]
    Bernoulli,
    Explicit { n: u64, p: f64 },
}

/// Builds `Binom(n, p)` with `n p = k` and `n p (1 - p) = σ²`, rounding `n` to
/// the nearest integer and requiring the mode to land on `k`.
pub fn component_from_peak(spec: PeakSpec, zero: ZeroPeakRule) -> Result<BinomialComponent, FitError> {
    let invalid = |reason: &str| FitError::InvalidPeak {
        k: spec.k,
        sigma2: spec.sigma2,
        reason: reason.to_string(),
    };
    if !(spec.sigma2 > 0.0) || !spec.sigma2.is_finite() {
        return Err(invalid("variance must be positive"));
    }
    let (n, p) = if spec.k == 0 {
        match zero {
            ZeroPeakRule::Bernoulli => (1, spec.sigma2),
            ZeroPeakRule::Explicit { n, p } => (n, p),
        }
    } else {
        let k = f64::from(spec.k);
        if spec.sigma2 >= k {
            return Err(invalid("variance must be smaller than k"));
        }
        let p = 1.0 - spec.sigma2 / k;
        let n = ((k / p).round() as u64).max(u64::from(spec.k));
        (n, p)
    };
    if !(p > 0.0 && p < 1.0) || n == 0 {
        return Err(invalid("success probability must lie in (0, 1)"));
    }
    let component = BinomialComponent {
        k_target: spec.k,
        sigma2: spec.sigma2,
        n,
        p,
    };
    let mode = component.mode();
    if mode != u64::from(spec.k) {
        return Err(FitError::ModeMismatch {
            k: spec.k,
            n,
            p,
            mode,
        });
    }
    Ok(component)
}

/// Which support points enter the least-squares system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalPoints {
    #[default]
    Peaks,
    FullSupport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    #[serde(default)]
    pub eval_points: EvalPoints,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub zero_peak: ZeroPeakRule,
}

fn default_lambda() -> f64 {
    1.0
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            eval_points: EvalPoints::Peaks,
            lambda: 1.0,
            zero_peak: ZeroPeakRule::Bernoulli,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub eval_points: Vec<u32>,
    pub lambda: f64,
    pub residual: f64,
    pub train_hi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modulation: Vec<ModulationSpec>,
}

/// A fitted (possibly modulated) mixture of binomials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub support_max: usize,
    pub components: Vec<BinomialComponent>,
    pub weights: Vec<f64>,
    pub provenance: Provenance,
}

impl MixtureModel {
    pub fn validate(&self) -> Result<(), FitError> {
        if self.components.is_empty() {
            return Err(FitError::InvalidModel("no components".into()));
        }
        if self.weights.len() != self.components.len() {
            return Err(FitError::InvalidModel(format!(
                "{} weights for {} components",
                self.weights.len(),
                self.components.len()
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w >= 0.0)) {
            return Err(FitError::InvalidModel(format!("negative weight {w}")));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(FitError::InvalidModel(format!("weights sum to {total}")));
        }
        if let Some(c) = self
            .components
            .iter()
            .find(|c| c.n == 0 || !(0.0..=1.0).contains(&c.p))
        {
            return Err(FitError::InvalidModel(format!("bad component {c:?}")));
        }
        Ok(())
    }

    pub fn pmf(&self) -> Pmf {
        mixture_pmf(&self.components, &self.weights, self.support_max)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.p).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, FitError> {
        let model: MixtureModel =
            serde_json::from_str(text).map_err(|e| FitError::InvalidModel(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }
}

/// Design matrix `A[i][j] = Binom(n_j, p_j)(k_i)` over the evaluation points.
fn design(components: &[BinomialComponent], eval_points: &[u32]) -> DMatrix<f64> {
    DMatrix::from_fn(eval_points.len(), components.len(), |i, j| {
        binomial_pmf(components[j].n, components[j].p, u64::from(eval_points[i]))
    })
}

/// Least squares on the columns in `cols`; `None` when they are rank deficient.
fn solve_subset(a: &DMatrix<f64>, b: &DVector<f64>, cols: &[usize]) -> Option<DVector<f64>> {
    let sub = a.select_columns(cols);
    let svd = sub.svd(true, true);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if !(max > 0.0) || min <= max * 1e-10 {
        return None;
    }
    svd.solve(b, 0.0).ok().map(|m| m.column(0).into_owned())
}

/// Lawson–Hanson active-set solver for `min ‖Ax − b‖ s.t. x ≥ 0`.
fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, FitError> {
    let n = a.ncols();
    let tol = 1e-12 * a.norm().max(1.0) * b.norm().max(1.0);
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    for _outer in 0..3 * n + 3 {
        let grad = a.transpose() * (b - a * &x);
        let entering = (0..n)
            .filter(|&j| !passive[j] && grad[j] > tol)
            .max_by(|&i, &j| grad[i].total_cmp(&grad[j]).then(j.cmp(&i)));
        let Some(t) = entering else {
            return Ok(x);
        };
        passive[t] = true;
        loop {
            let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let sol = solve_subset(a, b, &cols).ok_or_else(|| {
                FitError::DegenerateSystem(format!(
                    "design columns {cols:?} are linearly dependent"
                ))
            })?;
            let mut s = DVector::zeros(n);
            for (&j, v) in cols.iter().zip(sol.iter()) {
                s[j] = *v;
            }
            if cols.iter().all(|&j| s[j] > 0.0) {
                x = s;
                break;
            }
            let step = cols
                .iter()
                .filter(|&&j| s[j] <= 0.0)
                .map(|&j| x[j] / (x[j] - s[j]))
                .fold(f64::INFINITY, f64::min);
            x += (s - &x) * step;
            for &j in &cols {
                if x[j] <= tol {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    Err(FitError::DegenerateSystem(
        "active-set iteration did not converge".into(),
    ))
}

/// Solves `Σ_j w_j Binom_j(k_i) ≈ h(k_i)` with the soft constraint
/// `λ (Σ_j w_j - 1) ≈ 0`, then enforces `w ≥ 0` and projects onto the simplex.
pub fn solve_weights(
    components: &[BinomialComponent],
    target: &Pmf,
    eval_points: &[u32],
    lambda: f64,
) -> Result<Vec<f64>, FitError> {
    let m = components.len();
    if m == 0 {
        return Err(FitError::DegenerateSystem("no components".into()));
    }
    if eval_points.len() < m {
        return Err(FitError::TooFewEvalPoints {
            points: eval_points.len(),
            components: m,
        });
    }
    if m == 1 {
        return Ok(vec![1.0]);
    }

    let rows = eval_points.len() + 1;
    let mut a = design(components, eval_points).resize_vertically(rows, lambda);
    a.row_mut(rows - 1).fill(lambda);
    let b = DVector::from_fn(rows, |i, _| {
        if i + 1 == rows {
            lambda
        } else {
            target.get(eval_points[i] as usize)
        }
    });

    let all: Vec<usize> = (0..m).collect();
    let raw = match solve_subset(&a, &b, &all) {
        Some(w) if w.iter().all(|&x| x >= -NEG_TOL) => w,
        _ => nnls(&a, &b)?,
    };

    let clamped: Vec<f64> = raw.iter().map(|&w| w.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if !(total > 0.0) {
        return Err(FitError::DegenerateSystem("all weights vanished".into()));
    }
    Ok(clamped.into_iter().map(|w| w / total).collect())
}

fn eval_points_for(specs: &[PeakSpec], support_max: usize, mode: EvalPoints) -> Vec<u32> {
    match mode {
        EvalPoints::Peaks => specs.iter().map(|s| s.k).collect(),
        EvalPoints::FullSupport => (0..=support_max as u32).collect(),
    }
}

/// Builds components from `specs` and solves their weights against `train`.
pub fn fit(train: &Pmf, specs: &[PeakSpec], options: &FitOptions) -> Result<MixtureModel, FitError> {
    let support_max = train.support_max();
    if let Some(s) = specs.iter().find(|s| s.k as usize > support_max) {
        return Err(FitError::InvalidPeak {
            k: s.k,
            sigma2: s.sigma2,
            reason: format!("peak beyond support 0..={support_max}"),
        });
    }
    let components = specs
        .iter()
        .map(|&s| component_from_peak(s, options.zero_peak))
        .collect::<Result<Vec<_>, _>>()?;
    let eval_points = eval_points_for(specs, support_max, options.eval_points);
    let weights = solve_weights(&components, train, &eval_points, options.lambda)?;

    let residual = eval_points
        .iter()
        .map(|&k| {
            let fitted: f64 = components
                .iter()
                .zip(&weights)
                .map(|(c, w)| w * c.pmf(u64::from(k)))
                .sum();
            (fitted - train.get(k as usize)).powi(2)
        })
        .sum::<f64>()
        .sqrt();

    let mut model = MixtureModel {
        support_max,
        components,
        weights,
        provenance: Provenance {
            eval_points,
            lambda: options.lambda,
            residual,
            train_hi: 0.0,
            seed: None,
            modulation: Vec::new(),
        },
    };
    model.provenance.train_hi = histogram_intersection(&model.pmf(), train)?;
    Ok(model)
}

/// Masses closer than this are one plateau.
const PLATEAU_SPREAD: f64 = 0.005;

/// Proposes up to `max_components` peaks: strict local maxima and plateau
/// midpoints, ranked by mass (ties toward smaller `k`).
///
/// Each suggestion starts from variance 1, capped at `k/2`, and is halved until
/// its component puts the mode at `k`. A peak at 0 uses variance 0.2.
pub fn suggest_peaks(pmf: &Pmf, max_components: usize) -> Vec<PeakSpec> {
    let mass = pmf.mass();
    let last = mass.len() - 1;
    let mut candidates: Vec<usize> = Vec::new();

    for k in 0..=last {
        let left = (k > 0).then(|| mass[k - 1]);
        let right = (k < last).then(|| mass[k + 1]);
        let above = |n: Option<f64>| n.is_none_or(|v| mass[k] > v);
        if mass[k] > 0.0 && above(left) && above(right) && (left.is_some() || right.is_some()) {
            candidates.push(k);
        }
    }

    let mut start = 0;
    while start <= last {
        let mut end = start;
        let (mut lo, mut hi) = (mass[start], mass[start]);
        while end < last {
            let v = mass[end + 1];
            if hi.max(v) - lo.min(v) < PLATEAU_SPREAD {
                lo = lo.min(v);
                hi = hi.max(v);
                end += 1;
            } else {
                break;
            }
        }
        if end > start {
            let level = mass[start..=end].iter().sum::<f64>() / (end - start + 1) as f64;
            let left_ok = start == 0 || mass[start - 1] <= level;
            let right_ok = end == last || mass[end + 1] <= level;
            let mid = (start + end) / 2;
            if hi > 0.0 && left_ok && right_ok && !candidates.contains(&mid) {
                let inside_peak = candidates.iter().any(|&c| (start..=end).contains(&c));
                if !inside_peak {
                    candidates.push(mid);
                }
            }
        }
        start = end + 1;
    }

    candidates.sort_by(|&a, &b| mass[b].total_cmp(&mass[a]).then(a.cmp(&b)));
    candidates.truncate(max_components);
    candidates
        .into_iter()
        .filter_map(|k| viable_spec(k as u32))
        .collect()
}

fn viable_spec(k: u32) -> Option<PeakSpec> {
    if k == 0 {
        return Some(PeakSpec::new(0, 0.2));
    }
    let mut sigma2 = f64::min(1.0, f64::from(k) / 2.0);
    for _ in 0..40 {
        let spec = PeakSpec::new(k, sigma2);
        if component_from_peak(spec, ZeroPeakRule::Bernoulli).is_ok() {
            return Some(spec);
        }
        sigma2 /= 2.0;
    }
    None
}
