//! Brute-force reference computations shared by the test targets.

use choicesim::distributions::binomial_pmf;
use choicesim::{BinomialComponent, Pmf};

pub const GRID_STEP: f64 = 1e-3;

/// `C(n, k) p^k (1-p)^(n-k)` by a plain product, no logs.
pub fn direct_binomial(n: u64, p: f64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut coef = 1.0f64;
    for i in 0..k {
        coef = coef * (n - i) as f64 / (i + 1) as f64;
    }
    coef * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

/// Penalized objective `‖A w − h‖² + λ²(Σw − 1)²` minimized over `w = s·u`,
/// `s ≥ 0`, by brute force over the simplex grid for `u`. The best `s` for a
/// fixed `u` has a closed form. Returns the best `u`.
pub fn grid_oracle(comps: &[BinomialComponent], target: &Pmf, points: &[u32], lambda: f64) -> Vec<f64> {
    let cols: Vec<Vec<f64>> = comps
        .iter()
        .map(|c| points.iter().map(|&k| binomial_pmf(c.n, c.p, u64::from(k))).collect())
        .collect();
    let h: Vec<f64> = points.iter().map(|&k| target.get(k as usize)).collect();
    let l2 = lambda * lambda;
    let steps = (1.0 / GRID_STEP).round() as usize;

    let score = |u: &[f64]| -> f64 {
        let au: Vec<f64> = (0..h.len())
            .map(|i| cols.iter().zip(u).map(|(c, w)| c[i] * w).sum())
            .collect();
        let au_h: f64 = au.iter().zip(&h).map(|(a, b)| a * b).sum();
        let au_au: f64 = au.iter().map(|a| a * a).sum();
        let s = ((au_h + l2) / (au_au + l2)).max(0.0);
        au.iter().zip(&h).map(|(a, b)| (s * a - b).powi(2)).sum::<f64>() + l2 * (s - 1.0).powi(2)
    };

    let mut best = (f64::INFINITY, Vec::new());
    let mut consider = |u: Vec<f64>| {
        let v = score(&u);
        if v < best.0 {
            best = (v, u);
        }
    };
    match comps.len() {
        1 => consider(vec![1.0]),
        2 => (0..=steps).for_each(|i| {
            let a = i as f64 * GRID_STEP;
            consider(vec![a, 1.0 - a]);
        }),
        3 => {
            for i in 0..=steps {
                for j in 0..=steps - i {
                    let (a, b) = (i as f64 * GRID_STEP, j as f64 * GRID_STEP);
                    consider(vec![a, b, (1.0 - a - b).max(0.0)]);
                }
            }
        }
        _ => unreachable!("oracle handles at most three components"),
    }
    best.1
}

