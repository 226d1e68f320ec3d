//! Post-processing for estimator studies and multi-seed runs.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// One `(M, N)` cell of a Monte Carlo variance study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceCell {
    pub m: usize,
    pub n: usize,
    pub variance: f64,
    pub mean: f64,
    pub trials: usize,
}

pub type VarianceGrid = Vec<VarianceCell>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoTermFit {
    pub c1: f64,
    pub c2: f64,
    pub r2: f64,
}

/// Fits `var ≈ c₁/M + c₂/N` with `c₁, c₂ ≥ 0` by enumerating the four active sets.
pub fn nnls_fit_two_term(grid: &[VarianceCell]) -> Result<TwoTermFit> {
    let mut cells: Vec<(usize, usize)> = grid.iter().map(|c| (c.m, c.n)).collect();
    cells.sort_unstable();
    cells.dedup();
    if cells.len() < 3 {
        return Err(Error::config("variance fit needs at least 3 distinct (M, N) cells"));
    }
    if grid.iter().any(|c| c.m == 0 || c.n == 0 || !(c.variance >= 0.0) || c.trials < 2) {
        return Err(Error::config("variance cells need positive M, N, at least 2 trials and a nonnegative variance"));
    }
    let a: Vec<f64> = grid.iter().map(|c| 1.0 / c.m as f64).collect();
    let b: Vec<f64> = grid.iter().map(|c| 1.0 / c.n as f64).collect();
    let y: Vec<f64> = grid.iter().map(|c| c.variance).collect();
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).sum::<f64>();
    let (aa, bb, ab) = (dot(&a, &a), dot(&b, &b), dot(&a, &b));
    let (ay, by) = (dot(&a, &y), dot(&b, &y));
    let det = aa * bb - ab * ab;
    if det.abs() <= 1e-14 * aa * bb {
        return Err(Error::config("degenerate design: 1/M and 1/N are collinear"));
    }
    let sse = |c1: f64, c2: f64| {
        (0..y.len())
            .map(|i| (y[i] - c1 * a[i] - c2 * b[i]).powi(2))
            .sum::<f64>()
    };
    let mut candidates = vec![(0.0, 0.0), ((ay / aa).max(0.0), 0.0), (0.0, (by / bb).max(0.0))];
    let c1 = (bb * ay - ab * by) / det;
    let c2 = (aa * by - ab * ay) / det;
    if c1 >= 0.0 && c2 >= 0.0 {
        candidates.push((c1, c2));
    }
    let (c1, c2) = candidates
        .into_iter()
        .min_by(|p, q| sse(p.0, p.1).total_cmp(&sse(q.0, q.1)))
        .expect("candidates");
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r2 = if sst > 0.0 { 1.0 - sse(c1, c2) / sst } else { 1.0 };
    Ok(TwoTermFit { c1, c2, r2 })
}

/// OLS slope of `log y` on `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::usage("loglog_slope needs two equal-length series of at least 2 points"));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0)) {
        return Err(Error::usage("loglog_slope needs positive values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::usage("loglog_slope needs at least two distinct x values"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub mean: f64,
    /// Unbiased (`n − 1`) standard deviation.
    pub std: f64,
    pub sem: f64,
    pub count: usize,
}

pub fn aggregate_trials(values: &[f64]) -> Result<TrialSummary> {
    if values.len() < 2 {
        return Err(Error::usage(format!("aggregate_trials needs at least 2 values, got {}", values.len())));
    }
    let n = values.len() as f64;
    let mean = crate::scalar::csum(values) / n;
    let var = crate::scalar::csum_iter(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1.0);
    let std = var.sqrt();
    Ok(TrialSummary {
        mean,
        std,
        sem: std / n.sqrt(),
        count: values.len(),
    })
}
