//! Experiment protocols shared by the command-line harness and the test suites.
//!
//! Every protocol is a deterministic function of its parameters and seed.

use crate::analysis::{aggregate_trials, loglog_slope, nnls_fit_two_term, TrialSummary, TwoTermFit, VarianceCell};
use crate::diffgraph::Tape;
use crate::distributions::{sample, sample_frequencies, DistributionSpec, KernelSpec, RngStream, SampleBatch};
use crate::driftnet::DriftNetwork;
use crate::error::{Error, Result};
use crate::estimators::graph::{kernel_u_mmd2_node, rf_u_mmd2_node};
use crate::estimators::{
    gaussian_interaction_closed_form, gaussian_mmd2_closed_form, kernel_u_mmd2, rf_u_interaction, rf_u_mmd2,
    rf_v_interaction, rff_v_mmd2,
};
use crate::scalar::Scalar;
use crate::sde::simulate;
use crate::trainer::{eval_stream, train, Evaluation, PenaltyKind, TrainConfig, TrainOutput};
use serde::{Deserialize, Serialize};
use std::time::Instant;

// Stream namespaces of the estimator studies.
const NS_BIAS: u64 = 100;
const NS_SHIFT: u64 = 101;
const NS_VARIANCE: u64 = 102;
const NS_INTERACTION: u64 = 103;
const NS_INTERACTION_GRID: u64 = 104;
const NS_HOEFFDING: u64 = 105;
const NS_SCALING: u64 = 106;
const NS_FLOOR: u64 = 107;
const NS_MODES: u64 = 108;

fn trial_stream(seed: u64, ns: u64, cell: u64, trial: u64) -> RngStream {
    RngStream::new(seed, ns).child(cell).child(trial)
}

fn shifted(d: usize, shift: f64) -> Vec<f64> {
    let mut m = vec![0.0; d];
    m[0] = shift;
    m
}

/// Parameters of the estimator microbenchmarks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorStudy {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    pub trials: usize,
    /// Mean offset along the first axis between the two samples.
    #[serde(default)]
    pub shift: f64,
    #[serde(default)]
    pub seed: u64,
}

impl EstimatorStudy {
    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n < 2 || self.m == 0 || self.trials < 2 {
            return Err(Error::Config("estimator study needs d ≥ 1, N ≥ 2, M ≥ 1 and at least 2 trials".into()));
        }
        KernelSpec::gaussian(self.alpha).validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasTable {
    pub kernel_u: TrialSummary,
    pub rff_v: TrialSummary,
    pub rf_u: TrialSummary,
    /// `γ_K²(µ, ν)` in closed form.
    pub truth: f64,
    /// Expected excess of the V-statistic, `(1/N)(2Φ(0) − E K(X,X') − E K(Y,Y'))`.
    pub rff_v_bias: f64,
}

/// The three estimators on the same draws of `X ~ N(0, I)`, `Y ~ N(shift·e₁, I)`.
pub fn bias_table(p: &EstimatorStudy) -> Result<BiasTable> {
    p.validate()?;
    let kernel = KernelSpec::gaussian(p.alpha);
    let (mut ku, mut fv, mut ru) = (Vec::new(), Vec::new(), Vec::new());
    let ns = if p.shift == 0.0 { NS_BIAS } else { NS_SHIFT };
    for t in 0..p.trials as u64 {
        let s = trial_stream(p.seed, ns, 0, t);
        let x = sample::<f64>(&DistributionSpec::standard_normal(p.d), p.n, s.child(0))?;
        let y = sample::<f64>(&DistributionSpec::isotropic(shifted(p.d, p.shift), 1.0), p.n, s.child(1))?;
        let z = sample_frequencies::<f64>(&kernel, p.m, p.d, s.child(2))?;
        ku.push(kernel_u_mmd2(&x, &y, &kernel)?.value);
        fv.push(rff_v_mmd2(&x, &y, &z, 1.0)?.value);
        ru.push(rf_u_mmd2(&x, &y, &z, 1.0)?.value);
    }
    let self_k = (1.0 + 4.0 * p.alpha).powf(-(p.d as f64) / 2.0);
    Ok(BiasTable {
        kernel_u: aggregate_trials(&ku)?,
        rff_v: aggregate_trials(&fv)?,
        rf_u: aggregate_trials(&ru)?,
        truth: gaussian_mmd2_closed_form(&vec![0.0; p.d], &shifted(p.d, p.shift), 1.0, p.alpha)?,
        rff_v_bias: (2.0 - 2.0 * self_k) / p.n as f64,
    })
}

/// Closed-form check of the RF U-statistic alone (skips the `O(N²)` estimator).
pub fn rf_u_mean(p: &EstimatorStudy) -> Result<(TrialSummary, f64)> {
    p.validate()?;
    let kernel = KernelSpec::gaussian(p.alpha);
    let mut vals = Vec::with_capacity(p.trials);
    for t in 0..p.trials as u64 {
        let s = trial_stream(p.seed, NS_SHIFT, 1, t);
        let x = sample::<f64>(&DistributionSpec::standard_normal(p.d), p.n, s.child(0))?;
        let y = sample::<f64>(&DistributionSpec::isotropic(shifted(p.d, p.shift), 1.0), p.n, s.child(1))?;
        let z = sample_frequencies::<f64>(&kernel, p.m, p.d, s.child(2))?;
        vals.push(rf_u_mmd2(&x, &y, &z, 1.0)?.value);
    }
    let truth = gaussian_mmd2_closed_form(&vec![0.0; p.d], &shifted(p.d, p.shift), 1.0, p.alpha)?;
    Ok((aggregate_trials(&vals)?, truth))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridStudy {
    pub d: usize,
    pub alpha: f64,
    pub shift: f64,
    pub ms: Vec<usize>,
    pub ns: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

impl GridStudy {
    fn validate(&self) -> Result<()> {
        if self.ms.is_empty() || self.ns.is_empty() || self.trials < 2 || self.d == 0 {
            return Err(Error::Config("grid study needs M and N values, d ≥ 1 and at least 2 trials".into()));
        }
        if self.ns.iter().any(|&n| n < 2) || self.ms.iter().any(|&m| m == 0) {
            return Err(Error::Config("grid study needs N ≥ 2 and M ≥ 1".into()));
        }
        KernelSpec::gaussian(self.alpha).validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub cells: Vec<VarianceCell>,
    pub fit: TwoTermFit,
    /// Slope of `log Var` on `log(1/N)` along the largest-`M` row.
    pub slope_largest_m: f64,
    pub truth: f64,
}

fn fit_grid(cells: Vec<VarianceCell>, truth: f64) -> Result<GridResult> {
    let fit = nnls_fit_two_term(&cells)?;
    let m_max = cells.iter().map(|c| c.m).max().unwrap_or(0);
    let row: Vec<&VarianceCell> = cells.iter().filter(|c| c.m == m_max).collect();
    let slope = if row.len() >= 2 {
        let inv_n: Vec<f64> = row.iter().map(|c| 1.0 / c.n as f64).collect();
        let var: Vec<f64> = row.iter().map(|c| c.variance).collect();
        loglog_slope(&inv_n, &var)?
    } else {
        f64::NAN
    };
    Ok(GridResult {
        cells,
        fit,
        slope_largest_m: slope,
        truth,
    })
}

fn grid_cells(p: &GridStudy, ns_tag: u64, mut trial: impl FnMut(usize, usize, RngStream) -> Result<f64>) -> Result<Vec<VarianceCell>> {
    let mut cells = Vec::new();
    let mut idx = 0u64;
    for &m in &p.ms {
        for &n in &p.ns {
            let vals: Vec<f64> = (0..p.trials as u64)
                .map(|t| trial(m, n, trial_stream(p.seed, ns_tag, idx, t)))
                .collect::<Result<_>>()?;
            let s = aggregate_trials(&vals)?;
            cells.push(VarianceCell {
                m,
                n,
                variance: s.std * s.std,
                mean: s.mean,
                trials: p.trials,
            });
            idx += 1;
        }
    }
    Ok(cells)
}

/// Monte Carlo variance of the RF U-statistic over an `(M, N)` grid, with the `c₁/M + c₂/N` fit.
pub fn variance_grid(p: &GridStudy) -> Result<GridResult> {
    p.validate()?;
    let kernel = KernelSpec::gaussian(p.alpha);
    let target = DistributionSpec::isotropic(shifted(p.d, p.shift), 1.0);
    let cells = grid_cells(p, NS_VARIANCE, |m, n, s| {
        let x = sample::<f64>(&DistributionSpec::standard_normal(p.d), n, s.child(0))?;
        let y = sample::<f64>(&target, n, s.child(1))?;
        let z = sample_frequencies::<f64>(&kernel, m, p.d, s.child(2))?;
        Ok(rf_u_mmd2(&x, &y, &z, 1.0)?.value)
    })?;
    fit_grid(cells, gaussian_mmd2_closed_form(&vec![0.0; p.d], &shifted(p.d, p.shift), 1.0, p.alpha)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionCheck {
    pub u_stat: TrialSummary,
    pub v_stat: TrialSummary,
    pub truth: f64,
    /// Mean V-statistic minus the truth; at most `Ψ(0)/(2N)` in expectation.
    pub v_bias: f64,
    pub v_bias_ceiling: f64,
}

/// RF U- and V-statistics of the self-interaction of `N(0, I)`.
pub fn interaction_check(p: &EstimatorStudy) -> Result<InteractionCheck> {
    p.validate()?;
    let kernel = KernelSpec::gaussian(p.alpha);
    let (mut us, mut vs) = (Vec::new(), Vec::new());
    for t in 0..p.trials as u64 {
        let s = trial_stream(p.seed, NS_INTERACTION, 0, t);
        let x = sample::<f64>(&DistributionSpec::standard_normal(p.d), p.n, s.child(0))?;
        let z = sample_frequencies::<f64>(&kernel, p.m, p.d, s.child(1))?;
        us.push(rf_u_interaction(&x, &z, 1.0)?.value);
        vs.push(rf_v_interaction(&x, &z, 1.0)?.value);
    }
    let truth = gaussian_interaction_closed_form(p.d, 1.0, p.alpha, 1.0);
    let v = aggregate_trials(&vs)?;
    Ok(InteractionCheck {
        u_stat: aggregate_trials(&us)?,
        v_bias: v.mean - truth,
        v_stat: v,
        truth,
        v_bias_ceiling: 1.0 / (2.0 * p.n as f64),
    })
}

/// Variance grid of the interaction estimator (`shift` is ignored).
pub fn interaction_grid(p: &GridStudy) -> Result<GridResult> {
    p.validate()?;
    let kernel = KernelSpec::gaussian(p.alpha);
    let cells = grid_cells(p, NS_INTERACTION_GRID, |m, n, s| {
        let x = sample::<f64>(&DistributionSpec::standard_normal(p.d), n, s.child(0))?;
        let z = sample_frequencies::<f64>(&kernel, m, p.d, s.child(1))?;
        Ok(rf_u_interaction(&x, &z, 1.0)?.value)
    })?;
    fit_grid(cells, gaussian_interaction_closed_form(p.d, 1.0, p.alpha, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub m: usize,
    pub eps: f64,
    pub frequency: f64,
    pub bound: f64,
}

/// Frequency of `|γ̂² − γ̄²(D)| ≥ ε` over frequency redraws on one fixed dataset.
pub fn hoeffding_tail(n: usize, d: usize, alpha: f64, ms: &[usize], eps: &[f64], redraws: usize, seed: u64) -> Result<Vec<TailRow>> {
    let kernel = KernelSpec::gaussian(alpha);
    let base = RngStream::new(seed, NS_HOEFFDING);
    let x = sample::<f64>(&DistributionSpec::standard_normal(d), n, base.child(0))?;
    let y = sample::<f64>(&DistributionSpec::isotropic(shifted(d, 1.0), 1.0), n, base.child(1))?;
    let center = kernel_u_mmd2(&x, &y, &kernel)?.value;
    let mut rows = Vec::new();
    for (mi, &m) in ms.iter().enumerate() {
        let devs: Vec<f64> = (0..redraws as u64)
            .map(|r| {
                let z = sample_frequencies::<f64>(&kernel, m, d, base.child(2).child(mi as u64).child(r))?;
                Ok((rf_u_mmd2(&x, &y, &z, 1.0)?.value - center).abs())
            })
            .collect::<Result<_>>()?;
        for &e in eps {
            rows.push(TailRow {
                m,
                eps: e,
                frequency: devs.iter().filter(|&&v| v >= e).count() as f64 / redraws as f64,
                bound: 2.0 * (-(m as f64) * e * e / 32.0).exp(),
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub kernel_ms: f64,
    pub rf_ms: f64,
    pub speedup: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Median wall-clock of one MMD forward + backward pass, kernel U-statistic vs RF U-statistic.
pub fn scaling_bench(ns: &[usize], m: usize, d: usize, alpha: f64, warmup: usize, reps: usize, seed: u64) -> Result<Vec<ScalingRow>> {
    if reps == 0 {
        return Err(Error::Config("scaling bench needs at least one timed repetition".into()));
    }
    let kernel = KernelSpec::gaussian(alpha);
    let mut rows = Vec::new();
    for (i, &n) in ns.iter().enumerate() {
        let s = RngStream::new(seed, NS_SCALING).child(i as u64);
        let x = sample::<f64>(&DistributionSpec::standard_normal(d), n, s.child(0))?;
        let y = sample::<f64>(&DistributionSpec::isotropic(shifted(d, 1.0), 1.0), n, s.child(1))?;
        let z = sample_frequencies::<f64>(&kernel, m, d, s.child(2))?;
        let time = |rf: bool| -> Result<f64> {
            let mut tape = Tape::new();
            let start = Instant::now();
            let xv = tape.leaf(x.to_tensor());
            let out = if rf {
                rf_u_mmd2_node(&mut tape, xv, &y, &z, 1.0)?
            } else {
                kernel_u_mmd2_node(&mut tape, xv, &y, &kernel)?
            };
            let g = tape.backward(out)?;
            std::hint::black_box(g.get(&tape, xv));
            Ok(start.elapsed().as_secs_f64() * 1e3)
        };
        let mut ks = Vec::new();
        let mut rs = Vec::new();
        for r in 0..warmup + reps {
            let (a, b) = (time(false)?, time(true)?);
            if r >= warmup {
                ks.push(a);
                rs.push(b);
            }
        }
        let (k, r) = (median(ks), median(rs));
        rows.push(ScalingRow {
            n,
            kernel_ms: k,
            rf_ms: r,
            speedup: k / r,
        });
    }
    Ok(rows)
}

/// A trained network with its log, for one seed.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub config: TrainConfig,
    pub output: TrainOutput<f64>,
}

pub fn run_seeds(cfg: &TrainConfig, seeds: &[u64]) -> Result<Vec<SeedRun>> {
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    seeds
        .iter()
        .map(|&seed| {
            let config = TrainConfig { seed, ..cfg.clone() };
            let output = train::<f64>(&config)?;
            Ok(SeedRun { seed, config, output })
        })
        .collect()
}

/// Summary of a Gaussian-shift run against the target mean `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftMetrics {
    pub first_mean: f64,
    /// Average of the other coordinates' means.
    pub rest_mean: f64,
    /// Largest `|mean|` among the other coordinates.
    pub rest_max_abs: f64,
    /// Average per-coordinate standard deviation.
    pub std_mean: f64,
    pub std_min: f64,
    pub std_max: f64,
    pub mean_err2: f64,
    pub eval_mmd2: f64,
    pub energy: f64,
}

pub fn shift_metrics(e: &Evaluation, target_mean: &[f64]) -> ShiftMetrics {
    let d = e.terminal_mean.len();
    let rest = &e.terminal_mean[1..];
    let n_rest = (d - 1).max(1) as f64;
    ShiftMetrics {
        first_mean: e.terminal_mean[0],
        rest_mean: rest.iter().sum::<f64>() / n_rest,
        rest_max_abs: rest.iter().fold(0.0, |a, v| a.max(v.abs())),
        std_mean: e.terminal_std.iter().sum::<f64>() / d as f64,
        std_min: e.terminal_std.iter().copied().fold(f64::INFINITY, f64::min),
        std_max: e.terminal_std.iter().copied().fold(0.0, f64::max),
        mean_err2: e.terminal_mean.iter().zip(target_mean).map(|(a, b)| (a - b).powi(2)).sum(),
        eval_mmd2: e.eval_mmd2,
        energy: e.energy,
    }
}

/// Fractions of terminal samples nearer to each mixture center.
pub fn mode_fractions<C: crate::sde::Control<f64>>(net: &C, cfg: &TrainConfig, centers: &[Vec<f64>], n_eval: usize, seed: u64) -> Result<Vec<f64>> {
    let ens = simulate(net, &cfg.initial, cfg.sigma, &cfg.grid(), n_eval, RngStream::new(seed, NS_MODES), cfg.dynamics)?;
    let mut counts = vec![0usize; centers.len()];
    for row in ens.terminal().rows() {
        let best = centers
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.iter().zip(row).map(|(a, b)| (a - b).powi(2)).sum::<f64>()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        counts[best] += 1;
    }
    Ok(counts.iter().map(|&c| c as f64 / n_eval as f64).collect())
}

/// `V̂(µ, µ)`: the RFF V-statistic between two independent target batches, averaged over `trials`.
pub fn v_stat_floor(target: &DistributionSpec, kernel: &KernelSpec, n: usize, m: usize, trials: usize, seed: u64) -> Result<TrialSummary> {
    let vals: Vec<f64> = (0..trials as u64)
        .map(|t| {
            let s = RngStream::new(seed, NS_FLOOR).child(t);
            let a: SampleBatch<f64> = sample(target, n, s.child(0))?;
            let b: SampleBatch<f64> = sample(target, n, s.child(1))?;
            let z = sample_frequencies(kernel, m, target.dim(), s.child(2))?;
            Ok(rff_v_mmd2(&a, &b, &z, kernel.phi0)?.value)
        })
        .collect::<Result<_>>()?;
    aggregate_trials(&vals)
}

/// A configuration variant inside a multi-arm experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub config: TrainConfig,
}

/// λ-sweep arms: the same configuration at each `λ⁻¹`.
pub fn lambda_variants(base: &TrainConfig, inv_lambdas: &[f64]) -> Vec<Variant> {
    inv_lambdas
        .iter()
        .map(|&il| Variant {
            label: format!("inv_lambda={il:e}"),
            config: TrainConfig { lambda: 1.0 / il, ..base.clone() },
        })
        .collect()
}

/// Kernel U-statistic penalty against RF U-statistic penalties at several `M`.
pub fn penalty_variants(base: &TrainConfig, rf_features: &[usize]) -> Vec<Variant> {
    let mut v = vec![Variant {
        label: "kernel-u".into(),
        config: TrainConfig { penalty: PenaltyKind::KernelU, ..base.clone() },
    }];
    for &m in rf_features {
        v.push(Variant {
            label: format!("rf-u-m{m}"),
            config: TrainConfig { penalty: PenaltyKind::RfU, features: m, ..base.clone() },
        });
    }
    v
}

/// U- vs V-statistic penalty arms over `(N, λ⁻¹)` pairs.
pub fn ablation_variants(base: &TrainConfig, arms: &[(usize, f64)]) -> Vec<Variant> {
    let mut v = Vec::new();
    for &(n, il) in arms {
        for (tag, pk) in [("u-stat", PenaltyKind::RfU), ("v-stat", PenaltyKind::RffV)] {
            v.push(Variant {
                label: format!("n={n},inv_lambda={il:e},{tag}"),
                config: TrainConfig { batch: n, lambda: 1.0 / il, penalty: pk, ..base.clone() },
            });
        }
    }
    v
}

/// Congestion-weight arms of the EV experiment.
pub fn congestion_variants(base: &TrainConfig, cs: &[f64]) -> Vec<Variant> {
    cs.iter()
        .map(|&c| Variant {
            label: format!("c={c}"),
            config: TrainConfig { congestion: c, ..base.clone() },
        })
        .collect()
}

/// Re-evaluates a trained network on a fresh held-out stream.
pub fn reevaluate<T: Scalar>(net: &DriftNetwork<T>, cfg: &TrainConfig, index: u64) -> Result<Evaluation> {
    crate::trainer::evaluate(net, cfg, cfg.eval_batch, eval_stream(cfg.seed, index))
}
