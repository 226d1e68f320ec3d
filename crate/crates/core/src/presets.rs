//! Built-in training configurations for the reference experiments.

use crate::distributions::{DistributionSpec, KernelSpec};
use crate::error::{Error, Result};
use crate::sde::Dynamics;
use crate::trainer::{AdamConfig, PenaltyKind, RunningCost, Schedules, TrainConfig};

fn base(initial: DistributionSpec, target: DistributionSpec) -> TrainConfig {
    TrainConfig {
        n_iters: 2000,
        batch: 64,
        features: 200,
        lambda: 100.0,
        congestion: 0.0,
        running_cost: RunningCost::None,
        penalty: PenaltyKind::RfU,
        terminal_kernel: KernelSpec::gaussian(1.0),
        congestion_kernel: KernelSpec::gaussian(1.0),
        sigma: 0.5,
        horizon: 1.0,
        steps: 20,
        dynamics: Dynamics::Plain,
        initial,
        target,
        terminal_columns: None,
        hidden: vec![64, 32],
        learning_rate: 1e-3,
        adam: AdamConfig::default(),
        seed: 0,
        eval_batch: 2000,
        eval_interval: 0,
        schedules: Schedules::default(),
    }
}

/// Equal mixture of `N((2,2), ¼I)` and `N((−2,−2), ¼I)`.
pub fn bimodal_target() -> DistributionSpec {
    DistributionSpec::GaussianMixture {
        weights: vec![0.5, 0.5],
        means: vec![vec![2.0, 2.0], vec![-2.0, -2.0]],
        stds: vec![vec![0.5, 0.5]; 2],
    }
}

/// `δ₀ → ½N((2,2),¼I) + ½N((−2,−2),¼I)` in two dimensions.
pub fn sbp_bimodal() -> TrainConfig {
    base(DistributionSpec::dirac_origin(2), bimodal_target())
}

/// `(M, N, epochs, hidden, α, λ⁻¹)` of the Gaussian-shift rows.
pub fn shift_row(d: usize) -> Option<(usize, usize, usize, Vec<usize>, f64, f64)> {
    match d {
        10 => Some((400, 80, 4000, vec![128, 64], 0.1, 1e-3)),
        50 => Some((800, 80, 5000, vec![256, 128], 0.02, 5e-4)),
        100 => Some((1500, 80, 6000, vec![512, 256], 0.01, 3e-4)),
        _ => None,
    }
}

pub fn shift_mean(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    m[0] = 3.0;
    m
}

/// `δ₀ → N((3,0,…,0), I_d)` with unit diffusion.
pub fn sbp_shift(d: usize) -> Result<TrainConfig> {
    let (m, n, epochs, hidden, alpha, inv_lambda) = shift_row(d).ok_or_else(|| {
        Error::Config(format!(
            "no built-in shift configuration for d = {d} (available: 10, 50, 100); supply hidden widths and the rest in a config file"
        ))
    })?;
    Ok(TrainConfig {
        n_iters: epochs,
        batch: n,
        features: m,
        lambda: 1.0 / inv_lambda,
        terminal_kernel: KernelSpec::gaussian(alpha),
        sigma: 1.0,
        hidden,
        ..base(DistributionSpec::dirac_origin(d), DistributionSpec::isotropic(shift_mean(d), 1.0))
    })
}

/// EV fleet with aggregate-demand congestion weight `c`.
pub fn ev_charging(congestion: f64) -> TrainConfig {
    TrainConfig {
        n_iters: 2000,
        batch: 128,
        features: 300,
        lambda: 1e3,
        congestion,
        running_cost: RunningCost::AggregateDemand,
        terminal_kernel: KernelSpec::gaussian(50.0),
        sigma: 0.05,
        dynamics: Dynamics::Ev,
        terminal_columns: Some((0, 1)),
        ..base(DistributionSpec::ev_initial(), DistributionSpec::isotropic(vec![0.85], 0.05))
    }
}
