//! Stochastic-gradient training of the drift network.
//!
//! Each iteration draws fresh paths, target samples and frequencies from
//! distinct streams, unrolls the Euler–Maruyama recursion on a tape,
//! assembles
//!
//! ```text
//! F(θ) = Ĉ(θ)/λ + c·R̂_tot(θ)/λ + γ̂²(θ)
//! ```
//!
//! and takes one Adam step. `Ĉ` is the left-endpoint energy, `R̂_tot` the
//! running congestion cost `Σ_{k=1..q} R̂(t_k)(t_k − t_{k−1})`, and `γ̂²` the
//! terminal penalty on the configured terminal coordinates.

use crate::diffgraph::{Tape, Tensor, Var};
use crate::distributions::{sample, sample_frequencies, DistributionSpec, FrequencyBatch, KernelSpec, RngStream, SampleBatch};
use crate::driftnet::DriftNetwork;
use crate::error::{Error, Result};
use crate::estimators::graph::{aggregate_demand_node, kernel_u_mmd2_node, rf_u_interaction_node, rf_u_mmd2_node, rff_v_mmd2_node};
use crate::estimators::{demand_from_weights, kernel_u_mmd2, soc_profile};
use crate::scalar::Scalar;
use crate::sde::{draw_paths, energy, energy_node, simulate, simulate_graph, Control, Dynamics, GraphPaths, PathDraws, PathEnsemble, TimeGrid};
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RunningCost {
    #[default]
    None,
    /// RF U-statistic of `½∬W dν_t dν_t` with a Gaussian `W`.
    KernelInteraction,
    /// Unbiased estimate of the squared aggregate EV demand `D[ν_t]²`.
    AggregateDemand,
}

/// Estimator used for the terminal penalty during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    #[default]
    RfU,
    RffV,
    KernelU,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Piecewise-constant schedule: `(first_iteration, value)` pairs in increasing order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule<V>(pub Vec<(usize, V)>);

impl<V: Copy> Schedule<V> {
    pub fn at(&self, iter: usize, base: V) -> V {
        self.0.iter().take_while(|(from, _)| *from <= iter).last().map_or(base, |&(_, v)| v)
    }

    fn validate(&self, ok: impl Fn(V) -> bool, what: &str) -> Result<()> {
        if self.0.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::config(format!("{what} schedule must have increasing iterations")));
        }
        if !self.0.iter().all(|&(_, v)| ok(v)) {
            return Err(Error::config(format!("{what} schedule has an invalid value")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Schedules {
    #[serde(default)]
    pub lambda: Option<Schedule<f64>>,
    #[serde(default)]
    pub features: Option<Schedule<usize>>,
    #[serde(default)]
    pub batch: Option<Schedule<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub n_iters: usize,
    /// Paths (and target samples) per iteration, `N`.
    pub batch: usize,
    /// Random frequencies per iteration, `M`.
    pub features: usize,
    /// Penalty weight `λ` (not its inverse).
    pub lambda: f64,
    /// Congestion weight `c`.
    #[serde(default)]
    pub congestion: f64,
    #[serde(default)]
    pub running_cost: RunningCost,
    #[serde(default)]
    pub penalty: PenaltyKind,
    pub terminal_kernel: KernelSpec,
    #[serde(default = "default_congestion_kernel")]
    pub congestion_kernel: KernelSpec,
    pub sigma: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub dynamics: Dynamics,
    pub initial: DistributionSpec,
    /// Law of the terminal coordinates that the penalty compares against.
    pub target: DistributionSpec,
    /// Column range `[start, end)` of the terminal state entering the penalty; all columns when absent.
    #[serde(default)]
    pub terminal_columns: Option<(usize, usize)>,
    pub hidden: Vec<usize>,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
    /// Evaluate every this many iterations; 0 evaluates only after the last one.
    #[serde(default)]
    pub eval_interval: usize,
    #[serde(default)]
    pub schedules: Schedules,
}

fn default_congestion_kernel() -> KernelSpec {
    KernelSpec::gaussian(1.0)
}
fn default_horizon() -> f64 {
    1.0
}
fn default_steps() -> usize {
    20
}
fn default_lr() -> f64 {
    1e-3
}
fn default_eval_batch() -> usize {
    2000
}

impl TrainConfig {
    pub fn grid(&self) -> TimeGrid {
        TimeGrid {
            horizon: self.horizon,
            steps: self.steps,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.initial.dim()
    }

    pub fn widths(&self) -> Vec<usize> {
        let d = self.state_dim();
        let mut w = vec![d + 1];
        w.extend_from_slice(&self.hidden);
        w.push(self.dynamics.control_dim(d));
        w
    }

    pub fn columns(&self) -> (usize, usize) {
        self.terminal_columns.unwrap_or((0, self.state_dim()))
    }

    pub fn lambda_at(&self, iter: usize) -> f64 {
        self.schedules.lambda.as_ref().map_or(self.lambda, |s| s.at(iter, self.lambda))
    }

    pub fn features_at(&self, iter: usize) -> usize {
        self.schedules.features.as_ref().map_or(self.features, |s| s.at(iter, self.features))
    }

    pub fn batch_at(&self, iter: usize) -> usize {
        self.schedules.batch.as_ref().map_or(self.batch, |s| s.at(iter, self.batch))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::config("batch size N must be at least 2"));
        }
        if self.features == 0 {
            return Err(Error::config("feature count M must be at least 1"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda must be positive"));
        }
        if !(self.congestion >= 0.0 && self.congestion.is_finite()) {
            return Err(Error::config("congestion weight must be nonnegative"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("sigma must be positive"));
        }
        if self.eval_batch < 2 {
            return Err(Error::config("evaluation batch must be at least 2"));
        }
        let a = self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::config("invalid Adam hyperparameters"));
        }
        self.grid().validate()?;
        self.initial.validate()?;
        self.target.validate()?;
        self.terminal_kernel.validate()?;
        self.congestion_kernel.validate()?;
        let d = self.state_dim();
        self.dynamics.check_state_dim(d)?;
        let (s, e) = self.columns();
        if s >= e || e > d {
            return Err(Error::config(format!("terminal columns [{s}, {e}) invalid for dimension {d}")));
        }
        if self.target.dim() != e - s {
            return Err(Error::config(format!(
                "target has dimension {}, penalized columns {}",
                self.target.dim(),
                e - s
            )));
        }
        if self.running_cost == RunningCost::AggregateDemand && self.dynamics != Dynamics::Ev {
            return Err(Error::config("aggregate-demand congestion needs EV dynamics"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        if let Some(s) = &self.schedules.lambda {
            s.validate(|v| v > 0.0 && v.is_finite(), "lambda")?;
        }
        if let Some(s) = &self.schedules.features {
            s.validate(|v| v >= 1, "features")?;
        }
        if let Some(s) = &self.schedules.batch {
            s.validate(|v| v >= 2, "batch")?;
        }
        Ok(())
    }
}

// Stream namespaces under the run seed.
const STREAM_INIT: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_EVAL: u64 = 3;

/// What a stream is used for inside one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DrawPurpose {
    Paths,
    Targets,
    TerminalFrequencies,
    CongestionFrequencies,
}

impl DrawPurpose {
    const ALL: [DrawPurpose; 4] = [
        DrawPurpose::Paths,
        DrawPurpose::Targets,
        DrawPurpose::TerminalFrequencies,
        DrawPurpose::CongestionFrequencies,
    ];

    fn label(self) -> u64 {
        self as u64
    }
}

/// The stream used for `purpose` at iteration `iter` of a run seeded by `seed`.
pub fn iteration_stream(seed: u64, iter: usize, purpose: DrawPurpose) -> RngStream {
    RngStream::new(seed, STREAM_TRAIN).child(iter as u64).child(purpose.label())
}

/// Held-out evaluation stream for the `index`-th evaluation of a run.
pub fn eval_stream(seed: u64, index: u64) -> RngStream {
    RngStream::new(seed, STREAM_EVAL).child(index)
}

pub fn init_stream(seed: u64) -> RngStream {
    RngStream::new(seed, STREAM_INIT)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamEntry {
    pub iter: usize,
    pub purpose: DrawPurpose,
    pub stream: RngStream,
}

/// Everything random that one objective evaluation consumes.
#[derive(Clone, Debug)]
pub struct IterationDraws<T> {
    pub paths: PathDraws<T>,
    pub targets: SampleBatch<T>,
    pub terminal_freqs: FrequencyBatch<T>,
    pub congestion_freqs: Option<FrequencyBatch<T>>,
}

pub fn draw_iteration<T: Scalar>(cfg: &TrainConfig, iter: usize) -> Result<(IterationDraws<T>, Vec<StreamEntry>)> {
    let n = cfg.batch_at(iter);
    let m = cfg.features_at(iter);
    let st = |p| iteration_stream(cfg.seed, iter, p);
    let (c0, c1) = cfg.columns();
    let paths = draw_paths(&cfg.initial, n, &cfg.grid(), cfg.dynamics, st(DrawPurpose::Paths))?;
    let targets = sample(&cfg.target, n, st(DrawPurpose::Targets))?;
    let terminal_freqs = sample_frequencies(&cfg.terminal_kernel, m, c1 - c0, st(DrawPurpose::TerminalFrequencies))?;
    let needs_w = cfg.congestion > 0.0 && cfg.running_cost == RunningCost::KernelInteraction;
    let congestion_freqs = if needs_w {
        Some(sample_frequencies(
            &cfg.congestion_kernel,
            m,
            cfg.state_dim(),
            st(DrawPurpose::CongestionFrequencies),
        )?)
    } else {
        None
    };
    let ledger = DrawPurpose::ALL
        .iter()
        .filter(|&&p| p != DrawPurpose::CongestionFrequencies || needs_w)
        .map(|&p| StreamEntry {
            iter,
            purpose: p,
            stream: st(p),
        })
        .collect();
    Ok((
        IterationDraws {
            paths,
            targets,
            terminal_freqs,
            congestion_freqs,
        },
        ledger,
    ))
}

/// Tape nodes of the objective and its three components.
#[derive(Clone, Debug)]
pub struct ObjectiveNodes {
    pub objective: Var,
    pub energy: Var,
    /// Absent when `c = 0` or there is no running cost.
    pub interaction: Option<Var>,
    pub penalty: Var,
    pub paths: GraphPaths,
}

/// Builds `F(θ)` on `tape` for fixed draws.
pub fn objective<T: Scalar>(
    tape: &mut Tape<T>,
    net: &DriftNetwork<T>,
    params: &[Var],
    draws: &IterationDraws<T>,
    cfg: &TrainConfig,
    lambda: f64,
) -> Result<ObjectiveNodes> {
    let grid = cfg.grid();
    let paths = simulate_graph(tape, net, params, &draws.paths, cfg.sigma, &grid, cfg.dynamics)
        .map_err(|e| e.in_phase("simulate"))?;
    let energy = energy_node(tape, &paths, &grid).map_err(|e| e.in_phase("energy"))?;

    let (c0, c1) = cfg.columns();
    let mut xt = paths.states[grid.steps];
    if (c0, c1) != (0, cfg.state_dim()) {
        xt = tape.slice_cols(xt, c0, c1)?;
    }
    let kern = cfg.terminal_kernel;
    let penalty = match cfg.penalty {
        PenaltyKind::RfU => rf_u_mmd2_node(tape, xt, &draws.targets, &draws.terminal_freqs, kern.phi0),
        PenaltyKind::RffV => rff_v_mmd2_node(tape, xt, &draws.targets, &draws.terminal_freqs, kern.phi0),
        PenaltyKind::KernelU => kernel_u_mmd2_node(tape, xt, &draws.targets, &kern),
    }
    .map_err(|e| e.in_phase("penalty"))?;

    let interaction = if cfg.congestion > 0.0 && cfg.running_cost != RunningCost::None {
        let mut total: Option<Var> = None;
        for k in 1..=grid.steps {
            let x = paths.states[k];
            let r = match cfg.running_cost {
                RunningCost::KernelInteraction => {
                    let zw = draws
                        .congestion_freqs
                        .as_ref()
                        .ok_or_else(|| Error::usage("kernel interaction needs congestion frequencies"))?;
                    rf_u_interaction_node(tape, x, zw, cfg.congestion_kernel.phi0)?
                }
                RunningCost::AggregateDemand => aggregate_demand_node(tape, x)?.squared,
                RunningCost::None => unreachable!(),
            };
            let w = tape.scale(r, T::lit(grid.node(k) - grid.node(k - 1)))?;
            total = Some(match total {
                None => w,
                Some(t) => tape.add(t, w)?,
            });
        }
        total
    } else {
        None
    };

    let inv_l = T::lit(1.0 / lambda);
    let mut f = tape.scale(energy, inv_l)?;
    if let Some(r) = interaction {
        let cr = tape.scale(r, T::lit(cfg.congestion / lambda))?;
        f = tape.add(f, cr)?;
    }
    let f = tape.add(f, penalty)?;
    Ok(ObjectiveNodes {
        objective: f,
        energy,
        interaction,
        penalty,
        paths,
    })
}

/// First and second moment estimates of Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    hyper: &AdamConfig,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::usage("adam_step: parameter, gradient and state counts differ"));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(hyper.beta1), T::lit(hyper.beta2));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let (lr, eps) = (T::lit(lr), T::lit(hyper.eps));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::usage(format!("adam_step: gradient {i} has the wrong shape")));
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (pj, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = b1 * m[j] + (T::one() - b1) * gj;
            v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            *pj -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

/// Held-out metrics of a drift network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Kernel U-statistic between the terminal coordinates and fresh target samples.
    pub eval_mmd2: f64,
    pub terminal_mean: Vec<f64>,
    pub terminal_std: Vec<f64>,
    pub energy: f64,
    pub sup_norm: f64,
    /// EV runs: `max_{k≥1} D̂(t_k)`.
    pub peak_demand: Option<f64>,
    /// EV runs: `(1/T) Σ_{k≥1} D̂(t_k)(t_k − t_{k−1})`.
    pub mean_demand: Option<f64>,
}

/// Per-node aggregate demand `D̂(t_k)` of an EV ensemble, `k = 0..=q`.
pub fn demand_profile<T: Scalar>(ensemble: &PathEnsemble<T>) -> Vec<f64> {
    ensemble
        .states
        .iter()
        .map(|x| {
            let g: Vec<T> = x.rows().map(|r| r[1].exp() * soc_profile(r[0])).collect();
            demand_from_weights(&g).mean.as_f64()
        })
        .collect()
}

pub fn evaluate<T: Scalar, C: Control<T>>(net: &C, cfg: &TrainConfig, n_eval: usize, stream: RngStream) -> Result<Evaluation> {
    if n_eval < 2 {
        return Err(Error::usage("evaluation needs at least 2 paths"));
    }
    let grid = cfg.grid();
    let ens = simulate(net, &cfg.initial, cfg.sigma, &grid, n_eval, stream.child(0), cfg.dynamics)?;
    evaluate_ensemble(&ens, cfg, stream)
}

/// Metrics of an already simulated ensemble; the target batch comes from `stream.child(1)`.
pub fn evaluate_ensemble<T: Scalar>(ens: &PathEnsemble<T>, cfg: &TrainConfig, stream: RngStream) -> Result<Evaluation> {
    let n = ens.n_paths();
    let (c0, c1) = cfg.columns();
    let xt = ens.terminal();
    let y = sample::<T>(&cfg.target, n, stream.child(1))?;
    let mmd = kernel_u_mmd2(&xt.columns(c0, c1), &y, &cfg.terminal_kernel)?.value.as_f64();
    let d = xt.dim();
    let (peak, mean) = if cfg.dynamics == Dynamics::Ev {
        let prof = demand_profile(ens);
        let grid = ens.grid;
        let peak = prof[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let avg = (1..=grid.steps).map(|k| prof[k] * (grid.node(k) - grid.node(k - 1))).sum::<f64>() / grid.horizon;
        (Some(peak), Some(avg))
    } else {
        (None, None)
    };
    Ok(Evaluation {
        eval_mmd2: mmd,
        terminal_mean: (0..d).map(|c| xt.column_mean(c).as_f64()).collect(),
        terminal_std: (0..d).map(|c| xt.column_std(c).as_f64()).collect(),
        energy: energy(ens).as_f64(),
        sup_norm: ens.max_drift_norm().as_f64(),
        peak_demand: peak,
        mean_demand: mean,
    })
}

/// One logged training iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iter: usize,
    pub lambda: f64,
    pub energy: f64,
    pub interaction: f64,
    pub penalty: f64,
    pub objective: f64,
    /// Largest drift norm on this iteration's training paths.
    pub sup_norm: f64,
    pub wall_ms: f64,
    pub eval: Option<Evaluation>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput<T> {
    pub network: DriftNetwork<T>,
    pub records: Vec<TrainRecord>,
    /// Held-out evaluation of the returned network.
    pub final_eval: Evaluation,
    pub streams: Vec<StreamEntry>,
}

fn diverged<T: Scalar>(iteration: usize, phase: &str, detail: String, net: &DriftNetwork<T>) -> Error {
    Error::Diverged {
        iteration,
        phase: phase.to_string(),
        detail,
        checkpoint: net.to_checkpoint(),
    }
}

fn as_diverged<T: Scalar>(iteration: usize, net: &DriftNetwork<T>) -> impl FnOnce(Error) -> Error + '_ {
    move |e| match e {
        Error::Numeric { op, detail } => diverged(iteration, &op, detail, net),
        other => other,
    }
}

/// Runs the training loop from a freshly initialized network.
pub fn train<T: Scalar>(cfg: &TrainConfig) -> Result<TrainOutput<T>> {
    cfg.validate()?;
    let net = DriftNetwork::init(&cfg.widths(), init_stream(cfg.seed))?;
    train_from(cfg, net)
}

/// Runs the training loop from the given network.
pub fn train_from<T: Scalar>(cfg: &TrainConfig, mut net: DriftNetwork<T>) -> Result<TrainOutput<T>> {
    cfg.validate()?;
    if net.widths() != cfg.widths().as_slice() {
        return Err(Error::config(format!(
            "network widths {:?} do not match the configuration {:?}",
            net.widths(),
            cfg.widths()
        )));
    }
    let start = Instant::now();
    let mut adam = AdamState::new(net.params());
    let mut records = Vec::with_capacity(cfg.n_iters);
    let mut streams = Vec::with_capacity(4 * cfg.n_iters);
    let mut n_evals = 0u64;
    for iter in 0..cfg.n_iters {
        let lambda = cfg.lambda_at(iter);
        let (draws, ledger) = draw_iteration::<T>(cfg, iter)?;
        streams.extend(ledger);
        let mut tape = Tape::new();
        let params = net.bind(&mut tape, true);
        let nodes = objective(&mut tape, &net, &params, &draws, cfg, lambda).map_err(as_diverged(iter, &net))?;
        let f = tape.value(nodes.objective).item();
        if !f.is_finite() {
            return Err(diverged(iter, "objective", format!("F = {f}"), &net));
        }
        let mut grads = tape.backward(nodes.objective).map_err(as_diverged(iter, &net))?;
        let grads: Vec<Tensor<T>> = params.iter().map(|&p| grads.take(&tape, p)).collect();
        if !grads.iter().all(Tensor::all_finite) {
            return Err(diverged(iter, "backward", "non-finite gradient".into(), &net));
        }
        let sup = nodes
            .paths
            .controls
            .iter()
            .flat_map(|&u| {
                let v = tape.value(u);
                (0..v.rows()).map(move |i| v.row_slice(i).iter().map(|&a| a * a).sum::<T>().sqrt().as_f64())
            })
            .fold(0.0, f64::max);
        let mut record = TrainRecord {
            iter,
            lambda,
            energy: tape.value(nodes.energy).item().as_f64(),
            interaction: nodes.interaction.map_or(0.0, |r| tape.value(r).item().as_f64()),
            penalty: tape.value(nodes.penalty).item().as_f64(),
            objective: f.as_f64(),
            sup_norm: sup,
            wall_ms: 0.0,
            eval: None,
        };
        drop(tape);
        let before = net.clone();
        adam_step(net.params_mut(), &grads, &mut adam, &cfg.adam, cfg.learning_rate)?;
        if !net.all_finite() {
            return Err(diverged(iter, "adam", "non-finite parameters".into(), &before));
        }
        let last = iter + 1 == cfg.n_iters;
        if !last && cfg.eval_interval > 0 && (iter + 1) % cfg.eval_interval == 0 {
            record.eval = Some(evaluate(&net, cfg, cfg.eval_batch, eval_stream(cfg.seed, n_evals))?);
            n_evals += 1;
        }
        record.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        records.push(record);
    }
    // the final evaluation always uses the same held-out stream
    let final_eval = evaluate(&net, cfg, cfg.eval_batch, eval_stream(cfg.seed, u64::MAX))?;
    if let Some(r) = records.last_mut() {
        r.eval = Some(final_eval.clone());
        r.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    }
    Ok(TrainOutput {
        network: net,
        records,
        final_eval,
        streams,
    })
}

#[cfg(test)]
mod tests;
