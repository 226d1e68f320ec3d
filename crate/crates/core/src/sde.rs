//! Euler–Maruyama simulation of `dX = u(t, X) dt + σ dB` on a uniform grid.
//!
//! Two dynamics are supported. `Plain` drives every coordinate with the
//! control and the noise. `Ev` treats the state as `(s, h)`: the control is a
//! scalar demand fraction, the SOC update is scaled by `e^h`, only `s` is
//! noisy, and `h` stays fixed along each path.
//!
//! Path `i` of an ensemble draws its initial state and all of its Brownian
//! increments from `stream.child(i)`, so paths can be regenerated one at a
//! time and results never depend on evaluation order.

use crate::diffgraph::{Tape, Tensor, Var};
use crate::distributions::{std_normal, DistributionSpec, RngStream, SampleBatch};
use crate::error::{Error, Result};
use crate::scalar::{CompensatedSum, Scalar};
use serde::{Deserialize, Serialize};

/// Uniform grid `0 = t₀ < … < t_q = T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        let g = Self { horizon, steps };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config("time horizon must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::config("time grid needs at least one step"));
        }
        Ok(())
    }

    /// `t_k`; the last node is exactly `T`.
    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }

    /// `t_{k+1} − t_k`.
    pub fn dt(&self, k: usize) -> f64 {
        self.node(k + 1) - self.node(k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Dynamics {
    #[default]
    Plain,
    Ev,
}

impl Dynamics {
    /// Width of the control for a state of dimension `d`.
    pub fn control_dim(self, d: usize) -> usize {
        match self {
            Dynamics::Plain => d,
            Dynamics::Ev => 1,
        }
    }

    pub fn noise_dim(self, d: usize) -> usize {
        self.control_dim(d)
    }

    pub fn check_state_dim(self, d: usize) -> Result<()> {
        match self {
            Dynamics::Plain if d == 0 => Err(Error::config("state dimension must be at least 1")),
            Dynamics::Ev if d != 2 => Err(Error::config(format!("EV dynamics need (s, h) states, got dimension {d}"))),
            _ => Ok(()),
        }
    }
}

/// A feedback control that can be evaluated on a tape.
pub trait Control<T: Scalar> {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    /// Registers the parameters on `tape`, as leaves when `trainable`.
    fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var>;
    /// `u(t, x)` for an `N × state_dim` block `x`; `t_frac = t/T` ∈ [0, 1].
    fn apply(&self, tape: &mut Tape<T>, params: &[Var], t_frac: T, x: Var) -> Result<Var>;
}

/// `u ≡ c`, independent of time and state.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantDrift<T> {
    pub state_dim: usize,
    pub value: Vec<T>,
}

impl<T: Scalar> ConstantDrift<T> {
    pub fn zero(state_dim: usize, control_dim: usize) -> Self {
        Self {
            state_dim,
            value: vec![T::zero(); control_dim],
        }
    }
}

impl<T: Scalar> Control<T> for ConstantDrift<T> {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn control_dim(&self) -> usize {
        self.value.len()
    }

    fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        let t = Tensor::row(self.value.clone());
        vec![if trainable { tape.leaf(t) } else { tape.constant(t) }]
    }

    fn apply(&self, tape: &mut Tape<T>, params: &[Var], _t: T, x: Var) -> Result<Var> {
        let n = tape.value(x).rows();
        let zeros = tape.constant(Tensor::zeros(&[n, self.value.len()]));
        tape.add_row_broadcast(zeros, params[0])
    }
}

/// Initial states and frozen Brownian increments of `N` paths.
#[derive(Clone, Debug, PartialEq)]
pub struct PathDraws<T> {
    pub initial: SampleBatch<T>,
    /// `increments[k]` is `N × noise_dim` with entries `~ N(0, t_{k+1} − t_k)`.
    pub increments: Vec<SampleBatch<T>>,
}

impl<T: Scalar> PathDraws<T> {
    pub fn n_paths(&self) -> usize {
        self.initial.n()
    }
}

pub fn draw_paths<T: Scalar>(
    initial: &DistributionSpec,
    n_paths: usize,
    grid: &TimeGrid,
    dynamics: Dynamics,
    stream: RngStream,
) -> Result<PathDraws<T>> {
    initial.validate()?;
    grid.validate()?;
    if n_paths < 2 {
        return Err(Error::usage(format!("need at least 2 paths, got {n_paths}")));
    }
    let d = initial.dim();
    dynamics.check_state_dim(d)?;
    let nd = dynamics.noise_dim(d);
    let q = grid.steps;
    let sqrt_dt: Vec<f64> = (0..q).map(|k| grid.dt(k).sqrt()).collect();
    let mut init = vec![T::zero(); n_paths * d];
    let mut inc = vec![vec![T::zero(); n_paths * nd]; q];
    for i in 0..n_paths {
        let mut rng = stream.child(i as u64).rng();
        initial.draw_row(&mut rng, &mut init[i * d..(i + 1) * d]);
        for (k, step) in inc.iter_mut().enumerate() {
            for v in &mut step[i * nd..(i + 1) * nd] {
                *v = T::lit(sqrt_dt[k] * std_normal(&mut rng));
            }
        }
    }
    Ok(PathDraws {
        initial: SampleBatch::new(n_paths, d, init)?,
        increments: inc
            .into_iter()
            .map(|v| SampleBatch::new(n_paths, nd, v))
            .collect::<Result<_>>()?,
    })
}

/// States and controls of a simulation recorded on a tape.
#[derive(Clone, Debug)]
pub struct GraphPaths {
    /// `q + 1` nodes, each `N × d`.
    pub states: Vec<Var>,
    /// `q` nodes, each `N × control_dim`; `controls[k] = u(t_k, X_{t_k})`.
    pub controls: Vec<Var>,
}

fn check_setup<T: Scalar, C: Control<T>>(control: &C, d: usize, dynamics: Dynamics, sigma: f64) -> Result<()> {
    dynamics.check_state_dim(d)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::config("diffusion coefficient must be positive"));
    }
    if control.state_dim() != d {
        return Err(Error::usage(format!(
            "control expects state dimension {}, got {d}",
            control.state_dim()
        )));
    }
    if control.control_dim() != dynamics.control_dim(d) {
        return Err(Error::usage(format!(
            "control has output width {}, dynamics need {}",
            control.control_dim(),
            dynamics.control_dim(d)
        )));
    }
    Ok(())
}

/// One explicit Euler–Maruyama step: returns `(u(t_k, x), x_{k+1})`.
#[allow(clippy::too_many_arguments)]
fn step<T: Scalar, C: Control<T>>(
    tape: &mut Tape<T>,
    control: &C,
    params: &[Var],
    x: Var,
    eh: Option<Var>,
    t_frac: T,
    dt: T,
    noise: &SampleBatch<T>,
    sigma: T,
) -> Result<(Var, Var)> {
    let u = control.apply(tape, params, t_frac, x)?;
    let db = tape.constant(Tensor::matrix(noise.n(), noise.dim(), noise.data().iter().map(|&v| sigma * v).collect())?);
    match eh {
        None => {
            let drift = tape.scale(u, dt)?;
            let moved = tape.add(x, drift)?;
            Ok((u, tape.add(moved, db)?))
        }
        Some(eh) => {
            let s = tape.slice_cols(x, 0, 1)?;
            let h = tape.slice_cols(x, 1, 2)?;
            let rate = tape.mul(eh, u)?;
            let rate = tape.scale(rate, dt)?;
            let s = tape.add(s, rate)?;
            let s = tape.add(s, db)?;
            Ok((u, tape.concat_cols(&[s, h])?))
        }
    }
}

fn step_error(k: usize) -> impl FnOnce(Error) -> Error {
    move |e| e.in_phase(&format!("simulate step {k}"))
}

/// Unrolls the recursion on `tape` so that gradients reach `params`.
pub fn simulate_graph<T: Scalar, C: Control<T>>(
    tape: &mut Tape<T>,
    control: &C,
    params: &[Var],
    draws: &PathDraws<T>,
    sigma: f64,
    grid: &TimeGrid,
    dynamics: Dynamics,
) -> Result<GraphPaths> {
    check_setup(control, draws.initial.dim(), dynamics, sigma)?;
    if draws.increments.len() != grid.steps {
        return Err(Error::usage("increments do not match the time grid"));
    }
    let mut x = tape.constant(draws.initial.to_tensor());
    let eh = match dynamics {
        Dynamics::Ev => {
            let h = tape.slice_cols(x, 1, 2)?;
            Some(tape.exp(h).map_err(step_error(0))?)
        }
        Dynamics::Plain => None,
    };
    let mut states = vec![x];
    let mut controls = Vec::with_capacity(grid.steps);
    let horizon = grid.horizon;
    for k in 0..grid.steps {
        let (u, next) = step(
            tape,
            control,
            params,
            x,
            eh,
            T::lit(grid.node(k) / horizon),
            T::lit(grid.dt(k)),
            &draws.increments[k],
            T::lit(sigma),
        )
        .map_err(step_error(k))?;
        controls.push(u);
        states.push(next);
        x = next;
    }
    Ok(GraphPaths { states, controls })
}

/// `(1/N) Σᵢ Σ_k |u(t_k, X_{t_k}⁽ⁱ⁾)|² Δt_k` on the tape.
pub fn energy_node<T: Scalar>(tape: &mut Tape<T>, paths: &GraphPaths, grid: &TimeGrid) -> Result<Var> {
    let n = tape.value(paths.states[0]).rows();
    let mut total: Option<Var> = None;
    for (k, &u) in paths.controls.iter().enumerate() {
        let sq = tape.square(u)?;
        let s = tape.sum(sq)?;
        let w = tape.scale(s, T::lit(grid.dt(k)) / T::from_count(n))?;
        total = Some(match total {
            None => w,
            Some(t) => tape.add(t, w)?,
        });
    }
    total.ok_or_else(|| Error::usage("energy of an empty path set"))
}

/// Simulated path values: states, drifts at the left endpoints and increments.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble<T> {
    pub grid: TimeGrid,
    pub dynamics: Dynamics,
    pub sigma: f64,
    /// `q + 1` blocks of `N × d`.
    pub states: Vec<SampleBatch<T>>,
    /// `q` blocks of `N × control_dim`.
    pub drifts: Vec<SampleBatch<T>>,
    /// `q` blocks of `N × noise_dim`.
    pub increments: Vec<SampleBatch<T>>,
}

impl<T: Scalar> PathEnsemble<T> {
    pub fn n_paths(&self) -> usize {
        self.states[0].n()
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    pub fn terminal(&self) -> &SampleBatch<T> {
        self.states.last().expect("ensemble has states")
    }

    /// Reads the values of a tape simulation.
    pub fn from_graph(
        tape: &Tape<T>,
        paths: &GraphPaths,
        draws: &PathDraws<T>,
        sigma: f64,
        grid: &TimeGrid,
        dynamics: Dynamics,
    ) -> Self {
        Self {
            grid: *grid,
            dynamics,
            sigma,
            states: paths.states.iter().map(|&v| SampleBatch::from_tensor(tape.value(v))).collect(),
            drifts: paths.controls.iter().map(|&v| SampleBatch::from_tensor(tape.value(v))).collect(),
            increments: draws.increments.clone(),
        }
    }

    /// Largest Euclidean norm of a stored drift row.
    pub fn max_drift_norm(&self) -> T {
        let mut best = T::zero();
        for u in &self.drifts {
            for row in u.rows() {
                best = best.max(row.iter().map(|&v| v * v).sum::<T>().sqrt());
            }
        }
        best
    }
}

/// Simulates without retaining a graph: each step runs on a scratch tape
/// with the parameters as constants.
pub fn simulate<T: Scalar, C: Control<T>>(
    control: &C,
    initial: &DistributionSpec,
    sigma: f64,
    grid: &TimeGrid,
    n_paths: usize,
    stream: RngStream,
    dynamics: Dynamics,
) -> Result<PathEnsemble<T>> {
    let draws = draw_paths(initial, n_paths, grid, dynamics, stream)?;
    simulate_draws(control, &draws, sigma, grid, dynamics)
}

/// [`simulate`] on pre-drawn initial states and increments.
pub fn simulate_draws<T: Scalar, C: Control<T>>(
    control: &C,
    draws: &PathDraws<T>,
    sigma: f64,
    grid: &TimeGrid,
    dynamics: Dynamics,
) -> Result<PathEnsemble<T>> {
    check_setup(control, draws.initial.dim(), dynamics, sigma)?;
    if draws.increments.len() != grid.steps {
        return Err(Error::usage("increments do not match the time grid"));
    }
    let mut states = vec![draws.initial.clone()];
    let mut drifts = Vec::with_capacity(grid.steps);
    for k in 0..grid.steps {
        let mut tape = Tape::new();
        let params = control.bind(&mut tape, false);
        let x = tape.constant(states[k].to_tensor());
        let eh = match dynamics {
            Dynamics::Ev => {
                let h = tape.slice_cols(x, 1, 2)?;
                Some(tape.exp(h).map_err(step_error(k))?)
            }
            Dynamics::Plain => None,
        };
        let (u, next) = step(
            &mut tape,
            control,
            &params,
            x,
            eh,
            T::lit(grid.node(k) / grid.horizon),
            T::lit(grid.dt(k)),
            &draws.increments[k],
            T::lit(sigma),
        )
        .map_err(step_error(k))?;
        drifts.push(SampleBatch::from_tensor(tape.value(u)));
        states.push(SampleBatch::from_tensor(tape.value(next)));
    }
    Ok(PathEnsemble {
        grid: *grid,
        dynamics,
        sigma,
        states,
        drifts,
        increments: draws.increments.clone(),
    })
}

/// Left-endpoint control energy of a simulated ensemble.
pub fn energy<T: Scalar>(ensemble: &PathEnsemble<T>) -> T {
    let n = T::from_count(ensemble.n_paths());
    let mut acc = CompensatedSum::new();
    for (k, u) in ensemble.drifts.iter().enumerate() {
        let s = crate::scalar::csum_iter(u.data().iter().map(|&v| v * v));
        acc.add(s * T::lit(ensemble.grid.dt(k)));
    }
    acc.value() / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffgraph::grad_check;

    fn plain_sim(c: Vec<f64>, n: usize, seed: u64) -> PathEnsemble<f64> {
        let d = c.len();
        let drift = ConstantDrift { state_dim: d, value: c };
        let grid = TimeGrid::new(1.0, 20).unwrap();
        simulate(&drift, &DistributionSpec::dirac_origin(d), 0.5, &grid, n, RngStream::new(seed, 1), Dynamics::Plain).unwrap()
    }

    #[test]
    fn grid_nodes() {
        let g = TimeGrid::new(0.7, 3).unwrap();
        let t = g.nodes();
        assert_eq!(t.len(), 4);
        assert_eq!(t[0], 0.0);
        assert_eq!(t[3], 0.7);
        assert!(t.windows(2).all(|w| w[1] > w[0]));
        assert!(TimeGrid::new(0.0, 3).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn zero_drift_terminal_variance() {
        let e = plain_sim(vec![0.0, 0.0], 100_000, 3);
        let xt = e.terminal();
        for c in 0..2 {
            let sd = xt.column_std(c);
            assert!((sd * sd - 0.25).abs() <= 0.005, "coordinate {c}: {}", sd * sd);
            let band = 3.0 * 0.5 / (100_000f64).sqrt();
            assert!(xt.column_mean(c).abs() <= band);
        }
        assert_eq!(energy(&e), 0.0);
    }

    #[test]
    fn constant_drift_shifts_the_mean() {
        let e = plain_sim(vec![1.5, -0.5], 20_000, 4);
        let band = 3.0 * 0.5 / (20_000f64).sqrt();
        assert!((e.terminal().column_mean(0) - 1.5).abs() <= band);
        assert!((e.terminal().column_mean(1) + 0.5).abs() <= band);
        assert!((energy(&e) - 2.5).abs() < 1e-12);
        assert!((e.max_drift_norm() - 2.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ev_heterogeneity_is_frozen() {
        let drift = ConstantDrift { state_dim: 2, value: vec![0.6] };
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let e: PathEnsemble<f64> =
            simulate(&drift, &DistributionSpec::ev_initial(), 0.05, &grid, 500, RngStream::new(1, 2), Dynamics::Ev).unwrap();
        for k in 1..=20 {
            for i in 0..500 {
                assert_eq!(e.states[k].row(i)[1], e.states[0].row(i)[1]);
            }
        }
        assert_eq!(e.increments[0].dim(), 1);
        // s_T = s_0 + 0.6·e^h + σB_T
        let mut resid = Vec::new();
        for i in 0..500 {
            let (s0, h) = (e.states[0].row(i)[0], e.states[0].row(i)[1]);
            let b: f64 = e.increments.iter().map(|b| b.row(i)[0]).sum();
            resid.push(e.terminal().row(i)[0] - s0 - 0.6 * h.exp() - 0.05 * b);
        }
        assert!(resid.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn deterministic_and_path_local() {
        let a = plain_sim(vec![0.2, 0.1], 50, 7);
        let b = plain_sim(vec![0.2, 0.1], 50, 7);
        assert_eq!(a, b);
        let bigger = plain_sim(vec![0.2, 0.1], 80, 7);
        for k in 0..=20 {
            assert_eq!(a.states[k].row(13), bigger.states[k].row(13));
        }
        assert_ne!(a, plain_sim(vec![0.2, 0.1], 50, 8));
    }

    #[test]
    fn graph_and_value_simulation_agree() {
        let drift = ConstantDrift { state_dim: 3, value: vec![0.3, -0.1, 0.7] };
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let draws = draw_paths::<f64>(&DistributionSpec::standard_normal(3), 6, &grid, Dynamics::Plain, RngStream::new(2, 0)).unwrap();
        let mut tape = Tape::new();
        let params = drift.bind(&mut tape, true);
        let paths = simulate_graph(&mut tape, &drift, &params, &draws, 0.4, &grid, Dynamics::Plain).unwrap();
        let from_graph = PathEnsemble::from_graph(&tape, &paths, &draws, 0.4, &grid, Dynamics::Plain);
        let direct = simulate_draws(&drift, &draws, 0.4, &grid, Dynamics::Plain).unwrap();
        assert_eq!(from_graph, direct);
        let en = energy_node(&mut tape, &paths, &grid).unwrap();
        assert!((tape.value(en).item() - 0.59).abs() < 1e-12);
    }

    #[test]
    fn pathwise_gradient_with_frozen_noise() {
        struct Affine;
        impl Control<f64> for Affine {
            fn state_dim(&self) -> usize {
                2
            }
            fn control_dim(&self) -> usize {
                2
            }
            fn bind(&self, _: &mut Tape<f64>, _: bool) -> Vec<Var> {
                unreachable!()
            }
            fn apply(&self, tape: &mut Tape<f64>, p: &[Var], t: f64, x: Var) -> Result<Var> {
                let lin = tape.matmul(x, p[0])?;
                let sx = tape.sin(lin)?;
                let tb = tape.scale(p[1], t)?;
                tape.add_row_broadcast(sx, tb)
            }
        }
        let grid = TimeGrid::new(1.0, 6).unwrap();
        let draws = draw_paths::<f64>(&DistributionSpec::standard_normal(2), 5, &grid, Dynamics::Plain, RngStream::new(9, 0)).unwrap();
        let w = Tensor::from_rows(&[vec![0.3, -0.7], vec![0.5, 0.2]]).unwrap();
        let b = Tensor::row(vec![0.4, -1.1]);
        let f = |tape: &mut Tape<f64>, v: &[Var]| {
            let paths = simulate_graph(tape, &Affine, v, &draws, 0.5, &grid, Dynamics::Plain)?;
            let e = energy_node(tape, &paths, &grid)?;
            let xt = paths.states[grid.steps];
            let sq = tape.square(xt)?;
            let m = tape.mean(sq)?;
            tape.add(e, m)
        };
        assert!(grad_check(f, &[w, b], 1e-6).unwrap() <= 1e-4);
    }

    #[test]
    fn non_finite_state_reports_the_step() {
        let drift = ConstantDrift { state_dim: 1, value: vec![f64::MAX] };
        let grid = TimeGrid::new(2.0, 8).unwrap();
        let err = simulate(&drift, &DistributionSpec::dirac_origin(1), 0.1, &grid, 4, RngStream::new(0, 0), Dynamics::Plain)
            .unwrap_err();
        match err {
            Error::Numeric { op, .. } => assert!(op.starts_with("simulate step"), "{op}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn setup_errors() {
        let drift = ConstantDrift::<f64>::zero(2, 2);
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let spec = DistributionSpec::dirac_origin(2);
        assert!(simulate(&drift, &spec, 0.0, &grid, 4, RngStream::new(0, 0), Dynamics::Plain).is_err());
        assert!(simulate(&drift, &spec, 0.1, &grid, 1, RngStream::new(0, 0), Dynamics::Plain).is_err());
        assert!(simulate(&drift, &spec, 0.1, &grid, 4, RngStream::new(0, 0), Dynamics::Ev).is_err());
    }
}
