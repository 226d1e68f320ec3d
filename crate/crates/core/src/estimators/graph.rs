//! Estimators as tape expressions, differentiable in the `X` sample.
//!
//! The target sample and the frequencies enter as constants; their
//! contributions that do not depend on `X` (the `U_YY` terms) are folded in
//! as scalars.

use super::{require_pairs, trig_sums_all, u_from_sums, TrigSums, SOC_PROFILE_HIGH, SOC_PROFILE_LOW, SOC_PROFILE_STEEPNESS};
use crate::diffgraph::{Tape, Tensor, Var};
use crate::distributions::{FrequencyBatch, KernelSpec, SampleBatch};
use crate::error::{Error, Result};
use crate::scalar::{CompensatedSum, Scalar};

fn shape_of<T: Scalar>(tape: &Tape<T>, x: Var, what: &str) -> Result<(usize, usize)> {
    let s = tape.value(x).shape();
    if s.len() != 2 {
        return Err(Error::usage(format!("{what}: sample must be a matrix, got shape {s:?}")));
    }
    Ok((s[0], s[1]))
}

/// Row vectors `S_c`, `S_s` (each `1×M`) of `x` at the frequencies `z`.
pub fn trig_sum_nodes<T: Scalar>(tape: &mut Tape<T>, x: Var, z: &FrequencyBatch<T>) -> Result<(Var, Var)> {
    let (_, d) = shape_of(tape, x, "trig_sum_nodes")?;
    if z.dim() != d {
        return Err(Error::usage(format!(
            "frequency dimension {} does not match sample dimension {d}",
            z.dim()
        )));
    }
    let zt = tape.constant(z.to_tensor().transpose());
    let p = tape.matmul(x, zt)?;
    let m = z.n();
    let cs = tape.trig_sums(p)?;
    Ok((tape.slice_cols(cs, 0, m)?, tape.slice_cols(cs, m, 2 * m)?))
}

/// `Σ_r (S_c² + S_s²)`.
fn power_sum<T: Scalar>(tape: &mut Tape<T>, sc: Var, ss: Var) -> Result<Var> {
    let a = tape.square(sc)?;
    let b = tape.square(ss)?;
    let ab = tape.add(a, b)?;
    tape.sum(ab)
}

fn row_const<T: Scalar>(tape: &mut Tape<T>, sums: &[TrigSums<T>]) -> (Var, Var) {
    let c = tape.constant(Tensor::row(sums.iter().map(|t| t.s_cos).collect()));
    let s = tape.constant(Tensor::row(sums.iter().map(|t| t.s_sin).collect()));
    (c, s)
}

/// Random-feature U-statistic `γ̂²` with gradient to `x`.
pub fn rf_u_mmd2_node<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    y: &SampleBatch<T>,
    z: &FrequencyBatch<T>,
    phi0: f64,
) -> Result<Var> {
    let (n, d) = shape_of(tape, x, "rf_u_mmd2")?;
    require_pairs(n, "rf_u_mmd2")?;
    if y.n() != n || y.dim() != d {
        return Err(Error::usage(format!(
            "rf_u_mmd2: target batch is {}x{}, sample is {n}x{d}",
            y.n(),
            y.dim()
        )));
    }
    if z.n() == 0 {
        return Err(Error::usage("rf_u_mmd2: need at least one frequency"));
    }
    let m = z.n();
    let ty: Vec<TrigSums<T>> = trig_sums_all(y, z);
    let mut uyy = CompensatedSum::new();
    for &t in &ty {
        uyy.add(u_from_sums(t, n));
    }

    let (sc, ss) = trig_sum_nodes(tape, x, z)?;
    let (yc, ys) = row_const(tape, &ty);
    let nf = T::from_count(n);
    let mf = T::from_count(m);
    let pairs = nf * (nf - T::one());

    let pxx = power_sum(tape, sc, ss)?;
    let uxx = tape.scale(pxx, T::one() / pairs)?;
    let uxx = tape.add_scalar(uxx, uyy.value() - mf * nf / pairs)?;

    let cx = tape.mul(sc, yc)?;
    let sx = tape.mul(ss, ys)?;
    let cross = tape.add(cx, sx)?;
    let cross = tape.sum(cross)?;
    let vxy = tape.scale(cross, -(T::one() + T::one()) / (nf * nf))?;

    let total = tape.add(uxx, vxy)?;
    tape.scale(total, T::lit(phi0) / mf)
}

/// Biased RFF V-statistic with gradient to `x`.
pub fn rff_v_mmd2_node<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    y: &SampleBatch<T>,
    z: &FrequencyBatch<T>,
    phi0: f64,
) -> Result<Var> {
    let (n, d) = shape_of(tape, x, "rff_v_mmd2")?;
    if n == 0 || y.n() != n || y.dim() != d || z.n() == 0 {
        return Err(Error::usage("rff_v_mmd2: sample, target or frequency shape mismatch"));
    }
    let ty: Vec<TrigSums<T>> = trig_sums_all(y, z);
    let (sc, ss) = trig_sum_nodes(tape, x, z)?;
    let (yc, ys) = row_const(tape, &ty);
    let dc = tape.sub(sc, yc)?;
    let ds = tape.sub(ss, ys)?;
    let p = power_sum(tape, dc, ds)?;
    let nf = T::from_count(n);
    tape.scale(p, T::lit(phi0) / (nf * nf * T::from_count(z.n())))
}

/// Kernel U-statistic in `O(N²)` with gradient to `x`.
pub fn kernel_u_mmd2_node<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    y: &SampleBatch<T>,
    kernel: &KernelSpec,
) -> Result<Var> {
    let (n, d) = shape_of(tape, x, "kernel_u_mmd2")?;
    require_pairs(n, "kernel_u_mmd2")?;
    require_pairs(y.n(), "kernel_u_mmd2")?;
    if y.dim() != d {
        return Err(Error::usage("kernel_u_mmd2: dimension mismatch"));
    }
    kernel.validate()?;
    let phi0 = T::lit(kernel.phi0);
    let alpha = T::lit(kernel.alpha);
    let (nx, ny) = (T::from_count(n), T::from_count(y.n()));
    let tyy = super::kernel_sum_offdiag(y, kernel) / (ny * (ny - T::one()));

    let dxx = tape.pairwise_sq_dist(x, x)?;
    let kxx = tape.scale(dxx, -alpha)?;
    let kxx = tape.exp(kxx)?;
    let sxx = tape.sum(kxx)?;
    // the diagonal contributes exactly N·Φ(0)
    let pairs = nx * (nx - T::one());
    let txx = tape.scale(sxx, phi0 / pairs)?;
    let txx = tape.add_scalar(txx, tyy - nx * phi0 / pairs)?;

    let yc = tape.constant(y.to_tensor());
    let dxy = tape.pairwise_sq_dist(x, yc)?;
    let kxy = tape.scale(dxy, -alpha)?;
    let kxy = tape.exp(kxy)?;
    let sxy = tape.sum(kxy)?;
    let txy = tape.scale(sxy, -(phi0 + phi0) / (nx * ny))?;
    tape.add(txx, txy)
}

/// Random-feature U-statistic of the interaction `½∬W dν dν`.
pub fn rf_u_interaction_node<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    zw: &FrequencyBatch<T>,
    psi0: f64,
) -> Result<Var> {
    let (n, _) = shape_of(tape, x, "rf_u_interaction")?;
    require_pairs(n, "rf_u_interaction")?;
    if zw.n() == 0 {
        return Err(Error::usage("rf_u_interaction: need at least one frequency"));
    }
    let (sc, ss) = trig_sum_nodes(tape, x, zw)?;
    let p = power_sum(tape, sc, ss)?;
    let nf = T::from_count(n);
    let mf = T::from_count(zw.n());
    let pairs = nf * (nf - T::one());
    let u = tape.scale(p, T::one() / pairs)?;
    let u = tape.add_scalar(u, -mf * nf / pairs)?;
    tape.scale(u, T::lit(psi0) / (T::from_count(2) * mf))
}

/// `u*(s)` elementwise.
pub fn soc_profile_node<T: Scalar>(tape: &mut Tape<T>, s: Var) -> Result<Var> {
    let beta = T::lit(SOC_PROFILE_STEEPNESS);
    let lo = tape.add_scalar(s, -T::lit(SOC_PROFILE_LOW))?;
    let lo = tape.scale(lo, beta)?;
    let lo = tape.sigmoid(lo)?;
    let hi = tape.scale(s, -beta)?;
    let hi = tape.add_scalar(hi, beta * T::lit(SOC_PROFILE_HIGH))?;
    let hi = tape.sigmoid(hi)?;
    tape.mul(lo, hi)
}

/// Tape nodes for the aggregate demand of an `N×2` block of `(s, h)` states.
#[derive(Clone, Copy, Debug)]
pub struct DemandNodes {
    /// Per-vehicle power `gᵢ = e^{hᵢ} u*(sᵢ)`, `N×1`.
    pub power: Var,
    pub mean: Var,
    pub squared: Var,
}

pub fn aggregate_demand_node<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<DemandNodes> {
    let (n, d) = shape_of(tape, x, "aggregate_demand")?;
    require_pairs(n, "aggregate_demand")?;
    if d < 2 {
        return Err(Error::usage("aggregate_demand: states must have (s, h) columns"));
    }
    let s = tape.slice_cols(x, 0, 1)?;
    let h = tape.slice_cols(x, 1, 2)?;
    let u = soc_profile_node(tape, s)?;
    let eh = tape.exp(h)?;
    power_to_demand(tape, u, eh, n)
}

/// Demand nodes from the profile `u*(s)` and multiplier `e^h` columns.
pub fn power_to_demand<T: Scalar>(tape: &mut Tape<T>, u: Var, eh: Var, n: usize) -> Result<DemandNodes> {
    let g = tape.mul(eh, u)?;
    let sum = tape.sum(g)?;
    let mean = tape.scale(sum, T::one() / T::from_count(n))?;
    let g2 = tape.square(g)?;
    let sum_sq = tape.sum(g2)?;
    let s2 = tape.square(sum)?;
    let neg = tape.scale(sum_sq, -T::one())?;
    let num = tape.add(s2, neg)?;
    let nf = T::from_count(n);
    let squared = tape.scale(num, T::one() / (nf * (nf - T::one())))?;
    Ok(DemandNodes { power: g, mean, squared })
}
