//! MMD² and interaction estimators.
//!
//! The random-feature estimators all run on per-frequency trigonometric sums
//! `S_c(z) = Σ cos(zᵀXᵢ)`, `S_s(z) = Σ sin(zᵀXᵢ)`. The diagonal of the
//! pairwise cosine sum is exactly `N`, so
//!
//! ```text
//! U_XX(z) = (S_c² + S_s² − N) / (N(N−1))     V_XY(z) = (S_cˣ S_cʸ + S_sˣ S_sʸ) / N²
//! ```
//!
//! give unbiased estimates of `E cos(zᵀ(X−X'))` and `E cos(zᵀ(X−Y))` in
//! `O(N)` time per frequency. Averaging `U_XX − 2V_XY + U_YY` over `M`
//! frequencies drawn from the normalized spectral density gives an unbiased
//! `O(NM)` estimate of `γ_K²`.
//!
//! Functions here take frequencies as explicit input and are pure. The
//! [`graph`] submodule builds the same formulas on a [`Tape`](crate::diffgraph::Tape)
//! so that gradients flow back to the `X` sample.

pub mod graph;

use crate::distributions::{FrequencyBatch, KernelSpec, SampleBatch};
use crate::error::{Error, Result};
use crate::scalar::{CompensatedSum, Scalar};
use serde::{Deserialize, Serialize};

/// Trigonometric sums of one sample at one frequency.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrigSums<T> {
    pub s_cos: T,
    pub s_sin: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    RfUMmd2,
    RffVMmd2,
    KernelUMmd2,
    RfUInteraction,
    RfVInteraction,
    KernelUInteraction,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorResult<T> {
    pub value: T,
    pub n_samples: usize,
    /// Zero for the kernel (non-random-feature) estimators.
    pub m_frequencies: usize,
    pub kind: EstimatorKind,
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `S_c(z)`, `S_s(z)` for the rows of `x`.
pub fn trig_sums<T: Scalar>(x: &SampleBatch<T>, z: &[T]) -> TrigSums<T> {
    let p: Vec<T> = x.rows().map(|row| dot(z, row)).collect();
    let (mut sn, mut cs) = (vec![T::zero(); p.len()], vec![T::zero(); p.len()]);
    T::sin_cos_slice(&p, &mut sn, &mut cs);
    TrigSums {
        s_cos: crate::scalar::csum(&cs),
        s_sin: crate::scalar::csum(&sn),
    }
}

/// Trigonometric sums at every frequency (row) of `z`; entry `r` equals `trig_sums(x, z_r)`.
pub fn trig_sums_all<T: Scalar>(x: &SampleBatch<T>, z: &FrequencyBatch<T>) -> Vec<TrigSums<T>> {
    let m = z.n();
    let mut c = vec![CompensatedSum::new(); m];
    let mut s = vec![CompensatedSum::new(); m];
    let (mut p, mut sn, mut cs) = (vec![T::zero(); m], vec![T::zero(); m], vec![T::zero(); m]);
    for row in x.rows() {
        for (pr, zr) in p.iter_mut().zip(z.rows()) {
            *pr = dot(zr, row);
        }
        T::sin_cos_slice(&p, &mut sn, &mut cs);
        for r in 0..m {
            c[r].add(cs[r]);
            s[r].add(sn[r]);
        }
    }
    c.iter()
        .zip(&s)
        .map(|(c, s)| TrigSums {
            s_cos: c.value(),
            s_sin: s.value(),
        })
        .collect()
}

fn check_dims<T: Scalar>(a: &SampleBatch<T>, b: &SampleBatch<T>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::usage(format!(
            "{what}: dimension mismatch ({} vs {})",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn require_pairs(n: usize, what: &str) -> Result<()> {
    if n < 2 {
        return Err(Error::usage(format!(
            "{what}: U-statistic needs at least 2 samples, got {n}"
        )));
    }
    Ok(())
}

fn require_same_size<T: Scalar>(x: &SampleBatch<T>, y: &SampleBatch<T>, what: &str) -> Result<()> {
    if x.n() != y.n() {
        return Err(Error::usage(format!(
            "{what}: sample sizes differ ({} vs {})",
            x.n(),
            y.n()
        )));
    }
    Ok(())
}

#[inline]
fn u_from_sums<T: Scalar>(t: TrigSums<T>, n: usize) -> T {
    let nf = T::from_count(n);
    (t.s_cos * t.s_cos + t.s_sin * t.s_sin - nf) / (nf * (nf - T::one()))
}

#[inline]
fn v_from_sums<T: Scalar>(a: TrigSums<T>, b: TrigSums<T>, n: usize) -> T {
    let nf = T::from_count(n);
    (a.s_cos * b.s_cos + a.s_sin * b.s_sin) / (nf * nf)
}

/// Unbiased same-sample term `U_XX(z)`.
pub fn u_stat_same<T: Scalar>(x: &SampleBatch<T>, z: &[T]) -> Result<T> {
    require_pairs(x.n(), "u_stat_same")?;
    Ok(u_from_sums(trig_sums(x, z), x.n()))
}

/// Cross-sample term `V_XY(z)`.
pub fn v_stat_cross<T: Scalar>(x: &SampleBatch<T>, y: &SampleBatch<T>, z: &[T]) -> Result<T> {
    require_same_size(x, y, "v_stat_cross")?;
    check_dims(x, y, "v_stat_cross")?;
    if x.n() == 0 {
        return Err(Error::usage("v_stat_cross: empty sample"));
    }
    Ok(v_from_sums(trig_sums(x, z), trig_sums(y, z), x.n()))
}

/// Per-frequency summands `g(z_r) = U_XX − 2V_XY + U_YY` (without the `Φ(0)` factor).
pub fn rf_u_summands<T: Scalar>(
    x: &SampleBatch<T>,
    y: &SampleBatch<T>,
    z: &FrequencyBatch<T>,
) -> Result<Vec<T>> {
    require_pairs(x.n(), "rf_u_mmd2")?;
    require_same_size(x, y, "rf_u_mmd2")?;
    check_dims(x, y, "rf_u_mmd2")?;
    check_dims(x, z, "rf_u_mmd2 frequencies")?;
    if z.n() == 0 {
        return Err(Error::usage("rf_u_mmd2: need at least one frequency"));
    }
    let n = x.n();
    Ok(trig_sums_all(x, z)
        .into_iter()
        .zip(trig_sums_all(y, z))
        .map(|(tx, ty)| {
            let two = T::one() + T::one();
            // grouped so that swapping X and Y is bit-exact
            (u_from_sums(tx, n) + u_from_sums(ty, n)) - two * v_from_sums(tx, ty, n)
        })
        .collect())
}

/// Random-feature U-statistic estimate of `γ_K²(µ, ν)` in `O(NM)`.
pub fn rf_u_mmd2<T: Scalar>(
    x: &SampleBatch<T>,
    y: &SampleBatch<T>,
    z: &FrequencyBatch<T>,
    phi0: f64,
) -> Result<EstimatorResult<T>> {
    let g = rf_u_summands(x, y, z)?;
    let m = g.len();
    let value = T::lit(phi0) * crate::scalar::csum(&g) / T::from_count(m);
    Ok(EstimatorResult {
        value,
        n_samples: x.n(),
        m_frequencies: m,
        kind: EstimatorKind::RfUMmd2,
    })
}

/// Biased random-Fourier-feature V-statistic `Φ(0)|φ̄(X) − φ̄(Y)|²`.
pub fn rff_v_mmd2<T: Scalar>(
    x: &SampleBatch<T>,
    y: &SampleBatch<T>,
    z: &FrequencyBatch<T>,
    phi0: f64,
) -> Result<EstimatorResult<T>> {
    require_same_size(x, y, "rff_v_mmd2")?;
    check_dims(x, y, "rff_v_mmd2")?;
    check_dims(x, z, "rff_v_mmd2 frequencies")?;
    if x.n() == 0 || z.n() == 0 {
        return Err(Error::usage("rff_v_mmd2: need at least one sample and one frequency"));
    }
    let nf = T::from_count(x.n());
    let mut acc = CompensatedSum::new();
    for (tx, ty) in trig_sums_all(x, z).into_iter().zip(trig_sums_all(y, z)) {
        let dc = (tx.s_cos - ty.s_cos) / nf;
        let ds = (tx.s_sin - ty.s_sin) / nf;
        acc.add(dc * dc + ds * ds);
    }
    Ok(EstimatorResult {
        value: T::lit(phi0) * acc.value() / T::from_count(z.n()),
        n_samples: x.n(),
        m_frequencies: z.n(),
        kind: EstimatorKind::RffVMmd2,
    })
}

fn kernel_sum_cross<T: Scalar>(a: &SampleBatch<T>, b: &SampleBatch<T>, kernel: &KernelSpec) -> T {
    let mut acc = CompensatedSum::new();
    for ra in a.rows() {
        let mut row = T::zero();
        for rb in b.rows() {
            row += kernel.eval(ra, rb);
        }
        acc.add(row);
    }
    acc.value()
}

/// `Σ_{i≠j} K(aᵢ, aⱼ)`.
fn kernel_sum_offdiag<T: Scalar>(a: &SampleBatch<T>, kernel: &KernelSpec) -> T {
    let mut acc = CompensatedSum::new();
    for i in 0..a.n() {
        let ri = a.row(i);
        let mut row = T::zero();
        for j in (i + 1)..a.n() {
            row += kernel.eval(ri, a.row(j));
        }
        acc.add(row + row);
    }
    acc.value()
}

/// Kernel U-statistic `T_XX − 2T_XY + T_YY` with the same-sample diagonals removed; `O(N²)`.
pub fn kernel_u_mmd2<T: Scalar>(
    x: &SampleBatch<T>,
    y: &SampleBatch<T>,
    kernel: &KernelSpec,
) -> Result<EstimatorResult<T>> {
    require_pairs(x.n(), "kernel_u_mmd2")?;
    require_pairs(y.n(), "kernel_u_mmd2")?;
    check_dims(x, y, "kernel_u_mmd2")?;
    kernel.validate()?;
    let (nx, ny) = (T::from_count(x.n()), T::from_count(y.n()));
    let txx = kernel_sum_offdiag(x, kernel) / (nx * (nx - T::one()));
    let tyy = kernel_sum_offdiag(y, kernel) / (ny * (ny - T::one()));
    let txy = kernel_sum_cross(x, y, kernel) / (nx * ny);
    Ok(EstimatorResult {
        value: txx - (txy + txy) + tyy,
        n_samples: x.n(),
        m_frequencies: 0,
        kind: EstimatorKind::KernelUMmd2,
    })
}

/// Random-feature U-statistic of the self-interaction `½∬W dν dν`.
pub fn rf_u_interaction<T: Scalar>(
    x: &SampleBatch<T>,
    zw: &FrequencyBatch<T>,
    psi0: f64,
) -> Result<EstimatorResult<T>> {
    require_pairs(x.n(), "rf_u_interaction")?;
    check_dims(x, zw, "rf_u_interaction frequencies")?;
    if zw.n() == 0 {
        return Err(Error::usage("rf_u_interaction: need at least one frequency"));
    }
    let mut acc = CompensatedSum::new();
    for t in trig_sums_all(x, zw) {
        acc.add(u_from_sums(t, x.n()));
    }
    let two_m = T::from_count(2 * zw.n());
    Ok(EstimatorResult {
        value: T::lit(psi0) * acc.value() / two_m,
        n_samples: x.n(),
        m_frequencies: zw.n(),
        kind: EstimatorKind::RfUInteraction,
    })
}

/// V-statistic counterpart of [`rf_u_interaction`] (diagonal included, biased by `Ψ(0)/(2N)`).
pub fn rf_v_interaction<T: Scalar>(
    x: &SampleBatch<T>,
    zw: &FrequencyBatch<T>,
    psi0: f64,
) -> Result<EstimatorResult<T>> {
    check_dims(x, zw, "rf_v_interaction frequencies")?;
    if x.n() == 0 || zw.n() == 0 {
        return Err(Error::usage("rf_v_interaction: need at least one sample and one frequency"));
    }
    let nf = T::from_count(x.n());
    let mut acc = CompensatedSum::new();
    for t in trig_sums_all(x, zw) {
        acc.add((t.s_cos * t.s_cos + t.s_sin * t.s_sin) / (nf * nf));
    }
    Ok(EstimatorResult {
        value: T::lit(psi0) * acc.value() / T::from_count(2 * zw.n()),
        n_samples: x.n(),
        m_frequencies: zw.n(),
        kind: EstimatorKind::RfVInteraction,
    })
}

/// Kernel U-statistic `(1/(2N(N−1))) Σ_{i≠j} W(Xᵢ, Xⱼ)`.
pub fn kernel_u_interaction<T: Scalar>(x: &SampleBatch<T>, kernel: &KernelSpec) -> Result<EstimatorResult<T>> {
    require_pairs(x.n(), "kernel_u_interaction")?;
    kernel.validate()?;
    let nf = T::from_count(x.n());
    let two = T::one() + T::one();
    Ok(EstimatorResult {
        value: kernel_sum_offdiag(x, kernel) / (two * nf * (nf - T::one())),
        n_samples: x.n(),
        m_frequencies: 0,
        kind: EstimatorKind::KernelUInteraction,
    })
}

/// Charging-power profile of the EV model.
pub const SOC_PROFILE_STEEPNESS: f64 = 20.0;
pub const SOC_PROFILE_LOW: f64 = 0.1;
pub const SOC_PROFILE_HIGH: f64 = 0.85;

/// `u*(s) = σ(β(s − s₋)) σ(β(s₊ − s))`.
pub fn soc_profile<T: Scalar>(s: T) -> T {
    let beta = T::lit(SOC_PROFILE_STEEPNESS);
    crate::diffgraph::sigmoid(beta * (s - T::lit(SOC_PROFILE_LOW)))
        * crate::diffgraph::sigmoid(beta * (T::lit(SOC_PROFILE_HIGH) - s))
}

/// Aggregate demand of an EV population `(s, h)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Demand<T> {
    /// `D̂ = mean(g)` with `gᵢ = e^{hᵢ} u*(sᵢ)`.
    pub mean: T,
    /// Unbiased `D²` estimate `((Σg)² − Σg²)/(N(N−1))`.
    pub squared: T,
}

pub fn aggregate_demand<T: Scalar>(x: &SampleBatch<T>) -> Result<Demand<T>> {
    require_pairs(x.n(), "aggregate_demand")?;
    if x.dim() < 2 {
        return Err(Error::usage("aggregate_demand: states must have (s, h) columns"));
    }
    let g: Vec<T> = x.rows().map(|r| r[1].exp() * soc_profile(r[0])).collect();
    Ok(demand_from_weights(&g))
}

/// [`Demand`] from precomputed per-vehicle power draws `gᵢ`.
pub fn demand_from_weights<T: Scalar>(g: &[T]) -> Demand<T> {
    let nf = T::from_count(g.len());
    let s = crate::scalar::csum(g);
    let s2 = crate::scalar::csum_iter(g.iter().map(|&v| v * v));
    Demand {
        mean: s / nf,
        squared: (s * s - s2) / (nf * (nf - T::one())),
    }
}

/// `γ_K²` between `N(m₁, vI)` and `N(m₂, vI)` for the Gaussian kernel `e^{−α|x−y|²}`.
pub fn gaussian_mmd2_closed_form(m1: &[f64], m2: &[f64], variance: f64, alpha: f64) -> Result<f64> {
    if !(variance > 0.0) {
        return Err(Error::usage("gaussian_mmd2_closed_form: variance must be positive"));
    }
    if m1.len() != m2.len() {
        return Err(Error::usage("gaussian_mmd2_closed_form: mean dimensions differ"));
    }
    let d = m1.len() as f64;
    let shift2: f64 = m1.iter().zip(m2).map(|(a, b)| (a - b) * (a - b)).sum();
    let spread = 1.0 + 4.0 * alpha * variance;
    Ok(2.0 * spread.powf(-d / 2.0) * (1.0 - (-alpha * shift2 / spread).exp()))
}

/// `½ Ψ(0) (1 + 4αv)^{−d/2}`, the interaction of `N(m, vI)` under `W = Ψ(0)e^{−α|x−y|²}`.
pub fn gaussian_interaction_closed_form(d: usize, variance: f64, alpha: f64, psi0: f64) -> f64 {
    0.5 * psi0 * (1.0 + 4.0 * alpha * variance).powf(-(d as f64) / 2.0)
}
