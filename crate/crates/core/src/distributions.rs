//! Seeded samplers: initial and target laws, kernel frequencies, and the
//! EV heterogeneity coordinate.
//!
//! Randomness is addressed by an [`RngStream`] = (seed, stream id). Each pair
//! maps to its own ChaCha20 keystream, so a path, a target batch or a
//! frequency batch can be regenerated in isolation and results do not depend
//! on evaluation order.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// `n × d` row-major block of points.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch<T> {
    n: usize,
    d: usize,
    data: Vec<T>,
}

/// Random frequencies share the batch layout, one frequency per row.
pub type FrequencyBatch<T> = SampleBatch<T>;

impl<T: Scalar> SampleBatch<T> {
    pub fn new(n: usize, d: usize, data: Vec<T>) -> Result<Self> {
        if n * d != data.len() {
            return Err(Error::config(format!(
                "batch {n}x{d} needs {} entries, got {}",
                n * d,
                data.len()
            )));
        }
        Ok(Self { n, d, data })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            data: vec![T::zero(); n * d],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::config("ragged rows"));
        }
        Self::new(rows.len(), d, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.d.max(1)).take(self.n)
    }

    /// Columns `start..end` as a new batch.
    pub fn columns(&self, start: usize, end: usize) -> Self {
        let w = end - start;
        let mut data = Vec::with_capacity(self.n * w);
        for r in self.rows() {
            data.extend_from_slice(&r[start..end]);
        }
        Self { n: self.n, d: w, data }
    }

    pub fn column_mean(&self, c: usize) -> T {
        crate::scalar::csum_iter(self.rows().map(|r| r[c])) / T::from_count(self.n)
    }

    /// Unbiased per-column standard deviation.
    pub fn column_std(&self, c: usize) -> T {
        let m = self.column_mean(c);
        let ss = crate::scalar::csum_iter(self.rows().map(|r| (r[c] - m) * (r[c] - m)));
        (ss / T::from_count(self.n - 1)).sqrt()
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for &i in order {
            data.extend_from_slice(self.row(i));
        }
        Self {
            n: order.len(),
            d: self.d,
            data,
        }
    }

    pub fn to_tensor(&self) -> crate::diffgraph::Tensor<T> {
        crate::diffgraph::Tensor::matrix(self.n, self.d, self.data.clone()).expect("batch shape")
    }

    pub fn from_tensor(t: &crate::diffgraph::Tensor<T>) -> Self {
        Self {
            n: t.rows(),
            d: t.cols(),
            data: t.data().to_vec(),
        }
    }
}

/// Address of an independent random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Deterministic child stream; distinct labels give distinct stream ids.
    pub fn child(&self, label: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(label.wrapping_add(0x5851_F42D_4C95_7F2D))),
        }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

#[inline]
pub(crate) fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistributionSpec {
    Dirac {
        point: Vec<f64>,
    },
    /// Independent coordinates `N(mean_k, std_k²)`.
    Gaussian {
        mean: Vec<f64>,
        std: Vec<f64>,
    },
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        stds: Vec<Vec<f64>>,
    },
    /// `(s₀, h₀)` with `s₀ ~ N(soc_mean, soc_std²)`, `h₀ ~ N(0, h_std²)`.
    EvInitial {
        soc_mean: f64,
        soc_std: f64,
        h_std: f64,
    },
}

impl DistributionSpec {
    pub fn dirac_origin(d: usize) -> Self {
        DistributionSpec::Dirac { point: vec![0.0; d] }
    }

    pub fn isotropic(mean: Vec<f64>, std: f64) -> Self {
        let d = mean.len();
        DistributionSpec::Gaussian {
            mean,
            std: vec![std; d],
        }
    }

    pub fn standard_normal(d: usize) -> Self {
        Self::isotropic(vec![0.0; d], 1.0)
    }

    pub fn ev_initial() -> Self {
        DistributionSpec::EvInitial {
            soc_mean: 0.20,
            soc_std: 0.05,
            h_std: 0.3,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DistributionSpec::Dirac { point } => point.len(),
            DistributionSpec::Gaussian { mean, .. } => mean.len(),
            DistributionSpec::GaussianMixture { means, .. } => means.first().map_or(0, Vec::len),
            DistributionSpec::EvInitial { .. } => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[f64], what: &str| -> Result<()> {
            if v.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return Err(Error::config(format!("{what}: standard deviations must be positive")));
            }
            Ok(())
        };
        match self {
            DistributionSpec::Dirac { point } => {
                if point.is_empty() || point.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config("dirac: point must be a nonempty finite vector"));
                }
            }
            DistributionSpec::Gaussian { mean, std } => {
                if mean.is_empty() || mean.len() != std.len() {
                    return Err(Error::config("gaussian: mean and std lengths differ"));
                }
                positive(std, "gaussian")?;
            }
            DistributionSpec::GaussianMixture { weights, means, stds } => {
                if weights.is_empty() || weights.len() != means.len() || weights.len() != stds.len() {
                    return Err(Error::config("gaussian-mixture: component counts differ"));
                }
                if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(Error::config("gaussian-mixture: weights must be nonnegative and sum to 1"));
                }
                let d = means[0].len();
                if d == 0 || means.iter().chain(stds.iter()).any(|v| v.len() != d) {
                    return Err(Error::config("gaussian-mixture: component dimensions differ"));
                }
                for s in stds {
                    positive(s, "gaussian-mixture")?;
                }
            }
            DistributionSpec::EvInitial { soc_std, h_std, soc_mean } => {
                positive(&[*soc_std, *h_std], "ev-initial")?;
                if !soc_mean.is_finite() {
                    return Err(Error::config("ev-initial: soc_mean must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Fills one row with a draw. The spec must already be validated.
    pub fn draw_row<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [T]) {
        match self {
            DistributionSpec::Dirac { point } => {
                for (o, &p) in out.iter_mut().zip(point) {
                    *o = T::lit(p);
                }
            }
            DistributionSpec::Gaussian { mean, std } => {
                for ((o, &m), &s) in out.iter_mut().zip(mean).zip(std) {
                    *o = T::lit(m + s * std_normal(rng));
                }
            }
            DistributionSpec::GaussianMixture { weights, means, stds } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut k = weights.len() - 1;
                for (i, &w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                for ((o, &m), &s) in out.iter_mut().zip(&means[k]).zip(&stds[k]) {
                    *o = T::lit(m + s * std_normal(rng));
                }
            }
            DistributionSpec::EvInitial { soc_mean, soc_std, h_std } => {
                out[0] = T::lit(soc_mean + soc_std * std_normal(rng));
                out[1] = T::lit(h_std * std_normal(rng));
            }
        }
    }
}

/// `n` i.i.d. draws from `spec`, deterministic in `(spec, n, stream)`.
pub fn sample<T: Scalar>(spec: &DistributionSpec, n: usize, stream: RngStream) -> Result<SampleBatch<T>> {
    if n == 0 {
        return Err(Error::usage("sample: n must be at least 1"));
    }
    spec.validate()?;
    let d = spec.dim();
    let mut rng = stream.rng();
    let mut data = vec![T::zero(); n * d];
    for row in data.chunks_exact_mut(d) {
        spec.draw_row(&mut rng, row);
    }
    SampleBatch::new(n, d, data)
}

/// `n` draws of `(s₀, h₀)` from the EV fleet initial law.
pub fn sample_ev_initial<T: Scalar>(n: usize, stream: RngStream) -> Result<SampleBatch<T>> {
    sample(&DistributionSpec::ev_initial(), n, stream)
}

/// Translation-invariant Gaussian kernel `Φ(x) = phi0 · exp(−α|x|²)`,
/// whose normalized frequency law is `N(0, 2α I)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub alpha: f64,
    #[serde(default = "one")]
    pub phi0: f64,
}

fn one() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn gaussian(alpha: f64) -> Self {
        Self { alpha, phi0: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("kernel bandwidth must be positive"));
        }
        if !(self.phi0 > 0.0 && self.phi0.is_finite()) {
            return Err(Error::config("kernel value at zero must be positive"));
        }
        Ok(())
    }

    #[inline]
    pub fn eval<T: Scalar>(&self, x: &[T], y: &[T]) -> T {
        let mut d2 = T::zero();
        for (&a, &b) in x.iter().zip(y) {
            d2 += (a - b) * (a - b);
        }
        T::lit(self.phi0) * (-T::lit(self.alpha) * d2).exp()
    }
}

/// `m` frequencies in dimension `d` drawn from `N(0, 2α I)`.
pub fn sample_frequencies<T: Scalar>(
    kernel: &KernelSpec,
    m: usize,
    d: usize,
    stream: RngStream,
) -> Result<FrequencyBatch<T>> {
    if m == 0 || d == 0 {
        return Err(Error::usage("sample_frequencies: m and d must be at least 1"));
    }
    kernel.validate()?;
    let scale = (2.0 * kernel.alpha).sqrt();
    let mut rng = stream.rng();
    let data = (0..m * d).map(|_| T::lit(scale * std_normal(&mut rng))).collect();
    SampleBatch::new(m, d, data)
}
