//! Feedback drift `u_θ(t, x)`: an MLP on `(t/T, x)` whose hidden layers are
//! `Linear → LayerNorm → ReLU`, followed by a linear read-out.
//!
//! Parameters are stored in a fixed order, layer by layer: weight
//! (`fan_in × fan_out`), bias (`1 × fan_out`), then for hidden layers the
//! LayerNorm scale and shift (`1 × fan_out` each). The checkpoint format is
//! JSON:
//!
//! ```json
//! {"format": "kmfg-drift-v1", "widths": [3, 64, 32, 2], "params": [...]}
//! ```
//!
//! with `params` the concatenation of all tensors in that order, as f64.

use crate::diffgraph::{Tape, Tensor, Var};
use crate::distributions::RngStream;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sde::{Control, PathEnsemble};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const CHECKPOINT_FORMAT: &str = "kmfg-drift-v1";

#[derive(Clone, Debug, PartialEq)]
pub struct DriftNetwork<T> {
    widths: Vec<usize>,
    params: Vec<Tensor<T>>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    widths: Vec<usize>,
    params: Vec<f64>,
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::config("a drift network needs input and output widths"));
    }
    if widths.iter().any(|&w| w == 0) {
        return Err(Error::config(format!("zero layer width in {widths:?}")));
    }
    if widths[0] < 2 {
        return Err(Error::config("input width must include the time slot and at least one state coordinate"));
    }
    Ok(())
}

/// Shapes of the parameter tensors, in storage order.
fn layout(widths: &[usize]) -> Vec<Vec<usize>> {
    let layers = widths.len() - 1;
    let mut shapes = Vec::new();
    for l in 0..layers {
        let (i, o) = (widths[l], widths[l + 1]);
        shapes.push(vec![i, o]);
        shapes.push(vec![1, o]);
        if l + 1 < layers {
            shapes.push(vec![1, o]);
            shapes.push(vec![1, o]);
        }
    }
    shapes
}

impl<T: Scalar> DriftNetwork<T> {
    /// Glorot-uniform weights, zero biases, unit LayerNorm scales, zero shifts.
    pub fn init(widths: &[usize], stream: RngStream) -> Result<Self> {
        check_widths(widths)?;
        let mut rng = stream.rng();
        let layers = widths.len() - 1;
        let mut params = Vec::new();
        for l in 0..layers {
            let (i, o) = (widths[l], widths[l + 1]);
            let a = (6.0 / (i + o) as f64).sqrt();
            let w = (0..i * o).map(|_| T::lit(rng.random_range(-a..a))).collect();
            params.push(Tensor::matrix(i, o, w)?);
            params.push(Tensor::zeros(&[1, o]));
            if l + 1 < layers {
                params.push(Tensor::filled(&[1, o], T::one()));
                params.push(Tensor::zeros(&[1, o]));
            }
        }
        Ok(Self {
            widths: widths.to_vec(),
            params,
        })
    }

    /// All-zero weights and biases (LayerNorm scales stay at one).
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        let params = layout(widths).iter().map(|s| Tensor::zeros(s)).collect();
        Ok(Self {
            widths: widths.to_vec(),
            params,
        })
    }

    /// Number of scalar parameters for the given widths.
    pub fn count_for(widths: &[usize]) -> usize {
        layout(widths).iter().map(|s| s.iter().product::<usize>()).sum()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(Tensor::all_finite)
    }

    pub fn flatten(&self) -> Vec<T> {
        self.params.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn from_flat(widths: &[usize], flat: &[T]) -> Result<Self> {
        check_widths(widths)?;
        let need = Self::count_for(widths);
        if flat.len() != need {
            return Err(Error::config(format!(
                "widths {widths:?} need {need} parameters, got {}",
                flat.len()
            )));
        }
        let mut off = 0;
        let mut params = Vec::new();
        for s in layout(widths) {
            let n: usize = s.iter().product();
            params.push(Tensor::new(s, flat[off..off + n].to_vec())?);
            off += n;
        }
        Ok(Self {
            widths: widths.to_vec(),
            params,
        })
    }

    pub fn to_checkpoint(&self) -> String {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            widths: self.widths.clone(),
            params: self.flatten().into_iter().map(|v| v.as_f64()).collect(),
        };
        serde_json::to_string(&ck).expect("checkpoint serializes")
    }

    pub fn from_checkpoint(json: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(json)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::config(format!("unknown checkpoint format {:?}", ck.format)));
        }
        let flat: Vec<T> = ck.params.into_iter().map(T::lit).collect();
        let net = Self::from_flat(&ck.widths, &flat)?;
        if !net.all_finite() {
            return Err(Error::config("checkpoint holds non-finite parameters"));
        }
        Ok(net)
    }

    /// Forward pass on an `N × (d+1)` input whose first column is time.
    pub fn forward_input(&self, tape: &mut Tape<T>, params: &[Var], input: Var) -> Result<Var> {
        let s = tape.value(input).shape().to_vec();
        if s.len() != 2 || s[1] != self.widths[0] {
            return Err(Error::usage(format!(
                "network input must be N x {}, got {s:?}",
                self.widths[0]
            )));
        }
        let layers = self.widths.len() - 1;
        let mut h = input;
        let mut p = 0;
        for l in 0..layers {
            let z = tape.matmul(h, params[p])?;
            let z = tape.add_row_broadcast(z, params[p + 1])?;
            p += 2;
            if l + 1 < layers {
                let z = tape.layer_norm(z, params[p], params[p + 1])?;
                p += 2;
                h = tape.relu(z)?;
            } else {
                h = z;
            }
        }
        Ok(h)
    }

    /// `u(t, x)` evaluated off-tape.
    pub fn forward_values(&self, t_frac: T, x: &crate::distributions::SampleBatch<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let xv = tape.constant(x.to_tensor());
        let out = self.apply(&mut tape, &params, t_frac, xv)?;
        Ok(tape.value(out).clone())
    }
}

impl<T: Scalar> Control<T> for DriftNetwork<T> {
    fn state_dim(&self) -> usize {
        self.widths[0] - 1
    }

    fn control_dim(&self) -> usize {
        *self.widths.last().expect("widths")
    }

    fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if trainable { tape.leaf(p.clone()) } else { tape.constant(p.clone()) })
            .collect()
    }

    fn apply(&self, tape: &mut Tape<T>, params: &[Var], t_frac: T, x: Var) -> Result<Var> {
        let s = tape.value(x).shape().to_vec();
        if s.len() != 2 || s[1] != self.state_dim() {
            return Err(Error::usage(format!(
                "state must be N x {}, got {s:?}",
                self.state_dim()
            )));
        }
        let tcol = tape.constant(Tensor::filled(&[s[0], 1], t_frac));
        let input = tape.concat_cols(&[tcol, x])?;
        self.forward_input(tape, params, input)
    }
}

/// `max_{i, k<q} |u(t_k, X_{t_k}⁽ⁱ⁾)|` over the grid points where the drift acts.
pub fn sup_norm<T: Scalar, C: Control<T>>(control: &C, ensemble: &PathEnsemble<T>) -> Result<T> {
    let grid = ensemble.grid;
    let mut best = T::zero();
    for k in 0..grid.steps {
        let mut tape = Tape::new();
        let params = control.bind(&mut tape, false);
        let x = tape.constant(ensemble.states[k].to_tensor());
        let u = control.apply(&mut tape, &params, T::lit(grid.node(k) / grid.horizon), x)?;
        let uv = tape.value(u);
        for i in 0..uv.rows() {
            let n = uv.row_slice(i).iter().map(|&v| v * v).sum::<T>().sqrt();
            best = best.max(n);
        }
    }
    Ok(best)
}
