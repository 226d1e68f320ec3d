use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Central-difference gradient of a scalar function of several tensors.
///
/// `f` is rebuilt on a fresh tape for every perturbation, so it must be a
/// pure function of its inputs.
pub fn finite_difference_gradient<T, F>(f: &F, point: &[Tensor<T>], step: T) -> Result<Vec<Tensor<T>>>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor<T>]| -> Result<T> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };
    let mut shifted = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    let two_h = step + step;
    for (ti, t) in point.iter().enumerate() {
        let mut g = Tensor::zeros(t.shape());
        for k in 0..t.len() {
            let orig = t.data()[k];
            shifted[ti].data_mut()[k] = orig + step;
            let plus = eval(&shifted)?;
            shifted[ti].data_mut()[k] = orig - step;
            let minus = eval(&shifted)?;
            shifted[ti].data_mut()[k] = orig;
            g.data_mut()[k] = (plus - minus) / two_h;
        }
        out.push(g);
    }
    Ok(out)
}

/// Max over coordinates of `|autodiff − central difference| / (|central difference| + 1e-12)`.
pub fn grad_check<T, F>(f: F, point: &[Tensor<T>], step: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if step <= T::zero() {
        return Err(Error::usage("finite-difference step must be positive"));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let numeric = finite_difference_gradient(&f, point, step)?;
    let floor = T::lit(1e-12);
    let mut worst = T::zero();
    for (v, fd) in vars.iter().zip(&numeric) {
        let ad = grads.get(&tape, *v);
        for (&a, &n) in ad.data().iter().zip(fd.data()) {
            worst = worst.max((a - n).abs() / (n.abs() + floor));
        }
    }
    Ok(worst)
}
