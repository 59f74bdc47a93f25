use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central finite-difference gradient of a scalar function of several tensors.
pub fn central_difference<F>(f: F, point: &[Tensor], eps: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    let mut work = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for t in 0..point.len() {
        let mut g = Tensor::zeros(point[t].shape());
        for i in 0..point[t].len() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + eps;
            let plus = f(&work)?;
            work[t].data_mut()[i] = orig - eps;
            let minus = f(&work)?;
            work[t].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Domain(format!(
                    "function is not finite near coordinate {i} of input {t}"
                )));
            }
            g.data_mut()[i] = (plus - minus) / (2.0 * eps);
        }
        out.push(g);
    }
    Ok(out)
}

/// Compares tape gradients of `f` at `point` with central differences.
///
/// `f` records a scalar loss on the given tape from one leaf per input
/// tensor. Returns the maximum over all coordinates of
/// `|analytic − numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, point: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::Domain(format!("epsilon {eps} outside (0, 1e-3]")));
    }
    let mut tape = Tape::new();
    let leaves: Vec<Var> = point.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &leaves)?;
    let value = tape.value(loss).item()?;
    if !value.is_finite() {
        return Err(Error::Domain("function value is not finite".into()));
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = leaves
        .iter()
        .zip(point)
        .map(|(&v, t)| grads.get_or_zeros(v, t))
        .collect();

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = inputs.iter().map(|x| t.param(x.clone())).collect();
        let l = f(&mut t, &vs)?;
        t.value(l).item()
    };
    let numeric = central_difference(eval, point, eps)?;

    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&x, &y) in a.data().iter().zip(n.data()) {
            worst = worst.max((x - y).abs() / x.abs().max(1.0));
        }
    }
    Ok(worst)
}
