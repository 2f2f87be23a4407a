//! Central-difference gradient verification.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::Result;

/// Compare analytic gradients against central differences.
///
/// `f` must build a scalar loss from the given leaves on the given tape; it is
/// re-executed on a fresh tape for every perturbed evaluation, so it has to be
/// deterministic. Returns the maximum error over all parameter entries,
/// measured as `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(f: &F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> =
            tensors.iter().map(|t| tape.param(t.clone())).collect::<Result<_>>()?;
        let loss = f(&tape, &vars)?;
        Ok(tape.item(loss))
    };

    // Analytic pass.
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect::<Result<_>>()?;
    let loss = f(&tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> =
        vars.iter().map(|v| tape.grad(*v).expect("param grad")).collect();

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let orig = work[pi].data()[i];
            work[pi].data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work[pi].data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work[pi].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[i];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}
