//! Central finite-difference gradient checks.

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Relative error used throughout: `|analytic - numeric| / max(1, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Compares the analytic gradient of a scalar graph output against central
/// differences over every coordinate of every input that requires grad.
/// Returns the maximum relative error.
pub fn grad_check(graph: &mut Graph, output: NodeId, point: &[Tensor], eps: f64) -> Result<f64> {
    if graph.shape(output).iter().product::<usize>() != 1 {
        return Err(Error::shape("grad_check needs a scalar output"));
    }
    graph.forward(point)?;
    let seed = Tensor::filled(graph.shape(output), 1.0);
    let grads = graph.backward_from(output, &seed)?;

    let mut work: Vec<Tensor> = point.to_vec();
    let mut worst = 0.0f64;
    for (slot, analytic) in grads.into_slots().into_iter().enumerate() {
        let Some(analytic) = analytic else { continue };
        for i in 0..analytic.len() {
            let orig = work[slot].data()[i];
            work[slot].data_mut()[i] = orig + eps;
            let plus = graph.eval(&work, output)?.item();
            work[slot].data_mut()[i] = orig - eps;
            let minus = graph.eval(&work, output)?.item();
            work[slot].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}

/// Same check for an arbitrary scalar function with a separately supplied
/// analytic gradient (one tensor per point tensor).
pub fn grad_check_fn<F>(f: F, analytic: &[Tensor], point: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    if analytic.len() != point.len() {
        return Err(Error::shape("one analytic gradient per point tensor"));
    }
    let mut work = point.to_vec();
    let mut worst = 0.0f64;
    for slot in 0..work.len() {
        if analytic[slot].shape() != work[slot].shape() {
            return Err(Error::shape("analytic gradient shape"));
        }
        for i in 0..work[slot].len() {
            let orig = work[slot].data()[i];
            work[slot].data_mut()[i] = orig + eps;
            let plus = f(&work)?;
            work[slot].data_mut()[i] = orig - eps;
            let minus = f(&work)?;
            work[slot].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[slot].data()[i], numeric));
        }
    }
    Ok(worst)
}
