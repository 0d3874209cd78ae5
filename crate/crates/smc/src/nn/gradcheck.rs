//! Central finite-difference verification of tape gradients.
//!
//! Used by unit tests for every op and layer, and by the acceptance suite as
//! the gradient-correctness gate. The builder closure reconstructs the graph
//! from scratch for each probe so the check exercises exactly the same code
//! path as training.

use crate::error::Result;
use crate::nn::tape::{NodeId, Tape};
use crate::nn::tensor::Tensor;

/// Max relative error between analytic and central-difference gradients over
/// every element of every input, with relative error defined as
/// |a − n| / max(1, |a|, |n|).
///
/// `build` receives a fresh tape plus the (possibly perturbed) inputs and
/// returns the node ids it created for those inputs along with a scalar loss.
/// The builder may return fewer ids than inputs; trailing inputs then feed
/// the graph without being differentiated (used when a layer binds them
/// internally through a parameter store).
pub fn max_rel_grad_error<F>(build: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<(Vec<NodeId>, NodeId)>,
{
    let mut tape = Tape::new();
    let (ids, loss) = build(&mut tape, inputs)?;
    assert!(ids.len() <= inputs.len(), "more ids than inputs");
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).map(|t| t.data.clone()))
        .collect::<Result<_>>()?;

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let (_, l) = build(&mut t, probe)?;
        Ok(t.value(l).item())
    };

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (which, grads) in analytic.iter().enumerate() {
        for elem in 0..grads.len() {
            let orig = probe[which].data[elem];
            probe[which].data[elem] = orig + eps;
            let up = eval(&probe)?;
            probe[which].data[elem] = orig - eps;
            let down = eval(&probe)?;
            probe[which].data[elem] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = grads[elem];
            let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
