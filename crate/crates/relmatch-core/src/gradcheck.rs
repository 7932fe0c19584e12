//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls `Graph::forward` on perturbed leaf
//! values, so it stays independent of the backward implementation it is
//! checking. Used both by the test suites and by the `gradcheck` CLI
//! command.

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Default central-difference step (64-bit builds).
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error between an analytic and a numeric derivative. Differences
/// below 1e-9 count as zero so that near-zero gradients do not produce
/// spurious large ratios.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff < 1e-9 {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Central finite differences of `loss` w.r.t. every element of `leaf`.
pub fn numeric_grad(g: &mut Graph, leaf: NodeId, loss: NodeId, step: f64) -> Result<Tensor> {
    let n = g.value(leaf).numel();
    let shape = g.value(leaf).shape().to_vec();
    let mut out = vec![0.0; n];
    for (e, slot) in out.iter_mut().enumerate() {
        g.nudge_leaf(leaf, e, step)?;
        g.forward(loss)?;
        let plus = g.item(loss);
        g.nudge_leaf(leaf, e, -2.0 * step)?;
        g.forward(loss)?;
        let minus = g.item(loss);
        g.nudge_leaf(leaf, e, step)?;
        *slot = (plus - minus) / (2.0 * step);
    }
    g.forward(loss)?;
    Ok(Tensor::new(shape, out).expect("shape preserved"))
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub max_rel_err: f64,
    /// Leaf label and flat element index of the worst disagreement.
    pub worst: Option<(String, usize)>,
    pub elements_checked: usize,
}

impl CheckOutcome {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compare analytic gradients (already present on the graph from a
/// `backward` call) against central differences for the given leaves.
pub fn compare_leaves(
    g: &mut Graph,
    loss: NodeId,
    leaves: &[(String, NodeId)],
    step: f64,
) -> Result<CheckOutcome> {
    let mut outcome = CheckOutcome {
        max_rel_err: 0.0,
        worst: None,
        elements_checked: 0,
    };
    for (label, leaf) in leaves {
        let analytic = g.grad(*leaf).clone();
        let numeric = numeric_grad(g, *leaf, loss, step)?;
        for (e, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
            let err = rel_err(a, n);
            outcome.elements_checked += 1;
            if err > outcome.max_rel_err {
                outcome.max_rel_err = err;
                outcome.worst = Some((label.clone(), e));
            }
        }
    }
    Ok(outcome)
}

/// Run backward at `loss`, then check every bound parameter of the graph.
pub fn check_params(
    g: &mut Graph,
    loss: NodeId,
    store: &crate::params::ParamStore,
    step: f64,
) -> Result<CheckOutcome> {
    g.forward(loss)?;
    g.backward(loss)?;
    let leaves: Vec<(String, NodeId)> = g
        .bound_params()
        .iter()
        .map(|&(id, node)| (store.name(id).to_string(), node))
        .collect();
    compare_leaves(g, loss, &leaves, step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catches_a_correct_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(&[0.3, -0.8, 0.5]));
        let t = g.tanh(x).unwrap();
        let loss = g.sum(t).unwrap();
        g.backward(loss).unwrap();
        let out = compare_leaves(&mut g, loss, &[("x".into(), x)], DEFAULT_STEP).unwrap();
        assert!(out.passes(1e-7), "rel err {}", out.max_rel_err);
    }

    #[test]
    fn catches_a_wrong_gradient() {
        let mut g = Graph::new();
        let x = g.scalar(0.7);
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        // Corrupt the comparison by checking against a different loss path.
        let numeric = numeric_grad(&mut g, x, y, DEFAULT_STEP).unwrap();
        let wrong = g.grad(x).data()[0] + 0.5;
        assert!(rel_err(wrong, numeric.data()[0]) > 1e-2);
    }
}
