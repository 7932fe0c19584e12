//! Gradient-descent parameter updates.
//!
//! Adam is the default training method (beta1 0.9, beta2 0.999, eps 1e-8);
//! plain SGD stays available behind a flag for reproducibility runs. Updates
//! are deterministic given identical inputs, and an optional global max-norm
//! clip can be applied to the whole gradient set before the step.

use crate::error::{Error, Result};
use crate::graph::Gradients;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Method {
    pub fn adam() -> Self {
        Method::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl OptimizerState {
    pub fn step_count(&self) -> u64 {
        self.step
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub method: Method,
    pub lr: f64,
    /// Global max-norm gradient clip; off by default.
    pub clip: Option<f64>,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(method: Method, lr: f64) -> Self {
        assert!(lr > 0.0, "learning rate must be positive");
        Optimizer {
            method,
            lr,
            clip: None,
            state: OptimizerState::default(),
        }
    }

    pub fn with_clip(mut self, clip: Option<f64>) -> Self {
        self.clip = clip;
        self
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    /// Apply one update. Moment accumulators are allocated lazily to match
    /// the store's parameter shapes. Parameters without a gradient this
    /// step (not bound in the graph) are skipped entirely, moments
    /// included, so untouched parameters stay bit-stable.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if self.state.first.is_empty() {
            for (_, _, value) in store.iter() {
                self.state.first.push(Tensor::zeros(value.shape()));
                self.state.second.push(Tensor::zeros(value.shape()));
            }
        }
        assert_eq!(
            self.state.first.len(),
            store.len(),
            "optimizer state does not match parameter store"
        );

        for (id, grad) in grads.iter() {
            if !grad.all_finite() {
                return Err(Error::NonFiniteGradient {
                    param: store.name(id).to_string(),
                });
            }
            if grad.shape() != store.get(id).shape() {
                return Err(Error::ShapeMismatch {
                    op: "optimizer_step",
                    left: store.get(id).shape().to_vec(),
                    right: grad.shape().to_vec(),
                });
            }
        }

        let scale = match self.clip {
            Some(max_norm) => {
                let total: f64 = grads
                    .iter()
                    .flat_map(|(_, g)| g.data())
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt();
                if total > max_norm {
                    max_norm / total
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        self.state.step += 1;
        let t = self.state.step;

        for (id, grad) in grads.iter() {
            let idx = id.index();
            match self.method {
                Method::Sgd => {
                    let p = store.get_mut(id).data_mut();
                    for (pv, gv) in p.iter_mut().zip(grad.data()) {
                        *pv -= self.lr * scale * gv;
                    }
                }
                Method::Adam { beta1, beta2, eps } => {
                    let bc1 = 1.0 - beta1.powi(t as i32);
                    let bc2 = 1.0 - beta2.powi(t as i32);
                    let m = self.state.first[idx].data_mut();
                    let v = self.state.second[idx].data_mut();
                    let p = store.get_mut(id).data_mut();
                    for ((pv, gv), (mv, vv)) in
                        p.iter_mut().zip(grad.data()).zip(m.iter_mut().zip(v.iter_mut()))
                    {
                        let gs = scale * gv;
                        *mv = beta1 * *mv + (1.0 - beta1) * gs;
                        *vv = beta2 * *vv + (1.0 - beta2) * gs * gs;
                        let m_hat = *mv / bc1;
                        let v_hat = *vv / bc2;
                        *pv -= self.lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
