use serde::{Deserialize, Serialize};

use super::{ModelGrads, ModelParams};
use crate::error::{FddmError, Result};

/// SGD with momentum and decoupled-from-bias weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: ModelGrads,
    /// Number of steps taken so far.
    pub step: usize,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(FddmError::config(
                "lr",
                format!("must be non-negative, got {lr}"),
            ));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(FddmError::config(
                "momentum",
                format!("must lie in [0, 1), got {momentum}"),
            ));
        }
        if !(weight_decay >= 0.0) || !weight_decay.is_finite() {
            return Err(FddmError::config(
                "weight_decay",
                format!("must be non-negative, got {weight_decay}"),
            ));
        }
        Ok(OptimizerState {
            lr,
            momentum,
            weight_decay,
            velocity: params.zero_grads(),
            step: 0,
        })
    }
}

/// One update: `v ← μ·v + g + λ·w` (λ applied to weights only), then
/// `w ← w − lr·v`.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &ModelGrads,
    state: &mut OptimizerState,
) -> Result<()> {
    let flat_grads = grads.flatten();
    if let Some(i) = flat_grads.iter().position(|g| !g.is_finite()) {
        return Err(FddmError::Training {
            step: state.step,
            message: format!("gradient entry {i} is {}", flat_grads[i]),
        });
    }
    if flat_grads.len() != params.num_params() {
        return Err(FddmError::Shape(format!(
            "{} gradients for {} parameters",
            flat_grads.len(),
            params.num_params()
        )));
    }

    let (mu, wd, lr) = (state.momentum, state.weight_decay, state.lr);
    let current = params.flatten();
    let mut g_it = flat_grads.iter();
    let mut p_it = current.iter();
    let mut new_velocity = Vec::with_capacity(current.len());
    state.velocity.for_each_mut(|v, is_weight| {
        let g = *g_it.next().expect("length checked");
        let p = *p_it.next().expect("length checked");
        let decay = if is_weight { wd * p } else { 0.0 };
        *v = mu * *v + g + decay;
        new_velocity.push(*v);
    });
    let mut v_it = new_velocity.into_iter();
    params.for_each_mut(|p, _| *p -= lr * v_it.next().expect("length checked"));
    state.step += 1;
    Ok(())
}
