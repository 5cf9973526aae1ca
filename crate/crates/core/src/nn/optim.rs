use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::NetworkParams;

/// `lr0 * 0.5 * (1 + cos(pi * step / total_steps))`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::parameter("total_steps must be positive"));
    }
    if step > total_steps {
        return Err(Error::parameter(format!(
            "step {step} beyond total_steps {total_steps}"
        )));
    }
    Ok(lr0 * 0.5 * (1.0 + (PI * step as f64 / total_steps as f64).cos()))
}

/// Hyperparameters of SGD with Nesterov momentum and L2 weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub velocity: NetworkParams,
    pub step_count: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub total_steps: usize,
}

impl OptimizerState {
    pub fn new(params: &NetworkParams, config: SgdConfig, total_steps: usize) -> Result<Self> {
        if !(config.lr0 > 0.0) {
            return Err(Error::parameter(format!("lr0 must be positive, got {}", config.lr0)));
        }
        if !(0.0..1.0).contains(&config.momentum) {
            return Err(Error::parameter(format!(
                "momentum must be in [0, 1), got {}",
                config.momentum
            )));
        }
        if !(config.weight_decay >= 0.0) {
            return Err(Error::parameter("weight decay must be nonnegative"));
        }
        if total_steps == 0 {
            return Err(Error::parameter("total_steps must be positive"));
        }
        Ok(OptimizerState {
            velocity: params.zeros_like(),
            step_count: 0,
            lr0: config.lr0,
            momentum: config.momentum,
            weight_decay: config.weight_decay,
            total_steps,
        })
    }

    pub fn current_lr(&self) -> Result<f64> {
        cosine_lr(self.step_count.min(self.total_steps), self.total_steps, self.lr0)
    }
}

/// One Nesterov step, applied in place:
///
/// ```text
/// g' = g + wd * p
/// v  = mu * v + g'
/// p -= lr * (g' + mu * v)
/// ```
pub fn sgd_step(params: &mut NetworkParams, grads: &NetworkParams, state: &mut OptimizerState) -> Result<()> {
    params.check_same_shape(grads)?;
    params.check_same_shape(&state.velocity)?;
    let lr = state.current_lr()?;
    let (mu, wd) = (state.momentum, state.weight_decay);
    for ((p, &g), v) in params.values_mut().zip(grads.values()).zip(state.velocity.values_mut()) {
        let g = g + wd * *p;
        *v = mu * *v + g;
        *p -= lr * (g + mu * *v);
    }
    state.step_count += 1;
    Ok(())
}
