//! Plain stochastic gradient descent.

use crate::error::{Error, Result};
use crate::tensor::Parameter;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub epoch: usize,
}

impl OptimizerState {
    pub fn new(learning_rate: f64) -> Result<OptimizerState> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive and finite, got {learning_rate}"
            )));
        }
        Ok(OptimizerState {
            learning_rate,
            epoch: 0,
        })
    }
}

/// Applies `value <- value - lr * grad` to every parameter, then zeroes all
/// gradients. If any gradient is non-finite the whole step is rejected and
/// no parameter is touched.
pub fn sgd_step(params: &mut [&mut Parameter], state: &OptimizerState) -> Result<()> {
    for p in params.iter() {
        if !p.grad().all_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of parameter {} is not finite; step rejected",
                p.name
            )));
        }
    }
    let lr = state.learning_rate;
    for p in params.iter_mut() {
        // Split borrow: copy grad values while updating.
        let n = p.grad().len();
        for i in 0..n {
            let g = p.grad().data()[i];
            p.value_mut().data_mut()[i] -= lr * g;
        }
        p.zero_grad();
    }
    Ok(())
}
