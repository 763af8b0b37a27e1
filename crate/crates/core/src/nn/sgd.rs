use super::net::DenseNet;
use super::params::ParamVector;
use crate::error::{Error, Result};

/// SGD with heavy-ball momentum and L2 weight decay folded into the velocity:
///
/// ```text
/// v <- momentum * v + grad + weight_decay * theta
/// theta <- theta - learning_rate * v
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: ParamVector,
}

impl SgdState {
    pub fn new(net: &DenseNet, learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(SgdState {
            learning_rate,
            momentum,
            weight_decay,
            velocity: net.params().zeros_like(),
        })
    }

    pub fn velocity(&self) -> &ParamVector {
        &self.velocity
    }

    pub fn step(&mut self, net: &mut DenseNet, grad: &ParamVector) -> Result<()> {
        net.params().check_shape(grad)?;
        self.velocity.check_shape(grad)?;
        let theta = net.params_mut().values_mut();
        let v = self.velocity.values_mut();
        for ((t, v), g) in theta.iter_mut().zip(v.iter_mut()).zip(grad.values()) {
            *v = self.momentum * *v + g + self.weight_decay * *t;
            *t -= self.learning_rate * *v;
        }
        Ok(())
    }
}
