use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdadeltaConfig {
    pub lr: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        Self { lr: 1.0, rho: 0.95, epsilon: 1e-7 }
    }
}

/// Running averages of squared gradients and squared updates.
#[derive(Clone, Debug)]
pub struct AdadeltaState<T = f32> {
    pub config: AdadeltaConfig,
    pub acc_grad: ModelParams<T>,
    pub acc_update: ModelParams<T>,
}

impl<T: Scalar> AdadeltaState<T> {
    pub fn new(config: AdadeltaConfig, params: &ModelParams<T>) -> Self {
        Self { config, acc_grad: params.zeros_like(), acc_update: params.zeros_like() }
    }

    /// One Adadelta update:
    ///
    /// ```text
    /// acc_g <- rho acc_g + (1 - rho) g^2
    /// delta  = -sqrt((acc_u + eps) / (acc_g + eps)) g
    /// acc_u <- rho acc_u + (1 - rho) delta^2
    /// param <- param + lr delta
    /// ```
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>) {
        let rho = T::lit(self.config.rho);
        let one_minus = T::lit(1.0 - self.config.rho);
        let eps = T::lit(self.config.epsilon);
        let lr = T::lit(self.config.lr);
        let slots =
            params.slices_mut().zip(grads.slices()).zip(self.acc_grad.slices_mut()).zip(self.acc_update.slices_mut());
        for (((p, g), ag), au) in slots {
            for i in 0..p.len() {
                let gi = g[i];
                if gi == T::zero() && ag[i] == T::zero() && au[i] == T::zero() {
                    continue;
                }
                ag[i] = rho * ag[i] + one_minus * gi * gi;
                let delta = -((au[i] + eps) / (ag[i] + eps)).sqrt() * gi;
                au[i] = rho * au[i] + one_minus * delta * delta;
                p[i] = p[i] + lr * delta;
            }
        }
    }
}
