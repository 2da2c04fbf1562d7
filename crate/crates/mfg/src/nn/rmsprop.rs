//! RMSProp with a flat mean-square accumulator.
//!
//! The optimizer state is one flat vector covering every parameter of the
//! network it was sized for; owners walk their parameter blocks in a fixed
//! order and update each block slice. The same state type serves gradient
//! descent and the adversarial ascent, which differ only in the update sign.

use crate::error::{MfgError, Result};
use crate::scalar::Real;

/// Mean-square gradient accumulator plus the two RMSProp constants.
#[derive(Debug, Clone)]
pub struct RmsProp<R: Real> {
    mean_square: Vec<R>,
    smoothing: R,
    epsilon: R,
}

impl<R: Real> RmsProp<R> {
    pub fn new(param_count: usize, smoothing: R, epsilon: R) -> Result<Self> {
        if smoothing <= R::zero() || smoothing >= R::one() {
            return Err(MfgError::Config(format!(
                "rmsprop smoothing must lie in (0, 1), got {smoothing}"
            )));
        }
        if epsilon <= R::zero() {
            return Err(MfgError::Config(format!(
                "rmsprop epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(RmsProp {
            mean_square: vec![R::zero(); param_count],
            smoothing,
            epsilon,
        })
    }

    pub fn param_count(&self) -> usize {
        self.mean_square.len()
    }

    pub fn mean_square(&self) -> &[R] {
        &self.mean_square
    }

    pub(crate) fn check_lr(&self, lr: R) -> Result<()> {
        if lr <= R::zero() {
            return Err(MfgError::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        Ok(())
    }

    /// Updates one parameter block located at `offset` in the flat state.
    ///
    /// `mean_square <- s * mean_square + (1 - s) * g^2`, then parameters move
    /// by `lr * g / (sqrt(mean_square) + epsilon)`, downhill by default and
    /// uphill when `ascend` is set.
    pub(crate) fn step_slice(
        &mut self,
        offset: usize,
        params: &mut [R],
        grads: &[R],
        lr: R,
        ascend: bool,
    ) {
        debug_assert_eq!(params.len(), grads.len());
        let one = R::one();
        let state = &mut self.mean_square[offset..offset + params.len()];
        for ((p, &g), ms) in params.iter_mut().zip(grads).zip(state) {
            *ms = self.smoothing * *ms + (one - self.smoothing) * g * g;
            let delta = lr * g / (ms.sqrt() + self.epsilon);
            *p = if ascend { *p + delta } else { *p - delta };
        }
    }
}
