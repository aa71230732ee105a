use super::{ParamStore, Real, TResult, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments and step counter for one [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape().to_vec()))
                .collect()
        };
        Self {
            first_moment: zeros(),
            second_moment: zeros(),
            step_count: 0,
            config,
        }
    }

    /// One bias-corrected Adam update. Weight decay is decoupled: parameters
    /// are first shrunk by `1 − lr·weight_decay`, then moved along the
    /// moment estimate.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &[Tensor<T>],
        lr: f64,
        weight_decay: f64,
    ) -> TResult<()> {
        if grads.len() != params.len() || self.first_moment.len() != params.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                left: vec![params.len()],
                right: vec![grads.len()],
            });
        }
        for (p, g) in params.tensors().iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }

        self.step_count += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        let step = T::of(lr / bc1);
        let inv_sqrt_bc2 = T::of(1.0 / bc2.sqrt());
        let eps = T::of(epsilon);
        let shrink = T::of(1.0 - lr * weight_decay);

        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for (((w, &gv), mv), vv) in p.data_mut().iter_mut().zip(grads[i].data()).zip(m).zip(v) {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                if weight_decay != 0.0 {
                    *w *= shrink;
                }
                *w -= step * *mv / ((*vv).sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}

/// Learning rate after `epoch` epochs of per-epoch exponential decay.
pub fn lr_decay(lr: f64, epoch: usize, rate: f64) -> f64 {
    lr * rate.powi(epoch as i32)
}
