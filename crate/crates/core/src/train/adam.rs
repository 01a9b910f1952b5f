use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam with bias correction; moments are kept congruent with the
/// parameter set they update.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamSet<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::dim(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (c1, c2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let step = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(self.eps);
        for (k, grad) in grads.iter().enumerate() {
            let p = params.values_mut()[k].data_mut();
            if grad.numel() != p.len() {
                return Err(Error::dim(format!("gradient {k} has {} values for {}", grad.numel(), p.len())));
            }
            let m = self.m.values_mut()[k].data_mut();
            let v = self.v.values_mut()[k].data_mut();
            for i in 0..p.len() {
                let gi = grad.data()[i];
                m[i] = b1 * m[i] + c1 * gi;
                v[i] = b2 * v[i] + c2 * gi * gi;
                p[i] -= step * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
