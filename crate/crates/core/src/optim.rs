use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Adam moments for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        Self::with_hyperparams(shapes, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams<'a>(
        shapes: impl IntoIterator<Item = &'a [usize]>,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Self {
        let first_moment: Vec<Tensor<T>> = shapes.into_iter().map(Tensor::zeros).collect();
        let second_moment = first_moment.clone();
        Self {
            first_moment,
            second_moment,
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// One bias-corrected Adam update of every parameter tensor.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<T>],
        grads: &[Tensor<T>],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                &[params.len()],
                &[grads.len(), self.first_moment.len()],
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first_moment) {
            p.check_same_shape(g, "adam_step")?;
            p.check_same_shape(m, "adam_step")?;
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let c1 = T::one() - b1;
        let c2 = T::one() - b2;
        let correction1 = T::from_f64_lossy(1.0 - self.beta1.powi(t));
        let correction2 = T::from_f64_lossy(1.0 - self.beta2.powi(t));
        let eps = T::from_f64_lossy(self.eps);
        let lr = T::from_f64_lossy(lr);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + c1 * g[j];
                v[j] = b2 * v[j] + c2 * g[j] * g[j];
                let m_hat = m[j] / correction1;
                let v_hat = v[j] / correction2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
