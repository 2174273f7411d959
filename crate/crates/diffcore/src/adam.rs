use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam optimiser state with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(lr: T) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update to `params` from their `grad` buffers and zeroes
    /// the gradients. Parameters without a gradient buffer are treated as
    /// having zero gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>]) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Some(grad) = p.grad.take() else { continue };
            for (i, g) in grad.iter().enumerate() {
                m[i] = self.beta1 * m[i] + (T::one() - self.beta1) * *g;
                v[i] = self.beta2 * v[i] + (T::one() - self.beta2) * *g * *g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.data_mut()[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            p.grad = Some(vec![T::zero(); grad.len()]);
        }
    }
}

/// Convenience wrapper matching the optimiser call in the training loop.
pub fn adam_step<T: Scalar>(params: &mut [&mut Tensor<T>], state: &mut AdamState<T>) {
    state.step(params);
}
