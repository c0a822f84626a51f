use super::AdamConfig;
use crate::error::Result;
use crate::nn::Tensor;

/// First and second moment estimates of Adam, shaped like the variable.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Tensor,
    v: Tensor,
    steps: u32,
}

impl AdamState {
    pub fn new(like: &Tensor) -> Self {
        let (c, h, w) = like.shape();
        Self {
            m: Tensor::zeros(c, h, w),
            v: Tensor::zeros(c, h, w),
            steps: 0,
        }
    }

    pub fn first_moment(&self) -> &Tensor {
        &self.m
    }

    pub fn second_moment(&self) -> &Tensor {
        &self.v
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u32 {
        self.steps
    }

    /// One bias-corrected Adam update of `x` in place.
    pub fn step(&mut self, x: &mut Tensor, grad: &Tensor, lr: f64, cfg: &AdamConfig) -> Result<()> {
        grad.ensure_same_shape(x, "Adam gradient")?;
        x.ensure_same_shape(&self.m, "Adam variable")?;
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (((xv, &g), m), v) in x
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(self.m.data_mut())
            .zip(self.v.data_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *xv -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        Ok(())
    }
}
