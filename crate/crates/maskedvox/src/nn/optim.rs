//! AdamW with decoupled weight decay, plus the cosine-annealed learning
//! rate schedule.

use thiserror::Error;

use crate::nn::tensor::Tensor;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("invalid optimizer hyperparameter: {0}")]
    BadHyper(String),
    #[error("gradient count {grads} differs from parameter count {params}")]
    GradMismatch { grads: usize, params: usize },
    #[error("schedule step {step} exceeds total {total}")]
    StepOutOfRange { step: usize, total: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    fn validate(&self) -> Result<(), OptimError> {
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(OptimError::BadHyper(format!("{name}={v} not in [0,1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(OptimError::BadHyper(format!("eps={} must be > 0", self.eps)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(OptimError::BadHyper(format!(
                "weight_decay={} must be >= 0",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Optimizer state: first/second moment per parameter tensor plus the
/// step counter used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: usize,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, params: &[Tensor]) -> Result<Self, OptimError> {
        cfg.validate()?;
        Ok(AdamW {
            cfg,
            m: params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect(),
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// One update with the given learning rate. Weight decay is decoupled:
    /// it scales the parameter directly rather than entering the moments.
    pub fn step(
        &mut self,
        params: &mut [Tensor],
        grads: &[Tensor],
        lr: f64,
    ) -> Result<(), OptimError> {
        if grads.len() != params.len() {
            return Err(OptimError::GradMismatch {
                grads: grads.len(),
                params: params.len(),
            });
        }
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(OptimError::BadHyper(format!("lr={lr}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.cfg.beta1.powi(t);
        let c2 = 1.0 - self.cfg.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            debug_assert_eq!(p.shape(), g.shape());
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.cfg.beta1 * m.data[i] + (1.0 - self.cfg.beta1) * gi;
                v.data[i] = self.cfg.beta2 * v.data[i] + (1.0 - self.cfg.beta2) * gi * gi;
                let m_hat = m.data[i] / c1;
                let v_hat = v.data[i] / c2;
                p.data[i] -= lr * (m_hat / (v_hat.sqrt() + self.cfg.eps)
                    + self.cfg.weight_decay * p.data[i]);
            }
        }
        Ok(())
    }
}

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at step `total`.
pub fn cosine_lr(step: usize, total: usize, lr_max: f64, lr_min: f64) -> Result<f64, OptimError> {
    if step > total {
        return Err(OptimError::StepOutOfRange { step, total });
    }
    if total == 0 {
        return Ok(lr_max);
    }
    if !(lr_max >= lr_min && lr_min >= 0.0) {
        return Err(OptimError::BadHyper(format!(
            "lr_max={lr_max} must be >= lr_min={lr_min} >= 0"
        )));
    }
    let phase = std::f64::consts::PI * step as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos()))
}
