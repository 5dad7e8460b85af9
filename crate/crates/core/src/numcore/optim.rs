use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::params::ParamStore;
use crate::numcore::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Decays linearly from the base rate to zero at `total_steps`.
    LinearDecay { total_steps: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    base_lr: f64,
    schedule: LrSchedule,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, base_lr: f64, schedule: LrSchedule, params: &ParamStore) -> Result<Self> {
        if !(base_lr >= 0.0) || !base_lr.is_finite() {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {base_lr}")));
        }
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Ok(Self {
            kind,
            base_lr,
            schedule,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        })
    }

    pub fn sgd(lr: f64, params: &ParamStore) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr, LrSchedule::Constant, params)
    }

    pub fn adam(lr: f64, params: &ParamStore) -> Result<Self> {
        Self::new(OptimizerKind::adam(), lr, LrSchedule::Constant, params)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn schedule(&self) -> LrSchedule {
        self.schedule
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Learning rate applied on the next step.
    pub fn current_lr(&self) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.base_lr,
            LrSchedule::LinearDecay { total_steps } => {
                if total_steps == 0 {
                    return 0.0;
                }
                let frac = 1.0 - self.step as f64 / total_steps as f64;
                self.base_lr * frac.max(0.0)
            }
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape(
                "optimizer_step",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for (i, (g, p)) in grads.iter().zip(params.tensors()).enumerate() {
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    "optimizer_step",
                    format!("gradient {i}: {:?} vs {:?}", g.shape(), p.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter {i}")));
            }
        }
        let lr = self.current_lr();
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors_mut().iter_mut().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= lr * gv;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (i, (p, g)) in params.tensors_mut().iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.first_moment[i], &mut self.second_moment[i]);
                    for (k, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * gv;
                        v[k] = beta2 * v[k] + (1.0 - beta2) * gv * gv;
                        let mhat = m[k] / c1;
                        let vhat = v[k] / c2;
                        *pv -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }

    /// Moment buffers, for checkpointing.
    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first_moment, &self.second_moment)
    }

    /// Restores a checkpointed state; buffer sizes must match the parameters.
    pub fn restore(&mut self, step: u64, first: Vec<Vec<f64>>, second: Vec<Vec<f64>>) -> Result<()> {
        let ok = |b: &Vec<Vec<f64>>| {
            b.len() == self.first_moment.len()
                && b.iter().zip(&self.first_moment).all(|(x, y)| x.len() == y.len())
        };
        if !ok(&first) || !ok(&second) {
            return Err(Error::shape("optimizer_restore", "moment buffers do not match parameters"));
        }
        self.step = step;
        self.first_moment = first;
        self.second_moment = second;
        Ok(())
    }
}
