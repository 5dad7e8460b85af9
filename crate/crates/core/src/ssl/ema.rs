//! Exponential-moving-average teacher.
//!
//! The update puts `γ` on the student: `θ_T ← γ·θ_S + (1−γ)·θ_T`. With this
//! convention `γ = 1` tracks the student exactly and `γ = 0` freezes the
//! teacher after the first step.

use crate::error::{Error, Result};
use crate::numcore::ParamStore;

#[derive(Debug, Clone)]
pub struct EmaTeacher {
    pub params: ParamStore,
    pub gamma: f64,
    pub top_k: usize,
}

impl EmaTeacher {
    /// Teacher initialized as a copy of the student.
    pub fn new(student: &ParamStore, gamma: f64, top_k: usize, num_blocks: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::invalid(format!("EMA decay must be in [0, 1], got {gamma}")));
        }
        if top_k == 0 || top_k > num_blocks {
            return Err(Error::invalid(format!("top-K depth {top_k} must be in 1..={num_blocks}")));
        }
        Ok(Self {
            params: student.clone(),
            gamma,
            top_k,
        })
    }

    pub fn update(&mut self, student: &ParamStore, step: usize) -> Result<()> {
        ema_update(&mut self.params, student, self.gamma, step)
    }
}

/// Step 0 copies the student; later steps blend with weight `gamma` on the
/// student.
pub fn ema_update(teacher: &mut ParamStore, student: &ParamStore, gamma: f64, step: usize) -> Result<()> {
    teacher.check_compatible(student)?;
    if step == 0 {
        return teacher.copy_from(student);
    }
    for (t, s) in teacher.tensors_mut().iter_mut().zip(student.tensors()) {
        for (tv, sv) in t.data_mut().iter_mut().zip(s.data()) {
            *tv = gamma * sv + (1.0 - gamma) * *tv;
        }
    }
    Ok(())
}
