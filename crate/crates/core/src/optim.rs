//! SGD with classical momentum and linear annealing schedules.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Linear interpolation from `start` to `end` over `total_steps`, held at
/// `end` afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub start: f64,
    pub end: f64,
    pub total_steps: u64,
}

impl Schedule {
    pub fn new(start: f64, end: f64, total_steps: u64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::domain("Schedule::new", "total steps must be positive"));
        }
        if !start.is_finite() || !end.is_finite() {
            return Err(Error::domain("Schedule::new", format!("endpoints must be finite: {start} → {end}")));
        }
        Ok(Schedule { start, end, total_steps })
    }

    pub fn constant(value: f64) -> Self {
        Schedule {
            start: value,
            end: value,
            total_steps: 1,
        }
    }

    pub fn at(&self, step: u64) -> f64 {
        linear_decay(self, step)
    }
}

pub fn linear_decay(schedule: &Schedule, step: u64) -> f64 {
    if step >= schedule.total_steps {
        return schedule.end;
    }
    let frac = step as f64 / schedule.total_steps as f64;
    schedule.start + (schedule.end - schedule.start) * frac
}

/// Velocity buffers for heavy-ball momentum: `v ← μv − lr·g`, `θ ← θ + v`.
#[derive(Debug, Clone)]
pub struct SgdState {
    momentum: f64,
    velocities: Vec<Tensor>,
    steps: u64,
}

impl SgdState {
    /// Zero velocities shaped like `params`.
    pub fn new<'a>(momentum: f64, params: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::domain("SgdState::new", format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(SgdState {
            momentum,
            velocities: params.into_iter().map(Tensor::zeros_like).collect(),
            steps: 0,
        })
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn velocities(&self) -> &[Tensor] {
        &self.velocities
    }
}

pub fn sgd_momentum_step(params: &mut [&mut Tensor], grads: &[&Tensor], state: &mut SgdState, lr: f64) -> Result<()> {
    if lr.is_nan() || lr < 0.0 {
        return Err(Error::domain("sgd_momentum_step", format!("learning rate must be >= 0, got {lr}")));
    }
    if params.len() != state.velocities.len() || grads.len() != params.len() {
        return Err(Error::domain(
            "sgd_momentum_step",
            format!(
                "{} parameters, {} gradients, {} velocity buffers",
                params.len(),
                grads.len(),
                state.velocities.len()
            ),
        ));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&state.velocities) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::shape("sgd_momentum_step", p.shape(), g.shape()));
        }
    }
    let mu = state.momentum;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocities) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = mu * *vv - lr * gv;
            *pv += *vv;
        }
    }
    state.steps += 1;
    Ok(())
}
