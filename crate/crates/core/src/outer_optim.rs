//! Pseudogradient formation and the outer Nesterov step.
//!
//! `u' = mu * u + lr * psi`, `theta' = theta - mu * u' - lr * psi`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};
use crate::params::ParamSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OuterError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("pseudogradient needs at least one worker")]
    NoWorkers,
    #[error("invalid outer config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuterConfig {
    pub outer_lr: f64,
    pub outer_momentum: f64,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self::muloco_k1()
    }
}

impl OuterConfig {
    pub fn new(outer_lr: f64, outer_momentum: f64) -> Self {
        Self {
            outer_lr,
            outer_momentum,
        }
    }

    /// Tuned single-worker defaults with a Muon inner optimizer.
    pub fn muloco_k1() -> Self {
        Self::new(0.7, 0.6)
    }

    /// Tuned single-worker defaults with an AdamW inner optimizer.
    pub fn diloco_k1() -> Self {
        Self::new(0.6, 0.8)
    }

    /// `mu = 0, lr = 1`: the outer step just adopts the averaged endpoint.
    pub fn averaging() -> Self {
        Self::new(1.0, 0.0)
    }

    pub fn is_plain_averaging(&self) -> bool {
        self.outer_lr == 1.0 && self.outer_momentum == 0.0
    }

    pub fn validate(&self) -> Result<(), OuterError> {
        if !self.outer_lr.is_finite() || self.outer_lr <= 0.0 {
            return Err(OuterError::InvalidConfig("outer_lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.outer_momentum) {
            return Err(OuterError::InvalidConfig(
                "outer_momentum must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Outer Nesterov momentum, one buffer per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterState {
    pub u: ParamSet,
}

impl OuterState {
    pub fn zeros_like(theta: &ParamSet) -> Self {
        Self {
            u: theta.zeros_like(),
        }
    }
}

/// Mean of matrices, summed in slice order and divided by the count.
pub fn mean_matrices(items: &[&Matrix]) -> Result<Matrix, OuterError> {
    let first = items.first().ok_or(OuterError::NoWorkers)?;
    let mut acc = (*first).clone();
    for m in &items[1..] {
        acc.add_assign(m)?;
    }
    let k = items.len() as f64;
    if items.len() > 1 {
        for x in acc.data_mut() {
            *x /= k;
        }
    }
    Ok(acc)
}

/// Per-parameter mean of delta sets, reduced in ascending worker order.
pub fn average_deltas(deltas: &[ParamSet]) -> Result<ParamSet, OuterError> {
    let first = deltas.first().ok_or(OuterError::NoWorkers)?;
    for d in &deltas[1..] {
        first.check_same_layout(d)?;
    }
    let mut out = ParamSet::new();
    for (i, name) in first.names().iter().enumerate() {
        let items: Vec<&Matrix> = deltas.iter().map(|d| d.get(i)).collect();
        out.push(name.clone(), mean_matrices(&items)?);
    }
    Ok(out)
}

/// `psi = (1/K) * sum_k (before - after_k)`.
pub fn pseudogradient(before: &ParamSet, workers_after: &[ParamSet]) -> Result<ParamSet, OuterError> {
    if workers_after.is_empty() {
        return Err(OuterError::NoWorkers);
    }
    let deltas = workers_after
        .iter()
        .map(|w| before.sub(w))
        .collect::<Result<Vec<_>, _>>()?;
    average_deltas(&deltas)
}

/// Outer step on a single parameter; returns `(theta', u')`.
pub fn outer_step_matrix(
    theta: &Matrix,
    psi: &Matrix,
    u: &Matrix,
    cfg: &OuterConfig,
) -> Result<(Matrix, Matrix), OuterError> {
    theta.check_same_shape(psi)?;
    theta.check_same_shape(u)?;
    let (mu, lr) = (cfg.outer_momentum, cfg.outer_lr);
    let mut u_next = u.clone();
    let mut out = theta.clone();
    for ((ui, ti), &pi) in u_next
        .data_mut()
        .iter_mut()
        .zip(out.data_mut())
        .zip(psi.data())
    {
        *ui = mu * *ui + lr * pi;
        *ti = *ti - mu * *ui - lr * pi;
    }
    Ok((out, u_next))
}

pub fn outer_step(
    theta: &ParamSet,
    psi: &ParamSet,
    state: &OuterState,
    cfg: &OuterConfig,
) -> Result<(ParamSet, OuterState), OuterError> {
    theta.check_same_layout(psi)?;
    theta.check_same_layout(&state.u)?;
    let mut next = ParamSet::new();
    let mut u = ParamSet::new();
    for i in 0..theta.len() {
        let (t, ui) = outer_step_matrix(theta.get(i), psi.get(i), state.u.get(i), cfg)?;
        next.push(theta.name(i), t);
        u.push(theta.name(i), ui);
    }
    Ok((next, OuterState { u }))
}
