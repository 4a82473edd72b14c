//! Time-weighted EMA of an evaluation-loss trajectory.
//!
//! Only measurements at sync boundaries (`t mod H == 0`) are kept. The first
//! retained point seeds the average; each later point enters with weight
//! `1 - exp(-alpha * dt / H)`, so irregular spacing is handled consistently.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmoothError {
    #[error("no measurement falls on a multiple of {interval}")]
    NoBoundaryPoints { interval: u64 },
    #[error("steps must be strictly increasing (at index {index})")]
    NotIncreasing { index: usize },
    #[error("non-finite loss at index {index}")]
    NonFinite { index: usize },
    #[error("alpha must be positive and interval non-zero")]
    BadParameter,
}

/// `1 - exp(-alpha * dt / interval)`.
pub fn adaptive_coefficient(alpha: f64, dt: u64, interval: u64) -> f64 {
    -(-alpha * dt as f64 / interval as f64).exp_m1()
}

/// Smoothed final loss of `(step, loss)` pairs.
pub fn smoothed_final_loss(points: &[(u64, f64)], alpha: f64, interval: u64) -> Result<f64, SmoothError> {
    if !(alpha > 0.0 && alpha.is_finite()) || interval == 0 {
        return Err(SmoothError::BadParameter);
    }
    for (i, w) in points.windows(2).enumerate() {
        if w[1].0 <= w[0].0 {
            return Err(SmoothError::NotIncreasing { index: i + 1 });
        }
    }
    if let Some(index) = points.iter().position(|p| !p.1.is_finite()) {
        return Err(SmoothError::NonFinite { index });
    }
    let mut kept = points.iter().filter(|(t, _)| t % interval == 0);
    let &(mut prev_t, mut s) = kept
        .next()
        .ok_or(SmoothError::NoBoundaryPoints { interval })?;
    for &(t, loss) in kept {
        let a = adaptive_coefficient(alpha, t - prev_t, interval);
        s = a * loss + (1.0 - a) * s;
        prev_t = t;
    }
    Ok(s)
}
