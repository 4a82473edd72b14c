//! Per-worker inner optimizers: AdamW and Muon, both with decoupled
//! weight decay.
//!
//! Steps are pure functions `(theta, grad, state, cfg) -> (theta', state')`.
//! Weight decay is applied as `theta * (1 - lr * wd)` before the update term
//! is subtracted, which is the same arithmetic as the textbook
//! `theta - lr * update - lr * wd * theta` but keeps the decay a separable
//! multiplicative factor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{newton_schulz, LinalgError, Matrix, NS_DEFAULT_ITERATIONS};
use crate::params::ParamDecl;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Adamw,
    Muon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub algorithm: Algorithm,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_ns_iterations")]
    pub ns_iterations: usize,
    #[serde(default = "default_true")]
    pub lr_shape_rescale: bool,
    /// Learning rate for AdamW-governed (non-hidden) parameters when the
    /// algorithm is Muon. Falls back to `lr` when unset.
    #[serde(default)]
    pub fallback_lr: Option<f64>,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.99
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_ns_iterations() -> usize {
    NS_DEFAULT_ITERATIONS
}
fn default_true() -> bool {
    true
}

impl OptimConfig {
    pub fn adamw(lr: f64) -> Self {
        Self {
            algorithm: Algorithm::Adamw,
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            weight_decay: 0.0,
            ns_iterations: NS_DEFAULT_ITERATIONS,
            lr_shape_rescale: true,
            fallback_lr: None,
        }
    }

    pub fn muon(lr: f64) -> Self {
        Self {
            algorithm: Algorithm::Muon,
            ..Self::adamw(lr)
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }

    pub fn with_fallback_lr(mut self, lr: f64) -> Self {
        self.fallback_lr = Some(lr);
        self
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let finite = [self.lr, self.beta1, self.beta2, self.epsilon, self.weight_decay]
            .iter()
            .chain(self.fallback_lr.iter())
            .all(|x| x.is_finite());
        if !finite {
            return Err(OptimError::InvalidConfig("non-finite field".into()));
        }
        if self.lr < 0.0 || self.fallback_lr.is_some_and(|l| l < 0.0) {
            return Err(OptimError::InvalidConfig("learning rate must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(OptimError::InvalidConfig("betas must lie in [0, 1)".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(OptimError::InvalidConfig("epsilon must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(OptimError::InvalidConfig("weight decay must be >= 0".into()));
        }
        if self.algorithm == Algorithm::Muon && self.ns_iterations == 0 {
            return Err(OptimError::InvalidConfig("ns_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamwState {
    pub m: Matrix,
    pub v: Matrix,
    pub step_count: u64,
}

impl AdamwState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            step_count: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuonState {
    pub m: Matrix,
}

impl MuonState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
        }
    }
}

/// Bias-corrected AdamW step using `cfg.lr`.
pub fn adamw_step(
    theta: &Matrix,
    grad: &Matrix,
    state: &AdamwState,
    cfg: &OptimConfig,
) -> Result<(Matrix, AdamwState), OptimError> {
    theta.check_same_shape(grad)?;
    theta.check_same_shape(&state.m)?;
    theta.check_same_shape(&state.v)?;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let t = state.step_count + 1;
    let bc1 = 1.0 - b1.powf(t as f64);
    let bc2 = 1.0 - b2.powf(t as f64);
    let lr = cfg.lr;
    let decay = 1.0 - lr * cfg.weight_decay;

    let mut m = state.m.clone();
    let mut v = state.v.clone();
    let mut out = theta.clone();
    let g = grad.data();
    for (i, (mi, vi)) in m.data_mut().iter_mut().zip(v.data_mut()).enumerate() {
        *mi = b1 * *mi + (1.0 - b1) * g[i];
        *vi = b2 * *vi + (1.0 - b2) * g[i] * g[i];
    }
    for ((o, &mi), &vi) in out.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
        let update = (mi / bc1) / ((vi / bc2).sqrt() + cfg.epsilon);
        *o = *o * decay - lr * update;
    }
    Ok((
        out,
        AdamwState {
            m,
            v,
            step_count: t,
        },
    ))
}

/// `lr * sqrt(cols / rows)` when shape rescaling is on, else `lr`.
pub fn muon_effective_lr(cfg: &OptimConfig, rows: usize, cols: usize) -> f64 {
    if cfg.lr_shape_rescale {
        cfg.lr * (cols as f64 / rows as f64).sqrt()
    } else {
        cfg.lr
    }
}

/// Muon step: `m' = beta1 * m + g`, `O = NS(m')`,
/// `theta' = theta * (1 - lr_eff * wd) - lr_eff * O`.
pub fn muon_step(
    theta: &Matrix,
    grad: &Matrix,
    state: &MuonState,
    cfg: &OptimConfig,
) -> Result<(Matrix, MuonState), OptimError> {
    theta.check_same_shape(grad)?;
    theta.check_same_shape(&state.m)?;
    let mut m = state.m.clone();
    for (mi, &gi) in m.data_mut().iter_mut().zip(grad.data()) {
        *mi = cfg.beta1 * *mi + gi;
    }
    let o = newton_schulz(&m, cfg.ns_iterations)?;
    let lr = muon_effective_lr(cfg, theta.rows(), theta.cols());
    let decay = 1.0 - lr * cfg.weight_decay;
    let mut out = theta.clone();
    for (t, &oi) in out.data_mut().iter_mut().zip(o.data()) {
        *t = *t * decay - lr * oi;
    }
    Ok((out, MuonState { m }))
}

/// The applied step `theta_before - theta_after`, weight decay included.
pub fn step_record(before: &Matrix, after: &Matrix) -> Result<Matrix, OptimError> {
    Ok(before.sub(after)?)
}

/// Optimizer state of a single parameter, tagged by which rule governs it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamOptState {
    Adamw(AdamwState),
    Muon(MuonState),
}

impl ParamOptState {
    /// Muon for hidden parameters in Muon mode, AdamW otherwise.
    pub fn for_param(decl: &ParamDecl, cfg: &OptimConfig) -> Self {
        match cfg.algorithm {
            Algorithm::Muon if decl.hidden => Self::Muon(MuonState::new(decl.rows, decl.cols)),
            _ => Self::Adamw(AdamwState::new(decl.rows, decl.cols)),
        }
    }
}

/// Result of stepping one parameter.
#[derive(Debug, Clone)]
pub struct ParamStep {
    pub theta: Matrix,
    pub state: ParamOptState,
    /// Learning rate actually multiplying the update direction.
    pub effective_lr: f64,
}

/// Steps one parameter with whichever rule its state carries. `lr_scale`
/// multiplies both the main and the fallback learning rate (schedules).
pub fn param_step(
    theta: &Matrix,
    grad: &Matrix,
    state: &ParamOptState,
    cfg: &OptimConfig,
    lr_scale: f64,
) -> Result<ParamStep, OptimError> {
    match state {
        ParamOptState::Adamw(s) => {
            let base = match cfg.algorithm {
                Algorithm::Muon => cfg.fallback_lr.unwrap_or(cfg.lr),
                Algorithm::Adamw => cfg.lr,
            };
            let local = cfg.with_lr(base * lr_scale);
            let (theta, s) = adamw_step(theta, grad, s, &local)?;
            Ok(ParamStep {
                theta,
                state: ParamOptState::Adamw(s),
                effective_lr: local.lr,
            })
        }
        ParamOptState::Muon(s) => {
            let local = cfg.with_lr(cfg.lr * lr_scale);
            let (theta_next, s) = muon_step(theta, grad, s, &local)?;
            Ok(ParamStep {
                theta: theta_next,
                state: ParamOptState::Muon(s),
                effective_lr: muon_effective_lr(&local, theta.rows(), theta.cols()),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius_norm, svd};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn adamw_first_step_hand_evaluated() {
        let cfg = OptimConfig::adamw(0.1);
        let theta = Matrix::zeros(1, 1);
        let g = Matrix::filled(1, 1, 1.0);
        let (t1, s1) = adamw_step(&theta, &g, &AdamwState::new(1, 1), &cfg).unwrap();
        // m = 0.1, v = 0.01; bias corrected both to 1.
        let mhat: f64 = 0.1 / (1.0 - 0.9);
        let vhat: f64 = 0.01 / (1.0 - 0.99);
        let expected = -0.1 * mhat / (vhat.sqrt() + 1e-8);
        assert!((t1.get(0, 0) - expected).abs() < 1e-15);
        assert!((t1.get(0, 0) + 0.1).abs() < 1e-8);
        assert_eq!(s1.step_count, 1);
    }

    #[test]
    fn adamw_constant_gradient_unit_steps() {
        let cfg = OptimConfig::adamw(0.01);
        let g = Matrix::from_rows(&[&[2.0, -0.5, 1e-3]]);
        let mut theta = Matrix::zeros(1, 3);
        let mut state = AdamwState::new(1, 3);
        let mut last = theta.clone();
        for _ in 0..500 {
            last = theta.clone();
            let (t, s) = adamw_step(&theta, &g, &state, &cfg).unwrap();
            theta = t;
            state = s;
        }
        let step = step_record(&last, &theta).unwrap();
        for (d, gi) in step.data().iter().zip(g.data()) {
            assert_eq!(d.signum(), gi.signum());
            assert!((d.abs() - 0.01).abs() < 1e-4);
        }
    }

    #[test]
    fn adamw_zero_lr_keeps_theta_updates_moments() {
        let cfg = OptimConfig::adamw(0.0).with_weight_decay(0.1);
        let theta = gaussian(2, 3, 1);
        let g = gaussian(2, 3, 2);
        let (t, s) = adamw_step(&theta, &g, &AdamwState::new(2, 3), &cfg).unwrap();
        assert!(t.bitwise_eq(&theta));
        assert!(!s.m.is_zero() && !s.v.is_zero());
        assert!(s.v.data().iter().all(|&x| x >= 0.0));
        assert!(step_record(&theta, &t).unwrap().is_zero());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = OptimConfig::adamw(0.1);
        let err = adamw_step(
            &Matrix::zeros(2, 2),
            &Matrix::zeros(2, 3),
            &AdamwState::new(2, 2),
            &cfg,
        );
        assert!(matches!(err, Err(OptimError::Linalg(LinalgError::ShapeMismatch { .. }))));
        assert!(step_record(&Matrix::zeros(1, 2), &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn muon_pure_weight_decay_on_zero_gradient() {
        let cfg = OptimConfig::muon(0.05).with_weight_decay(0.1);
        let theta = gaussian(3, 3, 4);
        let (t, _) = muon_step(&theta, &theta.zeros_like(), &MuonState::new(3, 3), &cfg).unwrap();
        let expected = theta.scale(1.0 - 0.05 * 0.1);
        assert!(t.sub(&expected).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn muon_shape_rescale() {
        let cfg = OptimConfig::muon(0.01);
        assert_eq!(muon_effective_lr(&cfg, 2, 8), 0.02);
        let off = OptimConfig {
            lr_shape_rescale: false,
            ..cfg
        };
        assert_eq!(muon_effective_lr(&off, 2, 8), 0.01);
    }

    #[test]
    fn muon_step_is_lr_times_orthogonalized_momentum() {
        let cfg = OptimConfig::muon(0.02);
        let theta = gaussian(6, 6, 5);
        let g = gaussian(6, 6, 6);
        let state = MuonState {
            m: gaussian(6, 6, 7),
        };
        let (t, s) = muon_step(&theta, &g, &state, &cfg).unwrap();
        // Independent recomputation of O.
        let m_expected = state.m.scale(0.9).add(&g).unwrap();
        assert!(s.m.sub(&m_expected).unwrap().max_abs() < 1e-15);
        let o = newton_schulz(&m_expected, 5).unwrap();
        let step = step_record(&theta, &t).unwrap();
        assert!(step.sub(&o.scale(0.02)).unwrap().max_abs() < 1e-15);
        // Step Frobenius norm near sqrt(r) * lr within the convergence band.
        let so = svd(&o).unwrap();
        let r = 6.0f64;
        let norm = frobenius_norm(&step) / 0.02;
        let band_lo = so.sigma.iter().map(|s| s * s).sum::<f64>().sqrt();
        assert!((norm - band_lo).abs() < 1e-9);
        assert!(norm <= 1.16 * r.sqrt() && norm >= 0.3 * r.sqrt(), "{norm}");
    }

    #[test]
    fn decoupled_decay_is_separable_bitwise() {
        for algo in [Algorithm::Adamw, Algorithm::Muon] {
            let base = OptimConfig {
                algorithm: algo,
                ..OptimConfig::adamw(0.03)
            };
            let decayed = base.with_weight_decay(0.2);
            let mut a = gaussian(4, 5, 10);
            let mut b = a.clone();
            let decl = ParamDecl::new("w", 4, 5, true);
            let mut sa = ParamOptState::for_param(&decl, &decayed);
            let mut sb = ParamOptState::for_param(&decl, &base);
            for step in 0..20 {
                let g = gaussian(4, 5, 100 + step);
                let ra = param_step(&a, &g, &sa, &decayed, 1.0).unwrap();
                let lr = ra.effective_lr;
                let pre = b.scale(1.0 - lr * 0.2);
                let rb = param_step(&pre, &g, &sb, &base, 1.0).unwrap();
                assert!(ra.theta.bitwise_eq(&rb.theta), "{algo:?} step {step}");
                a = ra.theta;
                b = rb.theta;
                sa = ra.state;
                sb = rb.state;
            }
        }
    }

    #[test]
    fn non_hidden_params_use_adamw_in_muon_mode() {
        let cfg = OptimConfig::muon(0.02).with_fallback_lr(0.001);
        let bias = ParamDecl::new("b", 1, 4, false);
        let w = ParamDecl::new("w", 4, 4, true);
        assert!(matches!(ParamOptState::for_param(&bias, &cfg), ParamOptState::Adamw(_)));
        assert!(matches!(ParamOptState::for_param(&w, &cfg), ParamOptState::Muon(_)));
        let st = ParamOptState::for_param(&bias, &cfg);
        let r = param_step(&Matrix::zeros(1, 4), &Matrix::filled(1, 4, 1.0), &st, &cfg, 0.5).unwrap();
        assert_eq!(r.effective_lr, 0.0005);
    }

    #[test]
    fn config_validation() {
        assert!(OptimConfig::muon(0.02).validate().is_ok());
        let mut bad = OptimConfig::adamw(0.01);
        bad.beta1 = 1.0;
        assert!(bad.validate().is_err());
        let mut bad = OptimConfig::muon(0.01);
        bad.ns_iterations = 0;
        assert!(bad.validate().is_err());
    }
}
