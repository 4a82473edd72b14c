//! Power-law fits of loss against compute, critical batch sizes and the
//! time-to-loss efficiency comparison built from them.
//!
//! Fits minimize `sum H_delta(ln L_hat - ln L)` with `L_hat = a x^alpha + c`.
//! Internally each method is parametrized by `(b, alpha)` with
//! `ln a = b - alpha * mean(ln x)`, which keeps the two coordinates on
//! comparable scales when `x` spans many decades. The free offset is
//! `c = min(L) * sigmoid(z)`.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{keyed_rng, tag};

pub const HUBER_DELTA: f64 = 1e-3;
pub const MAX_ITERS: usize = 15_000;
pub const JOINT_GRID: usize = 200;
pub const JOINT_ZOOM: usize = 10;
pub const JOINT_PHASE_RESTARTS: usize = 64;
pub const BCRIT_TOLERANCE: f64 = 1.01;
/// Tokens per parameter on the compute-optimal frontier.
pub const TOKENS_PER_PARAM: f64 = 20.0;

const LBFGS_MEMORY: usize = 10;
const STAGNATION_WINDOW: usize = 100;
const OFFSET_STARTS: [f64; 5] = [0.25, 0.5, 0.75, 0.9, 0.99];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("method {method:?} has {count} points, need at least {need}")]
    TooFewPoints { method: String, count: usize, need: usize },
    #[error("method {method:?}: all x values are equal")]
    RankDeficient { method: String },
    #[error("observation {index}: x and loss must be positive and finite")]
    BadObservation { index: usize },
    #[error("joint offset fit needs at least one method")]
    NoMethods,
    #[error("offset {offset} is not below every observed loss")]
    OffsetTooLarge { offset: f64 },
    #[error("batch data: {0}")]
    BatchData(String),
    #[error("training time is not increasing in compute near C = {compute:e}")]
    NonMonotone { compute: f64 },
    #[error("time {t:e} is outside the covered range [{lo:e}, {hi:e}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitForm {
    /// `a x^alpha`.
    Plain,
    /// `a x^alpha + c` with `c` fitted per method.
    PerMethodOffset,
    /// `a x^alpha + L_irr` with one offset shared by all methods.
    JointIrr,
}

/// One `(x, L)` point of a method.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub method: String,
    pub x: f64,
    pub loss: f64,
}

impl Observation {
    pub fn new(method: impl Into<String>, x: f64, loss: f64) -> Self {
        Self {
            method: method.into(),
            x,
            loss,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    /// Huber threshold in log space; `f64::INFINITY` gives least squares.
    pub huber_delta: f64,
    pub max_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 512,
            seed: 0,
            huber_delta: HUBER_DELTA,
            max_iters: MAX_ITERS,
        }
    }
}

impl FitOptions {
    pub fn with_restarts(restarts: usize) -> Self {
        Self {
            restarts,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFit {
    pub method: String,
    pub a: f64,
    pub alpha: f64,
    pub offset: f64,
}

impl MethodFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.a * x.powf(self.alpha) + self.offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub form: FitForm,
    pub methods: Vec<MethodFit>,
    pub shared_offset: Option<f64>,
    /// Mean absolute log residual over all points.
    pub residual: f64,
    pub objective: f64,
}

impl PowerLawFit {
    pub fn method(&self, name: &str) -> Option<&MethodFit> {
        self.methods.iter().find(|m| m.method == name)
    }
}

pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

fn huber_grad(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        r
    } else {
        delta * r.signum()
    }
}

// ---------------------------------------------------------------------------
// L-BFGS

struct Minimum {
    x: Vec<f64>,
    f: f64,
    #[cfg_attr(not(test), allow(dead_code))]
    iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with Armijo backtracking (and doubling when the
/// unit step is accepted). Stops after `max_iters`
/// iterations, at a zero gradient, when no step decreases `f`, or when `f`
/// improves by less than 1e-12 relative over `STAGNATION_WINDOW` iterations.
fn lbfgs<F>(f: F, x0: Vec<f64>, max_iters: usize) -> Minimum
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() {
        return Minimum {
            x,
            f: f64::INFINITY,
            iterations: 0,
        };
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut stalls = 0;
    let mut iterations = 0;
    let mut checkpoint = fx;
    for _ in 0..max_iters {
        iterations += 1;
        if iterations % STAGNATION_WINDOW == 0 {
            if checkpoint - fx <= 1e-12 * fx.abs() {
                break;
            }
            checkpoint = fx;
        }
        if g.iter().all(|v| *v == 0.0) {
            break;
        }
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = vec![0.0; s_hist.len()];
        for i in (0..s_hist.len()).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            alphas[i] = rho * dot(&s_hist[i], &d);
            for (dj, yj) in d.iter_mut().zip(&y_hist[i]) {
                *dj -= alphas[i] * yj;
            }
        }
        // Without curvature pairs (start, or a concave stretch) take a
        // unit-length steepest-descent step.
        let gamma = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            _ => 1.0 / dot(&g, &g).sqrt(),
        };
        d.iter_mut().for_each(|v| *v *= gamma);
        for i in 0..s_hist.len() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &d);
            for (dj, sj) in d.iter_mut().zip(&s_hist[i]) {
                *dj += (alphas[i] - beta) * sj;
            }
        }
        let mut dg = dot(&d, &g);
        if !(dg < 0.0) || !dg.is_finite() {
            s_hist.clear();
            y_hist.clear();
            let scale = 1.0 / dot(&g, &g).sqrt();
            d = g.iter().map(|v| -v * scale).collect();
            dg = dot(&d, &g);
        }

        let mut t = 1.0;
        let mut fnew = f64::INFINITY;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                xn[i] = x[i] + t * d[i];
            }
            fnew = f(&xn, &mut gn);
            if fnew.is_finite() && fnew <= fx + 1e-4 * t * dg {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        if t == 1.0 {
            // Expand while the objective keeps dropping.
            let mut xt = vec![0.0; n];
            let mut gt = vec![0.0; n];
            for _ in 0..30 {
                let t2 = 2.0 * t;
                for i in 0..n {
                    xt[i] = x[i] + t2 * d[i];
                }
                let ft = f(&xt, &mut gt);
                if !(ft < fnew) {
                    break;
                }
                t = t2;
                fnew = ft;
                std::mem::swap(&mut xn, &mut xt);
                std::mem::swap(&mut gn, &mut gt);
            }
        }
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if s_hist.len() == LBFGS_MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        stalls = if fnew < fx { 0 } else { stalls + 1 };
        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut g, &mut gn);
        fx = fnew;
        if stalls >= 3 || fx == 0.0 {
            break;
        }
    }
    Minimum {
        x,
        f: fx,
        iterations,
    }
}

// ---------------------------------------------------------------------------
// Per-method problems

#[derive(Debug, Clone)]
struct Group {
    name: String,
    /// `ln x - xbar`.
    u: Vec<f64>,
    ln_l: Vec<f64>,
    xbar: f64,
    min_l: f64,
}

#[derive(Debug, Clone, Copy)]
enum Offset {
    Zero,
    Free,
    Fixed(f64),
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Group {
    fn offset_of(&self, mode: Offset, p: &[f64]) -> f64 {
        match mode {
            Offset::Zero => 0.0,
            Offset::Fixed(c) => c,
            Offset::Free => self.min_l * sigmoid(p[2]),
        }
    }

    fn objective(&self, mode: Offset, delta: f64, p: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|v| *v = 0.0);
        let (b, alpha) = (p[0], p[1]);
        let c = self.offset_of(mode, p);
        let mut f = 0.0;
        for (&u, &ln_l) in self.u.iter().zip(&self.ln_l) {
            let pw = (b + alpha * u).exp();
            let lh = pw + c;
            let r = lh.ln() - ln_l;
            f += huber(r, delta);
            let h = huber_grad(r, delta);
            let w = pw / lh;
            grad[0] += h * w;
            grad[1] += h * w * u;
            if let Offset::Free = mode {
                let s = sigmoid(p[2]);
                grad[2] += h * self.min_l * s * (1.0 - s) / lh;
            }
        }
        f
    }

    fn residuals(&self, fit: &MethodFit) -> impl Iterator<Item = f64> + '_ {
        let (b, alpha, c) = (fit.a.ln() + fit.alpha * self.xbar, fit.alpha, fit.offset);
        self.u
            .iter()
            .zip(&self.ln_l)
            .map(move |(&u, &ln_l)| ((b + alpha * u).exp() + c).ln() - ln_l)
    }

    /// Least-squares line through `(u, ln(L - c))`.
    fn line_start(&self, c: f64) -> Option<[f64; 2]> {
        let ys: Vec<f64> = self.ln_l.iter().map(|l| (l.exp() - c).ln()).collect();
        if ys.iter().any(|y| !y.is_finite()) {
            return None;
        }
        let n = ys.len() as f64;
        let ybar = ys.iter().sum::<f64>() / n;
        let ubar = self.u.iter().sum::<f64>() / n;
        let suu: f64 = self.u.iter().map(|u| (u - ubar) * (u - ubar)).sum();
        let suy: f64 = self.u.iter().zip(&ys).map(|(u, y)| (u - ubar) * (y - ybar)).sum();
        let alpha = suy / suu;
        Some([ybar - alpha * ubar, alpha])
    }

    fn starts(&self, mode: Offset, opts: &FitOptions, group_index: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(opts.restarts + OFFSET_STARTS.len());
        for r in 0..opts.restarts {
            let mut rng = keyed_rng(opts.seed, &[tag::FIT_RESTART, group_index as u64, r as u64]);
            let alpha = rng.random_range(-1.0..0.0);
            let ln_a: f64 = rng.random_range(-5.0..=15.0);
            let mut p = vec![ln_a + alpha * self.xbar, alpha];
            if let Offset::Free = mode {
                let frac: f64 = rng.random_range(1e-6..1.0 - 1e-6);
                p.push(logit(frac));
            }
            out.push(p);
        }
        // Data-driven starts from straight-line fits in log space.
        match mode {
            Offset::Zero => out.extend(self.line_start(0.0).map(|s| s.to_vec())),
            Offset::Fixed(c) => out.extend(self.line_start(c).map(|s| s.to_vec())),
            Offset::Free => {
                for frac in OFFSET_STARTS {
                    if let Some(s) = self.line_start(frac * self.min_l) {
                        out.push(vec![s[0], s[1], logit(frac)]);
                    }
                }
            }
        }
        out
    }

    fn fit(&self, mode: Offset, opts: &FitOptions, group_index: usize) -> (MethodFit, f64) {
        let starts = self.starts(mode, opts, group_index);
        let results: Vec<Minimum> = starts
            .into_par_iter()
            .map(|x0| {
                lbfgs(
                    |p, g| self.objective(mode, opts.huber_delta, p, g),
                    x0,
                    opts.max_iters,
                )
            })
            .collect();
        let best = results
            .iter()
            .enumerate()
            .min_by(|(i, a), (j, b)| a.f.total_cmp(&b.f).then(i.cmp(j)))
            .map(|(_, m)| m)
            .expect("at least one start");
        let (b, alpha) = (best.x[0], best.x[1]);
        let fit = MethodFit {
            method: self.name.clone(),
            a: (b - alpha * self.xbar).exp(),
            alpha,
            offset: self.offset_of(mode, &best.x),
        };
        (fit, best.f)
    }
}

fn group_observations(data: &[Observation], min_points: usize) -> Result<Vec<Group>, FitError> {
    let mut names: Vec<&str> = Vec::new();
    for (index, o) in data.iter().enumerate() {
        if !(o.x > 0.0 && o.x.is_finite() && o.loss > 0.0 && o.loss.is_finite()) {
            return Err(FitError::BadObservation { index });
        }
        if !names.contains(&o.method.as_str()) {
            names.push(&o.method);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let pts: Vec<&Observation> = data.iter().filter(|o| o.method == name).collect();
            if pts.len() < min_points {
                return Err(FitError::TooFewPoints {
                    method: name.to_string(),
                    count: pts.len(),
                    need: min_points,
                });
            }
            let lx: Vec<f64> = pts.iter().map(|o| o.x.ln()).collect();
            if lx.iter().all(|v| *v == lx[0]) {
                return Err(FitError::RankDeficient {
                    method: name.to_string(),
                });
            }
            let xbar = lx.iter().sum::<f64>() / lx.len() as f64;
            Ok(Group {
                name: name.to_string(),
                u: lx.iter().map(|v| v - xbar).collect(),
                ln_l: pts.iter().map(|o| o.loss.ln()).collect(),
                xbar,
                min_l: pts.iter().map(|o| o.loss).fold(f64::INFINITY, f64::min),
            })
        })
        .collect()
}

fn assemble(
    form: FitForm,
    groups: &[Group],
    fits: Vec<(MethodFit, f64)>,
    shared_offset: Option<f64>,
) -> PowerLawFit {
    let objective = fits.iter().map(|(_, f)| f).sum();
    let (mut abs_sum, mut count) = (0.0, 0usize);
    for (g, (fit, _)) in groups.iter().zip(&fits) {
        for r in g.residuals(fit) {
            abs_sum += r.abs();
            count += 1;
        }
    }
    PowerLawFit {
        form,
        methods: fits.into_iter().map(|(m, _)| m).collect(),
        shared_offset,
        residual: abs_sum / count as f64,
        objective,
    }
}

/// Fits `L = a x^alpha (+ c)` to each method in `data`.
///
/// `JointIrr` is forwarded to [`fit_joint_irr`].
pub fn fit_power_law(data: &[Observation], form: FitForm, opts: &FitOptions) -> Result<PowerLawFit, FitError> {
    if form == FitForm::JointIrr {
        return fit_joint_irr(data, opts);
    }
    let groups = group_observations(data, 3)?;
    let mode = match form {
        FitForm::Plain => Offset::Zero,
        _ => Offset::Free,
    };
    let fits = groups
        .iter()
        .enumerate()
        .map(|(i, g)| g.fit(mode, opts, i))
        .collect();
    Ok(assemble(form, &groups, fits, None))
}

/// Fits per-method `(a, alpha)` with every method's offset held at `offset`.
pub fn fit_fixed_offset(data: &[Observation], offset: f64, opts: &FitOptions) -> Result<PowerLawFit, FitError> {
    let groups = group_observations(data, 3)?;
    let min_l = groups.iter().map(|g| g.min_l).fold(f64::INFINITY, f64::min);
    if !(offset >= 0.0 && offset < min_l) {
        return Err(FitError::OffsetTooLarge { offset });
    }
    let fits = fit_groups_at(&groups, offset, opts);
    Ok(assemble(FitForm::JointIrr, &groups, fits, Some(offset)))
}

fn fit_groups_at(groups: &[Group], offset: f64, opts: &FitOptions) -> Vec<(MethodFit, f64)> {
    groups
        .iter()
        .enumerate()
        .map(|(i, g)| g.fit(Offset::Fixed(offset), opts, i))
        .collect()
}

fn grid_objective(groups: &[Group], offset: f64, opts: &FitOptions) -> f64 {
    fit_groups_at(groups, offset, opts).iter().map(|(_, f)| f).sum()
}

/// Index of the smallest objective, ties to the lower index.
fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.total_cmp(b).then(i.cmp(j)))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Shared-offset fit by a coarse grid, a zoomed grid and a final refit.
///
/// A single method falls back to the per-method-offset fit, whose offset
/// is then reported as the shared one.
pub fn fit_joint_irr(data: &[Observation], opts: &FitOptions) -> Result<PowerLawFit, FitError> {
    let groups = group_observations(data, 3)?;
    if groups.is_empty() {
        return Err(FitError::NoMethods);
    }
    if groups.len() == 1 {
        let mut fit = fit_power_law(data, FitForm::PerMethodOffset, opts)?;
        fit.form = FitForm::JointIrr;
        fit.shared_offset = Some(fit.methods[0].offset);
        return Ok(fit);
    }
    let min_l = groups.iter().map(|g| g.min_l).fold(f64::INFINITY, f64::min);
    let phase = FitOptions {
        restarts: JOINT_PHASE_RESTARTS,
        ..opts.clone()
    };

    // Log-spaced candidates strictly inside (0, min L).
    let (lo, hi) = ((min_l * 1e-4).ln(), (min_l * (1.0 - 1e-4)).ln());
    let step = (hi - lo) / (JOINT_GRID - 1) as f64;
    let coarse: Vec<f64> = (0..JOINT_GRID).map(|i| (lo + step * i as f64).exp()).collect();
    let scores: Vec<f64> = coarse
        .par_iter()
        .map(|&c| grid_objective(&groups, c, &phase))
        .collect();
    let best = argmin(&scores);

    let lo_z = lo + step * best.saturating_sub(1) as f64;
    let hi_z = lo + step * (best + 1).min(JOINT_GRID - 1) as f64;
    let cells = JOINT_ZOOM * ((hi_z - lo_z) / step).round() as usize;
    let fine: Vec<f64> = (0..=cells)
        .map(|i| (lo_z + (hi_z - lo_z) * i as f64 / cells as f64).exp())
        .collect();
    let fine_scores: Vec<f64> = fine
        .par_iter()
        .map(|&c| grid_objective(&groups, c, &phase))
        .collect();
    let offset = fine[argmin(&fine_scores)];

    let fits = fit_groups_at(&groups, offset, opts);
    Ok(assemble(FitForm::JointIrr, &groups, fits, Some(offset)))
}

// ---------------------------------------------------------------------------
// Critical batch size

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalBatch {
    pub b_opt: f64,
    pub b_crit: f64,
    pub loss_opt: f64,
    /// The best batch is the smallest or largest tested one.
    pub boundary: bool,
}

/// Best and critical batch sizes from final losses at one scale.
///
/// `B_crit` is the largest batch reached by walking up from `B_opt` while
/// every loss stays within `1.01 * L(B_opt)`.
pub fn critical_batch(points: &[(f64, f64)]) -> Result<CriticalBatch, FitError> {
    if points.len() < 3 {
        return Err(FitError::BatchData(format!("need 3 batch sizes, got {}", points.len())));
    }
    if let Some(p) = points
        .iter()
        .find(|(b, l)| !(*b > 0.0 && b.is_finite() && l.is_finite()))
    {
        return Err(FitError::BatchData(format!("invalid point ({}, {})", p.0, p.1)));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(FitError::BatchData("duplicate batch size".into()));
    }
    let losses: Vec<f64> = sorted.iter().map(|p| p.1).collect();
    let i_opt = argmin(&losses);
    let limit = BCRIT_TOLERANCE * losses[i_opt];
    let mut i_crit = i_opt;
    while i_crit + 1 < sorted.len() && losses[i_crit + 1] <= limit {
        i_crit += 1;
    }
    Ok(CriticalBatch {
        b_opt: sorted[i_opt].0,
        b_crit: sorted[i_crit].0,
        loss_opt: losses[i_opt],
        boundary: i_opt == 0 || i_opt == sorted.len() - 1,
    })
}

/// `B_crit(D) = a D^alpha` fitted in log space. Returns `(a, alpha)`.
pub fn bcrit_power_law(points: &[(f64, f64)], opts: &FitOptions) -> Result<(f64, f64), FitError> {
    let data: Vec<Observation> = points
        .iter()
        .map(|&(d, b)| Observation::new("bcrit", d, b))
        .collect();
    let groups = group_observations(&data, 2)?;
    let (fit, _) = groups[0].fit(Offset::Zero, opts, 0);
    Ok((fit.a, fit.alpha))
}

// ---------------------------------------------------------------------------
// Time-to-loss efficiency

/// Fitted loss and critical-batch laws of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingModel {
    pub loss: MethodFit,
    pub bcrit_a: f64,
    pub bcrit_alpha: f64,
}

impl ScalingModel {
    /// Training tokens on the compute-optimal frontier (`C = 6 N D`, `D = 20 N`).
    pub fn tokens_at(compute: f64) -> f64 {
        TOKENS_PER_PARAM * (compute / (6.0 * TOKENS_PER_PARAM)).sqrt()
    }

    pub fn bcrit_at(&self, compute: f64) -> f64 {
        self.bcrit_a * Self::tokens_at(compute).powf(self.bcrit_alpha)
    }

    /// Sequential-time proxy `C / B_crit`.
    pub fn time_at(&self, compute: f64) -> f64 {
        compute / self.bcrit_at(compute)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyPoint {
    pub time: f64,
    pub compute_baseline: f64,
    pub compute_method: f64,
    /// `L_base(C_base(T)) / L_m(C_m(T))`; above one favors the method.
    pub ratio: f64,
}

/// Dense log-space table of `(ln T, ln C)` for inversion.
struct TimeTable {
    ln_t: Vec<f64>,
    ln_c: Vec<f64>,
}

impl TimeTable {
    fn new(model: &ScalingModel, range: (f64, f64), points: usize) -> Result<Self, FitError> {
        let (a, b) = (range.0.ln(), range.1.ln());
        let ln_c: Vec<f64> = (0..points)
            .map(|i| a + (b - a) * i as f64 / (points - 1) as f64)
            .collect();
        let ln_t: Vec<f64> = ln_c.iter().map(|c| model.time_at(c.exp()).ln()).collect();
        for (i, w) in ln_t.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(FitError::NonMonotone {
                    compute: ln_c[i + 1].exp(),
                });
            }
        }
        Ok(Self { ln_t, ln_c })
    }

    fn compute_for(&self, t: f64) -> Result<f64, FitError> {
        let lt = t.ln();
        let (first, last) = (self.ln_t[0], *self.ln_t.last().unwrap());
        if !(lt >= first && lt <= last) {
            return Err(FitError::OutOfRange {
                t,
                lo: first.exp(),
                hi: last.exp(),
            });
        }
        let j = self.ln_t.partition_point(|v| *v < lt).clamp(1, self.ln_t.len() - 1);
        let (t0, t1) = (self.ln_t[j - 1], self.ln_t[j]);
        let w = (lt - t0) / (t1 - t0);
        Ok((self.ln_c[j - 1] + w * (self.ln_c[j] - self.ln_c[j - 1])).exp())
    }
}

pub const EFFICIENCY_GRID: usize = 4096;

/// Loss ratio of `baseline` over `method` at equal training time.
///
/// Both `T(C)` curves are tabulated on `EFFICIENCY_GRID` log-spaced compute
/// values in `compute_range` and inverted by linear interpolation in log space.
pub fn efficiency_curve(
    baseline: &ScalingModel,
    method: &ScalingModel,
    compute_range: (f64, f64),
    times: &[f64],
) -> Result<Vec<EfficiencyPoint>, FitError> {
    let base = TimeTable::new(baseline, compute_range, EFFICIENCY_GRID)?;
    let other = TimeTable::new(method, compute_range, EFFICIENCY_GRID)?;
    times
        .iter()
        .map(|&t| {
            let cb = base.compute_for(t)?;
            let cm = other.compute_for(t)?;
            Ok(EfficiencyPoint {
                time: t,
                compute_baseline: cb,
                compute_method: cm,
                ratio: baseline.loss.predict(cb) / method.loss.predict(cm),
            })
        })
        .collect()
}

/// Time range covered by both models over `compute_range`.
pub fn common_time_range(models: &[&ScalingModel], compute_range: (f64, f64)) -> (f64, f64) {
    let lo = models
        .iter()
        .map(|m| m.time_at(compute_range.0))
        .fold(0.0, f64::max);
    let hi = models
        .iter()
        .map(|m| m.time_at(compute_range.1))
        .fold(f64::INFINITY, f64::min);
    (lo, hi)
}

// ---------------------------------------------------------------------------
// Run tables

/// One finished run: method, worker count, size, data and final loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDatum {
    pub method: String,
    #[serde(rename = "K")]
    pub workers: usize,
    #[serde(rename = "N_params")]
    pub n_params: f64,
    pub tokens: f64,
    pub batch_tokens: Option<f64>,
    pub loss: f64,
}

impl FitDatum {
    /// Training FLOPs `6 N D`.
    pub fn compute(&self) -> f64 {
        6.0 * self.n_params * self.tokens
    }

    /// `method/K<k>`, the series a datum belongs to.
    pub fn series(&self) -> String {
        format!("{}/K{}", self.method, self.workers)
    }
}

/// Reads `method,K,N_params,tokens,batch_tokens,loss` rows; `#` starts a comment.
pub fn read_fit_data<R: Read>(reader: R) -> Result<Vec<FitDatum>, FitError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let rows: Vec<FitDatum> = rdr
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| FitError::Csv(e.to_string()))?;
    for (i, d) in rows.iter().enumerate() {
        let ok = d.n_params > 0.0
            && d.tokens > 0.0
            && d.loss.is_finite()
            && d.batch_tokens.is_none_or(|b| b > 0.0);
        if !ok {
            return Err(FitError::Csv(format!("row {}: non-positive size or invalid loss", i + 1)));
        }
    }
    Ok(rows)
}

pub fn load_fit_data(path: &Path) -> Result<Vec<FitDatum>, FitError> {
    let file = std::fs::File::open(path).map_err(|e| FitError::Csv(format!("{}: {e}", path.display())))?;
    read_fit_data(file)
}

/// Loss-vs-compute observations, one series per `(method, K)`.
pub fn compute_observations(data: &[FitDatum]) -> Vec<Observation> {
    data.iter()
        .map(|d| Observation::new(d.series(), d.compute(), d.loss))
        .collect()
}
