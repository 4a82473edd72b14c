//! Desk-scale differentiable tasks with hand-derived gradients.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{svd, LinalgError, Matrix};
use crate::params::{ParamDecl, ParamSet};
use crate::rng::{keyed_rng, tag};

/// Size of the fixed held-out batch used by [`ModelTask::eval_loss`].
pub const HELD_OUT_EXAMPLES: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("batch does not fit the task: {0}")]
    BadBatch(String),
}

/// One synthetic example. `y` is empty for tasks without targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Examples stacked row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Matrix,
    pub y: Option<Matrix>,
}

impl Batch {
    pub fn from_examples(examples: &[Example]) -> Result<Self, ModelError> {
        let n = examples.len();
        if n == 0 {
            return Err(ModelError::BadBatch("empty batch".into()));
        }
        let dx = examples[0].x.len();
        let dy = examples[0].y.len();
        let mut xs = Vec::with_capacity(n * dx);
        let mut ys = Vec::with_capacity(n * dy);
        for e in examples {
            if e.x.len() != dx || e.y.len() != dy {
                return Err(ModelError::BadBatch("ragged examples".into()));
            }
            xs.extend_from_slice(&e.x);
            ys.extend_from_slice(&e.y);
        }
        let y = if dy == 0 {
            None
        } else {
            Some(Matrix::new(n, dy, ys)?)
        };
        Ok(Self {
            x: Matrix::new(n, dx, xs)?,
            y,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A differentiable task. Implementations are immutable after
/// construction and safe to share across worker threads.
pub trait ModelTask: Send + Sync {
    fn name(&self) -> &str;
    fn decls(&self) -> &[ParamDecl];
    /// Deterministic initial parameters.
    fn init_params(&self) -> ParamSet;
    fn sample_example(&self, rng: &mut ChaCha8Rng) -> Example;
    /// Mean loss over the batch and its gradient.
    fn loss_and_grad(&self, params: &ParamSet, batch: &Batch) -> Result<(f64, ParamSet), ModelError>;
    fn loss(&self, params: &ParamSet, batch: &Batch) -> Result<f64, ModelError> {
        Ok(self.loss_and_grad(params, batch)?.0)
    }
    /// Loss on the task's fixed held-out data.
    fn eval_loss(&self, params: &ParamSet) -> Result<f64, ModelError>;
    fn optimum_loss(&self) -> Option<f64>;
}

/// Example `index` of global step `step` for run seed `seed`.
pub fn example_at(task: &dyn ModelTask, seed: u64, step: u64, index: u64) -> Example {
    task.sample_example(&mut keyed_rng(seed, &[tag::EXAMPLE, step, index]))
}

pub fn batch_at(
    task: &dyn ModelTask,
    seed: u64,
    step: u64,
    indices: impl IntoIterator<Item = u64>,
) -> Result<Batch, ModelError> {
    let examples: Vec<Example> = indices
        .into_iter()
        .map(|i| example_at(task, seed, step, i))
        .collect();
    Batch::from_examples(&examples)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Serializable task selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    QuadraticBowl {
        dim: usize,
        condition: f64,
        #[serde(default = "default_noise")]
        noise: f64,
        seed: u64,
    },
    Mlp {
        widths: Vec<usize>,
        #[serde(default = "default_true")]
        bias: bool,
        #[serde(default = "default_noise")]
        noise: f64,
        seed: u64,
    },
}

fn default_noise() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}

impl TaskSpec {
    pub fn build(&self) -> Result<Box<dyn ModelTask>, ModelError> {
        Ok(match self {
            Self::QuadraticBowl {
                dim,
                condition,
                noise,
                seed,
            } => Box::new(QuadraticBowl::new(*dim, *condition, *noise, *seed)?),
            Self::Mlp {
                widths,
                bias,
                noise,
                seed,
            } => Box::new(Mlp::new(widths, *bias, *noise, *seed)?),
        })
    }
}

/// Largest divisor of `n` not exceeding `sqrt(n)`.
fn near_square(n: usize) -> (usize, usize) {
    let mut r = (n as f64).sqrt() as usize;
    while r > 1 && n % r != 0 {
        r -= 1;
    }
    let r = r.max(1);
    (r, n / r)
}

/// `L(theta) = 1/2 (theta - theta*)^T A (theta - theta*) + noise * <zbar, theta>`
/// where `zbar` is the batch mean of standard normal vectors. The parameter
/// is a single near-square matrix, flattened row-major for the quadratic.
#[derive(Debug, Clone)]
pub struct QuadraticBowl {
    decls: Vec<ParamDecl>,
    a: Matrix,
    theta_star: Matrix,
    noise: f64,
}

pub fn quadratic_bowl(dim: usize, condition: f64, seed: u64) -> Result<QuadraticBowl, ModelError> {
    QuadraticBowl::new(dim, condition, default_noise(), seed)
}

impl QuadraticBowl {
    pub fn new(dim: usize, condition: f64, noise: f64, seed: u64) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::InvalidTask("dim must be >= 1".into()));
        }
        if !(condition >= 1.0 && condition.is_finite()) {
            return Err(ModelError::InvalidTask("condition must be >= 1".into()));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(ModelError::InvalidTask("noise must be >= 0".into()));
        }
        let (rows, cols) = near_square(dim);
        let hidden = rows > 1 && cols > 1;
        let mut rng = keyed_rng(seed, &[tag::TEACHER]);
        let a = if condition == 1.0 {
            Matrix::identity(dim)
        } else {
            let g = Matrix::from_fn(dim, dim, |_, _| normal(&mut rng));
            let q = svd(&g)?.u;
            let lambda: Vec<f64> = (0..dim)
                .map(|i| {
                    if dim == 1 {
                        1.0
                    } else {
                        condition.powf(i as f64 / (dim - 1) as f64)
                    }
                })
                .collect();
            let scaled = Matrix::from_fn(dim, dim, |r, c| q.get(r, c) * lambda[c]);
            let a = scaled.matmul(&q.transpose())?;
            // Symmetrize away rounding.
            let at = a.transpose();
            a.zip_map(&at, |x, y| 0.5 * (x + y))?
        };
        let theta_star = Matrix::from_fn(rows, cols, |_, _| normal(&mut rng));
        Ok(Self {
            decls: vec![ParamDecl::new("theta", rows, cols, hidden)],
            a,
            theta_star,
            noise,
        })
    }

    pub fn hessian(&self) -> &Matrix {
        &self.a
    }

    pub fn optimum(&self) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("theta", self.theta_star.clone());
        p
    }

    fn check(&self, params: &ParamSet) -> Result<(), ModelError> {
        if params.len() != 1 || params.get(0).shape() != self.theta_star.shape() {
            return Err(ModelError::BadBatch("parameter layout".into()));
        }
        Ok(())
    }

    /// Noise-free loss and gradient.
    fn exact(&self, theta: &Matrix) -> (f64, Vec<f64>) {
        let e: Vec<f64> = theta
            .data()
            .iter()
            .zip(self.theta_star.data())
            .map(|(t, s)| t - s)
            .collect();
        let n = e.len();
        let mut ae = vec![0.0; n];
        for (i, out) in ae.iter_mut().enumerate() {
            *out = self.a.row(i).iter().zip(&e).map(|(a, x)| a * x).sum();
        }
        let loss = 0.5 * e.iter().zip(&ae).map(|(x, y)| x * y).sum::<f64>();
        (loss, ae)
    }
}

impl ModelTask for QuadraticBowl {
    fn name(&self) -> &str {
        "quadratic_bowl"
    }

    fn decls(&self) -> &[ParamDecl] {
        &self.decls
    }

    fn init_params(&self) -> ParamSet {
        ParamSet::zeros(&self.decls)
    }

    fn sample_example(&self, rng: &mut ChaCha8Rng) -> Example {
        Example {
            x: (0..self.theta_star.len()).map(|_| normal(rng)).collect(),
            y: Vec::new(),
        }
    }

    fn loss_and_grad(&self, params: &ParamSet, batch: &Batch) -> Result<(f64, ParamSet), ModelError> {
        self.check(params)?;
        let theta = params.get(0);
        if batch.x.cols() != theta.len() {
            return Err(ModelError::BadBatch("noise width".into()));
        }
        let (mut loss, mut grad) = self.exact(theta);
        if self.noise != 0.0 {
            let n = batch.len() as f64;
            for (j, g) in grad.iter_mut().enumerate() {
                let zbar = (0..batch.len()).map(|i| batch.x.get(i, j)).sum::<f64>() / n;
                loss += self.noise * zbar * theta.data()[j];
                *g += self.noise * zbar;
            }
        }
        let mut out = ParamSet::new();
        out.push("theta", Matrix::new(theta.rows(), theta.cols(), grad)?);
        Ok((loss, out))
    }

    fn eval_loss(&self, params: &ParamSet) -> Result<f64, ModelError> {
        self.check(params)?;
        Ok(self.exact(params.get(0)).0)
    }

    fn optimum_loss(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Teacher-student regression with a tanh MLP.
///
/// Layer `l` has weight `w{l}` of shape `widths[l+1] x widths[l]` and, with
/// `bias`, a `1 x widths[l+1]` row `b{l}`. Hidden layers use tanh, the
/// output is linear, and the loss is the batch mean of `1/2 |f(x) - y|^2`
/// with `y = teacher(x) + noise * eps`. Weight matrices with both
/// dimensions above one are flagged hidden (Muon-governed), except the
/// output layer, which stays with AdamW like the biases.
#[derive(Debug, Clone)]
pub struct Mlp {
    widths: Vec<usize>,
    bias: bool,
    noise: f64,
    seed: u64,
    decls: Vec<ParamDecl>,
    teacher: ParamSet,
    held_out: Batch,
}

pub fn mlp(widths: &[usize], bias: bool, seed: u64) -> Result<Mlp, ModelError> {
    Mlp::new(widths, bias, default_noise(), seed)
}

pub fn two_layer_mlp(in_dim: usize, hidden_dim: usize, out_dim: usize, seed: u64) -> Result<Mlp, ModelError> {
    mlp(&[in_dim, hidden_dim, out_dim], true, seed)
}

impl Mlp {
    pub fn new(widths: &[usize], bias: bool, noise: f64, seed: u64) -> Result<Self, ModelError> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(ModelError::InvalidTask(
                "need at least two positive widths".into(),
            ));
        }
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(ModelError::InvalidTask("noise must be >= 0".into()));
        }
        let mut decls = Vec::new();
        for l in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let output = l + 2 == widths.len();
            let hidden = !output && fan_out > 1 && fan_in > 1;
            decls.push(ParamDecl::new(format!("w{l}"), fan_out, fan_in, hidden));
            if bias {
                decls.push(ParamDecl::new(format!("b{l}"), 1, fan_out, false));
            }
        }
        let teacher = Self::random_params(&decls, widths, bias, &mut keyed_rng(seed, &[tag::TEACHER]), true);
        let mut task = Self {
            widths: widths.to_vec(),
            bias,
            noise,
            seed,
            decls,
            teacher,
            held_out: Batch {
                x: Matrix::zeros(1, 1),
                y: None,
            },
        };
        let examples: Vec<Example> = (0..HELD_OUT_EXAMPLES as u64)
            .map(|i| task.sample_example(&mut keyed_rng(seed, &[tag::HELD_OUT, i])))
            .collect();
        task.held_out = Batch::from_examples(&examples)?;
        Ok(task)
    }

    fn random_params(
        decls: &[ParamDecl],
        widths: &[usize],
        bias: bool,
        rng: &mut ChaCha8Rng,
        random_bias: bool,
    ) -> ParamSet {
        let mut p = ParamSet::new();
        let mut d = decls.iter();
        for l in 0..widths.len() - 1 {
            let w = d.next().unwrap();
            let scale = 1.0 / (widths[l] as f64).sqrt();
            p.push(w.name.clone(), Matrix::from_fn(w.rows, w.cols, |_, _| scale * normal(rng)));
            if bias {
                let b = d.next().unwrap();
                let m = if random_bias {
                    Matrix::from_fn(1, b.cols, |_, _| 0.1 * normal(rng))
                } else {
                    Matrix::zeros(1, b.cols)
                };
                p.push(b.name.clone(), m);
            }
        }
        p
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn teacher(&self) -> &ParamSet {
        &self.teacher
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    fn weight<'a>(&self, p: &'a ParamSet, l: usize) -> &'a Matrix {
        p.get(if self.bias { 2 * l } else { l })
    }

    fn bias_row<'a>(&self, p: &'a ParamSet, l: usize) -> Option<&'a Matrix> {
        self.bias.then(|| p.get(2 * l + 1))
    }

    /// Activations `[x, h1, ..., out]`.
    fn forward(&self, p: &ParamSet, x: &Matrix) -> Result<Vec<Matrix>, ModelError> {
        let mut acts = vec![x.clone()];
        for l in 0..self.layers() {
            let mut z = acts[l].matmul(&self.weight(p, l).transpose())?;
            if let Some(b) = self.bias_row(p, l) {
                for r in 0..z.rows() {
                    for c in 0..z.cols() {
                        z.set(r, c, z.get(r, c) + b.get(0, c));
                    }
                }
            }
            if l + 1 < self.layers() {
                z = z.map(f64::tanh);
            }
            acts.push(z);
        }
        Ok(acts)
    }

    fn check(&self, params: &ParamSet, batch: &Batch) -> Result<(), ModelError> {
        if params.len() != self.decls.len()
            || params
                .tensors()
                .iter()
                .zip(&self.decls)
                .any(|(m, d)| m.shape() != (d.rows, d.cols))
        {
            return Err(ModelError::BadBatch("parameter layout".into()));
        }
        let y = batch
            .y
            .as_ref()
            .ok_or_else(|| ModelError::BadBatch("missing targets".into()))?;
        if batch.x.cols() != self.widths[0] || y.cols() != *self.widths.last().unwrap() {
            return Err(ModelError::BadBatch("input/target width".into()));
        }
        Ok(())
    }
}

impl ModelTask for Mlp {
    fn name(&self) -> &str {
        "mlp"
    }

    fn decls(&self) -> &[ParamDecl] {
        &self.decls
    }

    fn init_params(&self) -> ParamSet {
        Self::random_params(
            &self.decls,
            &self.widths,
            self.bias,
            &mut keyed_rng(self.seed, &[tag::TASK_INIT]),
            false,
        )
    }

    fn sample_example(&self, rng: &mut ChaCha8Rng) -> Example {
        let x: Vec<f64> = (0..self.widths[0]).map(|_| normal(rng)).collect();
        let xm = Matrix::new(1, x.len(), x.clone()).expect("finite normals");
        let out = self.forward(&self.teacher, &xm).expect("teacher layout");
        let y = out
            .last()
            .unwrap()
            .data()
            .iter()
            .map(|&v| v + self.noise * normal(rng))
            .collect();
        Example { x, y }
    }

    fn loss_and_grad(&self, params: &ParamSet, batch: &Batch) -> Result<(f64, ParamSet), ModelError> {
        self.check(params, batch)?;
        let y = batch.y.as_ref().unwrap();
        let n = batch.len() as f64;
        let acts = self.forward(params, &batch.x)?;
        let resid = acts.last().unwrap().sub(y)?;
        let loss = 0.5 * resid.data().iter().map(|r| r * r).sum::<f64>() / n;

        let mut grads: Vec<Option<Matrix>> = vec![None; params.len()];
        let mut delta = resid.scale(1.0 / n);
        for l in (0..self.layers()).rev() {
            let dw = delta.transpose().matmul(&acts[l])?;
            let wi = if self.bias { 2 * l } else { l };
            if self.bias {
                let db = Matrix::from_fn(1, delta.cols(), |_, c| {
                    (0..delta.rows()).map(|r| delta.get(r, c)).sum()
                });
                grads[wi + 1] = Some(db);
            }
            if l > 0 {
                let back = delta.matmul(self.weight(params, l))?;
                delta = back.zip_map(&acts[l], |d, h| d * (1.0 - h * h))?;
            }
            grads[wi] = Some(dw);
        }
        let tensors = grads.into_iter().map(Option::unwrap).collect();
        Ok((loss, ParamSet::from_parts(params.names().to_vec(), tensors)))
    }

    fn eval_loss(&self, params: &ParamSet) -> Result<f64, ModelError> {
        self.loss(params, &self.held_out)
    }

    fn optimum_loss(&self) -> Option<f64> {
        None
    }
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub probes: usize,
    pub max_rel_error: f64,
    /// `(param, flat index, analytic, numeric)` of the worst probe.
    pub worst: (usize, usize, f64, f64),
}

/// Denominator floor of the relative error, so that coordinates whose
/// gradient is zero are compared on an absolute scale.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares analytic gradients against central differences at `probes`
/// random coordinates. Differences use step `h` with one Richardson
/// refinement (`(4 D(h/2) - D(h)) / 3`).
pub fn gradient_check(
    task: &dyn ModelTask,
    params: &ParamSet,
    batch: &Batch,
    probes: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheck, ModelError> {
    let (_, grad) = task.loss_and_grad(params, batch)?;
    let total = params.numel();
    let mut rng = keyed_rng(seed, &[tag::PROBE]);
    let mut report = GradCheck {
        probes,
        max_rel_error: 0.0,
        worst: (0, 0, 0.0, 0.0),
    };
    let central = |p: usize, i: usize, step: f64| -> Result<f64, ModelError> {
        let mut plus = params.clone();
        plus.get_mut(p).data_mut()[i] += step;
        let mut minus = params.clone();
        minus.get_mut(p).data_mut()[i] -= step;
        Ok((task.loss(&plus, batch)? - task.loss(&minus, batch)?) / (2.0 * step))
    };
    for _ in 0..probes {
        let mut flat = rng.random_range(0..total);
        let mut p = 0;
        while flat >= params.get(p).len() {
            flat -= params.get(p).len();
            p += 1;
        }
        let numeric = (4.0 * central(p, flat, h / 2.0)? - central(p, flat, h)?) / 3.0;
        let analytic = grad.get(p).data()[flat];
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(GRAD_CHECK_FLOOR);
        if rel >= report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = (p, flat, analytic, numeric);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn near_square_shapes() {
        assert_eq!(near_square(12), (3, 4));
        assert_eq!(near_square(16), (4, 4));
        assert_eq!(near_square(7), (1, 7));
        assert_eq!(near_square(1), (1, 1));
    }

    #[test]
    fn bowl_gradient_vanishes_at_optimum_without_noise() {
        let t = QuadraticBowl::new(12, 10.0, 0.0, 3).unwrap();
        let b = batch_at(&t, 0, 0, 0..4).unwrap();
        let (loss, g) = t.loss_and_grad(&t.optimum(), &b).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.get(0).is_zero());
    }

    #[test]
    fn bowl_condition_one_is_identity() {
        let t = QuadraticBowl::new(6, 1.0, 0.0, 3).unwrap();
        assert!(t.hessian().bitwise_eq(&Matrix::identity(6)));
    }

    #[test]
    fn bowl_gradient_descent_converges_at_closed_form_rate() {
        let kappa = 4.0;
        let t = QuadraticBowl::new(9, kappa, 0.0, 5).unwrap();
        let b = batch_at(&t, 0, 0, 0..1).unwrap();
        // Step 1/lambda_max contracts every eigendirection by at least
        // (1 - 1/kappa) per step, so the loss by (1 - 1/kappa)^2.
        let lr = 1.0 / kappa;
        let mut p = t.init_params();
        let l0 = t.eval_loss(&p).unwrap();
        let steps = 80;
        for _ in 0..steps {
            let (_, g) = t.loss_and_grad(&p, &b).unwrap();
            p.get_mut(0).axpy(-lr, g.get(0)).unwrap();
        }
        let bound = l0 * (1.0 - 1.0 / kappa).powi(2 * steps);
        let l = t.eval_loss(&p).unwrap();
        assert!(l <= bound * (1.0 + 1e-9) + 1e-300, "{l} > {bound}");
        assert!(l < 1e-6);
    }

    #[test]
    fn mlp_zero_input_gives_zero_first_layer_grad() {
        let t = two_layer_mlp(3, 5, 2, 1).unwrap();
        let b = Batch {
            x: Matrix::zeros(4, 3),
            y: Some(Matrix::filled(4, 2, 1.0)),
        };
        let (_, g) = t.loss_and_grad(&t.init_params(), &b).unwrap();
        assert!(g.by_name("w0").unwrap().is_zero());
    }

    #[test]
    fn mlp_teacher_is_a_zero_of_noise_free_loss() {
        let t = Mlp::new(&[4, 6, 3], true, 0.0, 9).unwrap();
        let b = batch_at(&t, 2, 0, 0..16).unwrap();
        let (loss, g) = t.loss_and_grad(t.teacher(), &b).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.tensors().iter().all(Matrix::is_zero));
    }

    #[test]
    fn mlp_hidden_flags() {
        let t = two_layer_mlp(4, 8, 3, 0).unwrap();
        let flags: Vec<(&str, bool)> = t.decls().iter().map(|d| (d.name.as_str(), d.hidden)).collect();
        assert_eq!(flags, [("w0", true), ("b0", false), ("w1", false), ("b1", false)]);
    }

    #[test]
    fn gradient_checks_pass() {
        let bowl = QuadraticBowl::new(20, 50.0, 0.5, 4).unwrap();
        let net = Mlp::new(&[5, 7, 6, 3], true, 0.1, 4).unwrap();
        let tasks: [&dyn ModelTask; 2] = [&bowl, &net];
        for t in tasks {
            let mut p = t.init_params();
            for m in p.tensors_mut() {
                for (i, x) in m.data_mut().iter_mut().enumerate() {
                    *x += 0.3 * ((i as f64) * 1.7).sin();
                }
            }
            let b = batch_at(t, 11, 0, 0..8).unwrap();
            let r = gradient_check(t, &p, &b, 100, 1e-4, 1).unwrap();
            assert!(r.max_rel_error < 1e-5, "{}: {r:?}", t.name());
        }
    }

    #[test]
    fn batches_are_reproducible() {
        let t = two_layer_mlp(3, 4, 2, 8).unwrap();
        let a = batch_at(&t, 5, 17, [3, 9]).unwrap();
        let b = batch_at(&t, 5, 17, [3, 9]).unwrap();
        let c = batch_at(&t, 5, 18, [3, 9]).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn task_spec_roundtrip() {
        let s = TaskSpec::Mlp {
            widths: vec![8, 8, 8],
            bias: false,
            noise: 0.05,
            seed: 3,
        };
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<TaskSpec>(&json).unwrap(), s);
        assert_eq!(s.build().unwrap().decls().len(), 2);
    }
}
