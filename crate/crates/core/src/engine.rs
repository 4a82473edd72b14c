//! The local-update training loop.
//!
//! `K` workers each take `H` inner steps from the shared global parameters,
//! their displacements are (optionally) compressed and averaged into a
//! pseudogradient, and the outer Nesterov step produces the next global
//! parameters, which every worker then adopts. With `J > 1` streaming
//! partitions the parameter list is split into `J` contiguous subsets and
//! subset `j` (1-based) synchronizes whenever the step count is congruent
//! to `j * H / J` modulo `H`.
//!
//! Workers run on a rayon pool; every cross-worker reduction happens on the
//! coordinator in ascending worker order and all randomness is keyed by
//! `(seed, step, example)`, so results do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compress::{
    collective_reduce, ef_wrap, encode, CommStats, CompressError, CompressorSpec, EncodedDelta,
};
use crate::inner_optim::{param_step, OptimConfig, OptimError, ParamOptState};
use crate::linalg::{frobenius_norm, Matrix};
use crate::model_zoo::{batch_at, ModelError, ModelTask};
use crate::outer_optim::{mean_matrices, outer_step_matrix, OuterConfig, OuterError};
use crate::params::ParamSet;

/// Losses above this (or non-finite) abort the run.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Outer(#[from] OuterError),
    #[error(transparent)]
    Compress(#[from] CompressError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("diverged at round {round}, worker {worker}, step {step}: loss {loss}")]
    Diverged {
        round: usize,
        worker: usize,
        step: u64,
        loss: f64,
    },
    #[error("thread pool: {0}")]
    Pool(String),
}

impl From<crate::linalg::LinalgError> for EngineError {
    fn from(e: crate::linalg::LinalgError) -> Self {
        Self::Optim(OptimError::Linalg(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    #[default]
    CosineToTenth,
}

/// Learning-rate multiplier at `step` of `total`: cosine from 1 at step 0
/// to 0.1 at the final step, or 1 throughout for the constant schedule.
pub fn lr_factor(step: u64, total: u64, schedule: LrSchedule) -> f64 {
    match schedule {
        LrSchedule::Constant => 1.0,
        LrSchedule::CosineToTenth => {
            if total <= 1 {
                return 1.0;
            }
            let progress = step.min(total - 1) as f64 / (total - 1) as f64;
            0.1 + 0.9 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

pub fn lr_at(step: u64, total: u64, lr_max: f64, schedule: LrSchedule) -> f64 {
    lr_max * lr_factor(step, total, schedule)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub workers: usize,
    pub inner_steps: usize,
    pub rounds: usize,
    pub inner: OptimConfig,
    #[serde(default)]
    pub outer: OuterConfig,
    #[serde(default)]
    pub compressor: CompressorSpec,
    #[serde(default = "one")]
    pub streaming_partitions: usize,
    pub global_batch: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    /// Zero every worker's inner optimizer state after each sync.
    #[serde(default)]
    pub reset_inner_state: bool,
    /// Keep worker deltas, pseudogradients and per-step updates per round.
    #[serde(default)]
    pub snapshots: bool,
    /// Keep per-step Frobenius norms of every worker's updates.
    #[serde(default)]
    pub step_norms: bool,
}

fn one() -> usize {
    1
}

impl RunConfig {
    pub fn new(workers: usize, inner_steps: usize, rounds: usize, inner: OptimConfig, global_batch: usize) -> Self {
        Self {
            workers,
            inner_steps,
            rounds,
            inner,
            outer: OuterConfig::default(),
            compressor: CompressorSpec::none(),
            streaming_partitions: 1,
            global_batch,
            seed: 0,
            lr_schedule: LrSchedule::CosineToTenth,
            reset_inner_state: false,
            snapshots: false,
            step_norms: false,
        }
    }

    pub fn total_steps(&self) -> u64 {
        (self.rounds * self.inner_steps) as u64
    }

    pub fn per_worker_batch(&self) -> usize {
        self.global_batch / self.workers.max(1)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::Config(m.into()));
        if self.workers == 0 || self.inner_steps == 0 || self.rounds == 0 {
            return bad("workers, inner_steps and rounds must be >= 1");
        }
        if self.global_batch == 0 || self.global_batch % self.workers != 0 {
            return bad("global_batch must be a positive multiple of workers");
        }
        if self.streaming_partitions == 0 || self.inner_steps % self.streaming_partitions != 0 {
            return bad("streaming_partitions must divide inner_steps");
        }
        self.inner.validate()?;
        self.outer.validate()?;
        self.compressor.validate()?;
        Ok(())
    }
}

/// Contiguous parameter subsets and their sync offsets within a round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamingPlan {
    pub subsets: Vec<Vec<usize>>,
    /// `offsets[j] = (j + 1) * H / J`, in steps from the start of a round.
    pub offsets: Vec<usize>,
    pub inner_steps: usize,
}

impl StreamingPlan {
    /// Subset synchronizing after `step` total steps, if any.
    pub fn subset_at(&self, step: u64) -> Option<usize> {
        let within = (step % self.inner_steps as u64) as usize;
        let within = if within == 0 { self.inner_steps } else { within };
        self.offsets.iter().position(|&o| o == within)
    }

    pub fn segment_len(&self) -> usize {
        self.inner_steps / self.offsets.len()
    }
}

/// Splits `sizes` (element counts in declaration order) into `partitions`
/// contiguous non-empty groups minimizing the largest group.
pub fn streaming_round_plan(
    inner_steps: usize,
    partitions: usize,
    sizes: &[usize],
) -> Result<StreamingPlan, EngineError> {
    if partitions == 0 || inner_steps % partitions != 0 {
        return Err(EngineError::Config(format!(
            "{partitions} partitions do not divide {inner_steps} inner steps"
        )));
    }
    let n = sizes.len();
    if partitions > n {
        return Err(EngineError::Config(format!(
            "{partitions} partitions exceed {n} parameters"
        )));
    }
    let prefix: Vec<usize> = std::iter::once(0)
        .chain(sizes.iter().scan(0, |acc, &s| {
            *acc += s;
            Some(*acc)
        }))
        .collect();
    // best[j][i]: minimal max group size splitting the first i params into j groups.
    let inf = usize::MAX;
    let mut best = vec![vec![inf; n + 1]; partitions + 1];
    let mut cut = vec![vec![0usize; n + 1]; partitions + 1];
    best[0][0] = 0;
    for j in 1..=partitions {
        for i in j..=n {
            for s in (j - 1)..i {
                if best[j - 1][s] == inf {
                    continue;
                }
                let cost = best[j - 1][s].max(prefix[i] - prefix[s]);
                if cost < best[j][i] {
                    best[j][i] = cost;
                    cut[j][i] = s;
                }
            }
        }
    }
    let mut bounds = vec![n];
    let mut i = n;
    for j in (1..=partitions).rev() {
        i = cut[j][i];
        bounds.push(i);
    }
    bounds.reverse();
    let subsets = bounds.windows(2).map(|w| (w[0]..w[1]).collect()).collect();
    let seg = inner_steps / partitions;
    Ok(StreamingPlan {
        subsets,
        offsets: (1..=partitions).map(|j| j * seg).collect(),
        inner_steps,
    })
}

/// Global-batch example indices used by `worker`: those congruent to it
/// modulo the worker count.
pub fn worker_example_indices(worker: usize, workers: usize, global_batch: usize) -> impl Iterator<Item = u64> {
    (worker as u64..global_batch as u64).step_by(workers.max(1))
}

/// Parameters plus inner optimizer state to start a run from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: ParamSet,
    pub states: Vec<ParamOptState>,
    /// Steps already consumed; data keys continue after it.
    pub step: u64,
}

/// One worker's update to every parameter at one inner step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    /// `theta_before - theta_after` per parameter.
    pub applied: ParamSet,
    /// Learning rate multiplying the update direction, per parameter.
    pub lr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepNorm {
    pub worker: usize,
    pub step: u64,
    pub param: usize,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSnapshot {
    /// Global parameters at the start of the round.
    pub global_before: ParamSet,
    /// Uncompressed worker displacements, ascending worker order.
    pub worker_deltas: Vec<ParamSet>,
    /// Pseudogradient as delivered by the collective.
    pub pseudogradient: ParamSet,
    /// `steps[k]` lists worker k's inner steps of the round.
    pub steps: Vec<Vec<StepRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncEvent {
    pub step: u64,
    pub subset: usize,
    pub comm: CommStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    /// 1-based.
    pub round: usize,
    /// Steps completed at the end of the round.
    pub step: u64,
    pub eval_loss: f64,
    /// Mean minibatch loss over workers and inner steps.
    pub train_loss: f64,
    pub comm: CommStats,
    pub events: Vec<SyncEvent>,
    pub snapshot: Option<RoundSnapshot>,
    pub step_norms: Vec<StepNorm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub params: ParamSet,
    pub logs: Vec<RoundLog>,
    pub plan: StreamingPlan,
    /// Worker 0's final parameters and inner state.
    pub worker0: Checkpoint,
}

#[derive(Debug, Clone)]
struct Worker {
    id: usize,
    theta: ParamSet,
    states: Vec<ParamOptState>,
    residuals: Vec<Matrix>,
}

struct SegmentOut {
    loss_sum: f64,
    records: Vec<StepRecord>,
    norms: Vec<StepNorm>,
}

struct StepCtx<'a> {
    task: &'a dyn ModelTask,
    inner: &'a OptimConfig,
    seed: u64,
    workers: usize,
    global_batch: usize,
    step_offset: u64,
    total: u64,
    schedule: LrSchedule,
    record: bool,
    norms: bool,
    round: usize,
}

impl Worker {
    fn run_segment(&mut self, ctx: &StepCtx<'_>, from: u64, len: usize) -> Result<SegmentOut, EngineError> {
        let mut out = SegmentOut {
            loss_sum: 0.0,
            records: Vec::new(),
            norms: Vec::new(),
        };
        for step in from..from + len as u64 {
            let indices = worker_example_indices(self.id, ctx.workers, ctx.global_batch);
            let batch = batch_at(ctx.task, ctx.seed, ctx.step_offset + step, indices)?;
            let (loss, grad) = ctx.task.loss_and_grad(&self.theta, &batch)?;
            if !loss.is_finite() || loss > DIVERGENCE_THRESHOLD {
                return Err(EngineError::Diverged {
                    round: ctx.round,
                    worker: self.id,
                    step: ctx.step_offset + step,
                    loss,
                });
            }
            out.loss_sum += loss;
            let scale = lr_factor(step, ctx.total, ctx.schedule);
            let mut applied = ParamSet::new();
            let mut lrs = Vec::new();
            for i in 0..self.theta.len() {
                let res = param_step(self.theta.get(i), grad.get(i), &self.states[i], ctx.inner, scale)?;
                if ctx.record || ctx.norms {
                    let d = self.theta.get(i).sub(&res.theta)?;
                    if ctx.norms {
                        out.norms.push(StepNorm {
                            worker: self.id,
                            step: ctx.step_offset + step,
                            param: i,
                            norm: frobenius_norm(&d),
                        });
                    }
                    if ctx.record {
                        applied.push(self.theta.name(i), d);
                        lrs.push(res.effective_lr);
                    }
                }
                *self.theta.get_mut(i) = res.theta;
                self.states[i] = res.state;
            }
            if ctx.record {
                out.records.push(StepRecord {
                    step: ctx.step_offset + step,
                    applied,
                    lr: lrs,
                });
            }
        }
        Ok(out)
    }
}

fn fresh_states(task: &dyn ModelTask, inner: &OptimConfig) -> Vec<ParamOptState> {
    task.decls()
        .iter()
        .map(|d| ParamOptState::for_param(d, inner))
        .collect()
}

fn build_pool(threads: usize) -> Result<rayon::ThreadPool, EngineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| EngineError::Pool(e.to_string()))
}

/// Runs the configured training. `threads = 0` uses all hardware threads.
pub fn run(cfg: &RunConfig, task: &dyn ModelTask, threads: usize) -> Result<RunResult, EngineError> {
    run_from(cfg, task, None, threads)
}

pub fn run_from(
    cfg: &RunConfig,
    task: &dyn ModelTask,
    start: Option<&Checkpoint>,
    threads: usize,
) -> Result<RunResult, EngineError> {
    cfg.validate()?;
    let sizes: Vec<usize> = task.decls().iter().map(|d| d.numel()).collect();
    let plan = streaming_round_plan(cfg.inner_steps, cfg.streaming_partitions, &sizes)?;
    let (mut global, init_states, step_offset) = match start {
        Some(c) => (c.params.clone(), c.states.clone(), c.step),
        None => (task.init_params(), fresh_states(task, &cfg.inner), 0),
    };
    if global.len() != sizes.len() || init_states.len() != sizes.len() {
        return Err(EngineError::Config("checkpoint does not match the task".into()));
    }
    let mut u = global.zeros_like();
    let mut workers: Vec<Worker> = (0..cfg.workers)
        .map(|id| Worker {
            id,
            theta: global.clone(),
            states: init_states.clone(),
            residuals: global.tensors().iter().map(Matrix::zeros_like).collect(),
        })
        .collect();
    let pool = build_pool(threads)?;
    let record = cfg.snapshots;
    // Plain averaging of exactly communicated deltas adopts the averaged
    // worker endpoint directly instead of reconstructing it as
    // `theta - psi`, which would not round-trip in floating point.
    let adopt_endpoint = cfg.outer.is_plain_averaging() && cfg.compressor.is_lossless();
    let seg = plan.segment_len();
    let mut logs = Vec::with_capacity(cfg.rounds);

    for round in 1..=cfg.rounds {
        let round_start = ((round - 1) * cfg.inner_steps) as u64;
        let global_before = global.clone();
        let mut loss_sum = 0.0;
        let mut records: Vec<Vec<StepRecord>> = vec![Vec::new(); cfg.workers];
        let mut norms = Vec::new();
        let mut events = Vec::new();
        let mut round_comm = CommStats::default();
        let mut deltas: Vec<Vec<Option<Matrix>>> = vec![vec![None; global.len()]; cfg.workers];
        let mut psi_parts: Vec<Option<Matrix>> = vec![None; global.len()];

        for s in 0..plan.offsets.len() {
            let from = round_start + (s * seg) as u64;
            let ctx = StepCtx {
                task,
                inner: &cfg.inner,
                seed: cfg.seed,
                workers: cfg.workers,
                global_batch: cfg.global_batch,
                step_offset,
                total: cfg.total_steps(),
                schedule: cfg.lr_schedule,
                record,
                norms: cfg.step_norms,
                round,
            };
            let outs: Vec<Result<SegmentOut, EngineError>> = pool.install(|| {
                workers
                    .par_iter_mut()
                    .map(|w| w.run_segment(&ctx, from, seg))
                    .collect()
            });
            for (k, o) in outs.into_iter().enumerate() {
                let o = o?;
                loss_sum += o.loss_sum;
                records[k].extend(o.records);
                norms.extend(o.norms);
            }

            let now = from + seg as u64;
            let subset = plan.subset_at(now).expect("segment ends on a sync offset");
            let mut event_comm = CommStats::default();
            for &p in &plan.subsets[subset] {
                let base = global.get(p).clone();
                let spec = cfg.compressor;
                let encoded: Vec<Result<(Matrix, EncodedDelta, Option<Matrix>), EngineError>> =
                    pool.install(|| {
                        workers
                            .par_iter()
                            .map(|w| {
                                let delta = base.sub(w.theta.get(p))?;
                                if spec.error_feedback {
                                    let (e, r) = ef_wrap(&delta, &w.residuals[p], &spec)?;
                                    Ok((delta, e, Some(r)))
                                } else {
                                    let e = encode(&delta, &spec);
                                    Ok((delta, e, None))
                                }
                            })
                            .collect()
                    });
                let mut payloads = Vec::with_capacity(cfg.workers);
                for (k, item) in encoded.into_iter().enumerate() {
                    let (delta, e, r) = item?;
                    if let Some(r) = r {
                        workers[k].residuals[p] = r;
                    }
                    if record {
                        deltas[k][p] = Some(delta);
                    }
                    payloads.push(e);
                }
                let (psi, comm) = collective_reduce(&payloads, &spec)?;
                event_comm.merge(&comm);
                let (next, u_next) = outer_step_matrix(&base, &psi, u.get(p), &cfg.outer)?;
                let next = if adopt_endpoint {
                    let ends: Vec<&Matrix> = workers.iter().map(|w| w.theta.get(p)).collect();
                    mean_matrices(&ends)?
                } else {
                    next
                };
                *u.get_mut(p) = u_next;
                for w in workers.iter_mut() {
                    *w.theta.get_mut(p) = next.clone();
                    if cfg.reset_inner_state {
                        w.states[p] = ParamOptState::for_param(&task.decls()[p], &cfg.inner);
                    }
                }
                *global.get_mut(p) = next;
                if record {
                    psi_parts[p] = Some(psi);
                }
            }
            round_comm.merge(&event_comm);
            events.push(SyncEvent {
                step: step_offset + now,
                subset,
                comm: event_comm,
            });
        }

        let eval_loss = task.eval_loss(&global)?;
        if !eval_loss.is_finite() || eval_loss > DIVERGENCE_THRESHOLD {
            return Err(EngineError::Diverged {
                round,
                worker: 0,
                step: step_offset + (round * cfg.inner_steps) as u64,
                loss: eval_loss,
            });
        }
        let snapshot = if record {
            let names = global.names().to_vec();
            let assemble = |parts: Vec<Option<Matrix>>| {
                ParamSet::from_parts(names.clone(), parts.into_iter().map(Option::unwrap).collect())
            };
            Some(RoundSnapshot {
                global_before,
                worker_deltas: deltas.into_iter().map(assemble).collect(),
                pseudogradient: assemble(psi_parts),
                steps: records,
            })
        } else {
            None
        };
        logs.push(RoundLog {
            round,
            step: step_offset + (round * cfg.inner_steps) as u64,
            eval_loss,
            train_loss: loss_sum / (cfg.workers * cfg.inner_steps) as f64,
            comm: round_comm,
            events,
            snapshot,
            step_norms: norms,
        });
    }

    let w0 = &workers[0];
    Ok(RunResult {
        params: global,
        logs,
        plan,
        worker0: Checkpoint {
            params: w0.theta.clone(),
            states: w0.states.clone(),
            step: step_offset + cfg.total_steps(),
        },
    })
}

/// Result of single-replica training.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainResult {
    pub checkpoint: Checkpoint,
    /// Minibatch loss at every step.
    pub losses: Vec<f64>,
    pub records: Vec<StepRecord>,
    pub step_norms: Vec<StepNorm>,
}

/// Options for [`train_plain`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlainConfig {
    pub steps: usize,
    pub global_batch: usize,
    pub seed: u64,
    pub lr_schedule: LrSchedule,
    pub record: bool,
    pub step_norms: bool,
}

/// Trains one replica with the inner optimizer alone on the full global
/// batch (the data-parallel baseline).
pub fn train_plain(
    inner: &OptimConfig,
    pc: &PlainConfig,
    task: &dyn ModelTask,
    start: Option<&Checkpoint>,
) -> Result<PlainResult, EngineError> {
    inner.validate()?;
    if pc.global_batch == 0 {
        return Err(EngineError::Config("global_batch must be positive".into()));
    }
    let (theta, states, step_offset) = match start {
        Some(c) => (c.params.clone(), c.states.clone(), c.step),
        None => (task.init_params(), fresh_states(task, inner), 0),
    };
    let mut w = Worker {
        id: 0,
        residuals: Vec::new(),
        theta,
        states,
    };
    let ctx = StepCtx {
        task,
        inner,
        seed: pc.seed,
        workers: 1,
        global_batch: pc.global_batch,
        step_offset,
        total: pc.steps as u64,
        schedule: pc.lr_schedule,
        record: pc.record,
        norms: pc.step_norms,
        round: 0,
    };
    let mut losses = Vec::with_capacity(pc.steps);
    let mut records = Vec::new();
    let mut norms = Vec::new();
    for s in 0..pc.steps as u64 {
        let o = w.run_segment(&ctx, s, 1)?;
        losses.push(o.loss_sum);
        records.extend(o.records);
        norms.extend(o.norms);
    }
    Ok(PlainResult {
        checkpoint: Checkpoint {
            params: w.theta,
            states: w.states,
            step: step_offset + pc.steps as u64,
        },
        losses,
        records,
        step_norms: norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_zoo::{two_layer_mlp, QuadraticBowl};

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(lr_factor(0, 101, LrSchedule::CosineToTenth), 1.0);
        assert!((lr_factor(100, 101, LrSchedule::CosineToTenth) - 0.1).abs() < 1e-15);
        assert!((lr_factor(50, 101, LrSchedule::CosineToTenth) - 0.55).abs() < 1e-15);
        assert_eq!(lr_factor(37, 101, LrSchedule::Constant), 1.0);
    }

    #[test]
    fn plan_offsets() {
        let p = streaming_round_plan(30, 3, &[10, 10, 10]).unwrap();
        assert_eq!(p.offsets, [10, 20, 30]);
        assert_eq!(p.subsets, [vec![0], vec![1], vec![2]]);
        assert_eq!(p.subset_at(10), Some(0));
        assert_eq!(p.subset_at(60), Some(2));
        assert_eq!(p.subset_at(15), None);
        let one = streaming_round_plan(30, 1, &[3, 4]).unwrap();
        assert_eq!(one.offsets, [30]);
        assert_eq!(one.subsets, [vec![0, 1]]);
        let full = streaming_round_plan(4, 4, &[1, 1, 1, 1, 1]).unwrap();
        assert_eq!(full.offsets, [1, 2, 3, 4]);
        assert!(streaming_round_plan(10, 3, &[1, 1, 1]).is_err());
    }

    #[test]
    fn plan_balances_elements() {
        let p = streaming_round_plan(6, 3, &[40, 5, 5, 30, 10, 10]).unwrap();
        assert_eq!(p.subsets, [vec![0], vec![1, 2, 3], vec![4, 5]]);
    }

    #[test]
    fn identical_workers_agree() {
        let task = QuadraticBowl::new(6, 3.0, 0.0, 1).unwrap();
        let mut cfg = RunConfig::new(2, 3, 2, OptimConfig::adamw(0.05), 4);
        cfg.snapshots = true;
        let r = run(&cfg, &task, 1).unwrap();
        let snap = r.logs[0].snapshot.as_ref().unwrap();
        assert!(snap.worker_deltas[0].bitwise_eq(&snap.worker_deltas[1]));
        assert!(snap.pseudogradient.bitwise_eq(&snap.worker_deltas[0]));
    }

    #[test]
    fn invalid_configs_rejected() {
        let task = two_layer_mlp(2, 3, 1, 0).unwrap();
        let mut cfg = RunConfig::new(3, 4, 1, OptimConfig::adamw(0.01), 8);
        assert!(matches!(run(&cfg, &task, 1), Err(EngineError::Config(_))));
        cfg.global_batch = 9;
        cfg.streaming_partitions = 3;
        assert!(matches!(run(&cfg, &task, 1), Err(EngineError::Config(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let task = QuadraticBowl::new(4, 100.0, 0.0, 2).unwrap();
        let mut cfg = RunConfig::new(1, 5, 20, OptimConfig::adamw(1.0), 1);
        cfg.inner.algorithm = crate::inner_optim::Algorithm::Adamw;
        cfg.inner.beta1 = 0.0;
        cfg.inner.beta2 = 0.0;
        // A huge outer learning rate blows the iterate up.
        cfg.outer = OuterConfig::new(1e6, 0.0);
        match run(&cfg, &task, 1) {
            Err(EngineError::Diverged { round, .. }) => assert!(round >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
