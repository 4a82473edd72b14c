//! `muloco run`: executes a config's run grid.

use std::path::Path;

use serde::Serialize;

use muloco::engine::{run, RunResult};
use muloco::evalsmooth::smoothed_final_loss;

use crate::config::{self, ExperimentConfig, ResolvedRun};
use crate::dump;
use crate::manifest::OutDir;
use crate::CliError;

#[derive(Serialize)]
struct RoundRow {
    round: usize,
    step: u64,
    eval_loss: f64,
    train_loss: f64,
    payload_bits: u64,
    sent_bits: f64,
    received_bits: f64,
}

#[derive(Serialize)]
struct EventRow {
    round: usize,
    step: u64,
    subset: usize,
    payload_bits: u64,
    sent_bits: f64,
}

#[derive(Serialize)]
struct StepNormRow<'a> {
    round: usize,
    worker: usize,
    step: u64,
    parameter: &'a str,
    norm: f64,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    run_id: &'a str,
    label: &'a str,
    workers: usize,
    inner_steps: usize,
    global_batch: usize,
    seed: u64,
    steps: u64,
    final_eval_loss: f64,
    smoothed_final_loss: f64,
    total_sent_bits: f64,
}

pub fn cmd_run(config_path: &Path, out: &Path, threads: usize, seed_override: Option<u64>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(config_path).map_err(|e| CliError::config_io(config_path, e))?;
    let cfg: ExperimentConfig = config::parse(&text)?;
    let runs = cfg.expand(seed_override)?;
    cfg.task
        .build()
        .map_err(|e| CliError::Config(format!("task: {e}")))?;

    let mut top = OutDir::create(out)?;
    let mut summary = Vec::with_capacity(runs.len());
    for r in &runs {
        let result = execute(r, threads)?;
        let smoothed = write_run(r, &result, &out.join(&r.id))?;
        summary.push((r, result.logs.last().map_or(f64::NAN, |l| l.eval_loss), smoothed, total_sent(&result)));
    }
    let rows: Vec<SummaryRow> = summary
        .iter()
        .map(|(r, last, smoothed, sent)| SummaryRow {
            run_id: &r.id,
            label: &r.label,
            workers: r.run.workers,
            inner_steps: r.run.inner_steps,
            global_batch: r.run.global_batch,
            seed: r.run.seed,
            steps: r.run.total_steps(),
            final_eval_loss: *last,
            smoothed_final_loss: *smoothed,
            total_sent_bits: *sent,
        })
        .collect();
    top.write_csv("summary.csv", &rows)?;
    let seed = seed_override.or(Some(cfg.run.seed));
    top.finish("run", seed, &GridRecord { config: &cfg, runs: &runs })
}

#[derive(Serialize)]
struct GridRecord<'a> {
    config: &'a ExperimentConfig,
    runs: &'a [ResolvedRun],
}

fn execute(r: &ResolvedRun, threads: usize) -> Result<RunResult, CliError> {
    let task = r.task.build().map_err(|e| CliError::Config(format!("task: {e}")))?;
    run(&r.run, task.as_ref(), threads).map_err(|e| {
        let label = if r.label.is_empty() {
            String::new()
        } else {
            format!(" ({})", r.label)
        };
        CliError::Runtime(format!("{}{label}: {e}", r.id))
    })
}

fn total_sent(result: &RunResult) -> f64 {
    result.logs.iter().map(|l| l.comm.sent_bits).sum()
}

/// Writes one run's files and returns its smoothed final loss.
fn write_run(r: &ResolvedRun, result: &RunResult, dir: &Path) -> Result<f64, CliError> {
    let mut out = OutDir::create(dir)?;
    let rounds: Vec<RoundRow> = result
        .logs
        .iter()
        .map(|l| RoundRow {
            round: l.round,
            step: l.step,
            eval_loss: l.eval_loss,
            train_loss: l.train_loss,
            payload_bits: l.comm.payload_bits,
            sent_bits: l.comm.sent_bits,
            received_bits: l.comm.received_bits,
        })
        .collect();
    out.write_csv("rounds.csv", &rounds)?;

    let events: Vec<EventRow> = result
        .logs
        .iter()
        .flat_map(|l| {
            l.events.iter().map(move |e| EventRow {
                round: l.round,
                step: e.step,
                subset: e.subset,
                payload_bits: e.comm.payload_bits,
                sent_bits: e.comm.sent_bits,
            })
        })
        .collect();
    out.write_csv("events.csv", &events)?;

    if r.analytics.step_norms {
        let names = result.params.names();
        let rows: Vec<StepNormRow> = result
            .logs
            .iter()
            .flat_map(|l| {
                l.step_norms.iter().map(move |n| StepNormRow {
                    round: l.round,
                    worker: n.worker,
                    step: n.step,
                    parameter: &names[n.param],
                    norm: n.norm,
                })
            })
            .collect();
        out.write_csv("step_norms.csv", &rows)?;
    }

    if r.analytics.dump_snapshots {
        for l in &result.logs {
            if let Some(snap) = &l.snapshot {
                let bytes = dump::encode(snap, r.analytics.dump_steps);
                out.write(&format!("dumps/round_{:04}.bin", l.round), &bytes)?;
            }
        }
    }

    let points: Vec<(u64, f64)> = result.logs.iter().map(|l| (l.step, l.eval_loss)).collect();
    let smoothed = smoothed_final_loss(&points, r.analytics.smoothing_alpha, r.run.inner_steps as u64)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", r.id)))?;
    out.write_csv("final_loss.csv", &[FinalLoss {
        run_id: &r.id,
        smoothing_alpha: r.analytics.smoothing_alpha,
        smoothed_final_loss: smoothed,
    }])?;
    out.finish("run", Some(r.run.seed), r)?;
    Ok(smoothed)
}

#[derive(Serialize)]
struct FinalLoss<'a> {
    run_id: &'a str,
    smoothing_alpha: f64,
    smoothed_final_loss: f64,
}
