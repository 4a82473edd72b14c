//! Experiment config files and sweep expansion.

use serde::{Deserialize, Serialize};

use muloco::compress::CompressorSpec;
use muloco::engine::RunConfig;
use muloco::model_zoo::TaskSpec;

use crate::CliError;

/// Default EMA smoothing coefficient for the final-loss estimate.
pub const DEFAULT_SMOOTHING: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub task: TaskSpec,
    pub run: RunConfig,
    #[serde(default)]
    pub analytics: AnalyticsConfig,
    #[serde(default)]
    pub sweep: Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticsConfig {
    /// Write one binary snapshot per round under `dumps/`.
    #[serde(default)]
    pub dump_snapshots: bool,
    /// Include every inner step in the dumps (needed for the audit).
    #[serde(default)]
    pub dump_steps: bool,
    /// Write `step_norms.csv`.
    #[serde(default)]
    pub step_norms: bool,
    #[serde(default = "default_smoothing")]
    pub smoothing_alpha: f64,
}

fn default_smoothing() -> f64 {
    DEFAULT_SMOOTHING
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        Self {
            dump_snapshots: false,
            dump_steps: false,
            step_norms: false,
            smoothing_alpha: DEFAULT_SMOOTHING,
        }
    }
}

/// Lists of values to grid over. Keys expand in alphabetical order, the
/// first key varying slowest.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compressor: Vec<CompressorSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub global_batch: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inner_steps: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lr: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seed: Vec<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub streaming_partitions: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub workers: Vec<usize>,
}

impl Sweep {
    fn axes(&self) -> [(&'static str, usize); 7] {
        [
            ("compressor", self.compressor.len()),
            ("global_batch", self.global_batch.len()),
            ("inner_steps", self.inner_steps.len()),
            ("lr", self.lr.len()),
            ("seed", self.seed.len()),
            ("streaming_partitions", self.streaming_partitions.len()),
            ("workers", self.workers.len()),
        ]
    }

    fn apply(&self, key: &str, i: usize, run: &mut RunConfig) -> String {
        match key {
            "compressor" => {
                run.compressor = self.compressor[i];
                format!("compressor={}", compressor_label(&self.compressor[i]))
            }
            "global_batch" => {
                run.global_batch = self.global_batch[i];
                format!("global_batch={}", self.global_batch[i])
            }
            "inner_steps" => {
                run.inner_steps = self.inner_steps[i];
                format!("inner_steps={}", self.inner_steps[i])
            }
            "lr" => {
                run.inner.lr = self.lr[i];
                format!("lr={}", self.lr[i])
            }
            "seed" => {
                run.seed = self.seed[i];
                format!("seed={}", self.seed[i])
            }
            "streaming_partitions" => {
                run.streaming_partitions = self.streaming_partitions[i];
                format!("streaming_partitions={}", self.streaming_partitions[i])
            }
            "workers" => {
                run.workers = self.workers[i];
                format!("workers={}", self.workers[i])
            }
            _ => unreachable!("unknown sweep axis {key}"),
        }
    }
}

/// Short stable name for a compressor spec.
pub fn compressor_label(spec: &CompressorSpec) -> String {
    use muloco::compress::{Codec, Granularity, QuantScheme};
    let codec = match spec.codec {
        Codec::None => "none".to_string(),
        Codec::Topk { k_pct } => format!("topk{k_pct}"),
        Codec::Quant {
            bits,
            scheme,
            granularity,
        } => {
            let s = match scheme {
                QuantScheme::Linear => "lin",
                QuantScheme::Statistical => "stat",
            };
            let g = match granularity {
                Granularity::Global => "global",
                Granularity::Rowwise => "row",
            };
            format!("q{bits}{s}-{g}")
        }
    };
    if spec.error_feedback {
        format!("{codec}+ef{}", spec.ef_beta)
    } else {
        codec
    }
}

/// One point of the expanded grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedRun {
    pub id: String,
    /// Swept `key=value` pairs, comma-joined; empty without a sweep.
    pub label: String,
    pub task: TaskSpec,
    pub run: RunConfig,
    pub analytics: AnalyticsConfig,
}

pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

impl ExperimentConfig {
    /// Expands the sweep into runs `run-0000`, `run-0001`, ... in
    /// lexicographic order of the axis indices.
    pub fn expand(&self, seed_override: Option<u64>) -> Result<Vec<ResolvedRun>, CliError> {
        if seed_override.is_some() && !self.sweep.seed.is_empty() {
            return Err(CliError::Config(
                "sweep.seed: cannot be combined with --seed-override".into(),
            ));
        }
        if !(self.analytics.smoothing_alpha > 0.0 && self.analytics.smoothing_alpha <= 1.0) {
            return Err(CliError::Config("analytics.smoothing_alpha: must be in (0, 1]".into()));
        }
        let axes: Vec<(&str, usize)> = self.sweep.axes().into_iter().filter(|(_, n)| *n > 0).collect();
        let total: usize = axes.iter().map(|(_, n)| n).product();
        let mut out = Vec::with_capacity(total);
        for flat in 0..total {
            let mut run = self.run.clone();
            if let Some(s) = seed_override {
                run.seed = s;
            }
            run.snapshots = self.analytics.dump_snapshots;
            run.step_norms = self.analytics.step_norms;
            let mut rem = flat;
            let mut idx = vec![0; axes.len()];
            for (slot, (_, n)) in axes.iter().enumerate().rev() {
                idx[slot] = rem % n;
                rem /= n;
            }
            let label = axes
                .iter()
                .zip(&idx)
                .map(|((key, _), &i)| self.sweep.apply(key, i, &mut run))
                .collect::<Vec<_>>()
                .join(",");
            let id = format!("run-{flat:04}");
            run.validate()
                .map_err(|e| CliError::Config(format!("{id} ({label}): {e}")))?;
            out.push(ResolvedRun {
                id,
                label,
                task: self.task.clone(),
                run,
                analytics: self.analytics.clone(),
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
task = { task = "quadratic_bowl", dim = 8, condition = 10.0, seed = 1 }

[run]
workers = 2
inner_steps = 4
rounds = 2
global_batch = 4
inner = { algorithm = "muon", lr = 0.02 }
"#;

    #[test]
    fn sweep_order_is_alphabetical_slowest_first() {
        let text = format!("{BASE}\n[sweep]\nworkers = [1, 2]\ninner_steps = [2, 4]\n");
        let runs = parse(&text).unwrap().expand(None).unwrap();
        let labels: Vec<&str> = runs.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(
            labels,
            [
                "inner_steps=2,workers=1",
                "inner_steps=2,workers=2",
                "inner_steps=4,workers=1",
                "inner_steps=4,workers=2"
            ]
        );
        assert_eq!(runs[3].id, "run-0003");
    }

    #[test]
    fn unknown_key_is_named() {
        let text = BASE.replace("rounds = 2", "rounds = 2\nrondz = 3");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("rondz"), "{err}");
    }

    #[test]
    fn invalid_grid_point_is_a_config_error() {
        let text = format!("{BASE}\n[sweep]\nworkers = [3]\n");
        let err = parse(&text).unwrap().expand(None).unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        assert!(err.to_string().contains("workers=3"));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = parse(BASE).unwrap();
        let run = &cfg.expand(Some(5)).unwrap()[0];
        let json = serde_json::to_string(run).unwrap();
        let back: ResolvedRun = serde_json::from_str(&json).unwrap();
        assert_eq!(&back, run);
        assert_eq!(back.run.seed, 5);
    }
}
