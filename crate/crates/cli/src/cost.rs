//! `muloco cost`: wall-clock and utilization curves over bandwidth.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use muloco::costmodel::{estimate_wallclock, event_bits, CostConfig, CostError};

use crate::manifest::OutDir;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostFile {
    /// Per-worker bandwidths to evaluate, bits per second (`inf` allowed).
    #[serde(with = "bandwidths")]
    pub bandwidths_bps: Vec<f64>,
    /// Named scenarios; any `bandwidth_bps` inside is replaced by each
    /// value of `bandwidths_bps` in turn.
    pub scenarios: BTreeMap<String, CostConfig>,
}

/// Bandwidth lists with infinity written as the string `"inf"`, which
/// JSON cannot otherwise hold.
mod bandwidths {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Value {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|x| if x.is_finite() { Value::Number(*x) } else { Value::Text(x.to_string()) })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Value>::deserialize(d)?
            .into_iter()
            .map(|v| match v {
                Value::Number(x) => Ok(x),
                Value::Text(t) => t.parse().map_err(serde::de::Error::custom),
            })
            .collect()
    }
}

#[derive(Serialize)]
struct CurveRow<'a> {
    scenario: &'a str,
    bandwidth_bps: f64,
    compute_s: f64,
    optimizer_s: f64,
    comm_s: f64,
    total_s: f64,
    utilization: f64,
    events: u64,
}

#[derive(Serialize)]
struct EventRow<'a> {
    scenario: &'a str,
    event: usize,
    sent_bits: f64,
}

fn cost_err(name: &str, e: CostError) -> CliError {
    match e {
        CostError::Config(_) | CostError::Compress(_) => CliError::Config(format!("scenarios.{name}: {e}")),
        CostError::Csv(_) => CliError::Runtime(e.to_string()),
    }
}

pub fn parse(text: &str) -> Result<CostFile, CliError> {
    let file: CostFile = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    if file.bandwidths_bps.is_empty() || file.bandwidths_bps.iter().any(|b| !(*b > 0.0)) {
        return Err(CliError::Config("bandwidths_bps: must be a non-empty list of positive values".into()));
    }
    if file.scenarios.is_empty() {
        return Err(CliError::Config("scenarios: at least one scenario is required".into()));
    }
    for (name, s) in &file.scenarios {
        let probe = CostConfig {
            bandwidth_bps: 1.0,
            ..s.clone()
        };
        probe.validate().map_err(|e| cost_err(name, e))?;
    }
    Ok(file)
}

pub fn cmd_cost(config_path: &Path, out: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(config_path).map_err(|e| CliError::config_io(config_path, e))?;
    let file = parse(&text)?;
    let mut curves = Vec::new();
    let mut events = Vec::new();
    for (name, scenario) in &file.scenarios {
        for &bw in &file.bandwidths_bps {
            let cfg = CostConfig {
                bandwidth_bps: bw,
                ..scenario.clone()
            };
            let b = estimate_wallclock(&cfg).map_err(|e| cost_err(name, e))?;
            curves.push(CurveRow {
                scenario: name,
                bandwidth_bps: bw,
                compute_s: b.compute_s,
                optimizer_s: b.optimizer_s,
                comm_s: b.comm_s,
                total_s: b.total_s,
                utilization: b.utilization(),
                events: b.events,
            });
        }
        let probe = CostConfig {
            bandwidth_bps: 1.0,
            ..scenario.clone()
        };
        for (i, bits) in event_bits(&probe).map_err(|e| cost_err(name, e))?.into_iter().enumerate() {
            events.push(EventRow {
                scenario: name,
                event: i,
                sent_bits: bits,
            });
        }
    }
    let mut dir = OutDir::create(out)?;
    dir.write_csv("cost_curves.csv", &curves)?;
    dir.write_csv("round_events.csv", &events)?;
    dir.finish("cost", None, &file)
}
