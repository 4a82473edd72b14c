//! Idealized wall-clock estimates: compute, optimizer and communication time
//! added up with no overlap.
//!
//! A sync event happens once per `H` steps (or `J` times per `H` steps with
//! streaming partitions, each carrying one parameter subset). Every worker
//! sends `volume_factor(K) * payload_bits` per event; the event takes that many
//! bits divided by the per-worker bandwidth.

use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compress::{comm_bytes, Collective, CompressError, CompressorSpec};
use crate::engine::streaming_round_plan;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("invalid cost config: {0}")]
    Config(String),
    #[error(transparent)]
    Compress(#[from] CompressError),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    /// Per-worker link bandwidth in bits per second; may be infinite.
    /// Serialized as a number, or the string `"inf"` when infinite.
    #[serde(default = "unlimited", with = "finite_or_text")]
    pub bandwidth_bps: f64,
    /// Parameter matrix shapes of one replica.
    pub shapes: Vec<(usize, usize)>,
    /// Forward/backward time per step.
    pub compute_s: f64,
    pub optimizer_s: f64,
    pub workers: usize,
    pub inner_steps: usize,
    #[serde(default = "one")]
    pub streaming_partitions: usize,
    #[serde(default)]
    pub compressor: CompressorSpec,
    /// Overrides the codec's default collective.
    #[serde(default)]
    pub collective: Option<Collective>,
    pub steps: u64,
}

fn one() -> usize {
    1
}

fn unlimited() -> f64 {
    f64::INFINITY
}

mod finite_or_text {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Value {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Value::deserialize(d)? {
            Value::Number(x) => Ok(x),
            Value::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl CostConfig {
    /// Single flat parameter vector of `params` fp32 values.
    pub fn flat(params: usize, compute_s: f64, workers: usize, inner_steps: usize, steps: u64) -> Self {
        Self {
            bandwidth_bps: f64::INFINITY,
            shapes: vec![(1, params)],
            compute_s,
            optimizer_s: 0.0,
            workers,
            inner_steps,
            streaming_partitions: 1,
            compressor: CompressorSpec::none(),
            collective: None,
            steps,
        }
    }

    pub fn with_bandwidth(mut self, bps: f64) -> Self {
        self.bandwidth_bps = bps;
        self
    }

    /// Dense fp32 replica size.
    pub fn model_bytes(&self) -> f64 {
        self.shapes.iter().map(|(r, c)| (r * c) as f64 * 4.0).sum()
    }

    pub fn collective(&self) -> Collective {
        self.collective.unwrap_or(self.compressor.collective())
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let bad = |m: &str| Err(CostError::Config(m.to_string()));
        if !(self.bandwidth_bps > 0.0) {
            return bad("bandwidth must be positive");
        }
        if !(self.compute_s > 0.0 && self.compute_s.is_finite()) {
            return bad("compute time must be positive");
        }
        if !(self.optimizer_s >= 0.0 && self.optimizer_s.is_finite()) {
            return bad("optimizer time must be non-negative");
        }
        if self.workers == 0 || self.inner_steps == 0 || self.streaming_partitions == 0 {
            return bad("workers, inner_steps and streaming_partitions must be positive");
        }
        if self.shapes.is_empty() || self.shapes.iter().any(|(r, c)| r * c == 0) {
            return bad("shapes must be non-empty");
        }
        self.compressor.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub compute_s: f64,
    pub optimizer_s: f64,
    pub comm_s: f64,
    pub total_s: f64,
    pub events: u64,
    /// Bits a worker sends over one full round (all partitions).
    pub round_bits: f64,
    /// Largest single sync event.
    pub peak_event_bits: f64,
}

impl CostBreakdown {
    /// Share of the total not spent communicating.
    pub fn utilization(&self) -> f64 {
        (self.total_s - self.comm_s) / self.total_s
    }
}

fn sent_bits(cfg: &CostConfig, shape: (usize, usize)) -> f64 {
    let payload = comm_bytes(&cfg.compressor, shape.0, shape.1).total_bits() as f64;
    cfg.collective().volume_factor(cfg.workers) * payload
}

/// Per-event bits of one round, in sync order.
pub fn event_bits(cfg: &CostConfig) -> Result<Vec<f64>, CostError> {
    cfg.validate()?;
    let sizes: Vec<usize> = cfg.shapes.iter().map(|(r, c)| r * c).collect();
    let plan = streaming_round_plan(cfg.inner_steps, cfg.streaming_partitions, &sizes)
        .map_err(|e| CostError::Config(e.to_string()))?;
    Ok(plan
        .subsets
        .iter()
        .map(|subset| subset.iter().map(|&p| sent_bits(cfg, cfg.shapes[p])).sum())
        .collect())
}

pub fn estimate_wallclock(cfg: &CostConfig) -> Result<CostBreakdown, CostError> {
    let per_event = event_bits(cfg)?;
    let rounds = cfg.steps / cfg.inner_steps as u64;
    let round_bits: f64 = per_event.iter().sum();
    let comm_s = rounds as f64 * per_event.iter().map(|b| b / cfg.bandwidth_bps).sum::<f64>();
    let steps = cfg.steps as f64;
    let compute_s = steps * cfg.compute_s;
    let optimizer_s = steps * cfg.optimizer_s;
    Ok(CostBreakdown {
        compute_s,
        optimizer_s,
        comm_s,
        total_s: steps * (cfg.compute_s + cfg.optimizer_s) + comm_s,
        events: rounds * per_event.len() as u64,
        round_bits,
        peak_event_bits: per_event.iter().copied().fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilizationPoint {
    pub bandwidth_bps: f64,
    pub total_s: f64,
    pub comm_s: f64,
    pub utilization: f64,
}

/// Fraction of time spent computing at each bandwidth.
pub fn compute_utilization(cfg: &CostConfig, bandwidths: &[f64]) -> Result<Vec<UtilizationPoint>, CostError> {
    bandwidths
        .iter()
        .map(|&bw| {
            let b = estimate_wallclock(&CostConfig {
                bandwidth_bps: bw,
                ..cfg.clone()
            })?;
            Ok(UtilizationPoint {
                bandwidth_bps: bw,
                total_s: b.total_s,
                comm_s: b.comm_s,
                utilization: b.utilization(),
            })
        })
        .collect()
}

/// A measured step time (`label,step_seconds`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub label: String,
    pub step_seconds: f64,
}

/// A reference wall-clock estimate (`method,bandwidth_gbps,hours`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallclockRow {
    pub method: String,
    pub bandwidth_gbps: f64,
    pub hours: f64,
}

fn read_rows<T: serde::de::DeserializeOwned, R: Read>(reader: R) -> Result<Vec<T>, CostError> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CostError::Csv(e.to_string()))
}

pub fn read_step_timings<R: Read>(reader: R) -> Result<Vec<StepTiming>, CostError> {
    read_rows(reader)
}

pub fn read_wallclock_table<R: Read>(reader: R) -> Result<Vec<WallclockRow>, CostError> {
    read_rows(reader)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::{Granularity, QuantScheme};

    fn base() -> CostConfig {
        CostConfig {
            shapes: vec![(64, 32), (32, 32), (1, 32)],
            optimizer_s: 0.01,
            ..CostConfig::flat(1, 0.2, 8, 30, 3000)
        }
        .with_bandwidth(1e6)
    }

    #[test]
    fn infinite_bandwidth_is_compute_only() {
        let cfg = base().with_bandwidth(f64::INFINITY);
        let b = estimate_wallclock(&cfg).unwrap();
        assert_eq!(b.comm_s, 0.0);
        assert_eq!(b.total_s, 3000.0 * (0.2 + 0.01));
        assert_eq!(b.utilization(), 1.0);
    }

    #[test]
    fn comm_time_scales_with_sync_interval() {
        let h1 = estimate_wallclock(&CostConfig {
            inner_steps: 1,
            ..base()
        })
        .unwrap();
        let h30 = estimate_wallclock(&base()).unwrap();
        assert_eq!(h1.events, 3000);
        assert_eq!(h30.events, 100);
        assert!((h1.comm_s / h30.comm_s - 30.0).abs() < 1e-12);
    }

    #[test]
    fn single_worker_sends_nothing() {
        let b = estimate_wallclock(&CostConfig { workers: 1, ..base() }).unwrap();
        assert_eq!(b.comm_s, 0.0);
    }

    #[test]
    fn four_bit_is_an_eighth_plus_metadata() {
        let dense = base();
        let q = CostConfig {
            compressor: CompressorSpec::quant(4, QuantScheme::Linear, Granularity::Global),
            collective: Some(Collective::RingAllreduce),
            ..base()
        };
        let (bd, bq) = (estimate_wallclock(&dense).unwrap(), estimate_wallclock(&q).unwrap());
        let factor = Collective::RingAllreduce.volume_factor(8);
        let metadata = factor * (3 * 2 * 32) as f64;
        assert_eq!(bq.round_bits, bd.round_bits / 8.0 + metadata);
    }

    #[test]
    fn utilization_rises_with_bandwidth() {
        let grid: Vec<f64> = (0..12).map(|i| 1e3 * 4f64.powi(i)).collect();
        let pts = compute_utilization(&base(), &grid).unwrap();
        for w in pts.windows(2) {
            assert!(w[1].utilization >= w[0].utilization);
            assert!(w[1].total_s <= w[0].total_s);
        }
        assert!(pts.iter().all(|p| p.utilization > 0.0 && p.utilization <= 1.0));
        let half = compute_utilization(&base(), &[5e5, 1e6]).unwrap();
        assert_eq!(half[0].comm_s, 2.0 * half[1].comm_s);
    }

    #[test]
    fn infinite_bandwidth_survives_json() {
        let cfg = base().with_bandwidth(f64::INFINITY);
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains(r#""bandwidth_bps":"inf""#));
        assert_eq!(serde_json::from_str::<CostConfig>(&json).unwrap(), cfg);
        let finite = base();
        assert_eq!(serde_json::from_str::<CostConfig>(&serde_json::to_string(&finite).unwrap()).unwrap(), finite);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(estimate_wallclock(&CostConfig { compute_s: 0.0, ..base() }).is_err());
        assert!(estimate_wallclock(&base().with_bandwidth(0.0)).is_err());
        assert!(estimate_wallclock(&CostConfig {
            streaming_partitions: 7,
            ..base()
        })
        .is_err());
    }
}
