//! Binary round snapshots.
//!
//! Layout (little endian): the magic `MLCSNAP1`; the parameter count and
//! names; worker count and steps per worker (0 when steps are omitted);
//! then the matrices of `global_before`, every worker delta, the
//! pseudogradient and, per worker and step, the step index, per-parameter
//! learning rates and applied updates. Each matrix is a `u64` length
//! followed by its dense encoding in the compressor wire format.

use muloco::compress::{dense_encode, EncodedDelta};
use muloco::engine::{RoundSnapshot, StepRecord};
use muloco::linalg::Matrix;
use muloco::params::ParamSet;

const MAGIC: &[u8; 8] = b"MLCSNAP1";

#[derive(Debug, thiserror::Error)]
pub enum DumpError {
    #[error("not a snapshot file")]
    BadMagic,
    #[error("truncated snapshot")]
    Truncated,
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
}

pub fn encode(snap: &RoundSnapshot, with_steps: bool) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    let names = snap.pseudogradient.names();
    put_u32(&mut out, names.len());
    for n in names {
        put_u32(&mut out, n.len());
        out.extend_from_slice(n.as_bytes());
    }
    let steps = if with_steps {
        snap.steps.first().map_or(0, Vec::len)
    } else {
        0
    };
    put_u32(&mut out, snap.worker_deltas.len());
    put_u32(&mut out, steps);
    put_set(&mut out, &snap.global_before);
    for d in &snap.worker_deltas {
        put_set(&mut out, d);
    }
    put_set(&mut out, &snap.pseudogradient);
    if steps > 0 {
        for worker in &snap.steps {
            for rec in worker {
                out.extend_from_slice(&rec.step.to_le_bytes());
                for lr in &rec.lr {
                    out.extend_from_slice(&lr.to_le_bytes());
                }
                put_set(&mut out, &rec.applied);
            }
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<RoundSnapshot, DumpError> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(DumpError::BadMagic);
    }
    let mut r = Reader { bytes, pos: 8 };
    let count = r.u32()?;
    let mut names = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()?;
        let raw = r.take(len)?;
        names.push(String::from_utf8(raw.to_vec()).map_err(|e| DumpError::Corrupt(e.to_string()))?);
    }
    let workers = r.u32()?;
    let steps = r.u32()?;
    let global_before = r.set(&names)?;
    let worker_deltas = (0..workers).map(|_| r.set(&names)).collect::<Result<_, _>>()?;
    let pseudogradient = r.set(&names)?;
    let mut all_steps = vec![Vec::new(); if steps > 0 { workers } else { 0 }];
    for worker in all_steps.iter_mut() {
        for _ in 0..steps {
            let step = r.u64()?;
            let lr = (0..count).map(|_| r.f64()).collect::<Result<_, _>>()?;
            let applied = r.set(&names)?;
            worker.push(StepRecord { step, applied, lr });
        }
    }
    if r.pos != bytes.len() {
        return Err(DumpError::Corrupt("trailing bytes".into()));
    }
    Ok(RoundSnapshot {
        global_before,
        worker_deltas,
        pseudogradient,
        steps: all_steps,
    })
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_set(out: &mut Vec<u8>, set: &ParamSet) {
    for m in set.tensors() {
        let enc = dense_encode(m).to_bytes();
        out.extend_from_slice(&(enc.len() as u64).to_le_bytes());
        out.extend_from_slice(&enc);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DumpError> {
        let end = self.pos.checked_add(n).ok_or(DumpError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(DumpError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, DumpError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64, DumpError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, DumpError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix(&mut self) -> Result<Matrix, DumpError> {
        let len = self.u64()? as usize;
        let raw = self.take(len)?;
        EncodedDelta::from_bytes(raw)
            .and_then(|e| e.decode())
            .map_err(|e| DumpError::Corrupt(e.to_string()))
    }

    fn set(&mut self, names: &[String]) -> Result<ParamSet, DumpError> {
        let tensors = names.iter().map(|_| self.matrix()).collect::<Result<_, _>>()?;
        Ok(ParamSet::from_parts(names.to_vec(), tensors))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use muloco::engine::{run, RunConfig};
    use muloco::inner_optim::OptimConfig;
    use muloco::model_zoo::mlp;

    #[test]
    fn round_trip_is_exact() {
        let task = mlp(&[3, 5, 2], true, 1).unwrap();
        let mut cfg = RunConfig::new(2, 3, 1, OptimConfig::muon(0.02), 4);
        cfg.snapshots = true;
        let snap = run(&cfg, &task, 1).unwrap().logs[0].snapshot.clone().unwrap();
        assert_eq!(decode(&encode(&snap, true)).unwrap(), snap);
        let lean = decode(&encode(&snap, false)).unwrap();
        assert!(lean.steps.is_empty());
        assert_eq!(lean.pseudogradient, snap.pseudogradient);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(decode(b"nope"), Err(DumpError::BadMagic)));
        let task = mlp(&[2, 2], false, 1).unwrap();
        let mut cfg = RunConfig::new(1, 1, 1, OptimConfig::adamw(0.01), 1);
        cfg.snapshots = true;
        let snap = run(&cfg, &task, 1).unwrap().logs[0].snapshot.clone().unwrap();
        let bytes = encode(&snap, false);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    }
}
