//! Pseudogradient diagnostics: alignment, spectra, interference gap,
//! step-norm traces and the nuclear-norm decomposition audit.
//!
//! Every report flattens to [`MetricRow`]s with the CSV schema
//! `parameter,worker,round,metric,value`. Rows that do not belong to a
//! single worker carry `worker = -1`. Quantities that are undefined (the
//! direction of a zero matrix) are emitted as a `<metric>_degenerate` row
//! with value 1 instead of a NaN.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{RoundSnapshot, StepNorm};
use crate::linalg::{cosine_sim, frobenius_inner, frobenius_norm, svd, LinalgError, Matrix};
use crate::params::{ParamDecl, ParamSet};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("need at least one matrix")]
    Empty,
    #[error("top-S index {s} out of range 1..={rank}")]
    BadS { s: usize, rank: usize },
    #[error("constituents do not reproduce the pseudogradient (relative error {rel:e})")]
    Inconsistent { rel: f64 },
    #[error("missing snapshot: {0}")]
    MissingSnapshot(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AnalyticsError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub parameter: String,
    pub worker: i64,
    pub round: i64,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(parameter: &str, worker: Option<usize>, round: usize, metric: &str, value: f64) -> Self {
        Self {
            parameter: parameter.to_string(),
            worker: worker.map_or(-1, |w| w as i64),
            round: round as i64,
            metric: metric.to_string(),
            value,
        }
    }
}

pub fn write_metric_rows<W: Write>(rows: &[MetricRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Sum of the `s` largest singular values.
pub fn top_s_mass(a: &Matrix, s: usize) -> Result<f64> {
    let rank = a.rank_bound();
    if s == 0 || s > rank {
        return Err(AnalyticsError::BadS { s, rank });
    }
    Ok(svd(a)?.sigma[..s].iter().sum())
}

/// `S = max(1, round(fraction * r))`.
pub fn top_s_from_fraction(fraction: f64, rank: usize) -> usize {
    ((fraction * rank as f64).round() as usize).clamp(1, rank.max(1))
}

/// Mean top-S spectral mass of the matrices minus that of their mean.
pub fn interference_gap(deltas: &[Matrix], s: usize) -> Result<f64> {
    let first = deltas.first().ok_or(AnalyticsError::Empty)?;
    let mut mean = first.clone();
    for d in &deltas[1..] {
        mean.add_assign(d)?;
    }
    let n = deltas.len() as f64;
    let mean = mean.scale(1.0 / n);
    let mut individual = 0.0;
    for d in deltas {
        individual += top_s_mass(d, s)?;
    }
    Ok(individual / n - top_s_mass(&mean, s)?)
}

/// One optimizer step entering the decomposition: `alpha * psi`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditStep {
    pub worker: usize,
    pub step: u64,
    pub alpha: f64,
    pub psi: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    /// `min(rows, cols)`.
    pub rank: usize,
    /// Nuclear norm of the pseudogradient.
    pub lhs: f64,
    /// `(sqrt(r)/K) sum rho * alpha * |psi|_F` with `rho` the cosine to `U V^T`.
    pub rhs: f64,
    /// `|lhs - rhs| / lhs`, 0 when degenerate.
    pub rel_discrepancy: f64,
    /// `(r/K) sum rho * alpha`, the orthonormal-step simplification.
    pub corollary_rhs: f64,
    pub corollary_rel_discrepancy: f64,
    /// The pseudogradient vanishes, so its orthonormal factor is undefined.
    pub degenerate: bool,
}

/// Relative tolerance on the consistency of the supplied constituents.
pub const AUDIT_CONSISTENCY_TOL: f64 = 1e-9;

/// Checks `|Psi|_* = (sqrt(r)/K) sum_k sum_h rho_kh alpha_kh |psi_kh|_F`
/// where `Psi = (1/K) sum alpha psi` and `rho_kh = cos(psi_kh, U V^T)`.
pub fn nuclear_decomposition_audit(steps: &[AuditStep], psi: &Matrix, workers: usize) -> Result<AuditRecord> {
    if workers == 0 {
        return Err(AnalyticsError::Empty);
    }
    let k = workers as f64;
    let mut recon = psi.zeros_like();
    let mut scale = 0.0;
    for s in steps {
        recon.axpy(s.alpha / k, &s.psi)?;
        scale += s.alpha.abs() * frobenius_norm(&s.psi) / k;
    }
    let ref_scale = scale.max(frobenius_norm(psi));
    let err = frobenius_norm(&recon.sub(psi)?);
    if err > AUDIT_CONSISTENCY_TOL * ref_scale {
        return Err(AnalyticsError::Inconsistent {
            rel: err / ref_scale.max(f64::MIN_POSITIVE),
        });
    }
    let rank = psi.rank_bound();
    let dec = svd(psi)?;
    let lhs: f64 = dec.sigma.iter().sum();
    if lhs == 0.0 || lhs <= 1e-12 * scale {
        return Ok(AuditRecord {
            rank,
            lhs,
            rhs: 0.0,
            rel_discrepancy: 0.0,
            corollary_rhs: 0.0,
            corollary_rel_discrepancy: 0.0,
            degenerate: true,
        });
    }
    let star = dec.orthonormal_factor();
    let root_r = (rank as f64).sqrt();
    let star_norm = frobenius_norm(&star);
    let mut rhs = 0.0;
    let mut corollary = 0.0;
    for s in steps {
        let n = frobenius_norm(&s.psi);
        if n == 0.0 {
            continue;
        }
        let rho = frobenius_inner(&s.psi, &star)? / (n * star_norm);
        rhs += rho * s.alpha * n;
        corollary += rho * s.alpha;
    }
    let rhs = root_r * rhs / k;
    let corollary = rank as f64 * corollary / k;
    Ok(AuditRecord {
        rank,
        lhs,
        rhs,
        rel_discrepancy: (lhs - rhs).abs() / lhs,
        corollary_rhs: corollary,
        corollary_rel_discrepancy: (lhs - corollary).abs() / lhs,
        degenerate: false,
    })
}

/// Audit steps for parameter `p` of a round snapshot: each applied step is
/// split as `alpha * psi` with `alpha` the effective learning rate.
pub fn audit_steps_from_snapshot(snap: &RoundSnapshot, p: usize) -> Vec<AuditStep> {
    let mut out = Vec::new();
    for (k, steps) in snap.steps.iter().enumerate() {
        for rec in steps {
            let alpha = rec.lr[p];
            let applied = rec.applied.get(p);
            let psi = if alpha != 0.0 {
                applied.scale(1.0 / alpha)
            } else {
                applied.zeros_like()
            };
            out.push(AuditStep {
                worker: k,
                step: rec.step,
                alpha,
                psi,
            });
        }
    }
    out
}

/// Audit of one parameter of a snapshot. The pseudogradient used is the
/// uncompressed worker mean, which is what the steps decompose.
pub fn audit_snapshot_param(snap: &RoundSnapshot, p: usize) -> Result<AuditRecord> {
    let steps = audit_steps_from_snapshot(snap, p);
    let deltas: Vec<Matrix> = snap.worker_deltas.iter().map(|d| d.get(p).clone()).collect();
    let k = deltas.len();
    let mut mean = deltas.first().ok_or(AnalyticsError::Empty)?.clone();
    for d in &deltas[1..] {
        mean.add_assign(d)?;
    }
    let mean = mean.scale(1.0 / k as f64);
    nuclear_decomposition_audit(&steps, &mean, k)
}

/// Lower quartile, median and upper quartile (linear interpolation).
pub fn quartiles(values: &[f64]) -> Option<(f64, f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Some((q(0.25), q(0.5), q(0.75)))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation over mean.
pub fn coefficient_of_variation(values: &[f64]) -> f64 {
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    var.sqrt() / m
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub rows: Vec<MetricRow>,
}

impl AlignmentReport {
    pub fn values(&self, parameter: &str, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.parameter == parameter && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    pub fn degenerate_count(&self) -> usize {
        self.rows.iter().filter(|r| r.metric.ends_with("_degenerate")).count()
    }
}

fn push_cosine(rows: &mut Vec<MetricRow>, a: &Matrix, b: &Matrix, param: &str, worker: Option<usize>, round: usize, metric: &str) -> Result<()> {
    match cosine_sim(a, b) {
        Ok(c) => rows.push(MetricRow::new(param, worker, round, metric, c)),
        Err(LinalgError::UndefinedDirection) => {
            rows.push(MetricRow::new(param, worker, round, &format!("{metric}_degenerate"), 1.0))
        }
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

/// Cosine alignment of a round snapshot, for the parameters selected by
/// `keep` (typically the hidden ones).
///
/// Metrics: `worker_vs_reference` (each worker delta against `reference`),
/// `pseudogradient_vs_reference`, `trajectory_vs_pseudogradient` (each
/// worker delta against the pseudogradient) and `step_vs_pseudogradient`
/// (each inner step against the pseudogradient, averaged per worker).
/// Quartile summaries are appended per metric with `worker = -1` and
/// metrics suffixed `_q1`, `_median`, `_q3`.
pub fn alignment_report(
    snap: &RoundSnapshot,
    reference: Option<&ParamSet>,
    decls: &[ParamDecl],
    keep: impl Fn(&ParamDecl) -> bool,
    round: usize,
) -> Result<AlignmentReport> {
    let mut rows = Vec::new();
    for (p, decl) in decls.iter().enumerate() {
        if !keep(decl) {
            continue;
        }
        let name = decl.name.as_str();
        let psi = snap.pseudogradient.get(p);
        let before = rows.len();
        if let Some(r) = reference {
            let r = r.get(p);
            for (k, d) in snap.worker_deltas.iter().enumerate() {
                push_cosine(&mut rows, d.get(p), r, name, Some(k), round, "worker_vs_reference")?;
            }
            push_cosine(&mut rows, psi, r, name, None, round, "pseudogradient_vs_reference")?;
        }
        for (k, d) in snap.worker_deltas.iter().enumerate() {
            push_cosine(&mut rows, d.get(p), psi, name, Some(k), round, "trajectory_vs_pseudogradient")?;
        }
        for (k, steps) in snap.steps.iter().enumerate() {
            let mut vals = Vec::new();
            let mut undefined = 0usize;
            for s in steps {
                match cosine_sim(s.applied.get(p), psi) {
                    Ok(c) => vals.push(c),
                    Err(LinalgError::UndefinedDirection) => undefined += 1,
                    Err(e) => return Err(e.into()),
                }
            }
            if !vals.is_empty() {
                rows.push(MetricRow::new(name, Some(k), round, "step_vs_pseudogradient", mean(&vals)));
            }
            if undefined > 0 {
                rows.push(MetricRow::new(name, Some(k), round, "step_vs_pseudogradient_degenerate", undefined as f64));
            }
        }
        let metrics = [
            "worker_vs_reference",
            "pseudogradient_vs_reference",
            "trajectory_vs_pseudogradient",
            "step_vs_pseudogradient",
        ];
        let mut summary = Vec::new();
        for m in metrics {
            let vals: Vec<f64> = rows[before..]
                .iter()
                .filter(|r| r.metric == m)
                .map(|r| r.value)
                .collect();
            if let Some((q1, q2, q3)) = quartiles(&vals) {
                summary.push(MetricRow::new(name, None, round, &format!("{m}_q1"), q1));
                summary.push(MetricRow::new(name, None, round, &format!("{m}_median"), q2));
                summary.push(MetricRow::new(name, None, round, &format!("{m}_q3"), q3));
            }
        }
        rows.extend(summary);
    }
    Ok(AlignmentReport { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub worker_sigma: Vec<Vec<f64>>,
    pub pseudogradient_sigma: Vec<f64>,
    /// `(S, G_S)` pairs.
    pub gaps: Vec<(usize, f64)>,
}

/// Spectra of worker deltas and of their mean, with interference gaps at
/// the requested top-S fractions.
pub fn spectra(deltas: &[Matrix], fractions: &[f64]) -> Result<SpectralReport> {
    let first = deltas.first().ok_or(AnalyticsError::Empty)?;
    let mut worker_sigma = Vec::with_capacity(deltas.len());
    let mut mean = first.zeros_like();
    for d in deltas {
        worker_sigma.push(svd(d)?.sigma);
        mean.add_assign(d)?;
    }
    let mean = mean.scale(1.0 / deltas.len() as f64);
    let pseudogradient_sigma = svd(&mean)?.sigma;
    let rank = first.rank_bound();
    let gaps = fractions
        .iter()
        .map(|&f| {
            let s = top_s_from_fraction(f, rank);
            let individual = worker_sigma.iter().map(|sig| sig[..s].iter().sum::<f64>()).sum::<f64>()
                / deltas.len() as f64;
            (s, individual - pseudogradient_sigma[..s].iter().sum::<f64>())
        })
        .collect();
    Ok(SpectralReport {
        worker_sigma,
        pseudogradient_sigma,
        gaps,
    })
}

impl SpectralReport {
    pub fn rows(&self, parameter: &str, round: usize) -> Vec<MetricRow> {
        let mut rows = Vec::new();
        for (k, sig) in self.worker_sigma.iter().enumerate() {
            for (j, s) in sig.iter().enumerate() {
                rows.push(MetricRow::new(parameter, Some(k), round, &format!("sigma_{j}"), *s));
            }
        }
        for (j, s) in self.pseudogradient_sigma.iter().enumerate() {
            rows.push(MetricRow::new(parameter, None, round, &format!("sigma_{j}"), *s));
        }
        for (s, g) in &self.gaps {
            rows.push(MetricRow::new(parameter, None, round, &format!("gap_top{s}"), *g));
        }
        rows
    }
}

/// Per-step update norms for one parameter, as CSV rows, plus their
/// coefficient of variation.
pub fn step_norm_trace(norms: &[StepNorm], param: usize, name: &str, round: usize) -> (Vec<MetricRow>, f64) {
    let sel: Vec<&StepNorm> = norms.iter().filter(|n| n.param == param).collect();
    let rows = sel
        .iter()
        .map(|n| MetricRow::new(name, Some(n.worker), round, &format!("step_norm_{}", n.step), n.norm))
        .collect();
    let vals: Vec<f64> = sel.iter().map(|n| n.norm).collect();
    let cv = if vals.is_empty() {
        0.0
    } else {
        coefficient_of_variation(&vals)
    };
    (rows, cv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::newton_schulz;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn identical_matrices_have_zero_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = gaussian(5, 4, &mut rng);
        for s in 1..=4 {
            let g = interference_gap(&[a.clone(), a.clone(), a.clone()], s).unwrap();
            assert!(g.abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_gap_examples() {
        let a = Matrix::diag(&[1.0, 0.0]);
        let b = Matrix::diag(&[0.0, 1.0]);
        assert!((interference_gap(&[a.clone(), b.clone()], 1).unwrap() - 0.5).abs() < 1e-15);
        assert!(interference_gap(&[a.clone(), b.clone()], 2).unwrap().abs() < 1e-15);
        assert!(interference_gap(&[a, b], 3).is_err());
    }

    #[test]
    fn top_s_fraction() {
        assert_eq!(top_s_from_fraction(0.05, 4), 1);
        assert_eq!(top_s_from_fraction(0.05, 64), 3);
        assert_eq!(top_s_from_fraction(1.0, 7), 7);
    }

    #[test]
    fn audit_single_orthonormal_step() {
        let q = Matrix::from_rows(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0]]);
        let rec = nuclear_decomposition_audit(
            &[AuditStep { worker: 0, step: 0, alpha: 1.0, psi: q.clone() }],
            &q,
            1,
        )
        .unwrap();
        assert!((rec.lhs - 2.0).abs() < 1e-12);
        assert!((rec.rhs - 2.0).abs() < 1e-12);
        assert!((rec.corollary_rhs - 2.0).abs() < 1e-12);
    }

    #[test]
    fn audit_random_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut steps = Vec::new();
        let mut psi = Matrix::zeros(6, 4);
        for k in 0..2 {
            for h in 0..3 {
                let alpha = rng.random_range(0.01..1.0);
                let m = gaussian(6, 4, &mut rng);
                psi.axpy(alpha / 2.0, &m).unwrap();
                steps.push(AuditStep { worker: k, step: h, alpha, psi: m });
            }
        }
        let rec = nuclear_decomposition_audit(&steps, &psi, 2).unwrap();
        assert!(rec.rel_discrepancy < 1e-9, "{rec:?}");
    }

    #[test]
    fn audit_opposite_steps_are_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = gaussian(3, 3, &mut rng);
        let steps = [
            AuditStep { worker: 0, step: 0, alpha: 1.0, psi: m.clone() },
            AuditStep { worker: 1, step: 0, alpha: 1.0, psi: m.scale(-1.0) },
        ];
        let rec = nuclear_decomposition_audit(&steps, &Matrix::zeros(3, 3), 2).unwrap();
        assert!(rec.degenerate);
        assert_eq!(rec.lhs, 0.0);
        assert_eq!(rec.rhs, 0.0);
    }

    #[test]
    fn audit_rejects_inconsistent_constituents() {
        let m = Matrix::identity(2);
        let steps = [AuditStep { worker: 0, step: 0, alpha: 1.0, psi: m.clone() }];
        assert!(matches!(
            nuclear_decomposition_audit(&steps, &m.scale(2.0), 1),
            Err(AnalyticsError::Inconsistent { .. })
        ));
    }

    #[test]
    fn audit_newton_schulz_steps_corollary_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut steps = Vec::new();
        let mut psi = Matrix::zeros(8, 12);
        for h in 0..4 {
            let o = newton_schulz(&gaussian(8, 12, &mut rng), 5).unwrap();
            psi.axpy(0.1, &o).unwrap();
            steps.push(AuditStep { worker: 0, step: h, alpha: 0.1, psi: o });
        }
        let rec = nuclear_decomposition_audit(&steps, &psi, 1).unwrap();
        assert!(rec.rel_discrepancy < 1e-9);
        assert!(rec.corollary_rel_discrepancy < 0.2, "{rec:?}");
    }

    #[test]
    fn quartiles_and_cv() {
        assert_eq!(quartiles(&[4.0, 1.0, 3.0, 2.0, 5.0]), Some((2.0, 3.0, 4.0)));
        assert_eq!(quartiles(&[]), None);
        assert_eq!(coefficient_of_variation(&[2.0, 2.0, 2.0]), 0.0);
        assert!((coefficient_of_variation(&[1.0, 3.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn csv_schema() {
        let rows = vec![MetricRow::new("w0", Some(2), 1, "cos", 0.5), MetricRow::new("w1", None, 3, "gap", 0.25)];
        let mut buf = Vec::new();
        write_metric_rows(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "parameter,worker,round,metric,value\nw0,2,1,cos,0.5\nw1,-1,3,gap,0.25\n"
        );
    }

    fn deltas() -> impl Strategy<Value = Vec<Matrix>> {
        (1usize..6, 1usize..6, 1usize..5, any::<u64>()).prop_map(|(r, c, n, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| gaussian(r, c, &mut rng)).collect()
        })
    }

    proptest! {
        #[test]
        fn gap_is_non_negative(ds in deltas(), pick in 0usize..10) {
            let rank = ds[0].rank_bound();
            let s = 1 + pick % rank;
            prop_assert!(interference_gap(&ds, s).unwrap() >= -1e-9);
        }
    }
}
