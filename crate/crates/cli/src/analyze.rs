//! `muloco analyze`: alignment, spectra, audit and step-norm reports from
//! the snapshot dumps of finished runs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use muloco::analytics::{alignment_report, audit_snapshot_param, coefficient_of_variation, mean, spectra, MetricRow};
use muloco::engine::RoundSnapshot;
use muloco::linalg::Matrix;
use muloco::params::ParamSet;

use crate::config::ResolvedRun;
use crate::dump;
use crate::manifest::OutDir;
use crate::CliError;

/// Top-S fractions at which interference gaps are reported.
pub const GAP_FRACTIONS: [f64; 5] = [0.05, 0.1, 0.25, 0.5, 1.0];

#[derive(Deserialize)]
struct RunManifest {
    config: ResolvedRun,
}

#[derive(Serialize)]
struct AuditRow<'a> {
    parameter: &'a str,
    round: usize,
    rank: usize,
    nuclear_norm: f64,
    decomposition: f64,
    rel_discrepancy: f64,
    corollary: f64,
    corollary_rel_discrepancy: f64,
    degenerate: bool,
}

#[derive(Serialize)]
struct StabilityRow {
    parameter: String,
    samples: usize,
    mean_norm: f64,
    cv: f64,
}

#[derive(Deserialize)]
struct StepNormIn {
    #[allow(dead_code)]
    round: usize,
    #[allow(dead_code)]
    worker: usize,
    #[allow(dead_code)]
    step: u64,
    parameter: String,
    norm: f64,
}

struct LoadedRun {
    name: String,
    dir: PathBuf,
    config: ResolvedRun,
    rounds: Vec<(usize, RoundSnapshot)>,
}

fn load(dir: &Path) -> Result<LoadedRun, CliError> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| CliError::io(&manifest_path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("{}: not a run manifest: {e}", manifest_path.display())))?;
    let dumps = dir.join("dumps");
    let mut files: Vec<PathBuf> = match fs::read_dir(&dumps) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bin"))
            .collect(),
        Err(_) => Vec::new(),
    };
    if files.is_empty() {
        return Err(CliError::Runtime(format!(
            "{}: no snapshot dumps (set analytics.dump_snapshots = true)",
            dir.display()
        )));
    }
    files.sort();
    let mut rounds = Vec::with_capacity(files.len());
    for f in files {
        let round = f
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.strip_prefix("round_"))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::Runtime(format!("{}: unexpected dump name", f.display())))?;
        let bytes = fs::read(&f).map_err(|e| CliError::io(&f, e))?;
        let snap = dump::decode(&bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", f.display())))?;
        rounds.push((round, snap));
    }
    let name = dir
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("run")
        .to_string();
    Ok(LoadedRun {
        name,
        dir: dir.to_path_buf(),
        config: manifest.config,
        rounds,
    })
}

pub fn cmd_analyze(dirs: &[PathBuf], reference: Option<&Path>, out: &Path) -> Result<(), CliError> {
    if dirs.is_empty() {
        return Err(CliError::Runtime("no run directories given".into()));
    }
    let reference = reference.map(load).transpose()?;
    let runs = dirs.iter().map(|d| load(d)).collect::<Result<Vec<_>, _>>()?;
    let mut top = OutDir::create(out)?;
    for r in &runs {
        analyze_one(r, reference.as_ref(), &mut top)?;
    }
    let record = AnalyzeRecord {
        runs: runs.iter().map(|r| (r.name.clone(), r.config.clone())).collect(),
        reference: reference.map(|r| r.config),
        gap_fractions: GAP_FRACTIONS.to_vec(),
    };
    top.finish("analyze", None, &record)
}

#[derive(Serialize)]
struct AnalyzeRecord {
    runs: Vec<(String, ResolvedRun)>,
    reference: Option<ResolvedRun>,
    gap_fractions: Vec<f64>,
}

fn analyze_one(r: &LoadedRun, reference: Option<&LoadedRun>, out: &mut OutDir) -> Result<(), CliError> {
    let task = r.config.task.build().map_err(|e| CliError::Runtime(format!("{}: {e}", r.name)))?;
    let decls = task.decls();
    let fail = |e: muloco::analytics::AnalyticsError| CliError::Runtime(format!("{}: {e}", r.name));
    let mut alignment: Vec<MetricRow> = Vec::new();
    let mut spectral: Vec<MetricRow> = Vec::new();
    let mut audit = Vec::new();
    for (round, snap) in &r.rounds {
        let reference_psi: Option<&ParamSet> = match reference {
            Some(refr) => Some(
                refr.rounds
                    .iter()
                    .find(|(k, _)| k == round)
                    .map(|(_, s)| &s.pseudogradient)
                    .ok_or_else(|| CliError::Runtime(format!("reference has no dump for round {round}")))?,
            ),
            None => None,
        };
        if let Some(psi) = reference_psi {
            snap.pseudogradient
                .check_same_layout(psi)
                .map_err(|e| CliError::Runtime(format!("{}: reference layout: {e}", r.name)))?;
        }
        let report = alignment_report(snap, reference_psi, decls, |d| d.hidden, *round).map_err(fail)?;
        alignment.extend(report.rows);
        for (p, decl) in decls.iter().enumerate() {
            if !decl.hidden {
                continue;
            }
            let deltas: Vec<Matrix> = snap.worker_deltas.iter().map(|d| d.get(p).clone()).collect();
            spectral.extend(spectra(&deltas, &GAP_FRACTIONS).map_err(fail)?.rows(&decl.name, *round));
            if !snap.steps.is_empty() {
                let rec = audit_snapshot_param(snap, p).map_err(fail)?;
                audit.push(AuditRow {
                    parameter: &decl.name,
                    round: *round,
                    rank: rec.rank,
                    nuclear_norm: rec.lhs,
                    decomposition: rec.rhs,
                    rel_discrepancy: rec.rel_discrepancy,
                    corollary: rec.corollary_rhs,
                    corollary_rel_discrepancy: rec.corollary_rel_discrepancy,
                    degenerate: rec.degenerate,
                });
            }
        }
    }
    out.write_csv(&format!("{}/alignment.csv", r.name), &alignment)?;
    out.write_csv(&format!("{}/spectra.csv", r.name), &spectral)?;
    if !audit.is_empty() {
        out.write_csv(&format!("{}/audit.csv", r.name), &audit)?;
    }

    let norms_path = r.dir.join("step_norms.csv");
    if norms_path.exists() {
        let rows: Vec<StepNormIn> = csv::Reader::from_path(&norms_path)
            .and_then(|mut rdr| rdr.deserialize().collect())
            .map_err(|e| CliError::Runtime(format!("{}: {e}", norms_path.display())))?;
        let mut stability = Vec::new();
        for decl in decls {
            let vals: Vec<f64> = rows.iter().filter(|n| n.parameter == decl.name).map(|n| n.norm).collect();
            if !vals.is_empty() {
                stability.push(StabilityRow {
                    parameter: decl.name.clone(),
                    samples: vals.len(),
                    mean_norm: mean(&vals),
                    cv: coefficient_of_variation(&vals),
                });
            }
        }
        out.write_csv(&format!("{}/step_norm_stability.csv", r.name), &stability)?;
    }
    Ok(())
}
