//! `muloco fit`: power-law fits of loss against training compute.

use std::path::Path;

use serde::Serialize;

use muloco::scaling_fit::{
    common_time_range, compute_observations, efficiency_curve, fit_power_law, load_fit_data, FitError, FitForm,
    FitOptions, PowerLawFit, ScalingModel,
};

use crate::manifest::OutDir;
use crate::CliError;

/// Points per efficiency curve.
pub const EFFICIENCY_POINTS: usize = 32;

pub struct FitArgs<'a> {
    pub data: &'a Path,
    pub form: FitForm,
    pub restarts: usize,
    pub seed: u64,
    pub efficiency: Option<Efficiency>,
}

/// Efficiency curves against `baseline`, all methods sharing one
/// critical-batch law `B_crit = a D^alpha`.
#[derive(Debug, Clone, Serialize)]
pub struct Efficiency {
    pub baseline: String,
    pub bcrit_a: f64,
    pub bcrit_alpha: f64,
}

#[derive(Serialize)]
struct ResidualRow<'a> {
    series: &'a str,
    compute: f64,
    loss: f64,
    predicted: f64,
    log_residual: f64,
}

#[derive(Serialize)]
struct EfficiencyRow<'a> {
    series: &'a str,
    time: f64,
    compute_baseline: f64,
    compute_method: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct FitRecord<'a> {
    data_sha256: String,
    form: FitForm,
    restarts: usize,
    seed: u64,
    efficiency: &'a Option<Efficiency>,
}

#[derive(Serialize)]
struct Report<'a> {
    fit: &'a PowerLawFit,
    points: usize,
}

fn fit_err(e: FitError) -> CliError {
    match e {
        FitError::Csv(_) | FitError::BadObservation { .. } => CliError::Config(format!("data: {e}")),
        other => CliError::Runtime(other.to_string()),
    }
}

pub fn cmd_fit(args: &FitArgs, out: &Path) -> Result<(), CliError> {
    let raw = std::fs::read(args.data).map_err(|e| CliError::config_io(args.data, e))?;
    let data = load_fit_data(args.data).map_err(fit_err)?;
    let obs = compute_observations(&data);
    let opts = FitOptions {
        restarts: args.restarts,
        seed: args.seed,
        ..FitOptions::default()
    };
    let fit = fit_power_law(&obs, args.form, &opts).map_err(fit_err)?;

    let mut dir = OutDir::create(out)?;
    dir.write_csv("fit_params.csv", &fit.methods)?;
    let residuals: Vec<ResidualRow> = obs
        .iter()
        .map(|o| {
            let m = fit.method(&o.method).expect("every series is fitted");
            let predicted = m.predict(o.x);
            ResidualRow {
                series: &o.method,
                compute: o.x,
                loss: o.loss,
                predicted,
                log_residual: o.loss.ln() - predicted.ln(),
            }
        })
        .collect();
    dir.write_csv("fit_residuals.csv", &residuals)?;
    let mut report = serde_json::to_string_pretty(&Report {
        fit: &fit,
        points: obs.len(),
    })
    .expect("report serializes");
    report.push('\n');
    dir.write("fit_report.json", report.as_bytes())?;

    if let Some(eff) = &args.efficiency {
        let model = |series: &str| -> Result<ScalingModel, CliError> {
            let loss = fit
                .method(series)
                .ok_or_else(|| CliError::Config(format!("efficiency baseline: no series named {series:?}")))?;
            Ok(ScalingModel {
                loss: loss.clone(),
                bcrit_a: eff.bcrit_a,
                bcrit_alpha: eff.bcrit_alpha,
            })
        };
        let base = model(&eff.baseline)?;
        let lo = obs.iter().map(|o| o.x).fold(f64::INFINITY, f64::min);
        let hi = obs.iter().map(|o| o.x).fold(0.0, f64::max);
        let (t0, t1) = common_time_range(&[&base], (lo, hi));
        let times: Vec<f64> = (0..EFFICIENCY_POINTS)
            .map(|i| {
                let u = i as f64 / (EFFICIENCY_POINTS - 1) as f64;
                (t0.ln() + u * (t1.ln() - t0.ln())).exp()
            })
            .collect();
        let mut rows = Vec::new();
        for m in &fit.methods {
            let other = model(&m.method)?;
            let curve = efficiency_curve(&base, &other, (lo, hi), &times).map_err(fit_err)?;
            rows.extend(curve.into_iter().map(|p| EfficiencyRow {
                series: &m.method,
                time: p.time,
                compute_baseline: p.compute_baseline,
                compute_method: p.compute_method,
                ratio: p.ratio,
            }));
        }
        dir.write_csv("efficiency.csv", &rows)?;
    }

    let record = FitRecord {
        data_sha256: crate::manifest::sha256_hex(&raw),
        form: args.form,
        restarts: args.restarts,
        seed: args.seed,
        efficiency: &args.efficiency,
    };
    dir.finish("fit", Some(args.seed), &record)
}
