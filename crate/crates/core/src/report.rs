//! CSV and JSON report writers shared by the library and the command-line tool.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::chain_ladder::{DevelopmentFactors, RunoffTriangle};
use crate::data::{write_portfolio, Portfolio};
use crate::error::{ReserveError, Result};
use crate::estimators::ReserveEstimate;
use crate::hazard::PemModel;
use crate::pipeline::{CompareReport, FittedModels, ReserveReport, ResidualCheck, TriangleReport};
use crate::simulator::{oracle_probabilities, true_reserves, GroundTruth};

/// `x` in scientific notation with 17 significant digits (lossless for f64).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Empty for `None`.
pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| ReserveError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| ReserveError::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| ReserveError::io(path, e))
}

pub const RESERVES_HEADER: [&str; 8] = [
    "kind", "point", "variance", "ci_lower", "ci_upper", "alpha", "n_paid", "trimmed",
];

/// One row per estimate.
pub fn write_reserves_csv(path: impl AsRef<Path>, estimates: &[ReserveEstimate]) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(RESERVES_HEADER)?;
    for e in estimates {
        w.write_record([
            e.kind.label().to_string(),
            fmt_f64(e.point),
            fmt_opt(e.variance),
            fmt_opt(e.ci_lower),
            fmt_opt(e.ci_upper),
            fmt_f64(e.alpha),
            e.n_paid.to_string(),
            e.trimmed.to_string(),
        ])?;
    }
    finish(w, path)
}

/// Origin label then one column per development cut; unobserved cells are empty.
pub fn write_triangle_csv(path: impl AsRef<Path>, triangle: &RunoffTriangle) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    let mut header = vec!["origin".to_string()];
    header.extend(triangle.layout.dev_cuts[1..].iter().map(|c| c.to_string()));
    w.write_record(&header)?;
    for o in 0..triangle.n_origins() {
        let mut row = vec![triangle.layout.origin_start(o).to_string()];
        row.extend((1..=triangle.n_dev()).map(|d| fmt_opt(triangle.get(o, d))));
        w.write_record(&row)?;
    }
    finish(w, path)
}

/// `step,from,to,factor,weight_scheme`; `step` is the index of the `to` cut.
pub fn write_factors_csv(path: impl AsRef<Path>, factors: &DevelopmentFactors) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(["step", "from", "to", "factor", "weight_scheme"])?;
    for (k, f) in factors.factors.iter().enumerate() {
        w.write_record([
            (k + 2).to_string(),
            factors.cuts[k].to_string(),
            factors.cuts[k + 1].to_string(),
            fmt_f64(*f),
            factors.weight_scheme.name().to_string(),
        ])?;
    }
    finish(w, path)
}

/// Oracle probabilities and membership at `τ` for every population payment.
pub fn write_truth_csv(path: impl AsRef<Path>, truth: &GroundTruth, tau: f64) -> Result<()> {
    let path = path.as_ref();
    let config = truth.config.as_ref().ok_or_else(|| {
        ReserveError::InvalidInput("oracle probabilities need the simulation config".into())
    })?;
    let pf = &truth.population;
    let mut w = writer(path)?;
    w.write_record([
        "payment_row",
        "pi_u",
        "pi_v",
        "pi",
        "reported_by_tau",
        "paid_by_tau",
    ])?;
    for (i, p) in pf.payments().iter().enumerate() {
        let claim = &pf.claims()[pf.claim_of(i)];
        let (u, v, pi) = oracle_probabilities(config, claim, tau);
        w.write_record([
            i.to_string(),
            fmt_f64(u),
            fmt_f64(v),
            fmt_f64(pi),
            (claim.reporting_time <= tau).to_string(),
            (p.payment_time <= tau).to_string(),
        ])?;
    }
    finish(w, path)
}

/// Writes rows of labelled values with a header.
pub fn write_table_csv(
    path: impl AsRef<Path>,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    let path = path.as_ref();
    let mut w = writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    finish(w, path)
}

/// Output subdirectory for one valuation date.
pub fn tau_dir(out: &Path, tau: f64) -> PathBuf {
    out.join(format!("tau_{tau}"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| ReserveError::io(dir, e))
}

/// `model,parameter,from,to,estimate,std_error`.
pub fn write_coefficients_csv(path: impl AsRef<Path>, models: &[&PemModel]) -> Result<()> {
    let mut rows = Vec::new();
    for m in models {
        let cuts = m.grid.cuts();
        let se = |i: usize| fmt_opt(m.diagnostics.std_errors.get(i).copied().flatten());
        for (n, v) in m.log_baseline.iter().enumerate() {
            rows.push(vec![
                m.kind.name().to_string(),
                "log_baseline".to_string(),
                cuts[n].to_string(),
                cuts[n + 1].to_string(),
                fmt_f64(*v),
                se(n),
            ]);
        }
        for (k, (name, v)) in m.feature_names.iter().zip(&m.coefficients).enumerate() {
            rows.push(vec![
                m.kind.name().to_string(),
                name.clone(),
                String::new(),
                String::new(),
                fmt_f64(*v),
                se(m.log_baseline.len() + k),
            ]);
        }
    }
    write_table_csv(
        path,
        &["model", "parameter", "from", "to", "estimate", "std_error"],
        &rows,
    )
}

fn write_models(dir: &Path, models: &FittedModels) -> Result<()> {
    models.reporting.save(dir.join("reporting_model.json"))?;
    models.payment.save(dir.join("payment_model.json"))?;
    write_coefficients_csv(
        dir.join("coefficients.csv"),
        &[&models.reporting, &models.payment],
    )
}

/// Per-date models and coefficient tables, plus `fits.csv` over all dates.
pub fn write_fit_reports(out: &Path, fits: &[FittedModels]) -> Result<()> {
    ensure_dir(out)?;
    let mut rows = Vec::new();
    for f in fits {
        let dir = tau_dir(out, f.valuation_time);
        ensure_dir(&dir)?;
        write_models(&dir, f)?;
        for m in [&f.reporting, &f.payment] {
            let d = &m.diagnostics;
            rows.push(vec![
                fmt_f64(f.valuation_time),
                m.kind.name().to_string(),
                d.iterations.to_string(),
                fmt_f64(d.gradient_norm),
                fmt_f64(d.log_likelihood),
                d.n_units.to_string(),
                fmt_f64(d.n_events),
            ]);
        }
    }
    write_table_csv(
        out.join("fits.csv"),
        &[
            "valuation_time",
            "model",
            "iterations",
            "gradient_norm",
            "log_likelihood",
            "n_units",
            "n_events",
        ],
        &rows,
    )
}

/// Per-payment probabilities and IPW weights.
pub fn write_weights_csv(
    path: impl AsRef<Path>,
    portfolio: &Portfolio,
    report: &ReserveReport,
) -> Result<()> {
    let probs = &report.probabilities;
    let trimmed = report.trimming.as_ref();
    let rows: Vec<Vec<String>> = (0..probs.len())
        .map(|i| {
            let row = probs.payment_rows[i];
            let p = &portfolio.payments()[row];
            let used = match trimmed {
                Some(t) if t.retained => t.pi[i],
                _ => probs.pi[i],
            };
            vec![
                row.to_string(),
                p.claim_id.clone(),
                fmt_f64(p.amount),
                fmt_f64(probs.pi_u[i]),
                fmt_f64(probs.pi_v[i]),
                fmt_f64(probs.pi[i]),
                trimmed.map(|t| fmt_f64(t.pi[i])).unwrap_or_default(),
                fmt_f64(1.0 / used),
            ]
        })
        .collect();
    write_table_csv(
        path,
        &[
            "payment_row",
            "claim_id",
            "amount",
            "pi_u",
            "pi_v",
            "pi",
            "pi_trimmed",
            "weight",
        ],
        &rows,
    )
}

/// `summary.csv`/`summary.json` over all dates and one directory per date with
/// `reserves.csv`, `reserves.json`, the fitted models and, with `explain`,
/// `weights.csv`.
pub fn write_reserve_reports(
    out: &Path,
    portfolio: &Portfolio,
    reports: &[ReserveReport],
    explain: bool,
) -> Result<()> {
    ensure_dir(out)?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for r in reports {
        let dir = tau_dir(out, r.valuation_time);
        ensure_dir(&dir)?;
        write_reserves_csv(dir.join("reserves.csv"), &r.estimates)?;
        let summary = r.summary();
        write_json(dir.join("reserves.json"), &summary)?;
        write_models(&dir, &r.models)?;
        if explain {
            write_weights_csv(dir.join("weights.csv"), portfolio, r)?;
        }
        for e in &r.estimates {
            rows.push(vec![
                fmt_f64(r.valuation_time),
                e.kind.label().to_string(),
                fmt_f64(e.point),
                fmt_opt(e.variance),
                fmt_opt(e.ci_lower),
                fmt_opt(e.ci_upper),
                fmt_f64(e.alpha),
                e.n_paid.to_string(),
                e.trimmed.to_string(),
            ]);
        }
        summaries.push(summary);
    }
    let mut header = vec!["valuation_time"];
    header.extend(RESERVES_HEADER);
    write_table_csv(out.join("summary.csv"), &header, &rows)?;
    write_json(out.join("summary.json"), &summaries)
}

/// Triangles, factors and the chain-ladder completion for each date.
pub fn write_triangle_reports(out: &Path, reports: &[TriangleReport]) -> Result<()> {
    ensure_dir(out)?;
    for r in reports {
        let dir = tau_dir(out, r.valuation_time);
        ensure_dir(&dir)?;
        write_triangle_csv(dir.join("triangle_paid.csv"), &r.paid)?;
        write_triangle_csv(dir.join("triangle_count.csv"), &r.counts)?;
        write_triangle_csv(dir.join("triangle_reported.csv"), &r.reported)?;
        if let Some(f) = &r.paid_factors {
            write_factors_csv(dir.join("factors_paid.csv"), f)?;
        }
        if let Some(f) = &r.count_factors {
            write_factors_csv(dir.join("factors_count.csv"), f)?;
        }
        if let Some(p) = &r.projection {
            let completed = RunoffTriangle {
                cells: p.completed.clone(),
                mask: vec![vec![true; r.paid.n_dev()]; r.paid.n_origins()],
                ..r.paid.clone()
            };
            write_triangle_csv(dir.join("projection_paid.csv"), &completed)?;
            write_json(dir.join("projection_paid.json"), p)?;
        }
    }
    Ok(())
}

/// `residuals.csv` (one row per residual) and `ks.csv` (one row per model and date).
pub fn write_residual_reports(out: &Path, checks: &[[ResidualCheck; 2]]) -> Result<()> {
    ensure_dir(out)?;
    let mut rows = Vec::new();
    let mut ks = Vec::new();
    for c in checks.iter().flatten() {
        for (i, r) in c.residuals.iter().enumerate() {
            rows.push(vec![
                fmt_f64(c.valuation_time),
                c.model.name().to_string(),
                i.to_string(),
                fmt_f64(*r),
            ]);
        }
        ks.push(vec![
            fmt_f64(c.valuation_time),
            c.model.name().to_string(),
            c.residuals.len().to_string(),
            fmt_f64(c.ks_statistic),
            fmt_f64(c.critical_value),
            c.rejected().to_string(),
        ]);
    }
    write_table_csv(
        out.join("residuals.csv"),
        &["valuation_time", "model", "index", "residual"],
        &rows,
    )?;
    write_table_csv(
        out.join("ks.csv"),
        &[
            "valuation_time",
            "model",
            "n",
            "ks_statistic",
            "critical_value_1pct",
            "rejected",
        ],
        &ks,
    )
}

/// `compare.csv` per date, `metrics.csv` per method, and `compare.json`.
pub fn write_compare_report(out: &Path, report: &CompareReport) -> Result<()> {
    ensure_dir(out)?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                fmt_f64(r.valuation_time),
                fmt_f64(r.truth.ibns),
                fmt_f64(r.truth.rbns),
                fmt_f64(r.truth.ibnr),
                fmt_f64(r.ipw.point),
                fmt_opt(r.ipw.ci_lower),
                fmt_opt(r.ipw.ci_upper),
                fmt_f64(r.ipw_rbns),
                fmt_f64(r.ipw_ibnr),
                fmt_opt(r.ipw_oracle),
                fmt_f64(r.cl),
                fmt_f64(r.ipw_empirical),
                fmt_f64(r.cl_split_rbns),
                fmt_f64(r.cl_split_ibnr),
            ]
        })
        .collect();
    write_table_csv(
        out.join("compare.csv"),
        &[
            "valuation_time",
            "true_ibns",
            "true_rbns",
            "true_ibnr",
            "ipw_ibns",
            "ipw_ci_lower",
            "ipw_ci_upper",
            "ipw_rbns",
            "ipw_ibnr",
            "ipw_oracle_ibns",
            "cl_ibns",
            "ipw_empirical_ibns",
            "cl_split_rbns",
            "cl_split_ibnr",
        ],
        &rows,
    )?;
    let metrics: Vec<Vec<String>> = report
        .metrics
        .iter()
        .map(|m| {
            vec![
                m.method.clone(),
                m.n.to_string(),
                fmt_f64(m.me),
                fmt_f64(m.rmse),
                fmt_f64(m.mae),
                fmt_f64(m.mape),
            ]
        })
        .collect();
    write_table_csv(
        out.join("metrics.csv"),
        &["method", "n", "me", "rmse", "mae", "mape"],
        &metrics,
    )?;
    write_json(out.join("compare.json"), report)
}

/// The population files, its generator, and per-date truth.
pub fn write_simulation(out: &Path, truth: &GroundTruth, times: &[f64]) -> Result<()> {
    ensure_dir(out)?;
    write_portfolio(
        &truth.population,
        out.join("claims.csv"),
        out.join("payments.csv"),
    )?;
    if let Some(cfg) = &truth.config {
        write_json(out.join("sim_config.json"), cfg)?;
    }
    for &tau in times {
        let dir = tau_dir(out, tau);
        ensure_dir(&dir)?;
        write_truth_csv(dir.join("truth.csv"), truth, tau)?;
        write_json(dir.join("reserves_truth.json"), &true_reserves(truth, tau))?;
    }
    Ok(())
}
