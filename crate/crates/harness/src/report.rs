//! Persisting bundles: the JSON document plus one CSV per tabular report.
//! Column order follows the struct field order and never changes.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bundle::ReportBundle;
use crate::error::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Json,
    CsvTables,
    Both,
}

#[derive(Serialize)]
struct StarCsv {
    mu: f64,
    grad_norm_q: f64,
    grad_norm_qj: f64,
    residual: f64,
}

#[derive(Serialize)]
struct Mu0Csv {
    mu: f64,
    sup_of_resolvent_of_one: f64,
}

#[derive(Serialize)]
struct EstimateCsv<'a> {
    estimate_id: &'a str,
    row: usize,
    lhs: f64,
    rhs: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct MartingaleCsv<'a> {
    f_tag: &'a str,
    t: f64,
    mean: f64,
    se: f64,
    z: f64,
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: impl IntoIterator<Item = T>, out: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    out.push(path);
    Ok(())
}

pub fn bundle_json(bundle: &ReportBundle) -> String {
    serde_json::to_string_pretty(bundle).expect("bundle serializes")
}

/// Writes `bundle.json` and/or the CSV tables into `dir`; returns the paths written.
pub fn write_report(bundle: &ReportBundle, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    if matches!(format, ReportFormat::Json | ReportFormat::Both) {
        let path = dir.join("bundle.json");
        std::fs::write(&path, bundle_json(bundle))?;
        out.push(path);
    }
    if !matches!(format, ReportFormat::CsvTables | ReportFormat::Both) {
        return Ok(out);
    }
    write_csv(dir, "verdicts.csv", &bundle.acceptance, &mut out)?;
    if let Some(r) = &bundle.regularization {
        write_csv(dir, "regularization.csv", &r.rows, &mut out)?;
        if let Some(p) = &r.preservation {
            write_csv(dir, "preservation.csv", &p.rows, &mut out)?;
        }
    }
    if let Some(r) = &bundle.resolvent {
        let mu0 = r.mu0.mu_list.iter().zip(&r.mu0.sup_of_resolvent_of_one);
        write_csv(dir, "mu0.csv", mu0.map(|(&mu, &s)| Mu0Csv { mu, sup_of_resolvent_of_one: s }), &mut out)?;
        write_csv(dir, "positivity.csv", &r.positivity, &mut out)?;
        if let Some(s) = &r.star {
            let rows = s.rows.iter().map(|x| StarCsv {
                mu: x.mu,
                grad_norm_q: x.grad_norm_q,
                grad_norm_qj: x.grad_norm_qj,
                residual: x.residual,
            });
            write_csv(dir, "star.csv", rows, &mut out)?;
        }
        if let Some(c) = &r.convergence {
            write_csv(dir, "convergence.csv", &c.rows, &mut out)?;
        }
        if let Some(w) = &r.weighted {
            let rows = [&w.estimates.e1, &w.estimates.e2].into_iter().flat_map(|e| {
                (0..e.lhs.len()).map(move |i| EstimateCsv {
                    estimate_id: &e.estimate_id,
                    row: i,
                    lhs: e.lhs[i],
                    rhs: e.rhs[i],
                    ratio: e.ratio[i],
                })
            });
            write_csv(dir, "weighted.csv", rows, &mut out)?;
        }
        if let Some(d) = &r.domain {
            write_csv(dir, "domain.csv", [d], &mut out)?;
        }
    }
    if let Some(s) = &bundle.simulation {
        let rows = s.martingale.iter().flat_map(|m| {
            (0..m.times.len()).map(move |i| MartingaleCsv { f_tag: &m.f_tag, t: m.times[i], mean: m.mean[i], se: m.se[i], z: m.z[i] })
        });
        write_csv(dir, "martingale.csv", rows, &mut out)?;
        if let Some(h) = &s.hitting {
            write_csv(dir, "hitting.csv", &h.hits, &mut out)?;
            write_csv(dir, "levels.csv", &h.levels, &mut out)?;
        }
    }
    Ok(out)
}
