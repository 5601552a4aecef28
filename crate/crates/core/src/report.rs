//! CSV, JSON and DOT serialization of study and rolling results.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::rolling::RollingReport;
use crate::study::{Estimator, SimulationReport};

/// Width of the ν̂ histogram bins below [`DOF_BIN_LIMIT`].
pub const DOF_BIN_WIDTH: f64 = 0.5;
pub const DOF_BIN_LIMIT: f64 = 20.0;

#[derive(Debug, Clone, Serialize)]
pub struct HistogramBin {
    pub lower: f64,
    /// `None` for the open last bin.
    pub upper: Option<f64>,
    pub count: usize,
}

/// Counts in [k·w, (k+1)·w) up to `limit`, then one bin for [limit, ∞).
pub fn histogram(values: &[f64], width: f64, limit: f64) -> Vec<HistogramBin> {
    let closed = (limit / width).round() as usize;
    let mut bins: Vec<HistogramBin> = (0..closed)
        .map(|k| HistogramBin {
            lower: k as f64 * width,
            upper: Some((k + 1) as f64 * width),
            count: 0,
        })
        .collect();
    bins.push(HistogramBin {
        lower: limit,
        upper: None,
        count: 0,
    });
    for v in values {
        let k = if *v >= limit {
            closed
        } else {
            (v.max(0.0) / width).floor() as usize
        };
        bins[k.min(closed)].count += 1;
    }
    bins
}

fn format_value(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(header)?;
    for row in rows {
        out.write_record(row)?;
    }
    out.flush()?;
    Ok(())
}

fn write_metadata<T: Serialize>(
    dir: &Path,
    kind: &str,
    config: &T,
    seed: Option<u64>,
) -> Result<PathBuf> {
    let doc = serde_json::json!({
        "report": kind,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": config,
    });
    let path = dir.join("metadata.json");
    fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(path)
}

/// Writes `maee.csv` (one row per ν, one column per estimator),
/// `exclusions.csv`, `replicates.csv`, `dof_histogram.csv` and
/// `metadata.json`. Only the metadata is written for an empty report.
pub fn emit_simulation(report: &SimulationReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = vec![write_metadata(
        dir,
        "simulation",
        &report.config,
        Some(report.config.base_seed),
    )?];
    if report.settings.is_empty() {
        return Ok(written);
    }
    let estimators = &report.config.estimators;
    let mut header = vec!["nu".to_string()];
    header.extend(estimators.iter().map(|e| e.to_string()));

    let maee_rows: Vec<Vec<String>> = report
        .settings
        .iter()
        .map(|s| {
            let mut row = vec![s.nu.label()];
            row.extend(
                estimators
                    .iter()
                    .map(|e| format_value(s.maee.get(e).copied().flatten())),
            );
            row
        })
        .collect();
    let path = dir.join("maee.csv");
    write_csv(&path, &header, &maee_rows)?;
    written.push(path);

    let exclusion_rows: Vec<Vec<String>> = report
        .settings
        .iter()
        .map(|s| {
            let mut row = vec![s.nu.label()];
            row.extend(
                estimators
                    .iter()
                    .map(|e| s.exclusions.get(e).copied().unwrap_or(0).to_string()),
            );
            row
        })
        .collect();
    let path = dir.join("exclusions.csv");
    write_csv(&path, &header, &exclusion_rows)?;
    written.push(path);

    let mut rep_header = vec![
        "nu".to_string(),
        "replicate".to_string(),
        "seed".to_string(),
    ];
    rep_header.extend(estimators.iter().map(|e| format!("maee_{e}")));
    rep_header.push("dof_estimate".into());
    let rep_rows: Vec<Vec<String>> = report
        .settings
        .iter()
        .flat_map(|s| {
            s.replicates.iter().map(move |r| {
                let mut row = vec![s.nu.label(), r.replicate.to_string(), r.seed.to_string()];
                row.extend(
                    estimators
                        .iter()
                        .map(|e| format_value(r.maee.get(e).copied().flatten())),
                );
                row.push(format_value(r.dof_estimate));
                row
            })
        })
        .collect();
    let path = dir.join("replicates.csv");
    write_csv(&path, &rep_header, &rep_rows)?;
    written.push(path);

    if estimators.contains(&Estimator::TlassoEstimated) {
        let hist_header: Vec<String> = ["nu", "lower", "upper", "count"].map(String::from).to_vec();
        let hist_rows: Vec<Vec<String>> = report
            .settings
            .iter()
            .flat_map(|s| {
                histogram(&s.dof_estimates, DOF_BIN_WIDTH, DOF_BIN_LIMIT)
                    .into_iter()
                    .map(move |b| {
                        vec![
                            s.nu.label(),
                            b.lower.to_string(),
                            format_value(b.upper),
                            b.count.to_string(),
                        ]
                    })
            })
            .collect();
        let path = dir.join("dof_histogram.csv");
        write_csv(&path, &hist_header, &hist_rows)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes `mafe.csv` (one row per horizon), `windows.csv` (one row per
/// window end date with order, ν̂, spillover index and MAFE_t),
/// `skipped.csv`, `networks/<date>_<estimator>.{json,dot}` and
/// `metadata.json`.
pub fn emit_rolling(report: &RollingReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = vec![write_metadata(dir, "rolling", &report.config, None)?];
    if report.windows.is_empty() && report.skipped.is_empty() {
        return Ok(written);
    }
    let config = &report.config;
    let estimators = &config.estimators;

    let mut header = vec!["horizon".to_string()];
    header.extend(estimators.iter().map(|e| e.to_string()));
    let rows: Vec<Vec<String>> = config
        .horizons
        .iter()
        .map(|&h| {
            let mut row = vec![h.to_string()];
            row.extend(
                estimators
                    .iter()
                    .map(|&e| format_value(report.aggregate_mafe(h, e))),
            );
            row
        })
        .collect();
    let path = dir.join("mafe.csv");
    write_csv(&path, &header, &rows)?;
    written.push(path);

    let mut header = vec!["end_date".to_string(), "order".to_string()];
    for e in estimators {
        header.push(format!("index_{e}"));
        if matches!(e, Estimator::TlassoEstimated) {
            header.push(format!("dof_{e}"));
        }
        header.extend(config.horizons.iter().map(|h| format!("mafe_h{h}_{e}")));
    }
    let rows: Vec<Vec<String>> = report
        .windows
        .iter()
        .map(|w| {
            let mut row = vec![w.end_date.to_string(), w.order.to_string()];
            for e in estimators {
                let fit = w.estimators.get(e);
                row.push(format_value(fit.map(|f| f.spillover_index)));
                if matches!(e, Estimator::TlassoEstimated) {
                    row.push(format_value(fit.and_then(|f| f.dof)));
                }
                row.extend(
                    config
                        .horizons
                        .iter()
                        .map(|h| format_value(fit.and_then(|f| f.mafe.get(h).copied()))),
                );
            }
            row
        })
        .collect();
    let path = dir.join("windows.csv");
    write_csv(&path, &header, &rows)?;
    written.push(path);

    let rows: Vec<Vec<String>> = report
        .skipped
        .iter()
        .map(|s| vec![s.end_date.to_string(), s.reason.clone()])
        .collect();
    let path = dir.join("skipped.csv");
    write_csv(
        &path,
        &["end_date".to_string(), "reason".to_string()],
        &rows,
    )?;
    written.push(path);

    let networks: Vec<_> = report
        .windows
        .iter()
        .flat_map(|w| w.networks.iter().map(move |(e, n)| (w.end_date, *e, n)))
        .collect();
    if !networks.is_empty() {
        let net_dir = dir.join("networks");
        fs::create_dir_all(&net_dir)?;
        for (date, estimator, network) in networks {
            let stem = format!("{date}_{estimator}");
            let json = net_dir.join(format!("{stem}.json"));
            fs::write(&json, network.to_json()? + "\n")?;
            let dot = net_dir.join(format!("{stem}.dot"));
            fs::write(&dot, network.to_dot())?;
            written.extend([json, dot]);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::{SimStudyConfig, SimulationReport};

    #[test]
    fn histogram_counts_and_overflow() {
        let bins = histogram(&[0.1, 0.6, 0.9, 3.0, 25.0, 1000.0], 0.5, 2.0);
        let counts: Vec<usize> = bins.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![1, 2, 0, 0, 3]);
        assert_eq!(bins.last().unwrap().upper, None);
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 6);
    }

    #[test]
    fn empty_report_writes_metadata_only() {
        let dir = tempfile::tempdir().unwrap();
        let report = SimulationReport {
            config: SimStudyConfig::default(),
            settings: vec![],
        };
        let written = emit_simulation(&report, dir.path()).unwrap();
        assert_eq!(written, vec![dir.path().join("metadata.json")]);
        let meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&written[0]).unwrap()).unwrap();
        assert_eq!(meta["seed"], 1);
        assert_eq!(meta["config"]["replicates"], 100);
    }
}
