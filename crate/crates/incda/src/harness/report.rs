//! Aggregation of evaluation outputs into the summary table and
//! figure-ready files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::evaluate::{aggregate, ErrorRow, MethodAggregate, ReconRow, TimingRow};
use crate::dynamics::Normalizer;
use crate::error::{Error, Result};

pub const REPORT_HEADER: &str = "method,samples,mean_rmse,std_rmse,rel_time,median_iterations";

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::EmptyResults(path.display().to_string()));
    }
    let mut reader = csv::Reader::from_path(path)?;
    let rows: std::result::Result<Vec<T>, csv::Error> = reader.deserialize().collect();
    Ok(rows?)
}

#[derive(Debug, Serialize, Deserialize)]
struct FigureRow {
    sample_id: usize,
    series: String,
    t: usize,
    component: usize,
    value: f64,
}

/// Reads `errors.csv` and `timing.csv` from the run directory, writes
/// `report.csv` (stable header above), a human-readable `report.txt`, and
/// `figure_data.csv` with final reconstructions, normalized truths and
/// observations for the dumped samples.
pub fn write_report(config: &ExperimentConfig) -> Result<()> {
    let dir = &config.out_dir;
    let errors: Vec<ErrorRow> = read_rows(&dir.join("errors.csv"))?;
    if errors.is_empty() {
        return Err(Error::EmptyResults(dir.display().to_string()));
    }
    let timings: Vec<TimingRow> = read_rows(&dir.join("timing.csv")).unwrap_or_default();
    let aggregates = aggregate(&errors, &timings);

    write_report_csv(&dir.join("report.csv"), &aggregates)?;
    write_report_txt(&dir.join("report.txt"), &aggregates)?;
    write_figure_data(config)?;
    Ok(())
}

fn write_report_csv(path: &Path, aggregates: &[MethodAggregate]) -> Result<()> {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for a in aggregates {
        let rel = a
            .rel_time
            .map(|v| format!("{v}"))
            .unwrap_or_default();
        let med = a
            .median_iterations
            .map(|v| format!("{v}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            a.method, a.samples, a.mean_rmse, a.std_rmse, rel, med
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_report_txt(path: &Path, aggregates: &[MethodAggregate]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<22} {:>8} {:>12} {:>12} {:>10} {:>12}\n",
        "method", "samples", "mean rmse", "std rmse", "rel time", "med iters"
    ));
    out.push_str(&"-".repeat(80));
    out.push('\n');
    for a in aggregates {
        out.push_str(&format!(
            "{:<22} {:>8} {:>12.4} {:>12.4} {:>10} {:>12}\n",
            a.method,
            a.samples,
            a.mean_rmse,
            a.std_rmse,
            a.rel_time.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()),
            a.median_iterations
                .map(|v| format!("{v:.0}"))
                .unwrap_or_else(|| "-".into()),
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Final reconstruction per method for the dumped samples, alongside the
/// normalized truth and the observations, one tidy series per row group.
fn write_figure_data(config: &ExperimentConfig) -> Result<()> {
    let dir = &config.out_dir;
    let recon_path = dir.join("reconstructions.csv");
    if !recon_path.exists() {
        return Ok(());
    }
    let recon: Vec<ReconRow> = read_rows(&recon_path)?;
    let mut rows: Vec<FigureRow> = Vec::new();

    // Keep only the last iterate of each (sample, method).
    use std::collections::BTreeMap;
    let mut final_iter: BTreeMap<(usize, String), usize> = BTreeMap::new();
    for r in &recon {
        let key = (r.sample_id, r.method.clone());
        let entry = final_iter.entry(key).or_insert(r.iter);
        *entry = (*entry).max(r.iter);
    }
    let mut dumped: Vec<usize> = Vec::new();
    for r in &recon {
        if final_iter[&(r.sample_id, r.method.clone())] == r.iter {
            rows.push(FigureRow {
                sample_id: r.sample_id,
                series: r.method.clone(),
                t: r.t,
                component: r.component,
                value: r.value,
            });
        }
        if !dumped.contains(&r.sample_id) {
            dumped.push(r.sample_id);
        }
    }

    // Normalized truth series for the dumped samples.
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("trajectories.json"))?)?;
    let normalizer: Normalizer = serde_json::from_value(sidecar["normalizer"].clone())?;
    let phase_dim = sidecar["phase_dim"].as_u64().unwrap_or(0) as usize;

    #[derive(Deserialize)]
    struct TrajRow {
        traj_id: usize,
        t: usize,
        component: usize,
        value: f64,
    }
    let mut reader = csv::Reader::from_path(dir.join("trajectories_test.csv"))?;
    for row in reader.deserialize() {
        let row: TrajRow = row?;
        if dumped.contains(&row.traj_id) {
            rows.push(FigureRow {
                sample_id: row.traj_id,
                series: "truth".to_string(),
                t: row.t,
                component: row.component,
                value: normalizer.normalize_value(row.component, row.value),
            });
        }
    }

    // Observation series (already normalized in the dataset files).
    #[derive(Deserialize)]
    struct ObsRow {
        sample_id: usize,
        flat_index: usize,
        value: f64,
    }
    let mut reader = csv::Reader::from_path(dir.join("observations_test.csv"))?;
    for row in reader.deserialize() {
        let row: ObsRow = row?;
        if dumped.contains(&row.sample_id) && phase_dim > 0 {
            rows.push(FigureRow {
                sample_id: row.sample_id,
                series: "observations".to_string(),
                t: row.flat_index / phase_dim,
                component: row.flat_index % phase_dim,
                value: row.value,
            });
        }
    }

    rows.sort_by(|a, b| {
        (a.sample_id, &a.series, a.t, a.component).cmp(&(b.sample_id, &b.series, b.t, b.component))
    });
    let mut writer = csv::Writer::from_path(dir.join("figure_data.csv"))?;
    for row in &rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
