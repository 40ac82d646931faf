use std::fs;
use std::path::Path;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::{
    run_experiment, BiasAxis, CellSummary, ExperimentConfig, ExperimentError, ExperimentResult, MetricName, Protocol,
    RunOptions,
};
use crate::data::TabularDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Text,
}

/// `u=0.2`, or `u=1;f=0.2` on joint grids.
pub fn level_label(axes: &[BiasAxis], levels: &[f64]) -> String {
    axes.iter()
        .zip(levels)
        .map(|(a, l)| format!("{}={l}", a.symbol()))
        .collect::<Vec<_>>()
        .join(";")
}

/// `mean ± std` to four decimals with the significance marker, or `n/a`.
pub fn format_cell(cell: &CellSummary) -> String {
    match (cell.mean, cell.std) {
        (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}{}", cell.significance.marker()),
        _ => "n/a".to_string(),
    }
}

/// One row per metric, one column per grid cell.
pub fn emit_table(result: &ExperimentResult, format: TableFormat) -> String {
    let mut columns: Vec<&[f64]> = Vec::new();
    let mut metrics: Vec<MetricName> = Vec::new();
    for c in &result.cells {
        if !columns.contains(&&c.levels[..]) {
            columns.push(&c.levels);
        }
        if !metrics.contains(&c.metric) {
            metrics.push(c.metric);
        }
    }
    let mut rows: Vec<Vec<String>> = Vec::with_capacity(metrics.len() + 1);
    let mut header = vec!["dataset".to_string(), "metric".to_string()];
    header.extend(columns.iter().map(|l| level_label(&result.axes, l)));
    rows.push(header);
    for metric in metrics {
        let mut row = vec![result.dataset_id.clone(), metric.to_string()];
        row.extend(columns.iter().map(|l| {
            result
                .cell(l, metric)
                .map(format_cell)
                .unwrap_or_else(|| "n/a".to_string())
        }));
        rows.push(row);
    }

    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in &rows {
                w.write_record(row).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
        }
        TableFormat::Text => {
            let width = |k: usize| rows.iter().map(|r| r[k].chars().count()).max().unwrap_or(0);
            let widths: Vec<usize> = (0..rows[0].len()).map(width).collect();
            let mut out = String::new();
            for row in &rows {
                let cells: Vec<String> = row
                    .iter()
                    .zip(&widths)
                    .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                    .collect();
                out.push_str(cells.join("  ").trim_end());
                out.push('\n');
            }
            out
        }
    }
}

fn repetitions_csv(result: &ExperimentResult) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["repetition".to_string(), "seed".to_string()];
    header.extend(result.axes.iter().map(|a| a.symbol().to_string()));
    header.extend(["metric", "value", "error"].map(String::from));
    w.write_record(&header).expect("in-memory write");
    for r in &result.records {
        let mut row = vec![r.repetition.to_string(), r.seed.to_string()];
        row.extend(r.levels.iter().map(|l| l.to_string()));
        row.push(r.metric.to_string());
        row.push(r.value.map(|v| format!("{v:.4}")).unwrap_or_default());
        row.push(r.error.clone().unwrap_or_default());
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Incomplete,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub status: RunStatus,
    pub artifact_version: String,
    pub protocol: Protocol,
    pub seeds: Vec<u64>,
    /// Every grid cell of a repetition shares its seed, so differences
    /// between cells are paired.
    pub paired_seeds: bool,
    pub started_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub substitutions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    let io = |e: std::io::Error| ExperimentError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let tmp = path.with_extension("partial");
    fs::write(&tmp, contents).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn write_meta(dir: &Path, meta: &RunMeta) -> Result<(), ExperimentError> {
    write_atomic(
        &dir.join("meta.json"),
        &serde_json::to_string_pretty(meta).expect("meta serializes"),
    )
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Writes `summary.csv`, `repetitions.csv`, `config.json` and a completed
/// `meta.json` into `dir`.
pub fn write_results(result: &ExperimentResult, config: &ExperimentConfig, dir: &Path, started_at: &str) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| ExperimentError::Io {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    write_atomic(&dir.join("config.json"), &config.to_json())?;
    write_atomic(&dir.join("summary.csv"), &emit_table(result, TableFormat::Csv))?;
    write_atomic(&dir.join("repetitions.csv"), &repetitions_csv(result))?;
    write_meta(
        dir,
        &RunMeta {
            status: RunStatus::Complete,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            protocol: result.protocol,
            seeds: result.seeds.clone(),
            paired_seeds: true,
            started_at: started_at.to_string(),
            finished_at: Some(now()),
            wall_time_secs: Some(result.wall_time_secs),
            substitutions: result.substitutions.clone(),
            error: None,
        },
    )
}

/// Runs the experiment into `dir`. `meta.json` reads `incomplete` while the
/// run is in progress and `failed` if it stops with an error; result files
/// only appear once every repetition has finished.
pub fn run_to_dir(
    config: &ExperimentConfig,
    dataset: &TabularDataset,
    dir: &Path,
    options: RunOptions,
) -> Result<ExperimentResult, ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| ExperimentError::Io {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    for stale in ["summary.csv", "repetitions.csv"] {
        let _ = fs::remove_file(dir.join(stale));
    }
    let started_at = now();
    let mut meta = RunMeta {
        status: RunStatus::Incomplete,
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        protocol: config.protocol,
        seeds: (0..config.repetitions as u64).map(|i| config.base_seed + i).collect(),
        paired_seeds: true,
        started_at: started_at.clone(),
        finished_at: None,
        wall_time_secs: None,
        substitutions: Vec::new(),
        error: None,
    };
    write_atomic(&dir.join("config.json"), &config.to_json())?;
    write_meta(dir, &meta)?;
    match run_experiment(config, dataset, options) {
        Ok(result) => {
            write_results(&result, config, dir, &started_at)?;
            Ok(result)
        }
        Err(e) => {
            meta.status = RunStatus::Failed;
            meta.finished_at = Some(now());
            meta.error = Some(e.to_string());
            write_meta(dir, &meta)?;
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::Significance;

    fn cell(levels: Vec<f64>, metric: MetricName, mean: f64, std: f64, sig: Significance) -> CellSummary {
        CellSummary {
            effective_levels: levels.clone(),
            levels,
            metric,
            mean: Some(mean),
            std: Some(std),
            values: vec![Some(mean)],
            p_value: None,
            significance: sig,
        }
    }

    fn result() -> ExperimentResult {
        ExperimentResult {
            dataset_id: "adult".into(),
            protocol: Protocol::Fairness,
            axes: vec![BiasAxis::LabelFlip],
            cells: vec![
                cell(vec![0.0], MetricName::Eo, 0.08123, 0.02, Significance::None),
                cell(vec![0.8], MetricName::Eo, 0.52, 0.031, Significance::P01),
                cell(vec![0.0], MetricName::Ba, 0.75, 0.01, Significance::None),
                cell(vec![0.8], MetricName::Ba, 0.74, 0.01, Significance::P05),
            ],
            records: Vec::new(),
            seeds: vec![0],
            substitutions: Vec::new(),
            wall_time_secs: 0.0,
        }
    }

    #[test]
    fn csv_table_layout_and_parse_back() {
        let text = emit_table(&result(), TableFormat::Csv);
        let mut r = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(r.headers().unwrap(), vec!["dataset", "metric", "f=0", "f=0.8"]);
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(&rows[0][2], "0.0812 ± 0.0200");
        assert_eq!(&rows[0][3], "0.5200 ± 0.0310**");
        assert_eq!(&rows[1][3], "0.7400 ± 0.0100*");
        let mean: f64 = rows[0][2].split(' ').next().unwrap().parse().unwrap();
        assert!((mean - 0.08123).abs() <= 5e-5);
    }

    #[test]
    fn text_table_is_aligned() {
        let text = emit_table(&result(), TableFormat::Text);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let col = lines[0].chars().collect::<String>().find("f=0.8").unwrap();
        let row: String = lines[1].chars().skip(col).collect();
        assert!(row.starts_with("0.5200 ± 0.0310**"), "{text}");
    }

    #[test]
    fn joint_labels() {
        assert_eq!(
            level_label(&[BiasAxis::Underrepresentation, BiasAxis::LabelFlip], &[1.0, 0.2]),
            "u=1;f=0.2"
        );
    }
}
