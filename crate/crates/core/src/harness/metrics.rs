use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One CSV row. Latency columns are left empty when timing is disabled so
/// that operation-count outputs are byte-identical across runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub experiment: String,
    pub method: String,
    /// Month index or swept parameter value.
    pub step: f64,
    pub live_records: u64,
    /// Distance computations spent inserting during this step.
    pub insert_ops: u64,
    pub insert_latency_ms: Option<f64>,
    pub maintenance_ops: u64,
    pub compaction_ops: u64,
    /// Distance computations summed over the query set.
    pub query_ops: u64,
    /// Mean per query.
    pub query_latency_ms: Option<f64>,
    /// Median per query.
    pub distance_computations: f64,
    pub recall_at_1: Option<f64>,
    pub recall_at_10: Option<f64>,
    pub recall_at_50: Option<f64>,
    pub recall_at_100: Option<f64>,
}

impl MetricRow {
    pub fn set_recall(&mut self, k: usize, value: f64) {
        match k {
            1 => self.recall_at_1 = Some(value),
            10 => self.recall_at_10 = Some(value),
            50 => self.recall_at_50 = Some(value),
            100 => self.recall_at_100 = Some(value),
            _ => {}
        }
    }

    pub fn recall(&self, k: usize) -> Option<f64> {
        match k {
            1 => self.recall_at_1,
            10 => self.recall_at_10,
            50 => self.recall_at_50,
            100 => self.recall_at_100,
            _ => None,
        }
    }
}

pub fn write_csv<W: Write>(out: W, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record([
            "experiment",
            "method",
            "step",
            "live_records",
            "insert_ops",
            "insert_latency_ms",
            "maintenance_ops",
            "compaction_ops",
            "query_ops",
            "query_latency_ms",
            "distance_computations",
            "recall_at_1",
            "recall_at_10",
            "recall_at_50",
            "recall_at_100",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[MetricRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn write_csv_file(path: &Path, rows: &[MetricRow]) -> Result<()> {
    write_csv(std::fs::File::create(path)?, rows)
}

pub fn read_csv_file(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Median, averaging the two middle values for even lengths.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
