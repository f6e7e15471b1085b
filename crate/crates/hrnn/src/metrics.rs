//! Line-delimited metrics: one self-describing JSON record per line,
//! appended and flushed per record so a crashed run keeps everything it
//! logged. The CSV exporter flattens records for plotting.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricRecord {
    pub kind: String,
    pub step: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task_nats: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task_bits: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aux_nats: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub combined_nats: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ledger_peak: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<BTreeMap<String, f64>>,
    pub wall_ms: f64,
}

impl MetricRecord {
    pub fn train(step: u64, report: &crate::training::LossReport, ledger_peak: Option<u64>, wall_ms: f64) -> Self {
        MetricRecord {
            kind: "train".into(),
            step,
            task_nats: Some(report.task_nats),
            task_bits: Some(report.task_bits()),
            aux_nats: Some(report.aux_nats.clone()),
            beta: Some(report.beta.clone()),
            combined_nats: Some(report.combined_nats),
            ledger_peak,
            eval: None,
            wall_ms,
        }
    }

    pub fn eval(step: u64, metrics: BTreeMap<String, f64>, wall_ms: f64) -> Self {
        MetricRecord {
            kind: "eval".into(),
            step,
            task_nats: None,
            task_bits: None,
            aux_nats: None,
            beta: None,
            combined_nats: None,
            ledger_peak: None,
            eval: Some(metrics),
            wall_ms,
        }
    }

    /// Copy with wall time zeroed: run-to-run comparisons ignore timing.
    pub fn without_wall(&self) -> MetricRecord {
        let mut r = self.clone();
        r.wall_ms = 0.0;
        r
    }
}

pub trait MetricsSink {
    fn record(&mut self, record: &MetricRecord) -> Result<()>;
}

/// Appends one JSON line per record and flushes immediately.
pub struct JsonlWriter {
    out: std::io::BufWriter<std::fs::File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<JsonlWriter> {
        let file = std::fs::File::create(path)?;
        Ok(JsonlWriter {
            out: std::io::BufWriter::new(file),
        })
    }
}

impl MetricsSink for JsonlWriter {
    fn record(&mut self, record: &MetricRecord) -> Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Data(format!("metrics serialization: {e}")))?;
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }
}

/// In-memory sink for tests and pilots.
#[derive(Default)]
pub struct VecSink {
    pub records: Vec<MetricRecord>,
}

impl MetricsSink for VecSink {
    fn record(&mut self, record: &MetricRecord) -> Result<()> {
        self.records.push(record.clone());
        Ok(())
    }
}

/// Parse a metrics log; errors carry the 1-based line number.
pub fn read_log(path: &Path) -> Result<Vec<MetricRecord>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: MetricRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("metrics log line {}: {e}", i + 1)))?;
        records.push(record);
    }
    Ok(records)
}

/// Flatten records to CSV. Array fields get indexed columns; eval metrics
/// get one column per (sorted) name observed anywhere in the log.
pub fn export_csv(records: &[MetricRecord]) -> String {
    let aux_n = records
        .iter()
        .filter_map(|r| r.aux_nats.as_ref().map(|a| a.len()))
        .max()
        .unwrap_or(0);
    let beta_n = records
        .iter()
        .filter_map(|r| r.beta.as_ref().map(|a| a.len()))
        .max()
        .unwrap_or(0);
    let eval_keys: Vec<String> = {
        let mut keys = std::collections::BTreeSet::new();
        for r in records {
            if let Some(e) = &r.eval {
                keys.extend(e.keys().cloned());
            }
        }
        keys.into_iter().collect()
    };

    let mut header: Vec<String> = vec![
        "kind".into(),
        "step".into(),
        "task_nats".into(),
        "task_bits".into(),
        "combined_nats".into(),
    ];
    header.extend((0..aux_n).map(|i| format!("aux_nats_{i}")));
    header.extend((0..beta_n).map(|i| format!("beta_{i}")));
    header.push("ledger_peak".into());
    header.extend(eval_keys.iter().map(|k| format!("eval_{k}")));
    header.push("wall_ms".into());

    let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    let mut out = header.join(",") + "\n";
    for r in records {
        let mut row: Vec<String> = vec![
            r.kind.clone(),
            r.step.to_string(),
            fmt(r.task_nats),
            fmt(r.task_bits),
            fmt(r.combined_nats),
        ];
        for i in 0..aux_n {
            row.push(fmt(r.aux_nats.as_ref().and_then(|a| a.get(i).copied())));
        }
        for i in 0..beta_n {
            row.push(fmt(r.beta.as_ref().and_then(|a| a.get(i).copied())));
        }
        row.push(r.ledger_peak.map(|v| v.to_string()).unwrap_or_default());
        for k in &eval_keys {
            row.push(fmt(r.eval.as_ref().and_then(|e| e.get(k).copied())));
        }
        row.push(format!("{}", r.wall_ms));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
