//! CSV results: one summary file plus a raw-sample file next to it.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::{AmType, BenchError, BenchRecord, BenchTransport, Outcome, Result, Topology};

pub const CSV_HEADER: [&str; 7] =
    ["topology", "transport", "am_type", "payload_bytes", "iterations", "metric", "value"];
const SAMPLES_HEADER: [&str; 6] = ["topology", "transport", "am_type", "payload_bytes", "sample", "latency_ns"];

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub metric: &'static str,
    pub value: String,
}

/// Summary statistics reported for one record.
pub fn summary_rows(r: &BenchRecord) -> Vec<SummaryRow> {
    let row = |metric, value: String| SummaryRow { metric, value };
    match &r.outcome {
        Outcome::Latency { .. } => {
            vec![row("latency_median_ns", fmt_f64(r.median_ns())), row("latency_mean_ns", fmt_f64(r.mean_ns()))]
        }
        Outcome::Throughput { elapsed_ns } => vec![
            row("throughput_bytes_per_s", fmt_f64(r.throughput_bytes_per_s())),
            row("elapsed_ns", elapsed_ns.to_string()),
        ],
        Outcome::Skipped(reason) => vec![row("skipped", reason.clone())],
        Outcome::Failed(reason) => vec![row("error", reason.clone())],
    }
}

fn fmt_f64(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".into(), |v| v.to_string())
}

/// `results.csv` -> `results.samples.csv`
pub fn samples_path(out: &Path) -> PathBuf {
    out.with_extension("samples.csv")
}

/// `results.csv` -> `results.meta.txt`
pub fn meta_path(out: &Path) -> PathBuf {
    out.with_extension("meta.txt")
}

/// Writes the summary CSV and, when any record has latency samples, the
/// raw-sample file beside it.
pub fn emit_results(records: &[BenchRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(BenchError::EmptyRecords);
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in records {
        for s in summary_rows(r) {
            w.write_record([
                r.topology.as_str(),
                r.transport.as_str(),
                r.am_type.as_str(),
                &r.payload_bytes.to_string(),
                &r.iterations.to_string(),
                s.metric,
                &s.value,
            ])?;
        }
    }
    w.flush()?;

    let with_samples: Vec<_> = records
        .iter()
        .filter_map(|r| match &r.outcome {
            Outcome::Latency { samples_ns } => Some((r, samples_ns)),
            _ => None,
        })
        .collect();
    if !with_samples.is_empty() {
        let mut w = csv::Writer::from_path(samples_path(path))?;
        w.write_record(SAMPLES_HEADER)?;
        for (r, samples) in with_samples {
            for (i, s) in samples.iter().enumerate() {
                w.write_record([
                    r.topology.as_str(),
                    r.transport.as_str(),
                    r.am_type.as_str(),
                    &r.payload_bytes.to_string(),
                    &i.to_string(),
                    &s.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

type Key = (Topology, BenchTransport, AmType, usize);

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(i).ok_or_else(|| BenchError::Parse(format!("missing column {i}")))?;
    raw.parse().map_err(|e| BenchError::Parse(format!("column {i} {raw:?}: {e}")))
}

fn key(rec: &csv::StringRecord) -> Result<Key> {
    Ok((field(rec, 0)?, field(rec, 1)?, field(rec, 2)?, field(rec, 3)?))
}

fn check_header(r: &mut csv::Reader<std::fs::File>, want: &[&str]) -> Result<()> {
    let h = r.headers()?;
    if h.iter().ne(want.iter().copied()) {
        return Err(BenchError::Parse(format!("unexpected header {h:?}")));
    }
    Ok(())
}

/// Reads back what [`emit_results`] wrote.
pub fn parse_results(path: &Path) -> Result<Vec<BenchRecord>> {
    let mut samples: HashMap<Key, Vec<u64>> = HashMap::new();
    let sp = samples_path(path);
    if sp.exists() {
        let mut r = csv::Reader::from_path(&sp)?;
        check_header(&mut r, &SAMPLES_HEADER)?;
        for rec in r.records() {
            let rec = rec?;
            samples.entry(key(&rec)?).or_default().push(field(&rec, 5)?);
        }
    }

    let mut r = csv::Reader::from_path(path)?;
    check_header(&mut r, &CSV_HEADER)?;
    let mut out: Vec<(Key, BenchRecord)> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let k = key(&rec)?;
        let value = rec.get(6).unwrap_or_default().to_string();
        let metric = rec.get(5).unwrap_or_default();
        if let Some((_, prev)) = out.last_mut().filter(|(pk, _)| *pk == k) {
            if let (Outcome::Throughput { elapsed_ns }, "elapsed_ns") = (&mut prev.outcome, metric) {
                *elapsed_ns = field(&rec, 6)?;
            }
            continue;
        }
        let outcome = match metric {
            "latency_median_ns" | "latency_mean_ns" => {
                Outcome::Latency { samples_ns: samples.remove(&k).unwrap_or_default() }
            }
            "throughput_bytes_per_s" => Outcome::Throughput { elapsed_ns: 0 },
            "elapsed_ns" => Outcome::Throughput { elapsed_ns: field(&rec, 6)? },
            "skipped" => Outcome::Skipped(value),
            "error" => Outcome::Failed(value),
            m => return Err(BenchError::Parse(format!("unknown metric {m:?}"))),
        };
        let record = BenchRecord {
            topology: k.0,
            transport: k.1,
            am_type: k.2,
            payload_bytes: k.3,
            iterations: field(&rec, 4)?,
            outcome,
        };
        out.push((k, record));
    }
    Ok(out.into_iter().map(|(_, r)| r).collect())
}
