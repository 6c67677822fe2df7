//! Fixed-schema metric CSV: `metric,split,value,threshold,seed`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "metric,split,value,threshold,seed";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub split: String,
    pub value: f64,
    pub threshold: Option<f64>,
    pub seed: u64,
}

impl MetricRow {
    pub fn new(
        metric: impl Into<String>,
        split: impl Into<String>,
        value: f64,
        threshold: Option<f64>,
        seed: u64,
    ) -> Self {
        Self {
            metric: metric.into(),
            split: split.into(),
            value,
            threshold,
            seed,
        }
    }
}

fn field(s: &str) -> Result<&str> {
    if s.contains([',', '\n', '"']) {
        return Err(Error::InvalidArgument(format!("CSV field {s:?} needs quoting")));
    }
    Ok(s)
}

/// Shortest round-trip decimal, so equal values always print identically.
pub fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> Result<String> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let t = r.threshold.map(fmt_f64).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{}",
            field(&r.metric)?,
            field(&r.split)?,
            fmt_f64(r.value),
            t,
            r.seed
        )
        .expect("writing to a String");
    }
    Ok(out)
}

pub fn write_metrics_csv(rows: &[MetricRow], path: &Path) -> Result<()> {
    std::fs::write(path, metrics_csv(rows)?)?;
    Ok(())
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format("metrics CSV header".into()));
    }
    let num = |s: &str| -> Result<f64> {
        match s {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            _ => s.parse().map_err(|_| Error::Format(format!("bad number {s:?}"))),
        }
    };
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let [metric, split, value, threshold, seed] = f[..] else {
                return Err(Error::Format(format!("metrics row {line:?}")));
            };
            Ok(MetricRow {
                metric: metric.into(),
                split: split.into(),
                value: num(value)?,
                threshold: if threshold.is_empty() {
                    None
                } else {
                    Some(num(threshold)?)
                },
                seed: seed.parse().map_err(|_| Error::Format(format!("bad seed {seed:?}")))?,
            })
        })
        .collect()
}
