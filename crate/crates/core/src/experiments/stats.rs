//! Per-realization rate tables and box-plot summaries.
//!
//! Quartiles use linear interpolation between order statistics
//! (`h = (n − 1)q`). Points beyond 1.5 IQR from the box are outliers; the
//! whiskers end at the most extreme remaining points.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version of the CSV/JSON report layouts.
pub const REPORT_VERSION: u32 = 1;

/// Provenance carried by every report and parameter file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
}

impl Stamp {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Self {
            format_version: REPORT_VERSION,
            config_hash,
            seed,
        }
    }

    pub fn header_line(&self) -> String {
        format!(
            "# format_version={} config_hash={} seed={}",
            self.format_version, self.config_hash, self.seed
        )
    }

    fn parse_header(line: &str) -> Result<Self> {
        let body = line
            .strip_prefix("# ")
            .ok_or_else(|| Error::Format("stats file lacks its stamp line".into()))?;
        let mut version = None;
        let mut hash = None;
        let mut seed = None;
        for kv in body.split_whitespace() {
            match kv.split_once('=') {
                Some(("format_version", v)) => version = v.parse().ok(),
                Some(("config_hash", v)) => hash = Some(v.to_string()),
                Some(("seed", v)) => seed = v.parse().ok(),
                _ => {}
            }
        }
        match (version, hash, seed) {
            (Some(format_version), Some(config_hash), Some(seed)) => Ok(Self {
                format_version,
                config_hash,
                seed,
            }),
            _ => Err(Error::Format(format!("malformed stamp line {line:?}"))),
        }
    }
}

/// JSON document with a stamp next to its payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub stamp: Stamp,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub realization: usize,
    pub model: String,
    pub stage: String,
    pub false_positive: f64,
    pub false_negative: f64,
    pub truth_area: usize,
}

const CSV_HEADER: &str = "realization,model,stage,false_positive,false_negative,truth_area";

pub fn write_rates(stamp: &Stamp, rows: &[RateRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "{}", stamp.header_line())?;
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.realization, r.model, r.stage, r.false_positive, r.false_negative, r.truth_area
        )?;
    }
    Ok(())
}

pub fn read_rates(r: impl BufRead) -> Result<(Stamp, Vec<RateRow>)> {
    let mut lines = r.lines();
    let stamp = Stamp::parse_header(&lines.next().ok_or_else(|| Error::Format("empty stats file".into()))??)?;
    if lines.next().transpose()?.as_deref() != Some(CSV_HEADER) {
        return Err(Error::Format("unexpected stats header".into()));
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Format(format!("malformed stats row {line:?}"));
        if f.len() != 6 {
            return Err(bad());
        }
        rows.push(RateRow {
            realization: f[0].parse().map_err(|_| bad())?,
            model: f[1].to_string(),
            stage: f[2].to_string(),
            false_positive: f[3].parse().map_err(|_| bad())?,
            false_negative: f[4].parse().map_err(|_| bad())?,
            truth_area: f[5].parse().map_err(|_| bad())?,
        });
    }
    Ok((stamp, rows))
}

/// Concatenates rate tables, refusing inputs written by another format version.
pub fn merge_rates(inputs: Vec<(Stamp, Vec<RateRow>)>) -> Result<(Vec<Stamp>, Vec<RateRow>)> {
    let mut stamps = Vec::new();
    let mut rows = Vec::new();
    for (stamp, r) in inputs {
        if stamp.format_version != REPORT_VERSION {
            return Err(Error::Format(format!(
                "stats file has format version {}, expected {REPORT_VERSION}",
                stamp.format_version
            )));
        }
        stamps.push(stamp);
        rows.extend(r);
    }
    Ok((stamps, rows))
}

/// Linearly interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSummary {
    pub count: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// `None` for a single sample.
    pub whisker_low: Option<f64>,
    pub whisker_high: Option<f64>,
    pub outliers: Vec<f64>,
    pub mean: f64,
}

impl BoxSummary {
    pub fn of(values: &[f64]) -> Result<Self> {
        let mut v: Vec<f64> = values.to_vec();
        if v.is_empty() || v.iter().any(|x| x.is_nan()) {
            return Err(Error::InvalidArgument("box summary needs finite samples".into()));
        }
        v.sort_by(f64::total_cmp);
        let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        if v.len() == 1 {
            return Ok(Self {
                count: 1,
                median,
                q1,
                q3,
                whisker_low: None,
                whisker_high: None,
                outliers: Vec::new(),
                mean,
            });
        }
        let iqr = q3 - q1;
        let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = v.iter().copied().filter(|x| *x >= lo && *x <= hi).collect();
        Ok(Self {
            count: v.len(),
            median,
            q1,
            q3,
            whisker_low: inside.first().copied(),
            whisker_high: inside.last().copied(),
            outliers: v.iter().copied().filter(|x| *x < lo || *x > hi).collect(),
            mean,
        })
    }
}

/// Summaries keyed by `model/stage/metric`, in sorted key order.
pub fn summarize(rows: &[RateRow]) -> Result<BTreeMap<String, BoxSummary>> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        for (metric, v) in [("false_positive", r.false_positive), ("false_negative", r.false_negative)] {
            groups
                .entry(format!("{}/{}/{}", r.model, r.stage, metric))
                .or_default()
                .push(v);
        }
    }
    groups
        .into_iter()
        .map(|(k, v)| Ok((k, BoxSummary::of(&v)?)))
        .collect()
}

/// Plot-ready box table, one line per group.
pub fn write_boxplot_csv(summary: &BTreeMap<String, BoxSummary>, mut w: impl Write) -> Result<()> {
    writeln!(w, "group,count,whisker_low,q1,median,q3,whisker_high,outliers")?;
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    for (k, s) in summary {
        let outliers: Vec<String> = s.outliers.iter().map(|x| x.to_string()).collect();
        writeln!(
            w,
            "{k},{},{},{},{},{},{},{}",
            s.count,
            opt(s.whisker_low),
            s.q1,
            s.median,
            s.q3,
            opt(s.whisker_high),
            outliers.join(";")
        )?;
    }
    Ok(())
}
