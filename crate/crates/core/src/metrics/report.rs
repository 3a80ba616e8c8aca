//! Per-case reports, aggregation, and the evaluation CSV format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::Mask;
use crate::error::{Error, Result};

use super::distance::surface_distances;
use super::overlap::overlap_metrics;

pub const METRIC_NAMES: [&str; 7] = ["dice", "jaccard", "cc", "adb", "hd95", "precision", "recall"];

/// Metrics of one case; undefined values are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub case_id: String,
    pub dice: Option<f64>,
    pub jaccard: Option<f64>,
    pub cc: Option<f64>,
    pub adb: Option<f64>,
    pub hd95: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// Directed 95th percentiles `(S→G, G→S)`.
    pub hd95_directed: Option<[f64; 2]>,
}

impl MetricsReport {
    /// Values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [Option<f64>; 7] {
        [self.dice, self.jaccard, self.cc, self.adb, self.hd95, self.precision, self.recall]
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        METRIC_NAMES.iter().position(|&m| m == metric).and_then(|i| self.values()[i])
    }
}

/// Distances use `spacing`; pass `[1.0; 3]` for voxel units.
pub fn evaluate_case_with_spacing(case_id: &str, s: &Mask, g: &Mask, spacing: [f64; 3]) -> Result<MetricsReport> {
    let o = overlap_metrics(s, g)?;
    let d = surface_distances(s, g, spacing)?;
    Ok(MetricsReport {
        case_id: case_id.to_string(),
        dice: o.dice,
        jaccard: o.jaccard,
        cc: o.cc,
        adb: d.as_ref().map(|d| d.adb()),
        hd95: d.as_ref().map(|d| d.hd95()),
        precision: o.precision,
        recall: o.recall,
        hd95_directed: d.as_ref().map(|d| d.hd95_directed()),
    })
}

pub fn evaluate_case(case_id: &str, s: &Mask, g: &Mask) -> Result<MetricsReport> {
    evaluate_case_with_spacing(case_id, s, g, [1.0; 3])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub sd: f64,
    /// Number of cases where the metric was defined.
    pub n: usize,
}

pub fn mean_sd(xs: &[f64]) -> Option<MeanSd> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
    Some(MeanSd { mean, sd, n })
}

/// Mean and SD per metric over the cases where it is defined.
pub fn aggregate(reports: &[MetricsReport]) -> [Option<MeanSd>; 7] {
    std::array::from_fn(|i| {
        let xs: Vec<f64> = reports.iter().filter_map(|r| r.values()[i]).collect();
        mean_sd(&xs)
    })
}

/// Aggregate table with one `mean±SD` row per result set.
pub fn format_table(rows: &[(String, [Option<MeanSd>; 7])]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<16}", "method");
    for m in METRIC_NAMES {
        let _ = write!(out, " {:>17}", m);
    }
    out.push('\n');
    for (name, agg) in rows {
        let _ = write!(out, "{:<16}", name);
        for a in agg {
            let cell = match a {
                Some(a) => format!("{:.4}±{:.4}", a.mean, a.sd),
                None => "n/a".to_string(),
            };
            let _ = write!(out, " {:>17}", cell);
        }
        out.push('\n');
    }
    out
}

const HEADER: [&str; 8] = ["case_id", "dice", "jaccard", "cc", "adb", "hd95", "precision", "recall"];

pub fn write_reports_csv(path: impl AsRef<Path>, reports: &[MetricsReport]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HEADER)?;
    for r in reports {
        let mut rec = vec![r.case_id.clone()];
        rec.extend(r.values().iter().map(|v| v.map(|x| format!("{x:?}")).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_reports_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsReport>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != HEADER {
        return Err(Error::format(path, format!("expected header {}, found {}", HEADER.join(","), header.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let mut v = [None; 7];
        for (j, slot) in v.iter_mut().enumerate() {
            let field = rec.get(j + 1).unwrap_or("").trim();
            if !field.is_empty() {
                let x = field
                    .parse::<f64>()
                    .map_err(|_| Error::format(path, format!("row {}: {} is not a number: {field:?}", i + 1, HEADER[j + 1])))?;
                *slot = Some(x);
            }
        }
        out.push(MetricsReport {
            case_id: rec.get(0).unwrap_or("").to_string(),
            dice: v[0],
            jaccard: v[1],
            cc: v[2],
            adb: v[3],
            hd95: v[4],
            precision: v[5],
            recall: v[6],
            hd95_directed: None,
        });
    }
    Ok(out)
}
