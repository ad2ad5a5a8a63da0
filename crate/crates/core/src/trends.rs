//! Monthly median downlink series with subsample checks, Pos overlay and
//! launch/user annotations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calendar::YearMonth;
use crate::sentiment::PosScore;
use crate::speedtest::SpeedTestReport;

pub const DEFAULT_FRACTIONS: [f64; 2] = [0.95, 0.90];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrendError {
    #[error("empty input")]
    EmptyInput,
    #[error("subsample fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("month {0} appears twice in the launches table")]
    DuplicateMonth(YearMonth),
    #[error("annotation line {line}: {message}")]
    BadAnnotation { line: usize, message: String },
}

/// Sorted-middle median; an even count averages the two middle values.
pub fn median(values: &[f64]) -> Result<f64, TrendError> {
    if values.is_empty() {
        return Err(TrendError::EmptyInput);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyPoint {
    pub month: YearMonth,
    pub median_download: Option<f64>,
    pub sample_count: usize,
    /// (fraction, median of the subsample), in the order requested.
    pub subsample_medians: Vec<(f64, f64)>,
    pub pos: Option<PosScore>,
    pub launches: Option<u64>,
    pub reported_users: Option<u64>,
}

impl MonthlyPoint {
    fn empty(month: YearMonth) -> Self {
        Self {
            month,
            median_download: None,
            sample_count: 0,
            subsample_medians: Vec::new(),
            pos: None,
            launches: None,
            reported_users: None,
        }
    }

    pub fn subsample(&self, fraction: f64) -> Option<f64> {
        self.subsample_medians
            .iter()
            .find(|(f, _)| *f == fraction)
            .map(|(_, m)| *m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinSource {
    TestTimestamp,
    PostDate,
}

/// Which timestamp placed a report in its month.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinRecord {
    pub source_id: String,
    pub table_row: Option<usize>,
    pub month: Option<YearMonth>,
    pub source: Option<BinSource>,
}

#[derive(Debug, Clone, Default)]
pub struct MedianSeries {
    pub points: Vec<MonthlyPoint>,
    /// Normalised download values per month, in input order.
    pub values: BTreeMap<YearMonth, Vec<f64>>,
    pub bins: Vec<BinRecord>,
}

/// Bin reports by the month of their test timestamp, falling back to the
/// originating post's creation time. Every month of `range` (or the span
/// of observed months) gets a point; empty months have no median.
pub fn monthly_median_series<F>(
    reports: &[SpeedTestReport],
    post_time: F,
    range: Option<(YearMonth, YearMonth)>,
) -> MedianSeries
where
    F: Fn(&SpeedTestReport) -> Option<i64>,
{
    let mut values: BTreeMap<YearMonth, Vec<f64>> = BTreeMap::new();
    let mut bins = Vec::with_capacity(reports.len());
    for r in reports {
        let (month, source) = match r.test_timestamp {
            Some(ts) => (Some(YearMonth::of_date(ts.date())), Some(BinSource::TestTimestamp)),
            None => match post_time(r) {
                Some(t) => (Some(YearMonth::of_timestamp(t)), Some(BinSource::PostDate)),
                None => (None, None),
            },
        };
        match (month, source) {
            (Some(m), Some(s)) => log::debug!("{} binned to {m} by {s:?}", r.source_id),
            _ => log::warn!("{} has no usable timestamp, not binned", r.source_id),
        }
        if let Some(m) = month.filter(|m| range.is_none_or(|(a, b)| *m >= a && *m <= b)) {
            values.entry(m).or_default().push(r.download_mbps());
        }
        bins.push(BinRecord {
            source_id: r.source_id.clone(),
            table_row: r.table_row,
            month,
            source,
        });
    }
    let span = range.or_else(|| {
        let first = values.keys().next()?;
        let last = values.keys().next_back()?;
        Some((*first, *last))
    });
    let points = span
        .map(|(a, b)| YearMonth::range(a, b))
        .unwrap_or_default()
        .into_iter()
        .map(|m| {
            let mut p = MonthlyPoint::empty(m);
            if let Some(v) = values.get(&m) {
                p.sample_count = v.len();
                p.median_download = median(v).ok();
            }
            p
        })
        .collect();
    MedianSeries {
        points,
        values,
        bins,
    }
}

/// Per-month seed so months sample independently under one run seed.
pub fn month_seed(seed: u64, month: YearMonth) -> u64 {
    let m = (month.year as i64 * 12 + month.month as i64) as u64;
    seed ^ m.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Median of a uniform sample of ⌈f·n⌉ values drawn without replacement,
/// one per fraction.
pub fn subsample_medians(values: &[f64], fractions: &[f64], seed: u64) -> Result<Vec<(f64, f64)>, TrendError> {
    if values.is_empty() {
        return Err(TrendError::EmptyInput);
    }
    let n = values.len();
    let mut out = Vec::with_capacity(fractions.len());
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(TrendError::BadFraction(f));
        }
        let k = ((f * n as f64).ceil() as usize).clamp(1, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ f.to_bits());
        let picked: Vec<f64> = rand::seq::index::sample(&mut rng, n, k)
            .into_iter()
            .map(|i| values[i])
            .collect();
        out.push((f, median(&picked)?));
    }
    Ok(out)
}

pub fn attach_subsamples(series: &mut MedianSeries, fractions: &[f64], seed: u64) -> Result<(), TrendError> {
    for p in &mut series.points {
        if let Some(v) = series.values.get(&p.month) {
            p.subsample_medians = subsample_medians(v, fractions, month_seed(seed, p.month))?;
        }
    }
    Ok(())
}

pub fn attach_pos(points: &mut [MonthlyPoint], pos: &BTreeMap<YearMonth, PosScore>) {
    for p in points {
        p.pos = pos.get(&p.month).copied();
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationTable {
    pub launches: BTreeMap<YearMonth, u64>,
    /// (report date, reported users), sorted by date.
    pub users: Vec<(NaiveDate, u64)>,
}

fn csv_rows<R: Read>(r: R) -> Result<Vec<(usize, String, String)>, TrendError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| TrendError::BadAnnotation {
            line,
            message: e.to_string(),
        })?;
        if rec.len() < 2 {
            return Err(TrendError::BadAnnotation {
                line,
                message: "expected two columns".into(),
            });
        }
        out.push((line, rec[0].to_string(), rec[1].to_string()));
    }
    Ok(out)
}

fn count(line: usize, s: &str) -> Result<u64, TrendError> {
    s.parse().map_err(|_| TrendError::BadAnnotation {
        line,
        message: format!("bad count `{s}`"),
    })
}

/// Launch table: `month,count` with a header row.
pub fn read_launches<R: Read>(r: R) -> Result<BTreeMap<YearMonth, u64>, TrendError> {
    let mut out = BTreeMap::new();
    for (line, m, c) in csv_rows(r)? {
        let month: YearMonth = m.parse().map_err(|e: crate::calendar::ParseMonthError| {
            TrendError::BadAnnotation {
                line,
                message: e.to_string(),
            }
        })?;
        if out.insert(month, count(line, &c)?).is_some() {
            return Err(TrendError::DuplicateMonth(month));
        }
    }
    Ok(out)
}

/// User-count table: `date,count` with a header row.
pub fn read_users<R: Read>(r: R) -> Result<Vec<(NaiveDate, u64)>, TrendError> {
    let mut out = Vec::new();
    for (line, d, c) in csv_rows(r)? {
        let date = NaiveDate::parse_from_str(&d, "%Y-%m-%d").map_err(|e| TrendError::BadAnnotation {
            line,
            message: e.to_string(),
        })?;
        out.push((date, count(line, &c)?));
    }
    out.sort_by_key(|(d, _)| *d);
    Ok(out)
}

/// Launches by month; users as the latest report dated on or before the
/// month's last day.
pub fn join_annotations(points: &mut [MonthlyPoint], tables: &AnnotationTable) {
    let mut users = tables.users.clone();
    users.sort_by_key(|(d, _)| *d);
    for p in points {
        p.launches = tables.launches.get(&p.month).copied();
        let end = p.month.last_day();
        p.reported_users = users.iter().rev().find(|(d, _)| *d <= end).map(|(_, c)| *c);
    }
}

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const TREND_CSV_HEADER: [&str; 7] = [
    "month",
    "median_mbps",
    "median_p95",
    "median_p90",
    "pos",
    "launches",
    "users",
];

pub fn write_trend_csv<W: Write>(w: W, points: &[MonthlyPoint]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TREND_CSV_HEADER)?;
    for p in points {
        out.write_record([
            p.month.to_string(),
            cell(p.median_download),
            cell(p.subsample(0.95)),
            cell(p.subsample(0.90)),
            cell(p.pos.and_then(|s| s.pos)),
            cell(p.launches),
            cell(p.reported_users),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Line chart of the monthly median (left axis) and Pos (right axis, 0..1).
pub fn trend_svg(points: &[MonthlyPoint]) -> String {
    let (w, h, pad) = (720.0, 360.0, 48.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let max = points
        .iter()
        .filter_map(|p| p.median_download)
        .fold(0.0f64, f64::max)
        .max(1.0);
    let n = points.len().max(2) as f64 - 1.0;
    let x = |i: usize| pad + (w - 2.0 * pad) * i as f64 / n;
    let y = |frac: f64| h - pad - (h - 2.0 * pad) * frac;
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#, h - pad);
    let _ = writeln!(
        s,
        r#"<text x="4" y="{}" font-size="10">{max:.0} Mbps</text>"#,
        pad - 4.0
    );
    let mut line = |vals: Vec<Option<f64>>, colour: &str| {
        let mut seg: Vec<String> = Vec::new();
        let mut segments = Vec::new();
        for (i, v) in vals.iter().enumerate() {
            match v {
                Some(v) => seg.push(format!("{:.1},{:.1}", x(i), y(*v))),
                None if !seg.is_empty() => segments.push(std::mem::take(&mut seg)),
                None => {}
            }
        }
        if !seg.is_empty() {
            segments.push(seg);
        }
        for seg in segments {
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
                seg.join(" ")
            );
        }
    };
    line(points.iter().map(|p| p.median_download.map(|m| m / max)).collect(), "steelblue");
    line(points.iter().map(|p| p.pos.and_then(|s| s.pos)).collect(), "darkorange");
    for (i, p) in points.iter().enumerate() {
        if i % 3 == 0 {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{}" font-size="9" text-anchor="middle">{}</text>"#,
                x(i),
                h - pad + 14.0,
                p.month
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
