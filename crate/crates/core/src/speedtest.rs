//! Speed-test screenshot parsing from OCR token layouts.
//!
//! Values are always read from token text; geometry only decides which
//! token belongs to which label. Every distance threshold is relative to
//! the image diagonal or to token heights, so a layout extracts the same
//! way after translation or uniform scaling.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::OnceLock;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrToken {
    pub text: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    #[serde(default = "full_confidence")]
    pub confidence: f64,
}

fn full_confidence() -> f64 {
    1.0
}

impl OcrToken {
    pub fn new(text: impl Into<String>, x: f64, y: f64, w: f64, h: f64) -> Self {
        Self {
            text: text.into(),
            x,
            y,
            w,
            h,
            confidence: 1.0,
        }
    }

    pub fn cx(&self) -> f64 {
        self.x + self.w / 2.0
    }

    pub fn cy(&self) -> f64 {
        self.y + self.h / 2.0
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrDocument {
    pub source_id: String,
    pub width: f64,
    pub height: f64,
    pub tokens: Vec<OcrToken>,
}

impl OcrDocument {
    /// Parse the OCR document JSON and clamp tokens into the image.
    pub fn from_json(text: &str) -> Result<(Self, Vec<String>), serde_json::Error> {
        let mut doc: OcrDocument = serde_json::from_str(text)?;
        let warnings = doc.clamp_to_bounds();
        Ok((doc, warnings))
    }

    /// Clamp every bbox into the image; tokens left with no area are
    /// dropped. Returns one warning per adjusted token.
    pub fn clamp_to_bounds(&mut self) -> Vec<String> {
        let (w, h) = (self.width, self.height);
        let mut warnings = Vec::new();
        let source = self.source_id.clone();
        self.tokens.retain_mut(|t| {
            let x0 = t.x.clamp(0.0, w);
            let y0 = t.y.clamp(0.0, h);
            let x1 = (t.x + t.w).clamp(0.0, w);
            let y1 = (t.y + t.h).clamp(0.0, h);
            let changed = x0 != t.x || y0 != t.y || x1 != t.x + t.w || y1 != t.y + t.h;
            if changed {
                warnings.push(format!("{source}: token `{}` clamped to image bounds", t.text));
                t.x = x0;
                t.y = y0;
                t.w = x1 - x0;
                t.h = y1 - y0;
            }
            if t.w > 0.0 && t.h > 0.0 && t.w.is_finite() && t.h.is_finite() {
                true
            } else {
                warnings.push(format!("{source}: token `{}` has no area, dropped", t.text));
                false
            }
        });
        warnings
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Download,
    Upload,
    Latency,
    Jitter,
    PacketLoss,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Download,
        Metric::Upload,
        Metric::Latency,
        Metric::Jitter,
        Metric::PacketLoss,
    ];

    pub fn default_unit(self) -> Unit {
        match self {
            Metric::Download | Metric::Upload => Unit::Mbps,
            Metric::Latency | Metric::Jitter => Unit::Ms,
            Metric::PacketLoss => Unit::Percent,
        }
    }

    pub fn accepts(self, unit: Unit) -> bool {
        unit.kind() == self.default_unit().kind()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Unit {
    Kbps,
    Mbps,
    Gbps,
    #[serde(rename = "ms")]
    Ms,
    #[serde(rename = "s")]
    S,
    #[serde(rename = "%")]
    Percent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitKind {
    Speed,
    Time,
    Ratio,
}

impl Unit {
    pub fn kind(self) -> UnitKind {
        match self {
            Unit::Kbps | Unit::Mbps | Unit::Gbps => UnitKind::Speed,
            Unit::Ms | Unit::S => UnitKind::Time,
            Unit::Percent => UnitKind::Ratio,
        }
    }

    /// Convert to the canonical unit of the kind: Mbps, ms, or percent.
    pub fn normalize(self, value: f64) -> f64 {
        match self {
            Unit::Kbps => value / 1000.0,
            Unit::Mbps | Unit::Ms | Unit::Percent => value,
            Unit::Gbps => value * 1000.0,
            Unit::S => value * 1000.0,
        }
    }
}

impl FromStr for Unit {
    type Err = ValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s
            .trim()
            .trim_matches(|c: char| matches!(c, '(' | ')' | '[' | ']' | ',' | ':'))
            .to_lowercase();
        Ok(match t.as_str() {
            "kbps" | "kb/s" | "kbit/s" => Unit::Kbps,
            "mbps" | "mb/s" | "mbit/s" => Unit::Mbps,
            "gbps" | "gb/s" | "gbit/s" => Unit::Gbps,
            "ms" | "msec" => Unit::Ms,
            "s" | "sec" => Unit::S,
            "%" => Unit::Percent,
            _ => return Err(ValueError::UnknownUnit(s.to_string())),
        })
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unit::Kbps => "Kbps",
            Unit::Mbps => "Mbps",
            Unit::Gbps => "Gbps",
            Unit::Ms => "ms",
            Unit::S => "s",
            Unit::Percent => "%",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValueError {
    #[error("`{0}` is not a number")]
    NotANumber(String),
    #[error("unknown unit `{0}`")]
    UnknownUnit(String),
}

fn parse_number(s: &str) -> Result<f64, ValueError> {
    let nan = || ValueError::NotANumber(s.to_string());
    if s.is_empty() || !s.starts_with(|c: char| c.is_ascii_digit()) {
        return Err(nan());
    }
    let commas = s.matches(',').count();
    let has_period = s.contains('.');
    let groups_of_three = |s: &str| {
        let int_part = s.split('.').next().unwrap_or("");
        let mut parts = int_part.split(',');
        let head = parts.next().unwrap_or("");
        !head.is_empty() && head.len() <= 3 && parts.all(|g| g.len() == 3)
    };
    let cleaned = if commas == 0 {
        s.to_string()
    } else if has_period || commas > 1 {
        if !groups_of_three(s) {
            return Err(nan());
        }
        s.replace(',', "")
    } else {
        let (_, after) = s.split_once(',').expect("one comma");
        if after.len() == 3 {
            s.replace(',', "")
        } else {
            s.replace(',', ".")
        }
    };
    if cleaned.matches('.').count() > 1 || cleaned.ends_with('.') {
        return Err(nan());
    }
    cleaned.parse::<f64>().map_err(|_| nan())
}

/// Parse a value with an optional unit, either attached (`28ms`) or as the
/// following token (`105.4`, `Mbps`). Comma decimals are accepted; a single
/// comma followed by exactly three digits and no period is a thousands
/// separator.
pub fn parse_value_unit(tokens: &[&str]) -> Result<(f64, Option<Unit>), ValueError> {
    let first = tokens
        .first()
        .map(|s| s.trim())
        .ok_or_else(|| ValueError::NotANumber(String::new()))?;
    let split = first
        .char_indices()
        .find(|(_, c)| !(c.is_ascii_digit() || *c == '.' || *c == ','))
        .map(|(i, _)| i)
        .unwrap_or(first.len());
    let (num, suffix) = first.split_at(split);
    let value = parse_number(num)?;
    let suffix = suffix.trim();
    let unit = if !suffix.is_empty() {
        Some(suffix.parse()?)
    } else if let Some(next) = tokens.get(1) {
        Some(next.parse()?)
    } else {
        None
    };
    Ok((value, unit))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub synonyms: BTreeMap<Metric, Vec<String>>,
    pub provider_labels: Vec<String>,
    pub server_labels: Vec<String>,
    /// Provider names recognised anywhere in the layout.
    pub known_providers: Vec<String>,
    pub below_weight: f64,
    pub beside_weight: f64,
    /// Candidate radius as a fraction of the image diagonal.
    pub max_distance: f64,
    /// Row grouping tolerance as a fraction of the median token height.
    pub row_tolerance: f64,
    /// Unit search radius in multiples of the value token height.
    pub unit_radius: f64,
    /// Relative distance gap under which two candidates are ambiguous.
    pub ambiguity: f64,
}

impl Default for LabelSpec {
    fn default() -> Self {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        Self {
            synonyms: BTreeMap::from([
                (Metric::Download, s(&["download", "down", "dl"])),
                (Metric::Upload, s(&["upload", "up", "ul"])),
                (Metric::Latency, s(&["ping", "latency", "idle latency"])),
                (Metric::Jitter, s(&["jitter"])),
                (Metric::PacketLoss, s(&["packet loss", "loss"])),
            ]),
            provider_labels: s(&["isp", "provider"]),
            server_labels: s(&["server"]),
            known_providers: s(&["starlink", "spacex"]),
            below_weight: 0.8,
            beside_weight: 1.0,
            max_distance: 0.35,
            row_tolerance: 0.6,
            unit_radius: 2.0,
            ambiguity: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpecError {
    #[error("label `{0}` is a synonym of more than one metric")]
    OverlappingSynonym(String),
}

impl LabelSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        let mut seen = BTreeSet::new();
        for syns in self.synonyms.values() {
            for s in syns {
                if !seen.insert(s.to_lowercase()) {
                    return Err(SpecError::OverlappingSynonym(s.clone()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Template {
    Simple,
    Table,
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Template::Simple => "SIMPLE",
            Template::Table => "TABLE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub value: f64,
    pub unit: Unit,
    /// Unit was not found on the layout and the metric default was used.
    pub low_confidence: bool,
}

impl Measurement {
    pub fn normalized(&self) -> f64 {
        self.unit.normalize(self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedTestReport {
    pub source_id: String,
    pub provider: Option<String>,
    pub download: Measurement,
    pub upload: Option<Measurement>,
    pub latency: Option<Measurement>,
    pub jitter: Option<Measurement>,
    pub packet_loss: Option<Measurement>,
    pub test_timestamp: Option<NaiveDateTime>,
    pub server_location: Option<String>,
    pub template: Template,
    pub table_row: Option<usize>,
}

impl SpeedTestReport {
    pub fn download_mbps(&self) -> f64 {
        self.download.normalized()
    }

    pub fn metric(&self, m: Metric) -> Option<&Measurement> {
        match m {
            Metric::Download => Some(&self.download),
            Metric::Upload => self.upload.as_ref(),
            Metric::Latency => self.latency.as_ref(),
            Metric::Jitter => self.jitter.as_ref(),
            Metric::PacketLoss => self.packet_loss.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExtractError {
    #[error("document has no tokens")]
    NoTokens,
    #[error("download label or value not found")]
    NoDownload,
    #[error("ambiguous value for {0:?}")]
    AmbiguousValue(Metric),
    #[error("unit does not fit {0:?}")]
    UnitMismatch(Metric),
    #[error("no table header row")]
    NoHeader,
    #[error("table has no data rows")]
    EmptyTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub reports: Vec<SpeedTestReport>,
    pub warnings: Vec<String>,
}

fn median_of(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn median_height(tokens: &[OcrToken]) -> f64 {
    median_of(tokens.iter().map(|t| t.h).collect())
}

/// Group tokens into rows: sorted by vertical centre, a token joins the
/// current row when its centre is within `tolerance` × median height of the
/// row's first token. Rows run top to bottom, tokens left to right.
pub fn cluster_rows_with(tokens: &[OcrToken], tolerance: f64) -> Vec<Vec<&OcrToken>> {
    if tokens.is_empty() {
        return Vec::new();
    }
    let limit = tolerance * median_height(tokens);
    let mut sorted: Vec<&OcrToken> = tokens.iter().collect();
    sorted.sort_by(|a, b| a.cy().total_cmp(&b.cy()).then(a.x.total_cmp(&b.x)));
    let mut rows: Vec<Vec<&OcrToken>> = Vec::new();
    for t in sorted {
        match rows.last_mut() {
            Some(row) if (t.cy() - row[0].cy()).abs() <= limit => row.push(t),
            _ => rows.push(vec![t]),
        }
    }
    for row in &mut rows {
        row.sort_by(|a, b| a.x.total_cmp(&b.x));
    }
    rows
}

pub fn cluster_rows(tokens: &[OcrToken]) -> Vec<Vec<&OcrToken>> {
    cluster_rows_with(tokens, LabelSpec::default().row_tolerance)
}

fn norm_word(s: &str) -> String {
    s.trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Rect {
    fn of(t: &OcrToken) -> Self {
        Self {
            x0: t.x,
            y0: t.y,
            x1: t.right(),
            y1: t.bottom(),
        }
    }

    fn union(self, o: Rect) -> Self {
        Self {
            x0: self.x0.min(o.x0),
            y0: self.y0.min(o.y0),
            x1: self.x1.max(o.x1),
            y1: self.y1.max(o.y1),
        }
    }

    fn cx(&self) -> f64 {
        (self.x0 + self.x1) / 2.0
    }

    fn cy(&self) -> f64 {
        (self.y0 + self.y1) / 2.0
    }

    fn h(&self) -> f64 {
        self.y1 - self.y0
    }

    fn gap(&self, o: &Rect) -> f64 {
        let dx = (o.x0 - self.x1).max(self.x0 - o.x1).max(0.0);
        let dy = (o.y0 - self.y1).max(self.y0 - o.y1).max(0.0);
        dx.hypot(dy)
    }
}

#[derive(Debug, Clone)]
struct LabelHit<K> {
    key: K,
    rect: Rect,
    row: usize,
    /// Pointers of the tokens forming the label.
    parts: Vec<*const OcrToken>,
}

/// Match label phrases (one or two words) within rows, longest first.
fn find_phrases<K: Copy>(
    rows: &[Vec<&OcrToken>],
    phrases: &[(K, Vec<String>)],
) -> Vec<LabelHit<K>> {
    let mut hits = Vec::new();
    for (ri, row) in rows.iter().enumerate() {
        let words: Vec<String> = row.iter().map(|t| norm_word(&t.text)).collect();
        let mut i = 0;
        while i < row.len() {
            let mut matched = None;
            'outer: for len in [2usize, 1] {
                if i + len > row.len() {
                    continue;
                }
                let candidate = words[i..i + len].join(" ");
                for (key, syns) in phrases {
                    if syns.contains(&candidate) {
                        matched = Some((*key, len));
                        break 'outer;
                    }
                }
            }
            match matched {
                Some((key, len)) => {
                    let rect = row[i..i + len]
                        .iter()
                        .map(|t| Rect::of(t))
                        .reduce(Rect::union)
                        .expect("non-empty");
                    hits.push(LabelHit {
                        key,
                        rect,
                        row: ri,
                        parts: row[i..i + len].iter().map(|t| *t as *const OcrToken).collect(),
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
    }
    hits
}

fn metric_phrases(spec: &LabelSpec) -> Vec<(Metric, Vec<String>)> {
    spec.synonyms
        .iter()
        .map(|(m, s)| (*m, s.iter().map(|x| x.to_lowercase()).collect()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InfoLabel {
    Provider,
    Server,
}

fn info_phrases(spec: &LabelSpec) -> Vec<(InfoLabel, Vec<String>)> {
    vec![
        (
            InfoLabel::Provider,
            spec.provider_labels.iter().map(|s| s.to_lowercase()).collect(),
        ),
        (
            InfoLabel::Server,
            spec.server_labels.iter().map(|s| s.to_lowercase()).collect(),
        ),
    ]
}

/// A token that reads as a number, with its attached unit if any.
fn numeric(t: &OcrToken) -> Option<(f64, Option<Unit>)> {
    parse_value_unit(&[t.text.as_str()]).ok()
}

fn unit_of(t: &OcrToken) -> Option<Unit> {
    t.text.parse().ok()
}

struct Layout<'a> {
    doc: &'a OcrDocument,
    spec: &'a LabelSpec,
    rows: Vec<Vec<&'a OcrToken>>,
    labels: Vec<LabelHit<Metric>>,
    info: Vec<LabelHit<InfoLabel>>,
}

impl<'a> Layout<'a> {
    fn new(doc: &'a OcrDocument, spec: &'a LabelSpec) -> Result<Self, ExtractError> {
        if doc.tokens.is_empty() {
            return Err(ExtractError::NoTokens);
        }
        let rows = cluster_rows_with(&doc.tokens, spec.row_tolerance);
        let labels = find_phrases(&rows, &metric_phrases(spec));
        let info = find_phrases(&rows, &info_phrases(spec));
        Ok(Self {
            doc,
            spec,
            rows,
            labels,
            info,
        })
    }

    fn is_label(&self, t: &OcrToken) -> bool {
        let p = t as *const OcrToken;
        self.labels.iter().any(|l| l.parts.contains(&p)) || self.info.iter().any(|l| l.parts.contains(&p))
    }

    fn row_has_label(&self, row: usize) -> bool {
        self.labels.iter().any(|l| l.row == row)
    }
}

/// Horizontal span of each header label, widened by half the median gap
/// between neighbouring header labels.
fn column_spans(header: &[&LabelHit<Metric>]) -> Vec<(Metric, f64, f64)> {
    let mut hs: Vec<&LabelHit<Metric>> = header.to_vec();
    hs.sort_by(|a, b| a.rect.x0.total_cmp(&b.rect.x0));
    let gaps: Vec<f64> = hs
        .windows(2)
        .map(|w| (w[1].rect.x0 - w[0].rect.x1).max(0.0))
        .collect();
    let half = if gaps.is_empty() {
        hs.first().map(|h| h.rect.h()).unwrap_or(0.0)
    } else {
        median_of(gaps) / 2.0
    };
    hs.iter()
        .map(|h| (h.key, h.rect.x0 - half, h.rect.x1 + half))
        .collect()
}

/// TABLE when the only download label heads a column with at least two
/// numeric rows beneath it before the next labelled row; SIMPLE otherwise.
pub fn classify_template(doc: &OcrDocument, spec: &LabelSpec) -> Result<Template, ExtractError> {
    let layout = Layout::new(doc, spec)?;
    Ok(classify_layout(&layout))
}

fn classify_layout(layout: &Layout<'_>) -> Template {
    let downloads: Vec<&LabelHit<Metric>> = layout
        .labels
        .iter()
        .filter(|l| l.key == Metric::Download)
        .collect();
    if downloads.len() != 1 {
        return Template::Simple;
    }
    let dl = downloads[0];
    let header: Vec<&LabelHit<Metric>> = layout.labels.iter().filter(|l| l.row == dl.row).collect();
    let (_, x0, x1) = column_spans(&header)
        .into_iter()
        .find(|(m, _, _)| *m == Metric::Download)
        .expect("download is in its own header row");
    let mut numeric_rows = 0;
    for ri in dl.row + 1..layout.rows.len() {
        if layout.row_has_label(ri) {
            break;
        }
        let hit = layout.rows[ri]
            .iter()
            .any(|t| numeric(t).is_some() && t.cx() >= x0 && t.cx() <= x1);
        if hit {
            numeric_rows += 1;
        }
    }
    if numeric_rows >= 2 {
        Template::Table
    } else {
        Template::Simple
    }
}

fn within_gap(a: &Rect, b: &Rect, radius: f64) -> bool {
    a.gap(b) <= radius
}

/// Nearest unit token of the right kind within `radius` of `near`.
fn nearby_unit(layout: &Layout<'_>, near: &Rect, radius: f64, metric: Metric) -> Option<Unit> {
    layout
        .doc
        .tokens
        .iter()
        .filter_map(|t| unit_of(t).map(|u| (t, u)))
        .filter(|(_, u)| metric.accepts(*u))
        .filter(|(t, _)| within_gap(near, &Rect::of(t), radius))
        .min_by(|a, b| {
            let da = (a.0.cx() - near.cx()).hypot(a.0.cy() - near.cy());
            let db = (b.0.cx() - near.cx()).hypot(b.0.cy() - near.cy());
            da.total_cmp(&db)
        })
        .map(|(_, u)| u)
}

fn measurement(
    metric: Metric,
    value: f64,
    attached: Option<Unit>,
    found: impl FnOnce() -> Option<Unit>,
) -> Result<Measurement, ExtractError> {
    if let Some(u) = attached {
        if !metric.accepts(u) {
            return Err(ExtractError::UnitMismatch(metric));
        }
        return Ok(Measurement {
            value,
            unit: u,
            low_confidence: false,
        });
    }
    Ok(match found() {
        Some(u) => Measurement {
            value,
            unit: u,
            low_confidence: false,
        },
        None => Measurement {
            value,
            unit: metric.default_unit(),
            low_confidence: true,
        },
    })
}

fn datetime_patterns() -> &'static [Regex] {
    static PATTERNS: OnceLock<Vec<Regex>> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        vec![
            Regex::new(r"\b(\d{4})-(\d{2})-(\d{2})(?:[ T](\d{1,2}):(\d{2})(?::(\d{2}))?)?")
                .expect("iso pattern"),
            Regex::new(
                r"\b(\d{1,2})/(\d{1,2})/(\d{4}|\d{2})(?:,?\s+(\d{1,2}):(\d{2})(?::(\d{2}))?(?:\s*([AaPp][Mm]))?)?",
            )
            .expect("us pattern"),
        ]
    })
}

/// First date (and optional time) found in `text`.
pub fn find_timestamp(text: &str) -> Option<NaiveDateTime> {
    let pats = datetime_patterns();
    let num = |c: &regex::Captures<'_>, i: usize| c.get(i).and_then(|m| m.as_str().parse::<u32>().ok());
    let time_of = |c: &regex::Captures<'_>, pm_group: Option<usize>| {
        let (Some(mut h), Some(mi)) = (num(c, 4), num(c, 5)) else {
            return Some(NaiveTime::MIN);
        };
        if let Some(g) = pm_group.and_then(|g| c.get(g)) {
            let pm = g.as_str().eq_ignore_ascii_case("pm");
            if h == 0 || h > 12 {
                return None;
            }
            h = match (pm, h) {
                (false, 12) => 0,
                (true, 12) => 12,
                (true, h) => h + 12,
                (false, h) => h,
            };
        }
        NaiveTime::from_hms_opt(h, mi, num(c, 6).unwrap_or(0))
    };
    let mut best: Option<(usize, NaiveDateTime)> = None;
    if let Some(c) = pats[0].captures(text) {
        let d = NaiveDate::from_ymd_opt(c[1].parse().ok()?, num(&c, 2)?, num(&c, 3)?);
        if let (Some(d), Some(t)) = (d, time_of(&c, None)) {
            best = Some((c.get(0).unwrap().start(), d.and_time(t)));
        }
    }
    if let Some(c) = pats[1].captures(text) {
        let start = c.get(0).unwrap().start();
        if best.is_none_or(|(s, _)| start < s) {
            let mut year: i32 = c[3].parse().ok()?;
            if year < 100 {
                year += 2000;
            }
            let d = NaiveDate::from_ymd_opt(year, num(&c, 1)?, num(&c, 2)?);
            if let (Some(d), Some(t)) = (d, time_of(&c, Some(7))) {
                best = Some((start, d.and_time(t)));
            }
        }
    }
    best.map(|(_, dt)| dt)
}

fn row_text(row: &[&OcrToken]) -> String {
    row.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ")
}

fn known_provider(spec: &LabelSpec, text: &str) -> Option<String> {
    let lower = text.to_lowercase();
    spec.known_providers
        .iter()
        .find(|p| lower.split(|c: char| !c.is_alphanumeric()).any(|w| w == p.to_lowercase()))
        .map(|p| {
            let start = lower.find(&p.to_lowercase()).expect("found above");
            text[start..start + p.len()].to_string()
        })
}

/// Text tokens next to an info label (provider, server): the nearest
/// non-numeric token below or to the right, extended along its row.
fn info_value(layout: &Layout<'_>, label: &LabelHit<InfoLabel>) -> Option<String> {
    let spec = layout.spec;
    let radius = spec.max_distance * layout.doc.diagonal();
    let mut best: Option<(f64, usize, usize)> = None;
    for (ri, row) in layout.rows.iter().enumerate() {
        for (ti, t) in row.iter().enumerate() {
            if layout.is_label(t) || numeric(t).is_some() || unit_of(t).is_some() {
                continue;
            }
            let (dx, dy) = (t.cx() - label.rect.cx(), t.cy() - label.rect.cy());
            let placed = t.cy() >= label.rect.y0 || t.cx() >= label.rect.x1;
            let right_or_below = (dx > 0.0 || dy > 0.0) && placed;
            if !right_or_below || dx.hypot(dy) > radius {
                continue;
            }
            let d = dx.abs() * spec.beside_weight + dy.abs() * spec.below_weight;
            if best.is_none_or(|(bd, _, _)| d < bd) {
                best = Some((d, ri, ti));
            }
        }
    }
    let (_, ri, ti) = best?;
    let row = &layout.rows[ri];
    let mut words = vec![row[ti].text.clone()];
    let mut prev = row[ti];
    for t in &row[ti + 1..] {
        if layout.is_label(t) || numeric(t).is_some() || t.x - prev.right() > prev.h {
            break;
        }
        words.push(t.text.clone());
        prev = t;
    }
    Some(words.join(" "))
}

fn doc_info(layout: &Layout<'_>) -> (Option<String>, Option<String>, Option<NaiveDateTime>) {
    let mut provider = None;
    let mut server = None;
    for l in &layout.info {
        match l.key {
            InfoLabel::Provider if provider.is_none() => provider = info_value(layout, l),
            InfoLabel::Server if server.is_none() => server = info_value(layout, l),
            _ => {}
        }
    }
    let all_text = layout
        .rows
        .iter()
        .map(|r| row_text(r))
        .collect::<Vec<_>>()
        .join("\n");
    if provider.is_none() {
        provider = known_provider(layout.spec, &all_text);
    }
    let ts = layout.rows.iter().find_map(|r| find_timestamp(&row_text(r)));
    (provider, server, ts)
}

/// Single-report layout: each label takes the closest numeric token below
/// or to its right within the search radius.
pub fn extract_simple(doc: &OcrDocument, spec: &LabelSpec) -> Result<SpeedTestReport, ExtractError> {
    let layout = Layout::new(doc, spec)?;
    extract_simple_layout(&layout)
}

fn extract_simple_layout(layout: &Layout<'_>) -> Result<SpeedTestReport, ExtractError> {
    let spec = layout.spec;
    let doc = layout.doc;
    let radius = spec.max_distance * doc.diagonal();

    let mut chosen: BTreeMap<Metric, (&OcrToken, f64, Option<Unit>, Rect)> = BTreeMap::new();
    for metric in Metric::ALL {
        // first label of each metric in reading order
        let Some(label) = layout.labels.iter().find(|l| l.key == metric) else {
            continue;
        };
        let lr = label.rect;
        let mut cands: Vec<(f64, &OcrToken, f64, Option<Unit>)> = doc
            .tokens
            .iter()
            .filter(|t| !layout.is_label(t))
            .filter_map(|t| numeric(t).map(|(v, u)| (t, v, u)))
            .filter(|(t, _, _)| t.cy() >= lr.y0 || t.cx() >= lr.x1)
            .filter(|(t, _, _)| (t.cx() - lr.cx()).hypot(t.cy() - lr.cy()) <= radius)
            .map(|(t, v, u)| {
                let d = (t.cx() - lr.cx()).abs() * spec.beside_weight
                    + (t.cy() - lr.cy()).abs() * spec.below_weight;
                (d, t, v, u)
            })
            .collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0));
        match cands.as_slice() {
            [] => continue,
            [first, second, ..] if second.0 - first.0 <= spec.ambiguity * first.0 => {
                return Err(ExtractError::AmbiguousValue(metric));
            }
            [first, ..] => {
                chosen.insert(metric, (first.1, first.2, first.3, lr));
            }
        }
    }

    // one value token may not serve two labels
    let mut owners: BTreeMap<*const OcrToken, Metric> = BTreeMap::new();
    for (m, (t, _, _, _)) in &chosen {
        if let Some(prev) = owners.insert(*t as *const OcrToken, *m) {
            return Err(ExtractError::AmbiguousValue(prev.min(*m)));
        }
    }

    let mut measured: BTreeMap<Metric, Measurement> = BTreeMap::new();
    for (m, (t, v, attached, label_rect)) in chosen {
        let vr = Rect::of(t);
        let meas = measurement(m, v, attached, || {
            nearby_unit(layout, &vr, spec.unit_radius * t.h, m)
                .or_else(|| nearby_unit(layout, &label_rect, spec.unit_radius * label_rect.h(), m))
        })?;
        measured.insert(m, meas);
    }

    let download = measured.remove(&Metric::Download).ok_or(ExtractError::NoDownload)?;
    let (provider, server_location, test_timestamp) = doc_info(layout);
    Ok(SpeedTestReport {
        source_id: doc.source_id.clone(),
        provider,
        download,
        upload: measured.remove(&Metric::Upload),
        latency: measured.remove(&Metric::Latency),
        jitter: measured.remove(&Metric::Jitter),
        packet_loss: measured.remove(&Metric::PacketLoss),
        test_timestamp,
        server_location,
        template: Template::Simple,
        table_row: None,
    })
}

/// Multi-report layout: a header row of metric labels defines columns and
/// every numeric row below it becomes one report.
pub fn extract_table(doc: &OcrDocument, spec: &LabelSpec) -> Result<Extraction, ExtractError> {
    let layout = Layout::new(doc, spec)?;
    extract_table_layout(&layout)
}

fn extract_table_layout(layout: &Layout<'_>) -> Result<Extraction, ExtractError> {
    let spec = layout.spec;
    let doc = layout.doc;
    let header_row = (0..layout.rows.len())
        .find(|ri| {
            layout
                .labels
                .iter()
                .filter(|l| l.row == *ri)
                .map(|l| l.key)
                .collect::<BTreeSet<_>>()
                .len()
                >= 2
        })
        .ok_or(ExtractError::NoHeader)?;
    let header: Vec<&LabelHit<Metric>> = layout.labels.iter().filter(|l| l.row == header_row).collect();
    let spans = column_spans(&header);
    let column_of = |x: f64| -> Vec<Metric> {
        spans
            .iter()
            .filter(|(_, x0, x1)| x >= *x0 && x <= *x1)
            .map(|(m, _, _)| *m)
            .collect()
    };

    // column units from the header row or unit-only rows right below it
    let mut column_units: BTreeMap<Metric, Unit> = BTreeMap::new();
    let mut first_data = header_row + 1;
    let mut unit_rows = vec![header_row];
    while first_data < layout.rows.len()
        && layout.rows[first_data].iter().all(|t| unit_of(t).is_some())
    {
        unit_rows.push(first_data);
        first_data += 1;
    }
    for ri in unit_rows {
        for t in &layout.rows[ri] {
            if let Some(u) = unit_of(t) {
                if let [m] = column_of(t.cx()).as_slice() {
                    if m.accepts(u) {
                        column_units.entry(*m).or_insert(u);
                    }
                }
            }
        }
    }

    let (doc_provider, doc_server, doc_ts) = doc_info(layout);
    let mut warnings = Vec::new();
    let mut reports = Vec::new();
    let mut data_rows = 0;
    for ri in first_data..layout.rows.len() {
        let row = &layout.rows[ri];
        let nums: Vec<(&OcrToken, f64, Option<Unit>)> = row
            .iter()
            .filter(|t| !layout.is_label(t))
            .filter_map(|t| numeric(t).map(|(v, u)| (*t, v, u)))
            .collect();
        if nums.is_empty() {
            continue;
        }
        let row_index = data_rows;
        data_rows += 1;

        let mut cells: BTreeMap<Metric, Vec<(f64, Option<Unit>)>> = BTreeMap::new();
        for (t, v, u) in nums {
            match column_of(t.cx()).as_slice() {
                [m] => cells.entry(*m).or_default().push((v, u)),
                [] => warnings.push(format!(
                    "{}: row {row_index}: value `{}` outside every column, ignored",
                    doc.source_id, t.text
                )),
                _ => warnings.push(format!(
                    "{}: row {row_index}: value `{}` straddles columns, ignored",
                    doc.source_id, t.text
                )),
            }
        }
        let mut measured: BTreeMap<Metric, Measurement> = BTreeMap::new();
        let mut row_failed = false;
        for (m, vals) in cells {
            if vals.len() != 1 {
                warnings.push(format!(
                    "{}: row {row_index}: {} values in the {m:?} column, ignored",
                    doc.source_id,
                    vals.len()
                ));
                continue;
            }
            let (v, u) = vals[0];
            match measurement(m, v, u, || column_units.get(&m).copied()) {
                Ok(meas) => {
                    measured.insert(m, meas);
                }
                Err(e) => {
                    warnings.push(format!("{}: row {row_index}: {e}", doc.source_id));
                    if m == Metric::Download {
                        row_failed = true;
                    }
                }
            }
        }
        let Some(download) = measured.remove(&Metric::Download).filter(|_| !row_failed) else {
            warnings.push(format!(
                "{}: row {row_index}: no download value, row skipped",
                doc.source_id
            ));
            continue;
        };
        let text = row_text(row);
        reports.push(SpeedTestReport {
            source_id: doc.source_id.clone(),
            provider: known_provider(spec, &text).or_else(|| doc_provider.clone()),
            download,
            upload: measured.remove(&Metric::Upload),
            latency: measured.remove(&Metric::Latency),
            jitter: measured.remove(&Metric::Jitter),
            packet_loss: measured.remove(&Metric::PacketLoss),
            test_timestamp: find_timestamp(&text).or(doc_ts),
            server_location: doc_server.clone(),
            template: Template::Table,
            table_row: Some(row_index),
        });
    }
    if data_rows == 0 {
        return Err(ExtractError::EmptyTable);
    }
    Ok(Extraction { reports, warnings })
}

/// Classify the layout and run the matching extractor.
pub fn extract(doc: &OcrDocument, spec: &LabelSpec) -> Result<Extraction, ExtractError> {
    let layout = Layout::new(doc, spec)?;
    match classify_layout(&layout) {
        Template::Simple => Ok(Extraction {
            reports: vec![extract_simple_layout(&layout)?],
            warnings: Vec::new(),
        }),
        Template::Table => extract_table_layout(&layout),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlausibilityBounds {
    pub download_mbps: (f64, f64),
    pub upload_mbps: (f64, f64),
    pub latency_ms: (f64, f64),
}

impl Default for PlausibilityBounds {
    fn default() -> Self {
        Self {
            download_mbps: (0.1, 2000.0),
            upload_mbps: (0.1, 500.0),
            latency_ms: (1.0, 5000.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "reason", content = "value", rename_all = "snake_case")]
pub enum RejectReason {
    DownloadOutOfBounds(f64),
    UploadOutOfBounds(f64),
    LatencyOutOfBounds(f64),
    Provider,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::DownloadOutOfBounds(v) => write!(f, "download {v} Mbps out of bounds"),
            RejectReason::UploadOutOfBounds(v) => write!(f, "upload {v} Mbps out of bounds"),
            RejectReason::LatencyOutOfBounds(v) => write!(f, "latency {v} ms out of bounds"),
            RejectReason::Provider => f.write_str("provider filter"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<SpeedTestReport>,
    pub rejected: Vec<(SpeedTestReport, RejectReason)>,
}

fn contains_ci(hay: &str, needle: &str) -> bool {
    hay.to_lowercase().contains(&needle.to_lowercase())
}

/// Drop implausible values (after unit normalisation) and, when a target
/// ISP is given, reports whose provider and post text both lack its name.
pub fn filter_false_positives<'p, F>(
    reports: Vec<SpeedTestReport>,
    bounds: &PlausibilityBounds,
    provider_filter: Option<&str>,
    post_text: F,
) -> FilterOutcome
where
    F: Fn(&SpeedTestReport) -> Option<&'p str>,
{
    let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
    let mut out = FilterOutcome::default();
    for r in reports {
        let reason = if !inside(r.download_mbps(), bounds.download_mbps) {
            Some(RejectReason::DownloadOutOfBounds(r.download_mbps()))
        } else if let Some(v) = r.upload.map(|m| m.normalized()).filter(|v| !inside(*v, bounds.upload_mbps)) {
            Some(RejectReason::UploadOutOfBounds(v))
        } else if let Some(v) = r.latency.map(|m| m.normalized()).filter(|v| !inside(*v, bounds.latency_ms)) {
            Some(RejectReason::LatencyOutOfBounds(v))
        } else if let Some(target) = provider_filter {
            let by_provider = r.provider.as_deref().is_some_and(|p| contains_ci(p, target));
            let by_post = post_text(&r).is_some_and(|t| contains_ci(t, target));
            (!by_provider && !by_post).then_some(RejectReason::Provider)
        } else {
            None
        };
        match reason {
            Some(why) => out.rejected.push((r, why)),
            None => out.kept.push(r),
        }
    }
    out
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const REPORT_CSV_HEADER: [&str; 11] = [
    "source_id",
    "timestamp",
    "provider",
    "template",
    "row",
    "download_mbps",
    "upload_mbps",
    "latency_ms",
    "jitter_ms",
    "loss_pct",
    "server_location",
];

pub fn report_row(r: &SpeedTestReport) -> [String; 11] {
    [
        r.source_id.clone(),
        r.test_timestamp
            .map(|t| t.format("%Y-%m-%dT%H:%M:%S").to_string())
            .unwrap_or_default(),
        r.provider.clone().unwrap_or_default(),
        r.template.to_string(),
        r.table_row.map(|i| i.to_string()).unwrap_or_default(),
        r.download_mbps().to_string(),
        cell(r.upload.map(|m| m.normalized())),
        cell(r.latency.map(|m| m.normalized())),
        cell(r.jitter.map(|m| m.normalized())),
        cell(r.packet_loss.map(|m| m.normalized())),
        r.server_location.clone().unwrap_or_default(),
    ]
}

pub fn write_reports_csv<W: Write>(w: W, reports: &[SpeedTestReport]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REPORT_CSV_HEADER)?;
    for r in reports {
        out.write_record(report_row(r))?;
    }
    out.flush()?;
    Ok(())
}
