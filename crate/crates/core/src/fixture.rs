//! Synthetic corpus generation with planted events and a ground-truth
//! manifest, plus the screenshot layout generators used to exercise the
//! speed-test parser.
//!
//! Every planted text is checked against the lexicon while it is built, so
//! a spec that cannot be realised fails with `SpecInfeasible` instead of
//! producing a corpus that silently misses its targets.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::calendar::{day_start, days, YearMonth};
use crate::clients::ocr_file_name;
use crate::corpus::{write_comments, write_posts, Comment, Post};
use crate::peaks::PeakPolarity;
use crate::sentiment::{classify_strong, score_text, Lexicon, StrongLabel};
use crate::speedtest::{OcrDocument, OcrToken};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FixtureError {
    #[error("fixture spec cannot be realised: {0}")]
    SpecInfeasible(String),
}

fn infeasible(msg: impl Into<String>) -> FixtureError {
    FixtureError::SpecInfeasible(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPeak {
    pub date: NaiveDate,
    pub polarity: PeakPolarity,
    /// Term that dominates the day's texts.
    pub term: String,
    /// Exact number of strong posts of this polarity on the day.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedOutage {
    pub date: NaiveDate,
    pub posts: usize,
    pub comments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPopular {
    pub date: NaiveDate,
    pub upvotes: i64,
    pub comments: usize,
    pub unigram: String,
    pub bigram: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedMonth {
    pub month: YearMonth,
    /// Median download in Mbps; one decimal place.
    pub median: f64,
    /// Odd number of kept speed-test samples.
    pub samples: usize,
    pub strong_pos: usize,
    pub strong_neg: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub posts: usize,
    pub comments: usize,
    /// Polarity words per planted strong text.
    pub strong_hits: usize,
    pub tau: f64,
    /// Most strong posts of one polarity on a day without a planted peak.
    pub background_strong_cap: usize,
    pub peaks: Vec<PlantedPeak>,
    pub outages: Vec<PlantedOutage>,
    pub popular: Option<PlantedPopular>,
    pub months: Vec<PlantedMonth>,
    /// Months with at least this many samples get most of them from tables.
    pub dense_threshold: usize,
    /// Sample spread around the planted median, as a fraction of it.
    pub sample_spread: f64,
    pub false_positives: usize,
    /// Most qualifying keyword hits planted on a quiet day.
    pub chatter_max_hits: usize,
    pub user_reports: Vec<(NaiveDate, u64)>,
    /// Positional jitter of OCR tokens as a fraction of token height.
    pub ocr_jitter: f64,
}

fn d(y: i32, m: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, day).expect("valid literal date")
}

impl Default for FixtureSpec {
    fn default() -> Self {
        let medians = [
            62.4, 70.1, 78.6, 85.2, 91.7, 97.3, 101.8, 104.5, 108.9, 112.3, 109.6, 105.2, 102.7, 98.4, 93.1,
            88.6, 84.9, 80.2, 76.5, 73.8, 70.4, 68.9, 66.2, 64.7,
        ];
        let dense = [6u32, 12, 15, 21];
        let mut month = YearMonth::new(2021, 1).expect("valid");
        let mut months = Vec::new();
        for (i, median) in medians.into_iter().enumerate() {
            let i = i as u32;
            let (sp, sn) = if i == 3 { (0, 0) } else { (2 + (i * 7) % 5, (i * 3) % 4) };
            months.push(PlantedMonth {
                month,
                median,
                samples: if dense.contains(&(i + 1)) { 41 } else { 15 },
                strong_pos: sp as usize,
                strong_neg: sn as usize,
            });
            month = month.succ();
        }
        Self {
            start: d(2021, 1, 1),
            end: d(2022, 12, 31),
            posts: 5000,
            comments: 20000,
            strong_hits: 4,
            tau: 0.7,
            background_strong_cap: 2,
            peaks: vec![
                PlantedPeak {
                    date: d(2021, 2, 9),
                    polarity: PeakPolarity::Positive,
                    term: "preorder".into(),
                    count: 40,
                },
                PlantedPeak {
                    date: d(2021, 11, 24),
                    polarity: PeakPolarity::Negative,
                    term: "delay".into(),
                    count: 35,
                },
                PlantedPeak {
                    date: d(2022, 4, 22),
                    polarity: PeakPolarity::Negative,
                    term: "outage".into(),
                    count: 30,
                },
            ],
            outages: [d(2021, 3, 10), d(2022, 1, 7), d(2022, 4, 22), d(2022, 8, 30)]
                .into_iter()
                .map(|date| PlantedOutage {
                    date,
                    posts: 6,
                    comments: 10,
                })
                .collect(),
            popular: Some(PlantedPopular {
                date: d(2022, 2, 23),
                upvotes: 600,
                comments: 120,
                unigram: "roaming".into(),
                bigram: "roaming enabled".into(),
            }),
            months,
            dense_threshold: 30,
            sample_spread: 0.08,
            false_positives: 45,
            chatter_max_hits: 4,
            user_reports: vec![
                (d(2021, 2, 15), 10_000),
                (d(2021, 8, 1), 90_000),
                (d(2022, 2, 15), 250_000),
                (d(2022, 9, 20), 700_000),
            ],
            ocr_jitter: 0.05,
        }
    }
}

/// Words with no lexicon polarity, no negation, and no outage keyword.
pub const NEUTRAL_WORDS: &[&str] = &[
    "dish", "mount", "roof", "router", "install", "kit", "cable", "antenna", "tree", "pole", "order",
    "shipping", "app", "firmware", "weather", "snow", "rain", "cabin", "camper", "camping", "plan",
    "beta", "map", "coverage", "satellite", "sky", "view", "setup", "bracket", "ethernet", "adapter",
    "power", "battery", "solar", "inverter", "wifi", "mesh", "gaming", "streaming", "video", "call",
    "county", "rural", "farm", "house", "neighbor", "box", "tracking", "email", "support", "ticket",
    "account", "billing", "invoice", "update", "version", "software", "question", "anyone",
    "thoughts", "today", "yesterday", "week", "month", "morning", "evening", "night", "photo",
    "picture", "pipe", "ladder", "drill", "garage", "attic", "backyard", "field", "lake", "mountain",
    "highway", "truck", "boat", "office", "school",
];

const POSITIVE_WORDS: &[&str] = &[
    "great", "love", "awesome", "excellent", "amazing", "fantastic", "wonderful", "happy", "excited",
    "impressive", "smooth", "reliable", "solid", "stellar", "incredible", "thrilled", "delighted",
    "brilliant", "superb", "nice",
];

const NEGATIVE_WORDS: &[&str] = &[
    "terrible", "awful", "frustrated", "disappointed", "annoying", "useless", "unacceptable",
    "ridiculous", "horrible", "worst", "unreliable", "unstable", "sluggish", "laggy", "choppy",
    "buffering", "miserable", "pathetic", "garbage",
];

/// Curated outage vocabulary written to the fixture's keyword file.
pub const OUTAGE_KEYWORDS: &[&str] = &["outage", "down", "offline", "disconnected", "no service", "no internet"];

const NEGATIVE_KEYWORDS: &[&str] = &["outage", "offline", "disconnected"];
const TRAILING_KEYWORDS: &[&str] = &["down", "no service", "no internet"];

const SERVERS: &[&str] = &["Seattle, WA", "Denver, CO", "Chicago, IL", "Dallas, TX", "Atlanta, GA"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthTruth {
    pub month: YearMonth,
    pub median: f64,
    pub samples: usize,
    pub strong_pos: usize,
    pub strong_neg: usize,
    pub pos: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularTruth {
    pub post_id: String,
    pub month: YearMonth,
    pub unigram: String,
    pub bigram: String,
}

/// What a correct pipeline run must recover from the generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub peaks: Vec<PlantedPeak>,
    pub outage_days: Vec<NaiveDate>,
    pub popular: Option<PopularTruth>,
    pub months: Vec<MonthTruth>,
    pub false_positive_docs: Vec<String>,
    pub posts: usize,
    pub comments: usize,
    pub ocr_docs: usize,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub posts: Vec<Post>,
    pub comments: Vec<Comment>,
    pub ocr: Vec<OcrDocument>,
    pub launches: BTreeMap<YearMonth, u64>,
    pub users: Vec<(NaiveDate, u64)>,
    pub truth: GroundTruth,
}

pub const POSTS_FILE: &str = "posts.jsonl";
pub const COMMENTS_FILE: &str = "comments.jsonl";
pub const OCR_DIR: &str = "ocr";
pub const KEYWORDS_FILE: &str = "keywords.txt";
pub const LAUNCHES_FILE: &str = "launches.csv";
pub const USERS_FILE: &str = "users.csv";
pub const TRUTH_FILE: &str = "truth.json";

impl Fixture {
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir.join(OCR_DIR))?;
        write_posts(io::BufWriter::new(fs::File::create(dir.join(POSTS_FILE))?), &self.posts)?;
        write_comments(io::BufWriter::new(fs::File::create(dir.join(COMMENTS_FILE))?), &self.comments)?;
        for doc in &self.ocr {
            let mut text = serde_json::to_string(doc).map_err(io::Error::other)?;
            text.push('\n');
            fs::write(dir.join(OCR_DIR).join(ocr_file_name(&doc.source_id)), text)?;
        }
        let mut kw = String::from("# curated outage keywords\n");
        for k in OUTAGE_KEYWORDS {
            kw.push_str(k);
            kw.push('\n');
        }
        fs::write(dir.join(KEYWORDS_FILE), kw)?;
        let mut launches = String::from("month,count\n");
        for (m, c) in &self.launches {
            launches.push_str(&format!("{m},{c}\n"));
        }
        fs::write(dir.join(LAUNCHES_FILE), launches)?;
        let mut users = String::from("date,count\n");
        for (day, c) in &self.users {
            users.push_str(&format!("{day},{c}\n"));
        }
        fs::write(dir.join(USERS_FILE), users)?;
        let mut truth = serde_json::to_string_pretty(&self.truth).map_err(io::Error::other)?;
        truth.push('\n');
        fs::write(dir.join(TRUTH_FILE), truth)
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

struct Gen<'a> {
    rng: ChaCha8Rng,
    lexicon: &'a Lexicon,
    tau: f64,
    cap: usize,
    strong: BTreeMap<NaiveDate, (usize, usize)>,
    peak_days: BTreeMap<NaiveDate, PeakPolarity>,
    posts: Vec<Post>,
    comments: Vec<Comment>,
    next_post: usize,
    next_comment: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mood {
    Neutral,
    Mild,
    Strong(PeakPolarity),
}

impl<'a> Gen<'a> {
    fn label(&self, text: &str) -> StrongLabel {
        classify_strong(&score_text(text, self.lexicon), self.tau).expect("tau validated")
    }

    fn negative_dominant(&self, text: &str) -> bool {
        let s = score_text(text, self.lexicon);
        s.negative > s.positive
    }

    fn neutral_words(&mut self, n: usize) -> Vec<&'static str> {
        (0..n)
            .map(|_| *NEUTRAL_WORDS.choose(&mut self.rng).expect("non-empty"))
            .collect()
    }

    fn neutral_text(&mut self) -> String {
        let n = self.rng.gen_range(4..9);
        let w = self.neutral_words(n);
        let text = match self.rng.gen_range(0..3) {
            0 => format!("{} question about the {} {} for my {}", capitalize(w[0]), w[1], w[2], w[3..].join(" ")),
            1 => format!("{} {} with the {}? {}", capitalize(w[0]), w[1], w[2], w[3..].join(" ")),
            _ => format!("Update on the {} {}: {}", w[0], w[1], w[2..].join(" ")),
        };
        debug_assert_eq!(score_text(&text, self.lexicon).neutral, 1.0);
        text
    }

    /// One polarity word: scored but never strong.
    fn mild_text(&mut self) -> String {
        let base = self.neutral_text();
        let word = if self.rng.gen_bool(0.5) {
            POSITIVE_WORDS.choose(&mut self.rng)
        } else {
            NEGATIVE_WORDS.choose(&mut self.rng)
        }
        .expect("non-empty");
        let text = format!("{base}, {word}");
        debug_assert_eq!(self.label(&text), StrongLabel::NotStrong);
        text
    }

    fn strong_text(&mut self, polarity: PeakPolarity, term: Option<&str>, hits: usize) -> Result<String, FixtureError> {
        let pool = match polarity {
            PeakPolarity::Positive => POSITIVE_WORDS,
            PeakPolarity::Negative => NEGATIVE_WORDS,
        };
        // the term appears twice so it leads the day's word cloud
        let term_hits = if term.and_then(|t| self.lexicon.polarity(t)).is_some() { 2 } else { 0 };
        let extra = hits.saturating_sub(term_hits);
        let words: Vec<&str> = pool.choose_multiple(&mut self.rng, extra.min(pool.len())).copied().collect();
        let filler = self.neutral_words(2);
        let lead = match term {
            Some(t) => format!("{} {} the {}, {t} again", capitalize(t), filler[0], filler[1]),
            None => format!("{} {} update", capitalize(filler[0]), filler[1]),
        };
        let text = match words.as_slice() {
            [] => lead,
            [w] => format!("{lead}. {}!", capitalize(w)),
            [rest @ .., last] => format!("{lead}. {} and {last}!", capitalize(&rest.join(", "))),
        };
        let want = match polarity {
            PeakPolarity::Positive => StrongLabel::Positive,
            PeakPolarity::Negative => StrongLabel::Negative,
        };
        if self.label(&text) != want {
            return Err(infeasible(format!(
                "a strong {polarity:?} text with {hits} polarity hits does not reach tau {}",
                self.tau
            )));
        }
        Ok(text)
    }

    fn text_for(&mut self, mood: Mood, hits: usize) -> Result<String, FixtureError> {
        match mood {
            Mood::Neutral => Ok(self.neutral_text()),
            Mood::Mild => Ok(self.mild_text()),
            Mood::Strong(p) => self.strong_text(p, None, hits),
        }
    }

    /// Negative, non-strong text with `n` keyword hits (1 or 2).
    fn outage_text(&mut self, n: usize) -> String {
        let kw1 = *NEGATIVE_KEYWORDS.choose(&mut self.rng).expect("non-empty");
        let w = self.neutral_words(2);
        let text = if n >= 2 {
            let kw2 = *TRAILING_KEYWORDS.choose(&mut self.rng).expect("non-empty");
            format!("{} {kw1} since the {}, {kw2}", capitalize(w[0]), w[1])
        } else {
            format!("{} {kw1} again at the {}", capitalize(w[0]), w[1])
        };
        debug_assert!(self.negative_dominant(&text));
        debug_assert_eq!(self.label(&text), StrongLabel::NotStrong);
        text
    }

    /// Mentions an outage keyword without scoring negative.
    fn benign_keyword_text(&mut self) -> String {
        let w = self.neutral_words(2);
        let text = match self.rng.gen_range(0..3) {
            0 => format!("Is the {} down for anyone near the {}?", w[0], w[1]),
            1 => format!("Back after the outage, {} works great now", w[0]),
            _ => format!("{} offline for the {} move, {} works fine", capitalize(w[0]), w[1], w[0]),
        };
        debug_assert!(!self.negative_dominant(&text));
        debug_assert_eq!(self.label(&text), StrongLabel::NotStrong);
        text
    }

    fn time_on(&mut self, date: NaiveDate, from_s: i64, to_s: i64) -> i64 {
        day_start(date) + self.rng.gen_range(from_s..to_s)
    }

    fn push_post(&mut self, created_at: i64, title: String, body: String, upvotes: i64) -> usize {
        self.next_post += 1;
        let id = format!("p{:05}", self.next_post);
        let mut extra = BTreeMap::new();
        extra.insert("author".to_string(), Value::String(format!("user{}", self.rng.gen_range(0..3000))));
        self.posts.push(Post {
            id,
            created_at,
            title,
            body,
            upvotes,
            comment_count: 0,
            urls: Vec::new(),
            media_refs: Vec::new(),
            removed: false,
            extra,
        });
        self.posts.len() - 1
    }

    fn push_comment(&mut self, post: usize, created_at: i64, body: String) -> usize {
        self.next_comment += 1;
        let post_id = self.posts[post].id.clone();
        // reply to the post or to an earlier comment of the same thread
        let siblings: Vec<usize> = self
            .comments
            .iter()
            .enumerate()
            .rev()
            .take(8)
            .filter(|(_, c)| c.post_id == post_id && c.created_at <= created_at)
            .map(|(i, _)| i)
            .collect();
        let parent_id = match siblings.choose(&mut self.rng) {
            Some(&i) if self.rng.gen_bool(0.3) => self.comments[i].id.clone(),
            _ => post_id.clone(),
        };
        let mut extra = BTreeMap::new();
        extra.insert("author".to_string(), Value::String(format!("user{}", self.rng.gen_range(0..3000))));
        self.comments.push(Comment {
            id: format!("c{:06}", self.next_comment),
            parent_id,
            post_id,
            created_at,
            body,
            upvotes: self.rng.gen_range(-2..40),
            removed: false,
            extra,
        });
        self.posts[post].comment_count += 1;
        self.comments.len() - 1
    }

    fn strong_room(&self, date: NaiveDate, p: PeakPolarity) -> bool {
        if self.peak_days.get(&date) == Some(&p) {
            return false;
        }
        let (sp, sn) = self.strong.get(&date).copied().unwrap_or_default();
        match p {
            PeakPolarity::Positive => sp < self.cap,
            PeakPolarity::Negative => sn < self.cap,
        }
    }

    fn count_strong(&mut self, date: NaiveDate, p: PeakPolarity) {
        let e = self.strong.entry(date).or_default();
        match p {
            PeakPolarity::Positive => e.0 += 1,
            PeakPolarity::Negative => e.1 += 1,
        }
    }

    fn background_upvotes(&mut self) -> i64 {
        let u: f64 = self.rng.gen_range(0.0f64..1.0);
        (u.powi(4) * 400.0) as i64 - self.rng.gen_range(0..3)
    }
}

fn validate(spec: &FixtureSpec) -> Result<(), FixtureError> {
    if spec.start >= spec.end {
        return Err(infeasible("window start must precede end"));
    }
    if !(spec.tau > 0.5 && spec.tau <= 1.0) {
        return Err(infeasible(format!("tau {} outside (0.5, 1]", spec.tau)));
    }
    let inside = |day: NaiveDate| day >= spec.start && day <= spec.end;
    let mut seen = BTreeSet::new();
    for p in &spec.peaks {
        if !inside(p.date) {
            return Err(infeasible(format!("peak {} outside the window", p.date)));
        }
        if !seen.insert(p.date) {
            return Err(infeasible(format!("two peaks planted on {}", p.date)));
        }
        if p.count <= spec.background_strong_cap {
            return Err(infeasible(format!(
                "peak on {} must exceed the background cap of {}",
                p.date, spec.background_strong_cap
            )));
        }
    }
    for o in &spec.outages {
        if !inside(o.date) {
            return Err(infeasible(format!("outage {} outside the window", o.date)));
        }
    }
    if let Some(p) = &spec.popular {
        if !inside(p.date) {
            return Err(infeasible("popular post outside the window"));
        }
        if p.bigram.split_whitespace().count() != 2 {
            return Err(infeasible("popular bigram must have two words"));
        }
    }
    for m in &spec.months {
        if m.samples % 2 == 0 || m.samples == 0 {
            return Err(infeasible(format!("{}: sample count must be odd", m.month)));
        }
        if m.month.first_day() < spec.start || m.month.last_day() > spec.end {
            return Err(infeasible(format!("{} is not fully inside the window", m.month)));
        }
        let tenths = (m.median * 10.0).round();
        if (tenths / 10.0 - m.median).abs() > 1e-9 || m.median <= 1.0 {
            return Err(infeasible(format!("{}: median must be > 1 with one decimal", m.month)));
        }
    }
    Ok(())
}

/// Render tenths of a unit as a decimal string, e.g. 1054 -> "105.4".
fn tenths_str(t: i64) -> String {
    format!("{}.{}", t / 10, t % 10)
}

/// Odd-sized sample whose middle value is exactly `median`.
fn month_samples(rng: &mut impl Rng, median: f64, n: usize, spread: f64) -> Vec<String> {
    let m = (median * 10.0).round() as i64;
    let max_d = ((m as f64 * spread) as i64).max(1);
    let mut out = vec![tenths_str(m)];
    for _ in 0..n / 2 {
        let below = rng.gen_range(0..=max_d).min(m - 1);
        let above = rng.gen_range(0..=max_d);
        out.push(tenths_str(m - below));
        out.push(tenths_str(m + above));
    }
    out.shuffle(rng);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedValues {
    pub download: String,
    pub upload: String,
    pub latency: String,
}

impl PlantedValues {
    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            download: tenths_str(rng.gen_range(50..10000)),
            upload: tenths_str(rng.gen_range(10..1000)),
            latency: rng.gen_range(15..400).to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimpleStyle {
    /// Labels in one row with values beneath (the common app layout).
    Horizontal,
    /// Download and upload stacked, latency in a side column.
    Vertical,
}

struct Canvas<'r, R: Rng> {
    rng: &'r mut R,
    h: f64,
    jitter: f64,
    tokens: Vec<OcrToken>,
}

impl<R: Rng> Canvas<'_, R> {
    fn width_of(&self, text: &str) -> f64 {
        0.55 * self.h * text.chars().count() as f64
    }

    /// Place a token with its top-left corner at (x, y), jittered.
    fn put(&mut self, text: &str, x: f64, y: f64) -> f64 {
        let j = self.jitter * self.h;
        let (dx, dy) = if j > 0.0 {
            (self.rng.gen_range(-j..=j), self.rng.gen_range(-j..=j))
        } else {
            (0.0, 0.0)
        };
        let w = self.width_of(text);
        self.tokens.push(OcrToken {
            text: text.to_string(),
            x: x + dx,
            y: y + dy,
            w,
            h: self.h,
            confidence: 0.9 + 0.1 * self.rng.gen_range(0.0..1.0),
        });
        x + w
    }

    /// Words left to right with a small gap.
    fn put_words(&mut self, text: &str, x: f64, y: f64) {
        let mut cx = x;
        for word in text.split_whitespace() {
            cx = self.put(word, cx, y) + 0.4 * self.h;
        }
    }
}

fn us_date(ts: NaiveDateTime) -> String {
    ts.format("%-m/%-d/%Y").to_string()
}

fn clock_words(ts: NaiveDateTime) -> String {
    let (pm, h12) = ts.hour12();
    format!("{h12}:{:02} {}", ts.minute(), if pm { "PM" } else { "AM" })
}

/// Synthetic single-report screenshot.
#[allow(clippy::too_many_arguments)]
pub fn simple_layout(
    rng: &mut impl Rng,
    source_id: &str,
    values: &PlantedValues,
    style: SimpleStyle,
    provider: &str,
    server: &str,
    timestamp: Option<NaiveDateTime>,
    jitter: f64,
) -> OcrDocument {
    let h = rng.gen_range(28.0f64..48.0).round();
    let x0 = rng.gen_range(1.0f64..3.0) * h;
    let y0 = rng.gen_range(1.0f64..3.0) * h;
    let mut c = Canvas {
        rng,
        h,
        jitter,
        tokens: Vec::new(),
    };
    if let Some(ts) = timestamp {
        c.put_words(&format!("{} {}", us_date(ts), clock_words(ts)), x0, y0);
    }
    let y1 = y0 + 2.5 * h;
    let col = 8.5 * h;
    let bottom = match style {
        SimpleStyle::Horizontal => {
            let y2 = y1 + 2.0 * h;
            let end = c.put("PING", x0, y1);
            c.put("ms", end + 0.5 * h, y1);
            let end = c.put("DOWNLOAD", x0 + col, y1);
            c.put("Mbps", end + 0.5 * h, y1);
            let end = c.put("UPLOAD", x0 + 2.0 * col, y1);
            c.put("Mbps", end + 0.5 * h, y1);
            c.put(&values.latency, x0, y2);
            c.put(&values.download, x0 + col, y2);
            c.put(&values.upload, x0 + 2.0 * col, y2);
            y2 + 3.0 * h
        }
        SimpleStyle::Vertical => {
            let side = x0 + 9.0 * h;
            c.put("DOWNLOAD", x0, y1);
            let end = c.put(&values.download, x0, y1 + 1.6 * h);
            c.put("Mbps", end + 0.4 * h, y1 + 1.6 * h);
            let end = c.put("Idle", side, y1);
            c.put("Latency", end + 0.4 * h, y1);
            let end = c.put(&values.latency, side, y1 + 1.6 * h);
            c.put("ms", end + 0.4 * h, y1 + 1.6 * h);
            c.put("UPLOAD", x0, y1 + 4.0 * h);
            let end = c.put(&values.upload, x0, y1 + 5.6 * h);
            c.put("Mbps", end + 0.4 * h, y1 + 5.6 * h);
            y1 + 8.0 * h
        }
    };
    c.put("Provider", x0, bottom);
    c.put_words(provider, x0, bottom + 1.6 * h);
    c.put("Server", x0 + 2.0 * col, bottom);
    c.put_words(server, x0 + 2.0 * col, bottom + 1.6 * h);
    let tokens = c.tokens;
    OcrDocument {
        source_id: source_id.to_string(),
        width: x0 + 3.0 * col + 2.0 * h,
        height: bottom + 4.0 * h,
        tokens,
    }
}

/// Synthetic results-history screenshot: one row per report.
pub fn table_layout(
    rng: &mut impl Rng,
    source_id: &str,
    rows: &[(NaiveDateTime, PlantedValues)],
    provider: &str,
    jitter: f64,
) -> OcrDocument {
    let h = rng.gen_range(28.0f64..44.0).round();
    let x0 = rng.gen_range(1.0f64..2.5) * h;
    let y0 = rng.gen_range(1.0f64..2.5) * h;
    let mut c = Canvas {
        rng,
        h,
        jitter,
        tokens: Vec::new(),
    };
    c.put_words(&format!("{provider} Results"), x0, y0);
    let yh = y0 + 2.5 * h;
    let (dl, ul, ping) = (x0 + 7.0 * h, x0 + 13.0 * h, x0 + 18.0 * h);
    c.put("DATE", x0, yh);
    c.put("DOWNLOAD", dl, yh);
    c.put("UPLOAD", ul, yh);
    c.put("PING", ping, yh);
    let yu = yh + 1.4 * h;
    c.put("Mbps", dl, yu);
    c.put("Mbps", ul, yu);
    c.put("ms", ping, yu);
    let mut y = yu + 2.0 * h;
    for (ts, v) in rows {
        c.put(&us_date(*ts), x0, y);
        c.put(&v.download, dl, y);
        c.put(&v.upload, ul, y);
        c.put(&v.latency, ping, y);
        y += 1.8 * h;
    }
    let tokens = c.tokens;
    OcrDocument {
        source_id: source_id.to_string(),
        width: ping + 5.0 * h,
        height: y + 2.0 * h,
        tokens,
    }
}

fn random_time_on(rng: &mut impl Rng, date: NaiveDate) -> NaiveDateTime {
    date.and_hms_opt(rng.gen_range(0..24), rng.gen_range(0..60), 0)
        .expect("valid time")
}

fn random_day(rng: &mut impl Rng, month: YearMonth) -> NaiveDate {
    let n = month.last_day().day0() + 1;
    month.first_day() + chrono::TimeDelta::days(i64::from(rng.gen_range(0..n)))
}


/// Build a corpus realising `spec`, checked against `lexicon`.
pub fn generate_fixture(spec: &FixtureSpec, seed: u64, lexicon: &Lexicon) -> Result<Fixture, FixtureError> {
    validate(spec)?;
    for w in NEUTRAL_WORDS {
        if lexicon.polarity(w).is_some() || lexicon.is_negator(w) {
            return Err(infeasible(format!("neutral word `{w}` carries lexicon polarity")));
        }
    }
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        lexicon,
        tau: spec.tau,
        cap: spec.background_strong_cap,
        strong: BTreeMap::new(),
        peak_days: spec.peaks.iter().map(|p| (p.date, p.polarity)).collect(),
        posts: Vec::new(),
        comments: Vec::new(),
        next_post: 0,
        next_comment: 0,
    };
    let window_days: Vec<NaiveDate> = days(spec.start, spec.end).collect();
    let window_end = day_start(spec.end) + 86_399;

    // planted sentiment peaks
    for p in &spec.peaks {
        for _ in 0..p.count {
            let text = g.strong_text(p.polarity, Some(&p.term), spec.strong_hits)?;
            let ts = g.time_on(p.date, 0, 86_400);
            let up = g.background_upvotes();
            let (title, body) = split_title(&text);
            g.push_post(ts, title, body, up);
        }
    }

    // planted outages: negative, non-strong keyword posts and comments
    let mut outage_posts: Vec<usize> = Vec::new();
    for o in &spec.outages {
        let mut day_posts = Vec::new();
        for _ in 0..o.posts.max(1) {
            let text = g.outage_text(2);
            let ts = g.time_on(o.date, 6 * 3600, 12 * 3600);
            let up = g.background_upvotes();
            let (title, body) = split_title(&text);
            day_posts.push(g.push_post(ts, title, body, up));
        }
        for _ in 0..o.comments {
            let parent = *day_posts.choose(&mut g.rng).expect("non-empty");
            let ts = g.posts[parent].created_at + g.rng.gen_range(60..6 * 3600);
            let text = g.outage_text(2);
            g.push_comment(parent, ts, text);
        }
        outage_posts.extend(day_posts);
    }

    // planted popular thread
    let mut popular_truth = None;
    let mut popular_idx = None;
    if let Some(p) = &spec.popular {
        let words: Vec<&str> = p.bigram.split_whitespace().collect();
        let title = format!("{}?", capitalize(&p.bigram));
        let n = g.neutral_words(3);
        let body = format!("Drove to the {} with the {} and the {} kept going", n[0], n[1], n[2]);
        let ts = g.time_on(p.date, 9 * 3600, 12 * 3600);
        let idx = g.push_post(ts, title, body, p.upvotes);
        for i in 0..p.comments {
            let n = g.neutral_words(2);
            let text = match i % 10 {
                0..=6 => format!("{} {} at the {} {}", capitalize(words[0]), words[1], n[0], n[1]),
                7 | 8 => format!("No {} here yet, the {} only", p.unigram, n[0]),
                _ => format!("{} {}", capitalize(n[0]), n[1]),
            };
            let t = ts + 60 * (i as i64 + 1);
            g.push_comment(idx, t, text);
        }
        popular_truth = Some(PopularTruth {
            post_id: g.posts[idx].id.clone(),
            month: YearMonth::of_date(p.date),
            unigram: p.unigram.clone(),
            bigram: p.bigram.clone(),
        });
        popular_idx = Some(idx);
    }

    // speed-test posts and their screenshots
    let mut ocr = Vec::new();
    let mut month_truth = Vec::new();
    let mut doc_no = 0usize;
    let mut next_doc = |prefix: &str| {
        doc_no += 1;
        format!("{prefix}{doc_no:04}")
    };
    for m in &spec.months {
        let values = month_samples(&mut g.rng, m.median, m.samples, spec.sample_spread);
        // chunk samples into table docs and single screenshots
        let mut groups: Vec<Vec<String>> = Vec::new();
        let mut rest = values.as_slice();
        let table_budget = if m.samples >= spec.dense_threshold {
            m.samples * 3 / 5
        } else if m.samples >= 9 {
            3
        } else {
            0
        };
        let mut in_tables = 0;
        while in_tables < table_budget && rest.len() >= 3 {
            let r = g.rng.gen_range(3..=6).min(rest.len()).min(table_budget - in_tables).max(3);
            let r = r.min(rest.len());
            groups.push(rest[..r].to_vec());
            rest = &rest[r..];
            in_tables += r;
        }
        groups.extend(rest.iter().map(|v| vec![v.clone()]));
        if m.strong_pos + m.strong_neg > groups.len() {
            return Err(infeasible(format!(
                "{}: {} strong posts planted over {} speed-test posts",
                m.month,
                m.strong_pos + m.strong_neg,
                groups.len()
            )));
        }
        let mut moods: Vec<Mood> = std::iter::repeat_n(Mood::Strong(PeakPolarity::Positive), m.strong_pos)
            .chain(std::iter::repeat_n(Mood::Strong(PeakPolarity::Negative), m.strong_neg))
            .collect();
        while moods.len() < groups.len() {
            moods.push(if g.rng.gen_bool(0.3) { Mood::Mild } else { Mood::Neutral });
        }
        moods.shuffle(&mut g.rng);
        for (group, mood) in groups.iter().zip(moods) {
            let mut date = random_day(&mut g.rng, m.month);
            if let Mood::Strong(p) = mood {
                let mut tries = 0;
                while !g.strong_room(date, p) {
                    date = random_day(&mut g.rng, m.month);
                    tries += 1;
                    if tries > 1000 {
                        return Err(infeasible(format!("{}: no room for strong speed-test posts", m.month)));
                    }
                }
                g.count_strong(date, p);
            }
            let taken = random_time_on(&mut g.rng, date);
            let server = *SERVERS.choose(&mut g.rng).expect("non-empty");
            let (doc, prefix) = if group.len() == 1 {
                let v = PlantedValues {
                    download: group[0].clone(),
                    ..PlantedValues::random(&mut g.rng)
                };
                let style = if g.rng.gen_bool(0.5) {
                    SimpleStyle::Horizontal
                } else {
                    SimpleStyle::Vertical
                };
                let shown = g.rng.gen_bool(0.8).then_some(taken);
                let id = next_doc("img");
                (
                    simple_layout(&mut g.rng, &id, &v, style, "SpaceX Starlink", server, shown, spec.ocr_jitter),
                    "Starlink speed test",
                )
            } else {
                let rows: Vec<(NaiveDateTime, PlantedValues)> = group
                    .iter()
                    .map(|dl| {
                        let day = random_day(&mut g.rng, m.month);
                        let v = PlantedValues {
                            download: dl.clone(),
                            ..PlantedValues::random(&mut g.rng)
                        };
                        (random_time_on(&mut g.rng, day), v)
                    })
                    .collect();
                let id = next_doc("img");
                (table_layout(&mut g.rng, &id, &rows, "Starlink", spec.ocr_jitter), "Starlink speed history")
            };
            let hits = spec.strong_hits;
            let text = g.text_for(mood, hits)?;
            let ts = day_start(date) + i64::from(taken.num_seconds_from_midnight());
            let up = g.background_upvotes();
            let title = format!("{prefix} from the {}", g.neutral_words(1)[0]);
            let idx = g.push_post(ts, title, text, up);
            g.posts[idx].media_refs.push(doc.source_id.clone());
            g.posts[idx].urls.push(format!("https://img.example.net/{}.png", doc.source_id));
            ocr.push(doc);
        }
        month_truth.push(MonthTruth {
            month: m.month,
            median: m.median,
            samples: m.samples,
            strong_pos: m.strong_pos,
            strong_neg: m.strong_neg,
            pos: (m.strong_pos + m.strong_neg > 0)
                .then(|| m.strong_pos as f64 / (m.strong_pos + m.strong_neg) as f64),
        });
    }

    // screenshots that must be filtered out
    let mut false_positive_docs = Vec::new();
    for i in 0..spec.false_positives {
        let date = *window_days.choose(&mut g.rng).expect("non-empty window");
        let taken = random_time_on(&mut g.rng, date);
        let mut v = PlantedValues::random(&mut g.rng);
        let id = next_doc("fp");
        let (provider, body) = match i % 3 {
            0 => {
                v.download = "0.0".into();
                ("SpaceX Starlink", g.neutral_text())
            }
            1 => {
                v.download = "5000".into();
                ("SpaceX Starlink", g.neutral_text())
            }
            _ => ("FiberCo", format!("Office {} on the new fiber line", g.neutral_words(1)[0])),
        };
        let doc = simple_layout(
            &mut g.rng,
            &id,
            &v,
            SimpleStyle::Horizontal,
            provider,
            SERVERS[0],
            Some(taken),
            spec.ocr_jitter,
        );
        let ts = day_start(date) + i64::from(taken.num_seconds_from_midnight());
        let up = g.rng.gen_range(0..20);
        let idx = g.push_post(ts, "Speed test".into(), body, up);
        g.posts[idx].media_refs.push(id.clone());
        false_positive_docs.push(id);
        ocr.push(doc);
    }

    // background posts
    let planted = g.posts.len();
    if planted > spec.posts {
        return Err(infeasible(format!("{planted} planted posts exceed the total of {}", spec.posts)));
    }
    let mut benign_days = 0usize;
    for _ in planted..spec.posts {
        let date = *window_days.choose(&mut g.rng).expect("non-empty window");
        let roll: f64 = g.rng.gen_range(0.0..1.0);
        let mut mood = if roll < 0.08 {
            Mood::Strong(PeakPolarity::Positive)
        } else if roll < 0.16 {
            Mood::Strong(PeakPolarity::Negative)
        } else if roll < 0.4 {
            Mood::Mild
        } else {
            Mood::Neutral
        };
        if let Mood::Strong(p) = mood {
            if g.strong_room(date, p) {
                g.count_strong(date, p);
            } else {
                mood = Mood::Neutral;
            }
        }
        let text = if mood == Mood::Neutral && g.rng.gen_bool(0.06) {
            benign_days += 1;
            g.benign_keyword_text()
        } else {
            g.text_for(mood, spec.strong_hits.max(3))?
        };
        let (title, body) = split_title(&text);
        let ts = g.time_on(date, 0, 86_400);
        let up = g.background_upvotes();
        g.push_post(ts, title, body, up);
    }
    log::debug!("{benign_days} benign keyword posts");

    // keyword chatter on quiet days: negative, but too little to spike
    let outage_days: BTreeSet<NaiveDate> = spec.outages.iter().map(|o| o.date).collect();
    let mut by_day: BTreeMap<NaiveDate, Vec<usize>> = BTreeMap::new();
    for (i, p) in g.posts.iter().enumerate() {
        if Some(i) != popular_idx {
            by_day.entry(crate::calendar::utc_date(p.created_at)).or_default().push(i);
        }
    }
    let mut chatter = 0usize;
    for day in &window_days {
        if outage_days.contains(day) || !g.rng.gen_bool(0.15) {
            continue;
        }
        let Some(candidates) = by_day.get(day).cloned() else {
            continue;
        };
        let mut budget = spec.chatter_max_hits;
        while budget > 0 && g.rng.gen_bool(0.6) {
            let hits = if budget >= 2 && g.rng.gen_bool(0.5) { 2 } else { 1 };
            let post = *candidates.choose(&mut g.rng).expect("non-empty");
            let start = g.posts[post].created_at;
            if window_end.min(day_start(*day) + 86_399) <= start + 1 {
                break;
            }
            let ts = g.rng.gen_range(start + 1..=day_start(*day) + 86_399);
            let text = g.outage_text(hits);
            g.push_comment(post, ts, text);
            budget -= hits;
            chatter += 1;
        }
    }
    log::debug!("{chatter} chatter comments");

    // background comments
    let eligible: Vec<usize> = (0..g.posts.len())
        .filter(|i| Some(*i) != popular_idx && !outage_posts.contains(i))
        .collect();
    let have = g.comments.len();
    if have > spec.comments {
        return Err(infeasible(format!("{have} planted comments exceed the total of {}", spec.comments)));
    }
    for _ in have..spec.comments {
        let post = *eligible.choose(&mut g.rng).expect("posts exist");
        let ts = (g.posts[post].created_at + g.rng.gen_range(60..36 * 3600)).min(window_end);
        let text = if g.rng.gen_bool(0.3) {
            g.mild_text()
        } else if g.rng.gen_bool(0.04) {
            g.benign_keyword_text()
        } else {
            g.neutral_text()
        };
        g.push_comment(post, ts, text);
    }

    // a few removed records for the cleaning step
    let removable: Vec<usize> = (planted..g.posts.len()).collect();
    for &i in removable.choose_multiple(&mut g.rng, spec.posts / 250) {
        g.posts[i].body = "[removed]".into();
    }
    let n_comments = g.comments.len();
    for _ in 0..n_comments / 200 {
        let i = g.rng.gen_range(0..n_comments);
        let c = &mut g.comments[i];
        let chatter_like = c.body.contains("outage") || c.body.contains("offline") || c.body.contains("disconnected");
        let planted_post = g.posts.iter().position(|p| p.id == c.post_id).is_some_and(|p| p < planted);
        if !chatter_like && !planted_post {
            c.body = "[deleted]".into();
        }
    }

    let mut launches = BTreeMap::new();
    let mut m = YearMonth::of_date(spec.start);
    while m <= YearMonth::of_date(spec.end) {
        launches.insert(m, g.rng.gen_range(1..=5));
        m = m.succ();
    }
    let users: Vec<(NaiveDate, u64)> = spec
        .user_reports
        .iter()
        .filter(|(day, _)| *day >= spec.start && *day <= spec.end)
        .copied()
        .collect();

    let mut posts = g.posts;
    let mut comments = g.comments;
    posts.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.id.cmp(&b.id)));
    comments.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.id.cmp(&b.id)));
    let truth = GroundTruth {
        seed,
        start: spec.start,
        end: spec.end,
        peaks: spec.peaks.clone(),
        outage_days: outage_days.into_iter().collect(),
        popular: popular_truth,
        months: month_truth,
        false_positive_docs,
        posts: posts.len(),
        comments: comments.len(),
        ocr_docs: ocr.len(),
    };
    Ok(Fixture {
        posts,
        comments,
        ocr,
        launches,
        users,
        truth,
    })
}

/// First sentence as title, remainder as body.
fn split_title(text: &str) -> (String, String) {
    match text.split_once(". ") {
        Some((t, b)) => (t.to_string(), b.to_string()),
        None => (text.to_string(), String::new()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::peaks::daily_strong_counts;
    use crate::speedtest::{extract, LabelSpec, Template};

    fn small_spec() -> FixtureSpec {
        let month = |m| YearMonth::new(2021, m).unwrap();
        FixtureSpec {
            start: d(2021, 1, 1),
            end: d(2021, 3, 31),
            posts: 400,
            comments: 800,
            peaks: vec![PlantedPeak {
                date: d(2021, 1, 10),
                polarity: PeakPolarity::Negative,
                term: "delay".into(),
                count: 9,
            }],
            outages: vec![],
            popular: None,
            months: [(1, 100.0), (2, 80.0), (3, 60.0)]
                .into_iter()
                .map(|(m, median)| PlantedMonth {
                    month: month(m),
                    median,
                    samples: 5,
                    strong_pos: 1,
                    strong_neg: 1,
                })
                .collect(),
            false_positives: 3,
            user_reports: vec![],
            ..FixtureSpec::default()
        }
    }

    #[test]
    fn planted_peak_count_is_exact() {
        let lex = Lexicon::builtin();
        let f = generate_fixture(&small_spec(), 7, &lex).unwrap();
        let labels = f.posts.iter().filter(|p| !p.body.contains("[removed]")).map(|p| {
            let s = score_text(&p.text(), &lex);
            (p.created_at, classify_strong(&s, 0.7).unwrap())
        });
        let series = daily_strong_counts(labels, d(2021, 1, 1), d(2021, 3, 31));
        assert_eq!(series.neg_counts[9], 9);
        assert!(series
            .neg_counts
            .iter()
            .enumerate()
            .all(|(i, c)| i == 9 || *c <= 2));
    }

    #[test]
    fn planted_medians_come_back_from_layouts() {
        let lex = Lexicon::builtin();
        let f = generate_fixture(&small_spec(), 3, &lex).unwrap();
        let spec = LabelSpec::default();
        let mut by_month: BTreeMap<YearMonth, Vec<f64>> = BTreeMap::new();
        for doc in f.ocr.iter().filter(|d| !f.truth.false_positive_docs.contains(&d.source_id)) {
            let post = f.posts.iter().find(|p| p.media_refs.contains(&doc.source_id)).unwrap();
            for r in extract(doc, &spec).unwrap().reports {
                let month = r
                    .test_timestamp
                    .map(|t| YearMonth::of_date(t.date()))
                    .unwrap_or_else(|| YearMonth::of_timestamp(post.created_at));
                by_month.entry(month).or_default().push(r.download_mbps());
            }
        }
        let got: Vec<f64> = by_month
            .values()
            .map(|v| crate::trends::median(v).unwrap())
            .collect();
        assert_eq!(got, [100.0, 80.0, 60.0]);
    }

    #[test]
    fn weak_strong_texts_are_infeasible() {
        let spec = FixtureSpec {
            strong_hits: 1,
            ..small_spec()
        };
        assert!(matches!(
            generate_fixture(&spec, 1, &Lexicon::builtin()),
            Err(FixtureError::SpecInfeasible(_))
        ));
    }

    #[test]
    fn same_seed_same_corpus() {
        let lex = Lexicon::builtin();
        let a = generate_fixture(&small_spec(), 11, &lex).unwrap();
        let b = generate_fixture(&small_spec(), 11, &lex).unwrap();
        assert_eq!(a.posts, b.posts);
        assert_eq!(a.comments, b.comments);
        assert_eq!(a.ocr, b.ocr);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn layouts_classify_as_built() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = LabelSpec::default();
        for style in [SimpleStyle::Horizontal, SimpleStyle::Vertical] {
            let v = PlantedValues::random(&mut rng);
            let doc = simple_layout(&mut rng, "s", &v, style, "SpaceX Starlink", "Denver, CO", None, 0.1);
            let out = extract(&doc, &spec).unwrap();
            assert_eq!(out.reports.len(), 1);
            let r = &out.reports[0];
            assert_eq!(r.template, Template::Simple);
            assert_eq!(r.download.value, v.download.parse::<f64>().unwrap());
            assert_eq!(r.upload.unwrap().value, v.upload.parse::<f64>().unwrap());
            assert_eq!(r.latency.unwrap().value, v.latency.parse::<f64>().unwrap());
            assert_eq!(r.provider.as_deref(), Some("SpaceX Starlink"));
            assert_eq!(r.server_location.as_deref(), Some("Denver, CO"));
        }
        let when = d(2022, 3, 4).and_hms_opt(0, 0, 0).unwrap();
        let rows: Vec<_> = (0..4).map(|_| (when, PlantedValues::random(&mut rng))).collect();
        let doc = table_layout(&mut rng, "t", &rows, "Starlink", 0.1);
        let out = extract(&doc, &spec).unwrap();
        assert_eq!(out.reports.len(), 4);
        for (r, (_, v)) in out.reports.iter().zip(&rows) {
            assert_eq!(r.template, Template::Table);
            assert_eq!(r.download.value, v.download.parse::<f64>().unwrap());
            assert_eq!(r.test_timestamp, Some(when));
        }
    }
}
