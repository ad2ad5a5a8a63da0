//! Sentiment scores, strong-sentiment labels and the monthly Pos score.
//!
//! Scoring goes through [`SentimentProvider`]. The built-in provider is a
//! lexicon scorer with windowed negation; remote services live in
//! [`crate::clients`].

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::calendar::YearMonth;
use crate::textmine::{tokenize_filter, StopWords};

const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.csv");

pub const SUM_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_STRONG_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentScore {
    pub positive: f64,
    pub negative: f64,
    pub neutral: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SentimentError {
    #[error("strong threshold {0} must lie in (0.5, 1]")]
    InvalidThreshold(f64),
    #[error("score components ({0}, {1}, {2}) are not a distribution")]
    InvalidScore(f64, f64, f64),
}

impl SentimentScore {
    pub const NEUTRAL: SentimentScore = SentimentScore {
        positive: 0.0,
        negative: 0.0,
        neutral: 1.0,
    };

    pub fn new(positive: f64, negative: f64, neutral: f64) -> Result<Self, SentimentError> {
        let s = Self {
            positive,
            negative,
            neutral,
        };
        if s.is_valid() {
            Ok(s)
        } else {
            Err(SentimentError::InvalidScore(positive, negative, neutral))
        }
    }

    /// Rescale non-negative components so they sum to one. Returns the
    /// score and whether rescaling was needed.
    pub fn renormalized(
        positive: f64,
        negative: f64,
        neutral: f64,
    ) -> Result<(Self, bool), SentimentError> {
        let bad = || SentimentError::InvalidScore(positive, negative, neutral);
        let parts = [positive, negative, neutral];
        if parts.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(bad());
        }
        let sum: f64 = parts.iter().sum();
        if sum <= 0.0 {
            return Err(bad());
        }
        if (sum - 1.0).abs() <= SUM_TOLERANCE {
            return Ok((
                Self {
                    positive,
                    negative,
                    neutral,
                },
                false,
            ));
        }
        Ok((
            Self {
                positive: positive / sum,
                negative: negative / sum,
                neutral: neutral / sum,
            },
            true,
        ))
    }

    pub fn is_valid(&self) -> bool {
        let parts = [self.positive, self.negative, self.neutral];
        parts.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
            && (parts.iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrongLabel {
    #[serde(rename = "STRONG_POS")]
    Positive,
    #[serde(rename = "STRONG_NEG")]
    Negative,
    #[serde(rename = "NONE")]
    NotStrong,
}

/// Inclusive threshold test. `tau` must exceed 0.5 so at most one
/// component can qualify.
pub fn classify_strong(score: &SentimentScore, tau: f64) -> Result<StrongLabel, SentimentError> {
    if !(tau > 0.5 && tau <= 1.0) {
        return Err(SentimentError::InvalidThreshold(tau));
    }
    Ok(if score.positive >= tau {
        StrongLabel::Positive
    } else if score.negative >= tau {
        StrongLabel::Negative
    } else {
        StrongLabel::NotStrong
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LexiconError {
    #[error("lexicon line {line}: {reason}")]
    BadLine { line: usize, reason: String },
    #[error("`{0}` is both a negator and a scored term")]
    NegatorOverlap(String),
    #[error("smoothing constant must be positive")]
    BadSmoothing,
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: HashMap<String, (Polarity, f64)>,
    negators: std::collections::HashSet<String>,
    pub negation_window: usize,
    /// Added to the denominator so single hits stay below the strong bar.
    pub smoothing: f64,
}

impl Lexicon {
    pub fn builtin() -> Self {
        Self::from_csv(DEFAULT_LEXICON).expect("shipped lexicon is valid")
    }

    /// Parse `term,polarity,weight` rows. Polarity is `+1`/`1`/`-1`, or
    /// `negator` for negation cues (weight ignored). A header row is skipped.
    pub fn from_csv(text: &str) -> Result<Self, LexiconError> {
        let mut entries = HashMap::new();
        let mut negators = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if i == 0 && line.starts_with("term,") {
                continue;
            }
            let bad = |reason: &str| LexiconError::BadLine {
                line: i + 1,
                reason: reason.to_string(),
            };
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() < 2 || cols.len() > 3 {
                return Err(bad("expected term,polarity[,weight]"));
            }
            let term = cols[0];
            if tokenize_filter(term, &StopWords::empty()).tokens != [term] {
                return Err(bad("term must be one lowercase token"));
            }
            if cols[1].eq_ignore_ascii_case("negator") {
                negators.insert(term.to_string());
                continue;
            }
            let polarity = match cols[1] {
                "1" | "+1" => Polarity::Positive,
                "-1" => Polarity::Negative,
                _ => return Err(bad("polarity must be +1, -1 or negator")),
            };
            let weight = match cols.get(2) {
                Some(w) if !w.is_empty() => w.parse::<f64>().map_err(|_| bad("bad weight"))?,
                _ => 1.0,
            };
            if !(weight > 0.0 && weight.is_finite()) {
                return Err(bad("weight must be positive"));
            }
            entries.insert(term.to_string(), (polarity, weight));
        }
        Self::new(entries, negators, 2, 1.0)
    }

    pub fn new(
        entries: HashMap<String, (Polarity, f64)>,
        negators: std::collections::HashSet<String>,
        negation_window: usize,
        smoothing: f64,
    ) -> Result<Self, LexiconError> {
        if let Some(t) = negators.iter().find(|n| entries.contains_key(*n)) {
            return Err(LexiconError::NegatorOverlap(t.clone()));
        }
        if !(smoothing > 0.0 && smoothing.is_finite()) {
            return Err(LexiconError::BadSmoothing);
        }
        Ok(Self {
            entries,
            negators,
            negation_window,
            smoothing,
        })
    }

    pub fn polarity(&self, term: &str) -> Option<(Polarity, f64)> {
        self.entries.get(term).copied()
    }

    pub fn is_negator(&self, term: &str) -> bool {
        self.negators.contains(term)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Weighted positive and negative hit totals for `text`.
pub fn lexicon_hits(text: &str, lexicon: &Lexicon) -> (f64, f64) {
    let tokens = tokenize_filter(text, &StopWords::empty()).tokens;
    let (mut p, mut n) = (0.0, 0.0);
    for (i, tok) in tokens.iter().enumerate() {
        let Some((polarity, weight)) = lexicon.polarity(tok) else {
            continue;
        };
        let from = i.saturating_sub(lexicon.negation_window);
        let negated = tokens[from..i].iter().any(|t| lexicon.is_negator(t));
        match (polarity, negated) {
            (Polarity::Positive, false) | (Polarity::Negative, true) => p += weight,
            (Polarity::Negative, false) | (Polarity::Positive, true) => n += weight,
        }
    }
    (p, n)
}

pub fn score_text(text: &str, lexicon: &Lexicon) -> SentimentScore {
    let (p, n) = lexicon_hits(text, lexicon);
    let total = p + n + lexicon.smoothing;
    SentimentScore {
        positive: p / total,
        negative: n / total,
        neutral: lexicon.smoothing / total,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct ProviderError {
    pub message: String,
}

impl ProviderError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }
}

/// Something that turns texts into sentiment scores, one result per text.
pub trait SentimentProvider {
    fn id(&self) -> &str;
    fn score(&self, texts: &[&str]) -> Vec<Result<SentimentScore, ProviderError>>;
}

impl SentimentProvider for Lexicon {
    fn id(&self) -> &str {
        "lexicon"
    }

    fn score(&self, texts: &[&str]) -> Vec<Result<SentimentScore, ProviderError>> {
        texts.iter().map(|t| Ok(score_text(t, self))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ItemError {
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct BatchScores {
    /// Same length and order as the input; `None` marks unscored items.
    pub scores: Vec<Option<SentimentScore>>,
    pub errors: Vec<ItemError>,
}

pub fn score_batch<P: SentimentProvider + ?Sized>(texts: &[&str], provider: &P) -> BatchScores {
    let results = provider.score(texts);
    assert_eq!(
        results.len(),
        texts.len(),
        "provider `{}` returned a result count that does not match its input",
        provider.id()
    );
    let mut out = BatchScores {
        scores: Vec::with_capacity(texts.len()),
        errors: Vec::new(),
    };
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => out.scores.push(Some(s)),
            Err(e) => {
                out.scores.push(None);
                out.errors.push(ItemError {
                    index,
                    message: e.message,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosScore {
    pub month: YearMonth,
    pub strong_pos: u64,
    pub strong_neg: u64,
    /// Undefined when the month has no strong items.
    pub pos: Option<f64>,
}

pub fn pos_score<I>(month: YearMonth, labels: I) -> PosScore
where
    I: IntoIterator<Item = StrongLabel>,
{
    let (mut sp, mut sn) = (0u64, 0u64);
    for l in labels {
        match l {
            StrongLabel::Positive => sp += 1,
            StrongLabel::Negative => sn += 1,
            StrongLabel::NotStrong => {}
        }
    }
    PosScore {
        month,
        strong_pos: sp,
        strong_neg: sn,
        pos: (sp + sn > 0).then(|| sp as f64 / (sp + sn) as f64),
    }
}

/// One line of the scored-corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub id: String,
    pub kind: ItemKind,
    /// Content hash of the scored text.
    pub hash: String,
    pub provider: String,
    pub positive: f64,
    pub negative: f64,
    pub neutral: f64,
    pub label: StrongLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Post,
    Comment,
}

impl ScoredItem {
    pub fn score(&self) -> SentimentScore {
        SentimentScore {
            positive: self.positive,
            negative: self.negative,
            neutral: self.neutral,
        }
    }
}

pub fn write_scored<W: Write>(mut w: W, items: &[ScoredItem]) -> std::io::Result<()> {
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_scored<R: BufRead>(r: R) -> std::io::Result<Vec<ScoredItem>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}
