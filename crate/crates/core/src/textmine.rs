//! Tokenization, stop-word filtering, n-gram counts, word clouds and the
//! search queries emitted for sentiment peaks.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

/// Brand appended to peak-annotation queries.
pub const DEFAULT_QUERY_BRAND: &str = "Starlink";

#[derive(Debug, Clone, Default)]
pub struct StopWords(HashSet<String>);

impl StopWords {
    pub fn empty() -> Self {
        Self::default()
    }

    /// English list shipped with the crate.
    pub fn english() -> Self {
        Self::from_lines(DEFAULT_STOPWORDS)
    }

    /// One word per line; blank lines and `#` comments are ignored.
    pub fn from_lines(text: &str) -> Self {
        Self(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for StopWords {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(iter.into_iter().map(|s| s.into().to_lowercase()).collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream {
    pub tokens: Vec<String>,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Lowercase and split on anything that is not alphanumeric, keeping
/// apostrophes that sit between two alphanumeric characters.
pub fn split_words(text: &str) -> Vec<String> {
    let lower: Vec<char> = text.to_lowercase().chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    for (i, &c) in lower.iter().enumerate() {
        if c.is_alphanumeric() {
            cur.push(c);
        } else if is_apostrophe(c)
            && !cur.is_empty()
            && lower.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            cur.push('\'');
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn tokenize_filter(text: &str, stopwords: &StopWords) -> TokenStream {
    TokenStream {
        tokens: split_words(text)
            .into_iter()
            .filter(|t| t.chars().count() >= 2 && !stopwords.contains(t))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramCounts {
    pub n: usize,
    pub counts: BTreeMap<String, u64>,
}

impl NGramCounts {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            counts: BTreeMap::new(),
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn get(&self, gram: &str) -> u64 {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    pub fn add_doc(&mut self, doc: &TokenStream) {
        for w in doc.tokens.windows(self.n) {
            *self.counts.entry(w.join(" ")).or_insert(0) += 1;
        }
    }

    pub fn merge(&mut self, other: &NGramCounts) {
        assert_eq!(self.n, other.n, "merging counts of different n");
        for (g, c) in &other.counts {
            *self.counts.entry(g.clone()).or_insert(0) += c;
        }
    }
}

/// Sliding-window n-gram counts, never spanning two documents.
///
/// # Panics
/// If `n == 0`.
pub fn ngram_counts<'a, I>(docs: I, n: usize) -> NGramCounts
where
    I: IntoIterator<Item = &'a TokenStream>,
{
    assert!(n >= 1, "n-gram order must be at least 1");
    let mut counts = NGramCounts::new(n);
    for d in docs {
        counts.add_doc(d);
    }
    counts
}

/// Top `k` entries by frequency, ties in lexicographic order.
pub fn word_cloud(counts: &NGramCounts, k: usize) -> Vec<(String, u64)> {
    let mut all: Vec<(&String, &u64)> = counts.counts.iter().collect();
    // BTreeMap iteration is already lexicographic, so a stable sort on
    // frequency keeps the tie-break.
    all.sort_by(|a, b| b.1.cmp(a.1));
    all.into_iter()
        .take(k)
        .map(|(g, c)| (g.clone(), *c))
        .collect()
}

pub fn write_cloud_csv<W: Write>(w: W, cloud: &[(String, u64)]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["rank", "term", "frequency"])?;
    for (i, (term, freq)) in cloud.iter().enumerate() {
        out.write_record([(i + 1).to_string(), term.clone(), freq.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventQuery {
    pub date: NaiveDate,
    pub keywords: Vec<String>,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TextError {
    #[error("no tokens survive filtering for {0}")]
    EmptyDay(NaiveDate),
}

/// Build the web-search query for a day: its three most common unigrams,
/// the brand, and the date. The query is only emitted, never executed.
pub fn event_query<S: AsRef<str>>(
    date: NaiveDate,
    day_docs: &[S],
    stopwords: &StopWords,
    brand: &str,
) -> Result<EventQuery, TextError> {
    let streams: Vec<TokenStream> = day_docs
        .iter()
        .map(|d| tokenize_filter(d.as_ref(), stopwords))
        .collect();
    let unigrams = ngram_counts(&streams, 1);
    if unigrams.counts.is_empty() {
        return Err(TextError::EmptyDay(date));
    }
    let keywords: Vec<String> = word_cloud(&unigrams, 3).into_iter().map(|(t, _)| t).collect();
    Ok(query_for(date, keywords, brand))
}

pub(crate) fn query_for(date: NaiveDate, keywords: Vec<String>, brand: &str) -> EventQuery {
    let query = format!("{} {} {}", keywords.join(" "), brand, date.format("%Y-%m-%d"));
    EventQuery {
        date,
        keywords,
        query,
    }
}
