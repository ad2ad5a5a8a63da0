//! Two-step outage detection.
//!
//! Step one (sentiment peaks) points at outage discussions; from those a
//! keyword library is mined and then curated by hand. Step two keeps only
//! negative items that mention library keywords, counts keyword hits per
//! day, and flags days that spike above their trailing baseline.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::{day_span, days, utc_date};
use crate::corpus::Thread;
use crate::sentiment::SentimentScore;
use crate::textmine::{split_words, tokenize_filter, StopWords, TokenStream};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OutageError {
    #[error("seed set is empty")]
    EmptySeed,
    #[error("keyword library has no valid entries")]
    NoValidEntries,
    #[error("series has {0} days, at least 8 are needed")]
    SeriesTooShort(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    SeedFile,
    Mined,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeywordLibrary {
    pub unigrams: BTreeMap<String, Provenance>,
    pub bigrams: BTreeMap<String, Provenance>,
}

impl KeywordLibrary {
    pub fn len(&self) -> usize {
        self.unigrams.len() + self.bigrams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&mut self, gram: &str, provenance: Provenance) {
        if gram.contains(' ') {
            self.bigrams.insert(gram.to_string(), provenance);
        } else {
            self.unigrams.insert(gram.to_string(), provenance);
        }
    }

    /// Keyword hits in a filtered token stream: every unigram occurrence
    /// plus every adjacent bigram occurrence.
    pub fn hits(&self, tokens: &TokenStream) -> (usize, BTreeSet<String>) {
        let mut n = 0;
        let mut matched = BTreeSet::new();
        for t in &tokens.tokens {
            if self.unigrams.contains_key(t) {
                n += 1;
                matched.insert(t.clone());
            }
        }
        if !self.bigrams.is_empty() {
            for w in tokens.tokens.windows(2) {
                let g = format!("{} {}", w[0], w[1]);
                if self.bigrams.contains_key(&g) {
                    n += 1;
                    matched.insert(g);
                }
            }
        }
        (n, matched)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedLibrary {
    pub library: KeywordLibrary,
    pub warnings: Vec<String>,
}

/// Parse a curated library: one uni- or bigram per line, `#` starts a
/// comment. Entries that are not one or two valid non-stop-word tokens are
/// skipped with a warning.
pub fn load_library(text: &str, stopwords: &StopWords) -> Result<LoadedLibrary, OutageError> {
    let mut library = KeywordLibrary::default();
    let mut warnings = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let entry = raw.split('#').next().unwrap_or("").trim();
        if entry.is_empty() {
            continue;
        }
        let normalized = entry.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let kept = tokenize_filter(&normalized, stopwords).tokens;
        let valid = kept == split_words(&normalized)
            && kept.join(" ") == normalized
            && (1..=2).contains(&kept.len());
        if valid {
            library.insert(&normalized, Provenance::SeedFile);
        } else {
            warnings.push(format!("line {}: skipped `{entry}`", i + 1));
        }
    }
    if library.is_empty() {
        return Err(OutageError::NoValidEntries);
    }
    Ok(LoadedLibrary { library, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MineConfig {
    pub top_m: usize,
    /// Minimum share of seed items a candidate must appear in.
    pub min_seed_share: f64,
}

impl Default for MineConfig {
    fn default() -> Self {
        Self {
            top_m: 30,
            min_seed_share: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedKeyword {
    pub gram: String,
    pub lift: f64,
    pub seed_items: usize,
    pub corpus_items: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedLibrary {
    /// Candidates in rank order, unigrams then bigrams.
    pub unigrams: Vec<MinedKeyword>,
    pub bigrams: Vec<MinedKeyword>,
    pub library: KeywordLibrary,
}

fn doc_frequencies(docs: &[TokenStream], n: usize) -> HashMap<String, usize> {
    let mut df = HashMap::new();
    for d in docs {
        let grams: HashSet<String> = d.tokens.windows(n).map(|w| w.join(" ")).collect();
        for g in grams {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    df
}

/// Rank candidate keywords by how much more often they occur in seed items
/// than in the whole corpus.
///
/// lift = (seed_df / |seed|) / ((corpus_df + 1) / (|corpus| + 1)), using
/// per-item document frequencies. Candidates below `min_seed_share` of the
/// seed are not considered. Mined entries are for review only.
pub fn mine_keywords(
    seed: &[TokenStream],
    corpus: &[TokenStream],
    cfg: &MineConfig,
) -> Result<MinedLibrary, OutageError> {
    if seed.is_empty() {
        return Err(OutageError::EmptySeed);
    }
    let rank = |n: usize| -> Vec<MinedKeyword> {
        let seed_df = doc_frequencies(seed, n);
        let corpus_df = doc_frequencies(corpus, n);
        let seed_n = seed.len() as f64;
        let corpus_n = corpus.len() as f64;
        let min_support = (cfg.min_seed_share * seed_n).ceil().max(1.0) as usize;
        let mut out: Vec<MinedKeyword> = seed_df
            .into_iter()
            .filter(|(_, df)| *df >= min_support)
            .map(|(gram, df)| {
                let cdf = corpus_df.get(&gram).copied().unwrap_or(0);
                MinedKeyword {
                    lift: (df as f64 / seed_n) / ((cdf as f64 + 1.0) / (corpus_n + 1.0)),
                    gram,
                    seed_items: df,
                    corpus_items: cdf,
                }
            })
            .collect();
        out.sort_by(|a, b| {
            b.lift
                .total_cmp(&a.lift)
                .then(b.seed_items.cmp(&a.seed_items))
                .then(a.gram.cmp(&b.gram))
        });
        out.truncate(cfg.top_m);
        out
    };
    let unigrams = rank(1);
    let bigrams = rank(2);
    let mut library = KeywordLibrary::default();
    for k in unigrams.iter().chain(&bigrams) {
        library.insert(&k.gram, Provenance::Mined);
    }
    Ok(MinedLibrary {
        unigrams,
        bigrams,
        library,
    })
}

/// Candidate file for curation; loads with [`load_library`] once reviewed.
pub fn write_mined<W: Write>(mut w: W, mined: &MinedLibrary) -> std::io::Result<()> {
    writeln!(w, "# MINED keyword candidates, review before use")?;
    for k in mined.unigrams.iter().chain(&mined.bigrams) {
        writeln!(
            w,
            "{} # lift={:.3} seed_items={} corpus_items={}",
            k.gram, k.lift, k.seed_items, k.corpus_items
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "threshold")]
pub enum QualifyRule {
    /// negative > positive.
    NegativeDominant,
    /// negative ≥ threshold.
    StrongNegative(f64),
}

impl QualifyRule {
    pub fn is_negative(&self, s: &SentimentScore) -> bool {
        match *self {
            QualifyRule::NegativeDominant => s.negative > s.positive,
            QualifyRule::StrongNegative(tau) => s.negative >= tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QualifiedItem {
    pub id: String,
    pub created_at: i64,
    pub hits: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QualifiedThread {
    pub post_id: String,
    pub matched: BTreeSet<String>,
    pub items: Vec<QualifiedItem>,
}

/// Keep threads with at least one item that both mentions a library
/// keyword and scores negative. Items without a score are skipped.
pub fn qualify_threads(
    threads: &[Thread],
    library: &KeywordLibrary,
    scores: &HashMap<String, SentimentScore>,
    stopwords: &StopWords,
    rule: QualifyRule,
) -> Vec<QualifiedThread> {
    let mut out = Vec::new();
    for t in threads {
        let mut items = Vec::new();
        let mut matched = BTreeSet::new();
        let root_text = t.root.text();
        let all = std::iter::once((t.root.id.as_str(), t.root.created_at, root_text.as_str())).chain(
            t.comments()
                .into_iter()
                .map(|c| (c.id.as_str(), c.created_at, c.body.as_str())),
        );
        for (id, ts, text) in all {
            let Some(score) = scores.get(id) else {
                continue;
            };
            if !rule.is_negative(score) {
                continue;
            }
            let (hits, m) = library.hits(&tokenize_filter(text, stopwords));
            if hits == 0 {
                continue;
            }
            matched.extend(m);
            items.push(QualifiedItem {
                id: id.to_string(),
                created_at: ts,
                hits,
            });
        }
        if !items.is_empty() {
            out.push(QualifiedThread {
                post_id: t.root.id.clone(),
                matched,
                items,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutageSeries {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub counts: Vec<u64>,
    pub flagged: Vec<bool>,
}

impl OutageSeries {
    pub fn flagged_days(&self) -> Vec<NaiveDate> {
        days(self.start, self.end)
            .zip(&self.flagged)
            .filter(|(_, f)| **f)
            .map(|(d, _)| d)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["date", "count", "flagged"])?;
        for (i, d) in days(self.start, self.end).enumerate() {
            out.write_record([
                d.to_string(),
                self.counts[i].to_string(),
                self.flagged[i].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Sum keyword hits of qualifying items per UTC day.
pub fn keyword_day_series(
    qualified: &[QualifiedThread],
    start: NaiveDate,
    end: NaiveDate,
) -> OutageSeries {
    let n = day_span(start, end);
    let mut counts = vec![0u64; n];
    for it in qualified.iter().flat_map(|q| &q.items) {
        let d = utc_date(it.created_at);
        if d >= start && d <= end {
            counts[(d - start).num_days() as usize] += it.hits as u64;
        }
    }
    OutageSeries {
        start,
        end,
        counts,
        flagged: vec![false; n],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeParams {
    pub window_days: usize,
    pub z: f64,
    pub min_count: u64,
    /// Days of history needed before a day can be flagged.
    pub min_history: usize,
}

impl Default for SpikeParams {
    fn default() -> Self {
        Self {
            window_days: 28,
            z: 3.0,
            min_count: 5,
            min_history: 7,
        }
    }
}

/// Flag day d when count[d] ≥ min_count and count[d] exceeds the mean plus
/// z population standard deviations of the trailing window (d excluded).
pub fn flag_spikes(series: &OutageSeries, params: &SpikeParams) -> Result<OutageSeries, OutageError> {
    let n = series.counts.len();
    if n < 8 {
        return Err(OutageError::SeriesTooShort(n));
    }
    let mut flagged = vec![false; n];
    for (d, flag) in flagged.iter_mut().enumerate() {
        let from = d.saturating_sub(params.window_days);
        let history = &series.counts[from..d];
        if history.len() < params.min_history {
            continue;
        }
        let len = history.len() as f64;
        let mean = history.iter().map(|&c| c as f64).sum::<f64>() / len;
        let var = history
            .iter()
            .map(|&c| (c as f64 - mean).powi(2))
            .sum::<f64>()
            / len;
        let c = series.counts[d];
        *flag = c >= params.min_count && (c as f64) > mean + params.z * var.sqrt();
    }
    Ok(OutageSeries {
        flagged,
        ..series.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_threads, Comment, Post};
    use proptest::prelude::*;

    fn ts(words: &[&str]) -> TokenStream {
        TokenStream {
            tokens: words.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn post(id: &str, title: &str, at: i64) -> Post {
        Post {
            id: id.into(),
            created_at: at,
            title: title.into(),
            body: String::new(),
            upvotes: 1,
            comment_count: 0,
            urls: vec![],
            media_refs: vec![],
            removed: false,
            extra: Default::default(),
        }
    }

    fn comment(id: &str, post: &str, body: &str, at: i64) -> Comment {
        Comment {
            id: id.into(),
            parent_id: post.into(),
            post_id: post.into(),
            created_at: at,
            body: body.into(),
            upvotes: 0,
            removed: false,
            extra: Default::default(),
        }
    }

    fn score(p: f64, n: f64) -> SentimentScore {
        SentimentScore {
            positive: p,
            negative: n,
            neutral: 1.0 - p - n,
        }
    }

    fn lib(entries: &[&str]) -> KeywordLibrary {
        let mut l = KeywordLibrary::default();
        for e in entries {
            l.insert(e, Provenance::SeedFile);
        }
        l
    }

    #[test]
    fn library_file_parses() {
        let l = load_library("outage\ndown\n# comment\nno service\n", &StopWords::english()).unwrap();
        assert_eq!(
            l.library.unigrams.keys().collect::<Vec<_>>(),
            ["down", "outage"]
        );
        assert_eq!(l.library.bigrams.keys().collect::<Vec<_>>(), ["no service"]);
        assert!(l.warnings.is_empty());
    }

    #[test]
    fn stop_word_entry_is_skipped() {
        let l = load_library("outage\nTHE\n", &StopWords::english()).unwrap();
        assert_eq!(l.library.len(), 1);
        assert_eq!(l.warnings.len(), 1);
        assert!(l.warnings[0].contains("THE"));
    }

    #[test]
    fn empty_library_file_fails() {
        assert_eq!(
            load_library("", &StopWords::english()),
            Err(OutageError::NoValidEntries)
        );
        assert_eq!(
            load_library("# only comments\nthe\n", &StopWords::english()),
            Err(OutageError::NoValidEntries)
        );
    }

    #[test]
    fn mining_ranks_seed_specific_terms_first() {
        // "outage" in 9 of 10 seed items and 1% of the corpus; "dish" equally
        // common in both.
        let mut seed = Vec::new();
        for i in 0..10 {
            let mut w = vec!["dish"];
            if i < 9 {
                w.push("outage");
            }
            if i % 2 == 0 {
                w.push("weather");
            }
            seed.push(ts(&w));
        }
        let mut corpus = seed.clone();
        for i in 0..990 {
            let mut w = vec!["dish"];
            if i % 2 == 0 {
                w.push("weather");
            }
            if i < 1 {
                w.push("outage");
            }
            corpus.push(ts(&w));
        }
        let m = mine_keywords(&seed, &corpus, &MineConfig::default()).unwrap();
        assert_eq!(m.unigrams[0].gram, "outage");
        let dish = m.unigrams.iter().find(|k| k.gram == "dish").unwrap();
        assert!((dish.lift - 1.0).abs() < 0.01, "{}", dish.lift);
        assert!(m.unigrams[0].lift > 50.0);
        assert!(m.library.unigrams.values().all(|p| *p == Provenance::Mined));
    }

    #[test]
    fn mining_needs_seed() {
        assert_eq!(
            mine_keywords(&[], &[ts(&["x"])], &MineConfig::default()),
            Err(OutageError::EmptySeed)
        );
    }

    #[test]
    fn negative_keyword_item_qualifies() {
        let posts = vec![post("P", "weekend plans", 0)];
        let comments = vec![comment("c1", "P", "total outage again", 10)];
        let threads = build_threads(&posts, &comments).threads;
        let scores = HashMap::from([
            ("P".to_string(), score(0.1, 0.1)),
            ("c1".to_string(), score(0.1, 0.8)),
        ]);
        let q = qualify_threads(
            &threads,
            &lib(&["outage"]),
            &scores,
            &StopWords::english(),
            QualifyRule::NegativeDominant,
        );
        assert_eq!(q.len(), 1);
        assert_eq!(q[0].matched.iter().collect::<Vec<_>>(), ["outage"]);
    }

    #[test]
    fn positive_keyword_item_is_filtered() {
        let posts = vec![post("P", "outage resolved, so happy", 0)];
        let threads = build_threads(&posts, &[]).threads;
        let scores = HashMap::from([("P".to_string(), score(0.8, 0.1))]);
        let q = qualify_threads(
            &threads,
            &lib(&["outage"]),
            &scores,
            &StopWords::english(),
            QualifyRule::NegativeDominant,
        );
        assert!(q.is_empty());
    }

    #[test]
    fn negative_without_keywords_does_not_qualify() {
        let posts = vec![post("P", "terrible awful day", 0)];
        let threads = build_threads(&posts, &[]).threads;
        let scores = HashMap::from([("P".to_string(), score(0.0, 0.9))]);
        assert!(qualify_threads(
            &threads,
            &lib(&["outage"]),
            &scores,
            &StopWords::english(),
            QualifyRule::NegativeDominant
        )
        .is_empty());
    }

    #[test]
    fn bigrams_need_adjacency() {
        let l = lib(&["no service"]);
        assert_eq!(l.hits(&ts(&["no", "service", "no", "service"])).0, 2);
        assert_eq!(l.hits(&ts(&["no", "cell", "service"])).0, 0);
    }

    fn day(i: i64) -> i64 {
        crate::calendar::day_start(NaiveDate::from_ymd_opt(2022, 1, 1).unwrap()) + i * 86_400 + 60
    }

    #[test]
    fn day_series_sums_hits() {
        let q = vec![QualifiedThread {
            post_id: "P".into(),
            matched: BTreeSet::new(),
            items: vec![
                QualifiedItem { id: "a".into(), created_at: day(1), hits: 1 },
                QualifiedItem { id: "b".into(), created_at: day(1), hits: 2 },
                QualifiedItem { id: "c".into(), created_at: day(1), hits: 1 },
            ],
        }];
        let start = NaiveDate::from_ymd_opt(2022, 1, 1).unwrap();
        let s = keyword_day_series(&q, start, NaiveDate::from_ymd_opt(2022, 1, 3).unwrap());
        assert_eq!(s.counts, [0, 4, 0]);
        let empty = keyword_day_series(&[], start, NaiveDate::from_ymd_opt(2022, 1, 3).unwrap());
        assert_eq!(empty.counts, [0, 0, 0]);
    }

    fn series(counts: Vec<u64>) -> OutageSeries {
        let start = NaiveDate::from_ymd_opt(2022, 1, 1).unwrap();
        let n = counts.len();
        OutageSeries {
            start,
            end: start + chrono::Days::new(n as u64 - 1),
            flagged: vec![false; n],
            counts,
        }
    }

    #[test]
    fn spike_after_flat_baseline() {
        let mut c = vec![1; 27];
        c.push(40);
        let f = flag_spikes(&series(c), &SpikeParams::default()).unwrap();
        assert!(f.flagged[27]);
        assert_eq!(f.flagged.iter().filter(|x| **x).count(), 1);
    }

    #[test]
    fn uniform_series_never_flags() {
        let f = flag_spikes(&series(vec![10; 60]), &SpikeParams::default()).unwrap();
        assert!(f.flagged.iter().all(|x| !x));
    }

    #[test]
    fn min_count_blocks_small_spikes() {
        let mut c = vec![0; 20];
        c.push(4);
        let f = flag_spikes(&series(c), &SpikeParams::default()).unwrap();
        assert!(!f.flagged[20]);
    }

    #[test]
    fn short_series_rejected() {
        assert_eq!(
            flag_spikes(&series(vec![1; 7]), &SpikeParams::default()),
            Err(OutageError::SeriesTooShort(7))
        );
    }

    #[test]
    fn early_days_need_history() {
        let mut c = vec![0; 3];
        c.push(50);
        c.extend(vec![0; 10]);
        let f = flag_spikes(&series(c), &SpikeParams::default()).unwrap();
        assert!(!f.flagged[3]);
    }

    #[test]
    fn csv_has_flag_column() {
        let mut buf = Vec::new();
        let mut s = series(vec![1, 2]);
        s.flagged[1] = true;
        s.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "date,count,flagged\n2022-01-01,1,false\n2022-01-02,2,true\n"
        );
    }

    proptest! {
        #[test]
        fn constant_series_never_flag(v in 0u64..100, n in 8usize..90) {
            let f = flag_spikes(&series(vec![v; n]), &SpikeParams::default()).unwrap();
            prop_assert!(f.flagged.iter().all(|x| !x));
        }

        #[test]
        fn library_growth_is_monotone(
            bodies in proptest::collection::vec(
                proptest::collection::vec(prop_oneof![
                    Just("outage"), Just("down"), Just("dish"), Just("again"), Just("no"), Just("service"),
                ], 0..8),
                1..8),
            negs in proptest::collection::vec(0.0f64..1.0, 8),
        ) {
            let posts = vec![post("P", "", 0)];
            let comments: Vec<Comment> = bodies.iter().enumerate()
                .map(|(i, b)| comment(&format!("c{i}"), "P", &b.join(" "), day(i as i64)))
                .collect();
            let threads = build_threads(&posts, &comments).threads;
            let mut scores: HashMap<String, SentimentScore> = comments.iter().enumerate()
                .map(|(i, c)| (c.id.clone(), score((1.0 - negs[i]) / 2.0, negs[i] / 2.0 + 0.01)))
                .collect();
            scores.insert("P".into(), SentimentScore::NEUTRAL);
            let small = lib(&["outage"]);
            let big = lib(&["outage", "down", "no service"]);
            let stop = StopWords::english();
            let a = qualify_threads(&threads, &small, &scores, &stop, QualifyRule::NegativeDominant);
            let b = qualify_threads(&threads, &big, &scores, &stop, QualifyRule::NegativeDominant);
            prop_assert!(a.len() <= b.len());
            if !a.is_empty() { prop_assert!(!b.is_empty()); }
            let total: u64 = b.iter().flat_map(|q| &q.items).map(|i| i.hits as u64).sum();
            let start = NaiveDate::from_ymd_opt(2022, 1, 1).unwrap();
            let s = keyword_day_series(&b, start, start + chrono::Days::new(20));
            prop_assert_eq!(s.counts.iter().sum::<u64>(), total);
        }
    }
}
