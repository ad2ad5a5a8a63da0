//! Monthly popular posts (99th percentile of both upvotes and comments)
//! and the topic reports read alongside them.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::calendar::YearMonth;
use crate::corpus::{Post, Thread};
use crate::sentiment::StrongLabel;
use crate::textmine::{ngram_counts, tokenize_filter, word_cloud, StopWords, TokenStream};

pub const POPULARITY_PERCENTILE: f64 = 99.0;
pub const TOPIC_REPORT_SIZE: usize = 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PopularityError {
    #[error("percentile of an empty sample")]
    EmptyInput,
    #[error("percentile {0} outside [0, 100]")]
    BadPercentile(f64),
    #[error("month has no posts")]
    EmptyMonth,
}

/// Nearest-rank percentile: the ⌈p/100·n⌉-th smallest value (1-based),
/// the minimum for p = 0.
pub fn percentile(values: &[f64], p: f64) -> Result<f64, PopularityError> {
    if values.is_empty() {
        return Err(PopularityError::EmptyInput);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(PopularityError::BadPercentile(p));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((p * n as f64) / 100.0).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyPopularity {
    pub month: YearMonth,
    pub p99_upvotes: f64,
    pub p99_comments: f64,
    pub popular: Vec<String>,
    pub total_posts: usize,
}

/// Posts at or above the 99th percentile on both upvotes and comment
/// count, ordered by upvotes, comments (both descending), then id.
pub fn popular_posts(month: YearMonth, posts: &[&Post]) -> Result<MonthlyPopularity, PopularityError> {
    if posts.is_empty() {
        return Err(PopularityError::EmptyMonth);
    }
    let ups: Vec<f64> = posts.iter().map(|p| p.upvotes as f64).collect();
    let coms: Vec<f64> = posts.iter().map(|p| p.comment_count as f64).collect();
    let p99_upvotes = percentile(&ups, POPULARITY_PERCENTILE)?;
    let p99_comments = percentile(&coms, POPULARITY_PERCENTILE)?;
    let mut hits: Vec<&Post> = posts
        .iter()
        .copied()
        .filter(|p| p.upvotes as f64 >= p99_upvotes && p.comment_count as f64 >= p99_comments)
        .collect();
    hits.sort_by(|a, b| {
        b.upvotes
            .cmp(&a.upvotes)
            .then(b.comment_count.cmp(&a.comment_count))
            .then(a.id.cmp(&b.id))
    });
    Ok(MonthlyPopularity {
        month,
        p99_upvotes,
        p99_comments,
        popular: hits.into_iter().map(|p| p.id.clone()).collect(),
        total_posts: posts.len(),
    })
}

/// Group posts by calendar month of creation and run [`popular_posts`] on
/// each non-empty month.
pub fn monthly_popularity(posts: &[Post]) -> Vec<MonthlyPopularity> {
    let mut by_month: std::collections::BTreeMap<YearMonth, Vec<&Post>> = Default::default();
    for p in posts {
        by_month.entry(YearMonth::of_timestamp(p.created_at)).or_default().push(p);
    }
    by_month
        .into_iter()
        .filter_map(|(m, ps)| popular_posts(m, &ps).ok())
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentimentSummary {
    pub strong_pos: usize,
    pub strong_neg: usize,
    pub none: usize,
    pub unscored: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicReport {
    pub post_id: String,
    pub documents: usize,
    pub unigrams: Vec<(String, u64)>,
    pub bigrams: Vec<(String, u64)>,
    pub sentiment: SentimentSummary,
}

/// Uni- and bigram rankings over the post (title and body) and every
/// comment in its thread, plus strong-label counts for the same items.
pub fn topic_report(
    thread: &Thread,
    stopwords: &StopWords,
    labels: &HashMap<String, StrongLabel>,
) -> TopicReport {
    let post = &thread.root;
    let comments = thread.comments();
    let mut docs: Vec<TokenStream> = Vec::with_capacity(comments.len() + 1);
    docs.push(tokenize_filter(&post.text(), stopwords));
    docs.extend(comments.iter().map(|c| tokenize_filter(&c.body, stopwords)));

    let mut sentiment = SentimentSummary::default();
    let ids = std::iter::once(post.id.as_str()).chain(comments.iter().map(|c| c.id.as_str()));
    for id in ids {
        match labels.get(id) {
            Some(StrongLabel::Positive) => sentiment.strong_pos += 1,
            Some(StrongLabel::Negative) => sentiment.strong_neg += 1,
            Some(StrongLabel::NotStrong) => sentiment.none += 1,
            None => sentiment.unscored += 1,
        }
    }

    TopicReport {
        post_id: post.id.clone(),
        documents: docs.len(),
        unigrams: word_cloud(&ngram_counts(&docs, 1), TOPIC_REPORT_SIZE),
        bigrams: word_cloud(&ngram_counts(&docs, 2), TOPIC_REPORT_SIZE),
        sentiment,
    }
}
