//! Day-binned strong-sentiment counts and greedy peak selection.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::{day_span, days, utc_date};
use crate::sentiment::StrongLabel;
use crate::textmine::{
    ngram_counts, query_for, tokenize_filter, word_cloud, EventQuery, StopWords, TokenStream,
};

pub const DEFAULT_PEAK_COUNT: usize = 3;
pub const DEFAULT_MIN_SEPARATION_DAYS: i64 = 2;
pub const ANNOTATION_CLOUD_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DailySeries {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub pos_counts: Vec<u64>,
    pub neg_counts: Vec<u64>,
}

impl DailySeries {
    pub fn zeros(start: NaiveDate, end: NaiveDate) -> Self {
        let n = day_span(start, end);
        Self {
            start,
            end,
            pos_counts: vec![0; n],
            neg_counts: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.pos_counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos_counts.is_empty()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        (date >= self.start && date <= self.end).then(|| (date - self.start).num_days() as usize)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["date", "strong_pos", "strong_neg"])?;
        for (i, d) in days(self.start, self.end).enumerate() {
            out.write_record([
                d.to_string(),
                self.pos_counts[i].to_string(),
                self.neg_counts[i].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Count strong labels per UTC day over `[start, end]`; items outside the
/// window are ignored.
pub fn daily_strong_counts<I>(items: I, start: NaiveDate, end: NaiveDate) -> DailySeries
where
    I: IntoIterator<Item = (i64, StrongLabel)>,
{
    let mut s = DailySeries::zeros(start, end);
    for (ts, label) in items {
        let Some(i) = s.index_of(utc_date(ts)) else {
            continue;
        };
        match label {
            StrongLabel::Positive => s.pos_counts[i] += 1,
            StrongLabel::Negative => s.neg_counts[i] += 1,
            StrongLabel::NotStrong => {}
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PeakPolarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakAnnotation {
    pub cloud: Vec<(String, u64)>,
    pub query: EventQuery,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Peak {
    pub date: NaiveDate,
    pub polarity: PeakPolarity,
    pub count: u64,
    pub annotation: Option<PeakAnnotation>,
}

/// Greedy selection over both polarities: highest count first (earlier
/// date, then positive, on ties), skipping any day closer than
/// `min_separation_days` to an accepted peak.
pub fn top_peaks(series: &DailySeries, k: usize, min_separation_days: i64) -> Vec<Peak> {
    let mut cands: Vec<(u64, usize, PeakPolarity)> = Vec::new();
    for i in 0..series.len() {
        if series.pos_counts[i] > 0 {
            cands.push((series.pos_counts[i], i, PeakPolarity::Positive));
        }
        if series.neg_counts[i] > 0 {
            cands.push((series.neg_counts[i], i, PeakPolarity::Negative));
        }
    }
    cands.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut accepted: Vec<(usize, PeakPolarity, u64)> = Vec::new();
    for (count, day, polarity) in cands {
        if accepted.len() >= k {
            break;
        }
        let clear = accepted
            .iter()
            .all(|(d, _, _)| (day as i64 - *d as i64).abs() >= min_separation_days);
        if clear {
            accepted.push((day, polarity, count));
        }
    }
    accepted
        .into_iter()
        .map(|(day, polarity, count)| Peak {
            date: series.start + chrono::Days::new(day as u64),
            polarity,
            count,
            annotation: None,
        })
        .collect()
}

/// Texts of all posts and comments, bucketed by UTC day.
#[derive(Debug, Clone, Default)]
pub struct DayTexts(BTreeMap<NaiveDate, Vec<String>>);

impl DayTexts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, ts: i64, text: impl Into<String>) {
        self.0.entry(utc_date(ts)).or_default().push(text.into());
    }

    pub fn get(&self, date: NaiveDate) -> &[String] {
        self.0.get(&date).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Attach each peak's day word cloud (top 10 unigrams) and search query.
/// Days where nothing survives filtering keep the peak without annotation.
pub fn annotate_peaks(
    peaks: Vec<Peak>,
    texts: &DayTexts,
    stopwords: &StopWords,
    brand: &str,
) -> Vec<Peak> {
    peaks
        .into_iter()
        .map(|mut p| {
            let streams: Vec<TokenStream> = texts
                .get(p.date)
                .iter()
                .map(|t| tokenize_filter(t, stopwords))
                .collect();
            let cloud = word_cloud(&ngram_counts(&streams, 1), ANNOTATION_CLOUD_SIZE);
            p.annotation = (!cloud.is_empty()).then(|| {
                let keywords = cloud.iter().take(3).map(|(t, _)| t.clone()).collect();
                PeakAnnotation {
                    query: query_for(p.date, keywords, brand),
                    cloud,
                }
            });
            p
        })
        .collect()
}

/// Flat record written to the peaks JSON artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakRecord {
    pub date: NaiveDate,
    pub polarity: PeakPolarity,
    pub count: u64,
    pub keywords: Vec<String>,
    pub query: Option<String>,
}

impl From<&Peak> for PeakRecord {
    fn from(p: &Peak) -> Self {
        Self {
            date: p.date,
            polarity: p.polarity,
            count: p.count,
            keywords: p
                .annotation
                .as_ref()
                .map(|a| a.cloud.iter().map(|(t, _)| t.clone()).collect())
                .unwrap_or_default(),
            query: p.annotation.as_ref().map(|a| a.query.query.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::day_start;
    use proptest::prelude::*;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 1, day).unwrap()
    }

    fn series(pos: &[u64], neg: &[u64]) -> DailySeries {
        DailySeries {
            start: d(1),
            end: d(pos.len() as u32),
            pos_counts: pos.to_vec(),
            neg_counts: neg.to_vec(),
        }
    }

    fn picks(p: &[Peak]) -> Vec<(NaiveDate, PeakPolarity, u64)> {
        p.iter().map(|x| (x.date, x.polarity, x.count)).collect()
    }

    #[test]
    fn counts_labels_per_day() {
        let t = day_start(d(2)) + 3600;
        let items = vec![
            (t, StrongLabel::Positive),
            (t + 10, StrongLabel::Positive),
            (t + 20, StrongLabel::Negative),
            (t + 30, StrongLabel::NotStrong),
        ];
        let s = daily_strong_counts(items, d(1), d(3));
        assert_eq!(s.pos_counts, [0, 2, 0]);
        assert_eq!(s.neg_counts, [0, 1, 0]);
    }

    #[test]
    fn empty_window_is_zero_filled() {
        let s = daily_strong_counts(Vec::new(), d(1), d(10));
        assert_eq!(s.pos_counts, vec![0; 10]);
        assert_eq!(s.neg_counts, vec![0; 10]);
    }

    #[test]
    fn separation_two_rejects_neighbours() {
        let s = series(&[0, 5, 0, 3], &[0, 0, 9, 0]);
        let p = top_peaks(&s, 3, 2);
        assert_eq!(picks(&p), vec![(d(3), PeakPolarity::Negative, 9)]);
    }

    #[test]
    fn separation_one_accepts_adjacent_days() {
        let s = series(&[0, 5, 0, 3], &[0, 0, 9, 0]);
        let p = top_peaks(&s, 3, 1);
        assert_eq!(
            picks(&p),
            vec![
                (d(3), PeakPolarity::Negative, 9),
                (d(2), PeakPolarity::Positive, 5),
                (d(4), PeakPolarity::Positive, 3),
            ]
        );
    }

    #[test]
    fn zero_series_has_no_peaks() {
        assert!(top_peaks(&series(&[0, 0], &[0, 0]), 3, 2).is_empty());
    }

    #[test]
    fn ties_prefer_earlier_then_positive() {
        let s = series(&[4, 0, 4], &[4, 0, 0]);
        let p = top_peaks(&s, 5, 0);
        assert_eq!(
            picks(&p),
            vec![
                (d(1), PeakPolarity::Positive, 4),
                (d(1), PeakPolarity::Negative, 4),
                (d(3), PeakPolarity::Positive, 4),
            ]
        );
    }

    #[test]
    fn annotation_uses_day_texts() {
        let mut texts = DayTexts::new();
        let t = day_start(d(2));
        texts.push(t, "preorder is open, preorder now");
        texts.push(t + 60, "preorder placed, dish soon");
        texts.push(day_start(d(3)), "unrelated weather talk");
        let peaks = vec![
            Peak {
                date: d(2),
                polarity: PeakPolarity::Positive,
                count: 3,
                annotation: None,
            },
            Peak {
                date: d(5),
                polarity: PeakPolarity::Negative,
                count: 1,
                annotation: None,
            },
        ];
        let out = annotate_peaks(peaks, &texts, &StopWords::english(), "Starlink");
        let a = out[0].annotation.as_ref().unwrap();
        assert_eq!(a.query.keywords[0], "preorder");
        assert_eq!(a.query.query, "preorder dish open Starlink 2021-01-02");
        assert!(out[1].annotation.is_none());
    }

    #[test]
    fn series_csv_header() {
        let mut buf = Vec::new();
        series(&[1, 0], &[0, 2]).write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "date,strong_pos,strong_neg\n2021-01-01,1,0\n2021-01-02,0,2\n"
        );
    }

    fn arb_series() -> impl Strategy<Value = DailySeries> {
        (1usize..30).prop_flat_map(|n| {
            (
                proptest::collection::vec(0u64..20, n),
                proptest::collection::vec(0u64..20, n),
            )
                .prop_map(|(p, q)| series(&p, &q))
        })
    }

    proptest! {
        #[test]
        fn counts_non_increasing(s in arb_series(), k in 1usize..10, sep in 0i64..4) {
            let p = top_peaks(&s, k, sep);
            prop_assert!(p.len() <= k);
            prop_assert!(p.windows(2).all(|w| w[0].count >= w[1].count));
            prop_assert!(p.iter().all(|x| x.count > 0));
        }

        #[test]
        fn no_separation_returns_every_nonzero_day(s in arb_series()) {
            let p = top_peaks(&s, usize::MAX, 0);
            let nonzero = s.pos_counts.iter().chain(&s.neg_counts).filter(|c| **c > 0).count();
            prop_assert_eq!(p.len(), nonzero);
            let mut keys: Vec<_> = p.iter().map(|x| (x.date, x.polarity)).collect();
            keys.sort();
            keys.dedup();
            prop_assert_eq!(keys.len(), nonzero);
        }

        #[test]
        fn scale_invariant(s in arb_series(), k in 1usize..6, sep in 0i64..4, c in 1u64..7) {
            let mut scaled = s.clone();
            scaled.pos_counts.iter_mut().for_each(|v| *v *= c);
            scaled.neg_counts.iter_mut().for_each(|v| *v *= c);
            let a: Vec<_> = top_peaks(&s, k, sep).iter().map(|x| (x.date, x.polarity)).collect();
            let b: Vec<_> = top_peaks(&scaled, k, sep).iter().map(|x| (x.date, x.polarity)).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn series_totals_match_label_counts(labels in proptest::collection::vec((0i64..10, 0u8..3), 0..60)) {
            let items: Vec<(i64, StrongLabel)> = labels.iter().map(|(day, l)| {
                let label = match l { 0 => StrongLabel::Positive, 1 => StrongLabel::Negative, _ => StrongLabel::NotStrong };
                (day_start(d(1)) + day * 86_400 + 7, label)
            }).collect();
            let s = daily_strong_counts(items.clone(), d(1), d(10));
            let sp = items.iter().filter(|x| x.1 == StrongLabel::Positive).count() as u64;
            let sn = items.iter().filter(|x| x.1 == StrongLabel::Negative).count() as u64;
            prop_assert_eq!(s.pos_counts.iter().sum::<u64>(), sp);
            prop_assert_eq!(s.neg_counts.iter().sum::<u64>(), sn);
        }
    }
}
