//! Command runner for the orbitlens pipeline.
//!
//! Every command recomputes what it depends on in memory and writes only
//! its own artifacts, so `report` produces the same files as running the
//! individual commands one after another.

pub mod config;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, SecondsFormat, Utc};
use serde::Serialize;

use orbitlens::calendar::{utc_date, YearMonth};
use orbitlens::clients::{
    content_hash, Cache, ClientError, OcrFixtureDir, OcrSource, RemoteOcr, RemoteSentiment, ReplayProvider,
    SystemClock, UreqTransport,
};
use orbitlens::corpus::{
    build_threads, clean, load_comments, load_posts, weekly_activity, write_weekly_csv, CleanConfig, CleanReport,
    Comment, LoadOptions, Post, ThreadSet, ThreadSummary,
};
use orbitlens::fixture::{generate_fixture, FixtureSpec, OUTAGE_KEYWORDS};
use orbitlens::outage::{
    flag_spikes, keyword_day_series, load_library, mine_keywords, qualify_threads, write_mined, KeywordLibrary,
};
use orbitlens::peaks::{annotate_peaks, daily_strong_counts, top_peaks, DayTexts, PeakRecord};
use orbitlens::popularity::{monthly_popularity, topic_report, MonthlyPopularity, TopicReport};
use orbitlens::sentiment::{
    classify_strong, pos_score, score_batch, write_scored, ItemKind, Lexicon, PosScore, ScoredItem,
    SentimentProvider, SentimentScore, StrongLabel,
};
use orbitlens::speedtest::{extract, filter_false_positives, report_row, write_reports_csv, SpeedTestReport, REPORT_CSV_HEADER};
use orbitlens::textmine::{tokenize_filter, StopWords, TokenStream};
use orbitlens::trends::{
    attach_pos, attach_subsamples, join_annotations, monthly_median_series, read_launches, read_users,
    trend_svg, write_trend_csv, AnnotationTable, MonthlyPoint,
};

pub use config::{ConfigError, Needs, RunConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ERRORS_FILE: &str = "errors.json";
pub const FIXTURE_CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Ingest,
    Sentiment,
    Peaks,
    Outages,
    Popular,
    Speedtest,
    Trends,
    Report,
}

impl Command {
    pub const STAGES: [Command; 7] = [
        Command::Ingest,
        Command::Sentiment,
        Command::Peaks,
        Command::Outages,
        Command::Popular,
        Command::Speedtest,
        Command::Trends,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Sentiment => "sentiment",
            Command::Peaks => "peaks",
            Command::Outages => "outages",
            Command::Popular => "popular",
            Command::Speedtest => "speedtest",
            Command::Trends => "trends",
            Command::Report => "report",
        }
    }

    fn needs(self) -> Needs {
        Needs {
            ocr: matches!(self, Command::Speedtest | Command::Trends | Command::Report),
            annotations: matches!(self, Command::Trends | Command::Report),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("{0}")]
    Fatal(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        2
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

/// A per-item failure; the run continues and exits 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ItemFailure {
    pub stage: String,
    pub item: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub artifacts: BTreeMap<String, String>,
    pub failures: Vec<ItemFailure>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            1
        }
    }
}

/// Writes files under the output directory and remembers their hashes.
struct Artifacts {
    dir: PathBuf,
    written: BTreeMap<String, String>,
}

impl Artifacts {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), RunError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(io_err(path.display().to_string()))?;
        self.written.insert(name.to_string(), content_hash(bytes));
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| RunError::Fatal(e.to_string()))?;
        bytes.push(b'\n');
        self.put(name, &bytes)
    }

    fn with<F>(&mut self, name: &str, f: F) -> Result<(), RunError>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<(), Box<dyn std::error::Error>>,
    {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| RunError::Fatal(format!("{name}: {e}")))?;
        self.put(name, &buf)
    }
}

#[derive(Debug, Clone, Serialize)]
struct IngestSummary {
    loaded_posts: usize,
    loaded_comments: usize,
    malformed_lines: usize,
    cleaning: CleanReport,
    threads: ThreadSummary,
}

struct Corpus {
    posts: Vec<Post>,
    comments: Vec<Comment>,
    threads: ThreadSet,
    summary: IngestSummary,
    window: (NaiveDate, NaiveDate),
}

struct Scores {
    items: Vec<ScoredItem>,
    by_id: HashMap<String, SentimentScore>,
    labels: HashMap<String, StrongLabel>,
}

struct SpeedResults {
    kept: Vec<SpeedTestReport>,
    rejected: Vec<(SpeedTestReport, String)>,
    summary: SpeedSummary,
    /// Report source id to index of the post that shared it.
    post_of: HashMap<String, usize>,
}

#[derive(Debug, Clone, Default, Serialize)]
struct SpeedSummary {
    posts_with_media: usize,
    documents: usize,
    unreadable: usize,
    extracted: usize,
    kept: usize,
    rejected: BTreeMap<String, usize>,
    warnings: Vec<String>,
}

/// Lazily computed pipeline stages over one configuration.
struct Pipeline<'c> {
    cfg: &'c RunConfig,
    stopwords: StopWords,
    corpus: Option<Corpus>,
    scores: Option<Scores>,
    speed: Option<SpeedResults>,
    failures: Vec<ItemFailure>,
}

impl<'c> Pipeline<'c> {
    fn new(cfg: &'c RunConfig) -> Result<Self, RunError> {
        let stopwords = match &cfg.stopwords {
            Some(p) => StopWords::from_lines(&read(p)?),
            None => StopWords::english(),
        };
        Ok(Self {
            cfg,
            stopwords,
            corpus: None,
            scores: None,
            speed: None,
            failures: Vec::new(),
        })
    }

    fn fail(&mut self, stage: &str, item: impl Into<String>, message: impl Into<String>) {
        self.failures.push(ItemFailure {
            stage: stage.to_string(),
            item: item.into(),
            message: message.into(),
        });
    }

    fn corpus(&mut self) -> Result<&Corpus, RunError> {
        if self.corpus.is_none() {
            let c = self.load_corpus()?;
            self.corpus = Some(c);
        }
        Ok(self.corpus.as_ref().expect("loaded"))
    }

    fn load_corpus(&mut self) -> Result<Corpus, RunError> {
        let opts = LoadOptions {
            window: self
                .cfg
                .window
                .map(|w| (orbitlens::calendar::day_start(w.start), orbitlens::calendar::day_start(w.end) + 86_399)),
        };
        let open = |p: &Path| {
            fs::File::open(p)
                .map(io::BufReader::new)
                .map_err(io_err(p.display().to_string()))
        };
        let posts = load_posts(open(&self.cfg.posts)?, &opts).map_err(io_err("posts"))?;
        let comments = load_comments(open(&self.cfg.comments)?, &opts).map_err(io_err("comments"))?;
        let malformed = posts.errors.len() + comments.errors.len();
        for e in posts.errors.iter().chain(&comments.errors) {
            self.fail("ingest", format!("line {}", e.line), e.to_string());
        }
        let (loaded_posts, loaded_comments) = (posts.records.len(), comments.records.len());
        let cleaned = clean(posts.records, comments.records, &CleanConfig::default());
        let mut posts = cleaned.posts;
        let mut comments = cleaned.comments;
        posts.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        comments.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        let threads = build_threads(&posts, &comments);
        let window = match self.cfg.window {
            Some(w) => (w.start, w.end),
            None => {
                let first = posts.first().ok_or_else(|| RunError::Fatal("no posts survive cleaning".into()))?;
                let last = posts.last().expect("non-empty");
                (utc_date(first.created_at), utc_date(last.created_at))
            }
        };
        Ok(Corpus {
            summary: IngestSummary {
                loaded_posts,
                loaded_comments,
                malformed_lines: malformed,
                cleaning: cleaned.report,
                threads: threads.summary.clone(),
            },
            posts,
            comments,
            threads,
            window,
        })
    }

    fn scores(&mut self) -> Result<&Scores, RunError> {
        if self.scores.is_none() {
            self.corpus()?;
            let s = self.score_corpus()?;
            self.scores = Some(s);
        }
        Ok(self.scores.as_ref().expect("scored"))
    }

    fn provider(&self) -> Result<Box<dyn SentimentProvider>, RunError> {
        use config::SentimentKind;
        let s = &self.cfg.sentiment;
        Ok(match s.provider {
            SentimentKind::Lexicon => Box::new(match &s.lexicon {
                Some(p) => Lexicon::from_csv(&read(p)?)
                    .map_err(|e| ConfigError::new("sentiment.lexicon", e.to_string()))?,
                None => Lexicon::builtin(),
            }),
            SentimentKind::Replay => Box::new(
                ReplayProvider::open(s.replay_dir.as_ref().expect("validated"))
                    .map_err(|e| ConfigError::new("sentiment.replay_dir", e.to_string()))?,
            ),
            SentimentKind::Remote => Box::new(
                RemoteSentiment::new(
                    "remote",
                    s.remote.clone().expect("validated"),
                    Box::new(UreqTransport::default()),
                    Box::new(SystemClock::default()),
                )
                .map_err(|e| ConfigError::new("sentiment.remote", e.to_string()))?,
            ),
        })
    }

    fn score_corpus(&mut self) -> Result<Scores, RunError> {
        let provider = self.provider()?;
        let corpus = self.corpus.as_ref().expect("loaded");
        let mut entries: Vec<(String, ItemKind, String)> = corpus
            .posts
            .iter()
            .map(|p| (p.id.clone(), ItemKind::Post, p.text()))
            .collect();
        entries.extend(
            corpus
                .comments
                .iter()
                .map(|c| (c.id.clone(), ItemKind::Comment, c.body.clone())),
        );
        let texts: Vec<&str> = entries.iter().map(|(_, _, t)| t.as_str()).collect();
        let batch = match &self.cfg.sentiment.record_dir {
            Some(dir) => {
                let cache = Cache::open(dir).map_err(io_err(dir.display().to_string()))?;
                let recording = orbitlens::clients::Recording {
                    inner: provider.as_ref(),
                    cache,
                    stored_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
                };
                score_batch(&texts, &recording)
            }
            None => score_batch(&texts, provider.as_ref()),
        };
        let tau = self.cfg.thresholds.tau;
        let mut out = Scores {
            items: Vec::with_capacity(entries.len()),
            by_id: HashMap::with_capacity(entries.len()),
            labels: HashMap::with_capacity(entries.len()),
        };
        for e in &batch.errors {
            let id = entries[e.index].0.clone();
            self.fail("sentiment", id, e.message.clone());
        }
        for ((id, kind, text), score) in entries.into_iter().zip(batch.scores) {
            let Some(score) = score else {
                continue;
            };
            let label = classify_strong(&score, tau).map_err(|e| RunError::Fatal(e.to_string()))?;
            out.items.push(ScoredItem {
                id: id.clone(),
                kind,
                hash: content_hash(&text),
                provider: provider.id().to_string(),
                positive: score.positive,
                negative: score.negative,
                neutral: score.neutral,
                label,
            });
            out.by_id.insert(id.clone(), score);
            out.labels.insert(id, label);
        }
        Ok(out)
    }

    fn ocr_source(&self) -> Result<Box<dyn OcrSource>, RunError> {
        use config::OcrKind;
        let o = &self.cfg.ocr;
        Ok(match o.source {
            OcrKind::Fixture => Box::new(OcrFixtureDir {
                dir: o.dir.clone().expect("validated"),
            }),
            OcrKind::Replay => Box::new(
                ReplayProvider::open(o.dir.as_ref().expect("validated"))
                    .map_err(|e| ConfigError::new("ocr.dir", e.to_string()))?,
            ),
            OcrKind::Remote => Box::new(
                RemoteOcr::new(
                    "remote-ocr",
                    o.remote.clone().expect("validated"),
                    Box::new(UreqTransport::default()),
                    Box::new(SystemClock::default()),
                )
                .map_err(|e| ConfigError::new("ocr.remote", e.to_string()))?,
            ),
        })
    }

    fn speed(&mut self) -> Result<&SpeedResults, RunError> {
        if self.speed.is_none() {
            self.corpus()?;
            let s = self.run_speedtests()?;
            self.speed = Some(s);
        }
        Ok(self.speed.as_ref().expect("extracted"))
    }

    fn run_speedtests(&mut self) -> Result<SpeedResults, RunError> {
        let source = self.ocr_source()?;
        let corpus = self.corpus.as_ref().expect("loaded");
        let mut summary = SpeedSummary::default();
        let mut reports = Vec::new();
        let mut post_of = HashMap::new();
        let mut failures = Vec::new();
        for (i, post) in corpus.posts.iter().enumerate() {
            if post.media_refs.is_empty() {
                continue;
            }
            summary.posts_with_media += 1;
            for media in &post.media_refs {
                let doc = match source.document(media) {
                    Ok(d) => d,
                    Err(ClientError::FixtureMiss(_)) => {
                        summary.unreadable += 1;
                        failures.push((media.clone(), "no OCR layout for image".to_string()));
                        continue;
                    }
                    Err(e) => {
                        summary.unreadable += 1;
                        failures.push((media.clone(), e.to_string()));
                        continue;
                    }
                };
                summary.documents += 1;
                match extract(&doc, &self.cfg.labels) {
                    Ok(x) => {
                        summary
                            .warnings
                            .extend(x.warnings.into_iter().map(|w| format!("{}: {w}", doc.source_id)));
                        for r in x.reports {
                            post_of.insert(r.source_id.clone(), i);
                            reports.push(r);
                        }
                    }
                    Err(e) => failures.push((doc.source_id.clone(), e.to_string())),
                }
            }
        }
        self.failures.extend(failures.into_iter().map(|(item, message)| ItemFailure {
            stage: "speedtest".to_string(),
            item,
            message,
        }));
        summary.extracted = reports.len();
        let texts: HashMap<String, String> = post_of
            .iter()
            .map(|(id, i)| (id.clone(), corpus.posts[*i].text()))
            .collect();
        let outcome = filter_false_positives(
            reports,
            &self.cfg.thresholds.bounds,
            self.cfg.provider_filter.as_deref(),
            |r| texts.get(&r.source_id).map(String::as_str),
        );
        summary.kept = outcome.kept.len();
        let rejected: Vec<(SpeedTestReport, String)> = outcome
            .rejected
            .into_iter()
            .map(|(r, why)| (r, why.to_string()))
            .collect();
        for (_, why) in &rejected {
            let key = why.split_whitespace().next().unwrap_or("other").to_string();
            *summary.rejected.entry(key).or_default() += 1;
        }
        Ok(SpeedResults {
            kept: outcome.kept,
            rejected,
            summary,
            post_of,
        })
    }

    fn library(&self) -> Result<KeywordLibrary, RunError> {
        let text = match &self.cfg.keywords {
            Some(p) => read(p)?,
            None => OUTAGE_KEYWORDS.join("\n"),
        };
        let loaded = load_library(&text, &self.stopwords).map_err(|e| ConfigError::new("keywords", e.to_string()))?;
        for w in &loaded.warnings {
            log::warn!("keyword library {w}");
        }
        Ok(loaded.library)
    }

    fn months(&self) -> Result<(YearMonth, YearMonth), RunError> {
        let (a, b) = self.corpus.as_ref().expect("loaded").window;
        Ok((YearMonth::of_date(a), YearMonth::of_date(b)))
    }
}

fn read(path: &Path) -> Result<String, RunError> {
    fs::read_to_string(path).map_err(io_err(path.display().to_string()))
}

fn write_stage(p: &mut Pipeline, stage: Command, out: &mut Artifacts) -> Result<(), RunError> {
    match stage {
        Command::Ingest => {
            let c = p.corpus()?;
            let weekly = weekly_activity(&c.posts, Some(c.window));
            let summary = c.summary.clone();
            out.json("ingest_summary.json", &summary)?;
            out.with("weekly_activity.csv", |b| Ok(write_weekly_csv(b, &weekly)?))?;
        }
        Command::Sentiment => {
            p.scores()?;
            let s = p.scores.as_ref().expect("scored");
            out.with("scored.jsonl", |b| Ok(write_scored(b, &s.items)?))?;
            let c = p.corpus.as_ref().expect("loaded");
            let mut by_month: BTreeMap<YearMonth, Vec<StrongLabel>> = BTreeMap::new();
            for post in &c.posts {
                if let Some(l) = s.labels.get(&post.id) {
                    by_month.entry(YearMonth::of_timestamp(post.created_at)).or_default().push(*l);
                }
            }
            let rows: Vec<PosScore> = by_month.into_iter().map(|(m, ls)| pos_score(m, ls)).collect();
            out.with("sentiment_monthly.csv", |b| write_pos_csv(b, &rows))?;
        }
        Command::Peaks => {
            p.scores()?;
            let c = p.corpus.as_ref().expect("loaded");
            let s = p.scores.as_ref().expect("scored");
            let t = &p.cfg.thresholds;
            let comments = c.comments.iter().filter(|_| t.peaks_include_comments);
            let labels = c
                .posts
                .iter()
                .map(|x| (&x.id, x.created_at))
                .chain(comments.map(|x| (&x.id, x.created_at)))
                .filter_map(|(id, ts)| s.labels.get(id).map(|l| (ts, *l)));
            let series = daily_strong_counts(labels, c.window.0, c.window.1);
            let peaks = top_peaks(&series, t.peak_k, t.peak_separation_days);
            let mut texts = DayTexts::new();
            for post in &c.posts {
                texts.push(post.created_at, post.text());
            }
            for cm in &c.comments {
                texts.push(cm.created_at, cm.body.clone());
            }
            let peaks = annotate_peaks(peaks, &texts, &p.stopwords, &p.cfg.brand);
            let records: Vec<PeakRecord> = peaks.iter().map(PeakRecord::from).collect();
            out.with("daily_strong.csv", |b| Ok(series.write_csv(b)?))?;
            out.json("peaks.json", &records)?;
        }
        Command::Outages => {
            p.scores()?;
            let library = p.library()?;
            let c = p.corpus.as_ref().expect("loaded");
            let s = p.scores.as_ref().expect("scored");
            let t = &p.cfg.thresholds;
            let qualified = qualify_threads(&c.threads.threads, &library, &s.by_id, &p.stopwords, t.qualify);
            let series = keyword_day_series(&qualified, c.window.0, c.window.1);
            let flagged = flag_spikes(&series, &t.spike).map_err(|e| RunError::Fatal(e.to_string()))?;
            let texts: HashMap<&str, String> = c
                .posts
                .iter()
                .map(|x| (x.id.as_str(), x.text()))
                .chain(c.comments.iter().map(|x| (x.id.as_str(), x.body.clone())))
                .collect();
            let seed: Vec<TokenStream> = qualified
                .iter()
                .flat_map(|q| &q.items)
                .filter_map(|it| texts.get(it.id.as_str()))
                .map(|t| tokenize_filter(t, &p.stopwords))
                .collect();
            let mut all: Vec<(&str, &String)> = texts.iter().map(|(k, v)| (*k, v)).collect();
            all.sort();
            let corpus_streams: Vec<TokenStream> =
                all.iter().map(|(_, t)| tokenize_filter(t, &p.stopwords)).collect();
            let summary = OutageSummary {
                rule: t.qualify,
                library: library
                    .unigrams
                    .keys()
                    .chain(library.bigrams.keys())
                    .cloned()
                    .collect(),
                qualified_threads: qualified.len(),
                qualified_items: qualified.iter().map(|q| q.items.len()).sum(),
                flagged_days: flagged.flagged_days(),
            };
            out.with("outage_series.csv", |b| Ok(flagged.write_csv(b)?))?;
            out.json("outages.json", &summary)?;
            match mine_keywords(&seed, &corpus_streams, &t.mine) {
                Ok(mined) => out.with("keywords_mined.txt", |b| Ok(write_mined(b, &mined)?))?,
                Err(e) => log::info!("no keyword candidates mined: {e}"),
            }
        }
        Command::Popular => {
            p.scores()?;
            let c = p.corpus.as_ref().expect("loaded");
            let s = p.scores.as_ref().expect("scored");
            let months = monthly_popularity(&c.posts);
            let threads: HashMap<&str, &orbitlens::corpus::Thread> =
                c.threads.threads.iter().map(|t| (t.root.id.as_str(), t)).collect();
            let topics: Vec<TopicReport> = months
                .iter()
                .flat_map(|m| &m.popular)
                .filter_map(|id| threads.get(id.as_str()))
                .map(|t| topic_report(t, &p.stopwords, &s.labels))
                .collect();
            out.json("popular.json", &PopularOutput { months, topics })?;
        }
        Command::Speedtest => {
            p.speed()?;
            let s = p.speed.as_ref().expect("extracted");
            out.with("reports.csv", |b| Ok(write_reports_csv(b, &s.kept)?))?;
            out.with("rejected.csv", |b| {
                let mut w = csv::Writer::from_writer(b);
                let mut header: Vec<&str> = REPORT_CSV_HEADER.to_vec();
                header.push("reason");
                w.write_record(&header)?;
                for (r, why) in &s.rejected {
                    let mut row = report_row(r).to_vec();
                    row.push(why.clone());
                    w.write_record(&row)?;
                }
                w.flush()?;
                Ok(())
            })?;
            out.json("speedtest_summary.json", &s.summary)?;
        }
        Command::Trends => {
            p.speed()?;
            p.scores()?;
            let range = p.months()?;
            let c = p.corpus.as_ref().expect("loaded");
            let s = p.scores.as_ref().expect("scored");
            let speed = p.speed.as_ref().expect("extracted");
            let mut series = monthly_median_series(
                &speed.kept,
                |r| speed.post_of.get(&r.source_id).map(|i| c.posts[*i].created_at),
                Some(range),
            );
            attach_subsamples(&mut series, &p.cfg.thresholds.fractions, p.cfg.seed)
                .map_err(|e| RunError::Fatal(e.to_string()))?;
            let sharing: std::collections::BTreeSet<usize> =
                speed.kept.iter().filter_map(|r| speed.post_of.get(&r.source_id).copied()).collect();
            let mut by_month: BTreeMap<YearMonth, Vec<StrongLabel>> = BTreeMap::new();
            for i in sharing {
                let post = &c.posts[i];
                if let Some(l) = s.labels.get(&post.id) {
                    by_month.entry(YearMonth::of_timestamp(post.created_at)).or_default().push(*l);
                }
            }
            let pos: BTreeMap<YearMonth, PosScore> =
                by_month.into_iter().map(|(m, ls)| (m, pos_score(m, ls))).collect();
            attach_pos(&mut series.points, &pos);
            let mut tables = AnnotationTable::default();
            if let Some(path) = &p.cfg.launches {
                tables.launches = read_launches(read(path)?.as_bytes())
                    .map_err(|e| ConfigError::new("launches", e.to_string()))?;
            }
            if let Some(path) = &p.cfg.users {
                tables.users =
                    read_users(read(path)?.as_bytes()).map_err(|e| ConfigError::new("users", e.to_string()))?;
            }
            join_annotations(&mut series.points, &tables);
            let points: Vec<MonthlyPoint> = series.points;
            out.with("trends.csv", |b| Ok(write_trend_csv(b, &points)?))?;
            out.put("trends.svg", trend_svg(&points).as_bytes())?;
            out.json("bins.json", &series.bins)?;
        }
        Command::Report => unreachable!("report expands to its stages"),
    }
    Ok(())
}

fn write_pos_csv(b: &mut Vec<u8>, rows: &[PosScore]) -> Result<(), Box<dyn std::error::Error>> {
    let mut w = csv::Writer::from_writer(b);
    w.write_record(["month", "strong_pos", "strong_neg", "pos"])?;
    for r in rows {
        w.write_record([
            r.month.to_string(),
            r.strong_pos.to_string(),
            r.strong_neg.to_string(),
            r.pos.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct OutageSummary {
    rule: orbitlens::outage::QualifyRule,
    library: Vec<String>,
    qualified_threads: usize,
    qualified_items: usize,
    flagged_days: Vec<NaiveDate>,
}

#[derive(Serialize)]
struct PopularOutput {
    months: Vec<MonthlyPopularity>,
    topics: Vec<TopicReport>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    generated_at: String,
    config: &'a RunConfig,
    inputs: BTreeMap<String, String>,
    artifacts: &'a BTreeMap<String, String>,
    item_failures: usize,
}

fn input_hashes(cfg: &RunConfig, needs: Needs) -> Result<BTreeMap<String, String>, RunError> {
    let mut files: Vec<(&str, &PathBuf)> = vec![("posts", &cfg.posts), ("comments", &cfg.comments)];
    for (name, p) in [
        ("lexicon", &cfg.sentiment.lexicon),
        ("stopwords", &cfg.stopwords),
        ("keywords", &cfg.keywords),
    ] {
        if let Some(p) = p {
            files.push((name, p));
        }
    }
    if needs.annotations {
        for (name, p) in [("launches", &cfg.launches), ("users", &cfg.users)] {
            if let Some(p) = p {
                files.push((name, p));
            }
        }
    }
    let mut out = BTreeMap::new();
    for (name, p) in files {
        let bytes = fs::read(p).map_err(io_err(p.display().to_string()))?;
        out.insert(name.to_string(), content_hash(bytes));
    }
    let dirs = [
        ("sentiment.replay_dir", cfg.sentiment.replay_dir.as_ref()),
        ("ocr.dir", cfg.ocr.dir.as_ref().filter(|_| needs.ocr)),
    ];
    for (name, dir) in dirs {
        if let Some(dir) = dir {
            out.insert(name.to_string(), dir_hash(dir)?);
        }
    }
    Ok(out)
}

/// Hash over the sorted (file name, content hash) pairs of a directory.
fn dir_hash(dir: &Path) -> Result<String, RunError> {
    let mut entries: Vec<(String, String)> = Vec::new();
    for e in fs::read_dir(dir).map_err(io_err(dir.display().to_string()))? {
        let path = e.map_err(io_err(dir.display().to_string()))?.path();
        if path.is_file() {
            let bytes = fs::read(&path).map_err(io_err(path.display().to_string()))?;
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            entries.push((name, content_hash(bytes)));
        }
    }
    entries.sort();
    let joined: String = entries.iter().map(|(n, h)| format!("{n}:{h}\n")).collect();
    Ok(content_hash(joined))
}

/// Run one command and write its artifacts, the manifest and, when some
/// items failed, the error sidecar.
pub fn run(command: Command, cfg: &RunConfig) -> Result<Outcome, RunError> {
    let needs = command.needs();
    cfg.validate(needs)?;
    fs::create_dir_all(&cfg.out).map_err(io_err(cfg.out.display().to_string()))?;
    let inputs = input_hashes(cfg, needs)?;
    let mut pipeline = Pipeline::new(cfg)?;
    let mut out = Artifacts {
        dir: cfg.out.clone(),
        written: BTreeMap::new(),
    };
    let stages: Vec<Command> = match command {
        Command::Report => Command::STAGES.to_vec(),
        c => vec![c],
    };
    for stage in stages {
        log::info!("running {}", stage.name());
        write_stage(&mut pipeline, stage, &mut out)?;
    }
    let failures = pipeline.failures;
    if !failures.is_empty() {
        out.json(ERRORS_FILE, &failures)?;
    }
    let manifest = Manifest {
        tool: "orbitlens",
        version: env!("CARGO_PKG_VERSION"),
        command: command.name(),
        seed: cfg.seed,
        generated_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        config: cfg,
        inputs,
        artifacts: &out.written,
        item_failures: failures.len(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| RunError::Fatal(e.to_string()))?;
    bytes.push(b'\n');
    let path = cfg.out.join(MANIFEST_FILE);
    fs::write(&path, bytes).map_err(io_err(path.display().to_string()))?;
    Ok(Outcome {
        artifacts: out.written,
        failures,
    })
}

/// Write a synthetic corpus plus a ready-to-run config next to it.
pub fn run_generate_fixture(spec: &FixtureSpec, seed: u64, dir: &Path) -> Result<(), RunError> {
    let fixture = generate_fixture(spec, seed, &Lexicon::builtin()).map_err(|e| RunError::Fatal(e.to_string()))?;
    fixture.write(dir).map_err(io_err(dir.display().to_string()))?;
    let cfg = fixture_config(spec, seed);
    let mut bytes = serde_json::to_vec_pretty(&cfg).map_err(|e| RunError::Fatal(e.to_string()))?;
    bytes.push(b'\n');
    let path = dir.join(FIXTURE_CONFIG_FILE);
    fs::write(&path, bytes).map_err(io_err(path.display().to_string()))
}

/// Config for a generated fixture, with paths relative to its directory.
pub fn fixture_config(spec: &FixtureSpec, seed: u64) -> RunConfig {
    use orbitlens::fixture::{COMMENTS_FILE, KEYWORDS_FILE, LAUNCHES_FILE, OCR_DIR, POSTS_FILE, USERS_FILE};
    RunConfig {
        posts: POSTS_FILE.into(),
        comments: COMMENTS_FILE.into(),
        window: Some(config::Window {
            start: spec.start,
            end: spec.end,
        }),
        keywords: Some(KEYWORDS_FILE.into()),
        launches: Some(LAUNCHES_FILE.into()),
        users: Some(USERS_FILE.into()),
        ocr: config::OcrSettings {
            dir: Some(OCR_DIR.into()),
            ..Default::default()
        },
        seed,
        ..RunConfig::default()
    }
}
