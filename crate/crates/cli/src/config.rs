//! Run configuration: one JSON document, every threshold defaulted.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use orbitlens::clients::ProviderConfig;
use orbitlens::outage::{MineConfig, QualifyRule, SpikeParams};
use orbitlens::peaks::{DEFAULT_MIN_SEPARATION_DAYS, DEFAULT_PEAK_COUNT};
use orbitlens::sentiment::DEFAULT_STRONG_THRESHOLD;
use orbitlens::speedtest::{LabelSpec, PlausibilityBounds};
use orbitlens::textmine::DEFAULT_QUERY_BRAND;
use orbitlens::trends::DEFAULT_FRACTIONS;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentKind {
    #[default]
    Lexicon,
    Replay,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SentimentSettings {
    pub provider: SentimentKind,
    /// Lexicon CSV; the bundled lexicon when absent.
    pub lexicon: Option<PathBuf>,
    /// Recorded responses served by the replay provider.
    pub replay_dir: Option<PathBuf>,
    pub remote: Option<ProviderConfig>,
    /// Record every score here so the run can be replayed offline.
    pub record_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OcrKind {
    /// A directory of `<image ref>.json` token layouts.
    #[default]
    Fixture,
    Replay,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcrSettings {
    pub source: OcrKind,
    pub dir: Option<PathBuf>,
    pub remote: Option<ProviderConfig>,
}

fn default_qualify() -> QualifyRule {
    QualifyRule::NegativeDominant
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub tau: f64,
    pub peak_k: usize,
    pub peak_separation_days: i64,
    /// Count strong comments as well as posts in the daily peak series.
    pub peaks_include_comments: bool,
    pub spike: SpikeParams,
    #[serde(default = "default_qualify")]
    pub qualify: QualifyRule,
    pub mine: MineConfig,
    pub bounds: PlausibilityBounds,
    pub fractions: Vec<f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tau: DEFAULT_STRONG_THRESHOLD,
            peak_k: DEFAULT_PEAK_COUNT,
            peak_separation_days: DEFAULT_MIN_SEPARATION_DAYS,
            peaks_include_comments: false,
            spike: SpikeParams::default(),
            qualify: default_qualify(),
            mine: MineConfig::default(),
            bounds: PlausibilityBounds::default(),
            fractions: DEFAULT_FRACTIONS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub posts: PathBuf,
    pub comments: PathBuf,
    /// Analysis window; the span of the cleaned posts when absent.
    pub window: Option<Window>,
    pub sentiment: SentimentSettings,
    /// One stop word per line; the bundled English list when absent.
    pub stopwords: Option<PathBuf>,
    /// Curated outage keyword library; the bundled list when absent.
    pub keywords: Option<PathBuf>,
    pub launches: Option<PathBuf>,
    pub users: Option<PathBuf>,
    pub ocr: OcrSettings,
    pub labels: LabelSpec,
    pub thresholds: Thresholds,
    /// Brand appended to peak search queries.
    pub brand: String,
    /// Speed-test reports must name this ISP in the screenshot or post.
    pub provider_filter: Option<String>,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            posts: PathBuf::from("posts.jsonl"),
            comments: PathBuf::from("comments.jsonl"),
            window: None,
            sentiment: SentimentSettings::default(),
            stopwords: None,
            keywords: None,
            launches: None,
            users: None,
            ocr: OcrSettings::default(),
            labels: LabelSpec::default(),
            thresholds: Thresholds::default(),
            brand: DEFAULT_QUERY_BRAND.to_string(),
            provider_filter: Some("starlink".to_string()),
            out: PathBuf::from("out"),
            seed: 0,
        }
    }
}

/// Which inputs a command reads beyond the corpus.
#[derive(Debug, Clone, Copy, Default)]
pub struct Needs {
    pub ocr: bool,
    pub annotations: bool,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::new(field_of(&e.to_string()), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    /// Make relative paths relative to `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.posts);
        fix(&mut self.comments);
        fix(&mut self.out);
        for p in [
            &mut self.sentiment.lexicon,
            &mut self.sentiment.replay_dir,
            &mut self.sentiment.record_dir,
            &mut self.stopwords,
            &mut self.keywords,
            &mut self.launches,
            &mut self.users,
            &mut self.ocr.dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        for remote in [&mut self.sentiment.remote, &mut self.ocr.remote].into_iter().flatten() {
            if let Some(p) = remote.cache_dir.as_mut() {
                fix(p);
            }
        }
    }

    pub fn validate(&self, needs: Needs) -> Result<(), ConfigError> {
        if let Some(w) = self.window {
            if w.start >= w.end {
                return Err(ConfigError::new("window", "start must precede end"));
            }
        }
        let t = &self.thresholds;
        if !(t.tau > 0.5 && t.tau <= 1.0) {
            return Err(ConfigError::new("thresholds.tau", format!("{} is outside (0.5, 1]", t.tau)));
        }
        if t.peak_k == 0 {
            return Err(ConfigError::new("thresholds.peak_k", "must be at least 1"));
        }
        if let Some(f) = t.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(ConfigError::new("thresholds.fractions", format!("{f} is outside (0, 1]")));
        }
        self.labels
            .validate()
            .map_err(|e| ConfigError::new("labels", e.to_string()))?;
        must_exist("posts", &self.posts)?;
        must_exist("comments", &self.comments)?;
        for (field, p) in [
            ("sentiment.lexicon", &self.sentiment.lexicon),
            ("stopwords", &self.stopwords),
            ("keywords", &self.keywords),
        ] {
            if let Some(p) = p {
                must_exist(field, p)?;
            }
        }
        match self.sentiment.provider {
            SentimentKind::Lexicon => {}
            SentimentKind::Replay => {
                let dir = self
                    .sentiment
                    .replay_dir
                    .as_ref()
                    .ok_or_else(|| ConfigError::new("sentiment.replay_dir", "required by the replay provider"))?;
                must_exist("sentiment.replay_dir", dir)?;
            }
            SentimentKind::Remote => {
                let remote = self
                    .sentiment
                    .remote
                    .as_ref()
                    .ok_or_else(|| ConfigError::new("sentiment.remote", "required by the remote provider"))?;
                remote
                    .validate()
                    .map_err(|e| ConfigError::new("sentiment.remote", e.to_string()))?;
            }
        }
        if needs.ocr {
            match self.ocr.source {
                OcrKind::Fixture | OcrKind::Replay => {
                    let dir = self
                        .ocr
                        .dir
                        .as_ref()
                        .ok_or_else(|| ConfigError::new("ocr.dir", "required to read screenshots"))?;
                    must_exist("ocr.dir", dir)?;
                }
                OcrKind::Remote => {
                    let remote = self
                        .ocr
                        .remote
                        .as_ref()
                        .ok_or_else(|| ConfigError::new("ocr.remote", "required by the remote OCR source"))?;
                    remote
                        .validate()
                        .map_err(|e| ConfigError::new("ocr.remote", e.to_string()))?;
                }
            }
        }
        if needs.annotations {
            for (field, p) in [("launches", &self.launches), ("users", &self.users)] {
                if let Some(p) = p {
                    must_exist(field, p)?;
                }
            }
        }
        Ok(())
    }
}

fn must_exist(field: &str, path: &Path) -> Result<(), ConfigError> {
    if path.exists() {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("{} does not exist", path.display())))
    }
}

/// Best-effort field name from a serde error message.
fn field_of(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "config".to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_takes_all_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.thresholds.tau, 0.7);
        assert_eq!(cfg.thresholds.peak_k, 3);
        assert_eq!(cfg.thresholds.fractions, [0.95, 0.90]);
    }

    #[test]
    fn unknown_field_names_the_field() {
        let err = RunConfig::from_json(r#"{"postz": "a"}"#).unwrap_err();
        assert_eq!(err.field, "postz");
    }

    #[test]
    fn tau_out_of_range_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("p"), "").unwrap();
        let mut cfg = RunConfig {
            posts: dir.path().join("p"),
            comments: dir.path().join("p"),
            ..RunConfig::default()
        };
        cfg.thresholds.tau = 0.5;
        assert_eq!(cfg.validate(Needs::default()).unwrap_err().field, "thresholds.tau");
        cfg.thresholds.tau = 0.7;
        assert!(cfg.validate(Needs::default()).is_ok());
        cfg.posts = dir.path().join("missing");
        assert_eq!(cfg.validate(Needs::default()).unwrap_err().field, "posts");
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut cfg = RunConfig {
            keywords: Some("kw.txt".into()),
            ..RunConfig::default()
        };
        cfg.rebase(Path::new("/data/run"));
        assert_eq!(cfg.posts, Path::new("/data/run/posts.jsonl"));
        assert_eq!(cfg.keywords.as_deref(), Some(Path::new("/data/run/kw.txt")));
    }
}
