//! Corpus ingestion: newline-delimited dump records in, cleaned posts,
//! comments, reply trees and weekly activity out.
//!
//! Field names follow the historical dump conventions (`id`, `created_utc`,
//! `title`, `selftext`, `score`, `num_comments`, `url`; comments carry
//! `parent_id`, `link_id`, `body`). Fullname prefixes such as `t3_` and
//! `t1_` are stripped from reference fields on load.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{self, BufRead, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::calendar::{iso_week_start, utc_date};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    /// Unix seconds, UTC.
    pub created_at: i64,
    pub title: String,
    pub body: String,
    pub upvotes: i64,
    pub comment_count: i64,
    pub urls: Vec<String>,
    pub media_refs: Vec<String>,
    pub removed: bool,
    /// Unrecognised dump fields, kept so a cleaned corpus can be re-emitted.
    pub extra: BTreeMap<String, Value>,
}

impl Post {
    /// Title and body joined with a space; the text that gets scored.
    pub fn text(&self) -> String {
        if self.body.is_empty() {
            self.title.clone()
        } else {
            format!("{} {}", self.title, self.body)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    pub id: String,
    pub parent_id: String,
    pub post_id: String,
    pub created_at: i64,
    pub body: String,
    pub upvotes: i64,
    pub removed: bool,
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IngestErrorKind {
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("bad value for field `{0}`")]
    BadField(String),
    #[error("bad timestamp")]
    BadTimestamp,
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("timestamp outside corpus window")]
    OutOfWindow,
    #[error("malformed record: {0}")]
    Malformed(String),
}

/// A rejected input line (1-based line number).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
#[error("line {line}: {kind}")]
pub struct IngestError {
    pub line: usize,
    #[serde(serialize_with = "serialize_display")]
    pub kind: IngestErrorKind,
}

fn serialize_display<S: serde::Serializer, T: std::fmt::Display>(
    v: &T,
    s: S,
) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Inclusive `[start, end]` bounds on `created_utc`, unix seconds.
    pub window: Option<(i64, i64)>,
}

#[derive(Debug, Default)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    pub errors: Vec<IngestError>,
}

const POST_FIELDS: &[&str] = &[
    "id",
    "created_utc",
    "title",
    "selftext",
    "score",
    "num_comments",
    "url",
    "urls",
    "media_refs",
    "removed",
];

const COMMENT_FIELDS: &[&str] = &[
    "id",
    "parent_id",
    "link_id",
    "created_utc",
    "body",
    "score",
    "removed",
];

pub fn load_posts<R: BufRead>(reader: R, opts: &LoadOptions) -> io::Result<Loaded<Post>> {
    load_records(reader, opts, parse_post, |p: &Post| p.id.clone())
}

pub fn load_comments<R: BufRead>(reader: R, opts: &LoadOptions) -> io::Result<Loaded<Comment>> {
    load_records(reader, opts, parse_comment, |c: &Comment| c.id.clone())
}

fn load_records<R, T, P, K>(
    mut reader: R,
    opts: &LoadOptions,
    parse: P,
    key: K,
) -> io::Result<Loaded<T>>
where
    R: BufRead,
    P: Fn(Map<String, Value>, &LoadOptions) -> Result<T, IngestErrorKind>,
    K: Fn(&T) -> String,
{
    let mut out = Loaded {
        records: Vec::new(),
        errors: Vec::new(),
    };
    let mut seen = HashSet::new();
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let line = match std::str::from_utf8(&buf) {
            Ok(s) => s.trim(),
            Err(_) => {
                out.errors.push(IngestError {
                    line: line_no,
                    kind: IngestErrorKind::Malformed("invalid UTF-8".into()),
                });
                continue;
            }
        };
        if line.is_empty() {
            continue;
        }
        let obj = match serde_json::from_str::<Value>(line) {
            Ok(Value::Object(map)) => map,
            Ok(_) => {
                out.errors.push(IngestError {
                    line: line_no,
                    kind: IngestErrorKind::Malformed("record is not an object".into()),
                });
                continue;
            }
            Err(e) => {
                out.errors.push(IngestError {
                    line: line_no,
                    kind: IngestErrorKind::Malformed(e.to_string()),
                });
                continue;
            }
        };
        match parse(obj, opts) {
            Ok(rec) => {
                let id = key(&rec);
                if seen.insert(id.clone()) {
                    out.records.push(rec);
                } else {
                    out.errors.push(IngestError {
                        line: line_no,
                        kind: IngestErrorKind::DuplicateId(id),
                    });
                }
            }
            Err(kind) => out.errors.push(IngestError {
                line: line_no,
                kind,
            }),
        }
    }
    Ok(out)
}

fn parse_post(mut obj: Map<String, Value>, opts: &LoadOptions) -> Result<Post, IngestErrorKind> {
    let id = take_id(&obj, "id")?;
    let created_at = take_timestamp(&obj, opts)?;
    let title = opt_string(&obj, "title")?.unwrap_or_default();
    let body = opt_string(&obj, "selftext")?.unwrap_or_default();
    let upvotes = opt_int(&obj, "score")?.unwrap_or(0);
    let comment_count = opt_int(&obj, "num_comments")?.unwrap_or(0);
    if comment_count < 0 {
        return Err(IngestErrorKind::BadField("num_comments".into()));
    }
    let urls = match obj.get("urls") {
        Some(v) => string_list(v, "urls")?,
        None => opt_string(&obj, "url")?
            .filter(|u| !u.is_empty())
            .into_iter()
            .collect(),
    };
    let media_refs = match obj.get("media_refs") {
        Some(v) => string_list(v, "media_refs")?,
        None => Vec::new(),
    };
    let removed = removed_flag(&obj);
    for f in POST_FIELDS {
        obj.remove(*f);
    }
    Ok(Post {
        id,
        created_at,
        title,
        body,
        upvotes,
        comment_count,
        urls,
        media_refs,
        removed,
        extra: obj.into_iter().collect(),
    })
}

fn parse_comment(
    mut obj: Map<String, Value>,
    opts: &LoadOptions,
) -> Result<Comment, IngestErrorKind> {
    let id = take_id(&obj, "id")?;
    let parent_id = strip_fullname(&take_id(&obj, "parent_id")?).to_string();
    let post_id = strip_fullname(&take_id(&obj, "link_id")?).to_string();
    let created_at = take_timestamp(&obj, opts)?;
    let body = opt_string(&obj, "body")?.unwrap_or_default();
    let upvotes = opt_int(&obj, "score")?.unwrap_or(0);
    let removed = removed_flag(&obj);
    for f in COMMENT_FIELDS {
        obj.remove(*f);
    }
    Ok(Comment {
        id,
        parent_id,
        post_id,
        created_at,
        body,
        upvotes,
        removed,
        extra: obj.into_iter().collect(),
    })
}

fn strip_fullname(s: &str) -> &str {
    for prefix in ["t1_", "t3_"] {
        if let Some(rest) = s.strip_prefix(prefix) {
            return rest;
        }
    }
    s
}

fn take_id(obj: &Map<String, Value>, field: &str) -> Result<String, IngestErrorKind> {
    match obj.get(field) {
        None | Some(Value::Null) => Err(IngestErrorKind::MissingField(field.into())),
        Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(_) => Err(IngestErrorKind::BadField(field.into())),
    }
}

fn take_timestamp(obj: &Map<String, Value>, opts: &LoadOptions) -> Result<i64, IngestErrorKind> {
    let ts = match obj.get("created_utc") {
        None | Some(Value::Null) => {
            return Err(IngestErrorKind::MissingField("created_utc".into()))
        }
        Some(Value::Number(n)) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.is_finite()).map(|f| f.floor() as i64)),
        Some(Value::String(s)) => s
            .trim()
            .parse::<i64>()
            .ok()
            .or_else(|| s.trim().parse::<f64>().ok().filter(|f| f.is_finite()).map(|f| f.floor() as i64)),
        Some(_) => None,
    };
    let ts = ts.filter(|t| *t >= 0).ok_or(IngestErrorKind::BadTimestamp)?;
    if let Some((start, end)) = opts.window {
        if ts < start || ts > end {
            return Err(IngestErrorKind::OutOfWindow);
        }
    }
    Ok(ts)
}

fn opt_string(obj: &Map<String, Value>, field: &str) -> Result<Option<String>, IngestErrorKind> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(IngestErrorKind::BadField(field.into())),
    }
}

fn opt_int(obj: &Map<String, Value>, field: &str) -> Result<Option<i64>, IngestErrorKind> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => n
            .as_i64()
            .map(Some)
            .ok_or_else(|| IngestErrorKind::BadField(field.into())),
        Some(_) => Err(IngestErrorKind::BadField(field.into())),
    }
}

fn string_list(v: &Value, field: &str) -> Result<Vec<String>, IngestErrorKind> {
    let bad = || IngestErrorKind::BadField(field.into());
    v.as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|x| x.as_str().map(str::to_string).ok_or_else(bad))
        .collect()
}

fn removed_flag(obj: &Map<String, Value>) -> bool {
    matches!(obj.get("removed"), Some(Value::Bool(true)))
        || matches!(obj.get("removed_by_category"), Some(v) if !v.is_null())
}

fn post_record(p: &Post) -> Map<String, Value> {
    let mut m: Map<String, Value> = p.extra.clone().into_iter().collect();
    m.insert("id".into(), p.id.clone().into());
    m.insert("created_utc".into(), p.created_at.into());
    m.insert("title".into(), p.title.clone().into());
    m.insert("selftext".into(), p.body.clone().into());
    m.insert("score".into(), p.upvotes.into());
    m.insert("num_comments".into(), p.comment_count.into());
    m.insert("urls".into(), p.urls.clone().into());
    m.insert("media_refs".into(), p.media_refs.clone().into());
    m.insert("removed".into(), p.removed.into());
    m
}

fn comment_record(c: &Comment) -> Map<String, Value> {
    let mut m: Map<String, Value> = c.extra.clone().into_iter().collect();
    m.insert("id".into(), c.id.clone().into());
    m.insert("parent_id".into(), c.parent_id.clone().into());
    m.insert("link_id".into(), c.post_id.clone().into());
    m.insert("created_utc".into(), c.created_at.into());
    m.insert("body".into(), c.body.clone().into());
    m.insert("score".into(), c.upvotes.into());
    m.insert("removed".into(), c.removed.into());
    m
}

/// Re-emit posts in the dump format `load_posts` reads.
pub fn write_posts<W: Write>(mut w: W, posts: &[Post]) -> io::Result<()> {
    for p in posts {
        serde_json::to_writer(&mut w, &post_record(p))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_comments<W: Write>(mut w: W, comments: &[Comment]) -> io::Result<()> {
    for c in comments {
        serde_json::to_writer(&mut w, &comment_record(c))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CleanConfig {
    pub removal_sentinels: BTreeSet<String>,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            removal_sentinels: ["[removed]", "[deleted]"]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CleanReport {
    pub dropped_posts: usize,
    pub dropped_comments: usize,
    pub stripped_identifier_fields: usize,
    /// Retained records whose score is negative.
    pub negative_upvotes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Cleaned {
    pub posts: Vec<Post>,
    pub comments: Vec<Comment>,
    pub report: CleanReport,
}

fn is_identifier_field(key: &str) -> bool {
    key == "author" || key.starts_with("author_") || matches!(key, "user_id" | "username")
}

fn strip_identifiers(extra: &mut BTreeMap<String, Value>) -> usize {
    let before = extra.len();
    extra.retain(|k, _| !is_identifier_field(k));
    before - extra.len()
}

/// Drop user-removed content and strip user identifiers.
pub fn clean(posts: Vec<Post>, comments: Vec<Comment>, cfg: &CleanConfig) -> Cleaned {
    let sentinel = |s: &str| cfg.removal_sentinels.contains(s.trim());
    let mut report = CleanReport::default();

    let mut kept_posts = Vec::with_capacity(posts.len());
    for mut p in posts {
        if p.removed || sentinel(&p.body) || sentinel(&p.title) {
            report.dropped_posts += 1;
            continue;
        }
        report.stripped_identifier_fields += strip_identifiers(&mut p.extra);
        if p.upvotes < 0 {
            report.negative_upvotes.push(p.id.clone());
        }
        kept_posts.push(p);
    }

    let mut kept_comments = Vec::with_capacity(comments.len());
    for mut c in comments {
        if c.removed || sentinel(&c.body) {
            report.dropped_comments += 1;
            continue;
        }
        report.stripped_identifier_fields += strip_identifiers(&mut c.extra);
        if c.upvotes < 0 {
            report.negative_upvotes.push(c.id.clone());
        }
        kept_comments.push(c);
    }

    Cleaned {
        posts: kept_posts,
        comments: kept_comments,
        report,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommentNode {
    pub comment: Comment,
    pub children: Vec<CommentNode>,
}

impl CommentNode {
    pub fn size(&self) -> usize {
        1 + self.children.iter().map(CommentNode::size).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(CommentNode::depth).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Thread {
    pub root: Post,
    pub children: Vec<CommentNode>,
    /// Comments of this post whose ancestor chain never reaches the root.
    pub orphan_comments: Vec<Comment>,
}

impl Thread {
    pub fn tree_size(&self) -> usize {
        self.children.iter().map(CommentNode::size).sum()
    }

    pub fn depth(&self) -> usize {
        self.children.iter().map(CommentNode::depth).max().unwrap_or(0)
    }

    /// Every comment in the thread: tree comments in pre-order, then orphans.
    pub fn comments(&self) -> Vec<&Comment> {
        fn walk<'a>(nodes: &'a [CommentNode], out: &mut Vec<&'a Comment>) {
            for n in nodes {
                out.push(&n.comment);
                walk(&n.children, out);
            }
        }
        let mut out = Vec::with_capacity(self.tree_size() + self.orphan_comments.len());
        walk(&self.children, &mut out);
        out.extend(self.orphan_comments.iter());
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ThreadSummary {
    pub threads: usize,
    pub attached_comments: usize,
    pub thread_orphans: usize,
    pub global_orphans: usize,
}

#[derive(Debug, Clone)]
pub struct ThreadSet {
    pub threads: Vec<Thread>,
    /// Comments whose post is not in the corpus.
    pub global_orphans: Vec<Comment>,
    pub summary: ThreadSummary,
}

fn by_time_then_id(a: &Comment, b: &Comment) -> std::cmp::Ordering {
    a.created_at
        .cmp(&b.created_at)
        .then_with(|| a.id.cmp(&b.id))
}

/// Rebuild each post's reply tree from parent ids.
///
/// A comment is attached only when its parent chain reaches the root post,
/// so cycles and chains through missing records end up in the orphan lists.
pub fn build_threads(posts: &[Post], comments: &[Comment]) -> ThreadSet {
    let post_index: HashMap<&str, usize> = posts
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.as_str(), i))
        .collect();

    let mut by_post: Vec<Vec<&Comment>> = vec![Vec::new(); posts.len()];
    let mut global_orphans = Vec::new();
    for c in comments {
        match post_index.get(c.post_id.as_str()) {
            Some(&i) => by_post[i].push(c),
            None => global_orphans.push(c.clone()),
        }
    }
    global_orphans.sort_by(by_time_then_id);

    let mut summary = ThreadSummary {
        threads: posts.len(),
        global_orphans: global_orphans.len(),
        ..Default::default()
    };

    let threads = posts
        .iter()
        .zip(by_post)
        .map(|(post, mut own)| {
            own.sort_by(|a, b| by_time_then_id(a, b));
            let mut kids: HashMap<&str, Vec<&Comment>> = HashMap::new();
            for c in &own {
                kids.entry(c.parent_id.as_str()).or_default().push(c);
            }
            let mut attached = HashSet::new();
            let children = grow(post.id.as_str(), &kids, &mut attached);
            let orphan_comments: Vec<Comment> = own
                .iter()
                .filter(|c| !attached.contains(c.id.as_str()))
                .map(|c| (*c).clone())
                .collect();
            summary.attached_comments += attached.len();
            summary.thread_orphans += orphan_comments.len();
            Thread {
                root: post.clone(),
                children,
                orphan_comments,
            }
        })
        .collect();

    ThreadSet {
        threads,
        global_orphans,
        summary,
    }
}

fn grow<'a>(
    parent: &str,
    kids: &HashMap<&str, Vec<&'a Comment>>,
    attached: &mut HashSet<&'a str>,
) -> Vec<CommentNode> {
    let Some(list) = kids.get(parent) else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(list.len());
    for c in list {
        // duplicate ids would otherwise revisit a subtree
        if !attached.insert(c.id.as_str()) {
            continue;
        }
        out.push(CommentNode {
            comment: (*c).clone(),
            children: grow(c.id.as_str(), kids, attached),
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityStats {
    pub week_start: NaiveDate,
    pub posts: u64,
    pub upvotes: i64,
    pub comments: i64,
}

/// Per ISO week post counts with post-level upvote and comment sums.
///
/// Weeks run contiguously from the week containing `window.0` (or the first
/// post) to the week containing `window.1` (or the last post).
pub fn weekly_activity(posts: &[Post], window: Option<(NaiveDate, NaiveDate)>) -> Vec<ActivityStats> {
    let (start, end) = match window {
        Some(w) => w,
        None => {
            let Some(first) = posts.iter().map(|p| p.created_at).min() else {
                return Vec::new();
            };
            let last = posts.iter().map(|p| p.created_at).max().unwrap_or(first);
            (utc_date(first), utc_date(last))
        }
    };
    let first_week = iso_week_start(start);
    let last_week = iso_week_start(end);
    let mut rows: BTreeMap<NaiveDate, ActivityStats> = BTreeMap::new();
    let mut w = first_week;
    while w <= last_week {
        rows.insert(
            w,
            ActivityStats {
                week_start: w,
                posts: 0,
                upvotes: 0,
                comments: 0,
            },
        );
        w += chrono::TimeDelta::days(7);
    }
    for p in posts {
        let wk = iso_week_start(utc_date(p.created_at));
        if let Some(row) = rows.get_mut(&wk) {
            row.posts += 1;
            row.upvotes += p.upvotes;
            row.comments += p.comment_count;
        }
    }
    rows.into_values().collect()
}

pub fn write_weekly_csv<W: Write>(w: W, rows: &[ActivityStats]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["week_start", "posts", "upvotes", "comments"])?;
    for r in rows {
        out.write_record([
            r.week_start.to_string(),
            r.posts.to_string(),
            r.upvotes.to_string(),
            r.comments.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
