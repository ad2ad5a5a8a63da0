//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero when any
//! criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use orbitlens::calendar::day_start;
use orbitlens::corpus::{build_threads, Comment, Post};
use orbitlens::fixture::{simple_layout, table_layout, FixtureSpec, GroundTruth, PlantedValues, SimpleStyle, TRUTH_FILE};
use orbitlens::outage::{keyword_day_series, load_library, qualify_threads, QualifyRule};
use orbitlens::popularity::percentile;
use orbitlens::sentiment::{classify_strong, score_text, Lexicon, SentimentScore, StrongLabel};
use orbitlens::speedtest::{extract, LabelSpec, OcrDocument};
use orbitlens::textmine::{ngram_counts, StopWords, TokenStream};
use orbitlens::trends::{median, subsample_medians};
use orbitlens_cli::config::SentimentKind;
use orbitlens_cli::{fixture_config, run, run_generate_fixture, Command, RunConfig, MANIFEST_FILE};

const GOLDEN_SEED: u64 = 42;
const MAX_RUNTIME: Duration = Duration::from_secs(60);
const TAU: f64 = 0.7;
const OCR_MIN_RECOVERY: f64 = 0.99;
const OCR_MAX_JITTER: f64 = 0.10;
const SUBSAMPLE_MIN_SAMPLES: usize = 30;
const SUBSAMPLE_MAX_IQR: f64 = 0.20;
const SUBSAMPLE_TOLERANCE: f64 = 0.10;

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Golden {
    dir: PathBuf,
    cfg: RunConfig,
    truth: GroundTruth,
    elapsed: Duration,
    exit: i32,
}

fn golden(root: &Path) -> Result<Golden, String> {
    let dir = root.join("golden");
    let spec = FixtureSpec::default();
    run_generate_fixture(&spec, GOLDEN_SEED, &dir).map_err(|e| e.to_string())?;
    let truth: GroundTruth =
        serde_json::from_str(&fs::read_to_string(dir.join(TRUTH_FILE)).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let mut cfg = fixture_config(&spec, GOLDEN_SEED);
    cfg.rebase(&dir);
    let t = Instant::now();
    let outcome = run(Command::Report, &cfg).map_err(|e| e.to_string())?;
    Ok(Golden {
        dir,
        elapsed: t.elapsed(),
        exit: outcome.exit_code(),
        cfg,
        truth,
    })
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

fn read_csv(path: &Path) -> Result<Vec<HashMap<String, String>>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let headers = r.headers().map_err(|e| e.to_string())?.clone();
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| e.to_string())?;
            Ok(headers.iter().map(String::from).zip(rec.iter().map(String::from)).collect())
        })
        .collect()
}

fn criterion_1(g: &Golden) -> Check {
    let out = &g.cfg.out;
    ensure(g.exit == 0, || format!("report exited {}", g.exit))?;
    ensure(g.elapsed < MAX_RUNTIME, || format!("runtime {:?}", g.elapsed))?;
    ensure(g.truth.ocr_docs >= 350, || format!("only {} OCR docs", g.truth.ocr_docs))?;

    let peaks = read_json(&out.join("peaks.json"))?;
    let got: BTreeSet<(String, String)> = peaks
        .as_array()
        .ok_or("peaks.json is not a list")?
        .iter()
        .map(|p| (p["date"].as_str().unwrap_or("").to_string(), p["polarity"].as_str().unwrap_or("").to_string()))
        .collect();
    let want: BTreeSet<(String, String)> = g
        .truth
        .peaks
        .iter()
        .map(|p| (p.date.to_string(), serde_json::to_value(p.polarity).unwrap().as_str().unwrap().to_string()))
        .collect();
    ensure(got == want, || format!("(a) peaks {got:?} != planted {want:?}"))?;
    let golden_file = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/peaks.json");
    ensure(read_json(&golden_file)? == peaks, || "(a) peaks.json differs from the committed golden file".into())?;

    let outages = read_json(&out.join("outages.json"))?;
    let flagged: Vec<String> = outages["flagged_days"]
        .as_array()
        .ok_or("no flagged_days")?
        .iter()
        .filter_map(|d| d.as_str().map(String::from))
        .collect();
    let planted: Vec<String> = g.truth.outage_days.iter().map(|d| d.to_string()).collect();
    ensure(flagged == planted, || format!("(b) flagged {flagged:?} != planted {planted:?}"))?;

    let pop = g.truth.popular.as_ref().ok_or("no popular post planted")?;
    let popular = read_json(&out.join("popular.json"))?;
    let month = popular["months"]
        .as_array()
        .and_then(|ms| ms.iter().find(|m| m["month"] == pop.month.to_string()))
        .ok_or("(c) popular month missing")?;
    ensure(month["popular"].as_array().is_some_and(|ids| ids.iter().any(|i| i == &Value::from(pop.post_id.clone()))), || {
        format!("(c) {} not popular in {}", pop.post_id, pop.month)
    })?;
    let topic = popular["topics"]
        .as_array()
        .and_then(|ts| ts.iter().find(|t| t["post_id"] == pop.post_id.as_str()))
        .ok_or("(c) no topic report for the popular post")?;
    ensure(topic["unigrams"][0][0] == pop.unigram.as_str(), || format!("(c) top unigram {}", topic["unigrams"][0]))?;
    ensure(topic["bigrams"][0][0] == pop.bigram.as_str(), || format!("(c) top bigram {}", topic["bigrams"][0]))?;

    let trends = read_csv(&out.join("trends.csv"))?;
    for m in &g.truth.months {
        let row = trends
            .iter()
            .find(|r| r["month"] == m.month.to_string())
            .ok_or_else(|| format!("(d) {} missing", m.month))?;
        let got: f64 = row["median_mbps"].parse().map_err(|_| format!("(d) {} has no median", m.month))?;
        ensure(got == m.median, || format!("(d) {} median {got} != {}", m.month, m.median))?;
    }
    Ok(format!(
        "{} peaks, {} outage days, popular {}, {} monthly medians exact, {:.1?} for report",
        want.len(),
        planted.len(),
        pop.post_id,
        g.truth.months.len(),
        g.elapsed
    ))
}

fn criterion_2() -> Check {
    let at = SentimentScore::new(0.7, 0.3, 0.0).map_err(|e| e.to_string())?;
    let below = SentimentScore::new(0.699_999_999, 0.300_000_001, 0.0).map_err(|e| e.to_string())?;
    let neg = SentimentScore::new(0.3, 0.7, 0.0).map_err(|e| e.to_string())?;
    let a = classify_strong(&at, TAU).map_err(|e| e.to_string())?;
    let b = classify_strong(&below, TAU).map_err(|e| e.to_string())?;
    let c = classify_strong(&neg, TAU).map_err(|e| e.to_string())?;
    ensure(a == StrongLabel::Positive, || format!("(0.7, 0.3, 0) -> {a:?}"))?;
    ensure(b == StrongLabel::NotStrong, || format!("(0.699999999, ...) -> {b:?}"))?;
    ensure(c == StrongLabel::Negative, || format!("(0.3, 0.7, 0) -> {c:?}"))?;
    Ok("0.7 inclusive, 0.699999999 excluded".into())
}

/// Recount Pos from the raw corpus and the emitted report list.
fn criterion_3(g: &Golden) -> Check {
    let out = &g.cfg.out;
    let kept: BTreeSet<String> = read_csv(&out.join("reports.csv"))?
        .into_iter()
        .map(|r| r["source_id"].clone())
        .collect();
    let lex = Lexicon::builtin();
    let mut counts: BTreeMap<String, (u32, u32)> = BTreeMap::new();
    let posts = fs::read_to_string(g.dir.join("posts.jsonl")).map_err(|e| e.to_string())?;
    for line in posts.lines() {
        let p: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let shares = p["media_refs"]
            .as_array()
            .is_some_and(|m| m.iter().any(|r| r.as_str().is_some_and(|r| kept.contains(r))));
        let body = p["selftext"].as_str().unwrap_or("");
        if !shares || body == "[removed]" {
            continue;
        }
        let title = p["title"].as_str().unwrap_or("");
        let text = if body.is_empty() { title.to_string() } else { format!("{title} {body}") };
        let s = score_text(&text, &lex);
        let ts = p["created_utc"].as_i64().ok_or("created_utc")?;
        let month = chrono::DateTime::from_timestamp(ts, 0).ok_or("bad ts")?.format("%Y-%m").to_string();
        let e = counts.entry(month).or_default();
        if s.positive >= TAU {
            e.0 += 1;
        } else if s.negative >= TAU {
            e.1 += 1;
        }
    }
    let trends = read_csv(&out.join("trends.csv"))?;
    let mut blanks = 0;
    for row in &trends {
        let (sp, sn) = counts.get(&row["month"]).copied().unwrap_or_default();
        if sp + sn == 0 {
            ensure(row["pos"].is_empty(), || format!("{} pos {:?} should be blank", row["month"], row["pos"]))?;
            blanks += 1;
        } else {
            let want = f64::from(sp) / f64::from(sp + sn);
            let got: f64 = row["pos"].parse().map_err(|_| format!("{} pos blank", row["month"]))?;
            ensure(got == want, || format!("{} pos {got} != {want}", row["month"]))?;
        }
    }
    for m in &g.truth.months {
        let (sp, sn) = counts.get(&m.month.to_string()).copied().unwrap_or_default();
        ensure((sp as usize, sn as usize) == (m.strong_pos, m.strong_neg), || {
            format!("{} recount ({sp}, {sn}) != planted ({}, {})", m.month, m.strong_pos, m.strong_neg)
        })?;
    }
    Ok(format!("{} months exact, {blanks} blank", trends.len()))
}

fn kth_smallest(v: &[f64], k: usize) -> f64 {
    *v.iter()
        .find(|x| v.iter().filter(|y| y < x).count() < k && k <= v.iter().filter(|y| y <= x).count())
        .unwrap()
}

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=1000);
        let v: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(-400i32..400)) / 8.0).collect();
        let quarters: usize = rng.gen_range(0..=400);
        let rank = (quarters * n).div_ceil(400).max(1);
        let got = percentile(&v, quarters as f64 / 4.0).map_err(|e| e.to_string())?;
        ensure(got == kth_smallest(&v, rank), || format!("percentile n={n} p={}", quarters as f64 / 4.0))?;
        let want = if n % 2 == 1 {
            kth_smallest(&v, n / 2 + 1)
        } else {
            (kth_smallest(&v, n / 2) + kth_smallest(&v, n / 2 + 1)) / 2.0
        };
        ensure(median(&v).map_err(|e| e.to_string())? == want, || format!("median n={n}"))?;
    }
    Ok("1000 arrays exact".into())
}

fn random_layout(rng: &mut ChaCha8Rng, table: bool) -> (OcrDocument, Vec<PlantedValues>) {
    let jitter = rng.gen_range(0.0..=OCR_MAX_JITTER);
    if table {
        let day = chrono::NaiveDate::from_ymd_opt(2022, 6, rng.gen_range(1..=28)).unwrap();
        let rows: Vec<_> = (0..rng.gen_range(3..=6))
            .map(|h| (day.and_hms_opt(h, 0, 0).unwrap(), PlantedValues::random(rng)))
            .collect();
        let doc = table_layout(rng, "t", &rows, "Starlink", jitter);
        (doc, rows.into_iter().map(|(_, v)| v).collect())
    } else {
        let v = PlantedValues::random(rng);
        let style = if rng.gen_bool(0.5) { SimpleStyle::Horizontal } else { SimpleStyle::Vertical };
        let doc = simple_layout(rng, "s", &v, style, "SpaceX Starlink", "Seattle, WA", None, jitter);
        (doc, vec![v])
    }
}

fn criterion_5() -> Check {
    let spec = LabelSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut right, mut wrong, mut total) = (0usize, 0usize, 0usize);
    for i in 0..300 {
        let (doc, planted) = random_layout(&mut rng, i >= 200);
        total += 3 * planted.len();
        let Ok(x) = extract(&doc, &spec) else {
            continue;
        };
        if x.reports.len() != planted.len() {
            wrong += 1;
            continue;
        }
        for (r, v) in x.reports.iter().zip(&planted) {
            for (got, want) in [
                (Some(r.download.value), &v.download),
                (r.upload.map(|m| m.value), &v.upload),
                (r.latency.map(|m| m.value), &v.latency),
            ] {
                match got {
                    Some(g) if g == want.parse::<f64>().unwrap() => right += 1,
                    Some(_) => wrong += 1,
                    None => {}
                }
            }
        }
    }
    let rate = right as f64 / total as f64;
    ensure(wrong == 0, || format!("{wrong} incorrect values emitted"))?;
    ensure(rate >= OCR_MIN_RECOVERY, || format!("recovered {right}/{total}"))?;
    for i in 0..50 {
        let (doc, _) = random_layout(&mut rng, i % 2 == 0);
        let s = rng.gen_range(0.25..4.0);
        let (dx, dy) = (rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0));
        let mut moved = doc.clone();
        moved.width = doc.width * s + dx;
        moved.height = doc.height * s + dy;
        for t in &mut moved.tokens {
            t.x = t.x * s + dx;
            t.y = t.y * s + dy;
            t.w *= s;
            t.h *= s;
        }
        let a = extract(&doc, &spec).map(|x| x.reports);
        let b = extract(&moved, &spec).map(|x| x.reports);
        ensure(a == b, || format!("transform {i} changed the extraction"))?;
    }
    Ok(format!("{right}/{total} recovered ({:.2}%), 0 wrong, 50 transforms invariant", 100.0 * rate))
}

fn criterion_6(g: &Golden) -> Check {
    let trends = read_csv(&g.cfg.out.join("trends.csv"))?;
    let reports = read_csv(&g.cfg.out.join("reports.csv"))?;
    let bins = read_json(&g.cfg.out.join("bins.json"))?;
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let month_of: HashMap<(String, String), String> = bins
        .as_array()
        .ok_or("bins.json")?
        .iter()
        .map(|b| {
            (
                (b["source_id"].as_str().unwrap_or("").to_string(), b["table_row"].to_string()),
                b["month"].as_str().unwrap_or("").to_string(),
            )
        })
        .collect();
    for r in &reports {
        let row = if r["row"].is_empty() { "null".to_string() } else { r["row"].clone() };
        let m = month_of.get(&(r["source_id"].clone(), row)).ok_or("report without bin")?;
        values.entry(m.clone()).or_default().push(r["download_mbps"].parse().map_err(|_| "download_mbps")?);
    }
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for row in &trends {
        let Some(v) = values.get(&row["month"]) else {
            continue;
        };
        if v.len() < SUBSAMPLE_MIN_SAMPLES {
            continue;
        }
        let q1 = percentile(v, 25.0).unwrap();
        let q3 = percentile(v, 75.0).unwrap();
        let full: f64 = row["median_mbps"].parse().map_err(|_| "median")?;
        ensure(q3 - q1 <= SUBSAMPLE_MAX_IQR * full, || format!("{} IQR too wide for the check", row["month"]))?;
        let p90: f64 = row["median_p90"].parse().map_err(|_| "median_p90")?;
        let dev = (p90 - full).abs() / full;
        worst = worst.max(dev);
        ensure(dev <= SUBSAMPLE_TOLERANCE, || format!("{} deviates {:.1}%", row["month"], 100.0 * dev))?;
        let a = subsample_medians(v, &[0.9], 9).map_err(|e| e.to_string())?;
        let b = subsample_medians(v, &[0.9], 9).map_err(|e| e.to_string())?;
        ensure(a == b, || "subsampling is not deterministic".into())?;
        checked += 1;
    }
    ensure(checked > 0, || "no month has enough samples".into())?;
    Ok(format!("{checked} dense months, worst deviation {:.2}%", 100.0 * worst))
}

fn criterion_7() -> Check {
    const BENIGN: &[&str] = &[
        "is it down for anyone",
        "no outage here, works great",
        "back online after the outage, works fine now",
        "offline for the move, dish works great",
        "no service issue today, all good",
        "dish on the roof",
    ];
    let lex = Lexicon::builtin();
    let stop = StopWords::english();
    let lib = load_library("outage\ndown\noffline\nno service\n", &stop).map_err(|e| e.to_string())?.library;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let start = chrono::NaiveDate::from_ymd_opt(2022, 1, 1).unwrap();
    let corpora = 300;
    for _ in 0..corpora {
        let mut posts = Vec::new();
        let mut comments = Vec::new();
        for i in 0..rng.gen_range(1..30) {
            let ts = day_start(start) + rng.gen_range(0..30) * 86_400;
            let id = format!("p{i}");
            posts.push(Post {
                id: id.clone(),
                created_at: ts,
                title: BENIGN[rng.gen_range(0..BENIGN.len())].into(),
                body: String::new(),
                upvotes: 0,
                comment_count: 0,
                urls: vec![],
                media_refs: vec![],
                removed: false,
                extra: Default::default(),
            });
            for j in 0..rng.gen_range(0..5) {
                comments.push(Comment {
                    id: format!("c{i}_{j}"),
                    parent_id: id.clone(),
                    post_id: id.clone(),
                    created_at: ts + 60 * (j + 1),
                    body: BENIGN[rng.gen_range(0..BENIGN.len())].into(),
                    upvotes: 0,
                    removed: false,
                    extra: Default::default(),
                });
            }
        }
        let threads = build_threads(&posts, &comments);
        let scores: HashMap<String, SentimentScore> = posts
            .iter()
            .map(|p| (p.id.clone(), score_text(&p.text(), &lex)))
            .chain(comments.iter().map(|c| (c.id.clone(), score_text(&c.body, &lex))))
            .collect();
        let q = qualify_threads(&threads.threads, &lib, &scores, &stop, QualifyRule::NegativeDominant);
        ensure(q.is_empty(), || format!("benign thread {} counted", q[0].post_id))?;
        let series = keyword_day_series(&q, start, start + chrono::TimeDelta::days(40));
        ensure(series.counts.iter().all(|c| *c == 0), || "benign keyword counted".into())?;
    }
    Ok(format!("{corpora} random corpora, no benign thread counted"))
}

fn criterion_8() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let vocab = ["a", "b", "c", "dish", "down", "up"];
    for d in 0..500 {
        let doc: Vec<String> = (0..rng.gen_range(0..=20))
            .map(|_| vocab[rng.gen_range(0..vocab.len())].to_string())
            .collect();
        let stream = TokenStream { tokens: doc.clone() };
        for n in 1..=3 {
            let got = ngram_counts([&stream], n).counts;
            let mut naive: BTreeMap<String, u64> = BTreeMap::new();
            let mut i = 0;
            while i + n <= doc.len() {
                *naive.entry(doc[i..i + n].join(" ")).or_default() += 1;
                i += 1;
            }
            ensure(got == naive, || format!("doc {d} n={n}"))?;
        }
    }
    Ok("500 documents, n = 1..3 exact".into())
}

fn artifacts(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let p = e.map_err(|e| e.to_string())?.path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        if name != MANIFEST_FILE {
            out.insert(name, fs::read(&p).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

fn manifest_without_time(dir: &Path) -> Result<Value, String> {
    let mut m = read_json(&dir.join(MANIFEST_FILE))?;
    m.as_object_mut().ok_or("manifest")?.remove("generated_at");
    Ok(m)
}

fn criterion_9(g: &Golden) -> Check {
    let first = artifacts(&g.cfg.out)?;
    let first_manifest = manifest_without_time(&g.cfg.out)?;
    run(Command::Report, &g.cfg).map_err(|e| e.to_string())?;
    ensure(artifacts(&g.cfg.out)? == first, || "second report run changed an artifact".into())?;
    ensure(manifest_without_time(&g.cfg.out)? == first_manifest, || "manifest changed beyond its timestamp".into())?;
    let mut split = g.cfg.clone();
    split.out = g.dir.join("by-command");
    for c in Command::STAGES {
        run(c, &split).map_err(|e| e.to_string())?;
    }
    ensure(artifacts(&split.out)? == first, || "individual commands differ from report".into())?;
    Ok(format!("{} artifacts byte-identical across runs and commands", first.len()))
}

fn criterion_10(g: &Golden) -> Check {
    ensure(g.cfg.sentiment.provider != SentimentKind::Remote, || "golden run used a remote provider".into())?;
    let mut rec = g.cfg.clone();
    rec.out = g.dir.join("recorded");
    rec.sentiment.record_dir = Some(g.dir.join("sentiment-cache"));
    run(Command::Report, &rec).map_err(|e| e.to_string())?;
    let mut replay = g.cfg.clone();
    replay.out = g.dir.join("replayed");
    replay.sentiment.provider = SentimentKind::Replay;
    replay.sentiment.replay_dir = rec.sentiment.record_dir.clone();
    let outcome = run(Command::Report, &replay).map_err(|e| e.to_string())?;
    ensure(outcome.exit_code() == 0, || format!("replay run exited {}", outcome.exit_code()))?;
    ensure(artifacts(&replay.out)? == artifacts(&g.cfg.out)?, || "replayed artifacts differ".into())?;
    Ok("report replays from recorded fixtures with identical artifacts".into())
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let golden = golden(tmp.path());
    let g = golden.as_ref();
    let with_golden = |f: fn(&Golden) -> Check| move || g.map_err(|e| format!("golden run failed: {e}")).and_then(f);
    let criteria: Vec<Criterion> = vec![
        ("1 golden fixture end-to-end", Box::new(with_golden(criterion_1))),
        ("2 strong threshold is inclusive", Box::new(criterion_2)),
        ("3 Pos equals independent recount", Box::new(with_golden(criterion_3))),
        ("4 percentile and median oracles", Box::new(criterion_4)),
        ("5 OCR robustness and invariance", Box::new(criterion_5)),
        ("6 subsample stability", Box::new(with_golden(criterion_6))),
        ("7 outage qualification precision", Box::new(criterion_7)),
        ("8 n-gram oracle", Box::new(criterion_8)),
        ("9 determinism", Box::new(with_golden(criterion_9))),
        ("10 offline replay", Box::new(with_golden(criterion_10))),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
