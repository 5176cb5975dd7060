//! Synthetic corpora and the benchmark suites: keyword retrieval quality,
//! index vs per-file LLM latency, rollback time against depth, and the
//! share-link lifecycle.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::api::{RollbackTarget, SemanticApis};
use crate::clock::{Clock, ManualClock};
use crate::embedding::{Embedder, HashingEmbedder};
use crate::engine::{Lsfs, Outcome};
use crate::error::{Error, Result};
use crate::gate::{AlwaysApprove, NoApprover};
use crate::llm::{summarize, LlmClient, MockLlm, SummaryInput, BUILTIN_MOCK_RULES};
use crate::parser::ApiCall;
use crate::share::{LinkService, LocalShareStore};
use crate::store::{IndexStore, MatchMode};
use crate::syscalls::SyscallContext;
use crate::versions::{FileKey, VersionRecorder};

pub const CATEGORIES: &[&str] = &["computer-vision", "nlp", "robotics", "systems"];

pub const AUTHORS: &[&str] = &[
    "Emily Zhang",
    "Wei Chen",
    "Priya Natarajan",
    "Lukas Berg",
    "Amara Okafor",
    "Diego Morales",
    "Hana Sato",
    "Omar Haddad",
    "Sofia Rossi",
    "Jonas Keller",
    "Mei Lin",
    "Ravi Kumar",
];

pub const INSTITUTIONS: &[&str] = &[
    "Cambridge University",
    "Columbia University",
    "Tsinghua University",
    "ETH Zurich",
    "Stanford University",
    "University of Tokyo",
];

// filler; none of these contain an author or institution as a substring
const TOPIC_WORDS: &[&[&str]] = &[
    &["convolution", "segmentation", "detection", "pixels", "backbone", "augmentation", "image", "vision"],
    &["translation", "tokens", "attention", "transformer", "corpus", "grammar", "language", "decoder"],
    &["manipulation", "grasping", "locomotion", "control", "actuator", "trajectory", "sensor", "planning"],
    &["scheduler", "kernel", "storage", "latency", "throughput", "cache", "filesystem", "consensus"],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFile {
    pub directory: String,
    pub name: String,
    pub authors: Vec<String>,
    pub institution: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordQuery {
    pub keywords: Vec<String>,
    pub mode: MatchMode,
    pub directory: Option<String>,
    /// `(directory, name)` of every file the generator put a match into.
    pub expected: BTreeSet<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub files: Vec<CorpusFile>,
    pub queries: Vec<KeywordQuery>,
}

impl Corpus {
    /// `n` plain-text papers with known authors and affiliations, plus
    /// keyword queries whose answers come from that bookkeeping rather than
    /// from scanning the text.
    pub fn generate(n: usize, seed: u64) -> Corpus {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut files = Vec::with_capacity(n);
        for i in 0..n {
            let cat = rng.random_range(0..CATEGORIES.len());
            let how_many = rng.random_range(1..=3);
            let mut authors: Vec<String> = AUTHORS.choose_multiple(&mut rng, how_many).map(|a| a.to_string()).collect();
            authors.sort();
            let institution = INSTITUTIONS.choose(&mut rng).expect("non-empty").to_string();
            let words = TOPIC_WORDS[cat];
            let title: Vec<&str> = words.choose_multiple(&mut rng, 3).copied().collect();
            let body: Vec<&str> = (0..rng.random_range(30..80)).map(|_| *words.choose(&mut rng).expect("non-empty")).collect();
            let content = format!(
                "Title: {}\nAuthors: {}\nAffiliation: {}\n\nAbstract: {}.\n",
                title.join(" "),
                authors.join(", "),
                institution,
                body.join(" ")
            );
            files.push(CorpusFile { directory: CATEGORIES[cat].to_string(), name: format!("paper-{i:03}"), authors, institution, content });
        }
        let queries = Self::queries(&files, &mut rng);
        Corpus { files, queries }
    }

    fn queries(files: &[CorpusFile], rng: &mut StdRng) -> Vec<KeywordQuery> {
        let truth = |pred: &dyn Fn(&CorpusFile) -> bool, dir: Option<&str>| -> BTreeSet<(String, String)> {
            files
                .iter()
                .filter(|f| dir.is_none_or(|d| d == f.directory) && pred(f))
                .map(|f| (f.directory.clone(), f.name.clone()))
                .collect()
        };
        let mut out = Vec::new();
        for a in AUTHORS {
            let a = a.to_string();
            out.push(KeywordQuery {
                expected: truth(&|f| f.authors.contains(&a), None),
                keywords: vec![a.clone()],
                mode: MatchMode::Or,
                directory: None,
            });
        }
        for _ in 0..6 {
            let pair: Vec<String> = INSTITUTIONS.choose_multiple(rng, 2).map(|s| s.to_string()).collect();
            out.push(KeywordQuery {
                expected: truth(&|f| pair.contains(&f.institution), None),
                keywords: pair,
                mode: MatchMode::Or,
                directory: None,
            });
        }
        for _ in 0..6 {
            let a = AUTHORS.choose(rng).expect("non-empty").to_string();
            let inst = INSTITUTIONS.choose(rng).expect("non-empty").to_string();
            out.push(KeywordQuery {
                expected: truth(&|f| f.authors.contains(&a) && f.institution == inst, None),
                keywords: vec![a, inst],
                mode: MatchMode::And,
                directory: None,
            });
        }
        for _ in 0..6 {
            let a = AUTHORS.choose(rng).expect("non-empty").to_string();
            let dir = CATEGORIES.choose(rng).expect("non-empty").to_string();
            out.push(KeywordQuery {
                expected: truth(&|f| f.authors.contains(&a), Some(&dir)),
                keywords: vec![a],
                mode: MatchMode::Or,
                directory: Some(dir),
            });
        }
        out
    }

    pub fn load_into(&self, store: &IndexStore) -> Result<()> {
        for f in &self.files {
            store.put_entry(&f.directory, &f.name, &f.content, None)?;
        }
        Ok(())
    }
}

fn fixed_clock() -> Arc<ManualClock> {
    Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()))
}

fn store_for(corpus: &Corpus) -> Result<Arc<IndexStore>> {
    let store = Arc::new(IndexStore::in_memory(Arc::new(HashingEmbedder::new(crate::embedding::DEFAULT_DIM)), fixed_clock()));
    corpus.load_into(&store)?;
    Ok(store)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn micros(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub files: usize,
    pub queries: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub exact_queries: usize,
    pub elapsed_ms: f64,
}

/// Precision and recall of `keywords_retrieve` against the generator's
/// ground truth, pooled over all queries.
pub fn retrieval_suite(sizes: &[usize], seed: u64) -> Result<Vec<RetrievalRow>> {
    let mut rows = Vec::new();
    for &n in sizes {
        let corpus = Corpus::generate(n, seed ^ n as u64);
        let ctx = SyscallContext::detached(store_for(&corpus)?);
        let started = Instant::now();
        let (mut tp, mut fp, mut fneg, mut exact) = (0, 0, 0, 0);
        for q in &corpus.queries {
            let got: BTreeSet<(String, String)> = match ctx.keywords_retrieve(&q.keywords, q.directory.as_deref(), Some(q.mode)) {
                Ok(r) => r.directories.into_iter().zip(r.names).collect(),
                Err(Error::EmptyResult) => BTreeSet::new(),
                Err(e) => return Err(e),
            };
            tp += got.intersection(&q.expected).count();
            fp += got.difference(&q.expected).count();
            fneg += q.expected.difference(&got).count();
            exact += usize::from(got == q.expected);
        }
        let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
        let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fneg == 0 { 1.0 } else { tp as f64 / (tp + fneg) as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        rows.push(RetrievalRow {
            files: n,
            queries: corpus.queries.len(),
            true_positives: tp,
            false_positives: fp,
            false_negatives: fneg,
            precision,
            recall,
            f1,
            exact_queries: exact,
            elapsed_ms,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub files: usize,
    /// Median time of one indexed top-n query.
    pub index_us: f64,
    /// Median time of one serialized pass asking the LLM about every file.
    pub per_file_llm_us: f64,
    pub speedup: f64,
}

/// Index retrieval against the alternative of asking the model about each
/// file in turn. `llm_latency` is added to every mock call (zero measures
/// only the local overhead of the per-file path).
pub fn latency_suite(sizes: &[usize], llm_latency: Duration, reps: usize, seed: u64) -> Result<Vec<LatencyRow>> {
    let query = "attention transformer translation";
    let mut rows = Vec::new();
    for &n in sizes {
        let corpus = Corpus::generate(n, seed ^ n as u64);
        let store = store_for(&corpus)?;
        let mut llm = MockLlm::new();
        if !llm_latency.is_zero() {
            llm = llm.with_latency(llm_latency);
        }
        let mut index = Vec::with_capacity(reps);
        let mut per_file = Vec::with_capacity(reps);
        for _ in 0..reps.max(1) {
            let t = Instant::now();
            let hits = store.topn_semantic(None, query, 3)?;
            index.push(micros(t.elapsed()));
            std::hint::black_box(hits);

            let t = Instant::now();
            for f in store.view().entries() {
                let prompt = format!("Is this file about {query}?\n\n{}", f.content);
                std::hint::black_box(summarize(&llm, SummaryInput::Document(&prompt))?);
            }
            per_file.push(micros(t.elapsed()));
        }
        let (i, p) = (median(index), median(per_file));
        rows.push(LatencyRow { files: n, index_us: i, per_file_llm_us: p, speedup: p / i.max(1e-9) });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollbackRow {
    pub k: usize,
    pub median_us: f64,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollbackReport {
    pub chain_len: usize,
    pub rows: Vec<RollbackRow>,
    /// Least-squares slope of log(time) against log(k).
    pub loglog_slope: f64,
    /// Median time over the deeper half of k divided by the shallower half.
    pub plateau_ratio: f64,
    pub elapsed_ms: f64,
}

impl RollbackReport {
    pub fn all_exact(&self) -> bool {
        self.rows.iter().all(|r| r.exact)
    }
}

pub fn version_content(i: usize, bytes: usize) -> String {
    let line = format!("revision {i:03}: the quick brown fox jumps over the lazy dog\n");
    line.repeat(bytes / line.len() + 1)
}

fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Build a file with `chain_len` recorded versions, then time rollback by
/// count for each k, checking the restored bytes every time. Each
/// repetition gets a fresh history and a fresh mirror directory.
pub fn rollback_suite(chain_len: usize, ks: &[usize], reps: usize, content_bytes: usize) -> Result<RollbackReport> {
    let started = Instant::now();
    let embedder: Arc<dyn Embedder> = Arc::new(HashingEmbedder::new(crate::embedding::DEFAULT_DIM));
    let contents: Vec<String> = (0..=chain_len).map(|i| version_content(i, content_bytes)).collect();
    let key = FileKey::new("bench", "history");
    let mut rows = Vec::new();
    for &k in ks {
        let mut times = Vec::with_capacity(reps);
        let mut exact = true;
        for _ in 0..reps.max(1) {
            let dir = tempfile::tempdir()?;
            let clock = fixed_clock();
            let store = Arc::new(IndexStore::in_memory(embedder.clone(), clock.clone()));
            let ctx = Arc::new(SyscallContext::mirrored(store.clone(), dir.path())?);
            let versions = Arc::new(VersionRecorder::in_memory(clock.clone()));
            let links = Arc::new(LinkService::new(Arc::new(LocalShareStore::in_memory()), clock.clone()));
            let apis = SemanticApis::new(ctx, versions.clone(), links, Arc::new(MockLlm::new()));
            for c in &contents[..chain_len] {
                let e = store.put_entry(&key.directory, &key.name, c, None)?;
                versions.record(&key, &e.metadata, c)?;
                clock.advance(chrono::Duration::seconds(1));
            }
            store.put_entry(&key.directory, &key.name, &contents[chain_len], None)?;

            let t = Instant::now();
            let out = apis.rollback(&key, RollbackTarget::Count { k })?;
            times.push(micros(t.elapsed()));

            // independent oracle: the generator's own list of contents
            let expected = &contents[chain_len - k];
            let on_disk = std::fs::read_to_string(dir.path().join(&key.directory).join(&key.name))?;
            exact &= out.content == *expected && store.get_entry(&key.directory, &key.name)?.content == *expected && on_disk == *expected;
        }
        rows.push(RollbackRow { k, median_us: median(times), exact });
    }
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.k as f64, r.median_us)).collect();
    let half = rows.len() / 2;
    let shallow = median(rows[..half].iter().map(|r| r.median_us).collect());
    let deep = median(rows[half..].iter().map(|r| r.median_us).collect());
    Ok(RollbackReport {
        chain_len,
        loglog_slope: loglog_slope(&points),
        plateau_ratio: if shallow > 0.0 { deep / shallow } else { 1.0 },
        rows,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharingReport {
    pub prompts: usize,
    pub generated: usize,
    pub valid_before_expiry: usize,
    pub accessible_after_expiry: usize,
    pub generation_rate: f64,
    pub validity_rate: f64,
    pub post_expiry_access_rate: f64,
}

/// Prompts used by the sharing suite; every fourth one has no validity and is
/// revoked explicitly instead of expiring.
pub fn sharing_prompts(n: usize) -> Vec<(String, String, bool)> {
    let durations = ["3 months", "2 weeks", "10 days", "1 hour", "45 minutes", "a year", "6 hours"];
    (0..n)
        .map(|i| {
            let name = format!("report-{i:02}");
            let d = durations[i % durations.len()];
            let (prompt, expires) = match i % 4 {
                0 => (format!("Provide a link for {name} that will be active for {d}."), true),
                1 => (format!("Give me a link to {name} that expires in {d}."), true),
                2 => (format!("Make {name} available through a link valid for {d}."), true),
                _ => (format!("Generate a link for {name}."), false),
            };
            (name, prompt, expires)
        })
        .collect()
}

/// Link prompts through the whole pipeline with the mock LLM and the local
/// share store: generate, fetch before expiry, then expire or revoke and
/// fetch again.
pub fn sharing_suite(n: usize) -> Result<SharingReport> {
    let clock = fixed_clock();
    let llm: Arc<dyn LlmClient> = Arc::new(MockLlm::from_jsonl(BUILTIN_MOCK_RULES)?);
    let lsfs = Lsfs::ephemeral(clock.clone(), llm, Arc::new(HashingEmbedder::new(64)));
    let prompts = sharing_prompts(n);
    let mut links = Vec::new();
    for (name, _, _) in &prompts {
        lsfs.store().put_entry("shared", name, &format!("contents of {name}\n"), None)?;
    }
    for (name, prompt, expires) in &prompts {
        let t = lsfs.run_prompt(prompt, &NoApprover);
        if let Some(Outcome::Link(l)) = t.outcome {
            if l.key == FileKey::new("shared", name.as_str()) && l.expires_at.is_some() == *expires {
                links.push((l, name.clone()));
            }
        }
    }
    let generated = links.len();
    let valid = links
        .iter()
        .filter(|(l, name)| lsfs.apis().fetch_shared(&l.token).is_ok_and(|c| c == format!("contents of {name}\n")))
        .count();
    for (l, _) in &links {
        if l.expires_at.is_none() {
            let call = ApiCall::new("revoke_link").with("token", l.token.as_str());
            lsfs.run_call(call, &AlwaysApprove);
        }
    }
    let latest = links.iter().filter_map(|(l, _)| l.expires_at).max().unwrap_or_else(|| clock.now());
    clock.set(latest + chrono::Duration::seconds(1));
    let after = links.iter().filter(|(l, _)| lsfs.apis().fetch_shared(&l.token).is_ok()).count();
    let rate = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(SharingReport {
        prompts: n,
        generated,
        valid_before_expiry: valid,
        accessible_after_expiry: after,
        generation_rate: rate(generated, n),
        validity_rate: rate(valid, generated),
        post_expiry_access_rate: rate(after, generated),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub retrieval: Option<Vec<RetrievalRow>>,
    pub latency: Option<Vec<LatencyRow>>,
    pub rollback: Option<RollbackReport>,
    pub sharing: Option<SharingReport>,
}

impl BenchReport {
    /// Tab-separated tables, one block per suite that ran.
    pub fn tsv(&self) -> String {
        let mut out = String::new();
        if let Some(rows) = &self.retrieval {
            out.push_str("# retrieval\nfiles\tqueries\ttp\tfp\tfn\tprecision\trecall\tf1\texact\tms\n");
            for r in rows {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{:.3}\t{:.3}\t{:.3}\t{}\t{:.2}",
                    r.files, r.queries, r.true_positives, r.false_positives, r.false_negatives, r.precision, r.recall, r.f1, r.exact_queries, r.elapsed_ms
                );
            }
        }
        if let Some(rows) = &self.latency {
            out.push_str("# latency\nfiles\tindex_us\tper_file_llm_us\tspeedup\n");
            for r in rows {
                let _ = writeln!(out, "{}\t{:.1}\t{:.1}\t{:.1}", r.files, r.index_us, r.per_file_llm_us, r.speedup);
            }
        }
        if let Some(r) = &self.rollback {
            let _ = writeln!(out, "# rollback chain_len={} slope={:.3} plateau_ratio={:.3}", r.chain_len, r.loglog_slope, r.plateau_ratio);
            out.push_str("k\tmedian_us\texact\n");
            for row in &r.rows {
                let _ = writeln!(out, "{}\t{:.1}\t{}", row.k, row.median_us, row.exact);
            }
        }
        if let Some(s) = &self.sharing {
            out.push_str("# sharing\nprompts\tgenerated\tvalid\taccessible_after\tgeneration_rate\tvalidity_rate\tpost_expiry_rate\n");
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.2}\t{:.2}\t{:.2}",
                s.prompts, s.generated, s.valid_before_expiry, s.accessible_after_expiry, s.generation_rate, s.validity_rate, s.post_expiry_access_rate
            );
        }
        out
    }
}

/// Randomized corpus helper for property tests: `n` short files over a small
/// vocabulary so cosine ties actually occur.
pub fn random_corpus(rng: &mut impl Rng, n: usize) -> Vec<(String, String, String)> {
    const VOCAB: &[&str] = &["alpha", "beta", "gamma", "delta", "omega", "sigma", "kappa", "zeta"];
    let dirs = ["a", "b", "c"];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let len = rng.random_range(0..5);
        let mut words: Vec<&str> = (0..len).map(|_| *VOCAB.choose(rng).expect("non-empty")).collect();
        words.shuffle(rng);
        out.push((dirs[rng.random_range(0..dirs.len())].to_string(), format!("f{i:03}"), words.join(" ")));
    }
    out
}
