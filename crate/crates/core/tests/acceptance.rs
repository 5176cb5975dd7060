//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test fails
//! if any criterion fails. Criteria run one after another so the timing
//! checks are not disturbed by each other.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use lsfs_core::bench::{latency_suite, random_corpus, retrieval_suite, rollback_suite, sharing_suite};
use lsfs_core::clock::{ManualClock, SystemClock};
use lsfs_core::embedding::{Embedder, EmbeddingVector, HashingEmbedder};
use lsfs_core::engine::Lsfs;
use lsfs_core::gate::{Approver, PendingAction, Verdict};
use lsfs_core::llm::MockLlm;
use lsfs_core::parser::{builtin_fixtures, catalog, evaluate_accuracy, replay_mock, ApiCall, ArgValue, ParamKind, Parser};
use lsfs_core::store::IndexStore;
use lsfs_core::supervisor::Supervisor;
use lsfs_core::syscalls::SyscallContext;
use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn retrieval_oracle() -> Result<String, String> {
    let mut detail = Vec::new();
    for seed in [11, 12, 13] {
        let rows = retrieval_suite(&[10, 20, 40], seed).map_err(|e| e.to_string())?;
        for r in rows {
            ensure(
                r.precision == 1.0 && r.recall == 1.0 && r.f1 == 1.0 && r.exact_queries == r.queries,
                format!("seed {seed}, {} files: P={} R={} F1={} exact {}/{}", r.files, r.precision, r.recall, r.f1, r.exact_queries, r.queries),
            )?;
            ensure(r.elapsed_ms < 5_000.0, format!("{} files took {:.0} ms", r.files, r.elapsed_ms))?;
            if seed == 11 {
                detail.push(format!("{}f:{}q {:.1}ms", r.files, r.queries, r.elapsed_ms));
            }
        }
    }
    Ok(format!("P=R=F1=1.0 on 3 seeds x 10/20/40 files ({})", detail.join(", ")))
}

fn oracle_cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.values().iter().zip(b.values()) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
    }
}

fn semantic_topn() -> Result<String, String> {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(2024);
    let embedder = Arc::new(HashingEmbedder::new(64));
    let words = ["alpha", "beta", "gamma", "delta", "omega", "sigma"];
    let mut max_files = 0;
    for round in 0..1_000 {
        let n_files = rng.random_range(1..=200);
        max_files = max_files.max(n_files);
        let files = random_corpus(&mut rng, n_files);
        let store = IndexStore::in_memory(embedder.clone(), Arc::new(SystemClock::new()));
        for (d, name, content) in &files {
            store.put_entry(d, name, content, None).map_err(|e| e.to_string())?;
        }
        let query = (0..rng.random_range(1..4)).map(|_| *words.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ");
        let n = rng.random_range(1..=12);
        let scope = if rng.random_bool(0.3) { Some(["a", "b", "c"][rng.random_range(0..3)]) } else { None };

        // brute force: score every file, sort, cut
        let q = embedder.embed(&query).map_err(|e| e.to_string())?;
        let mut all: Vec<(f64, &str, &str)> = files
            .iter()
            .filter(|(d, _, _)| scope.is_none_or(|s| s == d))
            .map(|(d, name, content)| (oracle_cosine(&q, &embedder.embed(content).unwrap()), name.as_str(), d.as_str()))
            .collect();
        all.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)).then_with(|| a.2.cmp(b.2)));
        all.truncate(n);

        let got = store.topn_semantic(scope, &query, n).map_err(|e| e.to_string())?;
        let scores = got.scores.as_ref().ok_or("semantic result without scores")?;
        let got: Vec<(f64, String, String)> = (0..got.len()).map(|i| (scores[i], got.names[i].clone(), got.directories[i].clone())).collect();
        let want: Vec<(f64, String, String)> = all.iter().map(|(s, n, d)| (*s, n.to_string(), d.to_string())).collect();
        ensure(got == want, format!("round {round}: query {query:?} n={n} scope={scope:?}\n got {got:?}\nwant {want:?}"))?;
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!("1000 corpora up to {max_files} files identical to brute force in {secs:.1} s"))
}

/// Simulated cost of one LLM round trip on the per-file path. Hosted models
/// take hundreds of milliseconds; 1 ms keeps the comparison conservative.
const SIMULATED_LLM_CALL: Duration = Duration::from_millis(1);

fn table2_speed() -> Result<String, String> {
    let rows = latency_suite(&[10, 20, 40], SIMULATED_LLM_CALL, 7, 5).map_err(|e| e.to_string())?;
    let at40 = rows.iter().find(|r| r.files == 40).unwrap();
    let desc = rows.iter().map(|r| format!("{}f {:.1}x", r.files, r.speedup)).collect::<Vec<_>>().join(", ");
    ensure(at40.speedup >= 2.0, format!("index only {:.2}x faster at 40 files ({desc})", at40.speedup))?;
    // the per-file path must fall further behind as the corpus grows
    let at10 = rows.iter().find(|r| r.files == 10).unwrap();
    let index_growth = at40.index_us / at10.index_us;
    let llm_growth = at40.per_file_llm_us / at10.per_file_llm_us;
    ensure(index_growth < llm_growth, format!("index grew {index_growth:.2}x vs per-file {llm_growth:.2}x ({desc})"))?;
    Ok(format!("speedup {desc}; growth 10->40 files index {index_growth:.2}x, per-file {llm_growth:.2}x"))
}

fn rollback_scaling() -> Result<String, String> {
    let ks: Vec<usize> = (5..=40).step_by(5).collect();
    let r = rollback_suite(40, &ks, 15, 4096).map_err(|e| e.to_string())?;
    let curve = r.rows.iter().map(|row| format!("k{}={:.0}us", row.k, row.median_us)).collect::<Vec<_>>().join(" ");
    ensure(r.all_exact(), format!("content mismatch: {:?}", r.rows.iter().filter(|x| !x.exact).map(|x| x.k).collect::<Vec<_>>()))?;
    ensure(r.loglog_slope < 2.0, format!("log-log slope {:.2} ({curve})", r.loglog_slope))?;
    ensure(r.plateau_ratio <= 2.0, format!("deep/shallow ratio {:.2} ({curve})", r.plateau_ratio))?;
    ensure(r.elapsed_ms < 30_000.0, format!("suite took {:.0} ms", r.elapsed_ms))?;
    Ok(format!("byte-exact for k=5..40, slope {:.2}, plateau ratio {:.2}, {:.0} ms ({curve})", r.loglog_slope, r.plateau_ratio, r.elapsed_ms))
}

fn link_lifecycle() -> Result<String, String> {
    let r = sharing_suite(20).map_err(|e| e.to_string())?;
    ensure(r.generated == 20, format!("generated {}/20", r.generated))?;
    ensure(r.valid_before_expiry == 20, format!("valid before expiry {}/20", r.valid_before_expiry))?;
    ensure(r.accessible_after_expiry == 0, format!("{} links still served after expiry/revocation", r.accessible_after_expiry))?;
    Ok("20/20 generated, 20/20 served before expiry, 0/20 served after".into())
}

fn parser_replay() -> Result<String, String> {
    let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2024, 5, 1, 12, 0, 0).unwrap()));
    let parser = Parser::new(clock);
    let fixtures = builtin_fixtures(&parser);
    ensure(fixtures.len() == 120, format!("{} fixtures", fixtures.len()))?;
    let gold = evaluate_accuracy(&fixtures, &replay_mock(&fixtures, |_, _| false), &parser);
    ensure(gold.macro_average == 1.0, format!("gold replay macro {}: {:?}", gold.macro_average, gold.misses))?;
    for a in &gold.per_api {
        ensure(a.accuracy == 1.0 && a.total == 30, format!("{}: {}/{}", a.api, a.correct, a.total))?;
    }
    // corrupt the first 3 of every 30
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mock = replay_mock(&fixtures, |_, fx| {
        let c = seen.entry(fx.expected.api.clone()).or_default();
        *c += 1;
        *c <= 3
    });
    let bad = evaluate_accuracy(&fixtures, &mock, &parser);
    for a in &bad.per_api {
        ensure(a.correct == 27 && (a.accuracy - 0.9).abs() < 1e-12, format!("{}: {}/{}", a.api, a.correct, a.total))?;
    }
    ensure((bad.macro_average - 0.9).abs() < 1e-12, format!("corrupted macro {}", bad.macro_average))?;
    Ok(format!("gold {:.2} on {} APIs, 10% corruption {:.2}", gold.macro_average, gold.per_api.len(), bad.macro_average))
}

fn disk_snapshot(root: &Path) -> BTreeMap<(String, String), String> {
    let mut out = BTreeMap::new();
    for d in fs::read_dir(root).unwrap().flatten() {
        let dname = d.file_name().to_string_lossy().to_string();
        if dname.starts_with('.') || !d.path().is_dir() {
            continue;
        }
        for f in fs::read_dir(d.path()).unwrap().flatten() {
            let fname = f.file_name().to_string_lossy().to_string();
            out.insert((dname.clone(), fname), fs::read_to_string(f.path()).unwrap());
        }
    }
    out
}

fn store_snapshot(store: &IndexStore) -> BTreeMap<(String, String), String> {
    store.view().entries().map(|e| ((e.metadata.directory.clone(), e.metadata.display_name.clone()), e.content.clone())).collect()
}

fn supervisor_convergence() -> Result<String, String> {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let store = Arc::new(IndexStore::in_memory(Arc::new(HashingEmbedder::new(64)), Arc::new(SystemClock::new())));
    let ctx = Arc::new(SyscallContext::mirrored(store.clone(), root).map_err(|e| e.to_string())?);
    let sup = Arc::new(Supervisor::new(ctx).map_err(|e| e.to_string())?);
    let mut rng = StdRng::seed_from_u64(77);
    let dirs = ["d0", "d1", "d2", "d3"];
    for d in dirs {
        fs::create_dir_all(root.join(d)).unwrap();
        for i in 0..5 {
            fs::write(root.join(d).join(format!("f{i:02}")), format!("seed {d} {i}")).unwrap();
        }
    }
    sup.scan_once().map_err(|e| e.to_string())?;
    ensure(store_snapshot(&store) == disk_snapshot(root), "initial import differs from disk")?;

    let interval = 200u64;
    sup.start(interval).map_err(|e| e.to_string())?;
    for step in 0..100 {
        let d = dirs.choose(&mut rng).unwrap();
        let name = format!("f{:02}", rng.random_range(0..12));
        let path = root.join(d).join(&name);
        match rng.random_range(0..3) {
            0 => {
                fs::create_dir_all(root.join(d)).unwrap();
                fs::write(&path, format!("edit {step} {}", rng.random::<u32>())).unwrap();
            }
            1 => {
                let _ = fs::remove_file(&path);
            }
            _ => {
                fs::create_dir_all(root.join(d)).unwrap();
                fs::write(&path, format!("create {step}\nline two {}", rng.random::<u16>())).unwrap();
            }
        }
        if step % 10 == 0 {
            std::thread::sleep(Duration::from_millis(15));
        }
    }
    let quiesced = Instant::now();
    let truth = disk_snapshot(root);
    let mut converged_after = None;
    while quiesced.elapsed() < Duration::from_millis(4 * interval) {
        if store_snapshot(&store) == truth {
            converged_after = Some(quiesced.elapsed());
            break;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    sup.stop();
    let after = converged_after.ok_or("store never matched disk")?;
    ensure(after <= Duration::from_millis(2 * interval), format!("converged after {after:?}, more than 2 periods of {interval} ms"))?;
    let again = sup.scan_once().map_err(|e| e.to_string())?;
    ensure(again.is_quiet(), format!("second scan not empty: {again:?}"))?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 20.0, format!("took {secs:.1} s"))?;
    Ok(format!("{} files match disk {} ms after quiescence (period {interval} ms), rescan quiet", truth.len(), after.as_millis()))
}

struct Fixed(Option<bool>);

impl Approver for Fixed {
    fn approve(&self, _: &PendingAction) -> Option<bool> {
        self.0
    }
}

const NAMES: &[&str] = &["a", "b", "c", "cnn", "notes.txt"];
const DIRS: &[&str] = &["d1", "d2", "d3"];
const WORDS: &[&str] = &["alpha", "beta", "gamma", "delta"];

fn random_value(rng: &mut StdRng, param: &str, kind: &ParamKind) -> ArgValue {
    match kind {
        ParamKind::Integer { .. } | ParamKind::Duration => ArgValue::Int(rng.random_range(-1..6) * if matches!(kind, ParamKind::Duration) { 3600 } else { 1 }),
        ParamKind::Enum { values } => {
            if rng.random_bool(0.05) {
                ArgValue::Text("bogus".into())
            } else {
                ArgValue::Text(values.choose(rng).unwrap().to_string())
            }
        }
        ParamKind::Timestamp => ArgValue::Text(format!("2024-0{}-1{}T00:00:00.000Z", rng.random_range(1..6), rng.random_range(0..9))),
        ParamKind::TextList => ArgValue::List((0..rng.random_range(0..3)).map(|_| WORDS.choose(rng).unwrap().to_string()).collect()),
        ParamKind::Path => ArgValue::Text("/nonexistent/import".into()),
        ParamKind::Text => {
            let pool: &[&str] = match param {
                "directory" | "dir1" | "dir2" | "source_directory" => DIRS,
                "new_directory" => &["g1", "g2", "d1"],
                "token" => &["nope", "abc"],
                "name" | "name1" | "name2" => NAMES,
                _ => WORDS,
            };
            ArgValue::Text(pool.choose(rng).unwrap().to_string())
        }
    }
}

fn reseed(l: &Lsfs, rng: &mut StdRng) {
    for d in DIRS {
        for n in NAMES {
            if !l.store().contains(d, n) && rng.random_bool(0.5) {
                let body = (0..3).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ");
                l.store().put_entry(d, n, &body, None).unwrap();
            }
        }
    }
}

fn gate_soundness() -> Result<String, String> {
    let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2024, 6, 1, 0, 0, 0).unwrap()));
    let l = Lsfs::ephemeral(clock.clone(), Arc::new(MockLlm::new()), Arc::new(HashingEmbedder::new(32)));
    let mut rng = StdRng::seed_from_u64(9001);
    let schemas = catalog();
    let (mut danger_changes, mut rejections, mut danger_calls) = (0usize, 0usize, 0usize);
    for i in 0..10_000 {
        if i % 200 == 0 {
            reseed(&l, &mut rng);
        }
        let schema = schemas.choose(&mut rng).unwrap();
        let mut call = ApiCall::new(schema.api_name);
        for p in &schema.params {
            let include = if p.required { rng.random_bool(0.95) } else { rng.random_bool(0.4) };
            if include {
                let v = random_value(&mut rng, p.name, &p.kind);
                call.args.insert(p.name.to_string(), v);
            }
        }
        let decision = match rng.random_range(0..5) {
            0 | 1 => Some(true),
            2 | 3 => Some(false),
            _ => None,
        };
        let before = l.store().state_hash();
        let t = l.run_call(call.clone(), &Fixed(decision));
        let changed = l.store().state_hash() != before;
        clock.advance(chrono::Duration::seconds(1));

        let verdict = t.approval.as_ref().map(|a| a.verdict);
        if call.is_danger() {
            danger_calls += 1;
            if changed {
                danger_changes += 1;
                ensure(verdict == Some(Verdict::Approved), format!("call {i} {call} changed state with verdict {verdict:?}"))?;
            }
        }
        if matches!(verdict, Some(Verdict::Rejected | Verdict::Expired)) || verdict.is_none() {
            rejections += 1;
            ensure(!changed, format!("call {i} {call} changed state although {verdict:?}"))?;
        }
        if changed {
            ensure(t.approval.is_some(), format!("call {i} {call} changed state without an audit record"))?;
        }
    }
    // every approved dangerous execution is in the audit trail
    let approved_danger = l.gate().audit().iter().filter(|r| r.danger && r.verdict == Verdict::Approved).count();
    ensure(approved_danger >= danger_changes, format!("{approved_danger} approvals for {danger_changes} destructive changes"))?;
    ensure(danger_changes > 100 && rejections > 1000, format!("weak coverage: {danger_changes} destructive changes, {rejections} refusals"))?;
    Ok(format!("10000 calls: {danger_calls} dangerous, {danger_changes} destructive changes all approved, {rejections} refused/invalid with no state change"))
}

#[test]
fn acceptance() {
    let criteria: &[(&str, Check)] = &[
        ("retrieval oracle equivalence", retrieval_oracle),
        ("semantic top-n equals brute force", semantic_topn),
        ("index retrieval at least 2x faster than per-file LLM pass", table2_speed),
        ("rollback exactness and scaling", rollback_scaling),
        ("link lifecycle", link_lifecycle),
        ("parser replay accuracy", parser_replay),
        ("supervisor convergence", supervisor_convergence),
        ("safety gate soundness", gate_soundness),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("[PRIMARY] PASS {name} ({secs:.1}s): {detail}"),
            Err(why) => {
                println!("[PRIMARY] FAIL {name} ({secs:.1}s): {why}");
                failed.push(*name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
