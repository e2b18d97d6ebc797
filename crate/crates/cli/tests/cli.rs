use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use fiqa_stub::{default_reply, Reply, StubServer};
use serde_json::Value;
use sha2::{Digest, Sha256};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn fiqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fiqa"))
        .args(args)
        .env("NO_COLOR", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("run fiqa")
}

fn ok(args: &[&str]) -> String {
    let out = fiqa(args);
    assert!(
        out.status.success(),
        "fiqa {args:?} failed:\n{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = fiqa(args);
    assert!(!out.status.success(), "fiqa {args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Manifest of the first `n` bundled images, written into `dir`.
fn small_manifest(dir: &Path, n: usize) -> PathBuf {
    let src = fixtures().join("images");
    let lines: Vec<String> = (0..n)
        .map(|i| {
            let path = src.join(format!("face{i:02}.png"));
            format!("{{\"id\":\"face{i:02}\",\"path\":{:?},\"dataset\":\"synthetic\"}}", s(&path))
        })
        .collect();
    let p = dir.join("manifest.jsonl");
    std::fs::write(&p, lines.join("\n") + "\n").unwrap();
    p
}

fn tree_digest(dir: &Path) -> String {
    let mut files: Vec<PathBuf> = Vec::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(dir).unwrap().to_string_lossy().as_bytes());
        h.update(std::fs::read(&f).unwrap());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn every_subcommand_documents_its_flags() {
    for sub in ["generate", "score", "evr", "analyze", "latency", "report"] {
        let help = ok(&[sub, "--help"]);
        for flag in ["--config", "--out", "--seed", "--variant", "--model", "--fmr", "--rho"] {
            assert!(help.contains(flag), "{sub} --help lacks {flag}");
        }
    }
    let err = fails(&["generate", "--no-such-flag"]);
    assert!(err.contains("--no-such-flag"));
}

#[test]
fn generate_is_deterministic_and_validates_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let m = small_manifest(tmp.path(), 4);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let stdout = ok(&["generate", "--manifest", s(&m), "--out", s(out), "--seed", "11"]);
        assert!(stdout.contains("generated 4 mixed images"), "{stdout}");
    }
    assert_eq!(tree_digest(&a), tree_digest(&b));
    let c = tmp.path().join("c");
    ok(&["generate", "--manifest", s(&m), "--out", s(&c), "--seed", "12"]);
    assert_ne!(tree_digest(&a), tree_digest(&c));

    let missing = tmp.path().join("nope.jsonl");
    let err = fails(&["generate", "--manifest", s(&missing), "--out", s(&a)]);
    assert!(err.contains("nope.jsonl"), "{err}");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    small_manifest(tmp.path(), 2);
    let cfg = tmp.path().join("run.toml");
    std::fs::write(
        &cfg,
        "# benchmark settings\nmanifest = \"manifest.jsonl\"\nout = \"from-file\"\nseed = 3\n",
    )
    .unwrap();
    ok(&["generate", "--config", s(&cfg)]);
    assert!(tmp.path().join("from-file/generate_ground_truth.jsonl").exists());
    let flag_out = tmp.path().join("from-flag");
    ok(&["generate", "--config", s(&cfg), "--out", s(&flag_out), "--seed", "3"]);
    assert_eq!(
        std::fs::read(tmp.path().join("from-file/generate_ground_truth.jsonl")).unwrap(),
        std::fs::read(flag_out.join("generate_ground_truth.jsonl")).unwrap()
    );

    std::fs::write(&cfg, "seeed = 3\n").unwrap();
    let err = fails(&["generate", "--config", s(&cfg)]);
    assert!(err.contains("seeed"), "{err}");
}

#[test]
fn score_reports_failures_and_reuses_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let m = small_manifest(tmp.path(), 3);
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = calls.clone();
    let stub = StubServer::builder()
        .responder(move |req| {
            if counter.fetch_add(1, Ordering::SeqCst) == 0 {
                Reply::Content("I would rather not say.".into())
            } else {
                default_reply(req)
            }
        })
        .start();
    let out = tmp.path().join("out");
    let args = ["score", "--manifest", s(&m), "--out", s(&out), "--model", "stub", "--base-url", &stub.base_url()];
    let stdout = ok(&args);
    assert!(stdout.contains("1/3 failed"), "{stdout}");
    let file = out.join("score_stub_simple.jsonl");
    let first = std::fs::read_to_string(&file).unwrap();
    assert_eq!(first.lines().count(), 3);
    assert_eq!(stub.requests(), 3);

    let stdout = ok(&args);
    assert!(stdout.contains("1/3 failed"), "{stdout}");
    assert_eq!(stub.requests(), 3, "warm cache must not hit the network");
    assert_eq!(std::fs::read_to_string(&file).unwrap(), first);
}

#[test]
fn score_fails_when_endpoint_is_unreachable() {
    let tmp = tempfile::tempdir().unwrap();
    let m = small_manifest(tmp.path(), 2);
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, format!("base_url = \"http://127.0.0.1:{port}/v1\"\nretries = 0\nmodel = \"m\"\n")).unwrap();
    let err = fails(&["score", "--config", s(&cfg), "--manifest", s(&m), "--out", s(tmp.path()), "--no-cache"]);
    assert!(err.contains("error"), "{err}");
}

/// 200 images in 100 genuine pairs whose similarity rises with the pair
/// index; the first 37 fall below the calibrated threshold. `good` gives those
/// images the lowest quality, `bad` the highest.
fn evr_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let mut pairs = String::from("id_a,id_b,label,similarity\n");
    let mut good = String::new();
    let mut bad = String::new();
    for k in 0..100 {
        let sim = -0.1 + 0.008 * k as f64;
        let (a, b) = (format!("p{k:03}a"), format!("p{k:03}b"));
        pairs.push_str(&format!("{a},{b},genuine,{sim:.4}\n"));
        let other = format!("p{:03}a", (k + 1) % 100);
        pairs.push_str(&format!("{b},{other},impostor,{:.4}\n", -0.5 + 0.007 * k as f64));
        for id in [&a, &b] {
            let q = k as f64 / 2.0;
            good.push_str(&format!("{{\"image_id\":\"{id}\",\"source\":\"good\",\"variant\":\"baseline\",\"score\":{q},\"parse_status\":\"ok\"}}\n"));
            bad.push_str(&format!("{{\"image_id\":\"{id}\",\"source\":\"bad\",\"variant\":\"baseline\",\"score\":{},\"parse_status\":\"ok\"}}\n", 100.0 - q));
        }
    }
    let p = dir.join("pairs.csv");
    std::fs::write(&p, pairs).unwrap();
    let scores = dir.join("scores.jsonl");
    std::fs::write(&scores, good + &bad).unwrap();
    (p, scores)
}

#[test]
fn evr_ranks_the_better_method_lower() {
    let tmp = tempfile::tempdir().unwrap();
    let (pairs, scores) = evr_fixture(tmp.path());
    let out = tmp.path().join("out");
    let table = ok(&["evr", "--scores", s(&scores), "--pairs", &format!("bb={}", s(&pairs)), "--out", s(&out)]);
    assert!(table.contains("| good |") && table.contains("| bad |"), "{table}");
    let load = |m: &str| -> Vec<f64> {
        let v: Value = serde_json::from_str(&std::fs::read_to_string(out.join(format!("evr_{m}_baseline.json"))).unwrap()).unwrap();
        v["evaluation"]["mean_pauc"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
    };
    let (g, b) = (load("good"), load("bad"));
    assert_eq!(g.len(), 4);
    for (x, y) in g.iter().zip(&b) {
        assert!(x < y, "good {g:?} vs bad {b:?}");
    }
    assert!(out.join("evr_good_baseline_bb.csv").exists());
    assert!(out.join("evr_table.csv").exists());
}

#[test]
fn evr_names_an_unscored_image() {
    let tmp = tempfile::tempdir().unwrap();
    let (pairs, scores) = evr_fixture(tmp.path());
    let text = std::fs::read_to_string(&scores).unwrap();
    let trimmed: String = text
        .lines()
        .filter(|l| !(l.contains("\"p042b\"") && l.contains("\"good\"")))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(&scores, trimmed).unwrap();
    let err = fails(&["evr", "--scores", s(&scores), "--pairs", &format!("bb={}", s(&pairs)), "--out", s(tmp.path())]);
    assert!(err.contains("p042b"), "{err}");
}

fn record(id: &str, source: &str, variant: &str, score: f64) -> String {
    format!("{{\"image_id\":\"{id}\",\"source\":\"{source}\",\"variant\":\"{variant}\",\"score\":{score},\"parse_status\":\"ok\"}}\n")
}

#[test]
fn consistency_needs_two_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let one = tmp.path().join("simple.jsonl");
    std::fs::write(&one, record("a", "m", "simple", 10.0) + &record("b", "m", "simple", 20.0)).unwrap();
    let err = fails(&["analyze", "--mode", "consistency", "--scores", s(&one), "--out", s(tmp.path())]);
    assert!(err.contains("two prompt variants"), "{err}");

    let two = tmp.path().join("utility.jsonl");
    std::fs::write(&two, record("a", "m", "utility", 15.0) + &record("b", "m", "utility", 25.0)).unwrap();
    ok(&["analyze", "--mode", "consistency", "--scores", s(&one), s(&two), "--out", s(tmp.path())]);
    let md = std::fs::read_to_string(tmp.path().join("consistency_m_simple.md")).unwrap();
    assert!(md.contains("| m | simple | utility | 2 | 5.00 | 1.000 | 5.00 |"), "{md}");
}

#[test]
fn distance_mode_flags_monotone_models() {
    let tmp = tempfile::tempdir().unwrap();
    let mut manifest = String::new();
    let mut scores = String::new();
    let means = [("qwen", [16.5, 27.0, 36.5]), ("gemma", [20.1, 19.8, 20.0])];
    for (d, dist) in ["d1", "d2", "d3"].iter().enumerate() {
        for i in 0..4 {
            let id = format!("{dist}_{i}");
            manifest.push_str(&format!("{{\"id\":\"{id}\",\"path\":\"{id}.png\",\"dataset\":\"scface\",\"distance\":\"{dist}\"}}\n"));
            for (model, m) in &means {
                scores.push_str(&record(&id, model, "simple", m[d] + (i as f64 - 1.5)));
            }
        }
    }
    let mp = tmp.path().join("scface.jsonl");
    std::fs::write(&mp, manifest).unwrap();
    let sp = tmp.path().join("scores.jsonl");
    std::fs::write(&sp, scores).unwrap();
    let stdout = ok(&["analyze", "--mode", "distance", "--scores", s(&sp), "--manifest", s(&mp), "--out", s(tmp.path())]);
    assert!(stdout.contains("qwen (simple): monotone = true"), "{stdout}");
    assert!(stdout.contains("gemma (simple): monotone = false"), "{stdout}");
    let md = std::fs::read_to_string(tmp.path().join("distance_qwen_simple.md")).unwrap();
    assert!(md.contains("| d1 | 4 | 16.5 |"), "{md}");
}

#[test]
fn synthetic_perfect_predictor_gives_d0_100() {
    let tmp = tempfile::tempdir().unwrap();
    let m = small_manifest(tmp.path(), 5);
    let out = tmp.path().join("out");
    ok(&["generate", "--manifest", s(&m), "--out", s(&out), "--seed", "2"]);
    let gt = out.join("generate_ground_truth.jsonl");
    let mut scores = String::new();
    for line in std::fs::read_to_string(&gt).unwrap().lines() {
        let item: Value = serde_json::from_str(line).unwrap();
        let v: Vec<bool> = item["vector"].as_array().unwrap().iter().map(|b| b.as_u64() == Some(1)).collect();
        for (id, bits) in [(&item["clean_id"], vec![false; 5]), (&item["mixed_id"], v)] {
            scores.push_str(&format!(
                "{{\"image_id\":{id},\"source\":\"oracle\",\"variant\":\"detection\",\"score\":50,\"flags\":{{\"has_blur\":{},\"has_noise\":{},\"has_low_res\":{},\"has_compression\":{},\"has_bad_lighting\":{},\"quality_score\":50}},\"parse_status\":\"ok\"}}\n",
                bits[0], bits[1], bits[2], bits[3], bits[4]
            ));
        }
    }
    let sp = tmp.path().join("oracle.jsonl");
    std::fs::write(&sp, scores).unwrap();
    ok(&["analyze", "--mode", "synthetic", "--scores", s(&sp), "--ground-truth", s(&gt), "--out", s(&out)]);
    let md = std::fs::read_to_string(out.join("synthetic_oracle_detection.md")).unwrap();
    assert!(md.contains("| oracle | 100.0 | 0.0 | 0.0 | 0.0 | 0.0 | 0.0 |"), "{md}");
    assert!(md.contains("| oracle | 0.0 | 0.0 | 0.0 | 100.0 | 100.0 |"), "{md}");
}

#[test]
fn latency_tracks_stub_delay_and_skips_cache_hits() {
    let tmp = tempfile::tempdir().unwrap();
    let src = fixtures().join("images");
    let lines: String = (0..16)
        .map(|i| format!("{{\"id\":\"f{i}\",\"path\":{:?},\"dataset\":\"x\"}}\n", s(&src.join(format!("face{:02}.png", i % 20)))))
        .collect();
    let m = tmp.path().join("m.jsonl");
    std::fs::write(&m, lines).unwrap();
    let stub = StubServer::builder().delay(Duration::from_millis(10)).start();
    let out = tmp.path().join("out");
    let args = [
        "latency", "--manifest", s(&m), "--out", s(&out), "--model", "stub", "--base-url", &stub.base_url(),
        "--reference", "eDifFIQA=0.7",
    ];
    ok(&args);
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(out.join("latency_stub_simple.json")).unwrap()).unwrap();
    let mean = rep["mean_ms"].as_f64().unwrap();
    assert!((10.0..60.0).contains(&mean), "mean {mean} ms");
    assert_eq!(rep["uncached"], 16);
    let md = std::fs::read_to_string(out.join("latency_stub_simple.md")).unwrap();
    assert!(md.contains("| eDifFIQA | 0.7 | - | - |"), "{md}");

    ok(&args);
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(out.join("latency_stub_simple.json")).unwrap()).unwrap();
    assert!(rep.get("mean_ms").is_none(), "{rep}");
    assert_eq!(rep["cache_hits"], 16);
}

#[test]
fn report_renders_fixture_and_collects_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("evr_table.md"), "| Method |\n| --- |\n| x |\n").unwrap();
    let fixture = fixtures().join("tables/published.json");
    ok(&["report", "--fixture", s(&fixture), "--out", s(tmp.path())]);
    let report = std::fs::read_to_string(tmp.path().join("report.md")).unwrap();
    for golden in ["pauc.md", "l0.md", "l2.md", "hamming.md"] {
        let g = std::fs::read_to_string(fixtures().join("tables").join(golden)).unwrap();
        assert!(report.contains(&g), "report lacks {golden}");
    }
    assert!(report.contains("## evr_table"));

    let empty = tempfile::tempdir().unwrap();
    fails(&["report", "--out", s(empty.path())]);
}
