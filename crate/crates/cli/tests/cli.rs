use std::path::Path;
use std::process::{Command, Output};

fn lanepatch(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lanepatch"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("LANEPATCH_THREADS")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = lanepatch(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--preset", "apollosim-like", "--seed", "5", "--scenes", "40", "--out", "lanes.jsonl"]);
    ok(d, &["gen-gt", "--mode", "patched", "--m", "20", "--in", "lanes.jsonl", "--out", "gt.jsonl"]);
    ok(d, &["ep-infer", "--pred", "gt.jsonl", "--out", "ep.jsonl"]);
    let line = ok(
        d,
        &[
            "eval",
            "--gt",
            "lanes.jsonl",
            "--pred",
            "ep.jsonl",
            "--report",
            "r.json",
            "--per-length-bucket",
            "0:40,40:103",
            "--mode",
            "patched",
            "--m",
            "20",
        ],
    );
    assert!(line.starts_with("recall "), "{line}");
    let r = json(&d.join("r.json"));
    assert!(r["f1"].as_f64().unwrap() > 0.99);
    assert_eq!(r["buckets"].as_array().unwrap().len(), 2);
    assert_eq!(r["label"]["mode"], "patched");

    ok(d, &["report", "--in", "r.json", "--out", "t.md", "--csv", "t.csv"]);
    let md = std::fs::read_to_string(d.join("t.md")).unwrap();
    assert!(md.starts_with("| M | Mode | Rec | Pre | F1 |"), "{md}");
    assert_eq!(md.lines().count(), 3);
    assert!(std::fs::read_to_string(d.join("t.csv")).unwrap().starts_with("M,Mode,Rec,Pre,F1"));
}

#[test]
fn manifest_matches_manual_steps() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let manifest = serde_json::json!({
        "name": "compose",
        "seed": 1,
        "steps": [
            {"id": "eval", "kind": "eval", "gt": "lanes.jsonl", "pred": "ep.jsonl",
             "label": {"mode": "patched", "m": 10}, "out": "eval.json"},
            {"id": "ep", "kind": "ep_infer", "pred": "gt.jsonl", "out": "ep.jsonl"},
            {"id": "gt", "kind": "gen_gt", "mode": "patched", "m": 10, "input": "lanes.jsonl", "out": "gt.jsonl"},
            {"id": "synth", "kind": "synth", "preset": "openlane-like", "scenes": 30, "seed": 9, "out": "lanes.jsonl"}
        ]
    });
    std::fs::write(d.join("m.json"), manifest.to_string()).unwrap();
    ok(d, &["run", "m.json", "--out-dir", "auto"]);

    ok(d, &["synth", "--seed", "9", "--scenes", "30", "--out", "lanes.jsonl"]);
    ok(d, &["gen-gt", "--mode", "patched", "--m", "10", "--in", "lanes.jsonl", "--out", "gt.jsonl"]);
    ok(d, &["ep-infer", "--pred", "gt.jsonl", "--out", "ep.jsonl"]);
    ok(d, &["eval", "--gt", "lanes.jsonl", "--pred", "ep.jsonl", "--report", "eval.json", "--mode", "patched", "--m", "10"]);

    for f in ["lanes.jsonl", "gt.jsonl", "ep.jsonl", "eval.json"] {
        let a = std::fs::read(d.join("auto").join(f)).unwrap();
        let b = std::fs::read(d.join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
    let report = json(&d.join("auto/report.json"));
    assert_eq!(report["reports"].as_array().unwrap().len(), 1);
    assert!(d.join("auto/table.md").exists());
}

#[test]
fn empty_manifest_does_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("m.json"), r#"{"name": "empty", "seed": 0, "steps": []}"#).unwrap();
    ok(d, &["run", "m.json", "--out-dir", "out"]);
    assert!(!d.join("out").exists());
}

#[test]
fn configuration_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--seed", "1", "--scenes", "2", "--out", "lanes.jsonl"]);
    let bad_m = lanepatch(d, &["gen-gt", "--mode", "short", "--m", "1", "--in", "lanes.jsonl", "--out", "gt.jsonl"]);
    assert_eq!(code(&bad_m), 2);
    assert!(!d.join("gt.jsonl").exists());

    std::fs::write(d.join("bad.json"), r#"{"name": "x", "seed": 0, "steps": [{"id": "a", "kind": "nope"}]}"#).unwrap();
    assert_eq!(code(&lanepatch(d, &["run", "bad.json", "--out-dir", "o"])), 2);

    let cyclic = serde_json::json!({"name": "c", "seed": 0, "steps": [
        {"id": "a", "kind": "ep_infer", "pred": "x.jsonl", "out": "y.jsonl"},
        {"id": "b", "kind": "ep_infer", "pred": "y.jsonl", "out": "x.jsonl"}
    ]});
    std::fs::write(d.join("cyclic.json"), cyclic.to_string()).unwrap();
    assert_eq!(code(&lanepatch(d, &["run", "cyclic.json", "--out-dir", "o"])), 2);

    assert_eq!(code(&lanepatch(d, &["attn-bench", "--c", "10", "--heads", "4", "--no-timing"])), 2);
    assert_eq!(code(&lanepatch(d, &["eval", "--gt", "lanes.jsonl", "--pred", "lanes.jsonl", "--iou", "1.5", "--report", "r.json"])), 2);
    assert_eq!(code(&lanepatch(d, &["frobnicate"])), 2);

    let threads = Command::new(env!("CARGO_BIN_EXE_lanepatch"))
        .args(["attn-bench", "--no-timing"])
        .env("LANEPATCH_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&threads), 2);
}

#[test]
fn failing_step_exits_3_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let manifest = serde_json::json!({"name": "f", "seed": 0, "inputs": ["missing.jsonl"], "steps": [
        {"id": "patch_missing", "kind": "ep_infer", "pred": "missing.jsonl", "out": "ep.jsonl"}
    ]});
    std::fs::write(d.join("m.json"), manifest.to_string()).unwrap();
    let out = lanepatch(d, &["run", "m.json", "--out-dir", "o"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("patch_missing"));
    assert!(!d.join("o/report.json").exists());

    std::fs::write(d.join("broken.jsonl"), "{\"scene_id\": \"s\"}\n").unwrap();
    let out = lanepatch(d, &["ep-infer", "--pred", "broken.jsonl", "--out", "ep.jsonl"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn attn_bench_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["attn-bench", "--json", "--no-timing"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!((v["n"].as_u64(), v["m"].as_u64(), v["c"].as_u64()), (Some(40), Some(30), Some(256)));
    assert!(v["convention"].as_str().unwrap().len() > 10);
    assert!(v["pla"]["seconds"].is_null());
    let pla = v["pla"]["attention_macs"].as_u64().unwrap();
    let msa = v["msa"]["attention_macs"].as_u64().unwrap();
    assert!(pla < msa);
    assert!(v["msa_over_pla_attention"].as_f64().unwrap() > 10.0);

    let unit = ok(tmp.path(), &["attn-bench", "--json", "--no-timing", "--c", "1", "--heads", "1"]);
    let v: serde_json::Value = serde_json::from_str(&unit).unwrap();
    assert_eq!(v["pla"]["score_units"], 88_040);
    assert_eq!(v["msa"]["score_units"], 1_537_600);

    let timed = ok(tmp.path(), &["attn-bench", "--json", "--n", "4", "--m", "5", "--c", "16", "--heads", "2"]);
    let v: serde_json::Value = serde_json::from_str(&timed).unwrap();
    assert!(v["msa"]["seconds"].as_f64().unwrap() >= 0.0);
}
