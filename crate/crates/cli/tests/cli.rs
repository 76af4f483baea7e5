use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffconv")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn stencil_lapx_on_8x8() {
    let t = TempDir::new().unwrap();
    let o = run(t.path(), &["stencil", "--grid", "8x8", "--term", "lapx", "--out", "s"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("pattern [1, -2, 1] scale 0.062500 (1/16)"), "{}", stdout(&o));
    let r = read_json(t.path().join("s/stencil.json"));
    assert_eq!(r["scale"].as_f64().unwrap(), 1.0 / 16.0);
    assert_eq!(r["max_deviation"].as_f64().unwrap(), 0.0);
    assert!(t.path().join("s/resolved_config.json").exists());
    assert!(t.path().join("s/metadata.json").exists());
}

#[test]
fn stencil_mass_is_centre_one() {
    let t = TempDir::new().unwrap();
    let o = run(t.path(), &["stencil", "--grid", "8x8", "--term", "mass", "--out", "s"]);
    assert_eq!(code(&o), 0);
    let r = read_json(t.path().join("s/stencil.json"));
    let e = r["entries"].as_array().unwrap();
    assert_eq!(e.len(), 1);
    assert_eq!(e[0]["offset"], serde_json::json!([0, 0, 0]));
    assert_eq!(e[0]["value"].as_f64().unwrap(), 1.0);
}

#[test]
fn stencil_usage_errors() {
    let t = TempDir::new().unwrap();
    assert_eq!(code(&run(t.path(), &["stencil", "--grid", "2x2", "--term", "lapx"])), 2);
    assert_eq!(code(&run(t.path(), &["stencil", "--term", "lapq"])), 2);
    assert_eq!(code(&run(t.path(), &["stencil", "--grid", "8by8"])), 2);
    assert_eq!(code(&run(t.path(), &["stencil", "--no-such-flag"])), 2);
}

#[test]
fn unknown_config_keys_are_listed() {
    let t = TempDir::new().unwrap();
    fs::write(t.path().join("c.json"), r#"{"grid": "5x5", "colour": "red"}"#).unwrap();
    let o = run(t.path(), &["stencil", "--config", "c.json", "--set", "shape.size=3"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("colour") && stderr(&o).contains("shape"), "{}", stderr(&o));
    assert_eq!(code(&run(t.path(), &["stencil", "--config", "missing.json"])), 1);
}

#[test]
fn config_file_then_overrides() {
    let t = TempDir::new().unwrap();
    fs::write(t.path().join("c.json"), r#"{"grid": "5x5x5", "term": "gradz"}"#).unwrap();
    let o = run(t.path(), &["stencil", "--config", "c.json", "--term", "lapz", "--set", "h=0.5", "--out", "s"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let c = read_json(t.path().join("s/resolved_config.json"));
    assert_eq!(c["grid"], "5x5x5");
    assert_eq!(c["term"], "lapz");
    assert_eq!(c["h"].as_f64().unwrap(), 0.5);
}

#[test]
fn assemble_collinear_triplet() {
    let t = TempDir::new().unwrap();
    fs::write(t.path().join("c.csv"), "0,0,0\n1,0,0\n2,0,0\n").unwrap();
    let o = run(t.path(), &["assemble", "--cloud", "c.csv", "--k", "1", "--out", "ops"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = read_json(t.path().join("ops/manifest.json"));
    let ops = m["operators"].as_array().unwrap();
    assert_eq!((ops[0]["name"].as_str().unwrap(), ops[0]["rows"].as_u64().unwrap()), ("gradient", 6));
    assert_eq!(ops[0]["cols"].as_u64().unwrap(), 3);
    for op in ops {
        let text = fs::read_to_string(t.path().join("ops").join(op["file"].as_str().unwrap())).unwrap();
        let entries = text.lines().filter(|l| !l.starts_with('%')).count() - 1;
        assert_eq!(entries as u64, op["nnz"].as_u64().unwrap());
    }
}

#[test]
fn unreadable_clouds_exit_one() {
    let t = TempDir::new().unwrap();
    fs::write(t.path().join("empty.csv"), "").unwrap();
    assert_eq!(code(&run(t.path(), &["assemble", "--cloud", "empty.csv", "--k", "1"])), 1);
    assert_eq!(code(&run(t.path(), &["assemble", "--cloud", "nope.csv", "--k", "1"])), 1);
    assert_eq!(code(&run(t.path(), &["pool", "--cloud", "empty.csv"])), 1);
    assert_eq!(code(&run(t.path(), &["assemble"])), 2);
}

#[test]
fn pool_path_of_eight() {
    let t = TempDir::new().unwrap();
    let path: String = (0..8).map(|i| format!("{i},0,0\n")).collect();
    fs::write(t.path().join("p.csv"), path).unwrap();
    let o = run(t.path(), &["pool", "--cloud", "p.csv", "--k", "1", "--depth", "2", "--out", "h"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = read_json(t.path().join("h/summary.json"));
    assert_eq!(s["hierarchy"]["level_sizes"], serde_json::json!([8, 4, 2]));
    assert!(s["prolongation_row_sum_error"].as_f64().unwrap() <= 1e-12);
    assert!(t.path().join("h/prolongation_1.mtx").exists());

    let o = run(t.path(), &["pool", "--cloud", "p.csv", "--k", "1", "--depth", "0", "--out", "h0"]);
    assert_eq!(code(&o), 0);
    let s = read_json(t.path().join("h0/summary.json"));
    assert_eq!(s["hierarchy"]["level_sizes"], serde_json::json!([8]));
}

#[test]
fn gen_data_counts() {
    let t = TempDir::new().unwrap();
    let o = run(t.path(), &["gen-data", "--classes", "sphere,cube,torus,cone", "--n", "50", "--points", "16", "--out", "d"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let idx = read_json(t.path().join("d/index.json"));
    let clouds = idx["clouds"].as_array().unwrap();
    assert_eq!(clouds.len(), 200);
    assert_eq!(clouds.iter().filter(|c| c["label"] == 3).count(), 50);
    assert!(t.path().join("d/cloud_00199.csv").exists());
    assert_eq!(code(&run(t.path(), &["gen-data", "--classes", "sphere,blob"])), 2);
}

#[test]
fn bench_table_and_empty_table() {
    let t = TempDir::new().unwrap();
    let o = run(t.path(), &["bench", "--table1", "--no-latency", "--out", "b"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for v in ["382.2", "8.4", "167.8", "61.3"] {
        assert!(stdout(&o).contains(v), "{}", stdout(&o));
    }
    let table = read_json(t.path().join("b/cost_table.json"));
    assert_eq!(table["rows"].as_array().unwrap().len(), 4);

    let o = run(t.path(), &["bench", "--no-latency", "--out", "e"]);
    assert_eq!(code(&o), 0);
    assert!(read_json(t.path().join("e/cost_table.json"))["rows"].as_array().unwrap().is_empty());

    fs::write(t.path().join("bad.json"), r#"{"specs": [{"method": "pointcnn", "n": 1, "c_in": 1, "c_out": 1}]}"#).unwrap();
    assert_eq!(code(&run(t.path(), &["bench", "--config", "bad.json", "--no-latency"])), 2);
}

fn tiny_train(dir: &Path, out: &str) -> Output {
    run(
        dir,
        &[
            "train",
            "--train-data",
            "d",
            "--test-data",
            "t",
            "--epochs",
            "2",
            "--set",
            "network.widths=[4,6]",
            "--set",
            "network.k=[4,4]",
            "--set",
            "network.fuse_width=8",
            "--set",
            "network.head_width=6",
            "--set",
            "network.batch_size=4",
            "--out",
            out,
        ],
    )
}

#[test]
fn train_eval_reproducible() {
    let t = TempDir::new().unwrap();
    let p = t.path();
    assert_eq!(code(&run(p, &["gen-data", "--n", "3", "--points", "24", "--out", "d"])), 0);
    assert_eq!(code(&run(p, &["gen-data", "--n", "2", "--points", "24", "--seed", "9", "--out", "t"])), 0);
    let o = tiny_train(p, "r1");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(code(&tiny_train(p, "r2")), 0);
    let report = read_json(p.join("r1/report.json"));
    assert!(report["final_overall_accuracy"].is_number());
    assert_eq!(fs::read_to_string(p.join("r1/epochs.jsonl")).unwrap().lines().count(), 2);
    for f in ["report.json", "epochs.jsonl", "checkpoint/weights.dcnt", "checkpoint/config.json"] {
        assert_eq!(fs::read(p.join("r1").join(f)).unwrap(), fs::read(p.join("r2").join(f)).unwrap(), "{f}");
    }

    let o = run(p, &["eval", "--checkpoint", "r1/checkpoint", "--data", "t", "--out", "e"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let e = read_json(p.join("e/eval.json"));
    assert_eq!(e["clouds"], 8);
    assert_eq!(e["overall_accuracy"], report["final_overall_accuracy"]);

    assert_eq!(code(&run(p, &["eval", "--checkpoint", "nowhere", "--data", "t"])), 1);
    assert_eq!(code(&run(p, &["train", "--train-data", "d", "--set", "network.num_classes=2"])), 2);
}
