use std::path::Path;
use std::process::{Command, Output};

use edgekg_core::checkpoint::{self, Encoding};
use edgekg_core::{EmbeddingModel, ModelKind, NormKind, Split, TripleStore};

fn edgekg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgekg"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value(text: &str, key: &str) -> Option<String> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v.to_owned())
}

const SMALL: [&str; 10] = ["--set", "num_people=200", "--set", "dim=8", "--set", "epochs=3", "--set", "eval_every=1", "--set", "batch_size=256"];

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(edgekg(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(edgekg(dir.path(), &["eval", "--bogus"]).status.code(), Some(2));
    assert_eq!(edgekg(dir.path(), &["prune", "--data", "d"]).status.code(), Some(2));
    assert_eq!(edgekg(dir.path(), &[]).status.code(), Some(2));
    assert_eq!(edgekg(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_failures_exit_three_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let o = edgekg(dir.path(), &["eval", "--data", "missing", "--model", "missing.ckpt"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing"));
    let o = edgekg(dir.path(), &["synth", "--out", "d", "--set", "no_such_key=1"]);
    assert_eq!(o.status.code(), Some(3));
    std::fs::write(dir.path().join("bad.ckpt"), b"not a checkpoint").unwrap();
    let o = edgekg(dir.path(), &["serve", "--model", "bad.ckpt", "--data", "missing"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn eval_of_a_perfect_model_reports_full_hits() {
    let dir = tempfile::tempdir().unwrap();
    // a chain e0 -> e1 -> ... -> e29 that translation by +1 explains exactly
    let n = 30;
    let triples: Vec<(String, String, String)> = (0..n - 1).map(|i| (format!("e{i}"), "next".into(), format!("e{}", i + 1))).collect();
    let store = TripleStore::from_labeled(triples).unwrap();
    let store = store.with_assignment(vec![Split::Test; store.len()]).unwrap();
    store.save_dataset(dir.path().join("d")).unwrap();
    let entity: Vec<f32> = (0..n).map(|i| i as f32 / n as f32).collect();
    let model = EmbeddingModel::from_tables(ModelKind::TransE, 1, NormKind::L1, n, 1, entity, vec![1.0 / n as f32], None).unwrap();
    checkpoint::save(dir.path().join("m.ckpt"), &model, None, Encoding::Dense).unwrap();
    let o = edgekg(dir.path(), &["eval", "--data", "d", "--model", "m.ckpt", "--raw", "--tie-rule", "pessimistic"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(value(&out, "hits@10").as_deref(), Some("1"));
    assert_eq!(value(&out, "hits@1").as_deref(), Some("1"));
    assert_eq!(value(&out, "amri").as_deref(), Some("1"));
}

#[test]
fn full_pipeline_composes_and_pdqa_exits_one_on_flags() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let run = |args: &[&str]| {
        let mut all: Vec<&str> = args.to_vec();
        all.extend(SMALL);
        let o = edgekg(p, &all);
        assert!(o.status.code().is_some(), "killed");
        o
    };
    let ok = |o: Output| {
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    ok(run(&["synth", "--out", "raw"]));
    let split = ok(run(&["split", "--data", "raw", "--out", "data", "--fractions", "0.8,0.1,0.1"]));
    assert!(value(&split, "test").is_some());
    ok(run(&["train", "--data", "data", "--out", "m.ckpt", "--report", "train.txt", "--loss-curve", "loss.csv"]));
    assert!(p.join("train.txt").exists() && p.join("loss.csv").exists());
    let pruned = ok(run(&["prune", "--data", "data", "--model", "m.ckpt", "--ratio", "0.67", "--out", "p.ckpt"]));
    assert_eq!(value(&pruned, "pruning_ratio").as_deref(), Some("0.67"));
    let tuned = ok(run(&["finetune", "--data", "data", "--model", "p.ckpt", "--out", "f.ckpt", "--epochs", "2", "--baseline", "m.ckpt", "--csv", "f.csv"]));
    for key in ["pre_prune_hits10", "post_prune_hits10", "post_finetune_hits10", "checkpoint_bytes_sparse"] {
        let v = value(&tuned, key).unwrap_or_else(|| panic!("{key} missing"));
        assert_ne!(v, "none", "{key}");
    }
    let csv = std::fs::read_to_string(p.join("f.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    ok(run(&["eval", "--data", "data", "--model", "f.ckpt"]));

    // the fine-tuned checkpoint keeps its mask
    let c = checkpoint::load(p.join("f.ckpt")).unwrap();
    assert!(c.mask.unwrap().is_consistent_with(&c.model));

    let o = run(&["pdqa", "--data", "data", "--model", "m.ckpt", "--inject", "0.05", "--labels-out", "labels.csv", "--corrupted-out", "bad", "--out", "report.csv", "--fit-out", "ref.txt"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(value(&out, "recall").is_some());
    let header = std::fs::read_to_string(p.join("report.csv")).unwrap();
    assert!(header.starts_with("head,relation,tail,score,z,flagged,reason"));
    // stage outputs feed the next stage: labels + corrupted data, frozen reference
    let o = run(&["pdqa", "--data", "bad", "--model", "m.ckpt", "--labels", "labels.csv", "--reference", "ref.txt"]);
    assert!(value(&stdout(&o), "recall").is_some());
    let o = run(&["pdqa", "--data", "data", "--model", "m.ckpt", "--threshold", "-1000"]);
    assert_eq!(o.status.code(), Some(0));

    ok(run(&["export", "--data", "data", "--nodes", "n.csv", "--edges", "e.csv"]));
    let json = ok(run(&["complete", "--model", "f.ckpt", "--data", "data", "--head", "person_00000", "--relation", "lives_in", "--k", "4"]));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["candidates"].as_array().unwrap().len(), 4);
    let json = ok(run(&["score", "--model", "m.ckpt", "--data", "data", "--reference", "ref.txt", "--head", "x", "--relation", "lives_in", "--tail", "y"]));
    assert!(json.contains("out-of-vocabulary"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.conf"), "num_people = 50\nseed = 1\n").unwrap();
    let a = stdout(&edgekg(dir.path(), &["synth", "--out", "a", "--config", "run.conf"]));
    let b = stdout(&edgekg(dir.path(), &["synth", "--out", "b", "--config", "run.conf", "--set", "num_people=80"]));
    let c = stdout(&edgekg(dir.path(), &["synth", "--out", "c", "--config", "run.conf", "--seed", "2"]));
    assert_eq!(value(&a, "entities").as_deref(), Some("101"));
    assert_eq!(value(&b, "entities").as_deref(), Some("131"));
    let read = |d: &str| TripleStore::load_dataset(dir.path().join(d)).unwrap();
    assert_ne!(read("a"), read("c"));
    assert_eq!(value(&a, "entities"), value(&c, "entities"));
}

#[test]
fn ingest_fuses_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.csv"), "ann,knows,bob\nann2,knows,bob\nbob,likes,cat\n").unwrap();
    std::fs::write(dir.path().join("attrs.csv"), "entity,name,born\nann,Ann,1990\nann2,Ann,1990\nbob,Bob,\n").unwrap();
    let o = edgekg(
        dir.path(),
        &["ingest", "--input", "t.csv", "--delimiter", "comma", "--out", "d", "--fuse-key", "name,born", "--attributes", "attrs.csv"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(value(&stdout(&o), "fused_entities").as_deref(), Some("1"));
    let store = TripleStore::load_dataset(dir.path().join("d")).unwrap();
    assert_eq!(store.len(), 2);
    assert_eq!(store.num_entities(), 3);
}
