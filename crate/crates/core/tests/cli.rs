use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn idepnn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idepnn"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
fn ok(o: Output) -> String {
    assert!(o.status.success(), "exit {:?}\n{}", o.status.code(), stderr(&o));
    stdout(&o)
}

const SMALL: &str = "[model]\nword_dim = 12\nsubtree_dim = 6\nhidden = 10\n\n[model.optimizer]\nmax_epochs = 4\n";

/// Synthetic train/dev/test files and a small run config.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (name, seed, n) in [("train", "1", "40"), ("dev", "2", "20"), ("test", "3", "20")] {
        ok(idepnn(d, &["synth", "--docs", n, "--seed", seed, "--out", &format!("{name}.jsonl")]));
    }
    std::fs::write(
        d.join("run.toml"),
        format!("{SMALL}\n[data]\ntrain = \"train.jsonl\"\ndev = \"dev.jsonl\"\ntest = \"test.jsonl\"\n"),
    )
    .unwrap();
    dir
}

fn fig1_jsonl(d: &Path) -> PathBuf {
    let conllu = data("fig1/fig1.conllu");
    let out = ok(idepnn(
        d,
        &[
            "ingest",
            "--conllu",
            conllu.to_str().unwrap(),
            "--standoff",
            data("fig1").to_str().unwrap(),
            "--out",
            "fig1.jsonl",
        ],
    ));
    assert!(out.contains("documents=1 sentences=2 mentions=3 relations=1 intra=0 inter=1"), "{out}");
    d.join("fig1.jsonl")
}

#[test]
fn synth_reports_counts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = ok(idepnn(d, &["synth", "--docs", "30", "--seed", "5", "--out", "a.jsonl"]));
    ok(idepnn(d, &["synth", "--docs", "30", "--seed", "5", "--out", "b.jsonl"]));
    assert!(a.starts_with("documents=30 "), "{a}");
    assert_eq!(std::fs::read(d.join("a.jsonl")).unwrap(), std::fs::read(d.join("b.jsonl")).unwrap());
    let again = ok(idepnn(d, &["ingest", "--jsonl", "a.jsonl", "--out", "c.jsonl"]));
    assert_eq!(a, again);
}

#[test]
fn inspect_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = fig1_jsonl(d);
    let out = ok(idepnn(
        d,
        &["inspect", "--corpus", corpus.to_str().unwrap(), "--doc", "fig1", "--e1", "T1", "--e2", "T2", "--dot", "g.dot", "--adp"],
    ));
    assert!(out.contains("nodes 7, NEXTS crossings 1, sentence distance 1"), "{out}");
    assert!(out.contains("/named"), "{out}");
    assert!(out.contains("s0:10/Raburn"), "{out}");
    assert!(out.contains("s1:9/Group"), "{out}");
    let dot = std::fs::read_to_string(d.join("g.dot")).unwrap();
    assert!(dot.starts_with("digraph") || dot.starts_with("graph"), "{dot}");
    assert!(dot.contains("NEXTS"));
}

#[test]
fn inspect_unknown_ids_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = fig1_jsonl(d);
    let c = corpus.to_str().unwrap();
    let o = idepnn(d, &["inspect", "--corpus", c, "--doc", "nope", "--e1", "T1", "--e2", "T2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown document nope"));
    let o = idepnn(d, &["inspect", "--corpus", c, "--doc", "fig1", "--e1", "T1", "--e2", "T9"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown mention T9"));
}

#[test]
fn corrupt_conllu_exits_2_naming_the_sentence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("bad.conllu"),
        "1\tA\t_\tX\t_\t_\t0\troot\t_\t_\n\n1\tB\t_\tX\t_\t_\t2\tdep\t_\t_\n2\tC\t_\tX\t_\t_\t1\tdep\t_\t_\n\n",
    )
    .unwrap();
    let o = idepnn(d, &["ingest", "--conllu", "bad.conllu", "--out", "x.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sentence 2"), "{}", stderr(&o));
    assert!(!d.join("x.jsonl").exists());
}

#[test]
fn missing_embeddings_exit_2() {
    let dir = workspace();
    let d = dir.path();
    let o = idepnn(d, &["train", "--config", "run.toml", "--embeddings", "absent.vec", "--model", "m.bin"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.vec"), "{}", stderr(&o));
    assert!(!d.join("m.bin").exists());
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), "[model]\nhiden = 3\n").unwrap();
    let o = idepnn(d, &["train", "--config", "run.toml", "--model", "m.bin"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("hiden"), "{}", stderr(&o));
}

#[test]
fn gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(idepnn(d, &["gradcheck", "--cases", "3"]));
    assert_eq!(out.lines().count(), 3);
    assert!(out.lines().all(|l| l.ends_with("[ok]")), "{out}");
    let o = idepnn(d, &["gradcheck", "--target", "sequence", "--cases", "3", "--tolerance", "0"]);
    assert_eq!(o.status.code(), Some(3));
    let o = idepnn(d, &["gradcheck", "--target", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_eval_predict_ensemble() {
    let dir = workspace();
    let d = dir.path();
    for (variant, model) in [("iDepNN-SDP", "sdp.bin"), ("iDepNN-ADP", "adp.bin")] {
        let out = ok(idepnn(d, &["train", "--config", "run.toml", "--variant", variant, "--model", model]));
        assert!(out.contains(variant), "{out}");
    }
    let log = std::fs::read_to_string(d.join("adp.bin.log.tsv")).unwrap();
    assert!(log.starts_with("epoch\ttrain_loss\tdev_loss\tdev_macro_f1\timproved\n"));
    assert_eq!(log.lines().count(), 5);

    ok(idepnn(
        d,
        &["eval", "--config", "run.toml", "--model", "adp.bin", "--k-eval", "0,1,inf", "--threshold", "0.5,0.9", "--out-dir", "rep"],
    ));
    let cells: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("rep/report.json")).unwrap()).unwrap();
    let cells = cells.as_array().unwrap();
    assert_eq!(cells.len(), 3 * 3);
    assert!(cells.iter().all(|c| c.get("macro").is_some() && c.get("pr").is_some()));
    assert_eq!(cells.iter().filter(|c| c.get("threshold").is_some()).count(), 6);
    let tsv = std::fs::read_to_string(d.join("rep/tp_fp_by_k.tsv")).unwrap();
    assert!(tsv.starts_with("k\ttp\tfp\n"));
    assert!(std::fs::read_to_string(d.join("rep/report.txt")).unwrap().contains("train_k"));

    ok(idepnn(
        d,
        &["eval", "--config", "run.toml", "--model", "sdp.bin", "--model", "adp.bin", "--k-eval", "0,inf", "--out-dir", "ens"],
    ));
    let cells: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("ens/report.json")).unwrap()).unwrap();
    let systems: Vec<&str> = cells.as_array().unwrap().iter().map(|c| c["system"].as_str().unwrap()).collect();
    assert_eq!(systems.len(), 6);
    assert_eq!(systems.iter().filter(|s| **s == "ensemble").count(), 2);

    for m in ["sdp", "adp"] {
        ok(idepnn(d, &["predict", "--model", &format!("{m}.bin"), "--corpus", "test.jsonl", "--out", &format!("{m}.jsonl")]));
    }
    let read = |p: &str| -> Vec<serde_json::Value> {
        std::fs::read_to_string(d.join(p)).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
    };
    let (sdp, adp) = (read("sdp.jsonl"), read("adp.jsonl"));
    assert_eq!(sdp.len(), 20);
    ok(idepnn(d, &["ensemble", "--predictions", "sdp.jsonl", "--predictions", "adp.jsonl", "--out", "union.jsonl"]));
    let union = read("union.jsonl");
    assert_eq!(union.len(), sdp.len());
    let positive = |v: &serde_json::Value| v["label"] != "NONE";
    for (i, u) in union.iter().enumerate() {
        assert_eq!(positive(u), positive(&sdp[i]) || positive(&adp[i]));
    }

    std::fs::write(d.join("short.jsonl"), std::fs::read_to_string(d.join("sdp.jsonl")).unwrap().lines().next().unwrap())
        .unwrap();
    let o = idepnn(d, &["ensemble", "--predictions", "sdp.jsonl", "--predictions", "short.jsonl", "--out", "x.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupt_model_file_exits_2() {
    let dir = workspace();
    let d = dir.path();
    std::fs::write(d.join("bad.bin"), b"IDNN\x07\x00\x00\x00").unwrap();
    let o = idepnn(d, &["predict", "--model", "bad.bin", "--corpus", "test.jsonl", "--out", "p.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("version"), "{}", stderr(&o));
}
