use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dglfrm::cli::{RunManifest, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use dglfrm::trainer::load_checkpoint;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dglfrm")).args(args).output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

/// Synthetic graph plus split in `dir`; returns (edges, split) paths.
fn prepared(dir: &Path, nodes: &str, communities: &str) -> (String, String) {
    let prefix = s(&dir.join("g"));
    assert_eq!(code(&["synth", "--nodes", nodes, "--communities", communities, "--out-prefix", &prefix]), EXIT_OK);
    let edges = format!("{prefix}.edges");
    let split = s(&dir.join("g.split"));
    assert_eq!(code(&["split", "--graph", &edges, "--out", &split]), EXIT_OK);
    (edges, split)
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&["--help"]), EXIT_OK);
    assert_eq!(code(&["--version"]), EXIT_OK);
    assert_eq!(code(&[]), EXIT_USAGE);
}

#[test]
fn invalid_flags_fail_before_reading_inputs() {
    // the input paths do not exist; a data error (2) would mean they were opened
    let missing = "/nonexistent/graph.edges";
    assert_eq!(code(&["split", "--graph", missing, "--out", "x", "--test-frac", "0"]), EXIT_USAGE);
    assert_eq!(code(&["communities", "--ckpt", missing, "--graph", missing, "--out", "x", "--tau", "1.01"]), EXIT_USAGE);
    assert_eq!(code(&["train", "--graph", missing, "--split", missing, "--out-ckpt", "x", "--k", "0"]), EXIT_USAGE);
    assert_eq!(code(&["train", "--graph", missing, "--split", missing, "--out-ckpt", "x", "--dropout", "1"]), EXIT_USAGE);
    assert_eq!(code(&["train", "--graph", missing, "--split", missing, "--out-ckpt", "x", "--variant", "gae"]), EXIT_USAGE);
    assert_eq!(code(&["split", "--graph", missing, "--out", "x"]), EXIT_DATA);
}

#[test]
fn synth_is_deterministic_and_tiny_case_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let prefix = s(&dir.path().join(name));
        assert_eq!(code(&["synth", "--seed", "3", "--out-prefix", &prefix]), EXIT_OK);
    }
    for ext in ["edges", "communities"] {
        let a = fs::read(dir.path().join(format!("a.{ext}"))).unwrap();
        let b = fs::read(dir.path().join(format!("b.{ext}"))).unwrap();
        assert_eq!(a, b, "{ext}");
    }
    let m = RunManifest::read(dir.path().join("a.manifest.json")).unwrap();
    assert_eq!((m.command.as_str(), m.seed), ("synth", Some(3)));

    let tiny = s(&dir.path().join("tiny"));
    assert_eq!(code(&["synth", "--nodes", "4", "--communities", "2", "--out-prefix", &tiny]), EXIT_OK);
    let members = dglfrm::cli::read_memberships(format!("{tiny}.communities"), 4, 2).unwrap();
    assert!((0..4).all(|n| members.row(n).iter().sum::<f64>() >= 1.0));
    assert!(dglfrm::graph::load_edge_list(format!("{tiny}.edges")).is_ok());
}

#[test]
fn split_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (edges, split) = prepared(dir.path(), "60", "6");
    let again = s(&dir.path().join("again.split"));
    assert_eq!(code(&["split", "--graph", &edges, "--out", &again]), EXIT_OK);
    assert_eq!(fs::read(&split).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn zero_epochs_writes_initialization_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (edges, split) = prepared(dir.path(), "40", "4");
    let ckpt = s(&dir.path().join("init.ckpt"));
    assert_eq!(code(&["train", "--graph", &edges, "--split", &split, "--k", "4", "--epochs", "0", "--out-ckpt", &ckpt]), EXIT_OK);
    let ck = load_checkpoint(&ckpt).unwrap();
    assert_eq!(ck.step, 0);
    assert!(Path::new(&format!("{ckpt}.report.json")).exists());
    assert!(Path::new(&format!("{ckpt}.manifest.json")).exists());
}

#[test]
fn train_eval_communities_chain() {
    let dir = tempfile::tempdir().unwrap();
    let (edges, split) = prepared(dir.path(), "40", "4");
    let ckpt = s(&dir.path().join("m.ckpt"));
    let train = ["train", "--graph", &edges, "--split", &split, "--variant", "lfrm", "--k", "6", "--epochs", "30", "--out-ckpt", &ckpt];
    assert_eq!(code(&train), EXIT_OK);
    let out = s(&dir.path().join("metrics"));
    assert_eq!(code(&["eval", "--ckpt", &ckpt, "--graph", &edges, "--split", &split, "--out", &out]), EXIT_OK);
    let text = fs::read_to_string(format!("{out}.txt")).unwrap();
    assert!(text.starts_with("auc "), "{text}");
    let comm = s(&dir.path().join("comm"));
    let csv = s(&dir.path().join("latent.csv"));
    let args = ["communities", "--ckpt", &ckpt, "--graph", &edges, "--out", &comm, "--export-latent", &csv];
    assert_eq!(code(&args), EXIT_OK);
    let latent = fs::read_to_string(&csv).unwrap();
    assert_eq!(latent.lines().count(), 41);
    assert_eq!(latent.lines().next().unwrap().split(',').count(), 1 + 6 + 6);
}

#[test]
fn vgae_checkpoint_has_no_communities() {
    let dir = tempfile::tempdir().unwrap();
    let (edges, split) = prepared(dir.path(), "30", "3");
    let ckpt = s(&dir.path().join("v.ckpt"));
    let train = ["train", "--graph", &edges, "--split", &split, "--variant", "vgae", "--k", "4", "--epochs", "2", "--out-ckpt", &ckpt];
    assert_eq!(code(&train), EXIT_OK);
    let out = run(&["communities", "--ckpt", &ckpt, "--graph", &edges, "--out", &s(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vgae"));
}

#[test]
fn replay_refuses_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let (edges, split) = prepared(dir.path(), "30", "3");
    let manifest = format!("{split}.manifest.json");
    assert_eq!(code(&["replay", &manifest]), EXIT_OK);
    fs::write(&edges, "0 1\n").unwrap();
    let out = run(&["replay", &manifest]);
    assert_eq!(out.status.code(), Some(EXIT_DATA));
    assert!(String::from_utf8_lossy(&out.stderr).contains("changed"));
}
