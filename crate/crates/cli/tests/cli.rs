use std::path::Path;
use std::process::{Command, Output};

fn hfrisk(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hfrisk"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path) {
    std::fs::write(
        dir.join("cfg.json"),
        r#"{"generator": {"n_patients": 600}, "subword": {"vocab_size": 1200}}"#,
    )
    .unwrap();
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    for out in ["a", "b"] {
        let o = hfrisk(dir.path(), &["synth", "--config", "cfg.json", "--seed", "7", "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["patients.jsonl", "truth.csv", "terminology/grouping.tsv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn density_writes_top_k_rows() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["synth"],
        vec!["label"],
        vec!["encode"],
        vec!["vocab"],
        vec!["density", "--encoding", "subword", "--top-k", "400"],
    ] {
        let o = hfrisk(dir.path(), &args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let csv = std::fs::read_to_string(dir.path().join("out/density/subword_top400.csv")).unwrap();
    assert_eq!(csv.lines().count(), 401);
}

#[test]
fn train_without_sequences_names_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    for args in [["synth"], ["label"]] {
        assert!(hfrisk(dir.path(), &[args[0], "--config", "cfg.json"]).status.success());
    }
    let o = hfrisk(dir.path(), &["train", "--model", "tlstm", "--config", "cfg.json"]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("encoded/all/sequences.jsonl"), "{err}");
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"min_patients": 0}"#).unwrap();
    let o = hfrisk(dir.path(), &["synth", "--config", "bad.json"]);
    assert_eq!(o.status.code(), Some(2));
    let o = hfrisk(dir.path(), &["synth", "--config", "absent.json"]);
    assert_eq!(o.status.code(), Some(2));
    let o = hfrisk(dir.path(), &["train", "--model", "forest"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_documents_config_schema() {
    let dir = tempfile::tempdir().unwrap();
    let o = hfrisk(dir.path(), &["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for key in ["generator", "study_features", "transformer", "EXIT CODES"] {
        assert!(text.contains(key), "{key}");
    }
}
