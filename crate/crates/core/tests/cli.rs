use std::path::Path;
use std::process::{Command, Output};

use stimulus::corpus::{generate_synthetic, load_corpus, write_corpus, SyntheticGrammar, STATS_HEADER};

fn stimulus(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stimulus"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = stimulus(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn synthetic(dir: &Path, n: usize) {
    write_corpus(dir.join("c.jsonl"), &generate_synthetic(n, 3, &SyntheticGrammar::default())).unwrap();
}

#[test]
fn stats_header_matches_table_columns() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), 20);
    let csv = ok(dir.path(), &["stats", "--corpus", "c.jsonl"]);
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(header, STATS_HEADER);
    assert!(csv.lines().nth(1).unwrap().starts_with("Synthetic,20,"));
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), 12);
    let train = |name: &str| {
        ok(
            dir.path(),
            &["train", "--corpus", "c.jsonl", "--arch", "sl", "--seed", "1", "--max-epochs", "2", "--embedding-dim", "8", "--hidden-dim", "4", "--checkpoint", name],
        );
        std::fs::read(dir.path().join(name)).unwrap()
    };
    assert_eq!(train("a.json"), train("b.json"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), 12);
    std::fs::write(dir.path().join("cfg.toml"), "embedding_dim = 6\nhidden_dim = 3\nmax_epochs = 4\npatience = 2\nseed = 5\n").unwrap();
    ok(
        dir.path(),
        &["train", "--corpus", "c.jsonl", "--arch", "icc", "--config", "cfg.toml", "--max-epochs", "1", "--checkpoint", "m.json", "--history", "h.csv"],
    );
    let ck: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(ck["config"]["max_epochs"], 1);
    assert_eq!(ck["config"]["embedding_dim"], 6);
    assert_eq!(ck["config"]["seed"], 5);
    assert_eq!(ck["architecture"], "icc");
    let history = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);
}

#[test]
fn perfect_predictions_score_100() {
    let dir = tempfile::tempdir().unwrap();
    let mut corpus = generate_synthetic(15, 4, &SyntheticGrammar::default());
    for inst in &mut corpus {
        inst.pred_iob = Some(inst.iob.clone());
        inst.pred_model = Some("oracle".into());
    }
    write_corpus(dir.path().join("p.jsonl"), &corpus).unwrap();
    let csv = ok(dir.path(), &["eval", "--corpus", "p.jsonl", "--mode", "exact"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("Synthetic,oracle,exact,100,100,100,"), "{}", lines[1]);

    let all = ok(dir.path(), &["eval", "--corpus", "p.jsonl"]);
    assert_eq!(all.lines().count(), 6);
    assert!(all.lines().all(|l| l.starts_with("dataset") || l.contains(",100,100,100,")));

    let errors = ok(dir.path(), &["errors", "--corpus", "p.jsonl"]);
    assert!(errors.contains("\nAll,0,0\n"), "{errors}");
}

#[test]
fn predict_output_revalidates_and_keeps_gold() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), 12);
    for arch in ["sl", "icc", "jcc"] {
        ok(
            dir.path(),
            &["train", "--corpus", "c.jsonl", "--arch", arch, "--max-epochs", "1", "--embedding-dim", "8", "--hidden-dim", "4", "--checkpoint", "m.json"],
        );
        ok(dir.path(), &["predict", "--corpus", "c.jsonl", "--checkpoint", "m.json", "--out", "p.jsonl"]);
        ok(dir.path(), &["validate", "--corpus", "p.jsonl"]);
        let gold = load_corpus(dir.path().join("c.jsonl")).unwrap();
        let pred = load_corpus(dir.path().join("p.jsonl")).unwrap();
        for (g, p) in gold.iter().zip(&pred) {
            assert_eq!(g.iob, p.iob);
            assert_eq!(p.pred_model.as_deref(), Some(arch));
            assert_eq!(p.pred_iob.as_ref().unwrap().len(), p.tokens.len());
            assert_eq!(p.pred_clauses.as_ref().unwrap().len(), p.clauses.as_ref().unwrap().len());
        }
    }
}

#[test]
fn errors_are_reported_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let out = stimulus(dir.path(), &["stats", "--corpus", "missing.jsonl", "--out", "s.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));
    assert!(!dir.path().join("s.csv").exists());

    let out = stimulus(dir.path(), &["stats", "--corpse", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = stimulus(dir.path(), &["frobnicate"]);
    assert!(!out.status.success());

    synthetic(dir.path(), 12);
    let out = stimulus(dir.path(), &["eval", "--corpus", "c.jsonl", "--out", "e.csv"]);
    assert!(!out.status.success(), "eval without predictions must fail");
    assert!(!dir.path().join("e.csv").exists());
}

#[test]
fn clause_extraction_and_report() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), 12);
    ok(dir.path(), &["clauses", "extract", "--corpus", "c.jsonl", "--out", "x.jsonl"]);
    let gold = load_corpus(dir.path().join("c.jsonl")).unwrap();
    let extracted = load_corpus(dir.path().join("x.jsonl")).unwrap();
    for (g, x) in gold.iter().zip(&extracted) {
        assert_eq!(g.clause_spans(), x.clause_spans());
        assert!(x.clauses.as_ref().unwrap().iter().all(|c| c.is_stimulus.is_none()));
    }

    std::fs::write(
        dir.path().join("trees.jsonl"),
        "{\"id\":\"syn-0\",\"parse\":\"(ROOT (S (NP (A a)) (S (B b) (C c))))\"}\n",
    )
    .unwrap();
    let out = stimulus(dir.path(), &["clauses", "extract", "--corpus", "c.jsonl", "--trees", "trees.jsonl"]);
    assert!(!out.status.success(), "leaf count mismatch must be reported");

    ok(dir.path(), &["clauses", "eval", "--corpus", "c.jsonl", "--second", "c.jsonl", "--out", "t2.csv"]);
    let table = std::fs::read_to_string(dir.path().join("t2.csv")).unwrap();
    assert!(table.lines().nth(1).unwrap().starts_with("Synthetic,12,1.0000,1.0000,"));
    let md = ok(dir.path(), &["report", "--clauses", "t2.csv"]);
    assert!(md.contains("## Clause detection"));
    assert!(md.contains("| Synthetic | 12 |"));
}

#[test]
fn split_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), 30);
    let a = ok(dir.path(), &["split", "--corpus", "c.jsonl", "--seed", "7"]);
    let b = ok(dir.path(), &["split", "--corpus", "c.jsonl", "--seed", "7"]);
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["train"].as_array().unwrap().len(), 24);
    assert_eq!(v["dev"].as_array().unwrap().len(), 3);
    assert_eq!(v["test"].as_array().unwrap().len(), 3);
}
