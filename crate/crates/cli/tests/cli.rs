use std::path::Path;
use std::process::{Command, Output};

fn fecund(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fecund"))
        .args(["--out", dir.to_str().unwrap()])
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A:[x,x] B:[y] C:[x], each 10 characters, coded by the AI source.
fn three_docs(dir: &Path) {
    let docs: String = ["A", "B", "C"].iter().map(|id| format!("{{\"id\":\"{id}\",\"text_length\":10}}\n")).collect();
    std::fs::write(dir.join("documents.jsonl"), docs).unwrap();
    std::fs::write(dir.join("codes.csv"), "doc_id,coder_source,code_label,position\nA,ai,x,\nA,ai,x,\nB,ai,y,\nC,ai,x,\n")
        .unwrap();
}

#[test]
fn select_picks_the_worked_example_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    three_docs(dir.path());
    let o = fecund(dir.path(), &["--seed", "4", "select", "--budget-chars", "21", "--control-docs", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sel: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("selection.json")).unwrap()).unwrap();
    let ids: Vec<&str> = sel["treatment"]["selected_ids"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(ids, ["A", "B"]);
    assert!((sel["treatment"]["objective_value"].as_f64().unwrap() - (2f64.sqrt() + 1.0)).abs() < 1e-9);
    let manifest = std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    assert!(manifest.starts_with("position,doc_id\n") && !manifest.contains("treatment"));
    let unblinding = std::fs::read_to_string(dir.path().join("unblinding.csv")).unwrap();
    assert!(unblinding.contains(",A,") && unblinding.contains(",B,"));

    let again = fecund(dir.path(), &["--seed", "4", "select", "--budget-chars", "21", "--control-docs", "1"]);
    assert!(again.status.success());
    assert_eq!(std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap(), manifest);
}

#[test]
fn missing_seed_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    three_docs(dir.path());
    let o = fecund(dir.path(), &["select"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("--seed"));
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = fecund(dir.path(), &["ingest"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("documents.jsonl"));
}

#[test]
fn themes_regime_without_map_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let docs: String = ["A", "B"].iter().map(|id| format!("{{\"id\":\"{id}\",\"text_length\":10}}\n")).collect();
    std::fs::write(dir.path().join("documents.jsonl"), docs).unwrap();
    std::fs::write(dir.path().join("codes.csv"), "doc_id,coder_source,code_label,position\nA,human,x,\nB,human,y,\n").unwrap();
    let o = fecund(dir.path(), &["saturate", "--regime", "themes"]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    assert!(stderr(&o).to_lowercase().contains("theme"));
    let ok = fecund(dir.path(), &["saturate", "--regime", "unique"]);
    assert!(ok.status.success(), "{}", stderr(&ok));
    let csv = std::fs::read_to_string(dir.path().join("curve_unique.csv")).unwrap();
    assert_eq!(csv, "doc_index,doc_id,cumulative_chars,cumulative_count\n1,A,10,1\n2,B,20,2\n");
}

#[test]
fn unknown_names_and_bad_flags_exit_distinctly() {
    let dir = tempfile::tempdir().unwrap();
    three_docs(dir.path());
    assert_eq!(fecund(dir.path(), &["--seed", "1", "select", "--selector", "annealing"]).status.code(), Some(3));
    assert_eq!(fecund(dir.path(), &["select", "--no-such-flag"]).status.code(), Some(2));
    let o = fecund(dir.path(), &["--seed", "1", "sweep", "--sizes", "50"]);
    assert_eq!(o.status.code(), Some(6), "{}", stderr(&o));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    three_docs(dir.path());
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 4\nbudget_chars = 11\n").unwrap();
    let o = fecund(dir.path(), &["--config", cfg.to_str().unwrap(), "select"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sel: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("selection.json")).unwrap()).unwrap();
    assert_eq!(sel["treatment"]["selected_ids"].as_array().unwrap().len(), 1);
    let o = fecund(dir.path(), &["--config", cfg.to_str().unwrap(), "select", "--budget-chars", "21"]);
    assert!(o.status.success());
    let sel: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("selection.json")).unwrap()).unwrap();
    assert_eq!(sel["treatment"]["selected_ids"].as_array().unwrap().len(), 2);

    std::fs::write(&cfg, "sede = 4\n").unwrap();
    assert_eq!(fecund(dir.path(), &["--config", cfg.to_str().unwrap(), "select"]).status.code(), Some(3));
}

#[test]
fn unreachable_remote_records_every_passage_as_failed() {
    let dir = tempfile::tempdir().unwrap();
    assert!(fecund(dir.path(), &["--seed", "3", "synth", "--n", "3"]).status.success());
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = dir.path().join("remote.toml");
    std::fs::write(&cfg, "max_retries = 0\ntimeout_secs = 2\n").unwrap();
    let endpoint = format!("http://127.0.0.1:{port}/v1/chat/completions");
    let o = fecund(dir.path(), &["--config", cfg.to_str().unwrap(), "code", "--backend", "remote", "--endpoint", &endpoint]);
    assert!(o.status.success(), "{}", stderr(&o));
    let errors = std::fs::read_to_string(dir.path().join("code_errors.csv")).unwrap();
    assert!(errors.lines().count() > 1);
    let codes = std::fs::read_to_string(dir.path().join("ai_codes.csv")).unwrap();
    assert_eq!(codes.lines().count(), 1, "only the header");
}

#[test]
fn experiment_fixture_renders_starred_table() {
    let dir = tempfile::tempdir().unwrap();
    assert!(fecund(dir.path(), &["--seed", "5", "synth", "--kind", "experiment"]).status.success());
    let obs = dir.path().join("observations.csv");
    let o = fecund(dir.path(), &["analyze", "--observations", obs.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(dir.path().join("treatment_table.txt")).unwrap();
    assert!(table.contains("AI-Selected") && table.contains("***"));
    assert!(table.contains("*p<0.1; **p<0.05; ***p<0.01"));
    assert!(!table.contains("not estimated"), "{table}");
    let residual = std::fs::read_to_string(dir.path().join("length_residual_table.txt")).unwrap();
    assert!(residual.contains("Length Residuals"), "{residual}");
}

#[test]
fn written_csvs_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let o = fecund(dir.path(), args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    };
    run(&["--seed", "8", "synth", "--n", "25"]);
    run(&["--seed", "8", "code"]);
    run(&["--seed", "8", "select", "--budget-docs", "5"]);
    run(&["analyze"]);
    // The AI codes written by `code` load as part of the collection.
    let c = fecund_core::ingest::load_collection(&fecund_core::ingest::CollectionPaths {
        documents: dir.path().join("documents.jsonl"),
        codes: vec![dir.path().join("codes.csv"), dir.path().join("ai_codes.csv")],
        themes: Some(dir.path().join("themes.csv")),
    })
    .unwrap();
    assert!(c.coder_sources().contains("ai") && c.coder_sources().contains("human"));
    let t = fecund_core::stats::DataTable::read_csv(&dir.path().join("observations.csv")).unwrap();
    assert!(t.n_rows() > 0);
}
