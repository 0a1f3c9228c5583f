use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;

fn tvt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvt"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("stderr has an error line");
    serde_json::from_str(last).unwrap_or_else(|e| panic!("unparseable error `{last}`: {e}"))
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn toy_search_finishes_quickly_on_one_worker() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = tvt(dir.path(), &["search", "--config", &config("toy_search.json"), "--workers", "1"]);
    assert_ok(&out);
    assert!(start.elapsed() < Duration::from_secs(60));
    let d = dir.path().join("out");
    let population = read(d.join("population.jsonl"));
    assert_eq!(population.lines().count(), 20);
    let topk: Vec<Value> = serde_json::from_str(&read(d.join("topk.json"))).unwrap();
    assert_eq!(topk.len(), 5);
    let best: Value = serde_json::from_str(&read(d.join("best.json"))).unwrap();
    assert_eq!(best, topk[0]);
    let max = population
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["tvt"].as_f64().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best["tvt"].as_f64().unwrap(), max);

    let manifest: Value = serde_json::from_str(&read(d.join("search.manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "search");
    assert_eq!(manifest["master_seed"], 1);
    assert!(manifest["wall_time_s"].as_f64().unwrap() >= 0.0);
    let outputs: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for f in ["best.json", "topk.json", "population.jsonl", "result.json", "tvt_histogram.csv"] {
        assert_eq!(outputs.iter().filter(|o| o.ends_with(f)).count(), 1, "{f}");
    }
}

#[test]
fn search_outputs_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for (d, workers) in [("a", "1"), ("b", "2")] {
        let out = tvt(
            dir.path(),
            &["search", "--config", &config("toy_search.json"), "--out-dir", d, "--workers", workers],
        );
        assert_ok(&out);
    }
    for f in ["best.json", "topk.json", "population.jsonl", "result.json", "tvt_histogram.csv"] {
        assert_eq!(read(dir.path().join("a").join(f)), read(dir.path().join("b").join(f)), "{f}");
    }
    // a different seed changes the population
    assert_ok(&tvt(dir.path(), &["search", "--config", &config("toy_search.json"), "--seed", "99", "--out-dir", "c"]));
    assert_ne!(read(dir.path().join("a/result.json")), read(dir.path().join("c/result.json")));
}

#[test]
fn dry_run_validates_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = tvt(dir.path(), &["search", "--config", &config("tiny_search.json"), "--dry-run"]);
    assert_ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"population_size\": 1000"));
    assert!(!dir.path().join("out").exists());

    let bad = tvt(dir.path(), &["search", "--population-size", "3", "--topk", "4", "--dry-run"]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(error_json(&bad)["error"]["kind"], "config");
}

#[test]
fn eval_rank_with_monotone_oracle_gives_unit_tau() {
    let dir = tempfile::tempdir().unwrap();
    let out = tvt(dir.path(), &["eval-rank", "--config", &config("eval_monotone.json"), "--n", "20"]);
    assert_ok(&out);
    let report: Value = serde_json::from_str(&read(dir.path().join("out/report.json"))).unwrap();
    assert_eq!(report["mean_tau"].as_f64(), Some(1.0));
    assert_eq!(report["per_run"].as_array().unwrap().len(), 3);
    assert_eq!(report["tau_variant"], "tau_b");
    assert_eq!(report["dataset_tag"], "synthetic-monotone");
    let scatter = read(dir.path().join("out/scatter.csv"));
    assert_eq!(scatter.lines().next(), Some("run,genome_hash,tvt,accuracy"));
    assert_eq!(scatter.lines().count(), 1 + 60);
}

#[test]
fn missing_oracle_file_fails_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = tvt(dir.path(), &["eval-rank", "--n", "5", "--oracle-table", "no_such_table.csv"]);
    assert!(!out.status.success());
    let err = error_json(&out);
    assert!(err["error"]["message"].as_str().unwrap().contains("no_such_table.csv"), "{err}");
}

#[test]
fn eval_rank_reads_accuracy_tables() {
    let dir = tempfile::tempdir().unwrap();
    // with fixed genomes every run scores the plain sample for the master seed
    assert_ok(&tvt(dir.path(), &["sample", "--space", "tiny", "--n", "8", "--seed", "3", "--out", "pop.jsonl"]));
    let mut csv = String::from("genome_hash,accuracy\n");
    for (i, line) in read(dir.path().join("pop.jsonl")).lines().enumerate() {
        let g: tvt_core::Genome = serde_json::from_str(line).unwrap();
        csv.push_str(&format!("{},{}\n", g.hash(), 40 + i));
    }
    std::fs::write(dir.path().join("acc.csv"), csv).unwrap();
    let args = ["eval-rank", "--seed", "3", "--n", "8", "--runs", "2", "--oracle-table", "acc.csv"];
    assert_ok(&tvt(dir.path(), &[&args[..], &["--fix-genomes"]].concat()));
    let report: Value = serde_json::from_str(&read(dir.path().join("out/report.json"))).unwrap();
    let taus: Vec<f64> = report["per_run"].as_array().unwrap().iter().map(|r| r["tau"].as_f64().unwrap()).collect();
    assert_eq!(taus.len(), 2);
    assert!(taus.iter().all(|t| (-1.0..=1.0).contains(t)));

    // resampled runs draw genomes the table does not know
    let out = tvt(dir.path(), &args);
    assert!(!out.status.success());
    assert!(error_json(&out)["error"]["message"].as_str().unwrap().contains("no accuracy"));
}

#[test]
fn sample_is_deterministic_and_respects_n() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a.jsonl", "b.jsonl"] {
        assert_ok(&tvt(dir.path(), &["sample", "--space", "autoformer_ti", "--n", "50", "--seed", "7", "--out", out]));
    }
    let a = read(dir.path().join("a.jsonl"));
    assert_eq!(a, read(dir.path().join("b.jsonl")));
    assert_eq!(a.lines().count(), 50);
    assert_ok(&tvt(dir.path(), &["sample", "--space", "pit", "--n", "1", "--out", "one.jsonl"]));
    assert_eq!(read(dir.path().join("one.jsonl")).lines().count(), 1);
}

#[test]
fn infeasible_budget_names_the_range() {
    let dir = tempfile::tempdir().unwrap();
    let mut space: Value = serde_json::from_str(&read(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/spaces/tiny.json"),
    ))
    .unwrap();
    space["param_range"] = serde_json::json!([1, 2]);
    std::fs::write(dir.path().join("impossible.json"), space.to_string()).unwrap();
    let out = tvt(dir.path(), &["sample", "--space", "impossible.json", "--n", "3"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = error_json(&out)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("[1, 2]"), "{msg}");
}

#[test]
fn score_preserves_order_and_matches_hand_combination() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&tvt(dir.path(), &["sample", "--space", "tiny", "--n", "3", "--seed", "4", "--out", "three.jsonl"]));
    let args = ["score", "--genomes", "three.jsonl", "--seed", "2"];
    assert_ok(&tvt(dir.path(), &[&args[..], &["--out", "s1.jsonl"]].concat()));
    assert_ok(&tvt(dir.path(), &[&args[..], &["--out", "s2.jsonl"]].concat()));
    let s1 = read(dir.path().join("s1.jsonl"));
    assert_eq!(s1, read(dir.path().join("s2.jsonl")));
    assert_eq!(s1.lines().count(), 3);

    let input: Vec<Value> = read(dir.path().join("three.jsonl"))
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let rows: Vec<Value> = s1.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    for (row, genome) in rows.iter().zip(&input) {
        assert_eq!(&row["genome"], genome);
    }
    // recombine the raw metrics by hand: alpha f(m_s) + beta f(m_t)
    let col = |k: &str| rows.iter().map(|r| r[k].as_f64().unwrap()).collect::<Vec<_>>();
    let norm = |v: Vec<f64>| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        v.iter().map(|x| (x - lo) / (hi - lo)).collect::<Vec<_>>()
    };
    let (fs, ft) = (norm(col("m_s")), norm(col("m_t")));
    for (i, t) in col("tvt").iter().enumerate() {
        assert_eq!(*t, 2.0 * fs[i] - 3.0 * ft[i]);
    }
}

#[test]
fn malformed_genome_lines_are_reported_by_number() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&tvt(dir.path(), &["sample", "--space", "tiny", "--n", "2", "--out", "g.jsonl"]));
    let mut text = read(dir.path().join("g.jsonl"));
    text.push_str("{\"not\": \"a genome\"}\n");
    std::fs::write(dir.path().join("g.jsonl"), text).unwrap();
    let out = tvt(dir.path(), &["score", "--genomes", "g.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = error_json(&out)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("g.jsonl:3"), "{msg}");
}

#[test]
fn unknown_config_fields_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"population": 5}"#).unwrap();
    let out = tvt(dir.path(), &["search", "--config", "c.json"]);
    assert_eq!(out.status.code(), Some(2));
    let missing = tvt(dir.path(), &["search", "--config", "nope.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn teacher_checkpoints_and_batch_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tvt_core::TeacherConfig::resnet_small(3, 32);
    tvt_core::model::random_teacher(&cfg, 5).unwrap().save(dir.path().join("teacher")).unwrap();
    let batch = tvt_core::BatchSource::Synthetic { size: 2, seed: 3 }.materialize(3, 32).unwrap();
    tvt_core::tensor::io::save_tensor(dir.path().join("batch.bin"), &batch).unwrap();
    let out = tvt(
        dir.path(),
        &["search", "--population-size", "4", "--topk", "2", "--teacher", "teacher", "--batch", "batch.bin"],
    );
    assert_ok(&out);
    let wrong = tvt(dir.path(), &["search", "--population-size", "4", "--topk", "2", "--teacher", "missing_dir"]);
    assert!(!wrong.status.success());
}
