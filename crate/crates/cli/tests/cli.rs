use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use serde_json::{json, Value};
use tempfile::TempDir;

use modelswitch::backends::UreqTransport;
use modelswitch::config::{RunConfig, RunMode};
use modelswitch::dataset::load_jsonl;
use modelswitch::engine::run_query;
use modelswitch::report::RunReport;
use modelswitch::theory::{exact_mv_accuracy, CategoricalDist, TieConvention};
use modelswitch_cli::{analyze_reports, cmd_analyze, cmd_run, cmd_theory, RunArgs, TheoryCmd, TheoryOutput};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modelswitch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a fixture, a matching dataset and a config into `dir`.
/// `rows[i]` holds one probability row per model; answer "1" is gold.
fn setup(dir: &Path, budget: usize, rows: &[Vec<Vec<f64>>], extra: &str) -> (PathBuf, PathBuf) {
    let n_models = rows[0].len();
    let models: Vec<String> = (1..=n_models).map(|i| format!("m{i}")).collect();
    let queries: Vec<Value> = rows
        .iter()
        .enumerate()
        .map(|(i, probs)| {
            let answers: Vec<String> = (1..=probs[0].len()).map(|a| a.to_string()).collect();
            json!({"id": format!("q{i}"), "answers": answers, "probs": probs})
        })
        .collect();
    fs::write(dir.join("dist.json"), json!({"models": models, "queries": queries}).to_string()).unwrap();
    let dataset: String = (0..rows.len())
        .map(|i| json!({"id": format!("q{i}"), "query": format!("question {i}"), "gold": "1", "kind": "numeric"}).to_string() + "\n")
        .collect();
    fs::write(dir.join("data.jsonl"), dataset).unwrap();
    let mut cfg = format!("budget = {budget}\nseed = 11\n{extra}\n");
    for m in &models {
        cfg += &format!("\n[[models]]\nid = \"{m}\"\nbackend = {{ kind = \"simulated\", fixture = \"dist.json\" }}\n");
    }
    fs::write(dir.join("run.toml"), cfg).unwrap();
    (dir.join("run.toml"), dir.join("data.jsonl"))
}

fn run_args(cfg: &Path, data: &Path, mode: &str, out: &Path) -> RunArgs {
    RunArgs {
        config: cfg.to_path_buf(),
        dataset: data.to_path_buf(),
        mode: mode.parse().unwrap(),
        out: out.to_path_buf(),
        seed: None,
        replay: None,
        record: None,
    }
}

#[test]
fn switch_run_writes_reports() {
    let t = TempDir::new().unwrap();
    let rows = vec![
        vec![vec![0.9, 0.1], vec![0.5, 0.5]],
        vec![vec![0.2, 0.8], vec![0.6, 0.4]],
        vec![vec![1.0, 0.0], vec![0.5, 0.5]],
    ];
    let (cfg, data) = setup(t.path(), 4, &rows, "");
    let out = t.path().join("out");
    let o = bin(&["run", "--config", p(&cfg), "--dataset", p(&data), "--mode", "switch", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["records"], 3);
    assert!(summary["mean_calls"].as_f64().unwrap() <= 4.0);
    let dir = out.join(summary["config_digest"].as_str().unwrap());
    for f in ["summary.json", "report.csv", "ledger.csv", "scatter.csv"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let report = RunReport::read_csv_path(dir.join("report.csv")).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert!(report.rows.iter().all(|r| r.calls <= 4));
    // Query q2 is unanimous in the first model.
    assert_eq!(report.rows[2].calls, 2);
    assert_eq!(report.rows[2].exited_at, Some(0));
    let ledger = fs::read_to_string(dir.join("ledger.csv")).unwrap();
    assert_eq!(ledger.lines().next(), Some("id,budget,calls,saved"));
    assert!(ledger.contains("q2,4,2,2"));
}

#[test]
fn self_consistency_matches_exact_vote() {
    let t = TempDir::new().unwrap();
    let rows = vec![vec![vec![0.6, 0.4]]; 10_000];
    let (cfg, data) = setup(t.path(), 5, &rows, "");
    let res = cmd_run(&run_args(&cfg, &data, "self-consistency:m1", &t.path().join("out")), Arc::new(UreqTransport)).unwrap();
    let exact = exact_mv_accuracy(
        &CategoricalDist::with_first_correct(vec![0.6, 0.4]).unwrap(),
        5,
        TieConvention::TiesCorrect,
    )
    .unwrap();
    assert!((exact - 0.68256).abs() < 1e-12);
    assert!((res.summary.accuracy - exact).abs() < 0.02, "{} vs {exact}", res.summary.accuracy);
    assert_eq!(res.summary.mean_calls, 5.0);
    assert_eq!(res.summary.mode, "self-consistency:m1");
}

#[test]
fn best_of_n_with_oracle_scorer_finds_gold_when_sampled() {
    let t = TempDir::new().unwrap();
    let rows = vec![vec![vec![0.15, 0.5, 0.35], vec![0.1, 0.3, 0.6]]; 300];
    let (cfg, data) = setup(t.path(), 6, &rows, "early_exit = false\n[scorer]\nkind = \"oracle\"");
    let res = cmd_run(&run_args(&cfg, &data, "bon", &t.path().join("out")), Arc::new(UreqTransport)).unwrap();

    // Rebuild the same samples to find the queries whose samples contain gold.
    let config = RunConfig::load(&cfg).unwrap();
    let rules = config.ruleset().unwrap();
    let backends = config.build_backends(Arc::new(UreqTransport), None).unwrap();
    let specs = config.model_specs(&RunMode::BestOfN).unwrap();
    let switch = config.switch_config(&RunMode::Switch, Arc::new(UreqTransport)).unwrap();
    let records = load_jsonl(&data, rules.kind()).unwrap();
    let mut covered = 0;
    for (rec, row) in records.iter().zip(&res.report.rows) {
        let q = rec.to_query(&config.prompt_template);
        let out = run_query(&q, &specs, &switch, &rules, &backends).unwrap();
        let has_gold = out.per_model.iter().flat_map(|r| &r.answers).any(|a| a.as_ref() == q.gold.as_ref());
        if has_gold {
            covered += 1;
            assert!(row.correct, "{}", row.id);
        } else {
            assert!(!row.correct, "{}", row.id);
        }
    }
    assert!(covered > 100 && covered < 300, "{covered}");
}

#[test]
fn theory_prop1_examples() {
    let t = TempDir::new().unwrap();
    let f = t.path().join("pairs.json");
    fs::write(
        &f,
        json!({"models": ["a", "b"], "queries": [
            {"id": "crossed", "answers": ["1", "2", "3"], "probs": [[0.4, 0.6, 0.0], [0.4, 0.0, 0.6]]},
            {"id": "strong-weak", "answers": ["1", "2", "3", "4"], "probs": [[0.7, 0.1, 0.2, 0.0], [0.15, 0.05, 0.05, 0.75]]}
        ]})
        .to_string(),
    )
    .unwrap();
    let o = bin(&["theory", "prop1", "--fixture", p(&f), "--out", p(&t.path().join("t"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_reader(o.stdout.as_slice());
    let headers = rdr.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "mixture_argmax_correct").unwrap();
    let recs: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(recs.len(), 2);
    assert!(recs.iter().all(|r| &r[col] == "true"));
    assert!(t.path().join("t/prop1.csv").is_file());
}

#[test]
fn theory_expect_equal_models_reduce_to_voting() {
    let t = TempDir::new().unwrap();
    let f = t.path().join("same.json");
    fs::write(
        &f,
        json!({"models": ["a", "b"], "queries": [
            {"id": "x", "answers": ["1", "2", "3"], "probs": [[0.5, 0.3, 0.2], [0.5, 0.3, 0.2]]},
            {"id": "y", "answers": ["1", "2"], "probs": [[0.45, 0.55], [0.45, 0.55]]}
        ]})
        .to_string(),
    )
    .unwrap();
    let cmd = TheoryCmd::Expect {
        budgets: vec![1, 3, 5],
        tie: TieConvention::TiesCorrect,
    };
    let TheoryOutput::Expect(rows) = cmd_theory(&cmd, Some(&f)).unwrap() else {
        panic!("wrong output")
    };
    assert_eq!(rows.len(), 6);
    for r in rows {
        assert!((r.ms_k - r.mv1_2k).abs() < 1e-10, "{r:?}");
        assert_eq!(r.mv1_k, r.mv2_k);
    }
    let o = bin(&["theory", "expect", "--fixture", p(&f), "--K", "2,4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 5);
}

#[test]
fn theory_calls_profile() {
    let o = bin(&["theory", "calls", "--K", "16", "--profile", "0.5,1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let rec = rdr.records().next().unwrap().unwrap();
    assert_eq!(rec[3].parse::<f64>().unwrap(), 12.0);
    assert_eq!(rec[4].parse::<f64>().unwrap(), 0.25);
}

#[test]
fn theory_condition_reports() {
    let t = TempDir::new().unwrap();
    let f = t.path().join("c.json");
    fs::write(
        &f,
        json!({"models": ["a", "b"], "queries": [
            {"id": "x", "answers": ["1", "2", "3"], "probs": [[0.4, 0.6, 0.0], [0.4, 0.0, 0.6]]},
            {"id": "y", "answers": ["1", "2", "3"], "probs": [[0.9, 0.1, 0.0], [0.2, 0.8, 0.0]]}
        ]})
        .to_string(),
    )
    .unwrap();
    let cmd = TheoryCmd::Condition {
        budget: 6,
        eps: 0.1,
        tie: TieConvention::TiesCorrect,
    };
    let TheoryOutput::Condition { report, labels } = cmd_theory(&cmd, Some(&f)).unwrap() else {
        panic!("wrong output")
    };
    assert_eq!(report.n_queries, 2);
    assert_eq!(labels.len(), 2);
    assert_eq!(report.n_omega1 + report.n_omega2 + report.n_neutral, 2);
}

#[test]
fn analyze_all_consistent_run() {
    let t = TempDir::new().unwrap();
    let rows = vec![vec![vec![1.0, 0.0], vec![0.3, 0.7]]; 20];
    let (cfg, data) = setup(t.path(), 8, &rows, "");
    let res = cmd_run(&run_args(&cfg, &data, "switch", &t.path().join("out")), Arc::new(UreqTransport)).unwrap();
    let report = res.dir.join("report.csv");
    let o = bin(&["analyze", p(&report), "--out", p(&t.path().join("an"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let a: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(a["buckets"], json!([{"entropy": 0.0, "accuracy": 1.0, "count": 20}]));
    assert_eq!(a["r"], Value::Null);
    assert!(a["correlation_error"].is_string());
    let buckets = fs::read_to_string(t.path().join("an/buckets.csv")).unwrap();
    assert_eq!(buckets, "entropy,accuracy,count\n0.0,1.0,20\n");
}

/// Mixed-confidence regime: most queries are confidently right, the rest
/// are confused between several answers.
fn regime_rows(n: usize) -> Vec<Vec<Vec<f64>>> {
    (0..n)
        .map(|i| {
            let frac = ((i * 37) % 100) as f64 / 100.0;
            let c = if i % 5 < 3 { 0.75 + 0.23 * frac } else { 0.05 + 0.3 * frac };
            let rest = (1.0 - c) / 3.0;
            vec![vec![c, rest, rest, 1.0 - c - 2.0 * rest]]
        })
        .collect()
}

#[test]
fn analyze_regime_and_concatenation() {
    let t = TempDir::new().unwrap();
    let (cfg, data) = setup(t.path(), 8, &regime_rows(400), "");
    let res = cmd_run(&run_args(&cfg, &data, "switch", &t.path().join("out")), Arc::new(UreqTransport)).unwrap();
    let whole = cmd_analyze(&[res.dir.join("report.csv")]).unwrap();
    assert!(whole.r.unwrap() <= -0.5, "r = {:?}", whole.r);
    assert!(whole.p_value.unwrap() < 0.001);

    let mut first = res.report.clone();
    let mut second = res.report.clone();
    first.rows.truncate(150);
    second.rows.drain(..150);
    let (a, b) = (t.path().join("a.csv"), t.path().join("b.csv"));
    first.write_csv(fs::File::create(&a).unwrap()).unwrap();
    second.write_csv(fs::File::create(&b).unwrap()).unwrap();
    let split = cmd_analyze(&[a, b]).unwrap();
    assert_eq!(split, whole);
    assert_eq!(analyze_reports(&[first, second]), whole);
}

#[test]
fn error_reports_are_machine_readable() {
    let t = TempDir::new().unwrap();
    let rows = vec![vec![vec![0.5, 0.5], vec![0.5, 0.5]]; 2];
    let (cfg, data) = setup(t.path(), 4, &rows, "");
    let out = t.path().join("out");

    let bad_cfg = t.path().join("bad.toml");
    fs::write(&bad_cfg, "budget = 4\nmodels = []\n").unwrap();
    let o = bin(&["run", "--config", p(&bad_cfg), "--dataset", p(&data), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let e: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(e["error"], "ConfigInvalid");

    let bad_data = t.path().join("bad.jsonl");
    let line = "{\"id\": \"a\", \"query\": \"q\", \"gold\": \"1\", \"kind\": \"numeric\"}\n";
    fs::write(&bad_data, line.repeat(2)).unwrap();
    let o = bin(&["run", "--config", p(&cfg), "--dataset", p(&bad_data), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(serde_json::from_slice::<Value>(&o.stderr).unwrap()["error"], "DatasetInvalid");

    let empty = t.path().join("empty-fixtures");
    fs::create_dir(&empty).unwrap();
    let o = bin(&["run", "--config", p(&cfg), "--dataset", p(&data), "--out", p(&out), "--replay", p(&empty)]);
    assert_eq!(o.status.code(), Some(4));
    let e: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(e["error"], "BackendUnavailable");
    // One miss per query: the first model's first sample.
    assert_eq!(e["missing_fixtures"].as_array().unwrap().len(), 2);

    let o = bin(&["run", "--config", p(&cfg), "--dataset", p(&data), "--out", p(&out), "--mode", "self-consistency:m9"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn record_then_replay_is_identical() {
    let t = TempDir::new().unwrap();
    let (cfg, data) = setup(t.path(), 6, &regime_rows(30).into_iter().map(|r| vec![r[0].clone(), r[0].clone()]).collect::<Vec<_>>(), "");
    let store = t.path().join("fixtures");
    let run = |out: &str, flag: &str| {
        let out = t.path().join(out);
        let o = bin(&["run", "--config", p(&cfg), "--dataset", p(&data), "--out", p(&out), flag, p(&store)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let s: Value = serde_json::from_slice(&o.stdout).unwrap();
        fs::read(out.join(s["config_digest"].as_str().unwrap()).join("report.csv")).unwrap()
    };
    let recorded = run("rec", "--record");
    let first = run("rep1", "--replay");
    let second = run("rep2", "--replay");
    assert_eq!(first, second);
    assert_eq!(first, recorded);
}
