//! Subcommand implementations behind the `modelswitch` binary.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use modelswitch::backends::{
    Backend, BackendError, BackendErrorKind, BackendRegistry, GenerationRequest, ReplayMode, Transport,
};
use modelswitch::config::{RunConfig, RunMode};
use modelswitch::dataset::load_jsonl;
use modelswitch::engine::{run_dataset, EngineError, RunOptions};
use modelswitch::fixture::DistributionFixture;
use modelswitch::report::RunReport;
use modelswitch::theory::{
    correlation, expected_calls, exact_ms_accuracy, exact_mv_accuracy, label_query, prop1_check, theorem_condition,
    ConditionReport, ConsistencyProfile, EventLabel, Prop1Report, QueryPair, TieConvention,
};

/// Width of the entropy buckets written by `analyze`, in bits.
pub const BUCKET_WIDTH: f64 = 0.25;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    ConfigInvalid(String),
    #[error("{0}")]
    DatasetInvalid(String),
    #[error("{message}")]
    BackendUnavailable {
        message: String,
        missing_fixtures: Vec<String>,
    },
    #[error("{0}")]
    RunFailed(String),
    #[error("{0}")]
    Theory(String),
    #[error("{0}")]
    Report(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::ConfigInvalid(_) => "ConfigInvalid",
            CliError::DatasetInvalid(_) => "DatasetInvalid",
            CliError::BackendUnavailable { .. } => "BackendUnavailable",
            CliError::RunFailed(_) => "RunFailed",
            CliError::Theory(_) => "Theory",
            CliError::Report(_) => "Report",
            CliError::Io(_) => "Io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigInvalid(_) => 2,
            CliError::DatasetInvalid(_) => 3,
            CliError::BackendUnavailable { .. } => 4,
            CliError::RunFailed(_) => 5,
            CliError::Theory(_) => 6,
            CliError::Report(_) => 7,
            CliError::Io(_) => 8,
        }
    }

    /// Machine-readable error report.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        if let CliError::BackendUnavailable { missing_fixtures, .. } = self {
            v["missing_fixtures"] = json!(missing_fixtures);
        }
        v
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub config: PathBuf,
    pub dataset: PathBuf,
    pub mode: RunMode,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub replay: Option<PathBuf>,
    pub record: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_digest: String,
    pub mode: String,
    pub budget: usize,
    pub records: usize,
    pub accuracy: f64,
    pub mean_calls: f64,
    pub saved_fraction: f64,
    pub errors: usize,
    pub extraction_failures: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// `<out>/<config digest>`.
    pub dir: PathBuf,
    pub report: RunReport,
    pub summary: RunSummary,
}

#[derive(Serialize)]
struct LedgerRow<'a> {
    id: &'a str,
    budget: usize,
    calls: usize,
    saved: usize,
}

/// Passes requests through and remembers every fixture miss.
struct MissTracker {
    inner: Arc<dyn Backend>,
    misses: Arc<Mutex<BTreeSet<String>>>,
}

impl Backend for MissTracker {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>, BackendError> {
        let out = self.inner.generate(req);
        if let Err(BackendError {
            kind: BackendErrorKind::FixtureMiss(key),
            ..
        }) = &out
        {
            self.misses.lock().expect("miss set lock").insert(key.clone());
        }
        out
    }
}

pub fn cmd_run(args: &RunArgs, transport: Arc<dyn Transport>) -> Result<RunOutput, CliError> {
    let cfg_err = |e: &dyn std::fmt::Display| CliError::ConfigInvalid(e.to_string());
    let mut cfg = RunConfig::load(&args.config).map_err(|e| cfg_err(&e))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let specs = cfg.model_specs(&args.mode).map_err(|e| cfg_err(&e))?;
    let rules = cfg.ruleset().map_err(|e| cfg_err(&e))?;
    let records = load_jsonl(&args.dataset, rules.kind())
        .map_err(|e| CliError::DatasetInvalid(format!("{}: {e}", args.dataset.display())))?;

    let wrap = match (&args.replay, &args.record) {
        (Some(_), Some(_)) => return Err(CliError::ConfigInvalid("--replay and --record are exclusive".into())),
        (Some(dir), None) => Some((ReplayMode::Replay, dir.as_path())),
        (None, Some(dir)) => Some((ReplayMode::Record, dir.as_path())),
        (None, None) => None,
    };
    let built = cfg.build_backends(transport.clone(), wrap).map_err(|e| cfg_err(&e))?;
    let misses = Arc::new(Mutex::new(BTreeSet::new()));
    let mut backends = BackendRegistry::new();
    for id in built.ids() {
        backends.insert(Arc::new(MissTracker {
            inner: built.get(id).expect("listed id").clone(),
            misses: misses.clone(),
        }));
    }

    let switch = cfg.switch_config(&args.mode, transport).map_err(|e| cfg_err(&e))?;
    let digest = cfg.digest(&args.mode);
    let queries: Vec<_> = records.iter().map(|r| r.to_query(&cfg.prompt_template)).collect();
    let opts = RunOptions {
        workers: cfg.workers,
        fail_fast: cfg.fail_fast,
        config_digest: digest.clone(),
    };
    let result = run_dataset(&queries, &specs, &switch, &rules, &backends, &opts);
    let missing: Vec<String> = misses.lock().expect("miss set lock").iter().cloned().collect();
    if !missing.is_empty() {
        return Err(CliError::BackendUnavailable {
            message: format!("{} replay fixture(s) missing", missing.len()),
            missing_fixtures: missing,
        });
    }
    let report = match result {
        Ok(r) => r,
        Err(e @ EngineError::Backend { .. }) => {
            return Err(CliError::BackendUnavailable {
                message: e.to_string(),
                missing_fixtures: Vec::new(),
            })
        }
        Err(e) => return Err(CliError::RunFailed(e.to_string())),
    };

    let ledger = report.ledger();
    let summary = RunSummary {
        config_digest: digest.clone(),
        mode: args.mode.to_string(),
        budget: report.budget,
        records: report.rows.len(),
        accuracy: report.accuracy(),
        mean_calls: report.mean_calls(),
        saved_fraction: ledger.saved_fraction,
        errors: report.error_count(),
        extraction_failures: report.rows.iter().map(|r| r.extraction_failures).sum(),
    };
    let dir = args.out.join(&digest);
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let mut csv_bytes = Vec::new();
    report.write_csv(&mut csv_bytes).map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&dir.join("report.csv"), &csv_bytes)?;
    let ledger_rows: Vec<LedgerRow> = report
        .rows
        .iter()
        .map(|r| LedgerRow {
            id: &r.id,
            budget: report.budget,
            calls: r.calls,
            saved: report.budget.saturating_sub(r.calls),
        })
        .collect();
    write_file(&dir.join("ledger.csv"), to_csv(&ledger_rows)?.as_bytes())?;
    write_file(&dir.join("scatter.csv"), to_csv(&scatter_points(&report))?.as_bytes())?;
    let body = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    write_file(&dir.join("summary.json"), &body)?;
    Ok(RunOutput { dir, report, summary })
}

#[derive(Debug, Clone, PartialEq)]
pub enum TheoryCmd {
    Prop1,
    Expect { budgets: Vec<usize>, tie: TieConvention },
    /// Explicit profile, or one profile per fixture query from its
    /// distributions.
    Calls { budget: usize, profile: Option<Vec<f64>> },
    Condition { budget: usize, eps: f64, tie: TieConvention },
}

/// Flat form of [`Prop1Report`] for CSV output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Row {
    pub id: String,
    pub x1: f64,
    pub x2: f64,
    pub y1: f64,
    pub y2: f64,
    pub p: f64,
    pub q: f64,
    pub m: usize,
    pub necessary_holds: bool,
    pub sufficient_holds: bool,
    pub mixture_argmax_correct: bool,
    pub shared_dominant_error: bool,
}

impl Prop1Row {
    fn new(id: String, r: Prop1Report) -> Self {
        Self {
            id,
            x1: r.x1,
            x2: r.x2,
            y1: r.y1,
            y2: r.y2,
            p: r.p,
            q: r.q,
            m: r.m,
            necessary_holds: r.necessary_holds,
            sufficient_holds: r.sufficient_holds,
            mixture_argmax_correct: r.mixture_argmax_correct,
            shared_dominant_error: r.shared_dominant_error,
        }
    }
}

/// Exact accuracies of the first two fixture models at budget `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectRow {
    pub id: String,
    pub k: usize,
    pub mv1_k: f64,
    pub mv1_2k: f64,
    pub mv2_k: f64,
    pub mv2_2k: f64,
    /// Switching with `k` samples per model.
    pub ms_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallsRow {
    pub id: String,
    pub budget: usize,
    /// Consistency probabilities joined with `;`.
    pub profile: String,
    pub expected_samples: f64,
    pub cost_savings: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub id: String,
    pub label: EventLabel,
    pub mv_accuracy: f64,
    pub ms_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TheoryOutput {
    Prop1(Vec<Prop1Row>),
    Expect(Vec<ExpectRow>),
    Calls(Vec<CallsRow>),
    Condition { report: ConditionReport, labels: Vec<LabelRow> },
}

impl TheoryOutput {
    pub fn name(&self) -> &'static str {
        match self {
            TheoryOutput::Prop1(_) => "prop1",
            TheoryOutput::Expect(_) => "expect",
            TheoryOutput::Calls(_) => "calls",
            TheoryOutput::Condition { .. } => "condition",
        }
    }

    pub fn to_csv(&self) -> Result<String, CliError> {
        match self {
            TheoryOutput::Prop1(rows) => to_csv(rows),
            TheoryOutput::Expect(rows) => to_csv(rows),
            TheoryOutput::Calls(rows) => to_csv(rows),
            TheoryOutput::Condition { labels, .. } => to_csv(labels),
        }
    }

    /// Writes `<name>.csv`, plus `condition.json` for the condition check.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_file(&dir.join(format!("{}.csv", self.name())), self.to_csv()?.as_bytes())?;
        if let TheoryOutput::Condition { report, .. } = self {
            let body = serde_json::to_vec_pretty(report).expect("report serializes");
            write_file(&dir.join("condition.json"), &body)?;
        }
        Ok(())
    }
}

fn theory_err(e: impl std::fmt::Display) -> CliError {
    CliError::Theory(e.to_string())
}

fn load_fixture(path: Option<&Path>, min_models: usize) -> Result<DistributionFixture, CliError> {
    let path = path.ok_or_else(|| CliError::Theory("--fixture is required".into()))?;
    let f = DistributionFixture::from_path(path).map_err(|e| CliError::Theory(format!("{}: {e}", path.display())))?;
    if f.models.len() < min_models {
        return Err(CliError::Theory(format!(
            "{} needs at least {min_models} models, found {}",
            path.display(),
            f.models.len()
        )));
    }
    Ok(f)
}

fn pairs(f: &DistributionFixture) -> Vec<QueryPair> {
    f.queries
        .iter()
        .map(|q| QueryPair {
            id: q.id.clone(),
            p1: q.dist(0),
            p2: q.dist(1),
        })
        .collect()
}

pub fn cmd_theory(cmd: &TheoryCmd, fixture: Option<&Path>) -> Result<TheoryOutput, CliError> {
    match cmd {
        TheoryCmd::Prop1 => {
            let f = load_fixture(fixture, 2)?;
            pairs(&f)
                .into_iter()
                .map(|p| Ok(Prop1Row::new(p.id.clone(), prop1_check(&p.p1, &p.p2).map_err(theory_err)?)))
                .collect::<Result<_, _>>()
                .map(TheoryOutput::Prop1)
        }
        TheoryCmd::Expect { budgets, tie } => {
            let f = load_fixture(fixture, 2)?;
            let mut rows = Vec::new();
            for p in pairs(&f) {
                for &k in budgets {
                    let mv = |d, k| exact_mv_accuracy(d, k, *tie).map_err(theory_err);
                    rows.push(ExpectRow {
                        id: p.id.clone(),
                        k,
                        mv1_k: mv(&p.p1, k)?,
                        mv1_2k: mv(&p.p1, 2 * k)?,
                        mv2_k: mv(&p.p2, k)?,
                        mv2_2k: mv(&p.p2, 2 * k)?,
                        ms_k: exact_ms_accuracy(&p.p1, &p.p2, k, *tie).map_err(theory_err)?,
                    });
                }
            }
            Ok(TheoryOutput::Expect(rows))
        }
        TheoryCmd::Calls { budget, profile } => {
            let row = |id: String, prof: ConsistencyProfile| -> Result<CallsRow, CliError> {
                let e = expected_calls(*budget, &prof).map_err(theory_err)?;
                Ok(CallsRow {
                    id,
                    budget: *budget,
                    profile: prof.probs().iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
                    expected_samples: e.expected_samples,
                    cost_savings: e.cost_savings,
                })
            };
            let rows = match profile {
                Some(p) => vec![row("profile".into(), ConsistencyProfile::new(p.clone()).map_err(theory_err)?)?],
                None => {
                    let f = load_fixture(fixture, 1)?;
                    f.queries
                        .iter()
                        .map(|q| {
                            let dists: Vec<_> = (0..f.models.len()).map(|i| q.dist(i)).collect();
                            row(q.id.clone(), ConsistencyProfile::from_dists(&dists, *budget).map_err(theory_err)?)
                        })
                        .collect::<Result<_, _>>()?
                }
            };
            Ok(TheoryOutput::Calls(rows))
        }
        TheoryCmd::Condition { budget, eps, tie } => {
            let f = load_fixture(fixture, 2)?;
            let labeled = pairs(&f)
                .into_iter()
                .map(|p| label_query(p, *budget, *tie).map_err(theory_err))
                .collect::<Result<Vec<_>, _>>()?;
            let report = theorem_condition(&labeled, *budget, *eps).map_err(theory_err)?;
            let labels = labeled
                .into_iter()
                .map(|l| LabelRow {
                    id: l.pair.id,
                    label: l.label,
                    mv_accuracy: l.mv_accuracy,
                    ms_accuracy: l.ms_accuracy,
                })
                .collect();
            Ok(TheoryOutput::Condition { report, labels })
        }
    }
}

pub fn parse_tie(s: &str) -> Result<TieConvention, String> {
    serde_json::from_value(json!(s))
        .map_err(|_| format!("unknown tie convention {s:?}; expected ties-correct, ties-lose, split or earlier-model"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub id: String,
    pub entropy: f64,
    pub correct: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    /// Lower edge of the entropy bucket.
    pub entropy: f64,
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub rows: usize,
    pub buckets: Vec<Bucket>,
    pub n: usize,
    pub r: Option<f64>,
    pub p_value: Option<f64>,
    /// Why `r` is absent, when it is.
    pub correlation_error: Option<String>,
    #[serde(skip)]
    pub points: Vec<ScatterPoint>,
}

fn scatter_points(report: &RunReport) -> Vec<ScatterPoint> {
    report
        .rows
        .iter()
        .filter_map(|r| {
            r.first_entropy.map(|e| ScatterPoint {
                id: r.id.clone(),
                entropy: e,
                correct: u8::from(r.correct),
            })
        })
        .collect()
}

pub fn analyze_reports(reports: &[RunReport]) -> Analysis {
    let points: Vec<ScatterPoint> = reports.iter().flat_map(scatter_points).collect();
    let mut buckets: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for p in &points {
        // The nudge keeps values a rounding error below an edge in the upper bucket.
        let b = (p.entropy / BUCKET_WIDTH + 1e-9).floor().max(0.0) as u64;
        let e = buckets.entry(b).or_insert((0, 0));
        e.0 += 1;
        e.1 += p.correct as usize;
    }
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.entropy, p.correct as f64)).collect();
    let (r, p_value, correlation_error) = match correlation(&pairs) {
        Ok(c) => (Some(c.r), Some(c.p_value), None),
        Err(e) => (None, None, Some(e.to_string())),
    };
    Analysis {
        rows: reports.iter().map(|r| r.rows.len()).sum(),
        buckets: buckets
            .into_iter()
            .map(|(b, (count, correct))| Bucket {
                entropy: b as f64 * BUCKET_WIDTH,
                accuracy: correct as f64 / count as f64,
                count,
            })
            .collect(),
        n: points.len(),
        r,
        p_value,
        correlation_error,
        points,
    }
}

pub fn cmd_analyze(paths: &[PathBuf]) -> Result<Analysis, CliError> {
    if paths.is_empty() {
        return Err(CliError::Report("no reports given".into()));
    }
    let reports = paths
        .iter()
        .map(|p| RunReport::read_csv_path(p).map_err(|e| CliError::Report(format!("{}: {e}", p.display()))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(analyze_reports(&reports))
}

/// Writes `buckets.csv`, `scatter.csv` and `correlation.json`.
pub fn write_analysis(a: &Analysis, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_file(&dir.join("buckets.csv"), to_csv(&a.buckets)?.as_bytes())?;
    write_file(&dir.join("scatter.csv"), to_csv(&a.points)?.as_bytes())?;
    let body = serde_json::to_vec_pretty(a).expect("analysis serializes");
    write_file(&dir.join("correlation.json"), &body)
}
