//! Result tables as CSV/JSON, and the train/predict timing harness.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{EventType, FinalLabel, NarrativeRecord};
use crate::ensemble::ModelComparison;
use crate::features::SparseVector;
use crate::io::write_json;
use crate::models::{predict, train, Hyperparams, LabeledExample, ModelKind, PredictionSet};
use crate::stats::{
    confusion, fisher_exact, precision, proportion_ci, AgreementMatrix, ConfusionMatrix2x2, Precision,
    StatTestResult, TestConfig,
};
use crate::{Error, Label, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityRow {
    /// Event name, or `total`.
    pub event: String,
    pub yes: u64,
    pub no: u64,
    pub n: u64,
    /// `100 * yes / n`, rounded half-up to 2 decimals.
    pub percent_yes: f64,
}

impl ValidityRow {
    fn new(event: &str, yes: u64, no: u64) -> Self {
        let n = yes + no;
        ValidityRow {
            event: event.to_string(),
            yes,
            no,
            n,
            percent_yes: percent_2dp(yes, n),
        }
    }
}

/// Percentage with two decimals, rounded half-up in integer arithmetic.
pub fn percent_2dp(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        return 0.0;
    }
    let basis_points = (20_000 * part as u128 + whole as u128) / (2 * whole as u128);
    basis_points as f64 / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityTable {
    pub rows: Vec<ValidityRow>,
    pub total: ValidityRow,
    /// Wald interval for the total proportion.
    pub ci: StatTestResult,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Per-event Yes/No tallies of final labels. `ci_n` overrides the sample
/// size used for the total's interval (the proportion is kept).
pub fn build_validity_table(
    labels: &[FinalLabel],
    corpus: &[NarrativeRecord],
    ci_n: Option<u64>,
    config: &TestConfig,
) -> Result<ValidityTable> {
    let events: BTreeMap<&str, EventType> = corpus.iter().map(|r| (r.id.as_str(), r.event_type)).collect();
    let mut counts: BTreeMap<EventType, (u64, u64)> = BTreeMap::new();
    let mut unknown = Vec::new();
    for l in labels {
        match events.get(l.narrative_id.as_str()) {
            Some(e) => {
                let c = counts.entry(*e).or_default();
                if l.label.is_yes() {
                    c.0 += 1
                } else {
                    c.1 += 1
                }
            }
            None => unknown.push(l.narrative_id.clone()),
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownIds(unknown));
    }
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for e in EventType::ALL {
        match counts.get(&e) {
            Some(&(y, n)) if y + n > 0 => rows.push(ValidityRow::new(e.as_str(), y, n)),
            _ => {
                let w = format!("no labels for event `{e}`; row omitted");
                log::warn!("{w}");
                warnings.push(w);
            }
        }
    }
    let yes: u64 = rows.iter().map(|r| r.yes).sum();
    let no: u64 = rows.iter().map(|r| r.no).sum();
    if yes + no == 0 {
        return Err(Error::InvalidArgument("no labels to tabulate".into()));
    }
    let total = ValidityRow::new("total", yes, no);
    let ci = match ci_n {
        Some(n) if n != total.n => {
            let scaled = (yes as f64 / total.n as f64 * n as f64).round() as u64;
            proportion_ci(scaled, n, config)?
        }
        _ => proportion_ci(yes, total.n, config)?,
    };
    Ok(ValidityTable {
        rows,
        total,
        ci,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignificanceSummary {
    pub significant: usize,
    pub total: usize,
    /// Results with p exactly 1.
    pub degenerate: usize,
}

pub fn significance_summary<'a>(
    results: impl IntoIterator<Item = &'a StatTestResult>,
    alpha: f64,
) -> SignificanceSummary {
    let mut s = SignificanceSummary {
        significant: 0,
        total: 0,
        degenerate: 0,
    };
    for r in results {
        s.total += 1;
        if r.is_significant(alpha) {
            s.significant += 1;
        }
        if r.p_value == Some(1.0) {
            s.degenerate += 1;
        }
    }
    s
}

/// Confusion, precision and Fisher test of one model on one slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub model: ModelKind,
    /// Event name or `all`.
    pub slice: String,
    pub confusion: ConfusionMatrix2x2,
    pub precision: Precision,
    pub accuracy: Option<f64>,
    pub fisher: StatTestResult,
}

pub fn evaluate_predictions(
    pred: &PredictionSet,
    truth: &BTreeMap<String, Label>,
    slice: &str,
    config: &TestConfig,
) -> Result<ModelEvaluation> {
    let cm = confusion(&pred.predictions, truth)?;
    Ok(ModelEvaluation {
        model: pred.model.clone(),
        slice: slice.to_string(),
        precision: precision(&cm),
        accuracy: cm.accuracy(),
        fisher: fisher_exact(&cm, config),
        confusion: cm,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidArgument(format!("csv {}: {other:?}", path.display())),
    }
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_validity_csv(table: &ValidityTable, path: &Path) -> Result<()> {
    let half = table.ci.extras.get("half_width").copied().unwrap_or(0.0) * 100.0;
    let rows = table.rows.iter().chain([&table.total]).map(|r| {
        vec![
            r.event.clone(),
            r.yes.to_string(),
            r.no.to_string(),
            r.n.to_string(),
            format!("{:.2}", r.percent_yes),
            if r.event == "total" { format!("{half:.2}") } else { String::new() },
        ]
    });
    write_rows(path, &["event", "yes", "no", "n", "percent_yes", "ci_half_width_pct"], rows)
}

pub fn write_fisher_csv(evals: &[ModelEvaluation], alpha: f64, path: &Path) -> Result<()> {
    let rows = evals.iter().map(|e| {
        let c = e.confusion;
        vec![
            e.model.to_string(),
            e.slice.clone(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            c.tn.to_string(),
            opt(e.fisher.p_value),
            e.fisher.is_significant(alpha).to_string(),
        ]
    });
    write_rows(path, &["model", "event", "tp", "fp", "fn", "tn", "p_value", "significant"], rows)
}

pub fn write_precision_csv(evals: &[ModelEvaluation], path: &Path) -> Result<()> {
    let rows = evals.iter().map(|e| {
        vec![
            e.model.to_string(),
            e.slice.clone(),
            opt(e.precision.yes),
            opt(e.precision.no),
            opt(e.accuracy),
        ]
    });
    write_rows(path, &["model", "event", "yes_precision", "no_precision", "accuracy"], rows)
}

pub fn write_confusion_csv(cm: &ConfusionMatrix2x2, path: &Path) -> Result<()> {
    let pct = cm.normalized().map(|v| v.map(|x| format!("{:.2}", x * 100.0)));
    let pct = pct.unwrap_or_else(|| std::array::from_fn(|_| String::new()));
    let rows = [
        vec!["yes".into(), cm.tp.to_string(), cm.fp.to_string(), pct[0].clone(), pct[1].clone()],
        vec!["no".into(), cm.fn_.to_string(), cm.tn.to_string(), pct[2].clone(), pct[3].clone()],
    ];
    write_rows(
        path,
        &["predicted", "actual_yes", "actual_no", "actual_yes_pct", "actual_no_pct"],
        rows,
    )
}

pub fn write_agreement_csv(matrix: &AgreementMatrix, path: &Path) -> Result<()> {
    let rows = matrix.cells.iter().map(|c| {
        vec![
            c.model_a.to_string(),
            c.model_b.to_string(),
            fmt_f(c.agreement),
            fmt_f(c.mcnemar_p),
            c.significant.to_string(),
        ]
    });
    write_rows(path, &["model_a", "model_b", "agreement", "mcnemar_p", "significant"], rows)
}

/// McNemar results against a baseline, each tagged with its slice.
pub fn write_mcnemar_csv(rows_in: &[(String, ModelComparison)], path: &Path) -> Result<()> {
    let rows = rows_in.iter().map(|(slice, c)| {
        let r = &c.result;
        vec![
            c.model.to_string(),
            slice.clone(),
            r.extras.get("b").map(|v| (*v as u64).to_string()).unwrap_or_default(),
            r.extras.get("c").map(|v| (*v as u64).to_string()).unwrap_or_default(),
            r.method.to_string(),
            opt(r.statistic),
            opt(r.p_value),
            c.significant.to_string(),
        ]
    });
    write_rows(
        path,
        &["model", "event", "b", "c", "method", "statistic", "p_value", "significant"],
        rows,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineInfo {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
    pub family: String,
}

impl MachineInfo {
    pub fn current() -> Self {
        MachineInfo {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            cpus: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            family: std::env::consts::FAMILY.to_string(),
        }
    }
}

/// Training and prediction data for one event type.
#[derive(Debug, Clone)]
pub struct BenchSlice {
    pub event: String,
    pub train: Vec<LabeledExample>,
    pub predict: Vec<(String, SparseVector)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTiming {
    pub event: String,
    /// Medians over repetitions.
    pub train_seconds: f64,
    pub predict_seconds: f64,
    pub n_train: usize,
    pub n_predict: usize,
    pub train_runs: Vec<f64>,
    pub predict_runs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub model: ModelKind,
    /// Means of the per-event medians.
    pub train_seconds: f64,
    pub predict_seconds: f64,
    pub n_train: usize,
    pub n_predict: usize,
    pub repetitions: usize,
    pub per_event: Vec<EventTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchFailure {
    pub model: ModelKind,
    pub event: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub timings: Vec<TimingReport>,
    pub failures: Vec<BenchFailure>,
    pub machine: MachineInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub repetitions: usize,
    /// Time each repetition spends on its operation, at least.
    pub min_sample_seconds: f64,
    /// Calls per repetition, at least.
    pub min_calls: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            repetitions: 3,
            min_sample_seconds: 0.2,
            min_calls: 10,
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// One timing per repetition: the fastest call seen by that repetition.
///
/// Repetitions take turns call by call, so slow phases of the machine hit
/// all of them alike. Rounds continue until there have been `min_calls`
/// and the repetitions together spent `repetitions * min_sample_seconds`.
fn timed_repetitions(config: &BenchConfig, mut op: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    let reps = config.repetitions;
    let budget = reps as f64 * config.min_sample_seconds;
    let mut best = vec![f64::INFINITY; reps];
    let mut spent = 0.0;
    let mut rounds = 0usize;
    while rounds < config.min_calls.max(1) || (spent < budget && rounds < 10_000) {
        for b in best.iter_mut() {
            let t = Instant::now();
            op()?;
            let secs = t.elapsed().as_secs_f64();
            *b = b.min(secs);
            spent += secs;
        }
        rounds += 1;
    }
    Ok(best)
}

/// Times training and prediction of native models, one model and one
/// slice at a time. A failing (model, slice) is recorded and skipped.
pub fn bench(models: &[ModelKind], slices: &[BenchSlice], params: &Hyperparams, config: &BenchConfig) -> Result<BenchReport> {
    if config.repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
    }
    let mut timings = Vec::new();
    let mut failures = Vec::new();
    for model in models {
        let mut per_event = Vec::new();
        for slice in slices {
            match bench_slice(model, slice, params, config) {
                Ok(t) => per_event.push(t),
                Err(e) => {
                    log::warn!("bench {model} on {}: {e}", slice.event);
                    failures.push(BenchFailure {
                        model: model.clone(),
                        event: slice.event.clone(),
                        error: e.to_string(),
                    });
                }
            }
        }
        if per_event.is_empty() {
            continue;
        }
        let k = per_event.len() as f64;
        timings.push(TimingReport {
            model: model.clone(),
            train_seconds: per_event.iter().map(|e| e.train_seconds).sum::<f64>() / k,
            predict_seconds: per_event.iter().map(|e| e.predict_seconds).sum::<f64>() / k,
            n_train: per_event.iter().map(|e| e.n_train).sum(),
            n_predict: per_event.iter().map(|e| e.n_predict).sum(),
            repetitions: config.repetitions,
            per_event,
        });
    }
    Ok(BenchReport {
        timings,
        failures,
        machine: MachineInfo::current(),
    })
}

fn bench_slice(model: &ModelKind, slice: &BenchSlice, params: &Hyperparams, config: &BenchConfig) -> Result<EventTiming> {
    // Warm-up, and the model reused for prediction timing.
    let trained = train(model, &slice.train, params)?;
    let train_runs = timed_repetitions(config, || train(model, &slice.train, params).map(drop))?;
    let predict_runs = timed_repetitions(config, || {
        predict(&trained, slice.predict.iter().map(|(id, v)| (id, v))).map(drop)
    })?;
    Ok(EventTiming {
        event: slice.event.clone(),
        train_seconds: median(&train_runs),
        predict_seconds: median(&predict_runs),
        n_train: slice.train.len(),
        n_predict: slice.predict.len(),
        train_runs,
        predict_runs,
    })
}

pub fn write_timings_csv(report: &BenchReport, path: &Path) -> Result<()> {
    let mut rows = Vec::new();
    for t in &report.timings {
        for e in &t.per_event {
            rows.push(vec![
                t.model.to_string(),
                e.event.clone(),
                format!("{:.9}", e.train_seconds),
                format!("{:.9}", e.predict_seconds),
                e.n_train.to_string(),
                e.n_predict.to_string(),
            ]);
        }
        rows.push(vec![
            t.model.to_string(),
            "mean".into(),
            format!("{:.9}", t.train_seconds),
            format!("{:.9}", t.predict_seconds),
            t.n_train.to_string(),
            t.n_predict.to_string(),
        ]);
    }
    write_rows(
        path,
        &["model", "event", "train_seconds", "predict_seconds", "n_train", "n_predict"],
        rows,
    )
}

/// `timings.csv`, `timings.json` and `machine.json` under `dir`.
pub fn write_bench(report: &BenchReport, dir: &Path) -> Result<()> {
    write_timings_csv(report, &dir.join("timings.csv"))?;
    write_json(&dir.join("timings.json"), report)?;
    write_json(&dir.join("machine.json"), &report.machine)
}
