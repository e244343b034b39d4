//! Acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so the PASS/FAIL lines always reach the
//! terminal, and sequentially so the timing check has the machine to itself.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use narrative_validity::ensemble::{vote, EnsembleConfig};
use narrative_validity::features::SparseVector;
use narrative_validity::fixtures::reference_tally_corpus;
use narrative_validity::models::{
    cross_validate, stratified_folds, worker_session, CvConfig, Hyperparams, LabeledExample, ModelKind,
    PredictionSet, TextExample, WorkerCommand,
};
use narrative_validity::pipeline::{self, E2eSummary, PipelineConfig};
use narrative_validity::report::{build_validity_table, median, BenchConfig, MachineInfo};
use narrative_validity::stats::{fisher_exact, mcnemar_exact, proportion_ci, ConfusionMatrix2x2, TestConfig};
use narrative_validity::{Clock, Error, Label};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [(u32, &str, fn() -> Check); 9] = [
        (1, "validity table fixture", table_fixture),
        (2, "exact tests vs enumeration oracles", exact_oracles),
        (3, "degenerate Fisher margins", degenerate_fisher),
        (4, "proportion interval arithmetic", ci_arithmetic),
        (5, "end-to-end mock run", end_to_end),
        (6, "cross-validation invariants", cv_invariants),
        (7, "ensemble vote patterns", ensemble_patterns),
        (8, "worker protocol conformance", worker_protocol),
        (9, "timing harness", timing_harness),
    ];
    // Quiet the default panic message; failures are reported below.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} PASS  {name}: {detail} [{secs:.2}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL  {name}: {detail} [{secs:.2}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn table_fixture() -> Check {
    let start = Instant::now();
    let (corpus, labels) = reference_tally_corpus();
    let table = build_validity_table(&labels, &corpus, None, &TestConfig::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let got: Vec<f64> = table
        .rows
        .iter()
        .map(|r| r.percent_yes)
        .chain([table.total.percent_yes])
        .collect();
    let want = [72.08, 86.81, 96.67, 94.01, 87.43];
    ensure!(got == want, "percentages {got:?}, expected {want:?}");
    ensure!(table.total.n == 2880, "total n {}", table.total.n);
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("{got:?}"))
}

fn exact_oracles() -> Check {
    let start = Instant::now();
    let cfg = TestConfig::default();
    let mut tables = 0usize;
    let mut worst_fisher = 0f64;
    let mut worst_mcnemar = 0f64;
    for [a, b, c, d] in common::tables_up_to(40) {
        tables += 1;
        let p = fisher_exact(&ConfusionMatrix2x2::new(a, b, c, d), &cfg).p_value.unwrap();
        let delta = (p - common::fisher_oracle(a, b, c, d)).abs();
        ensure!(delta <= 1e-10, "fisher {:?}: |dp| = {delta:e}", [a, b, c, d]);
        worst_fisher = worst_fisher.max(delta);

        let p = mcnemar_exact(b, c, &cfg).p_value.unwrap();
        let delta = (p - common::mcnemar_exact_oracle(b, c)).abs();
        ensure!(delta <= 1e-10, "mcnemar {:?}: |dp| = {delta:e}", [a, b, c, d]);
        worst_mcnemar = worst_mcnemar.max(delta);
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "{tables} tables, max |dp| fisher {worst_fisher:.1e}, mcnemar {worst_mcnemar:.1e}"
    ))
}

fn degenerate_fisher() -> Check {
    let cfg = TestConfig::default();
    let mut checked = 0;
    for tp in 0..=300 {
        for fp in 0..=300 {
            let r = fisher_exact(&ConfusionMatrix2x2::new(tp, fp, 0, 0), &cfg);
            ensure!(r.p_value == Some(1.0), "tp={tp} fp={fp}: p = {:?}", r.p_value);
            checked += 1;
        }
    }
    // Reference tally sizes with every narrative predicted Yes.
    for (yes, no) in [(519, 201), (612, 93), (696, 24), (691, 44)] {
        let r = fisher_exact(&ConfusionMatrix2x2::new(yes, no, 0, 0), &cfg);
        ensure!(r.p_value == Some(1.0) && !r.is_significant(cfg.alpha), "{yes}/{no} not p = 1");
    }
    Ok(format!("{checked} matrices without No predictions, all p = 1.0"))
}

fn ci_arithmetic() -> Check {
    let cfg = TestConfig::default();
    let mut out = Vec::new();
    for (n, want) in [(2880u64, 0.0121), (24000, 0.0042)] {
        let successes = (0.8743 * n as f64).round() as u64;
        let r = proportion_ci(successes, n, &cfg).map_err(|e| e.to_string())?;
        let half = r.extras["half_width"];
        let oracle = common::wald_half_width(successes as f64 / n as f64, n, 1.959964);
        ensure!((half - oracle).abs() < 1e-12, "n={n}: half-width {half} vs oracle {oracle}");
        ensure!((half - want).abs() <= 1e-4, "n={n}: half-width {half:.5}, expected {want}");
        ensure!(
            r.notes.iter().any(|note| note.contains(&format!("n = {n}"))),
            "n={n}: no sample-size note in {:?}",
            r.notes
        );
        out.push(format!("n={n} half-width {half:.4}"));
    }
    Ok(out.join(", "))
}

fn e2e_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-e2e")
}

/// The mock pipeline is shared by the end-to-end and timing criteria.
fn e2e_run() -> &'static Result<E2eSummary, String> {
    static RUN: OnceLock<Result<E2eSummary, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = e2e_dir();
        let _ = std::fs::remove_dir_all(&dir);
        let cfg = PipelineConfig::e2e_mock(42, &dir);
        pipeline::e2e_mock(&cfg, Clock::System).map_err(|e| format!("{}: {e}", e.kind()))
    })
}

fn end_to_end() -> Check {
    let s = e2e_run().as_ref().map_err(Clone::clone)?;
    ensure!(s.corpus_size == 4000, "corpus size {}", s.corpus_size);
    ensure!(
        s.truthful_label_accuracy >= 0.99,
        "(a) truthful label accuracy {:.4}",
        s.truthful_label_accuracy
    );
    ensure!((s.tie_rate - 0.10).abs() <= 0.02, "(b) tie rate {:.4}", s.tie_rate);
    ensure!(s.models.len() == 3, "{} models", s.models.len());
    for m in &s.models {
        let (Some(yes), Some(no)) = (m.yes_precision, m.no_precision) else {
            return Err(format!("(c) {} has undefined precision {:?}/{:?}", m.model, m.yes_precision, m.no_precision));
        };
        ensure!(yes > no, "(c) {}: yes precision {yes:.3} <= no precision {no:.3}", m.model);
        ensure!(
            s.ensemble_untagged_accuracy >= m.untagged_accuracy - 0.02,
            "(d) ensemble {:.4} vs {} {:.4}",
            s.ensemble_untagged_accuracy,
            m.model,
            m.untagged_accuracy
        );
    }
    ensure!(s.ensemble_threshold == 2, "threshold {}", s.ensemble_threshold);
    ensure!(s.runtime_seconds < 600.0, "runtime {:.1}s", s.runtime_seconds);
    let members: Vec<String> = s
        .models
        .iter()
        .map(|m| format!("{} {:.3}/{:.3}", m.model, m.yes_precision.unwrap(), m.no_precision.unwrap()))
        .collect();
    Ok(format!(
        "truthful {:.4}, tie rate {:.4}, precision yes/no [{}], ensemble {:.4} vs best member {:.4}, {:.1}s",
        s.truthful_label_accuracy,
        s.tie_rate,
        members.join(", "),
        s.ensemble_untagged_accuracy,
        s.models.iter().map(|m| m.untagged_accuracy).fold(0.0, f64::max),
        s.runtime_seconds
    ))
}

/// 2,880 records at the reference 87/13 balance with weakly informative
/// sparse features.
fn synthetic_examples(seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 200;
    (0..2880)
        .map(|i| {
            let label = Label::from_bool(i % 100 < 87);
            let mut entries: Vec<(u32, f64)> = Vec::new();
            for _ in 0..12 {
                let f = rng.gen_range(0..dim as u32);
                let f = if label.is_yes() || rng.gen_bool(0.5) { f } else { f % 20 };
                if !entries.iter().any(|(j, _)| *j == f) {
                    entries.push((f, rng.gen_range(0.1..1.0)));
                }
            }
            LabeledExample {
                id: format!("r{i:05}"),
                vector: SparseVector::new(entries, dim).unwrap(),
                label,
            }
        })
        .collect()
}

fn cv_invariants() -> Check {
    let examples = synthetic_examples(11);
    let cv = CvConfig { k: 10, seed: 5, stratified: true };
    let labels: Vec<(String, Label)> = examples.iter().map(|e| (e.id.clone(), e.label)).collect();
    let folds = stratified_folds(&labels, &cv).map_err(|e| e.to_string())?;
    let global_yes = labels.iter().filter(|(_, l)| l.is_yes()).count() as f64 / labels.len() as f64;
    let truth: BTreeMap<&str, Label> = labels.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    for (f, fold) in folds.iter().enumerate() {
        let yes = fold.iter().filter(|id| truth[id.as_str()].is_yes()).count() as f64;
        let expected = global_yes * fold.len() as f64;
        ensure!((yes - expected).abs() <= 1.0, "fold {f}: {yes} yes, expected {expected:.1}");
    }

    let params = Hyperparams { seed: 3, ..Default::default() };
    let kind = ModelKind::LinearSvm;
    let base = cross_validate(&kind, &examples, &params, &cv).map_err(|e| e.to_string())?;
    ensure!(base.predictions.len() == examples.len(), "{} oof predictions", base.predictions.len());
    let mut seen = BTreeMap::new();
    for fold in &folds {
        for id in fold {
            *seen.entry(id.clone()).or_insert(0) += 1;
        }
    }
    ensure!(
        seen.len() == examples.len() && seen.values().all(|&c| c == 1),
        "records not covered exactly once"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for round in 0..3 {
        let mut shuffled = examples.clone();
        shuffled.shuffle(&mut rng);
        let again = cross_validate(&kind, &shuffled, &params, &cv).map_err(|e| e.to_string())?;
        ensure!(
            again.predictions.predictions == base.predictions.predictions,
            "permutation {round} changed the predictions"
        );
        let refolded = stratified_folds(
            &shuffled.iter().map(|e| (e.id.clone(), e.label)).collect::<Vec<_>>(),
            &cv,
        )
        .map_err(|e| e.to_string())?;
        ensure!(refolded == folds, "permutation {round} changed the folds");
    }
    Ok(format!(
        "{} folds of {}..{} records, 3 permutations identical",
        folds.len(),
        folds.iter().map(Vec::len).min().unwrap(),
        folds.iter().map(Vec::len).max().unwrap()
    ))
}

fn ensemble_patterns() -> Check {
    let members: Vec<ModelKind> = (0..9).map(|i| ModelKind::ExternalWorker(format!("m{i}"))).collect();
    let cfg = EnsembleConfig::majority(members.clone());
    ensure!(cfg.effective_threshold() == 5, "threshold {}", cfg.effective_threshold());
    let sets: Vec<PredictionSet> = members
        .iter()
        .enumerate()
        .map(|(j, model)| PredictionSet {
            model: model.clone(),
            predictions: (0u32..512)
                .map(|p| (format!("p{p:03}"), Label::from_bool(p >> j & 1 == 1)))
                .collect(),
            predict_seconds: 0.0,
        })
        .collect();
    let out = vote(&sets, &cfg).map_err(|e| e.to_string())?;
    ensure!(out.len() == 512, "{} outcomes", out.len());
    let finals: Vec<Label> = out.iter().map(|e| e.final_label).collect();
    for (p, e) in out.iter().enumerate() {
        let ones = (p as u32).count_ones() as usize;
        ensure!(e.yes_count == ones, "pattern {p:09b}: yes_count {}", e.yes_count);
        ensure!(
            e.final_label == Label::from_bool(ones >= 5),
            "pattern {p:09b}: final {}",
            e.final_label
        );
        for j in 0..9 {
            let q = p ^ (1 << j);
            if q > p {
                ensure!(
                    !(finals[p].is_yes() && !finals[q].is_yes()),
                    "adding a Yes vote to {p:09b} turned the result to No"
                );
            }
        }
    }
    Ok(format!("512 patterns, {} final Yes", finals.iter().filter(|l| l.is_yes()).count()))
}

fn stub(mode: &str) -> WorkerCommand {
    WorkerCommand::new(env!("CARGO_BIN_EXE_narval"), &["stub-worker", "--mode", mode])
}

fn worker_protocol() -> Check {
    let labeled: Vec<TextExample> = (0..1000)
        .map(|i| TextExample {
            id: format!("t{i:04}"),
            text: format!("narrative number {i}"),
            label: Label::from_bool(i % 8 != 0),
        })
        .collect();
    let unlabeled: Vec<(String, String)> =
        (0..1000).map(|i| (format!("u{i:04}"), format!("unlabeled narrative {i}"))).collect();

    let mut cmd = stub("majority");
    cmd.timeout = Duration::from_secs(60);
    let out = worker_session(&cmd, &labeled, &unlabeled).map_err(|e| format!("{}: {e}", e.kind()))?;
    ensure!(out.predictions.len() == 1000, "{} predictions", out.predictions.len());
    ensure!(
        unlabeled.iter().all(|(id, _)| out.predictions.predictions.get(id) == Some(&Label::Yes)),
        "majority stub should answer Yes for every requested id"
    );
    ensure!(
        out.predictions.model == ModelKind::ExternalWorker("stub-majority".into()),
        "model {}",
        out.predictions.model
    );

    let mut bad = stub("malformed");
    bad.timeout = Duration::from_secs(60);
    match worker_session(&bad, &labeled, &unlabeled) {
        Err(Error::Protocol { line, message }) => {
            ensure!(line == "this is not json", "echoed line {line:?}");
            Ok(format!("1000/1000 round-tripped; malformed worker -> protocol error ({message})"))
        }
        Err(e) => Err(format!("malformed worker gave {}: {e}", e.kind())),
        Ok(o) => Err(format!("malformed worker produced {} predictions", o.predictions.len())),
    }
}

fn timing_harness() -> Check {
    e2e_run().as_ref().map_err(|e| format!("pipeline unavailable: {e}"))?;
    let mut cfg = PipelineConfig::e2e_mock(42, e2e_dir());
    cfg.bench = BenchConfig::default();
    let report = pipeline::bench_stage(&cfg).map_err(|e| e.to_string())?;
    ensure!(report.failures.is_empty(), "failures {:?}", report.failures);
    ensure!(report.timings.len() == 3, "{} models timed", report.timings.len());
    let m = &report.machine;
    ensure!(
        !m.os.is_empty() && !m.arch.is_empty() && m.cpus > 0 && *m == MachineInfo::current(),
        "machine metadata {m:?}"
    );
    let mut worst = 0f64;
    let mut worst_at = String::new();
    for t in &report.timings {
        ensure!(t.train_seconds > 0.0 && t.predict_seconds > 0.0, "{}: non-positive means", t.model);
        ensure!(t.per_event.len() == 4, "{}: {} events", t.model, t.per_event.len());
        for e in &t.per_event {
            for (what, runs) in [("train", &e.train_runs), ("predict", &e.predict_runs)] {
                ensure!(runs.len() == 3, "{} {} {what}: {} runs", t.model, e.event, runs.len());
                let med = median(runs);
                for r in runs.iter() {
                    ensure!(*r > 0.0, "{} {} {what}: run {r}", t.model, e.event);
                    let dev = (r - med).abs() / med;
                    if dev > worst {
                        worst = dev;
                        worst_at = format!("{} {} {what}", t.model, e.event);
                    }
                    ensure!(dev <= 0.20, "{} {} {what}: runs {runs:?} deviate {:.0}%", t.model, e.event, dev * 100.0);
                }
            }
        }
    }
    let report_dir = cfg.artifacts().report_dir();
    for f in ["timings.csv", "timings.json", "machine.json"] {
        ensure!(report_dir.join(f).is_file(), "missing {f}");
    }
    let means: Vec<String> = report
        .timings
        .iter()
        .map(|t| format!("{} {:.2e}/{:.2e}s", t.model, t.train_seconds, t.predict_seconds))
        .collect();
    Ok(format!(
        "train/predict [{}], max deviation from median {:.1}% ({worst_at}), {} {} x{}",
        means.join(", "),
        worst * 100.0,
        m.os,
        m.arch,
        m.cpus
    ))
}
