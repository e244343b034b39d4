//! Pipeline configuration and the stage functions behind the CLI.
//!
//! Every stage reads and writes files under [`PipelineConfig::out_dir`]:
//!
//! | stage | reads | writes |
//! |---|---|---|
//! | generate | templates | `corpus.jsonl`, `planted.jsonl` (mock), `generation_failures.jsonl` |
//! | sample | corpus | `split.json` |
//! | assign | split | `assignments.jsonl` |
//! | serve / aggregate | corpus, assignments | `decisions.jsonl`, `labels.jsonl` |
//! | train | corpus, split, labels | `models/`, `predictions/oof_*.json` |
//! | evaluate | models, labels | `evaluation.json` |
//! | predict | models, corpus, split | `predictions/*.json` |
//! | ensemble | predictions | `ensemble.jsonl`, `ensemble_comparison.json` |
//! | report | labels, evaluation, ensemble | `report/*.csv`, `report/summary.json` |
//! | bench | corpus, split, labels | `report/timings.csv`, `report/machine.json` |

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    load_corpus, load_labels, load_split, sample_split, save_corpus, save_labels, save_split, EventType,
    FinalLabel, NarrativeRecord,
};
use crate::ensemble::{compare_to_ensemble, final_labels, vote, EnsembleConfig, ModelComparison};
use crate::features::{fit_tfidf_capped, transform, Vocabulary, DEFAULT_MAX_VOCABULARY};
use crate::genclient::{generate, GenerationConfig, GenerationOutcome, PromptJob};
use crate::io::{read_json, read_jsonl, write_json, write_jsonl};
use crate::models::{
    cross_validate, cross_validate_with, predict, train, worker_session, CvConfig, FoldStats, Hyperparams,
    LabeledExample, ModelKind, PredictionSet, TextExample, TrainedModel, WorkerCommand,
};
use crate::report::{
    bench, build_validity_table, evaluate_predictions, significance_summary, write_agreement_csv, write_bench,
    write_confusion_csv, write_fisher_csv, write_mcnemar_csv, write_precision_csv, write_validity_csv,
    BenchConfig, BenchReport, BenchSlice, ModelEvaluation, SignificanceSummary,
};
use crate::snp::{render_prompt, synth_profiles, template_set};
use crate::stats::{agreement_matrix, mcnemar, AgreementMatrix, TestConfig};
use crate::tagging::{
    aggregate, assign, partition_decisions, simulate_review, spawn_server, ExclusionCode, ReviewAssignment,
    ReviewSimulation, ReviewerRoster, TagDecision, TaggingService,
};
use crate::{derive_seed, Clock, Error, Label, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Global seed; every stage seed is derived from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Directory of `<event>.txt` prompt templates; built-ins when unset.
    pub templates: Option<PathBuf>,
    /// Total narratives to generate, split evenly over `events`.
    pub corpus_size: usize,
    pub events: Vec<EventType>,
    pub generation: GenerationConfig,
    pub sample_fraction: f64,
    pub roster: ReviewerRoster,
    /// Scripted reviewers used by `aggregate --simulate` and `e2e-mock`.
    pub review: ReviewSimulation,
    pub models: Vec<ModelKind>,
    /// External models; each needs a unique `name`.
    pub workers: Vec<WorkerCommand>,
    pub hyperparams: Hyperparams,
    pub cv: CvConfig,
    pub tests: TestConfig,
    /// Members default to every configured model with a majority threshold.
    pub ensemble: Option<EnsembleConfig>,
    /// Train one model per event type rather than one pooled model.
    pub per_event: bool,
    pub max_vocabulary: usize,
    pub bench: BenchConfig,
    /// Sample size for the validity table's interval; the tagged count when unset.
    pub ci_n: Option<u64>,
    pub serve_addr: String,
    pub ui_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            out_dir: PathBuf::from("out"),
            templates: None,
            corpus_size: 24_000,
            events: EventType::ALL.to_vec(),
            generation: GenerationConfig::default(),
            sample_fraction: 0.12,
            roster: ReviewerRoster::default(),
            review: ReviewSimulation::default(),
            models: ModelKind::NATIVE.to_vec(),
            workers: Vec::new(),
            hyperparams: Hyperparams::default(),
            cv: CvConfig::default(),
            tests: TestConfig::default(),
            ensemble: None,
            per_event: true,
            max_vocabulary: DEFAULT_MAX_VOCABULARY,
            bench: BenchConfig::default(),
            ci_n: None,
            serve_addr: "127.0.0.1:8080".into(),
            ui_dir: None,
        }
    }
}

/// Replaces `${NAME}` with the environment variable `NAME`.
pub fn interpolate_env(text: &str) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find('}')
            .ok_or_else(|| Error::InvalidArgument("unterminated `${` in config".into()))?;
        let name = &after[..end];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::InvalidArgument(format!("bad variable name `{name}` in config")));
        }
        let value = std::env::var(name)
            .map_err(|_| Error::InvalidArgument(format!("environment variable `{name}` is not set")))?;
        // Values land inside JSON strings.
        let escaped = serde_json::to_string(&value)?;
        out.push_str(&escaped[1..escaped.len() - 1]);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        let text = interpolate_env(&text)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// The acceptance profile: 4,000 mock narratives, 13% planted defects.
    pub fn e2e_mock(seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            seed,
            out_dir: out_dir.into(),
            corpus_size: 4_000,
            generation: GenerationConfig::mock(0, 0.13),
            bench: BenchConfig {
                repetitions: 1,
                min_sample_seconds: 0.0,
                min_calls: 1,
            },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.events.is_empty() {
            return Err(Error::InvalidArgument("no event types configured".into()));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!("sample fraction {} outside (0, 1]", self.sample_fraction)));
        }
        self.tests.validate()?;
        self.roster.validate()?;
        let mut names = BTreeSet::new();
        for w in &self.workers {
            let name = w
                .name
                .as_deref()
                .filter(|n| !n.is_empty())
                .ok_or_else(|| Error::InvalidArgument(format!("worker `{}` needs a name", w.program)))?;
            if !names.insert(name) {
                return Err(Error::InvalidArgument(format!("duplicate worker name `{name}`")));
            }
        }
        if self.models.iter().any(|m| !m.is_native()) {
            return Err(Error::InvalidArgument("list external models under `workers`".into()));
        }
        self.ensemble_config().validate()
    }

    /// Every model the run trains: native kinds then workers.
    pub fn all_models(&self) -> Vec<ModelKind> {
        let mut out = self.models.clone();
        out.extend(self.workers.iter().filter_map(|w| w.name.clone().map(ModelKind::ExternalWorker)));
        out
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        self.ensemble.clone().unwrap_or_else(|| EnsembleConfig::majority(self.all_models()))
    }

    /// Stage seeds, all derived from `seed`.
    pub fn resolved(&self) -> PipelineConfig {
        let mut c = self.clone();
        c.generation.seed = derive_seed(self.seed, "generate");
        c.review.seed = derive_seed(self.seed, "review");
        c.cv.seed = derive_seed(self.seed, "cv");
        c.hyperparams.seed = derive_seed(self.seed, "train");
        c
    }

    pub fn artifacts(&self) -> Artifacts {
        Artifacts { dir: self.out_dir.clone() }
    }
}

/// File layout of one run.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn corpus(&self) -> PathBuf {
        self.dir.join("corpus.jsonl")
    }
    pub fn planted(&self) -> PathBuf {
        self.dir.join("planted.jsonl")
    }
    pub fn failures(&self) -> PathBuf {
        self.dir.join("generation_failures.jsonl")
    }
    pub fn split(&self) -> PathBuf {
        self.dir.join("split.json")
    }
    pub fn assignments(&self) -> PathBuf {
        self.dir.join("assignments.jsonl")
    }
    pub fn decisions(&self) -> PathBuf {
        self.dir.join("decisions.jsonl")
    }
    pub fn labels(&self) -> PathBuf {
        self.dir.join("labels.jsonl")
    }
    pub fn manifest(&self) -> PathBuf {
        self.dir.join("models").join("manifest.json")
    }
    pub fn model(&self, kind: &ModelKind, group: &str) -> PathBuf {
        self.dir.join("models").join(format!("{}_{group}.json", kind.slug()))
    }
    pub fn vocab(&self, group: &str) -> PathBuf {
        self.dir.join("models").join(format!("vocab_{group}.json"))
    }
    pub fn oof(&self, kind: &ModelKind) -> PathBuf {
        self.dir.join("predictions").join(format!("oof_{}.json", kind.slug()))
    }
    pub fn prediction(&self, kind: &ModelKind) -> PathBuf {
        self.dir.join("predictions").join(format!("{}.json", kind.slug()))
    }
    pub fn evaluation(&self) -> PathBuf {
        self.dir.join("evaluation.json")
    }
    pub fn ensemble(&self) -> PathBuf {
        self.dir.join("ensemble.jsonl")
    }
    pub fn ensemble_comparison(&self) -> PathBuf {
        self.dir.join("ensemble_comparison.json")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.dir.join("report")
    }
    pub fn e2e_summary(&self) -> PathBuf {
        self.dir.join("e2e_summary.json")
    }
}

/// Ground truth planted by the mock generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub narrative_id: String,
    pub defect: Option<ExclusionCode>,
}

impl PlantedTruth {
    pub fn label(&self) -> Label {
        Label::from_bool(self.defect.is_none())
    }
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact(path))
    }
}

fn label_map(labels: &[FinalLabel]) -> BTreeMap<String, Label> {
    labels.iter().map(|l| (l.narrative_id.clone(), l.label)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub requested: usize,
    pub generated: usize,
    pub failed: usize,
    pub planted_defects: usize,
}

/// Prompt jobs for `corpus_size` narratives split over the configured events.
pub fn build_jobs(config: &PipelineConfig) -> Result<Vec<PromptJob>> {
    let templates = template_set(config.templates.as_deref())?;
    let k = config.events.len();
    let mut jobs = Vec::with_capacity(config.corpus_size);
    for (j, &event) in config.events.iter().enumerate() {
        let n = config.corpus_size / k + usize::from(j < config.corpus_size % k);
        if n == 0 {
            continue;
        }
        let template = &templates[&event];
        for (i, profile) in synth_profiles(event, n, config.seed)?.into_iter().enumerate() {
            jobs.push(PromptJob {
                id: format!("{event}-{i:05}"),
                event_type: event,
                prompt_text: render_prompt(template, event, &profile)?,
                profile,
            });
        }
    }
    Ok(jobs)
}

pub fn generate_stage(config: &PipelineConfig, clock: Clock) -> Result<GenerateSummary> {
    let config = config.resolved();
    let art = config.artifacts();
    let jobs = build_jobs(&config)?;
    let outcomes = generate(&jobs, &config.generation, clock)?;
    let mut records = Vec::new();
    let mut planted = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            GenerationOutcome::Generated { record, planted_defect } => {
                planted.push(PlantedTruth {
                    narrative_id: record.id.clone(),
                    defect: planted_defect,
                });
                records.push(record);
            }
            failed @ GenerationOutcome::Failed { .. } => failures.push(failed),
        }
    }
    save_corpus(&records, &art.corpus())?;
    if config.generation.mock_mode {
        write_jsonl(&art.planted(), &planted)?;
    }
    if !failures.is_empty() {
        log::warn!("{} prompts failed; see {}", failures.len(), art.failures().display());
        write_jsonl(&art.failures(), &failures)?;
    }
    Ok(GenerateSummary {
        requested: jobs.len(),
        generated: records.len(),
        failed: failures.len(),
        planted_defects: planted.iter().filter(|p| p.defect.is_some()).count(),
    })
}

pub fn sample_stage(config: &PipelineConfig) -> Result<(usize, usize)> {
    let art = config.artifacts();
    let corpus = load_corpus(&require(art.corpus())?)?;
    let split = sample_split(&corpus, config.sample_fraction, derive_seed(config.seed, "sample"))?;
    save_split(&split, &art.split())?;
    Ok((split.tagged_ids.len(), split.untagged_ids.len()))
}

pub fn assign_stage(config: &PipelineConfig) -> Result<Vec<ReviewAssignment>> {
    let art = config.artifacts();
    let split = load_split(&require(art.split())?)?;
    let assignments = assign(&split, &config.roster, derive_seed(config.seed, "assign"))?;
    write_jsonl(&art.assignments(), &assignments)?;
    Ok(assignments)
}

fn tagging_service(config: &PipelineConfig, clock: Clock, persist: bool) -> Result<TaggingService> {
    let art = config.artifacts();
    let corpus = load_corpus(&require(art.corpus())?)?;
    let assignments: Vec<ReviewAssignment> = read_jsonl(&require(art.assignments())?)?;
    let mut svc = TaggingService::new(&corpus, config.roster.clone(), assignments, clock)?;
    if persist {
        svc = svc.persist_to(art.decisions(), art.labels());
    }
    if art.decisions().exists() {
        svc.restore(read_jsonl(&art.decisions())?)?;
    }
    Ok(svc)
}

/// Serves the tagging API until interrupted.
pub fn serve_stage(config: &PipelineConfig, clock: Clock) -> Result<()> {
    let svc = Arc::new(tagging_service(config, clock, true)?);
    let addr: SocketAddr = config
        .serve_addr
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("serve_addr `{}`: {e}", config.serve_addr)))?;
    let handle = spawn_server(svc, addr, config.ui_dir.clone())?;
    eprintln!("tagging API on {}", handle.base_url());
    handle.join();
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub labeled: usize,
    pub yes: usize,
    pub tie_broken: usize,
    /// Set when reviewers were simulated.
    pub tie_rate: Option<f64>,
}

fn load_truth(art: &Artifacts) -> Result<BTreeMap<String, Option<ExclusionCode>>> {
    let planted: Vec<PlantedTruth> = read_jsonl(&require(art.planted())?)?;
    Ok(planted.into_iter().map(|p| (p.narrative_id, p.defect)).collect())
}

/// Final labels from the decision log, or from scripted reviewers voting
/// the planted truth when `simulate` is set.
pub fn aggregate_stage(config: &PipelineConfig, clock: Clock, simulate: bool) -> Result<AggregateSummary> {
    let config = config.resolved();
    let art = config.artifacts();
    let (labels, tie_rate) = if simulate {
        let truth = load_truth(&art)?;
        if art.decisions().exists() {
            std::fs::remove_file(art.decisions()).map_err(|e| Error::io(art.decisions(), e))?;
        }
        let svc = tagging_service(&config, clock, true)?;
        let out = simulate_review(&svc, &truth, &config.review)?;
        (out.labels, Some(out.tie_rate))
    } else {
        let assignments: Vec<ReviewAssignment> = read_jsonl(&require(art.assignments())?)?;
        let decisions: Vec<TagDecision> = read_jsonl(&require(art.decisions())?)?;
        let (primary, breaks) = partition_decisions(&decisions, &config.roster);
        (aggregate(&assignments, &primary, &breaks)?, None)
    };
    save_labels(&labels, &art.labels())?;
    Ok(AggregateSummary {
        labeled: labels.len(),
        yes: labels.iter().filter(|l| l.label.is_yes()).count(),
        tie_broken: labels.iter().filter(|l| l.tie_broken).count(),
        tie_rate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub per_event: bool,
    pub groups: Vec<String>,
    pub models: Vec<ModelKind>,
    /// Fold count actually used per group.
    pub k: BTreeMap<String, usize>,
    pub folds: BTreeMap<String, Vec<FoldStats>>,
}

fn group_key(record: &NarrativeRecord, per_event: bool) -> String {
    if per_event {
        record.event_type.to_string()
    } else {
        "all".into()
    }
}

/// Records of `ids` grouped by model group, each group sorted by id.
fn grouped<'a>(
    corpus: &'a [NarrativeRecord],
    ids: &BTreeSet<String>,
    per_event: bool,
) -> BTreeMap<String, Vec<&'a NarrativeRecord>> {
    let mut out: BTreeMap<String, Vec<&NarrativeRecord>> = BTreeMap::new();
    for r in corpus.iter().filter(|r| ids.contains(&r.id)) {
        out.entry(group_key(r, per_event)).or_default().push(r);
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.id.cmp(&b.id));
    }
    out
}

struct Loaded {
    corpus: Vec<NarrativeRecord>,
    tagged: BTreeSet<String>,
    untagged: BTreeSet<String>,
    truth: BTreeMap<String, Label>,
}

fn load_tagged(config: &PipelineConfig) -> Result<Loaded> {
    let art = config.artifacts();
    let corpus = load_corpus(&require(art.corpus())?)?;
    let split = load_split(&require(art.split())?)?;
    split.validate(&corpus)?;
    let truth = label_map(&load_labels(&require(art.labels())?)?);
    let missing: Vec<String> = split.tagged_ids.iter().filter(|id| !truth.contains_key(*id)).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::UnknownIds(missing));
    }
    Ok(Loaded {
        corpus,
        tagged: split.tagged_ids,
        untagged: split.untagged_ids,
        truth,
    })
}

fn examples(records: &[&NarrativeRecord], vocab: &Vocabulary, truth: &BTreeMap<String, Label>) -> Result<Vec<LabeledExample>> {
    records
        .iter()
        .map(|r| {
            Ok(LabeledExample {
                id: r.id.clone(),
                vector: transform(&r.narrative_text, vocab)?,
                label: truth[&r.id],
            })
        })
        .collect()
}

fn text_examples(records: &[&NarrativeRecord], truth: &BTreeMap<String, Label>) -> Vec<TextExample> {
    records
        .iter()
        .map(|r| TextExample {
            id: r.id.clone(),
            text: r.narrative_text.clone(),
            label: truth[&r.id],
        })
        .collect()
}

fn zero_times_if_frozen(clock: Clock, set: &mut PredictionSet) {
    if matches!(clock, Clock::Frozen(_)) {
        set.predict_seconds = 0.0;
    }
}

/// Cross-validates every model on the tagged split (out-of-fold
/// predictions) and fits final models on all tagged data.
pub fn train_stage(config: &PipelineConfig, clock: Clock) -> Result<Manifest> {
    let config = config.resolved();
    config.validate()?;
    let art = config.artifacts();
    let data = load_tagged(&config)?;
    let groups = grouped(&data.corpus, &data.tagged, config.per_event);
    let models = config.all_models();
    let mut oof: BTreeMap<ModelKind, PredictionSet> = models
        .iter()
        .map(|m| {
            (
                m.clone(),
                PredictionSet {
                    model: m.clone(),
                    predictions: BTreeMap::new(),
                    predict_seconds: 0.0,
                },
            )
        })
        .collect();
    let mut manifest = Manifest {
        per_event: config.per_event,
        groups: groups.keys().cloned().collect(),
        models: models.clone(),
        k: BTreeMap::new(),
        folds: BTreeMap::new(),
    };
    let frozen = matches!(clock, Clock::Frozen(_));

    for (group, records) in &groups {
        let texts: Vec<&str> = records.iter().map(|r| r.narrative_text.as_str()).collect();
        let vocab = fit_tfidf_capped(&texts, config.max_vocabulary)?;
        write_json(&art.vocab(group), &vocab)?;
        let ex = examples(records, &vocab, &data.truth)?;

        let minority = {
            let yes = ex.iter().filter(|e| e.label.is_yes()).count();
            yes.min(ex.len() - yes)
        };
        let mut cv = config.cv;
        if cv.stratified && cv.k > minority && minority >= 2 {
            log::warn!("group {group}: minority class has {minority} samples; using {minority} folds instead of {}", cv.k);
            cv.k = minority;
        }
        manifest.k.insert(group.clone(), cv.k);

        for kind in &config.models {
            let outcome = cross_validate(kind, &ex, &config.hyperparams, &cv)?;
            let mut folds = outcome.folds;
            if frozen {
                folds.iter_mut().for_each(|f| {
                    f.train_seconds = 0.0;
                    f.predict_seconds = 0.0;
                });
            }
            manifest.folds.insert(format!("{}_{group}", kind.slug()), folds);
            let entry = oof.get_mut(kind).expect("configured model");
            entry.predictions.extend(outcome.predictions.predictions);
            entry.predict_seconds += outcome.predictions.predict_seconds;

            let params = Hyperparams {
                allow_constant: true,
                ..config.hyperparams.clone()
            };
            let mut model = train(kind, &ex, &params)?;
            if frozen {
                model.train_seconds = 0.0;
            }
            write_json(&art.model(kind, group), &model)?;
        }

        let by_id: BTreeMap<&str, &NarrativeRecord> = records.iter().map(|r| (r.id.as_str(), *r)).collect();
        for w in &config.workers {
            let kind = ModelKind::ExternalWorker(w.name.clone().expect("validated"));
            let labels: Vec<(String, Label)> = records.iter().map(|r| (r.id.clone(), data.truth[&r.id])).collect();
            let outcome = cross_validate_with(kind.clone(), &labels, &cv, |_, train_ids, test_ids| {
                let train_recs: Vec<&NarrativeRecord> = train_ids.iter().map(|id| by_id[id.as_str()]).collect();
                let test: Vec<(String, String)> = test_ids
                    .iter()
                    .map(|id| (id.clone(), by_id[id.as_str()].narrative_text.clone()))
                    .collect();
                let out = worker_session(w, &text_examples(&train_recs, &data.truth), &test)?;
                Ok((out.predictions.predictions, out.train_seconds, out.predictions.predict_seconds))
            })?;
            let entry = oof.get_mut(&kind).expect("configured worker");
            entry.predictions.extend(outcome.predictions.predictions);
            entry.predict_seconds += outcome.predictions.predict_seconds;
            manifest.folds.insert(format!("{}_{group}", kind.slug()), outcome.folds);
        }
    }

    for (kind, mut set) in oof {
        zero_times_if_frozen(clock, &mut set);
        write_json(&art.oof(&kind), &set)?;
    }
    write_json(&art.manifest(), &manifest)?;
    Ok(manifest)
}

fn load_manifest(art: &Artifacts) -> Result<Manifest> {
    read_json(&require(art.manifest())?)
}

/// Evaluation slices: each event present among `ids`, plus `all`.
fn slices(corpus: &[NarrativeRecord], ids: &BTreeSet<String>) -> BTreeMap<String, BTreeSet<String>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in corpus.iter().filter(|r| ids.contains(&r.id)) {
        out.entry(r.event_type.to_string()).or_default().insert(r.id.clone());
        out.entry("all".into()).or_default().insert(r.id.clone());
    }
    out
}

fn restrict_labels(map: &BTreeMap<String, Label>, ids: &BTreeSet<String>) -> BTreeMap<String, Label> {
    ids.iter().filter_map(|id| map.get(id).map(|l| (id.clone(), *l))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub evaluations: Vec<ModelEvaluation>,
    pub agreement: BTreeMap<String, AgreementMatrix>,
    /// McNemar of each model's out-of-fold labels against the final labels.
    pub mcnemar_truth: Vec<(String, ModelComparison)>,
}

pub fn evaluate_stage(config: &PipelineConfig) -> Result<Evaluation> {
    let art = config.artifacts();
    let manifest = load_manifest(&art)?;
    let data = load_tagged(config)?;
    let sets: Vec<PredictionSet> = manifest
        .models
        .iter()
        .map(|m| read_json(&require(art.oof(m))?))
        .collect::<Result<_>>()?;
    let mut evaluations = Vec::new();
    let mut agreement = BTreeMap::new();
    let mut mcnemar_truth = Vec::new();
    for (slice, ids) in slices(&data.corpus, &data.tagged) {
        let truth = restrict_labels(&data.truth, &ids);
        let restricted: Vec<PredictionSet> = sets.iter().map(|s| s.restrict(&ids)).collect::<Result<_>>()?;
        for s in &restricted {
            evaluations.push(evaluate_predictions(s, &truth, &slice, &config.tests)?);
            let result = mcnemar(&s.predictions, &truth, &config.tests)?;
            mcnemar_truth.push((
                slice.clone(),
                ModelComparison {
                    model: s.model.clone(),
                    significant: result.is_significant(config.tests.alpha),
                    result,
                },
            ));
        }
        agreement.insert(slice, agreement_matrix(&restricted, &config.tests)?);
    }
    let eval = Evaluation {
        evaluations,
        agreement,
        mcnemar_truth,
    };
    write_json(&art.evaluation(), &eval)?;
    Ok(eval)
}

/// Labels the untagged split with every trained model.
pub fn predict_stage(config: &PipelineConfig, clock: Clock) -> Result<Vec<PredictionSet>> {
    let config = config.resolved();
    let art = config.artifacts();
    let manifest = load_manifest(&art)?;
    let data = load_tagged(&config)?;
    let untagged = grouped(&data.corpus, &data.untagged, manifest.per_event);
    let tagged = grouped(&data.corpus, &data.tagged, manifest.per_event);
    let workers: BTreeMap<ModelKind, &WorkerCommand> = config
        .workers
        .iter()
        .map(|w| (ModelKind::ExternalWorker(w.name.clone().unwrap_or_default()), w))
        .collect();

    let mut out = Vec::new();
    for kind in &manifest.models {
        let mut set = PredictionSet {
            model: kind.clone(),
            predictions: BTreeMap::new(),
            predict_seconds: 0.0,
        };
        for (group, records) in &untagged {
            if kind.is_native() {
                let model: TrainedModel = read_json(&require(art.model(kind, group))?)?;
                let vocab: Vocabulary = read_json(&require(art.vocab(group))?)?;
                let vectors: Vec<(String, _)> = records
                    .iter()
                    .map(|r| Ok((r.id.clone(), transform(&r.narrative_text, &vocab)?)))
                    .collect::<Result<_>>()?;
                let p = predict(&model, vectors.iter().map(|(id, v)| (id, v)))?;
                set.predictions.extend(p.predictions);
                set.predict_seconds += p.predict_seconds;
            } else {
                let cmd = workers
                    .get(kind)
                    .ok_or_else(|| Error::InvalidArgument(format!("no worker command configured for {kind}")))?;
                let train_recs = tagged.get(group).map(Vec::as_slice).unwrap_or_default();
                let items: Vec<(String, String)> =
                    records.iter().map(|r| (r.id.clone(), r.narrative_text.clone())).collect();
                let o = worker_session(cmd, &text_examples(train_recs, &data.truth), &items)?;
                set.predictions.extend(o.predictions.predictions);
                set.predict_seconds += o.predictions.predict_seconds;
            }
        }
        zero_times_if_frozen(clock, &mut set);
        write_json(&art.prediction(kind), &set)?;
        out.push(set);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub threshold: usize,
    pub members: Vec<ModelKind>,
    pub labeled: usize,
    pub yes: usize,
    pub comparisons: Vec<(String, ModelComparison)>,
}

pub fn ensemble_stage(config: &PipelineConfig) -> Result<EnsembleSummary> {
    let art = config.artifacts();
    let cfg = config.ensemble_config();
    let sets: Vec<PredictionSet> = cfg
        .members
        .iter()
        .map(|m| read_json(&require(art.prediction(m))?))
        .collect::<Result<_>>()?;
    let ensemble = vote(&sets, &cfg)?;
    write_jsonl(&art.ensemble(), &ensemble)?;

    let corpus = load_corpus(&require(art.corpus())?)?;
    let ids: BTreeSet<String> = ensemble.iter().map(|e| e.narrative_id.clone()).collect();
    let mut comparisons = Vec::new();
    for (slice, slice_ids) in slices(&corpus, &ids) {
        let part: Vec<_> = ensemble.iter().filter(|e| slice_ids.contains(&e.narrative_id)).cloned().collect();
        let restricted: Vec<PredictionSet> = sets.iter().map(|s| s.restrict(&slice_ids)).collect::<Result<_>>()?;
        for c in compare_to_ensemble(&restricted, &part, &config.tests)? {
            comparisons.push((slice.clone(), c));
        }
    }
    let summary = EnsembleSummary {
        threshold: cfg.effective_threshold(),
        members: cfg.members.clone(),
        labeled: ensemble.len(),
        yes: ensemble.iter().filter(|e| e.final_label.is_yes()).count(),
        comparisons,
    };
    write_json(&art.ensemble_comparison(), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub table: crate::report::ValidityTable,
    pub fisher: SignificanceSummary,
    pub agreement_pairs: BTreeMap<String, SignificanceSummary>,
    pub mcnemar_truth: SignificanceSummary,
    pub mcnemar_ensemble: Option<SignificanceSummary>,
}

pub fn report_stage(config: &PipelineConfig) -> Result<ReportSummary> {
    let art = config.artifacts();
    let dir = art.report_dir();
    let corpus = load_corpus(&require(art.corpus())?)?;
    let labels = load_labels(&require(art.labels())?)?;
    let table = build_validity_table(&labels, &corpus, config.ci_n, &config.tests)?;
    write_validity_csv(&table, &dir.join("table1.csv"))?;

    let eval: Evaluation = read_json(&require(art.evaluation())?)?;
    let alpha = config.tests.alpha;
    write_fisher_csv(&eval.evaluations, alpha, &dir.join("fisher_pvalues.csv"))?;
    write_precision_csv(&eval.evaluations, &dir.join("precision.csv"))?;
    for e in &eval.evaluations {
        write_confusion_csv(&e.confusion, &dir.join(format!("confusion_{}_{}.csv", e.model.slug(), e.slice)))?;
    }
    let mut agreement_pairs = BTreeMap::new();
    for (slice, m) in &eval.agreement {
        write_agreement_csv(m, &dir.join(format!("agreement_{slice}.csv")))?;
        let pairs = m.pairs();
        agreement_pairs.insert(
            slice.clone(),
            SignificanceSummary {
                significant: pairs.iter().filter(|c| c.mcnemar_p < alpha).count(),
                total: pairs.len(),
                degenerate: pairs.iter().filter(|c| c.mcnemar_p == 1.0).count(),
            },
        );
    }
    write_mcnemar_csv(&eval.mcnemar_truth, &dir.join("mcnemar_truth.csv"))?;

    let mcnemar_ensemble = if art.ensemble_comparison().exists() {
        let ens: EnsembleSummary = read_json(&art.ensemble_comparison())?;
        write_mcnemar_csv(&ens.comparisons, &dir.join("mcnemar_ensemble.csv"))?;
        Some(significance_summary(ens.comparisons.iter().map(|(_, c)| &c.result), alpha))
    } else {
        None
    };

    let summary = ReportSummary {
        table,
        fisher: significance_summary(eval.evaluations.iter().map(|e| &e.fisher), alpha),
        agreement_pairs,
        mcnemar_truth: significance_summary(eval.mcnemar_truth.iter().map(|(_, c)| &c.result), alpha),
        mcnemar_ensemble,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Per-group training (tagged) and prediction (untagged) vectors.
pub fn bench_slices(config: &PipelineConfig) -> Result<Vec<BenchSlice>> {
    let data = load_tagged(config)?;
    let tagged = grouped(&data.corpus, &data.tagged, config.per_event);
    let untagged = grouped(&data.corpus, &data.untagged, config.per_event);
    tagged
        .iter()
        .map(|(group, records)| {
            let texts: Vec<&str> = records.iter().map(|r| r.narrative_text.as_str()).collect();
            let vocab = fit_tfidf_capped(&texts, config.max_vocabulary)?;
            let predict = untagged
                .get(group)
                .map(Vec::as_slice)
                .unwrap_or_default()
                .iter()
                .map(|r| Ok((r.id.clone(), transform(&r.narrative_text, &vocab)?)))
                .collect::<Result<_>>()?;
            Ok(BenchSlice {
                event: group.clone(),
                train: examples(records, &vocab, &data.truth)?,
                predict,
            })
        })
        .collect()
}

pub fn bench_stage(config: &PipelineConfig) -> Result<BenchReport> {
    let config = config.resolved();
    let slices = bench_slices(&config)?;
    let report = bench(&config.models, &slices, &config.hyperparams, &config.bench)?;
    write_bench(&report, &config.artifacts().report_dir())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eModelSummary {
    pub model: ModelKind,
    /// Pooled out-of-fold precision on the tagged split.
    pub yes_precision: Option<f64>,
    pub no_precision: Option<f64>,
    pub oof_accuracy: Option<f64>,
    /// Accuracy on the untagged split against planted truth.
    pub untagged_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eSummary {
    pub corpus_size: usize,
    pub tagged: usize,
    pub untagged: usize,
    pub planted_invalid: usize,
    /// Agreement of labels from error-free reviewers with planted truth.
    pub truthful_label_accuracy: f64,
    pub ties: usize,
    pub tie_rate: f64,
    pub models: Vec<E2eModelSummary>,
    pub ensemble_threshold: usize,
    pub ensemble_untagged_accuracy: f64,
    pub runtime_seconds: f64,
}

fn accuracy(pred: &BTreeMap<String, Label>, truth: &BTreeMap<String, Label>) -> f64 {
    let hits = pred.iter().filter(|(id, l)| truth.get(*id) == Some(l)).count();
    hits as f64 / pred.len().max(1) as f64
}

/// Every stage against the mock generator, with scripted reviewers voting
/// the planted truth. Writes `e2e_summary.json` next to the artifacts.
pub fn e2e_mock(config: &PipelineConfig, clock: Clock) -> Result<E2eSummary> {
    let watch = clock.start();
    let mut config = config.clone();
    config.generation.mock_mode = true;
    config.validate()?;
    let art = config.artifacts();

    generate_stage(&config, clock)?;
    let (tagged, untagged) = sample_stage(&config)?;
    assign_stage(&config)?;
    let planted: BTreeMap<String, Label> = read_jsonl::<PlantedTruth>(&art.planted())?
        .into_iter()
        .map(|p| (p.narrative_id.clone(), p.label()))
        .collect();

    // Error-free reviewers first, in memory only.
    let truthful = {
        let svc = tagging_service(&config, clock, false)?;
        let sim = ReviewSimulation {
            disagreement_rate: 0.0,
            seed: derive_seed(config.seed, "review-truthful"),
        };
        let out = simulate_review(&svc, &load_truth(&art)?, &sim)?;
        accuracy(&label_map(&out.labels), &planted)
    };
    let agg = aggregate_stage(&config, clock, true)?;

    train_stage(&config, clock)?;
    let eval = evaluate_stage(&config)?;
    let predictions = predict_stage(&config, clock)?;
    let ens = ensemble_stage(&config)?;
    report_stage(&config)?;
    bench_stage(&config)?;

    let ensemble_labels = final_labels(&read_jsonl(&art.ensemble())?);
    let models = predictions
        .iter()
        .map(|p| {
            let e = eval
                .evaluations
                .iter()
                .find(|e| e.model == p.model && e.slice == "all")
                .expect("evaluated model");
            E2eModelSummary {
                model: p.model.clone(),
                yes_precision: e.precision.yes,
                no_precision: e.precision.no,
                oof_accuracy: e.accuracy,
                untagged_accuracy: accuracy(&p.predictions, &planted),
            }
        })
        .collect();
    let summary = E2eSummary {
        corpus_size: tagged + untagged,
        tagged,
        untagged,
        planted_invalid: planted.values().filter(|l| !l.is_yes()).count(),
        truthful_label_accuracy: truthful,
        ties: agg.tie_broken,
        tie_rate: agg.tie_rate.unwrap_or(0.0),
        models,
        ensemble_threshold: ens.threshold,
        ensemble_untagged_accuracy: accuracy(&ensemble_labels, &planted),
        runtime_seconds: watch.seconds(),
    };
    write_json(&art.e2e_summary(), &summary)?;
    Ok(summary)
}
