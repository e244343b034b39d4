//! Stratified 10-fold cross-validation of the three native learners on a
//! mock corpus, with pooled out-of-fold precision.
//!
//!     cargo run --release --example cross_validation

use std::collections::BTreeMap;

use narrative_validity::features::{fit_tfidf, transform};
use narrative_validity::genclient::{generate, GenerationConfig, GenerationOutcome};
use narrative_validity::models::{cross_validate, CvConfig, Hyperparams, LabeledExample, ModelKind};
use narrative_validity::pipeline::{build_jobs, PipelineConfig};
use narrative_validity::stats::{confusion, precision};
use narrative_validity::{Clock, EventType, Label};

fn main() -> narrative_validity::Result<()> {
    let cfg = PipelineConfig {
        corpus_size: 1200,
        events: vec![EventType::Hired],
        ..Default::default()
    };
    let out = generate(&build_jobs(&cfg)?, &GenerationConfig::mock(5, 0.13), Clock::frozen())?;
    let mut texts = Vec::new();
    let mut truth = BTreeMap::new();
    for o in &out {
        if let GenerationOutcome::Generated { record, planted_defect } = o {
            texts.push((record.id.clone(), record.narrative_text.clone()));
            truth.insert(record.id.clone(), Label::from_bool(planted_defect.is_none()));
        }
    }
    let vocab = fit_tfidf(&texts.iter().map(|(_, t)| t.as_str()).collect::<Vec<_>>())?;
    let examples: Vec<LabeledExample> = texts
        .iter()
        .map(|(id, t)| Ok(LabeledExample { id: id.clone(), vector: transform(t, &vocab)?, label: truth[id] }))
        .collect::<narrative_validity::Result<_>>()?;

    let cv = CvConfig { k: 10, seed: 1, stratified: true };
    let params = Hyperparams { seed: 1, ..Default::default() };
    for kind in ModelKind::NATIVE {
        let outcome = cross_validate(&kind, &examples, &params, &cv)?;
        let cm = confusion(&outcome.predictions.predictions, &truth)?;
        let p = precision(&cm);
        println!(
            "{:>14}: accuracy {:.3}, yes precision {:?}, no precision {:?}, folds {}",
            kind.to_string(),
            cm.accuracy().unwrap_or(0.0),
            p.yes,
            p.no,
            outcome.folds.len()
        );
    }
    Ok(())
}
