//! Majority vote over nine members and McNemar of each member against it.
//!
//!     cargo run --example ensemble_vote

use narrative_validity::ensemble::{compare_to_ensemble, vote, EnsembleConfig};
use narrative_validity::models::{ModelKind, PredictionSet};
use narrative_validity::stats::TestConfig;
use narrative_validity::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> narrative_validity::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth: Vec<bool> = (0..200).map(|_| rng.gen_bool(0.87)).collect();
    let members: Vec<ModelKind> = (1..=9).map(|i| ModelKind::ExternalWorker(format!("model-{i}"))).collect();
    let sets: Vec<PredictionSet> = members
        .iter()
        .enumerate()
        .map(|(j, m)| PredictionSet {
            model: m.clone(),
            // Noisy copies of a hidden truth; later members err more often.
            predictions: truth
                .iter()
                .enumerate()
                .map(|(i, &t)| (format!("n{i:03}"), Label::from_bool(t != rng.gen_bool(0.05 + 0.03 * j as f64))))
                .collect(),
            predict_seconds: 0.0,
        })
        .collect();
    let cfg = EnsembleConfig::majority(members);
    let ens = vote(&sets, &cfg)?;
    let yes = ens.iter().filter(|e| e.final_label.is_yes()).count();
    println!("threshold {} of 9: {yes}/{} Yes", cfg.effective_threshold(), ens.len());
    for c in compare_to_ensemble(&sets, &ens, &TestConfig::default())? {
        println!("{:>18}: p = {:.4}{}", c.model.to_string(), c.result.p_value.unwrap(), if c.significant { " *" } else { "" });
    }
    Ok(())
}
