//! Time training and prediction of the native models on a synthetic slice.
//!
//!     cargo run --release --example benchmark

use std::collections::BTreeMap;

use narrative_validity::features::SparseVector;
use narrative_validity::models::{Hyperparams, LabeledExample, ModelKind};
use narrative_validity::report::{bench, BenchConfig, BenchSlice};
use narrative_validity::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> narrative_validity::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dim = 500;
    let vector = |rng: &mut ChaCha8Rng| {
        let entries: BTreeMap<u32, f64> = (0..20).map(|_| (rng.gen_range(0..dim as u32), rng.gen_range(0.0..1.0))).collect();
        SparseVector::new(entries.into_iter().collect(), dim)
    };
    let train = (0..600)
        .map(|i| Ok(LabeledExample { id: format!("t{i}"), vector: vector(&mut rng)?, label: Label::from_bool(i % 8 != 0) }))
        .collect::<narrative_validity::Result<_>>()?;
    let predict = (0..3000).map(|i| Ok((format!("u{i}"), vector(&mut rng)?))).collect::<narrative_validity::Result<_>>()?;
    let slices = [BenchSlice { event: "synthetic".into(), train, predict }];
    let report = bench(&ModelKind::NATIVE, &slices, &Hyperparams::default(), &BenchConfig::default())?;
    for t in &report.timings {
        let e = &t.per_event[0];
        println!("{:>14}: train {:.4}s {:?}, predict {:.4}s", t.model.to_string(), t.train_seconds, e.train_runs, t.predict_seconds);
    }
    println!("{:?}", report.machine);
    Ok(())
}
