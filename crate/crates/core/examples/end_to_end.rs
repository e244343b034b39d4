//! The whole pipeline on a mock corpus: generate, sample, review with a
//! tie-breaker, train, evaluate, predict, vote and report.
//!
//!     cargo run --release --example end_to_end [out-dir]

use narrative_validity::pipeline::{e2e_mock, PipelineConfig};
use narrative_validity::Clock;

fn main() -> narrative_validity::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/e2e".into());
    let mut cfg = PipelineConfig::e2e_mock(42, &out);
    cfg.corpus_size = 2000;
    let s = e2e_mock(&cfg, Clock::System)?;
    println!("{} narratives, {} tagged, {} planted invalid", s.corpus_size, s.tagged, s.planted_invalid);
    println!("tie rate {:.3}, truthful label accuracy {:.3}", s.tie_rate, s.truthful_label_accuracy);
    for m in &s.models {
        println!(
            "{:>14}: yes precision {:?}, no precision {:?}, untagged accuracy {:.3}",
            m.model.to_string(),
            m.yes_precision,
            m.no_precision,
            m.untagged_accuracy
        );
    }
    println!("ensemble (threshold {}): {:.3}", s.ensemble_threshold, s.ensemble_untagged_accuracy);
    println!("artifacts in {out}");
    Ok(())
}
