//! Generate a small corpus with the offline mock and count planted defects.
//!
//!     cargo run --example mock_generation

use narrative_validity::genclient::{generate, GenerationConfig, GenerationOutcome};
use narrative_validity::pipeline::{build_jobs, PipelineConfig};
use narrative_validity::Clock;

fn main() -> narrative_validity::Result<()> {
    let cfg = PipelineConfig {
        corpus_size: 40,
        ..Default::default()
    };
    let jobs = build_jobs(&cfg)?;
    let out = generate(&jobs, &GenerationConfig::mock(3, 0.13), Clock::frozen())?;
    let mut defects = 0;
    for o in &out {
        if let GenerationOutcome::Generated { planted_defect: Some(code), record } = o {
            defects += 1;
            println!("{} planted {code}", record.id);
        }
    }
    println!("{defects} of {} narratives carry a planted defect", out.len());
    if let Some(r) = out[0].record() {
        println!("\nfirst narrative:\n{}", r.narrative_text);
    }
    Ok(())
}
