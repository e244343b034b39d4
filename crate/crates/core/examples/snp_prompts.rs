//! Render one structured narrative prompt per event type.
//!
//!     cargo run --example snp_prompts

use narrative_validity::snp::{render_prompt, synth_profiles, template_set};
use narrative_validity::EventType;

fn main() -> narrative_validity::Result<()> {
    let templates = template_set(None)?;
    for event in EventType::ALL {
        let profile = &synth_profiles(event, 1, 7)?[0];
        println!("== {event} ==");
        println!("{}\n", render_prompt(&templates[&event], event, profile)?);
    }
    Ok(())
}
