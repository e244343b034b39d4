//! Start the review API on a free port, run a scripted two-reviewer round
//! with a tie-break against it, then print the final labels.
//!
//!     cargo run --example tagging_server

use std::sync::Arc;

use narrative_validity::corpus::CorpusSplit;
use narrative_validity::fixtures::synthetic_corpus;
use narrative_validity::tagging::{assign, spawn_server, ReviewerRoster, TaggingService};
use narrative_validity::{Clock, EventType};
use serde_json::{json, Value};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synthetic_corpus(&[(EventType::Birth, 6)]);
    let split = CorpusSplit {
        tagged_ids: corpus.iter().map(|r| r.id.clone()).collect(),
        untagged_ids: Default::default(),
    };
    let roster = ReviewerRoster::default();
    let assignments = assign(&split, &roster, 1)?;
    let svc = Arc::new(TaggingService::new(&corpus, roster, assignments, Clock::System)?);
    let server = spawn_server(svc, "127.0.0.1:0".parse()?, None)?;
    let base = server.base_url();
    println!("serving on {base}");
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();

    let mut first_b = true;
    for alias in ["A1", "A2", "A3", "A4", "B1", "B2", "B3", "B4"] {
        loop {
            let mut r = agent.get(&format!("{base}/api/queue/{alias}")).call()?;
            if r.status() == 204 {
                break;
            }
            let task: Value = r.body_mut().read_json()?;
            let id = task["narrative_id"].as_str().unwrap_or_default().to_string();
            // One B reviewer rejects the first narrative they see.
            let (verdict, codes) = if alias.starts_with('B') && first_b {
                first_b = false;
                ("no", vec!["wrong_subject"])
            } else {
                ("yes", vec![])
            };
            agent
                .post(&format!("{base}/api/decisions"))
                .send_json(json!({"narrative_id": id, "reviewer": alias, "verdict": verdict, "exclusion_codes": codes}))?;
        }
    }
    let ties: Value = agent.get(&format!("{base}/api/ties?alias=T1")).call()?.body_mut().read_json()?;
    for t in ties.as_array().into_iter().flatten() {
        let id = &t["narrative_id"];
        println!("tie on {id}; tie-breaker votes yes");
        agent
            .post(&format!("{base}/api/decisions"))
            .send_json(json!({"narrative_id": id, "reviewer": "T1", "verdict": "yes"}))?;
    }
    let report: Value = agent.post(&format!("{base}/api/finalize")).send_json(json!({}))?.body_mut().read_json()?;
    println!("{}", serde_json::to_string_pretty(&report["finalized"])?);
    Ok(())
}
