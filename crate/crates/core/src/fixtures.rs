//! Small deterministic corpora for tests, examples and benchmarks.

use chrono::{NaiveDate, TimeZone, Utc};

use crate::corpus::{AgentProfile, EventType, FinalLabel, NarrativeRecord, Sex};
use crate::Label;

/// Reference manual-tagging tally: (event, yes, no).
pub const REFERENCE_TALLY: [(EventType, usize, usize); 4] = [
    (EventType::Birth, 519, 201),
    (EventType::Death, 612, 93),
    (EventType::Hired, 696, 24),
    (EventType::Fired, 691, 44),
];

/// Records with placeholder text, `counts` records per event in order.
/// Ids are `<event>-<index>`.
pub fn synthetic_corpus(counts: &[(EventType, usize)]) -> Vec<NarrativeRecord> {
    let created_at = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let mut out = Vec::new();
    for &(event, n) in counts {
        for i in 0..n {
            let profile = placeholder_profile(event, i);
            out.push(NarrativeRecord {
                id: format!("{event}-{i:05}"),
                event_type: event,
                prompt_text: format!("Describe the {event} of {}.", profile.subject_name),
                narrative_text: format!("A narrative about {} ({event}).", profile.subject_name),
                profile,
                generator: "fixture".into(),
                created_at,
            });
        }
    }
    out
}

fn placeholder_profile(event: EventType, i: usize) -> AgentProfile {
    let mut extra = std::collections::BTreeMap::new();
    for key in event.extra_keys() {
        extra.insert((*key).to_string(), format!("{key} {i}"));
    }
    AgentProfile {
        subject_name: format!("Subject {i}"),
        subject_age: if event == EventType::Birth { 0 } else { 30 },
        subject_sex: if i % 2 == 0 { Sex::Female } else { Sex::Male },
        narrator_name: format!("Narrator {i}"),
        narrator_age: 40,
        relationship: "friend".into(),
        event_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
        extra,
    }
}

/// The reference tally as a corpus plus final labels. Within each event the
/// first `yes` records are labeled Yes and the rest No; every tenth label is
/// marked tie-broken.
pub fn reference_tally_corpus() -> (Vec<NarrativeRecord>, Vec<FinalLabel>) {
    let counts: Vec<(EventType, usize)> = REFERENCE_TALLY
        .iter()
        .map(|&(e, yes, no)| (e, yes + no))
        .collect();
    let corpus = synthetic_corpus(&counts);
    let mut labels = Vec::with_capacity(corpus.len());
    for &(event, yes, _) in &REFERENCE_TALLY {
        for (i, r) in corpus.iter().filter(|r| r.event_type == event).enumerate() {
            labels.push(FinalLabel {
                narrative_id: r.id.clone(),
                label: Label::from_bool(i < yes),
                tie_broken: i % 10 == 0,
            });
        }
    }
    (corpus, labels)
}
