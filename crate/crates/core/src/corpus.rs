//! Narrative records, final labels and tagged/untagged splits.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::io::{read_json, read_jsonl, write_json, write_jsonl};
use crate::{Error, Label, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventType {
    Birth,
    Death,
    Hired,
    Fired,
}

impl EventType {
    pub const ALL: [EventType; 4] = [
        EventType::Birth,
        EventType::Death,
        EventType::Hired,
        EventType::Fired,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventType::Birth => "birth",
            EventType::Death => "death",
            EventType::Hired => "hired",
            EventType::Fired => "fired",
        }
    }

    /// Keys every profile of this event carries in `AgentProfile::extra`.
    pub fn extra_keys(self) -> &'static [&'static str] {
        match self {
            EventType::Birth => &[],
            EventType::Death => &["cause"],
            EventType::Hired | EventType::Fired => &["employer", "job_title"],
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EventType::ALL
            .into_iter()
            .find(|e| e.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown event type `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
        }
    }
}

/// Per-prompt variable data about the subject of an event and its narrator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub subject_name: String,
    pub subject_age: u32,
    pub subject_sex: Sex,
    pub narrator_name: String,
    pub narrator_age: u32,
    /// The narrator's relation to the subject, e.g. "mother" or "coworker".
    pub relationship: String,
    pub event_date: NaiveDate,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

impl AgentProfile {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.relationship.trim().is_empty() {
            return Err("relationship is empty".into());
        }
        if self.subject_name.trim().is_empty() || self.narrator_name.trim().is_empty() {
            return Err("subject and narrator names must be nonempty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeRecord {
    pub id: String,
    pub event_type: EventType,
    pub profile: AgentProfile,
    pub prompt_text: String,
    pub narrative_text: String,
    /// Model name, or "mock" for the offline generator.
    pub generator: String,
    pub created_at: DateTime<Utc>,
}

impl NarrativeRecord {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| Error::InvalidRecord {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(fail("empty id"));
        }
        if self.prompt_text.is_empty() {
            return Err(fail("empty prompt_text"));
        }
        if self.narrative_text.is_empty() {
            return Err(fail("empty narrative_text"));
        }
        self.profile.validate().map_err(|r| fail(&r))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalLabel {
    pub narrative_id: String,
    pub label: Label,
    pub tie_broken: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub tagged_ids: BTreeSet<String>,
    pub untagged_ids: BTreeSet<String>,
}

impl CorpusSplit {
    /// Checks the split partitions exactly the ids of `corpus`.
    pub fn validate(&self, corpus: &[NarrativeRecord]) -> Result<()> {
        if let Some(id) = self.tagged_ids.intersection(&self.untagged_ids).next() {
            return Err(Error::Validation(format!("id {id} is both tagged and untagged")));
        }
        let ids: HashSet<&str> = corpus.iter().map(|r| r.id.as_str()).collect();
        let unknown: Vec<String> = self
            .tagged_ids
            .iter()
            .chain(&self.untagged_ids)
            .filter(|id| !ids.contains(id.as_str()))
            .cloned()
            .collect();
        if !unknown.is_empty() {
            return Err(Error::UnknownIds(unknown));
        }
        let covered = self.tagged_ids.len() + self.untagged_ids.len();
        if covered != ids.len() {
            return Err(Error::Validation(format!(
                "split covers {covered} ids, corpus has {}",
                ids.len()
            )));
        }
        Ok(())
    }
}

/// Writes the corpus as JSONL. Every record is validated first.
pub fn save_corpus(records: &[NarrativeRecord], path: &Path) -> Result<usize> {
    let mut seen = HashSet::new();
    for r in records {
        r.validate()?;
        if !seen.insert(r.id.as_str()) {
            return Err(Error::InvalidRecord {
                id: r.id.clone(),
                reason: "duplicate id".into(),
            });
        }
    }
    write_jsonl(path, records)
}

pub fn load_corpus(path: &Path) -> Result<Vec<NarrativeRecord>> {
    read_jsonl(path)
}

pub fn save_labels(labels: &[FinalLabel], path: &Path) -> Result<usize> {
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l.narrative_id.as_str()) {
            return Err(Error::Validation(format!(
                "more than one final label for {}",
                l.narrative_id
            )));
        }
    }
    write_jsonl(path, labels)
}

pub fn load_labels(path: &Path) -> Result<Vec<FinalLabel>> {
    read_jsonl(path)
}

pub fn save_split(split: &CorpusSplit, path: &Path) -> Result<()> {
    write_json(path, split)
}

pub fn load_split(path: &Path) -> Result<CorpusSplit> {
    read_json(path)
}

/// Half-up rounding of `fraction * n`.
pub fn sample_size(n: usize, fraction: f64) -> usize {
    (fraction * n as f64 + 0.5).floor() as usize
}

/// Draws a uniform sample of `round(fraction * |corpus|)` records without
/// replacement. The selection depends only on the seed and the corpus order.
///
/// `fraction` may be exactly 1.0, which tags the whole corpus.
pub fn sample_split(corpus: &[NarrativeRecord], fraction: f64, seed: u64) -> Result<CorpusSplit> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("cannot sample an empty corpus".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sample fraction {fraction} is outside (0, 1]"
        )));
    }
    let n_tagged = sample_size(corpus.len(), fraction);
    if n_tagged == 0 {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} of {} records rounds to an empty sample",
            corpus.len()
        )));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut split = CorpusSplit::default();
    for (rank, &i) in order.iter().enumerate() {
        let id = corpus[i].id.clone();
        if rank < n_tagged {
            split.tagged_ids.insert(id);
        } else {
            split.untagged_ids.insert(id);
        }
    }
    if split.tagged_ids.len() + split.untagged_ids.len() != corpus.len() {
        return Err(Error::Validation("corpus contains duplicate ids".into()));
    }
    Ok(split)
}

/// Number of tagged narratives per event type. All four types are present,
/// zero when absent.
pub fn event_counts(
    split: &CorpusSplit,
    corpus: &[NarrativeRecord],
) -> Result<BTreeMap<EventType, usize>> {
    let by_id: BTreeMap<&str, EventType> =
        corpus.iter().map(|r| (r.id.as_str(), r.event_type)).collect();
    let mut counts: BTreeMap<EventType, usize> =
        EventType::ALL.iter().map(|&e| (e, 0)).collect();
    let mut unknown = Vec::new();
    for id in &split.tagged_ids {
        match by_id.get(id.as_str()) {
            Some(e) => *counts.entry(*e).or_default() += 1,
            None => unknown.push(id.clone()),
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownIds(unknown));
    }
    Ok(counts)
}

/// Index of the corpus by id.
pub fn index_by_id(corpus: &[NarrativeRecord]) -> BTreeMap<&str, &NarrativeRecord> {
    corpus.iter().map(|r| (r.id.as_str(), r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn empty_corpus_saves_to_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        assert_eq!(save_corpus(&[], &path).unwrap(), 0);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
        assert!(load_corpus(&path).unwrap().is_empty());
    }

    #[test]
    fn save_rejects_invalid_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut records = fixtures::synthetic_corpus(&[(EventType::Birth, 2)]);
        records[1].narrative_text.clear();
        let err = save_corpus(&records, &dir.path().join("c.jsonl")).unwrap_err();
        assert!(matches!(err, Error::InvalidRecord { .. }), "{err}");

        records[1] = records[0].clone();
        let err = save_corpus(&records, &dir.path().join("c.jsonl")).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn split_file_has_both_arrays() {
        let split = CorpusSplit {
            tagged_ids: ["a".to_string()].into(),
            untagged_ids: ["b".to_string(), "c".to_string()].into(),
        };
        let v = serde_json::to_value(&split).unwrap();
        assert_eq!(v["tagged_ids"], serde_json::json!(["a"]));
        assert_eq!(v["untagged_ids"], serde_json::json!(["b", "c"]));
    }

    #[test]
    fn sample_split_rejects_bad_fractions() {
        let corpus = fixtures::synthetic_corpus(&[(EventType::Death, 10)]);
        assert!(sample_split(&corpus, 0.0, 1).is_err());
        assert!(sample_split(&corpus, 1.5, 1).is_err());
        assert!(sample_split(&corpus, 0.01, 1).is_err());
        assert!(sample_split(&[], 0.5, 1).is_err());
    }

    #[test]
    fn sample_size_rounds_half_up() {
        assert_eq!(sample_size(24_000, 0.12), 2_880);
        assert_eq!(sample_size(10, 0.25), 3);
        assert_eq!(sample_size(10, 0.5), 5);
    }

    #[test]
    fn event_counts_on_empty_split_are_zero() {
        let corpus = fixtures::synthetic_corpus(&[(EventType::Hired, 3)]);
        let counts = event_counts(&CorpusSplit::default(), &corpus).unwrap();
        assert_eq!(counts.len(), 4);
        assert!(counts.values().all(|&c| c == 0));
    }

    #[test]
    fn event_counts_reject_unknown_ids() {
        let corpus = fixtures::synthetic_corpus(&[(EventType::Hired, 3)]);
        let split = CorpusSplit {
            tagged_ids: ["nope".to_string()].into(),
            untagged_ids: BTreeSet::new(),
        };
        assert!(matches!(
            event_counts(&split, &corpus),
            Err(Error::UnknownIds(_))
        ));
    }

    #[test]
    fn event_type_tokens_are_lowercase() {
        assert_eq!(serde_json::to_string(&EventType::Hired).unwrap(), "\"hired\"");
        assert_eq!("Fired".parse::<EventType>().unwrap(), EventType::Fired);
    }
}
