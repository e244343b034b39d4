//! Narrative generation through a chat-completions endpoint or the offline
//! mock.

mod http;
mod mock;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AgentProfile, EventType, NarrativeRecord};
use crate::tagging::ExclusionCode;
use crate::{derive_seed, Clock, Error, Result};

pub use http::{chat_request_body, extract_content};
pub use mock::{mock_narrative, ADULT_VOICE_AGE, CROSS_EVENT_MENTION_RATE};

/// Environment variable that overrides `GenerationConfig::api_key`.
pub const API_KEY_ENV: &str = "NARVAL_API_KEY";

#[derive(Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(skip_serializing)]
    pub api_key: String,
    pub max_in_flight: usize,
    pub retry_limit: u32,
    /// Per-request timeout in seconds.
    pub timeout: f64,
    /// First retry delay in milliseconds; doubles per attempt.
    pub backoff_base_ms: u64,
    pub temperature: f64,
    pub mock_mode: bool,
    pub mock_invalid_rate: f64,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "gpt-4".into(),
            api_key: String::new(),
            max_in_flight: 8,
            retry_limit: 5,
            timeout: 120.0,
            backoff_base_ms: 500,
            temperature: 1.0,
            mock_mode: false,
            mock_invalid_rate: 0.0,
            seed: 0,
        }
    }
}

impl fmt::Debug for GenerationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GenerationConfig")
            .field("endpoint_url", &self.endpoint_url)
            .field("model_name", &self.model_name)
            .field("api_key", &"<redacted>")
            .field("max_in_flight", &self.max_in_flight)
            .field("retry_limit", &self.retry_limit)
            .field("timeout", &self.timeout)
            .field("mock_mode", &self.mock_mode)
            .field("mock_invalid_rate", &self.mock_invalid_rate)
            .field("seed", &self.seed)
            .finish()
    }
}

impl GenerationConfig {
    pub fn mock(seed: u64, invalid_rate: f64) -> Self {
        GenerationConfig {
            mock_mode: true,
            mock_invalid_rate: invalid_rate,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_in_flight == 0 {
            return Err(Error::InvalidArgument("max_in_flight must be at least 1".into()));
        }
        if self.mock_mode && !(0.0..=1.0).contains(&self.mock_invalid_rate) {
            return Err(Error::InvalidArgument(format!(
                "mock_invalid_rate {} is outside [0, 1]",
                self.mock_invalid_rate
            )));
        }
        if !(self.timeout > 0.0) {
            return Err(Error::InvalidArgument("timeout must be positive".into()));
        }
        Ok(())
    }

    /// The configured key, unless the environment overrides it.
    pub fn effective_api_key(&self) -> String {
        std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .unwrap_or_else(|| self.api_key.clone())
    }
}

/// One prompt to generate a narrative for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptJob {
    pub id: String,
    pub event_type: EventType,
    pub profile: AgentProfile,
    pub prompt_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum GenerationOutcome {
    Generated {
        record: NarrativeRecord,
        /// Ground truth from the mock; always `None` for real endpoints.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        planted_defect: Option<ExclusionCode>,
    },
    Failed {
        id: String,
        error: String,
        attempts: u32,
    },
}

impl GenerationOutcome {
    pub fn id(&self) -> &str {
        match self {
            GenerationOutcome::Generated { record, .. } => &record.id,
            GenerationOutcome::Failed { id, .. } => id,
        }
    }

    pub fn record(&self) -> Option<&NarrativeRecord> {
        match self {
            GenerationOutcome::Generated { record, .. } => Some(record),
            GenerationOutcome::Failed { .. } => None,
        }
    }
}

/// Generates one outcome per job, in input order.
///
/// Transient endpoint failures are retried with exponential backoff; a job
/// that still fails becomes a `Failed` outcome. Rejected credentials abort
/// the whole batch.
pub fn generate(
    jobs: &[PromptJob],
    config: &GenerationConfig,
    clock: Clock,
) -> Result<Vec<GenerationOutcome>> {
    config.validate()?;
    if config.mock_mode {
        Ok(jobs.iter().map(|j| generate_mock(j, config, clock)).collect())
    } else {
        http::generate_http(jobs, config, clock)
    }
}

/// Whether the mock plants a defect for this id.
pub fn plants_defect(id: &str, config: &GenerationConfig) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("plant:{id}")));
    rng.gen_bool(config.mock_invalid_rate.clamp(0.0, 1.0))
}

fn generate_mock(job: &PromptJob, config: &GenerationConfig, clock: Clock) -> GenerationOutcome {
    let plant = plants_defect(&job.id, config);
    let seed = derive_seed(config.seed, &format!("text:{}", job.id));
    let (narrative_text, planted_defect) = mock_narrative(job.event_type, &job.profile, seed, plant);
    GenerationOutcome::Generated {
        record: NarrativeRecord {
            id: job.id.clone(),
            event_type: job.event_type,
            profile: job.profile.clone(),
            prompt_text: job.prompt_text.clone(),
            narrative_text,
            generator: "mock".into(),
            created_at: clock.now(),
        },
        planted_defect,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snp::{render_prompt, synth_profiles, PromptTemplate};

    pub(crate) fn jobs(n: usize) -> Vec<PromptJob> {
        let t = PromptTemplate::builtin(EventType::Hired);
        synth_profiles(EventType::Hired, n, 1)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, profile)| PromptJob {
                id: format!("n{i:05}"),
                event_type: EventType::Hired,
                prompt_text: render_prompt(&t, EventType::Hired, &profile).unwrap(),
                profile,
            })
            .collect()
    }

    #[test]
    fn mock_generation_is_byte_identical() {
        let js = jobs(50);
        let cfg = GenerationConfig::mock(3, 0.2);
        let a = generate(&js, &cfg, Clock::frozen()).unwrap();
        let b = generate(&js, &cfg, Clock::frozen()).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(a.len(), 50);
        for (job, out) in js.iter().zip(&a) {
            assert_eq!(job.id, out.id());
            assert_eq!(out.record().unwrap().generator, "mock");
        }
    }

    #[test]
    fn planted_rate_follows_config() {
        let cfg = GenerationConfig::mock(11, 0.13);
        let planted = (0..10_000)
            .filter(|i| plants_defect(&format!("id-{i}"), &cfg))
            .count();
        let rate = planted as f64 / 10_000.0;
        assert!((rate - 0.13).abs() <= 0.01, "{rate}");
    }

    #[test]
    fn config_validation() {
        let mut cfg = GenerationConfig::mock(1, 0.5);
        assert!(cfg.validate().is_ok());
        cfg.max_in_flight = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = GenerationConfig::mock(1, 1.5);
        assert!(cfg.validate().is_err());
        cfg.mock_invalid_rate = 0.1;
        cfg.timeout = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn debug_output_redacts_key() {
        let cfg = GenerationConfig {
            api_key: "sk-secret".into(),
            ..Default::default()
        };
        assert!(!format!("{cfg:?}").contains("sk-secret"));
        assert!(!serde_json::to_string(&cfg).unwrap().contains("sk-secret"));
    }
}
