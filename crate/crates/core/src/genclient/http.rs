use std::sync::atomic::{AtomicBool, AtomicU16, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};

use super::{GenerationConfig, GenerationOutcome, PromptJob};
use crate::corpus::NarrativeRecord;
use crate::{Clock, Error, Result};

const MAX_BACKOFF: Duration = Duration::from_secs(30);

/// Request body: one user message, no system prompt.
pub fn chat_request_body(model: &str, prompt: &str, temperature: f64) -> Value {
    json!({
        "model": model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": temperature,
    })
}

/// Text of the first choice's message.
pub fn extract_content(response: &Value) -> Option<&str> {
    response
        .get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
}

enum Attempt {
    Done(String),
    Transient(String),
    Permanent(String),
    Unauthorized(u16),
}

fn attempt(agent: &ureq::Agent, config: &GenerationConfig, key: &str, prompt: &str) -> Attempt {
    let body = chat_request_body(&config.model_name, prompt, config.temperature);
    let resp = agent
        .post(&config.endpoint_url)
        .header("Authorization", &format!("Bearer {key}"))
        .send_json(&body);
    let mut resp = match resp {
        Ok(r) => r,
        Err(e) => return Attempt::Transient(e.to_string()),
    };
    let status = resp.status().as_u16();
    match status {
        401 | 403 => return Attempt::Unauthorized(status),
        408 | 429 | 500..=599 => return Attempt::Transient(format!("status {status}")),
        200..=299 => {}
        _ => return Attempt::Permanent(format!("status {status}")),
    }
    let value: Value = match resp.body_mut().read_json() {
        Ok(v) => v,
        Err(e) => return Attempt::Permanent(format!("unreadable response: {e}")),
    };
    match extract_content(&value) {
        Some(text) if !text.trim().is_empty() => Attempt::Done(text.to_string()),
        Some(_) => Attempt::Permanent("empty completion".into()),
        None => Attempt::Permanent("response has no choices[0].message.content".into()),
    }
}

fn backoff(config: &GenerationConfig, retry: u32) -> Duration {
    let ms = config
        .backoff_base_ms
        .saturating_mul(1u64 << retry.min(20));
    Duration::from_millis(ms).min(MAX_BACKOFF)
}

pub(super) fn generate_http(
    jobs: &[PromptJob],
    config: &GenerationConfig,
    clock: Clock,
) -> Result<Vec<GenerationOutcome>> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(config.timeout)))
        .http_status_as_error(false)
        .build()
        .into();
    let key = config.effective_api_key();
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let auth_status = AtomicU16::new(0);
    let results: Mutex<Vec<Option<GenerationOutcome>>> = Mutex::new(vec![None; jobs.len()]);

    let workers = config.max_in_flight.min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    return;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { return };
                let mut attempts = 0;
                let outcome = loop {
                    attempts += 1;
                    match attempt(&agent, config, &key, &job.prompt_text) {
                        Attempt::Done(text) => {
                            break GenerationOutcome::Generated {
                                record: NarrativeRecord {
                                    id: job.id.clone(),
                                    event_type: job.event_type,
                                    profile: job.profile.clone(),
                                    prompt_text: job.prompt_text.clone(),
                                    narrative_text: text,
                                    generator: config.model_name.clone(),
                                    created_at: clock.now(),
                                },
                                planted_defect: None,
                            }
                        }
                        Attempt::Unauthorized(status) => {
                            auth_status.store(status, Ordering::SeqCst);
                            abort.store(true, Ordering::SeqCst);
                            return;
                        }
                        Attempt::Permanent(error) => {
                            break GenerationOutcome::Failed {
                                id: job.id.clone(),
                                error,
                                attempts,
                            }
                        }
                        Attempt::Transient(error) => {
                            if attempts > config.retry_limit {
                                break GenerationOutcome::Failed {
                                    id: job.id.clone(),
                                    error: format!("retries exhausted: {error}"),
                                    attempts,
                                };
                            }
                            log::debug!("{}: attempt {attempts} failed: {error}", job.id);
                            std::thread::sleep(backoff(config, attempts - 1));
                        }
                    }
                };
                results.lock().unwrap()[i] = Some(outcome);
            });
        }
    });

    if abort.load(Ordering::SeqCst) {
        return Err(Error::Authentication {
            status: auth_status.load(Ordering::SeqCst),
        });
    }
    Ok(results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|o| o.expect("every job visited"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_has_single_user_message() {
        let b = chat_request_body("gpt-4", "hello", 1.0);
        assert_eq!(b["model"], "gpt-4");
        assert_eq!(b["messages"].as_array().unwrap().len(), 1);
        assert_eq!(b["messages"][0]["role"], "user");
        assert_eq!(b["temperature"], 1.0);
    }

    #[test]
    fn content_comes_from_first_choice() {
        let v = json!({"choices": [{"message": {"content": "a"}}, {"message": {"content": "b"}}]});
        assert_eq!(extract_content(&v), Some("a"));
        assert_eq!(extract_content(&json!({"choices": []})), None);
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let cfg = GenerationConfig {
            backoff_base_ms: 100,
            ..Default::default()
        };
        assert_eq!(backoff(&cfg, 0), Duration::from_millis(100));
        assert_eq!(backoff(&cfg, 3), Duration::from_millis(800));
        assert_eq!(backoff(&cfg, 30), MAX_BACKOFF);
    }
}
