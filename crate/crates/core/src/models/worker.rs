//! External models over newline-delimited JSON on child stdio.
//!
//! ```text
//! -> {"op":"hello"}
//! <- {"name":"...","version":"..."}
//! -> {"op":"train","records":[{"id":"...","text":"...","label":"yes"}]}
//! <- {"ok":true,"train_seconds":1.5}
//! -> {"op":"predict","records":[{"id":"...","text":"..."}]}
//! <- {"ok":true,"predictions":[{"id":"...","label":"no"}],"predict_seconds":0.2}
//! ```
//!
//! The session closes the worker's stdin after `predict` and expects a
//! clean exit. Any failure is reported as an error; partial prediction
//! sets are never returned.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ModelKind, PredictionSet};
use crate::{Error, Label, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerCommand {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    /// Model name; defaults to the name the worker reports in `hello`.
    #[serde(default)]
    pub name: Option<String>,
    /// Per-reply timeout.
    #[serde(default = "default_timeout", with = "secs")]
    pub timeout: Duration,
}

fn default_timeout() -> Duration {
    Duration::from_secs(600)
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

impl WorkerCommand {
    pub fn new(program: impl Into<String>, args: &[&str]) -> Self {
        WorkerCommand {
            program: program.into(),
            args: args.iter().map(|s| s.to_string()).collect(),
            name: None,
            timeout: default_timeout(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextExample {
    pub id: String,
    pub text: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerOutcome {
    pub name: String,
    pub version: String,
    /// As reported by the worker.
    pub train_seconds: f64,
    pub predictions: PredictionSet,
}

const MAX_LINE_ECHO: usize = 200;

fn protocol(line: &str, message: impl Into<String>) -> Error {
    let mut line = line.to_string();
    if line.len() > MAX_LINE_ECHO {
        let mut cut = MAX_LINE_ECHO;
        while !line.is_char_boundary(cut) {
            cut -= 1;
        }
        line.truncate(cut);
        line.push_str("...");
    }
    Error::Protocol {
        line,
        message: message.into(),
    }
}

struct Session {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
}

impl Session {
    fn start(cmd: &WorkerCommand) -> Result<Self> {
        let mut child = Command::new(&cmd.program)
            .args(&cmd.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::WorkerExit(format!("cannot start `{}`: {e}", cmd.program)))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Session {
            child,
            stdin,
            lines: rx,
            timeout: cmd.timeout,
        })
    }

    fn exit_error(&mut self, context: &str) -> Error {
        let status = match self.child.try_wait() {
            Ok(Some(s)) => s.to_string(),
            _ => {
                let _ = self.child.kill();
                match self.child.wait() {
                    Ok(s) => s.to_string(),
                    Err(e) => e.to_string(),
                }
            }
        };
        Error::WorkerExit(format!("{context}; {status}"))
    }

    fn send(&mut self, msg: &Value) -> Result<()> {
        let mut line = serde_json::to_string(msg)?;
        line.push('\n');
        let ok = match self.stdin.as_mut() {
            Some(stdin) => stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()).is_ok(),
            None => false,
        };
        if ok {
            Ok(())
        } else {
            Err(self.exit_error("worker closed its input"))
        }
    }

    fn recv(&mut self, op: &str) -> Result<(String, Value)> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => {
                let value = serde_json::from_str::<Value>(&line)
                    .map_err(|e| protocol(&line, format!("reply to `{op}` is not JSON: {e}")))?;
                if !value.is_object() {
                    return Err(protocol(&line, format!("reply to `{op}` is not a JSON object")));
                }
                Ok((line, value))
            }
            Ok(Err(e)) => Err(protocol("", format!("unreadable reply to `{op}`: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                let _ = self.child.kill();
                let _ = self.child.wait();
                Err(Error::WorkerTimeout(self.timeout))
            }
            Err(RecvTimeoutError::Disconnected) => Err(self.exit_error(&format!("no reply to `{op}`"))),
        }
    }

    fn request(&mut self, op: &str, msg: Value) -> Result<(String, Value)> {
        self.send(&msg)?;
        let (line, value) = self.recv(op)?;
        if op != "hello" && value.get("ok") != Some(&Value::Bool(true)) {
            let reason = value.get("error").map(|e| e.to_string()).unwrap_or_else(|| "missing \"ok\": true".into());
            return Err(protocol(&line, format!("`{op}` failed: {reason}")));
        }
        Ok((line, value))
    }

    fn finish(mut self) -> Result<()> {
        drop(self.stdin.take());
        let deadline = Instant::now() + self.timeout;
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) if status.success() => return Ok(()),
                Ok(Some(status)) => return Err(Error::WorkerExit(format!("worker exited with {status}"))),
                Ok(None) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(5)),
                Ok(None) => {
                    let _ = self.child.kill();
                    let _ = self.child.wait();
                    return Err(Error::WorkerTimeout(self.timeout));
                }
                Err(e) => return Err(Error::WorkerExit(e.to_string())),
            }
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

fn seconds_field(line: &str, v: &Value, key: &str) -> Result<f64> {
    match v.get(key).and_then(Value::as_f64) {
        Some(s) if s.is_finite() && s >= 0.0 => Ok(s),
        _ => Err(protocol(line, format!("missing or invalid `{key}`"))),
    }
}

/// hello, train on `labeled`, predict `unlabeled` (id, text) pairs.
pub fn worker_session(
    cmd: &WorkerCommand,
    labeled: &[TextExample],
    unlabeled: &[(String, String)],
) -> Result<WorkerOutcome> {
    let mut session = Session::start(cmd)?;

    let (line, hello) = session.request("hello", json!({"op": "hello"}))?;
    let reported = hello
        .get("name")
        .and_then(Value::as_str)
        .filter(|n| !n.is_empty())
        .ok_or_else(|| protocol(&line, "hello reply lacks a `name`"))?
        .to_string();
    let version = hello.get("version").and_then(Value::as_str).unwrap_or("").to_string();

    let records: Vec<Value> = labeled
        .iter()
        .map(|e| json!({"id": e.id, "text": e.text, "label": e.label}))
        .collect();
    let (line, reply) = session.request("train", json!({"op": "train", "records": records}))?;
    let train_seconds = seconds_field(&line, &reply, "train_seconds")?;

    let records: Vec<Value> = unlabeled.iter().map(|(id, text)| json!({"id": id, "text": text})).collect();
    let (line, reply) = session.request("predict", json!({"op": "predict", "records": records}))?;
    let predict_seconds = seconds_field(&line, &reply, "predict_seconds")?;
    let items = reply
        .get("predictions")
        .and_then(Value::as_array)
        .ok_or_else(|| protocol(&line, "missing `predictions` array"))?;
    let wanted: BTreeSet<&str> = unlabeled.iter().map(|(id, _)| id.as_str()).collect();
    let mut predictions = BTreeMap::new();
    for item in items {
        let id = item.get("id").and_then(Value::as_str);
        let label = item.get("label").and_then(Value::as_str).and_then(|l| l.parse::<Label>().ok());
        let (Some(id), Some(label)) = (id, label) else {
            return Err(protocol(&line, format!("bad prediction entry {item}")));
        };
        if !wanted.contains(id) {
            return Err(protocol(&line, format!("prediction for unrequested id {id}")));
        }
        if predictions.insert(id.to_string(), label).is_some() {
            return Err(protocol(&line, format!("duplicate prediction for {id}")));
        }
    }
    if predictions.len() != wanted.len() {
        return Err(protocol(
            &line,
            format!("{} predictions for {} requested ids", predictions.len(), wanted.len()),
        ));
    }
    session.finish()?;

    let name = cmd.name.clone().unwrap_or_else(|| reported.clone());
    Ok(WorkerOutcome {
        name: reported,
        version,
        train_seconds,
        predictions: PredictionSet {
            model: ModelKind::ExternalWorker(name),
            predictions,
            predict_seconds,
        },
    })
}

/// Behaviours of the built-in test worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StubMode {
    /// Always answers Yes.
    Yes,
    /// Answers the majority label of its training set (ties to Yes).
    Majority,
    /// Replies to `train` with a line that is not JSON.
    Malformed,
    /// Exits with status 3 on `train`.
    Crash,
    /// Never answers `train`.
    Hang,
}

impl std::str::FromStr for StubMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| Error::InvalidArgument(format!("unknown stub mode `{s}`")))
    }
}

/// Runs the stub worker protocol loop until `input` closes. `Crash` mode
/// returns an error so the caller can exit nonzero.
pub fn run_stub_worker(mode: StubMode, input: impl BufRead, mut output: impl Write) -> Result<()> {
    let mut majority = Label::Yes;
    let io = |e: std::io::Error| Error::io("<stdout>", e);
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<stdin>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let msg: Value = serde_json::from_str(&line).map_err(|e| protocol(&line, e.to_string()))?;
        let reply = match msg.get("op").and_then(Value::as_str) {
            Some("hello") => json!({"name": format!("stub-{}", serde_json::to_value(mode)?.as_str().unwrap_or("")), "version": "1"}),
            Some("train") => match mode {
                StubMode::Malformed => {
                    writeln!(output, "this is not json").map_err(io)?;
                    output.flush().map_err(io)?;
                    continue;
                }
                StubMode::Crash => return Err(Error::WorkerExit("stub worker crashed on train".into())),
                StubMode::Hang => {
                    std::thread::sleep(Duration::from_secs(3600));
                    continue;
                }
                StubMode::Yes | StubMode::Majority => {
                    let records = msg.get("records").and_then(Value::as_array).cloned().unwrap_or_default();
                    let yes = records.iter().filter(|r| r.get("label") == Some(&json!("yes"))).count();
                    majority = Label::from_bool(2 * yes >= records.len());
                    json!({"ok": true, "train_seconds": 0.001})
                }
            },
            Some("predict") => {
                let label = if mode == StubMode::Majority { majority } else { Label::Yes };
                let predictions: Vec<Value> = msg
                    .get("records")
                    .and_then(Value::as_array)
                    .map(|rs| rs.iter().map(|r| json!({"id": r.get("id"), "label": label})).collect())
                    .unwrap_or_default();
                json!({"ok": true, "predictions": predictions, "predict_seconds": 0.001})
            }
            _ => json!({"ok": false, "error": "unknown op"}),
        };
        writeln!(output, "{reply}").map_err(io)?;
        output.flush().map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(mode: StubMode, input: &str) -> (Result<()>, String) {
        let mut out = Vec::new();
        let r = run_stub_worker(mode, input.as_bytes(), &mut out);
        (r, String::from_utf8(out).unwrap())
    }

    #[test]
    fn stub_majority_replies() {
        let input = concat!(
            "{\"op\":\"hello\"}\n",
            "{\"op\":\"train\",\"records\":[{\"id\":\"a\",\"text\":\"x\",\"label\":\"no\"},{\"id\":\"b\",\"text\":\"y\",\"label\":\"no\"},{\"id\":\"c\",\"text\":\"z\",\"label\":\"yes\"}]}\n",
            "{\"op\":\"predict\",\"records\":[{\"id\":\"q\",\"text\":\"t\"}]}\n"
        );
        let (r, out) = run(StubMode::Majority, input);
        r.unwrap();
        let lines: Vec<Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines[0]["name"], "stub-majority");
        assert_eq!(lines[1]["ok"], true);
        assert_eq!(lines[2]["predictions"][0], json!({"id": "q", "label": "no"}));
    }

    #[test]
    fn stub_failure_modes() {
        let input = "{\"op\":\"hello\"}\n{\"op\":\"train\",\"records\":[]}\n";
        let (r, out) = run(StubMode::Malformed, input);
        r.unwrap();
        assert_eq!(out.lines().nth(1), Some("this is not json"));
        let (r, _) = run(StubMode::Crash, input);
        assert!(matches!(r, Err(Error::WorkerExit(_))));
    }

    #[test]
    fn long_protocol_lines_are_truncated() {
        let Error::Protocol { line, .. } = protocol(&"é".repeat(300), "x") else { panic!() };
        assert!(line.len() <= MAX_LINE_ECHO + 3);
        assert!(line.ends_with("..."));
    }

    #[test]
    fn missing_program_is_a_worker_error() {
        let cmd = WorkerCommand::new("/nonexistent/worker-binary", &[]);
        assert!(matches!(worker_session(&cmd, &[], &[]), Err(Error::WorkerExit(_))));
    }
}
