//! Drive an external worker over the line-delimited JSON protocol.
//!
//! Uses the bundled stub worker; build the binary first:
//!
//!     cargo build --bin narval && cargo run --example external_worker

use narrative_validity::models::{worker_session, TextExample, WorkerCommand};
use narrative_validity::Label;

fn main() -> narrative_validity::Result<()> {
    let exe = std::env::current_exe().expect("example path");
    // target/<profile>/examples/external_worker -> target/<profile>/narval
    let narval = exe.parent().and_then(|p| p.parent()).map(|p| p.join("narval")).expect("target dir");
    let cmd = WorkerCommand::new(narval.to_string_lossy(), &["stub-worker", "--mode", "majority"]);
    let labeled: Vec<TextExample> = (0..10)
        .map(|i| TextExample { id: format!("t{i}"), text: format!("story {i}"), label: Label::from_bool(i < 7) })
        .collect();
    let unlabeled: Vec<(String, String)> = (0..3).map(|i| (format!("u{i}"), format!("new story {i}"))).collect();
    let out = worker_session(&cmd, &labeled, &unlabeled)?;
    println!("worker {} v{}: {:?}", out.name, out.version, out.predictions.predictions);

    let bad = WorkerCommand::new(narval.to_string_lossy(), &["stub-worker", "--mode", "malformed"]);
    match worker_session(&bad, &labeled, &unlabeled) {
        Err(e) => println!("malformed worker: {} ({e})", e.kind()),
        Ok(_) => println!("unexpected success"),
    }
    Ok(())
}
