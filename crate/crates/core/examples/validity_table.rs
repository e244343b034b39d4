//! Per-event validity percentages from final labels.
//!
//!     cargo run --example validity_table

use narrative_validity::fixtures::reference_tally_corpus;
use narrative_validity::report::build_validity_table;
use narrative_validity::stats::TestConfig;

fn main() -> narrative_validity::Result<()> {
    let (corpus, labels) = reference_tally_corpus();
    let table = build_validity_table(&labels, &corpus, None, &TestConfig::default())?;
    println!("{:<8} {:>5} {:>5} {:>7}", "event", "yes", "no", "% yes");
    for r in table.rows.iter().chain([&table.total]) {
        println!("{:<8} {:>5} {:>5} {:>7.2}", r.event, r.yes, r.no, r.percent_yes);
    }
    println!("\n{}", table.ci.notes.join("\n"));
    Ok(())
}
