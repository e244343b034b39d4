//! Fit a TF-IDF vocabulary and show the heaviest terms of a document.
//!
//!     cargo run --example tfidf_features

use narrative_validity::features::{fit_tfidf, transform};

fn main() -> narrative_validity::Result<()> {
    let docs = [
        "My sister Ana was born on a cold March morning at the county hospital.",
        "Our grandfather passed away peacefully at home, surrounded by family.",
        "After three interviews, my friend was hired as a nurse at the clinic.",
        "The plant manager fired my cousin for missing two shifts.",
    ];
    let vocab = fit_tfidf(&docs)?;
    println!("{} tokens over {} documents", vocab.len(), vocab.corpus_size());
    let v = transform(docs[2], &vocab)?;
    let mut terms: Vec<(&str, f64)> = v.entries.iter().map(|&(i, w)| (vocab.token(i).unwrap(), w)).collect();
    terms.sort_by(|a, b| b.1.total_cmp(&a.1));
    for (t, w) in terms.iter().take(6) {
        println!("{t:>12}  {w:.3}");
    }
    println!("norm {:.3}", v.norm());
    Ok(())
}
