//! Unigram TF-IDF features.
//!
//! `weight(t, d) = tf(t, d) * (ln((1 + N) / (1 + df(t))) + 1)`, then each
//! document vector is scaled to unit L2 norm.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_MAX_VOCABULARY: usize = 50_000;

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    /// Strictly increasing indices, each below `dimension`.
    pub entries: Vec<(u32, f64)>,
    pub dimension: usize,
}

impl SparseVector {
    pub fn new(mut entries: Vec<(u32, f64)>, dimension: usize) -> Result<Self> {
        entries.sort_by_key(|&(i, _)| i);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Validation(format!("duplicate index {}", w[0].0)));
            }
        }
        if let Some(&(i, _)) = entries.iter().find(|&&(i, _)| i as usize >= dimension) {
            return Err(Error::Validation(format!("index {i} >= dimension {dimension}")));
        }
        if entries.iter().any(|(_, w)| !w.is_finite()) {
            return Err(Error::Validation("non-finite weight".into()));
        }
        Ok(SparseVector { entries, dimension })
    }

    pub fn empty(dimension: usize) -> Self {
        SparseVector {
            entries: Vec::new(),
            dimension,
        }
    }

    pub fn get(&self, index: u32) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, w)| w * dense[i as usize]).sum()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }
}

/// Token index and document frequencies from a fitted corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    index: HashMap<String, u32>,
    tokens: Vec<String>,
    doc_freq: Vec<usize>,
    corpus_size: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyEntry {
    token: String,
    index: u32,
    df: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    corpus_size: usize,
    entries: Vec<VocabularyEntry>,
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        VocabularyFile {
            corpus_size: self.corpus_size,
            entries: self
                .tokens
                .iter()
                .zip(&self.doc_freq)
                .enumerate()
                .map(|(i, (t, &df))| VocabularyEntry {
                    token: t.clone(),
                    index: i as u32,
                    df,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut file = VocabularyFile::deserialize(d)?;
        file.entries.sort_by_key(|e| e.index);
        let mut v = Vocabulary {
            index: HashMap::new(),
            tokens: Vec::with_capacity(file.entries.len()),
            doc_freq: Vec::with_capacity(file.entries.len()),
            corpus_size: file.corpus_size,
        };
        for (expected, e) in file.entries.into_iter().enumerate() {
            if e.index as usize != expected {
                return Err(D::Error::custom("vocabulary indices must be dense from 0"));
            }
            if e.df > file.corpus_size {
                return Err(D::Error::custom(format!("df of `{}` exceeds corpus size", e.token)));
            }
            if v.index.insert(e.token.clone(), e.index).is_some() {
                return Err(D::Error::custom(format!("duplicate token `{}`", e.token)));
            }
            v.tokens.push(e.token);
            v.doc_freq.push(e.df);
        }
        Ok(v)
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn corpus_size(&self) -> usize {
        self.corpus_size
    }

    pub fn index_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: u32) -> Option<&str> {
        self.tokens.get(index as usize).map(String::as_str)
    }

    pub fn doc_freq(&self, token: &str) -> Option<usize> {
        self.index_of(token).map(|i| self.doc_freq[i as usize])
    }

    /// Smoothed inverse document frequency of the token at `index`.
    pub fn idf(&self, index: u32) -> f64 {
        let n = self.corpus_size as f64;
        let df = self.doc_freq[index as usize] as f64;
        ((1.0 + n) / (1.0 + df)).ln() + 1.0
    }
}

/// Fits a vocabulary of at most `max_tokens` tokens, keeping the highest
/// document frequencies (ties broken by token order). Indices follow
/// lexicographic token order.
pub fn fit_tfidf_capped<S: AsRef<str>>(documents: &[S], max_tokens: usize) -> Result<Vocabulary> {
    if documents.is_empty() {
        return Err(Error::InvalidArgument("cannot fit TF-IDF on zero documents".into()));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in documents {
        let mut tokens = tokenize(doc.as_ref());
        tokens.sort_unstable();
        tokens.dedup();
        for t in tokens {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = df.into_iter().collect();
    if ranked.len() > max_tokens {
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_tokens);
        ranked.sort_by(|a, b| a.0.cmp(&b.0));
    }
    let mut v = Vocabulary {
        index: HashMap::with_capacity(ranked.len()),
        tokens: Vec::with_capacity(ranked.len()),
        doc_freq: Vec::with_capacity(ranked.len()),
        corpus_size: documents.len(),
    };
    for (i, (token, count)) in ranked.into_iter().enumerate() {
        v.index.insert(token.clone(), i as u32);
        v.tokens.push(token);
        v.doc_freq.push(count);
    }
    Ok(v)
}

pub fn fit_tfidf<S: AsRef<str>>(documents: &[S]) -> Result<Vocabulary> {
    fit_tfidf_capped(documents, DEFAULT_MAX_VOCABULARY)
}

/// TF-IDF vector for one document. Tokens outside the vocabulary are
/// dropped; a document with no known tokens maps to the zero vector.
pub fn transform(doc: &str, vocab: &Vocabulary) -> Result<SparseVector> {
    if vocab.is_empty() {
        return Err(Error::InvalidArgument("transform with an empty vocabulary".into()));
    }
    let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
    for t in tokenize(doc) {
        if let Some(i) = vocab.index_of(&t) {
            *tf.entry(i).or_default() += 1.0;
        }
    }
    let mut entries: Vec<(u32, f64)> = tf.into_iter().map(|(i, c)| (i, c * vocab.idf(i))).collect();
    let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, w) in &mut entries {
            *w /= norm;
        }
    }
    Ok(SparseVector {
        entries,
        dimension: vocab.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn tokenizer_cases() {
        assert_eq!(tokenize("The baby was born!"), ["the", "baby", "was", "born"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Fired\u{2014}again."), ["fired", "again"]);
        assert_eq!(tokenize("ÉCOLE naïve"), ["école", "naïve"]);
    }

    #[test]
    fn single_document_idf_is_one() {
        let v = fit_tfidf(&["hello"]).unwrap();
        assert_relative_eq!(v.idf(v.index_of("hello").unwrap()), 1.0);
        let x = transform("hello", &v).unwrap();
        assert_eq!(x.entries, vec![(0, 1.0)]);
    }

    #[test]
    fn idf_for_rare_token() {
        let v = fit_tfidf(&["a b", "a", "a"]).unwrap();
        // ln(4/2) + 1
        assert_relative_eq!(v.idf(v.index_of("b").unwrap()), 1.693147, epsilon = 1e-6);
        assert_relative_eq!(v.idf(v.index_of("a").unwrap()), 1.0);
    }

    #[test]
    fn weights_follow_formula() {
        let docs = ["x x y", "y z", "z"];
        let v = fit_tfidf(&docs).unwrap();
        let x = transform(docs[0], &v).unwrap();
        let idf = |df: f64| ((1.0 + 3.0) / (1.0 + df)).ln() + 1.0;
        let (wx, wy) = (2.0 * idf(1.0), idf(2.0));
        let n = (wx * wx + wy * wy).sqrt();
        assert_relative_eq!(x.get(v.index_of("x").unwrap()), wx / n, epsilon = 1e-12);
        assert_relative_eq!(x.get(v.index_of("y").unwrap()), wy / n, epsilon = 1e-12);
        assert_eq!(x.get(v.index_of("z").unwrap()), 0.0);
    }

    #[test]
    fn unseen_tokens_are_dropped() {
        let v = fit_tfidf(&["alpha beta"]).unwrap();
        let x = transform("gamma", &v).unwrap();
        assert!(x.entries.is_empty());
        assert_eq!(x.dimension, 2);
    }

    #[test]
    fn empty_vocabulary_is_an_error() {
        let v = fit_tfidf(&["!!!"]).unwrap();
        assert!(v.is_empty());
        assert!(transform("a", &v).is_err());
        assert!(fit_tfidf::<&str>(&[]).is_err());
    }

    #[test]
    fn cap_keeps_most_frequent_then_lexicographic() {
        let v = fit_tfidf_capped(&["a b c", "b c", "c d"], 2).unwrap();
        assert_eq!(v.len(), 2);
        assert!(v.index_of("c").is_some());
        assert!(v.index_of("b").is_some());
        let v = fit_tfidf_capped(&["q p", "r"], 2).unwrap();
        assert_eq!((v.token(0), v.token(1)), (Some("p"), Some("q")));
    }

    #[test]
    fn vocabulary_json_round_trip() {
        let v = fit_tfidf(&["one two", "two three"]).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        assert!(json.contains("\"df\""));
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        let bad = r#"{"corpus_size":1,"entries":[{"token":"a","index":0,"df":2}]}"#;
        assert!(serde_json::from_str::<Vocabulary>(bad).is_err());
    }

    proptest! {
        #[test]
        fn fitted_documents_have_unit_norm(docs in prop::collection::vec("[a-e ]{1,20}", 1..8)) {
            let v = fit_tfidf(&docs).unwrap();
            prop_assume!(!v.is_empty());
            for d in &docs {
                let x = transform(d, &v).unwrap();
                prop_assert_eq!(x.dimension, v.len());
                prop_assert!(x.entries.iter().all(|&(_, w)| w >= 0.0));
                prop_assert!(x.entries.windows(2).all(|w| w[0].0 < w[1].0));
                if !x.entries.is_empty() {
                    prop_assert!((x.norm() - 1.0).abs() < 1e-12);
                }
                prop_assert_eq!(&x, &transform(d, &v).unwrap());
            }
        }
    }
}
