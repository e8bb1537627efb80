//! Word and character n-gram features, tf-idf weighting and LSA projection.
//!
//! Keys are namespaced by kind and order: `w2:good␟day` is the word bigram
//! "good day" (tokens joined by U+241F), `c3:abc` a character trigram.
//! Documents are a user's tweets joined by `\n`; n-grams are taken inside each
//! line only, so no n-gram spans two tweets.

mod lsa;
mod sparse;
mod tfidf;

pub use lsa::{fit_lsa, fit_lsa_sparse, project_lsa, LsaFit, LsaProjector, LSA_OVERSAMPLING, LSA_POWER_ITERATIONS};
pub use sparse::SparseMatrix;
pub use tfidf::{fit_tfidf, read_sidecar, transform_tfidf, transform_tfidf_sparse, write_sidecar, TfidfModel};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Lang, UserRecord};
use crate::text::tokenize;

/// Joins the tokens of a word n-gram key.
pub const WORD_JOINER: char = '\u{241F}';
pub const DEFAULT_LSA_K: usize = 300;

#[derive(Debug, Error)]
pub enum FeaturesError {
    #[error("need at least {needed} documents, got {got}")]
    TooFewDocuments { needed: usize, got: usize },
    #[error("no n-gram reaches the minimum total frequency {0}")]
    NoFeatures(usize),
    #[error("input matrix contains a non-finite value")]
    NonFinite,
    #[error("expected a vector of length {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("invalid n-gram spec: {0}")]
    BadSpec(String),
    #[error("sidecar line {line}: {message}")]
    Sidecar { line: usize, message: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Which n-grams to extract and how aggressively to prune them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramSpec {
    pub word_ns: BTreeSet<usize>,
    pub char_ns: BTreeSet<usize>,
    /// Keys whose total count over the training corpus is below this are dropped.
    pub min_total_freq: usize,
    /// Optional cap on the vocabulary, keeping the most frequent keys.
    #[serde(default)]
    pub max_features: Option<usize>,
}

impl NgramSpec {
    /// Char 3/4/5-grams everywhere; word 1-3-grams for English, 1-2 otherwise.
    pub fn for_lang(lang: Lang) -> Self {
        let word_ns = match lang {
            Lang::En => [1, 2, 3].into(),
            Lang::Es | Lang::Ar => [1, 2].into(),
        };
        NgramSpec { word_ns, char_ns: [3, 4, 5].into(), min_total_freq: 2, max_features: None }
    }

    pub fn validate(&self) -> Result<(), FeaturesError> {
        if self.word_ns.is_empty() && self.char_ns.is_empty() {
            return Err(FeaturesError::BadSpec("no n-gram orders given".into()));
        }
        if self.word_ns.contains(&0) || self.char_ns.contains(&0) {
            return Err(FeaturesError::BadSpec("n-gram order 0".into()));
        }
        if self.min_total_freq == 0 {
            return Err(FeaturesError::BadSpec("min_total_freq must be at least 1".into()));
        }
        if self.max_features == Some(0) {
            return Err(FeaturesError::BadSpec("max_features must be positive".into()));
        }
        Ok(())
    }
}

/// One author's tweets joined by newlines.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserDoc(String);

impl UserDoc {
    pub fn new(text: impl Into<String>) -> Self {
        UserDoc(text.into())
    }

    pub fn from_user(user: &UserRecord) -> Self {
        UserDoc(user.document())
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

/// Counts every word and character n-gram of `doc` selected by `spec`.
pub fn extract_ngrams(doc: &UserDoc, spec: &NgramSpec) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    let lower = doc.0.to_lowercase();
    for line in lower.split('\n') {
        if !spec.word_ns.is_empty() {
            let tokens = tokenize(line);
            for &n in &spec.word_ns {
                for window in tokens.windows(n) {
                    let mut key = format!("w{n}:");
                    for (i, t) in window.iter().enumerate() {
                        if i > 0 {
                            key.push(WORD_JOINER);
                        }
                        key.push_str(t);
                    }
                    *counts.entry(key).or_insert(0) += 1;
                }
            }
        }
        if !spec.char_ns.is_empty() {
            let chars: Vec<char> = line.chars().collect();
            for &n in &spec.char_ns {
                for window in chars.windows(n) {
                    let mut key = format!("c{n}:");
                    key.extend(window);
                    *counts.entry(key).or_insert(0) += 1;
                }
            }
        }
    }
    counts
}
