//! Small labeled corpora with a planted signal, for tests and examples.
//!
//! Every tweet is filler words plus, with probability `marker_rate`, one
//! marker token of its author's class. With probability `noise` the marker
//! is swapped for the other class's marker, so single tweets are unreliable
//! while the majority over a user's tweets is not.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Dataset, Gender, Lang, Tweet, UserRecord};
use crate::text::{EmbeddingTable, Vocabulary};

pub const MARKERS: [&str; 2] = ["sheep", "goat"];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub users: usize,
    pub tweets_per_user: usize,
    pub tokens_per_tweet: usize,
    pub filler_words: usize,
    pub marker_rate: f64,
    pub noise: f64,
    pub lang: Lang,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            users: 40,
            tweets_per_user: 6,
            tokens_per_tweet: 6,
            filler_words: 30,
            marker_rate: 0.8,
            noise: 0.2,
            lang: Lang::En,
            seed: 0,
        }
    }
}

pub fn filler_word(i: usize) -> String {
    format!("w{i}")
}

/// Users alternate between the two classes, so the corpus is balanced.
pub fn synthetic_dataset(spec: &SyntheticSpec) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let users = (0..spec.users)
        .map(|u| {
            let label = Gender::from_class(u % 2);
            let tweets = (0..spec.tweets_per_user.max(1))
                .map(|_| {
                    let mut words: Vec<String> = (0..spec.tokens_per_tweet)
                        .map(|_| filler_word(rng.random_range(0..spec.filler_words.max(1))))
                        .collect();
                    if rng.random_bool(spec.marker_rate) {
                        let class = if rng.random_bool(spec.noise) { 1 - label.class() } else { label.class() };
                        let at = rng.random_range(0..=words.len());
                        words.insert(at, MARKERS[class].to_string());
                    }
                    if words.is_empty() {
                        words.push(filler_word(0));
                    }
                    Tweet::new(words.join(" ")).expect("generated tweets are non-empty")
                })
                .collect();
            UserRecord { user_id: format!("user{u:04}"), lang: spec.lang, tweets, label: Some(label) }
        })
        .collect();
    Dataset::new(spec.lang, users).expect("generated users are valid")
}

/// Random `dim`-dimensional vectors for the markers and filler words,
/// in the text format read by [`crate::text::read_embeddings`].
pub fn synthetic_embeddings_text(filler_words: usize, dim: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.5).expect("valid normal");
    let mut out = String::new();
    let tokens = MARKERS.iter().map(|m| m.to_string()).chain((0..filler_words).map(filler_word));
    for t in tokens {
        out.push_str(&t);
        for _ in 0..dim {
            let v: f64 = normal.sample(&mut rng);
            out.push_str(&format!(" {v:.5}"));
        }
        out.push('\n');
    }
    out
}

/// The vocabulary and table for [`synthetic_embeddings_text`].
pub fn synthetic_embeddings(filler_words: usize, dim: usize, seed: u64) -> (Vocabulary, EmbeddingTable) {
    let text = synthetic_embeddings_text(filler_words, dim, seed);
    crate::text::read_embeddings(text.as_bytes(), dim, None).expect("generated embeddings parse")
}
