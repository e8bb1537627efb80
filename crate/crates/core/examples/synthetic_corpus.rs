//! Writes a synthetic labeled corpus and matching word vectors to disk, ready
//! for the `authorprof` command line.
//!
//! cargo run --example synthetic_corpus -- /tmp/synth

use std::fs;
use std::path::PathBuf;

use authorprof::corpus::{split, write_jsonl, SplitSpec};
use authorprof::synthetic::{synthetic_dataset, synthetic_embeddings_text, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synthetic".into()));
    fs::create_dir_all(&dir)?;
    let spec = SyntheticSpec { users: 160, noise: 0.1, ..SyntheticSpec::default() };
    let data = synthetic_dataset(&spec);
    let (train, test) = split(&data, &SplitSpec { train_fraction: 0.75, seed: 1, stratified: true })?;
    write_jsonl(&train, &dir.join("train.jsonl"))?;
    write_jsonl(&test, &dir.join("test.jsonl"))?;
    fs::write(dir.join("vectors.txt"), synthetic_embeddings_text(spec.filler_words, 16, 7))?;
    println!("wrote {} training and {} test users to {}", train.len(), test.len(), dir.display());
    Ok(())
}
