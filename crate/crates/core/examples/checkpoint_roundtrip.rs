//! Saves a trained character CNN to a checkpoint, reloads it and checks that
//! predictions survive the trip.
//!
//! cargo run --release --example checkpoint_roundtrip -- /tmp/cnn.ckpt

use std::path::PathBuf;

use authorprof::checkpoint::{sha256_file, Checkpoint, CheckpointMeta};
use authorprof::corpus::{split, Lang, SplitSpec};
use authorprof::models::{encode_dataset, Model, ModelConfig, Variant};
use authorprof::synthetic::{synthetic_dataset, SyntheticSpec};
use authorprof::text::{CharAlphabet, TweetEncoder};
use authorprof::train::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "cnn.ckpt".into()));
    let data = synthetic_dataset(&SyntheticSpec { users: 60, ..SyntheticSpec::default() });
    let (tr, va) = split(&data, &SplitSpec { train_fraction: 0.75, seed: 0, stratified: true })?;
    let alphabet = CharAlphabet::build(tr.users().iter().flat_map(|u| u.tweets.iter().map(|t| t.text())), 2);
    let enc = TweetEncoder { vocab: None, alphabet: Some(&alphabet), max_tokens: 0, max_chars: 60 };
    let (tr, va) = (encode_dataset(&tr, &enc, None), encode_dataset(&va, &enc, None));

    let cfg = ModelConfig { n_filters: 4, d_char: 8, max_chars: 60, off_grid: true, ..ModelConfig::new(Variant::Cnn, Lang::En) };
    let mut model = Model::new(cfg, None, Some(alphabet.len()))?;
    let out = train(&mut model, &tr, &va, &TrainConfig { lr: 0.01, epochs: 3, batch_size: 8, ..TrainConfig::default() }, |_| {})?;
    model.load_values(&out.best_user.values)?;

    let meta = CheckpointMeta {
        trial_id: "cnn-example".into(),
        selection: "best_user".into(),
        epoch: out.best_user.epoch,
        val_user_accuracy: Some(out.best_user.user_accuracy),
        val_tweet_accuracy: out.best_user.tweet_accuracy,
    };
    let ckpt = Checkpoint::from_model(&model, Some(&alphabet), None, None, None, meta)?;
    ckpt.save(&path)?;
    println!("saved {} ({} bytes, sha256 {})", path.display(), std::fs::metadata(&path)?.len(), sha256_file(&path)?);

    let loaded = Checkpoint::load(&path)?;
    let back: Model = loaded.build_model(None)?;
    let mut worst = 0.0f64;
    for u in &va {
        let a = model.predict_user(&u.tweets, None)?.probs;
        let b = back.predict_user(&u.tweets, None)?.probs;
        worst = worst.max((a[0] - b[0]).abs());
    }
    // Tensors are stored as f32, so probabilities agree to about 1e-6.
    println!("reloaded {} from epoch {}: largest probability change over {} users {worst:.2e}", loaded.config.variant, loaded.meta.epoch, va.len());
    Ok(())
}
