//! Trains the attention GRU model on a synthetic corpus and scores it on
//! held-out users.
//!
//! cargo run --release --example train_rnnwa_synthetic

use authorprof::corpus::{split, Lang, SplitSpec};
use authorprof::eval::evaluate;
use authorprof::models::{encode_dataset, Embeddings, Model, ModelConfig, Variant};
use authorprof::synthetic::{synthetic_dataset, synthetic_embeddings, SyntheticSpec};
use authorprof::text::TweetEncoder;
use authorprof::train::{metrics_line, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticSpec { users: 160, noise: 0.15, ..SyntheticSpec::default() };
    let data = synthetic_dataset(&spec);
    let (rest, test) = split(&data, &SplitSpec { train_fraction: 0.8, seed: 0, stratified: true })?;
    let (tr, va) = split(&rest, &SplitSpec { train_fraction: 0.8, seed: 1, stratified: true })?;

    let (vocab, table) = synthetic_embeddings(spec.filler_words, 16, 0);
    let enc = TweetEncoder { vocab: Some(&vocab), alphabet: None, max_tokens: 10, max_chars: 0 };
    let (tr, va, test) = (encode_dataset(&tr, &enc, None), encode_dataset(&va, &enc, None), encode_dataset(&test, &enc, None));

    let cfg = ModelConfig { d_cells: 8, embed_dim: 16, max_tokens: 10, off_grid: true, ..ModelConfig::new(Variant::Rnnwa, Lang::En) };
    let mut model = Model::new(cfg, Some(Embeddings::frozen(table.matrix)), None)?;
    let tc = TrainConfig { lr: 0.01, epochs: 10, batch_size: 8, ..TrainConfig::default() };

    println!("trial\tepoch\tloss\ttweet\tuser");
    let outcome = train(&mut model, &tr, &va, &tc, |m| println!("{}", metrics_line("rnnwa", m)))?;
    let best = &outcome.best_user;
    println!("\nbest validation user accuracy {:.3} at epoch {}", best.user_accuracy, best.epoch);

    model.load_values(&best.values)?;
    let report = evaluate(&model, &test, "rnnwa")?;
    println!("test: {} users, user accuracy {:.3}", report.users, report.user_accuracy);

    // Tweet weights show which tweets the model leaned on.
    let p = &report.predictions[0];
    let weights: Vec<String> = p.tweet_weights.iter().flatten().map(|w| format!("{w:.2}")).collect();
    println!("{}: predicted {:?}, tweet weights [{}]", p.user_id, p.predicted, weights.join(", "));
    Ok(())
}
