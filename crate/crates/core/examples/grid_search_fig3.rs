//! Runs a small hyperparameter grid on a noisy corpus and compares the users
//! scored by the checkpoints picked for tweet-level accuracy with those picked
//! for user-level accuracy.
//!
//! cargo run --release --example grid_search_fig3

use authorprof::corpus::{split, Lang, SplitSpec};
use authorprof::eval::{scatter_experiment, write_scatter_tsv, TrialScores};
use authorprof::models::{encode_dataset, Embeddings, Model, ModelConfig, Variant};
use authorprof::synthetic::{synthetic_dataset, synthetic_embeddings, SyntheticSpec};
use authorprof::text::TweetEncoder;
use authorprof::train::{build_grid, grid_search, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticSpec { users: 100, tweets_per_user: 8, marker_rate: 1.0, noise: 0.2, ..SyntheticSpec::default() };
    let data = synthetic_dataset(&spec);
    let (tr, va) = split(&data, &SplitSpec { train_fraction: 0.7, seed: 0, stratified: true })?;
    let (vocab, table) = synthetic_embeddings(spec.filler_words, 8, 0);
    let enc = TweetEncoder { vocab: Some(&vocab), alphabet: None, max_tokens: 8, max_chars: 0 };
    let (tr, va) = (encode_dataset(&tr, &enc, None), encode_dataset(&va, &enc, None));

    let base = ModelConfig { embed_dim: 8, max_tokens: 8, off_grid: true, ..ModelConfig::new(Variant::Rnn, Lang::En) };
    let tc = TrainConfig { epochs: 8, batch_size: 8, ..TrainConfig::default() };
    let trials = build_grid(&base, &tc, &[3, 5, 8], &[0.003, 0.01, 0.03]);
    let results = grid_search(&trials, |t| {
        let mut model = Model::new(t.model.clone(), Some(Embeddings::frozen(table.matrix.clone())), None).expect("valid grid point");
        train(&mut model, &tr, &va, &t.train, |_| {})
    })?;

    let mut scores = Vec::new();
    for t in &trials {
        let Some(r) = results.iter().find(|r| r.trial.id == t.id) else { continue };
        let bt = r.outcome.best_tweet.as_ref().expect("averaging models keep a tweet-level snapshot");
        let bu = &r.outcome.best_user;
        scores.push(TrialScores {
            trial_id: t.id.clone(),
            config_label: format!("{} lr={}", t.model.size_label(), t.train.lr),
            best_tweet: (bt.tweet_accuracy.unwrap_or(0.0), bt.user_accuracy),
            best_user: (bu.tweet_accuracy.unwrap_or(0.0), bu.user_accuracy),
        });
    }
    let report = scatter_experiment(&scores)?;
    write_scatter_tsv(&report, &mut std::io::stdout())?;
    println!("\nmean user accuracy of the top 3 by user:  {:.4}", report.mean_user_best_user);
    println!("mean user accuracy of the top 3 by tweet: {:.4}", report.mean_user_best_tweet);
    println!("gap {:+.4}", report.gap);
    Ok(())
}
