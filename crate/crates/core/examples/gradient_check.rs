//! Compares the tape's gradients with central finite differences for every
//! model variant on a tiny two-user batch.
//!
//! cargo run --example gradient_check

use authorprof::autodiff::check_gradients;
use authorprof::corpus::Lang;
use authorprof::models::{encode_dataset, Embeddings, Model, ModelConfig, ModelError, Variant};
use authorprof::synthetic::{synthetic_dataset, synthetic_embeddings, SyntheticSpec};
use authorprof::text::{CharAlphabet, TweetEncoder};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synthetic_dataset(&SyntheticSpec { users: 2, tweets_per_user: 3, tokens_per_tweet: 4, filler_words: 8, ..SyntheticSpec::default() });
    let (vocab, table) = synthetic_embeddings(8, 4, 1);
    let alphabet = CharAlphabet::build(data.users().iter().flat_map(|u| u.tweets.iter().map(|t| t.text())), 1);
    let enc = TweetEncoder { vocab: Some(&vocab), alphabet: Some(&alphabet), max_tokens: 6, max_chars: 24 };
    let users = encode_dataset(&data, &enc, None);
    let lsa = [0.2, -0.4];

    println!("{:<12} {:>8} {:>10} {:>12}", "variant", "entries", "failures", "max rel err");
    for variant in Variant::ALL {
        let cfg = ModelConfig {
            d_cells: 3,
            n_filters: 2,
            d_char: 3,
            embed_dim: 4,
            max_tokens: 6,
            max_chars: 24,
            lsa_k: lsa.len(),
            off_grid: true,
            ..ModelConfig::new(variant, Lang::En)
        };
        let model = Model::new(cfg, Some(Embeddings::frozen(table.matrix.clone())), Some(alphabet.len()))?;
        let report = check_gradients(model.params(), 1e-5, 1e-4, |t| {
            let mut losses = Vec::new();
            for u in &users {
                let label = u.label.map_or(0, |g| g.class());
                losses.push(model.user_loss(t, &u.tweets, Some(&lsa), label)?.0);
            }
            let all = t.concat(&losses, 0)?;
            Ok::<_, ModelError>(t.reduce_sum(all, None)?)
        })?;
        println!("{:<12} {:>8} {:>10} {:>12.2e}", variant.to_string(), report.checked, report.failures, report.max_rel_error);
    }
    Ok(())
}
