//! Trains the GRU model alone, then the joint model that also sees the LSA
//! n-gram vector, warm-started from the first.
//!
//! cargo run --release --example ngram_joint_model

use authorprof::corpus::{split, Lang, SplitSpec};
use authorprof::eval::evaluate;
use authorprof::features::{LsaProjector, NgramSpec, UserDoc};
use authorprof::models::{encode_dataset, Embeddings, Model, ModelConfig, Variant};
use authorprof::synthetic::{synthetic_dataset, synthetic_embeddings, SyntheticSpec};
use authorprof::text::TweetEncoder;
use authorprof::train::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticSpec { users: 120, noise: 0.25, ..SyntheticSpec::default() };
    let data = synthetic_dataset(&spec);
    let (tr_set, va_set) = split(&data, &SplitSpec { train_fraction: 0.75, seed: 0, stratified: true })?;

    let docs: Vec<UserDoc> = tr_set.users().iter().map(UserDoc::from_user).collect();
    let projector = LsaProjector::fit(&docs, &NgramSpec::for_lang(Lang::En), 20, 0)?;
    println!("lsa: {} features reduced to {} dimensions", projector.tfidf.num_features(), projector.k());

    let (vocab, table) = synthetic_embeddings(spec.filler_words, 16, 0);
    let enc = TweetEncoder { vocab: Some(&vocab), alphabet: None, max_tokens: 10, max_chars: 0 };
    let tr = encode_dataset(&tr_set, &enc, Some(&projector));
    let va = encode_dataset(&va_set, &enc, Some(&projector));
    let tc = TrainConfig { lr: 0.01, epochs: 8, batch_size: 8, ..TrainConfig::default() };

    let config = |variant| ModelConfig {
        d_cells: 8,
        embed_dim: 16,
        max_tokens: 10,
        lsa_k: projector.k(),
        off_grid: true,
        ..ModelConfig::new(variant, Lang::En)
    };
    let mut plain = Model::new(config(Variant::Rnnwa), Some(Embeddings::frozen(table.matrix.clone())), None)?;
    let out = train(&mut plain, &tr, &va, &tc, |_| {})?;
    plain.load_values(&out.best_user.values)?;
    println!("rnnwa        validation user accuracy {:.3}", evaluate(&plain, &va, "")?.user_accuracy);

    let mut joint = Model::new(config(Variant::RnnwaNgram), Some(Embeddings::frozen(table.matrix)), None)?;
    let copied = joint.init_from(&plain)?;
    println!("warm start copied {copied} of {} parameters", joint.params().len());
    let out = train(&mut joint, &tr, &va, &tc, |_| {})?;
    joint.load_values(&out.best_user.values)?;
    println!("rnnwa_ngram  validation user accuracy {:.3}", evaluate(&joint, &va, "")?.user_accuracy);
    Ok(())
}
