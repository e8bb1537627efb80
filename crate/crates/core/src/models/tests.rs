use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::check_gradients;

fn toy_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        d_cells: 3,
        n_filters: 2,
        d_char: 3,
        embed_dim: 4,
        max_tokens: 5,
        max_chars: 12,
        lsa_k: 3,
        seed: 7,
        off_grid: true,
        ..ModelConfig::new(variant, Lang::En)
    }
}

fn toy_table() -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    Tensor::matrix(10, 4, (0..40).map(|_| r.random_range(-1.0..1.0)).collect())
}

fn toy_model(variant: Variant) -> Model {
    Model::new(toy_config(variant), Some(Embeddings::frozen(toy_table())), Some(8)).unwrap()
}

fn tweet(words: &[usize], chars: &[usize], cfg: &ModelConfig) -> EncodedTweet {
    let pad = |ids: &[usize], max: usize| {
        let mut v: Vec<usize> = ids.iter().copied().take(max).collect();
        let mut m = vec![1u8; v.len()];
        v.resize(max, PAD);
        m.resize(max, 0);
        (v, m)
    };
    let (word_ids, word_mask) = pad(words, cfg.max_tokens);
    let (char_ids, char_mask) = pad(chars, cfg.max_chars);
    EncodedTweet { word_ids, word_mask, char_ids, char_mask }
}

fn toy_user(cfg: &ModelConfig, seed: u64) -> Vec<EncodedTweet> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..3)
        .map(|_| {
            let nw = r.random_range(1..=5);
            let nc = r.random_range(1..=12);
            let w: Vec<usize> = (0..nw).map(|_| r.random_range(1..10)).collect();
            let c: Vec<usize> = (0..nc).map(|_| r.random_range(1..8)).collect();
            tweet(&w, &c, cfg)
        })
        .collect()
}

/// Copies parameters by name after the model prefix, output layer included.
fn copy_matching(dst: &mut Model, src: &Model) {
    let ids: Vec<(ParamId, String)> = dst.params().iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        let rest = name.split_once('.').unwrap().1;
        if let Some((_, p)) = src.params().iter().find(|(_, p)| p.name.split_once('.').unwrap().1 == rest) {
            if p.value.shape() == dst.params().value(id).shape() {
                dst.params_mut().set_value(id, p.value.clone()).unwrap();
            }
        }
    }
}

#[test]
fn config_grid_and_defaults() {
    assert_eq!(ModelConfig::new(Variant::Rnnwa, Lang::En).d_cells, 150);
    assert_eq!(ModelConfig::new(Variant::Rnnwa, Lang::Es).d_cells, 100);
    assert_eq!(ModelConfig::new(Variant::Cnnwa, Lang::Ar).n_filters, 100);
    assert!(ModelConfig::new(Variant::Rnnwa, Lang::En).validate().is_ok());
    let mut c = ModelConfig::new(Variant::Rnnwa, Lang::En);
    c.d_cells = 60;
    assert!(c.validate().is_err());
    c.off_grid = true;
    assert!(c.validate().is_ok());
    c.max_chars = 8;
    assert!(c.validate().is_err());
    assert_eq!(ModelConfig::new(Variant::Rnnwa, Lang::En).repr_dim(), 300);
    assert_eq!(ModelConfig::new(Variant::Cnnwa, Lang::En).repr_dim(), 300);
}

#[test]
fn variant_names() {
    for v in Variant::ALL {
        assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
    }
    assert_eq!("rnnwa-ngram".parse::<Variant>().unwrap(), Variant::RnnwaNgram);
    assert!("lstm".parse::<Variant>().is_err());
}

#[test]
fn every_variant_gives_probabilities() {
    for v in Variant::ALL {
        let m = toy_model(v);
        let mut tweets = toy_user(m.config(), 3);
        tweets.push(tweet(&[], &[], m.config()));
        let lsa = [0.1, -0.2, 0.3];
        let out = m.predict_user(&tweets, Some(&lsa)).unwrap();
        assert!((out.probs[0] + out.probs[1] - 1.0).abs() < 1e-12, "{v}");
        assert!(out.probs.iter().all(|p| p.is_finite() && *p > 0.0));
        match v.tweet_attention() {
            true => {
                let w = out.tweet_weights.unwrap();
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert_eq!(w[3], 0.0);
            }
            false => {
                let tp = out.tweet_probs.unwrap();
                assert!(tp[3].is_none());
                let mean0 = tp[..3].iter().map(|p| p.unwrap()[0]).sum::<f64>() / 3.0;
                assert!((mean0 - out.probs[0]).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn empty_users_and_bad_lsa_are_rejected() {
    let m = toy_model(Variant::Rnnwa);
    let empty = vec![tweet(&[], &[], m.config()); 2];
    assert!(matches!(m.predict_user(&empty, None), Err(ModelError::NoTweets)));
    let ng = toy_model(Variant::RnnwaNgram);
    let tweets = toy_user(ng.config(), 1);
    assert!(matches!(ng.predict_user(&tweets, Some(&[0.0; 2])), Err(ModelError::LsaLength { expected: 3, got: 2 })));
    assert!(matches!(ng.predict_user(&tweets, None), Err(ModelError::LsaLength { .. })));
    assert!(Model::new(toy_config(Variant::Rnn), None, None).is_err());
    assert!(Model::new(toy_config(Variant::Cnn), None, None).is_err());
}

#[test]
fn ngram_output_layer_width() {
    let m = toy_model(Variant::RnnwaNgram);
    let id = m.params().id("rnnwa_ngram.out.W").unwrap();
    assert_eq!(m.params().value(id).shape(), &[2 * 3 + 3, 2]);
}

#[test]
fn single_tweet_attention_equals_averaging() {
    for (avg, att) in [(Variant::Rnn, Variant::Rnnwa), (Variant::Cnn, Variant::Cnnwa)] {
        let a = toy_model(avg);
        let mut b = toy_model(att);
        copy_matching(&mut b, &a);
        let tweets = vec![toy_user(a.config(), 4).remove(0)];
        let pa = a.predict_user(&tweets, None).unwrap();
        let pb = b.predict_user(&tweets, None).unwrap();
        assert_eq!(pa.probs, pb.probs, "{avg} vs {att}");
        assert_eq!(pb.tweet_weights.unwrap(), vec![1.0]);
    }
}

#[test]
fn zero_lsa_matches_plain_attention_model() {
    let plain = toy_model(Variant::Rnnwa);
    let mut joint = toy_model(Variant::RnnwaNgram);
    let copied = joint.init_from(&plain).unwrap();
    assert_eq!(copied, joint.params().len() - 2);
    // Output weights: plain rows on top, arbitrary rows for the LSA block.
    let w_plain = plain.params().value(plain.params().id("rnnwa.out.W").unwrap()).clone();
    let mut w = w_plain.data().to_vec();
    w.extend([5.0, -3.0, 1.0, 2.0, -7.0, 0.5]);
    let wid = joint.params().id("rnnwa_ngram.out.W").unwrap();
    joint.params_mut().set_value(wid, Tensor::matrix(9, 2, w)).unwrap();
    let tweets = toy_user(plain.config(), 5);
    let a = plain.predict_user(&tweets, None).unwrap();
    let b = joint.predict_user(&tweets, Some(&[0.0; 3])).unwrap();
    assert_eq!(a.probs, b.probs);
}

#[test]
fn tweet_order_symmetries() {
    let avg = toy_model(Variant::Rnn);
    let att = toy_model(Variant::Rnnwa);
    let tweets = toy_user(avg.config(), 6);
    let perm = [2usize, 0, 1];
    let shuffled: Vec<EncodedTweet> = perm.iter().map(|&i| tweets[i].clone()).collect();

    let p = avg.predict_user(&tweets, None).unwrap().probs;
    let q = avg.predict_user(&shuffled, None).unwrap().probs;
    assert!((p[0] - q[0]).abs() < 1e-15);

    let w = att.predict_user(&tweets, None).unwrap().tweet_weights.unwrap();
    let ws = att.predict_user(&shuffled, None).unwrap().tweet_weights.unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert!((ws[k] - w[i]).abs() < 1e-14);
    }
}

#[test]
fn composed_gradients_match_finite_differences() {
    for v in Variant::ALL {
        let m = toy_model(v);
        let users: Vec<Vec<EncodedTweet>> = (0..2).map(|s| toy_user(m.config(), 10 + s)).collect();
        let lsa = [0.3, -0.1, 0.2];
        let report = check_gradients(m.params(), 1e-5, 1e-4, |t| {
            let mut losses = Vec::new();
            for (i, u) in users.iter().enumerate() {
                losses.push(m.user_loss(t, u, Some(&lsa), i % 2)?.0);
            }
            let all = t.concat(&losses, 0)?;
            Ok::<_, ModelError>(t.reduce_sum(all, None)?)
        })
        .unwrap();
        assert_eq!(report.failures, 0, "{v}: {report:?}");
    }
}

#[test]
fn fine_tuned_embeddings_are_pruned_and_trained() {
    let table = toy_table();
    let emb = Embeddings::fine_tune(&table, &[3, 5, 5, 9]);
    let Embeddings::Trainable { initial, rows } = &emb else { panic!() };
    assert_eq!(initial.rows(), 5);
    assert_eq!((rows[3], rows[5], rows[9], rows[4]), (2, 3, 4, UNK));
    assert_eq!(initial.row(3), table.row(5));

    let mut cfg = toy_config(Variant::Rnnwa);
    cfg.fine_tune_embeddings = true;
    let m = Model::new(cfg, Some(emb), None).unwrap();
    let id = m.params().id("rnnwa.embed.table").unwrap();
    let tweets = vec![tweet(&[3, 4, 9], &[], m.config())];
    let mut tape = Tape::new(m.params());
    let (loss, _) = m.user_loss(&mut tape, &tweets, None, 1).unwrap();
    let g = tape.backward(loss).unwrap();
    let g = g.param(id).unwrap();
    assert!(g.row(2).iter().any(|&x| x != 0.0));
    assert!(g.row(1).iter().any(|&x| x != 0.0), "token 4 falls back to the unknown row");
    assert!(g.row(3).iter().all(|&x| x == 0.0));
}
