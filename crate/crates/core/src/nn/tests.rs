use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::check_gradients;

const H: f64 = 1e-5;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Overwrites every parameter with uniform noise so biases are non-zero too.
fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
    }
}

fn sum_of_squares(tape: &mut Tape, v: Var) -> Result<Var> {
    let sq = tape.mul(v, v)?;
    tape.reduce_sum(sq, None)
}

#[test]
fn gru_step_examples() {
    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, &mut rng(0), "g", 3, 2).unwrap();
    for p in store.iter_mut() {
        p.value.data_mut().fill(0.0);
    }
    let mut tape = Tape::new(&store);
    let x = tape.constant(Tensor::vector(vec![0.3, -1.0, 2.0]));
    let h = tape.constant(Tensor::vector(vec![0.8, -0.4]));
    let out = cell.step(&mut tape, x, h).unwrap();
    assert_eq!(tape.value(out).data(), &[0.4, -0.2]);

    let zero_x = tape.constant(Tensor::zeros(&[3]));
    let zero_h = tape.constant(Tensor::zeros(&[2]));
    let out = cell.step(&mut tape, zero_x, zero_h).unwrap();
    assert_eq!(tape.value(out).data(), &[0.0, 0.0]);
}

#[test]
fn gru_step_gradient() {
    let mut r = rng(1);
    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, &mut r, "g", 4, 3).unwrap();
    randomize(&mut store, &mut r);
    let x = random(&mut r, 2, 4);
    let h = random(&mut r, 2, 3);
    let report = check_gradients(&store, H, 1e-5, |t| {
        let x = t.constant(x.clone());
        let h = t.constant(h.clone());
        let out = cell.step(t, x, h)?;
        sum_of_squares(t, out)
    })
    .unwrap();
    assert_eq!(report.failures, 0, "{report:?}");
}

#[test]
fn bigru_single_step_and_padding() {
    let mut r = rng(2);
    let mut store = ParamStore::new();
    let gru = BiGru::new(&mut store, &mut r, "b", 3, 2).unwrap();
    randomize(&mut store, &mut r);
    let xs = random(&mut r, 4, 3);

    let mut tape = Tape::new(&store);
    let x0 = tape.constant(Tensor::matrix(1, 3, xs.row(0).to_vec()));
    let states = gru.encode(&mut tape, x0, &[1]).unwrap();
    let h0 = tape.constant(Tensor::zeros(&[1, 2]));
    let f = gru.fwd.step(&mut tape, x0, h0).unwrap();
    let b = gru.bwd.step(&mut tape, x0, h0).unwrap();
    let expected = [tape.value(f).data(), tape.value(b).data()].concat();
    assert_eq!(tape.value(states).data(), expected.as_slice());

    // Two real steps, then two pads holding garbage.
    let short = tape.constant(Tensor::matrix(2, 3, xs.data()[..6].to_vec()));
    let unpadded = gru.encode(&mut tape, short, &[1, 1]).unwrap();
    let padded_in = tape.constant(xs.clone());
    let padded = gru.encode(&mut tape, padded_in, &[1, 1, 0, 0]).unwrap();
    assert_eq!(&tape.value(padded).data()[..8], tape.value(unpadded).data());

    let all_masked = tape.constant(xs.clone());
    assert!(matches!(gru.encode(&mut tape, all_masked, &[0; 4]), Err(AutodiffError::AllMasked { .. })));
}

#[test]
fn bigru_batch_equals_single_sequences() {
    let mut r = rng(3);
    let mut store = ParamStore::new();
    let gru = BiGru::new(&mut store, &mut r, "b", 3, 2).unwrap();
    randomize(&mut store, &mut r);
    let a = random(&mut r, 3, 3);
    let b = random(&mut r, 3, 3);
    let (mask_a, mask_b) = ([1u8, 1, 1], [1u8, 0, 0]);
    // Interleave into time-major order.
    let mut rows = Vec::new();
    let mut mask = Vec::new();
    for t in 0..3 {
        rows.extend_from_slice(a.row(t));
        rows.extend_from_slice(b.row(t));
        mask.extend([mask_a[t], mask_b[t]]);
    }
    let mut tape = Tape::new(&store);
    let batch_in = tape.constant(Tensor::matrix(6, 3, rows));
    let batch = gru.encode_batch(&mut tape, batch_in, 2, &mask).unwrap();
    let a_in = tape.constant(a);
    let sa = gru.encode(&mut tape, a_in, &mask_a).unwrap();
    let b_in = tape.constant(b);
    let sb = gru.encode(&mut tape, b_in, &mask_b).unwrap();
    for t in 0..3 {
        assert_eq!(tape.value(batch).row(2 * t), tape.value(sa).row(t));
    }
    assert_eq!(tape.value(batch).row(1), tape.value(sb).row(0));
}

#[test]
fn bigru_gradient_with_mask() {
    let mut r = rng(4);
    let mut store = ParamStore::new();
    let gru = BiGru::new(&mut store, &mut r, "b", 3, 2).unwrap();
    randomize(&mut store, &mut r);
    let xs = random(&mut r, 8, 3);
    let mask = [1u8, 1, 1, 1, 1, 0, 1, 0];
    let report = check_gradients(&store, H, 1e-5, |t| {
        let x = t.constant(xs.clone());
        let s = gru.encode_batch(t, x, 2, &mask)?;
        sum_of_squares(t, s)
    })
    .unwrap();
    assert_eq!(report.failures, 0, "{report:?}");
}

#[test]
fn attention_invariants() {
    let mut r = rng(5);
    let mut store = ParamStore::new();
    let att = Attention::new(&mut store, &mut r, "a", 8, 6).unwrap();
    randomize(&mut store, &mut r);
    let items = random(&mut r, 5, 8);
    let mask = [1.0, 0.0, 1.0, 1.0, 0.0];

    let mut tape = Tape::new(&store);
    let it = tape.constant(items.clone());
    let (k, v) = att.pool(&mut tape, it, &mask).unwrap();
    let w = tape.value(v).data().to_vec();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!((w[1], w[4]), (0.0, 0.0));
    assert!(w.iter().all(|&x| x >= 0.0));
    for j in 0..8 {
        let col: Vec<f64> = [0, 2, 3].iter().map(|&i| items.get(i, j)).collect();
        let kj = tape.value(k).data()[j];
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(kj >= lo - 1e-12 && kj <= hi + 1e-12);
    }

    let one = tape.constant(Tensor::matrix(1, 8, items.row(2).to_vec()));
    let (k1, v1) = att.pool(&mut tape, one, &[1.0]).unwrap();
    assert_eq!(tape.value(v1).data(), &[1.0]);
    assert_eq!(tape.value(k1).data(), items.row(2));

    assert!(matches!(att.pool(&mut tape, it, &[0.0; 5]), Err(AutodiffError::AllMasked { .. })));
}

#[test]
fn zero_parameter_attention_is_the_mean() {
    let mut r = rng(6);
    let mut store = ParamStore::new();
    let att = Attention::new(&mut store, &mut r, "a", 4, 4).unwrap();
    for p in store.iter_mut() {
        p.value.data_mut().fill(0.0);
    }
    let items = random(&mut r, 4, 4);
    let mut tape = Tape::new(&store);
    let it = tape.constant(items.clone());
    let (k, _) = att.pool(&mut tape, it, &[1.0, 1.0, 0.0, 1.0]).unwrap();
    for j in 0..4 {
        let mean = (items.get(0, j) + items.get(1, j) + items.get(3, j)) / 3.0;
        assert!((tape.value(k).data()[j] - mean).abs() < 1e-12);
    }
}

#[test]
fn attention_gradient_and_segments() {
    let mut r = rng(7);
    let mut store = ParamStore::new();
    let att = Attention::new(&mut store, &mut r, "a", 8, 8).unwrap();
    randomize(&mut store, &mut r);
    let items = random(&mut r, 5, 8);
    let report = check_gradients(&store, H, 1e-5, |t| {
        let it = t.leaf(items.clone());
        let (k, _) = att.pool(t, it, &[1.0; 5])?;
        sum_of_squares(t, k)
    })
    .unwrap();
    assert_eq!(report.failures, 0, "{report:?}");

    let mut tape = Tape::new(&store);
    let it = tape.constant(items.clone());
    let (ks, vs) = att.pool_segments(&mut tape, it, &[0..2, 2..5]).unwrap();
    let first = tape.constant(Tensor::matrix(2, 8, items.data()[..16].to_vec()));
    let (k0, v0) = att.pool(&mut tape, first, &[1.0, 1.0]).unwrap();
    for j in 0..8 {
        assert!((tape.value(ks).get(0, j) - tape.value(k0).data()[j]).abs() < 1e-15);
    }
    assert!((tape.value(vs).data()[0] - tape.value(v0).data()[0]).abs() < 1e-15);
}

#[test]
fn conv_examples() {
    let mut r = rng(8);
    let mut store = ParamStore::new();
    let bank = ConvBank::new(&mut store, &mut r, "c", 5, 4).unwrap();
    assert_eq!(bank.out_dim(), 12);
    let mut tape = Tape::new(&store);
    let zeros = tape.constant(Tensor::zeros(&[12, 5]));
    let out = bank.encode(&mut tape, zeros, &[1; 12]).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));

    let short = tape.constant(Tensor::zeros(&[8, 5]));
    assert!(bank.encode(&mut tape, short, &[1; 8]).is_err());
    assert!(matches!(bank.encode(&mut tape, zeros, &[0; 12]), Err(AutodiffError::AllMasked { .. })));
}

#[test]
fn conv_ignores_pad_contents() {
    let mut r = rng(9);
    let mut store = ParamStore::new();
    let bank = ConvBank::new(&mut store, &mut r, "c", 5, 4).unwrap();
    randomize(&mut store, &mut r);
    let mut chars = random(&mut r, 12, 5);
    let mask: Vec<u8> = (0..12).map(|i| u8::from(i < 7)).collect();
    let mut tape = Tape::new(&store);
    let a = tape.constant(chars.clone());
    let out_a = bank.encode(&mut tape, a, &mask).unwrap();
    // Shuffle the pad rows around.
    let d = chars.data_mut();
    for i in 7 * 5..12 * 5 {
        d[i] = -d[i] * 3.0 + 0.5;
    }
    let b = tape.constant(chars);
    let out_b = bank.encode(&mut tape, b, &mask).unwrap();
    assert_eq!(tape.value(out_a).data(), tape.value(out_b).data());
}

#[test]
fn conv_gradient() {
    let mut r = rng(10);
    let mut store = ParamStore::new();
    let bank = ConvBank::new(&mut store, &mut r, "c", 3, 2).unwrap();
    randomize(&mut store, &mut r);
    let chars = random(&mut r, 12, 3);
    let mask: Vec<u8> = (0..12).map(|i| u8::from(i < 10)).collect();
    let report = check_gradients(&store, H, 1e-5, |t| {
        let x = t.leaf(chars.clone());
        let out = bank.encode(t, x, &mask)?;
        sum_of_squares(t, out)
    })
    .unwrap();
    assert_eq!(report.failures, 0, "{report:?}");
}

#[test]
fn dense_examples_and_gradient() {
    let mut r = rng(11);
    let mut store = ParamStore::new();
    let dense = Dense::new(&mut store, &mut r, "d", 3, 3).unwrap();
    store.set_value(dense.w, Tensor::identity(3)).unwrap();
    store.set_value(dense.b, Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
    {
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::vector(vec![0.5, -0.5, 0.0]));
        let y = dense.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.5, 1.5, 3.0]);
    }
    store.set_value(dense.w, Tensor::zeros(&[3, 3])).unwrap();
    {
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::vector(vec![0.5, -0.5, 7.0]));
        let y = dense.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0]);
    }
    randomize(&mut store, &mut r);
    let x = random(&mut r, 4, 3);
    let report = check_gradients(&store, H, 1e-5, |t| {
        let x = t.constant(x.clone());
        let y = dense.forward(t, x)?;
        sum_of_squares(t, y)
    })
    .unwrap();
    assert_eq!(report.failures, 0, "{report:?}");
}

#[test]
fn parameter_names_follow_convention() {
    let mut store = ParamStore::new();
    let mut r = rng(0);
    BiGru::new(&mut store, &mut r, "rnnwa.word_gru", 4, 2).unwrap();
    Attention::new(&mut store, &mut r, "rnnwa.word_attn", 4, 4).unwrap();
    ConvBank::new(&mut store, &mut r, "cnnwa.conv", 25, 3).unwrap();
    for name in ["rnnwa.word_gru.fwd.W_z", "rnnwa.word_gru.bwd.b_h", "rnnwa.word_attn.W_alpha", "cnnwa.conv.w9.kernel"] {
        assert!(store.id(name).is_some(), "{name}");
    }
    let decayed: Vec<bool> = store.iter().filter(|(_, p)| p.name.ends_with(".b")).map(|(_, p)| p.decay).collect();
    assert!(decayed.iter().all(|d| !d));
}
