//! Pools a handful of vectors with additive attention, with and without a
//! mask, and shows that zeroed parameters fall back to the plain mean.
//!
//! cargo run --example attention_pooling

use authorprof::autodiff::{ParamStore, Tape, Tensor};
use authorprof::nn::Attention;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let attn = Attention::new(&mut store, &mut rng, "attn", 3, 4)?;
    let items = Tensor::matrix(4, 3, vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0, 1.0, 1.0, 1.0]);

    for mask in [[1.0, 1.0, 1.0, 1.0], [1.0, 0.0, 1.0, 0.0]] {
        let mut tape = Tape::new(&store);
        let x = tape.constant(items.clone());
        let (pooled, weights) = attn.pool(&mut tape, x, &mask)?;
        println!("mask    {mask:?}");
        println!("weights {:?}", tape.value(weights).data());
        println!("pooled  {:?}\n", tape.value(pooled).data());
    }

    for p in store.iter_mut() {
        p.value.data_mut().fill(0.0);
    }
    let mut tape = Tape::new(&store);
    let x = tape.constant(items);
    let (pooled, weights) = attn.pool(&mut tape, x, &[1.0; 4])?;
    println!("zero parameters: weights {:?}", tape.value(weights).data());
    println!("                 pooled  {:?} (the mean)", tape.value(pooled).data());
    Ok(())
}
