//! Tokenizes a few tweets and turns them into the fixed-length word and
//! character id sequences the models read.
//!
//! cargo run --example tokenize_and_encode

use authorprof::synthetic::synthetic_embeddings;
use authorprof::text::{tokenize, CharAlphabet, TweetEncoder};

fn main() {
    let tweets = [
        "Counting sheep again tonight :) #insomnia",
        "@friend the goat ate w3 and w7... http://example.com/x",
        "w1 w2 w2 w9!!",
    ];
    for t in tweets {
        println!("{t:?}\n  tokens: {:?}", tokenize(t));
    }

    // Word vectors for `sheep`, `goat` and the filler words `w0`..`w9`.
    let (vocab, _table) = synthetic_embeddings(10, 8, 0);
    let alphabet = CharAlphabet::build(tweets, 1);
    println!("\nvocabulary: {} ids, alphabet: {} ids", vocab.len(), alphabet.len());

    let enc = TweetEncoder { vocab: Some(&vocab), alphabet: Some(&alphabet), max_tokens: 10, max_chars: 24 };
    for t in tweets {
        let e = enc.encode(t);
        println!("\n{t:?}");
        println!("  word ids  {:?}", e.word_ids);
        println!("  word mask {:?}", e.word_mask);
        println!("  char ids  {:?}", e.char_ids);
    }
}
