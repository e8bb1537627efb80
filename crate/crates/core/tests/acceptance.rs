//! End-to-end acceptance checks. Prints one PASS, FAIL or SKIP line per
//! criterion and exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::Rng;

use authorprof::autodiff::{check_gradients, AutodiffError, GradCheck, ParamStore, Tape, Tensor, Var};
use authorprof::corpus::{self, split, Dataset, Lang, SplitSpec};
use authorprof::eval::{self, scatter_experiment, TrialScores};
use authorprof::features::{fit_lsa, fit_tfidf, transform_tfidf, FeaturesError, LsaProjector, NgramSpec, UserDoc};
use authorprof::models::{encode_dataset, Embeddings, EncodedUser, Model, ModelConfig, ModelError, Variant};
use authorprof::nn::{Attention, BiGru, ConvBank, Dense, GruCell};
use authorprof::synthetic::{synthetic_dataset, synthetic_embeddings, synthetic_embeddings_text, SyntheticSpec};
use authorprof::text::{tokenize, CharAlphabet, TweetEncoder};
use authorprof::train::{build_grid, grid_search, train, TrainConfig};

const H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Line {
    name: &'static str,
    verdict: Verdict,
    detail: String,
    elapsed: Duration,
}

fn run(name: &'static str, f: impl FnOnce() -> (Verdict, String)) -> Line {
    let start = Instant::now();
    let (verdict, detail) = f();
    let line = Line { name, verdict, detail, elapsed: start.elapsed() };
    let tag = match line.verdict {
        Verdict::Pass => "PASS",
        Verdict::Fail => "FAIL",
        Verdict::Skip => "SKIP",
    };
    println!("{tag}  {:<28} {:>7.1}s  {}", line.name, line.elapsed.as_secs_f64(), line.detail);
    line
}

fn verdict(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn main() {
    let lines = [
        run("gradient integrity", gradient_integrity),
        run("attention invariants", attention_invariants),
        run("svd oracle", svd_oracle),
        run("tf-idf oracle", tfidf_oracle),
        run("learning smoke test", learning_smoke),
        run("best-by-user vs best-by-tweet", best_by_user_vs_tweet),
        run("determinism", determinism),
        run("pan 2018 reproduction", pan_reproduction),
    ];
    let failed = lines.iter().filter(|l| matches!(l.verdict, Verdict::Fail)).count();
    println!("acceptance: {} criteria, {failed} failed", lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- gradients

fn randomize(store: &mut ParamStore, rng: &mut impl Rng, scale: f64) {
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    match shape {
        [_] => Tensor::vector(data),
        [r, c] => Tensor::matrix(*r, *c, data),
        _ => unreachable!(),
    }
}

/// `Σ out ∘ C` for a fixed random `C`, so no output entry is left unprobed.
fn projected(tape: &mut Tape, out: Var, seed: u64) -> Result<Var, AutodiffError> {
    let shape = tape.value(out).shape().to_vec();
    let c = random_tensor(&mut common::rng(seed), &shape);
    let c = tape.constant(c);
    let prod = tape.mul(out, c)?;
    tape.reduce_sum(prod, None)
}

fn layer_checks() -> Result<Vec<(String, GradCheck)>, AutodiffError> {
    let mut out = Vec::new();
    let mut r = common::rng(100);

    let mut store = ParamStore::new();
    let dense = Dense::new(&mut store, &mut r, "dense", 4, 3)?;
    randomize(&mut store, &mut r, 0.8);
    let x = random_tensor(&mut r, &[2, 4]);
    out.push(("dense".into(), check_gradients(&store, H, GRAD_TOL, |t| {
        let x = t.constant(x.clone());
        let y = dense.forward(t, x)?;
        projected(t, y, 1)
    })?));

    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, &mut r, "gru", 4, 3)?;
    randomize(&mut store, &mut r, 0.8);
    let (x, h) = (random_tensor(&mut r, &[2, 4]), random_tensor(&mut r, &[2, 3]));
    out.push(("gru cell".into(), check_gradients(&store, H, GRAD_TOL, |t| {
        let x = t.constant(x.clone());
        let h = t.constant(h.clone());
        let y = cell.step(t, x, h)?;
        projected(t, y, 2)
    })?));

    let mut store = ParamStore::new();
    let bigru = BiGru::new(&mut store, &mut r, "bigru", 4, 3)?;
    randomize(&mut store, &mut r, 0.8);
    let xs = random_tensor(&mut r, &[6, 4]);
    out.push(("bigru".into(), check_gradients(&store, H, GRAD_TOL, |t| {
        let xs = t.constant(xs.clone());
        let y = bigru.encode(t, xs, &[1, 1, 1, 1, 1, 0])?;
        projected(t, y, 3)
    })?));

    let mut store = ParamStore::new();
    let attn = Attention::new(&mut store, &mut r, "attn", 5, 4)?;
    randomize(&mut store, &mut r, 0.8);
    let items = random_tensor(&mut r, &[5, 5]);
    out.push(("attention".into(), check_gradients(&store, H, GRAD_TOL, |t| {
        let it = t.leaf(items.clone());
        let (k, _) = attn.pool(t, it, &[1.0, 1.0, 0.0, 1.0, 1.0])?;
        let (ks, _) = attn.pool_segments(t, it, &[0..2, 2..5])?;
        let a = projected(t, k, 4)?;
        let b = projected(t, ks, 5)?;
        t.add(a, b)
    })?));

    let mut store = ParamStore::new();
    let conv = ConvBank::new(&mut store, &mut r, "conv", 3, 2)?;
    randomize(&mut store, &mut r, 0.8);
    let chars = random_tensor(&mut r, &[12, 3]);
    let mask: Vec<u8> = (0..12).map(|i| u8::from(i < 10)).collect();
    out.push(("conv bank".into(), check_gradients(&store, H, GRAD_TOL, |t| {
        let x = t.leaf(chars.clone());
        let y = conv.encode(t, x, &mask)?;
        projected(t, y, 6)
    })?));
    Ok(out)
}

/// Two users with three five-token tweets each, over a tiny vocabulary.
fn toy_users() -> Dataset {
    let spec = SyntheticSpec { users: 2, tweets_per_user: 3, tokens_per_tweet: 4, filler_words: 8, marker_rate: 1.0, seed: 4, ..SyntheticSpec::default() };
    synthetic_dataset(&spec)
}

fn model_checks() -> Result<Vec<(String, GradCheck)>, ModelError> {
    let data = toy_users();
    let (vocab, table) = synthetic_embeddings(8, 4, 1);
    let alphabet = CharAlphabet::build(data.users().iter().flat_map(|u| u.tweets.iter().map(|t| t.text())), 1);
    let enc = TweetEncoder { vocab: Some(&vocab), alphabet: Some(&alphabet), max_tokens: 6, max_chars: 24 };
    let docs: Vec<UserDoc> = data.users().iter().map(UserDoc::from_user).collect();
    let lsa_k = 2;
    let projector = LsaProjector::fit(&docs, &NgramSpec { min_total_freq: 1, ..NgramSpec::for_lang(Lang::En) }, lsa_k, 0)
        .expect("toy projector fits");
    let users = encode_dataset(&data, &enc, Some(&projector));
    assert!(users.iter().all(|u| u.tweets.len() == 3 && u.tweets.iter().all(|t| t.word_len() == 5)));

    let mut out = Vec::new();
    let cases = Variant::ALL.iter().map(|&v| (v, false)).chain([(Variant::Rnnwa, true)]);
    for (variant, fine_tune) in cases {
        let cfg = ModelConfig {
            d_cells: 3,
            n_filters: 2,
            d_char: 3,
            embed_dim: 4,
            max_tokens: 6,
            max_chars: 24,
            lsa_k,
            off_grid: true,
            fine_tune_embeddings: fine_tune,
            seed: 9,
            ..ModelConfig::new(variant, Lang::En)
        };
        let emb = if fine_tune {
            let keep: Vec<usize> = users.iter().flat_map(|u| u.tweets.iter().flat_map(|t| t.word_ids.clone())).collect();
            Embeddings::fine_tune(&table.matrix, &keep)
        } else {
            Embeddings::frozen(table.matrix.clone())
        };
        let mut model = Model::new(cfg, Some(emb), Some(alphabet.len()))?;
        randomize(model.params_mut(), &mut common::rng(variant as u64 + 20), 0.5);
        let report = check_gradients(model.params(), H, GRAD_TOL, |t| {
            let mut losses = Vec::new();
            for u in &users {
                let label = u.label.expect("labeled").class();
                losses.push(model.user_loss(t, &u.tweets, u.lsa.as_deref(), label)?.0);
            }
            let all = t.concat(&losses, 0)?;
            Ok::<_, ModelError>(t.reduce_sum(all, None)?)
        })?;
        let name = if fine_tune { format!("{variant}+fine-tune") } else { variant.to_string() };
        out.push((name, report));
    }
    Ok(out)
}

fn gradient_integrity() -> (Verdict, String) {
    let start = Instant::now();
    let layers = match layer_checks() {
        Ok(l) => l,
        Err(e) => return (Verdict::Fail, format!("layer check errored: {e}")),
    };
    let models = match model_checks() {
        Ok(m) => m,
        Err(e) => return (Verdict::Fail, format!("model check errored: {e}")),
    };
    let all: Vec<&(String, GradCheck)> = layers.iter().chain(&models).collect();
    let checked: usize = all.iter().map(|(_, r)| r.checked).sum();
    let failures: usize = all.iter().map(|(_, r)| r.failures).sum();
    let (worst_name, worst) = all
        .iter()
        .max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error))
        .map(|(n, r)| (n.clone(), r.max_rel_error))
        .unwrap_or_default();
    let secs = start.elapsed().as_secs_f64();
    let names: Vec<&str> = all.iter().map(|(n, _)| n.as_str()).collect();
    let ok = failures == 0 && secs < 60.0 && all.iter().all(|(_, r)| r.checked > 0);
    (
        verdict(ok),
        format!("{checked} entries over [{}], {failures} above {GRAD_TOL:e}, worst {worst:.2e} in {worst_name}", names.join(", ")),
    )
}

// ---------------------------------------------------------------- attention

fn attention_invariants() -> (Verdict, String) {
    let mut r = common::rng(200);
    let (mut sum_err, mut mean_err, mut ident_err) = (0.0f64, 0.0f64, 0.0f64);
    let mut masked_nonzero = 0usize;
    let cases = 300;
    for case in 0..cases {
        let d = r.random_range(1..=8);
        let d_a = r.random_range(1..=8);
        let n = r.random_range(1..=8);
        let mut mask: Vec<f64> = (0..n).map(|_| if r.random_bool(0.7) { 1.0 } else { 0.0 }).collect();
        let keep = r.random_range(0..n);
        mask[keep] = 1.0;
        let mut store = ParamStore::new();
        let attn = Attention::new(&mut store, &mut r, "a", d, d_a).expect("attention builds");
        randomize(&mut store, &mut r, 3.0);
        let items: Vec<f64> = (0..n * d).map(|_| r.random_range(-3.0..3.0)).collect();
        let items = Tensor::matrix(n, d, items);

        let mut tape = Tape::new(&store);
        let it = tape.constant(items.clone());
        let (_, v) = attn.pool(&mut tape, it, &mask).expect("pool");
        let w = tape.value(v).data();
        sum_err = sum_err.max((w.iter().sum::<f64>() - 1.0).abs());
        masked_nonzero += w.iter().zip(&mask).filter(|(&x, &m)| m == 0.0 && x != 0.0).count();

        let mut zero = store.clone();
        for p in zero.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        let mut tape = Tape::new(&zero);
        let it = tape.constant(items.clone());
        let (k, _) = attn.pool(&mut tape, it, &mask).expect("pool");
        let live = mask.iter().filter(|&&m| m == 1.0).count() as f64;
        for j in 0..d {
            let mean = (0..n).filter(|&i| mask[i] == 1.0).map(|i| items.get(i, j)).sum::<f64>() / live;
            mean_err = mean_err.max((tape.value(k).data()[j] - mean).abs());
        }

        let single = Tensor::matrix(1, d, items.row(case % n).to_vec());
        let mut tape = Tape::new(&store);
        let it = tape.constant(single.clone());
        let (k, _) = attn.pool(&mut tape, it, &[1.0]).expect("pool");
        for (a, b) in tape.value(k).data().iter().zip(single.data()) {
            ident_err = ident_err.max((a - b).abs());
        }
    }
    let ok = sum_err <= 1e-12 && masked_nonzero == 0 && mean_err <= 1e-12 && ident_err <= 1e-12;
    (
        verdict(ok),
        format!(
            "{cases} cases: |Σw-1| ≤ {sum_err:.1e}, {masked_nonzero} non-zero masked weights, zero-param mean error {mean_err:.1e}, single-item error {ident_err:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- svd

fn svd_oracle() -> (Verdict, String) {
    let start = Instant::now();
    let mut r = common::rng(300);
    let (mut value_err, mut vector_err) = (0.0f64, 0.0f64);
    let mut shapes = Vec::new();
    for case in 0..20 {
        let (rows, cols) = if case == 0 { (100, 100) } else { (r.random_range(2..=100), r.random_range(2..=100)) };
        let min_dim = rows.min(cols);
        // Even cases: a decaying spectrum, truncated well below full rank.
        // Odd cases: a plain Gaussian matrix, with k close to full rank.
        let (a, k) = if case % 2 == 0 {
            let ratio = r.random_range(0.5..0.85);
            (common::decaying_matrix(&mut r, rows, cols, ratio), r.random_range(1..=min_dim.min(10)))
        } else {
            (common::gaussian_matrix(&mut r, rows, cols), r.random_range(min_dim.saturating_sub(10).max(1)..=min_dim))
        };
        shapes.push(format!("{rows}x{cols}/k{k}"));
        let fit = match fit_lsa(&Tensor::matrix(rows, cols, a.clone()), k, case as u64) {
            Ok(f) => f,
            Err(e) => return (Verdict::Fail, format!("{rows}x{cols}: {e}")),
        };
        let (s, v) = common::jacobi_svd(&a, rows, cols);
        for i in 0..k {
            value_err = value_err.max((fit.singular_values[i] - s[i]).abs() / s[i]);
            let col: Vec<f64> = (0..cols).map(|j| fit.components.get(j, i)).collect();
            let plus: f64 = col.iter().zip(&v[i]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let minus: f64 = col.iter().zip(&v[i]).map(|(a, b)| (a + b).powi(2)).sum::<f64>().sqrt();
            vector_err = vector_err.max(plus.min(minus));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = value_err < 1e-6 && vector_err < 1e-6 && secs < 30.0;
    (
        verdict(ok),
        format!("20 matrices up to 100x100: max relative value error {value_err:.1e}, max vector error {vector_err:.1e}"),
    )
}

// ---------------------------------------------------------------- tf-idf

const PIECES: [&str; 12] = ["a", "b", "ab", "Ba", "the", "c!", "#x", "@y", ":)", "é", "día", "x."];

/// Brute-force tf-idf: counts by linear scans over explicit key lists.
struct Oracle {
    features: Vec<String>,
    idf: Vec<f64>,
}

fn oracle_keys(doc: &str, spec: &NgramSpec) -> Vec<String> {
    let mut keys = Vec::new();
    for line in doc.to_lowercase().split('\n') {
        let toks = tokenize(line);
        for &n in &spec.word_ns {
            for i in 0..toks.len().saturating_sub(n - 1) {
                if i + n <= toks.len() {
                    keys.push(format!("w{n}:{}", toks[i..i + n].join("\u{241F}")));
                }
            }
        }
        let cs: Vec<char> = line.chars().collect();
        for &n in &spec.char_ns {
            for i in 0..cs.len() {
                if i + n <= cs.len() {
                    keys.push(format!("c{n}:{}", cs[i..i + n].iter().collect::<String>()));
                }
            }
        }
    }
    keys
}

fn fit_oracle(docs: &[String], spec: &NgramSpec) -> Oracle {
    let per_doc: Vec<Vec<String>> = docs.iter().map(|d| oracle_keys(d, spec)).collect();
    let mut all: Vec<String> = per_doc.iter().flatten().cloned().collect();
    all.sort();
    all.dedup();
    let mut features = Vec::new();
    let mut idf = Vec::new();
    for key in all {
        let total: usize = per_doc.iter().map(|d| d.iter().filter(|k| **k == key).count()).sum();
        if total < spec.min_total_freq {
            continue;
        }
        let df = per_doc.iter().filter(|d| d.contains(&key)).count() as f64;
        let n = docs.len() as f64;
        idf.push(((1.0 + n) / (1.0 + df)).ln() + 1.0);
        features.push(key);
    }
    Oracle { features, idf }
}

fn transform_oracle(o: &Oracle, doc: &str, spec: &NgramSpec) -> Vec<f64> {
    let keys = oracle_keys(doc, spec);
    let mut v: Vec<f64> = o.features.iter().zip(&o.idf).map(|(f, idf)| keys.iter().filter(|k| *k == f).count() as f64 * idf).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn random_doc(r: &mut impl Rng, max_tokens: usize) -> String {
    let n = r.random_range(0..=max_tokens);
    let mut s = String::new();
    for i in 0..n {
        if i > 0 {
            s.push(if r.random_bool(0.15) { '\n' } else { ' ' });
        }
        s.push_str(PIECES.choose(r).expect("non-empty"));
    }
    s
}

fn tfidf_oracle() -> (Verdict, String) {
    let mut r = common::rng(400);
    let (mut pruned, mut kept, mut empty) = (0usize, 0usize, 0usize);
    let mut value_err = 0.0f64;
    let mut problems = Vec::new();
    for case in 0..50 {
        let n_docs = r.random_range(2..=10);
        let docs: Vec<String> = (0..n_docs).map(|_| random_doc(&mut r, 30)).collect();
        let mut word_ns: Vec<usize> = (1..=3).filter(|_| r.random_bool(0.5)).collect();
        let char_ns: Vec<usize> = (1..=5).filter(|_| r.random_bool(0.4)).collect();
        if word_ns.is_empty() && char_ns.is_empty() {
            word_ns.push(1);
        }
        let spec = NgramSpec { word_ns: word_ns.into_iter().collect(), char_ns: char_ns.into_iter().collect(), min_total_freq: 2, max_features: None };
        let oracle = fit_oracle(&docs, &spec);
        let distinct: usize = {
            let mut all: Vec<String> = docs.iter().flat_map(|d| oracle_keys(d, &spec)).collect();
            all.sort();
            all.dedup();
            all.len()
        };
        pruned += distinct - oracle.features.len();
        let user_docs: Vec<UserDoc> = docs.iter().map(|d| UserDoc::new(d.clone())).collect();
        let model = match fit_tfidf(&user_docs, &spec) {
            Ok(m) => m,
            Err(FeaturesError::NoFeatures(_)) if oracle.features.is_empty() => {
                empty += 1;
                continue;
            }
            Err(e) => {
                problems.push(format!("corpus {case}: {e}"));
                continue;
            }
        };
        kept += model.num_features();
        if model.features() != oracle.features.as_slice() {
            problems.push(format!("corpus {case}: feature sets differ"));
            continue;
        }
        for (a, b) in model.idf().iter().zip(&oracle.idf) {
            value_err = value_err.max((a - b).abs());
        }
        let unseen = random_doc(&mut r, 30);
        for d in docs.iter().chain([&unseen]) {
            let got = transform_tfidf(&model, &UserDoc::new(d.clone()));
            let want = transform_oracle(&oracle, d, &spec);
            for (a, b) in got.iter().zip(&want) {
                value_err = value_err.max((a - b).abs());
            }
        }
    }
    let ok = problems.is_empty() && value_err <= 1e-12 && pruned > 0;
    let mut detail = format!("50 corpora: {kept} features kept, {pruned} singletons pruned, {empty} all-pruned corpora, max value error {value_err:.1e}");
    if !problems.is_empty() {
        detail.push_str(&format!("; {}", problems.join("; ")));
    }
    (verdict(ok), detail)
}

// ---------------------------------------------------------------- learning

fn smoke_model(variant: Variant, lsa_k: usize, table: &Tensor) -> Model {
    let cfg = ModelConfig { d_cells: 50, embed_dim: 200, max_tokens: 10, lsa_k, seed: 0, ..ModelConfig::new(variant, Lang::En) };
    Model::new(cfg, Some(Embeddings::frozen(table.clone())), None).expect("model builds")
}

fn learning_smoke() -> (Verdict, String) {
    let start = Instant::now();
    let spec = SyntheticSpec { users: 30, tweets_per_user: 5, marker_rate: 1.0, noise: 0.0, seed: 0, ..SyntheticSpec::default() };
    let data = synthetic_dataset(&spec);
    let train_set = data.select(&(0..20).collect::<Vec<_>>());
    let test_set = data.select(&(20..30).collect::<Vec<_>>());
    let (vocab, table) = synthetic_embeddings(spec.filler_words, 200, 0);
    let enc = TweetEncoder { vocab: Some(&vocab), alphabet: None, max_tokens: 10, max_chars: 0 };
    let docs: Vec<UserDoc> = train_set.users().iter().map(UserDoc::from_user).collect();
    let projector = LsaProjector::fit(&docs, &NgramSpec::for_lang(Lang::En), 10, 0).expect("projector fits");
    let tcfg = TrainConfig { lr: 0.01, epochs: 30, batch_size: 4, seed: 0, ..TrainConfig::default() };

    let fit = |variant: Variant, projector: Option<&LsaProjector>| -> Result<(Vec<f64>, f64), String> {
        let tr = encode_dataset(&train_set, &enc, projector);
        let te = encode_dataset(&test_set, &enc, projector);
        let mut model = smoke_model(variant, projector.map_or(10, |p| p.k()), &table.matrix);
        // Scoring on the training users gives the train accuracy per epoch.
        let out = train(&mut model, &tr, &tr, &tcfg, |_| {}).map_err(|e| e.to_string())?;
        let held_out = eval::evaluate(&model, &te, "").map_err(|e| e.to_string())?.user_accuracy;
        Ok((out.history.iter().map(|m| m.user_accuracy).collect(), held_out))
    };
    let (plain, plain_test) = match fit(Variant::Rnnwa, None) {
        Ok(x) => x,
        Err(e) => return (Verdict::Fail, format!("rnnwa: {e}")),
    };
    let (joint, joint_test) = match fit(Variant::RnnwaNgram, Some(&projector)) {
        Ok(x) => x,
        Err(e) => return (Verdict::Fail, format!("rnnwa+ngram: {e}")),
    };
    let first_perfect = plain.iter().position(|&a| a == 1.0);
    let behind: Vec<usize> = (1..plain.len()).filter(|&e| joint[e] < plain[e]).collect();
    let secs = start.elapsed().as_secs_f64();
    let ok = first_perfect.is_some() && plain_test >= 0.9 && behind.is_empty() && secs < 300.0;
    (
        verdict(ok),
        format!(
            "rnnwa: 100% train at epoch {}, held-out {:.2}; rnnwa+ngram: held-out {:.2}, behind rnnwa at epochs {:?}; final train {:.2} vs {:.2}",
            first_perfect.map_or("never".into(), |e| e.to_string()),
            plain_test,
            joint_test,
            behind,
            joint[joint.len() - 1],
            plain[plain.len() - 1],
        ),
    )
}

// ---------------------------------------------------------------- model selection

fn best_by_user_vs_tweet() -> (Verdict, String) {
    let spec = SyntheticSpec { users: 80, tweets_per_user: 8, marker_rate: 1.0, noise: 0.2, seed: 0, ..SyntheticSpec::default() };
    let data = synthetic_dataset(&spec);
    let (tr, va) = split(&data, &SplitSpec { train_fraction: 0.75, seed: 0, stratified: true }).expect("split");
    let (vocab, table) = synthetic_embeddings(spec.filler_words, 8, 0);
    let enc = TweetEncoder { vocab: Some(&vocab), alphabet: None, max_tokens: 8, max_chars: 0 };
    let (tr, va): (Vec<EncodedUser>, Vec<EncodedUser>) = (encode_dataset(&tr, &enc, None), encode_dataset(&va, &enc, None));
    let base = ModelConfig { embed_dim: 8, max_tokens: 8, off_grid: true, seed: 0, ..ModelConfig::new(Variant::Rnn, Lang::En) };
    let tcfg = TrainConfig { epochs: 8, batch_size: 8, seed: 0, ..TrainConfig::default() };
    let trials = build_grid(&base, &tcfg, &[3, 5, 8], &[0.003, 0.02]);
    let results = grid_search(&trials, |t| {
        let mut model = Model::new(t.model.clone(), Some(Embeddings::frozen(table.matrix.clone())), None).expect("model builds");
        train(&mut model, &tr, &va, &t.train, |_| {})
    });
    let results = match results {
        Ok(r) => r,
        Err(e) => return (Verdict::Fail, e.to_string()),
    };
    let mut scores: Vec<TrialScores> = Vec::new();
    for t in &trials {
        let Some(r) = results.iter().find(|r| r.trial.id == t.id) else { continue };
        let Some(bt) = &r.outcome.best_tweet else { return (Verdict::Fail, format!("{} kept no tweet-level snapshot", t.id)) };
        let bu = &r.outcome.best_user;
        scores.push(TrialScores {
            trial_id: t.id.clone(),
            config_label: t.id.clone(),
            best_tweet: (bt.tweet_accuracy.unwrap_or(0.0), bt.user_accuracy),
            best_user: (bu.tweet_accuracy.unwrap_or(0.0), bu.user_accuracy),
        });
    }
    match scatter_experiment(&scores) {
        Ok(rep) => (
            verdict(rep.gap >= 0.0),
            format!(
                "{} trials, validation user accuracy of the top 3: best-by-user {:.4}, best-by-tweet {:.4}, gap {:+.4}",
                scores.len(),
                rep.mean_user_best_user,
                rep.mean_user_best_tweet,
                rep.gap
            ),
        ),
        Err(e) => (Verdict::Fail, e.to_string()),
    }
}

// ---------------------------------------------------------------- determinism

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_authorprof"))
}

fn invoke(args: &[&str]) -> Result<String, String> {
    let out = bin().args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} exited {}: {}", out.status, String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).expect("readable dir") {
        let path = entry.expect("dir entry").path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else if path.file_name().is_some_and(|n| n != "run.json") {
            out.insert(path.strip_prefix(root).expect("under root").to_path_buf(), std::fs::read(&path).expect("readable"));
        }
    }
}

fn pipeline(inputs: &Path, out: &Path, threads: &str) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let p = |name: &str| inputs.join(name).display().to_string();
    let o = |name: &str| out.join(name).display().to_string();
    let common = ["--threads", threads];
    let run = |rest: &[&str]| invoke(&[&common[..], rest].concat());
    run(&["features", "fit", "--train", &p("train.jsonl"), "--k", "6", "--seed", "0", "--out", &o("proj.bin")])?;
    run(&["features", "transform", "--projector", &o("proj.bin"), "--data", &p("test.jsonl"), "--out", &o("test_lsa.tsv")])?;
    run(&[
        "train", "--train", &p("train.jsonl"), "--stratified", "--train-fraction", "0.75", "--model", "rnnwa-ngram",
        "--embeddings", &p("vectors.txt"), "--embed-dim", "16", "--projector", &o("proj.bin"), "--cells", "6",
        "--allow-off-grid", "--epochs", "3", "--lr", "0.01", "--batch-users", "4", "--seed", "0", "--out", &o("ngram"),
    ])?;
    run(&[
        "gridsearch", "--train", &p("train.jsonl"), "--model", "cnn", "--sizes", "3,4", "--lrs", "0.01,0.003",
        "--char-dim", "4", "--max-chars", "60", "--allow-off-grid", "--epochs", "2", "--batch-users", "4", "--seed", "1",
        "--out", &o("grid"),
    ])?;
    let ckpt = o("ngram/best_user.ckpt");
    run(&["predict", "--checkpoint", &ckpt, "--data", &p("test.jsonl"), "--embeddings", &p("vectors.txt"), "--out", &o("ngram_pred.tsv")])?;
    run(&["predict", "--checkpoint", &o("grid/best_user.ckpt"), "--data", &p("test.jsonl"), "--out", &o("cnn_pred.tsv")])?;
    let mut files = BTreeMap::new();
    collect_files(out, out, &mut files);
    Ok(files)
}

fn determinism() -> (Verdict, String) {
    let work = tempfile::tempdir().expect("temp dir");
    let inputs = work.path().join("inputs");
    std::fs::create_dir_all(&inputs).expect("mkdir");
    let spec = SyntheticSpec { users: 40, noise: 0.1, seed: 5, ..SyntheticSpec::default() };
    let data = synthetic_dataset(&spec);
    let (train_set, test_set) = split(&data, &SplitSpec { train_fraction: 0.75, seed: 1, stratified: true }).expect("split");
    corpus::write_jsonl(&train_set, &inputs.join("train.jsonl")).expect("write");
    corpus::write_jsonl(&test_set, &inputs.join("test.jsonl")).expect("write");
    std::fs::write(inputs.join("vectors.txt"), synthetic_embeddings_text(spec.filler_words, 16, 2)).expect("write");

    let runs: Result<Vec<_>, String> =
        [("a", "1"), ("b", "1"), ("c", "4")].iter().map(|(dir, threads)| pipeline(&inputs, &work.path().join(dir), threads)).collect();
    let runs = match runs {
        Ok(r) => r,
        Err(e) => return (Verdict::Fail, e),
    };
    let mut differing = Vec::new();
    for other in &runs[1..] {
        if other.keys().ne(runs[0].keys()) {
            differing.push("file sets".to_string());
        }
        for (path, bytes) in &runs[0] {
            if other.get(path) != Some(bytes) {
                differing.push(path.display().to_string());
            }
        }
    }
    let kinds = |ext: &str| runs[0].keys().filter(|p| p.extension().is_some_and(|e| e == ext)).count();
    let ok = differing.is_empty() && kinds("ckpt") > 0 && runs[0].keys().any(|p| p.ends_with("metrics.tsv"));
    let mut detail = format!(
        "3 runs (1, 1 and 4 threads) of fit, transform, train, gridsearch and predict: {} files ({} checkpoints, {} tsv)",
        runs[0].len(),
        kinds("ckpt"),
        kinds("tsv")
    );
    if differing.is_empty() {
        detail.push_str(", all byte-identical");
    } else {
        detail.push_str(&format!(", differing: {}", differing.join(", ")));
    }
    (verdict(ok), detail)
}

// ---------------------------------------------------------------- gated reproduction

fn accuracy_from(stdout: &str) -> Option<f64> {
    stdout.lines().find_map(|l| l.strip_prefix("user_accuracy\t")).and_then(|v| v.trim().parse().ok())
}

fn pan_reproduction() -> (Verdict, String) {
    let vars = ["PAN_EN_TRAIN_DIR", "PAN_EN_TEST_DIR", "GLOVE_TWITTER_200"];
    let values: Vec<Option<String>> = vars.iter().map(|v| std::env::var(v).ok()).collect();
    let [Some(train_dir), Some(test_dir), Some(glove)] = &values[..] else {
        let missing: Vec<&str> = vars.iter().zip(&values).filter(|(_, v)| v.is_none()).map(|(n, _)| *n).collect();
        return (Verdict::Skip, format!("set {} to run", missing.join(", ")));
    };
    let work = tempfile::tempdir().expect("temp dir");
    let w = |name: &str| work.path().join(name).display().to_string();
    let run = || -> Result<(f64, f64), String> {
        invoke(&["ingest", "--pan-dir", train_dir, "--lang", "en", "--out", &w("train.jsonl")])?;
        invoke(&["ingest", "--pan-dir", test_dir, "--lang", "en", "--out", &w("test.jsonl")])?;
        let common = ["--train", &w("train.jsonl"), "--embeddings", glove.as_str(), "--cells", "150", "--seed", "0"];
        invoke(&[&["train", "--model", "rnnwa"][..], &common, &["--out", &w("rnnwa")]].concat())?;
        invoke(&["features", "fit", "--train", &w("train.jsonl"), "--k", "300", "--seed", "0", "--out", &w("lsa.bin")])?;
        invoke(&[&["train", "--model", "rnnwa-ngram", "--projector", &w("lsa.bin")][..], &common, &["--out", &w("ngram")]].concat())?;
        let score = |dir: &str| -> Result<f64, String> {
            let out = invoke(&[
                "evaluate", "--checkpoint", &w(&format!("{dir}/best_user.ckpt")), "--data", &w("test.jsonl"), "--embeddings", glove,
            ])?;
            accuracy_from(&out).ok_or_else(|| format!("no accuracy in {out:?}"))
        };
        Ok((score("rnnwa")? * 100.0, score("ngram")? * 100.0))
    };
    match run() {
        Ok((plain, joint)) => {
            let ok = (plain - 81.79).abs() <= 2.0 && (joint - 82.31).abs() <= 2.0;
            (verdict(ok), format!("test user accuracy: rnnwa {plain:.2} (target 81.79 ± 2), rnnwa+ngram {joint:.2} (target 82.31 ± 2)"))
        }
        Err(e) => (Verdict::Fail, e),
    }
}
