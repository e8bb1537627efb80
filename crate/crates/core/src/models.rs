//! The five classifiers: RNN, RNNwA, CNN, CNNwA and RNNwA+n-gram.
//!
//! Every variant turns each tweet into a vector first. The RNN family runs a
//! bidirectional GRU over word embeddings and pools the states with
//! word-level attention; the CNN family runs the convolution bank over
//! character embeddings. Variants with tweet attention (`rnnwa`, `cnnwa`,
//! `rnnwa_ngram`) pool the tweet vectors into one user vector and classify
//! it. The averaging variants (`rnn`, `cnn`) classify every tweet, average
//! the class probabilities and use the log of the mean as user logits.
//!
//! Tweets with no real token (or character) are left out of the pool and get
//! weight zero; a user needs at least one non-empty tweet.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamId, ParamStore, Tape, Tensor, Var};
use rayon::prelude::*;

use crate::corpus::{Dataset, Gender, Lang};
use crate::features::{LsaProjector, UserDoc};
use crate::nn::{glorot, Attention, BiGru, ConvBank, Dense, CONV_WIDTHS};
use crate::text::{EncodedTweet, TweetEncoder, PAD, UNK};

pub const D_CELLS_GRID: [usize; 5] = [50, 75, 100, 125, 150];
pub const N_FILTERS_GRID: [usize; 4] = [50, 75, 100, 125];
pub const D_CHAR: usize = 25;
pub const EMBED_DIM: usize = 200;
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("{0} needs word embeddings")]
    MissingEmbeddings(Variant),
    #[error("{0} needs a character vocabulary")]
    MissingAlphabet(Variant),
    #[error("embedding dimension {got} does not match the configured {expected}")]
    EmbeddingDim { expected: usize, got: usize },
    #[error("every tweet of the user is empty after encoding")]
    NoTweets,
    #[error("expected an LSA vector of length {expected}, got {got}")]
    LsaLength { expected: usize, got: usize },
    #[error("the LSA vector contains a non-finite value")]
    LsaNonFinite,
    #[error("{0}")]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Rnn,
    Rnnwa,
    Cnn,
    Cnnwa,
    RnnwaNgram,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Rnn, Variant::Rnnwa, Variant::Cnn, Variant::Cnnwa, Variant::RnnwaNgram];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Rnn => "rnn",
            Variant::Rnnwa => "rnnwa",
            Variant::Cnn => "cnn",
            Variant::Cnnwa => "cnnwa",
            Variant::RnnwaNgram => "rnnwa_ngram",
        }
    }

    pub fn uses_words(self) -> bool {
        matches!(self, Variant::Rnn | Variant::Rnnwa | Variant::RnnwaNgram)
    }

    pub fn uses_chars(self) -> bool {
        !self.uses_words()
    }

    /// Whether tweets are pooled with attention rather than averaged.
    pub fn tweet_attention(self) -> bool {
        !matches!(self, Variant::Rnn | Variant::Cnn)
    }

    pub fn uses_ngrams(self) -> bool {
        self == Variant::RnnwaNgram
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    /// Accepts `rnnwa-ngram` as well as `rnnwa_ngram`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == norm)
            .ok_or_else(|| format!("unknown model {s:?} (expected rnn, rnnwa, cnn, cnnwa or rnnwa-ngram)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub lang: Lang,
    /// GRU units per direction.
    pub d_cells: usize,
    /// Filters per convolution width.
    pub n_filters: usize,
    pub d_char: usize,
    pub embed_dim: usize,
    pub max_tokens: usize,
    pub max_chars: usize,
    /// Length of the LSA vector fed to `rnnwa_ngram`.
    pub lsa_k: usize,
    pub seed: u64,
    /// Train the word embedding table instead of keeping it fixed.
    #[serde(default)]
    pub fine_tune_embeddings: bool,
    /// Allow sizes outside the validated grids (small test models).
    #[serde(default)]
    pub off_grid: bool,
}

impl ModelConfig {
    /// Validated defaults: 150 GRU cells for English and 100 otherwise, 100
    /// filters per width.
    pub fn new(variant: Variant, lang: Lang) -> Self {
        ModelConfig {
            variant,
            lang,
            d_cells: if lang == Lang::En { 150 } else { 100 },
            n_filters: 100,
            d_char: D_CHAR,
            embed_dim: EMBED_DIM,
            max_tokens: crate::text::DEFAULT_MAX_TOKENS,
            max_chars: crate::text::DEFAULT_MAX_CHARS,
            lsa_k: crate::features::DEFAULT_LSA_K,
            seed: 0,
            fine_tune_embeddings: false,
            off_grid: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.d_cells == 0 || self.n_filters == 0 || self.d_char == 0 || self.embed_dim == 0 || self.lsa_k == 0 {
            return bad("sizes must be positive".into());
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive".into());
        }
        if self.max_chars < CONV_WIDTHS[2] {
            return bad(format!("max_chars must be at least {}", CONV_WIDTHS[2]));
        }
        if !self.off_grid {
            if !D_CELLS_GRID.contains(&self.d_cells) {
                return bad(format!("d_cells {} is not one of {D_CELLS_GRID:?}", self.d_cells));
            }
            if !N_FILTERS_GRID.contains(&self.n_filters) {
                return bad(format!("n_filters {} is not one of {N_FILTERS_GRID:?}", self.n_filters));
            }
            if self.d_char != D_CHAR || self.embed_dim != EMBED_DIM {
                return bad(format!("d_char must be {D_CHAR} and embed_dim {EMBED_DIM}"));
            }
        }
        Ok(())
    }

    /// Size of the per-tweet and user vectors.
    pub fn repr_dim(&self) -> usize {
        if self.variant.uses_words() { 2 * self.d_cells } else { 3 * self.n_filters }
    }

    /// Short grid label, such as `d_cells=100`.
    pub fn size_label(&self) -> String {
        if self.variant.uses_words() {
            format!("d_cells={}", self.d_cells)
        } else {
            format!("n_filters={}", self.n_filters)
        }
    }

    /// The size that the grid varies for this variant.
    pub fn size(&self) -> usize {
        if self.variant.uses_words() { self.d_cells } else { self.n_filters }
    }
}

/// Word vectors for the RNN family.
#[derive(Clone, Debug)]
pub enum Embeddings {
    /// A fixed table indexed by vocabulary id.
    Frozen(Arc<Tensor>),
    /// A trainable table of `initial.rows()` rows; `rows[id]` is the row of
    /// vocabulary id `id`.
    Trainable { initial: Tensor, rows: Vec<usize> },
}

impl Embeddings {
    pub fn frozen(table: Tensor) -> Self {
        Embeddings::Frozen(Arc::new(table))
    }

    /// Keeps the padding and unknown rows plus `keep` (vocabulary ids, e.g.
    /// the tokens seen in training). Other ids map to the unknown row.
    pub fn fine_tune(table: &Tensor, keep: &[usize]) -> Self {
        let mut rows = vec![UNK; table.rows()];
        rows[PAD] = 0;
        rows[UNK] = 1;
        let mut data = Vec::with_capacity((keep.len() + 2) * table.cols());
        data.extend_from_slice(table.row(PAD));
        data.extend_from_slice(table.row(UNK));
        let mut next = 2;
        for &id in keep {
            if id > UNK && rows[id] == UNK {
                rows[id] = next;
                next += 1;
                data.extend_from_slice(table.row(id));
            }
        }
        Embeddings::Trainable { initial: Tensor::matrix(next, table.cols(), data), rows }
    }

    fn dim(&self) -> usize {
        match self {
            Embeddings::Frozen(t) => t.cols(),
            Embeddings::Trainable { initial, .. } => initial.cols(),
        }
    }
}

#[derive(Clone, Debug)]
enum WordInput {
    Frozen(Arc<Tensor>),
    Trainable { param: ParamId, rows: Vec<usize> },
}

#[derive(Clone, Debug)]
enum Encoder {
    Words { input: WordInput, gru: BiGru, attn: Attention },
    Chars { table: ParamId, conv: ConvBank },
}

/// Parameters and layers of one configured model.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    encoder: Encoder,
    tweet_attn: Option<Attention>,
    out: Dense,
}

/// What one user's forward pass leaves on the tape, plus plain values.
#[derive(Clone, Debug)]
pub struct UserForward {
    /// `(2,)` logits. For averaging variants these are log mean probabilities.
    pub logits: Var,
    /// Class probabilities of the user.
    pub probs: [f64; 2],
    /// Tweet-level attention weights over all input tweets (zero for empty
    /// ones); `None` for averaging variants.
    pub tweet_weights: Option<Vec<f64>>,
    /// Per-tweet class probabilities for averaging variants, `None` for empty
    /// tweets.
    pub tweet_probs: Option<Vec<Option<[f64; 2]>>>,
}

impl Model {
    /// Builds a freshly initialized model. `embeddings` is required by the RNN
    /// family and `char_vocab` (alphabet size including padding and unknown)
    /// by the CNN family.
    pub fn new(config: ModelConfig, embeddings: Option<Embeddings>, char_vocab: Option<usize>) -> Result<Self, ModelError> {
        config.validate()?;
        let v = config.variant;
        let prefix = v.as_str();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let d = config.repr_dim();
        let encoder = if v.uses_words() {
            let emb = embeddings.ok_or(ModelError::MissingEmbeddings(v))?;
            if emb.dim() != config.embed_dim {
                return Err(ModelError::EmbeddingDim { expected: config.embed_dim, got: emb.dim() });
            }
            let input = match emb {
                Embeddings::Frozen(t) => WordInput::Frozen(t),
                Embeddings::Trainable { initial, rows } => {
                    WordInput::Trainable { param: params.add(format!("{prefix}.embed.table"), initial, false)?, rows }
                }
            };
            let gru = BiGru::new(&mut params, &mut rng, &format!("{prefix}.word_gru"), config.embed_dim, config.d_cells)?;
            let attn = Attention::new(&mut params, &mut rng, &format!("{prefix}.word_attn"), d, d)?;
            Encoder::Words { input, gru, attn }
        } else {
            let n = char_vocab.ok_or(ModelError::MissingAlphabet(v))?;
            let init = glorot(&mut rng, &[n, config.d_char], n, config.d_char);
            let table = params.add(format!("{prefix}.char_embed.table"), init, false)?;
            let conv = ConvBank::new(&mut params, &mut rng, &format!("{prefix}.conv"), config.d_char, config.n_filters)?;
            Encoder::Chars { table, conv }
        };
        let tweet_attn = if v.tweet_attention() {
            Some(Attention::new(&mut params, &mut rng, &format!("{prefix}.tweet_attn"), d, d)?)
        } else {
            None
        };
        let d_out_in = if v.uses_ngrams() { d + config.lsa_k } else { d };
        let out = Dense::new(&mut params, &mut rng, &format!("{prefix}.out"), d_out_in, NUM_CLASSES)?;
        Ok(Model { config, params, encoder, tweet_attn, out })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Current parameter values in store order.
    pub fn values(&self) -> Vec<Tensor> {
        self.params.iter().map(|(_, p)| p.value.clone()).collect()
    }

    /// Replaces every parameter value; shapes must match store order.
    pub fn load_values(&mut self, values: &[Tensor]) -> Result<(), ModelError> {
        if values.len() != self.params.len() {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} tensors, got {}",
                self.params.len(),
                values.len()
            )));
        }
        let ids: Vec<ParamId> = self.params.iter().map(|(id, _)| id).collect();
        for (id, v) in ids.into_iter().zip(values) {
            self.params.set_value(id, v.clone())?;
        }
        Ok(())
    }

    /// Rows of the trainable word table, if any, keyed by vocabulary id.
    pub fn trainable_rows(&self) -> Option<&[usize]> {
        match &self.encoder {
            Encoder::Words { input: WordInput::Trainable { rows, .. }, .. } => Some(rows),
            _ => None,
        }
    }

    /// Copies every parameter of `other` whose name matches after the model
    /// prefix, except the output layer. Returns how many were copied.
    pub fn init_from(&mut self, other: &Model) -> Result<usize, ModelError> {
        let theirs: BTreeMap<&str, &Tensor> = other
            .params
            .iter()
            .filter_map(|(_, p)| p.name.split_once('.').map(|(_, rest)| (rest, &p.value)))
            .collect();
        let mut copied = 0;
        let ids: Vec<(ParamId, String)> = self.params.iter().map(|(id, p)| (id, p.name.clone())).collect();
        for (id, name) in ids {
            let Some((_, rest)) = name.split_once('.') else { continue };
            if rest.starts_with("out.") {
                continue;
            }
            if let Some(t) = theirs.get(rest) {
                if t.shape() == self.params.value(id).shape() {
                    self.params.set_value(id, (*t).clone())?;
                    copied += 1;
                }
            }
        }
        Ok(copied)
    }

    /// Indices of tweets with at least one real unit for this variant.
    fn non_empty(&self, tweets: &[EncodedTweet]) -> Vec<usize> {
        let words = self.config.variant.uses_words();
        (0..tweets.len())
            .filter(|&i| if words { tweets[i].word_len() > 0 } else { tweets[i].char_len() > 0 })
            .collect()
    }

    /// Stacked tweet vectors `(n, d)` for the given non-empty tweets.
    fn encode_tweets(&self, tape: &mut Tape, tweets: &[&EncodedTweet]) -> Result<Var, ModelError> {
        match &self.encoder {
            Encoder::Words { input, gru, attn } => {
                let n = tweets.len();
                let lens: Vec<usize> = tweets.iter().map(|t| t.word_len()).collect();
                let steps = *lens.iter().max().expect("non-empty");
                let mut ids = Vec::with_capacity(steps * n);
                let mut mask = Vec::with_capacity(steps * n);
                for t in 0..steps {
                    for tw in tweets {
                        let real = t < tw.word_ids.len() && tw.word_mask[t] != 0;
                        ids.push(if real { tw.word_ids[t] } else { PAD });
                        mask.push(u8::from(real));
                    }
                }
                let inputs = match input {
                    WordInput::Frozen(table) => {
                        let d = table.cols();
                        let mut data = Vec::with_capacity(ids.len() * d);
                        for &id in &ids {
                            data.extend_from_slice(table.row(id));
                        }
                        tape.constant(Tensor::matrix(ids.len(), d, data))
                    }
                    WordInput::Trainable { param, rows } => {
                        let table = tape.param(*param);
                        let mapped: Vec<usize> = ids.iter().map(|&id| rows.get(id).copied().unwrap_or(UNK)).collect();
                        tape.gather_rows(table, &mapped)?
                    }
                };
                let states = gru.encode_batch(tape, inputs, n, &mask)?;
                // Real positions only, tweet by tweet.
                let mut order = Vec::new();
                let mut segments = Vec::with_capacity(n);
                for (i, tw) in tweets.iter().enumerate() {
                    let start = order.len();
                    for t in 0..steps {
                        if t < tw.word_mask.len() && tw.word_mask[t] != 0 {
                            order.push(t * n + i);
                        }
                    }
                    segments.push(start..order.len());
                }
                let real = tape.gather_rows(states, &order)?;
                let (pooled, _) = attn.pool_segments(tape, real, &segments)?;
                Ok(pooled)
            }
            Encoder::Chars { table, conv } => {
                let max_w = CONV_WIDTHS[2];
                let mut vecs = Vec::with_capacity(tweets.len());
                for tw in tweets {
                    let len = tw.char_len();
                    let span = (len + max_w - 1).max(max_w).min(self.config.max_chars);
                    let mut ids = Vec::with_capacity(span);
                    let mut mask = Vec::with_capacity(span);
                    for s in 0..span {
                        let real = s < tw.char_ids.len() && tw.char_mask[s] != 0;
                        ids.push(if real { tw.char_ids[s] } else { PAD });
                        mask.push(u8::from(real));
                    }
                    let tab = tape.param(*table);
                    let emb = tape.gather_rows(tab, &ids)?;
                    vecs.push(conv.encode(tape, emb, &mask)?);
                }
                let flat = tape.concat(&vecs, 0)?;
                Ok(tape.reshape(flat, &[tweets.len(), conv.out_dim()])?)
            }
        }
    }

    /// Runs one user. `lsa` is required for `rnnwa_ngram` and ignored otherwise.
    pub fn forward_user(
        &self,
        tape: &mut Tape,
        tweets: &[EncodedTweet],
        lsa: Option<&[f64]>,
    ) -> Result<UserForward, ModelError> {
        let keep = self.non_empty(tweets);
        if keep.is_empty() {
            return Err(ModelError::NoTweets);
        }
        let kept: Vec<&EncodedTweet> = keep.iter().map(|&i| &tweets[i]).collect();
        let n = kept.len();
        let vectors = self.encode_tweets(tape, &kept)?;
        match &self.tweet_attn {
            Some(attn) => {
                let (k, v) = attn.pool(tape, vectors, &vec![1.0; n])?;
                let input = if self.config.variant.uses_ngrams() {
                    let z = lsa.unwrap_or(&[]);
                    if z.len() != self.config.lsa_k {
                        return Err(ModelError::LsaLength { expected: self.config.lsa_k, got: z.len() });
                    }
                    if z.iter().any(|x| !x.is_finite()) {
                        return Err(ModelError::LsaNonFinite);
                    }
                    let z = tape.constant(Tensor::vector(z.to_vec()));
                    tape.concat(&[k, z], 0)?
                } else {
                    k
                };
                let logits = self.out.forward(tape, input)?;
                let p = tape.masked_softmax(logits, &[1.0; NUM_CLASSES])?;
                let p = tape.value(p).data();
                let mut weights = vec![0.0; tweets.len()];
                for (&i, &w) in keep.iter().zip(tape.value(v).data()) {
                    weights[i] = w;
                }
                Ok(UserForward { logits, probs: [p[0], p[1]], tweet_weights: Some(weights), tweet_probs: None })
            }
            None => {
                let per_tweet = self.out.forward(tape, vectors)?;
                let probs = tape.masked_softmax(per_tweet, &vec![1.0; n * NUM_CLASSES])?;
                let total = tape.reduce_sum(probs, Some(0))?;
                let mean = tape.scale(total, 1.0 / n as f64)?;
                let logits = tape.log(mean)?;
                let m = tape.value(mean).data();
                let user = [m[0], m[1]];
                let mut tweet_probs = vec![None; tweets.len()];
                let pt = tape.value(probs);
                for (r, &i) in keep.iter().enumerate() {
                    tweet_probs[i] = Some([pt.get(r, 0), pt.get(r, 1)]);
                }
                Ok(UserForward { logits, probs: user, tweet_weights: None, tweet_probs: Some(tweet_probs) })
            }
        }
    }

    /// Forward pass without gradients.
    pub fn predict_user(&self, tweets: &[EncodedTweet], lsa: Option<&[f64]>) -> Result<UserForward, ModelError> {
        let mut tape = Tape::new(&self.params);
        self.forward_user(&mut tape, tweets, lsa)
    }

    /// Cross-entropy of one user against `label`, left on the tape.
    pub fn user_loss(
        &self,
        tape: &mut Tape,
        tweets: &[EncodedTweet],
        lsa: Option<&[f64]>,
        label: usize,
    ) -> Result<(Var, UserForward), ModelError> {
        let fwd = self.forward_user(tape, tweets, lsa)?;
        let row = tape.reshape(fwd.logits, &[1, NUM_CLASSES])?;
        let loss = tape.cross_entropy(row, &[label])?;
        Ok((loss, fwd))
    }
}

/// A user ready for the model: encoded tweets, the optional LSA vector and
/// the optional label.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedUser {
    pub user_id: String,
    pub tweets: Vec<EncodedTweet>,
    pub lsa: Option<Vec<f64>>,
    pub label: Option<Gender>,
}

/// Encodes every user of `dataset`; `projector` supplies LSA vectors.
pub fn encode_dataset(dataset: &Dataset, encoder: &TweetEncoder<'_>, projector: Option<&LsaProjector>) -> Vec<EncodedUser> {
    dataset
        .users()
        .par_iter()
        .map(|u| EncodedUser {
            user_id: u.user_id.clone(),
            tweets: u.tweets.iter().map(|t| encoder.encode(t.text())).collect(),
            lsa: projector.map(|p| p.transform(&UserDoc::from_user(u))),
            label: u.label,
        })
        .collect()
}

#[cfg(test)]
mod tests;
