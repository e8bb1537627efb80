//! Tokenization, vocabularies, pretrained embeddings and fixed-length encoding.
//!
//! # Tokenizer rules
//!
//! 1. Lower-case the whole input.
//! 2. Split on Unicode whitespace into chunks.
//! 3. A chunk that is an emoticon from [`EMOTICONS`] is one token.
//! 4. A chunk starting with `http://`, `https://` or `www.` is one token.
//! 5. Otherwise leading and trailing punctuation characters (anything that is
//!    not alphanumeric) are peeled off one character per token. Peeling stops
//!    at `@` or `#` followed by an alphanumeric character or `_`, so mentions
//!    and hashtags survive. Punctuation inside a chunk stays (`don't`).
//!
//! | input                            | tokens                                   |
//! |----------------------------------|------------------------------------------|
//! | `Hello, WORLD`                   | `hello` `,` `world`                      |
//! | `check https://t.co/x #cool :-)` | `check` `https://t.co/x` `#cool` `:-)`   |
//! | `(@Bob!)`                        | `(` `@bob` `!` `)`                       |

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const DEFAULT_MAX_TOKENS: usize = 40;
pub const DEFAULT_MAX_CHARS: usize = 150;
/// Characters seen fewer times in training map to the unknown id.
pub const ALPHABET_MIN_FREQ: usize = 2;

/// Emoticons kept as single tokens (matched after lower-casing).
pub const EMOTICONS: &[&str] = &[
    ":)", ":-)", ":(", ":-(", ":d", ":-d", ";)", ";-)", ";d", ":p", ":-p", ";p", ":/", ":-/",
    ":'(", ":')", "<3", "</3", ":o", ":-o", "^^", "^_^", ":*", ":-*", "=)", "=(", "=d", ":|",
    ":-|", "-_-", "o_o", ":]", ":[", ">:(", ":3", "xd", "8)", "b)",
];

#[derive(Debug, Error)]
pub enum TextError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: expected token plus {expected} values, found {found} fields")]
    Arity { line: usize, expected: usize, found: usize },
    #[error("line {line}: bad number {value:?}")]
    BadNumber { line: usize, value: String },
    #[error("line {line}: duplicate token {token:?}")]
    DuplicateToken { line: usize, token: String },
    #[error("embedding file has no vectors")]
    Empty,
    #[error("embedding dimension must be positive")]
    ZeroDim,
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

fn is_url(chunk: &str) -> bool {
    chunk.starts_with("http://") || chunk.starts_with("https://") || chunk.starts_with("www.")
}

pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    for chunk in lower.split_whitespace() {
        if EMOTICONS.contains(&chunk) || is_url(chunk) {
            tokens.push(chunk.to_string());
            continue;
        }
        let chars: Vec<char> = chunk.chars().collect();
        let mut start = 0;
        while start < chars.len() && is_punct(chars[start]) {
            let c = chars[start];
            let opens_tag = (c == '@' || c == '#')
                && chars.get(start + 1).is_some_and(|&n| n.is_alphanumeric() || n == '_');
            if opens_tag {
                break;
            }
            tokens.push(c.to_string());
            start += 1;
        }
        let mut end = chars.len();
        while end > start && is_punct(chars[end - 1]) {
            end -= 1;
        }
        if end > start {
            tokens.push(chars[start..end].iter().collect());
        }
        for &c in &chars[end.max(start)..] {
            tokens.push(c.to_string());
        }
    }
    tokens
}

/// Token index for the word embedding table. Ids 0 and 1 are padding and
/// unknown; file tokens follow in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    tokens: Vec<String>,
    embedding_dim: usize,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, embedding_dim: usize) -> Result<Self, TextError> {
        let mut all = vec!["<pad>".to_string(), "<unk>".to_string()];
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.into_iter().enumerate() {
            if token_to_id.insert(t.clone(), all.len()).is_some() {
                return Err(TextError::DuplicateToken { line: i + 1, token: t });
            }
            all.push(t);
        }
        Ok(Vocabulary { token_to_id, tokens: all, embedding_dim })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// File tokens without the two special entries.
    pub fn file_tokens(&self) -> &[String] {
        &self.tokens[2..]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.matrix.row(id)
    }

    /// Rows for `ids`, stacked into a `(len, dim)` matrix.
    pub fn lookup(&self, ids: &[usize]) -> Tensor {
        let d = self.dim();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(self.row(i));
        }
        Tensor::matrix(ids.len(), d, data)
    }
}

/// Loads whitespace-separated text embeddings (`token v1 ... v_dim`).
pub fn load_embeddings(path: &Path, dim: usize) -> Result<(Vocabulary, EmbeddingTable), TextError> {
    load_embeddings_filtered(path, dim, None)
}

/// Like [`load_embeddings`] but keeps only tokens in `keep`. The unknown row is
/// still the mean over every vector in the file, so lookups of kept tokens
/// behave exactly as with the full table.
pub fn load_embeddings_filtered(
    path: &Path,
    dim: usize,
    keep: Option<&HashSet<String>>,
) -> Result<(Vocabulary, EmbeddingTable), TextError> {
    let file = fs::File::open(path).map_err(|source| TextError::Io { path: path.to_path_buf(), source })?;
    read_embeddings(BufReader::new(file), dim, keep)
        .map_err(|e| match e {
            TextError::Io { source, .. } => TextError::Io { path: path.to_path_buf(), source },
            other => other,
        })
}

pub fn read_embeddings(
    reader: impl BufRead,
    dim: usize,
    keep: Option<&HashSet<String>>,
) -> Result<(Vocabulary, EmbeddingTable), TextError> {
    if dim == 0 {
        return Err(TextError::ZeroDim);
    }
    let mut seen: HashSet<String> = HashSet::new();
    let mut tokens = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut sum = vec![0.0; dim];
    let mut count = 0usize;
    let mut values = vec![0.0; dim];
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| TextError::Io { path: PathBuf::new(), source })?;
        let line = line.trim_end_matches(['\r', '\n']);
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() != dim + 1 || fields[0].is_empty() {
            return Err(TextError::Arity { line: line_no, expected: dim, found: fields.len() });
        }
        for (v, f) in values.iter_mut().zip(&fields[1..]) {
            *v = f
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| TextError::BadNumber { line: line_no, value: f.to_string() })?;
        }
        let token = fields[0];
        if !seen.insert(token.to_string()) {
            return Err(TextError::DuplicateToken { line: line_no, token: token.to_string() });
        }
        for (s, v) in sum.iter_mut().zip(&values) {
            *s += v;
        }
        count += 1;
        if keep.is_none_or(|k| k.contains(token)) {
            tokens.push(token.to_string());
            rows.extend_from_slice(&values);
        }
    }
    if count == 0 {
        return Err(TextError::Empty);
    }
    let vocab = Vocabulary::new(tokens, dim)?;
    let mut data = vec![0.0; dim];
    data.extend(sum.iter().map(|s| s / count as f64));
    data.extend(rows);
    let matrix = Tensor::matrix(vocab.len(), dim, data);
    Ok((vocab, EmbeddingTable { matrix, trainable: false }))
}

/// Character index for the CNN path. Ids 0 and 1 are padding and unknown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharAlphabet {
    chars: Vec<char>,
    #[serde(skip)]
    index: HashMap<char, usize>,
}

impl CharAlphabet {
    /// Every lower-cased character occurring at least `min_freq` times,
    /// in code point order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts: BTreeMap<char, usize> = BTreeMap::new();
        for t in texts {
            for c in t.to_lowercase().chars() {
                *counts.entry(c).or_default() += 1;
            }
        }
        let chars = counts.into_iter().filter(|&(_, n)| n >= min_freq).map(|(c, _)| c).collect();
        Self::from_chars(chars)
    }

    pub fn from_chars(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + 2)).collect();
        CharAlphabet { chars, index }
    }

    /// Number of ids including padding and unknown.
    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id(&self, c: char) -> usize {
        if self.index.len() != self.chars.len() {
            // Deserialized without the index.
            return self.chars.iter().position(|&x| x == c).map_or(UNK, |i| i + 2);
        }
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn reindexed(self) -> Self {
        Self::from_chars(self.chars)
    }
}

/// Fixed-length ids and masks for one tweet. A part the model does not use
/// is left empty.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedTweet {
    pub word_ids: Vec<usize>,
    pub word_mask: Vec<u8>,
    pub char_ids: Vec<usize>,
    pub char_mask: Vec<u8>,
}

impl EncodedTweet {
    pub fn word_len(&self) -> usize {
        self.word_mask.iter().filter(|&&m| m == 1).count()
    }

    pub fn char_len(&self) -> usize {
        self.char_mask.iter().filter(|&&m| m == 1).count()
    }
}

fn pad_to(mut ids: Vec<usize>, max: usize) -> (Vec<usize>, Vec<u8>) {
    ids.truncate(max);
    let mut mask = vec![1u8; ids.len()];
    ids.resize(max, PAD);
    mask.resize(max, 0);
    (ids, mask)
}

pub fn encode_words(tokens: &[String], vocab: &Vocabulary, max_tokens: usize) -> (Vec<usize>, Vec<u8>) {
    let ids = tokens.iter().take(max_tokens).map(|t| vocab.id(t)).collect();
    pad_to(ids, max_tokens)
}

pub fn encode_chars(text: &str, alphabet: &CharAlphabet, max_chars: usize) -> (Vec<usize>, Vec<u8>) {
    let ids = text.to_lowercase().chars().take(max_chars).map(|c| alphabet.id(c)).collect();
    pad_to(ids, max_chars)
}

/// Bundles the lookups a model needs to turn raw tweets into [`EncodedTweet`]s.
#[derive(Clone, Debug)]
pub struct TweetEncoder<'a> {
    pub vocab: Option<&'a Vocabulary>,
    pub alphabet: Option<&'a CharAlphabet>,
    pub max_tokens: usize,
    pub max_chars: usize,
}

impl TweetEncoder<'_> {
    pub fn encode(&self, text: &str) -> EncodedTweet {
        let (word_ids, word_mask) = match self.vocab {
            Some(v) => encode_words(&tokenize(text), v, self.max_tokens),
            None => (Vec::new(), Vec::new()),
        };
        let (char_ids, char_mask) = match self.alphabet {
            Some(a) => encode_chars(text, a, self.max_chars),
            None => (Vec::new(), Vec::new()),
        };
        EncodedTweet { word_ids, word_mask, char_ids, char_mask }
    }
}
