//! Saved models.
//!
//! A checkpoint file is one line of JSON (the manifest) followed by the raw
//! parameter values as little-endian `f32`, tensor after tensor in manifest
//! order. The manifest carries everything needed to rebuild the model except
//! the pretrained word vectors, which are identified by their SHA-256.

use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::features::{FeaturesError, LsaFit, LsaProjector, NgramSpec, TfidfModel};
use crate::models::{Embeddings, Model, ModelConfig, ModelError};
use crate::text::{CharAlphabet, Vocabulary};

pub const FORMAT_VERSION: u32 = 1;
const LSA_COMPONENTS: &str = "lsa.components";
const LSA_SINGULAR_VALUES: &str = "lsa.singular_values";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Stream(#[from] io::Error),
    #[error("bad manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("the model was trained with embeddings {expected}, but the given file has digest {got}")]
    EmbeddingsMismatch { expected: String, got: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Features(#[from] FeaturesError),
}

/// How the saved parameters were chosen.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub trial_id: String,
    /// `best_user`, `best_tweet` or `last`.
    pub selection: String,
    pub epoch: usize,
    pub val_user_accuracy: Option<f64>,
    pub val_tweet_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Tensor,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    byte_offset: usize,
    byte_length: usize,
}

#[derive(Serialize, Deserialize)]
struct Header<T> {
    format_version: u32,
    kind: String,
    #[serde(rename = "content")]
    body: T,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TfidfEntry {
    spec: NgramSpec,
    features: Vec<String>,
    idf: Vec<f64>,
    requested_k: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelBody {
    model_config: ModelConfig,
    meta: CheckpointMeta,
    #[serde(skip_serializing_if = "Option::is_none")]
    alphabet: Option<CharAlphabet>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tfidf: Option<TfidfEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trainable_tokens: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    embeddings_sha256: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ProjectorBody {
    spec: NgramSpec,
    requested_k: usize,
}

/// Writes the manifest line and the packed `f32` values.
fn write_container<T: Serialize>(w: &mut impl Write, kind: &str, body: T, tensors: &[(&str, &Tensor)]) -> Result<(), CheckpointError> {
    let mut offset = 0;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                byte_offset: offset,
                byte_length: 4 * t.len(),
            };
            offset += e.byte_length;
            e
        })
        .collect();
    let header = Header { format_version: FORMAT_VERSION, kind: kind.to_string(), body, tensors: entries };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    for (_, t) in tensors {
        let mut buf = Vec::with_capacity(t.len() * 4);
        for &x in t.data() {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_container<T: DeserializeOwned>(r: impl Read, kind: &str) -> Result<(T, Vec<NamedTensor>), CheckpointError> {
    let bad = |m: String| CheckpointError::Format(m);
    let mut r = BufReader::new(r);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(bad("missing manifest line".into()));
    }
    let header: Header<serde_json::Value> = serde_json::from_slice(&line)?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {}", header.format_version)));
    }
    if header.kind != kind {
        return Err(bad(format!("expected a {kind} file, found {}", header.kind)));
    }
    let body: T = serde_json::from_value(header.body)?;
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;
    let mut offset = 0;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        if e.dtype != "f32" {
            return Err(bad(format!("tensor {}: unsupported dtype {}", e.name, e.dtype)));
        }
        if e.byte_offset != offset || e.byte_length != 4 * n {
            return Err(bad(format!("tensor {}: offsets are not contiguous", e.name)));
        }
        let Some(bytes) = blob.get(offset..offset + e.byte_length) else {
            return Err(bad(format!("tensor {}: value blob is truncated", e.name)));
        };
        offset += e.byte_length;
        let data: Vec<f64> =
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(bad(format!("tensor {} has non-finite values", e.name)));
        }
        let value = Tensor::new(e.shape, data).map_err(|err| bad(format!("{}: {err}", e.name)))?;
        tensors.push(NamedTensor { name: e.name, value });
    }
    if offset != blob.len() {
        return Err(bad(format!("{} trailing bytes after the last tensor", blob.len() - offset)));
    }
    Ok((body, tensors))
}

/// The projector as it will be after a save and load: basis and singular
/// values rounded to `f32`.
pub fn f32_projector(p: &LsaProjector) -> LsaProjector {
    let (components, sv) = lsa_tensors(&p.fit);
    let fit = LsaFit { components, singular_values: sv.data().to_vec(), requested_k: p.fit.requested_k };
    LsaProjector { tfidf: p.tfidf.clone(), fit }
}

fn lsa_tensors(fit: &LsaFit) -> (Tensor, Tensor) {
    (round_f32(&fit.components), Tensor::vector(fit.singular_values.iter().map(|&x| x as f32 as f64).collect()))
}

fn take_lsa(tensors: &mut Vec<NamedTensor>, requested_k: usize) -> Result<Option<LsaFit>, CheckpointError> {
    let n = tensors.len();
    if n < 2 || tensors[n - 2].name != LSA_COMPONENTS || tensors[n - 1].name != LSA_SINGULAR_VALUES {
        return Ok(None);
    }
    let sv = tensors.pop().expect("checked");
    let comp = tensors.pop().expect("checked");
    if comp.value.shape().len() != 2 || comp.value.cols() != sv.value.len() {
        return Err(CheckpointError::Format("LSA tensors disagree on k".into()));
    }
    Ok(Some(LsaFit { components: comp.value, singular_values: sv.value.data().to_vec(), requested_k }))
}

/// Path of the tf-idf mapping written next to a projector file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".tfidf.tsv");
    PathBuf::from(s)
}

/// Saves the LSA basis as a container and the tf-idf mapping as a sidecar.
/// The basis is stored as `f32`, like model parameters.
pub fn save_projector(path: &Path, projector: &LsaProjector) -> Result<(), CheckpointError> {
    let (comp, sv) = lsa_tensors(&projector.fit);
    let body = ProjectorBody { spec: projector.tfidf.spec().clone(), requested_k: projector.fit.requested_k };
    let mut buf = Vec::new();
    write_container(&mut buf, "lsa_projector", body, &[(LSA_COMPONENTS, &comp), (LSA_SINGULAR_VALUES, &sv)])?;
    let mut side = Vec::new();
    crate::features::write_sidecar(&projector.tfidf, &mut side)?;
    write_atomic(&sidecar_path(path), &side)?;
    write_atomic(path, &buf)
}

pub fn load_projector(path: &Path) -> Result<LsaProjector, CheckpointError> {
    let io_err = |p: &Path, source| CheckpointError::Io { path: p.to_path_buf(), source };
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let (body, mut tensors): (ProjectorBody, _) = read_container(file, "lsa_projector")?;
    let fit = take_lsa(&mut tensors, body.requested_k)?
        .filter(|_| tensors.is_empty())
        .ok_or_else(|| CheckpointError::Format("expected exactly the LSA tensors".into()))?;
    let side = sidecar_path(path);
    let reader = BufReader::new(fs::File::open(&side).map_err(|e| io_err(&side, e))?);
    let tfidf = crate::features::read_sidecar(reader, body.spec)?;
    Ok(LsaProjector::new(tfidf, fit)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub meta: CheckpointMeta,
    /// Model parameters in store order. Values are rounded to `f32`.
    pub params: Vec<NamedTensor>,
    pub alphabet: Option<CharAlphabet>,
    pub projector: Option<LsaProjector>,
    /// Tokens of the fine-tuned table rows after padding and unknown.
    pub trainable_tokens: Option<Vec<String>>,
    pub embeddings_sha256: Option<String>,
}

fn round_f32(t: &Tensor) -> Tensor {
    let data = t.data().iter().map(|&x| x as f32 as f64).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

impl Checkpoint {
    /// Captures `model`. `vocab` is needed when the word table is trainable.
    pub fn from_model(
        model: &Model,
        alphabet: Option<&CharAlphabet>,
        projector: Option<&LsaProjector>,
        vocab: Option<&Vocabulary>,
        embeddings_sha256: Option<String>,
        meta: CheckpointMeta,
    ) -> Result<Self, CheckpointError> {
        let params = model
            .params()
            .iter()
            .map(|(_, p)| NamedTensor { name: p.name.clone(), value: round_f32(&p.value) })
            .collect();
        let trainable_tokens = match model.trainable_rows() {
            None => None,
            Some(rows) => {
                let vocab = vocab.ok_or_else(|| CheckpointError::Format("a fine-tuned model needs its vocabulary".into()))?;
                let table_rows = rows.iter().max().map_or(2, |&m| m + 1);
                let mut tokens = vec![String::new(); table_rows.saturating_sub(2)];
                for (id, &row) in rows.iter().enumerate() {
                    if row >= 2 {
                        tokens[row - 2] = vocab.token(id).to_string();
                    }
                }
                Some(tokens)
            }
        };
        let projector = projector.map(f32_projector);
        Ok(Checkpoint {
            config: model.config().clone(),
            meta,
            params,
            alphabet: alphabet.cloned(),
            projector,
            trainable_tokens,
            embeddings_sha256,
        })
    }

    /// Rebuilds the model. The RNN family needs the same word vectors it was
    /// trained with, given as vocabulary and table.
    pub fn build_model(&self, words: Option<(&Vocabulary, &Tensor)>) -> Result<Model, CheckpointError> {
        let embeddings = match (self.config.variant.uses_words(), words) {
            (false, _) => None,
            (true, None) => return Err(ModelError::MissingEmbeddings(self.config.variant).into()),
            (true, Some((vocab, table))) => Some(match &self.trainable_tokens {
                None => Embeddings::frozen(table.clone()),
                Some(tokens) => {
                    let keep: Vec<usize> = tokens.iter().map(|t| vocab.id(t)).collect();
                    if let Some(t) = tokens.iter().find(|t| !vocab.contains(t)) {
                        return Err(CheckpointError::Format(format!("fine-tuned token {t:?} is not in the vocabulary")));
                    }
                    Embeddings::fine_tune(table, &keep)
                }
            }),
        };
        let mut model = Model::new(self.config.clone(), embeddings, self.alphabet.as_ref().map(|a| a.len()))?;
        let names: Vec<&str> = model.params().iter().map(|(_, p)| p.name.as_str()).collect();
        let saved: Vec<&str> = self.params.iter().map(|p| p.name.as_str()).collect();
        if names != saved {
            return Err(CheckpointError::Format("saved parameters do not match the configured model".into()));
        }
        let values: Vec<Tensor> = self.params.iter().map(|p| p.value.clone()).collect();
        model.load_values(&values)?;
        Ok(model)
    }

    pub fn write(&self, w: &mut impl Write) -> Result<(), CheckpointError> {
        let mut tensors: Vec<(&str, &Tensor)> = self.params.iter().map(|p| (p.name.as_str(), &p.value)).collect();
        let lsa = self.projector.as_ref().map(|p| lsa_tensors(&p.fit));
        if let Some((comp, sv)) = &lsa {
            tensors.push((LSA_COMPONENTS, comp));
            tensors.push((LSA_SINGULAR_VALUES, sv));
        }
        let body = ModelBody {
            model_config: self.config.clone(),
            meta: self.meta.clone(),
            alphabet: self.alphabet.clone(),
            tfidf: self.projector.as_ref().map(|p| TfidfEntry {
                spec: p.tfidf.spec().clone(),
                features: p.tfidf.features().to_vec(),
                idf: p.tfidf.idf().to_vec(),
                requested_k: p.fit.requested_k,
            }),
            trainable_tokens: self.trainable_tokens.clone(),
            embeddings_sha256: self.embeddings_sha256.clone(),
        };
        write_container(w, "model", body, &tensors)
    }

    pub fn read(r: impl Read) -> Result<Self, CheckpointError> {
        let (body, mut tensors): (ModelBody, _) = read_container(r, "model")?;
        let fit = take_lsa(&mut tensors, body.tfidf.as_ref().map_or(0, |t| t.requested_k))?;
        let projector = match (body.tfidf, fit) {
            (None, None) => None,
            (Some(tf), Some(fit)) => Some(LsaProjector::new(TfidfModel::from_parts(tf.spec, tf.features, tf.idf), fit)?),
            _ => return Err(CheckpointError::Format("incomplete n-gram features".into())),
        };
        Ok(Checkpoint {
            config: body.model_config,
            meta: body.meta,
            params: tensors,
            alphabet: body.alphabet.map(CharAlphabet::reindexed),
            projector,
            trainable_tokens: body.trainable_tokens,
            embeddings_sha256: body.embeddings_sha256,
        })
    }

    /// Writes to a temporary file next to `path`, then renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let file = fs::File::open(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
        Checkpoint::read(file)
    }

    /// Fails unless `digest` matches the digest recorded at training time.
    pub fn check_embeddings(&self, digest: &str) -> Result<(), CheckpointError> {
        match &self.embeddings_sha256 {
            Some(expected) if expected != digest => {
                Err(CheckpointError::EmbeddingsMismatch { expected: expected.clone(), got: digest.to_string() })
            }
            _ => Ok(()),
        }
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    fs::write(&tmp, bytes).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String, CheckpointError> {
    let io_err = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let mut file = fs::File::open(path).map_err(io_err)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = file.read(&mut buf).map_err(io_err)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
