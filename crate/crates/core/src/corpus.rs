//! Author corpora: PAN-style XML directories, JSONL files and train/validation splits.
//!
//! # JSONL format
//!
//! One UTF-8 object per LF-terminated line:
//!
//! ```text
//! {"user_id":"u1","lang":"en","tweets":["first tweet","second"],"label":"female"}
//! ```
//!
//! `label` is optional. [`write_jsonl`] emits keys in exactly this order and
//! omits `label` when absent.
//!
//! # PAN layout
//!
//! `<dir>/<user_id>.xml` holds an `<author>` root with one `<document>` per
//! tweet (text node or CDATA). `<dir>/truth.txt` holds `user_id:::gender`
//! lines. Gender tokens are matched case-insensitively; anything other than
//! `female` or `male` is rejected.
//!
//! # Splits
//!
//! [`split`] shuffles users with SplitMix64 (state initialized to the seed;
//! each draw adds `0x9e3779b97f4a7c15` and applies the standard 64-bit
//! finalizer) using a backward Fisher-Yates pass: for `i` from `n-1` down to
//! `1`, swap positions `i` and `next_u64() % (i+1)`. The first
//! `ceil(train_fraction * n)` shuffled users form the training part.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use quick_xml::events::Event;
use quick_xml::Reader;
use rand::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_TWEET_BYTES: usize = 5000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("user {0} has an XML file but no truth.txt entry")]
    MissingTruth(String),
    #[error("user {0} is listed in truth.txt but has no XML file")]
    MissingFile(String),
    #[error("{file}: malformed XML at byte {offset}: {message}")]
    Xml { file: PathBuf, offset: u64, message: String },
    #[error("truth.txt line {line}: unknown gender token {token:?}")]
    UnknownGender { line: usize, token: String },
    #[error("truth.txt line {line}: expected `user_id:::gender`, got {content:?}")]
    BadTruthLine { line: usize, content: String },
    #[error("duplicate user_id {0}")]
    DuplicateUser(String),
    #[error("line {line}: language {found} differs from dataset language {expected}")]
    MixedLanguages { line: usize, expected: Lang, found: Lang },
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("user {user_id}, tweet {index}: {reason}")]
    InvalidTweet { user_id: String, index: usize, reason: TweetError },
    #[error("user {0} has no tweets")]
    NoTweets(String),
    #[error("users do not share a language: {0} and {1}")]
    LanguageMismatch(Lang, Lang),
    #[error("split requires a labeled dataset")]
    Unlabeled,
    #[error("train_fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("split of {total} users leaves {train} for training and {validation} for validation")]
    EmptySide { total: usize, train: usize, validation: usize },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    En,
    Es,
    Ar,
}

impl Lang {
    pub fn as_str(self) -> &'static str {
        match self {
            Lang::En => "en",
            Lang::Es => "es",
            Lang::Ar => "ar",
        }
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Lang {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "en" => Ok(Lang::En),
            "es" => Ok(Lang::Es),
            "ar" => Ok(Lang::Ar),
            other => Err(format!("unknown language {other:?} (expected en, es or ar)")),
        }
    }
}

/// Binary gender label. Class index 0 is female, 1 is male.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Female, Gender::Male];

    pub fn class(self) -> usize {
        match self {
            Gender::Female => 0,
            Gender::Male => 1,
        }
    }

    pub fn from_class(class: usize) -> Gender {
        if class == 0 {
            Gender::Female
        } else {
            Gender::Male
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
        }
    }

    pub fn opposite(self) -> Gender {
        match self {
            Gender::Female => Gender::Male,
            Gender::Male => Gender::Female,
        }
    }

    /// Case-insensitive parse of `female` / `male`.
    pub fn parse_token(token: &str) -> Option<Gender> {
        match token.trim().to_lowercase().as_str() {
            "female" => Some(Gender::Female),
            "male" => Some(Gender::Male),
            _ => None,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
pub enum TweetError {
    #[error("tweet is empty after trimming")]
    Empty,
    #[error("tweet contains a NUL byte")]
    Nul,
    #[error("tweet is {0} bytes, limit is 5000")]
    TooLong(usize),
}

/// Raw tweet text: non-empty after trimming, no NUL bytes, at most 5000 bytes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Tweet(String);

impl Tweet {
    pub fn new(text: impl Into<String>) -> Result<Tweet, TweetError> {
        let text = text.into();
        if text.len() > MAX_TWEET_BYTES {
            return Err(TweetError::TooLong(text.len()));
        }
        if text.contains('\0') {
            return Err(TweetError::Nul);
        }
        if text.trim().is_empty() {
            return Err(TweetError::Empty);
        }
        Ok(Tweet(text))
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Tweet {
    type Error = TweetError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Tweet::new(value)
    }
}

impl From<Tweet> for String {
    fn from(t: Tweet) -> String {
        t.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub lang: Lang,
    pub tweets: Vec<Tweet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Gender>,
}

impl UserRecord {
    /// Tweets joined by a single newline: the document unit for n-gram features.
    pub fn document(&self) -> String {
        let mut doc = String::new();
        for (i, t) in self.tweets.iter().enumerate() {
            if i > 0 {
                doc.push('\n');
            }
            doc.push_str(t.text());
        }
        doc
    }
}

/// Immutable collection of authors sharing one language.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    lang: Lang,
    users: Vec<UserRecord>,
    labeled: bool,
}

impl Dataset {
    /// Validates uniqueness of ids, the shared language and non-empty tweet lists.
    pub fn new(lang: Lang, users: Vec<UserRecord>) -> Result<Dataset, CorpusError> {
        let mut seen = HashSet::new();
        for u in &users {
            if u.lang != lang {
                return Err(CorpusError::LanguageMismatch(lang, u.lang));
            }
            if u.tweets.is_empty() {
                return Err(CorpusError::NoTweets(u.user_id.clone()));
            }
            if !seen.insert(u.user_id.as_str()) {
                return Err(CorpusError::DuplicateUser(u.user_id.clone()));
            }
        }
        let labeled = users.iter().all(|u| u.label.is_some());
        Ok(Dataset { lang, users, labeled })
    }

    pub fn lang(&self) -> Lang {
        self.lang
    }

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn labeled(&self) -> bool {
        self.labeled
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn user_ids(&self) -> Vec<&str> {
        self.users.iter().map(|u| u.user_id.as_str()).collect()
    }

    pub fn into_users(self) -> Vec<UserRecord> {
        self.users
    }

    /// Subset by position, keeping the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let users: Vec<UserRecord> = indices.iter().map(|&i| self.users[i].clone()).collect();
        let labeled = users.iter().all(|u| u.label.is_some());
        Dataset { lang: self.lang, users, labeled }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    /// Split each gender separately so both parts keep the label ratio.
    #[serde(default)]
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_fraction: 0.8, seed: 0, stratified: false }
    }
}

/// Loads a PAN author-profiling directory. Users come back sorted by id.
/// An empty directory gives an empty dataset.
pub fn load_pan_dir(dir: &Path, lang: Lang) -> Result<Dataset, CorpusError> {
    if fs::read_dir(dir).map_err(io_err(dir))?.next().is_none() {
        return Dataset::new(lang, Vec::new());
    }
    let truth_path = dir.join("truth.txt");
    let truth_text = fs::read_to_string(&truth_path).map_err(io_err(&truth_path))?;
    let mut truth = BTreeMap::new();
    for (i, raw) in truth_text.lines().enumerate() {
        let line = i + 1;
        let content = raw.trim();
        if content.is_empty() {
            continue;
        }
        let mut parts = content.split(":::");
        let (Some(id), Some(token)) = (parts.next(), parts.next()) else {
            return Err(CorpusError::BadTruthLine { line, content: content.to_string() });
        };
        let id = id.trim();
        if id.is_empty() {
            return Err(CorpusError::BadTruthLine { line, content: content.to_string() });
        }
        let gender = Gender::parse_token(token)
            .ok_or_else(|| CorpusError::UnknownGender { line, token: token.to_string() })?;
        if truth.insert(id.to_string(), gender).is_some() {
            return Err(CorpusError::DuplicateUser(id.to_string()));
        }
    }

    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("xml") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                files.insert(stem.to_string(), path.clone());
            }
        }
    }
    if let Some(id) = files.keys().find(|id| !truth.contains_key(*id)) {
        return Err(CorpusError::MissingTruth(id.clone()));
    }
    if let Some(id) = truth.keys().find(|id| !files.contains_key(*id)) {
        return Err(CorpusError::MissingFile(id.clone()));
    }

    let users: Vec<UserRecord> = files
        .into_par_iter()
        .map(|(id, path)| {
            let docs = parse_author_xml(&path)?;
            let tweets = to_tweets(&id, docs)?;
            Ok(UserRecord { label: Some(truth[&id]), user_id: id, lang, tweets })
        })
        .collect::<Result<_, CorpusError>>()?;
    Dataset::new(lang, users)
}

fn to_tweets(user_id: &str, docs: Vec<String>) -> Result<Vec<Tweet>, CorpusError> {
    docs.into_iter()
        .enumerate()
        .map(|(index, d)| {
            Tweet::new(d).map_err(|reason| CorpusError::InvalidTweet {
                user_id: user_id.to_string(),
                index,
                reason,
            })
        })
        .collect()
}

/// Text of every `<document>` element of a PAN author file, in document order.
pub fn parse_author_xml(path: &Path) -> Result<Vec<String>, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_author_xml_str(&text).map_err(|(offset, message)| CorpusError::Xml {
        file: path.to_path_buf(),
        offset,
        message,
    })
}

fn parse_author_xml_str(text: &str) -> Result<Vec<String>, (u64, String)> {
    let mut reader = Reader::from_str(text);
    reader.config_mut().check_end_names = true;
    let mut docs = Vec::new();
    let mut current: Option<String> = None;
    let mut depth = 0usize;
    let mut saw_root = false;
    loop {
        let event = reader
            .read_event()
            .map_err(|e| (reader.error_position(), e.to_string()))?;
        let pos = reader.buffer_position();
        match event {
            Event::Start(e) => {
                if depth == 0 {
                    if saw_root || e.name().as_ref() != b"author" {
                        return Err((pos, "expected a single <author> root element".into()));
                    }
                    saw_root = true;
                }
                depth += 1;
                if e.name().as_ref() == b"document" {
                    if current.is_some() {
                        return Err((pos, "nested <document>".into()));
                    }
                    current = Some(String::new());
                }
            }
            Event::Empty(e) => {
                if depth == 0 {
                    return Err((pos, "expected <author> root element".into()));
                }
                if e.name().as_ref() == b"document" {
                    docs.push(String::new());
                }
            }
            Event::End(e) => {
                depth = depth.saturating_sub(1);
                if e.name().as_ref() == b"document" {
                    docs.push(current.take().unwrap_or_default());
                }
            }
            Event::Text(t) => {
                let s = t.decode().map_err(|e| (pos, e.to_string()))?;
                if let Some(buf) = current.as_mut() {
                    buf.push_str(&s);
                } else if depth == 0 && !s.trim().is_empty() {
                    return Err((pos, "text outside the root element".into()));
                }
            }
            Event::CData(t) => {
                if let Some(buf) = current.as_mut() {
                    buf.push_str(&t.decode().map_err(|e| (pos, e.to_string()))?);
                }
            }
            Event::GeneralRef(r) => {
                let name = r.decode().map_err(|e| (pos, e.to_string()))?;
                let resolved = match r.resolve_char_ref().map_err(|e| (pos, e.to_string()))? {
                    Some(c) => c.to_string(),
                    None => quick_xml::escape::unescape(&format!("&{name};"))
                        .map_err(|e| (pos, e.to_string()))?
                        .into_owned(),
                };
                if let Some(buf) = current.as_mut() {
                    buf.push_str(&resolved);
                }
            }
            Event::Eof => {
                if depth != 0 || !saw_root {
                    return Err((pos, "unexpected end of file".into()));
                }
                return Ok(docs);
            }
            _ => {}
        }
    }
}

#[derive(Deserialize)]
struct JsonUser {
    user_id: String,
    lang: Lang,
    tweets: Vec<String>,
    #[serde(default)]
    label: Option<Gender>,
}

/// Loads a JSONL corpus. An empty file yields an empty English dataset.
pub fn load_jsonl(path: &Path) -> Result<Dataset, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_jsonl(BufReader::new(file), path)
}

pub fn read_jsonl(reader: impl BufRead, path: &Path) -> Result<Dataset, CorpusError> {
    let mut users = Vec::new();
    let mut seen = HashSet::new();
    let mut lang: Option<Lang> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonUser = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Json { line: line_no, message: e.to_string() })?;
        match lang {
            None => lang = Some(rec.lang),
            Some(l) if l != rec.lang => {
                return Err(CorpusError::MixedLanguages { line: line_no, expected: l, found: rec.lang })
            }
            _ => {}
        }
        if !seen.insert(rec.user_id.clone()) {
            return Err(CorpusError::DuplicateUser(rec.user_id));
        }
        if rec.tweets.is_empty() {
            return Err(CorpusError::Json {
                line: line_no,
                message: format!("user {} has no tweets", rec.user_id),
            });
        }
        let tweets = to_tweets(&rec.user_id, rec.tweets).map_err(|e| CorpusError::Json {
            line: line_no,
            message: e.to_string(),
        })?;
        users.push(UserRecord { user_id: rec.user_id, lang: rec.lang, tweets, label: rec.label });
    }
    Dataset::new(lang.unwrap_or(Lang::En), users)
}

/// Writes the canonical JSONL form; inverse of [`load_jsonl`].
pub fn write_jsonl(dataset: &Dataset, path: &Path) -> Result<(), CorpusError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(path))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write_jsonl_to(dataset, &mut w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn write_jsonl_to(dataset: &Dataset, w: &mut impl Write) -> std::io::Result<()> {
    for u in dataset.users() {
        serde_json::to_writer(&mut *w, u)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Deterministic user-level split into (train, validation).
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset), CorpusError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(CorpusError::BadFraction(spec.train_fraction));
    }
    if !dataset.labeled() {
        return Err(CorpusError::Unlabeled);
    }
    let n = dataset.len();
    let mut rng = SplitMix64::seed_from_u64(spec.seed);
    let (train_idx, val_idx) = if spec.stratified {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for g in Gender::ALL {
            let mut group: Vec<usize> =
                (0..n).filter(|&i| dataset.users[i].label == Some(g)).collect();
            shuffle(&mut group, &mut rng);
            let cut = train_count(group.len(), spec.train_fraction);
            train.extend_from_slice(&group[..cut]);
            val.extend_from_slice(&group[cut..]);
        }
        (train, val)
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut order, &mut rng);
        let cut = train_count(n, spec.train_fraction);
        (order[..cut].to_vec(), order[cut..].to_vec())
    };
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(CorpusError::EmptySide { total: n, train: train_idx.len(), validation: val_idx.len() });
    }
    Ok((dataset.select(&train_idx), dataset.select(&val_idx)))
}

fn train_count(n: usize, fraction: f64) -> usize {
    // The epsilon absorbs representation error such as 0.7 * 10 = 7.000000000000001.
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

fn shuffle(items: &mut [usize], rng: &mut SplitMix64) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}
