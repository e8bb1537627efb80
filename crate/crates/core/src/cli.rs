//! The `authorprof` command line.
//!
//! Exit codes: 0 on success, 2 for bad input or usage, 3 when training or
//! fitting produces non-finite numbers.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tensor};
use crate::checkpoint::{self, Checkpoint, CheckpointError, CheckpointMeta};
use crate::corpus::{self, CorpusError, Dataset, Gender, Lang, SplitSpec};
use crate::eval::{self, EvalError, TrialScores};
use crate::features::{FeaturesError, LsaProjector, NgramSpec, UserDoc};
use crate::models::{encode_dataset, Embeddings, EncodedUser, Model, ModelConfig, ModelError, Variant, D_CELLS_GRID, N_FILTERS_GRID};
use crate::text::{self, CharAlphabet, TextError, TweetEncoder, Vocabulary};
use crate::train::{self, metrics_line, Snapshot, TrainConfig, TrainError, TrainOutcome, Trial};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Features(#[from] FeaturesError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

fn numeric_model_error(e: &ModelError) -> bool {
    matches!(e, ModelError::Autodiff(AutodiffError::NonFinite { .. }))
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        let numeric = match self {
            CliError::Train(TrainError::Diverged { .. } | TrainError::NonFiniteGradient(_)) => true,
            CliError::Train(TrainError::Model { source, .. }) => numeric_model_error(source),
            CliError::Train(TrainError::AllTrialsFailed(_)) => true,
            CliError::Features(FeaturesError::NonFinite) => true,
            CliError::Model(e) => numeric_model_error(e),
            _ => false,
        };
        if numeric { 3 } else { 2 }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Parser)]
#[command(name = "authorprof", version, about = "Predict the gender of Twitter authors")]
pub struct Cli {
    /// Worker threads; falls back to PROFILER_THREADS, then to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a PAN directory or JSONL file to canonical JSONL.
    Ingest(IngestArgs),
    /// Fit or apply the tf-idf + LSA projector.
    #[command(subcommand)]
    Features(FeaturesCommand),
    /// Train one model and save its best checkpoints.
    Train(TrainArgs),
    /// Train every grid point and rank them by validation user accuracy.
    Gridsearch(GridArgs),
    /// Report user-level (and for rnn/cnn tweet-level) accuracy.
    Evaluate(EvalArgs),
    /// Write `user_id<TAB>female|male` for every user.
    Predict(PredictArgs),
    /// Compare checkpoints chosen by tweet accuracy and by user accuracy.
    #[command(name = "experiment-fig3")]
    ExperimentFig3(Fig3Args),
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false, args = ["pan_dir", "jsonl"])]
pub struct IngestArgs {
    #[arg(long)]
    pub pan_dir: Option<PathBuf>,
    #[arg(long)]
    pub jsonl: Option<PathBuf>,
    #[arg(long)]
    pub lang: Lang,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum FeaturesCommand {
    Fit(FeaturesFitArgs),
    Transform(FeaturesTransformArgs),
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Args)]
pub struct FeaturesFitArgs {
    /// Training users (JSONL).
    #[arg(long)]
    pub train: PathBuf,
    /// Word n-gram orders; default 1,2,3 for English and 1,2 otherwise.
    #[arg(long, value_delimiter = ',')]
    pub word_ns: Option<Vec<usize>>,
    /// Character n-gram orders; default 3,4,5.
    #[arg(long, value_delimiter = ',')]
    pub char_ns: Option<Vec<usize>>,
    #[arg(long, default_value_t = 2)]
    pub min_freq: usize,
    #[arg(long)]
    pub max_features: Option<usize>,
    #[arg(long, default_value_t = crate::features::DEFAULT_LSA_K, value_parser = positive)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturesTransformArgs {
    #[arg(long)]
    pub projector: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Labeled training users (JSONL).
    #[arg(long)]
    pub train: PathBuf,
    /// Validation users; without it a split of --train is used.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long)]
    pub stratified: bool,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub model: Variant,
    /// Word vectors (`token v1 .. vD` per line), needed by the rnn family.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Train the word vectors of tokens seen in training.
    #[arg(long)]
    pub fine_tune: bool,
    /// A fitted projector for rnnwa-ngram; otherwise one is fitted on --train.
    #[arg(long)]
    pub projector: Option<PathBuf>,
    #[arg(long, default_value_t = crate::features::DEFAULT_LSA_K, value_parser = positive)]
    pub k: usize,
    #[arg(long, default_value_t = crate::models::EMBED_DIM)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = crate::models::D_CHAR)]
    pub char_dim: usize,
    #[arg(long, default_value_t = text::DEFAULT_MAX_TOKENS)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = text::DEFAULT_MAX_CHARS)]
    pub max_chars: usize,
    /// Accept sizes outside the validated grids.
    #[arg(long)]
    pub allow_off_grid: bool,
    /// Start from the matching layers of another checkpoint.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16, value_parser = positive)]
    pub batch_users: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// GRU cells per direction (rnn family).
    #[arg(long)]
    pub cells: Option<usize>,
    /// Filters per width (cnn family).
    #[arg(long)]
    pub filters: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Sizes to try; default is the full grid of the model family.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Learning rates to try; default is --lr alone.
    #[arg(long, value_delimiter = ',')]
    pub lrs: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Fig3Args {
    #[command(flatten)]
    pub grid: GridArgs,
    /// Also score every trial on these users.
    #[arg(long)]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Write the full report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// What a run read and how it was configured. Written when the run ends.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
    pub input_digests: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

struct RunLog {
    seed: u64,
    config_hash: String,
    inputs: BTreeMap<String, String>,
    started: u64,
}

impl RunLog {
    fn new(seed: u64, config: &impl Serialize) -> Self {
        let json = serde_json::to_vec(config).expect("configs serialize");
        RunLog { seed, config_hash: checkpoint::sha256_hex(&json), inputs: BTreeMap::new(), started: unix_now() }
    }

    fn input(&mut self, path: &Path) -> Result<String, CliError> {
        let digest = checkpoint::sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest.clone());
        Ok(digest)
    }

    fn finish(self, dir: &Path) -> Result<(), CliError> {
        let m = RunManifest {
            command_line: std::env::args().collect(),
            seed: self.seed,
            config_hash: self.config_hash,
            input_digests: self.inputs,
            started_unix: self.started,
            finished_unix: unix_now(),
        };
        let mut json = serde_json::to_vec_pretty(&m).expect("manifest serializes");
        json.push(b'\n');
        checkpoint::write_atomic(&dir.join("run.json"), &json)?;
        Ok(())
    }
}

fn load_labeled(path: &Path) -> Result<Dataset, CliError> {
    let d = corpus::load_jsonl(path)?;
    if d.is_empty() {
        return Err(CliError::Usage(format!("{} contains no users", path.display())));
    }
    if !d.labeled() {
        return Err(CliError::Usage(format!("{} has unlabeled users", path.display())));
    }
    Ok(d)
}

fn tokens_of<'a>(datasets: impl IntoIterator<Item = &'a Dataset>) -> HashSet<String> {
    let mut set = HashSet::new();
    for d in datasets {
        for u in d.users() {
            for t in &u.tweets {
                set.extend(text::tokenize(t.text()));
            }
        }
    }
    set
}

/// Everything shared by the trials of one training run.
struct Prepared {
    base: ModelConfig,
    vocab: Option<Vocabulary>,
    table: Option<Arc<Tensor>>,
    train_tokens: Vec<usize>,
    embeddings_sha256: Option<String>,
    alphabet: Option<CharAlphabet>,
    projector: Option<LsaProjector>,
    train: Vec<EncodedUser>,
    val: Vec<EncodedUser>,
    init_from: Option<Model>,
}

fn prepare(data: &DataArgs, m: &ModelArgs, seed: u64, log: &mut RunLog) -> Result<Prepared, CliError> {
    log.input(&data.train)?;
    let full = load_labeled(&data.train)?;
    let (train_set, val_set) = match &data.val {
        Some(p) => {
            log.input(p)?;
            (full, load_labeled(p)?)
        }
        None => corpus::split(
            &full,
            &SplitSpec { train_fraction: data.train_fraction, seed: data.split_seed, stratified: data.stratified },
        )?,
    };
    let lang = train_set.lang();
    if val_set.lang() != lang {
        return Err(CorpusError::LanguageMismatch(lang, val_set.lang()).into());
    }
    let v = m.model;

    let (mut vocab, mut table, mut sha, mut train_tokens) = (None, None, None, Vec::new());
    if v.uses_words() {
        let path = m.embeddings.as_ref().ok_or_else(|| CliError::Usage(format!("--embeddings is required for {v}")))?;
        sha = Some(log.input(path)?);
        let keep = tokens_of([&train_set, &val_set]);
        let (voc, tab) = text::load_embeddings_filtered(path, m.embed_dim, Some(&keep))?;
        let mut seen: Vec<usize> = tokens_of([&train_set]).iter().map(|t| voc.id(t)).filter(|&i| i > text::UNK).collect();
        seen.sort_unstable();
        train_tokens = seen;
        vocab = Some(voc);
        table = Some(Arc::new(tab.matrix));
    }
    let alphabet = v.uses_chars().then(|| {
        CharAlphabet::build(train_set.users().iter().flat_map(|u| u.tweets.iter().map(|t| t.text())), text::ALPHABET_MIN_FREQ)
    });
    let projector = if v.uses_ngrams() {
        let p = match &m.projector {
            Some(path) => {
                log.input(path)?;
                checkpoint::load_projector(path)?
            }
            None => {
                let docs: Vec<UserDoc> = train_set.users().iter().map(UserDoc::from_user).collect();
                LsaProjector::fit(&docs, &NgramSpec::for_lang(lang), m.k, seed)?
            }
        };
        Some(checkpoint::f32_projector(&p))
    } else {
        None
    };

    let mut base = ModelConfig::new(v, lang);
    base.embed_dim = m.embed_dim;
    base.d_char = m.char_dim;
    base.max_tokens = m.max_tokens;
    base.max_chars = m.max_chars;
    base.lsa_k = projector.as_ref().map_or(base.lsa_k, |p| p.k());
    base.seed = seed;
    base.fine_tune_embeddings = m.fine_tune;
    base.off_grid = m.allow_off_grid;

    let encoder = TweetEncoder { vocab: vocab.as_ref(), alphabet: alphabet.as_ref(), max_tokens: m.max_tokens, max_chars: m.max_chars };
    let train = encode_dataset(&train_set, &encoder, projector.as_ref());
    let val = encode_dataset(&val_set, &encoder, projector.as_ref());

    let mut prep = Prepared { base, vocab, table, train_tokens, embeddings_sha256: sha, alphabet, projector, train, val, init_from: None };
    if let Some(path) = &m.init_from {
        log.input(path)?;
        let ckpt = Checkpoint::load(path)?;
        let words = prep.vocab.as_ref().zip(prep.table.as_deref());
        prep.init_from = Some(ckpt.build_model(words)?);
    }
    Ok(prep)
}

impl Prepared {
    fn model(&self, config: &ModelConfig, values: Option<&[Tensor]>) -> Result<Model, CliError> {
        let embeddings = self.table.as_ref().map(|t| {
            if config.fine_tune_embeddings {
                Embeddings::fine_tune(t, &self.train_tokens)
            } else {
                Embeddings::Frozen(Arc::clone(t))
            }
        });
        let mut model = Model::new(config.clone(), embeddings, self.alphabet.as_ref().map(|a| a.len()))?;
        match values {
            Some(v) => model.load_values(v)?,
            None => {
                if let Some(src) = &self.init_from {
                    let n = model.init_from(src)?;
                    log::info!("initialized {n} tensors from the given checkpoint");
                }
            }
        }
        Ok(model)
    }

    fn run(&self, trial: &Trial) -> Result<TrainOutcome, TrainError> {
        let wrap = |source: ModelError| TrainError::Model { user: String::new(), source };
        let mut model = self.model(&trial.model, None).map_err(|e| match e {
            CliError::Model(m) => wrap(m),
            other => TrainError::InvalidConfig(other.to_string()),
        })?;
        train::train(&mut model, &self.train, &self.val, &trial.train, |m| {
            log::info!("{}", metrics_line(&trial.id, m));
        })
    }

    fn save(&self, trial: &Trial, snap: &Snapshot, selection: &str, path: &Path) -> Result<(), CliError> {
        let model = self.model(&trial.model, Some(&snap.values))?;
        let meta = CheckpointMeta {
            trial_id: trial.id.clone(),
            selection: selection.to_string(),
            epoch: snap.epoch,
            val_user_accuracy: Some(snap.user_accuracy),
            val_tweet_accuracy: snap.tweet_accuracy,
        };
        let ckpt = Checkpoint::from_model(
            &model,
            self.alphabet.as_ref(),
            self.projector.as_ref(),
            self.vocab.as_ref(),
            self.embeddings_sha256.clone(),
            meta,
        )?;
        ckpt.save(path)?;
        Ok(())
    }

    fn save_both(&self, trial: &Trial, outcome: &TrainOutcome, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        self.save(trial, &outcome.best_user, "best_user", &dir.join("best_user.ckpt"))?;
        if let Some(s) = &outcome.best_tweet {
            self.save(trial, s, "best_tweet", &dir.join("best_tweet.ckpt"))?;
        }
        Ok(())
    }
}

fn train_config(o: &OptimArgs) -> TrainConfig {
    TrainConfig { lr: o.lr, l2: o.l2, batch_size: o.batch_users, epochs: o.epochs, seed: o.seed }
}

fn write_metrics(path: &Path, results: &[(&Trial, &TrainOutcome)]) -> Result<(), CliError> {
    let mut out = String::from("trial\tepoch\tloss\ttweet_acc\tuser_acc\n");
    for (trial, outcome) in results {
        for m in &outcome.history {
            out.push_str(&metrics_line(&trial.id, m));
            out.push('\n');
        }
    }
    checkpoint::write_atomic(path, out.as_bytes())?;
    Ok(())
}

fn cmd_ingest(a: &IngestArgs) -> Result<(), CliError> {
    let data = match (&a.pan_dir, &a.jsonl) {
        (Some(dir), _) => corpus::load_pan_dir(dir, a.lang)?,
        (None, Some(path)) => {
            let d = corpus::load_jsonl(path)?;
            if !d.is_empty() && d.lang() != a.lang {
                return Err(CliError::Usage(format!("{} holds {} users, not {}", path.display(), d.lang(), a.lang)));
            }
            d
        }
        (None, None) => return Err(CliError::Usage("give --pan-dir or --jsonl".into())),
    };
    corpus::write_jsonl(&data, &a.out)?;
    println!("{} users", data.len());
    Ok(())
}

fn cmd_features_fit(a: &FeaturesFitArgs) -> Result<(), CliError> {
    let data = corpus::load_jsonl(&a.train)?;
    let mut spec = NgramSpec::for_lang(data.lang());
    if let Some(ns) = &a.word_ns {
        spec.word_ns = ns.iter().copied().collect();
    }
    if let Some(ns) = &a.char_ns {
        spec.char_ns = ns.iter().copied().collect();
    }
    spec.min_total_freq = a.min_freq;
    spec.max_features = a.max_features;
    let docs: Vec<UserDoc> = data.users().iter().map(UserDoc::from_user).collect();
    let projector = LsaProjector::fit(&docs, &spec, a.k, a.seed)?;
    checkpoint::save_projector(&a.out, &projector)?;
    println!("features\t{}", projector.tfidf.num_features());
    println!("k\t{}", projector.k());
    Ok(())
}

fn cmd_features_transform(a: &FeaturesTransformArgs) -> Result<(), CliError> {
    if !a.projector.exists() {
        return Err(CliError::Usage(format!("no projector at {}; run `features fit` first", a.projector.display())));
    }
    let projector = checkpoint::load_projector(&a.projector)?;
    let data = corpus::load_jsonl(&a.data)?;
    let mut out = String::new();
    for u in data.users() {
        out.push_str(&u.user_id);
        for z in projector.transform(&UserDoc::from_user(u)) {
            out.push('\t');
            out.push_str(&z.to_string());
        }
        out.push('\n');
    }
    checkpoint::write_atomic(&a.out, out.as_bytes())?;
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let tc = train_config(&a.optim);
    tc.validate()?;
    let mut log = RunLog::new(a.optim.seed, &(&tc, a.cells, a.filters, a.model.model));
    let prep = prepare(&a.data, &a.model, a.optim.seed, &mut log)?;
    let mut config = prep.base.clone();
    if let Some(c) = a.cells {
        config.d_cells = c;
    }
    if let Some(f) = a.filters {
        config.n_filters = f;
    }
    config.validate().map_err(|e| CliError::Usage(format!("{e} (--allow-off-grid accepts it)")))?;
    let trial = Trial { id: format!("{}-{}", config.variant, config.size()), model: config, train: tc };
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let outcome = prep.run(&trial)?;
    write_metrics(&a.out.join("metrics.tsv"), &[(&trial, &outcome)])?;
    prep.save_both(&trial, &outcome, &a.out)?;
    println!("best validation user accuracy\t{:.6}\tepoch {}", outcome.best_user.user_accuracy, outcome.best_user.epoch);
    log.finish(&a.out)
}

fn grid_trials(g: &GridArgs, base: &ModelConfig) -> Result<Vec<Trial>, CliError> {
    let sizes = g.sizes.clone().unwrap_or_else(|| {
        if base.variant.uses_words() { D_CELLS_GRID.to_vec() } else { N_FILTERS_GRID.to_vec() }
    });
    let lrs = g.lrs.clone().unwrap_or_else(|| vec![g.optim.lr]);
    let trials = train::build_grid(base, &train_config(&g.optim), &sizes, &lrs);
    for t in &trials {
        t.model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        t.train.validate()?;
    }
    if trials.is_empty() {
        return Err(CliError::Usage("the grid is empty".into()));
    }
    Ok(trials)
}

struct GridRun {
    trials: Vec<Trial>,
    ranked: Vec<train::TrialResult>,
}

fn run_grid(g: &GridArgs, min_trials: usize, log: &mut RunLog) -> Result<(Prepared, GridRun), CliError> {
    // Validate the grid size before any expensive loading.
    let probe = ModelConfig { off_grid: g.model.allow_off_grid, ..ModelConfig::new(g.model.model, Lang::En) };
    let n = grid_trials(g, &probe).map(|t| t.len()).unwrap_or(0);
    if n < min_trials {
        return Err(CliError::Usage(format!("this needs at least {min_trials} grid points, got {n}")));
    }
    let prep = prepare(&g.data, &g.model, g.optim.seed, log)?;
    let trials = grid_trials(g, &prep.base)?;
    fs::create_dir_all(&g.out).map_err(io_err(&g.out))?;
    let ranked = train::grid_search(&trials, |t| prep.run(t))?;
    let by_id: BTreeMap<&str, &train::TrialResult> = ranked.iter().map(|r| (r.trial.id.as_str(), r)).collect();
    let done: Vec<(&Trial, &TrainOutcome)> =
        trials.iter().filter_map(|t| by_id.get(t.id.as_str()).map(|r| (t, &r.outcome))).collect();
    write_metrics(&g.out.join("metrics.tsv"), &done)?;
    let mut table = String::from("rank\ttrial\tsize\tlr\tbest_user_epoch\tval_user_acc\tbest_tweet_epoch\tval_tweet_acc\n");
    for (rank, r) in ranked.iter().enumerate() {
        let o = &r.outcome;
        let (te, ta) = match &o.best_tweet {
            Some(s) => (s.epoch.to_string(), format!("{:.6}", s.tweet_accuracy.unwrap_or(0.0))),
            None => ("-".into(), "-".into()),
        };
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{:.6}\t{te}\t{ta}\n",
            rank + 1,
            r.trial.id,
            r.trial.model.size(),
            r.trial.train.lr,
            o.best_user.epoch,
            o.best_user.user_accuracy
        ));
        prep.save_both(&r.trial, o, &g.out.join("trials").join(&r.trial.id))?;
    }
    checkpoint::write_atomic(&g.out.join("grid.tsv"), table.as_bytes())?;
    let top = &ranked[0];
    prep.save_both(&top.trial, &top.outcome, &g.out)?;
    Ok((prep, GridRun { trials, ranked }))
}

fn cmd_gridsearch(g: &GridArgs) -> Result<(), CliError> {
    let mut log = RunLog::new(g.optim.seed, &(&g.sizes, &g.lrs, train_config(&g.optim), g.model.model));
    let (_, run) = run_grid(g, 1, &mut log)?;
    let top = &run.ranked[0];
    println!("trials\t{}", run.trials.len());
    println!("best\t{}\t{:.6}", top.trial.id, top.best_user_accuracy());
    log.finish(&g.out)
}

fn scores_for(prep: &Prepared, results: &[train::TrialResult], users: Option<&[EncodedUser]>) -> Result<Vec<TrialScores>, CliError> {
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        let pair = |s: &Snapshot| -> Result<(f64, f64), CliError> {
            match users {
                None => Ok((s.tweet_accuracy.unwrap_or(0.0), s.user_accuracy)),
                Some(users) => {
                    let model = prep.model(&r.trial.model, Some(&s.values))?;
                    let rep = eval::evaluate(&model, users, &r.trial.id)?;
                    Ok((rep.tweet_accuracy.unwrap_or(0.0), rep.user_accuracy))
                }
            }
        };
        let best_tweet = r.outcome.best_tweet.as_ref().expect("averaging variants keep a tweet checkpoint");
        out.push(TrialScores {
            trial_id: r.trial.id.clone(),
            config_label: format!("{} lr={}", r.trial.model.size_label(), r.trial.train.lr),
            best_tweet: pair(best_tweet)?,
            best_user: pair(&r.outcome.best_user)?,
        });
    }
    Ok(out)
}

fn report_scatter(label: &str, report: &eval::ScatterReport, path: &Path) -> Result<(), CliError> {
    let mut buf = Vec::new();
    eval::write_scatter_tsv(report, &mut buf).map_err(io_err(path))?;
    checkpoint::write_atomic(path, &buf)?;
    println!("{label}\tmean user accuracy, best by user\t{:.6}", report.mean_user_best_user);
    println!("{label}\tmean user accuracy, best by tweet\t{:.6}", report.mean_user_best_tweet);
    println!("{label}\tgap\t{:+.6}", report.gap);
    Ok(())
}

fn cmd_fig3(a: &Fig3Args) -> Result<(), CliError> {
    let g = &a.grid;
    if g.model.model.tweet_attention() {
        return Err(CliError::Usage(format!("tweet-level accuracy needs rnn or cnn, not {}", g.model.model)));
    }
    let mut log = RunLog::new(g.optim.seed, &(&g.sizes, &g.lrs, train_config(&g.optim), g.model.model));
    let needed = 2 * eval::SCATTER_TOP;
    let (prep, run) = run_grid(g, needed, &mut log)?;
    // Keep grid order so ties resolve the same way as the grid itself.
    let mut results = run.ranked.clone();
    results.sort_by_key(|r| run.trials.iter().position(|t| t.id == r.trial.id));
    let val = eval::scatter_experiment(&scores_for(&prep, &results, None)?)?;
    report_scatter("validation", &val, &g.out.join("fig3.tsv"))?;
    if let Some(path) = &a.test {
        log.input(path)?;
        let test = load_labeled(path)?;
        let enc = TweetEncoder {
            vocab: prep.vocab.as_ref(),
            alphabet: prep.alphabet.as_ref(),
            max_tokens: prep.base.max_tokens,
            max_chars: prep.base.max_chars,
        };
        let users = encode_dataset(&test, &enc, prep.projector.as_ref());
        let rep = eval::scatter_experiment(&scores_for(&prep, &results, Some(&users))?)?;
        report_scatter("test", &rep, &g.out.join("fig3_test.tsv"))?;
    }
    log.finish(&g.out)
}

/// Loads a checkpoint with its word vectors and encodes `data` for it.
fn load_for_inference(ckpt_path: &Path, data: &Dataset, embeddings: Option<&Path>) -> Result<(Model, Vec<EncodedUser>), CliError> {
    if !ckpt_path.exists() {
        return Err(CliError::Usage(format!("no checkpoint at {}", ckpt_path.display())));
    }
    let ckpt = Checkpoint::load(ckpt_path)?;
    let words = if ckpt.config.variant.uses_words() {
        let path = embeddings.ok_or_else(|| CliError::Usage(format!("--embeddings is required for {}", ckpt.config.variant)))?;
        ckpt.check_embeddings(&checkpoint::sha256_file(path)?)?;
        let mut keep = tokens_of([data]);
        keep.extend(ckpt.trainable_tokens.iter().flatten().cloned());
        let (voc, tab) = text::load_embeddings_filtered(path, ckpt.config.embed_dim, Some(&keep))?;
        Some((voc, tab.matrix))
    } else {
        None
    };
    let model = ckpt.build_model(words.as_ref().map(|(v, t)| (v, t)))?;
    let enc = TweetEncoder {
        vocab: words.as_ref().map(|(v, _)| v),
        alphabet: ckpt.alphabet.as_ref(),
        max_tokens: ckpt.config.max_tokens,
        max_chars: ckpt.config.max_chars,
    };
    let users = encode_dataset(data, &enc, ckpt.projector.as_ref());
    Ok((model, users))
}

fn cmd_evaluate(a: &EvalArgs) -> Result<(), CliError> {
    let data = load_labeled(&a.data)?;
    let (model, users) = load_for_inference(&a.checkpoint, &data, a.embeddings.as_deref())?;
    let report = eval::evaluate(&model, &users, &a.checkpoint.display().to_string())?;
    println!("model\t{}", model.config().variant);
    println!("users\t{}", report.users);
    println!("user_accuracy\t{:.6}", report.user_accuracy);
    match report.tweet_accuracy {
        Some(t) => println!("tweet_accuracy\t{t:.6}"),
        None => println!("tweet_accuracy\t-"),
    }
    if let Some(path) = &a.report {
        let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
        json.push(b'\n');
        checkpoint::write_atomic(path, &json)?;
    }
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<(), CliError> {
    let data = corpus::load_jsonl(&a.data)?;
    let (model, users) = load_for_inference(&a.checkpoint, &data, a.embeddings.as_deref())?;
    let preds = eval::predict_users(&model, &users)?;
    let mut out = String::new();
    for (p, _) in &preds {
        // An exact tie is reported as the first class.
        let g = p.predicted.unwrap_or(Gender::from_class(0));
        out.push_str(&format!("{}\t{}\n", p.user_id, g));
    }
    match &a.out {
        Some(path) => checkpoint::write_atomic(path, out.as_bytes())?,
        None => {
            let stdout = io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            w.write_all(out.as_bytes()).and_then(|_| w.flush()).map_err(io_err(Path::new("<stdout>")))?;
        }
    }
    Ok(())
}

fn init_threads(flag: Option<usize>) -> Result<(), CliError> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("PROFILER_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| CliError::Usage(format!("PROFILER_THREADS={v:?} is not a number")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Usage("thread count must be at least 1".into()));
        }
        // Fails only if a pool already exists, e.g. when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    init_threads(cli.threads)?;
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Features(FeaturesCommand::Fit(a)) => cmd_features_fit(a),
        Command::Features(FeaturesCommand::Transform(a)) => cmd_features_transform(a),
        Command::Train(a) => cmd_train(a),
        Command::Gridsearch(a) => cmd_gridsearch(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::ExperimentFig3(a) => cmd_fig3(a),
    }
}

/// Parses the process arguments, runs the command and maps errors to exit codes.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
