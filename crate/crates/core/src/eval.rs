//! Tweet-level and user-level accuracy, and the checkpoint-selection
//! experiment that compares the two.
//!
//! A prediction whose two class probabilities are exactly equal has no
//! argmax; it is counted as incorrect and tallied in `ties`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::Gender;
use crate::models::{EncodedUser, Model, ModelError, Variant};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{metric} is not defined for {variant}")]
    UnsupportedMetric { metric: &'static str, variant: Variant },
    #[error("user {0} has no label")]
    Unlabeled(String),
    #[error("nothing to evaluate")]
    Empty,
    #[error("user {user}: {source}")]
    Model { user: String, source: ModelError },
    #[error("scatter experiment needs at least {needed} trials, got {got}")]
    TooFewTrials { needed: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The class with the larger probability, `None` on an exact tie.
pub fn argmax(p: [f64; 2]) -> Option<Gender> {
    if p[0] > p[1] {
        Some(Gender::from_class(0))
    } else if p[1] > p[0] {
        Some(Gender::from_class(1))
    } else {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UserPrediction {
    pub user_id: String,
    pub probs: [f64; 2],
    pub predicted: Option<Gender>,
    pub label: Option<Gender>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tweet_weights: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub model_id: String,
    pub users: usize,
    pub user_correct: usize,
    pub user_ties: usize,
    pub user_accuracy: f64,
    /// `confusion[truth][predicted]`; a tie is filed under the wrong class.
    pub confusion: [[usize; 2]; 2],
    /// Only for the averaging variants.
    pub tweet_accuracy: Option<f64>,
    pub tweets: usize,
    pub tweet_ties: usize,
    /// Tweets with no real token or character, left out of tweet accuracy.
    pub tweets_skipped: usize,
    pub predictions: Vec<UserPrediction>,
}

fn label_of(u: &EncodedUser) -> Result<Gender, EvalError> {
    u.label.ok_or_else(|| EvalError::Unlabeled(u.user_id.clone()))
}

/// Runs the model over `users` without any label checks.
pub fn predict_users(model: &Model, users: &[EncodedUser]) -> Result<Vec<(UserPrediction, Option<Vec<Option<[f64; 2]>>>)>, EvalError> {
    users
        .par_iter()
        .map(|u| {
            let fwd = model
                .predict_user(&u.tweets, u.lsa.as_deref())
                .map_err(|source| EvalError::Model { user: u.user_id.clone(), source })?;
            let pred = UserPrediction {
                user_id: u.user_id.clone(),
                probs: fwd.probs,
                predicted: argmax(fwd.probs),
                label: u.label,
                tweet_weights: fwd.tweet_weights,
            };
            Ok((pred, fwd.tweet_probs))
        })
        .collect()
}

/// User-level and, for averaging variants, tweet-level accuracy.
pub fn evaluate(model: &Model, users: &[EncodedUser], model_id: &str) -> Result<EvalReport, EvalError> {
    if users.is_empty() {
        return Err(EvalError::Empty);
    }
    for u in users {
        label_of(u)?;
    }
    let results = predict_users(model, users)?;
    let mut report = EvalReport {
        model_id: model_id.to_string(),
        users: users.len(),
        user_correct: 0,
        user_ties: 0,
        user_accuracy: 0.0,
        confusion: [[0; 2]; 2],
        tweet_accuracy: None,
        tweets: 0,
        tweet_ties: 0,
        tweets_skipped: 0,
        predictions: Vec::with_capacity(users.len()),
    };
    let mut tweet_correct = 0;
    for (pred, tweet_probs) in results {
        let truth = pred.label.expect("checked above");
        match pred.predicted {
            Some(g) if g == truth => report.user_correct += 1,
            Some(_) => {}
            None => report.user_ties += 1,
        }
        let filed = pred.predicted.unwrap_or(truth.opposite());
        report.confusion[truth.class()][filed.class()] += 1;
        if let Some(tp) = tweet_probs {
            for p in tp {
                match p {
                    None => report.tweets_skipped += 1,
                    Some(p) => {
                        report.tweets += 1;
                        match argmax(p) {
                            Some(g) if g == truth => tweet_correct += 1,
                            Some(_) => {}
                            None => report.tweet_ties += 1,
                        }
                    }
                }
            }
        }
        report.predictions.push(pred);
    }
    report.user_accuracy = report.user_correct as f64 / report.users as f64;
    if !model.config().variant.tweet_attention() && report.tweets > 0 {
        report.tweet_accuracy = Some(tweet_correct as f64 / report.tweets as f64);
    }
    Ok(report)
}

pub fn user_level_accuracy(model: &Model, users: &[EncodedUser]) -> Result<EvalReport, EvalError> {
    evaluate(model, users, "")
}

/// Fraction of non-empty tweets classified as their author's label.
pub fn tweet_level_accuracy(model: &Model, users: &[EncodedUser]) -> Result<f64, EvalError> {
    let variant = model.config().variant;
    if variant.tweet_attention() {
        return Err(EvalError::UnsupportedMetric { metric: "tweet-level accuracy", variant });
    }
    evaluate(model, users, "")?.tweet_accuracy.ok_or(EvalError::Empty)
}

/// Which checkpoint a scatter row comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    BestTweet,
    BestUser,
}

impl Selection {
    pub fn as_str(self) -> &'static str {
        match self {
            Selection::BestTweet => "best_tweet",
            Selection::BestUser => "best_user",
        }
    }
}

/// Validation scores of one trial's two saved checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialScores {
    pub trial_id: String,
    pub config_label: String,
    /// Validation (tweet, user) accuracy of the checkpoint chosen by tweet accuracy.
    pub best_tweet: (f64, f64),
    /// Validation (tweet, user) accuracy of the checkpoint chosen by user accuracy.
    pub best_user: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScatterRow {
    pub trial_id: String,
    pub config: String,
    pub selection: Selection,
    pub tweet_accuracy: f64,
    pub user_accuracy: f64,
    /// The trial is also among the top trials of the other selection.
    pub overlap: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScatterReport {
    pub rows: Vec<ScatterRow>,
    pub mean_user_best_tweet: f64,
    pub mean_user_best_user: f64,
    /// `mean_user_best_user - mean_user_best_tweet`.
    pub gap: f64,
}

pub const SCATTER_TOP: usize = 3;

/// Picks the top trials by tweet accuracy and by user accuracy and reports
/// the user accuracy each selection reaches. Ties go to the earlier trial.
pub fn scatter_experiment(trials: &[TrialScores]) -> Result<ScatterReport, EvalError> {
    let needed = 2 * SCATTER_TOP;
    if trials.len() < needed {
        return Err(EvalError::TooFewTrials { needed, got: trials.len() });
    }
    let top = |key: &dyn Fn(&TrialScores) -> f64| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..trials.len()).collect();
        idx.sort_by(|&a, &b| key(&trials[b]).total_cmp(&key(&trials[a])).then(a.cmp(&b)));
        idx.truncate(SCATTER_TOP);
        idx
    };
    let by_tweet = top(&|t| t.best_tweet.0);
    let by_user = top(&|t| t.best_user.1);
    let mut rows = Vec::with_capacity(needed);
    for &i in &by_tweet {
        let t = &trials[i];
        rows.push(ScatterRow {
            trial_id: t.trial_id.clone(),
            config: t.config_label.clone(),
            selection: Selection::BestTweet,
            tweet_accuracy: t.best_tweet.0,
            user_accuracy: t.best_tweet.1,
            overlap: by_user.contains(&i),
        });
    }
    for &i in &by_user {
        let t = &trials[i];
        rows.push(ScatterRow {
            trial_id: t.trial_id.clone(),
            config: t.config_label.clone(),
            selection: Selection::BestUser,
            tweet_accuracy: t.best_user.0,
            user_accuracy: t.best_user.1,
            overlap: by_tweet.contains(&i),
        });
    }
    let mean = |s: Selection| {
        let v: Vec<f64> = rows.iter().filter(|r| r.selection == s).map(|r| r.user_accuracy).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let mean_user_best_tweet = mean(Selection::BestTweet);
    let mean_user_best_user = mean(Selection::BestUser);
    Ok(ScatterReport { rows, mean_user_best_tweet, mean_user_best_user, gap: mean_user_best_user - mean_user_best_tweet })
}

/// Tab-separated rows with a header.
pub fn write_scatter_tsv(report: &ScatterReport, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "trial\tconfig\tselection\ttweet_acc\tuser_acc\toverlap")?;
    for r in &report.rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{}",
            r.trial_id,
            r.config,
            r.selection.as_str(),
            r.tweet_accuracy,
            r.user_accuracy,
            r.overlap
        )?;
    }
    Ok(())
}
