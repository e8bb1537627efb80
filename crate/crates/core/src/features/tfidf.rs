use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use rayon::prelude::*;

use super::{extract_ngrams, FeaturesError, NgramSpec, UserDoc};

/// Fitted n-gram vocabulary with smoothed idf weights.
///
/// `idf(t) = ln((1 + N) / (1 + df(t))) + 1`, where `N` is the number of
/// training documents and `df(t)` the number containing `t`. Columns follow
/// lexicographic key order.
#[derive(Clone, Debug, PartialEq)]
pub struct TfidfModel {
    spec: NgramSpec,
    features: Vec<String>,
    index: HashMap<String, usize>,
    idf: Vec<f64>,
}

impl TfidfModel {
    pub fn spec(&self) -> &NgramSpec {
        &self.spec
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn column(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub(crate) fn from_parts(spec: NgramSpec, features: Vec<String>, idf: Vec<f64>) -> Self {
        let index = features.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect();
        TfidfModel { spec, features, index, idf }
    }
}

pub fn fit_tfidf(docs: &[UserDoc], spec: &NgramSpec) -> Result<TfidfModel, FeaturesError> {
    spec.validate()?;
    if docs.len() < 2 {
        return Err(FeaturesError::TooFewDocuments { needed: 2, got: docs.len() });
    }
    let per_doc: Vec<BTreeMap<String, usize>> = docs.par_iter().map(|d| extract_ngrams(d, spec)).collect();
    let mut totals: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for counts in &per_doc {
        for (k, &c) in counts {
            let e = totals.entry(k.as_str()).or_insert((0, 0));
            e.0 += c;
            e.1 += 1;
        }
    }
    let mut kept: Vec<(&str, usize, usize)> = totals
        .into_iter()
        .filter(|(_, (total, _))| *total >= spec.min_total_freq)
        .map(|(k, (total, df))| (k, total, df))
        .collect();
    if let Some(cap) = spec.max_features {
        if kept.len() > cap {
            kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
            kept.truncate(cap);
            kept.sort_by(|a, b| a.0.cmp(b.0));
        }
    }
    if kept.is_empty() {
        return Err(FeaturesError::NoFeatures(spec.min_total_freq));
    }
    let n = docs.len() as f64;
    let idf = kept.iter().map(|&(_, _, df)| ((1.0 + n) / (1.0 + df as f64)).ln() + 1.0).collect();
    let features = kept.into_iter().map(|(k, _, _)| k.to_string()).collect();
    Ok(TfidfModel::from_parts(spec.clone(), features, idf))
}

/// Non-zero `(column, value)` entries of the L2-normalized tf-idf vector,
/// in increasing column order.
pub fn transform_tfidf_sparse(model: &TfidfModel, doc: &UserDoc) -> Vec<(usize, f64)> {
    let counts = extract_ngrams(doc, &model.spec);
    let mut entries: Vec<(usize, f64)> = counts
        .iter()
        .filter_map(|(k, &c)| model.column(k).map(|col| (col, c as f64 * model.idf[col])))
        .collect();
    entries.sort_by_key(|e| e.0);
    let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for e in &mut entries {
            e.1 /= norm;
        }
    }
    entries
}

/// Dense L2-normalized tf-idf vector; all zeros when no key is known.
pub fn transform_tfidf(model: &TfidfModel, doc: &UserDoc) -> Vec<f64> {
    let mut v = vec![0.0; model.num_features()];
    for (c, x) in transform_tfidf_sparse(model, doc) {
        v[c] = x;
    }
    v
}

fn escape(key: &str) -> String {
    let mut out = String::with_capacity(key.len());
    for c in key.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c == '\\' {
            out.push(match it.next()? {
                '\\' => '\\',
                't' => '\t',
                'n' => '\n',
                'r' => '\r',
                _ => return None,
            });
        } else {
            out.push(c);
        }
    }
    Some(out)
}

/// Writes `key<TAB>column<TAB>idf` lines. Backslash, tab, CR and LF inside
/// keys are written as `\\`, `\t`, `\r`, `\n`.
pub fn write_sidecar(model: &TfidfModel, w: &mut impl Write) -> std::io::Result<()> {
    for (col, (key, idf)) in model.features.iter().zip(&model.idf).enumerate() {
        writeln!(w, "{}\t{col}\t{idf}", escape(key))?;
    }
    Ok(())
}

pub fn read_sidecar(r: impl BufRead, spec: NgramSpec) -> Result<TfidfModel, FeaturesError> {
    let mut features = Vec::new();
    let mut idf = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let bad = |message: &str| FeaturesError::Sidecar { line: i + 1, message: message.to_string() };
        let mut parts = line.split('\t');
        let (Some(key), Some(col), Some(w), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad("expected three tab-separated fields"));
        };
        let key = unescape(key).ok_or_else(|| bad("bad escape in key"))?;
        let col: usize = col.parse().map_err(|_| bad("bad column"))?;
        if col != features.len() {
            return Err(bad("columns must be dense and in order"));
        }
        let w: f64 = w.parse().map_err(|_| bad("bad idf"))?;
        if !(w > 0.0 && w.is_finite()) {
            return Err(bad("idf must be positive"));
        }
        if features.last().is_some_and(|prev: &String| prev.as_str() >= key.as_str()) {
            return Err(bad("keys must be strictly increasing"));
        }
        features.push(key);
        idf.push(w);
    }
    if features.is_empty() {
        return Err(FeaturesError::NoFeatures(spec.min_total_freq));
    }
    Ok(TfidfModel::from_parts(spec, features, idf))
}
