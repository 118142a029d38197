//! Top-k recommendation and precision/recall at k.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::CentralModel;
use crate::dataio::Dataset;
use crate::dmf::{predict, NodeState};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("user {user} has {available} candidates, fewer than k = {k}")]
    InsufficientCandidates { user: usize, available: usize, k: usize },
    #[error("empty test set")]
    EmptyTestSet,
    #[error("no user has test items")]
    NoTestUsers,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("recommendation list has {got} items, expected {k}")]
    WrongLength { got: usize, k: usize },
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Anything that can score (user, item) pairs.
pub trait Scorer {
    fn n_items(&self) -> usize;
    fn score(&self, user: usize, item: usize) -> f64;
}

/// Scores with each node's own `u_i . (p^i_j + q^i_j)`.
pub struct DmfScorer<'a, T>(pub &'a [NodeState<T>]);

impl<T: Scalar> Scorer for DmfScorer<'_, T> {
    fn n_items(&self) -> usize {
        self.0.first().map_or(0, NodeState::n_items)
    }

    fn score(&self, user: usize, item: usize) -> f64 {
        predict(&self.0[user], item).as_f64()
    }
}

impl<T: Scalar> Scorer for CentralModel<T> {
    fn n_items(&self) -> usize {
        CentralModel::n_items(self)
    }

    fn score(&self, user: usize, item: usize) -> f64 {
        CentralModel::score(self, user, item).as_f64()
    }
}

/// Dense precomputed scores, `table[user][item]`.
pub struct ScoreTable(pub Vec<Vec<f64>>);

impl Scorer for ScoreTable {
    fn n_items(&self) -> usize {
        self.0.first().map_or(0, Vec::len)
    }

    fn score(&self, user: usize, item: usize) -> f64 {
        self.0[user][item]
    }
}

/// The `k` best-scoring items for `user` outside `exclude` (sorted ascending),
/// drawn from `candidates` when given, otherwise from every item. Descending
/// score; equal scores go to the smaller item index.
pub fn recommend_topk<S: Scorer + ?Sized>(
    scorer: &S,
    user: usize,
    k: usize,
    exclude: &[usize],
    candidates: Option<&[usize]>,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let pool: Vec<usize> = match candidates {
        Some(c) => c.to_vec(),
        None => (0..scorer.n_items()).collect(),
    };
    let mut scored: Vec<(f64, usize)> = pool
        .into_iter()
        .filter(|j| exclude.binary_search(j).is_err())
        .map(|j| (scorer.score(user, j), j))
        .collect();
    if scored.len() < k {
        return Err(EvalError::InsufficientCandidates { user, available: scored.len(), k });
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, j)| j).collect())
}

/// `(|S^T ∩ S^R| / k, |S^T ∩ S^R| / |S^T|)`; `test_items` must be sorted.
pub fn precision_recall_at_k(recommended: &[usize], test_items: &[usize], k: usize) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if recommended.len() != k {
        return Err(EvalError::WrongLength { got: recommended.len(), k });
    }
    if test_items.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let hits = recommended.iter().filter(|j| test_items.binary_search(j).is_ok()).count();
    Ok((hits as f64 / k as f64, hits as f64 / test_items.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_kind: String,
    pub k_values: Vec<usize>,
    pub per_k: BTreeMap<usize, PrecisionRecall>,
    pub users_evaluated: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    /// Restrict candidates to items of the user's own city.
    pub city_candidates: bool,
}

/// Mean P@k and R@k over every user with a nonempty test set. Candidates
/// exclude the user's train items.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    dataset: &Dataset,
    k_values: &[usize],
    model_kind: &str,
    options: EvalOptions,
) -> Result<EvalReport> {
    let mut ks: Vec<usize> = k_values.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let Some(&k_max) = ks.last() else {
        return Err(EvalError::ZeroK);
    };
    if ks[0] == 0 {
        return Err(EvalError::ZeroK);
    }
    let train = dataset.train_items_by_user();
    let test = dataset.test_items_by_user();
    let by_city = options.city_candidates.then(|| dataset.items_by_city());

    let mut sums = vec![(0.0f64, 0.0f64); ks.len()];
    let mut users = 0usize;
    for (user, test_items) in test.iter().enumerate() {
        if test_items.is_empty() {
            continue;
        }
        let candidates = by_city.as_ref().map(|c| c[dataset.user_city[user]].as_slice());
        let ranked = recommend_topk(scorer, user, k_max, &train[user], candidates)?;
        for (slot, &k) in sums.iter_mut().zip(&ks) {
            let (p, r) = precision_recall_at_k(&ranked[..k], test_items, k)?;
            slot.0 += p;
            slot.1 += r;
        }
        users += 1;
    }
    if users == 0 {
        return Err(EvalError::NoTestUsers);
    }
    let n = users as f64;
    Ok(EvalReport {
        model_kind: model_kind.to_string(),
        per_k: ks
            .iter()
            .zip(&sums)
            .map(|(&k, &(p, r))| (k, PrecisionRecall { precision: p / n, recall: r / n }))
            .collect(),
        k_values: ks,
        users_evaluated: users,
    })
}

/// Identifying columns that precede the metrics in a CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLabels {
    pub model: String,
    pub k: usize,
    pub d: usize,
    pub beta: f64,
    pub gamma: f64,
}

impl EvalReport {
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["model".to_string(), "K".into(), "D".into(), "beta".into(), "gamma".into()];
        for k in &self.k_values {
            cols.push(format!("P@{k}"));
            cols.push(format!("R@{k}"));
        }
        cols.push("users_evaluated".into());
        cols.join(",")
    }

    pub fn csv_row(&self, labels: &RunLabels) -> String {
        let mut cols = vec![
            labels.model.clone(),
            labels.k.to_string(),
            labels.d.to_string(),
            labels.beta.to_string(),
            labels.gamma.to_string(),
        ];
        for k in &self.k_values {
            let cell = self.per_k[k];
            cols.push(cell.precision.to_string());
            cols.push(cell.recall.to_string());
        }
        cols.push(self.users_evaluated.to_string());
        cols.join(",")
    }
}
