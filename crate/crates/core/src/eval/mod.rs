//! Masked top-K ranking evaluation.

mod ttest;

pub use ttest::{ln_gamma, paired_t_test, regularized_incomplete_beta, student_t_two_sided, TTest};

use std::cmp::Ordering;
use std::fmt::Write as _;

use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::real::Real;

fn score_key<F: Real>(x: F) -> f64 {
    let v = x.to_f64();
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

fn ranked_before<F: Real>(scores: &[F], a: u32, b: u32) -> Ordering {
    score_key(scores[b as usize])
        .total_cmp(&score_key(scores[a as usize]))
        .then(a.cmp(&b))
}

/// All unmasked items by descending score, ties by ascending item id.
/// `mask` must be sorted.
pub fn rank_items<F: Real>(scores: &[F], mask: &[u32]) -> Vec<u32> {
    let mut items = unmasked(scores.len(), mask);
    items.sort_unstable_by(|&a, &b| ranked_before(scores, a, b));
    items
}

/// The first `k` entries of [`rank_items`] without sorting the tail.
pub fn top_k_items<F: Real>(scores: &[F], mask: &[u32], k: usize) -> Vec<u32> {
    let mut items = unmasked(scores.len(), mask);
    if k == 0 {
        return Vec::new();
    }
    if items.len() > k {
        items.select_nth_unstable_by(k - 1, |&a, &b| ranked_before(scores, a, b));
        items.truncate(k);
    }
    items.sort_unstable_by(|&a, &b| ranked_before(scores, a, b));
    items
}

fn unmasked(n: usize, mask: &[u32]) -> Vec<u32> {
    debug_assert!(mask.windows(2).all(|w| w[0] < w[1]), "mask must be sorted");
    (0..n as u32).filter(|i| mask.binary_search(i).is_err()).collect()
}

/// `|top-K ∩ test| / |test|`. `test_items` must be sorted and non-empty.
pub fn recall_at_k(ranking: &[u32], test_items: &[u32], k: usize) -> f64 {
    assert!(!test_items.is_empty(), "recall needs at least one test item");
    let hits = ranking.iter().take(k).filter(|i| test_items.binary_search(i).is_ok()).count();
    hits as f64 / test_items.len() as f64
}

/// Binary-relevance NDCG with gain `1/log2(position + 1)`.
pub fn ndcg_at_k(ranking: &[u32], test_items: &[u32], k: usize) -> f64 {
    assert!(!test_items.is_empty(), "ndcg needs at least one test item");
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| test_items.binary_search(i).is_ok())
        .map(|(p, _)| 1.0 / ((p + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..test_items.len().min(k)).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
    dcg / idcg
}

/// Which held-out part is scored, and which items are masked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTarget {
    /// Validation items, train items masked.
    Validation,
    /// Test items, train and validation items masked.
    Test,
}

impl EvalTarget {
    pub fn targets<'a>(&self, split: &'a DatasetSplit, user: usize) -> &'a [u32] {
        match self {
            EvalTarget::Validation => split.val.row(user),
            EvalTarget::Test => split.test.row(user),
        }
    }

    pub fn mask(&self, split: &DatasetSplit, user: usize) -> Vec<u32> {
        match self {
            EvalTarget::Validation => split.train.row(user).to_vec(),
            EvalTarget::Test => {
                let mut m: Vec<u32> = split.train.row(user).iter().chain(split.val.row(user)).copied().collect();
                m.sort_unstable();
                m.dedup();
                m
            }
        }
    }
}

/// Users with at least one target item.
pub fn evaluable_users(split: &DatasetSplit, target: EvalTarget) -> Vec<usize> {
    (0..split.n_users()).filter(|&u| !target.targets(split, u).is_empty()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserMetrics {
    pub user: usize,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingMetrics {
    pub cutoffs: Vec<usize>,
    pub per_user: Vec<UserMetrics>,
    pub mean_recall: Vec<f64>,
    pub mean_ndcg: Vec<f64>,
    pub n_evaluable: usize,
}

impl RankingMetrics {
    fn cutoff_index(&self, k: usize) -> Option<usize> {
        self.cutoffs.iter().position(|&c| c == k)
    }

    pub fn recall(&self, k: usize) -> Option<f64> {
        self.cutoff_index(k).map(|j| self.mean_recall[j])
    }

    pub fn ndcg(&self, k: usize) -> Option<f64> {
        self.cutoff_index(k).map(|j| self.mean_ndcg[j])
    }

    pub fn per_user_recall(&self, k: usize) -> Option<Vec<f64>> {
        let j = self.cutoff_index(k)?;
        Some(self.per_user.iter().map(|m| m.recall[j]).collect())
    }

    pub fn per_user_ndcg(&self, k: usize) -> Option<Vec<f64>> {
        let j = self.cutoff_index(k)?;
        Some(self.per_user.iter().map(|m| m.ndcg[j]).collect())
    }

    /// One `metric<TAB>mean<TAB>n_evaluable` record per metric and cutoff.
    pub fn report(&self) -> String {
        let mut out = String::from("metric\tmean\tn_evaluable\n");
        for (name, means) in [("Recall", &self.mean_recall), ("NDCG", &self.mean_ndcg)] {
            for (k, m) in self.cutoffs.iter().zip(means.iter()) {
                let _ = writeln!(out, "{name}@{k}\t{m:.6}\t{}", self.n_evaluable);
            }
        }
        out
    }

    /// `user<TAB>R@k...<TAB>N@k...` per evaluable user.
    pub fn per_user_dump(&self) -> String {
        let mut out = String::from("user");
        for k in &self.cutoffs {
            let _ = write!(out, "\tR@{k}");
        }
        for k in &self.cutoffs {
            let _ = write!(out, "\tN@{k}");
        }
        out.push('\n');
        for m in &self.per_user {
            let _ = write!(out, "{}", m.user);
            for v in m.recall.iter().chain(&m.ndcg) {
                let _ = write!(out, "\t{v:.8}");
            }
            out.push('\n');
        }
        out
    }
}

/// Metrics for `users`, whose score rows are `scores` in the same order.
/// Users without target items are skipped.
pub fn evaluate_users<F: Real>(
    users: &[usize],
    scores: ArrayView2<F>,
    split: &DatasetSplit,
    target: EvalTarget,
    cutoffs: &[usize],
) -> Result<RankingMetrics> {
    if scores.nrows() != users.len() {
        return Err(Error::Dimension(format!("{} score rows for {} users", scores.nrows(), users.len())));
    }
    if scores.ncols() != split.n_items() {
        return Err(Error::Dimension(format!("{} score columns for {} items", scores.ncols(), split.n_items())));
    }
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::Config("cutoffs must be non-empty and positive".into()));
    }
    let max_k = *cutoffs.iter().max().unwrap();
    let per_user: Vec<UserMetrics> = users
        .par_iter()
        .enumerate()
        .filter(|(_, &u)| !target.targets(split, u).is_empty())
        .map(|(row, &u)| {
            let row_scores = scores.row(row).to_vec();
            let ranking = top_k_items(&row_scores, &target.mask(split, u), max_k);
            let test = target.targets(split, u);
            UserMetrics {
                user: u,
                recall: cutoffs.iter().map(|&k| recall_at_k(&ranking, test, k)).collect(),
                ndcg: cutoffs.iter().map(|&k| ndcg_at_k(&ranking, test, k)).collect(),
            }
        })
        .collect();
    if per_user.is_empty() {
        return Err(Error::Empty("no evaluable users".into()));
    }
    let n = per_user.len() as f64;
    let mean = |f: &dyn Fn(&UserMetrics) -> &Vec<f64>| -> Vec<f64> {
        (0..cutoffs.len()).map(|j| per_user.iter().map(|m| f(m)[j]).sum::<f64>() / n).collect()
    };
    let mean_recall = mean(&|m| &m.recall);
    let mean_ndcg = mean(&|m| &m.ndcg);
    Ok(RankingMetrics { cutoffs: cutoffs.to_vec(), n_evaluable: per_user.len(), per_user, mean_recall, mean_ndcg })
}

/// Metrics from a full `n_users × n_items` score matrix.
pub fn evaluate<F: Real>(
    scores: ArrayView2<F>,
    split: &DatasetSplit,
    target: EvalTarget,
    cutoffs: &[usize],
) -> Result<RankingMetrics> {
    let users: Vec<usize> = (0..scores.nrows()).collect();
    if scores.nrows() != split.n_users() {
        return Err(Error::Dimension(format!("{} score rows for {} users", scores.nrows(), split.n_users())));
    }
    evaluate_users(&users, scores, split, target, cutoffs)
}
