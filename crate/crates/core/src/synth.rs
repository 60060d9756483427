//! Clustered synthetic ratings and reviews.
//!
//! Users and items are dealt round-robin into clusters. A user's
//! interactions fall inside its own cluster with probability `rho`, and an
//! item's review words come from its cluster's vocabulary block with the
//! same probability. Item popularity inside a pool follows a mild power law
//! so the data is not perfectly uniform.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample_weighted;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::write_atomic;
use crate::rng::{stage_rng, StageRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub interactions_per_user: usize,
    pub vocab_size: usize,
    /// Probability that an interaction or review word stays in the cluster.
    pub rho: f64,
    pub seed: u64,
    #[serde(default = "SyntheticSpec::default_reviews_per_item")]
    pub reviews_per_item: usize,
    #[serde(default = "SyntheticSpec::default_words_per_review")]
    pub words_per_review: usize,
    /// Exponent of the within-pool popularity law `w_r = (r + 1)^−s`.
    #[serde(default = "SyntheticSpec::default_popularity_exponent")]
    pub popularity_exponent: f64,
}

impl SyntheticSpec {
    fn default_reviews_per_item() -> usize {
        3
    }

    fn default_words_per_review() -> usize {
        20
    }

    fn default_popularity_exponent() -> f64 {
        0.5
    }

    pub fn new(n_users: usize, n_items: usize, n_clusters: usize, interactions_per_user: usize, vocab_size: usize, rho: f64, seed: u64) -> Self {
        Self {
            n_users,
            n_items,
            n_clusters,
            interactions_per_user,
            vocab_size,
            rho,
            seed,
            reviews_per_item: Self::default_reviews_per_item(),
            words_per_review: Self::default_words_per_review(),
            popularity_exponent: Self::default_popularity_exponent(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_clusters < 2 {
            return bad(format!("n_clusters must be at least 2, got {}", self.n_clusters));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1], got {}", self.rho));
        }
        if self.n_users == 0 || self.n_items == 0 {
            return bad("n_users and n_items must be positive".into());
        }
        if self.n_items < self.n_clusters || self.vocab_size < self.n_clusters {
            return bad("every cluster needs at least one item and one vocabulary word".into());
        }
        if self.interactions_per_user == 0 || self.interactions_per_user > self.n_items / self.n_clusters {
            return bad(format!(
                "interactions_per_user must be in 1..={} (smallest cluster size)",
                self.n_items / self.n_clusters
            ));
        }
        if self.reviews_per_item == 0 || self.words_per_review == 0 {
            return bad("reviews_per_item and words_per_review must be positive".into());
        }
        if !(self.popularity_exponent.is_finite() && self.popularity_exponent >= 0.0) {
            return bad("popularity_exponent must be non-negative".into());
        }
        Ok(())
    }

    pub fn user_cluster(&self, user: usize) -> usize {
        user % self.n_clusters
    }

    pub fn item_cluster(&self, item: usize) -> usize {
        item % self.n_clusters
    }

    /// Vocabulary indices owned by `cluster`: a contiguous block.
    pub fn vocab_block(&self, cluster: usize) -> std::ops::Range<usize> {
        let per = self.vocab_size / self.n_clusters;
        let start = cluster * per;
        let end = if cluster + 1 == self.n_clusters { self.vocab_size } else { start + per };
        start..end
    }
}

pub fn user_id(u: usize) -> String {
    format!("u{u}")
}

pub fn item_id(i: usize) -> String {
    format!("i{i}")
}

pub fn word(w: usize) -> String {
    format!("w{w:04}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    /// Sorted item indices per user.
    pub interactions: Vec<Vec<usize>>,
    /// Review texts per item.
    pub reviews: Vec<Vec<String>>,
}

impl SyntheticData {
    /// Fraction of all interactions whose item shares the user's cluster.
    pub fn within_cluster_fraction(&self, spec: &SyntheticSpec) -> f64 {
        let (mut inside, mut total) = (0usize, 0usize);
        for (u, items) in self.interactions.iter().enumerate() {
            inside += items.iter().filter(|&&i| spec.item_cluster(i) == spec.user_cluster(u)).count();
            total += items.len();
        }
        inside as f64 / total as f64
    }
}

fn popularity(rank: usize, exponent: f64) -> f64 {
    (rank as f64 + 1.0).powf(-exponent)
}

/// Draw `n` distinct entries of `pool` with popularity weights by position.
fn weighted_distinct(rng: &mut StageRng, pool: &[usize], n: usize, exponent: f64) -> Vec<usize> {
    let n = n.min(pool.len());
    if n == 0 {
        return Vec::new();
    }
    sample_weighted(rng, pool.len(), |r| popularity(r, exponent), n)
        .expect("positive weights")
        .into_iter()
        .map(|r| pool[r])
        .collect()
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let c = spec.n_clusters;
    let in_cluster: Vec<Vec<usize>> = (0..c).map(|k| (0..spec.n_items).filter(|&i| spec.item_cluster(i) == k).collect()).collect();
    let out_cluster: Vec<Vec<usize>> = (0..c).map(|k| (0..spec.n_items).filter(|&i| spec.item_cluster(i) != k).collect()).collect();

    let mut rng = stage_rng(spec.seed, "synth-interactions", 0);
    let n = spec.interactions_per_user;
    let binomial = Binomial::new(n as u64, spec.rho).map_err(|e| Error::Config(e.to_string()))?;
    let mut interactions: Vec<Vec<usize>> = Vec::with_capacity(spec.n_users);
    for u in 0..spec.n_users {
        let k = spec.user_cluster(u);
        let n_in = binomial.sample(&mut rng) as usize;
        let mut items = weighted_distinct(&mut rng, &in_cluster[k], n_in, spec.popularity_exponent);
        items.extend(weighted_distinct(&mut rng, &out_cluster[k], n - n_in, spec.popularity_exponent));
        items.sort_unstable();
        interactions.push(items);
    }
    // every item gets at least one interaction, from a user of its cluster
    let mut seen = vec![false; spec.n_items];
    for items in &interactions {
        for &i in items {
            seen[i] = true;
        }
    }
    for i in (0..spec.n_items).filter(|&i| !seen[i]) {
        let k = spec.item_cluster(i);
        let members = spec.n_users.saturating_sub(k).div_ceil(c);
        if members == 0 {
            continue;
        }
        let u = k + c * rng.random_range(0..members);
        interactions[u].push(i);
        interactions[u].sort_unstable();
    }

    let mut rng = stage_rng(spec.seed, "synth-reviews", 0);
    let reviews = (0..spec.n_items)
        .map(|i| {
            let own = spec.vocab_block(spec.item_cluster(i));
            let others: Vec<usize> = (0..spec.vocab_size).filter(|w| !own.contains(w)).collect();
            let own: Vec<usize> = own.collect();
            (0..spec.reviews_per_item)
                .map(|_| {
                    let words: Vec<String> = (0..spec.words_per_review)
                        .map(|_| {
                            let pool = if others.is_empty() || rng.random_bool(spec.rho) { &own } else { &others };
                            word(pool[weighted_index(&mut rng, pool.len(), spec.popularity_exponent)])
                        })
                        .collect();
                    words.join(" ")
                })
                .collect()
        })
        .collect();
    Ok(SyntheticData { interactions, reviews })
}

fn weighted_index(rng: &mut StageRng, len: usize, exponent: f64) -> usize {
    sample_weighted(rng, len, |r| popularity(r, exponent), 1).expect("positive weights").index(0)
}

/// Paths written by [`write_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFiles {
    pub ratings: PathBuf,
    pub reviews: PathBuf,
}

/// Generate and write `ratings.tsv` (`user, item, 5`) and `reviews.tsv`
/// (`item, text`) into `dir`.
pub fn write_dataset(spec: &SyntheticSpec, dir: &Path) -> Result<SyntheticFiles> {
    let data = generate(spec)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut ratings = String::new();
    for (u, items) in data.interactions.iter().enumerate() {
        for &i in items {
            let _ = writeln!(ratings, "{}\t{}\t5", user_id(u), item_id(i));
        }
    }
    let mut reviews = String::new();
    for (i, texts) in data.reviews.iter().enumerate() {
        for text in texts {
            let _ = writeln!(reviews, "{}\t{text}", item_id(i));
        }
    }
    let files = SyntheticFiles { ratings: dir.join("ratings.tsv"), reviews: dir.join("reviews.tsv") };
    write_atomic(&files.ratings, ratings.as_bytes())?;
    write_atomic(&files.reviews, reviews.as_bytes())?;
    Ok(files)
}
