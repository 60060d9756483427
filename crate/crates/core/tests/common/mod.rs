#![allow(dead_code)]

use cdiff_core::data::{build_feature_matrix, build_vocab, split_per_user, DatasetSplit, InteractionMatrix, ReviewCorpus, SplitFractions};
use cdiff_core::neighbors::{build_cache, NeighborCache};
use cdiff_core::pseudo::{build_pseudo_users, PseudoUserMatrix, TfidfConfig};
use cdiff_core::synth::{generate, SyntheticSpec};

pub struct Fixture {
    pub split: DatasetSplit,
    pub pseudo: PseudoUserMatrix,
    pub cache: NeighborCache,
}

/// Synthetic users, items and reviews run through split, pseudo-user and
/// neighbor construction.
pub fn fixture(spec: &SyntheticSpec, k: usize, n_pseudo: usize, split_seed: u64) -> Fixture {
    let data = generate(spec).unwrap();
    let rows = data.interactions.iter().map(|r| r.iter().map(|&i| i as u32).collect()).collect();
    let matrix = InteractionMatrix::from_rows(spec.n_items, rows).unwrap();
    let split = split_per_user(&matrix, SplitFractions::default(), split_seed).unwrap();
    let mut corpus = ReviewCorpus::new(spec.n_items);
    for (i, texts) in data.reviews.iter().enumerate() {
        for t in texts {
            corpus.push(i as u32, t.clone());
        }
    }
    let vocab = build_vocab(&corpus);
    let features = build_feature_matrix(&corpus, &vocab).unwrap();
    let pseudo = build_pseudo_users(&features, &TfidfConfig::default(), n_pseudo).unwrap();
    let cache = build_cache(&split.train, &pseudo, k).unwrap();
    Fixture { split, pseudo, cache }
}

pub fn small_spec(n_users: usize, n_items: usize, per_user: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec::new(n_users, n_items, 2, per_user, 3 * n_items, 0.9, seed)
}
