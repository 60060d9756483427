//! Exact cosine-distance top-K neighbors of every user, among real users
//! (train rows) and among pseudo-users.

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;

use crate::data::InteractionMatrix;
use crate::error::{Error, Result};
use crate::hashing::write_atomic;
use crate::pseudo::{ByteReader, PseudoUserMatrix};

/// Distance reported when either vector has zero norm.
pub const ZERO_NORM_DISTANCE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u32,
    pub distance: f64,
}

/// `1 - cos(a, b)` from a dot product and the two squared norms.
///
/// The cosine is taken as `sqrt(dot² / (‖a‖²‖b‖²))` so that a single
/// rounded division decides it: for integer counts, equal cosines then give
/// bit-identical distances and ties are broken by id as intended.
#[inline]
pub fn cosine_distance_from_parts(dot: f64, sq_norm_a: f64, sq_norm_b: f64) -> f64 {
    if sq_norm_a == 0.0 || sq_norm_b == 0.0 {
        return ZERO_NORM_DISTANCE;
    }
    let cos = ((dot * dot) / (sq_norm_a * sq_norm_b)).sqrt().min(1.0).copysign(dot);
    1.0 - cos
}

/// Cosine distance in [0, 2]; 2 when either vector is all zeros.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine_distance: length mismatch");
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    cosine_distance_from_parts(dot, na, nb)
}

fn by_distance_then_id(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id))
}

/// Keep the `k` smallest by (distance, id), sorted.
fn select_k(mut cands: Vec<Neighbor>, k: usize) -> Vec<Neighbor> {
    if k == 0 {
        return Vec::new();
    }
    if cands.len() > k {
        cands.select_nth_unstable_by(k - 1, by_distance_then_id);
        cands.truncate(k);
    }
    cands.sort_unstable_by(by_distance_then_id);
    cands
}

/// Precomputed per-item user lists for repeated real-neighbor queries.
pub struct RealIndex<'a> {
    train: &'a InteractionMatrix,
    item_users: Vec<Vec<u32>>,
}

impl<'a> RealIndex<'a> {
    pub fn new(train: &'a InteractionMatrix) -> Self {
        Self { train, item_users: train.transpose_rows() }
    }

    pub fn query(&self, user: usize, k: usize) -> Vec<Neighbor> {
        let n = self.train.n_users();
        let mut overlap = vec![0u32; n];
        for &i in self.train.row(user) {
            for &v in &self.item_users[i as usize] {
                overlap[v as usize] += 1;
            }
        }
        let su = self.train.row(user).len() as f64;
        let cands = (0..n)
            .filter(|&v| v != user)
            .map(|v| Neighbor {
                id: v as u32,
                distance: cosine_distance_from_parts(overlap[v] as f64, su, self.train.row(v).len() as f64),
            })
            .collect();
        select_k(cands, k)
    }
}

/// The `k` nearest other users to `user` over train rows; ties by id.
pub fn topk_real(user: usize, train: &InteractionMatrix, k: usize) -> Vec<Neighbor> {
    assert!(k >= 1, "k must be at least 1");
    RealIndex::new(train).query(user, k)
}

/// Squared norms of pseudo-user rows, accumulated in item order.
fn pseudo_sq_norms(pseudo: &PseudoUserMatrix) -> Vec<f64> {
    (0..pseudo.n_pseudo())
        .map(|p| pseudo.row(p).iter().map(|&x| x as f64 * x as f64).sum())
        .collect()
}

fn pseudo_query(user: usize, train: &InteractionMatrix, pseudo: &PseudoUserMatrix, sq_norms: &[f64], k: usize) -> Vec<Neighbor> {
    let items = train.row(user);
    let su = items.len() as f64;
    let cands = (0..pseudo.n_pseudo())
        .map(|p| {
            let row = pseudo.row(p);
            let mut dot = 0.0;
            for &i in items {
                dot += row[i as usize] as f64;
            }
            Neighbor { id: p as u32, distance: cosine_distance_from_parts(dot, su, sq_norms[p]) }
        })
        .collect();
    select_k(cands, k)
}

/// The `k` nearest pseudo-users to `user`'s train row; ties by id.
pub fn topk_pseudo(user: usize, train: &InteractionMatrix, pseudo: &PseudoUserMatrix, k: usize) -> Vec<Neighbor> {
    assert!(k >= 1, "k must be at least 1");
    assert_eq!(train.n_items(), pseudo.n_items(), "train and pseudo-user item counts differ");
    pseudo_query(user, train, pseudo, &pseudo_sq_norms(pseudo), k)
}

/// Real and pseudo top-K lists for every user, plus the hashes of the
/// matrices they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborCache {
    pub k: usize,
    pub n_users: usize,
    pub n_pseudo: usize,
    pub train_hash: u64,
    pub pseudo_hash: u64,
    pub real: Vec<Vec<Neighbor>>,
    pub pseudo: Vec<Vec<Neighbor>>,
}

pub fn build_cache(train: &InteractionMatrix, pseudo: &PseudoUserMatrix, k: usize) -> Result<NeighborCache> {
    if k == 0 {
        return Err(Error::Config("neighbor count K must be at least 1".into()));
    }
    if train.n_items() != pseudo.n_items() {
        return Err(Error::Dimension(format!(
            "train has {} items, pseudo-users have {}",
            train.n_items(),
            pseudo.n_items()
        )));
    }
    let index = RealIndex::new(train);
    let sq_norms = pseudo_sq_norms(pseudo);
    let (real, pseudo_lists): (Vec<_>, Vec<_>) = (0..train.n_users())
        .into_par_iter()
        .map(|u| (index.query(u, k), pseudo_query(u, train, pseudo, &sq_norms, k)))
        .unzip();
    Ok(NeighborCache {
        k,
        n_users: train.n_users(),
        n_pseudo: pseudo.n_pseudo(),
        train_hash: train.content_hash(),
        pseudo_hash: pseudo.content_hash(),
        real,
        pseudo: pseudo_lists,
    })
}

const CACHE_MAGIC: &[u8; 4] = b"CDNC";
const CACHE_VERSION: u32 = 1;

impl NeighborCache {
    pub fn real_len(&self) -> usize {
        self.k.min(self.n_users.saturating_sub(1))
    }

    pub fn pseudo_len(&self) -> usize {
        self.k.min(self.n_pseudo)
    }

    /// Header, then for every user `real_len` then `pseudo_len` records of
    /// `(u32 id, f64 distance)`. Written atomically.
    pub fn save(&self, path: &Path) -> Result<()> {
        let (rl, pl) = (self.real_len(), self.pseudo_len());
        let mut buf = Vec::with_capacity(48 + self.n_users * (rl + pl) * 12);
        buf.extend_from_slice(CACHE_MAGIC);
        buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        for v in [self.k as u64, self.n_users as u64, self.n_pseudo as u64, self.train_hash, self.pseudo_hash] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for u in 0..self.n_users {
            assert_eq!(self.real[u].len(), rl, "real list width");
            assert_eq!(self.pseudo[u].len(), pl, "pseudo list width");
            for n in self.real[u].iter().chain(&self.pseudo[u]) {
                buf.extend_from_slice(&n.id.to_le_bytes());
                buf.extend_from_slice(&n.distance.to_le_bytes());
            }
        }
        write_atomic(path, &buf)
    }

    /// Load and check the embedded hashes against the matrices the caller
    /// intends to use.
    pub fn load(path: &Path, train_hash: u64, pseudo_hash: u64) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = ByteReader::new(&bytes, path);
        if r.take(4)? != CACHE_MAGIC {
            return Err(Error::format(path, "not a neighbor cache"));
        }
        if r.u32()? != CACHE_VERSION {
            return Err(Error::format(path, "unsupported version"));
        }
        let k = r.u64()? as usize;
        let n_users = r.u64()? as usize;
        let n_pseudo = r.u64()? as usize;
        let found_train = r.u64()?;
        let found_pseudo = r.u64()?;
        if found_train != train_hash {
            return Err(Error::HashMismatch { what: "neighbor cache train matrix".into(), expected: train_hash, found: found_train });
        }
        if found_pseudo != pseudo_hash {
            return Err(Error::HashMismatch { what: "neighbor cache pseudo matrix".into(), expected: pseudo_hash, found: found_pseudo });
        }
        let mut cache = NeighborCache {
            k,
            n_users,
            n_pseudo,
            train_hash,
            pseudo_hash,
            real: Vec::with_capacity(n_users),
            pseudo: Vec::with_capacity(n_users),
        };
        let (rl, pl) = (cache.real_len(), cache.pseudo_len());
        let mut read = |n: usize| -> Result<Vec<Neighbor>> {
            (0..n).map(|_| Ok(Neighbor { id: r.u32()?, distance: r.f64()? })).collect()
        };
        for _ in 0..n_users {
            let real = read(rl)?;
            let pseudo = read(pl)?;
            cache.real.push(real);
            cache.pseudo.push(pseudo);
        }
        r.finish()?;
        Ok(cache)
    }
}
