//! Collaborative diffusion recommender.
//!
//! The crate is organised the way data flows through a run:
//!
//! * [`data`]: ratings, binary interaction matrices, per-user splits and
//!   review-word count matrices.
//! * [`pseudo`]: TF-IDF + min-max pseudo-user vectors built from review words.
//! * [`neighbors`]: exact cosine top-K neighbor caches over real users and
//!   pseudo-users.
//! * [`diffusion`]: noise schedule, MLP denoiser, weighted x0 loss, trainer
//!   and reduced-step inference.
//! * [`aggregate`]: attention strategies and the mixture of a user's own
//!   prediction with neighbor predictions.
//! * [`eval`]: masked top-K ranking, Recall/NDCG and a paired t-test.
//! * [`synth`]: clustered synthetic ratings + reviews for desk-scale runs.

pub mod aggregate;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod hashing;
pub mod neighbors;
pub mod pseudo;
pub mod real;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use real::Real;
