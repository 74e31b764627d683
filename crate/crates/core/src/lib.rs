//! Goal-conditioned hierarchical RL with a probabilistic subgoal
//! representation. A small encoder maps raw states to an intermediate
//! latent; a Gaussian-process layer with a Matérn-3/2 state kernel turns
//! that latent into the subgoal space, either as a batch posterior over a
//! support window (training) or as an exact constant-memory state-space
//! recursion (rollouts). Two SAC agents sit on top: the high level emits
//! latent subgoals every `k` steps, the low level chases them under an
//! intrinsic negative-latent-distance reward.
//!
//! Modules map one-to-one onto the moving parts:
//!
//! - [`autodiff`]: tensors, reverse-mode tape, Adam
//! - [`gp`]: Matérn-3/2 kernel and batch GP posterior
//! - [`statespace`]: the equivalent Kalman-form recursion
//! - [`repr`]: encoder + GP layer as the subgoal mapping φ(s)
//! - [`objective`]: the representation loss over state triplets
//! - [`sac`] / [`replay`]: entropy-regularized agents and the buffer
//! - [`env`]: stochastic point-maze navigation tasks

pub mod autodiff;
pub mod env;
pub mod gp;
pub mod objective;
pub mod replay;
pub mod repr;
pub mod sac;
pub mod statespace;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("cholesky factorization failed for {size}x{size} matrix even with jitter {max_jitter:e}")]
    CholeskyFailure { size: usize, max_jitter: f64 },
    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("non-finite loss in {context}")]
    NonFiniteLoss { context: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("negative state distance {0}")]
    NegativeDistance(f64),
    #[error("non-finite state component")]
    NonFiniteState,
    #[error("innovation variance {0} is not positive; belief is corrupted")]
    DegenerateInnovation(f64),
    #[error("replay buffer has no eligible sample for {0}")]
    InsufficientBuffer(&'static str),
    #[error("triplet batch crosses an episode boundary")]
    CrossEpisodeTriplet,
}

pub type Result<T> = std::result::Result<T, CoreError>;

/// Named RNG streams split off one master seed, so that a change in one
/// component's draw order does not perturb the others.
pub mod rng {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub const STREAM_ENV: u64 = 1;
    pub const STREAM_INIT: u64 = 2;
    pub const STREAM_LOW: u64 = 3;
    pub const STREAM_HIGH: u64 = 4;
    pub const STREAM_BUFFER: u64 = 5;
    pub const STREAM_EVAL: u64 = 6;

    pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id);
        rng
    }
}

/// Euclidean distance between two equal-length state vectors.
pub fn state_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let d: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    // distances are nonnegative by construction; the max guards rounding
    d.max(0.0)
}
