//! A recursive, hierarchy-aware Monte Carlo tree search guided by a modular
//! actor-critic network that interprets a library of named programs, plus the
//! reinforcement-learning loop that trains it from post-condition rewards alone.
//!
//! The crate is organised around the execution pipeline:
//!
//! - [`nn`]: dense vectors/matrices, linear layers, a one-step LSTM cell and
//!   the Adam optimizer, all with explicit analytic backward passes.
//! - [`net`]: the actor-critic interpreter network (encoder, program
//!   embeddings, LSTM core, policy and value heads) and its training loss.
//! - [`env`]: the environment/program-library contract and the two task
//!   environments (list sorting and Tower of Hanoi).
//! - [`mcts`]: the recursive neural-guided tree search.
//! - [`training`]: curriculum scheduling, replay buffer and the outer loop.
//! - [`config`], [`checkpoint`], [`eval`]: run configuration, persistence,
//!   evaluation and the Hanoi generalization certificate.

pub mod checkpoint;
pub mod config;
pub mod env;
pub mod eval;
pub mod mcts;
pub mod net;
pub mod nn;
pub mod training;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("illegal action {action}: {reason}")]
    IllegalAction { action: String, reason: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// SplitMix64 finalizer; used to derive independent seed streams from a root seed.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives a deterministic RNG for a labelled stream of a root seed.
///
/// Streams are identified by up to three coordinates (e.g. iteration,
/// phase, episode index) so that parallel episode generation draws from
/// disjoint, order-independent streams.
pub fn seed_stream(root: u64, a: u64, b: u64, c: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut s = mix64(root);
    s = mix64(s ^ mix64(a));
    s = mix64(s ^ mix64(b));
    s = mix64(s ^ mix64(c));
    ChaCha8Rng::seed_from_u64(s)
}
