//! Filtered-EPRB count modelling.
//!
//! The crate covers the whole analysis chain for two-observer photon
//! correlation experiments: trace-rule probabilities for a two-qubit state,
//! four successively richer detection-filter models that turn those
//! probabilities into expected counts, Pearson chi-square goodness of fit,
//! simultaneous fitting of the state and the filter (a form of state
//! tomography), and an event-level simulator together with the time-tag
//! analytics used to turn detection logs into count tables.
//!
//! Index conventions used throughout: `i`/`j` are Alice's setting/result,
//! `k`/`l` are Bob's setting/result, all in `{0, 1}`. Singles arrays of
//! length 4 are indexed by [`single_index`] and coincidence arrays of
//! length 16 by [`coinc_index`] (lexicographic `ijkl`).

pub mod counts;
pub mod error;
pub mod fit;
pub mod quantum;
pub mod scanblue;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};

/// Index of a `(setting, result)` pair in a length-4 singles array.
#[inline]
pub const fn single_index(setting: usize, result: usize) -> usize {
    setting * 2 + result
}

/// Lexicographic index of `(i, j, k, l)` in a length-16 coincidence array.
#[inline]
pub const fn coinc_index(i: usize, j: usize, k: usize, l: usize) -> usize {
    i * 8 + j * 4 + k * 2 + l
}

/// Inverse of [`coinc_index`].
#[inline]
pub const fn coinc_labels(idx: usize) -> (usize, usize, usize, usize) {
    ((idx >> 3) & 1, (idx >> 2) & 1, (idx >> 1) & 1, idx & 1)
}
