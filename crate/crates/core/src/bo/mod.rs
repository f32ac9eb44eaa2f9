//! Bayesian optimization over decomposition policies: a Matern-kernel
//! Gaussian process on encoded policies, expected improvement, and the
//! search loop that alternates proposal, evaluation and posterior update.

pub mod acquisition;
pub mod encoding;
pub mod gp;
pub mod search;

pub use acquisition::{expected_improvement, propose_from_pool, propose_next, PoolConfig, Proposal};
pub use encoding::{decode, decode_drafts, encode, EncodedPolicy};
pub use gp::{gram, matern_kernel, GpConfig, GpState};
pub use search::{debo_search, random_search, LogEntry, RunLog, SearchConfig, SearchResult};
