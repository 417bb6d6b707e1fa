//! Training and annealed direct-sparsity-control pruning for small neural
//! networks: a dense tensor engine with hand-written backward passes, the
//! four reference architectures, optimizers, the weight- and channel-level
//! pruning controllers, structural compaction and cost accounting, and the
//! dataset loaders used by the experiments.

// `!(x > 0.0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checkpoint;
pub mod compact;
pub mod data;
pub mod error;
pub mod exec;
pub mod nn;
pub mod optim;
pub mod prune;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
