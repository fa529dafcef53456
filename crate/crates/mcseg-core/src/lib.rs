//! Multi-criteria Chinese word segmentation at desk scale.
//!
//! The crate covers the full pipeline: corpus normalization and the joint
//! multi-criteria pool ([`corpus`]), BMES label codec ([`tags`]), the
//! criterion-conditioned encoder with exact gradients ([`labeler`]), the
//! first-order meta pre-training optimizer ([`meta`]), the training driver
//! with deterministic checkpoints ([`train`]) and the scoring suite
//! ([`eval`]).

pub mod corpus;
pub mod error;
pub mod eval;
pub mod files;
pub mod labeler;
pub mod meta;
pub mod real;
pub mod rng;
pub mod tags;
pub mod train;

pub use corpus::{CriterionId, JointCorpus, SegmentedSentence, Vocab};
pub use error::{Error, Result};
pub use labeler::{AugmentedInput, ModelConfig, ModelParams};
pub use real::{Dtype, Real};
pub use tags::Tag;
