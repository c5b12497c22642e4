//! Toolkit for structured, stepwise action-quality assessment outputs.
//!
//! The crate is organised around the life cycle of one assessment:
//!
//! - [`sar`] parses and renders the four-stage tagged output
//!   (`<look>`, `<recognition>`, `<assessment>`, `<answer>`) and extracts the
//!   machine-readable fields from the answer block.
//! - [`annotations`] holds the hierarchical ground truth, JSONL ingestion,
//!   QA-pair generation and a seeded synthetic corpus generator.
//! - [`rewards`] implements the format, temporal, action and score rewards
//!   and their weighted combination.
//! - [`metrics`] implements corpus-level evaluation (accuracy, SED,
//!   Spearman, relative L2).
//! - [`grpo`] is a desk-scale group-relative policy optimisation loop over a
//!   slot-factored toy policy.

pub mod annotations;
pub mod grpo;
pub mod metrics;
pub mod rewards;
pub mod sar;

pub use annotations::{ActionInstance, Sport, SubActionAnnotation, TimeInterval};
pub use rewards::{RewardBreakdown, RewardConfig, RewardWeights};
pub use sar::{ExtractionSchema, PredictedAssessment, SarDocument};
