//! Alignment, error rates, aggregation and significance testing.

pub mod aggregate;
pub mod align;
pub mod significance;

pub use aggregate::{aggregate, GroupScore, Grouping, SpeakerScore, UtteranceScore, Weighting};
pub use align::{align, AlignOp, AlignmentResult};
pub use significance::{paired_permutation_test, SignificanceResult};
