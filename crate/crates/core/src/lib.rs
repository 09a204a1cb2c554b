//! Experimentation harness for sentence-level dysarthric speech recognition
//! augmentation studies.
//!
//! The crate covers corpus loading and leave-one-speaker-out splits, n-gram
//! text coverage and greedy text selection, an add-k n-gram language model,
//! a seeded simulated recognition channel plus a line-JSON client for
//! external recognizers, shallow-fusion decoding, WER/CER scoring with
//! significance tests, the stepwise augmentation pipeline and table
//! rendering.

pub mod channel;
pub mod corpus;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod lm;
pub mod pipeline;
pub mod report;
pub mod textcov;

pub use channel::{
    AdaptationGains, Backend, ChannelRates, ExternalBackend, Lattice, Recognition, RecognitionRequest, Setting,
    SeverityRateTable, SimulatedBackend,
};
pub use corpus::{Corpus, Normalization, Severity, Speaker, SplitTag, Unit, Utterance};
pub use decoder::{decode, rescore_nbest, FusionConfig, Hypothesis};
pub use error::{Error, ErrorKind, Result};
pub use eval::{align, aggregate, paired_permutation_test, AlignmentResult, Grouping, Weighting};
pub use lm::NGramLM;
pub use textcov::{ngram_coverage, select_covering_set, CoverageReport, CoverageSpec};
pub use pipeline::{run_stepwise, summarize, PipelineConfig, SpeakerTrajectory};
pub use report::{average_final, compute_deltas, render, Format, ResultsTable};
