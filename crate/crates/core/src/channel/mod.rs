//! Recognition backends: the simulated dysarthric channel and the client for
//! external backends speaking the line-delimited JSON protocol.

pub mod lattice;
pub mod profile;
pub mod protocol;
pub mod seed;
pub mod sim;

use crate::corpus::{Speaker, Utterance};
use crate::error::Result;

pub use lattice::{Candidate, Lattice, LatticeStep, EPSILON};
pub use profile::{
    apply_adaptation, make_profile, AdaptationGains, AdaptationState, ChannelRates, Setting,
    SeverityRateTable, SpeakerChannelProfile,
};
pub use protocol::{ExternalBackend, RecognizeRequest, Response, Transport};
pub use sim::{recognize, SimulatedBackend};

/// What a backend is asked to recognize.
#[derive(Debug, Clone, Copy)]
pub struct RecognitionRequest<'a> {
    pub speaker: &'a Speaker,
    pub utterance: &'a Utterance,
    pub setting: Setting,
    /// Combined coverage of the stage's synthesis texts over the test texts.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredHyp {
    pub tokens: Vec<String>,
    /// Acoustic log-score, `log p(y|x)`.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NBest {
    pub utterance_id: String,
    pub hyps: Vec<ScoredHyp>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Recognition {
    Lattice(Lattice),
    NBest(NBest),
}

/// A recognizer the pipeline can query. Implementations must be safe to
/// call from several threads at once.
pub trait Backend: Sync {
    fn recognize(&self, req: &RecognitionRequest<'_>) -> Result<Recognition>;
}
