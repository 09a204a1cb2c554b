use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{Error, Result};

/// One leave-one-speaker-out fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LosoSplit {
    pub held_out_speaker: String,
    pub train_utterances: BTreeSet<String>,
    pub test_utterances: BTreeSet<String>,
}

/// One split per non-control speaker, in manifest speaker order. Control
/// speakers are never held out and always train.
pub fn generate_loso_splits(corpus: &Corpus) -> Result<Vec<LosoSplit>> {
    let held_out: Vec<&str> = corpus.non_control_speakers().map(|s| s.id.as_str()).collect();
    if held_out.len() < 2 {
        return Err(Error::InsufficientSpeakers(held_out.len()));
    }
    Ok(held_out
        .into_iter()
        .map(|speaker| {
            let (test, train): (Vec<_>, Vec<_>) = corpus
                .utterances()
                .iter()
                .partition(|u| u.speaker_id == speaker);
            LosoSplit {
                held_out_speaker: speaker.to_owned(),
                train_utterances: train.into_iter().map(|u| u.id.clone()).collect(),
                test_utterances: test.into_iter().map(|u| u.id.clone()).collect(),
            }
        })
        .collect())
}
