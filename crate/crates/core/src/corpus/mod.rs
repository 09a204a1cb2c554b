//! Corpus data model: utterances, speakers, manifests and
//! leave-one-speaker-out splits.

mod loso;
mod manifest;
pub mod synthetic;
mod tokenize;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use loso::{generate_loso_splits, LosoSplit};
pub use manifest::{load_manifest, parse_manifest, write_manifest_jsonl, ManifestFormat, ManifestRecord};
pub use tokenize::{tokenize, Normalization, Unit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    #[default]
    Test,
}

/// Dysarthria severity of a speaker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Moderate,
    Low,
    VeryLow,
    Control,
    Unknown,
}

impl Severity {
    /// Groups reported as table columns, in display order.
    pub const GROUPED: [Severity; 3] = [Severity::Moderate, Severity::Low, Severity::VeryLow];

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Moderate => "moderate",
            Severity::Low => "low",
            Severity::VeryLow => "very_low",
            Severity::Control => "control",
            Severity::Unknown => "unknown",
        }
    }

    /// Column label as printed in result tables.
    pub fn short_label(self) -> &'static str {
        match self {
            Severity::Moderate => "M",
            Severity::Low => "L",
            Severity::VeryLow => "VL",
            Severity::Control => "C",
            Severity::Unknown => "?",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Severity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "moderate" => Ok(Severity::Moderate),
            "low" => Ok(Severity::Low),
            "very_low" => Ok(Severity::VeryLow),
            "control" => Ok(Severity::Control),
            "unknown" => Ok(Severity::Unknown),
            other => Err(format!("unknown severity `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub split_tag: SplitTag,
}

impl Utterance {
    /// Build an utterance, normalizing and tokenizing `text`.
    pub fn new(
        id: impl Into<String>,
        speaker_id: impl Into<String>,
        text: impl Into<String>,
        unit: Unit,
        normalization: Normalization,
    ) -> Result<Self> {
        let id = id.into();
        let text = text.into();
        let tokens = tokenize(&normalization.apply(&text), unit)
            .ok_or_else(|| Error::EmptyUtterance(id.clone()))?;
        Ok(Self {
            id,
            speaker_id: speaker_id.into(),
            text,
            tokens,
            split_tag: SplitTag::default(),
        })
    }

    pub fn with_split(mut self, tag: SplitTag) -> Self {
        self.split_tag = tag;
        self
    }

    /// Normalized text with tokens joined by single spaces.
    pub fn token_text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Speaker {
    pub id: String,
    pub severity: Severity,
    pub unit: Unit,
}

impl Speaker {
    pub fn new(id: impl Into<String>, severity: Severity, unit: Unit) -> Self {
        Self {
            id: id.into(),
            severity,
            unit,
        }
    }

    pub fn is_control(&self) -> bool {
        self.severity == Severity::Control
    }
}

/// Validated, immutable collection of utterances and their speakers.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    utterances: Vec<Utterance>,
    speakers: BTreeMap<String, Speaker>,
    // Speaker ids in order of first appearance.
    speaker_order: Vec<String>,
}

impl Corpus {
    pub fn new(utterances: Vec<Utterance>, speakers: impl IntoIterator<Item = Speaker>) -> Result<Self> {
        let speakers: BTreeMap<String, Speaker> =
            speakers.into_iter().map(|s| (s.id.clone(), s)).collect();
        let mut seen = HashSet::with_capacity(utterances.len());
        let mut speaker_order = Vec::new();
        let mut ordered = BTreeSet::new();
        for utt in &utterances {
            if !seen.insert(utt.id.as_str()) {
                return Err(Error::DuplicateId(utt.id.clone()));
            }
            if !speakers.contains_key(&utt.speaker_id) {
                return Err(Error::UnknownSpeaker {
                    utterance: utt.id.clone(),
                    speaker: utt.speaker_id.clone(),
                });
            }
            if utt.tokens.is_empty() {
                return Err(Error::EmptyUtterance(utt.id.clone()));
            }
            if ordered.insert(utt.speaker_id.clone()) {
                speaker_order.push(utt.speaker_id.clone());
            }
        }
        // Speakers without utterances still get a stable position.
        for id in speakers.keys() {
            if ordered.insert(id.clone()) {
                speaker_order.push(id.clone());
            }
        }
        Ok(Self {
            utterances,
            speakers,
            speaker_order,
        })
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn speakers(&self) -> &BTreeMap<String, Speaker> {
        &self.speakers
    }

    pub fn speaker(&self, id: &str) -> Option<&Speaker> {
        self.speakers.get(id)
    }

    /// Speakers in manifest order.
    pub fn speakers_in_order(&self) -> impl Iterator<Item = &Speaker> {
        self.speaker_order.iter().map(|id| &self.speakers[id])
    }

    pub fn utterance(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    pub fn utterances_of<'a>(&'a self, speaker_id: &'a str) -> impl Iterator<Item = &'a Utterance> + 'a {
        self.utterances.iter().filter(move |u| u.speaker_id == speaker_id)
    }

    pub fn non_control_speakers(&self) -> impl Iterator<Item = &Speaker> {
        self.speakers_in_order().filter(|s| !s.is_control())
    }

    /// Sorted distinct tokens over the whole corpus.
    pub fn vocabulary(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .utterances
            .iter()
            .flat_map(|u| u.tokens.iter().map(String::as_str))
            .collect();
        set.into_iter().map(str::to_owned).collect()
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(id: &str, spk: &str, text: &str) -> Utterance {
        Utterance::new(id, spk, text, Unit::Word, Normalization::default()).unwrap()
    }

    #[test]
    fn duplicate_id_rejected() {
        let speakers = [Speaker::new("A", Severity::Low, Unit::Word)];
        let err = Corpus::new(vec![utt("u1", "A", "x"), utt("u1", "A", "y")], speakers).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(id) if id == "u1"));
    }

    #[test]
    fn unresolvable_speaker_rejected() {
        let speakers = [Speaker::new("A", Severity::Low, Unit::Word)];
        let err = Corpus::new(vec![utt("u1", "B", "x")], speakers).unwrap_err();
        assert!(matches!(err, Error::UnknownSpeaker { .. }));
    }

    #[test]
    fn empty_text_rejected() {
        let err = Utterance::new("u1", "A", " ?! ", Unit::Word, Normalization::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyUtterance(_)));
    }

    #[test]
    fn speaker_order_follows_manifest() {
        let speakers = [
            Speaker::new("B", Severity::Low, Unit::Word),
            Speaker::new("A", Severity::Low, Unit::Word),
        ];
        let c = Corpus::new(vec![utt("u1", "B", "x"), utt("u2", "A", "y")], speakers).unwrap();
        let ids: Vec<_> = c.speakers_in_order().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["B", "A"]);
        assert_eq!(c.vocabulary(), ["x", "y"]);
    }
}
