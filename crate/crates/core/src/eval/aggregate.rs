use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::align::AlignmentResult;
use crate::corpus::{Severity, Speaker, Unit};
use crate::error::{Error, Result};

/// Per-utterance error counts, as emitted in score JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceScore {
    pub utterance_id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub speaker_id: String,
    #[serde(rename = "S")]
    pub substitutions: usize,
    #[serde(rename = "D")]
    pub deletions: usize,
    #[serde(rename = "I")]
    pub insertions: usize,
    #[serde(rename = "N")]
    pub ref_len: usize,
    pub rate: f64,
}

impl UtteranceScore {
    pub fn from_alignment(
        utterance_id: impl Into<String>,
        speaker_id: impl Into<String>,
        alignment: &AlignmentResult,
    ) -> Self {
        let utterance_id = utterance_id.into();
        if alignment.ref_len == 0 && alignment.errors() > 0 {
            log::warn!("utterance {utterance_id}: empty reference, rate uses N = 1");
        }
        Self {
            utterance_id,
            speaker_id: speaker_id.into(),
            substitutions: alignment.substitutions,
            deletions: alignment.deletions,
            insertions: alignment.insertions,
            ref_len: alignment.ref_len,
            rate: alignment.rate(),
        }
    }

    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Micro-averaged score of one speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerScore {
    pub speaker_id: String,
    pub unit: Unit,
    pub errors: usize,
    pub ref_tokens: usize,
    pub utterances: usize,
    pub rate: f64,
}

impl SpeakerScore {
    /// Total errors over total reference tokens of `scores`.
    pub fn from_scores<'a>(
        speaker_id: impl Into<String>,
        unit: Unit,
        scores: impl IntoIterator<Item = &'a UtteranceScore>,
    ) -> Self {
        let (mut errors, mut ref_tokens, mut utterances) = (0, 0, 0);
        for s in scores {
            errors += s.errors();
            ref_tokens += s.ref_len;
            utterances += 1;
        }
        Self {
            speaker_id: speaker_id.into(),
            unit,
            errors,
            ref_tokens,
            utterances,
            rate: errors as f64 / ref_tokens.max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    Speaker,
    Severity,
    Overall,
}

/// How members are combined into a group score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// Unweighted mean of member speakers' micro rates.
    #[default]
    Speaker,
    /// Unweighted mean of member utterances' rates.
    Utterance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub group: String,
    pub members: usize,
    /// Fraction; see [`percent`](Self::percent).
    pub rate: f64,
}

impl GroupScore {
    pub fn percent(&self) -> f64 {
        self.rate * 100.0
    }
}

/// Aggregate per-utterance scores.
///
/// `Speaker` yields one micro-averaged entry per speaker (manifest order is
/// not known here, so entries are sorted by id). `Severity` yields the
/// moderate / low / very-low groups that have members. `Overall` is the
/// single `AVG` entry over all non-control speakers. Control speakers never
/// enter severity or overall groups, and unknown-severity speakers enter
/// only the overall one.
pub fn aggregate(
    results: &[UtteranceScore],
    speakers: &BTreeMap<String, Speaker>,
    grouping: Grouping,
    weighting: Weighting,
) -> Result<Vec<GroupScore>> {
    let mut by_speaker: BTreeMap<&str, Vec<&UtteranceScore>> = BTreeMap::new();
    for r in results {
        if !speakers.contains_key(&r.speaker_id) {
            return Err(Error::UnknownSpeaker {
                utterance: r.utterance_id.clone(),
                speaker: r.speaker_id.clone(),
            });
        }
        by_speaker.entry(r.speaker_id.as_str()).or_default().push(r);
    }
    if by_speaker.is_empty() {
        return Err(Error::EmptyGroup(format!("{grouping:?}").to_lowercase()));
    }

    let speaker_scores: BTreeMap<&str, SpeakerScore> = by_speaker
        .iter()
        .map(|(id, rs)| {
            let unit = speakers[*id].unit;
            (*id, SpeakerScore::from_scores(*id, unit, rs.iter().copied()))
        })
        .collect();

    let combine = |label: String, members: Vec<&str>| -> Result<GroupScore> {
        if members.is_empty() {
            return Err(Error::EmptyGroup(label));
        }
        let rate = match weighting {
            Weighting::Speaker => mean(members.iter().map(|m| speaker_scores[m].rate)),
            Weighting::Utterance => mean(
                members
                    .iter()
                    .flat_map(|m| by_speaker[m].iter().map(|r| r.rate)),
            ),
        };
        Ok(GroupScore {
            group: label,
            members: members.len(),
            rate,
        })
    };

    match grouping {
        Grouping::Speaker => Ok(speaker_scores
            .values()
            .map(|s| GroupScore {
                group: s.speaker_id.clone(),
                members: 1,
                rate: match weighting {
                    Weighting::Speaker => s.rate,
                    Weighting::Utterance => mean(by_speaker[s.speaker_id.as_str()].iter().map(|r| r.rate)),
                },
            })
            .collect()),
        Grouping::Severity => {
            let groups: Vec<GroupScore> = Severity::GROUPED
                .iter()
                .filter_map(|sev| {
                    let members: Vec<&str> = speaker_scores
                        .keys()
                        .copied()
                        .filter(|id| speakers[*id].severity == *sev)
                        .collect();
                    (!members.is_empty()).then(|| combine(sev.short_label().to_owned(), members))
                })
                .collect::<Result<_>>()?;
            if groups.is_empty() {
                return Err(Error::EmptyGroup("severity".into()));
            }
            Ok(groups)
        }
        Grouping::Overall => {
            let members: Vec<&str> = speaker_scores
                .keys()
                .copied()
                .filter(|id| !speakers[*id].is_control())
                .collect();
            Ok(vec![combine("AVG".into(), members)?])
        }
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
