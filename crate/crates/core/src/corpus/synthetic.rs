//! Deterministic synthetic corpora for desk-scale runs of the pipeline.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, Normalization, Severity, Speaker, SplitTag, Unit, Utterance};
use crate::error::Result;

const WORDS: &[&str] = &[
    "the", "a", "i", "you", "we", "my", "your", "this", "that", "please", "want", "need", "have",
    "like", "go", "come", "take", "give", "help", "open", "close", "turn", "call", "eat", "drink",
    "water", "tea", "coffee", "bread", "apple", "door", "window", "light", "phone", "bed", "chair",
    "table", "book", "music", "doctor", "nurse", "friend", "family", "mother", "father", "home",
    "room", "kitchen", "garden", "today", "tomorrow", "now", "later", "morning", "evening", "night",
    "very", "more", "less", "good", "bad", "hot", "cold", "tired", "hungry", "thirsty", "happy",
    "sad", "up", "down", "on", "off", "in", "out", "with", "to", "for", "and", "not", "is", "am",
    "are", "can", "will", "thank", "yes", "no", "hello", "goodbye", "walk", "sit", "sleep", "read",
    "watch", "listen", "speak", "slowly", "again",
];

/// Shape of a synthetic corpus.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    /// `(severity, number of speakers)` groups, generated in order.
    pub groups: Vec<(Severity, usize)>,
    pub utterances_per_speaker: usize,
    /// Size of the shared sentence pool that speakers draw from.
    pub sentence_pool: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            groups: vec![(Severity::Moderate, 8), (Severity::Low, 8), (Severity::VeryLow, 8)],
            utterances_per_speaker: 50,
            sentence_pool: 400,
            min_words: 4,
            max_words: 10,
            seed: 0,
        }
    }
}

/// Generate a word-unit corpus. Speaker ids are two-digit numbers in
/// generation order, utterance ids `<speaker>_<index>`.
pub fn generate(spec: &SyntheticSpec) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let max_words = spec.max_words.max(spec.min_words).max(1);
    let min_words = spec.min_words.clamp(1, max_words);
    let pool: Vec<String> = (0..spec.sentence_pool.max(1))
        .map(|_| {
            let len = rng.gen_range(min_words..=max_words);
            (0..len)
                .map(|_| *WORDS.choose(&mut rng).expect("non-empty word list"))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();

    let mut speakers = Vec::new();
    let mut utterances = Vec::new();
    let mut index = 1usize;
    for &(severity, count) in &spec.groups {
        for _ in 0..count {
            let id = format!("{index:02}");
            index += 1;
            speakers.push(Speaker::new(id.clone(), severity, Unit::Word));
            for u in 0..spec.utterances_per_speaker {
                let text = pool.choose(&mut rng).expect("non-empty pool").clone();
                let utt = Utterance::new(format!("{id}_{u:03}"), id.clone(), text, Unit::Word, Normalization::default())?
                    .with_split(SplitTag::Test);
                utterances.push(utt);
            }
        }
    }
    Corpus::new(utterances, speakers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let spec = SyntheticSpec {
            utterances_per_speaker: 5,
            ..SyntheticSpec::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.speakers().len(), 24);
        assert_eq!(a.len(), 120);
        assert_eq!(a.speaker("01").unwrap().severity, Severity::Moderate);
        assert_eq!(a.speaker("24").unwrap().severity, Severity::VeryLow);
    }
}
