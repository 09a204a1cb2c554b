//! Simulated recognizer: a severity-parameterized noisy channel that turns a
//! reference utterance into a lattice.
//!
//! For every reference token one event is drawn: deletion with probability
//! `del`, substitution by one of the token's confusables with probability
//! `sub`, otherwise the token is heard correctly. The step's candidate
//! distribution mixes the channel prior (true token `1 - sub - del`,
//! epsilon `del`, confusables sharing `sub`) with a point mass on the drawn
//! event, weighted by [`EVIDENCE_WEIGHT`]. After each step an insertion step
//! with uniform candidates over a 5-token vocabulary sample follows with
//! probability `ins`.
//!
//! Every step consumes the same random draws whatever the rates are, so two
//! profiles differing only in rates see coupled noise: lowering rates can
//! only remove errors.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lattice::{Candidate, Lattice, LatticeStep};
use super::profile::{
    apply_adaptation, make_profile, AdaptationGains, SeverityRateTable, SpeakerChannelProfile,
};
use super::seed::{fnv1a64, mix64, stream_seed};
use super::{Backend, Recognition, RecognitionRequest};
use crate::corpus::{Corpus, Utterance};
use crate::error::{Error, Result};
use crate::lm::UNK;

/// Weight of the drawn event in each step's posterior.
pub const EVIDENCE_WEIGHT: f64 = 0.6;
pub const MAX_CONFUSABLES: usize = 4;
pub const INSERTION_SAMPLE: usize = 5;

/// Up to [`MAX_CONFUSABLES`] tokens the speaker confuses with `token`,
/// fixed per (confusion seed, token). `vocab` must be sorted.
pub fn confusables(confusion_seed: u64, token: &str, vocab: &[String]) -> Vec<String> {
    let own = vocab.binary_search_by(|w| w.as_str().cmp(token)).ok();
    let others = vocab.len() - usize::from(own.is_some());
    if others == 0 {
        return vec![UNK.to_owned()];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(&[confusion_seed, fnv1a64(token)]));
    let mut picks = index::sample(&mut rng, others, others.min(MAX_CONFUSABLES)).into_vec();
    picks.sort_unstable();
    picks
        .into_iter()
        .map(|i| match own {
            Some(pos) if i >= pos => vocab[i + 1].clone(),
            _ => vocab[i].clone(),
        })
        .collect()
}

enum Heard {
    Correct,
    Deleted,
    Substituted(usize),
}

/// Produce the lattice for `utterance` under the profile's effective rates.
/// `vocab` must be sorted and deduplicated.
pub fn recognize(
    profile: &SpeakerChannelProfile,
    utterance: &Utterance,
    vocab: &[String],
    stream_seed: u64,
) -> Result<Lattice> {
    if vocab.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let rates = profile.effective;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let mut steps = Vec::with_capacity(utterance.tokens.len() * 2);
    for token in &utterance.tokens {
        // Fixed draw pattern per token.
        let u_event: f64 = rng.gen();
        let u_confusable: f64 = rng.gen();
        let u_insert: f64 = rng.gen();
        let insert_seed: u64 = rng.gen();

        let confs = confusables(profile.confusion_seed, token, vocab);
        let heard = if u_event < rates.del {
            Heard::Deleted
        } else if u_event < rates.del + rates.sub {
            let k = ((u_confusable * confs.len() as f64) as usize).min(confs.len() - 1);
            Heard::Substituted(k)
        } else {
            Heard::Correct
        };

        let prior = 1.0 - EVIDENCE_WEIGHT;
        let bump = |hit: bool| if hit { EVIDENCE_WEIGHT } else { 0.0 };
        let mut candidates = Vec::with_capacity(confs.len() + 2);
        let p_true = prior * (1.0 - rates.sub - rates.del) + bump(matches!(heard, Heard::Correct));
        candidates.push((Some(token.clone()), p_true));
        let p_eps = prior * rates.del + bump(matches!(heard, Heard::Deleted));
        candidates.push((None, p_eps));
        let share = rates.sub / confs.len() as f64;
        for (k, c) in confs.into_iter().enumerate() {
            let p = prior * share + bump(matches!(heard, Heard::Substituted(j) if j == k));
            candidates.push((Some(c), p));
        }
        steps.push(LatticeStep::new(
            candidates
                .into_iter()
                .filter(|(_, p)| *p > 0.0)
                .map(|(token, p)| Candidate { token, logp: p.ln() })
                .collect(),
        ));

        if u_insert < rates.ins {
            let mut ins_rng = ChaCha8Rng::seed_from_u64(insert_seed);
            let n = vocab.len().min(INSERTION_SAMPLE);
            let mut picks = index::sample(&mut ins_rng, vocab.len(), n).into_vec();
            picks.sort_unstable();
            let logp = (1.0 / n as f64).ln();
            steps.push(LatticeStep::new(
                picks.into_iter().map(|i| Candidate::token(vocab[i].clone(), logp)).collect(),
            ));
        }
    }
    Lattice::new(utterance.id.clone(), utterance.tokens.len(), steps)
}

/// [`Backend`] backed by the simulated channel.
#[derive(Debug, Clone)]
pub struct SimulatedBackend {
    profiles: BTreeMap<String, SpeakerChannelProfile>,
    gains: AdaptationGains,
    vocab: Vec<String>,
    master_seed: u64,
}

impl SimulatedBackend {
    /// Profiles are built for every non-control speaker; a severity missing
    /// from `table` is an error.
    pub fn new(
        corpus: &Corpus,
        table: &SeverityRateTable,
        gains: AdaptationGains,
        master_seed: u64,
    ) -> Result<Self> {
        gains.validate()?;
        let vocab = corpus.vocabulary();
        if vocab.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let profiles = corpus
            .non_control_speakers()
            .map(|s| make_profile(s, table, master_seed).map(|p| (s.id.clone(), p)))
            .collect::<Result<_>>()?;
        Ok(Self {
            profiles,
            gains,
            vocab,
            master_seed,
        })
    }

    pub fn profile(&self, speaker_id: &str) -> Option<&SpeakerChannelProfile> {
        self.profiles.get(speaker_id)
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn lattice_for(&self, req: &RecognitionRequest<'_>) -> Result<Lattice> {
        let base = self.profiles.get(&req.speaker.id).ok_or_else(|| {
            Error::Backend(format!("no channel profile for speaker `{}`", req.speaker.id))
        })?;
        let profile = apply_adaptation(base, req.setting, req.coverage, &self.gains);
        let seed = stream_seed(self.master_seed, &req.speaker.id, &req.utterance.id);
        recognize(&profile, req.utterance, &self.vocab, seed)
    }
}

impl Backend for SimulatedBackend {
    fn recognize(&self, req: &RecognitionRequest<'_>) -> Result<Recognition> {
        self.lattice_for(req).map(Recognition::Lattice)
    }
}
