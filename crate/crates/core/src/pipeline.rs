//! Leave-one-speaker-out experiments through the stepwise augmentation
//! state machine.
//!
//! For every held-out speaker the baseline is evaluated first. While the
//! speaker's error rate stays at or above the threshold the next setting is
//! applied, up to the headline cap. Settings listed after the cap are
//! reference stages: they run only for speakers still above the threshold
//! once the cap is reached, and never count towards the final rate.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{AdaptationGains, Backend, ChannelRates, Recognition, RecognitionRequest, Setting, SeverityRateTable};
use crate::corpus::{generate_loso_splits, Corpus, LosoSplit, Severity, Speaker, SplitTag, Utterance};
use crate::decoder::{decode, rescore_nbest, FusionConfig, DEFAULT_BEAM_WIDTH};
use crate::error::{Error, Result};
use crate::eval::{align, SpeakerScore, UtteranceScore};
use crate::lm::{NGramLM, DEFAULT_ORDER, DEFAULT_SMOOTHING_K};
use crate::textcov::{ngram_coverage, select_covering_set, CoverageSpec};

pub const DEFAULT_THRESHOLD: f64 = 0.25;

/// Where a stage's synthesis texts come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SynthesisSource {
    /// The held-out speaker's own test texts.
    #[default]
    Test,
    /// Texts of the training speakers.
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageConfig {
    pub orders: Vec<usize>,
    pub weights: Vec<f64>,
    /// Greedy selection budget; `None` synthesizes every source text.
    pub budget: Option<usize>,
    pub source: SynthesisSource,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        let spec = CoverageSpec::default();
        Self {
            orders: spec.orders,
            weights: spec.weights,
            budget: None,
            source: SynthesisSource::Test,
        }
    }
}

impl CoverageConfig {
    pub fn spec(&self) -> CoverageSpec {
        CoverageSpec {
            orders: self.orders.clone(),
            weights: self.weights.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub order: usize,
    pub k: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            order: DEFAULT_ORDER,
            k: DEFAULT_SMOOTHING_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Error-rate fraction below which a speaker stops receiving augmentation.
    pub threshold: f64,
    pub stages: Vec<Setting>,
    pub headline_cap: Setting,
    pub lambda: f64,
    pub beam_width: Option<usize>,
    pub seed: u64,
    /// Overrides merged onto the default severity rate table.
    pub severity_rates: BTreeMap<Severity, ChannelRates>,
    pub adaptation_gains: AdaptationGains,
    pub coverage: CoverageConfig,
    pub lm: LmConfig,
    /// With filtering off every configured stage is evaluated for every
    /// speaker regardless of the threshold.
    pub filtering: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            stages: vec![
                Setting::Baseline,
                Setting::ZeroShotV,
                Setting::OneShotF2,
                Setting::AllTestF3,
            ],
            headline_cap: Setting::OneShotF2,
            lambda: 0.0,
            beam_width: Some(DEFAULT_BEAM_WIDTH),
            seed: 0,
            severity_rates: BTreeMap::new(),
            adaptation_gains: AdaptationGains::default(),
            coverage: CoverageConfig::default(),
            lm: LmConfig::default(),
            filtering: true,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "threshold {} must lie in (0, 1]",
                self.threshold
            )));
        }
        if self.stages.first() != Some(&Setting::Baseline) {
            return Err(Error::InvalidConfig("stages must begin with baseline".into()));
        }
        if self.stages.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("stages must be strictly increasing".into()));
        }
        if !self.stages.contains(&self.headline_cap) {
            return Err(Error::InvalidConfig(format!(
                "headline cap `{}` is not among the stages",
                self.headline_cap
            )));
        }
        self.fusion()?;
        self.adaptation_gains.validate()?;
        self.coverage.spec().validate()?;
        if self.coverage.budget == Some(0) {
            return Err(Error::InvalidCoverage("budget must be >= 1".into()));
        }
        for rates in self.severity_rates.values() {
            rates.validate()?;
        }
        if self.lm.order == 0 || !(self.lm.k.is_finite() && self.lm.k > 0.0) {
            return Err(Error::InvalidModel("lm order must be >= 1 and k > 0".into()));
        }
        Ok(())
    }

    pub fn fusion(&self) -> Result<FusionConfig> {
        FusionConfig::new(self.lambda, self.beam_width)
    }

    /// Default rates with this config's overrides applied.
    pub fn rate_table(&self) -> SeverityRateTable {
        let mut table = SeverityRateTable::default();
        for (sev, rates) in &self.severity_rates {
            table.0.insert(*sev, *rates);
        }
        table
    }

    fn cap_index(&self) -> usize {
        self.stages
            .iter()
            .position(|s| *s == self.headline_cap)
            .expect("validated cap")
    }
}

/// One evaluated stage of a speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub errors: usize,
    pub n_utterances: usize,
    pub rate: f64,
    pub ref_tokens: usize,
    /// Evaluated after the headline cap; excluded from the final rate.
    pub reference: bool,
    pub setting: Setting,
    #[serde(skip)]
    pub scores: Vec<UtteranceScore>,
}

/// The stage a speaker's run failed at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub error: String,
    pub kind: String,
    pub setting: Setting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerTrajectory {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<StageFailure>,
    /// Combined coverage of the synthesis texts over the test texts.
    pub coverage: f64,
    /// Rate of the last non-reference stage.
    pub final_rate: Option<f64>,
    /// Test utterance a one-shot setting clones the voice from.
    pub one_shot_sample: Option<String>,
    pub severity: Severity,
    /// Configured stages that were not evaluated.
    pub skipped: Vec<Setting>,
    pub speaker_id: String,
    pub stages: Vec<StageRecord>,
    /// First stage whose rate fell below the threshold.
    pub stopped_at: Option<Setting>,
}

impl SpeakerTrajectory {
    pub fn stage(&self, setting: Setting) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.setting == setting)
    }

    /// Sorted-key JSON, one line.
    pub fn to_json_line(&self) -> String {
        let value = serde_json::to_value(self).expect("trajectory serializes");
        serde_json::to_string(&value).expect("json value serializes")
    }
}

/// Trajectories in split order plus the per-speaker failures, each an
/// [`Error::StageAborted`].
#[derive(Debug)]
pub struct PipelineOutput {
    pub trajectories: Vec<SpeakerTrajectory>,
    pub failures: Vec<Error>,
}

impl PipelineOutput {
    pub fn to_jsonl(&self) -> String {
        trajectories_to_jsonl(&self.trajectories)
    }
}

pub fn trajectories_to_jsonl(trajectories: &[SpeakerTrajectory]) -> String {
    trajectories.iter().map(|t| t.to_json_line() + "\n").collect()
}

pub fn trajectories_from_jsonl(text: &str) -> Result<Vec<SpeakerTrajectory>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Run every LOSO split through the stepwise pipeline on `parallelism`
/// worker threads. Results do not depend on scheduling.
pub fn run_stepwise(
    corpus: &Corpus,
    backend: &dyn Backend,
    config: &PipelineConfig,
    parallelism: usize,
) -> Result<PipelineOutput> {
    config.validate()?;
    let splits = generate_loso_splits(corpus)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let results: Vec<Result<Option<(SpeakerTrajectory, Option<Error>)>>> = pool.install(|| {
        splits
            .par_iter()
            .map(|split| run_speaker(corpus, backend, config, split))
            .collect()
    });
    let mut out = PipelineOutput {
        trajectories: Vec::new(),
        failures: Vec::new(),
    };
    for r in results {
        if let Some((traj, failure)) = r? {
            out.trajectories.push(traj);
            out.failures.extend(failure);
        }
    }
    Ok(out)
}

fn test_utterances<'a>(corpus: &'a Corpus, split: &LosoSplit) -> Vec<&'a Utterance> {
    split
        .test_utterances
        .iter()
        .filter_map(|id| corpus.utterance(id))
        .filter(|u| u.split_tag == SplitTag::Test)
        .collect()
}

fn synthesis_coverage(
    config: &CoverageConfig,
    test: &[Vec<String>],
    train: &[Vec<String>],
) -> Result<f64> {
    let spec = config.spec();
    let source = match config.source {
        SynthesisSource::Test => test,
        SynthesisSource::Train => train,
    };
    if source.is_empty() {
        return Ok(0.0);
    }
    let selected: Vec<&Vec<String>> = match config.budget {
        Some(budget) => select_covering_set(source, test, budget, &spec)?
            .into_iter()
            .map(|i| &source[i])
            .collect(),
        None => source.iter().collect(),
    };
    if selected.is_empty() {
        return Ok(0.0);
    }
    Ok(ngram_coverage(&selected, test, &spec)?.combined)
}

/// `Ok(None)` when the speaker has no test utterances.
fn run_speaker(
    corpus: &Corpus,
    backend: &dyn Backend,
    config: &PipelineConfig,
    split: &LosoSplit,
) -> Result<Option<(SpeakerTrajectory, Option<Error>)>> {
    let speaker = corpus
        .speaker(&split.held_out_speaker)
        .expect("split speaker exists");
    let test = test_utterances(corpus, split);
    if test.is_empty() {
        log::warn!("speaker {}: no test utterances, skipped", speaker.id);
        return Ok(None);
    }
    let train_texts: Vec<Vec<String>> = split
        .train_utterances
        .iter()
        .filter_map(|id| corpus.utterance(id))
        .map(|u| u.tokens.clone())
        .collect();
    let test_texts: Vec<Vec<String>> = test.iter().map(|u| u.tokens.clone()).collect();
    let lm = NGramLM::train(&train_texts, config.lm.order, config.lm.k)?;
    let coverage = synthesis_coverage(&config.coverage, &test_texts, &train_texts)?;
    let fusion = config.fusion()?;

    let cap = config.cap_index();
    let mut traj = SpeakerTrajectory {
        aborted: None,
        coverage,
        final_rate: None,
        one_shot_sample: None,
        severity: speaker.severity,
        skipped: Vec::new(),
        speaker_id: speaker.id.clone(),
        stages: Vec::new(),
        stopped_at: None,
    };
    let mut failure = None;
    for (i, &setting) in config.stages.iter().enumerate() {
        let reference = i > cap;
        if config.filtering {
            if let Some(last) = traj.stages.last() {
                if last.rate < config.threshold {
                    break;
                }
            }
        }
        if setting.uses_one_shot_sample() && traj.one_shot_sample.is_none() {
            traj.one_shot_sample = test.first().map(|u| u.id.clone());
        }
        let stage_coverage = if setting == Setting::Baseline { 0.0 } else { coverage };
        match evaluate_stage(backend, speaker, &test, setting, stage_coverage, &lm, &fusion) {
            Ok(scores) => {
                let s = SpeakerScore::from_scores(&speaker.id, speaker.unit, &scores);
                if config.filtering && s.rate < config.threshold && !reference {
                    traj.stopped_at = Some(setting);
                }
                traj.stages.push(StageRecord {
                    errors: s.errors,
                    n_utterances: s.utterances,
                    rate: s.rate,
                    ref_tokens: s.ref_tokens,
                    reference,
                    setting,
                    scores,
                });
            }
            Err(e) => {
                log::error!("speaker {}: stage {} aborted: {e}", speaker.id, setting);
                traj.aborted = Some(StageFailure {
                    error: e.to_string(),
                    kind: error_code(&e).to_owned(),
                    setting,
                });
                failure = Some(Error::StageAborted {
                    speaker: speaker.id.clone(),
                    stage: setting.to_string(),
                    source: Box::new(e),
                });
                break;
            }
        }
    }
    traj.final_rate = traj.stages.iter().rev().find(|s| !s.reference).map(|s| s.rate);
    traj.skipped = config
        .stages
        .iter()
        .copied()
        .filter(|s| traj.stage(*s).is_none())
        .collect();
    Ok(Some((traj, failure)))
}

fn evaluate_stage(
    backend: &dyn Backend,
    speaker: &Speaker,
    test: &[&Utterance],
    setting: Setting,
    coverage: f64,
    lm: &NGramLM,
    fusion: &FusionConfig,
) -> Result<Vec<UtteranceScore>> {
    test.iter()
        .map(|utt| {
            let req = RecognitionRequest {
                speaker,
                utterance: utt,
                setting,
                coverage,
            };
            let hyp = match backend.recognize(&req)? {
                Recognition::Lattice(lat) => decode(&lat, lm, fusion)?,
                Recognition::NBest(nb) => rescore_nbest(&nb, lm, fusion.lambda)?,
            };
            let alignment = align(&utt.tokens, &hyp.tokens);
            Ok(UtteranceScore::from_alignment(&utt.id, &speaker.id, &alignment))
        })
        .collect()
}

/// Short machine-readable name of an error's variant family.
pub fn error_code(e: &Error) -> &'static str {
    match e {
        Error::Protocol(_) => "protocol",
        Error::BackendTimeout(_) => "timeout",
        Error::Backend(_) => "backend",
        Error::EmptyLattice | Error::InvalidLattice(_) => "lattice",
        Error::StageAborted { source, .. } => error_code(source),
        _ => "other",
    }
}

/// Per-speaker finals and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub finals: Vec<(String, f64)>,
    pub average: f64,
    pub warnings: Vec<String>,
}

/// Final rate per speaker: the first stage under `threshold`, else the
/// `cap` stage, else (with a warning) the last non-reference stage.
pub fn summarize(trajectories: &[SpeakerTrajectory], cap: Setting, threshold: f64) -> Result<Summary> {
    let mut finals = Vec::new();
    let mut warnings = Vec::new();
    for t in trajectories {
        let headline: Vec<&StageRecord> = t.stages.iter().filter(|s| !s.reference).collect();
        let chosen = headline
            .iter()
            .find(|s| s.rate < threshold)
            .or_else(|| headline.iter().find(|s| s.setting == cap))
            .copied();
        let rate = match chosen {
            Some(s) => s.rate,
            None => match headline.last() {
                Some(s) => {
                    let w = format!(
                        "speaker {}: no `{cap}` stage and never under threshold; using `{}`",
                        t.speaker_id, s.setting
                    );
                    log::warn!("{w}");
                    warnings.push(w);
                    s.rate
                }
                None => {
                    let w = format!("speaker {}: no evaluated stage, left out", t.speaker_id);
                    log::warn!("{w}");
                    warnings.push(w);
                    continue;
                }
            },
        };
        finals.push((t.speaker_id.clone(), rate));
    }
    if finals.is_empty() {
        return Err(Error::EmptyGroup("final rates".into()));
    }
    let average = finals.iter().map(|(_, r)| r).sum::<f64>() / finals.len() as f64;
    Ok(Summary {
        finals,
        average,
        warnings,
    })
}

/// Check the prefix and stop invariants of a filtered trajectory.
pub fn check_trajectory(t: &SpeakerTrajectory, config: &PipelineConfig) -> std::result::Result<(), String> {
    let settings: Vec<Setting> = t.stages.iter().map(|s| s.setting).collect();
    if !config.stages.starts_with(&settings) {
        return Err(format!("{}: stages {settings:?} are not a prefix", t.speaker_id));
    }
    let cap = config.cap_index();
    for (i, s) in t.stages.iter().enumerate() {
        if s.reference != (i > cap) {
            return Err(format!("{}: reference flag wrong at {}", t.speaker_id, s.setting));
        }
        if config.filtering && s.rate < config.threshold && i + 1 < t.stages.len() {
            return Err(format!("{}: continued after {} under threshold", t.speaker_id, s.setting));
        }
    }
    let expected: BTreeSet<Setting> = config.stages.iter().copied().filter(|s| !settings.contains(s)).collect();
    if t.skipped.iter().copied().collect::<BTreeSet<_>>() != expected {
        return Err(format!("{}: skipped set mismatch", t.speaker_id));
    }
    let last_headline = t.stages.iter().rev().find(|s| !s.reference).map(|s| s.rate);
    if t.final_rate != last_headline {
        return Err(format!("{}: final rate is not the last headline stage", t.speaker_id));
    }
    Ok(())
}
