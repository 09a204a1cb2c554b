use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::seed::confusion_seed;
use crate::corpus::{Severity, Speaker};
use crate::error::{Error, Result};

/// Augmentation setting of a recognizer, in increasing order of how much
/// target-speaker information it uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "v")]
    ZeroShotV,
    #[serde(rename = "f1")]
    OneShotF1,
    #[serde(rename = "f2")]
    OneShotF2,
    #[serde(rename = "f3")]
    AllTestF3,
}

impl Setting {
    pub const ALL: [Setting; 5] = [
        Setting::Baseline,
        Setting::ZeroShotV,
        Setting::OneShotF1,
        Setting::OneShotF2,
        Setting::AllTestF3,
    ];

    /// Wire name, as used in configs and the backend protocol.
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Baseline => "baseline",
            Setting::ZeroShotV => "v",
            Setting::OneShotF1 => "f1",
            Setting::OneShotF2 => "f2",
            Setting::AllTestF3 => "f3",
        }
    }

    /// Row label for result tables.
    pub fn label(self) -> &'static str {
        match self {
            Setting::Baseline => "LOSO",
            Setting::ZeroShotV => "Zero-Shot (V)",
            Setting::OneShotF1 => "One-Shot (F1)",
            Setting::OneShotF2 => "One-Shot (F2)",
            Setting::AllTestF3 => "All-Test-Data (F3)",
        }
    }

    pub fn uses_one_shot_sample(self) -> bool {
        matches!(self, Setting::OneShotF1 | Setting::OneShotF2)
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Setting::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown setting `{s}` (expected baseline|v|f1|f2|f3)"))
    }
}

/// Per-token error probabilities of the simulated channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRates {
    pub sub: f64,
    pub ins: f64,
    pub del: f64,
}

impl ChannelRates {
    pub const CLEAN: ChannelRates = ChannelRates {
        sub: 0.0,
        ins: 0.0,
        del: 0.0,
    };

    pub fn new(sub: f64, ins: f64, del: f64) -> Result<Self> {
        let r = Self { sub, ins, del };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sub", self.sub), ("ins", self.ins), ("del", self.del)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidRates(format!("{name} rate {v} outside [0, 1)")));
            }
        }
        if self.sub + self.del >= 1.0 {
            return Err(Error::InvalidRates(format!(
                "sub + del = {} must be below 1",
                self.sub + self.del
            )));
        }
        Ok(())
    }

    fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            sub: f(self.sub),
            ins: f(self.ins),
            del: f(self.del),
        }
    }
}

/// Severity -> base rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeverityRateTable(pub BTreeMap<Severity, ChannelRates>);

impl Default for SeverityRateTable {
    fn default() -> Self {
        let mut t = BTreeMap::new();
        t.insert(Severity::Moderate, ChannelRates { sub: 0.30, ins: 0.10, del: 0.08 });
        t.insert(Severity::Low, ChannelRates { sub: 0.15, ins: 0.05, del: 0.04 });
        t.insert(Severity::VeryLow, ChannelRates { sub: 0.05, ins: 0.02, del: 0.01 });
        t.insert(Severity::Control, ChannelRates::CLEAN);
        Self(t)
    }
}

impl SeverityRateTable {
    pub fn get(&self, severity: Severity) -> Option<ChannelRates> {
        self.0.get(&severity).copied()
    }
}

/// Adaptation strength per setting plus the minimum effective rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptationGains {
    pub v: f64,
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub floor: f64,
}

impl Default for AdaptationGains {
    fn default() -> Self {
        Self {
            v: 0.35,
            f1: 0.45,
            f2: 0.55,
            f3: 0.65,
            floor: 0.005,
        }
    }
}

impl AdaptationGains {
    pub fn strength(&self, setting: Setting) -> f64 {
        match setting {
            Setting::Baseline => 0.0,
            Setting::ZeroShotV => self.v,
            Setting::OneShotF1 => self.f1,
            Setting::OneShotF2 => self.f2,
            Setting::AllTestF3 => self.f3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let chain = [0.0, self.v, self.f1, self.f2, self.f3];
        if chain.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::InvalidConfig("adaptation gains must lie in [0, 1]".into()));
        }
        if chain.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidConfig(
                "adaptation gains must be non-decreasing v <= f1 <= f2 <= f3".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.floor) {
            return Err(Error::InvalidConfig("rate floor must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptationState {
    pub setting: Setting,
    pub coverage: f64,
    pub gain: f64,
}

impl AdaptationState {
    pub const BASELINE: AdaptationState = AdaptationState {
        setting: Setting::Baseline,
        coverage: 0.0,
        gain: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerChannelProfile {
    pub speaker_id: String,
    pub severity: Severity,
    /// Unadapted rates.
    pub base: ChannelRates,
    /// Rates after adaptation; equal to `base` at baseline.
    pub effective: ChannelRates,
    pub confusion_seed: u64,
    pub adaptation: AdaptationState,
}

pub fn make_profile(
    speaker: &Speaker,
    table: &SeverityRateTable,
    master_seed: u64,
) -> Result<SpeakerChannelProfile> {
    let base = table
        .get(speaker.severity)
        .ok_or_else(|| Error::MissingSeverityRates(speaker.severity.to_string()))?;
    base.validate()?;
    Ok(SpeakerChannelProfile {
        speaker_id: speaker.id.clone(),
        severity: speaker.severity,
        base,
        effective: base,
        confusion_seed: confusion_seed(master_seed, &speaker.id),
        adaptation: AdaptationState::BASELINE,
    })
}

/// Scale each base rate by `1 - gain * coverage`, never below `floor` and
/// never above the base rate itself.
pub fn apply_adaptation(
    profile: &SpeakerChannelProfile,
    setting: Setting,
    coverage: f64,
    gains: &AdaptationGains,
) -> SpeakerChannelProfile {
    let coverage = coverage.clamp(0.0, 1.0);
    let mut out = profile.clone();
    if setting == Setting::Baseline {
        out.effective = profile.base;
        out.adaptation = AdaptationState {
            setting,
            coverage,
            gain: 0.0,
        };
        return out;
    }
    let gain = gains.strength(setting) * coverage;
    out.effective = profile
        .base
        .map(|r| (r * (1.0 - gain)).max(gains.floor).min(r));
    out.adaptation = AdaptationState {
        setting,
        coverage,
        gain,
    };
    out
}
