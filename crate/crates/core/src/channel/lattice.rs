use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wire spelling of the empty (deletion) candidate.
pub const EPSILON: &str = "<eps>";

/// Allowed deviation of a step's probability mass from one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// A scored token candidate; `token == None` is epsilon.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub token: Option<String>,
    pub logp: f64,
}

impl Candidate {
    pub fn token(token: impl Into<String>, logp: f64) -> Self {
        Self {
            token: Some(token.into()),
            logp,
        }
    }

    pub fn epsilon(logp: f64) -> Self {
        Self { token: None, logp }
    }

    pub fn is_epsilon(&self) -> bool {
        self.token.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LatticeStep {
    pub candidates: Vec<Candidate>,
}

impl LatticeStep {
    pub fn new(candidates: Vec<Candidate>) -> Self {
        Self { candidates }
    }

    pub fn mass(&self) -> f64 {
        self.candidates.iter().map(|c| c.logp.exp()).sum()
    }

    /// Probability of `token` at this step (`None` = epsilon); 0 when absent.
    pub fn prob_of(&self, token: Option<&str>) -> f64 {
        self.candidates
            .iter()
            .filter(|c| c.token.as_deref() == token)
            .map(|c| c.logp.exp())
            .sum()
    }

    /// Highest scoring candidate; ties go to the earlier candidate.
    pub fn best(&self) -> Option<&Candidate> {
        self.candidates
            .iter()
            .reduce(|best, c| if c.logp > best.logp { c } else { best })
    }
}

/// Step-wise acoustic evidence for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub utterance_id: String,
    pub reference_len: usize,
    pub steps: Vec<LatticeStep>,
}

impl Lattice {
    /// Build a lattice whose steps are already normalized.
    pub fn new(utterance_id: impl Into<String>, reference_len: usize, steps: Vec<LatticeStep>) -> Result<Self> {
        let lattice = Self {
            utterance_id: utterance_id.into(),
            reference_len,
            steps,
        };
        lattice.validate()?;
        Ok(lattice)
    }

    /// Build a lattice, rescaling any step whose mass is off by more than the
    /// tolerance. Returns one warning per rescaled step.
    pub fn normalized(
        utterance_id: impl Into<String>,
        reference_len: usize,
        mut steps: Vec<LatticeStep>,
    ) -> Result<(Self, Vec<String>)> {
        let utterance_id = utterance_id.into();
        let mut warnings = Vec::new();
        for (i, step) in steps.iter_mut().enumerate() {
            check_step_shape(i, step)?;
            let mass = step.mass();
            if !(mass.is_finite() && mass > 0.0) {
                return Err(Error::InvalidLattice(format!("step {i} has no probability mass")));
            }
            if (mass - 1.0).abs() > NORMALIZATION_TOLERANCE {
                let shift = mass.ln();
                for c in &mut step.candidates {
                    c.logp -= shift;
                }
                warnings.push(format!(
                    "utterance {utterance_id}: step {i} mass {mass:.6} renormalized"
                ));
            }
        }
        let lattice = Self::new(utterance_id, reference_len, steps)?;
        Ok((lattice, warnings))
    }

    pub fn validate(&self) -> Result<()> {
        for (i, step) in self.steps.iter().enumerate() {
            check_step_shape(i, step)?;
            let mass = step.mass();
            if (mass - 1.0).abs() > NORMALIZATION_TOLERANCE {
                return Err(Error::InvalidLattice(format!("step {i} sums to {mass}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Per-step argmax path, dropping epsilons.
    pub fn greedy_tokens(&self) -> Vec<String> {
        self.steps
            .iter()
            .filter_map(|s| s.best().and_then(|c| c.token.clone()))
            .collect()
    }

    /// `[[{"token": .., "logp": ..}, ..], ..]` with epsilon spelled `<eps>`.
    pub fn to_wire(&self) -> Vec<Vec<WireCandidate>> {
        self.steps
            .iter()
            .map(|s| {
                s.candidates
                    .iter()
                    .map(|c| WireCandidate {
                        token: c.token.clone().unwrap_or_else(|| EPSILON.to_owned()),
                        logp: c.logp,
                    })
                    .collect()
            })
            .collect()
    }

    pub fn steps_from_wire(wire: Vec<Vec<WireCandidate>>) -> Vec<LatticeStep> {
        wire.into_iter()
            .map(|step| {
                LatticeStep::new(
                    step.into_iter()
                        .map(|c| Candidate {
                            token: (c.token != EPSILON).then_some(c.token),
                            logp: c.logp,
                        })
                        .collect(),
                )
            })
            .collect()
    }
}

fn check_step_shape(i: usize, step: &LatticeStep) -> Result<()> {
    if step.candidates.is_empty() {
        return Err(Error::InvalidLattice(format!("step {i} has no candidates")));
    }
    if let Some(c) = step.candidates.iter().find(|c| c.logp.is_nan() || c.logp == f64::INFINITY) {
        return Err(Error::InvalidLattice(format!("step {i} has invalid score {}", c.logp)));
    }
    if step.candidates.iter().any(|c| matches!(&c.token, Some(t) if t.is_empty())) {
        return Err(Error::InvalidLattice(format!("step {i} has an empty token")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireCandidate {
    pub token: String,
    pub logp: f64,
}
