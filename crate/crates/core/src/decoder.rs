//! Beam search over lattices with shallow fusion:
//! `total = log p(y|x) + lambda * log p_LM(y)`.
//!
//! Epsilon candidates add acoustic score but emit nothing, so they never
//! reach the LM. The LM end-of-sentence event is added once all steps are
//! consumed. There is no length normalization or insertion penalty.

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{Lattice, NBest};
use crate::error::{Error, Result};
use crate::eval::align;
use crate::lm::{NGramLM, TokenId};

pub const DEFAULT_BEAM_WIDTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub lambda: f64,
    /// `None` keeps every hypothesis.
    pub beam_width: Option<usize>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            beam_width: Some(DEFAULT_BEAM_WIDTH),
        }
    }
}

impl FusionConfig {
    pub fn new(lambda: f64, beam_width: Option<usize>) -> Result<Self> {
        let cfg = Self { lambda, beam_width };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn unbounded(lambda: f64) -> Self {
        Self {
            lambda,
            beam_width: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidFusionConfig(format!("lambda {} must be >= 0", self.lambda)));
        }
        if self.beam_width == Some(0) {
            return Err(Error::InvalidFusionConfig("beam width must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<String>,
    pub acoustic_score: f64,
    pub lm_score: f64,
    pub lambda: f64,
    pub total: f64,
}

impl Hypothesis {
    fn new(tokens: Vec<String>, acoustic_score: f64, lm_score: f64, lambda: f64) -> Self {
        Self {
            total: fused(acoustic_score, lm_score, lambda),
            tokens,
            acoustic_score,
            lm_score,
            lambda,
        }
    }

    /// `{"utterance_id","hyp_tokens","acoustic","lm","lambda","total"}`.
    pub fn to_json(&self, utterance_id: &str) -> serde_json::Value {
        serde_json::json!({
            "utterance_id": utterance_id,
            "hyp_tokens": self.tokens,
            "acoustic": self.acoustic_score,
            "lm": self.lm_score,
            "lambda": self.lambda,
            "total": self.total,
        })
    }
}

#[inline]
fn fused(acoustic: f64, lm: f64, lambda: f64) -> f64 {
    acoustic + lambda * lm
}

/// Best first: higher total, then fewer tokens, then lexicographic tokens.
pub fn rank(a_total: f64, a_tokens: &[String], b_total: f64, b_tokens: &[String]) -> Ordering {
    b_total
        .total_cmp(&a_total)
        .then_with(|| a_tokens.len().cmp(&b_tokens.len()))
        .then_with(|| a_tokens.cmp(b_tokens))
}

#[derive(Clone)]
struct Partial {
    tokens: Vec<String>,
    context: Vec<TokenId>,
    acoustic: f64,
    lm: f64,
}

pub fn decode(lattice: &Lattice, lm: &NGramLM, config: &FusionConfig) -> Result<Hypothesis> {
    config.validate()?;
    if lattice.is_empty() {
        return Err(Error::EmptyLattice);
    }
    let lambda = config.lambda;
    let mut beam = vec![Partial {
        tokens: Vec::new(),
        context: lm.start_context(),
        acoustic: 0.0,
        lm: 0.0,
    }];
    for step in &lattice.steps {
        // Paths emitting the same tokens share every future score, so only the
        // best-scoring one per token sequence survives.
        let mut merged: HashMap<Vec<String>, Partial> = HashMap::new();
        for hyp in &beam {
            for cand in &step.candidates {
                let mut next = hyp.clone();
                next.acoustic += cand.logp;
                if let Some(tok) = &cand.token {
                    let id = lm.token_id(tok);
                    next.lm += lm.score_ids(&next.context, id);
                    lm.advance(&mut next.context, id);
                    next.tokens.push(tok.clone());
                }
                match merged.get_mut(&next.tokens) {
                    Some(existing) if existing.acoustic >= next.acoustic => {}
                    Some(existing) => *existing = next,
                    None => {
                        merged.insert(next.tokens.clone(), next);
                    }
                }
            }
        }
        beam = merged.into_values().collect();
        beam.sort_by(|a, b| {
            rank(
                fused(a.acoustic, a.lm, lambda),
                &a.tokens,
                fused(b.acoustic, b.lm, lambda),
                &b.tokens,
            )
        });
        if let Some(width) = config.beam_width {
            beam.truncate(width);
        }
    }
    let eos = lm.eos_id();
    beam.into_iter()
        .map(|p| {
            let lm_total = p.lm + lm.score_ids(&p.context, eos);
            Hypothesis::new(p.tokens, p.acoustic, lm_total, lambda)
        })
        .min_by(|a, b| rank(a.total, &a.tokens, b.total, &b.tokens))
        .ok_or(Error::EmptyLattice)
}

/// Pick the best n-best entry under shallow fusion.
pub fn rescore_nbest(nbest: &NBest, lm: &NGramLM, lambda: f64) -> Result<Hypothesis> {
    FusionConfig::unbounded(lambda).validate()?;
    nbest
        .hyps
        .iter()
        .map(|h| Hypothesis::new(h.tokens.clone(), h.score, lm.logprob(&h.tokens), lambda))
        .min_by(|a, b| rank(a.total, &a.tokens, b.total, &b.tokens))
        .ok_or(Error::EmptyLattice)
}

/// A lattice with the reference it should be scored against.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeCase {
    pub lattice: Lattice,
    pub reference: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub lambda: f64,
    pub errors: usize,
    pub ref_tokens: usize,
    /// Corpus-level (micro) error rate.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSweep {
    pub entries: Vec<SweepEntry>,
    pub warnings: Vec<String>,
}

impl LambdaSweep {
    pub fn rate_for(&self, lambda: f64) -> Option<f64> {
        self.entries.iter().find(|e| e.lambda == lambda).map(|e| e.rate)
    }
}

/// Decode every case once per distinct lambda (input order, duplicates dropped).
pub fn lambda_sweep(
    cases: &[DecodeCase],
    lm: &NGramLM,
    lambdas: &[f64],
    beam_width: Option<usize>,
) -> Result<LambdaSweep> {
    if lambdas.is_empty() {
        return Err(Error::InvalidFusionConfig("no lambda values given".into()));
    }
    let mut warnings = Vec::new();
    let mut distinct: Vec<f64> = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        if distinct.iter().any(|d| d.to_bits() == l.to_bits()) {
            let w = format!("duplicate lambda {l} ignored");
            log::warn!("{w}");
            warnings.push(w);
        } else {
            distinct.push(l);
        }
    }
    let mut entries = Vec::with_capacity(distinct.len());
    for lambda in distinct {
        let config = FusionConfig::new(lambda, beam_width)?;
        let per_case = cases
            .par_iter()
            .map(|c| {
                let hyp = decode(&c.lattice, lm, &config)?;
                let a = align(&c.reference, &hyp.tokens);
                Ok((a.errors(), a.ref_len))
            })
            .collect::<Result<Vec<_>>>()?;
        let errors: usize = per_case.iter().map(|p| p.0).sum();
        let ref_tokens: usize = per_case.iter().map(|p| p.1).sum();
        entries.push(SweepEntry {
            lambda,
            errors,
            ref_tokens,
            rate: errors as f64 / ref_tokens.max(1) as f64,
        });
    }
    Ok(LambdaSweep { entries, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{Candidate, LatticeStep, ScoredHyp};

    fn toks(texts: &[&str]) -> Vec<Vec<String>> {
        texts
            .iter()
            .map(|t| t.split_whitespace().map(String::from).collect())
            .collect()
    }

    fn step(cands: &[(&str, f64)]) -> LatticeStep {
        LatticeStep::new(
            cands
                .iter()
                .map(|(t, p)| {
                    if *t == "<eps>" {
                        Candidate::epsilon(p.ln())
                    } else {
                        Candidate::token(*t, p.ln())
                    }
                })
                .collect(),
        )
    }

    #[test]
    fn lambda_zero_is_acoustic_argmax() {
        let lm = NGramLM::train(&toks(&["x y z"]), 3, 0.5).unwrap();
        let lat = Lattice::new(
            "u",
            3,
            vec![
                step(&[("a", 0.6), ("x", 0.4)]),
                step(&[("<eps>", 0.7), ("y", 0.3)]),
                step(&[("c", 0.2), ("z", 0.8)]),
            ],
        )
        .unwrap();
        let hyp = decode(&lat, &lm, &FusionConfig::unbounded(0.0)).unwrap();
        assert_eq!(hyp.tokens, vec!["a", "z"]);
        assert_eq!(hyp.total, hyp.acoustic_score);
        assert!((hyp.acoustic_score - (0.6f64 * 0.7 * 0.8).ln()).abs() < 1e-12);
    }

    #[test]
    fn lm_breaks_acoustic_tie() {
        // Paths "a b" and "a c" with equal acoustic scores.
        let lm = NGramLM::train(&toks(&["a b"]), 2, 0.5).unwrap();
        let lat = Lattice::new("u", 2, vec![step(&[("a", 1.0)]), step(&[("c", 0.5), ("b", 0.5)])]).unwrap();
        let hyp = decode(&lat, &lm, &FusionConfig::unbounded(0.6)).unwrap();
        assert_eq!(hyp.tokens, vec!["a", "b"]);
        // Hand score: V = {a, b, <unk>, </s>} = 4.
        // log p(a|<s>) = log(1.5/3), log p(b|a) = log(1.5/3), log p(</s>|b) = log(1.5/3)
        let expect_lm = 3.0 * (0.5f64).ln();
        assert!((hyp.lm_score - expect_lm).abs() < 1e-12);
        assert_eq!(hyp.total, hyp.acoustic_score + 0.6 * hyp.lm_score);
    }

    #[test]
    fn tie_prefers_shorter_then_lexicographic() {
        let lm = NGramLM::train(&toks(&["q"]), 1, 1.0).unwrap();
        let lat = Lattice::new("u", 1, vec![step(&[("b", 0.5), ("a", 0.5)])]).unwrap();
        let hyp = decode(&lat, &lm, &FusionConfig::unbounded(0.0)).unwrap();
        assert_eq!(hyp.tokens, vec!["a"]);
        let lat = Lattice::new("u", 1, vec![step(&[("a", 0.5), ("<eps>", 0.5)])]).unwrap();
        let hyp = decode(&lat, &lm, &FusionConfig::unbounded(0.0)).unwrap();
        assert!(hyp.tokens.is_empty());
    }

    #[test]
    fn empty_lattice_and_bad_config() {
        let lm = NGramLM::train(&toks(&["a"]), 2, 0.5).unwrap();
        let lat = Lattice::new("u", 0, vec![]).unwrap();
        assert!(matches!(decode(&lat, &lm, &FusionConfig::default()), Err(Error::EmptyLattice)));
        let lat = Lattice::new("u", 1, vec![step(&[("a", 1.0)])]).unwrap();
        assert!(decode(&lat, &lm, &FusionConfig { lambda: -1.0, beam_width: None }).is_err());
        assert!(decode(&lat, &lm, &FusionConfig { lambda: 0.0, beam_width: Some(0) }).is_err());
    }

    #[test]
    fn nbest_rescoring() {
        let lm = NGramLM::train(&toks(&["a b", "a b"]), 2, 0.5).unwrap();
        let nb = NBest {
            utterance_id: "u".into(),
            hyps: vec![
                ScoredHyp { tokens: toks(&["a c"])[0].clone(), score: -1.0 },
                ScoredHyp { tokens: toks(&["a b"])[0].clone(), score: -1.1 },
            ],
        };
        assert_eq!(rescore_nbest(&nb, &lm, 0.0).unwrap().tokens, vec!["a", "c"]);
        assert_eq!(rescore_nbest(&nb, &lm, 0.8).unwrap().tokens, vec!["a", "b"]);
    }

    #[test]
    fn sweep_dedups_and_reports_each_lambda() {
        let lm = NGramLM::train(&toks(&["a b"]), 2, 0.5).unwrap();
        let lat = Lattice::new("u", 2, vec![step(&[("a", 1.0)]), step(&[("c", 0.55), ("b", 0.45)])]).unwrap();
        let cases = vec![DecodeCase { lattice: lat, reference: toks(&["a b"])[0].clone() }];
        let sweep = lambda_sweep(&cases, &lm, &[0.3, 0.6, 0.8, 0.6], Some(8)).unwrap();
        assert_eq!(sweep.entries.len(), 3);
        assert_eq!(sweep.warnings.len(), 1);
        let zero = lambda_sweep(&cases, &lm, &[0.0], Some(8)).unwrap();
        // Acoustic-only picks "a c": one substitution over two tokens.
        assert_eq!(zero.rate_for(0.0), Some(0.5));
        assert!(lambda_sweep(&cases, &lm, &[], None).is_err());
    }
}
