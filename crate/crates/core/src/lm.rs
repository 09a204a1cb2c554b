//! Add-k smoothed n-gram language model.
//!
//! `p(t | ctx) = (count(ctx, t) + k) / (count(ctx) + k * V)` where `V` is the
//! number of scorable events: every vocabulary entry except `<s>`, which
//! includes `<unk>` and `</s>`. Contexts are the previous `n - 1` tokens,
//! left-padded with `<s>`. Probabilities are natural-log.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_SMOOTHING_K: f64 = 0.5;

const FORMAT_VERSION: u32 = 1;

pub type TokenId = u32;

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<TokenId, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramLM {
    order: usize,
    smoothing_k: f64,
    vocab: Vec<String>,
    index: HashMap<String, TokenId>,
    counts: HashMap<Vec<TokenId>, ContextCounts>,
    unk: TokenId,
    bos: TokenId,
    eos: TokenId,
}

impl NGramLM {
    pub fn train<S: AsRef<[String]>>(texts: &[S], order: usize, smoothing_k: f64) -> Result<Self> {
        if texts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if order == 0 {
            return Err(Error::InvalidModel("order must be >= 1".into()));
        }
        if !(smoothing_k.is_finite() && smoothing_k > 0.0) {
            return Err(Error::InvalidModel("smoothing k must be positive".into()));
        }
        let mut words: BTreeSet<&str> = [UNK, BOS, EOS].into_iter().collect();
        for text in texts {
            for tok in text.as_ref() {
                check_token(tok)?;
                words.insert(tok);
            }
        }
        let vocab: Vec<String> = words.into_iter().map(str::to_owned).collect();
        let mut lm = Self::with_vocab(order, smoothing_k, vocab);
        for text in texts {
            let ids: Vec<TokenId> = text.as_ref().iter().map(|t| lm.token_id(t)).collect();
            let mut padded = vec![lm.bos; order - 1];
            padded.extend(ids);
            padded.push(lm.eos);
            for i in (order - 1)..padded.len() {
                let entry = lm.counts.entry(padded[i + 1 - order..i].to_vec()).or_default();
                entry.total += 1;
                *entry.next.entry(padded[i]).or_insert(0) += 1;
            }
        }
        Ok(lm)
    }

    fn with_vocab(order: usize, smoothing_k: f64, vocab: Vec<String>) -> Self {
        let index: HashMap<String, TokenId> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
        let unk = index[UNK];
        let bos = index[BOS];
        let eos = index[EOS];
        Self {
            order,
            smoothing_k,
            vocab,
            index,
            counts: HashMap::new(),
            unk,
            bos,
            eos,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing_k(&self) -> f64 {
        self.smoothing_k
    }

    /// Sorted vocabulary including the reserved tokens.
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Number of scorable events per context (vocabulary minus `<s>`).
    pub fn event_count(&self) -> usize {
        self.vocab.len() - 1
    }

    /// Ids of every scorable event.
    pub fn event_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.vocab.len() as TokenId).filter(move |&i| i != self.bos)
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.vocab[id as usize]
    }

    /// Map a token to its id; out-of-vocabulary tokens and `<s>` map to `<unk>`.
    pub fn token_id(&self, token: &str) -> TokenId {
        match self.index.get(token) {
            Some(&id) if id != self.bos => id,
            _ => self.unk,
        }
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos
    }

    /// All-`<s>` context of length `n - 1`.
    pub fn start_context(&self) -> Vec<TokenId> {
        vec![self.bos; self.order - 1]
    }

    /// Shift `token` into a context produced by [`start_context`](Self::start_context).
    pub fn advance(&self, context: &mut Vec<TokenId>, token: TokenId) {
        if self.order > 1 {
            context.remove(0);
            context.push(token);
        }
    }

    /// Log-probability of `token` after an exactly `n - 1` long id context.
    pub fn score_ids(&self, context: &[TokenId], token: TokenId) -> f64 {
        debug_assert_eq!(context.len(), self.order - 1);
        let (count, total) = match self.counts.get(context) {
            Some(c) => (c.next.get(&token).copied().unwrap_or(0), c.total),
            None => (0, 0),
        };
        let k = self.smoothing_k;
        ((count as f64 + k) / (total as f64 + k * self.event_count() as f64)).ln()
    }

    /// Log p(token | last n-1 tokens of context), left-padding with `<s>`.
    pub fn score_step<S: AsRef<str>>(&self, context: &[S], token: &str) -> f64 {
        let need = self.order - 1;
        let mut ctx = self.start_context();
        let tail = &context[context.len().saturating_sub(need)..];
        let offset = need - tail.len();
        for (slot, tok) in ctx[offset..].iter_mut().zip(tail) {
            *slot = self.index.get(tok.as_ref()).copied().unwrap_or(self.unk);
        }
        self.score_ids(&ctx, self.token_id(token))
    }

    /// Sentence log-probability including the terminal `</s>` event.
    pub fn logprob<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        let mut ctx = self.start_context();
        let mut total = 0.0;
        for tok in tokens {
            let id = self.token_id(tok.as_ref());
            total += self.score_ids(&ctx, id);
            self.advance(&mut ctx, id);
        }
        total + self.score_ids(&ctx, self.eos)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for (ctx, cc) in &self.counts {
            let key = ctx.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ");
            let row = counts.entry(key).or_default();
            for (&tok, &c) in &cc.next {
                row.insert(self.token(tok).to_owned(), c);
            }
        }
        let doc = SerializedLm {
            version: FORMAT_VERSION,
            order: self.order,
            smoothing_k: self.smoothing_k,
            vocab: self.vocab.clone(),
            counts,
        };
        serde_json::to_value(doc).expect("language model serializes")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let doc: SerializedLm = serde_json::from_value(value)?;
        if doc.version != FORMAT_VERSION {
            return Err(Error::InvalidModel(format!("unsupported version {}", doc.version)));
        }
        if doc.order == 0 || !(doc.smoothing_k.is_finite() && doc.smoothing_k > 0.0) {
            return Err(Error::InvalidModel("bad order or smoothing k".into()));
        }
        let mut vocab = doc.vocab;
        vocab.sort();
        vocab.dedup();
        for reserved in [UNK, BOS, EOS] {
            if vocab.binary_search_by(|w| w.as_str().cmp(reserved)).is_err() {
                return Err(Error::InvalidModel(format!("vocabulary lacks {reserved}")));
            }
        }
        let mut lm = Self::with_vocab(doc.order, doc.smoothing_k, vocab);
        for (key, row) in doc.counts {
            let ctx: Vec<TokenId> = key
                .split(' ')
                .filter(|s| !s.is_empty())
                .map(|t| lm.lookup_exact(t))
                .collect::<Result<_>>()?;
            if ctx.len() != lm.order - 1 {
                return Err(Error::InvalidModel(format!("context `{key}` has wrong length")));
            }
            let ids: Vec<(TokenId, u64)> = row
                .into_iter()
                .map(|(tok, c)| Ok((lm.lookup_exact(&tok)?, c)))
                .collect::<Result<_>>()?;
            let entry = lm.counts.entry(ctx).or_default();
            for (id, c) in ids {
                entry.total += c;
                *entry.next.entry(id).or_insert(0) += c;
            }
        }
        Ok(lm)
    }

    fn lookup_exact(&self, token: &str) -> Result<TokenId> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| Error::InvalidModel(format!("token `{token}` not in vocabulary")))
    }
}

fn check_token(tok: &str) -> Result<()> {
    if tok.is_empty() || tok.chars().any(char::is_whitespace) {
        return Err(Error::InvalidModel(format!("unusable token {tok:?}")));
    }
    Ok(())
}

// Field order is alphabetical so the document serializes with sorted keys.
#[derive(Serialize, Deserialize)]
struct SerializedLm {
    counts: BTreeMap<String, BTreeMap<String, u64>>,
    order: usize,
    smoothing_k: f64,
    version: u32,
    vocab: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(texts: &[&str]) -> Vec<Vec<String>> {
        texts
            .iter()
            .map(|t| t.split_whitespace().map(String::from).collect())
            .collect()
    }

    #[test]
    fn hand_computed_bigram() {
        let lm = NGramLM::train(&toks(&["a b", "a c"]), 2, 0.5).unwrap();
        // V = {a, b, c, <unk>, </s>} = 5; count(a) = 2, count(a, b) = 1.
        assert_eq!(lm.event_count(), 5);
        let p = lm.score_step(&["a"], "b").exp();
        assert!((p - 1.0 / 3.0).abs() < 1e-15, "{p}");
        assert!((lm.score_step(&["a"], "b") - (1.0f64 / 3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn mle_limit_single_path() {
        let lm = NGramLM::train(&toks(&["a b"]), 2, 1e-12).unwrap();
        assert!((lm.logprob(&["a", "b"]).exp() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unseen_token_is_finite() {
        let lm = NGramLM::train(&toks(&["a b", "a c"]), 3, 0.5).unwrap();
        let lp = lm.logprob(&["a", "zzz"]);
        assert!(lp.is_finite() && lp < 0.0);
        assert_eq!(lm.token_id("zzz"), lm.token_id(UNK));
    }

    #[test]
    fn seen_beats_unseen_replacement() {
        let lm = NGramLM::train(&toks(&["a b", "a c"]), 2, 0.5).unwrap();
        // V = 5, k = .5: p(a|<s>) = 2.5/4.5, p(b|a) = 1.5/4.5, p(</s>|b) = 1.5/3.5;
        // the unseen q scores as <unk> and <unk> is an unseen context.
        let seen = lm.logprob(&["a", "b"]);
        let swapped = lm.logprob(&["a", "q"]);
        let expect_seen = (2.5f64 / 4.5).ln() + (1.5f64 / 4.5).ln() + (1.5f64 / 3.5).ln();
        let expect_swapped = (2.5f64 / 4.5).ln() + (0.5f64 / 4.5).ln() + (0.5f64 / 2.5).ln();
        assert!((seen - expect_seen).abs() < 1e-12);
        assert!((swapped - expect_swapped).abs() < 1e-12);
        assert!(seen >= swapped);
    }

    #[test]
    fn empty_sequence_is_boundary_only() {
        let lm = NGramLM::train(&toks(&["a b", "a c"]), 2, 0.5).unwrap();
        let empty: [&str; 0] = [];
        assert_eq!(lm.logprob(&empty), lm.score_step(&[BOS], EOS));
    }

    #[test]
    fn short_context_left_padded() {
        let lm = NGramLM::train(&toks(&["a b c", "a c b"]), 3, 0.5).unwrap();
        assert_eq!(lm.score_step(&["a"], "b"), lm.score_step(&[BOS, "a"], "b"));
        assert_eq!(lm.score_step::<&str>(&[], "a"), lm.score_step(&[BOS, BOS], "a"));
    }

    #[test]
    fn logprob_is_sum_of_steps() {
        let lm = NGramLM::train(&toks(&["a b c", "b c a", "c"]), 3, 0.5).unwrap();
        let seq = ["a", "c", "x", "b"];
        let mut expected = 0.0;
        for i in 0..seq.len() {
            expected += lm.score_step(&seq[..i], seq[i]);
        }
        expected += lm.score_step(&seq, EOS);
        assert_eq!(lm.logprob(&seq), expected);
    }

    #[test]
    fn errors() {
        let empty: Vec<Vec<String>> = vec![];
        assert!(matches!(NGramLM::train(&empty, 2, 0.5), Err(Error::EmptyCorpus)));
        assert!(NGramLM::train(&toks(&["a"]), 0, 0.5).is_err());
        assert!(NGramLM::train(&toks(&["a"]), 2, 0.0).is_err());
    }

    #[test]
    fn json_roundtrip_is_exact() {
        let lm = NGramLM::train(&toks(&["a b c", "b c a", "c"]), 3, 0.25).unwrap();
        let text = lm.to_json().to_string();
        let back = NGramLM::from_json(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(lm, back);
        assert_eq!(back.to_json().to_string(), text);
        assert!(text.starts_with(r#"{"counts":"#));
    }

    #[test]
    fn unigram_has_empty_context() {
        let lm = NGramLM::train(&toks(&["a a b"]), 1, 1.0).unwrap();
        // V = {a, b, <unk>, </s>}, counts a=2, b=1, </s>=1, total 4.
        assert!((lm.score_step::<&str>(&[], "a").exp() - 3.0 / 8.0).abs() < 1e-15);
        let back = NGramLM::from_json(lm.to_json()).unwrap();
        assert_eq!(back, lm);
    }
}
