//! Autoregressive generation: temperature, nucleus filtering with a top-k
//! cap, and greedy decoding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::KeywordSet;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::registry::Registry;
use crate::tokenizer::{TokenId, Vocab, BOS, EOS, MASK, PAD, SUM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeParams {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: usize,
    pub greedy: bool,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 0.8,
            top_k: 50,
            greedy: false,
            max_new_tokens: 100,
            seed: 0,
        }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::OutOfRange(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::OutOfRange(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if self.top_k == 0 {
            return Err(Error::OutOfRange("top_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn sampler_name(&self) -> &'static str {
        if self.greedy {
            "greedy"
        } else {
            "nucleus"
        }
    }
}

/// `softmax(u / t)` with max subtraction. Entries of `-inf` get probability
/// zero; at least one logit must be finite.
pub fn apply_temperature(logits: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::OutOfRange(format!("temperature must be positive, got {t}")));
    }
    if logits.iter().any(|u| u.is_nan() || *u == f64::INFINITY) {
        return Err(Error::input("logits must be finite or -inf"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::input("every logit is -inf"));
    }
    let mut p: Vec<f64> = logits.iter().map(|&u| ((u - max) / t).exp()).collect();
    let sum: f64 = p.iter().sum();
    for v in &mut p {
        *v /= sum;
    }
    Ok(p)
}

/// Ids in descending probability, ties by lower id.
fn ranked(probs: &[f64]) -> Vec<TokenId> {
    let mut ids: Vec<TokenId> = (0..probs.len()).collect();
    ids.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    ids
}

/// Smallest highest-probability prefix with cumulative mass ≥ `p`, then
/// capped at `k` ids. Never empty for non-empty `probs`.
pub fn top_p_candidates(probs: &[f64], p: f64, k: usize) -> Vec<TokenId> {
    let ids = ranked(probs);
    let mut cum = 0.0;
    let mut take = ids.len();
    for (n, &id) in ids.iter().enumerate() {
        cum += probs[id];
        if cum >= p {
            take = n + 1;
            break;
        }
    }
    let take = take.min(k.max(1)).min(ids.len());
    ids[..take].to_vec()
}

pub fn argmax(probs: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &x) in probs.iter().enumerate() {
        if x > probs[best] {
            best = i;
        }
    }
    best
}

/// Chooses the next token from a probability vector.
pub trait Sampler: Send + Sync {
    fn name(&self) -> &'static str;
    fn choose(&self, probs: &[f64], rng: &mut ChaCha8Rng) -> TokenId;
}

pub struct Greedy;

impl Sampler for Greedy {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn choose(&self, probs: &[f64], _rng: &mut ChaCha8Rng) -> TokenId {
        argmax(probs)
    }
}

pub struct Nucleus {
    pub p: f64,
    pub k: usize,
}

impl Sampler for Nucleus {
    fn name(&self) -> &'static str {
        "nucleus"
    }

    fn choose(&self, probs: &[f64], rng: &mut ChaCha8Rng) -> TokenId {
        let cands = top_p_candidates(probs, self.p, self.k);
        let mass: f64 = cands.iter().map(|&i| probs[i]).sum();
        let mut u = rng.random::<f64>() * mass;
        for &id in &cands {
            u -= probs[id];
            if u < 0.0 {
                return id;
            }
        }
        // Rounding can leave a sliver of mass; it belongs to the last candidate.
        *cands.last().expect("candidate set is never empty")
    }
}

pub fn samplers() -> Registry<dyn Sampler, DecodeParams> {
    let mut r: Registry<dyn Sampler, DecodeParams> = Registry::new("sampler");
    r.register("greedy", |_| Ok(Box::new(Greedy)));
    r.register("nucleus", |dp| {
        dp.validate()?;
        Ok(Box::new(Nucleus { p: dp.top_p, k: dp.top_k }))
    });
    r
}

pub fn sample_next(probs: &[f64], dp: &DecodeParams, rng: &mut ChaCha8Rng) -> Result<TokenId> {
    let sampler = samplers().build(dp.sampler_name(), dp)?;
    Ok(sampler.choose(probs, rng))
}

/// Structural tokens the model must never emit inside a summary.
const BANNED: [TokenId; 4] = [PAD, BOS, SUM, MASK];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub tokens: Vec<TokenId>,
    pub text: String,
    /// Whether generation ended on EOS rather than a length limit.
    pub finished: bool,
}

/// Continues `[BOS] keywords [SUM]` until EOS, `max_new_tokens`, or a full
/// context, and decodes the tokens strictly between SUM and EOS.
pub fn generate(model: &Model, keywords: &KeywordSet, dp: &DecodeParams, vocab: &Vocab) -> Result<Generation> {
    dp.validate()?;
    let mut row = vec![BOS];
    row.extend(vocab.encode_words(&keywords.words));
    row.push(SUM);
    let max_len = model.config.max_len;
    if row.len() > max_len - 1 {
        return Err(Error::input(format!(
            "prompt of {} tokens leaves no room to generate within {max_len}",
            row.len()
        )));
    }
    let sampler = samplers().build(dp.sampler_name(), dp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(dp.seed);
    let prompt_len = row.len();
    let mut finished = false;
    while row.len() - prompt_len < dp.max_new_tokens && row.len() < max_len {
        let trace = model.trace(&row)?;
        let mut logits = trace.logits_at(&model.params, row.len() - 1);
        for &b in &BANNED {
            if b < logits.len() {
                logits[b] = f64::NEG_INFINITY;
            }
        }
        let probs = apply_temperature(&logits, dp.temperature)?;
        let next = sampler.choose(&probs, &mut rng);
        if next == EOS {
            finished = true;
            break;
        }
        row.push(next);
    }
    let tokens = row[prompt_len..].to_vec();
    let text = vocab.decode(&tokens)?;
    Ok(Generation { tokens, text, finished })
}
