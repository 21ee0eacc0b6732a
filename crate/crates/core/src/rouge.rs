//! ROUGE-n, ROUGE-L and ROUGE-W with precision, recall and F.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tokenizer::normalize;

pub const DEFAULT_WLCS_ALPHA: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RougeVariant {
    N(usize),
    L,
    W(f64),
}

impl fmt::Display for RougeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RougeVariant::N(n) => write!(f, "rouge-{n}"),
            RougeVariant::L => f.write_str("rouge-l"),
            RougeVariant::W(a) if *a == DEFAULT_WLCS_ALPHA => f.write_str("rouge-w"),
            RougeVariant::W(a) => write!(f, "rouge-w-{a}"),
        }
    }
}

impl FromStr for RougeVariant {
    type Err = Error;

    /// Accepts `1`, `2`, `l`, `w`, `w-1.5` with an optional `rouge-` prefix.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let key = lower.strip_prefix("rouge-").unwrap_or(&lower);
        let bad = || Error::config(format!("unknown ROUGE variant {s:?}"));
        match key {
            "l" => Ok(RougeVariant::L),
            "w" => Ok(RougeVariant::W(DEFAULT_WLCS_ALPHA)),
            _ => {
                if let Some(alpha) = key.strip_prefix("w-") {
                    let a: f64 = alpha.parse().map_err(|_| bad())?;
                    if a <= 1.0 {
                        return Err(Error::OutOfRange(format!("ROUGE-W alpha must exceed 1, got {a}")));
                    }
                    return Ok(RougeVariant::W(a));
                }
                match key.parse::<usize>() {
                    Ok(n) if n >= 1 => Ok(RougeVariant::N(n)),
                    _ => Err(bad()),
                }
            }
        }
    }
}

/// Comma-separated variant list, e.g. `1,2,l,w`.
pub fn parse_variants(spec: &str) -> Result<Vec<RougeVariant>> {
    let v: Vec<RougeVariant> = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if v.is_empty() {
        return Err(Error::config("no ROUGE variants given"));
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl RougeScore {
    pub const ZERO: RougeScore = RougeScore { precision: 0.0, recall: 0.0, f: 0.0 };

    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

pub fn rouge_n_tokens(cand: &[String], reference: &[String], n: usize) -> RougeScore {
    assert!(n >= 1, "n-gram order must be at least 1");
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let overlap: usize = c.iter().map(|(g, &k)| k.min(*r.get(g).unwrap_or(&0))).sum();
    let total_c: usize = c.values().sum();
    let total_r: usize = r.values().sum();
    RougeScore::from_pr(ratio(overlap as f64, total_c as f64), ratio(overlap as f64, total_r as f64))
}

pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> RougeScore {
    rouge_n_tokens(&normalize(candidate), &normalize(reference), n)
}

/// Longest common subsequence length by the usual table.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_tokens(cand: &[String], reference: &[String]) -> RougeScore {
    let l = lcs_len(cand, reference) as f64;
    RougeScore::from_pr(ratio(l, cand.len() as f64), ratio(l, reference.len() as f64))
}

pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    rouge_l_tokens(&normalize(candidate), &normalize(reference))
}

/// Weighted LCS score with `f(k) = k^alpha`: a match extending a run of
/// length `k` adds `f(k + 1) − f(k)`.
pub fn wlcs<T: PartialEq>(a: &[T], b: &[T], alpha: f64) -> f64 {
    let f = |k: usize| (k as f64).powf(alpha);
    let cols = b.len() + 1;
    let mut c = vec![0.0f64; (a.len() + 1) * cols];
    let mut w = vec![0usize; (a.len() + 1) * cols];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let (here, diag, up, left) = (i * cols + j, (i - 1) * cols + j - 1, (i - 1) * cols + j, i * cols + j - 1);
            if a[i - 1] == b[j - 1] {
                let k = w[diag];
                c[here] = c[diag] + f(k + 1) - f(k);
                w[here] = k + 1;
            } else if c[up] > c[left] {
                c[here] = c[up];
                w[here] = 0;
            } else {
                c[here] = c[left];
                w[here] = 0;
            }
        }
    }
    c[a.len() * cols + b.len()]
}

pub fn rouge_w_tokens(cand: &[String], reference: &[String], alpha: f64) -> Result<RougeScore> {
    if !(alpha > 1.0) {
        return Err(Error::OutOfRange(format!("ROUGE-W alpha must exceed 1, got {alpha}")));
    }
    if cand.is_empty() || reference.is_empty() {
        return Ok(RougeScore::ZERO);
    }
    let score = wlcs(cand, reference, alpha);
    let inv = |x: f64| x.powf(1.0 / alpha);
    let f = |k: usize| (k as f64).powf(alpha);
    Ok(RougeScore::from_pr(inv(score / f(cand.len())), inv(score / f(reference.len()))))
}

pub fn rouge_w(candidate: &str, reference: &str, alpha: f64) -> Result<RougeScore> {
    rouge_w_tokens(&normalize(candidate), &normalize(reference), alpha)
}

pub fn score(candidate: &str, reference: &str, variant: RougeVariant) -> Result<RougeScore> {
    let (c, r) = (normalize(candidate), normalize(reference));
    match variant {
        RougeVariant::N(n) => Ok(rouge_n_tokens(&c, &r, n)),
        RougeVariant::L => Ok(rouge_l_tokens(&c, &r)),
        RougeVariant::W(a) => rouge_w_tokens(&c, &r, a),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusScore {
    pub variant: RougeVariant,
    pub mean: RougeScore,
}

/// Arithmetic mean of P, R and F per variant over all pairs.
pub fn evaluate_corpus<S: AsRef<str>>(pairs: &[(S, S)], variants: &[RougeVariant]) -> Result<Vec<CorpusScore>> {
    if pairs.is_empty() {
        return Err(Error::input("no candidate/reference pairs to score"));
    }
    let n = pairs.len() as f64;
    variants
        .iter()
        .map(|&variant| {
            let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
            for (c, rf) in pairs {
                let s = score(c.as_ref(), rf.as_ref(), variant)?;
                p += s.precision;
                r += s.recall;
                f += s.f;
            }
            Ok(CorpusScore {
                variant,
                mean: RougeScore { precision: p / n, recall: r / n, f: f / n },
            })
        })
        .collect()
}

pub fn write_scores_csv<W: Write>(out: W, scores: &[CorpusScore]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "precision", "recall", "f"])?;
    for s in scores {
        w.write_record([
            s.variant.to_string(),
            s.mean.precision.to_string(),
            s.mean.recall.to_string(),
            s.mean.f.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<scores>", e))
}
