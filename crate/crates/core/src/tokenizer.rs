//! Word-level tokenizer with a frequency-trained vocabulary.
//!
//! Text is case-folded and split on Unicode whitespace; every character that
//! is neither alphanumeric nor whitespace becomes a token of its own. The first
//! six ids are reserved for the special tokens, which raw text can never
//! produce because every special literal contains punctuation.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = usize;
pub type TokenSequence = Vec<TokenId>;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const PAD: TokenId = 2;
pub const SUM: TokenId = 3;
pub const UNK: TokenId = 4;
/// Label value for positions that carry no language-modelling target.
pub const MASK: TokenId = 5;

pub const NUM_SPECIAL: usize = 6;

/// Canonical literals, indexed by special id.
pub const SPECIAL_LITERALS: [&str; NUM_SPECIAL] =
    ["<BOS>", "<EOS>", "<pad>", "<S>", "<unk>", "<masked>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub bos_id: TokenId,
    pub eos_id: TokenId,
    pub pad_id: TokenId,
    pub sum_id: TokenId,
    pub unk_id: TokenId,
    pub mask_label_id: TokenId,
}

impl Default for SpecialIds {
    fn default() -> Self {
        Self {
            bos_id: BOS,
            eos_id: EOS,
            pad_id: PAD,
            sum_id: SUM,
            unk_id: UNK,
            mask_label_id: MASK,
        }
    }
}

/// Splits `text` into normalized word tokens.
pub fn normalize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_lowercase().collect());
            }
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
    special: SpecialIds,
}

impl Vocab {
    fn from_words(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut id_to_token: Vec<String> =
            SPECIAL_LITERALS.iter().map(|s| s.to_string()).collect();
        let mut token_to_id: HashMap<String, TokenId> = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        for word in words {
            if token_to_id.contains_key(&word) {
                return Err(Error::input(format!("duplicate vocabulary entry `{word}`")));
            }
            token_to_id.insert(word.clone(), id_to_token.len());
            id_to_token.push(word);
        }
        Ok(Self {
            token_to_id,
            id_to_token,
            special: SpecialIds::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn special(&self) -> SpecialIds {
        self.special
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id < NUM_SPECIAL
    }

    /// Id of an ordinary word; specials are not addressable by literal.
    pub fn id_of(&self, word: &str) -> Option<TokenId> {
        self.token_to_id
            .get(word)
            .copied()
            .filter(|&id| id >= NUM_SPECIAL)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Number of ordinary (non-special) words.
    pub fn word_count(&self) -> usize {
        self.len() - NUM_SPECIAL
    }

    /// Maps raw text to ids; out-of-vocabulary words become `<unk>`.
    pub fn encode(&self, text: &str) -> TokenSequence {
        normalize(text)
            .iter()
            .map(|w| self.id_of(w).unwrap_or(UNK))
            .collect()
    }

    pub fn encode_words<S: AsRef<str>>(&self, words: &[S]) -> TokenSequence {
        words
            .iter()
            .flat_map(|w| normalize(w.as_ref()))
            .map(|w| self.id_of(&w).unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let words = ids
            .iter()
            .map(|&id| self.token(id).ok_or(Error::UnknownId(id)))
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for token in &self.id_to_token {
            writeln!(file, "{token}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() <= NUM_SPECIAL || lines[..NUM_SPECIAL] != SPECIAL_LITERALS {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "vocabulary must start with the six special literals and hold at least one word"
                    .into(),
            });
        }
        Self::from_words(lines[NUM_SPECIAL..].iter().map(|s| s.to_string())).map_err(|e| {
            Error::Format {
                path: path.to_path_buf(),
                reason: e.to_string(),
            }
        })
    }
}

/// Keeps the `max_size - 6` most frequent words of `corpus`; ties are broken
/// lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Vocab> {
    if max_size <= NUM_SPECIAL {
        return Err(Error::config(format!(
            "vocabulary size must be at least {}, got {max_size}",
            NUM_SPECIAL + 1
        )));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for doc in corpus {
        for word in normalize(doc.as_ref()) {
            *counts.entry(word).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - NUM_SPECIAL);
    Vocab::from_words(ranked.into_iter().map(|(w, _)| w))
}
