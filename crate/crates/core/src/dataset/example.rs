use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DocumentPair, KeywordSet};
use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, TokenSequence, Vocab, BOS, EOS, MASK, PAD, SUM};

pub const DEFAULT_CHOICES: usize = 4;

/// One gold row and its distractor rows, all conditioned on the same keywords.
///
/// Every row is `[BOS] keywords [SUM] candidate [EOS]` padded to a common
/// length. `lm_labels[i]` is the target for input position `i`, i.e. the
/// gold row's token at `i + 1`, and is `MASK` outside the gold summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultipleChoiceExample {
    pub id: String,
    pub keywords: Vec<String>,
    pub rows: Vec<TokenSequence>,
    pub lm_labels: Vec<TokenId>,
    pub mc_label: usize,
}

impl MultipleChoiceExample {
    pub fn max_len(&self) -> usize {
        self.lm_labels.len()
    }

    pub fn gold_row(&self) -> &[TokenId] {
        &self.rows[self.mc_label]
    }

    pub fn lm_target_count(&self) -> usize {
        self.lm_labels.iter().filter(|&&l| l != MASK).count()
    }
}

/// `n` summaries from documents other than `gold_index`.
pub fn sample_distractors(
    pairs: &[DocumentPair],
    gold_index: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<String>> {
    if pairs.len() < n + 1 {
        return Err(Error::TooSmallForDistractors {
            needed: n + 1,
            have: pairs.len(),
        });
    }
    if gold_index >= pairs.len() {
        return Err(Error::OutOfRange(format!(
            "gold index {gold_index} in a corpus of {}",
            pairs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, pairs.len() - 1, n)
        .into_iter()
        .map(|i| if i >= gold_index { i + 1 } else { i })
        .map(|i| pairs[i].gold_summary.clone())
        .collect())
}

/// Lays out one row and returns it with the index of its `SUM` token.
fn layout_row(keywords: &[TokenId], summary: &[TokenId], max_len: usize) -> (TokenSequence, usize) {
    let keywords = &keywords[..keywords.len().min(max_len - 3)];
    let mut row = Vec::with_capacity(max_len);
    row.push(BOS);
    row.extend_from_slice(keywords);
    let sum_pos = row.len();
    row.push(SUM);
    row.extend_from_slice(summary);
    row.push(EOS);
    row.truncate(max_len);
    row.resize(max_len, PAD);
    (row, sum_pos)
}

pub fn build_example(
    id: &str,
    keywords: &KeywordSet,
    gold: &str,
    distractors: &[String],
    vocab: &Vocab,
    max_len: usize,
    seed: u64,
) -> Result<MultipleChoiceExample> {
    if max_len < 8 {
        return Err(Error::config(format!("max_len must be at least 8, got {max_len}")));
    }
    let kw_ids = vocab.encode_words(&keywords.words);
    let gold_ids = vocab.encode(gold);
    if gold_ids.is_empty() {
        return Err(Error::NoRoomForSummary { max_len });
    }

    let n_choices = distractors.len() + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mc_label = rng.random_range(0..n_choices);

    let mut distractors = distractors.iter();
    let mut rows = Vec::with_capacity(n_choices);
    let mut gold_sum_pos = 0;
    for slot in 0..n_choices {
        if slot == mc_label {
            let (row, sum_pos) = layout_row(&kw_ids, &gold_ids, max_len);
            gold_sum_pos = sum_pos;
            rows.push(row);
        } else {
            let text = distractors.next().expect("one distractor per non-gold slot");
            rows.push(layout_row(&kw_ids, &vocab.encode(text), max_len).0);
        }
    }

    let gold_row = &rows[mc_label];
    let mut lm_labels = vec![MASK; max_len];
    for i in gold_sum_pos..max_len - 1 {
        match gold_row[i + 1] {
            PAD => break,
            tok => lm_labels[i] = tok,
        }
    }
    // The summary span must hold at least one summary word, not just EOS.
    if gold_row[gold_sum_pos + 1] == EOS || gold_row[gold_sum_pos + 1] == PAD {
        return Err(Error::NoRoomForSummary { max_len });
    }

    Ok(MultipleChoiceExample {
        id: id.to_string(),
        keywords: keywords.words.clone(),
        rows,
        lm_labels,
        mc_label,
    })
}

pub fn write_examples(path: &Path, examples: &[MultipleChoiceExample]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for ex in examples {
        serde_json::to_writer(&mut out, ex)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_examples(path: &Path) -> Result<Vec<MultipleChoiceExample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: MultipleChoiceExample =
            serde_json::from_str(&line).map_err(|source| Error::MalformedLine {
                path: path.to_path_buf(),
                line: idx + 1,
                source,
            })?;
        examples.push(ex);
    }
    Ok(examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::WordClasses;
    use crate::tokenizer::build_vocab;
    use proptest::prelude::*;

    const M: TokenId = MASK;

    fn pairs(n: usize) -> Vec<DocumentPair> {
        (0..n)
            .map(|i| DocumentPair {
                id: format!("d{i}"),
                body: format!("body {i}"),
                gold_summary: format!("summary {i}"),
            })
            .collect()
    }

    fn kw(words: &[&str]) -> KeywordSet {
        KeywordSet::new(words.iter().map(|s| s.to_string()).collect(), WordClasses::Nouns)
    }

    #[test]
    fn forced_distractor_set() {
        let p = pairs(4);
        let mut got = sample_distractors(&p, 0, 3, 1).unwrap();
        got.sort();
        assert_eq!(got, ["summary 1", "summary 2", "summary 3"]);
    }

    #[test]
    fn distractors_are_seeded() {
        let p = pairs(10);
        let a = sample_distractors(&p, 2, 3, 7).unwrap();
        let b = sample_distractors(&p, 2, 3, 7).unwrap();
        assert_eq!(a, b);
        assert!(!a.contains(&"summary 2".to_string()));
        let mut dedup = a.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 3);
    }

    #[test]
    fn too_small_for_distractors() {
        assert!(matches!(
            sample_distractors(&pairs(3), 0, 3, 0),
            Err(Error::TooSmallForDistractors { needed: 4, have: 3 })
        ));
    }

    #[test]
    fn hand_built_layout() {
        let vocab = build_vocab(&["k g d1 d2 d3"], 20).unwrap();
        let (k, g) = (vocab.id_of("k").unwrap(), vocab.id_of("g").unwrap());
        let ds = ["d1".to_string(), "d2".to_string(), "d3".to_string()];
        let ex = build_example("x", &kw(&["k"]), "g", &ds, &vocab, 8, 3).unwrap();
        assert_eq!(ex.gold_row(), [BOS, k, SUM, g, EOS, PAD, PAD, PAD]);
        assert_eq!(ex.lm_labels, [M, M, g, EOS, M, M, M, M]);
        assert_eq!(ex.rows.len(), 4);
        assert!(ex.rows.iter().all(|r| r.len() == 8));
        for (i, row) in ex.rows.iter().enumerate() {
            assert_eq!(row[3] == g, i == ex.mc_label);
        }
    }

    #[test]
    fn long_gold_is_truncated_to_max_len() {
        let gold = vec!["w"; 2000].join(" ");
        let vocab = build_vocab(&["w k d"], 10).unwrap();
        let ds = vec!["d".to_string(); 3];
        let ex = build_example("x", &kw(&["k"]), &gold, &ds, &vocab, 1024, 0).unwrap();
        assert!(ex.rows.iter().all(|r| r.len() == 1024));
        assert!(!ex.gold_row().contains(&EOS));
        assert_eq!(ex.lm_target_count(), 1024 - 3);
    }

    #[test]
    fn long_keywords_are_cut_before_the_summary() {
        let vocab = build_vocab(&["k g d"], 10).unwrap();
        let ds = vec!["d".to_string(); 3];
        let many = vec!["k"; 50];
        let ex = build_example("x", &kw(&many), "g g g", &ds, &vocab, 8, 0).unwrap();
        let g = vocab.id_of("g").unwrap();
        let row = ex.gold_row();
        assert_eq!(row[6], SUM);
        assert_eq!(row[7], g);
        assert_eq!(ex.lm_target_count(), 1);
    }

    #[test]
    fn empty_gold_has_no_room() {
        let vocab = build_vocab(&["k d"], 10).unwrap();
        let ds = vec!["d".to_string(); 3];
        assert!(matches!(
            build_example("x", &kw(&["k"]), "", &ds, &vocab, 8, 0),
            Err(Error::NoRoomForSummary { .. })
        ));
        assert!(build_example("x", &kw(&["k"]), "g", &ds, &vocab, 7, 0).is_err());
    }

    #[test]
    fn examples_round_trip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ex.jsonl");
        let vocab = build_vocab(&["k g d"], 10).unwrap();
        let ds = vec!["d".to_string(); 3];
        let ex = build_example("x", &kw(&["k"]), "g", &ds, &vocab, 8, 0).unwrap();
        write_examples(&path, &[ex.clone(), ex.clone()]).unwrap();
        assert_eq!(read_examples(&path).unwrap(), vec![ex.clone(), ex]);
    }

    proptest! {
        #[test]
        fn label_count_and_alignment(
            n_kw in 0usize..6,
            n_gold in 1usize..12,
            max_len in 8usize..40,
            seed in any::<u64>(),
        ) {
            let vocab = build_vocab(&["k g d"], 10).unwrap();
            let words = vec!["k"; n_kw];
            let gold = vec!["g"; n_gold].join(" ");
            let ds = vec!["d d".to_string(); 3];
            let ex = build_example("x", &kw(&words), &gold, &ds, &vocab, max_len, seed).unwrap();
            let again = build_example("x", &kw(&words), &gold, &ds, &vocab, max_len, seed).unwrap();
            prop_assert_eq!(&ex, &again);
            prop_assert!(ex.mc_label < 4);
            let fits = 1 + n_kw + 1 + n_gold + 1 <= max_len;
            if fits {
                prop_assert_eq!(ex.lm_target_count(), n_gold + 1);
            }
            let row = ex.gold_row();
            let sum_pos = row.iter().position(|&t| t == SUM).unwrap();
            for (i, &label) in ex.lm_labels.iter().enumerate() {
                if label != MASK {
                    prop_assert!(i + 1 > sum_pos);
                    prop_assert_eq!(label, row[i + 1]);
                    prop_assert!(row[i + 1] != PAD);
                } else if i + 1 < max_len && i >= sum_pos {
                    prop_assert_eq!(row[i + 1], PAD);
                }
            }
        }

        #[test]
        fn gold_row_content_ignores_distractor_order(seed in any::<u64>()) {
            let vocab = build_vocab(&["k g a b c"], 12).unwrap();
            let ds1 = ["a".to_string(), "b".to_string(), "c".to_string()];
            let ds2 = ["c".to_string(), "a".to_string(), "b".to_string()];
            let e1 = build_example("x", &kw(&["k"]), "g", &ds1, &vocab, 10, seed).unwrap();
            let e2 = build_example("x", &kw(&["k"]), "g", &ds2, &vocab, 10, seed).unwrap();
            prop_assert_eq!(e1.gold_row(), e2.gold_row());
            prop_assert_eq!(&e1.lm_labels, &e2.lm_labels);
        }
    }
}
