//! Corpus ingestion and multiple-choice training examples.

mod example;
mod keywords;

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use example::{
    build_example, read_examples, sample_distractors, write_examples, MultipleChoiceExample,
    DEFAULT_CHOICES,
};
pub use keywords::{
    extract_keywords, taggers, KeywordSet, LexiconTagger, PosTagger, SuffixTagger, Tag,
    TaggerArgs, WordClasses,
};

/// A source document and its human-written abstract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentPair {
    pub id: String,
    pub body: String,
    #[serde(rename = "abstract")]
    pub gold_summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub pairs: Vec<DocumentPair>,
    /// Lines dropped because the body or the abstract was empty.
    pub skipped: usize,
}

/// Reads a JSONL corpus of `{"id", "body", "abstract"}` objects.
pub fn ingest_corpus(path: &Path) -> Result<Corpus> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: DocumentPair =
            serde_json::from_str(&line).map_err(|source| Error::MalformedLine {
                path: path.to_path_buf(),
                line: idx + 1,
                source,
            })?;
        if pair.body.trim().is_empty() || pair.gold_summary.trim().is_empty() {
            skipped += 1;
        } else {
            pairs.push(pair);
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoUsablePairs(path.to_path_buf()));
    }
    Ok(Corpus { pairs, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let path = dir.path().join("corpus.jsonl");
        fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn reads_pairs_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            r#"{"id":"a","body":"x","abstract":"y"}
{"id":"b","body":"x","abstract":"y"}
{"id":"c","body":"x","abstract":"y"}
"#,
        );
        let corpus = ingest_corpus(&path).unwrap();
        let ids: Vec<_> = corpus.pairs.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(corpus.skipped, 0);
    }

    #[test]
    fn skips_empty_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            r#"{"id":"a","body":"some text","abstract":"gold"}
{"id":"b","body":"more text","abstract":"   "}
"#,
        );
        let corpus = ingest_corpus(&path).unwrap();
        assert_eq!(corpus.pairs.len(), 1);
        assert_eq!(corpus.skipped, 1);
    }

    #[test]
    fn malformed_line_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(
            &dir,
            r#"{"id":"a","body":"x","abstract":"y"}
{"id":"b","body":
"#,
        );
        let err = ingest_corpus(&path).unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line: 2, .. }));
        assert!(err.to_string().contains(":2:"));
    }

    #[test]
    fn no_usable_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, r#"{"id":"a","body":"","abstract":"y"}"#);
        assert!(matches!(ingest_corpus(&path), Err(Error::NoUsablePairs(_))));
    }
}
