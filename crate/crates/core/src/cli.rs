//! Command-line front end: configuration loading and one function per
//! subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    build_example, extract_keywords, ingest_corpus, read_examples, sample_distractors, taggers,
    write_examples, DocumentPair, KeywordSet, PosTagger, TaggerArgs, WordClasses, DEFAULT_CHOICES,
};
use crate::decode::{generate, DecodeParams};
use crate::error::{Error, Result};
use crate::extractive::{clusterers, encoders, ClusterArgs, Clusterer, Distance, EncoderArgs, Extractor, SentenceEncoder};
use crate::hash::derive_seed;
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, Model, ModelConfig};
use crate::rouge::{evaluate_corpus, parse_variants, write_scores_csv, RougeVariant};
use crate::tokenizer::{build_vocab, Vocab, BOS, EOS, SUM};
use crate::train::{MetricsWriter, StepMetrics, TrainConfig, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: PathBuf,
    pub dataset: PathBuf,
    pub vocab: PathBuf,
    pub checkpoint_dir: PathBuf,
    /// Checkpoint read by `generate`, `experiment` and `attn`; defaults to
    /// `model.ckpt` inside `checkpoint_dir`.
    pub checkpoint: Option<PathBuf>,
    pub metrics: PathBuf,
    pub summaries: PathBuf,
    pub extracts: PathBuf,
    pub scores: PathBuf,
    pub experiment: PathBuf,
    pub attention: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        let run = PathBuf::from("run");
        Self {
            corpus: PathBuf::from("corpus.jsonl"),
            dataset: run.join("dataset.jsonl"),
            vocab: run.join("vocab.txt"),
            checkpoint_dir: run.join("checkpoints"),
            checkpoint: None,
            metrics: run.join("metrics.csv"),
            summaries: run.join("summaries.jsonl"),
            extracts: run.join("extracts.jsonl"),
            scores: run.join("scores.csv"),
            experiment: run.join("experiment.csv"),
            attention: run.join("attention.csv"),
        }
    }
}

impl PathsConfig {
    pub fn checkpoint(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.checkpoint_dir.join("model.ckpt"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub max_vocab: usize,
    pub classes: WordClasses,
    pub tagger: String,
    pub lexicon: Option<PathBuf>,
    /// Keywords come from the extractive summary at this ratio; 1.0 uses
    /// the whole body.
    pub keyword_ratio: f64,
    pub choices: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            max_vocab: 8000,
            classes: WordClasses::NounsAndVerbs,
            tagger: "lexicon".into(),
            lexicon: None,
            keyword_ratio: 1.0,
            choices: DEFAULT_CHOICES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub ratio: f64,
    pub mode: String,
    pub distance: Distance,
    pub encoder: String,
    pub embed_dim: usize,
    pub embeddings: Option<PathBuf>,
    pub restarts: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            ratio: 0.4,
            mode: "pam".into(),
            distance: Distance::Euclidean,
            encoder: "hashing".into(),
            embed_dim: crate::extractive::DEFAULT_EMBED_DIM,
            embeddings: None,
            restarts: crate::extractive::DEFAULT_RESTARTS,
        }
    }
}

/// Everything a run needs. The top-level `seed` overrides the per-section
/// seeds so one number controls every random choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub seed: u64,
    pub paths: PathsConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeParams,
    pub extract: ExtractConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: 1,
            seed: 0,
            paths: PathsConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeParams::default(),
            extract: ExtractConfig::default(),
        }
    }
}

fn parse_toml_value(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Probe {
        v: toml::Value,
    }
    toml::from_str::<Probe>(&format!("v = {raw}"))
        .map(|p| p.v)
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}

impl PipelineConfig {
    /// Parses TOML text, applies `section.key=value` overrides, and checks
    /// the result.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override `{item}` is not key=value")))?;
            let mut parts: Vec<&str> = key.trim().split('.').collect();
            let leaf = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::config(format!("empty key in `{item}`")))?;
            let mut node = &mut table;
            for p in parts {
                node = node
                    .entry(p.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::config(format!("`{p}` is not a section")))?;
            }
            node.insert(leaf.to_string(), parse_toml_value(raw.trim()));
        }
        let mut config: Self = table.try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        config.propagate_seed();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        let mut overrides = overrides.to_vec();
        if let Some(s) = seed {
            overrides.push(format!("seed={s}"));
        }
        Self::from_toml(&text, &overrides)
    }

    fn propagate_seed(&mut self) {
        self.model.seed = self.seed;
        self.train.seed = self.seed;
        self.decode.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(Error::config(format!("unsupported config version {}", self.version)));
        }
        self.train.validate()?;
        self.decode.validate()?;
        crate::extractive::selection_size(self.extract.ratio, 1)?;
        crate::extractive::selection_size(self.data.keyword_ratio, 1)?;
        if self.data.choices < 2 {
            return Err(Error::config("at least two choices are needed"));
        }
        Ok(())
    }

    pub fn tagger(&self) -> Result<Box<dyn PosTagger>> {
        taggers().build(
            &self.data.tagger,
            &TaggerArgs {
                lexicon: self.data.lexicon.clone(),
            },
        )
    }

    pub fn encoder(&self) -> Result<Box<dyn SentenceEncoder>> {
        encoders().build(
            &self.extract.encoder,
            &EncoderArgs {
                dim: Some(self.extract.embed_dim),
                path: self.extract.embeddings.clone(),
            },
        )
    }

    pub fn clusterer(&self) -> Result<Box<dyn Clusterer>> {
        clusterers().build(
            &self.extract.mode,
            &ClusterArgs {
                restarts: self.extract.restarts,
            },
        )
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::config(format!("{what} {} does not exist", path.display())))
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    ensure_parent(path)?;
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = create(path)?;
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| Error::MalformedLine {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

/// Keywords of `body`, drawn from its extractive summary when `ratio < 1`.
pub fn document_keywords(
    body: &str,
    classes: WordClasses,
    ratio: f64,
    tagger: &dyn PosTagger,
    extractor: &Extractor<'_>,
    seed: u64,
) -> Result<KeywordSet> {
    let source = if ratio < 1.0 {
        extractor.extract(body, ratio, seed)?.summary
    } else {
        body.to_string()
    };
    let mut kw = extract_keywords(&source, classes, tagger);
    kw.source_ratio = ratio;
    Ok(kw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrepareReport {
    pub documents: usize,
    pub examples: usize,
    pub skipped: usize,
}

pub fn cmd_prepare(config: &PipelineConfig) -> Result<PrepareReport> {
    let paths = &config.paths;
    require_file(&paths.corpus, "corpus")?;
    let corpus = ingest_corpus(&paths.corpus)?;
    let texts: Vec<&str> = corpus
        .pairs
        .iter()
        .flat_map(|p| [p.body.as_str(), p.gold_summary.as_str()])
        .collect();
    let vocab = build_vocab(&texts, config.data.max_vocab)?;
    let tagger = config.tagger()?;
    let encoder = config.encoder()?;
    let clusterer = config.clusterer()?;
    let extractor = Extractor {
        encoder: encoder.as_ref(),
        clusterer: clusterer.as_ref(),
        distance: config.extract.distance,
    };
    let mut examples = Vec::with_capacity(corpus.pairs.len());
    for (i, pair) in corpus.pairs.iter().enumerate() {
        let seed = derive_seed(config.seed, &pair.id);
        let context = |e: Error| Error::input(format!("document {}: {e}", pair.id));
        let kw = document_keywords(&pair.body, config.data.classes, config.data.keyword_ratio, tagger.as_ref(), &extractor, seed)
            .map_err(context)?;
        let distractors = match sample_distractors(&corpus.pairs, i, config.data.choices - 1, seed) {
            Err(e @ Error::TooSmallForDistractors { .. }) => return Err(e),
            other => other.map_err(context)?,
        };
        let ex = build_example(&pair.id, &kw, &pair.gold_summary, &distractors, &vocab, config.model.max_len, seed.rotate_left(1))
            .map_err(context)?;
        examples.push(ex);
    }
    ensure_parent(&paths.dataset)?;
    write_examples(&paths.dataset, &examples)?;
    ensure_parent(&paths.vocab)?;
    vocab.save(&paths.vocab)?;
    Ok(PrepareReport {
        documents: corpus.pairs.len(),
        examples: examples.len(),
        skipped: corpus.skipped,
    })
}

pub fn epoch_checkpoint(dir: &Path, epoch: u64) -> PathBuf {
    dir.join(format!("epoch-{epoch}.ckpt"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps: usize,
    pub epochs_run: u64,
    pub final_checkpoint: PathBuf,
    pub metrics: Vec<StepMetrics>,
}

pub fn cmd_train(config: &PipelineConfig, resume: Option<&Path>) -> Result<TrainReport> {
    let paths = &config.paths;
    require_file(&paths.dataset, "dataset")?;
    require_file(&paths.vocab, "vocabulary")?;
    let vocab = Vocab::load(&paths.vocab)?;
    let data = read_examples(&paths.dataset)?;
    if data.is_empty() {
        return Err(Error::input(format!("{} holds no examples", paths.dataset.display())));
    }
    let mut trainer = match resume {
        Some(path) => {
            require_file(path, "checkpoint")?;
            let ckpt = load_checkpoint(path)?;
            if ckpt.model.config.vocab_size != vocab.len() {
                return Err(Error::config(format!(
                    "checkpoint vocabulary of {} does not match {} entries in {}",
                    ckpt.model.config.vocab_size,
                    vocab.len(),
                    paths.vocab.display()
                )));
            }
            Trainer::resume(ckpt.model, config.train, ckpt.progress, ckpt.optimizer)?
        }
        None => {
            let model_config = ModelConfig {
                vocab_size: vocab.len(),
                ..config.model
            };
            Trainer::new(Model::init(model_config)?, config.train)?
        }
    };

    let append = resume.is_some() && paths.metrics.is_file() && fs::metadata(&paths.metrics).is_ok_and(|m| m.len() > 0);
    ensure_parent(&paths.metrics)?;
    let file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&paths.metrics)
        .map_err(|e| Error::io(&paths.metrics, e))?;
    let mut writer = MetricsWriter::new(BufWriter::new(file), !append)?;
    fs::create_dir_all(&paths.checkpoint_dir).map_err(|e| Error::io(&paths.checkpoint_dir, e))?;

    let mut all = Vec::new();
    let target = config.train.epochs as u64;
    let mut epochs_run = 0;
    while trainer.progress.epoch < target {
        let metrics = trainer.run_epoch(&data, &mut |m| writer.write(m));
        writer.flush()?;
        let metrics = metrics?;
        let n = metrics.len() as f64;
        let mean = |f: fn(&StepMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
        eprintln!(
            "epoch {}: {} steps, lm {:.4}, mc {:.4}, total {:.4}",
            trainer.progress.epoch,
            metrics.len(),
            mean(|m| m.lm_loss),
            mean(|m| m.mc_loss),
            mean(|m| m.total_loss)
        );
        all.extend(metrics);
        epochs_run += 1;
        let ckpt = Checkpoint {
            model: trainer.model.clone(),
            progress: trainer.progress,
            optimizer: Some(trainer.optimizer.state.clone()),
        };
        save_checkpoint(&epoch_checkpoint(&paths.checkpoint_dir, trainer.progress.epoch), &ckpt)?;
        save_checkpoint(&paths.checkpoint_dir.join("model.ckpt"), &ckpt)?;
    }
    Ok(TrainReport {
        steps: all.len(),
        epochs_run,
        final_checkpoint: paths.checkpoint_dir.join("model.ckpt"),
        metrics: all,
    })
}

/// A `generate` input line: explicit keywords, or a document to draw them
/// from.
#[derive(Debug, Clone, Deserialize)]
pub struct GenerateInput {
    pub id: String,
    #[serde(default)]
    pub keywords: Option<KeywordField>,
    #[serde(default)]
    pub body: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum KeywordField {
    List(Vec<String>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedParams {
    pub t: f64,
    pub p: f64,
    pub k: usize,
    pub greedy: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub id: String,
    pub keywords: Vec<String>,
    pub summary: String,
    pub params: RecordedParams,
    pub empty_prompt: bool,
}

fn load_model(config: &PipelineConfig) -> Result<(Model, Vocab)> {
    let ckpt_path = config.paths.checkpoint();
    require_file(&ckpt_path, "checkpoint")?;
    require_file(&config.paths.vocab, "vocabulary")?;
    let model = load_checkpoint(&ckpt_path)?.model;
    let vocab = Vocab::load(&config.paths.vocab)?;
    if model.config.vocab_size != vocab.len() {
        return Err(Error::config(format!(
            "checkpoint vocabulary of {} does not match {} entries",
            model.config.vocab_size,
            vocab.len()
        )));
    }
    Ok((model, vocab))
}

/// Generates one summary; the seed is derived from the record id so each
/// record is reproducible on its own.
pub fn summarize(model: &Model, vocab: &Vocab, id: &str, mut keywords: KeywordSet, dp: &DecodeParams) -> Result<SummaryRecord> {
    keywords.words.truncate(model.config.max_len - 3);
    let dp = DecodeParams {
        seed: derive_seed(dp.seed, id),
        ..*dp
    };
    let out = generate(model, &keywords, &dp, vocab)?;
    Ok(SummaryRecord {
        id: id.to_string(),
        empty_prompt: keywords.is_empty(),
        keywords: keywords.words,
        summary: out.text,
        params: RecordedParams {
            t: dp.temperature,
            p: dp.top_p,
            k: dp.top_k,
            greedy: dp.greedy,
            seed: dp.seed,
        },
    })
}

pub fn cmd_generate(config: &PipelineConfig, inputs: &[GenerateInput]) -> Result<Vec<SummaryRecord>> {
    let (model, vocab) = load_model(config)?;
    let tagger = config.tagger()?;
    let encoder = config.encoder()?;
    let clusterer = config.clusterer()?;
    let extractor = Extractor {
        encoder: encoder.as_ref(),
        clusterer: clusterer.as_ref(),
        distance: config.extract.distance,
    };
    let mut records = Vec::with_capacity(inputs.len());
    for input in inputs {
        let keywords = match (&input.keywords, &input.body) {
            (Some(KeywordField::List(words)), _) => KeywordSet::new(words.clone(), config.data.classes),
            (Some(KeywordField::Text(text)), _) => {
                KeywordSet::new(crate::tokenizer::normalize(text), config.data.classes)
            }
            (None, Some(body)) => document_keywords(
                body,
                config.data.classes,
                config.data.keyword_ratio,
                tagger.as_ref(),
                &extractor,
                derive_seed(config.seed, &input.id),
            )?,
            (None, None) => {
                return Err(Error::input(format!("record {} has neither keywords nor body", input.id)));
            }
        };
        records.push(summarize(&model, &vocab, &input.id, keywords, &config.decode)?);
    }
    ensure_parent(&config.paths.summaries)?;
    write_jsonl(&config.paths.summaries, &records)?;
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SourceField {
    Body,
    Abstract,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractRecord {
    pub id: String,
    pub ratio: f64,
    pub mode: String,
    pub selected_indices: Vec<usize>,
    pub summary: String,
}

pub fn cmd_extract(config: &PipelineConfig, field: SourceField) -> Result<Vec<ExtractRecord>> {
    require_file(&config.paths.corpus, "corpus")?;
    let corpus = ingest_corpus(&config.paths.corpus)?;
    let encoder = config.encoder()?;
    let clusterer = config.clusterer()?;
    let extractor = Extractor {
        encoder: encoder.as_ref(),
        clusterer: clusterer.as_ref(),
        distance: config.extract.distance,
    };
    let records = corpus
        .pairs
        .iter()
        .map(|pair| {
            let text = match field {
                SourceField::Body => &pair.body,
                SourceField::Abstract => &pair.gold_summary,
            };
            let e = extractor
                .extract(text, config.extract.ratio, derive_seed(config.seed, &pair.id))
                .map_err(|e| Error::input(format!("document {}: {e}", pair.id)))?;
            Ok(ExtractRecord {
                id: pair.id.clone(),
                ratio: config.extract.ratio,
                mode: clusterer.name().to_string(),
                selected_indices: e.result.selected_indices,
                summary: e.summary,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&config.paths.extracts, &records)?;
    Ok(records)
}

/// Texts keyed by id from a JSONL file, taking the first of `fields`
/// present on each line.
pub fn read_texts(path: &Path, fields: &[&str]) -> Result<Vec<(String, String)>> {
    let rows: Vec<serde_json::Map<String, serde_json::Value>> = read_jsonl(path)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, row)| {
            let id = match row.get("id") {
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(other) => other.to_string(),
                None => (i + 1).to_string(),
            };
            let text = fields
                .iter()
                .find_map(|f| row.get(*f).and_then(|v| v.as_str()))
                .ok_or_else(|| {
                    Error::input(format!("{}: record {id} has none of the fields {}", path.display(), fields.join(", ")))
                })?;
            Ok((id, text.to_string()))
        })
        .collect()
}

pub fn cmd_rouge(
    variants: &[RougeVariant],
    candidates: &Path,
    references: &Path,
    out: &Path,
) -> Result<Vec<crate::rouge::CorpusScore>> {
    require_file(candidates, "candidates")?;
    require_file(references, "references")?;
    let cands: BTreeMap<String, String> = read_texts(candidates, &["summary", "candidate", "text"])?.into_iter().collect();
    let refs = read_texts(references, &["abstract", "reference", "summary", "text"])?;
    let pairs = refs
        .into_iter()
        .map(|(id, r)| {
            let c = cands
                .get(&id)
                .ok_or_else(|| Error::input(format!("no candidate for reference {id}")))?;
            Ok((c.clone(), r))
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = evaluate_corpus(&pairs, variants)?;
    write_scores_csv(create(out)?, &scores)?;
    Ok(scores)
}

/// One row of the experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub cell: String,
    pub method: String,
    pub classes: String,
    pub ratio: f64,
    pub decoding: String,
    pub reference: String,
    pub rouge1_p: f64,
    pub rouge1_r: f64,
    pub rouge1_f: f64,
    pub rouge2_p: f64,
    pub rouge2_r: f64,
    pub rouge2_f: f64,
    pub rougel_p: f64,
    pub rougel_r: f64,
    pub rougel_f: f64,
}

const GRID_RATIOS: [f64; 2] = [0.4, 0.6];

fn experiment_row(
    cell: String,
    method: &str,
    classes: &str,
    ratio: f64,
    decoding: &str,
    reference: &str,
    pairs: &[(String, String)],
) -> Result<ExperimentRow> {
    let s = evaluate_corpus(pairs, &[RougeVariant::N(1), RougeVariant::N(2), RougeVariant::L])?;
    Ok(ExperimentRow {
        cell,
        method: method.into(),
        classes: classes.into(),
        ratio,
        decoding: decoding.into(),
        reference: reference.into(),
        rouge1_p: s[0].mean.precision,
        rouge1_r: s[0].mean.recall,
        rouge1_f: s[0].mean.f,
        rouge2_p: s[1].mean.precision,
        rouge2_r: s[1].mean.recall,
        rouge2_f: s[1].mean.f,
        rougel_p: s[2].mean.precision,
        rougel_r: s[2].mean.recall,
        rougel_f: s[2].mean.f,
    })
}

/// Extractive summaries of every body at `ratio`.
pub fn extract_all(pairs: &[DocumentPair], extractor: &Extractor<'_>, ratio: f64, seed: u64) -> Result<Vec<String>> {
    pairs
        .iter()
        .map(|p| Ok(extractor.extract(&p.body, ratio, derive_seed(seed, &p.id))?.summary))
        .collect()
}

/// The comparison grid: extractive at each ratio, abstractive over keyword
/// class × keyword ratio × {greedy, sampled}, and an identity control.
pub fn cmd_experiment(config: &PipelineConfig) -> Result<Vec<ExperimentRow>> {
    require_file(&config.paths.corpus, "corpus")?;
    let corpus = ingest_corpus(&config.paths.corpus)?;
    let (model, vocab) = load_model(config)?;
    let tagger = config.tagger()?;
    let encoder = config.encoder()?;
    let clusterer = config.clusterer()?;
    let extractor = Extractor {
        encoder: encoder.as_ref(),
        clusterer: clusterer.as_ref(),
        distance: config.extract.distance,
    };
    let pairs = &corpus.pairs;
    let mut rows = Vec::new();

    let mut extracts = Vec::new();
    for ratio in GRID_RATIOS {
        let summaries = extract_all(pairs, &extractor, ratio, config.seed)?;
        let scored: Vec<(String, String)> = summaries
            .iter()
            .zip(pairs)
            .map(|(s, p)| (s.clone(), p.gold_summary.clone()))
            .collect();
        rows.push(experiment_row(format!("extractive-{ratio}"), "extractive", "-", ratio, "-", "abstract", &scored)?);
        extracts.push(summaries);
    }

    let decodings = [
        ("top1", DecodeParams { greedy: true, ..config.decode }),
        ("top50", DecodeParams { greedy: false, top_k: 50, ..config.decode }),
    ];
    for classes in WordClasses::ALL {
        for (ratio, summaries) in GRID_RATIOS.iter().zip(&extracts) {
            let keyword_sets: Vec<KeywordSet> = summaries
                .iter()
                .map(|s| {
                    let mut kw = extract_keywords(s, classes, tagger.as_ref());
                    kw.source_ratio = *ratio;
                    kw
                })
                .collect();
            for (name, dp) in &decodings {
                let scored = pairs
                    .iter()
                    .zip(&keyword_sets)
                    .map(|(p, kw)| {
                        let rec = summarize(&model, &vocab, &p.id, kw.clone(), dp)?;
                        Ok((rec.summary, p.gold_summary.clone()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                rows.push(experiment_row(
                    format!("abstractive-{}-{ratio}-{name}", classes.as_str()),
                    "abstractive",
                    classes.as_str(),
                    *ratio,
                    name,
                    "abstract",
                    &scored,
                )?);
            }
        }
    }

    let control = extract_all(pairs, &extractor, 1.0, config.seed)?;
    let scored: Vec<(String, String)> = control.into_iter().zip(pairs).map(|(s, p)| (s, p.body.clone())).collect();
    rows.push(experiment_row("control-extractive-1.0".into(), "extractive", "-", 1.0, "-", "body", &scored)?);

    let mut w = csv::Writer::from_writer(create(&config.paths.experiment)?);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&config.paths.experiment, e))?;
    Ok(rows)
}

pub fn cmd_attn(config: &PipelineConfig, keywords: &str, summary: &str, layer: usize, head: usize) -> Result<crate::model::AttentionMap> {
    let (model, vocab) = load_model(config)?;
    let mut row = vec![BOS];
    row.extend(vocab.encode(keywords));
    row.push(SUM);
    row.extend(vocab.encode(summary));
    row.push(EOS);
    row.truncate(model.config.max_len);
    let map = model.export_attention(&row, layer, head, &vocab)?;
    map.write_csv(create(&config.paths.attention)?)?;
    Ok(map)
}

#[derive(Debug, Parser)]
#[command(name = "kwsum", version, about = "Keyword-conditioned summarization pipeline")]
pub struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override a configuration entry, e.g. `--set train.epochs=2`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    /// Global seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// nouns, verbs or nouns_and_verbs.
    #[arg(long)]
    classes: Option<WordClasses>,
    #[arg(long)]
    keyword_ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Continue from an epoch checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// JSONL with `id` and either `keywords` or `body` per line.
    #[arg(long, conflicts_with = "keywords")]
    input: Option<PathBuf>,
    /// A single space-separated keyword prompt.
    #[arg(long)]
    keywords: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    greedy: bool,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    #[arg(long)]
    classes: Option<WordClasses>,
    #[arg(long)]
    keyword_ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    ratio: Option<f64>,
    /// pam or kmeans.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    distance: Option<Distance>,
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "body")]
    field: SourceField,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RougeArgs {
    #[arg(long, default_value = "1,2,l,w")]
    variant: String,
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    references: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttnArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    keywords: String,
    #[arg(long, default_value = "")]
    summary: String,
    #[arg(long, default_value_t = 0)]
    layer: usize,
    #[arg(long, default_value_t = 0)]
    head: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the vocabulary and multiple-choice examples from a corpus.
    Prepare(PrepareArgs),
    /// Fine-tune on prepared examples, writing checkpoints and metrics.
    Train(TrainArgs),
    /// Generate summaries from keywords or documents.
    Generate(GenerateArgs),
    /// Select medoid sentences from each document.
    Extract(ExtractArgs),
    /// Score candidates against references.
    Rouge(RougeArgs),
    /// Run the extractive/abstractive comparison grid.
    Experiment(ExperimentArgs),
    /// Export one attention head as a labeled matrix.
    Attn(AttnArgs),
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = PipelineConfig::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    match cli.command {
        Command::Prepare(a) => {
            set(&mut config.paths.corpus, a.corpus);
            set(&mut config.paths.dataset, a.dataset);
            set(&mut config.paths.vocab, a.vocab);
            set(&mut config.data.classes, a.classes);
            set(&mut config.data.keyword_ratio, a.keyword_ratio);
            config.validate()?;
            let r = cmd_prepare(&config)?;
            println!("documents {}, examples {}, skipped {}", r.documents, r.examples, r.skipped);
        }
        Command::Train(a) => {
            set(&mut config.paths.dataset, a.dataset);
            set(&mut config.paths.vocab, a.vocab);
            set(&mut config.paths.checkpoint_dir, a.checkpoint_dir);
            set(&mut config.paths.metrics, a.metrics);
            set(&mut config.train.epochs, a.epochs);
            config.validate()?;
            let r = cmd_train(&config, a.resume.as_deref())?;
            println!("{} steps over {} epochs, checkpoint {}", r.steps, r.epochs_run, r.final_checkpoint.display());
        }
        Command::Generate(a) => {
            config.paths.checkpoint = a.checkpoint.or(config.paths.checkpoint);
            set(&mut config.paths.vocab, a.vocab);
            set(&mut config.paths.summaries, a.out);
            set(&mut config.decode.temperature, a.temperature);
            set(&mut config.decode.top_p, a.top_p);
            set(&mut config.decode.top_k, a.top_k);
            set(&mut config.decode.max_new_tokens, a.max_new_tokens);
            set(&mut config.data.classes, a.classes);
            set(&mut config.data.keyword_ratio, a.keyword_ratio);
            config.decode.greedy |= a.greedy;
            config.validate()?;
            let inputs = match (a.input, a.keywords) {
                (Some(path), _) => {
                    require_file(&path, "input")?;
                    read_jsonl(&path)?
                }
                (None, Some(k)) => vec![GenerateInput {
                    id: "0".into(),
                    keywords: Some(KeywordField::Text(k)),
                    body: None,
                }],
                (None, None) => return Err(Error::config("generate needs --input or --keywords")),
            };
            let records = cmd_generate(&config, &inputs)?;
            println!("{} summaries written to {}", records.len(), config.paths.summaries.display());
        }
        Command::Extract(a) => {
            set(&mut config.paths.corpus, a.input);
            set(&mut config.paths.extracts, a.out);
            set(&mut config.extract.ratio, a.ratio);
            set(&mut config.extract.mode, a.mode);
            set(&mut config.extract.distance, a.distance);
            set(&mut config.extract.encoder, a.encoder);
            config.extract.embeddings = a.embeddings.or(config.extract.embeddings);
            config.validate()?;
            let records = cmd_extract(&config, a.field)?;
            println!("{} extracts written to {}", records.len(), config.paths.extracts.display());
        }
        Command::Rouge(a) => {
            set(&mut config.paths.scores, a.out);
            let variants = parse_variants(&a.variant)?;
            let scores = cmd_rouge(&variants, &a.candidates, &a.references, &config.paths.scores)?;
            for s in scores {
                println!("{}: P {:.4} R {:.4} F {:.4}", s.variant, s.mean.precision, s.mean.recall, s.mean.f);
            }
        }
        Command::Experiment(a) => {
            config.paths.checkpoint = a.checkpoint.or(config.paths.checkpoint);
            set(&mut config.paths.vocab, a.vocab);
            set(&mut config.paths.corpus, a.corpus);
            set(&mut config.paths.experiment, a.out);
            config.validate()?;
            let rows = cmd_experiment(&config)?;
            println!("{} grid rows written to {}", rows.len(), config.paths.experiment.display());
        }
        Command::Attn(a) => {
            config.paths.checkpoint = a.checkpoint.or(config.paths.checkpoint);
            set(&mut config.paths.vocab, a.vocab);
            set(&mut config.paths.attention, a.out);
            let map = cmd_attn(&config, &a.keywords, &a.summary, a.layer, a.head)?;
            println!("{0}×{0} attention written to {1}", map.labels.len(), config.paths.attention.display());
        }
    }
    Ok(())
}
