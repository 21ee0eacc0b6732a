//! GPT-style causal decoder with a tied language-model head and a
//! multiple-choice head.
//!
//! Blocks are pre-norm: `x + Attn(LN(x))` followed by `x + FF(LN(x))`, with a
//! final layer norm before both heads. The LM head reuses the token embedding
//! matrix; the MC head is a `d_model → 1` linear layer with bias applied to the
//! final-normed hidden state of the row's EOS position.

mod checkpoint;
mod forward;
pub mod tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, Vocab, EOS, PAD};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, AdamState, Checkpoint,
    TrainingProgress, CHECKPOINT_MAGIC,
};
pub use forward::{ForwardOutput, Trace};
pub use tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// Desk-scale defaults: 2 layers, 2 heads, 64-wide, 128-token context.
    fn default() -> Self {
        Self {
            vocab_size: 512,
            max_len: 128,
            n_layers: 2,
            n_heads: 2,
            d_model: 64,
            d_ff: 256,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// The distilled GPT-2 geometry: 6 layers, 12 heads, 768 wide, 1024 context.
    pub fn distil_gpt2(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            max_len: 1024,
            n_layers: 6,
            n_heads: 12,
            d_model: 768,
            d_ff: 3072,
            seed: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("model {name} must be positive")));
        }
        if self.max_len < 8 {
            return Err(Error::config(format!("max_len must be at least 8, got {}", self.max_len)));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Matrix,
    pub ln1_b: Matrix,
    pub w_q: Matrix,
    pub b_q: Matrix,
    pub w_k: Matrix,
    pub b_k: Matrix,
    pub w_v: Matrix,
    pub b_v: Matrix,
    pub w_o: Matrix,
    pub b_o: Matrix,
    pub ln2_g: Matrix,
    pub ln2_b: Matrix,
    pub w_ff1: Matrix,
    pub b_ff1: Matrix,
    pub w_ff2: Matrix,
    pub b_ff2: Matrix,
}

/// All learnable tensors. The same structure doubles as a gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tok_emb: Matrix,
    pub pos_emb: Matrix,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Matrix,
    pub lnf_b: Matrix,
    pub mc_w: Matrix,
    pub mc_b: Matrix,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zero,
    One,
}

impl LayerParams {
    fn shaped(c: &ModelConfig) -> [(&'static str, usize, usize, Init); 16] {
        let (d, f) = (c.d_model, c.d_ff);
        [
            ("ln1.g", 1, d, Init::One),
            ("ln1.b", 1, d, Init::Zero),
            ("attn.q.w", d, d, Init::Normal),
            ("attn.q.b", 1, d, Init::Zero),
            ("attn.k.w", d, d, Init::Normal),
            ("attn.k.b", 1, d, Init::Zero),
            ("attn.v.w", d, d, Init::Normal),
            ("attn.v.b", 1, d, Init::Zero),
            ("attn.o.w", d, d, Init::Normal),
            ("attn.o.b", 1, d, Init::Zero),
            ("ln2.g", 1, d, Init::One),
            ("ln2.b", 1, d, Init::Zero),
            ("ff.1.w", d, f, Init::Normal),
            ("ff.1.b", 1, f, Init::Zero),
            ("ff.2.w", f, d, Init::Normal),
            ("ff.2.b", 1, d, Init::Zero),
        ]
    }

    fn tensors(&self) -> [&Matrix; 16] {
        [
            &self.ln1_g, &self.ln1_b, &self.w_q, &self.b_q, &self.w_k, &self.b_k, &self.w_v,
            &self.b_v, &self.w_o, &self.b_o, &self.ln2_g, &self.ln2_b, &self.w_ff1, &self.b_ff1,
            &self.w_ff2, &self.b_ff2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix; 16] {
        [
            &mut self.ln1_g, &mut self.ln1_b, &mut self.w_q, &mut self.b_q, &mut self.w_k,
            &mut self.b_k, &mut self.w_v, &mut self.b_v, &mut self.w_o, &mut self.b_o,
            &mut self.ln2_g, &mut self.ln2_b, &mut self.w_ff1, &mut self.b_ff1, &mut self.w_ff2,
            &mut self.b_ff2,
        ]
    }

    fn from_tensors(mut t: Vec<Matrix>) -> Self {
        assert_eq!(t.len(), 16);
        let mut next = || t.remove(0);
        Self {
            ln1_g: next(),
            ln1_b: next(),
            w_q: next(),
            b_q: next(),
            w_k: next(),
            b_k: next(),
            w_v: next(),
            b_v: next(),
            w_o: next(),
            b_o: next(),
            ln2_g: next(),
            ln2_b: next(),
            w_ff1: next(),
            b_ff1: next(),
            w_ff2: next(),
            b_ff2: next(),
        }
    }
}

impl ModelParams {
    /// Tensor names and shapes in canonical (checkpoint) order.
    fn layout(c: &ModelConfig) -> Vec<(String, usize, usize, Init)> {
        let d = c.d_model;
        let mut out = vec![
            ("tok_emb".to_string(), c.vocab_size, d, Init::Normal),
            ("pos_emb".to_string(), c.max_len, d, Init::Normal),
        ];
        for l in 0..c.n_layers {
            for (name, r, k, init) in LayerParams::shaped(c) {
                out.push((format!("h{l}.{name}"), r, k, init));
            }
        }
        out.extend([
            ("lnf.g".to_string(), 1, d, Init::One),
            ("lnf.b".to_string(), 1, d, Init::Zero),
            ("mc.w".to_string(), d, 1, Init::Normal),
            ("mc.b".to_string(), 1, 1, Init::Zero),
        ]);
        out
    }

    fn from_tensors(config: &ModelConfig, tensors: Vec<Matrix>) -> Self {
        let mut it = tensors.into_iter();
        let tok_emb = it.next().unwrap();
        let pos_emb = it.next().unwrap();
        let layers = (0..config.n_layers)
            .map(|_| LayerParams::from_tensors(it.by_ref().take(16).collect()))
            .collect();
        let mut rest = || it.next().unwrap();
        Self {
            tok_emb,
            pos_emb,
            layers,
            lnf_g: rest(),
            lnf_b: rest(),
            mc_w: rest(),
            mc_b: rest(),
        }
    }

    /// Seeded N(0, 0.02²) weights, zero biases, unit layer-norm gains.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let tensors = Self::layout(config)
            .into_iter()
            .map(|(_, r, c, init)| match init {
                Init::Zero => Matrix::zeros(r, c),
                Init::One => Matrix::filled(r, c, 1.0),
                Init::Normal => {
                    Matrix::from_vec(r, c, (0..r * c).map(|_| normal.sample(&mut rng)).collect())
                }
            })
            .collect();
        Ok(Self::from_tensors(config, tensors))
    }

    /// All-zero tensors of the same shapes, for gradient accumulation.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    pub fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.tok_emb, &self.pos_emb];
        for layer in &self.layers {
            out.extend(layer.tensors());
        }
        out.extend([&self.lnf_g, &self.lnf_b, &self.mc_w, &self.mc_b]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.extend([&mut self.lnf_g, &mut self.lnf_b, &mut self.mc_w, &mut self.mc_b]);
        out
    }

    pub fn names(config: &ModelConfig) -> Vec<String> {
        Self::layout(config).into_iter().map(|(n, ..)| n).collect()
    }

    pub fn named<'a>(&'a self, config: &ModelConfig) -> Vec<(String, &'a Matrix)> {
        Self::names(config).into_iter().zip(self.tensors()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.data.iter_mut().zip(&src.data) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for v in &mut t.data {
                *v *= factor;
            }
        }
    }

    fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        for ((name, r, c, _), t) in Self::layout(config).iter().zip(self.tensors()) {
            if t.rows != *r || t.cols != *c {
                return Err(Error::config(format!(
                    "tensor {name} has shape {}x{}, expected {r}x{c}",
                    t.rows, t.cols
                )));
            }
        }
        Ok(())
    }
}

/// Attention weights of one head with the tokens labelling both axes.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub labels: Vec<String>,
    pub weights: Matrix,
}

impl AttentionMap {
    /// CSV with a header row and a header column of token labels.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![String::new()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (i, label) in self.labels.iter().enumerate() {
            let mut record = vec![label.clone()];
            record.extend(self.weights.row(i).iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<attention csv>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn init(config: ModelConfig) -> Result<Self> {
        Ok(Self {
            params: ModelParams::init(&config)?,
            config,
        })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }

    pub(crate) fn check_row(&self, row: &[TokenId]) -> Result<()> {
        if row.is_empty() {
            return Err(Error::input("empty row"));
        }
        if row.len() > self.config.max_len {
            return Err(Error::input(format!(
                "row of {} tokens exceeds max_len {}",
                row.len(),
                self.config.max_len
            )));
        }
        if let Some(&bad) = row.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::UnknownId(bad));
        }
        Ok(())
    }

    /// One MC score per row, in row order.
    pub fn mc_scores(&self, rows: &[Vec<TokenId>]) -> Result<Vec<f64>> {
        rows.iter()
            .map(|row| Ok(self.trace(trim_padding(row))?.mc_logit(&self.params)))
            .collect()
    }

    /// Lower-triangular attention of one head over the non-pad tokens of `row`.
    pub fn export_attention(
        &self,
        row: &[TokenId],
        layer: usize,
        head: usize,
        vocab: &Vocab,
    ) -> Result<AttentionMap> {
        if layer >= self.config.n_layers {
            return Err(Error::OutOfRange(format!(
                "layer {layer} (model has {})",
                self.config.n_layers
            )));
        }
        if head >= self.config.n_heads {
            return Err(Error::OutOfRange(format!(
                "head {head} (model has {})",
                self.config.n_heads
            )));
        }
        let out = self.forward(row, true)?;
        let full = &out.attentions.as_ref().expect("requested attention")[layer][head];
        let keep: Vec<usize> = (0..row.len()).filter(|&i| row[i] != PAD).collect();
        let mut weights = Matrix::zeros(keep.len(), keep.len());
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                weights.data[a * keep.len() + b] = full.get(i, j);
            }
        }
        let labels = keep
            .iter()
            .map(|&i| vocab.token(row[i]).map(str::to_string).ok_or(Error::UnknownId(row[i])))
            .collect::<Result<_>>()?;
        Ok(AttentionMap { labels, weights })
    }
}

/// Position the MC head reads: the first EOS, else the last non-pad token.
pub fn mc_position(row: &[TokenId]) -> usize {
    row.iter()
        .position(|&t| t == EOS)
        .or_else(|| row.iter().rposition(|&t| t != PAD))
        .unwrap_or(0)
}

/// `row` without its trailing padding (at least one token is kept).
pub fn trim_padding(row: &[TokenId]) -> &[TokenId] {
    let end = row.iter().rposition(|&t| t != PAD).map_or(1, |i| i + 1);
    &row[..end.min(row.len())]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 20,
            max_len: 16,
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            seed: 3,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelParams::init(&tiny()).unwrap();
        let b = ModelParams::init(&tiny()).unwrap();
        assert_eq!(a, b);
        let c = ModelParams::init(&ModelConfig { seed: 4, ..tiny() }).unwrap();
        assert_ne!(a.tok_emb, c.tok_emb);
    }

    #[test]
    fn init_values() {
        let p = ModelParams::init(&tiny()).unwrap();
        for l in &p.layers {
            assert!(l.ln1_g.data.iter().all(|&g| g == 1.0));
            assert!(l.ln2_g.data.iter().all(|&g| g == 1.0));
            assert!(l.b_q.data.iter().all(|&b| b == 0.0));
        }
        assert!(p.lnf_g.data.iter().all(|&g| g == 1.0));
        assert_eq!(p.mc_b.data, [0.0]);
        let n = p.tok_emb.len() as f64;
        let mean = p.tok_emb.data.iter().sum::<f64>() / n;
        let std = (p.tok_emb.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.01 && (std - 0.02).abs() < 0.005, "mean {mean} std {std}");
    }

    #[test]
    fn names_match_tensors() {
        let c = tiny();
        let p = ModelParams::init(&c).unwrap();
        let names = ModelParams::names(&c);
        assert_eq!(names.len(), p.tensors().len());
        assert_eq!(names[0], "tok_emb");
        assert_eq!(names[2], "h0.ln1.g");
        assert_eq!(names.last().unwrap(), "mc.b");
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
    }

    #[test]
    fn config_validation() {
        assert!(tiny().validate().is_ok());
        assert!(ModelConfig { d_model: 9, ..tiny() }.validate().is_err());
        assert!(ModelConfig { max_len: 7, ..tiny() }.validate().is_err());
        assert!(ModelConfig { n_layers: 0, ..tiny() }.validate().is_err());
        assert!(ModelConfig::distil_gpt2(50257).validate().is_ok());
        assert!(ModelConfig::default().validate().is_ok());
    }

    #[test]
    fn mc_position_falls_back_to_last_token() {
        assert_eq!(mc_position(&[0, 7, 3, 9, EOS, PAD, PAD]), 4);
        assert_eq!(mc_position(&[0, 7, 3, 9, 9]), 4);
        assert_eq!(mc_position(&[0, 7, PAD, PAD]), 1);
        assert_eq!(trim_padding(&[0, 7, PAD, PAD]), &[0, 7]);
    }
}
