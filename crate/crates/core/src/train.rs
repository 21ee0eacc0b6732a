//! Multi-loss fine-tuning: LM and MC cross-entropies combined with fixed
//! weights, a per-epoch linear LR decay, gradient accumulation, and Adam.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::MultipleChoiceExample;
use crate::error::{Error, Result};
use crate::model::tensor::{log_sum_exp, softmax_in_place};
use crate::model::{trim_padding, AdamState, Matrix, Model, ModelParams, TrainingProgress};
use crate::tokenizer::{TokenId, MASK};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub epochs: usize,
    pub lm_weight: f64,
    pub mc_weight: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_init: 3e-5,
            batch_size: 1,
            grad_accum_steps: 5,
            epochs: 5,
            lm_weight: 2.0,
            mc_weight: 1.0,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_init > 0.0) {
            return Err(Error::config("lr_init must be positive"));
        }
        if self.batch_size == 0 || self.grad_accum_steps == 0 {
            return Err(Error::config("batch_size and grad_accum_steps must be at least 1"));
        }
        if !(self.lm_weight >= 0.0 && self.mc_weight >= 0.0) {
            return Err(Error::config("loss weights must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub lm_loss: f64,
    pub mc_loss: f64,
    pub total_loss: f64,
    pub perplexity: f64,
    pub lr: f64,
}

/// Mean cross-entropy over positions whose label is not `MASK`.
pub fn lm_loss(lm_logits: &Matrix, lm_labels: &[TokenId]) -> Result<f64> {
    lm_loss_and_grad(lm_logits, lm_labels, false).map(|(l, _)| l)
}

fn lm_loss_and_grad(
    lm_logits: &Matrix,
    lm_labels: &[TokenId],
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if lm_labels.len() != lm_logits.rows {
        return Err(Error::input(format!(
            "{} labels for {} logit rows",
            lm_labels.len(),
            lm_logits.rows
        )));
    }
    let targets: Vec<(usize, TokenId)> = lm_labels
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, l)| l != MASK)
        .collect();
    if targets.is_empty() {
        return Err(Error::NoLmTargets);
    }
    let n = targets.len() as f64;
    let mut grad = want_grad.then(|| vec![0.0; lm_logits.len()]);
    let mut total = 0.0;
    for &(i, label) in &targets {
        let row = lm_logits.row(i);
        if label >= row.len() {
            return Err(Error::UnknownId(label));
        }
        total += log_sum_exp(row) - row[label];
        if let Some(g) = grad.as_mut() {
            let gi = &mut g[i * lm_logits.cols..(i + 1) * lm_logits.cols];
            gi.copy_from_slice(row);
            softmax_in_place(gi);
            gi[label] -= 1.0;
            for v in gi.iter_mut() {
                *v /= n;
            }
        }
    }
    Ok((total / n, grad))
}

/// Softmax cross-entropy of the choice scores against the gold index.
pub fn mc_loss(scores: &[f64], mc_label: usize) -> f64 {
    log_sum_exp(scores) - scores[mc_label]
}

fn mc_loss_grad(scores: &[f64], mc_label: usize) -> Vec<f64> {
    let mut g = scores.to_vec();
    softmax_in_place(&mut g);
    g[mc_label] -= 1.0;
    g
}

pub fn total_loss(lm: f64, mc: f64, config: &TrainConfig) -> f64 {
    config.lm_weight * lm + config.mc_weight * mc
}

/// Linear decay from `lr_init` at each epoch's first step down to
/// `lr_init / steps_per_epoch` at its last, restarting every epoch.
pub fn lr_at(step: u64, steps_per_epoch: u64, config: &TrainConfig) -> f64 {
    let spe = steps_per_epoch.max(1);
    config.lr_init * (1.0 - (step % spe) as f64 / spe as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleLoss {
    pub lm: f64,
    pub mc: f64,
    pub total: f64,
    /// Whether the highest-scoring row is the gold row.
    pub mc_correct: bool,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_example(model: &Model, ex: &MultipleChoiceExample) -> Result<()> {
    if ex.rows.is_empty() || ex.mc_label >= ex.rows.len() {
        return Err(Error::input(format!("example {} has no valid gold row", ex.id)));
    }
    if ex.lm_labels.len() != ex.rows[ex.mc_label].len() {
        return Err(Error::input(format!("example {}: labels not aligned with rows", ex.id)));
    }
    if ex.lm_labels.len() > model.config.max_len {
        return Err(Error::input(format!(
            "example {} rows are longer than the model context",
            ex.id
        )));
    }
    Ok(())
}

/// Forward-only losses of one example.
pub fn example_loss(model: &Model, ex: &MultipleChoiceExample, config: &TrainConfig) -> Result<ExampleLoss> {
    check_example(model, ex)?;
    let mut scores = Vec::with_capacity(ex.rows.len());
    let mut lm = 0.0;
    for (r, row) in ex.rows.iter().enumerate() {
        let row = trim_padding(row);
        let trace = model.trace(row)?;
        if r == ex.mc_label {
            lm = lm_loss(&trace.lm_logits(&model.params), &ex.lm_labels[..row.len()])?;
        }
        scores.push(trace.mc_logit(&model.params));
    }
    let mc = mc_loss(&scores, ex.mc_label);
    Ok(ExampleLoss {
        lm,
        mc,
        total: total_loss(lm, mc, config),
        mc_correct: argmax(&scores) == ex.mc_label,
    })
}

/// Adds `scale · ∇ total_loss` for one example into `grads`.
pub fn example_gradient(
    model: &Model,
    ex: &MultipleChoiceExample,
    config: &TrainConfig,
    grads: &mut ModelParams,
    scale: f64,
) -> Result<ExampleLoss> {
    check_example(model, ex)?;
    let traces = ex
        .rows
        .iter()
        .map(|row| model.trace(trim_padding(row)))
        .collect::<Result<Vec<_>>>()?;
    let gold = &traces[ex.mc_label];
    let logits = gold.lm_logits(&model.params);
    let (lm, dlogits) = lm_loss_and_grad(&logits, &ex.lm_labels[..gold.len()], true)?;
    let mut dlogits = dlogits.expect("gradient requested");
    for v in &mut dlogits {
        *v *= config.lm_weight * scale;
    }

    let scores: Vec<f64> = traces.iter().map(|t| t.mc_logit(&model.params)).collect();
    let mc = mc_loss(&scores, ex.mc_label);
    let dscores = mc_loss_grad(&scores, ex.mc_label);

    for (r, trace) in traces.iter().enumerate() {
        let dl = (r == ex.mc_label).then_some(dlogits.as_slice());
        model.backward(trace, dl, dscores[r] * config.mc_weight * scale, grads);
    }
    Ok(ExampleLoss {
        lm,
        mc,
        total: total_loss(lm, mc, config),
        mc_correct: argmax(&scores) == ex.mc_label,
    })
}

/// Mean-reduced gradient of a batch, and the per-example losses.
pub fn batch_gradient(
    model: &Model,
    batch: &[MultipleChoiceExample],
    config: &TrainConfig,
) -> Result<(ModelParams, Vec<ExampleLoss>)> {
    let mut grads = model.params.zeros_like();
    let scale = 1.0 / batch.len() as f64;
    let losses = batch
        .iter()
        .map(|ex| example_gradient(model, ex, config, &mut grads, scale))
        .collect::<Result<_>>()?;
    Ok((grads, losses))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamState,
}

impl Adam {
    pub fn new(params: &ModelParams, config: &TrainConfig) -> Self {
        Self {
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            state: AdamState {
                m: params.zeros_like(),
                v: params.zeros_like(),
                t: 0,
            },
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        self.state.t += 1;
        let t = self.state.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let AdamState { m, v, .. } = &mut self.state;
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(m.tensors_mut())
            .zip(v.tensors_mut())
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Sums step gradients until an update is due, then hands out their mean.
#[derive(Debug, Clone)]
pub struct GradientAccumulator {
    sum: ModelParams,
    count: usize,
}

impl GradientAccumulator {
    pub fn new(like: &ModelParams) -> Self {
        Self {
            sum: like.zeros_like(),
            count: 0,
        }
    }

    pub fn add(&mut self, grads: &ModelParams) {
        self.sum.add_scaled(grads, 1.0);
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Mean of the accumulated gradients; resets the accumulator.
    pub fn take_mean(&mut self) -> Option<ModelParams> {
        if self.count == 0 {
            return None;
        }
        let mut mean = self.sum.clone();
        mean.scale(1.0 / self.count as f64);
        self.sum.fill(0.0);
        self.count = 0;
        Some(mean)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub lm_loss: f64,
    pub mc_loss: f64,
    pub mc_accuracy: f64,
}

/// Mean losses and MC accuracy over `data` without updating anything.
pub fn evaluate(model: &Model, data: &[MultipleChoiceExample], config: &TrainConfig) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::input("empty dataset"));
    }
    let mut lm = 0.0;
    let mut mc = 0.0;
    let mut correct = 0usize;
    for ex in data {
        let l = example_loss(model, ex, config)?;
        lm += l.lm;
        mc += l.mc;
        correct += usize::from(l.mc_correct);
    }
    let n = data.len() as f64;
    Ok(EvalReport {
        lm_loss: lm / n,
        mc_loss: mc / n,
        mc_accuracy: correct as f64 / n,
    })
}

/// Training state that survives across epochs and checkpoints.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub optimizer: Adam,
    pub progress: TrainingProgress,
    /// Number of optimiser updates applied by this trainer.
    pub updates: u64,
    accum: GradientAccumulator,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Adam::new(&model.params, &config);
        let accum = GradientAccumulator::new(&model.params);
        Ok(Self {
            model,
            config,
            optimizer,
            progress: TrainingProgress::default(),
            updates: 0,
            accum,
        })
    }

    /// Continues from saved progress and (if present) optimiser moments.
    pub fn resume(
        model: Model,
        config: TrainConfig,
        progress: TrainingProgress,
        state: Option<AdamState>,
    ) -> Result<Self> {
        let mut trainer = Self::new(model, config)?;
        trainer.progress = progress;
        if let Some(state) = state {
            trainer.optimizer.state = state;
        }
        Ok(trainer)
    }

    pub fn steps_per_epoch(&self, n_examples: usize) -> u64 {
        n_examples.div_ceil(self.config.batch_size) as u64
    }

    fn epoch_order(&self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let seed = self
            .config
            .seed
            .wrapping_add(self.progress.epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order
    }

    fn apply_update(&mut self, lr: f64) {
        if let Some(mean) = self.accum.take_mean() {
            self.optimizer.step(&mut self.model.params, &mean, lr);
            self.updates += 1;
        }
    }

    /// One pass over `data`; every step's metrics go to `sink`.
    pub fn run_epoch(
        &mut self,
        data: &[MultipleChoiceExample],
        sink: &mut dyn FnMut(&StepMetrics) -> Result<()>,
    ) -> Result<Vec<StepMetrics>> {
        if data.is_empty() {
            return Err(Error::input("empty dataset"));
        }
        let spe = self.steps_per_epoch(data.len());
        let order = self.epoch_order(data.len());
        let mut metrics = Vec::with_capacity(spe as usize);
        let mut lr = self.config.lr_init;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<MultipleChoiceExample> = chunk.iter().map(|&i| data[i].clone()).collect();
            let step_index = self.progress.step;
            let (grads, losses) = batch_gradient(&self.model, &batch, &self.config)?;
            let n = losses.len() as f64;
            let lm = losses.iter().map(|l| l.lm).sum::<f64>() / n;
            let mc = losses.iter().map(|l| l.mc).sum::<f64>() / n;
            let total = total_loss(lm, mc, &self.config);
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: step_index as usize + 1,
                });
            }
            lr = lr_at(step_index, spe, &self.config);
            let m = StepMetrics {
                step: step_index + 1,
                lm_loss: lm,
                mc_loss: mc,
                total_loss: total,
                perplexity: lm.exp(),
                lr,
            };
            sink(&m)?;
            metrics.push(m);

            self.accum.add(&grads);
            self.progress.step += 1;
            if self.accum.count() == self.config.grad_accum_steps {
                self.apply_update(lr);
            }
        }
        // A trailing partial accumulation is applied so every epoch ends on
        // a complete parameter state.
        self.apply_update(lr);
        self.progress.epoch += 1;
        Ok(metrics)
    }
}

/// Trains for `config.epochs` epochs and returns the final model and every
/// step's metrics.
pub fn train(
    model: Model,
    data: &[MultipleChoiceExample],
    config: TrainConfig,
    sink: &mut dyn FnMut(&StepMetrics) -> Result<()>,
) -> Result<(Model, Vec<StepMetrics>)> {
    let mut trainer = Trainer::new(model, config)?;
    let mut all = Vec::new();
    for _ in 0..config.epochs {
        all.extend(trainer.run_epoch(data, sink)?);
    }
    Ok((trainer.model, all))
}

pub const METRICS_HEADER: [&str; 6] = ["step", "lm_loss", "mc_loss", "total_loss", "perplexity", "lr"];

/// Metrics CSV: `step,lm_loss,mc_loss,total_loss,perplexity,lr`.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W, write_header: bool) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        if write_header {
            inner.write_record(METRICS_HEADER)?;
        }
        Ok(Self { inner })
    }

    pub fn write(&mut self, m: &StepMetrics) -> Result<()> {
        self.inner.serialize(m)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io("<metrics>", e))
    }
}

pub fn read_metrics<R: std::io::Read>(input: R) -> Result<Vec<StepMetrics>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in reader.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}
