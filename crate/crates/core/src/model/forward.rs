//! Forward pass with the activations backpropagation needs, and the
//! hand-derived backward pass.

use super::tensor::{
    add_assign, dot, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward,
    Matrix,
};
use super::{mc_position, Model, ModelParams};
use crate::error::Result;
use crate::tokenizer::{TokenId, PAD};

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[seq_len × vocab_size]` pre-softmax scores.
    pub lm_logits: Matrix,
    pub mc_logit: f64,
    /// Final-normed hidden states, `[seq_len × d_model]`.
    pub hidden: Matrix,
    /// `[layer][head]` → `[seq_len × seq_len]` attention weights.
    pub attentions: Option<Vec<Vec<Matrix>>>,
}

#[derive(Debug, Clone)]
struct LayerTrace {
    ln1_xhat: Vec<f64>,
    ln1_rstd: Vec<f64>,
    normed1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `[head][query][key]`, zero where the key is not visible.
    probs: Vec<f64>,
    ctx: Vec<f64>,
    ln2_xhat: Vec<f64>,
    ln2_rstd: Vec<f64>,
    normed2: Vec<f64>,
    pre_act: Vec<f64>,
    act: Vec<f64>,
}

/// Activations of one forward pass over a single row.
#[derive(Debug, Clone)]
pub struct Trace {
    tokens: Vec<TokenId>,
    layers: Vec<LayerTrace>,
    lnf_xhat: Vec<f64>,
    lnf_rstd: Vec<f64>,
    hidden: Vec<f64>,
    mc_pos: usize,
    d_model: usize,
    n_heads: usize,
}

/// Key `j` is visible to query `i` when it is not in the future and not
/// padding; a query always sees itself so every softmax row is non-empty.
fn visible(tokens: &[TokenId], i: usize, j: usize) -> bool {
    j <= i && (j == i || tokens[j] != PAD)
}

impl Trace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn mc_position(&self) -> usize {
        self.mc_pos
    }

    pub fn hidden(&self) -> Matrix {
        Matrix::from_vec(self.len(), self.d_model, self.hidden.clone())
    }

    pub fn lm_logits(&self, params: &ModelParams) -> Matrix {
        let (t, v) = (self.len(), params.tok_emb.rows);
        let mut out = Matrix::zeros(t, v);
        for i in 0..t {
            out.row_mut(i).copy_from_slice(&self.logits_at(params, i));
        }
        out
    }

    /// Next-token scores at position `i` only.
    pub fn logits_at(&self, params: &ModelParams, i: usize) -> Vec<f64> {
        let emb = &params.tok_emb;
        let h = &self.hidden[i * self.d_model..(i + 1) * self.d_model];
        (0..emb.rows).map(|tok| dot(h, emb.row(tok))).collect()
    }

    pub fn mc_logit(&self, params: &ModelParams) -> f64 {
        let h = &self.hidden[self.mc_pos * self.d_model..(self.mc_pos + 1) * self.d_model];
        dot(h, &params.mc_w.data) + params.mc_b.data[0]
    }

    pub fn attention(&self, layer: usize, head: usize) -> Matrix {
        let t = self.len();
        let start = head * t * t;
        Matrix::from_vec(t, t, self.layers[layer].probs[start..start + t * t].to_vec())
    }
}

impl Model {
    pub fn trace(&self, row: &[TokenId]) -> Result<Trace> {
        self.check_row(row)?;
        let c = &self.config;
        let p = &self.params;
        let (t, d, nh) = (row.len(), c.d_model, c.n_heads);
        let dh = c.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let mut x = vec![0.0; t * d];
        for (i, &tok) in row.iter().enumerate() {
            let xi = &mut x[i * d..(i + 1) * d];
            xi.copy_from_slice(p.tok_emb.row(tok));
            add_assign(xi, p.pos_emb.row(i));
        }

        let mut layers = Vec::with_capacity(c.n_layers);
        for lp in &p.layers {
            let (normed1, ln1_xhat, ln1_rstd) = layer_norm(&x, t, &lp.ln1_g.data, &lp.ln1_b.data);
            let q = linear(&normed1, t, &lp.w_q, &lp.b_q.data);
            let k = linear(&normed1, t, &lp.w_k, &lp.b_k.data);
            let v = linear(&normed1, t, &lp.w_v, &lp.b_v.data);

            let mut probs = vec![0.0; nh * t * t];
            let mut ctx = vec![0.0; t * d];
            for h in 0..nh {
                let hs = h * dh..(h + 1) * dh;
                for i in 0..t {
                    let qi = &q[i * d..][hs.clone()];
                    let prow = &mut probs[(h * t + i) * t..(h * t + i + 1) * t];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..=i {
                        if visible(row, i, j) {
                            let s = dot(qi, &k[j * d..][hs.clone()]) * scale;
                            prow[j] = s;
                            max = max.max(s);
                        }
                    }
                    let mut sum = 0.0;
                    for j in 0..=i {
                        if visible(row, i, j) {
                            prow[j] = (prow[j] - max).exp();
                            sum += prow[j];
                        }
                    }
                    let ci = &mut ctx[i * d..][hs.clone()];
                    for j in 0..=i {
                        if visible(row, i, j) {
                            prow[j] /= sum;
                            let pj = prow[j];
                            for (cv, &vv) in ci.iter_mut().zip(&v[j * d..][hs.clone()]) {
                                *cv += pj * vv;
                            }
                        }
                    }
                }
            }
            let attn_out = linear(&ctx, t, &lp.w_o, &lp.b_o.data);
            add_assign(&mut x, &attn_out);

            let (normed2, ln2_xhat, ln2_rstd) = layer_norm(&x, t, &lp.ln2_g.data, &lp.ln2_b.data);
            let pre_act = linear(&normed2, t, &lp.w_ff1, &lp.b_ff1.data);
            let act: Vec<f64> = pre_act.iter().map(|&u| gelu(u)).collect();
            let ff_out = linear(&act, t, &lp.w_ff2, &lp.b_ff2.data);
            add_assign(&mut x, &ff_out);

            layers.push(LayerTrace {
                ln1_xhat,
                ln1_rstd,
                normed1,
                q,
                k,
                v,
                probs,
                ctx,
                ln2_xhat,
                ln2_rstd,
                normed2,
                pre_act,
                act,
            });
        }

        let (hidden, lnf_xhat, lnf_rstd) = layer_norm(&x, t, &p.lnf_g.data, &p.lnf_b.data);
        Ok(Trace {
            tokens: row.to_vec(),
            layers,
            lnf_xhat,
            lnf_rstd,
            hidden,
            mc_pos: mc_position(row),
            d_model: d,
            n_heads: nh,
        })
    }

    pub fn forward(&self, row: &[TokenId], want_attention: bool) -> Result<ForwardOutput> {
        let trace = self.trace(row)?;
        let attentions = want_attention.then(|| {
            (0..self.config.n_layers)
                .map(|l| (0..self.config.n_heads).map(|h| trace.attention(l, h)).collect())
                .collect()
        });
        Ok(ForwardOutput {
            lm_logits: trace.lm_logits(&self.params),
            mc_logit: trace.mc_logit(&self.params),
            hidden: trace.hidden(),
            attentions,
        })
    }

    /// Backpropagates `d loss / d lm_logits` (row-major `[seq_len × vocab]`,
    /// optional) and `d loss / d mc_logit` into `grads`.
    pub fn backward(
        &self,
        trace: &Trace,
        dlogits: Option<&[f64]>,
        dmc: f64,
        grads: &mut ModelParams,
    ) {
        let p = &self.params;
        let (t, d, nh) = (trace.len(), trace.d_model, trace.n_heads);
        let dh = d / nh;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut dhidden = vec![0.0; t * d];
        if let Some(dl) = dlogits {
            let v = p.tok_emb.rows;
            for i in 0..t {
                let hi = &trace.hidden[i * d..(i + 1) * d];
                let dhi = &mut dhidden[i * d..(i + 1) * d];
                for (tok, &g) in dl[i * v..(i + 1) * v].iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    for (dv, &e) in dhi.iter_mut().zip(p.tok_emb.row(tok)) {
                        *dv += g * e;
                    }
                    for (de, &h) in grads.tok_emb.row_mut(tok).iter_mut().zip(hi) {
                        *de += g * h;
                    }
                }
            }
        }
        if dmc != 0.0 {
            let m = trace.mc_pos;
            let hm = &trace.hidden[m * d..(m + 1) * d];
            for j in 0..d {
                dhidden[m * d + j] += dmc * p.mc_w.data[j];
                grads.mc_w.data[j] += dmc * hm[j];
            }
            grads.mc_b.data[0] += dmc;
        }

        let mut dx = layer_norm_backward(
            &dhidden,
            &trace.lnf_xhat,
            &trace.lnf_rstd,
            &p.lnf_g.data,
            &mut grads.lnf_g.data,
            &mut grads.lnf_b.data,
        );

        for (l, lt) in trace.layers.iter().enumerate().rev() {
            let lp = &p.layers[l];
            let lg = &mut grads.layers[l];

            // x += FF(LN2(x))
            let dact = linear_backward(&lt.act, &dx, t, &lp.w_ff2, &mut lg.w_ff2, &mut lg.b_ff2.data);
            let dpre: Vec<f64> = dact
                .iter()
                .zip(&lt.pre_act)
                .map(|(g, &u)| g * gelu_grad(u))
                .collect();
            let dnormed2 =
                linear_backward(&lt.normed2, &dpre, t, &lp.w_ff1, &mut lg.w_ff1, &mut lg.b_ff1.data);
            let dln2 = layer_norm_backward(
                &dnormed2,
                &lt.ln2_xhat,
                &lt.ln2_rstd,
                &lp.ln2_g.data,
                &mut lg.ln2_g.data,
                &mut lg.ln2_b.data,
            );
            add_assign(&mut dx, &dln2);

            // x += Attn(LN1(x))
            let dctx = linear_backward(&lt.ctx, &dx, t, &lp.w_o, &mut lg.w_o, &mut lg.b_o.data);
            let mut dq = vec![0.0; t * d];
            let mut dk = vec![0.0; t * d];
            let mut dv = vec![0.0; t * d];
            let mut dp = vec![0.0; t];
            for h in 0..nh {
                let hs = h * dh..(h + 1) * dh;
                for i in 0..t {
                    let prow = &lt.probs[(h * t + i) * t..(h * t + i + 1) * t];
                    let dci = &dctx[i * d..][hs.clone()];
                    let mut weighted = 0.0;
                    for j in 0..=i {
                        if prow[j] == 0.0 {
                            dp[j] = 0.0;
                            continue;
                        }
                        dp[j] = dot(dci, &lt.v[j * d..][hs.clone()]);
                        weighted += prow[j] * dp[j];
                        for (g, &c) in dv[j * d..][hs.clone()].iter_mut().zip(dci) {
                            *g += prow[j] * c;
                        }
                    }
                    for j in 0..=i {
                        if prow[j] == 0.0 {
                            continue;
                        }
                        let ds = prow[j] * (dp[j] - weighted) * scale;
                        for e in hs.clone() {
                            dq[i * d + e] += ds * lt.k[j * d + e];
                            dk[j * d + e] += ds * lt.q[i * d + e];
                        }
                    }
                }
            }
            let mut dnormed1 =
                linear_backward(&lt.normed1, &dq, t, &lp.w_q, &mut lg.w_q, &mut lg.b_q.data);
            add_assign(
                &mut dnormed1,
                &linear_backward(&lt.normed1, &dk, t, &lp.w_k, &mut lg.w_k, &mut lg.b_k.data),
            );
            add_assign(
                &mut dnormed1,
                &linear_backward(&lt.normed1, &dv, t, &lp.w_v, &mut lg.w_v, &mut lg.b_v.data),
            );
            let dln1 = layer_norm_backward(
                &dnormed1,
                &lt.ln1_xhat,
                &lt.ln1_rstd,
                &lp.ln1_g.data,
                &mut lg.ln1_g.data,
                &mut lg.ln1_b.data,
            );
            add_assign(&mut dx, &dln1);
        }

        for (i, &tok) in trace.tokens.iter().enumerate() {
            let dxi = &dx[i * d..(i + 1) * d];
            add_assign(grads.tok_emb.row_mut(tok), dxi);
            add_assign(grads.pos_emb.row_mut(i), dxi);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::ModelConfig;
    use super::*;
    use crate::tokenizer::{BOS, EOS, SUM};

    fn model() -> Model {
        Model::init(ModelConfig {
            vocab_size: 12,
            max_len: 10,
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_ff: 12,
            seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn shapes() {
        let m = model();
        for len in 1..=10 {
            let row: Vec<TokenId> = (0..len).map(|i| 6 + i % 6).collect();
            let out = m.forward(&row, true).unwrap();
            assert_eq!((out.lm_logits.rows, out.lm_logits.cols), (len, 12));
            assert_eq!((out.hidden.rows, out.hidden.cols), (len, 8));
            let att = out.attentions.unwrap();
            assert_eq!((att.len(), att[0].len()), (2, 2));
            assert_eq!(att[1][1].rows, len);
        }
    }

    #[test]
    fn single_token_attends_to_itself() {
        let out = model().forward(&[7], true).unwrap();
        for layer in out.attentions.unwrap() {
            for head in layer {
                assert_eq!(head.data, [1.0]);
            }
        }
    }

    #[test]
    fn attention_rows_are_causal_distributions() {
        let row = [BOS, 7, 8, SUM, 9, 10, EOS, PAD, PAD];
        let out = model().forward(&row, true).unwrap();
        for layer in out.attentions.unwrap() {
            for head in layer {
                for i in 0..row.len() {
                    let r = head.row(i);
                    assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(r[i + 1..].iter().all(|&w| w == 0.0));
                    for j in 0..i {
                        if row[j] == PAD {
                            assert_eq!(r[j], 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn trailing_padding_does_not_change_content_positions() {
        let m = model();
        let row = [BOS, 7, SUM, 9, EOS, PAD, PAD, PAD];
        let full = m.forward(&row, false).unwrap();
        let trimmed = m.forward(&row[..5], false).unwrap();
        assert_eq!(full.mc_logit, trimmed.mc_logit);
        assert_eq!(&full.lm_logits.data[..5 * 12], &trimmed.lm_logits.data[..]);
    }

    #[test]
    fn rejects_bad_rows() {
        let m = model();
        assert!(m.forward(&[], false).is_err());
        assert!(m.forward(&[12], false).is_err());
        assert!(m.forward(&[6; 11], false).is_err());
    }
}
