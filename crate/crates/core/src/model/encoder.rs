use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{EncoderConfig, LAYER_NORM_EPS};
use super::weights::{EncoderWeights, LayerWeights};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Graph handles for one layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub ffn_in_w: Var,
    pub ffn_in_b: Var,
    pub ffn_out_w: Var,
    pub ffn_out_b: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
}

/// Graph handles for a whole encoder, in the order of
/// [`EncoderWeights::named_params`].
#[derive(Debug, Clone)]
pub struct EncoderVars {
    pub config: EncoderConfig,
    pub token_embeddings: Var,
    pub position_embeddings: Var,
    pub layers: Vec<LayerVars>,
    pub pooler_w: Var,
    pub pooler_b: Var,
}

impl EncoderVars {
    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![self.token_embeddings, self.position_embeddings];
        for l in &self.layers {
            out.extend([
                l.wq,
                l.bq,
                l.wk,
                l.bk,
                l.wv,
                l.bv,
                l.wo,
                l.bo,
                l.ln1_gain,
                l.ln1_bias,
                l.ffn_in_w,
                l.ffn_in_b,
                l.ffn_out_w,
                l.ffn_out_b,
                l.ln2_gain,
                l.ln2_bias,
            ]);
        }
        out.push(self.pooler_w);
        out.push(self.pooler_b);
        out
    }
}

impl LayerWeights {
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> LayerVars {
        let w = self;
        let mut leaf = |t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        LayerVars {
            wq: leaf(&w.wq),
            bq: leaf(&w.bq),
            wk: leaf(&w.wk),
            bk: leaf(&w.bk),
            wv: leaf(&w.wv),
            bv: leaf(&w.bv),
            wo: leaf(&w.wo),
            bo: leaf(&w.bo),
            ln1_gain: leaf(&w.ln1_gain),
            ln1_bias: leaf(&w.ln1_bias),
            ffn_in_w: leaf(&w.ffn_in_w),
            ffn_in_b: leaf(&w.ffn_in_b),
            ffn_out_w: leaf(&w.ffn_out_w),
            ffn_out_b: leaf(&w.ffn_out_b),
            ln2_gain: leaf(&w.ln2_gain),
            ln2_bias: leaf(&w.ln2_bias),
        }
    }
}

impl EncoderWeights {
    /// Copies the weights into `g` as trainable parameters or constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> EncoderVars {
        let leaf = |g: &mut Graph, t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let token_embeddings = leaf(g, &self.token_embeddings);
        let position_embeddings = leaf(g, &self.position_embeddings);
        let layers = self.layers.iter().map(|l| l.bind(g, trainable)).collect();
        let pooler_w = leaf(g, &self.pooler_w);
        let pooler_b = leaf(g, &self.pooler_b);
        EncoderVars {
            config: self.config,
            token_embeddings,
            position_embeddings,
            layers,
            pooler_w,
            pooler_b,
        }
    }

    /// Gradients of bound parameters, in `params_mut` order.
    pub fn collect_grads(g: &Graph, vars: &EncoderVars) -> Vec<Vec<f64>> {
        vars.all()
            .into_iter()
            .map(|v| match g.grad(v) {
                Some(gr) => gr.to_vec(),
                None => vec![0.0; g.value(v).len()],
            })
            .collect()
    }
}

/// Inverted dropout driven by a dedicated generator. A disabled source is
/// the identity and draws nothing.
#[derive(Debug, Clone)]
pub struct Dropout {
    p: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn off() -> Self {
        Dropout { p: 0.0, rng: None }
    }

    pub fn new(p: f64, rng: ChaCha8Rng) -> Self {
        if p == 0.0 {
            return Dropout::off();
        }
        Dropout { p, rng: Some(rng) }
    }

    pub fn is_on(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        let keep = 1.0 - self.p;
        let mask: Vec<f64> = (0..g.value(x).len())
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        g.mul_const(x, mask)
    }
}

/// Intermediate products of one encoder layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerTrace {
    /// Layer input `HD^{j-1}`, `[B*n x d]`.
    pub input: Var,
    /// Value projection of the input, `[B*n x d]`.
    pub value: Var,
    /// Softmax attention before dropout, `[B, h, n, n]`.
    pub attention: Var,
    /// Attention actually applied to values (after dropout).
    pub attention_used: Var,
    /// Output-projected context tensor, `[B*n x d]`.
    pub context: Var,
    /// Layer output `HD^j`, `[B*n x d]`.
    pub output: Var,
}

/// Handles produced by [`encode`].
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    pub batch_size: usize,
    pub seq_len: usize,
    pub embeddings: Var,
    pub layers: Vec<LayerTrace>,
    /// `[B x d]` CLS rows of the last layer.
    pub cls: Var,
    /// `[B x d]` tanh pooler output.
    pub pooler: Var,
}

impl EncoderTrace {
    pub fn last_hidden(&self) -> Var {
        self.layers.last().map_or(self.embeddings, |l| l.output)
    }
}

/// Row indices of position 0 for every example.
pub fn cls_rows(batch_size: usize, seq_len: usize) -> Vec<usize> {
    (0..batch_size).map(|b| b * seq_len).collect()
}

/// O-projection, residual, LN1, FFN, residual, LN2. Shared by the primitive
/// stream and the cross branch. Returns `(projected context, output)`.
pub fn post_attention(
    g: &mut Graph,
    lv: &LayerVars,
    residual: Var,
    heads_concat: Var,
    dropout: &mut Dropout,
) -> Result<(Var, Var)> {
    let context = g.linear(heads_concat, lv.wo, lv.bo)?;
    let dropped = dropout.apply(g, context)?;
    let sum1 = g.add(residual, dropped)?;
    let x = g.layer_norm(sum1, lv.ln1_gain, lv.ln1_bias, LAYER_NORM_EPS)?;
    let inner = g.linear(x, lv.ffn_in_w, lv.ffn_in_b)?;
    let act = g.gelu(inner);
    let ffn = g.linear(act, lv.ffn_out_w, lv.ffn_out_b)?;
    let ffn = dropout.apply(g, ffn)?;
    let sum2 = g.add(x, ffn)?;
    let out = g.layer_norm(sum2, lv.ln2_gain, lv.ln2_bias, LAYER_NORM_EPS)?;
    Ok((context, out))
}

/// One post-norm encoder layer over `x: [B*n x d]`.
pub fn encoder_layer(
    g: &mut Graph,
    lv: &LayerVars,
    n_heads: usize,
    x: Var,
    batch_size: usize,
    key_bias: &[f64],
    dropout: &mut Dropout,
) -> Result<LayerTrace> {
    let q = g.linear(x, lv.wq, lv.bq)?;
    let k = g.linear(x, lv.wk, lv.bk)?;
    let value = g.linear(x, lv.wv, lv.bv)?;
    let scores = g.attention_scores(q, k, batch_size, n_heads, key_bias)?;
    let attention = g.softmax_rows(scores);
    let attention_used = dropout.apply(g, attention)?;
    let heads = g.attention_apply(attention_used, value)?;
    let (context, output) = post_attention(g, lv, x, heads, dropout)?;
    Ok(LayerTrace {
        input: x,
        value,
        attention,
        attention_used,
        context,
        output,
    })
}

/// Token plus position embeddings for a batch, `[B*n x d]`.
pub fn embed(g: &mut Graph, vars: &EncoderVars, batch: &Batch) -> Result<Var> {
    let cfg = &vars.config;
    let n = batch.seq_len();
    if n > cfg.max_seq_len {
        return Err(Error::Data(format!(
            "sequence length {n} exceeds max_seq_len {}",
            cfg.max_seq_len
        )));
    }
    if let Some(&bad) = batch
        .ids()
        .iter()
        .find(|&&id| id as usize >= cfg.vocab_size)
    {
        return Err(Error::Data(format!(
            "token id {bad} out of range for vocab_size {}",
            cfg.vocab_size
        )));
    }
    let ids: Vec<usize> = batch.ids().iter().map(|&id| id as usize).collect();
    let positions: Vec<usize> = (0..batch.batch_size()).flat_map(|_| 0..n).collect();
    let tok = g.gather_rows(vars.token_embeddings, &ids)?;
    let pos = g.gather_rows(vars.position_embeddings, &positions)?;
    g.add(tok, pos)
}

/// Primitive encoder stream: embeddings, layers, CLS pooling and pooler.
pub fn encode(
    g: &mut Graph,
    vars: &EncoderVars,
    batch: &Batch,
    dropout: &mut Dropout,
) -> Result<EncoderTrace> {
    let (bsz, n) = (batch.batch_size(), batch.seq_len());
    let key_bias = batch.key_bias();
    let emb = embed(g, vars, batch)?;
    let embeddings = dropout.apply(g, emb)?;
    let mut x = embeddings;
    let mut layers = Vec::with_capacity(vars.layers.len());
    for lv in &vars.layers {
        let trace = encoder_layer(g, lv, vars.config.n_heads, x, bsz, &key_bias, dropout)?;
        x = trace.output;
        layers.push(trace);
    }
    let cls = g.gather_rows(x, &cls_rows(bsz, n))?;
    let pre = g.linear(cls, vars.pooler_w, vars.pooler_b)?;
    let pooler = g.tanh(pre);
    Ok(EncoderTrace {
        batch_size: bsz,
        seq_len: n,
        embeddings,
        layers,
        cls,
        pooler,
    })
}
