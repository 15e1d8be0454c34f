use super::encoder::{encode, encoder_layer, Dropout, EncoderTrace};
use super::weights::{EncoderWeights, LayerWeights};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};
use crate::tensor::{Graph, Tensor};

/// Per-pass products of one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingOutputs {
    /// `[B, n, d]`
    pub last_hidden: Tensor,
    /// `[B, d]`, row 0 of `last_hidden` per example.
    pub cls_pool: Tensor,
    /// `[B, d]`, `tanh(cls_pool · W + b)`.
    pub pooler_out: Tensor,
    /// Output of every layer, `[B, n, d]` each.
    pub layer_hidden: Vec<Tensor>,
    /// Output-projected context tensor of every layer, `[B, n, d]` each.
    pub per_layer_context: Vec<Tensor>,
    /// Pre-dropout attention of every layer, `[B, h, n, n]` each.
    pub attention: Vec<Tensor>,
}

impl EncoderTrace {
    /// Materializes the traced values.
    pub fn outputs(&self, g: &Graph) -> Result<EmbeddingOutputs> {
        let d = g.value(self.cls).cols();
        let cube = [self.batch_size, self.seq_len, d];
        let shaped = |v| g.value(v).clone().reshape(&cube);
        Ok(EmbeddingOutputs {
            last_hidden: shaped(self.last_hidden())?,
            cls_pool: g.value(self.cls).clone(),
            pooler_out: g.value(self.pooler).clone(),
            layer_hidden: self
                .layers
                .iter()
                .map(|l| shaped(l.output))
                .collect::<Result<_>>()?,
            per_layer_context: self
                .layers
                .iter()
                .map(|l| shaped(l.context))
                .collect::<Result<_>>()?,
            attention: self
                .layers
                .iter()
                .map(|l| g.value(l.attention).clone())
                .collect(),
        })
    }
}

/// Single-encoder forward. With `dropout_on` the masks come from the
/// generator seeded by `seed`; otherwise dropout is the identity.
pub fn forward(
    weights: &EncoderWeights,
    batch: &Batch,
    seed: u64,
    dropout_on: bool,
) -> Result<EmbeddingOutputs> {
    let mut g = Graph::new();
    let vars = weights.bind(&mut g, false);
    let mut dropout = if dropout_on {
        Dropout::new(
            weights.config.dropout_p,
            stream_rng(seed, &[stream::PRIMITIVE]),
        )
    } else {
        Dropout::off()
    };
    encode(&mut g, &vars, batch, &mut dropout)?.outputs(&g)
}

/// Attention `SA: [B, h, n, n]` and projected context `CT: [B, n, d]` of
/// one layer applied to `hd_prev: [B, n, d]` (no dropout).
pub fn self_attention(
    layer: &LayerWeights,
    n_heads: usize,
    hd_prev: &Tensor,
    batch: &Batch,
) -> Result<(Tensor, Tensor)> {
    let shape = hd_prev.shape().to_vec();
    let [b, n, d] = shape[..] else {
        return Err(Error::Dimension {
            op: "self_attention",
            lhs: shape,
            rhs: vec![batch.batch_size(), batch.seq_len()],
        });
    };
    if b != batch.batch_size() || n != batch.seq_len() {
        return Err(Error::Dimension {
            op: "self_attention",
            lhs: shape,
            rhs: vec![batch.batch_size(), batch.seq_len()],
        });
    }
    let mut g = Graph::new();
    let x = g.constant(hd_prev.clone().reshape(&[b * n, d])?);
    let lv = layer.bind(&mut g, false);
    let trace = encoder_layer(
        &mut g,
        &lv,
        n_heads,
        x,
        b,
        &batch.key_bias(),
        &mut Dropout::off(),
    )?;
    Ok((
        g.value(trace.attention).clone(),
        g.value(trace.context).clone().reshape(&[b, n, d])?,
    ))
}

/// The four sentence-embedding readouts compared by the pooling harness.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingVariants {
    pub cls: Tensor,
    pub avg: Tensor,
    pub avg_first_last: Tensor,
    pub pooler: Tensor,
}

/// Mask-weighted token mean of a `[B, n, d]` tensor.
pub fn masked_mean(hidden: &Tensor, batch: &Batch) -> Result<Tensor> {
    let (b, n) = (batch.batch_size(), batch.seq_len());
    let d = hidden.cols();
    if hidden.shape() != [b, n, d] {
        return Err(Error::Dimension {
            op: "masked_mean",
            lhs: hidden.shape().to_vec(),
            rhs: vec![b, n, d],
        });
    }
    let mut out = Tensor::zeros(&[b, d]);
    let vals = hidden.values();
    for (i, row) in out.values_mut().chunks_mut(d).enumerate() {
        let mask = batch.row_mask(i);
        let count = mask.iter().filter(|&&m| m == 1).count().max(1) as f64;
        for (j, &m) in mask.iter().enumerate() {
            if m == 1 {
                for (o, &v) in row.iter_mut().zip(&vals[(i * n + j) * d..][..d]) {
                    *o += v;
                }
            }
        }
        row.iter_mut().for_each(|o| *o /= count);
    }
    Ok(out)
}

/// CLS, masked average, first/last-layer average, and pooler readouts.
/// "First" is the output of the first encoder layer.
pub fn pooling_variants(outputs: &EmbeddingOutputs, batch: &Batch) -> Result<PoolingVariants> {
    let avg = masked_mean(&outputs.last_hidden, batch)?;
    let first = outputs.layer_hidden.first().unwrap_or(&outputs.last_hidden);
    let first_avg = masked_mean(first, batch)?;
    let avg_first_last = Tensor::new(
        avg.shape().to_vec(),
        avg.values()
            .iter()
            .zip(first_avg.values())
            .map(|(a, f)| 0.5 * (a + f))
            .collect(),
    )?;
    Ok(PoolingVariants {
        cls: outputs.cls_pool.clone(),
        avg,
        avg_first_last,
        pooler: outputs.pooler_out.clone(),
    })
}
