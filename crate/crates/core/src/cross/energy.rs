use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::EmbeddingOutputs;
use crate::tensor::{l2, Tensor};

/// `‖h_cls‖ / ‖H₋‖_F` per example, where `H₋` stacks the unmasked rows
/// after position 0 of a `[B, n, d]` context tensor. `mask` is `[B*n]`.
pub fn cls_energy_weight(context: &Tensor, mask: &[u8]) -> Result<Vec<f64>> {
    cls_energy_lenient(context, mask)?
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            e.ok_or_else(|| {
                Error::degenerate(
                    "cls_energy_weight",
                    format!("example {i} has no nonzero non-CLS token rows"),
                )
            })
        })
        .collect()
}

/// Like [`cls_energy_weight`] but yields `None` for degenerate examples.
pub fn cls_energy_lenient(context: &Tensor, mask: &[u8]) -> Result<Vec<Option<f64>>> {
    let &[b, n, d] = context.shape() else {
        return Err(Error::Dimension {
            op: "cls_energy_weight",
            lhs: context.shape().to_vec(),
            rhs: vec![mask.len()],
        });
    };
    if mask.len() != b * n {
        return Err(Error::Dimension {
            op: "cls_energy_weight",
            lhs: context.shape().to_vec(),
            rhs: vec![mask.len()],
        });
    }
    let vals = context.values();
    Ok((0..b)
        .map(|i| {
            let row = |t: usize| &vals[(i * n + t) * d..][..d];
            let rest: f64 = (1..n)
                .filter(|&t| mask[i * n + t] == 1)
                .map(|t| row(t).iter().map(|x| x * x).sum::<f64>())
                .sum();
            (rest > 0.0).then(|| l2(row(0)) / rest.sqrt())
        })
        .collect())
}

/// Per-layer E_CLS averaged over the batch.
pub fn mean_cls_energy(outputs: &EmbeddingOutputs, batch: &Batch) -> Result<Vec<f64>> {
    outputs
        .per_layer_context
        .iter()
        .map(|ctx| {
            let e = cls_energy_weight(ctx, batch.mask())?;
            Ok(e.iter().sum::<f64>() / e.len() as f64)
        })
        .collect()
}
