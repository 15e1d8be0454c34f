//! Twin encoders joined by cross-attention encoder layers (CAELs).
//!
//! At each CAEL position `j` a tower reuses its own attention
//! probabilities but applies them to the other tower's value projection.
//! The result goes through the tower's own O-projection, residual, FFN and
//! layer norms. The cross branch reads the primitive streams and never
//! feeds back into them, and it draws its dropout masks from separate
//! generators, so primitive outputs are identical with or without it.

mod energy;

pub use energy::{cls_energy_lenient, cls_energy_weight, mean_cls_energy};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{
    cls_rows, encode, post_attention, Dropout, EmbeddingOutputs, EncoderConfig, EncoderTrace,
    EncoderVars, EncoderWeights,
};
use crate::rng::{derive, stream, stream_rng};
use crate::tensor::{Graph, Tensor, Var};

/// Layers (1-based) that host a CAEL: every `i` in `1..=n_layers` with
/// `i % k == 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaelPlacement {
    pub k: usize,
    pub positions: Vec<usize>,
}

pub fn cael_positions(n_layers: usize, k: usize) -> Result<CaelPlacement> {
    if k == 0 || k > n_layers {
        return Err(Error::Config(format!(
            "CAEL interval k = {k} must lie in [1, {n_layers}]"
        )));
    }
    Ok(CaelPlacement {
        k,
        positions: (1..=n_layers).filter(|i| i % k == 0).collect(),
    })
}

impl CaelPlacement {
    pub fn contains(&self, layer: usize) -> bool {
        self.positions.binary_search(&layer).is_ok()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tower {
    I,
    II,
}

impl Tower {
    pub fn index(self) -> u64 {
        match self {
            Tower::I => 0,
            Tower::II => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tower::I => "I",
            Tower::II => "II",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinModel {
    pub encoder_i: EncoderWeights,
    pub encoder_ii: EncoderWeights,
    pub placement: CaelPlacement,
}

impl TwinModel {
    pub fn new(encoder_i: EncoderWeights, encoder_ii: EncoderWeights, k: usize) -> Result<Self> {
        if encoder_i.config != encoder_ii.config {
            return Err(Error::Config(format!(
                "twin towers must share one config: {:?} vs {:?}",
                encoder_i.config, encoder_ii.config
            )));
        }
        let placement = cael_positions(encoder_i.config.n_layers, k)?;
        Ok(TwinModel {
            encoder_i,
            encoder_ii,
            placement,
        })
    }

    /// Both towers initialized from distinct seeds derived from `seed`.
    pub fn init(cfg: &EncoderConfig, k: usize, seed: u64) -> Result<Self> {
        let a = EncoderWeights::init(cfg, derive(seed, &[stream::INIT, 0]))?;
        let b = EncoderWeights::init(cfg, derive(seed, &[stream::INIT, 1]))?;
        TwinModel::new(a, b, k)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.encoder_i.config
    }

    pub fn tower(&self, t: Tower) -> &EncoderWeights {
        match t {
            Tower::I => &self.encoder_i,
            Tower::II => &self.encoder_ii,
        }
    }
}

/// Which stochastic parts of a twin pass are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TwinMode {
    pub dropout: bool,
    pub cross: bool,
}

impl TwinMode {
    pub const TRAIN: TwinMode = TwinMode {
        dropout: true,
        cross: true,
    };
    pub const INFERENCE: TwinMode = TwinMode {
        dropout: false,
        cross: false,
    };
}

/// Dropout generators for one twin pass. Primitive and cross streams of
/// each tower are independent.
pub fn pass_dropouts(p: f64, seed: u64, mode: TwinMode) -> [Dropout; 4] {
    let make = |consumer: u64, tower: Tower| {
        if mode.dropout {
            Dropout::new(p, stream_rng(seed, &[consumer, tower.index()]))
        } else {
            Dropout::off()
        }
    };
    [
        make(stream::PRIMITIVE, Tower::I),
        make(stream::PRIMITIVE, Tower::II),
        make(stream::CROSS, Tower::I),
        make(stream::CROSS, Tower::II),
    ]
}

/// Graph handles of the cross branch.
#[derive(Debug, Clone)]
pub struct CrossTrace {
    /// Cross hidden state `[B*n x d]` per CAEL, tower I.
    pub hidden_i: Vec<Var>,
    pub hidden_ii: Vec<Var>,
    /// CLS rows `[B x d]` of the last CAEL.
    pub c_i: Var,
    pub c_ii: Var,
}

#[derive(Debug, Clone)]
pub struct TwinTrace {
    pub tower_i: EncoderTrace,
    pub tower_ii: EncoderTrace,
    pub cross: Option<CrossTrace>,
}

/// Cross-attention context `SA_self · V_other`, heads concatenated and
/// projected with the attending tower's O weights. `layer` is 1-based.
pub fn cross_context(
    g: &mut Graph,
    placement: &CaelPlacement,
    layer: usize,
    vars_self: &EncoderVars,
    attention_self: Var,
    value_other: Var,
) -> Result<Var> {
    if !placement.contains(layer) {
        return Err(Error::contract(
            "cross_context",
            format!(
                "layer {layer} is not a CAEL position {:?}",
                placement.positions
            ),
        ));
    }
    let lv = &vars_self.layers[layer - 1];
    let heads = g.attention_apply(attention_self, value_other)?;
    g.linear(heads, lv.wo, lv.bo)
}

/// Runs both primitive streams, then the cross branch at every CAEL when
/// `cross` is supplied.
pub fn twin_encode(
    g: &mut Graph,
    placement: &CaelPlacement,
    vars: [&EncoderVars; 2],
    batch: &Batch,
    primitive: [&mut Dropout; 2],
    cross: Option<[&mut Dropout; 2]>,
) -> Result<TwinTrace> {
    let [drop_i, drop_ii] = primitive;
    let tower_i = encode(g, vars[0], batch, drop_i)?;
    let tower_ii = encode(g, vars[1], batch, drop_ii)?;
    let Some([cross_i, cross_ii]) = cross else {
        return Ok(TwinTrace {
            tower_i,
            tower_ii,
            cross: None,
        });
    };
    let traces = [&tower_i, &tower_ii];
    let mut hidden: [Vec<Var>; 2] = [Vec::new(), Vec::new()];
    let mut drops = [cross_i, cross_ii];
    for &j in &placement.positions {
        for (n, drop) in drops.iter_mut().enumerate() {
            let own = &traces[n].layers[j - 1];
            let other = &traces[1 - n].layers[j - 1];
            let lv = &vars[n].layers[j - 1];
            let heads = g.attention_apply(own.attention_used, other.value)?;
            let (_, out) = post_attention(g, lv, own.input, heads, drop)?;
            hidden[n].push(out);
        }
    }
    let rows = cls_rows(batch.batch_size(), batch.seq_len());
    let last = |h: &Vec<Var>| *h.last().expect("placement is nonempty");
    let c_i = g.gather_rows(last(&hidden[0]), &rows)?;
    let c_ii = g.gather_rows(last(&hidden[1]), &rows)?;
    let [hidden_i, hidden_ii] = hidden;
    Ok(TwinTrace {
        tower_i,
        tower_ii,
        cross: Some(CrossTrace {
            hidden_i,
            hidden_ii,
            c_i,
            c_ii,
        }),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossOutputs {
    /// Cross hidden state `[B, n, d]` per CAEL, tower I.
    pub hidden_i: Vec<Tensor>,
    pub hidden_ii: Vec<Tensor>,
    /// `[B, d]`
    pub c_i: Tensor,
    pub c_ii: Tensor,
}

impl CrossTrace {
    pub fn outputs(&self, g: &Graph, batch: &Batch) -> Result<CrossOutputs> {
        let d = g.value(self.c_i).cols();
        let cube = [batch.batch_size(), batch.seq_len(), d];
        let shaped = |vs: &Vec<Var>| -> Result<Vec<Tensor>> {
            vs.iter()
                .map(|&v| g.value(v).clone().reshape(&cube))
                .collect()
        };
        Ok(CrossOutputs {
            hidden_i: shaped(&self.hidden_i)?,
            hidden_ii: shaped(&self.hidden_ii)?,
            c_i: g.value(self.c_i).clone(),
            c_ii: g.value(self.c_ii).clone(),
        })
    }
}

/// Value-level twin pass. `seed` selects this pass's dropout masks.
pub fn twin_forward(
    model: &TwinModel,
    batch: &Batch,
    seed: u64,
    mode: TwinMode,
) -> Result<(EmbeddingOutputs, EmbeddingOutputs, Option<CrossOutputs>)> {
    let mut g = Graph::new();
    let vi = model.encoder_i.bind(&mut g, false);
    let vii = model.encoder_ii.bind(&mut g, false);
    let [mut pi, mut pii, mut ci, mut cii] = pass_dropouts(model.config().dropout_p, seed, mode);
    let cross = mode.cross.then_some([&mut ci, &mut cii]);
    let trace = twin_encode(
        &mut g,
        &model.placement,
        [&vi, &vii],
        batch,
        [&mut pi, &mut pii],
        cross,
    )?;
    let cross = trace
        .cross
        .as_ref()
        .map(|c| c.outputs(&g, batch))
        .transpose()?;
    Ok((
        trace.tower_i.outputs(&g)?,
        trace.tower_ii.outputs(&g)?,
        cross,
    ))
}
