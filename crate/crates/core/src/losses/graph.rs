use super::{LossConfig, LossMask, LossReport};
use crate::cross::TwinTrace;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var, EPS_NORM};

fn batch_rows(g: &Graph, op: &'static str, h: Var, h_pos: Var) -> Result<usize> {
    let (a, b) = (g.shape(h), g.shape(h_pos));
    if a.len() != 2 || a != b {
        return Err(Error::Dimension {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    if a[0] == 0 {
        return Err(Error::contract(op, "empty batch"));
    }
    Ok(a[0])
}

/// Batch-mean InfoNCE with cosine similarity: row `i` of `h` is scored
/// against every row of `h_pos`, with the positive on the diagonal.
pub fn info_nce(g: &mut Graph, h: Var, h_pos: Var, tau: f64) -> Result<Var> {
    batch_rows(g, "info_nce", h, h_pos)?;
    let a = g.normalize_rows(h)?;
    let b = g.normalize_rows(h_pos)?;
    let bt = g.transpose(b)?;
    let sim = g.matmul(a, bt)?;
    let logits = g.scale(sim, 1.0 / tau);
    let lse = g.logsumexp_rows(logits);
    let pos = g.diagonal(logits)?;
    let per_row = g.sub(lse, pos)?;
    Ok(g.mean(per_row))
}

/// Value-level [`info_nce`].
pub fn info_nce_value(h: &Tensor, h_pos: &Tensor, tau: f64) -> Result<f64> {
    let mut g = Graph::new();
    let a = g.constant(h.clone());
    let b = g.constant(h_pos.clone());
    let loss = info_nce(&mut g, a, b, tau)?;
    Ok(g.value(loss).item())
}

/// Per-row modulus constraint `[B]`. The difference norm is offset by its
/// floor so identical rows give exactly 0 while gradients stay finite.
pub fn tmc_rows(g: &mut Graph, h: Var, h_pos: Var) -> Result<Var> {
    let b = batch_rows(g, "tmc", h, h_pos)?;
    let diff = g.sub(h, h_pos)?;
    let dn = g.row_norms(diff);
    let floor = g.constant(Tensor::filled(&[b], EPS_NORM.sqrt()));
    let num = g.sub(dn, floor)?;
    let na = g.row_norms(h);
    let nb = g.row_norms(h_pos);
    let den = g.add(na, nb)?;
    g.div(num, den)
}

/// Batch mean of `−log(clamp(cos(h_I^L, h_II^L), ε, 1)) · TMC(h^P, h^{P+})`.
pub fn tmc_amended(
    g: &mut Graph,
    pooler: Var,
    pooler_pos: Var,
    cls_i: Var,
    cls_ii: Var,
    eps: f64,
) -> Result<Var> {
    let rows = batch_rows(g, "tmc_amended", pooler, pooler_pos)?;
    if batch_rows(g, "tmc_amended", cls_i, cls_ii)? != rows {
        return Err(Error::Dimension {
            op: "tmc_amended",
            lhs: g.shape(pooler).to_vec(),
            rhs: g.shape(cls_i).to_vec(),
        });
    }
    let a = g.normalize_rows(cls_i)?;
    let b = g.normalize_rows(cls_ii)?;
    let prod = g.mul(a, b)?;
    let cos = g.sum_rows(prod);
    let clamped = g.clamp(cos, eps, 1.0);
    let log = g.log(clamped)?;
    let coef = g.scale(log, -1.0);
    let tmc = tmc_rows(g, pooler, pooler_pos)?;
    let per_row = g.mul(coef, tmc)?;
    Ok(g.mean(per_row))
}

/// Symmetrized cross-tower modulus constraint on pooler outputs.
#[allow(clippy::too_many_arguments)]
pub fn ictm(
    g: &mut Graph,
    pooler_i: Var,
    pooler_i_pos: Var,
    pooler_ii: Var,
    pooler_ii_pos: Var,
    cls_i: Var,
    cls_ii: Var,
    eps: f64,
) -> Result<Var> {
    let a = tmc_amended(g, pooler_i, pooler_ii_pos, cls_i, cls_ii, eps)?;
    let b = tmc_amended(g, pooler_ii, pooler_i_pos, cls_i, cls_ii, eps)?;
    g.add(a, b)
}

/// Cross-tower InfoNCE over CLS poolings and cross-branch outputs; the
/// gate `r` picks which tower anchors.
pub fn icnce(
    g: &mut Graph,
    cls_i: Var,
    cls_ii: Var,
    c_i: Var,
    c_ii: Var,
    tau: f64,
    r: bool,
) -> Result<Var> {
    let (x, y, cx, cy) = if r {
        (cls_i, cls_ii, c_i, c_ii)
    } else {
        (cls_ii, cls_i, c_ii, c_i)
    };
    let a = info_nce(g, x, y, tau)?;
    let b = info_nce(g, cx, cy, tau)?;
    g.add(a, b)
}

/// Handles of the itemized objective. Disabled terms are `None`.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub nce_i: Option<Var>,
    pub nce_ii: Option<Var>,
    pub icnce: Option<Var>,
    pub ictm: Option<Var>,
}

impl LossTerms {
    pub fn report(&self, g: &Graph) -> LossReport {
        let val = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).item());
        LossReport {
            l_nce_i: val(self.nce_i),
            l_nce_ii: val(self.nce_ii),
            l_icnce: val(self.icnce),
            l_ictm: val(self.ictm),
            total: g.value(self.total).item(),
            has_grad: false,
        }
    }
}

/// The composite objective over two twin passes. Pass one must carry the
/// cross branch when ICNCE is enabled; the modulus coefficient and ICNCE
/// use pass-one CLS poolings.
pub fn jtcse_loss(
    g: &mut Graph,
    pass1: &TwinTrace,
    pass2: &TwinTrace,
    cfg: &LossConfig,
    mask: LossMask,
    r: bool,
) -> Result<LossTerms> {
    if mask.is_empty() {
        return Err(Error::Config("loss mask selects no terms".into()));
    }
    let (cls_i, cls_ii) = (pass1.tower_i.cls, pass1.tower_ii.cls);
    let mut parts = Vec::new();
    let (mut nce_i, mut nce_ii, mut icnce_v, mut ictm_v) = (None, None, None, None);
    if mask.nce {
        let a = info_nce(g, cls_i, pass2.tower_i.cls, cfg.tau)?;
        let b = info_nce(g, cls_ii, pass2.tower_ii.cls, cfg.tau)?;
        nce_i = Some(a);
        nce_ii = Some(b);
        parts.extend([a, b]);
    }
    if mask.icnce {
        let cross = pass1.cross.as_ref().ok_or_else(|| {
            Error::contract("jtcse_loss", "ICNCE needs the cross branch on pass one")
        })?;
        let v = icnce(g, cls_i, cls_ii, cross.c_i, cross.c_ii, cfg.tau, r)?;
        icnce_v = Some(v);
        parts.push(v);
    }
    if mask.ictm {
        let v = ictm(
            g,
            pass1.tower_i.pooler,
            pass2.tower_i.pooler,
            pass1.tower_ii.pooler,
            pass2.tower_ii.pooler,
            cls_i,
            cls_ii,
            cfg.sim_clamp_eps,
        )?;
        ictm_v = Some(v);
        parts.push(v);
    }
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = g.add(total, p)?;
    }
    Ok(LossTerms {
        total,
        nce_i,
        nce_ii,
        icnce: icnce_v,
        ictm: ictm_v,
    })
}
