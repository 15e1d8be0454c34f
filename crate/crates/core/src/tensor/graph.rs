//! Define-by-run compute graph. Nodes are appended in construction order,
//! so the node list is already topologically sorted and `backward` simply
//! walks it in reverse.

use super::kernels::{matmul_nn, matmul_nt, matmul_tn, softmax_rows_inplace, transpose};
use super::Tensor;
use crate::error::{Error, Result};

/// Floor added under the square root of every differentiable norm so the
/// backward pass stays finite at the origin.
pub const EPS_NORM: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddRowBias(Var, Var),
    MulConst(Var, Vec<f64>),
    Tanh(Var),
    Gelu(Var),
    Relu(Var),
    Log(Var),
    Sqrt(Var),
    Exp(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    LogSumExpRows(Var),
    RowNorms(Var),
    Diagonal(Var),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    AttentionScores {
        q: Var,
        k: Var,
        dims: AttnDims,
        scale: f64,
    },
    AttentionApply {
        probs: Var,
        v: Var,
        dims: AttnDims,
    },
}

#[derive(Debug, Clone, Copy)]
struct AttnDims {
    batch: usize,
    seq: usize,
    heads: usize,
    head_dim: usize,
}

impl AttnDims {
    fn width(&self) -> usize {
        self.heads * self.head_dim
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf: receives a gradient on `backward`.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if `backward` has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.clear_grad();
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn vals(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.values()
    }

    fn derived(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = self.needs(inputs);
        let value = Tensor {
            shape,
            values,
            grad: None,
        };
        self.push(value, op, needs_grad)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let shape = self.shape(x).to_vec();
        let values = self.vals(x).iter().map(|&v| f(v)).collect();
        self.derived(shape, values, op, &[x])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(dim_err(op, s, &[0, 0])),
        }
    }

    // ---- linear algebra ------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(dim_err("matmul", self.shape(a), self.shape(b)));
        }
        let c = matmul_nn(self.vals(a), self.vals(b), m, k, n);
        Ok(self.derived(vec![m, n], c, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims("transpose", x)?;
        let t = transpose(self.vals(x), r, c);
        Ok(self.derived(vec![c, r], t, Op::Transpose(x), &[x]))
    }

    /// `x [m x n] + bias [n]` broadcast over rows. The only broadcast besides
    /// scalar scaling, and it is explicit.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).cols();
        if self.shape(bias) != [n] {
            return Err(dim_err("add_row_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.vals(bias).to_vec();
        let values = self
            .vals(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(&b).map(|(v, bb)| v + bb))
            .collect();
        let shape = self.shape(x).to_vec();
        Ok(self.derived(shape, values, Op::AddRowBias(x, bias), &[x, bias]))
    }

    /// `x · w + b` for `x [m x k]`, `w [k x n]`, `b [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row_bias(xw, b)
    }

    // ---- elementwise ---------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let values = self
            .vals(a)
            .iter()
            .zip(self.vals(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.derived(shape, values, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let values = self
            .vals(a)
            .iter()
            .zip(self.vals(b))
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.derived(shape, values, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let values = self
            .vals(a)
            .iter()
            .zip(self.vals(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.derived(shape, values, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        if self.vals(b).contains(&0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let values = self
            .vals(a)
            .iter()
            .zip(self.vals(b))
            .map(|(x, y)| x / y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.derived(shape, values, Op::Div(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| c * v, Op::Scale(x, c))
    }

    /// Elementwise product with a constant grid (dropout masks).
    pub fn mul_const(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(dim_err("mul_const", self.shape(x), &[mask.len()]));
        }
        let values = self.vals(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.derived(shape, values, Op::MulConst(x, mask), &[x]))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.vals(x).iter().find(|&&v| v <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("nonpositive input {bad}"),
            });
        }
        Ok(self.unary(x, f64::ln, Op::Log(x)))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.vals(x).iter().find(|&&v| v < 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("negative input {bad}"),
            });
        }
        Ok(self.unary(x, f64::sqrt, Op::Sqrt(x)))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    // ---- row-wise ------------------------------------------------------

    /// Softmax over the last axis, with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let n = self.value(x).cols();
        let mut values = self.vals(x).to_vec();
        softmax_rows_inplace(&mut values, n);
        let shape = self.shape(x).to_vec();
        self.derived(shape, values, Op::SoftmaxRows(x), &[x])
    }

    /// Layer normalization over the last axis (population variance).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let d = self.value(x).cols();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(dim_err("layer_norm", self.shape(x), self.shape(gain)));
        }
        if eps <= 0.0 {
            return Err(Error::contract("layer_norm", "eps must be positive"));
        }
        let rows = self.value(x).rows();
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        let (g, b) = (self.vals(gain), self.vals(bias));
        for (r, row) in self.vals(x).chunks(d).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        };
        Ok(self.derived(shape, out, op, &[x, gain, bias]))
    }

    /// Sum over the last axis: `[.., n] -> [..]`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let n = self.value(x).cols();
        let values = self.vals(x).chunks(n).map(|r| r.iter().sum()).collect();
        let shape = self.row_reduced_shape(x);
        self.derived(shape, values, Op::SumRows(x), &[x])
    }

    /// `log Σ_j exp(x_ij)` over the last axis, computed stably.
    pub fn logsumexp_rows(&mut self, x: Var) -> Var {
        let n = self.value(x).cols();
        let values = self
            .vals(x)
            .chunks(n)
            .map(|r| {
                let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                m + r.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            })
            .collect();
        let shape = self.row_reduced_shape(x);
        self.derived(shape, values, Op::LogSumExpRows(x), &[x])
    }

    /// Euclidean norm of every row, `sqrt(Σ x² + EPS_NORM)`.
    pub fn row_norms(&mut self, x: Var) -> Var {
        let n = self.value(x).cols();
        let values = self
            .vals(x)
            .chunks(n)
            .map(|r| (r.iter().map(|v| v * v).sum::<f64>() + EPS_NORM).sqrt())
            .collect();
        let shape = self.row_reduced_shape(x);
        self.derived(shape, values, Op::RowNorms(x), &[x])
    }

    fn row_reduced_shape(&self, x: Var) -> Vec<usize> {
        let s = self.shape(x);
        s[..s.len().saturating_sub(1)].to_vec()
    }

    /// Divides every row by its (floored) norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = (self.value(x).rows(), self.value(x).cols());
        let norms = self.row_norms(x);
        let norms = self.reshape(norms, &[rows, 1])?;
        let ones = self.constant(Tensor::filled(&[1, cols], 1.0));
        let spread = self.matmul(norms, ones)?;
        let shape = self.shape(x).to_vec();
        let spread = self.reshape(spread, &shape)?;
        self.div(x, spread)
    }

    pub fn diagonal(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.matrix_dims("diagonal", x)?;
        if r != c {
            return Err(dim_err("diagonal", &[r, c], &[r, r]));
        }
        let values = (0..r).map(|i| self.vals(x)[i * c + i]).collect();
        Ok(self.derived(vec![r], values, Op::Diagonal(x), &[x]))
    }

    /// Picks rows of a `[rows x d]` matrix (embedding lookup, CLS selection).
    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Result<Var> {
        let (rows, d) = self.matrix_dims("gather_rows", table)?;
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::Data(format!(
                "row index {bad} out of range for table with {rows} rows"
            )));
        }
        let src = self.vals(table);
        let values = index
            .iter()
            .flat_map(|&i| src[i * d..(i + 1) * d].iter().copied())
            .collect();
        Ok(self.derived(
            vec![index.len(), d],
            values,
            Op::GatherRows(table, index.to_vec()),
            &[table],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(dim_err("reshape", self.shape(x), shape));
        }
        let values = self.vals(x).to_vec();
        Ok(self.derived(shape.to_vec(), values, Op::Reshape(x), &[x]))
    }

    // ---- reductions and norms -------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.vals(x).iter().sum();
        self.derived(Vec::new(), vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.vals(x).iter().sum::<f64>() / n;
        self.derived(Vec::new(), vec![s], Op::Mean(x), &[x])
    }

    /// `‖x‖₂` over all entries, floored.
    pub fn l2_norm(&mut self, x: Var) -> Result<Var> {
        let flat = self.reshape(x, &[1, self.value(x).len()])?;
        let n = self.row_norms(flat);
        self.reshape(n, &[])
    }

    /// Frobenius norm; identical to the flattened `l2_norm`.
    pub fn frobenius_norm(&mut self, x: Var) -> Result<Var> {
        self.l2_norm(x)
    }

    /// Cosine similarity of two same-shape tensors, with floored norms.
    pub fn cosine_sim(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("cosine_sim", a, b)?;
        let ab = self.mul(a, b)?;
        let dot = self.sum(ab);
        let na = self.l2_norm(a)?;
        let nb = self.l2_norm(b)?;
        let denom = self.mul(na, nb)?;
        self.div(dot, denom)
    }

    // ---- attention -----------------------------------------------------

    /// Scaled multi-head dot-product scores.
    ///
    /// `q`, `k` are `[batch*seq x heads*head_dim]`; the result is
    /// `[batch, heads, seq, seq]` with `key_bias[b*seq + j]` added to every
    /// score against key `j` of example `b`.
    pub fn attention_scores(
        &mut self,
        q: Var,
        k: Var,
        batch: usize,
        heads: usize,
        key_bias: &[f64],
    ) -> Result<Var> {
        self.same_shape("attention_scores", q, k)?;
        let (rows, width) = self.matrix_dims("attention_scores", q)?;
        if batch == 0 || rows % batch != 0 || width % heads != 0 || key_bias.len() != rows {
            return Err(dim_err("attention_scores", &[rows, width], &[batch, heads]));
        }
        let dims = AttnDims {
            batch,
            seq: rows / batch,
            heads,
            head_dim: width / heads,
        };
        let scale = 1.0 / (dims.head_dim as f64).sqrt();
        let (qv, kv) = (self.vals(q), self.vals(k));
        let (n, dh) = (dims.seq, dims.head_dim);
        let mut out = vec![0.0; batch * heads * n * n];
        for b in 0..batch {
            for h in 0..heads {
                for i in 0..n {
                    let qrow = &qv[(b * n + i) * width + h * dh..][..dh];
                    for j in 0..n {
                        let krow = &kv[(b * n + j) * width + h * dh..][..dh];
                        let s: f64 = qrow.iter().zip(krow).map(|(x, y)| x * y).sum();
                        out[((b * heads + h) * n + i) * n + j] = s * scale + key_bias[b * n + j];
                    }
                }
            }
        }
        Ok(self.derived(
            vec![batch, heads, n, n],
            out,
            Op::AttentionScores { q, k, dims, scale },
            &[q, k],
        ))
    }

    /// Weights value rows by attention probabilities and concatenates heads.
    ///
    /// `probs` is `[batch, heads, seq, seq]`, `v` is `[batch*seq x heads*head_dim]`.
    pub fn attention_apply(&mut self, probs: Var, v: Var) -> Result<Var> {
        let (rows, width) = self.matrix_dims("attention_apply", v)?;
        let (batch, heads, n) = match *self.shape(probs) {
            [b, h, n, n2] if n == n2 && b * n == rows && width % h == 0 => (b, h, n),
            ref s => return Err(dim_err("attention_apply", s, &[rows, width])),
        };
        let dims = AttnDims {
            batch,
            seq: n,
            heads,
            head_dim: width / heads,
        };
        let dh = dims.head_dim;
        let (pv, vv) = (self.vals(probs), self.vals(v));
        let mut out = vec![0.0; rows * width];
        for b in 0..batch {
            for h in 0..heads {
                for i in 0..n {
                    let o = &mut out[(b * n + i) * width + h * dh..][..dh];
                    for j in 0..n {
                        let p = pv[((b * heads + h) * n + i) * n + j];
                        if p == 0.0 {
                            continue;
                        }
                        let vrow = &vv[(b * n + j) * width + h * dh..][..dh];
                        for (oc, vc) in o.iter_mut().zip(vrow) {
                            *oc += p * vc;
                        }
                    }
                }
            }
        }
        Ok(self.derived(
            vec![rows, width],
            out,
            Op::AttentionApply { probs, v, dims },
            &[probs, v],
        ))
    }

    // ---- reverse pass ----------------------------------------------------

    /// Back-propagates from a scalar root. Leaf gradients accumulate across
    /// calls.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::contract(
                "backward",
                format!("root must be scalar, got shape {:?}", self.shape(root)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].value.accumulate_grad(&g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.values();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.nodes[a.0].needs_grad {
                    let da = matmul_nt(g, self.vals(*b), m, n, k);
                    acc(*a, &mut |s| add_into(s, &da));
                }
                if self.nodes[b.0].needs_grad {
                    let db = matmul_tn(self.vals(*a), g, k, m, n);
                    acc(*b, &mut |s| add_into(s, &db));
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let gt = transpose(g, c, r);
                acc(*x, &mut |s| add_into(s, &gt));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| {
                    s.iter_mut().zip(g).for_each(|(d, gv)| *d -= gv)
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.vals(*a), self.vals(*b));
                acc(*a, &mut |s| {
                    for ((d, gv), bb) in s.iter_mut().zip(g).zip(bv) {
                        *d += gv * bb;
                    }
                });
                acc(*b, &mut |s| {
                    for ((d, gv), aa) in s.iter_mut().zip(g).zip(av) {
                        *d += gv * aa;
                    }
                });
            }
            Op::Div(a, b) => {
                let bv = self.vals(*b);
                acc(*a, &mut |s| {
                    for ((d, gv), bb) in s.iter_mut().zip(g).zip(bv) {
                        *d += gv / bb;
                    }
                });
                acc(*b, &mut |s| {
                    for ((d, gv), (bb, yy)) in s.iter_mut().zip(g).zip(bv.iter().zip(y)) {
                        *d -= gv * yy / bb;
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |s| {
                s.iter_mut().zip(g).for_each(|(d, gv)| *d += c * gv)
            }),
            Op::AddRowBias(x, bias) => {
                acc(*x, &mut |s| add_into(s, g));
                let n = self.value(*bias).len();
                acc(*bias, &mut |s| {
                    for row in g.chunks(n) {
                        add_into(s, row);
                    }
                });
            }
            Op::MulConst(x, mask) => acc(*x, &mut |s| {
                for ((d, gv), m) in s.iter_mut().zip(g).zip(mask) {
                    *d += gv * m;
                }
            }),
            Op::Tanh(x) => acc(*x, &mut |s| {
                for ((d, gv), yy) in s.iter_mut().zip(g).zip(y) {
                    *d += gv * (1.0 - yy * yy);
                }
            }),
            Op::Gelu(x) => {
                let xv = self.vals(*x);
                acc(*x, &mut |s| {
                    for ((d, gv), xx) in s.iter_mut().zip(g).zip(xv) {
                        *d += gv * gelu_grad(*xx);
                    }
                })
            }
            Op::Relu(x) => {
                let xv = self.vals(*x);
                acc(*x, &mut |s| {
                    for ((d, gv), xx) in s.iter_mut().zip(g).zip(xv) {
                        if *xx > 0.0 {
                            *d += gv;
                        }
                    }
                })
            }
            Op::Log(x) => {
                let xv = self.vals(*x);
                acc(*x, &mut |s| {
                    for ((d, gv), xx) in s.iter_mut().zip(g).zip(xv) {
                        *d += gv / xx;
                    }
                })
            }
            Op::Sqrt(x) => acc(*x, &mut |s| {
                for ((d, gv), yy) in s.iter_mut().zip(g).zip(y) {
                    *d += gv / (2.0 * yy);
                }
            }),
            Op::Exp(x) => acc(*x, &mut |s| {
                for ((d, gv), yy) in s.iter_mut().zip(g).zip(y) {
                    *d += gv * yy;
                }
            }),
            Op::Clamp(x, lo, hi) => {
                let xv = self.vals(*x);
                acc(*x, &mut |s| {
                    for ((d, gv), xx) in s.iter_mut().zip(g).zip(xv) {
                        if *xx >= *lo && *xx <= *hi {
                            *d += gv;
                        }
                    }
                })
            }
            Op::SoftmaxRows(x) => {
                let n = node.value.cols();
                acc(*x, &mut |s| {
                    for ((srow, grow), yrow) in s.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dotp: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((d, gv), yy) in srow.iter_mut().zip(grow).zip(yrow) {
                            *d += yy * (gv - dotp);
                        }
                    }
                })
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = node.value.cols();
                let gv = self.vals(*gain);
                acc(*x, &mut |s| {
                    for (r, (srow, grow)) in s.chunks_mut(d).zip(g.chunks(d)).enumerate() {
                        let xh = &xhat[r * d..(r + 1) * d];
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..d {
                            let dxh = grow[j] * gv[j];
                            m1 += dxh;
                            m2 += dxh * xh[j];
                        }
                        m1 /= d as f64;
                        m2 /= d as f64;
                        for j in 0..d {
                            let dxh = grow[j] * gv[j];
                            srow[j] += inv_std[r] * (dxh - m1 - xh[j] * m2);
                        }
                    }
                });
                acc(*gain, &mut |s| {
                    for (grow, xrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for ((sj, gj), xj) in s.iter_mut().zip(grow).zip(xrow) {
                            *sj += gj * xj;
                        }
                    }
                });
                acc(*bias, &mut |s| {
                    for grow in g.chunks(d) {
                        add_into(s, grow);
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |s| s.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                acc(*x, &mut |s| s.iter_mut().for_each(|d| *d += g[0] / n))
            }
            Op::SumRows(x) => {
                let n = self.value(*x).cols();
                acc(*x, &mut |s| {
                    for (srow, gv) in s.chunks_mut(n).zip(g) {
                        srow.iter_mut().for_each(|d| *d += gv);
                    }
                })
            }
            Op::LogSumExpRows(x) => {
                let n = self.value(*x).cols();
                let xv = self.vals(*x);
                acc(*x, &mut |s| {
                    for ((srow, xrow), (gv, lse)) in
                        s.chunks_mut(n).zip(xv.chunks(n)).zip(g.iter().zip(y))
                    {
                        for (d, xx) in srow.iter_mut().zip(xrow) {
                            *d += gv * (xx - lse).exp();
                        }
                    }
                })
            }
            Op::RowNorms(x) => {
                let n = self.value(*x).cols();
                let xv = self.vals(*x);
                acc(*x, &mut |s| {
                    for ((srow, xrow), (gv, nrm)) in
                        s.chunks_mut(n).zip(xv.chunks(n)).zip(g.iter().zip(y))
                    {
                        for (d, xx) in srow.iter_mut().zip(xrow) {
                            *d += gv * xx / nrm;
                        }
                    }
                })
            }
            Op::Diagonal(x) => {
                let n = g.len();
                acc(*x, &mut |s| {
                    for (i, gv) in g.iter().enumerate() {
                        s[i * n + i] += gv;
                    }
                })
            }
            Op::GatherRows(table, index) => {
                let d = self.value(*table).cols();
                acc(*table, &mut |s| {
                    for (&r, grow) in index.iter().zip(g.chunks(d)) {
                        add_into(&mut s[r * d..(r + 1) * d], grow);
                    }
                })
            }
            Op::Reshape(x) => acc(*x, &mut |s| add_into(s, g)),
            Op::AttentionScores { q, k, dims, scale } => {
                let (qv, kv) = (self.vals(*q), self.vals(*k));
                let AttnDims {
                    batch,
                    seq: n,
                    heads,
                    head_dim: dh,
                } = *dims;
                let width = dims.width();
                if self.nodes[q.0].needs_grad {
                    let mut dq = vec![0.0; qv.len()];
                    for b in 0..batch {
                        for h in 0..heads {
                            for i in 0..n {
                                let dqrow = &mut dq[(b * n + i) * width + h * dh..][..dh];
                                for j in 0..n {
                                    let gs = g[((b * heads + h) * n + i) * n + j] * scale;
                                    let krow = &kv[(b * n + j) * width + h * dh..][..dh];
                                    for (d, kk) in dqrow.iter_mut().zip(krow) {
                                        *d += gs * kk;
                                    }
                                }
                            }
                        }
                    }
                    acc(*q, &mut |s| add_into(s, &dq));
                }
                if self.nodes[k.0].needs_grad {
                    let mut dk = vec![0.0; kv.len()];
                    for b in 0..batch {
                        for h in 0..heads {
                            for i in 0..n {
                                let qrow = &qv[(b * n + i) * width + h * dh..][..dh];
                                for j in 0..n {
                                    let gs = g[((b * heads + h) * n + i) * n + j] * scale;
                                    let dkrow = &mut dk[(b * n + j) * width + h * dh..][..dh];
                                    for (d, qq) in dkrow.iter_mut().zip(qrow) {
                                        *d += gs * qq;
                                    }
                                }
                            }
                        }
                    }
                    acc(*k, &mut |s| add_into(s, &dk));
                }
            }
            Op::AttentionApply { probs, v, dims } => {
                let (pv, vv) = (self.vals(*probs), self.vals(*v));
                let AttnDims {
                    batch,
                    seq: n,
                    heads,
                    head_dim: dh,
                } = *dims;
                let width = dims.width();
                if self.nodes[probs.0].needs_grad {
                    let mut dp = vec![0.0; pv.len()];
                    for b in 0..batch {
                        for h in 0..heads {
                            for i in 0..n {
                                let grow = &g[(b * n + i) * width + h * dh..][..dh];
                                for j in 0..n {
                                    let vrow = &vv[(b * n + j) * width + h * dh..][..dh];
                                    dp[((b * heads + h) * n + i) * n + j] =
                                        grow.iter().zip(vrow).map(|(a, c)| a * c).sum();
                                }
                            }
                        }
                    }
                    acc(*probs, &mut |s| add_into(s, &dp));
                }
                if self.nodes[v.0].needs_grad {
                    let mut dv = vec![0.0; vv.len()];
                    for b in 0..batch {
                        for h in 0..heads {
                            for i in 0..n {
                                let grow = &g[(b * n + i) * width + h * dh..][..dh];
                                for j in 0..n {
                                    let p = pv[((b * heads + h) * n + i) * n + j];
                                    if p == 0.0 {
                                        continue;
                                    }
                                    let dvrow = &mut dv[(b * n + j) * width + h * dh..][..dh];
                                    for (d, gg) in dvrow.iter_mut().zip(grow) {
                                        *d += p * gg;
                                    }
                                }
                            }
                        }
                    }
                    acc(*v, &mut |s| add_into(s, &dv));
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
