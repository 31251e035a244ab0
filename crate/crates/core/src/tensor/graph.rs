use std::borrow::Cow;

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Transpose(usize),
    Softmax {
        x: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    Gelu(usize),
    Softplus(usize),
    Sum(usize),
    CrossEntropy {
        logits: usize,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        divisor: f64,
    },
    SliceCols {
        x: usize,
        start: usize,
    },
    SliceRows {
        x: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, [f64]>,
    shape: Vec<usize>,
    op: Op,
    requires_grad: bool,
}

/// Dynamic computation graph. Nodes are appended in evaluation order, so the
/// node list is itself a topological order.
#[derive(Debug, Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    consumed: bool,
}

/// Gradients of a scalar with respect to every gradient-requiring leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Interprets a shape as a matrix; vectors are single rows.
fn matrix(shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [n] => Ok((1, n)),
        [r, c] => Ok((r, c)),
        _ => Err(Error::shape(format!("expected a matrix, got shape {shape:?}"))),
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    fn push(&mut self, value: Cow<'a, [f64]>, shape: Vec<usize>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn live(&self) -> Result<()> {
        if self.consumed {
            return Err(Error::State(
                "graph was consumed by a backward pass; rebuild it with a new forward pass".into(),
            ));
        }
        Ok(())
    }

    fn derived(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op, inputs: &[usize]) -> Result<Var> {
        self.live()?;
        let rg = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push(Cow::Owned(value), shape, op, rg))
    }

    /// Borrows a tensor as a leaf without copying its data.
    pub fn leaf(&mut self, t: &'a Tensor) -> Var {
        self.push(
            Cow::Borrowed(t.data()),
            t.shape().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    /// Borrows a tensor as a leaf that never receives a gradient.
    pub fn frozen(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t.data()), t.shape().to_vec(), Op::Leaf, false)
    }

    /// Moves an owned tensor into the graph as a leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        let shape = t.shape().to_vec();
        let data = t.data().to_vec();
        self.push(Cow::Owned(data), shape, Op::Leaf, rg)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.input(t))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        match &*self.nodes[v.0].value {
            [x] => Ok(*x),
            other => Err(Error::contract(format!(
                "expected a scalar, node holds {} values",
                other.len()
            ))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix(self.shape(a))?;
        let (k2, n) = matrix(self.shape(b))?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        self.derived(out, vec![m, n], Op::MatMul(a.0, b.0), &[a.0, b.0])
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what} needs equal shapes, got {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.derived(out, shape, Op::Add(a.0, b.0), &[a.0, b.0])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.derived(out, shape, Op::Mul(a.0, b.0), &[a.0, b.0])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.derived(out, shape, Op::Scale(a.0, c), &[a.0])
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).iter().map(|x| x + c).collect();
        let shape = self.shape(a).to_vec();
        self.derived(out, shape, Op::Offset(a.0), &[a.0])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = matrix(self.shape(a))?;
        let src = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.derived(out, vec![c, r], Op::Transpose(a.0), &[a.0])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.softmax_impl(a, false)
    }

    /// Row-wise softmax where entry `(i, j)` with `j > i` is forced to zero.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var> {
        self.softmax_impl(a, true)
    }

    fn softmax_impl(&mut self, a: Var, causal: bool) -> Result<Var> {
        let (r, c) = matrix(self.shape(a))?;
        let src = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let width = if causal { (i + 1).min(c) } else { c };
            let row = &src[i * c..i * c + width];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[i * c..i * c + width];
            let mut sum = 0.0;
            for (d, &x) in dst.iter_mut().zip(row) {
                *d = (x - max).exp();
                sum += *d;
            }
            for d in dst.iter_mut() {
                *d /= sum;
            }
        }
        let shape = self.shape(a).to_vec();
        self.derived(out, shape, Op::Softmax { x: a.0 }, &[a.0])
    }

    /// Row-wise layer normalization with learned gain and bias (epsilon 1e-5).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let (r, c) = matrix(self.shape(x))?;
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(Error::shape(format!(
                "layer norm over width {c} with gain {:?} and bias {:?}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let src = self.value(x);
        let g = self.value(gain);
        let b = self.value(bias);
        let mut out = vec![0.0; r * c];
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + EPS).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let shape = self.shape(x).to_vec();
        self.derived(
            out,
            shape,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                rstd,
            },
            &[x.0, gain.0, bias.0],
        )
    }

    /// Gathers rows of a `[vocab, width]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = matrix(self.shape(table))?;
        if ids.is_empty() {
            return Err(Error::shape("embedding lookup with no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::shape(format!("token id {bad} outside table of {v} rows")));
        }
        let src = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        self.derived(
            out,
            vec![ids.len(), d],
            Op::Embedding {
                table: table.0,
                ids: ids.to_vec(),
            },
            &[table.0],
        )
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| kernels::gelu(x)).collect();
        let shape = self.shape(a).to_vec();
        self.derived(out, shape, Op::Gelu(a.0), &[a.0])
    }

    /// `ln(1 + e^x)` elementwise.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| kernels::softplus(x)).collect();
        let shape = self.shape(a).to_vec();
        self.derived(out, shape, Op::Softplus(a.0), &[a.0])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum();
        self.derived(vec![s], vec![1], Op::Sum(a.0), &[a.0])
    }

    /// Mean cross-entropy over the rows that carry a target.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let n = targets.iter().filter(|t| t.is_some()).count();
        if n == 0 {
            return Err(Error::contract("cross-entropy without any target position"));
        }
        self.cross_entropy_scaled(logits, targets, n as f64)
    }

    /// Summed cross-entropy over the rows that carry a target.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        self.cross_entropy_scaled(logits, targets, 1.0)
    }

    fn cross_entropy_scaled(&mut self, logits: Var, targets: &[Option<usize>], divisor: f64) -> Result<Var> {
        let (r, c) = matrix(self.shape(logits))?;
        if targets.len() != r {
            return Err(Error::shape(format!(
                "{} targets for {r} logit rows",
                targets.len()
            )));
        }
        let src = self.value(logits);
        let mut probs = vec![0.0; r * c];
        let mut total = 0.0;
        for (i, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= c {
                return Err(Error::shape(format!("target {t} outside {c} classes")));
            }
            let row = &src[i * c..(i + 1) * c];
            let lse = kernels::log_sum_exp(row);
            total += lse - row[t];
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
        }
        self.derived(
            vec![total / divisor],
            vec![1],
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                probs,
                divisor,
            },
            &[logits.0],
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (r, c) = matrix(self.shape(a))?;
        if width == 0 || start + width > c {
            return Err(Error::shape(format!(
                "column slice {start}..{} of width-{c} matrix",
                start + width
            )));
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(r * width);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + width]);
        }
        self.derived(out, vec![r, width], Op::SliceCols { x: a.0, start }, &[a.0])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, rows: usize) -> Result<Var> {
        let (r, c) = matrix(self.shape(a))?;
        if rows == 0 || start + rows > r {
            return Err(Error::shape(format!(
                "row slice {start}..{} of {r}-row matrix",
                start + rows
            )));
        }
        let out = self.value(a)[start * c..(start + rows) * c].to_vec();
        self.derived(out, vec![rows, c], Op::SliceRows { x: a.0, start }, &[a.0])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concatenation of zero matrices"))?;
        let (r, _) = matrix(self.shape(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = matrix(self.shape(p))?;
            if pr != r {
                return Err(Error::shape(format!(
                    "concat of matrices with {r} and {pr} rows"
                )));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.derived(out, vec![r, total], Op::ConcatCols(ids.clone()), &ids)
    }

    /// Reverse pass from a scalar. Consumes the graph: a second call fails.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        self.live()?;
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        self.consumed = true;

        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = matrix(&nodes[*a].shape)?;
                    let n = node.shape[1];
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        kernels::matmul_bt_acc(&g, &nodes[*b].value, da, m, n, k);
                    }
                    if let Some(db) = slot(&mut grads, nodes, *b) {
                        kernels::matmul_at_acc(&nodes[*a].value, &g, db, m, k, n);
                    }
                }
                Op::Add(a, b) => {
                    for &t in [a, b] {
                        if let Some(d) = slot(&mut grads, nodes, t) {
                            d.iter_mut().zip(&g).for_each(|(d, g)| *d += g);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if let Some(da) = slot(&mut grads, nodes, *a) {
                        for ((d, g), y) in da.iter_mut().zip(&g).zip(nodes[*b].value.iter()) {
                            *d += g * y;
                        }
                    }
                    if let Some(db) = slot(&mut grads, nodes, *b) {
                        for ((d, g), x) in db.iter_mut().zip(&g).zip(nodes[*a].value.iter()) {
                            *d += g * x;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if let Some(d) = slot(&mut grads, nodes, *a) {
                        d.iter_mut().zip(&g).for_each(|(d, g)| *d += c * g);
                    }
                }
                Op::Offset(a) => {
                    if let Some(d) = slot(&mut grads, nodes, *a) {
                        d.iter_mut().zip(&g).for_each(|(d, g)| *d += g);
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = matrix(&nodes[*a].shape)?;
                    if let Some(d) = slot(&mut grads, nodes, *a) {
                        for p in 0..r {
                            for q in 0..c {
                                d[p * c + q] += g[q * r + p];
                            }
                        }
                    }
                }
                Op::Softmax { x } => {
                    let (r, c) = matrix(&node.shape)?;
                    let y = &node.value;
                    if let Some(d) = slot(&mut grads, nodes, *x) {
                        for row in 0..r {
                            let ys = &y[row * c..(row + 1) * c];
                            let gs = &g[row * c..(row + 1) * c];
                            let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                            let ds = &mut d[row * c..(row + 1) * c];
                            for j in 0..c {
                                ds[j] += ys[j] * (gs[j] - dot);
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let (r, c) = matrix(&node.shape)?;
                    if let Some(db) = slot(&mut grads, nodes, *bias) {
                        for row in 0..r {
                            for j in 0..c {
                                db[j] += g[row * c + j];
                            }
                        }
                    }
                    if let Some(dg) = slot(&mut grads, nodes, *gain) {
                        for row in 0..r {
                            for j in 0..c {
                                dg[j] += g[row * c + j] * xhat[row * c + j];
                            }
                        }
                    }
                    let gv = &nodes[*gain].value;
                    if let Some(dx) = slot(&mut grads, nodes, *x) {
                        let mut dxhat = vec![0.0; c];
                        for row in 0..r {
                            let mut mean_d = 0.0;
                            let mut mean_dx = 0.0;
                            for j in 0..c {
                                let v = g[row * c + j] * gv[j];
                                dxhat[j] = v;
                                mean_d += v;
                                mean_dx += v * xhat[row * c + j];
                            }
                            mean_d /= c as f64;
                            mean_dx /= c as f64;
                            for j in 0..c {
                                dx[row * c + j] += rstd[row]
                                    * (dxhat[j] - mean_d - xhat[row * c + j] * mean_dx);
                            }
                        }
                    }
                }
                Op::Embedding { table, ids } => {
                    let d = node.shape[1];
                    if let Some(dt) = slot(&mut grads, nodes, *table) {
                        for (row, &id) in ids.iter().enumerate() {
                            let src = &g[row * d..(row + 1) * d];
                            dt[id * d..(id + 1) * d]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                }
                Op::Gelu(a) => {
                    if let Some(d) = slot(&mut grads, nodes, *a) {
                        for ((d, g), &x) in d.iter_mut().zip(&g).zip(nodes[*a].value.iter()) {
                            *d += g * kernels::gelu_grad(x);
                        }
                    }
                }
                Op::Softplus(a) => {
                    if let Some(d) = slot(&mut grads, nodes, *a) {
                        for ((d, g), &x) in d.iter_mut().zip(&g).zip(nodes[*a].value.iter()) {
                            *d += g * kernels::sigmoid(x);
                        }
                    }
                }
                Op::Sum(a) => {
                    if let Some(d) = slot(&mut grads, nodes, *a) {
                        d.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    divisor,
                } => {
                    let c = matrix(&nodes[*logits].shape)?.1;
                    let scale = g[0] / divisor;
                    if let Some(d) = slot(&mut grads, nodes, *logits) {
                        for (row, t) in targets.iter().enumerate() {
                            let Some(t) = *t else { continue };
                            for j in 0..c {
                                d[row * c + j] += scale * probs[row * c + j];
                            }
                            d[row * c + t] -= scale;
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    let c = matrix(&nodes[*x].shape)?.1;
                    let (r, w) = (node.shape[0], node.shape[1]);
                    if let Some(d) = slot(&mut grads, nodes, *x) {
                        for row in 0..r {
                            for j in 0..w {
                                d[row * c + start + j] += g[row * w + j];
                            }
                        }
                    }
                }
                Op::SliceRows { x, start } => {
                    let c = node.shape[1];
                    if let Some(d) = slot(&mut grads, nodes, *x) {
                        d[start * c..start * c + g.len()]
                            .iter_mut()
                            .zip(&g)
                            .for_each(|(d, g)| *d += g);
                    }
                }
                Op::ConcatCols(parts) => {
                    let (r, total) = (node.shape[0], node.shape[1]);
                    let mut col = 0;
                    for &p in parts {
                        let w = matrix(&nodes[p].shape)?.1;
                        if let Some(d) = slot(&mut grads, nodes, p) {
                            for row in 0..r {
                                for j in 0..w {
                                    d[row * w + j] += g[row * total + col + j];
                                }
                            }
                        }
                        col += w;
                    }
                }
            }
        }

        for (i, node) in nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(Gradients { grads })
    }
}

fn slot<'g>(
    grads: &'g mut [Option<Vec<f64>>],
    nodes: &[Node<'_>],
    idx: usize,
) -> Option<&'g mut Vec<f64>> {
    if !nodes[idx].requires_grad {
        return None;
    }
    let len = nodes[idx].value.len();
    Some(grads[idx].get_or_insert_with(|| vec![0.0; len]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::param(shape, data).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::new(vec![2, 2], vec![3.0, -1.0, 0.5, 7.0]).unwrap();
        let mut g = Graph::new();
        let (i, x) = (g.leaf(&eye), g.leaf(&a));
        let y = g.matmul(i, x).unwrap();
        assert_eq!(g.value(y), a.data());
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut g = Graph::new();
        let z = g.constant(vec![3], vec![0.0; 3]).unwrap();
        let s = g.softmax(z).unwrap();
        for &p in g.value(s) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_cross_entropy_is_log_vocab() {
        let mut g = Graph::new();
        let z = g.constant(vec![2, 16], vec![0.25; 32]).unwrap();
        let ce = g.cross_entropy(z, &[Some(3), Some(15)]).unwrap();
        assert!((g.scalar(ce).unwrap() - 16f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn square_gradient() {
        let x = param(vec![1], vec![3.0]);
        let mut g = Graph::new();
        let v = g.leaf(&x);
        let sq = g.mul(v, v).unwrap();
        let grads = g.backward(sq).unwrap();
        assert_eq!(grads.get(v).unwrap(), &[6.0]);
    }

    #[test]
    fn sum_of_softmax_has_zero_gradient() {
        let z = param(vec![4], vec![0.3, -1.2, 2.0, 0.1]);
        let mut g = Graph::new();
        let v = g.leaf(&z);
        let s = g.softmax(v).unwrap();
        let total = g.sum(s).unwrap();
        let grads = g.backward(total).unwrap();
        for &d in grads.get(v).unwrap() {
            assert!(d.abs() < 1e-15, "{d}");
        }
    }

    #[test]
    fn backward_rejects_non_scalar_and_reuse() {
        let z = param(vec![2], vec![1.0, 2.0]);
        let mut g = Graph::new();
        let v = g.leaf(&z);
        let y = g.scale(v, 2.0).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::State(_))));
        assert!(matches!(g.scale(v, 1.0), Err(Error::State(_))));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut g = Graph::new();
        let a = g.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let b = g.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        assert!(matches!(g.matmul(a, b), Err(Error::Shape(_))));
        let c = g.constant(vec![3, 2], vec![0.0; 6]).unwrap();
        assert!(matches!(g.add(a, c), Err(Error::Shape(_))));
    }

    #[test]
    fn unreached_leaves_get_zero_gradients() {
        let a = param(vec![2], vec![1.0, 2.0]);
        let b = param(vec![3], vec![1.0, 2.0, 3.0]);
        let mut g = Graph::new();
        let va = g.leaf(&a);
        let vb = g.leaf(&b);
        let s = g.sum(va).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(va).unwrap(), &[1.0, 1.0]);
        assert_eq!(grads.get(vb).unwrap(), &[0.0; 3]);
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut g = Graph::new();
        let z = g.constant(vec![2, 2], vec![5.0, 9.0, 1.0, 1.0]).unwrap();
        let p = g.causal_softmax(z).unwrap();
        assert_eq!(g.value(p), &[1.0, 0.0, 0.5, 0.5]);
    }
}
