use super::tensor::{matmul, matmul_a_bt_acc, matmul_at_b_acc, sigmoid};
use super::{AutodiffError, Tensor};

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Detached,
    MatMul { a: NodeId, b: NodeId, m: usize, k: usize, n: usize },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRowBias { x: NodeId, bias: NodeId },
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Concat { a: NodeId, b: NodeId, rows: usize, ca: usize, cb: usize },
    SliceCols { x: NodeId, rows: usize, cols: usize, start: usize, len: usize },
    View { x: NodeId, offset: usize },
    Scale(NodeId, f64),
    Sum(NodeId),
    Mean(NodeId),
    /// `probs` holds the row-wise softmax, cached for the backward pass.
    SoftmaxXent { logits: NodeId, labels: Vec<usize>, probs: Vec<f64> },
}

impl Op {
    fn parents(&self) -> Vec<NodeId> {
        match *self {
            Op::Leaf | Op::Detached => Vec::new(),
            Op::MatMul { a, b, .. } => vec![a, b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::AddRowBias { x, bias } => vec![x, bias],
            Op::Sigmoid(x) | Op::Tanh(x) | Op::Relu(x) | Op::Scale(x, _) => vec![x],
            Op::Sum(x) | Op::Mean(x) => vec![x],
            Op::Concat { a, b, .. } => vec![a, b],
            Op::SliceCols { x, .. } | Op::View { x, .. } => vec![x],
            Op::SoftmaxXent { logits, .. } => vec![logits],
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only record of tensor operations supporting reverse-mode
/// differentiation. Every forward method appends exactly one node.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node of a tape.
#[derive(Debug)]
pub struct GradientMap {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl GradientMap {
    /// Gradient for `id`, or `None` when the node does not influence the root.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `id`; unreachable nodes get an all-zero tensor.
    pub fn grad(&self, id: NodeId) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), AutodiffError> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Parent ids of a node, in operand order.
    pub fn parents(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes[id.0].op.parents()
    }

    fn check(&self, id: NodeId) -> Result<&Tensor, AutodiffError> {
        self.nodes
            .get(id.0)
            .map(|n| &n.value)
            .ok_or(AutodiffError::UnknownNode(id.0))
    }

    fn push(&mut self, op: &'static str, kind: Op, value: Tensor) -> Result<NodeId, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op });
        }
        self.nodes.push(Node { op: kind, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, value: Tensor) -> Result<NodeId, AutodiffError> {
        self.push("leaf", Op::Leaf, value)
    }

    /// Copies the value of `x` into a new parentless node. Gradients never
    /// flow through the copy.
    pub fn detach(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let value = self.check(x)?.clone();
        self.push("detach", Op::Detached, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(AutodiffError::Shape {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = matmul(ta.data(), tb.data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        self.push("matmul", Op::MatMul { a, b, m, k, n }, value)
    }

    fn zip_with(
        &mut self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        kind: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId, AutodiffError> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(op, kind, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a bias vector to every row of a matrix. This is the only
    /// broadcasting form supported.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, AutodiffError> {
        let (tx, tb) = (self.check(x)?, self.check(bias)?);
        if tx.shape().len() != 2 || tb.shape() != [tx.shape()[1]] {
            return Err(AutodiffError::Shape {
                op: "add_row_bias",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let cols = tx.shape()[1];
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(cols) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("add_row_bias", Op::AddRowBias { x, bias }, value)
    }

    fn map(&mut self, op: &'static str, x: NodeId, kind: Op, f: impl Fn(f64) -> f64) -> Result<NodeId, AutodiffError> {
        let tx = self.check(x)?;
        let data = tx.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        self.push(op, kind, value)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.map("sigmoid", x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.map("tanh", x, Op::Tanh(x), f64::tanh)
    }

    /// max(x, 0); the derivative at 0 is taken to be 0.
    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.map("relu", x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId, AutodiffError> {
        self.map("scale", x, Op::Scale(x, factor), |v| v * factor)
    }

    /// Concatenation along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(AutodiffError::Shape {
                op: "concat",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let rows = ta.lead_rows();
        let (ca, cb) = (ta.last_dim(), tb.last_dim());
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            data.extend_from_slice(&ta.data()[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&tb.data()[r * cb..(r + 1) * cb]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let value = Tensor::new(shape, data)?;
        self.push("concat", Op::Concat { a, b, rows, ca, cb }, value)
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, AutodiffError> {
        let tx = self.check(x)?;
        let cols = tx.last_dim();
        if tx.shape().is_empty() || start + len > cols {
            return Err(AutodiffError::Shape {
                op: "slice_cols",
                lhs: tx.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let rows = tx.lead_rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&tx.data()[r * cols + start..r * cols + start + len]);
        }
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let value = Tensor::new(shape, data)?;
        self.push("slice_cols", Op::SliceCols { x, rows, cols, start, len }, value)
    }

    /// Reinterprets the contiguous range starting at `offset` as `shape`.
    pub fn view(&mut self, x: NodeId, offset: usize, shape: &[usize]) -> Result<NodeId, AutodiffError> {
        let tx = self.check(x)?;
        let len: usize = shape.iter().product();
        if offset + len > tx.len() {
            return Err(AutodiffError::Shape {
                op: "view",
                lhs: tx.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = Tensor::new(shape.to_vec(), tx.data()[offset..offset + len].to_vec())?;
        self.push("view", Op::View { x, offset }, value)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let s = self.check(x)?.data().iter().sum();
        self.push("sum", Op::Sum(x), Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let tx = self.check(x)?;
        if tx.is_empty() {
            return Err(AutodiffError::Shape {
                op: "mean",
                lhs: tx.shape().to_vec(),
                rhs: Vec::new(),
            });
        }
        let s = tx.data().iter().sum::<f64>() / tx.len() as f64;
        self.push("mean", Op::Mean(x), Tensor::scalar(s))
    }

    /// Mean softmax cross-entropy of `logits` (n x c) against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId, AutodiffError> {
        let tz = self.check(logits)?;
        if tz.shape().len() != 2 || tz.shape()[0] != labels.len() || labels.is_empty() {
            return Err(AutodiffError::Shape {
                op: "softmax_cross_entropy",
                lhs: tz.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let (n, c) = (tz.shape()[0], tz.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(AutodiffError::LabelIndex {
                op: "softmax_cross_entropy",
                label: bad,
                classes: c,
            });
        }
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &tz.data()[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, &v) in probs[r * c..(r + 1) * c].iter_mut().zip(row) {
                *p = (v - max).exp();
                z += *p;
            }
            for p in &mut probs[r * c..(r + 1) * c] {
                *p /= z;
            }
            total += max + z.ln() - row[label];
        }
        let value = Tensor::scalar(total / n as f64);
        self.push(
            "softmax_cross_entropy",
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            value,
        )
    }

    /// Full reverse pass from a scalar root, keeping every node's gradient.
    pub fn backward(&self, root: NodeId) -> Result<GradientMap, AutodiffError> {
        let grads = self.reverse(root, None)?;
        Ok(GradientMap {
            grads: grads
                .into_iter()
                .zip(&self.nodes)
                .map(|(g, node)| g.map(|d| Tensor::new(node.value.shape().to_vec(), d).expect("gradient shape")))
                .collect(),
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    /// Reverse pass that only retains gradients of `wrt`, releasing
    /// intermediate gradients as soon as they have been propagated.
    pub fn gradients(&self, root: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor>, AutodiffError> {
        let mut grads = self.reverse(root, Some(wrt))?;
        Ok(wrt
            .iter()
            .map(|&id| {
                let shape = self.nodes[id.0].value.shape().to_vec();
                match grads[id.0].take() {
                    Some(d) => Tensor::new(shape, d).expect("gradient shape"),
                    None => Tensor::zeros(&shape),
                }
            })
            .collect())
    }

    fn reverse(&self, root: NodeId, keep: Option<&[NodeId]>) -> Result<Vec<Option<Vec<f64>>>, AutodiffError> {
        let root_value = self.check(root)?;
        if !root_value.shape().is_empty() {
            return Err(AutodiffError::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        let mut keep_mask = vec![keep.is_none(); self.nodes.len()];
        if let Some(ids) = keep {
            for id in ids {
                self.check(*id)?;
                keep_mask[id.0] = true;
            }
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let upstream = if keep_mask[i] {
                match &grads[i] {
                    Some(g) => g.clone(),
                    None => continue,
                }
            } else {
                match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                }
            };
            self.propagate(i, &upstream, &mut grads);
        }
        Ok(grads)
    }

    fn propagate(&self, i: usize, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &node.op {
            Op::Leaf | Op::Detached => {}
            &Op::MatMul { a, b, m, k, n } => {
                let ga = accumulate(&mut grads[a.0], m * k);
                matmul_a_bt_acc(up, val(b).data(), m, n, k, ga);
                let gb = accumulate(&mut grads[b.0], k * n);
                matmul_at_b_acc(val(a).data(), up, m, k, n, gb);
            }
            &Op::Add(a, b) => {
                for (g, u) in accumulate(&mut grads[a.0], up.len()).iter_mut().zip(up) {
                    *g += u;
                }
                for (g, u) in accumulate(&mut grads[b.0], up.len()).iter_mut().zip(up) {
                    *g += u;
                }
            }
            &Op::Sub(a, b) => {
                for (g, u) in accumulate(&mut grads[a.0], up.len()).iter_mut().zip(up) {
                    *g += u;
                }
                for (g, u) in accumulate(&mut grads[b.0], up.len()).iter_mut().zip(up) {
                    *g -= u;
                }
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (val(a).data(), val(b).data());
                for ((g, u), y) in accumulate(&mut grads[a.0], up.len()).iter_mut().zip(up).zip(vb) {
                    *g += u * y;
                }
                for ((g, u), x) in accumulate(&mut grads[b.0], up.len()).iter_mut().zip(up).zip(va) {
                    *g += u * x;
                }
            }
            &Op::AddRowBias { x, bias } => {
                for (g, u) in accumulate(&mut grads[x.0], up.len()).iter_mut().zip(up) {
                    *g += u;
                }
                let cols = val(bias).len();
                let gb = accumulate(&mut grads[bias.0], cols);
                for row in up.chunks(cols) {
                    for (g, u) in gb.iter_mut().zip(row) {
                        *g += u;
                    }
                }
            }
            &Op::Sigmoid(x) => {
                let y = node.value.data();
                for ((g, u), s) in accumulate(&mut grads[x.0], up.len()).iter_mut().zip(up).zip(y) {
                    *g += u * s * (1.0 - s);
                }
            }
            &Op::Tanh(x) => {
                let y = node.value.data();
                for ((g, u), t) in accumulate(&mut grads[x.0], up.len()).iter_mut().zip(up).zip(y) {
                    *g += u * (1.0 - t * t);
                }
            }
            &Op::Relu(x) => {
                let vx = val(x).data();
                for ((g, u), v) in accumulate(&mut grads[x.0], up.len()).iter_mut().zip(up).zip(vx) {
                    if *v > 0.0 {
                        *g += u;
                    }
                }
            }
            &Op::Scale(x, factor) => {
                for (g, u) in accumulate(&mut grads[x.0], up.len()).iter_mut().zip(up) {
                    *g += u * factor;
                }
            }
            &Op::Concat { a, b, rows, ca, cb } => {
                let w = ca + cb;
                let ga = accumulate(&mut grads[a.0], rows * ca);
                for r in 0..rows {
                    for (g, u) in ga[r * ca..(r + 1) * ca].iter_mut().zip(&up[r * w..r * w + ca]) {
                        *g += u;
                    }
                }
                let gb = accumulate(&mut grads[b.0], rows * cb);
                for r in 0..rows {
                    for (g, u) in gb[r * cb..(r + 1) * cb].iter_mut().zip(&up[r * w + ca..(r + 1) * w]) {
                        *g += u;
                    }
                }
            }
            &Op::SliceCols { x, rows, cols, start, len } => {
                let gx = accumulate(&mut grads[x.0], rows * cols);
                for r in 0..rows {
                    for (g, u) in gx[r * cols + start..r * cols + start + len]
                        .iter_mut()
                        .zip(&up[r * len..(r + 1) * len])
                    {
                        *g += u;
                    }
                }
            }
            &Op::View { x, offset } => {
                let total = val(x).len();
                let gx = accumulate(&mut grads[x.0], total);
                for (g, u) in gx[offset..offset + up.len()].iter_mut().zip(up) {
                    *g += u;
                }
            }
            &Op::Sum(x) => {
                let len = val(x).len();
                for g in accumulate(&mut grads[x.0], len).iter_mut() {
                    *g += up[0];
                }
            }
            &Op::Mean(x) => {
                let len = val(x).len();
                let share = up[0] / len as f64;
                for g in accumulate(&mut grads[x.0], len).iter_mut() {
                    *g += share;
                }
            }
            Op::SoftmaxXent { logits, labels, probs } => {
                let n = labels.len();
                let c = probs.len() / n;
                let scale = up[0] / n as f64;
                let gz = accumulate(&mut grads[logits.0], n * c);
                for (r, &label) in labels.iter().enumerate() {
                    for j in 0..c {
                        let onehot = if j == label { 1.0 } else { 0.0 };
                        gz[r * c + j] += scale * (probs[r * c + j] - onehot);
                    }
                }
            }
        }
    }
}
