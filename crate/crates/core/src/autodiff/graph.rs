use super::{AutodiffError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Log(NodeId),
    Exp(NodeId),
    SoftmaxRows(NodeId, f64),
    LogSoftmaxRows(NodeId, f64),
    Sum(NodeId),
    Mean(NodeId),
    MaxOverAxis {
        x: NodeId,
        axis: usize,
        argmax: Vec<usize>,
    },
    MaxOverGroups {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    Transpose(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass. Confined to a single thread;
/// run independent passes on independent graphs.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `id`, or `None` when the loss does not depend on it
    /// through trainable leaves.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn check_tau(tau: f64) -> Result<(), AutodiffError> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(AutodiffError::InvalidArgument(format!(
            "temperature must be positive and finite, got {tau}"
        )))
    }
}

/// `a (m x k) * b (k x n)`.
fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `g (m x n) * b^T` where `b` is `k x n`.
fn matmul_nt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = grow
                .iter()
                .zip(&b[p * n..(p + 1) * n])
                .map(|(x, y)| x * y)
                .sum();
        }
    }
    out
}

/// `a^T * g` where `a` is `m x k` and `g` is `m x n`.
fn matmul_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &gv) in out[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

fn accumulate(slot: &mut Option<Vec<f64>>, contribution: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contribution) {
                *a += c;
            }
        }
        None => *slot = Some(contribution),
    }
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

    /// A trainable input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, true)
    }

    /// An input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        parents: &[NodeId],
    ) -> Result<NodeId, AutodiffError> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite(name));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Tensor::from_parts(shape, data),
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2()?;
        let (k2, n) = tb.dims2()?;
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let data = matmul_nn(ta.data(), tb.data(), m, k, n);
        self.push("matmul", vec![m, n], data, Op::MatMul(a, b), &[a, b])
    }

    fn same_dims(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.dims2()? != tb.dims2()? {
            return Err(mismatch(op, ta, tb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.same_dims("add", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        self.push("add", shape, data, Op::Add(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.same_dims("mul", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let shape = ta.shape().to_vec();
        self.push("mul", shape, data, Op::Mul(a, b), &[a, b])
    }

    /// Adds a length-`cols` bias to every row of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, AutodiffError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (r, c) = tx.dims2()?;
        if tb.numel() != c || tb.dims2()?.0 != 1 {
            return Err(mismatch("add_bias", tx, tb));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        self.push("add_bias", vec![r, c], data, Op::AddBias(x, bias), &[x, bias])
    }

    /// `x * w + b`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId, AutodiffError> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * factor).collect();
        let shape = t.shape().to_vec();
        self.push("scale", shape, data, Op::Scale(x, factor), &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.max(0.0)).collect();
        let shape = t.shape().to_vec();
        self.push("relu", shape, data, Op::Relu(x), &[x])
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.ln()).collect();
        let shape = t.shape().to_vec();
        self.push("log", shape, data, Op::Log(x), &[x])
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.exp()).collect();
        let shape = t.shape().to_vec();
        self.push("exp", shape, data, Op::Exp(x), &[x])
    }

    /// Row-wise `softmax(x / tau)`, computed as `exp((x - rowmax) / tau)`
    /// normalized per row.
    pub fn softmax_rows(&mut self, x: NodeId, tau: f64) -> Result<NodeId, AutodiffError> {
        check_tau(tau)?;
        let t = self.value(x);
        let (r, c) = t.dims2()?;
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = ((*v - max) / tau).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.push("softmax_rows", vec![r, c], data, Op::SoftmaxRows(x, tau), &[x])
    }

    /// Row-wise `log(softmax(x / tau))` without forming the softmax first.
    pub fn log_softmax_rows(&mut self, x: NodeId, tau: f64) -> Result<NodeId, AutodiffError> {
        check_tau(tau)?;
        let t = self.value(x);
        let (r, c) = t.dims2()?;
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for v in row.iter_mut() {
                *v = (*v - max) / tau;
            }
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push(
            "log_softmax_rows",
            vec![r, c],
            data,
            Op::LogSoftmaxRows(x, tau),
            &[x],
        )
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", vec![], vec![s], Op::Sum(x), &[x])
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(AutodiffError::InvalidArgument("mean of an empty tensor".into()));
        }
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push("mean", vec![], vec![s], Op::Mean(x), &[x])
    }

    /// Maximum along `axis` (0: over rows, giving `1 x cols`; 1: over
    /// columns, giving `rows x 1`). The gradient goes to the first maximal
    /// entry.
    pub fn max_over_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId, AutodiffError> {
        let t = self.value(x);
        let (r, c) = t.dims2()?;
        if r == 0 || c == 0 {
            return Err(AutodiffError::InvalidArgument("max of an empty tensor".into()));
        }
        let d = t.data();
        let (shape, data, argmax) = match axis {
            0 => {
                let mut arg = vec![0usize; c];
                let mut best = d[..c].to_vec();
                for i in 1..r {
                    for j in 0..c {
                        if d[i * c + j] > best[j] {
                            best[j] = d[i * c + j];
                            arg[j] = i;
                        }
                    }
                }
                (vec![1, c], best, arg)
            }
            1 => {
                let mut arg = vec![0usize; r];
                let mut best = vec![0.0; r];
                for i in 0..r {
                    let row = &d[i * c..(i + 1) * c];
                    let mut bj = 0;
                    for j in 1..c {
                        if row[j] > row[bj] {
                            bj = j;
                        }
                    }
                    arg[i] = bj;
                    best[i] = row[bj];
                }
                (vec![r, 1], best, arg)
            }
            _ => {
                return Err(AutodiffError::InvalidArgument(format!(
                    "axis must be 0 or 1, got {axis}"
                )))
            }
        };
        self.push(
            "max_over_axis",
            shape,
            data,
            Op::MaxOverAxis { x, axis, argmax },
            &[x],
        )
    }

    /// Column-wise maximum over consecutive blocks of `group` rows:
    /// `(g*m) x c` becomes `m x c`. First maximal row wins ties.
    pub fn max_over_groups(&mut self, x: NodeId, group: usize) -> Result<NodeId, AutodiffError> {
        let t = self.value(x);
        let (r, c) = t.dims2()?;
        if group == 0 || r % group != 0 {
            return Err(AutodiffError::InvalidArgument(format!(
                "{r} rows cannot be split into groups of {group}"
            )));
        }
        let m = r / group;
        let d = t.data();
        let mut data = vec![0.0; m * c];
        let mut argmax = vec![0usize; m * c];
        for g in 0..m {
            let base = g * group;
            for j in 0..c {
                let mut bi = base;
                for i in base + 1..base + group {
                    if d[i * c + j] > d[bi * c + j] {
                        bi = i;
                    }
                }
                data[g * c + j] = d[bi * c + j];
                argmax[g * c + j] = bi;
            }
        }
        self.push(
            "max_over_groups",
            vec![m, c],
            data,
            Op::MaxOverGroups { x, argmax },
            &[x],
        )
    }

    /// Concatenation along `axis` (0: stack rows, 1: join columns).
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId, AutodiffError> {
        let first = *parts
            .first()
            .ok_or_else(|| AutodiffError::InvalidArgument("concat of nothing".into()))?;
        let (r0, c0) = self.value(first).dims2()?;
        let mut dims = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            let ok = match axis {
                0 => c == c0,
                1 => r == r0,
                _ => {
                    return Err(AutodiffError::InvalidArgument(format!(
                        "axis must be 0 or 1, got {axis}"
                    )))
                }
            };
            if !ok {
                return Err(mismatch("concat", self.value(first), self.value(p)));
            }
            dims.push((r, c));
        }
        let (shape, data) = if axis == 0 {
            let rows = dims.iter().map(|d| d.0).sum();
            let mut data = Vec::with_capacity(rows * c0);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            (vec![rows, c0], data)
        } else {
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for (&p, &(_, c)) in parts.iter().zip(&dims) {
                    data.extend_from_slice(&self.value(p).data()[i * c..(i + 1) * c]);
                }
            }
            (vec![r0, cols], data)
        };
        let op = Op::Concat {
            parts: parts.to_vec(),
            axis,
        };
        self.push("concat", shape, data, op, parts)
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let t = self.value(x);
        let (r, c) = t.dims2()?;
        let d = t.data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = d[i * c + j];
            }
        }
        self.push("transpose", vec![c, r], data, Op::Transpose(x), &[x])
    }

    /// Reverse sweep from the scalar `loss`. Nodes are visited once each, in
    /// reverse creation order, so accumulation order is fixed.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, AutodiffError> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(AutodiffError::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.pullback(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|d| Tensor::from_parts(self.nodes[i].value.shape().to_vec(), d)))
            .collect();
        Ok(Gradients { grads })
    }

    fn pullback(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<(), AutodiffError> {
        let wants = |p: NodeId| self.nodes[p.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2()?;
                let n = tb.dims2()?.1;
                if wants(*a) {
                    accumulate(&mut grads[a.0], matmul_nt(g, tb.data(), m, n, k));
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], matmul_tn(ta.data(), g, m, k, n));
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.to_vec());
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], g.to_vec());
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if wants(*a) {
                    let d = g.iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads[a.0], d);
                }
                if wants(*b) {
                    let d = g.iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads[b.0], d);
                }
            }
            Op::AddBias(x, b) => {
                if wants(*x) {
                    accumulate(&mut grads[x.0], g.to_vec());
                }
                if wants(*b) {
                    let c = self.value(*b).numel();
                    let mut db = vec![0.0; c];
                    for row in g.chunks(c.max(1)) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads[b.0], db);
                }
            }
            Op::Scale(x, f) => {
                if wants(*x) {
                    accumulate(&mut grads[x.0], g.iter().map(|v| v * f).collect());
                }
            }
            Op::Relu(x) => {
                if wants(*x) {
                    let d = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(gv, y)| if *y > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[x.0], d);
                }
            }
            Op::Log(x) => {
                if wants(*x) {
                    let d = g.iter().zip(self.value(*x).data()).map(|(gv, xv)| gv / xv).collect();
                    accumulate(&mut grads[x.0], d);
                }
            }
            Op::Exp(x) => {
                if wants(*x) {
                    let d = g.iter().zip(node.value.data()).map(|(gv, y)| gv * y).collect();
                    accumulate(&mut grads[x.0], d);
                }
            }
            Op::SoftmaxRows(x, tau) => {
                if wants(*x) {
                    let c = node.value.cols().max(1);
                    let mut d = vec![0.0; g.len()];
                    for ((drow, grow), yrow) in d
                        .chunks_mut(c)
                        .zip(g.chunks(c))
                        .zip(node.value.data().chunks(c))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((dv, gv), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *dv = y * (gv - dot) / tau;
                        }
                    }
                    accumulate(&mut grads[x.0], d);
                }
            }
            Op::LogSoftmaxRows(x, tau) => {
                if wants(*x) {
                    let c = node.value.cols().max(1);
                    let mut d = vec![0.0; g.len()];
                    for ((drow, grow), yrow) in d
                        .chunks_mut(c)
                        .zip(g.chunks(c))
                        .zip(node.value.data().chunks(c))
                    {
                        let gsum: f64 = grow.iter().sum();
                        for ((dv, gv), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *dv = (gv - y.exp() * gsum) / tau;
                        }
                    }
                    accumulate(&mut grads[x.0], d);
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    accumulate(&mut grads[x.0], vec![g[0]; self.value(*x).numel()]);
                }
            }
            Op::Mean(x) => {
                if wants(*x) {
                    let n = self.value(*x).numel();
                    accumulate(&mut grads[x.0], vec![g[0] / n as f64; n]);
                }
            }
            Op::MaxOverAxis { x, axis, argmax } => {
                if wants(*x) {
                    let t = self.value(*x);
                    let c = t.dims2()?.1;
                    let mut d = vec![0.0; t.numel()];
                    if *axis == 0 {
                        for (j, &i) in argmax.iter().enumerate() {
                            d[i * c + j] += g[j];
                        }
                    } else {
                        for (i, &j) in argmax.iter().enumerate() {
                            d[i * c + j] += g[i];
                        }
                    }
                    accumulate(&mut grads[x.0], d);
                }
            }
            Op::MaxOverGroups { x, argmax } => {
                if wants(*x) {
                    let t = self.value(*x);
                    let c = t.dims2()?.1;
                    let mut d = vec![0.0; t.numel()];
                    for (k, &i) in argmax.iter().enumerate() {
                        d[i * c + k % c] += g[k];
                    }
                    accumulate(&mut grads[x.0], d);
                }
            }
            Op::Concat { parts, axis } => {
                if *axis == 0 {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).numel();
                        if wants(p) {
                            accumulate(&mut grads[p.0], g[offset..offset + n].to_vec());
                        }
                        offset += n;
                    }
                } else {
                    let total = node.value.cols();
                    let rows = node.value.rows();
                    let mut col0 = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        if wants(p) {
                            let mut d = Vec::with_capacity(rows * c);
                            for i in 0..rows {
                                d.extend_from_slice(&g[i * total + col0..i * total + col0 + c]);
                            }
                            accumulate(&mut grads[p.0], d);
                        }
                        col0 += c;
                    }
                }
            }
            Op::Transpose(x) => {
                if wants(*x) {
                    // node value is c x r; gradient back to r x c
                    let (c, r) = node.value.dims2()?;
                    let mut d = vec![0.0; r * c];
                    for i in 0..c {
                        for j in 0..r {
                            d[j * c + i] = g[i * r + j];
                        }
                    }
                    accumulate(&mut grads[x.0], d);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let i = g.constant(m(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let a = g.constant(m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let out = g.matmul(i, a).unwrap();
        assert_eq!(g.value(out), g.value(a));
        assert!(g.matmul(a, i).is_err());
    }

    #[test]
    fn softmax_uniform_and_shift() {
        let mut g = Graph::new();
        let x = g.constant(m(2, 4, &[3.0; 8]));
        for tau in [0.1, 1.0, 7.0] {
            let s = g.softmax_rows(x, tau).unwrap();
            assert!(g.value(s).data().iter().all(|v| (v - 0.25).abs() < 1e-15));
        }
        let a = g.constant(m(1, 3, &[0.3, -1.2, 2.0]));
        let b = g.constant(m(1, 3, &[100.3, 98.8, 102.0]));
        let sa = g.softmax_rows(a, 1.0).unwrap();
        let sb = g.softmax_rows(b, 1.0).unwrap();
        for (u, v) in g.value(sa).data().iter().zip(g.value(sb).data()) {
            assert!((u - v).abs() < 1e-12);
        }
        assert!((g.value(sa).data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(g.softmax_rows(a, 0.0).is_err());
    }

    #[test]
    fn max_routes_to_first_argmax() {
        let mut g = Graph::new();
        let x = g.leaf(m(3, 2, &[1.0, 5.0, 4.0, 5.0, 4.0, 0.0]));
        let mx = g.max_over_axis(x, 0).unwrap();
        assert_eq!(g.value(mx).data(), &[4.0, 5.0]);
        let s = g.sum(mx).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn max_over_columns() {
        let mut g = Graph::new();
        let x = g.leaf(m(2, 3, &[1.0, 3.0, 3.0, -1.0, -2.0, -3.0]));
        let mx = g.max_over_axis(x, 1).unwrap();
        assert_eq!(g.value(mx).data(), &[3.0, -1.0]);
        let s = g.sum(mx).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn group_max() {
        let mut g = Graph::new();
        let x = g.leaf(m(4, 2, &[1.0, 9.0, 2.0, 0.0, 5.0, 5.0, 5.0, 6.0]));
        let y = g.max_over_groups(x, 2).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 9.0, 5.0, 6.0]);
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        assert!(g.max_over_groups(x, 3).is_err());
    }

    #[test]
    fn sum_and_square_gradients() {
        let mut g = Graph::new();
        let x = g.leaf(m(2, 2, &[1.0, -2.0, 0.5, 3.0]));
        let s = g.sum(x).unwrap();
        assert_eq!(g.backward(s).unwrap().get(x).unwrap().data(), &[1.0; 4]);
        let sq = g.mul(x, x).unwrap();
        let h = g.scale(sq, 0.5).unwrap();
        let l = g.sum(h).unwrap();
        assert_eq!(g.backward(l).unwrap().get(x).unwrap().data(), g.value(x).data());
    }

    #[test]
    fn concat_and_transpose_shapes() {
        let mut g = Graph::new();
        let a = g.constant(m(2, 1, &[1.0, 2.0]));
        let b = g.constant(m(2, 2, &[3.0, 4.0, 5.0, 6.0]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let t = g.transpose(c).unwrap();
        assert_eq!(g.value(t).shape(), &[3, 2]);
        assert_eq!(g.value(t).data(), &[1.0, 2.0, 3.0, 5.0, 4.0, 6.0]);
        assert!(g.concat(&[a, b], 0).is_err());
        let r = g.concat(&[b, b], 0).unwrap();
        assert_eq!(g.value(r).shape(), &[4, 2]);
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(m(1, 2, &[0.0, 1.0]));
        assert_eq!(g.log(x), Err(AutodiffError::NonFinite("log")));
        let big = g.constant(m(1, 1, &[1000.0]));
        assert!(g.exp(big).is_err());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(m(1, 2, &[0.0, 1.0]));
        assert!(matches!(g.backward(x), Err(AutodiffError::NotScalar(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(m(1, 2, &[1.0, 2.0]));
        let c = g.constant(m(1, 2, &[3.0, 4.0]));
        let p = g.mul(x, c).unwrap();
        let s = g.sum(p).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 4.0]);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn bias_gradient_sums_rows() {
        let mut g = Graph::new();
        let x = g.constant(m(3, 2, &[0.0; 6]));
        let b = g.leaf(m(1, 2, &[1.0, 2.0]));
        let y = g.add_bias(x, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let s = g.sum(y).unwrap();
        assert_eq!(g.backward(s).unwrap().get(b).unwrap().data(), &[3.0, 3.0]);
    }
}
