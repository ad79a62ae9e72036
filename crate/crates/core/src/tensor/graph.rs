use super::kernels;
use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf { param: Option<ParamId> },
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Embedding { table: Var, ids: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    MaxOverTime { x: Var, argmax: Vec<usize> },
    MeanOverTime { x: Var, batch: usize, lengths: Vec<usize> },
    LastValid { x: Var, batch: usize, lengths: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Records a forward computation so gradients can be propagated back to its
/// leaves. Nodes are appended in evaluation order, which is a topological order.
///
/// Sequence tensors are stored time-major as `(steps·batch) × features`, row
/// `t·batch + b` holding step `t` of sequence `b`.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn mat(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let t = &self.nodes[v.0].value;
        match t.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(op, format!("expected a matrix, got {s:?}"))),
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf { param: None }, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Leaf carrying a copy of a stored parameter; trainable unless its group is frozen.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let requires_grad = !store.is_frozen(id);
        self.push(
            store.value(id).clone(),
            Op::Leaf { param: Some(id) },
            requires_grad,
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat("matmul", a)?;
        let (k2, n) = self.mat("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::mm(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat("matmul_nt", a)?;
        let (n, k2) = self.mat("matmul_nt", b)?;
        if k != k2 {
            return Err(Error::shape(
                "matmul_nt",
                format!("[{m}, {k}] x [{n}, {k2}]^T"),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::mm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: Op<T>, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor {
            shape: va.shape().to_vec(),
            data,
        };
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(Op::Add(a, b), a, b, |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y))
    }

    /// Adds a length-`n` bias to every row of an `m × n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.mat("add_bias", x)?;
        if self.value(bias).len() != n {
            return Err(Error::shape(
                "add_bias",
                format!("{:?} + bias {:?}", self.shape(x), self.shape(bias)),
            ));
        }
        let b = self.value(bias).data().to_vec();
        let mut value = self.value(x).clone();
        for row in value.data.chunks_mut(n) {
            for (r, bv) in row.iter_mut().zip(&b) {
                *r += *bv;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let mut value = self.value(x).clone();
        value.data.iter_mut().for_each(|v| *v *= c);
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x, c), rg)
    }

    fn map(&mut self, op: Op<T>, x: Var, f: impl Fn(T) -> T) -> Var {
        let mut value = self.value(x).clone();
        value.data.iter_mut().for_each(|v| *v = f(*v));
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(Op::Sigmoid(x), x, kernels::sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(Op::Tanh(x), x, T::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(Op::Relu(x), x, |v| if v > T::zero() { v } else { T::zero() })
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.mat("softmax", x)?;
        let value = self.value(x).softmax();
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.mat("log_softmax", x)?;
        let value = self.value(x).log_softmax();
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::LogSoftmax(x), rg))
    }

    /// Gathers rows of `table` (`vocab × dim`) for each id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, dim) = self.mat("embedding", table)?;
        if let Some(bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::shape(
                "embedding",
                format!("id {bad} out of range for vocabulary of {vocab}"),
            ));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(vec![ids.len(), dim], data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs"));
        }
        let (m, _) = self.mat("concat_cols", parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.mat("concat_cols", p)?;
            if r != m {
                return Err(Error::shape("concat_cols", format!("row counts {m} vs {r}")));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no inputs"));
        }
        let (_, n) = self.mat("concat_rows", parts[0])?;
        let mut m = 0;
        for &p in parts {
            let (r, c) = self.mat("concat_rows", p)?;
            if c != n {
                return Err(Error::shape("concat_rows", format!("column counts {n} vs {c}")));
            }
            m += r;
        }
        let mut data = Vec::with_capacity(m * n);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.mat("slice_cols", x)?;
        if start + len > n || len == 0 {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{} of {n}", start + len),
            ));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src.row(i)[start..start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![m, len], data)?, Op::SliceCols { x, start }, rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.mat("slice_rows", x)?;
        if start + len > m || len == 0 {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{} of {m}", start + len),
            ));
        }
        let data = self.value(x).data()[start * n..(start + len) * n].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![len, n], data)?, Op::SliceRows { x, start }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Transpose(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s: T = t.data().iter().copied().sum::<T>() / T::lit(t.len() as f64);
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    fn check_seq(&self, op: &'static str, x: Var, batch: usize, lengths: &[usize]) -> Result<usize> {
        let (rows, _) = self.mat(op, x)?;
        if batch == 0 || rows % batch != 0 || lengths.len() != batch {
            return Err(Error::shape(
                op,
                format!("{rows} rows, batch {batch}, {} lengths", lengths.len()),
            ));
        }
        let steps = rows / batch;
        for (b, &l) in lengths.iter().enumerate() {
            if l == 0 {
                return Err(Error::invalid(format!("{op}: sequence {b} has zero length")));
            }
            if l > steps {
                return Err(Error::shape(op, format!("length {l} exceeds {steps} steps")));
            }
        }
        Ok(steps)
    }

    /// Elementwise max over the first `lengths[b]` steps of each sequence.
    pub fn max_over_time(&mut self, x: Var, batch: usize, lengths: &[usize]) -> Result<Var> {
        self.check_seq("max_over_time", x, batch, lengths)?;
        let src = self.value(x);
        let f = src.cols();
        let mut data = vec![T::zero(); batch * f];
        let mut argmax = vec![0usize; batch * f];
        for (b, &len) in lengths.iter().enumerate() {
            for j in 0..f {
                let mut best = b * f + j;
                for t in 1..len {
                    let idx = (t * batch + b) * f + j;
                    if src.data()[idx] > src.data()[best] {
                        best = idx;
                    }
                }
                data[b * f + j] = src.data()[best];
                argmax[b * f + j] = best;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![batch, f], data)?, Op::MaxOverTime { x, argmax }, rg))
    }

    /// Mean over the first `lengths[b]` steps of each sequence.
    pub fn mean_over_time(&mut self, x: Var, batch: usize, lengths: &[usize]) -> Result<Var> {
        self.check_seq("mean_over_time", x, batch, lengths)?;
        let src = self.value(x);
        let f = src.cols();
        let mut data = vec![T::zero(); batch * f];
        for (b, &len) in lengths.iter().enumerate() {
            let out = &mut data[b * f..(b + 1) * f];
            for t in 0..len {
                kernels::axpy(out, T::one(), src.row(t * batch + b));
            }
            let inv = T::one() / T::lit(len as f64);
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(vec![batch, f], data)?,
            Op::MeanOverTime {
                x,
                batch,
                lengths: lengths.to_vec(),
            },
            rg,
        ))
    }

    /// Row `lengths[b] - 1` of each sequence.
    pub fn last_valid(&mut self, x: Var, batch: usize, lengths: &[usize]) -> Result<Var> {
        self.check_seq("last_valid", x, batch, lengths)?;
        let src = self.value(x);
        let f = src.cols();
        let mut data = Vec::with_capacity(batch * f);
        for (b, &len) in lengths.iter().enumerate() {
            data.extend_from_slice(src.row((len - 1) * batch + b));
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(vec![batch, f], data)?,
            Op::LastValid {
                x,
                batch,
                lengths: lengths.to_vec(),
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, classes) = self.mat("cross_entropy", logits)?;
        if targets.len() != n {
            return Err(Error::shape(
                "cross_entropy",
                format!("{n} rows but {} targets", targets.len()),
            ));
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::invalid(format!(
                "cross_entropy: target {bad} out of range for {classes} classes"
            )));
        }
        let logp = self.value(logits).log_softmax();
        let mut total = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            total -= logp.data()[r * classes + t];
        }
        let loss = total / T::lit(n as f64);
        let probs = logp.data.iter().map(|v| v.exp()).collect();
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Clears accumulated leaf gradients.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Propagates d`loss` to every leaf that requires a gradient. Leaf gradients
    /// accumulate across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf { .. } = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match node.grad.as_mut() {
                    Some(acc) => kernels::axpy(acc.data_mut(), T::one(), &g),
                    None => {
                        node.grad = Some(Tensor {
                            shape: node.value.shape().to_vec(),
                            data: g,
                        })
                    }
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        match &node.op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims(&nodes[a.0].value);
                let n = nodes[b.0].value.cols();
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    kernels::mm_nt(g, val(*b), ga, m, n, k);
                }
                if let Some(gb) = grad_slot(nodes, grads, *b) {
                    kernels::mm_tn(val(*a), g, gb, m, k, n);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = dims(&nodes[a.0].value);
                let n = nodes[b.0].value.rows();
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    kernels::mm(g, val(*b), ga, m, n, k);
                }
                if let Some(gb) = grad_slot(nodes, grads, *b) {
                    kernels::mm_tn(g, val(*a), gb, m, n, k);
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    kernels::axpy(ga, T::one(), g);
                }
                if let Some(gb) = grad_slot(nodes, grads, *b) {
                    kernels::axpy(gb, T::one(), g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    kernels::axpy(ga, T::one(), g);
                }
                if let Some(gb) = grad_slot(nodes, grads, *b) {
                    kernels::axpy(gb, -T::one(), g);
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = grad_slot(nodes, grads, *a) {
                    for ((o, &gv), &bv) in ga.iter_mut().zip(g).zip(val(*b)) {
                        *o += gv * bv;
                    }
                }
                if let Some(gb) = grad_slot(nodes, grads, *b) {
                    for ((o, &gv), &av) in gb.iter_mut().zip(g).zip(val(*a)) {
                        *o += gv * av;
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    kernels::axpy(gx, T::one(), g);
                }
                if let Some(gb) = grad_slot(nodes, grads, *bias) {
                    let n = gb.len();
                    for row in g.chunks(n) {
                        kernels::axpy(gb, T::one(), row);
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    kernels::axpy(gx, *c, g);
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for ((o, &gv), &yv) in gx.iter_mut().zip(g).zip(y) {
                        *o += gv * yv * (T::one() - yv);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for ((o, &gv), &yv) in gx.iter_mut().zip(g).zip(y) {
                        *o += gv * (T::one() - yv * yv);
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for ((o, &gv), &yv) in gx.iter_mut().zip(g).zip(y) {
                        if yv > T::zero() {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let c = node.value.cols();
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for ((o, gr), yr) in gx.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((ov, &gv), &yv) in o.iter_mut().zip(gr).zip(yr) {
                            *ov += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let c = node.value.cols();
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for ((o, gr), yr) in gx.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let total: T = gr.iter().copied().sum();
                        for ((ov, &gv), &yv) in o.iter_mut().zip(gr).zip(yr) {
                            *ov += gv - yv.exp() * total;
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let dim = nodes[table.0].value.cols();
                if let Some(gt) = grad_slot(nodes, grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        kernels::axpy(
                            &mut gt[id * dim..(id + 1) * dim],
                            T::one(),
                            &g[r * dim..(r + 1) * dim],
                        );
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let n = node.value.cols();
                let mut offset = 0;
                for p in parts {
                    let w = nodes[p.0].value.cols();
                    if let Some(gp) = grad_slot(nodes, grads, *p) {
                        for (orow, grow) in gp.chunks_mut(w).zip(g.chunks(n)) {
                            kernels::axpy(orow, T::one(), &grow[offset..offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    if let Some(gp) = grad_slot(nodes, grads, *p) {
                        kernels::axpy(gp, T::one(), &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceCols { x, start } => {
                let n = nodes[x.0].value.cols();
                let w = node.value.cols();
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for (orow, grow) in gx.chunks_mut(n).zip(g.chunks(w)) {
                        kernels::axpy(&mut orow[*start..start + w], T::one(), grow);
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let n = nodes[x.0].value.cols();
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    let from = start * n;
                    kernels::axpy(&mut gx[from..from + g.len()], T::one(), g);
                }
            }
            Op::Transpose(x) => {
                let (m, n) = dims(&nodes[x.0].value);
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    let gt = kernels::transpose(g, n, m);
                    kernels::axpy(gx, T::one(), &gt);
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    let s = g[0] / T::lit(gx.len() as f64);
                    gx.iter_mut().for_each(|o| *o += s);
                }
            }
            Op::MaxOverTime { x, argmax } => {
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for (&idx, &gv) in argmax.iter().zip(g) {
                        gx[idx] += gv;
                    }
                }
            }
            Op::MeanOverTime { x, batch, lengths } => {
                let f = node.value.cols();
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for (b, &len) in lengths.iter().enumerate() {
                        let s = T::one() / T::lit(len as f64);
                        for t in 0..len {
                            let r = t * batch + b;
                            kernels::axpy(&mut gx[r * f..(r + 1) * f], s, &g[b * f..(b + 1) * f]);
                        }
                    }
                }
            }
            Op::LastValid { x, batch, lengths } => {
                let f = node.value.cols();
                if let Some(gx) = grad_slot(nodes, grads, *x) {
                    for (b, &len) in lengths.iter().enumerate() {
                        let r = (len - 1) * batch + b;
                        kernels::axpy(&mut gx[r * f..(r + 1) * f], T::one(), &g[b * f..(b + 1) * f]);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let classes = nodes[logits.0].value.cols();
                let scale = g[0] / T::lit(targets.len() as f64);
                if let Some(gl) = grad_slot(nodes, grads, *logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        let row = &mut gl[r * classes..(r + 1) * classes];
                        for (o, &p) in row.iter_mut().zip(&probs[r * classes..(r + 1) * classes]) {
                            *o += scale * p;
                        }
                        row[t] -= scale;
                    }
                }
            }
        }
    }

    /// Adds every parameter leaf's gradient into the matching store accumulator.
    pub fn write_param_grads(&self, store: &mut ParamStore<T>) {
        for node in &self.nodes {
            if let (Op::Leaf { param: Some(id) }, Some(g)) = (&node.op, &node.grad) {
                kernels::axpy(store.get_mut(*id).grad.data_mut(), T::one(), g.data());
            }
        }
    }
}

fn dims<T: Scalar>(t: &Tensor<T>) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn grad_slot<'g, T: Scalar>(
    nodes: &[Node<T>],
    grads: &'g mut [Option<Vec<T>>],
    v: Var,
) -> Option<&'g mut Vec<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
}
