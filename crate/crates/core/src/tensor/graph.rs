use super::kernels::{self, ConvGeometry};
use super::Tensor;
use crate::error::{dim_err, Error, Result};

/// Handle to a node recorded on a [`Graph`].
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
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Conv3d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeometry,
    },
    MaxPool3d {
        x: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    SliceRows {
        src: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        src: Var,
        start: usize,
    },
    Softmax(Var),
    MeanRows(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation tape. Nodes are appended in evaluation order, which is a
/// topological order of the computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` is not on any
    /// path to the loss.
    pub fn get(&self, graph: &Graph, v: Var) -> Tensor {
        let shape = graph.value(v).shape().to_vec();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// Borrowed raw gradient buffer, if the node was reached.
    pub fn raw(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn shape2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => dim_err(format!("{what} expects a 2-D tensor, got shape {s:?}")),
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = shape2(self.value(a), "matmul")?;
        let (k2, n) = shape2(self.value(b), "matmul")?;
        if k != k2 {
            return dim_err(format!(
                "matmul inner extents differ: {:?} x {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return dim_err(format!("add shapes differ: {:?} vs {:?}", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds the vector `b[n]` to every row of `x[m×n]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = shape2(self.value(x), "add_bias")?;
        if self.value(b).shape() != [n] {
            return dim_err(format!(
                "bias of shape {:?} does not match rows of width {n}",
                self.value(b).shape()
            ));
        }
        let bias = self.value(b).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, bb) in row.iter_mut().zip(bias) {
                *v += bb;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::AddBias(x, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * s).collect()).expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.max(0.0)).collect()).expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    /// 3-D cross-correlation of `x[C_in×D×H×W]` with `w[C_out×C_in×k×k×k]`
    /// plus per-channel bias `b[C_out]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let [c_in, d, h, wd] = xs[..] else {
            return dim_err(format!("conv3d input must be C×D×H×W, got {xs:?}"));
        };
        let [c_out, c_in_w, k, k2, k3] = ws[..] else {
            return dim_err(format!("conv3d weight must be Co×Ci×k×k×k, got {ws:?}"));
        };
        if c_in_w != c_in || k != k2 || k != k3 {
            return dim_err(format!("conv3d weight {ws:?} incompatible with input {xs:?}"));
        }
        if k % 2 == 0 {
            return dim_err(format!("conv3d kernel extent must be odd, got {k}"));
        }
        if self.value(b).shape() != [c_out] {
            return dim_err(format!(
                "conv3d bias shape {:?}, expected [{c_out}]",
                self.value(b).shape()
            ));
        }
        let geom = ConvGeometry::new(c_in, [d, h, wd], k, stride, pad).ok_or_else(|| {
            Error::Dimension(format!(
                "conv3d output extent < 1 for input {xs:?}, kernel {k}, stride {stride}, pad {pad}"
            ))
        })?;
        let out = kernels::conv3d_forward(self.value(x).data(), self.value(w).data(), self.value(b).data(), &geom);
        let [od, oh, ow] = geom.output;
        let value = Tensor::new(vec![c_out, od, oh, ow], out)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(value, Op::Conv3d { x, w, b, geom }, rg))
    }

    /// Non-overlapping cubic max pooling with window and stride `k`.
    pub fn max_pool3d(&mut self, x: Var, k: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let [c, d, h, w] = xs[..] else {
            return dim_err(format!("max_pool3d input must be C×D×H×W, got {xs:?}"));
        };
        if k == 0 || d < k || h < k || w < k {
            return dim_err(format!("max_pool3d window {k} too large for {xs:?}"));
        }
        let (vals, argmax, out) = kernels::max_pool3d(self.value(x).data(), c, [d, h, w], k);
        let value = Tensor::new(vec![c, out[0], out[1], out[2]], vals)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MaxPool3d { x, argmax }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = shape2(self.value(a), "transpose")?;
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::Transpose(a), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return dim_err("concat_rows of nothing");
        }
        let (_, n) = shape2(self.value(parts[0]), "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = shape2(self.value(p), "concat_rows")?;
            if c != n {
                return dim_err(format!("concat_rows widths differ: {n} vs {c}"));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![rows, n], data)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = shape2(self.value(a), "slice_rows")?;
        if len == 0 || start + len > m {
            return dim_err(format!("row slice {start}..{} out of {m}", start + len));
        }
        let data = self.value(a).data()[start * n..(start + len) * n].to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![len, n], data)?, Op::SliceRows { src: a, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return dim_err("concat_cols of nothing");
        }
        let (m, _) = shape2(self.value(parts[0]), "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = shape2(self.value(p), "concat_cols")?;
            if r != m {
                return dim_err(format!("concat_cols heights differ: {m} vs {r}"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &c) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * c..(i + 1) * c]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![m, total], data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = shape2(self.value(a), "slice_cols")?;
        if len == 0 || start + len > n {
            return dim_err(format!("column slice {start}..{} out of {n}", start + len));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![m, len], data)?, Op::SliceCols { src: a, start }, rg))
    }

    /// Softmax over the last axis, stabilized by subtracting each slice's max.
    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = *t.shape().last().expect("non-empty shape");
        if t.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("softmax input contains non-finite values".into()));
        }
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Softmax(a), rg))
    }

    /// Column means of `tokens[N×d]` (global average pooling over tokens).
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = shape2(self.value(a), "global_avg_pool")?;
        let src = self.value(a).data();
        let mut data = vec![0.0; n];
        for row in src.chunks(n) {
            for (d, v) in data.iter_mut().zip(row) {
                *d += v;
            }
        }
        let inv = 1.0 / m as f64;
        data.iter_mut().for_each(|v| *v *= inv);
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![n], data)?, Op::MeanRows(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`,
    /// with `logits[B×2]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = shape2(self.value(logits), "cross_entropy")?;
        if c != 2 {
            return dim_err(format!("cross_entropy expects B×2 logits, got B×{c}"));
        }
        if labels.len() != b {
            return Err(Error::Validation(format!(
                "cross_entropy got {} labels for a batch of {b}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Validation(format!("label {bad} outside {{0,1}}")));
        }
        let src = self.value(logits).data();
        if src.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("cross_entropy logits contain non-finite values".into()));
        }
        let mut probs = src.to_vec();
        let mut loss = 0.0;
        for (row, (&label, p)) in src.chunks(c).zip(labels.iter().zip(probs.chunks_mut(c))) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
            softmax_in_place(p);
        }
        loss /= b as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Validation(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.rg(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(node, &gy, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
        f(slot);
    }

    fn propagate(&self, node: &Node, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = shape2(self.value(*a), "").unwrap();
                let n = self.value(*b).shape()[1];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |ga| kernels::matmul_a_bt_acc(gy, bv, m, n, k, ga));
                self.acc(grads, *b, |gb| kernels::matmul_at_b_acc(av, gy, m, k, n, gb));
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.acc(grads, v, |g| add_into(g, gy));
                }
            }
            Op::AddBias(x, b) => {
                self.acc(grads, *x, |g| add_into(g, gy));
                let n = self.value(*b).numel();
                self.acc(grads, *b, |g| {
                    for row in gy.chunks(n) {
                        add_into(g, row);
                    }
                });
            }
            Op::Scale(a, s) => {
                self.acc(grads, *a, |g| {
                    for (gi, &v) in g.iter_mut().zip(gy) {
                        *gi += s * v;
                    }
                });
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.acc(grads, *a, |g| {
                    for ((gi, &v), &xi) in g.iter_mut().zip(gy).zip(x) {
                        if xi > 0.0 {
                            *gi += v;
                        }
                    }
                });
            }
            Op::Conv3d { x, w, b, geom } => {
                let p = geom.out_voxels();
                self.acc(grads, *b, |g| {
                    for (gi, row) in g.iter_mut().zip(gy.chunks(p)) {
                        *gi += row.iter().sum::<f64>();
                    }
                });
                let mut dx = self.rg(*x).then(|| vec![0.0; self.value(*x).numel()]);
                let mut dw = self.rg(*w).then(|| vec![0.0; self.value(*w).numel()]);
                kernels::conv3d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gy,
                    geom,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    self.acc(grads, *x, |g| add_into(g, &dx));
                }
                if let Some(dw) = dw {
                    self.acc(grads, *w, |g| add_into(g, &dw));
                }
            }
            Op::MaxPool3d { x, argmax } => {
                self.acc(grads, *x, |g| {
                    for (&i, &v) in argmax.iter().zip(gy) {
                        g[i] += v;
                    }
                });
            }
            Op::Reshape(a) => self.acc(grads, *a, |g| add_into(g, gy)),
            Op::Transpose(a) => {
                let (m, n) = shape2(self.value(*a), "").unwrap();
                self.acc(grads, *a, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[i * n + j] += gy[j * m + i];
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    self.acc(grads, p, |g| add_into(g, &gy[offset..offset + len]));
                    offset += len;
                }
            }
            Op::SliceRows { src, start } => {
                let n = self.value(*src).shape()[1];
                self.acc(grads, *src, |g| add_into(&mut g[start * n..start * n + gy.len()], gy));
            }
            Op::ConcatCols(parts) => {
                let m = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).shape()[1];
                    self.acc(grads, p, |g| {
                        for i in 0..m {
                            add_into(
                                &mut g[i * c..(i + 1) * c],
                                &gy[i * total + offset..i * total + offset + c],
                            );
                        }
                    });
                    offset += c;
                }
            }
            Op::SliceCols { src, start } => {
                let n = self.value(*src).shape()[1];
                let len = node.value.shape()[1];
                self.acc(grads, *src, |g| {
                    for (i, row) in gy.chunks(len).enumerate() {
                        add_into(&mut g[i * n + start..i * n + start + len], row);
                    }
                });
            }
            Op::Softmax(a) => {
                let n = *node.value.shape().last().unwrap();
                let y = node.value.data();
                self.acc(grads, *a, |g| {
                    for ((gr, yr), dyr) in g.chunks_mut(n).zip(y.chunks(n)).zip(gy.chunks(n)) {
                        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
                        for ((gi, &yi), &dyi) in gr.iter_mut().zip(yr).zip(dyr) {
                            *gi += yi * (dyi - dot);
                        }
                    }
                });
            }
            Op::MeanRows(a) => {
                let m = self.value(*a).shape()[0];
                let inv = 1.0 / m as f64;
                self.acc(grads, *a, |g| {
                    for row in g.chunks_mut(gy.len()) {
                        for (gi, &v) in row.iter_mut().zip(gy) {
                            *gi += v * inv;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let s = gy[0];
                self.acc(grads, *a, |g| g.iter_mut().for_each(|gi| *gi += s));
            }
            Op::CrossEntropy { logits, probs, labels } => {
                let c = self.value(*logits).shape()[1];
                let scale = gy[0] / labels.len() as f64;
                self.acc(grads, *logits, |g| {
                    for (i, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            g[i * c + j] += scale * (probs[i * c + j] - onehot);
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let mut g = Graph::new();
        let i2 = g.constant(Tensor::eye(2));
        let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = g.constant(t(&[2, 2], &[5., 6., 7., 8.]));
        let ia = g.matmul(i2, a).unwrap();
        assert_eq!(g.value(ia).data(), &[1., 2., 3., 4.]);
        let ab = g.matmul(a, b).unwrap();
        assert_eq!(g.value(ab).data(), &[19., 22., 43., 50.]);
        let z = g.constant(Tensor::zeros(&[2, 3]));
        let az = g.matmul(a, z).unwrap();
        assert!(g.value(az).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3] x [2, 3]"), "{err}");
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let u = g.constant(t(&[3], &[7.5, 7.5, 7.5]));
        let su = g.softmax_lastdim(u).unwrap();
        for &v in g.value(su).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = g.constant(t(&[2], &[0.0, 2f64.ln()]));
        let sx = g.softmax_lastdim(x).unwrap();
        let d = g.value(sx).data();
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-15 && (d[1] - 2.0 / 3.0).abs() < 1e-15);
        let xs = g.constant(t(&[2], &[0.0 + 3.25, 2f64.ln() + 3.25]));
        let sxs = g.softmax_lastdim(xs).unwrap();
        assert!(g.value(sxs).max_abs_diff(g.value(sx)) < 1e-15);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[0.0, f64::NAN]));
        assert!(matches!(g.softmax_lastdim(x), Err(Error::Numeric(_))));
    }

    #[test]
    fn gap_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[1., 3., 5., 7.]));
        let m = g.mean_rows(x).unwrap();
        assert_eq!(g.value(m).data(), &[3., 5.]);
        let one = g.constant(t(&[1, 3], &[4., -1., 2.]));
        let m1 = g.mean_rows(one).unwrap();
        assert_eq!(g.value(m1).data(), &[4., -1., 2.]);
        let c = g.constant(Tensor::full(&[5, 2], 0.25));
        let mc = g.mean_rows(c).unwrap();
        assert_eq!(g.value(mc).data(), &[0.25, 0.25]);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut g = Graph::new();
        let sat = g.constant(t(&[1, 2], &[20., -20.]));
        let l = g.cross_entropy(sat, &[0]).unwrap();
        assert!(g.value(l).item() < 1e-8);
        let u = g.constant(t(&[1, 2], &[0., 0.]));
        let l = g.cross_entropy(u, &[0]).unwrap();
        assert!((g.value(l).item() - 2f64.ln()).abs() < 1e-12);
        let a = g.constant(t(&[1, 2], &[0.3, -1.2]));
        let b = g.constant(t(&[1, 2], &[-1.2, 0.3]));
        let la = g.cross_entropy(a, &[1]).unwrap();
        let lb = g.cross_entropy(b, &[0]).unwrap();
        assert_eq!(g.value(la).item(), g.value(lb).item());
        assert!(matches!(g.cross_entropy(a, &[2]), Err(Error::Validation(_))));
        assert!(matches!(g.cross_entropy(a, &[0, 1]), Err(Error::Validation(_))));
    }

    #[test]
    fn backward_of_sum_is_ones_and_dead_branch_is_zero() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1., -2., 5.]));
        let dead = g.param(t(&[2], &[1., 1.]));
        let _unused = g.scale(dead, 3.0);
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(&g, x).data(), &[1., 1., 1.]);
        assert_eq!(grads.get(&g, dead).data(), &[0., 0.]);
        assert!(matches!(g.backward(x), Err(Error::Validation(_))));
    }

    #[test]
    fn conv3d_identity_kernel_and_constant_input() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..2 * 27).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = g.constant(t(&[2, 3, 3, 3], &data));
        let mut w = Tensor::zeros(&[2, 2, 3, 3, 3]);
        w.data_mut()[13] = 1.0;
        w.data_mut()[27 * 3 + 13] = 1.0;
        let w = g.constant(w);
        let b = g.constant(Tensor::zeros(&[2]));
        let y = g.conv3d(x, w, b, 1, 1).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);

        let c = g.constant(Tensor::full(&[1, 5, 5, 5], 1.5));
        let ones = g.constant(Tensor::full(&[1, 1, 3, 3, 3], 1.0));
        let b1 = g.constant(Tensor::zeros(&[1]));
        let y = g.conv3d(c, ones, b1, 1, 1).unwrap();
        assert!((g.value(y).at(&[0, 2, 2, 2]) - 27.0 * 1.5).abs() < 1e-12);

        let wz = g.constant(Tensor::zeros(&[1, 1, 3, 3, 3]));
        let y = g.conv3d(c, wz, b1, 1, 1).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv3d_rejects_empty_output() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 2, 2]));
        let w = g.constant(Tensor::zeros(&[1, 1, 3, 3, 3]));
        let b = g.constant(Tensor::zeros(&[1]));
        assert!(matches!(g.conv3d(x, w, b, 1, 0), Err(Error::Dimension(_))));
    }
}
