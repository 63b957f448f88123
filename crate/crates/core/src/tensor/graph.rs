//! Reverse-mode autodiff on a flat computation graph.
//!
//! A [`Graph`] owns every node produced while building a computation: leaf
//! tensors, constants, and op outputs. Ops validate shapes eagerly (exact
//! match, no broadcasting) and push a new node, so the graph is acyclic by
//! construction. [`Graph::backward`] seeds a scalar loss with gradient 1 and
//! runs one reverse sweep over the node list, visiting each node exactly
//! once; contributions into shared operands accumulate.
//!
//! Each backward pass computes its own gradient and then adds it into the
//! persistent per-node gradient buffers, so repeated passes accumulate until
//! [`Graph::zero_grads`] is called.

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`]. Only valid for the graph that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Log(Var),
    Sqrt(Var),
    MatMul {
        lhs: Var,
        rhs: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
    },
    MaxPool2 {
        input: Var,
        switches: Vec<u32>,
    },
    GlobalAvgPool(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Mean(Var),
    PairwiseSqDist {
        lhs: Var,
        rhs: Var,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

/// A growing computation graph with reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Number of nodes currently in the graph.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, needs_grad: bool, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.nodes.push(Node {
            shape,
            values,
            grad: None,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::Contract(format!(
                "variable #{} does not belong to this graph ({} nodes)",
                v.0,
                self.nodes.len()
            )));
        }
        Ok(())
    }

    /// Copies a tensor into the graph. The node participates in gradient
    /// computation iff the tensor requires grad.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.values().to_vec(),
            t.requires_grad(),
            Op::Leaf,
        )
    }

    /// Inserts a non-differentiable constant.
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(Error::Dimension(format!(
                "constant shape {shape:?} implies {expected} values, got {}",
                values.len()
            )));
        }
        Ok(self.push(shape, values, false, Op::Leaf))
    }

    /// The values of a node. Panics if the handle is foreign; use the op
    /// constructors' `Result`s to catch that earlier.
    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// The accumulated gradient of a node, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Snapshot of a node as a standalone [`Tensor`] (gradient not copied).
    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].values.clone())
            .expect("node shape/value lengths agree by construction")
    }

    /// Clears every node gradient.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn binary_same_shape(&mut self, a: Var, b: Var, name: &str) -> Result<(Vec<usize>, bool)> {
        self.check(a)?;
        self.check(b)?;
        let sa = &self.nodes[a.0].shape;
        let sb = &self.nodes[b.0].shape;
        if sa != sb {
            return Err(Error::Dimension(format!(
                "{name} requires identical shapes, got {sa:?} and {sb:?}"
            )));
        }
        let needs = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        Ok((sa.clone(), needs))
    }

    /// Elementwise sum of two identically shaped nodes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, needs) = self.binary_same_shape(a, b, "add")?;
        let values: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(shape, values, needs, Op::Add(a, b)))
    }

    /// Elementwise product of two identically shaped nodes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, needs) = self.binary_same_shape(a, b, "multiply")?;
        let values: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(shape, values, needs, Op::Mul(a, b)))
    }

    /// Multiplies every element by a compile-time constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.check(a)?;
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.nodes[a.0].needs_grad;
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|x| x * c).collect();
        Ok(self.push(shape, values, needs, Op::Scale(a, c)))
    }

    /// Elementwise `max(x, 0)`.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.nodes[a.0].needs_grad;
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|x| x.max(0.0)).collect();
        Ok(self.push(shape, values, needs, Op::Relu(a)))
    }

    /// Elementwise natural logarithm.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.nodes[a.0].needs_grad;
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|x| x.ln()).collect();
        Ok(self.push(shape, values, needs, Op::Log(a)))
    }

    /// Elementwise square root.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.nodes[a.0].needs_grad;
        let values: Vec<f64> = self.nodes[a.0].values.iter().map(|x| x.sqrt()).collect();
        Ok(self.push(shape, values, needs, Op::Sqrt(a)))
    }

    /// Matrix product of `[m, k]` and `[k, n]` nodes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let sa = &self.nodes[a.0].shape;
        let sb = &self.nodes[b.0].shape;
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::Dimension(format!(
                "matmul requires rank-2 operands, got {sa:?} and {sb:?}"
            )));
        }
        if sa[1] != sb[0] {
            return Err(Error::Dimension(format!(
                "matmul inner dimensions differ: {sa:?} vs {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let needs = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        let mut values = vec![0.0; m * n];
        kernels::matmul(
            &self.nodes[a.0].values,
            &self.nodes[b.0].values,
            m,
            k,
            n,
            &mut values,
        );
        Ok(self.push(
            vec![m, n],
            values,
            needs,
            Op::MatMul {
                lhs: a,
                rhs: b,
                m,
                k,
                n,
            },
        ))
    }

    /// 2D convolution of an `[N, C, H, W]` input with an `[F, C, kh, kw]`
    /// kernel, lowered to im2col plus matrix multiplication.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        self.check(input)?;
        self.check(kernel)?;
        if stride == 0 {
            return Err(Error::Dimension("conv2d stride must be positive".into()));
        }
        let si = self.nodes[input.0].shape.clone();
        let sk = self.nodes[kernel.0].shape.clone();
        if si.len() != 4 || sk.len() != 4 {
            return Err(Error::Dimension(format!(
                "conv2d expects input [N,C,H,W] and kernel [F,C,kh,kw], got {si:?} and {sk:?}"
            )));
        }
        let (batch, c, h, w) = (si[0], si[1], si[2], si[3]);
        let (f, kc, kh, kw) = (sk[0], sk[1], sk[2], sk[3]);
        if kc != c {
            return Err(Error::Dimension(format!(
                "conv2d kernel has {kc} input channels, input has {c}"
            )));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::Dimension(format!(
                "conv2d kernel {kh}x{kw} exceeds padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let h_out = kernels::conv_out_len(h, kh, stride, padding);
        let w_out = kernels::conv_out_len(w, kw, stride, padding);
        let spatial = h_out * w_out;
        let ckk = c * kh * kw;
        let needs = self.nodes[input.0].needs_grad || self.nodes[kernel.0].needs_grad;
        let mut values = vec![0.0; batch * f * spatial];
        let mut cols = vec![0.0; ckk * spatial];
        for nidx in 0..batch {
            let sample = &self.nodes[input.0].values[nidx * c * h * w..(nidx + 1) * c * h * w];
            kernels::im2col(sample, c, h, w, kh, kw, stride, padding, &mut cols);
            kernels::matmul(
                &self.nodes[kernel.0].values,
                &cols,
                f,
                ckk,
                spatial,
                &mut values[nidx * f * spatial..(nidx + 1) * f * spatial],
            );
        }
        Ok(self.push(
            vec![batch, f, h_out, w_out],
            values,
            needs,
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            },
        ))
    }

    /// 2x2 max pooling with stride 2 on an `[N, C, H, W]` node; trailing odd
    /// rows/columns are dropped.
    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let s = self.nodes[input.0].shape.clone();
        if s.len() != 4 {
            return Err(Error::Dimension(format!(
                "max_pool2 expects [N,C,H,W], got {s:?}"
            )));
        }
        let (batch, c, h, w) = (s[0], s[1], s[2], s[3]);
        if h < 2 || w < 2 {
            return Err(Error::Dimension(format!(
                "max_pool2 needs spatial extent of at least 2x2, got {h}x{w}"
            )));
        }
        let (h_out, w_out) = (h / 2, w / 2);
        let plane_out = h_out * w_out;
        let needs = self.nodes[input.0].needs_grad;
        let mut values = vec![0.0; batch * c * plane_out];
        let mut switches = vec![0u32; batch * c * plane_out];
        for p in 0..batch * c {
            let plane = &self.nodes[input.0].values[p * h * w..(p + 1) * h * w];
            kernels::maxpool2_plane(
                plane,
                h,
                w,
                &mut values[p * plane_out..(p + 1) * plane_out],
                &mut switches[p * plane_out..(p + 1) * plane_out],
            );
        }
        Ok(self.push(
            vec![batch, c, h_out, w_out],
            values,
            needs,
            Op::MaxPool2 { input, switches },
        ))
    }

    /// Mean over each spatial plane: `[N, C, H, W]` to `[N, C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let s = self.nodes[input.0].shape.clone();
        if s.len() != 4 {
            return Err(Error::Dimension(format!(
                "global_avg_pool expects [N,C,H,W], got {s:?}"
            )));
        }
        let (batch, c, h, w) = (s[0], s[1], s[2], s[3]);
        let plane = h * w;
        let needs = self.nodes[input.0].needs_grad;
        let mut values = vec![0.0; batch * c];
        for i in 0..batch * c {
            let sum: f64 = self.nodes[input.0].values[i * plane..(i + 1) * plane]
                .iter()
                .sum();
            values[i] = sum / plane as f64;
        }
        Ok(self.push(vec![batch, c], values, needs, Op::GlobalAvgPool(input)))
    }

    /// Row-wise softmax of a rank-2 node, stabilized by max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.nodes[a.0].shape.clone();
        if s.len() != 2 {
            return Err(Error::Dimension(format!(
                "softmax_rows expects a rank-2 node, got {s:?}"
            )));
        }
        let needs = self.nodes[a.0].needs_grad;
        let mut values = vec![0.0; s[0] * s[1]];
        kernels::softmax_rows(&self.nodes[a.0].values, s[0], s[1], &mut values);
        Ok(self.push(s, values, needs, Op::SoftmaxRows(a)))
    }

    /// Row-wise log-softmax of a rank-2 node, stabilized by max subtraction.
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.nodes[a.0].shape.clone();
        if s.len() != 2 {
            return Err(Error::Dimension(format!(
                "log_softmax_rows expects a rank-2 node, got {s:?}"
            )));
        }
        let needs = self.nodes[a.0].needs_grad;
        let mut values = vec![0.0; s[0] * s[1]];
        kernels::log_softmax_rows(&self.nodes[a.0].values, s[0], s[1], &mut values);
        Ok(self.push(s, values, needs, Op::LogSoftmaxRows(a)))
    }

    /// Mean over every element, producing a `[1]` scalar node.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let n = self.nodes[a.0].values.len();
        if n == 0 {
            return Err(Error::Dimension("mean of an empty node".into()));
        }
        let needs = self.nodes[a.0].needs_grad;
        let m = self.nodes[a.0].values.iter().sum::<f64>() / n as f64;
        Ok(self.push(vec![1], vec![m], needs, Op::Mean(a)))
    }

    /// Squared Euclidean distances between all row pairs of `[q, d]` and
    /// `[k, d]` nodes, producing `[q, k]`.
    pub fn pairwise_sq_dist(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.check(lhs)?;
        self.check(rhs)?;
        let sl = self.nodes[lhs.0].shape.clone();
        let sr = self.nodes[rhs.0].shape.clone();
        if sl.len() != 2 || sr.len() != 2 || sl[1] != sr[1] {
            return Err(Error::Dimension(format!(
                "pairwise_sq_dist expects [q,d] and [k,d] with equal d, got {sl:?} and {sr:?}"
            )));
        }
        let (q, d, k) = (sl[0], sl[1], sr[0]);
        let needs = self.nodes[lhs.0].needs_grad || self.nodes[rhs.0].needs_grad;
        let mut values = vec![0.0; q * k];
        for qi in 0..q {
            let a = &self.nodes[lhs.0].values[qi * d..(qi + 1) * d];
            for ki in 0..k {
                let b = &self.nodes[rhs.0].values[ki * d..(ki + 1) * d];
                let mut acc = 0.0;
                for (x, y) in a.iter().zip(b) {
                    let diff = x - y;
                    acc += diff * diff;
                }
                values[qi * k + ki] = acc;
            }
        }
        Ok(self.push(vec![q, k], values, needs, Op::PairwiseSqDist { lhs, rhs }))
    }

    /// Runs one reverse sweep from `loss`, which must be scalar (one value).
    /// The freshly computed gradient of each node is added onto whatever the
    /// node already accumulated.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check(loss)?;
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let n = self.nodes.len();
        let mut pass: Vec<Option<Vec<f64>>> = vec![None; n];
        if self.nodes[loss.0].needs_grad {
            pass[loss.0] = Some(vec![1.0]);
        }
        for i in (0..n).rev() {
            let Some(g) = pass[i].take() else { continue };
            self.propagate(i, &g, &mut pass)?;
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn add_pass(&self, pass: &mut [Option<Vec<f64>>], v: Var, delta: &[f64]) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut pass[v.0] {
            Some(buf) => {
                for (a, b) in buf.iter_mut().zip(delta) {
                    *a += b;
                }
            }
            None => pass[v.0] = Some(delta.to_vec()),
        }
    }

    fn pass_buf<'a>(
        &self,
        pass: &'a mut [Option<Vec<f64>>],
        v: Var,
    ) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        Some(pass[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].values.len()]))
    }

    fn propagate(&self, i: usize, g: &[f64], pass: &mut [Option<Vec<f64>>]) -> Result<()> {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_pass(pass, *a, g);
                self.add_pass(pass, *b, g);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.nodes[a.0].needs_grad {
                    let delta: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[b.0].values)
                        .map(|(gi, bv)| gi * bv)
                        .collect();
                    self.add_pass(pass, a, &delta);
                }
                if self.nodes[b.0].needs_grad {
                    let delta: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].values)
                        .map(|(gi, av)| gi * av)
                        .collect();
                    self.add_pass(pass, b, &delta);
                }
            }
            Op::Scale(a, c) => {
                let (a, c) = (*a, *c);
                if self.nodes[a.0].needs_grad {
                    let delta: Vec<f64> = g.iter().map(|gi| gi * c).collect();
                    self.add_pass(pass, a, &delta);
                }
            }
            Op::Relu(a) => {
                let a = *a;
                if self.nodes[a.0].needs_grad {
                    let delta: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].values)
                        .map(|(gi, &x)| if x > 0.0 { *gi } else { 0.0 })
                        .collect();
                    self.add_pass(pass, a, &delta);
                }
            }
            Op::Log(a) => {
                let a = *a;
                if self.nodes[a.0].needs_grad {
                    let delta: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].values)
                        .map(|(gi, &x)| gi / x)
                        .collect();
                    self.add_pass(pass, a, &delta);
                }
            }
            Op::Sqrt(a) => {
                let a = *a;
                if self.nodes[a.0].needs_grad {
                    let delta: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[i].values)
                        .map(|(gi, &y)| gi * 0.5 / y.max(1e-12))
                        .collect();
                    self.add_pass(pass, a, &delta);
                }
            }
            Op::MatMul { lhs, rhs, m, k, n } => {
                let (lhs, rhs, m, k, n) = (*lhs, *rhs, *m, *k, *n);
                if self.nodes[lhs.0].needs_grad {
                    let rhs_vals = &self.nodes[rhs.0].values;
                    if let Some(buf) = self.pass_buf(pass, lhs) {
                        // dL = g * R^T
                        kernels::matmul_abt_acc(g, rhs_vals, m, n, k, buf);
                    }
                }
                if self.nodes[rhs.0].needs_grad {
                    if let Some(buf) = self.pass_buf(pass, rhs) {
                        // dR = L^T * g
                        kernels::matmul_atb_acc(&self.nodes[lhs.0].values, g, m, k, n, buf);
                    }
                }
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            } => {
                self.propagate_conv(*input, *kernel, *stride, *padding, g, pass)?;
            }
            Op::MaxPool2 { input, switches } => {
                let inp = *input;
                if self.nodes[inp.0].needs_grad {
                    let s = &self.nodes[inp.0].shape;
                    let (h, w) = (s[2], s[3]);
                    let plane_out = (h / 2) * (w / 2);
                    // Collect scatter targets first so the pass buffer borrow
                    // does not overlap the switch table borrow.
                    let planes = self.nodes[inp.0].values.len() / (h * w);
                    if let Some(buf) = self.pass_buf(pass, inp) {
                        for p in 0..planes {
                            let base = p * h * w;
                            for (j, &sw) in switches[p * plane_out..(p + 1) * plane_out]
                                .iter()
                                .enumerate()
                            {
                                buf[base + sw as usize] += g[p * plane_out + j];
                            }
                        }
                    }
                }
            }
            Op::GlobalAvgPool(a) => {
                let a = *a;
                if self.nodes[a.0].needs_grad {
                    let s = &self.nodes[a.0].shape;
                    let plane = s[2] * s[3];
                    let inv = 1.0 / plane as f64;
                    if let Some(buf) = self.pass_buf(pass, a) {
                        for (i, gi) in g.iter().enumerate() {
                            let chunk = &mut buf[i * plane..(i + 1) * plane];
                            let d = gi * inv;
                            for x in chunk {
                                *x += d;
                            }
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let a = *a;
                if self.nodes[a.0].needs_grad {
                    let s = &self.nodes[i].shape;
                    let (rows, cols) = (s[0], s[1]);
                    let y = &self.nodes[i].values;
                    let mut delta = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                        for c in 0..cols {
                            delta[r * cols + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    self.add_pass(pass, a, &delta);
                }
            }
            Op::LogSoftmaxRows(a) => {
                let a = *a;
                if self.nodes[a.0].needs_grad {
                    let s = &self.nodes[i].shape;
                    let (rows, cols) = (s[0], s[1]);
                    let y = &self.nodes[i].values;
                    let mut delta = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let gsum: f64 = gr.iter().sum();
                        for c in 0..cols {
                            delta[r * cols + c] = gr[c] - yr[c].exp() * gsum;
                        }
                    }
                    self.add_pass(pass, a, &delta);
                }
            }
            Op::Mean(a) => {
                let a = *a;
                if self.nodes[a.0].needs_grad {
                    let n = self.nodes[a.0].values.len();
                    let d = g[0] / n as f64;
                    if let Some(buf) = self.pass_buf(pass, a) {
                        for x in buf {
                            *x += d;
                        }
                    }
                }
            }
            Op::PairwiseSqDist { lhs, rhs } => {
                let (lhs, rhs) = (*lhs, *rhs);
                let d = self.nodes[lhs.0].shape[1];
                let q = self.nodes[lhs.0].shape[0];
                let k = self.nodes[rhs.0].shape[0];
                let lv = &self.nodes[lhs.0].values;
                let rv = &self.nodes[rhs.0].values;
                if self.nodes[lhs.0].needs_grad {
                    let mut delta = vec![0.0; q * d];
                    for qi in 0..q {
                        for ki in 0..k {
                            let gqk = 2.0 * g[qi * k + ki];
                            if gqk == 0.0 {
                                continue;
                            }
                            for di in 0..d {
                                delta[qi * d + di] += gqk * (lv[qi * d + di] - rv[ki * d + di]);
                            }
                        }
                    }
                    self.add_pass(pass, lhs, &delta);
                }
                if self.nodes[rhs.0].needs_grad {
                    let mut delta = vec![0.0; k * d];
                    for qi in 0..q {
                        for ki in 0..k {
                            let gqk = 2.0 * g[qi * k + ki];
                            if gqk == 0.0 {
                                continue;
                            }
                            for di in 0..d {
                                delta[ki * d + di] += gqk * (rv[ki * d + di] - lv[qi * d + di]);
                            }
                        }
                    }
                    self.add_pass(pass, rhs, &delta);
                }
            }
        }
        Ok(())
    }

    fn propagate_conv(
        &self,
        input: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
        g: &[f64],
        pass: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        let si = &self.nodes[input.0].shape;
        let sk = &self.nodes[kernel.0].shape;
        let (batch, c, h, w) = (si[0], si[1], si[2], si[3]);
        let (f, _, kh, kw) = (sk[0], sk[1], sk[2], sk[3]);
        let h_out = kernels::conv_out_len(h, kh, stride, padding);
        let w_out = kernels::conv_out_len(w, kw, stride, padding);
        let spatial = h_out * w_out;
        let ckk = c * kh * kw;
        let input_vals = &self.nodes[input.0].values;
        let kernel_vals = &self.nodes[kernel.0].values;
        let wants_input = self.nodes[input.0].needs_grad;
        let wants_kernel = self.nodes[kernel.0].needs_grad;

        let mut cols = vec![0.0; ckk * spatial];
        let mut dcols = vec![0.0; ckk * spatial];
        let mut kernel_delta = if wants_kernel {
            vec![0.0; f * ckk]
        } else {
            Vec::new()
        };
        let mut input_delta = if wants_input {
            vec![0.0; batch * c * h * w]
        } else {
            Vec::new()
        };
        for nidx in 0..batch {
            let g_n = &g[nidx * f * spatial..(nidx + 1) * f * spatial];
            if wants_kernel {
                let sample = &input_vals[nidx * c * h * w..(nidx + 1) * c * h * w];
                kernels::im2col(sample, c, h, w, kh, kw, stride, padding, &mut cols);
                kernels::matmul_abt_acc(g_n, &cols, f, spatial, ckk, &mut kernel_delta);
            }
            if wants_input {
                dcols.fill(0.0);
                kernels::matmul_atb_acc(kernel_vals, g_n, f, ckk, spatial, &mut dcols);
                kernels::col2im_acc(
                    &dcols,
                    c,
                    h,
                    w,
                    kh,
                    kw,
                    stride,
                    padding,
                    &mut input_delta[nidx * c * h * w..(nidx + 1) * c * h * w],
                );
            }
        }
        if wants_kernel {
            self.add_pass(pass, kernel, &kernel_delta);
        }
        if wants_input {
            self.add_pass(pass, input, &input_delta);
        }
        Ok(())
    }
}
