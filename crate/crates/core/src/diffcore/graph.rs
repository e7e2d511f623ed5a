//! Reverse-mode differentiation over a tape of tensor operations.
//!
//! A [`Graph`] is built per forward pass: each op validates shapes, computes
//! its value eagerly, and records what it needs for the backward sweep.
//! [`Graph::backward`] walks the tape in reverse creation order, so every
//! node's gradient is complete before it is propagated to the node's inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Handle to a parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Learning-rate group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    /// The text projection layer, trained with its own (lower) rate.
    Projection,
    /// Everything else.
    Main,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
    pub grad: Vec<f64>,
}

/// Owns parameter values and their accumulated gradients across steps.
/// Creation order is fixed by the model constructor and doubles as the
/// serialization order, so checkpoints are reproducible byte for byte.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> ParamId {
        let grad = vec![0.0; value.numel()];
        self.params.push(Param {
            name: name.into(),
            group,
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

/// Row-major GEMM: C = A(m,k) * B(k,n) + beta*C.
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], beta: f64) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// C = A(m,k) * B^T + beta*C where B is stored as (n,k).
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], beta: f64) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// C = A^T * B + beta*C where A is stored as (k,m) and B as (k,n).
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], beta: f64) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug)]
enum OpRecord {
    Leaf {
        param: Option<ParamId>,
    },
    /// y = x(B,I) w(I,O) + b(O)
    Dense {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    /// Row lookup: out(B,E) = table(V,E)[idx]
    Embed {
        table: NodeId,
        idx: Vec<u32>,
    },
    /// Same-padded stride-1 1-D convolution over x(B,L,C) with w(k*C,O).
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        k: usize,
    },
    Relu {
        x: NodeId,
    },
    /// Inverted dropout; mask drawn once at build time from the given seed.
    Dropout {
        x: NodeId,
        keep: Vec<bool>,
        scale: f64,
    },
    /// (B,L,C) -> (B,C), mean over L.
    GlobalAvgPool {
        x: NodeId,
    },
    /// (B,K,H) -> (B,H): sum of unmasked rows / count of unmasked rows.
    MaskedMeanPool {
        x: NodeId,
        mask: Vec<f64>,
        counts: Vec<f64>,
    },
    /// Row-wise softmax over (B,N).
    Softmax {
        x: NodeId,
    },
    /// Concatenate rank-2 tensors along the column axis.
    Concat {
        xs: Vec<NodeId>,
    },
    /// Column slice [start, start+len) of a rank-2 tensor.
    Narrow {
        x: NodeId,
        start: usize,
        len: usize,
    },
    /// out(B,D) = x(B,D) * s(B,1), broadcasting s across columns.
    RowScale {
        x: NodeId,
        s: NodeId,
    },
    /// out(B,L,D) = x + p(L,D), broadcasting p across the batch.
    AddPos {
        x: NodeId,
        p: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    ScaleConst {
        x: NodeId,
        c: f64,
    },
    /// Same data, new shape.
    Reshape {
        x: NodeId,
    },
    /// Scalar sum(coef * x).
    WeightedSum {
        x: NodeId,
        coef: Vec<f64>,
    },
    /// Mean elementwise Huber loss against a constant target.
    HuberLoss {
        pred: NodeId,
        target: Vec<f64>,
        delta: f64,
    },
    /// Mean cross-entropy of row-wise softmax(logits) against labels.
    /// Probabilities are cached at build time for the backward pass.
    CrossEntropyLoss {
        logits: NodeId,
        labels: Vec<u32>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: OpRecord,
    needs_grad: bool,
}

/// One forward pass: a tape of nodes plus per-node gradient buffers.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target w.r.t. this node, if the node
    /// participated.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        let g = &self.grads[id.0];
        if g.is_empty() {
            None
        } else {
            Some(g)
        }
    }

    fn push(&mut self, value: Tensor, op: OpRecord, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(Vec::new());
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn shape_err(op: &str, detail: String) -> Error {
        Error::ShapeError {
            op: op.to_string(),
            detail,
        }
    }

    fn expect_rank2(&self, op: &str, id: NodeId) -> Result<(usize, usize)> {
        let s = self.value(id).shape();
        if s.len() != 2 {
            return Err(Self::shape_err(op, format!("expected rank 2, got {:?}", s)));
        }
        Ok((s[0], s[1]))
    }

    fn expect_rank3(&self, op: &str, id: NodeId) -> Result<(usize, usize, usize)> {
        let s = self.value(id).shape();
        if s.len() != 3 {
            return Err(Self::shape_err(op, format!("expected rank 3, got {:?}", s)));
        }
        Ok((s[0], s[1], s[2]))
    }

    /// Constant input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, OpRecord::Leaf { param: None }, false)
    }

    /// Input that should receive a gradient (saliency probes).
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, OpRecord::Leaf { param: None }, true)
    }

    /// Parameter leaf: copies the current value in and routes gradients back
    /// to the store via [`Graph::flush_param_grads`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let value = store.get(id).value.clone();
        self.push(value, OpRecord::Leaf { param: Some(id) }, true)
    }

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (bs, i) = self.expect_rank2("dense", x)?;
        let (wi, o) = self.expect_rank2("dense", w)?;
        let bshape = self.value(b).shape();
        if wi != i || bshape != [o] {
            return Err(Self::shape_err(
                "dense",
                format!("x ({bs},{i}), w ({wi},{o}), b {bshape:?}"),
            ));
        }
        let mut out = vec![0.0; bs * o];
        gemm_nn(bs, i, o, self.value(x).data(), self.value(w).data(), &mut out, 0.0);
        let bias = self.value(b).data();
        for row in out.chunks_exact_mut(o) {
            for (y, bb) in row.iter_mut().zip(bias) {
                *y += bb;
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            Tensor::new(vec![bs, o], out)?,
            OpRecord::Dense { x, w, b },
            needs,
        ))
    }

    pub fn embed(&mut self, table: NodeId, idx: Vec<u32>) -> Result<NodeId> {
        let (v, e) = self.expect_rank2("embed", table)?;
        if let Some(bad) = idx.iter().find(|&&i| i as usize >= v) {
            return Err(Self::shape_err(
                "embed",
                format!("index {bad} out of range for table with {v} rows"),
            ));
        }
        let tdata = self.value(table).data();
        let mut out = Vec::with_capacity(idx.len() * e);
        for &i in &idx {
            let row = &tdata[i as usize * e..(i as usize + 1) * e];
            out.extend_from_slice(row);
        }
        let needs = self.needs(table);
        let b = idx.len();
        Ok(self.push(
            Tensor::new(vec![b, e], out)?,
            OpRecord::Embed { table, idx },
            needs,
        ))
    }

    /// im2col layout: row (b*L + l) holds the k*C window centred on l,
    /// zero-padded at the sequence ends.
    fn im2col(x: &[f64], bs: usize, l: usize, c: usize, k: usize) -> Vec<f64> {
        let pad = (k - 1) / 2;
        let mut patches = vec![0.0; bs * l * k * c];
        for b in 0..bs {
            for pos in 0..l {
                let dst0 = (b * l + pos) * k * c;
                for dk in 0..k {
                    let src = pos as isize + dk as isize - pad as isize;
                    if src >= 0 && (src as usize) < l {
                        let s0 = (b * l + src as usize) * c;
                        patches[dst0 + dk * c..dst0 + (dk + 1) * c]
                            .copy_from_slice(&x[s0..s0 + c]);
                    }
                }
            }
        }
        patches
    }

    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId, k: usize) -> Result<NodeId> {
        let (bs, l, c) = self.expect_rank3("conv1d", x)?;
        let (kc, o) = self.expect_rank2("conv1d", w)?;
        let bshape = self.value(b).shape();
        if k % 2 == 0 || k == 0 {
            return Err(Error::InvalidConfig(format!(
                "conv1d kernel must be odd, got {k}"
            )));
        }
        if kc != k * c || bshape != [o] {
            return Err(Self::shape_err(
                "conv1d",
                format!("x (..,{c}), w ({kc},{o}) with k={k}, b {bshape:?}"),
            ));
        }
        let patches = Self::im2col(self.value(x).data(), bs, l, c, k);
        let mut out = vec![0.0; bs * l * o];
        gemm_nn(bs * l, k * c, o, &patches, self.value(w).data(), &mut out, 0.0);
        let bias = self.value(b).data();
        for row in out.chunks_exact_mut(o) {
            for (y, bb) in row.iter_mut().zip(bias) {
                *y += bb;
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            Tensor::new(vec![bs, l, o], out)?,
            OpRecord::Conv1d { x, w, b, k },
            needs,
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.value(x).data().iter().map(|&v| v.max(0.0)).collect();
        let shape = self.value(x).shape().to_vec();
        let needs = self.needs(x);
        self.push(
            Tensor::new(shape, out).expect("same shape"),
            OpRecord::Relu { x },
            needs,
        )
    }

    /// Inverted dropout: keeps each element with probability 1-p and scales
    /// the kept ones by 1/(1-p), so the expectation matches eval mode.
    /// The mask depends only on `seed`, making reruns reproducible.
    pub fn dropout(&mut self, x: NodeId, p: f64, seed: u64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate must be in [0,1), got {p}"
            )));
        }
        if p == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.value(x).numel();
        let keep: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() >= p).collect();
        let scale = 1.0 / (1.0 - p);
        let out: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .zip(&keep)
            .map(|(&v, &k)| if k { v * scale } else { 0.0 })
            .collect();
        let shape = self.value(x).shape().to_vec();
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(shape, out)?,
            OpRecord::Dropout { x, keep, scale },
            needs,
        ))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let (bs, l, c) = self.expect_rank3("global_avg_pool", x)?;
        let data = self.value(x).data();
        let mut out = vec![0.0; bs * c];
        for b in 0..bs {
            for pos in 0..l {
                let s0 = (b * l + pos) * c;
                for j in 0..c {
                    out[b * c + j] += data[s0 + j];
                }
            }
            for j in 0..c {
                out[b * c + j] /= l as f64;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![bs, c], out)?,
            OpRecord::GlobalAvgPool { x },
            needs,
        ))
    }

    /// `mask` is (B,K) with 1.0 for present rows. Every batch row must have
    /// at least one present entry; upstream ingest guarantees this.
    pub fn masked_mean_pool(&mut self, x: NodeId, mask: &[f64]) -> Result<NodeId> {
        let (bs, kf, h) = self.expect_rank3("masked_mean_pool", x)?;
        if mask.len() != bs * kf {
            return Err(Self::shape_err(
                "masked_mean_pool",
                format!("mask length {} vs batch {}x{}", mask.len(), bs, kf),
            ));
        }
        let mut counts = vec![0.0; bs];
        for b in 0..bs {
            counts[b] = mask[b * kf..(b + 1) * kf].iter().sum();
            if counts[b] == 0.0 {
                return Err(Error::MissingModality {
                    uprn: format!("batch row {b}"),
                    reason: "no text fields present".to_string(),
                });
            }
        }
        let data = self.value(x).data();
        let mut out = vec![0.0; bs * h];
        for b in 0..bs {
            for kk in 0..kf {
                let m = mask[b * kf + kk];
                if m != 0.0 {
                    let s0 = (b * kf + kk) * h;
                    for j in 0..h {
                        out[b * h + j] += m * data[s0 + j];
                    }
                }
            }
            for j in 0..h {
                out[b * h + j] /= counts[b];
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![bs, h], out)?,
            OpRecord::MaskedMeanPool {
                x,
                mask: mask.to_vec(),
                counts,
            },
            needs,
        ))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let (bs, n) = self.expect_rank2("softmax", x)?;
        let data = self.value(x).data();
        let mut out = vec![0.0; bs * n];
        for b in 0..bs {
            let row = &data[b * n..(b + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &v) in out[b * n..(b + 1) * n].iter_mut().zip(row) {
                *o = (v - mx).exp();
                z += *o;
            }
            for o in &mut out[b * n..(b + 1) * n] {
                *o /= z;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![bs, n], out)?,
            OpRecord::Softmax { x },
            needs,
        ))
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::EmptyInput("concat".to_string()));
        }
        let (bs, _) = self.expect_rank2("concat", xs[0])?;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (b2, w) = self.expect_rank2("concat", x)?;
            if b2 != bs {
                return Err(Self::shape_err(
                    "concat",
                    format!("batch sizes differ: {bs} vs {b2}"),
                ));
            }
            widths.push(w);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; bs * total];
        let mut off = 0;
        for (&x, &w) in xs.iter().zip(&widths) {
            let data = self.value(x).data();
            for b in 0..bs {
                out[b * total + off..b * total + off + w]
                    .copy_from_slice(&data[b * w..(b + 1) * w]);
            }
            off += w;
        }
        let needs = xs.iter().any(|&x| self.needs(x));
        Ok(self.push(
            Tensor::new(vec![bs, total], out)?,
            OpRecord::Concat { xs: xs.to_vec() },
            needs,
        ))
    }

    pub fn narrow(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (bs, n) = self.expect_rank2("narrow", x)?;
        if start + len > n {
            return Err(Self::shape_err(
                "narrow",
                format!("[{start}, {start}+{len}) out of {n} columns"),
            ));
        }
        let data = self.value(x).data();
        let mut out = vec![0.0; bs * len];
        for b in 0..bs {
            out[b * len..(b + 1) * len].copy_from_slice(&data[b * n + start..b * n + start + len]);
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![bs, len], out)?,
            OpRecord::Narrow { x, start, len },
            needs,
        ))
    }

    pub fn row_scale(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let (bs, d) = self.expect_rank2("row_scale", x)?;
        let (bs2, one) = self.expect_rank2("row_scale", s)?;
        if bs != bs2 || one != 1 {
            return Err(Self::shape_err(
                "row_scale",
                format!("x ({bs},{d}), s ({bs2},{one})"),
            ));
        }
        let xd = self.value(x).data();
        let sd = self.value(s).data();
        let mut out = vec![0.0; bs * d];
        for b in 0..bs {
            for j in 0..d {
                out[b * d + j] = xd[b * d + j] * sd[b];
            }
        }
        let needs = self.needs(x) || self.needs(s);
        Ok(self.push(
            Tensor::new(vec![bs, d], out)?,
            OpRecord::RowScale { x, s },
            needs,
        ))
    }

    pub fn add_pos(&mut self, x: NodeId, p: NodeId) -> Result<NodeId> {
        let (bs, l, d) = self.expect_rank3("add_pos", x)?;
        let (l2, d2) = self.expect_rank2("add_pos", p)?;
        if l != l2 || d != d2 {
            return Err(Self::shape_err(
                "add_pos",
                format!("x (..,{l},{d}), p ({l2},{d2})"),
            ));
        }
        let xd = self.value(x).data();
        let pd = self.value(p).data();
        let mut out = vec![0.0; bs * l * d];
        for b in 0..bs {
            let base = b * l * d;
            for i in 0..l * d {
                out[base + i] = xd[base + i] + pd[i];
            }
        }
        let needs = self.needs(x) || self.needs(p);
        Ok(self.push(
            Tensor::new(vec![bs, l, d], out)?,
            OpRecord::AddPos { x, p },
            needs,
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Self::shape_err(
                "add",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, OpRecord::Add { a, b }, needs))
    }

    pub fn scale_const(&mut self, x: NodeId, c: f64) -> NodeId {
        let out: Vec<f64> = self.value(x).data().iter().map(|&v| v * c).collect();
        let shape = self.value(x).shape().to_vec();
        let needs = self.needs(x);
        self.push(
            Tensor::new(shape, out).expect("same shape"),
            OpRecord::ScaleConst { x, c },
            needs,
        )
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Self::shape_err(
                "reshape",
                format!("{:?} -> {:?}", self.value(x).shape(), shape),
            ));
        }
        let data = self.value(x).data().to_vec();
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(shape, data)?, OpRecord::Reshape { x }, needs))
    }

    pub fn weighted_sum(&mut self, x: NodeId, coef: Vec<f64>) -> Result<NodeId> {
        if coef.len() != self.value(x).numel() {
            return Err(Self::shape_err(
                "weighted_sum",
                format!("{} coefficients vs {} elements", coef.len(), self.value(x).numel()),
            ));
        }
        let v: f64 = self
            .value(x)
            .data()
            .iter()
            .zip(&coef)
            .map(|(a, c)| a * c)
            .sum();
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::scalar(v),
            OpRecord::WeightedSum { x, coef },
            needs,
        ))
    }

    pub fn huber_loss(&mut self, pred: NodeId, target: &[f64], delta: f64) -> Result<NodeId> {
        if delta <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "huber delta must be positive, got {delta}"
            )));
        }
        if target.len() != self.value(pred).numel() {
            return Err(Self::shape_err(
                "huber_loss",
                format!("{} targets vs {} predictions", target.len(), self.value(pred).numel()),
            ));
        }
        let n = target.len() as f64;
        let mut acc = 0.0;
        for (&p, &t) in self.value(pred).data().iter().zip(target) {
            let e = p - t;
            acc += if e.abs() <= delta {
                0.5 * e * e
            } else {
                delta * (e.abs() - 0.5 * delta)
            };
        }
        let needs = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(acc / n),
            OpRecord::HuberLoss {
                pred,
                target: target.to_vec(),
                delta,
            },
            needs,
        ))
    }

    pub fn cross_entropy_loss(&mut self, logits: NodeId, labels: &[u32]) -> Result<NodeId> {
        let (bs, c) = self.expect_rank2("cross_entropy_loss", logits)?;
        if labels.len() != bs {
            return Err(Self::shape_err(
                "cross_entropy_loss",
                format!("{} labels vs batch {}", labels.len(), bs),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= c) {
            return Err(Self::shape_err(
                "cross_entropy_loss",
                format!("label {bad} out of range for {c} classes"),
            ));
        }
        let data = self.value(logits).data();
        let mut probs = vec![0.0; bs * c];
        let mut acc = 0.0;
        for b in 0..bs {
            let row = &data[b * c..(b + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &v) in probs[b * c..(b + 1) * c].iter_mut().zip(row) {
                *o = (v - mx).exp();
                z += *o;
            }
            for o in &mut probs[b * c..(b + 1) * c] {
                *o /= z;
            }
            acc -= probs[b * c + labels[b] as usize].ln();
        }
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(acc / bs as f64),
            OpRecord::CrossEntropyLoss {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    fn ensure_grad(&mut self, id: NodeId) {
        if self.grads[id.0].is_empty() {
            self.grads[id.0] = vec![0.0; self.nodes[id.0].value.numel()];
        }
    }

    /// Reverse sweep from a scalar output. Gradients accumulate into every
    /// node that (transitively) requires them; read results with
    /// [`Graph::grad`] or push them to the store with
    /// [`Graph::flush_param_grads`].
    pub fn backward(&mut self, out: NodeId) -> Result<()> {
        if !self.value(out).is_scalar() {
            return Err(Self::shape_err(
                "backward",
                format!("output must be scalar, got {:?}", self.value(out).shape()),
            ));
        }
        self.ensure_grad(out);
        self.grads[out.0][0] = 1.0;
        for i in (0..=out.0).rev() {
            if !self.nodes[i].needs_grad || self.grads[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut self.grads[i]);
            self.propagate(i, &g)?;
            self.grads[i] = g;
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[f64]) -> Result<()> {
        // Inputs always precede node i on the tape, so grads[input] never
        // aliases g (taken from grads[i]).
        match &self.nodes[i].op {
            OpRecord::Leaf { .. } => {}
            OpRecord::Dense { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let (bs, in_dim) = {
                    let s = self.value(x).shape();
                    (s[0], s[1])
                };
                let o = self.value(w).shape()[1];
                if self.needs(x) {
                    self.ensure_grad(x);
                    let (nodes, grads) = (&self.nodes, &mut self.grads);
                    gemm_nt(bs, o, in_dim, g, nodes[w.0].value.data(), &mut grads[x.0], 1.0);
                }
                if self.needs(w) {
                    self.ensure_grad(w);
                    let (nodes, grads) = (&self.nodes, &mut self.grads);
                    gemm_tn(in_dim, bs, o, nodes[x.0].value.data(), g, &mut grads[w.0], 1.0);
                }
                if self.needs(b) {
                    self.ensure_grad(b);
                    for row in g.chunks_exact(o) {
                        for (gb, gv) in self.grads[b.0].iter_mut().zip(row) {
                            *gb += gv;
                        }
                    }
                }
            }
            OpRecord::Embed { table, idx } => {
                let table = *table;
                let idx = idx.clone();
                let e = self.value(table).shape()[1];
                if self.needs(table) {
                    self.ensure_grad(table);
                    for (b, &ix) in idx.iter().enumerate() {
                        let dst = &mut self.grads[table.0][ix as usize * e..(ix as usize + 1) * e];
                        for (d, gv) in dst.iter_mut().zip(&g[b * e..(b + 1) * e]) {
                            *d += gv;
                        }
                    }
                }
            }
            OpRecord::Conv1d { x, w, b, k } => {
                let (x, w, b, k) = (*x, *w, *b, *k);
                let (bs, l, c) = {
                    let s = self.value(x).shape();
                    (s[0], s[1], s[2])
                };
                let o = self.value(w).shape()[1];
                let pad = (k - 1) / 2;
                if self.needs(w) {
                    // Patches are recomputed rather than cached: the im2col
                    // buffer is the largest allocation in the whole pass.
                    let patches = Self::im2col(self.value(x).data(), bs, l, c, k);
                    self.ensure_grad(w);
                    gemm_tn(k * c, bs * l, o, &patches, g, &mut self.grads[w.0], 1.0);
                }
                if self.needs(b) {
                    self.ensure_grad(b);
                    for row in g.chunks_exact(o) {
                        for (gb, gv) in self.grads[b.0].iter_mut().zip(row) {
                            *gb += gv;
                        }
                    }
                }
                if self.needs(x) {
                    let mut gpatches = vec![0.0; bs * l * k * c];
                    let wdata = self.value(w).data().to_vec();
                    gemm_nt(bs * l, o, k * c, g, &wdata, &mut gpatches, 0.0);
                    self.ensure_grad(x);
                    let gx = &mut self.grads[x.0];
                    for bb in 0..bs {
                        for pos in 0..l {
                            let src0 = (bb * l + pos) * k * c;
                            for dk in 0..k {
                                let dst = pos as isize + dk as isize - pad as isize;
                                if dst >= 0 && (dst as usize) < l {
                                    let d0 = (bb * l + dst as usize) * c;
                                    for j in 0..c {
                                        gx[d0 + j] += gpatches[src0 + dk * c + j];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            OpRecord::Relu { x } => {
                let x = *x;
                if self.needs(x) {
                    self.ensure_grad(x);
                    let (nodes, grads) = (&self.nodes, &mut self.grads);
                    let val = nodes[x.0].value.data();
                    for ((gx, &gv), &v) in grads[x.0].iter_mut().zip(g).zip(val) {
                        if v > 0.0 {
                            *gx += gv;
                        }
                    }
                }
            }
            OpRecord::Dropout { x, keep, scale } => {
                let (x, scale) = (*x, *scale);
                let keep = keep.clone();
                if self.needs(x) {
                    self.ensure_grad(x);
                    for ((gx, &gv), &kp) in self.grads[x.0].iter_mut().zip(g).zip(&keep) {
                        if kp {
                            *gx += gv * scale;
                        }
                    }
                }
            }
            OpRecord::GlobalAvgPool { x } => {
                let x = *x;
                let (bs, l, c) = {
                    let s = self.value(x).shape();
                    (s[0], s[1], s[2])
                };
                if self.needs(x) {
                    self.ensure_grad(x);
                    let gx = &mut self.grads[x.0];
                    for b in 0..bs {
                        for pos in 0..l {
                            let d0 = (b * l + pos) * c;
                            for j in 0..c {
                                gx[d0 + j] += g[b * c + j] / l as f64;
                            }
                        }
                    }
                }
            }
            OpRecord::MaskedMeanPool { x, mask, counts } => {
                let x = *x;
                let mask = mask.clone();
                let counts = counts.clone();
                let (bs, kf, h) = {
                    let s = self.value(x).shape();
                    (s[0], s[1], s[2])
                };
                if self.needs(x) {
                    self.ensure_grad(x);
                    let gx = &mut self.grads[x.0];
                    for b in 0..bs {
                        for kk in 0..kf {
                            let m = mask[b * kf + kk];
                            if m != 0.0 {
                                let d0 = (b * kf + kk) * h;
                                for j in 0..h {
                                    gx[d0 + j] += m * g[b * h + j] / counts[b];
                                }
                            }
                        }
                    }
                }
            }
            OpRecord::Softmax { x } => {
                let x = *x;
                let (bs, n) = {
                    let s = self.value(x).shape();
                    (s[0], s[1])
                };
                if self.needs(x) {
                    let probs = self.nodes[i].value.data().to_vec();
                    self.ensure_grad(x);
                    let gx = &mut self.grads[x.0];
                    for b in 0..bs {
                        let p = &probs[b * n..(b + 1) * n];
                        let gr = &g[b * n..(b + 1) * n];
                        let dot: f64 = p.iter().zip(gr).map(|(pv, gv)| pv * gv).sum();
                        for j in 0..n {
                            gx[b * n + j] += p[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            OpRecord::Concat { xs } => {
                let xs = xs.clone();
                let bs = self.value(NodeId(i)).shape()[0];
                let total = self.value(NodeId(i)).shape()[1];
                let mut off = 0;
                for x in xs {
                    let w = self.value(x).shape()[1];
                    if self.needs(x) {
                        self.ensure_grad(x);
                        let gx = &mut self.grads[x.0];
                        for b in 0..bs {
                            for j in 0..w {
                                gx[b * w + j] += g[b * total + off + j];
                            }
                        }
                    }
                    off += w;
                }
            }
            OpRecord::Narrow { x, start, len } => {
                let (x, start, len) = (*x, *start, *len);
                let (bs, n) = {
                    let s = self.value(x).shape();
                    (s[0], s[1])
                };
                if self.needs(x) {
                    self.ensure_grad(x);
                    let gx = &mut self.grads[x.0];
                    for b in 0..bs {
                        for j in 0..len {
                            gx[b * n + start + j] += g[b * len + j];
                        }
                    }
                }
            }
            OpRecord::RowScale { x, s } => {
                let (x, s) = (*x, *s);
                let (bs, d) = {
                    let sh = self.value(x).shape();
                    (sh[0], sh[1])
                };
                let xdata = self.value(x).data().to_vec();
                let sdata = self.value(s).data().to_vec();
                if self.needs(x) {
                    self.ensure_grad(x);
                    let gx = &mut self.grads[x.0];
                    for b in 0..bs {
                        for j in 0..d {
                            gx[b * d + j] += g[b * d + j] * sdata[b];
                        }
                    }
                }
                if self.needs(s) {
                    self.ensure_grad(s);
                    let gs = &mut self.grads[s.0];
                    for b in 0..bs {
                        let mut acc = 0.0;
                        for j in 0..d {
                            acc += g[b * d + j] * xdata[b * d + j];
                        }
                        gs[b] += acc;
                    }
                }
            }
            OpRecord::AddPos { x, p } => {
                let (x, p) = (*x, *p);
                let (bs, l, d) = {
                    let s = self.value(x).shape();
                    (s[0], s[1], s[2])
                };
                if self.needs(x) {
                    self.ensure_grad(x);
                    for (gx, &gv) in self.grads[x.0].iter_mut().zip(g) {
                        *gx += gv;
                    }
                }
                if self.needs(p) {
                    self.ensure_grad(p);
                    let gp = &mut self.grads[p.0];
                    for b in 0..bs {
                        let base = b * l * d;
                        for j in 0..l * d {
                            gp[j] += g[base + j];
                        }
                    }
                }
            }
            OpRecord::Add { a, b } => {
                let (a, b) = (*a, *b);
                for t in [a, b] {
                    if self.needs(t) {
                        self.ensure_grad(t);
                        for (gt, &gv) in self.grads[t.0].iter_mut().zip(g) {
                            *gt += gv;
                        }
                    }
                }
            }
            OpRecord::ScaleConst { x, c } => {
                let (x, c) = (*x, *c);
                if self.needs(x) {
                    self.ensure_grad(x);
                    for (gx, &gv) in self.grads[x.0].iter_mut().zip(g) {
                        *gx += gv * c;
                    }
                }
            }
            OpRecord::Reshape { x } => {
                let x = *x;
                if self.needs(x) {
                    self.ensure_grad(x);
                    for (gx, &gv) in self.grads[x.0].iter_mut().zip(g) {
                        *gx += gv;
                    }
                }
            }
            OpRecord::WeightedSum { x, coef } => {
                let x = *x;
                let coef = coef.clone();
                if self.needs(x) {
                    self.ensure_grad(x);
                    for (gx, &c) in self.grads[x.0].iter_mut().zip(&coef) {
                        *gx += g[0] * c;
                    }
                }
            }
            OpRecord::HuberLoss {
                pred,
                target,
                delta,
            } => {
                let (pred, delta) = (*pred, *delta);
                let target = target.clone();
                if self.needs(pred) {
                    self.ensure_grad(pred);
                    let n = target.len() as f64;
                    let (nodes, grads) = (&self.nodes, &mut self.grads);
                    let pdata = nodes[pred.0].value.data();
                    for (gp, (&p, &t)) in grads[pred.0]
                        .iter_mut()
                        .zip(pdata.iter().zip(&target))
                    {
                        let e = (p - t).clamp(-delta, delta);
                        *gp += g[0] * e / n;
                    }
                }
            }
            OpRecord::CrossEntropyLoss {
                logits,
                labels,
                probs,
            } => {
                let logits = *logits;
                let labels = labels.clone();
                let probs = probs.clone();
                let (bs, c) = {
                    let s = self.value(logits).shape();
                    (s[0], s[1])
                };
                if self.needs(logits) {
                    self.ensure_grad(logits);
                    let gl = &mut self.grads[logits.0];
                    for b in 0..bs {
                        for j in 0..c {
                            let ind = if labels[b] as usize == j { 1.0 } else { 0.0 };
                            gl[b * c + j] += g[0] * (probs[b * c + j] - ind) / bs as f64;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Adds each parameter leaf's gradient into the store. Call once per
    /// backward pass; safe when a parameter appears on several leaves.
    pub fn flush_param_grads(&self, store: &mut ParamStore) {
        for (node, grad) in self.nodes.iter().zip(&self.grads) {
            if let OpRecord::Leaf { param: Some(pid) } = node.op {
                if !grad.is_empty() {
                    let dst = &mut store.params[pid.0].grad;
                    for (d, &s) in dst.iter_mut().zip(grad) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Splitmix-style mix of a base seed and a site tag; used to give every
/// dropout site its own deterministic stream.
pub fn mix_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
