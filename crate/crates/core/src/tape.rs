//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] is an append-only arena of [`DiffTensor`] nodes. Forward ops
//! validate shapes, compute the output eagerly, and push one node recording
//! the operation and whatever it needs for the backward pass (argmax indices,
//! dropout masks, normalization statistics). [`Tape::backward`] seeds the loss
//! with 1 and sweeps the arena in reverse; because inputs always precede their
//! consumers, one pass suffices.
//!
//! The op set is intentionally exactly what the edge-convolution networks in
//! this crate need — no broadcasting rules beyond the few fixed patterns the
//! models use.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::value::{axis_parts, fmt_shape, numel, rows_last, Value};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that minted it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Whether stochastic/statistics-bearing layers run in training or inference form.
/// Dropout is the identity in `Eval`; batch-norm layers pick batch vs running stats.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One recorded tensor: its value, an optional gradient accumulator, and the
/// operation that produced it.
#[derive(Debug)]
pub struct DiffTensor<S: Scalar> {
    value: Value<S>,
    grad: Option<Vec<S>>,
    op: Op<S>,
}

impl<S: Scalar> DiffTensor<S> {
    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }
    pub fn data(&self) -> &[S] {
        self.value.data()
    }
    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }
}

#[derive(Debug)]
enum Op<S: Scalar> {
    Leaf,
    /// y = x · w + b over the last axis; x is treated as [rows, d_in].
    Linear { x: NodeId, w: NodeId, b: NodeId },
    /// Per-batch matrix product: [B,m,k] × [B,k,n] → [B,m,n].
    Bmm { a: NodeId, b: NodeId },
    LeakyRelu { x: NodeId, slope: S },
    /// Channels-last batch normalization with batch statistics (training form).
    /// `mean`/`invstd` are the per-channel statistics used in the forward pass.
    BatchNormTrain { x: NodeId, gamma: NodeId, beta: NodeId, mean: Vec<S>, invstd: Vec<S> },
    /// Channels-last batch normalization against fixed (running) statistics.
    BatchNormEval { x: NodeId, gamma: NodeId, beta: NodeId, mean: Vec<S>, invstd: Vec<S> },
    /// Max over one axis; ties resolve to the lowest index, which is also where
    /// the gradient is routed.
    ReduceMax { x: NodeId, axis: usize, argmax: Vec<u32> },
    Softmax { x: NodeId, axis: usize },
    /// Inverted dropout: survivors are pre-scaled by 1/(1-p) so evaluation is the identity.
    Dropout { x: NodeId, mask: Vec<bool>, scale: S },
    /// Mean cross-entropy from logits; stores softmax probabilities for the backward pass.
    CrossEntropy { logits: NodeId, labels: Vec<u32>, probs: Vec<S> },
    /// Row gather: x [B,N,D], idx [B·N·k] of row indices per cloud → [B,N,k,D].
    Gather { x: NodeId, idx: Vec<u32>, k: usize },
    ConcatLast { parts: Vec<NodeId> },
    SumAxis { x: NodeId, axis: usize },
    Scale { x: NodeId, c: S },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    /// a [.., M] * w [.., 1] with the last axis of `w` broadcast across M.
    MulBcastLast { a: NodeId, w: NodeId },
    /// Insert an axis of size `extent` at `axis` and repeat the data along it.
    ExpandDim { x: NodeId, axis: usize, extent: usize },
    /// Euclidean norm over the last axis → [.., 1]. Gradient at a zero vector is 0.
    NormLast { x: NodeId },
    SliceLast { x: NodeId, start: usize, len: usize },
    Reshape { x: NodeId },
}

pub struct Tape<S: Scalar> {
    nodes: Vec<DiffTensor<S>>,
    mode: Mode,
    bindings: BTreeMap<String, NodeId>,
}

impl<S: Scalar> Tape<S> {
    pub fn new(mode: Mode) -> Self {
        Tape {
            nodes: Vec::new(),
            mode,
            bindings: BTreeMap::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &DiffTensor<S> {
        &self.nodes[id.0]
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn data(&self, id: NodeId) -> &[S] {
        self.nodes[id.0].value.data()
    }

    pub fn value(&self, id: NodeId) -> &Value<S> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&[S]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, value: Value<S>, op: Op<S>) -> NodeId {
        self.nodes.push(DiffTensor {
            value,
            grad: None,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Registers an input tensor.
    pub fn leaf(&mut self, value: Value<S>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Binds a named parameter from `pset` as a leaf. Repeated binds of the
    /// same name return the same node, so a parameter shared by several layers
    /// accumulates one gradient.
    pub fn bind(&mut self, pset: &ParamSet<S>, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.bindings.get(name) {
            return Ok(id);
        }
        let entry = pset.entry(name)?;
        let id = self.push(entry.value.clone(), Op::Leaf);
        self.bindings.insert(name.to_string(), id);
        Ok(id)
    }

    /// Names bound on this tape (parameter name → node).
    pub fn bindings(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.bindings.iter().map(|(n, &id)| (n.as_str(), id))
    }

    /// Pre-binds `name` to an existing node, so later [`Tape::bind`] calls for
    /// that name resolve to `id` instead of cloning from the parameter set.
    /// Gradient checks use this to substitute probe leaves for parameters.
    pub fn bind_as(&mut self, name: &str, id: NodeId) -> Result<()> {
        if self.bindings.contains_key(name) {
            return Err(Error::Config(format!("'{name}' is already bound on this tape")));
        }
        self.bindings.insert(name.to_string(), id);
        Ok(())
    }

    // ── forward ops ──────────────────────────────────────────────────────

    /// y = x·w + b where x is [..., d_in], w is [d_in, d_out], b is [d_out].
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (rows, d_in) = rows_last(self.shape(x));
        let ws = self.shape(w);
        let bs = self.shape(b);
        if ws.len() != 2 || ws[0] != d_in {
            return Err(Error::shape(
                "linear: weight",
                format!("[{}, d_out]", d_in),
                fmt_shape(ws),
            ));
        }
        let d_out = ws[1];
        if bs != [d_out] {
            return Err(Error::shape("linear: bias", format!("[{}]", d_out), fmt_shape(bs)));
        }
        let xd = self.data(x);
        let wd = self.data(w);
        let bd = self.data(b);
        let mut out = vec![S::ZERO; rows * d_out];
        for r in 0..rows {
            let y_row = &mut out[r * d_out..(r + 1) * d_out];
            y_row.copy_from_slice(bd);
            let x_row = &xd[r * d_in..(r + 1) * d_in];
            for (i, &xv) in x_row.iter().enumerate() {
                let w_row = &wd[i * d_out..(i + 1) * d_out];
                for (y, &wv) in y_row.iter_mut().zip(w_row) {
                    *y += xv * wv;
                }
            }
        }
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().expect("linear input needs at least 1 axis") = d_out;
        let value = Value::new(shape, out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    /// Batched matrix product [B,m,k] × [B,k,n] → [B,m,n].
    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::shape(
                "bmm",
                "[B,m,k] x [B,k,n]",
                format!("{} x {}", fmt_shape(&sa), fmt_shape(&sb)),
            ));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let ad = self.data(a);
        let bd = self.data(b);
        let mut out = vec![S::ZERO; bs * m * n];
        for bi in 0..bs {
            let abase = bi * m * k;
            let bbase = bi * k * n;
            let obase = bi * m * n;
            for r in 0..m {
                let o_row = &mut out[obase + r * n..obase + (r + 1) * n];
                for i in 0..k {
                    let av = ad[abase + r * k + i];
                    let b_row = &bd[bbase + i * n..bbase + (i + 1) * n];
                    for (o, &bv) in o_row.iter_mut().zip(b_row) {
                        *o += av * bv;
                    }
                }
            }
        }
        let value = Value::new(vec![bs, m, n], out)?;
        Ok(self.push(value, Op::Bmm { a, b }))
    }

    /// max(x, slope·x). The derivative at exactly 0 is taken as `slope`.
    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        let s = S::from_f64(slope);
        let out: Vec<S> = self
            .data(x)
            .iter()
            .map(|&v| if v > S::ZERO { v } else { s * v })
            .collect();
        let value = Value::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, Op::LeakyRelu { x, slope: s }))
    }

    /// Batch normalization over all non-channel positions (channels = last axis),
    /// using statistics of this batch. Returns the node plus the per-channel batch
    /// mean and *unbiased* variance (both f64) for running-statistic updates.
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<(NodeId, Vec<f64>, Vec<f64>)> {
        let (positions, channels) = self.bn_check(x, gamma, beta)?;
        if positions < 2 {
            return Err(Error::Config(format!(
                "batch normalization in training mode needs at least 2 positions per channel \
                 to form usable statistics, got {positions}"
            )));
        }
        let xd = self.data(x);
        // Two-pass statistics accumulated in f64 regardless of working precision.
        let mut mean = vec![0.0f64; channels];
        for p in 0..positions {
            for c in 0..channels {
                mean[c] += xd[p * channels + c].to_f64();
            }
        }
        for m in mean.iter_mut() {
            *m /= positions as f64;
        }
        let mut var = vec![0.0f64; channels];
        for p in 0..positions {
            for c in 0..channels {
                let d = xd[p * channels + c].to_f64() - mean[c];
                var[c] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= positions as f64;
        }
        let invstd: Vec<S> = var
            .iter()
            .map(|&v| S::from_f64(1.0 / (v + eps).sqrt()))
            .collect();
        let mean_s: Vec<S> = mean.iter().map(|&m| S::from_f64(m)).collect();
        let id = self.bn_apply(x, gamma, beta, &mean_s, &invstd)?;
        let unbiased: Vec<f64> = var
            .iter()
            .map(|&v| v * positions as f64 / (positions as f64 - 1.0))
            .collect();
        self.nodes[id.0].op = Op::BatchNormTrain {
            x,
            gamma,
            beta,
            mean: mean_s,
            invstd,
        };
        Ok((id, mean, unbiased))
    }

    /// Batch normalization against fixed running statistics (inference form).
    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[S],
        running_var: &[S],
        eps: f64,
    ) -> Result<NodeId> {
        let (_, channels) = self.bn_check(x, gamma, beta)?;
        if running_mean.len() != channels || running_var.len() != channels {
            return Err(Error::shape(
                "batch_norm_eval: running statistics",
                format!("[{}]", channels),
                format!("[{}], [{}]", running_mean.len(), running_var.len()),
            ));
        }
        let invstd: Vec<S> = running_var
            .iter()
            .map(|&v| S::from_f64(1.0 / (v.to_f64() + eps).sqrt()))
            .collect();
        let mean = running_mean.to_vec();
        let id = self.bn_apply(x, gamma, beta, &mean, &invstd)?;
        self.nodes[id.0].op = Op::BatchNormEval {
            x,
            gamma,
            beta,
            mean,
            invstd,
        };
        Ok(id)
    }

    fn bn_check(&self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<(usize, usize)> {
        let xs = self.shape(x);
        if xs.is_empty() {
            return Err(Error::shape("batch_norm: input", "[.., channels]", fmt_shape(xs)));
        }
        let channels = *xs.last().expect("non-empty shape");
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            let s = self.shape(id);
            if s != [channels] {
                return Err(Error::shape(
                    format!("batch_norm: {name}"),
                    format!("[{}]", channels),
                    fmt_shape(s),
                ));
            }
        }
        Ok((numel(xs) / channels, channels))
    }

    fn bn_apply(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: &[S],
        invstd: &[S],
    ) -> Result<NodeId> {
        let channels = mean.len();
        let xd = self.data(x);
        let gd = self.data(gamma);
        let bd = self.data(beta);
        let mut out = vec![S::ZERO; xd.len()];
        for (pos, chunk) in xd.chunks_exact(channels).enumerate() {
            let o = &mut out[pos * channels..(pos + 1) * channels];
            for c in 0..channels {
                o[c] = gd[c] * ((chunk[c] - mean[c]) * invstd[c]) + bd[c];
            }
        }
        let value = Value::new(self.shape(x).to_vec(), out)?;
        // Placeholder op; the caller overwrites it with the right BN variant.
        Ok(self.push(value, Op::Leaf))
    }

    /// Maximum over `axis` (axis removed from the shape). Ties take the lowest
    /// index; the backward pass routes the gradient to that same index.
    pub fn reduce_max(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() {
            return Err(Error::shape(
                "reduce_max: axis",
                format!("axis < {}", xs.len()),
                format!("axis {}", axis),
            ));
        }
        let (outer, len, inner) = axis_parts(&xs, axis);
        if len == 0 {
            return Err(Error::shape("reduce_max", "non-empty axis", "axis of length 0"));
        }
        let xd = self.data(x);
        let mut out = vec![S::ZERO; outer * inner];
        let mut argmax = vec![0u32; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = xd[(o * len) * inner + i];
                let mut best_a = 0u32;
                for a in 1..len {
                    let v = xd[(o * len + a) * inner + i];
                    if v > best {
                        best = v;
                        best_a = a as u32;
                    }
                }
                out[o * inner + i] = best;
                argmax[o * inner + i] = best_a;
            }
        }
        let mut shape = xs.clone();
        shape.remove(axis);
        let value = Value::new(shape, out)?;
        Ok(self.push(value, Op::ReduceMax { x, axis, argmax }))
    }

    /// Numerically stable softmax along `axis` (max subtraction before exp).
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() {
            return Err(Error::shape(
                "softmax: axis",
                format!("axis < {}", xs.len()),
                format!("axis {}", axis),
            ));
        }
        let (outer, len, inner) = axis_parts(&xs, axis);
        let xd = self.data(x);
        let mut out = vec![S::ZERO; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let mut m = S::neg_infinity();
                for a in 0..len {
                    m = m.max_s(xd[at(a)]);
                }
                let mut sum = S::ZERO;
                for a in 0..len {
                    let e = (xd[at(a)] - m).exp_s();
                    out[at(a)] = e;
                    sum += e;
                }
                for a in 0..len {
                    out[at(a)] /= sum;
                }
            }
        }
        let value = Value::new(xs, out)?;
        Ok(self.push(value, Op::Softmax { x, axis }))
    }

    /// Inverted dropout with keep probability 1-p. Identity (same node) in
    /// evaluation mode or when p == 0; no randomness is consumed in either case.
    pub fn dropout(&mut self, x: NodeId, p: f64, rng: &mut ChaCha8Rng) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability must be in [0, 1), got {p}")));
        }
        if self.mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let scale = S::from_f64(1.0 / (1.0 - p));
        let xd = self.data(x);
        let mut mask = vec![false; xd.len()];
        let mut out = vec![S::ZERO; xd.len()];
        for i in 0..xd.len() {
            let keep = rng.gen::<f64>() >= p;
            mask[i] = keep;
            if keep {
                out[i] = xd[i] * scale;
            }
        }
        let value = Value::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, Op::Dropout { x, mask, scale }))
    }

    /// Mean cross-entropy over rows of `logits` [R, C] against integer labels,
    /// computed in log space (max-subtracted log-sum-exp). Output is a scalar.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[u32]) -> Result<NodeId> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 2 {
            return Err(Error::shape("cross_entropy: logits", "[rows, classes]", fmt_shape(&ls)));
        }
        let (rows, classes) = (ls[0], ls[1]);
        if labels.len() != rows {
            return Err(Error::shape(
                "cross_entropy: labels",
                format!("{} labels", rows),
                format!("{} labels", labels.len()),
            ));
        }
        if rows == 0 {
            return Err(Error::shape("cross_entropy", "at least one row", "[0, _]"));
        }
        for (r, &l) in labels.iter().enumerate() {
            if l as usize >= classes {
                return Err(Error::Config(format!(
                    "cross_entropy: label {l} at row {r} out of range for {classes} classes"
                )));
            }
        }
        let xd = self.data(logits);
        let mut probs = vec![S::ZERO; xd.len()];
        let mut total = 0.0f64;
        for r in 0..rows {
            let row = &xd[r * classes..(r + 1) * classes];
            let mut m = S::neg_infinity();
            for &v in row {
                m = m.max_s(v);
            }
            let mut sum = 0.0f64;
            for (c, &v) in row.iter().enumerate() {
                let e = (v - m).exp_s();
                probs[r * classes + c] = e;
                sum += e.to_f64();
            }
            for c in 0..classes {
                probs[r * classes + c] = S::from_f64(probs[r * classes + c].to_f64() / sum);
            }
            let z_y = row[labels[r] as usize];
            total += m.to_f64() + sum.ln() - z_y.to_f64();
        }
        let loss = S::from_f64(total / rows as f64);
        let value = Value::new(Vec::new(), vec![loss])?;
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Gathers rows per cloud: x [B,N,D], idx [B·N·k] → out [B,N,k,D], where
    /// idx[(b·N + i)·k + m] names the m-th source row inside cloud b.
    pub fn gather(&mut self, x: NodeId, idx: &[u32], k: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::shape("gather: input", "[B, N, D]", fmt_shape(&xs)));
        }
        let (b, n, d) = (xs[0], xs[1], xs[2]);
        if idx.len() != b * n * k || k == 0 {
            return Err(Error::shape(
                "gather: index table",
                format!("[{}] (B·N·k with k ≥ 1)", b * n * k.max(1)),
                format!("[{}]", idx.len()),
            ));
        }
        if let Some(bad) = idx.iter().position(|&j| j as usize >= n) {
            return Err(Error::Config(format!(
                "gather: neighbor index {} at position {bad} out of range for {n} points",
                idx[bad]
            )));
        }
        let xd = self.data(x);
        let mut out = vec![S::ZERO; b * n * k * d];
        for bi in 0..b {
            for i in 0..n {
                for m in 0..k {
                    let j = idx[(bi * n + i) * k + m] as usize;
                    let src = &xd[(bi * n + j) * d..(bi * n + j + 1) * d];
                    let dst_base = ((bi * n + i) * k + m) * d;
                    out[dst_base..dst_base + d].copy_from_slice(src);
                }
            }
        }
        let value = Value::new(vec![b, n, k, d], out)?;
        Ok(self.push(
            value,
            Op::Gather {
                x,
                idx: idx.to_vec(),
                k,
            },
        ))
    }

    /// Concatenates along the last axis; all parts must agree on leading dims.
    pub fn concat_last(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Config("concat_last: no inputs".into()));
        }
        let lead = {
            let s = self.shape(parts[0]);
            if s.is_empty() {
                return Err(Error::shape("concat_last", "rank >= 1 inputs", "[]"));
            }
            s[..s.len() - 1].to_vec()
        };
        let mut lasts = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::shape(
                    "concat_last: leading dims",
                    format!("{:?} ++ [_]", lead),
                    fmt_shape(s),
                ));
            }
            lasts.push(*s.last().expect("checked non-empty"));
        }
        let total: usize = lasts.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = vec![S::ZERO; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&lasts) {
            let pd = self.data(p);
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&pd[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let mut shape = lead;
        shape.push(total);
        let value = Value::new(shape, out)?;
        Ok(self.push(
            value,
            Op::ConcatLast {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn sum_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() {
            return Err(Error::shape(
                "sum_axis: axis",
                format!("axis < {}", xs.len()),
                format!("axis {}", axis),
            ));
        }
        let (outer, len, inner) = axis_parts(&xs, axis);
        let xd = self.data(x);
        let mut out = vec![S::ZERO; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, &v) in dst.iter_mut().zip(&xd[base..base + inner]) {
                    *d += v;
                }
            }
        }
        let mut shape = xs.clone();
        shape.remove(axis);
        let value = Value::new(shape, out)?;
        Ok(self.push(value, Op::SumAxis { x, axis }))
    }

    /// Arithmetic mean along `axis`, computed as sum · (1/len).
    pub fn mean_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let xs = self.shape(x);
        if axis >= xs.len() {
            return Err(Error::shape(
                "mean_axis: axis",
                format!("axis < {}", xs.len()),
                format!("axis {}", axis),
            ));
        }
        let len = xs[axis];
        if len == 0 {
            return Err(Error::shape("mean_axis", "non-empty axis", "axis of length 0"));
        }
        let s = self.sum_axis(x, axis)?;
        self.scale(s, 1.0 / len as f64)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        let cs = S::from_f64(c);
        let out: Vec<S> = self.data(x).iter().map(|&v| v * cs).collect();
        let value = Value::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, Op::Scale { x, c: cs }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let out: Vec<S> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Value::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let out: Vec<S> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x - y)
            .collect();
        let value = Value::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(value, Op::Sub { a, b }))
    }

    /// Elementwise (Hadamard) product of same-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let out: Vec<S> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Value::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(value, Op::Mul { a, b }))
    }

    /// a [.., M] × w [.., 1] with w broadcast over the last axis of a.
    pub fn mul_bcast_last(&mut self, a: NodeId, w: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        let sw = self.shape(w).to_vec();
        let ok = !sa.is_empty()
            && sw.len() == sa.len()
            && sw[..sw.len() - 1] == sa[..sa.len() - 1]
            && *sw.last().expect("checked") == 1;
        if !ok {
            return Err(Error::shape(
                "mul_bcast_last",
                format!("{:?} with last dim 1", &sa),
                fmt_shape(&sw),
            ));
        }
        let m = *sa.last().expect("checked");
        let ad = self.data(a);
        let wd = self.data(w);
        let mut out = vec![S::ZERO; ad.len()];
        for (row, chunk) in ad.chunks_exact(m).enumerate() {
            let wv = wd[row];
            let dst = &mut out[row * m..(row + 1) * m];
            for (d, &v) in dst.iter_mut().zip(chunk) {
                *d = v * wv;
            }
        }
        let value = Value::new(sa, out)?;
        Ok(self.push(value, Op::MulBcastLast { a, w }))
    }

    /// Inserts an axis of size `extent` at `axis`, repeating data along it.
    pub fn expand_dim(&mut self, x: NodeId, axis: usize, extent: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if axis > xs.len() || extent == 0 {
            return Err(Error::shape(
                "expand_dim",
                format!("axis <= {} and extent >= 1", xs.len()),
                format!("axis {}, extent {}", axis, extent),
            ));
        }
        let outer: usize = xs[..axis].iter().product();
        let rest: usize = xs[axis..].iter().product();
        let xd = self.data(x);
        let mut out = vec![S::ZERO; outer * extent * rest];
        for o in 0..outer {
            let src = &xd[o * rest..(o + 1) * rest];
            for e in 0..extent {
                let base = (o * extent + e) * rest;
                out[base..base + rest].copy_from_slice(src);
            }
        }
        let mut shape = xs.clone();
        shape.insert(axis, extent);
        let value = Value::new(shape, out)?;
        Ok(self.push(value, Op::ExpandDim { x, axis, extent }))
    }

    /// Euclidean norm over the last axis → [.., 1]. The zero vector gets
    /// gradient 0 (the subgradient convention; central differences agree).
    pub fn norm_last(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        if xs.is_empty() {
            return Err(Error::shape("norm_last", "rank >= 1 input", "[]"));
        }
        let c = *xs.last().expect("checked");
        let xd = self.data(x);
        let mut out = Vec::with_capacity(xd.len() / c.max(1));
        for chunk in xd.chunks_exact(c) {
            let mut s = S::ZERO;
            for &v in chunk {
                s += v * v;
            }
            out.push(s.sqrt_s());
        }
        let mut shape = xs.clone();
        *shape.last_mut().expect("checked") = 1;
        let value = Value::new(shape, out)?;
        Ok(self.push(value, Op::NormLast { x }))
    }

    pub fn slice_last(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let c = *xs.last().ok_or_else(|| Error::shape("slice_last", "rank >= 1 input", "[]"))?;
        if start + len > c || len == 0 {
            return Err(Error::shape(
                "slice_last: range",
                format!("start + len <= {} with len >= 1", c),
                format!("start {}, len {}", start, len),
            ));
        }
        let xd = self.data(x);
        let rows = xd.len() / c;
        let mut out = vec![S::ZERO; rows * len];
        for r in 0..rows {
            out[r * len..(r + 1) * len].copy_from_slice(&xd[r * c + start..r * c + start + len]);
        }
        let mut shape = xs.clone();
        *shape.last_mut().expect("checked") = len;
        let value = Value::new(shape, out)?;
        Ok(self.push(value, Op::SliceLast { x, start, len }))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        if numel(shape) != numel(self.shape(x)) {
            return Err(Error::shape(
                "reshape",
                format!("{} elements", numel(self.shape(x))),
                format!("{:?} = {} elements", shape, numel(shape)),
            ));
        }
        let value = Value::new(shape.to_vec(), self.data(x).to_vec())?;
        Ok(self.push(value, Op::Reshape { x }))
    }

    fn same_shape(&self, ctx: &str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                ctx,
                fmt_shape(self.shape(a)),
                fmt_shape(self.shape(b)),
            ));
        }
        Ok(())
    }

    // ── backward ─────────────────────────────────────────────────────────

    /// Reverse sweep from `loss` (which must be scalar). Gradients accumulate
    /// into every node; calling backward again without clearing adds another
    /// copy of the derivatives (callers normally use one tape per step).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let n = self.nodes.len();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::shape(
                "backward: loss",
                "scalar (1 element)",
                fmt_shape(self.nodes[loss.0].value.shape()),
            ));
        }
        // Sweep in fresh buffers, then fold into any previously stored
        // gradients, so each call contributes exactly one copy.
        let mut grads: Vec<Vec<S>> = self
            .nodes
            .iter()
            .map(|node| vec![S::ZERO; node.value.numel()])
            .collect();
        grads[loss.0][0] = S::ONE;

        for i in (0..n).rev() {
            let (lower, upper) = grads.split_at_mut(i);
            let gout: &[S] = &upper[0];
            self.backward_op(i, gout, lower);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            match &mut node.grad {
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(g) {
                        *a += v;
                    }
                }
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    /// Applies the vector-Jacobian product of node `i`, scattering into the
    /// gradients of its inputs (all of which live at indices < i).
    fn backward_op(&self, i: usize, gout: &[S], grads: &mut [Vec<S>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (rows, d_in) = rows_last(self.shape(*x));
                let d_out = self.shape(*w)[1];
                let xd = self.data(*x);
                let wd = self.data(*w);
                {
                    let gx = &mut grads[x.0];
                    for r in 0..rows {
                        let dy = &gout[r * d_out..(r + 1) * d_out];
                        let gx_row = &mut gx[r * d_in..(r + 1) * d_in];
                        for i2 in 0..d_in {
                            let w_row = &wd[i2 * d_out..(i2 + 1) * d_out];
                            let mut acc = S::ZERO;
                            for (dv, wv) in dy.iter().zip(w_row) {
                                acc += *dv * *wv;
                            }
                            gx_row[i2] += acc;
                        }
                    }
                }
                {
                    let gw = &mut grads[w.0];
                    for r in 0..rows {
                        let dy = &gout[r * d_out..(r + 1) * d_out];
                        let x_row = &xd[r * d_in..(r + 1) * d_in];
                        for (i2, &xv) in x_row.iter().enumerate() {
                            let gw_row = &mut gw[i2 * d_out..(i2 + 1) * d_out];
                            for (g, &dv) in gw_row.iter_mut().zip(dy) {
                                *g += xv * dv;
                            }
                        }
                    }
                }
                {
                    let gb = &mut grads[b.0];
                    for r in 0..rows {
                        let dy = &gout[r * d_out..(r + 1) * d_out];
                        for (g, &dv) in gb.iter_mut().zip(dy) {
                            *g += dv;
                        }
                    }
                }
            }
            Op::Bmm { a, b } => {
                let sa = self.shape(*a);
                let sb = self.shape(*b);
                let (bs, m, k, n2) = (sa[0], sa[1], sa[2], sb[2]);
                let ad = self.data(*a);
                let bd = self.data(*b);
                {
                    let ga = &mut grads[a.0];
                    for bi in 0..bs {
                        for r in 0..m {
                            let dy = &gout[bi * m * n2 + r * n2..bi * m * n2 + (r + 1) * n2];
                            for i2 in 0..k {
                                let b_row = &bd[bi * k * n2 + i2 * n2..bi * k * n2 + (i2 + 1) * n2];
                                let mut acc = S::ZERO;
                                for (dv, bv) in dy.iter().zip(b_row) {
                                    acc += *dv * *bv;
                                }
                                ga[bi * m * k + r * k + i2] += acc;
                            }
                        }
                    }
                }
                {
                    let gb = &mut grads[b.0];
                    for bi in 0..bs {
                        for r in 0..m {
                            let dy = &gout[bi * m * n2 + r * n2..bi * m * n2 + (r + 1) * n2];
                            for i2 in 0..k {
                                let av = ad[bi * m * k + r * k + i2];
                                let gb_row =
                                    &mut gb[bi * k * n2 + i2 * n2..bi * k * n2 + (i2 + 1) * n2];
                                for (g, &dv) in gb_row.iter_mut().zip(dy) {
                                    *g += av * dv;
                                }
                            }
                        }
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xd = self.data(*x);
                let gx = &mut grads[x.0];
                for (j, &dv) in gout.iter().enumerate() {
                    gx[j] += if xd[j] > S::ZERO { dv } else { *slope * dv };
                }
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                mean,
                invstd,
            } => {
                let channels = mean.len();
                let xd = self.data(*x);
                let gd = self.data(*gamma);
                let positions = xd.len() / channels;
                // Per-channel reductions in f64 for stability at f32 working precision.
                let mut sdy = vec![0.0f64; channels];
                let mut sdyx = vec![0.0f64; channels];
                for p in 0..positions {
                    for c in 0..channels {
                        let j = p * channels + c;
                        let xhat = ((xd[j] - mean[c]) * invstd[c]).to_f64();
                        let dy = gout[j].to_f64();
                        sdy[c] += dy;
                        sdyx[c] += dy * xhat;
                    }
                }
                {
                    let gg = &mut grads[gamma.0];
                    for c in 0..channels {
                        gg[c] += S::from_f64(sdyx[c]);
                    }
                }
                {
                    let gb = &mut grads[beta.0];
                    for c in 0..channels {
                        gb[c] += S::from_f64(sdy[c]);
                    }
                }
                {
                    let gx = &mut grads[x.0];
                    let pf = positions as f64;
                    for p in 0..positions {
                        for c in 0..channels {
                            let j = p * channels + c;
                            let xhat = ((xd[j] - mean[c]) * invstd[c]).to_f64();
                            let dy = gout[j].to_f64();
                            let v = gd[c].to_f64() * invstd[c].to_f64()
                                * (dy - (sdy[c] + xhat * sdyx[c]) / pf);
                            gx[j] += S::from_f64(v);
                        }
                    }
                }
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean,
                invstd,
            } => {
                let channels = mean.len();
                let xd = self.data(*x);
                let gd = self.data(*gamma);
                let positions = xd.len() / channels;
                {
                    let gx = &mut grads[x.0];
                    for p in 0..positions {
                        for c in 0..channels {
                            let j = p * channels + c;
                            gx[j] += gout[j] * gd[c] * invstd[c];
                        }
                    }
                }
                {
                    let gg = &mut grads[gamma.0];
                    for p in 0..positions {
                        for c in 0..channels {
                            let j = p * channels + c;
                            gg[c] += gout[j] * (xd[j] - mean[c]) * invstd[c];
                        }
                    }
                }
                {
                    let gb = &mut grads[beta.0];
                    for p in 0..positions {
                        for c in 0..channels {
                            gb[c] += gout[p * channels + c];
                        }
                    }
                }
            }
            Op::ReduceMax { x, axis, argmax } => {
                let (_, len, inner) = axis_parts(self.shape(*x), *axis);
                let gx = &mut grads[x.0];
                for (oi, &a) in argmax.iter().enumerate() {
                    let o = oi / inner;
                    let i2 = oi % inner;
                    gx[(o * len + a as usize) * inner + i2] += gout[oi];
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_parts(self.shape(*x), *axis);
                let sd = self.data(NodeId(i));
                let gx = &mut grads[x.0];
                for o in 0..outer {
                    for i2 in 0..inner {
                        let at = |a: usize| (o * len + a) * inner + i2;
                        let mut dot = S::ZERO;
                        for a in 0..len {
                            dot += gout[at(a)] * sd[at(a)];
                        }
                        for a in 0..len {
                            gx[at(a)] += sd[at(a)] * (gout[at(a)] - dot);
                        }
                    }
                }
            }
            Op::Dropout { x, mask, scale } => {
                let gx = &mut grads[x.0];
                for (j, &keep) in mask.iter().enumerate() {
                    if keep {
                        gx[j] += gout[j] * *scale;
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let classes = self.shape(*logits)[1];
                let rows = labels.len();
                let g = gout[0];
                let inv_rows = S::from_f64(1.0 / rows as f64);
                let gl = &mut grads[logits.0];
                for r in 0..rows {
                    let y = labels[r] as usize;
                    for c in 0..classes {
                        let j = r * classes + c;
                        let indicator = if c == y { S::ONE } else { S::ZERO };
                        gl[j] += g * inv_rows * (probs[j] - indicator);
                    }
                }
            }
            Op::Gather { x, idx, k } => {
                let xs = self.shape(*x);
                let (b, n, d) = (xs[0], xs[1], xs[2]);
                let gx = &mut grads[x.0];
                for bi in 0..b {
                    for i2 in 0..n {
                        for m in 0..*k {
                            let j = idx[(bi * n + i2) * k + m] as usize;
                            let src = &gout[((bi * n + i2) * k + m) * d..((bi * n + i2) * k + m + 1) * d];
                            let dst = &mut gx[(bi * n + j) * d..(bi * n + j + 1) * d];
                            for (gv, &sv) in dst.iter_mut().zip(src) {
                                *gv += sv;
                            }
                        }
                    }
                }
            }
            Op::ConcatLast { parts } => {
                let total = *self.shape(NodeId(i)).last().expect("concat output has rank >= 1");
                let rows = gout.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let w = *self.shape(p).last().expect("concat parts have rank >= 1");
                    let gp = &mut grads[p.0];
                    for r in 0..rows {
                        let src = &gout[r * total + offset..r * total + offset + w];
                        let dst = &mut gp[r * w..(r + 1) * w];
                        for (gv, &sv) in dst.iter_mut().zip(src) {
                            *gv += sv;
                        }
                    }
                    offset += w;
                }
            }
            Op::SumAxis { x, axis } => {
                let (outer, len, inner) = axis_parts(self.shape(*x), *axis);
                let gx = &mut grads[x.0];
                for o in 0..outer {
                    let src = &gout[o * inner..(o + 1) * inner];
                    for a in 0..len {
                        let dst = &mut gx[(o * len + a) * inner..(o * len + a + 1) * inner];
                        for (gv, &sv) in dst.iter_mut().zip(src) {
                            *gv += sv;
                        }
                    }
                }
            }
            Op::Scale { x, c } => {
                let gx = &mut grads[x.0];
                for (gv, &dv) in gx.iter_mut().zip(gout) {
                    *gv += *c * dv;
                }
            }
            Op::Add { a, b } => {
                {
                    let ga = &mut grads[a.0];
                    for (gv, &dv) in ga.iter_mut().zip(gout) {
                        *gv += dv;
                    }
                }
                let gb = &mut grads[b.0];
                for (gv, &dv) in gb.iter_mut().zip(gout) {
                    *gv += dv;
                }
            }
            Op::Sub { a, b } => {
                {
                    let ga = &mut grads[a.0];
                    for (gv, &dv) in ga.iter_mut().zip(gout) {
                        *gv += dv;
                    }
                }
                let gb = &mut grads[b.0];
                for (gv, &dv) in gb.iter_mut().zip(gout) {
                    *gv -= dv;
                }
            }
            Op::Mul { a, b } => {
                let ad = self.data(*a);
                let bd = self.data(*b);
                // a == b (squaring) still accumulates correctly: two sequential adds.
                {
                    let ga = &mut grads[a.0];
                    for (j, gv) in ga.iter_mut().enumerate() {
                        *gv += gout[j] * bd[j];
                    }
                }
                let gb = &mut grads[b.0];
                for (j, gv) in gb.iter_mut().enumerate() {
                    *gv += gout[j] * ad[j];
                }
            }
            Op::MulBcastLast { a, w } => {
                let m = *self.shape(*a).last().expect("rank checked at creation");
                let ad = self.data(*a);
                let wd = self.data(*w);
                {
                    let ga = &mut grads[a.0];
                    for (row, chunk) in ga.chunks_exact_mut(m).enumerate() {
                        let wv = wd[row];
                        let dy = &gout[row * m..(row + 1) * m];
                        for (gv, &dv) in chunk.iter_mut().zip(dy) {
                            *gv += dv * wv;
                        }
                    }
                }
                {
                    let gw = &mut grads[w.0];
                    for (row, gv) in gw.iter_mut().enumerate() {
                        let dy = &gout[row * m..(row + 1) * m];
                        let av = &ad[row * m..(row + 1) * m];
                        let mut acc = S::ZERO;
                        for (&dv, &a2) in dy.iter().zip(av) {
                            acc += dv * a2;
                        }
                        *gv += acc;
                    }
                }
            }
            Op::ExpandDim { x, axis, extent } => {
                let xs = self.shape(*x);
                let outer: usize = xs[..*axis].iter().product();
                let rest: usize = xs[*axis..].iter().product();
                let gx = &mut grads[x.0];
                for o in 0..outer {
                    for e in 0..*extent {
                        let src = &gout[(o * extent + e) * rest..(o * extent + e + 1) * rest];
                        let dst = &mut gx[o * rest..(o + 1) * rest];
                        for (gv, &sv) in dst.iter_mut().zip(src) {
                            *gv += sv;
                        }
                    }
                }
            }
            Op::NormLast { x } => {
                let c = *self.shape(*x).last().expect("rank checked at creation");
                let xd = self.data(*x);
                let rd = self.data(NodeId(i));
                let gx = &mut grads[x.0];
                for (row, chunk) in gx.chunks_exact_mut(c).enumerate() {
                    let r = rd[row];
                    if r == S::ZERO {
                        continue; // subgradient 0 at the kink
                    }
                    let g = gout[row] / r;
                    for (gv, &xv) in chunk.iter_mut().zip(&xd[row * c..(row + 1) * c]) {
                        *gv += g * xv;
                    }
                }
            }
            Op::SliceLast { x, start, len } => {
                let c = *self.shape(*x).last().expect("rank checked at creation");
                let gx = &mut grads[x.0];
                let rows = gout.len() / len;
                for r in 0..rows {
                    let src = &gout[r * len..(r + 1) * len];
                    let dst = &mut gx[r * c + start..r * c + start + len];
                    for (gv, &sv) in dst.iter_mut().zip(src) {
                        *gv += sv;
                    }
                }
            }
            Op::Reshape { x } => {
                let gx = &mut grads[x.0];
                for (gv, &dv) in gx.iter_mut().zip(gout) {
                    *gv += dv;
                }
            }
        }
    }

    /// Adds the gradients of every bound trainable parameter into `pset`.
    /// Requires a prior [`Tape::backward`] call.
    pub fn grads_into(&self, pset: &mut ParamSet<S>) -> Result<()> {
        for (name, &id) in &self.bindings {
            let node = &self.nodes[id.0];
            let grad = node.grad.as_deref().ok_or_else(|| {
                Error::Config(format!(
                    "grads_into: no gradient recorded for '{name}'; call backward first"
                ))
            })?;
            if pset.entry(name)?.trainable {
                pset.accumulate_grad(name, grad)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn val(shape: &[usize], vals: &[f64]) -> Value<f64> {
        Value::from_f64s(shape, vals).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn linear_matches_hand_computation() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(val(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let w = t.leaf(val(&[3, 2], &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]));
        let b = t.leaf(val(&[2], &[0.5, -0.5]));
        let y = t.linear(x, w, b).unwrap();
        assert_eq!(t.shape(y), &[2, 2]);
        // row0: [1+3, 2+3] + b, row1: [4+6, 5+6] + b
        assert_eq!(t.data(y), &[4.5, 4.5, 10.5, 10.5]);
    }

    #[test]
    fn linear_rejects_mismatched_weight() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(Value::zeros(&[2, 3]));
        let w = t.leaf(Value::zeros(&[4, 2]));
        let b = t.leaf(Value::zeros(&[2]));
        let e = t.linear(x, w, b).unwrap_err().to_string();
        assert!(e.contains("[3, d_out]") && e.contains("[4, 2]"), "{e}");
    }

    #[test]
    fn linear_backward_analytic() {
        // loss = sum(y) so dL/db = rows, dL/dW[i,o] = sum_r x[r,i], dL/dx = row sums of W.
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(val(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = t.leaf(val(&[2, 2], &[1.0, -1.0, 0.5, 2.0]));
        let b = t.leaf(val(&[2], &[0.0, 0.0]));
        let y = t.linear(x, w, b).unwrap();
        let flat = t.reshape(y, &[4]).unwrap();
        let loss = t.sum_axis(flat, 0).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(b).unwrap(), &[2.0, 2.0]);
        assert_eq!(t.grad(w).unwrap(), &[4.0, 4.0, 6.0, 6.0]);
        assert_eq!(t.grad(x).unwrap(), &[0.0, 2.5, 0.0, 2.5]);
    }

    #[test]
    fn leaky_relu_grad_at_zero_is_slope() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(val(&[3], &[-2.0, 0.0, 3.0]));
        let y = t.leaky_relu(x, 0.2).unwrap();
        assert_eq!(t.data(y), &[-0.4, 0.0, 3.0]);
        let s = t.sum_axis(y, 0).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.2, 0.2, 1.0]);
    }

    #[test]
    fn batch_norm_train_normalizes_channels() {
        let mut t = Tape::<f64>::new(Mode::Train);
        let x = t.leaf(val(&[4, 2], &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]));
        let gamma = t.leaf(Value::full(&[2], 1.0));
        let beta = t.leaf(Value::zeros(&[2]));
        let (y, mean, var) = t.batch_norm_train(x, gamma, beta, 1e-5).unwrap();
        assert!((mean[0] - 2.5).abs() < 1e-12 && (mean[1] - 25.0).abs() < 1e-12);
        // Unbiased variance of {1,2,3,4} is 5/3.
        assert!((var[0] - 5.0 / 3.0).abs() < 1e-12);
        let yd = t.data(y);
        for c in 0..2 {
            let m: f64 = (0..4).map(|p| yd[p * 2 + c]).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-6, "channel {c} mean {m}");
        }
    }

    #[test]
    fn batch_norm_train_rejects_single_position() {
        let mut t = Tape::<f64>::new(Mode::Train);
        let x = t.leaf(Value::zeros(&[1, 3]));
        let gamma = t.leaf(Value::full(&[3], 1.0));
        let beta = t.leaf(Value::zeros(&[3]));
        let e = t.batch_norm_train(x, gamma, beta, 1e-5).unwrap_err().to_string();
        assert!(e.contains("statistics"), "{e}");
    }

    #[test]
    fn batch_norm_eval_uses_given_stats() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(val(&[1, 2], &[3.0, 8.0]));
        let gamma = t.leaf(val(&[2], &[2.0, 1.0]));
        let beta = t.leaf(val(&[2], &[0.0, 1.0]));
        let y = t
            .batch_norm_eval(x, gamma, beta, &[1.0, 0.0], &[4.0, 16.0], 0.0)
            .unwrap();
        let yd = t.data(y);
        assert!((yd[0] - 2.0 * (3.0 - 1.0) / 2.0).abs() < 1e-12);
        assert!((yd[1] - (8.0 / 4.0 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn reduce_max_routes_gradient_to_lowest_tied_index() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(val(&[4], &[1.0, 5.0, 5.0, 2.0]));
        let y = t.reduce_max(x, 0).unwrap();
        assert_eq!(t.data(y), &[5.0]);
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn reduce_max_over_middle_axis() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(val(&[2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 8.0, 7.0, 6.0, 5.0]));
        let y = t.reduce_max(x, 1).unwrap();
        assert_eq!(t.shape(y), &[2, 2]);
        assert_eq!(t.data(y), &[3.0, 4.0, 8.0, 7.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_is_stable() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(val(&[2, 3], &[1.0, 2.0, 3.0, 1001.0, 1002.0, 1003.0]));
        let y = t.softmax(x, 1).unwrap();
        let yd = t.data(y);
        for r in 0..2 {
            let s: f64 = yd[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // Shifting logits by a constant leaves softmax unchanged.
        for c in 0..3 {
            assert!((yd[c] - yd[3 + c]).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_eval_and_p0_are_identity_nodes() {
        let mut r = rng();
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(val(&[4], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(t.dropout(x, 0.5, &mut r).unwrap(), x);

        let mut t = Tape::<f64>::new(Mode::Train);
        let x = t.leaf(val(&[4], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(t.dropout(x, 0.0, &mut r).unwrap(), x);
    }

    #[test]
    fn dropout_train_zeroes_and_rescales() {
        let mut r = rng();
        let mut t = Tape::<f64>::new(Mode::Train);
        let n = 10_000;
        let x = t.leaf(Value::full(&[n], 1.0));
        let y = t.dropout(x, 0.3, &mut r).unwrap();
        let yd = t.data(y);
        let kept = yd.iter().filter(|&&v| v != 0.0).count();
        let frac = kept as f64 / n as f64;
        assert!((frac - 0.7).abs() < 0.02, "kept fraction {frac}");
        for &v in yd {
            assert!(v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_uniform_and_spiked_logits() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(Value::zeros(&[1, 40]));
        let l = t.cross_entropy(x, &[7]).unwrap();
        assert!((t.data(l)[0] - (40.0f64).ln()).abs() < 1e-12);

        let mut logits = vec![0.0; 10];
        logits[3] = 1000.0;
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(val(&[1, 10], &logits));
        let l = t.cross_entropy(x, &[3]).unwrap();
        assert!(t.data(l)[0].abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(Value::zeros(&[2, 3]));
        assert!(t.cross_entropy(x, &[0, 3]).is_err());
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(val(&[1, 3], &[1.0, 2.0, 3.0]));
        let l = t.cross_entropy(x, &[2]).unwrap();
        t.backward(l).unwrap();
        let g = t.grad(x).unwrap();
        let z: f64 = (1.0f64).exp() + (2.0f64).exp() + (3.0f64).exp();
        let p: Vec<f64> = [1.0, 2.0, 3.0].iter().map(|v: &f64| v.exp() / z).collect();
        assert!((g[0] - p[0]).abs() < 1e-12);
        assert!((g[1] - p[1]).abs() < 1e-12);
        assert!((g[2] - (p[2] - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn gather_collects_rows_and_scatters_grads() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        // One cloud, 3 points, 2 channels.
        let x = t.leaf(val(&[1, 3, 2], &[0.0, 1.0, 10.0, 11.0, 20.0, 21.0]));
        let idx = [0u32, 2, 1, 1, 2, 2];
        let y = t.gather(x, &idx, 2).unwrap();
        assert_eq!(t.shape(y), &[1, 3, 2, 2]);
        assert_eq!(
            t.data(y),
            &[0.0, 1.0, 20.0, 21.0, 10.0, 11.0, 10.0, 11.0, 20.0, 21.0, 20.0, 21.0]
        );
        let flat = t.reshape(y, &[12]).unwrap();
        let loss = t.sum_axis(flat, 0).unwrap();
        t.backward(loss).unwrap();
        // In-degrees: point0 ×1, point1 ×2, point2 ×3 → per-channel grads equal those counts.
        assert_eq!(t.grad(x).unwrap(), &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn gather_rejects_out_of_range_index() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(Value::zeros(&[1, 3, 2]));
        assert!(t.gather(x, &[0, 3, 1, 1, 2, 2], 2).is_err());
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let a = t.leaf(val(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = t.leaf(val(&[2, 1], &[9.0, 8.0]));
        let c = t.concat_last(&[a, b]).unwrap();
        assert_eq!(t.shape(c), &[2, 3]);
        assert_eq!(t.data(c), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
        let back = t.slice_last(c, 0, 2).unwrap();
        assert_eq!(t.data(back), t.data(a));
        let tail = t.slice_last(c, 2, 1).unwrap();
        assert_eq!(t.data(tail), t.data(b));
    }

    #[test]
    fn expand_dim_repeats_and_backward_sums() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(val(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = t.expand_dim(x, 1, 3).unwrap();
        assert_eq!(t.shape(y), &[2, 3, 2]);
        assert_eq!(
            t.data(y),
            &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0, 3.0, 4.0]
        );
        let flat = t.reshape(y, &[12]).unwrap();
        let loss = t.sum_axis(flat, 0).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[3.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn norm_last_zero_vector_gets_zero_grad() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(val(&[2, 3], &[3.0, 4.0, 0.0, 0.0, 0.0, 0.0]));
        let y = t.norm_last(x).unwrap();
        assert_eq!(t.data(y), &[5.0, 0.0]);
        let flat = t.reshape(y, &[2]).unwrap();
        let loss = t.sum_axis(flat, 0).unwrap();
        t.backward(loss).unwrap();
        let g = t.grad(x).unwrap();
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
        assert_eq!(&g[3..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(val(&[2], &[1.0, 2.0]));
        let loss = t.sum_axis(x, 0).unwrap();
        t.backward(loss).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(Value::zeros(&[2, 2]));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut t = Tape::<f64>::new(Mode::Eval);
            let x = t.leaf(val(&[2, 3], &[0.3, -1.2, 0.7, 2.0, -0.5, 0.1]));
            let w = t.leaf(val(&[3, 2], &[0.1, 0.2, -0.3, 0.4, 0.5, -0.6]));
            let b = t.leaf(val(&[2], &[0.01, -0.02]));
            let y = t.linear(x, w, b).unwrap();
            let a = t.leaky_relu(y, 0.2).unwrap();
            let l = t.cross_entropy(a, &[0, 1]).unwrap();
            t.backward(l).unwrap();
            (t.grad(w).unwrap().to_vec(), t.grad(x).unwrap().to_vec())
        };
        let (gw1, gx1) = run();
        let (gw2, gx2) = run();
        assert_eq!(gw1, gw2);
        assert_eq!(gx1, gx2);
    }

    #[test]
    fn bmm_matches_identity_and_hand_case() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let a = t.leaf(val(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let eye = t.leaf(val(&[1, 2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let y = t.bmm(a, eye).unwrap();
        assert_eq!(t.data(y), t.data(a));
        let b = t.leaf(val(&[1, 2, 2], &[0.0, 1.0, 1.0, 0.0]));
        let z = t.bmm(a, b).unwrap();
        assert_eq!(t.data(z), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn mul_bcast_last_weights_rows() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let a = t.leaf(val(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let w = t.leaf(val(&[2, 1], &[2.0, -1.0]));
        let y = t.mul_bcast_last(a, w).unwrap();
        assert_eq!(t.data(y), &[2.0, 4.0, 6.0, -4.0, -5.0, -6.0]);
    }

    #[test]
    fn linear_identity_and_bias_passthrough() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(val(&[1, 2], &[1.0, 2.0]));
        let eye = t.leaf(val(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b0 = t.leaf(Value::zeros(&[2]));
        let y = t.linear(x, eye, b0).unwrap();
        assert_eq!(t.data(y), &[1.0, 2.0]);
        let zero_w = t.leaf(Value::zeros(&[2, 2]));
        let b = t.leaf(val(&[2], &[3.0, 4.0]));
        let z = t.linear(x, zero_w, b).unwrap();
        assert_eq!(t.data(z), &[3.0, 4.0]);
    }

    #[test]
    fn mul_squares_give_two_x_gradient() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(val(&[3], &[1.0, 2.0, 3.0]));
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum_axis(sq, 0).unwrap();
        assert_eq!(t.data(loss), &[14.0]);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn zero_scaled_loss_zeroes_all_gradients() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(val(&[2], &[3.0, -1.0]));
        let sq = t.mul(x, x).unwrap();
        let s = t.sum_axis(sq, 0).unwrap();
        let loss = t.scale(s, 0.0).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn batch_norm_two_point_symmetry_and_constant_channel() {
        // eps = 0: {1,3} normalizes to exactly {-1, 1}.
        let mut t = Tape::<f64>::new(Mode::Train);
        let x = t.leaf(val(&[2, 1], &[1.0, 3.0]));
        let gamma = t.leaf(Value::full(&[1], 1.0));
        let beta = t.leaf(Value::zeros(&[1]));
        let (y, _, _) = t.batch_norm_train(x, gamma, beta, 0.0).unwrap();
        assert_eq!(t.data(y), &[-1.0, 1.0]);

        // Constant channel: zero variance, output collapses to beta.
        let mut t = Tape::<f64>::new(Mode::Train);
        let x = t.leaf(val(&[3, 1], &[5.0, 5.0, 5.0]));
        let gamma = t.leaf(Value::full(&[1], 2.0));
        let beta = t.leaf(val(&[1], &[7.0]));
        let (y, _, _) = t.batch_norm_train(x, gamma, beta, 1e-5).unwrap();
        assert_eq!(t.data(y), &[7.0, 7.0, 7.0]);
    }

    #[test]
    fn softmax_uniform_input_gives_uniform_weights() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(Value::zeros(&[1, 3]));
        let y = t.softmax(x, 1).unwrap();
        for &v in t.data(y) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn dropout_survivor_mean_stays_near_one() {
        let mut r = rng();
        let mut t = Tape::<f64>::new(Mode::Train);
        let n = 100_000;
        let x = t.leaf(Value::full(&[n], 1.0));
        let y = t.dropout(x, 0.5, &mut r).unwrap();
        let mean: f64 = t.data(y).iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn mean_axis_is_sum_over_len() {
        let mut t = Tape::<f64>::new(Mode::Eval);
        let x = t.leaf(val(&[2, 2], &[1.0, 3.0, 5.0, 7.0]));
        let m = t.mean_axis(x, 0).unwrap();
        assert_eq!(t.data(m), &[3.0, 5.0]);
    }
}
