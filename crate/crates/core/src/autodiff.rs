//! Reverse-mode automatic differentiation over a per-forward tape.
//!
//! A [`Graph`] is rebuilt for every forward pass. Leaves are either
//! parameters (gradients wanted) or constants. Every op checks its output
//! for non-finite values and fails instead of propagating them.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-norm normalization source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BnMode {
    /// Normalize with batch statistics and fold them into the running estimates.
    Train,
    /// Normalize with the running estimates.
    Eval,
    /// Normalize with batch statistics, leave the running estimates alone.
    Batch,
}

/// Running mean/variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(features: usize) -> Self {
        Self { mean: vec![0.0; features], var: vec![1.0; features] }
    }

    pub fn features(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Relu { x: NodeId },
    /// `xhat` and `inv_std` are saved per element / per feature.
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Vec<f64>, inv_std: Vec<f64>, batch_stats: bool },
    Softmax { x: NodeId },
    SoftCrossEntropy { logits: NodeId, target: Tensor, probs: Vec<f64> },
    Entropy { logits: NodeId, probs: Vec<f64>, row_entropy: Vec<f64> },
    GaussianLogDensity { inputs: Vec<NodeId>, mu: Vec<f64>, sigma2: Vec<f64> },
    Sum { x: NodeId },
    Combine { a: NodeId, ca: f64, b: NodeId, cb: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only tape; node ids are topologically ordered by construction.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to recorded nodes.
#[derive(Debug, Clone)]
pub struct GradientMap {
    grads: Vec<Option<Tensor>>,
}

impl GradientMap {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `id`, or zeros shaped like its value when the root does
    /// not depend on it.
    pub fn get_or_zeros(&self, graph: &Graph, id: NodeId) -> Tensor {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(graph.value(id).shape()))
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].requires_grad)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf with no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (batch, inp) = self.value(x).dims2("linear")?;
        let (w_in, out) = self.value(w).dims2("linear")?;
        if inp != w_in || self.value(b).shape() != [out] {
            return Err(shape_err(
                "linear",
                alloc::format!(
                    "x {:?}, W {:?}, b {:?}",
                    self.value(x).shape(),
                    self.value(w).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut data = Vec::with_capacity(batch * out);
        for r in 0..batch {
            data.extend_from_slice(bv);
            let row = &mut data[r * out..(r + 1) * out];
            for (i, &xi) in xv[r * inp..(r + 1) * inp].iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let wrow = &wv[i * out..(i + 1) * out];
                for (o, &wio) in row.iter_mut().zip(wrow) {
                    *o += xi * wio;
                }
            }
        }
        let value = Tensor::new(vec![batch, out], data)?.check_finite("linear")?;
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let value = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(&[x]);
        self.push(value, Op::Relu { x }, rg)
    }

    /// Batch normalization over the rows of a `[B, F]` input.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: &mut RunningStats,
        mode: BnMode,
    ) -> Result<NodeId> {
        let (batch, feat) = self.value(x).dims2("batch_norm")?;
        if self.value(gamma).shape() != [feat] || self.value(beta).shape() != [feat] || stats.features() != feat {
            return Err(shape_err("batch_norm", alloc::format!("input has {feat} features")));
        }
        let batch_stats = !matches!(mode, BnMode::Eval);
        if batch_stats && batch < 2 {
            return Err(Error::BatchTooSmall(batch));
        }
        let xv = self.value(x).data();
        let (mean, var) = if batch_stats {
            let n = batch as f64;
            let mut mean = vec![0.0; feat];
            for row in xv.chunks_exact(feat) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0; feat];
            for row in xv.chunks_exact(feat) {
                for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= n);
            if mode == BnMode::Train {
                let unbias = n / (n - 1.0);
                for f in 0..feat {
                    stats.mean[f] = (1.0 - BN_MOMENTUM) * stats.mean[f] + BN_MOMENTUM * mean[f];
                    stats.var[f] = (1.0 - BN_MOMENTUM) * stats.var[f] + BN_MOMENTUM * var[f] * unbias;
                }
            }
            (mean, var)
        } else {
            (stats.mean.clone(), stats.var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / math::sqrt(v + BN_EPS)).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = Vec::with_capacity(batch * feat);
        let mut out = Vec::with_capacity(batch * feat);
        for row in xv.chunks_exact(feat) {
            for f in 0..feat {
                let h = (row[f] - mean[f]) * inv_std[f];
                xhat.push(h);
                out.push(g[f] * h + bt[f]);
            }
        }
        let value = Tensor::new(vec![batch, feat], out)?.check_finite("batch_norm")?;
        let rg = self.needs(&[x, gamma, beta]);
        Ok(self.push(value, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats }, rg))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        xv.dims2("softmax")?;
        let mut data = Vec::with_capacity(xv.len());
        for row in xv.rows() {
            data.extend(softmax_row(row));
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?.check_finite("softmax")?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Softmax { x }, rg))
    }

    /// Batch-mean soft-target cross-entropy `-(1/B) Σ_b Σ_c t[b,c] log softmax(z)[b,c]`.
    pub fn soft_cross_entropy(&mut self, target: &Tensor, logits: NodeId) -> Result<NodeId> {
        let zv = self.value(logits);
        let (batch, classes) = zv.dims2("soft_cross_entropy")?;
        if target.shape() != zv.shape() {
            return Err(shape_err(
                "soft_cross_entropy",
                alloc::format!("target {:?} vs logits {:?}", target.shape(), zv.shape()),
            ));
        }
        validate_distribution_rows(target)?;
        let mut probs = Vec::with_capacity(batch * classes);
        let mut total = 0.0;
        for (row, t) in zv.rows().zip(target.rows()) {
            let ls = log_softmax_row(row);
            total -= t.iter().zip(&ls).map(|(a, b)| if *a == 0.0 { 0.0 } else { a * b }).sum::<f64>();
            probs.extend(ls.iter().map(|&l| math::exp(l)));
        }
        let value = Tensor::scalar(total / batch as f64).check_finite("soft_cross_entropy")?;
        let rg = self.needs(&[logits]);
        Ok(self.push(value, Op::SoftCrossEntropy { logits, target: target.clone(), probs }, rg))
    }

    /// Batch-mean Shannon entropy of `softmax(logits)`.
    pub fn entropy(&mut self, logits: NodeId) -> Result<NodeId> {
        let zv = self.value(logits);
        let (batch, classes) = zv.dims2("entropy")?;
        let mut probs = Vec::with_capacity(batch * classes);
        let mut row_entropy = Vec::with_capacity(batch);
        for row in zv.rows() {
            let ls = log_softmax_row(row);
            let h: f64 = -ls.iter().map(|&l| math::exp(l) * l).sum::<f64>();
            row_entropy.push(h);
            probs.extend(ls.iter().map(|&l| math::exp(l)));
        }
        let value = Tensor::scalar(row_entropy.iter().sum::<f64>() / batch as f64).check_finite("entropy")?;
        let rg = self.needs(&[logits]);
        Ok(self.push(value, Op::Entropy { logits, probs, row_entropy }, rg))
    }

    /// Diagonal-Gaussian log-density of the concatenation of `inputs`.
    pub fn gaussian_log_density(&mut self, inputs: &[NodeId], mu: &[f64], sigma2: &[f64]) -> Result<NodeId> {
        let dim: usize = inputs.iter().map(|&i| self.value(i).len()).sum();
        if mu.len() != dim || sigma2.len() != dim {
            return Err(Error::Dimension { expected: mu.len(), got: dim });
        }
        let mut total = 0.0;
        let mut k = 0;
        for &id in inputs {
            for &v in self.value(id).data() {
                let d = v - mu[k];
                total += -d * d / (2.0 * sigma2[k]) - 0.5 * (math::LN_2PI + math::ln(sigma2[k]));
                k += 1;
            }
        }
        let value = Tensor::scalar(total).check_finite("gaussian_log_density")?;
        let rg = self.needs(inputs);
        Ok(self.push(
            value,
            Op::GaussianLogDensity { inputs: inputs.to_vec(), mu: mu.to_vec(), sigma2: sigma2.to_vec() },
            rg,
        ))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let value = Tensor::scalar(self.value(x).data().iter().sum()).check_finite("sum")?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Sum { x }, rg))
    }

    /// `ca * a + cb * b` for equally shaped inputs.
    pub fn combine(&mut self, a: NodeId, ca: f64, b: NodeId, cb: f64) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("combine", alloc::format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| ca * x + cb * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?.check_finite("combine")?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Combine { a, ca, b, cb }, rg))
    }

    /// Reverse-mode sweep from a scalar `root`.
    pub fn backward(&self, root: NodeId) -> Result<GradientMap> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(rv.shape(), 1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for g in grads.iter() {
            if let Some(t) = g {
                if !t.is_finite() {
                    return Err(Error::NonFinite("backward"));
                }
            }
        }
        Ok(GradientMap { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (batch, inp) = (xv.shape()[0], xv.shape()[1]);
                let out = wv.shape()[1];
                if self.nodes[x.0].requires_grad {
                    let mut dx = vec![0.0; batch * inp];
                    for r in 0..batch {
                        let grow = &gd[r * out..(r + 1) * out];
                        for i in 0..inp {
                            let wrow = &wv.data()[i * out..(i + 1) * out];
                            dx[r * inp + i] = grow.iter().zip(wrow).map(|(a, b)| a * b).sum();
                        }
                    }
                    accumulate(grads, *x, xv.shape(), &dx);
                }
                if self.nodes[w.0].requires_grad {
                    let mut dw = vec![0.0; inp * out];
                    for r in 0..batch {
                        let grow = &gd[r * out..(r + 1) * out];
                        for (i, &xi) in xv.data()[r * inp..(r + 1) * inp].iter().enumerate() {
                            if xi == 0.0 {
                                continue;
                            }
                            for (d, &go) in dw[i * out..(i + 1) * out].iter_mut().zip(grow) {
                                *d += xi * go;
                            }
                        }
                    }
                    accumulate(grads, *w, wv.shape(), &dw);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; out];
                    for grow in gd.chunks_exact(out) {
                        for (d, &go) in db.iter_mut().zip(grow) {
                            *d += go;
                        }
                    }
                    accumulate(grads, *b, &[out], &db);
                }
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                let dx: Vec<f64> =
                    xv.data().iter().zip(gd).map(|(&v, &go)| if v > 0.0 { go } else { 0.0 }).collect();
                accumulate(grads, *x, xv.shape(), &dx);
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let feat = inv_std.len();
                let batch = xhat.len() / feat;
                let gv = self.value(*gamma).data();
                let mut dgamma = vec![0.0; feat];
                let mut dbeta = vec![0.0; feat];
                for (grow, hrow) in gd.chunks_exact(feat).zip(xhat.chunks_exact(feat)) {
                    for f in 0..feat {
                        dgamma[f] += grow[f] * hrow[f];
                        dbeta[f] += grow[f];
                    }
                }
                if self.nodes[x.0].requires_grad {
                    let mut dx = vec![0.0; batch * feat];
                    if *batch_stats {
                        // dx = inv_std/B * (B*dxhat - Σdxhat - xhat*Σ(dxhat*xhat)), dxhat = g*gamma
                        let n = batch as f64;
                        for f in 0..feat {
                            let sum_dxhat = dbeta[f] * gv[f];
                            let sum_dxhat_xhat = dgamma[f] * gv[f];
                            for r in 0..batch {
                                let k = r * feat + f;
                                let dxhat = gd[k] * gv[f];
                                dx[k] = inv_std[f] / n * (n * dxhat - sum_dxhat - xhat[k] * sum_dxhat_xhat);
                            }
                        }
                    } else {
                        for (k, d) in dx.iter_mut().enumerate() {
                            let f = k % feat;
                            *d = gd[k] * gv[f] * inv_std[f];
                        }
                    }
                    accumulate(grads, *x, &[batch, feat], &dx);
                }
                accumulate(grads, *gamma, &[feat], &dgamma);
                accumulate(grads, *beta, &[feat], &dbeta);
            }
            Op::Softmax { x } => {
                let p = &node.value;
                let c = p.shape()[1];
                let mut dx = Vec::with_capacity(p.len());
                for (prow, grow) in p.data().chunks_exact(c).zip(gd.chunks_exact(c)) {
                    let dot: f64 = prow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    dx.extend(prow.iter().zip(grow).map(|(pi, gi)| pi * (gi - dot)));
                }
                accumulate(grads, *x, p.shape(), &dx);
            }
            Op::SoftCrossEntropy { logits, target, probs } => {
                let shape = self.value(*logits).shape();
                let scale = gd[0] / shape[0] as f64;
                let dz: Vec<f64> = probs.iter().zip(target.data()).map(|(p, t)| scale * (p - t)).collect();
                accumulate(grads, *logits, shape, &dz);
            }
            Op::Entropy { logits, probs, row_entropy } => {
                let shape = self.value(*logits).shape();
                let c = shape[1];
                let scale = gd[0] / shape[0] as f64;
                let mut dz = Vec::with_capacity(probs.len());
                for (prow, h) in probs.chunks_exact(c).zip(row_entropy) {
                    // dH/dz_j = -p_j (log p_j + H)
                    dz.extend(prow.iter().map(|&p| {
                        if p > 0.0 {
                            -scale * p * (math::ln(p) + h)
                        } else {
                            0.0
                        }
                    }));
                }
                accumulate(grads, *logits, shape, &dz);
            }
            Op::GaussianLogDensity { inputs, mu, sigma2 } => {
                let mut k = 0;
                for &id in inputs {
                    let v = self.value(id);
                    let d: Vec<f64> = v
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(j, &t)| gd[0] * (-(t - mu[k + j]) / sigma2[k + j]))
                        .collect();
                    k += v.len();
                    if self.nodes[id.0].requires_grad {
                        accumulate(grads, id, v.shape(), &d);
                    }
                }
            }
            Op::Sum { x } => {
                let xv = self.value(*x);
                accumulate(grads, *x, xv.shape(), &vec![gd[0]; xv.len()]);
            }
            Op::Combine { a, ca, b, cb } => {
                let shape = node.value.shape();
                if self.nodes[a.0].requires_grad {
                    let da: Vec<f64> = gd.iter().map(|v| ca * v).collect();
                    accumulate(grads, *a, shape, &da);
                }
                if self.nodes[b.0].requires_grad {
                    let db: Vec<f64> = gd.iter().map(|v| cb * v).collect();
                    accumulate(grads, *b, shape, &db);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, shape: &[usize], delta: &[f64]) {
    match &mut grads[id.0] {
        Some(t) => t.data_mut().iter_mut().zip(delta).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(Tensor::new(shape.to_vec(), delta.to_vec()).expect("gradient shape")),
    }
}

/// Max-shifted softmax of one row.
pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|&v| math::exp(v - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + math::ln(row.iter().map(|&v| math::exp(v - m)).sum::<f64>());
    row.iter().map(|&v| v - lse).collect()
}

/// Row-wise softmax without taping.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    logits.dims2("softmax")?;
    let mut data = Vec::with_capacity(logits.len());
    for row in logits.rows() {
        data.extend(softmax_row(row));
    }
    Tensor::new(logits.shape().to_vec(), data)?.check_finite("softmax")
}

/// Checks rows are nonnegative and sum to 1 within 1e-6.
pub fn validate_distribution_rows(t: &Tensor) -> Result<()> {
    for (row, vals) in t.rows().enumerate() {
        let sum: f64 = vals.iter().sum();
        if vals.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidTarget { row, sum });
        }
    }
    Ok(())
}

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn finite_diff_gradient<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * h));
    }
    grad
}
