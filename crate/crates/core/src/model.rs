//! Batch-normalized MLP classifier and its flattened parameter registry.
//!
//! Registry order is `hidden.{l}.weight`, `hidden.{l}.bias`,
//! `hidden.{l}.bn.gamma`, `hidden.{l}.bn.beta` for every hidden layer,
//! then `head.weight`, `head.bias`. Running statistics are buffers
//! (`hidden.{l}.bn.running_mean` / `running_var`) and are not trainable.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BnMode, Graph, NodeId, RunningStats};
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Default experiment architecture: 8×8 inputs, two hidden layers of 128, 8 classes.
pub const DEFAULT_SIZES: [usize; 4] = [64, 128, 128, 8];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered names, shapes and offsets of a flattened parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    dim: usize,
}

impl ParamLayout {
    pub fn new(named_shapes: impl IntoIterator<Item = (String, Vec<usize>)>) -> Self {
        let mut entries = Vec::new();
        let mut offset = 0;
        for (name, shape) in named_shapes {
            let e = ParamEntry { name, shape, offset };
            offset += e.len();
            entries.push(e);
        }
        Self { entries, dim: offset }
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn find(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }
}

/// A parameter vector tied to its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams {
    layout: Arc<ParamLayout>,
    values: Vec<f64>,
}

impl FlatParams {
    pub fn new(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.dim() {
            return Err(Error::Dimension { expected: layout.dim(), got: values.len() });
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let values = vec![0.0; layout.dim()];
        Self { layout, values }
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.layout.find(name).map(|e| &self.values[e.range()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.find(name)?.range();
        Some(&mut self.values[range])
    }

    /// Same values with a new layout of equal dimension.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.layout.clone(), values)
    }

    pub fn check_same_layout(&self, other: &FlatParams) -> Result<()> {
        if Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout {
            Ok(())
        } else {
            Err(Error::Registry(format!(
                "layouts differ ({} vs {} parameters)",
                self.layout.dim(),
                other.layout.dim()
            )))
        }
    }
}

/// Selects a subset of trainables by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamFilter {
    All,
    /// Batch-norm `gamma`/`beta` only.
    BnAffine,
}

impl ParamFilter {
    pub fn selects(self, name: &str) -> bool {
        match self {
            ParamFilter::All => true,
            ParamFilter::BnAffine => name.ends_with(".bn.gamma") || name.ends_with(".bn.beta"),
        }
    }

    pub fn mask(self, layout: &ParamLayout) -> Vec<bool> {
        let mut m = vec![false; layout.dim()];
        for e in layout.entries().iter().filter(|e| self.selects(&e.name)) {
            m[e.range()].iter_mut().for_each(|b| *b = true);
        }
        m
    }
}

/// Leaf ids of a taped forward, in registry order.
#[derive(Debug, Clone)]
pub struct TapedForward {
    pub logits: NodeId,
    pub params: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    sizes: Vec<usize>,
    layout: Arc<ParamLayout>,
    params: FlatParams,
    running: Vec<RunningStats>,
}

fn layout_for(sizes: &[usize]) -> ParamLayout {
    let hidden = sizes.len() - 2;
    let mut named = Vec::new();
    for l in 0..hidden {
        let (i, o) = (sizes[l], sizes[l + 1]);
        named.push((format!("hidden.{l}.weight"), vec![i, o]));
        named.push((format!("hidden.{l}.bias"), vec![o]));
        named.push((format!("hidden.{l}.bn.gamma"), vec![o]));
        named.push((format!("hidden.{l}.bn.beta"), vec![o]));
    }
    let (i, o) = (sizes[hidden], sizes[hidden + 1]);
    named.push((String::from("head.weight"), vec![i, o]));
    named.push((String::from("head.bias"), vec![o]));
    ParamLayout::new(named)
}

pub fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 3 {
        return Err(Error::InvalidSizes(format!("need input, at least one hidden layer and classes, got {sizes:?}")));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidSizes(format!("zero-width layer in {sizes:?}")));
    }
    if *sizes.last().unwrap() < 2 {
        return Err(Error::InvalidSizes(format!("need at least 2 classes, got {sizes:?}")));
    }
    Ok(())
}

impl MlpClassifier {
    /// Fan-in scaled uniform initialization, `U(-1/√fan_in, 1/√fan_in)` for
    /// weights and biases; batch-norm `gamma = 1`, `beta = 0`.
    pub fn init(seed: u64, sizes: &[usize]) -> Result<Self> {
        validate_sizes(sizes)?;
        let layout = Arc::new(layout_for(sizes));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; layout.dim()];
        for e in layout.entries() {
            let slot = &mut values[e.range()];
            if e.name.ends_with(".bn.gamma") {
                slot.fill(1.0);
            } else if e.name.ends_with(".bn.beta") {
                slot.fill(0.0);
            } else {
                let fan_in = if e.name.ends_with("weight") { e.shape[0] } else { sizes_fan_in(sizes, &e.name) };
                let bound = 1.0 / math::sqrt(fan_in as f64);
                slot.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
            }
        }
        let running = sizes[1..sizes.len() - 1].iter().map(|&f| RunningStats::new(f)).collect();
        Ok(Self { sizes: sizes.to_vec(), params: FlatParams { layout: layout.clone(), values }, layout, running })
    }

    /// Rebuilds a model from its trainables and buffers.
    pub fn from_parts(sizes: &[usize], params: FlatParams, running: Vec<RunningStats>) -> Result<Self> {
        validate_sizes(sizes)?;
        let layout = Arc::new(layout_for(sizes));
        if *params.layout() != layout {
            return Err(Error::Registry(String::from("parameter names/shapes do not match sizes")));
        }
        let hidden = &sizes[1..sizes.len() - 1];
        if running.len() != hidden.len() || running.iter().zip(hidden).any(|(r, &f)| r.features() != f) {
            return Err(Error::Registry(String::from("running statistics do not match hidden sizes")));
        }
        Ok(Self { sizes: sizes.to_vec(), params: FlatParams { layout: layout.clone(), values: params.values }, layout, running })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn hidden_layers(&self) -> usize {
        self.sizes.len() - 2
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn flatten(&self) -> FlatParams {
        self.params.clone()
    }

    /// Borrowed view of the trainables.
    pub fn params(&self) -> &FlatParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.params.values_mut()
    }

    pub fn load(&mut self, params: &FlatParams) -> Result<()> {
        self.params.check_same_layout(params)?;
        self.params.values.copy_from_slice(params.values());
        Ok(())
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.running
    }

    /// Named buffers in registry order.
    pub fn buffers(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (l, s) in self.running.iter().enumerate() {
            out.push((format!("hidden.{l}.bn.running_mean"), Tensor::vector(s.mean.clone())));
            out.push((format!("hidden.{l}.bn.running_var"), Tensor::vector(s.var.clone())));
        }
        out
    }

    /// Named trainables in registry order.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        self.layout
            .entries()
            .iter()
            .map(|e| {
                let t = Tensor::new(e.shape.clone(), self.params.values[e.range()].to_vec()).expect("layout shape");
                (e.name.clone(), t)
            })
            .collect()
    }

    fn tensor(&self, idx: usize) -> Tensor {
        let e = &self.layout.entries()[idx];
        Tensor::new(e.shape.clone(), self.params.values[e.range()].to_vec()).expect("layout shape")
    }

    /// Records the forward pass on `graph`. Parameters become gradient
    /// leaves when `taped` is set and constants otherwise.
    pub fn forward_on(&mut self, graph: &mut Graph, x: NodeId, mode: BnMode, taped: bool) -> Result<TapedForward> {
        let xin = graph.value(x).dims2("forward")?.1;
        if xin != self.input_size() {
            return Err(crate::error::shape_err(
                "forward",
                format!("model expects {} inputs, got {xin}", self.input_size()),
            ));
        }
        let mut leaves = Vec::with_capacity(self.layout.entries().len());
        for idx in 0..self.layout.entries().len() {
            let t = self.tensor(idx);
            leaves.push(if taped { graph.param(t) } else { graph.constant(t) });
        }
        let mut h = x;
        for l in 0..self.hidden_layers() {
            let base = 4 * l;
            let lin = graph.linear(h, leaves[base], leaves[base + 1])?;
            let bn = graph.batch_norm(lin, leaves[base + 2], leaves[base + 3], &mut self.running[l], mode)?;
            h = graph.relu(bn);
        }
        let n = leaves.len();
        let logits = graph.linear(h, leaves[n - 2], leaves[n - 1])?;
        Ok(TapedForward { logits, params: leaves })
    }

    /// Untaped forward returning logits. Train mode updates running statistics.
    pub fn forward(&mut self, x: &Tensor, mode: BnMode) -> Result<Tensor> {
        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let out = self.forward_on(&mut g, xi, mode, false)?;
        Ok(g.value(out.logits).clone())
    }

    /// Forward that never mutates the model; train mode is treated as `Batch`.
    pub fn forward_frozen(&self, x: &Tensor, mode: BnMode) -> Result<Tensor> {
        let mode = if mode == BnMode::Train { BnMode::Batch } else { mode };
        let mut g = Graph::new();
        let xi = g.constant(x.clone());
        let mut probe = self.clone();
        let out = probe.forward_on(&mut g, xi, mode, false)?;
        Ok(g.value(out.logits).clone())
    }

    /// Replaces every running estimate with the exact mean and unbiased
    /// variance over `x`, layer by layer, as seen by an eval-mode forward.
    pub fn calibrate_running_stats(&mut self, x: &Tensor) -> Result<()> {
        let (n, xin) = x.dims2("calibrate")?;
        if xin != self.input_size() {
            return Err(crate::error::shape_err("calibrate", format!("model expects {} inputs, got {xin}", self.input_size())));
        }
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let mut g = Graph::new();
        let mut h = g.constant(x.clone());
        for l in 0..self.hidden_layers() {
            let leaf = |g: &mut Graph, idx: usize| g.constant(self.tensor(idx));
            let (w, b, gamma, beta) = (leaf(&mut g, 4 * l), leaf(&mut g, 4 * l + 1), leaf(&mut g, 4 * l + 2), leaf(&mut g, 4 * l + 3));
            let lin = g.linear(h, w, b)?;
            let feat = self.sizes[l + 1];
            let v = g.value(lin).data();
            let stats = &mut self.running[l];
            stats.mean.iter_mut().for_each(|m| *m = 0.0);
            stats.var.iter_mut().for_each(|m| *m = 0.0);
            for row in v.chunks_exact(feat) {
                for (m, &a) in stats.mean.iter_mut().zip(row) {
                    *m += a;
                }
            }
            stats.mean.iter_mut().for_each(|m| *m /= n as f64);
            for row in v.chunks_exact(feat) {
                for ((s, &a), &m) in stats.var.iter_mut().zip(row).zip(&stats.mean) {
                    *s += (a - m) * (a - m);
                }
            }
            stats.var.iter_mut().for_each(|s| *s /= (n - 1) as f64);
            let bn = g.batch_norm(lin, gamma, beta, &mut self.running[l], BnMode::Eval)?;
            h = g.relu(bn);
        }
        Ok(())
    }

    /// Gathers the gradients of the parameter leaves into a flat vector.
    pub fn collect_grads(&self, graph: &Graph, fwd: &TapedForward, grads: &crate::autodiff::GradientMap) -> FlatParams {
        let mut values = Vec::with_capacity(self.dim());
        for &leaf in &fwd.params {
            match grads.get(leaf) {
                Some(g) => values.extend_from_slice(g.data()),
                None => values.extend(core::iter::repeat_n(0.0, graph.value(leaf).len())),
            }
        }
        FlatParams { layout: self.layout.clone(), values }
    }
}

fn sizes_fan_in(sizes: &[usize], name: &str) -> usize {
    if name.starts_with("head.") {
        return sizes[sizes.len() - 2];
    }
    let l: usize = name.split('.').nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    sizes[l]
}
