//! Binary tensor checkpoints.
//!
//! Layout, all integers little-endian: magic `PTTA`, version `u32`, entry
//! count `u32`, then per entry a `u16` name length and UTF-8 name, a `u8`
//! rank, one `u32` per extent, and the payload as `f64` values.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use petal_core::autodiff::RunningStats;
use petal_core::model::{FlatParams, MlpClassifier};
use petal_core::swag::SwagDiagPosterior;
use petal_core::Tensor;

pub const MAGIC: [u8; 4] = *b"PTTA";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("entry name is not UTF-8")]
    Name,
    #[error("duplicate entry {0}")]
    Duplicate(String),
    #[error("missing entry {0}")]
    Missing(String),
    #[error("entry {name}: {detail}")]
    Entry { name: String, detail: String },
    #[error(transparent)]
    Core(#[from] petal_core::Error),
}

type Result<T> = std::result::Result<T, CheckpointError>;

/// Named tensors in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor)>,
}

fn entry_err(name: &str, detail: impl Into<String>) -> CheckpointError {
    CheckpointError::Entry { name: name.to_string(), detail: detail.into() }
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let count = u32::try_from(self.entries.len()).map_err(|_| entry_err("*", "too many entries"))?;
        w.write_all(&count.to_le_bytes())?;
        for (name, t) in &self.entries {
            let len = u16::try_from(name.len()).map_err(|_| entry_err(name, "name longer than 65535 bytes"))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            let rank = u8::try_from(t.rank()).map_err(|_| entry_err(name, "rank above 255"))?;
            w.write_all(&[rank])?;
            for &e in t.shape() {
                let e = u32::try_from(e).map_err(|_| entry_err(name, "extent does not fit u32"))?;
                w.write_all(&e.to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let count = read_u32(r)?;
        let mut seen = BTreeSet::new();
        let mut entries = Vec::new();
        for _ in 0..count {
            let mut len = [0u8; 2];
            r.read_exact(&mut len)?;
            let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| CheckpointError::Name)?;
            if !seen.insert(name.clone()) {
                return Err(CheckpointError::Duplicate(name));
            }
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank)?;
            let shape = (0..rank[0]).map(|_| read_u32(r).map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 8];
            r.read_exact(&mut raw)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            entries.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Trainables in registry order followed by the batch-norm buffers.
pub fn model_to_checkpoint(model: &MlpClassifier) -> Checkpoint {
    let mut entries = model.named_params();
    entries.extend(model.buffers());
    Checkpoint { entries }
}

pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<MlpClassifier> {
    let mut sizes = Vec::new();
    let mut l = 0;
    loop {
        let name = format!("hidden.{l}.weight");
        let Some(w) = ck.get(&name) else { break };
        let (i, o) = w.dims2("checkpoint")?;
        if l == 0 {
            sizes.push(i);
        }
        sizes.push(o);
        l += 1;
    }
    let head = ck.require("head.weight")?;
    sizes.push(head.dims2("checkpoint")?.1);
    let template = MlpClassifier::init(0, &sizes)?;
    let mut values = Vec::with_capacity(template.dim());
    for e in template.layout().entries() {
        let t = ck.require(&e.name)?;
        if t.shape() != e.shape.as_slice() {
            return Err(entry_err(&e.name, format!("shape {:?}, expected {:?}", t.shape(), e.shape)));
        }
        values.extend_from_slice(t.data());
    }
    let params = FlatParams::new(template.layout().clone(), values)?;
    let mut running = Vec::new();
    for (l, &f) in sizes[1..sizes.len() - 1].iter().enumerate() {
        let mean = ck.require(&format!("hidden.{l}.bn.running_mean"))?;
        let var = ck.require(&format!("hidden.{l}.bn.running_var"))?;
        if mean.shape() != [f] || var.shape() != [f] {
            return Err(entry_err(&format!("hidden.{l}.bn"), "running statistics have the wrong width"));
        }
        running.push(RunningStats { mean: mean.data().to_vec(), var: var.data().to_vec() });
    }
    Ok(MlpClassifier::from_parts(&sizes, params, running)?)
}

const ITERATES: &str = "swag.iterates";

/// `swag.mu.<param>` and `swag.sigma2.<param>` per trainable, plus the
/// iterate count as a scalar.
pub fn posterior_to_checkpoint(post: &SwagDiagPosterior) -> Checkpoint {
    let mut entries = Vec::new();
    for e in post.mu().layout().entries() {
        let shape = e.shape.clone();
        entries.push((format!("swag.mu.{}", e.name), Tensor::new(shape.clone(), post.mu().values()[e.range()].to_vec()).unwrap()));
        entries.push((format!("swag.sigma2.{}", e.name), Tensor::new(shape, post.sigma2()[e.range()].to_vec()).unwrap()));
    }
    entries.push((ITERATES.to_string(), Tensor::scalar(post.iterates() as f64)));
    Checkpoint { entries }
}

/// Reads a posterior laid out like `model`'s trainables.
pub fn posterior_from_checkpoint(ck: &Checkpoint, model: &MlpClassifier) -> Result<SwagDiagPosterior> {
    let mut mu = Vec::with_capacity(model.dim());
    let mut sigma2 = Vec::with_capacity(model.dim());
    for e in model.layout().entries() {
        for (prefix, out) in [("swag.mu", &mut mu), ("swag.sigma2", &mut sigma2)] {
            let name = format!("{prefix}.{}", e.name);
            let t = ck.require(&name)?;
            if t.shape() != e.shape.as_slice() {
                return Err(entry_err(&name, format!("shape {:?}, expected {:?}", t.shape(), e.shape)));
            }
            out.extend_from_slice(t.data());
        }
    }
    let iterates = ck.require(ITERATES)?.data().first().copied().unwrap_or(0.0);
    if !(iterates >= 1.0) || iterates.fract() != 0.0 {
        return Err(entry_err(ITERATES, format!("invalid count {iterates}")));
    }
    Ok(SwagDiagPosterior::new(FlatParams::new(model.layout().clone(), mu)?, sigma2, iterates as u64)?)
}
