//! Named parameter arrays with paired gradient buffers, plus the binary
//! checkpoint format shared by every model in the crate.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 8] = b"DSCFCKP1";
const CHECKPOINT_VERSION: u32 = 1;

/// Handle to a parameter inside a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A named array of learnable values and its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Initialization schemes for new parameters.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Uniform in [lo, hi].
    Uniform(f64, f64),
    /// Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] with fan_in = cols.
    ScaledUniform,
    /// He-uniform, [-sqrt(6/fan_in), +sqrt(6/fan_in)]: keeps activation
    /// variance stable through stacked ReLU layers.
    HeUniform,
}

#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name `{}`",
            name
        );
        let n = rows * cols;
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Uniform(lo, hi) => (0..n).map(|_| rng.gen_range(lo..=hi)).collect(),
            Init::ScaledUniform => {
                let bound = 1.0 / (cols as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
            }
            Init::HeUniform => {
                let bound = (6.0 / cols as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
            }
        };
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            rows,
            cols,
            values,
            grad: vec![0.0; n],
        });
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.lookup(name)
            .ok_or_else(|| Error::State(format!("parameter `{}` not found in store", name)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar values across all parameters.
    pub fn value_count(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub fn add_grad(&mut self, id: ParamId, grad: &[f64]) {
        let p = &mut self.params[id.0];
        debug_assert_eq!(p.grad.len(), grad.len());
        for (dst, src) in p.grad.iter_mut().zip(grad) {
            *dst += src;
        }
    }

    pub fn add_row_grad(&mut self, id: ParamId, row: usize, grad: &[f64]) {
        let p = &mut self.params[id.0];
        debug_assert_eq!(p.cols, grad.len());
        let dst = &mut p.grad[row * p.cols..(row + 1) * p.cols];
        for (d, s) in dst.iter_mut().zip(grad) {
            *d += s;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Writes a checkpoint: magic, format version, a small key/value metadata
    /// block, the named-parameter manifest with shapes, then raw
    /// little-endian 64-bit values per parameter in manifest order.
    pub fn save(&self, path: &Path, meta: &[(String, String)]) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        for (k, v) in meta {
            write_str(&mut w, k)?;
            write_str(&mut w, v)?;
        }
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            write_str(&mut w, &p.name)?;
            w.write_all(&(p.rows as u64).to_le_bytes())?;
            w.write_all(&(p.cols as u64).to_le_bytes())?;
        }
        for p in &self.params {
            for v in &p.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a checkpoint produced by [`ParameterStore::save`]. Returns the
    /// store (gradients zeroed) and the metadata block.
    pub fn load(path: &Path) -> Result<(Self, Vec<(String, String)>)> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::ArtifactMismatch(format!(
                "{} is not a checkpoint (bad magic)",
                path.display()
            )));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::ArtifactMismatch(format!(
                "checkpoint version {} unsupported (expected {})",
                version, CHECKPOINT_VERSION
            )));
        }
        let meta_len = read_u32(&mut r)? as usize;
        let mut meta = Vec::with_capacity(meta_len);
        for _ in 0..meta_len {
            let k = read_str(&mut r)?;
            let v = read_str(&mut r)?;
            meta.push((k, v));
        }
        let n_params = read_u32(&mut r)? as usize;
        let mut manifest = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let name = read_str(&mut r)?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            manifest.push((name, rows, cols));
        }
        let mut store = Self::new();
        for (name, rows, cols) in manifest {
            let n = rows * cols;
            let mut values = vec![0.0; n];
            let mut buf = [0u8; 8];
            for v in values.iter_mut() {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            let id = ParamId(store.params.len());
            store.index.insert(name.clone(), id);
            store.params.push(Parameter {
                name,
                rows,
                cols,
                values,
                grad: vec![0.0; n],
            });
        }
        Ok((store, meta))
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf)
        .map_err(|_| Error::ArtifactMismatch("checkpoint string is not utf-8".into()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
