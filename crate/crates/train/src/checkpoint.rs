//! Binary checkpoint and weight-table formats.
//!
//! All integers are little-endian. A checkpoint is laid out as
//!
//! ```text
//! b"DEKANCKP"  u32 version
//! u32 len, utf8 model config (TOML)
//! u32 epoch    f64 best validation loss
//! [u8; 32] rng seed   u64 rng stream   u128 rng word position
//! table: parameters and buffers
//! table: momentum buffers
//! ```
//!
//! and a table is `u32 count` followed by `count` entries of
//! `u32 name len, utf8 name, 4 x u32 dims, f32 data`.
//! A weight file for `--import-weights` is `b"DEKANWTS"`, `u32 version`, table.

use std::collections::BTreeMap;
use std::path::Path;

use dekan_core::{Dekan, ModelConfig, Parameterized, Shape4, StateKind};
use rand_chacha::ChaCha8Rng;

use crate::error::{CheckpointError, Result, TrainError};
use crate::optim::Sgd;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DEKANCKP";
pub const WEIGHTS_MAGIC: &[u8; 8] = b"DEKANWTS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Shape4,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub epoch: u32,
    pub best_val_loss: f64,
    pub rng: RngState,
    pub params: Vec<TensorEntry>,
    pub momentum: Vec<TensorEntry>,
}

/// Parameters and buffers of `model` in visit order.
pub fn state_table(model: &impl Parameterized<f32>) -> Vec<TensorEntry> {
    let mut out = Vec::new();
    model.visit_state("", &mut |name, t, _| {
        out.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape(),
            data: t.data().to_vec(),
        })
    });
    out
}

/// Copies `table` into the state of `model` whose names start with `prefix`.
///
/// Every targeted tensor must be present with the right shape, and every
/// entry must name a targeted tensor.
pub fn load_state_table(
    model: &mut impl Parameterized<f32>,
    prefix: &str,
    table: &[TensorEntry],
) -> Result<()> {
    let mut by_name: BTreeMap<String, &TensorEntry> = BTreeMap::new();
    for e in table {
        let full = if prefix.is_empty() {
            e.name.clone()
        } else {
            format!("{prefix}.{}", e.name)
        };
        if by_name.insert(full, e).is_some() {
            return Err(CheckpointError::Malformed(format!("duplicate entry `{}`", e.name)).into());
        }
    }
    // Validate everything before touching the model.
    let mut problem = None;
    let mut seen = 0;
    model.visit_state("", &mut |name, t, _| {
        if problem.is_some() || !(prefix.is_empty() || name.starts_with(&format!("{prefix}."))) {
            return;
        }
        match by_name.get(name) {
            None => problem = Some(CheckpointError::MissingParameter(name.to_string())),
            Some(e) if e.shape != t.shape() => {
                problem = Some(CheckpointError::ShapeMismatch {
                    name: name.to_string(),
                    stored: e.shape,
                    expected: t.shape(),
                })
            }
            Some(_) => seen += 1,
        }
    });
    if let Some(p) = problem {
        return Err(p.into());
    }
    if seen != by_name.len() {
        let mut known = Vec::new();
        model.visit_state("", &mut |name, _, _| known.push(name.to_string()));
        let extra = by_name
            .keys()
            .find(|k| !known.contains(k))
            .cloned()
            .unwrap_or_default();
        return Err(CheckpointError::UnexpectedParameter(extra).into());
    }
    model.visit_state_mut("", &mut |name, t, _| {
        if let Some(e) = by_name.get(name) {
            t.data_mut().copy_from_slice(&e.data);
        }
    });
    Ok(())
}

impl Checkpoint {
    pub fn capture(
        model: &Dekan<f32>,
        sgd: &Sgd<f32>,
        epoch: u32,
        best_val_loss: f64,
        rng: &ChaCha8Rng,
    ) -> Self {
        let mut momentum = Vec::new();
        model.visit_state("", &mut |name, t, kind| {
            if kind != StateKind::Param {
                return;
            }
            if let Some(v) = sgd.velocity().get(name) {
                momentum.push(TensorEntry {
                    name: name.to_string(),
                    shape: t.shape(),
                    data: v.clone(),
                });
            }
        });
        Self {
            model_config: model.config().clone(),
            epoch,
            best_val_loss,
            rng: RngState::capture(rng),
            params: state_table(model),
            momentum,
        }
    }

    /// Builds a fresh model from the stored config and loads every tensor into it.
    pub fn model(&self) -> Result<Dekan<f32>> {
        let mut model = Dekan::new(self.model_config.clone())?;
        self.restore_into(&mut model)?;
        Ok(model)
    }

    /// Loads parameters into an existing model, checking names and shapes.
    pub fn restore_into(&self, model: &mut Dekan<f32>) -> Result<()> {
        load_state_table(model, "", &self.params)
    }

    pub fn velocity(&self) -> BTreeMap<String, Vec<f32>> {
        self.momentum
            .iter()
            .map(|e| (e.name.clone(), e.data.clone()))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(CHECKPOINT_MAGIC);
        w.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let config = toml::to_string(&self.model_config).expect("model config serialises");
        write_str(&mut w, &config);
        w.extend_from_slice(&self.epoch.to_le_bytes());
        w.extend_from_slice(&self.best_val_loss.to_le_bytes());
        w.extend_from_slice(&self.rng.seed);
        w.extend_from_slice(&self.rng.stream.to_le_bytes());
        w.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        write_table(&mut w, &self.params);
        write_table(&mut w, &self.momentum);
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        read_header(&mut r, CHECKPOINT_MAGIC)?;
        let text = r.string("model config")?;
        let model_config: ModelConfig = toml::from_str(&text)
            .map_err(|e| CheckpointError::Malformed(format!("model config: {e}")))?;
        let epoch = r.u32("epoch")?;
        let best_val_loss = f64::from_le_bytes(r.array("best validation loss")?);
        let seed = r.array("rng seed")?;
        let stream = u64::from_le_bytes(r.array("rng stream")?);
        let word_pos = u128::from_le_bytes(r.array("rng position")?);
        let params = read_table(&mut r)?;
        let momentum = read_table(&mut r)?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            ))
            .into());
        }
        let ckpt = Self {
            model_config,
            epoch,
            best_val_loss,
            rng: RngState {
                seed,
                stream,
                word_pos,
            },
            params,
            momentum,
        };
        ckpt.check_shapes()?;
        Ok(ckpt)
    }

    /// Checks the parameter table against the shapes the stored config implies.
    fn check_shapes(&self) -> Result<()> {
        let model: Dekan<f32> = Dekan::new(self.model_config.clone())?;
        let mut expected = BTreeMap::new();
        model.visit_state("", &mut |name, t, _| {
            expected.insert(name.to_string(), t.shape());
        });
        for e in self.params.iter().chain(&self.momentum) {
            match expected.get(&e.name) {
                None => return Err(CheckpointError::UnexpectedParameter(e.name.clone()).into()),
                Some(&s) if s != e.shape => {
                    return Err(CheckpointError::ShapeMismatch {
                        name: e.name.clone(),
                        stored: e.shape,
                        expected: s,
                    }
                    .into())
                }
                Some(_) => {}
            }
        }
        if let Some(name) = expected
            .keys()
            .find(|k| !self.params.iter().any(|e| &e.name == *k))
        {
            return Err(CheckpointError::MissingParameter(name.clone()).into());
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| TrainError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| TrainError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn weights_to_bytes(table: &[TensorEntry]) -> Vec<u8> {
    let mut w = Vec::new();
    w.extend_from_slice(WEIGHTS_MAGIC);
    w.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    write_table(&mut w, table);
    w
}

pub fn weights_from_bytes(bytes: &[u8]) -> Result<Vec<TensorEntry>> {
    let mut r = Reader { bytes, pos: 0 };
    read_header(&mut r, WEIGHTS_MAGIC)?;
    let table = read_table(&mut r)?;
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed("trailing bytes after weight table".into()).into());
    }
    Ok(table)
}

/// Loads an external weight table into the residual encoder (names relative to `res`).
pub fn import_weights(model: &mut Dekan<f32>, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| TrainError::io(path, e))?;
    load_state_table(model, "res", &weights_from_bytes(&bytes)?)
}

fn write_str(w: &mut Vec<u8>, s: &str) {
    w.extend_from_slice(&(s.len() as u32).to_le_bytes());
    w.extend_from_slice(s.as_bytes());
}

fn write_table(w: &mut Vec<u8>, table: &[TensorEntry]) {
    w.extend_from_slice(&(table.len() as u32).to_le_bytes());
    for e in table {
        write_str(w, &e.name);
        for d in e.shape {
            w.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &e.data {
            w.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated(what).into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn string(&mut self, what: &'static str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| CheckpointError::Malformed(format!("{what} is not utf-8")).into())
    }
}

fn read_header(r: &mut Reader, magic: &[u8; 8]) -> Result<()> {
    if r.take(8, "magic")? != magic {
        return Err(CheckpointError::BadMagic.into());
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    Ok(())
}

fn read_table(r: &mut Reader) -> Result<Vec<TensorEntry>> {
    let count = r.u32("table size")? as usize;
    let mut out = Vec::new();
    for _ in 0..count {
        let name = r.string("tensor name")?;
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = r.u32("tensor shape")? as usize;
        }
        let len = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let len =
            len.ok_or_else(|| CheckpointError::Malformed(format!("tensor `{name}` is too large")))?;
        let bytes_len = len
            .checked_mul(4)
            .ok_or_else(|| CheckpointError::Malformed(format!("tensor `{name}` is too large")))?;
        let raw = r.take(bytes_len, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        out.push(TensorEntry { name, shape, data });
    }
    Ok(out)
}
