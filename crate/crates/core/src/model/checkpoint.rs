//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "FCHK"                       magic
//! u32                          format version
//! i32 × 10                     window, height, width, encoder_channels, global_dim,
//!                              lstm_hidden, desk_scale, ablate_lstm, init_seed, extractor_seed
//! u64                          optimizer step
//! u32                          record count
//! record × count:
//!   u32 name length, name (UTF-8)
//!   u32 rank, u32 × rank dims
//!   f64 × product(dims)
//! ```
//!
//! Seeds are stored as the bit pattern of a `u32`. Records named `extractor.*`
//! belong to the frozen global extractor; `adam.m/*` and `adam.v/*` hold
//! optimizer moments when present.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{FlowChromaModel, ModelConfig, ModelError, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FCHK";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_NAME: u32 = 4096;
const MAX_RANK: u32 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub records: Vec<(String, Tensor)>,
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

fn to_i32(v: usize, field: &str) -> Result<i32> {
    i32::try_from(v).map_err(|_| corrupt(format!("{field} = {v} does not fit a 32-bit field")))
}

fn from_i32(v: i32, field: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| corrupt(format!("negative {field} ({v})")))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_i32(r: &mut impl Read) -> Result<i32> {
    let mut b = [0; 4];
    r.read_exact(&mut b)?;
    Ok(i32::from_le_bytes(b))
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let c = &self.config;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let fields = [
            to_i32(c.window, "window")?,
            to_i32(c.height, "height")?,
            to_i32(c.width, "width")?,
            to_i32(c.encoder_channels, "encoder_channels")?,
            to_i32(c.global_dim, "global_dim")?,
            to_i32(c.lstm_hidden, "lstm_hidden")?,
            i32::from(c.desk_scale),
            i32::from(c.ablate_lstm),
            c.init_seed as i32,
            c.extractor_seed as i32,
        ];
        for f in fields {
            w.write_all(&f.to_le_bytes())?;
        }
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.records.len() as u32).to_le_bytes())?;
        for (name, t) in &self.records {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.ndim() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0; 4];
        r.read_exact(&mut magic)
            .map_err(|_| corrupt("file too short"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic; not a checkpoint file"));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let mut f = [0i32; 10];
        for v in &mut f {
            *v = read_i32(r)?;
        }
        let config = ModelConfig {
            window: from_i32(f[0], "window")?,
            height: from_i32(f[1], "height")?,
            width: from_i32(f[2], "width")?,
            encoder_channels: from_i32(f[3], "encoder_channels")?,
            global_dim: from_i32(f[4], "global_dim")?,
            lstm_hidden: from_i32(f[5], "lstm_hidden")?,
            desk_scale: f[6] != 0,
            ablate_lstm: f[7] != 0,
            init_seed: f[8] as u32,
            extractor_seed: f[9] as u32,
        };
        let mut step = [0; 8];
        r.read_exact(&mut step)?;
        let step = u64::from_le_bytes(step);
        let count = read_u32(r)?;
        let mut records = Vec::new();
        for _ in 0..count {
            let len = read_u32(r)?;
            if len > MAX_NAME {
                return Err(corrupt(format!("record name length {len} is implausible")));
            }
            let mut name = vec![0; len as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| corrupt("record name is not UTF-8"))?;
            let rank = read_u32(r)?;
            if rank > MAX_RANK {
                return Err(corrupt(format!("{name}: rank {rank} is implausible")));
            }
            let shape = (0..rank)
                .map(|_| read_u32(r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut bytes = vec![0; n * 8];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| corrupt(format!("{name}: {e}")))?;
            records.push((name, t));
        }
        Ok(Checkpoint {
            config,
            step,
            records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
        Self::read_from(&mut BufReader::new(file))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuilds the model described by this checkpoint.
    pub fn to_model(&self) -> Result<FlowChromaModel> {
        let mut model = FlowChromaModel::new(self.config)?;
        let assign = |store: &mut crate::nn::ParamStore| -> Result<()> {
            let ids: Vec<_> = (0..store.len()).map(crate::nn::ParamId).collect();
            for id in ids {
                let p = store.get(id);
                let t = self
                    .get(&p.name)
                    .ok_or_else(|| corrupt(format!("missing parameter {}", p.name)))?;
                if t.shape() != p.value.shape() {
                    return Err(corrupt(format!(
                        "{}: stored shape {:?} differs from model shape {:?}",
                        p.name,
                        t.shape(),
                        p.value.shape()
                    )));
                }
                store.set_data(id, t.to_vec());
            }
            Ok(())
        };
        assign(model.params_mut())?;
        assign(model.extractor_mut().parameters_mut())?;
        Ok(model)
    }
}

impl FlowChromaModel {
    pub fn to_checkpoint(&self, step: u64) -> Checkpoint {
        let records = self
            .params()
            .iter()
            .chain(self.extractor().parameters().iter())
            .map(|p| (p.name.clone(), p.value.detach()))
            .collect();
        Checkpoint {
            config: *self.config(),
            step,
            records,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint(0).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::load(path)?.to_model()
    }
}
