//! Single-file binary checkpoints: a versioned header, a JSON metadata block
//! and a table of named little-endian tensors.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::model::XGait;
use crate::nn::{Module, Param};

pub const MAGIC: &[u8; 8] = b"XGAITCKP";
pub const VERSION: u32 = 1;

const DTYPE_F64: u8 = 0;
const DTYPE_F32: u8 = 1;

/// Serializable position of a ChaCha stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal `u128` word position.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bytes = hex::decode(&self.seed).map_err(|e| Error::Checkpoint(format!("rng seed: {e}")))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Checkpoint("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|e| Error::Checkpoint(format!("rng word position: {e}")))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub iteration: usize,
    pub fingerprint: String,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    /// Full resolved config as TOML.
    pub config: String,
    pub rng: RngState,
    pub code_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, Tensor>,
}

/// Prefix for optimizer momentum buffers in the tensor table.
pub const MOMENTUM_PREFIX: &str = "momentum/";

impl Checkpoint {
    /// Snapshots every parameter and buffer of `model` plus optimizer buffers.
    pub fn capture<M: Module>(meta: CheckpointMeta, model: &mut M, momentum: &BTreeMap<String, Vec<f64>>) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, p) in model.named_params() {
            tensors.insert(
                name,
                Tensor {
                    shape: p.shape.clone(),
                    data: p.value.clone(),
                },
            );
        }
        for (name, buf) in momentum {
            tensors.insert(
                format!("{MOMENTUM_PREFIX}{name}"),
                Tensor {
                    shape: vec![buf.len()],
                    data: buf.clone(),
                },
            );
        }
        Self { meta, tensors }
    }

    /// Copies stored values into `model`, which must have exactly the stored
    /// parameter names and shapes.
    pub fn restore_model<M: Module>(&self, model: &mut M) -> Result<()> {
        let mut seen = 0;
        for (name, p) in model.named_params() {
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            load_param(&name, p, t)?;
            seen += 1;
        }
        let stored = self
            .tensors
            .keys()
            .filter(|k| !k.starts_with(MOMENTUM_PREFIX))
            .count();
        if stored != seen {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {stored} model tensors, model has {seen}"
            )));
        }
        Ok(())
    }

    /// The config the checkpoint was trained under.
    pub fn config(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml_str(&self.meta.config, &[])
    }

    /// A model with the stored architecture and weights.
    pub fn build_model(&self) -> Result<XGait> {
        use rand::SeedableRng;
        let cfg = self.config()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = XGait::new(&cfg.model, self.meta.num_classes, &mut rng)?;
        self.restore_model(&mut model)?;
        Ok(model)
    }

    pub fn momentum(&self) -> BTreeMap<String, Vec<f64>> {
        self.tensors
            .iter()
            .filter_map(|(k, t)| k.strip_prefix(MOMENTUM_PREFIX).map(|n| (n.to_string(), t.data.clone())))
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        w.write_u64::<LittleEndian>(meta.len() as u64)?;
        w.write_all(&meta)?;
        w.write_u32::<LittleEndian>(self.tensors.len() as u32)?;
        for (name, t) in &self.tensors {
            w.write_u32::<LittleEndian>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_u32::<LittleEndian>(t.shape.len() as u32)?;
            for &d in &t.shape {
                w.write_u64::<LittleEndian>(d as u64)?;
            }
            w.write_u8(DTYPE_F64)?;
            for &v in &t.data {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |e: std::io::Error| Error::Checkpoint(format!("truncated or unreadable: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(bad)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(bad)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = r.read_u64::<LittleEndian>().map_err(bad)? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta).map_err(bad)?;
        let meta: CheckpointMeta =
            serde_json::from_slice(&meta).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let count = r.read_u32::<LittleEndian>().map_err(bad)?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let len = r.read_u32::<LittleEndian>().map_err(bad)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(bad)?;
            let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let ndim = r.read_u32::<LittleEndian>().map_err(bad)?;
            let shape = (0..ndim)
                .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(bad)?;
            let n: usize = shape.iter().product();
            let data = match r.read_u8().map_err(bad)? {
                DTYPE_F64 => (0..n)
                    .map(|_| r.read_f64::<LittleEndian>())
                    .collect::<std::io::Result<Vec<_>>>()
                    .map_err(bad)?,
                DTYPE_F32 => (0..n)
                    .map(|_| r.read_f32::<LittleEndian>().map(f64::from))
                    .collect::<std::io::Result<Vec<_>>>()
                    .map_err(bad)?,
                other => return Err(Error::Checkpoint(format!("unknown dtype {other}"))),
            };
            tensors.insert(name, Tensor { shape, data });
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn load_param(name: &str, p: &mut Param, t: &Tensor) -> Result<()> {
    if t.shape != p.shape {
        return Err(Error::Checkpoint(format!(
            "tensor {name}: stored shape {:?}, model shape {:?}",
            t.shape, p.shape
        )));
    }
    p.value.copy_from_slice(&t.data);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::{RngCore, SeedableRng};

    fn meta(rng: &ChaCha8Rng) -> CheckpointMeta {
        CheckpointMeta {
            iteration: 5,
            fingerprint: "abc".into(),
            num_classes: 3,
            class_names: vec!["a".into(), "b".into(), "c".into()],
            config: String::new(),
            rng: RngState::capture(rng),
            code_version: "test".into(),
        }
    }

    #[test]
    fn rng_state_resumes_the_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        rng.set_stream(4);
        for _ in 0..13 {
            rng.next_u32();
        }
        let mut restored = RngState::capture(&rng).restore().unwrap();
        assert_eq!(rng.next_u64(), restored.next_u64());
    }

    #[test]
    fn model_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = XGait::new(&ModelConfig::tiny(), 3, &mut rng).unwrap();
        let mut b = XGait::new(&ModelConfig::tiny(), 3, &mut rng).unwrap();
        let mut momentum = BTreeMap::new();
        momentum.insert("classifier".to_string(), vec![0.25; 4]);
        let ck = Checkpoint::capture(meta(&rng), &mut a, &momentum);
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        back.restore_model(&mut b).unwrap();
        let va: Vec<_> = a.named_params().into_iter().map(|(n, p)| (n, p.value.clone())).collect();
        let vb: Vec<_> = b.named_params().into_iter().map(|(n, p)| (n, p.value.clone())).collect();
        assert_eq!(va, vb);
        assert_eq!(back.momentum(), momentum);
    }

    #[test]
    fn corrupt_and_mismatched_files_are_rejected() {
        assert!(Checkpoint::read_from(&b"NOTACKPT...."[..]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = XGait::new(&ModelConfig::tiny(), 3, &mut rng).unwrap();
        let ck = Checkpoint::capture(meta(&rng), &mut a, &BTreeMap::new());
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(Checkpoint::read_from(bytes.as_slice()).is_err());
        let mut other = XGait::new(&ModelConfig::tiny(), 4, &mut rng).unwrap();
        assert!(ck.restore_model(&mut other).is_err());
    }
}
