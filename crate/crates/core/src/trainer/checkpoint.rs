//! Binary checkpoint: `LVAE`, u32 version, u64 manifest length, JSON manifest,
//! little-endian f32 arrays in manifest order, then a CRC32 of every preceding
//! byte. All integers are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Hierarchy, HierarchyConfig};
use crate::noise::RngState;
use crate::tensor::Tensor;

use super::adam::{AdamConfig, AdamState};
use super::plan::TrainPlan;

pub const MAGIC: &[u8; 4] = b"LVAE";
pub const FORMAT_VERSION: u32 = 1;

/// RNG positions needed to continue a run exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainerRngs {
    pub noise: RngState,
    pub binarize: RngState,
    pub shuffle: RngState,
}

/// Everything needed to evaluate a model or continue training it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Hierarchy<f32>,
    pub plan: TrainPlan,
    pub adam: AdamState<f32>,
    /// Epochs completed.
    pub epoch: usize,
    pub rngs: TrainerRngs,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    config: HierarchyConfig,
    plan: TrainPlan,
    epoch: usize,
    adam: AdamConfig,
    adam_t: u64,
    rngs: TrainerRngs,
    arrays: Vec<ArrayEntry>,
}

impl Checkpoint {
    pub fn config(&self) -> &HierarchyConfig {
        self.model.config()
    }

    fn named_arrays(&self) -> Vec<(String, &Tensor<f32>)> {
        let names = self.model.params().names();
        let mut out = Vec::new();
        for (n, t) in names.iter().zip(self.model.params().tensors()) {
            out.push((format!("param/{n}"), t));
        }
        for (i, r) in self.model.running_stats().iter().enumerate() {
            out.push((format!("bn/{i}/mean"), &r.mean));
            out.push((format!("bn/{i}/var"), &r.var));
        }
        for (n, t) in names.iter().zip(&self.adam.m) {
            out.push((format!("adam.m/{n}"), t));
        }
        for (n, t) in names.iter().zip(&self.adam.v) {
            out.push((format!("adam.v/{n}"), t));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let arrays = self.named_arrays();
        let manifest = Manifest {
            config: self.config().clone(),
            plan: self.plan.clone(),
            epoch: self.epoch,
            adam: self.adam.config,
            adam_t: self.adam.t,
            rngs: self.rngs.clone(),
            arrays: arrays
                .iter()
                .map(|(name, t)| ArrayEntry {
                    name: name.clone(),
                    dtype: "f32".into(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &arrays {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 20 {
            return Err(bad(format!("file truncated ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("missing LVAE magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!(
                "format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(bad("checksum mismatch".into()));
        }
        let mlen = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
        let mend = 16usize
            .checked_add(mlen)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| bad("manifest extends past end of file".into()))?;
        let manifest: Manifest = serde_json::from_slice(&body[16..mend])
            .map_err(|e| bad(format!("manifest: {e}")))?;

        let mut offset = mend;
        let mut arrays = Vec::with_capacity(manifest.arrays.len());
        for a in &manifest.arrays {
            if a.dtype != "f32" {
                return Err(bad(format!("array {} has dtype {}", a.name, a.dtype)));
            }
            let n: usize = a.shape.iter().product();
            let end = offset + 4 * n;
            if end > body.len() {
                return Err(bad(format!("array {} truncated", a.name)));
            }
            let data: Vec<f32> = body[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            arrays.push((a.name.as_str(), Tensor::new(&a.shape, data)?));
            offset = end;
        }
        if offset != body.len() {
            return Err(bad(format!("{} unexpected trailing bytes", body.len() - offset)));
        }

        let mut model = Hierarchy::<f32>::new(manifest.config, manifest.plan.seed)?;
        let mut adam = AdamState::new(manifest.adam, model.params());
        adam.t = manifest.adam_t;
        let names: Vec<String> = model.params().names().to_vec();
        let slots = model.running_stats().len();
        let mut expected = Vec::new();
        expected.extend(names.iter().map(|n| format!("param/{n}")));
        for i in 0..slots {
            expected.push(format!("bn/{i}/mean"));
            expected.push(format!("bn/{i}/var"));
        }
        expected.extend(names.iter().map(|n| format!("adam.m/{n}")));
        expected.extend(names.iter().map(|n| format!("adam.v/{n}")));
        if expected.len() != arrays.len()
            || expected.iter().zip(&arrays).any(|(e, (n, _))| e != n)
        {
            return Err(bad("array names do not match the model configuration".into()));
        }

        let mut it = arrays.into_iter().map(|(_, t)| t);
        let mut take = |target: &Tensor<f32>, what: &str| -> Result<Tensor<f32>> {
            let t = it.next().expect("count checked");
            if t.shape() != target.shape() {
                return Err(Error::Checkpoint(format!(
                    "{what}: shape {:?}, model expects {:?}",
                    t.shape(),
                    target.shape()
                )));
            }
            Ok(t)
        };
        for (i, n) in names.iter().enumerate() {
            let t = take(&model.params().tensors()[i], n)?;
            model.params_mut().tensors_mut()[i] = t;
        }
        for i in 0..slots {
            let mean = take(&model.running_stats()[i].mean, "bn mean")?;
            let var = take(&model.running_stats()[i].var, "bn var")?;
            model.running_stats_mut()[i].mean = mean;
            model.running_stats_mut()[i].var = var;
        }
        for i in 0..names.len() {
            adam.m[i] = take(&adam.m[i], "adam m")?;
        }
        for i in 0..names.len() {
            adam.v[i] = take(&adam.v[i], "adam v")?;
        }
        for r in [&manifest.rngs.noise, &manifest.rngs.binarize, &manifest.rngs.shuffle] {
            r.restore()
                .ok_or_else(|| bad(format!("invalid RNG position {}", r.word_pos)))?;
        }

        Ok(Checkpoint {
            model,
            plan: manifest.plan,
            adam,
            epoch: manifest.epoch,
            rngs: manifest.rngs,
        })
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ck.to_bytes()?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
