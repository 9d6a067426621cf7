//! Binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "RFLCD1"  u32 version
//! u32 len, model config (JSON)
//! u32 epoch  u64 seed  u64 adam step
//! u32 count, then per parameter: u32 len, name, u8 trainable, u32 rank,
//!            u32 dims…, f32 values…
//! u32 count, then per trainable parameter: f32 m…, f32 v…
//! ```

use std::fs;
use std::path::Path;

use rflcd_core::model::{ModelConfig, RflCdNet};
use rflcd_core::nn::Module;
use rflcd_core::optim::{AdamState, Moments};
use rflcd_core::Tensor;

use crate::config::ModelSection;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"RFLCD1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub trainable: bool,
    pub value: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelSection,
    /// Completed epochs.
    pub epoch: u32,
    pub seed: u64,
    pub adam_step: u64,
    pub params: Vec<NamedTensor>,
    /// First and second moments of the trainable parameters, in order.
    pub moments: Vec<(Tensor<f32>, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn capture(net: &RflCdNet<f32>, adam: &AdamState<f32>, epoch: u32, seed: u64) -> Self {
        Checkpoint {
            model: ModelSection::from_model(net.config()),
            epoch,
            seed,
            adam_step: adam.step,
            params: net
                .params()
                .into_iter()
                .map(|p| NamedTensor {
                    name: p.name().to_string(),
                    trainable: p.is_trainable(),
                    value: p.value().clone(),
                })
                .collect(),
            moments: adam.moments.iter().map(|m| (m.m.clone(), m.v.clone())).collect(),
        }
    }

    /// Fields of the stored model configuration that differ from `cfg`.
    pub fn config_differences(&self, cfg: &ModelConfig) -> Vec<String> {
        let want = ModelSection::from_model(cfg);
        let have = &self.model;
        let mut diffs = Vec::new();
        let mut cmp = |key: &str, a: String, b: String| {
            if a != b {
                diffs.push(format!("model.{key}: checkpoint {a}, config {b}"));
            }
        };
        cmp("base_width", have.base_width.to_string(), want.base_width.to_string());
        cmp("dms", have.dms.to_string(), want.dms.to_string());
        cmp("c2fg", have.c2fg.to_string(), want.c2fg.to_string());
        cmp("lf", have.lf.to_string(), want.lf.to_string());
        cmp("fusion", have.fusion.clone(), want.fusion.clone());
        cmp("c2fg_top", have.c2fg_top.to_string(), want.c2fg_top.to_string());
        cmp("hidden_init", have.hidden_init.clone(), want.hidden_init.clone());
        cmp("attention_ratio", have.attention_ratio.to_string(), want.attention_ratio.to_string());
        diffs
    }

    /// The model configuration recorded in the checkpoint.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = crate::config::RunConfig {
            model: self.model.clone(),
            ..Default::default()
        };
        cfg.model_config()
    }

    /// Builds the stored model, checking it against `expected` when given.
    pub fn restore_model(&self, expected: Option<&ModelConfig>) -> Result<RflCdNet<f32>> {
        let cfg = self.model_config()?;
        if let Some(exp) = expected {
            let diffs = self.config_differences(exp);
            if !diffs.is_empty() {
                return Err(Error::ConfigMismatch(diffs));
            }
        }
        let mut net = RflCdNet::<f32>::zeroed(cfg)?;
        let params = net.params();
        if params.len() != self.params.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} parameters, model has {}",
                self.params.len(),
                params.len()
            )));
        }
        for (p, stored) in params.iter().zip(&self.params) {
            if p.name() != stored.name || p.value().shape() != stored.value.shape() {
                return Err(Error::Data(format!(
                    "checkpoint parameter {} {:?} does not match model parameter {} {:?}",
                    stored.name,
                    stored.value.shape(),
                    p.name(),
                    p.value().shape()
                )));
            }
        }
        let mut i = 0;
        net.visit_mut(&mut |p| {
            *p.value_mut() = self.params[i].value.clone();
            i += 1;
        });
        Ok(net)
    }

    pub fn restore_adam(&self, net: &RflCdNet<f32>) -> Result<AdamState<f32>> {
        let mut state = AdamState::new(net);
        if state.moments.len() != self.moments.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} optimizer moments, model has {} trainable parameters",
                self.moments.len(),
                state.moments.len()
            )));
        }
        for (slot, (m, v)) in state.moments.iter_mut().zip(&self.moments) {
            if slot.m.shape() != m.shape() || slot.v.shape() != v.shape() {
                return Err(Error::Data("optimizer moment shape does not match its parameter".into()));
            }
            *slot = Moments { m: m.clone(), v: v.clone() };
        }
        state.step = self.adam_step;
        Ok(state)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, VERSION);
        put_str(&mut w, &serde_json::to_string(&self.model).expect("model config serializes"));
        put_u32(&mut w, self.epoch);
        w.extend_from_slice(&self.seed.to_le_bytes());
        w.extend_from_slice(&self.adam_step.to_le_bytes());
        put_u32(&mut w, self.params.len() as u32);
        for p in &self.params {
            put_str(&mut w, &p.name);
            w.push(p.trainable as u8);
            put_u32(&mut w, p.value.rank() as u32);
            for &d in p.value.shape() {
                put_u32(&mut w, d as u32);
            }
            put_f32s(&mut w, p.value.data());
        }
        put_u32(&mut w, self.moments.len() as u32);
        for (m, v) in &self.moments {
            put_f32s(&mut w, m.data());
            put_f32s(&mut w, v.data());
        }
        w
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(r.err("bad header magic (not an RFLCD1 checkpoint)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err(&format!("unsupported format version {version} (expected {VERSION})")));
        }
        let model: ModelSection =
            serde_json::from_str(&r.string()?).map_err(|e| r.err(&format!("model config: {e}")))?;
        let epoch = r.u32()?;
        let seed = r.u64()?;
        let adam_step = r.u64()?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        let mut trainable_shapes = Vec::new();
        for _ in 0..count {
            let name = r.string()?;
            let trainable = match r.take(1)?[0] {
                0 => false,
                1 => true,
                b => return Err(r.err(&format!("bad trainable flag {b} for {name}"))),
            };
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(r.err(&format!("implausible rank {rank} for {name}")));
            }
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let value = r.tensor(&shape)?;
            if trainable {
                trainable_shapes.push(shape);
            }
            params.push(NamedTensor { name, trainable, value });
        }
        let n_moments = r.u32()? as usize;
        if n_moments != trainable_shapes.len() {
            return Err(r.err(&format!(
                "{n_moments} optimizer moments for {} trainable parameters",
                trainable_shapes.len()
            )));
        }
        let mut moments = Vec::with_capacity(n_moments);
        for shape in &trainable_shapes {
            moments.push((r.tensor(shape)?, r.tensor(shape)?));
        }
        if r.pos != bytes.len() {
            return Err(r.err(&format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            model,
            epoch,
            seed,
            adam_step,
            params,
            moments,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        fs::write(path, self.to_bytes()).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        Self::from_bytes(&bytes, path)
    }
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    put_u32(w, s.len() as u32);
    w.extend_from_slice(s.as_bytes());
}

fn put_f32s(w: &mut Vec<u8>, data: &[f32]) {
    for v in data {
        w.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, detail: &str) -> Error {
        Error::Checkpoint {
            path: self.path.to_path_buf(),
            detail: detail.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.err(&format!("truncated at byte {} (needed {n} more)", self.pos)));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.err("string is not UTF-8"))
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor<f32>> {
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len.filter(|&l| l.checked_mul(4).is_some()).ok_or_else(|| self.err("tensor too large"))?;
        let raw = self.take(len * 4)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        Tensor::from_vec(shape, data).map_err(|e| self.err(&e.to_string()))
    }
}
