//! Binary checkpoint format.
//!
//! Layout: magic, little-endian `u32` version, `u64` header length, a JSON
//! header, raw little-endian parameter values followed by the optimizer
//! moments, and a trailing SHA-256 of everything before it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::MultimodalVae;
use crate::optim::{Adam, AdamConfig};

pub const MAGIC: &[u8; 8] = b"MMVAECKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal string because JSON numbers cannot hold a `u128`.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let seed = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        Self { seed, stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = || Error::Integrity("malformed rng state".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHeader {
    pub name: String,
    pub config: AdamConfig,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamHeader {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    epoch: usize,
    seed: u64,
    rng: RngState,
    optimizer: OptimizerHeader,
    params: Vec<ParamHeader>,
}

/// Values of one named array in checkpoint order.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub epoch: usize,
    pub seed: u64,
    pub rng: RngState,
    pub optimizer: OptimizerHeader,
    pub params: Vec<NamedArray>,
    pub adam_m: Vec<Vec<f64>>,
    pub adam_v: Vec<Vec<f64>>,
}

fn values(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?)
}

impl Checkpoint {
    pub fn capture(model: &MultimodalVae, opt: &Adam, epoch: usize, seed: u64, rng: &ChaCha8Rng) -> Result<Self> {
        let mut params = Vec::new();
        let mut adam_m = Vec::new();
        let mut adam_v = Vec::new();
        for (name, var) in model.store().vars() {
            params.push(NamedArray { name: name.clone(), shape: var.dims().to_vec(), data: values(var.as_tensor())? });
            adam_m.push(values(&opt.m[name])?);
            adam_v.push(values(&opt.v[name])?);
        }
        Ok(Self {
            config: model.config().clone(),
            epoch,
            seed,
            rng: RngState::capture(rng),
            optimizer: OptimizerHeader { name: Adam::NAME.into(), config: opt.config, step: opt.step },
            params,
            adam_m,
            adam_v,
        })
    }

    /// Rebuilds the model and loads the stored parameter values.
    pub fn model(&self) -> Result<MultimodalVae> {
        let model = MultimodalVae::new(self.config.clone(), 0)?;
        let vars = model.store().vars();
        if vars.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameters, its config builds {}",
                self.params.len(),
                vars.len()
            )));
        }
        for p in &self.params {
            let var = vars.get(&p.name).ok_or_else(|| Error::Config(format!("unknown parameter {}", p.name)))?;
            if var.dims() != p.shape.as_slice() {
                return Err(Error::Shape(format!("parameter {} has shape {:?}, expected {:?}", p.name, p.shape, var.dims())));
            }
            var.set(&self.tensor(&p.data, &p.shape)?)?;
        }
        Ok(model)
    }

    pub fn optimizer(&self) -> Result<Adam> {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (i, p) in self.params.iter().enumerate() {
            m.insert(p.name.clone(), self.tensor(&self.adam_m[i], &p.shape)?);
            v.insert(p.name.clone(), self.tensor(&self.adam_v[i], &p.shape)?);
        }
        Ok(Adam { config: self.optimizer.config, step: self.optimizer.step, m, v })
    }

    fn dtype(&self) -> DType {
        if self.config.double_precision {
            DType::F64
        } else {
            DType::F32
        }
    }

    fn tensor(&self, data: &[f64], shape: &[usize]) -> Result<Tensor> {
        Ok(Tensor::from_slice(data, shape, &Device::Cpu)?.to_dtype(self.dtype())?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            version: VERSION,
            config: self.config.clone(),
            epoch: self.epoch,
            seed: self.seed,
            rng: self.rng.clone(),
            optimizer: self.optimizer.clone(),
            params: self.params.iter().map(|p| ParamHeader { name: p.name.clone(), shape: p.shape.clone() }).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let double = self.config.double_precision;
        let mut push = |data: &[f64]| {
            for &x in data {
                if double {
                    out.extend_from_slice(&x.to_le_bytes());
                } else {
                    out.extend_from_slice(&(x as f32).to_le_bytes());
                }
            }
        };
        for p in &self.params {
            push(&p.data);
        }
        for m in &self.adam_m {
            push(m);
        }
        for v in &self.adam_v {
            push(v);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| Error::Integrity(what.to_string());
        if bytes.len() < MAGIC.len() + 12 + 32 {
            return Err(corrupt("file is truncated"));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch (file truncated or modified)"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Integrity(format!("unsupported checkpoint version {version}, expected {VERSION}")));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let json = body.get(20..20 + hlen).ok_or_else(|| corrupt("header overruns file"))?;
        let header: Header = serde_json::from_slice(json)?;
        let width = if header.config.double_precision { 8 } else { 4 };
        let mut rest = &body[20 + hlen..];
        let mut take = |n: usize| -> Result<Vec<f64>> {
            if rest.len() < n * width {
                return Err(corrupt("payload is shorter than the header declares"));
            }
            let (chunk, tail) = rest.split_at(n * width);
            rest = tail;
            Ok(if width == 8 {
                chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()
            } else {
                chunk.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect()
            })
        };
        let sizes: Vec<usize> = header.params.iter().map(|p| p.shape.iter().product()).collect();
        let mut params = Vec::new();
        for (p, &n) in header.params.iter().zip(&sizes) {
            params.push(NamedArray { name: p.name.clone(), shape: p.shape.clone(), data: take(n)? });
        }
        let adam_m = sizes.iter().map(|&n| take(n)).collect::<Result<Vec<_>>>()?;
        let adam_v = sizes.iter().map(|&n| take(n)).collect::<Result<Vec<_>>>()?;
        if !rest.is_empty() {
            return Err(corrupt("trailing bytes after payload"));
        }
        Ok(Self {
            config: header.config,
            epoch: header.epoch,
            seed: header.seed,
            rng: header.rng,
            optimizer: header.optimizer,
            params,
            adam_m,
            adam_v,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
