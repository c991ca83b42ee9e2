//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic, `u32` version, `u32` header length, a JSON header
//! (model config, normalization, parameter names and shapes, epoch, step,
//! RNG state, config echo), then every parameter tensor followed by every
//! momentum tensor as little-endian `f32`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DepthNet, ModelConfig, Sgd};

pub const MAGIC: [u8; 8] = *b"SFDCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Word position as a decimal string (it is a `u128`).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Option<ChaCha8Rng> {
        if self.seed.len() != 64 {
            return None;
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).ok()?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().ok()?);
        Some(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub model: ModelConfig,
    pub image_mean: [f32; 3],
    pub image_std: [f32; 3],
    pub tensors: Vec<TensorInfo>,
    pub momentum: f32,
    /// Completed epochs.
    pub epoch: u32,
    /// Completed optimizer steps.
    pub step: u64,
    pub best_loss: Option<f64>,
    pub rng: RngState,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: Header,
    pub net: DepthNet,
    pub optimizer: Sgd,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let tensors = self.net.params.iter().map(|p| &p.value).chain(&self.optimizer.velocity);
        for t in tensors {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format(path, m.to_string());
        if bytes.len() < 16 || bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let mut net = DepthNet::new(header.model.clone())?;
        net.image_mean = header.image_mean;
        net.image_std = header.image_std;
        let expected: Vec<TensorInfo> = net
            .params
            .iter()
            .map(|p| TensorInfo {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect();
        if expected != header.tensors {
            return Err(bad("parameter layout does not match the model config"));
        }
        let mut data = bytes[16 + hlen..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let total: usize = net.params.iter().map(|p| p.value.len()).sum();
        if bytes.len() - 16 - hlen != 8 * total {
            return Err(bad("tensor data has the wrong length"));
        }
        for p in &mut net.params {
            p.value.iter_mut().for_each(|v| *v = data.next().unwrap());
        }
        let mut optimizer = Sgd::new(&net.params, header.momentum);
        for v in &mut optimizer.velocity {
            v.iter_mut().for_each(|x| *x = data.next().unwrap());
        }
        Ok(Self {
            header,
            net,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

pub fn tensor_infos(net: &DepthNet) -> Vec<TensorInfo> {
    net.params
        .iter()
        .map(|p| TensorInfo {
            name: p.name.clone(),
            shape: p.shape.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn rng_state_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..17 {
            rng.random::<u64>();
        }
        let mut back = RngState::capture(&rng).restore().unwrap();
        assert_eq!(rng.random::<u64>(), back.random::<u64>());
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let cfg = ModelConfig {
            height: 16,
            width: 16,
            levels: 2,
            base_channels: 8,
            growth: 2,
            seed: 3,
        };
        let net = DepthNet::new(cfg.clone()).unwrap();
        let mut optimizer = Sgd::new(&net.params, 0.9);
        optimizer.velocity[0][0] = 0.25;
        let ck = Checkpoint {
            header: Header {
                model: cfg,
                image_mean: [0.1, 0.2, 0.3],
                image_std: [0.5, 0.5, 0.5],
                tensors: tensor_infos(&net),
                momentum: 0.9,
                epoch: 3,
                step: 12,
                best_loss: Some(0.125),
                rng: RngState::capture(&ChaCha8Rng::seed_from_u64(1)),
                config: serde_json::json!({"a": 1}),
            },
            net,
            optimizer,
        };
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes, Path::new("x")).unwrap();
        assert_eq!(back.encode(), bytes);
        assert_eq!(back.optimizer.velocity[0][0], 0.25);
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 4], Path::new("x")).is_err());
    }
}
