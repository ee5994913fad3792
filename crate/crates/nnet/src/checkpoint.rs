//! Checkpoint file: magic, little-endian `u64` header length, JSON header,
//! then raw little-endian `f32` sections (parameters, Adam `m`, Adam `v`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::net::{Layout, NetConfig, StageNet, TensorInfo};
use crate::optim::Adam;
use crate::train::TrainConfig;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"FLNNCKP1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub epoch: usize,
    pub params: Vec<f32>,
    pub adam: Adam<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config_hash: String,
    seed: u64,
    epoch: usize,
    adam_t: u64,
    net: NetConfig,
    train: TrainConfig,
    tensors: Vec<TensorInfo>,
    sections: Vec<String>,
}

/// Hash of everything that determines a training run's output.
pub fn config_hash(net: &NetConfig, train: &TrainConfig) -> String {
    let json = serde_json::to_vec(&(net, train)).expect("configs serialize");
    hex::encode(&Sha256::digest(&json)[..8])
}

impl Checkpoint {
    pub fn config_hash(&self) -> String {
        config_hash(&self.net, &self.train)
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn network(&self) -> Result<StageNet<f32>> {
        StageNet::from_params(&self.net, self.params.clone())
    }

    /// Rejects a checkpoint produced under different configs.
    pub fn expect_hash(&self, expected: &str) -> Result<()> {
        let found = self.config_hash();
        if found != expected {
            return Err(Error::HashMismatch {
                expected: expected.into(),
                found,
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let layout = Layout::new(&self.net)?;
        let header = Header {
            config_hash: self.config_hash(),
            seed: self.train.seed,
            epoch: self.epoch,
            adam_t: self.adam.t,
            net: self.net.clone(),
            train: self.train.clone(),
            tensors: layout.tensors().to_vec(),
            sections: vec!["params".into(), "adam.m".into(), "adam.v".into()],
        };
        let json = serde_json::to_vec(&header)?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for section in [&self.params, &self.adam.m, &self.adam.v] {
            for v in section.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::Corrupt {
            path: path.to_path_buf(),
            reason: reason.into(),
        };
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| corrupt("truncated magic"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)
            .map_err(|_| corrupt("truncated header length"))?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 24 {
            return Err(corrupt("header length implausible"));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)
            .map_err(|_| corrupt("truncated header"))?;
        let h: Header = serde_json::from_slice(&json)?;
        if h.config_hash != config_hash(&h.net, &h.train) {
            return Err(Error::HashMismatch {
                expected: h.config_hash,
                found: config_hash(&h.net, &h.train),
            });
        }
        let layout = Layout::new(&h.net)?;
        if layout.tensors() != h.tensors.as_slice() {
            return Err(corrupt("tensor directory does not match the net config"));
        }
        let n = layout.param_count();
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() != 3 * n * 4 {
            return Err(corrupt(&format!(
                "payload has {} bytes, expected {}",
                payload.len(),
                3 * n * 4
            )));
        }
        let mut floats = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
        let mut take = || floats.by_ref().take(n).collect::<Vec<f32>>();
        let params = take();
        let m = take();
        let v = take();
        Ok(Self {
            net: h.net,
            train: h.train,
            epoch: h.epoch,
            params,
            adam: Adam { m, v, t: h.adam_t },
        })
    }
}
