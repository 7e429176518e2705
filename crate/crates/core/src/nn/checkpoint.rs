//! Checkpoint container.
//!
//! Layout: the 8 magic bytes `OBJFCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a UTF-8 JSON header of that
//! length, then the shared parameters followed by the object-head parameters
//! as little-endian `f64`.

use super::network::{FieldNetwork, NetworkConfig};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"OBJFCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: NetworkConfig,
    pub bounds: Aabb,
    pub background: Vec3,
    pub iteration: usize,
    pub seed: u64,
    pub shared_len: usize,
    pub object_len: usize,
    /// `(fan_in, fan_out)` of every layer in parameter order.
    pub layers: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: FieldNetwork,
    pub iteration: usize,
    pub seed: u64,
}

impl Checkpoint {
    pub fn header(&self) -> CheckpointHeader {
        let l = self.network.layout();
        let mut layers: Vec<(usize, usize)> = l.backbone.iter().map(|d| (d.fan_in, d.fan_out)).collect();
        for d in [l.density, l.color_hidden, l.color_out, l.object_hidden, l.object_out] {
            layers.push((d.fan_in, d.fan_out));
        }
        CheckpointHeader {
            version: FORMAT_VERSION,
            config: self.network.config.clone(),
            bounds: self.network.bounds,
            background: self.network.background,
            iteration: self.iteration,
            seed: self.seed,
            shared_len: self.network.shared.len(),
            object_len: self.network.object.len(),
            layers,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serialises");
        let mut out = Vec::with_capacity(20 + header.len() + 8 * self.network.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.network.shared.iter().chain(&self.network.object) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Config(format!("invalid checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..).ok_or_else(|| bad("truncated"))?;
        if body.len() < header_len {
            return Err(bad("truncated header"));
        }
        let header: CheckpointHeader = serde_json::from_slice(&body[..header_len])?;
        header.config.validate()?;
        let layout = header.config.layout();
        if layout.shared_len != header.shared_len || layout.object_len != header.object_len {
            return Err(bad("parameter counts disagree with the layer shapes"));
        }
        let params = &body[header_len..];
        if params.len() != 8 * (header.shared_len + header.object_len) {
            return Err(bad("parameter block has the wrong length"));
        }
        let mut values = params.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let shared: Vec<f64> = values.by_ref().take(header.shared_len).collect();
        let object: Vec<f64> = values.collect();
        Ok(Checkpoint {
            network: FieldNetwork { config: header.config, shared, object, bounds: header.bounds, background: header.background },
            iteration: header.iteration,
            seed: header.seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
