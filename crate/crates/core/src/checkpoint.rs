//! The `A3RLCK1` parameter container.
//!
//! Layout: the 7 ASCII bytes `A3RLCK1`, a `u32` little-endian byte length,
//! that many bytes of JSON header, then every block's parameters as
//! little-endian `f32` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::density::DensityEnsemble;
use crate::error::{Error, Result};
use crate::nn::{DenseNet, NetShape};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"A3RLCK1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockInfo {
    pub name: String,
    pub shape: NetShape,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub module: String,
    pub config_hash: String,
    pub env_step: u64,
    pub blocks: Vec<BlockInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    params: Vec<Vec<f32>>,
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        kind: "checkpoint",
        reason: reason.into(),
    }
}

impl Checkpoint {
    pub fn new(module: impl Into<String>, config_hash: impl Into<String>, env_step: u64) -> Self {
        Self {
            header: CheckpointHeader {
                module: module.into(),
                config_hash: config_hash.into(),
                env_step,
                blocks: Vec::new(),
            },
            params: Vec::new(),
        }
    }

    /// Appends a network; parameters are stored as `f32`.
    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, net: &DenseNet<T>) {
        self.header.blocks.push(BlockInfo {
            name: name.into(),
            shape: net.shape().clone(),
        });
        self.params.push(net.params().iter().map(|p| p.as_f64() as f32).collect());
    }

    /// Actor, critics, targets and (when given) density members.
    pub fn from_agent<T: Scalar>(
        agent: &Agent<T>,
        density: Option<&DensityEnsemble<T>>,
        config_hash: &str,
        env_step: u64,
    ) -> Self {
        let mut ck = Self::new("agent", config_hash, env_step);
        ck.push("actor", &agent.actor.net);
        for (i, c) in agent.ensemble.critics.iter().enumerate() {
            ck.push(format!("critic{i}"), c);
        }
        for (i, c) in agent.ensemble.targets.iter().enumerate() {
            ck.push(format!("target{i}"), c);
        }
        if let Some(d) = density {
            for (i, m) in d.members().iter().enumerate() {
                ck.push(format!("density{i}"), m);
            }
        }
        ck
    }

    pub fn block_names(&self) -> impl Iterator<Item = &str> {
        self.header.blocks.iter().map(|b| b.name.as_str())
    }

    pub fn net(&self, name: &str) -> Result<DenseNet<f32>> {
        let i = self
            .header
            .blocks
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| Error::invalid(format!("no block named {name:?}")))?;
        DenseNet::from_params(self.header.blocks[i].shape.clone(), self.params[i].clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let len = u32::try_from(header.len()).map_err(|_| bad("header too long"))?;
        let mut out = Vec::with_capacity(11 + header.len() + 4 * self.params.iter().map(Vec::len).sum::<usize>());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&header);
        for block in &self.params {
            for p in block {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(CHECKPOINT_MAGIC.as_slice())
            .ok_or_else(|| bad("missing A3RLCK1 magic"))?;
        if rest.len() < 4 {
            return Err(bad("truncated header length"));
        }
        let len = u32::from_le_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
        let rest = &rest[4..];
        if rest.len() < len {
            return Err(bad(format!("header length {len} exceeds file size")));
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&rest[..len]).map_err(|e| bad(format!("header: {e}")))?;
        let mut body = &rest[len..];
        let mut params = Vec::with_capacity(header.blocks.len());
        for b in &header.blocks {
            b.shape.validate().map_err(|e| bad(format!("block {}: {e}", b.name)))?;
            let n = 4 * b.shape.num_params();
            if body.len() < n {
                return Err(bad(format!("block {} truncated", b.name)));
            }
            params.push(
                body[..n]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            );
            body = &body[n..];
        }
        if !body.is_empty() {
            return Err(bad(format!("{} trailing bytes", body.len())));
        }
        Ok(Self { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
