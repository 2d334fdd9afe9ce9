//! Offline datasets and the `A3RLDS1` file format.
//!
//! Layout: the ASCII line `A3RLDS1 ` followed by a compact JSON header and
//! `\n`, then `count` fixed-size records of little-endian `f32`:
//! `s[state_dim] a[action_dim] r s_next[state_dim] done(1.0 | 0.0)`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::{reset, step, EnvSpec};
use super::policy::{Behavior, Policy, PolicyKind, ScriptedPolicy};
use super::transition::{Source, Transition};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &str = "A3RLDS1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub env: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub count: usize,
    pub policy: String,
    pub seed: u64,
}

impl DatasetHeader {
    fn record_floats(&self) -> usize {
        2 * self.state_dim + self.action_dim + 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub env: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub policy: String,
    pub seed: u64,
    records: Vec<Transition>,
}

impl OfflineDataset {
    pub fn new(
        spec: &EnvSpec,
        policy: impl Into<String>,
        seed: u64,
        records: Vec<Transition>,
    ) -> Result<Self> {
        let ds = Self {
            env: spec.name.clone(),
            state_dim: spec.state_dim,
            action_dim: spec.action_dim,
            policy: policy.into(),
            seed,
            records,
        };
        ds.check_records()?;
        Ok(ds)
    }

    fn check_records(&self) -> Result<()> {
        for (i, t) in self.records.iter().enumerate() {
            if t.s.len() != self.state_dim
                || t.s_next.len() != self.state_dim
                || t.a.len() != self.action_dim
            {
                return Err(Error::invalid(format!(
                    "record {i} does not match the dataset dimensions"
                )));
            }
            if !t.r.is_finite() {
                return Err(Error::non_finite(format!("reward of record {i}")));
            }
            if t.source() != Source::Offline {
                return Err(Error::invalid(format!("record {i} is not tagged offline")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Transition] {
        &self.records
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.records[i]
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            env: self.env.clone(),
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            count: self.records.len(),
            policy: self.policy.clone(),
            seed: self.seed,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = self.header();
        let mut out = format!("{DATASET_MAGIC} {}\n", serde_json::to_string(&header)?).into_bytes();
        out.reserve(4 * header.record_floats() * header.count);
        let mut put = |v: f32| out.extend_from_slice(&v.to_le_bytes());
        for t in &self.records {
            t.s.iter().for_each(|&v| put(v));
            t.a.iter().for_each(|&v| put(v));
            put(t.r);
            t.s_next.iter().for_each(|&v| put(v));
            put(if t.done { 1.0 } else { 0.0 });
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            kind: "dataset",
            reason,
        };
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header line".into()))?;
        let line = std::str::from_utf8(&bytes[..nl]).map_err(|e| bad(e.to_string()))?;
        let json = line
            .strip_prefix(DATASET_MAGIC)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| bad(format!("header does not start with {DATASET_MAGIC}")))?;
        let header: DatasetHeader = serde_json::from_str(json).map_err(|e| bad(e.to_string()))?;
        let body = &bytes[nl + 1..];
        let per = header.record_floats();
        if body.len() != 4 * per * header.count {
            return Err(bad(format!(
                "expected {} record bytes for count {}, found {}",
                4 * per * header.count,
                header.count,
                body.len()
            )));
        }
        let floats: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let (sd, ad) = (header.state_dim, header.action_dim);
        let mut records = Vec::with_capacity(header.count);
        for (i, rec) in floats.chunks_exact(per).enumerate() {
            let done = match rec[per - 1] {
                d if d == 1.0 => true,
                d if d == 0.0 => false,
                d => return Err(bad(format!("record {i} has done flag {d}"))),
            };
            records.push(Transition::new(
                rec[..sd].to_vec(),
                rec[sd..sd + ad].to_vec(),
                rec[sd + ad],
                rec[sd + ad + 1..sd + ad + 1 + sd].to_vec(),
                done,
                Source::Offline,
            ));
        }
        let ds = Self {
            env: header.env,
            state_dim: sd,
            action_dim: ad,
            policy: header.policy,
            seed: header.seed,
            records,
        };
        ds.check_records()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Checks that the dataset was recorded on an environment with `spec`'s
    /// name and dimensions.
    pub fn check_matches(&self, spec: &EnvSpec) -> Result<()> {
        if self.env != spec.name
            || self.state_dim != spec.state_dim
            || self.action_dim != spec.action_dim
        {
            return Err(Error::invalid(format!(
                "dataset recorded on {} ({}x{}) does not match environment {} ({}x{})",
                self.env,
                self.state_dim,
                self.action_dim,
                spec.name,
                spec.state_dim,
                spec.action_dim
            )));
        }
        Ok(())
    }
}

fn rollout_behavior(
    spec: &EnvSpec,
    behavior: Behavior,
    n: usize,
    seed: u64,
    out: &mut Vec<Transition>,
) -> Result<()> {
    let mut episodes = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = ScriptedPolicy::new(behavior, spec, episodes.random());
    let target = out.len() + n;
    while out.len() < target {
        let mut s = reset(spec, episodes.random());
        for _ in 0..spec.horizon {
            let a = policy.act(&s)?;
            let o = step(spec, &s, &a)?;
            out.push(Transition::from_step(
                &s,
                &a,
                o.reward,
                &o.s_next,
                o.done,
                Source::Offline,
            ));
            s = o.s_next;
            if o.done || out.len() == target {
                break;
            }
        }
    }
    Ok(())
}

/// Rolls out the scripted `kind` and records exactly `n` transitions.
pub fn generate_offline(
    spec: &EnvSpec,
    kind: PolicyKind,
    n: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    spec.validate()?;
    let mut records = Vec::with_capacity(n);
    match kind {
        PolicyKind::Single(b) => rollout_behavior(spec, b, n, seed, &mut records)?,
        PolicyKind::Mix(w) => {
            let parts = [
                (Behavior::Random, w.random),
                (Behavior::Medium, w.medium),
                (Behavior::Expert, w.expert),
            ];
            let total: f64 = parts.iter().map(|p| p.1).sum();
            if parts.iter().any(|p| p.1 < 0.0) || total <= 0.0 {
                return Err(Error::invalid("mix proportions must be nonnegative, not all zero"));
            }
            let mut remaining = n;
            for (k, (b, weight)) in parts.iter().enumerate() {
                let count = if k + 1 == parts.len() {
                    remaining
                } else {
                    ((n as f64 * weight / total).round() as usize).min(remaining)
                };
                if count > 0 {
                    let sub_seed = seed.wrapping_add(k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                    rollout_behavior(spec, *b, count, sub_seed, &mut records)?;
                }
                remaining -= count;
            }
        }
    }
    OfflineDataset::new(spec, kind.label(), seed, records)
}
