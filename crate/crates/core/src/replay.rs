//! Online ring buffer, per-step candidate pools, A3 priorities and the
//! prioritized sampler with its importance weights.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envdata::{OfflineDataset, Source, Transition};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::scalar::Scalar;

/// Bound on `|xi * A|` inside the exponential.
pub const EXP_CLIP: f64 = 20.0;
/// Additive floor on TD priorities so no row becomes unsampleable.
pub const TD_FLOOR: f64 = 1e-3;

/// Fixed-capacity FIFO of online transitions.
#[derive(Clone, Debug)]
pub struct OnlineBuffer {
    capacity: usize,
    rows: Vec<Transition>,
    cursor: usize,
}

impl OnlineBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("online buffer capacity must be at least 1"));
        }
        Ok(Self {
            capacity,
            rows: Vec::with_capacity(capacity.min(1 << 20)),
            cursor: 0,
        })
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.source() != Source::Online {
            return Err(Error::invalid("only online transitions go in the online buffer"));
        }
        if let Some(first) = self.rows.first() {
            if first.s.len() != t.s.len() || first.a.len() != t.a.len() {
                return Err(Error::DimensionMismatch {
                    context: "online buffer push",
                    expected: first.s.len() + first.a.len(),
                    got: t.s.len() + t.a.len(),
                });
            }
        }
        if self.rows.len() < self.capacity {
            self.rows.push(t);
        } else {
            self.rows[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Row `i` in storage order (not insertion order once wrapped).
    pub fn get(&self, i: usize) -> &Transition {
        &self.rows[i]
    }

    /// Rows from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.rows.len() < self.capacity { 0 } else { self.cursor };
        self.rows[split..].iter().chain(&self.rows[..split])
    }
}

/// The `N` rows from which one environment step's batches are drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidatePool {
    rows: Vec<Transition>,
}

impl CandidatePool {
    pub fn from_rows(rows: Vec<Transition>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Transition] {
        &self.rows
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.rows[i]
    }

    pub fn count(&self, source: Source) -> usize {
        self.rows.iter().filter(|t| t.source() == source).count()
    }

    /// `(online, offline)` rows in pool order.
    pub fn split_by_source(&self) -> (Vec<&Transition>, Vec<&Transition>) {
        self.rows.iter().partition(|t| t.is_online())
    }
}

/// Uniform `k` indices into `0..n`: without replacement when `n >= k`,
/// otherwise with replacement.
fn uniform_indices<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    if n >= k {
        sample(rng, n, k).into_vec()
    } else {
        (0..k).map(|_| rng.random_range(0..n)).collect()
    }
}

/// Draws `n / 2` rows from the online buffer and the rest from `offline`.
///
/// Without offline data (or with an empty online buffer) all `n` rows come
/// from the one available source.
pub fn form_pool<R: Rng + ?Sized>(
    buf: &OnlineBuffer,
    offline: Option<&OfflineDataset>,
    n: usize,
    rng: &mut R,
) -> Result<CandidatePool> {
    if n == 0 {
        return Err(Error::invalid("pool size must be at least 1"));
    }
    let off_len = offline.map_or(0, |d| d.len());
    let (n_on, n_off) = match (buf.len(), off_len) {
        (0, 0) => return Err(Error::invalid("cannot form a pool: both sources are empty")),
        (_, 0) => (n, 0),
        (0, _) => (0, n),
        _ => (n / 2, n - n / 2),
    };
    let mut rows = Vec::with_capacity(n);
    if n_on > 0 {
        rows.extend(uniform_indices(rng, buf.len(), n_on).into_iter().map(|i| buf.get(i).clone()));
    }
    if let (Some(d), true) = (offline, n_off > 0) {
        rows.extend(uniform_indices(rng, d.len(), n_off).into_iter().map(|i| d.get(i).clone()));
    }
    Ok(CandidatePool { rows })
}

/// `concat(s, a)` of each row as a matrix.
pub fn state_action_matrix<'a, T: Scalar>(
    rows: impl IntoIterator<Item = &'a Transition>,
) -> Result<Matrix<T>> {
    let mut cols = None;
    let mut data = Vec::new();
    let mut n = 0;
    for t in rows {
        let width = t.s.len() + t.a.len();
        if *cols.get_or_insert(width) != width {
            return Err(Error::invalid("rows with different state-action widths"));
        }
        data.extend(t.state_action().map(T::of_f32));
        n += 1;
    }
    Matrix::from_vec(n, cols.unwrap_or(0), data)
}

/// How pool rows are weighted for sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PriorityMode {
    /// Onlineness lower bound times exponentiated advantage lower bound.
    A3,
    Uniform,
    DensityOnly,
    AdvOnly,
    Td,
    TdDensity,
}

pub const MODE_NAMES: [&str; 6] = ["A3", "UNIFORM", "DENSITY_ONLY", "ADV_ONLY", "TD", "TD_DENSITY"];

impl PriorityMode {
    pub const ALL: [PriorityMode; 6] = [
        PriorityMode::A3,
        PriorityMode::Uniform,
        PriorityMode::DensityOnly,
        PriorityMode::AdvOnly,
        PriorityMode::Td,
        PriorityMode::TdDensity,
    ];

    pub fn name(self) -> &'static str {
        MODE_NAMES[self as usize]
    }

    pub fn uses_density(self) -> bool {
        matches!(self, Self::A3 | Self::DensityOnly | Self::TdDensity)
    }

    pub fn uses_advantage(self) -> bool {
        matches!(self, Self::A3 | Self::AdvOnly)
    }

    pub fn uses_td(self) -> bool {
        matches!(self, Self::Td | Self::TdDensity)
    }
}

impl fmt::Display for PriorityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PriorityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown priority mode {s:?}; valid modes: {}",
                    MODE_NAMES.join(", ")
                ))
            })
    }
}

/// Per-row inputs to the priority. Only the fields the mode needs are read.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RowSignals {
    pub w_lcb: Option<f64>,
    pub a_lcb: Option<f64>,
    pub td: Option<f64>,
}

fn required(v: Option<f64>, what: &str, row: usize) -> Result<f64> {
    match v {
        Some(x) if x.is_finite() => Ok(x),
        Some(_) => Err(Error::non_finite(format!("{what} of pool row {row}"))),
        None => Err(Error::invalid(format!("{what} missing for pool row {row}"))),
    }
}

/// Priority of one row.
pub fn priority(
    mode: PriorityMode,
    source: Source,
    signals: &RowSignals,
    xi: f64,
    row: usize,
) -> Result<f64> {
    let onlineness = |s: &RowSignals| -> Result<f64> {
        match source {
            Source::Online => Ok(1.0),
            Source::Offline => required(s.w_lcb, "ratio lower bound", row),
        }
    };
    let advantage =
        |s: &RowSignals| -> Result<f64> { Ok((xi * required(s.a_lcb, "advantage lower bound", row)?).clamp(-EXP_CLIP, EXP_CLIP).exp()) };
    let td = |s: &RowSignals| -> Result<f64> { Ok(required(s.td, "TD error", row)?.abs() + TD_FLOOR) };
    let sigma = match mode {
        PriorityMode::Uniform => 1.0,
        PriorityMode::A3 => onlineness(signals)? * advantage(signals)?,
        PriorityMode::DensityOnly => onlineness(signals)?,
        PriorityMode::AdvOnly => advantage(signals)?,
        PriorityMode::Td => td(signals)?,
        PriorityMode::TdDensity => onlineness(signals)? * td(signals)?,
    };
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::non_finite(format!("priority of pool row {row} ({sigma})")));
    }
    Ok(sigma)
}

/// Priorities and the sampling distribution `p_i = sigma_i^rho / sum sigma^rho`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrioritySet {
    pub sigma: Vec<f64>,
    pub probs: Vec<f64>,
    pub rho: f64,
    pub xi: f64,
}

impl PrioritySet {
    pub fn from_sigma(sigma: Vec<f64>, rho: f64, xi: f64) -> Result<Self> {
        if sigma.is_empty() {
            return Err(Error::invalid("empty priority set"));
        }
        if let Some(i) = sigma.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::non_finite(format!("priority of pool row {i}")));
        }
        // Scaling by the max leaves p unchanged and keeps powers in range.
        let top = sigma.iter().cloned().fold(0.0, f64::max);
        let powered: Vec<f64> = sigma.iter().map(|s| (s / top).powf(rho)).collect();
        let total: f64 = powered.iter().sum();
        let probs = powered.iter().map(|v| v / total).collect();
        Ok(Self {
            sigma,
            probs,
            rho,
            xi,
        })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_sigma(vec![1.0; n], 1.0, 0.0)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Priorities for every pool row under `mode`.
pub fn compute_priorities(
    pool: &CandidatePool,
    signals: &[RowSignals],
    mode: PriorityMode,
    xi: f64,
    rho: f64,
) -> Result<PrioritySet> {
    if signals.len() != pool.len() {
        return Err(Error::DimensionMismatch {
            context: "priority signals",
            expected: pool.len(),
            got: signals.len(),
        });
    }
    let sigma = pool
        .rows()
        .iter()
        .zip(signals)
        .enumerate()
        .map(|(i, (t, s))| priority(mode, t.source(), s, xi, i))
        .collect::<Result<Vec<_>>>()?;
    PrioritySet::from_sigma(sigma, rho, xi)
}

/// Prefix sums for repeated categorical draws.
#[derive(Clone, Debug)]
pub struct CategoricalSampler {
    cumulative: Vec<f64>,
}

impl CategoricalSampler {
    pub fn new(probs: &[f64]) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("cannot sample from an empty distribution"));
        }
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(probs.len());
        for (i, &p) in probs.iter().enumerate() {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::non_finite(format!("sampling probability {i} ({p})")));
            }
            acc += p;
            cumulative.push(acc);
        }
        if acc <= 0.0 {
            return Err(Error::invalid("sampling probabilities sum to zero"));
        }
        Ok(Self { cumulative })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("nonempty");
        let u = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

/// `b` independent draws with replacement from `ps.probs`.
pub fn sample_batch<R: Rng + ?Sized>(ps: &PrioritySet, b: usize, rng: &mut R) -> Result<Vec<usize>> {
    let sampler = CategoricalSampler::new(&ps.probs)?;
    Ok((0..b).map(|_| sampler.draw(rng)).collect())
}

/// `u_i = (1 / (N p_i))^beta`, divided by its maximum over the drawn batch.
pub fn importance_weights(ps: &PrioritySet, drawn: &[usize], beta: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid(format!("beta must lie in [0, 1], got {beta}")));
    }
    let n = ps.len() as f64;
    let raw = drawn
        .iter()
        .map(|&i| {
            let p = *ps
                .probs
                .get(i)
                .ok_or_else(|| Error::invalid(format!("drawn index {i} outside the pool")))?;
            if p <= 0.0 {
                return Err(Error::invalid(format!("drawn index {i} has zero probability")));
            }
            Ok((1.0 / (n * p)).powf(beta))
        })
        .collect::<Result<Vec<_>>>()?;
    let top = raw.iter().cloned().fold(0.0, f64::max);
    Ok(raw.into_iter().map(|u| u / top).collect())
}

/// Linear schedule from `beta0` at step 0 to 1 at `total_steps`.
pub fn anneal_beta(step: u64, total_steps: u64, beta0: f64) -> Result<f64> {
    if !(beta0 > 0.0 && beta0 < 1.0) {
        return Err(Error::invalid(format!("beta0 must lie in (0, 1), got {beta0}")));
    }
    if total_steps == 0 {
        return Ok(1.0);
    }
    let frac = (step.min(total_steps)) as f64 / total_steps as f64;
    Ok(beta0 + (1.0 - beta0) * frac)
}
