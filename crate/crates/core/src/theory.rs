//! Exact checks on softmax bandits: the distribution-shift coefficient
//! `R(a; xi)`, its monotonicity in `xi`, and the identity behind the
//! advantage-weighted priority.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Largest enumerable table accepted by [`check_priority_identity`].
pub const MAX_IDENTITY_CELLS: usize = 100;

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits.iter().copied());
    logits.iter().map(|l| (l - lse).exp()).collect()
}

/// `d_on(a) ~ exp(beta1 r(a))`, `pi(a) ~ exp(beta2 r(a))` with `beta2 > beta1 > 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxBandit {
    pub rewards: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
}

impl SoftmaxBandit {
    pub fn new(rewards: Vec<f64>, beta1: f64, beta2: f64) -> Result<Self> {
        if rewards.len() < 2 {
            return Err(Error::invalid("a bandit needs at least two arms"));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("rewards must be finite"));
        }
        if !(beta1 > 0.0 && beta2 > beta1 && beta2.is_finite()) {
            return Err(Error::invalid(format!(
                "need beta2 > beta1 > 0, got beta1 = {beta1}, beta2 = {beta2}"
            )));
        }
        Ok(Self {
            rewards,
            beta1,
            beta2,
        })
    }

    pub fn arms(&self) -> usize {
        self.rewards.len()
    }

    pub fn d_on(&self) -> Vec<f64> {
        softmax(&self.rewards.iter().map(|r| self.beta1 * r).collect::<Vec<_>>())
    }

    pub fn pi(&self) -> Vec<f64> {
        softmax(&self.rewards.iter().map(|r| self.beta2 * r).collect::<Vec<_>>())
    }

    /// Upper end of the open interval on which the coefficient shrinks.
    pub fn xi_limit(&self) -> f64 {
        1.0 - self.beta1 / self.beta2
    }

    /// `(pi(a) / d(a))^(1 - xi) * sum_a' d(a') pi(a')^xi / d(a)^xi`.
    pub fn coefficient(&self, arm: usize, xi: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&xi) {
            return Err(Error::invalid(format!("xi must lie in [0, 1), got {xi}")));
        }
        if arm >= self.arms() {
            return Err(Error::invalid(format!("arm {arm} out of range for {} arms", self.arms())));
        }
        let (d, pi) = (self.d_on(), self.pi());
        let mass: f64 = d.iter().zip(&pi).map(|(d, p)| d * p.powf(xi)).sum();
        Ok((pi[arm] / d[arm]).powf(1.0 - xi) * mass / d[arm].powf(xi))
    }

    /// `(max_a R(a; xi), argmax)`; ties resolve to the lowest arm.
    pub fn sup_coefficient(&self, xi: f64) -> Result<(f64, usize)> {
        let mut best = (f64::NEG_INFINITY, 0);
        for a in 0..self.arms() {
            let r = self.coefficient(a, xi)?;
            if r > best.0 {
                best = (r, a);
            }
        }
        Ok(best)
    }

    pub fn best_arm(&self) -> usize {
        (0..self.arms()).fold(0, |b, a| if self.rewards[a] > self.rewards[b] { a } else { b })
    }

    pub fn is_constant(&self) -> bool {
        self.rewards.iter().all(|&r| r == self.rewards[0])
    }
}

/// `bandit_R` on one arm.
pub fn bandit_r(b: &SoftmaxBandit, arm: usize, xi: f64) -> Result<f64> {
    b.coefficient(arm, xi)
}

/// `k` evenly spaced points strictly inside `(0, limit)`.
pub fn interior_grid(limit: f64, k: usize) -> Vec<f64> {
    (1..=k).map(|i| limit * i as f64 / (k + 1) as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lemma1Report {
    pub bandit: SoftmaxBandit,
    pub xi: Vec<f64>,
    pub sup_r: Vec<f64>,
    pub argmax: Vec<usize>,
    pub strictly_decreasing: bool,
}

impl Lemma1Report {
    /// Strict decrease for informative rewards; a flat sequence for constant ones.
    pub fn holds(&self) -> bool {
        if self.bandit.is_constant() {
            self.sup_r.windows(2).all(|w| w[1] <= w[0] + 1e-12)
        } else {
            self.strictly_decreasing
        }
    }

    /// One CSV row per grid point.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["beta1", "beta2", "rewards", "xi", "sup_r", "argmax", "pass"])?;
        let rewards = self
            .bandit
            .rewards
            .iter()
            .map(|r| r.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let pass = self.holds();
        for i in 0..self.xi.len() {
            w.write_record([
                self.bandit.beta1.to_string(),
                self.bandit.beta2.to_string(),
                rewards.clone(),
                self.xi[i].to_string(),
                format!("{:.12}", self.sup_r[i]),
                self.argmax[i].to_string(),
                pass.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("report", e))?;
        Ok(())
    }
}

/// Evaluates `sup_a R(a; xi)` along `grid`, which must lie inside `(0, 1 - beta1/beta2)`.
pub fn check_lemma1(b: &SoftmaxBandit, grid: &[f64]) -> Result<Lemma1Report> {
    let limit = b.xi_limit();
    if grid.is_empty() {
        return Err(Error::invalid("empty xi grid"));
    }
    if let Some(x) = grid.iter().find(|&&x| !(x > 0.0 && x < limit)) {
        return Err(Error::invalid(format!("xi = {x} outside the interval (0, {limit})")));
    }
    let mut sup_r = Vec::with_capacity(grid.len());
    let mut argmax = Vec::with_capacity(grid.len());
    for &x in grid {
        let (r, a) = b.sup_coefficient(x)?;
        sup_r.push(r);
        argmax.push(a);
    }
    let strictly_decreasing = sup_r.windows(2).all(|w| w[1] < w[0]);
    Ok(Lemma1Report {
        bandit: b.clone(),
        xi: grid.to_vec(),
        sup_r,
        argmax,
        strictly_decreasing,
    })
}

/// A random instance with 2 to 6 arms and `beta2` between 1.2 and 4 times `beta1`.
pub fn random_bandit<R: Rng + ?Sized>(rng: &mut R) -> SoftmaxBandit {
    let k = rng.random_range(2..=6);
    let rewards = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let beta1 = rng.random_range(0.2..2.0);
    let beta2 = beta1 * rng.random_range(1.2..4.0);
    SoftmaxBandit::new(rewards, beta1, beta2).expect("valid by construction")
}

/// An enumerable state-action table for the priority identity.
///
/// All tables are indexed `s * actions + a`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityCase {
    pub states: usize,
    pub actions: usize,
    /// Batch distribution over pairs.
    pub mu: Vec<f64>,
    /// Online distribution over pairs.
    pub d_on: Vec<f64>,
    pub q: Vec<f64>,
    pub alpha: f64,
}

impl IdentityCase {
    fn validate(&self) -> Result<()> {
        let n = self.states * self.actions;
        if n == 0 || n > MAX_IDENTITY_CELLS {
            return Err(Error::invalid(format!(
                "table must have between 1 and {MAX_IDENTITY_CELLS} cells, got {n}"
            )));
        }
        if self.mu.len() != n || self.d_on.len() != n || self.q.len() != n {
            return Err(Error::invalid("table lengths must equal states * actions"));
        }
        if let Some(i) = self.mu.iter().position(|&m| !(m > 0.0)) {
            return Err(Error::invalid(format!("mu is zero at cell {i}")));
        }
        if self.d_on.iter().any(|&d| !(d >= 0.0)) || self.q.iter().any(|q| !q.is_finite()) {
            return Err(Error::invalid("d_on must be nonnegative and q finite"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::invalid("alpha must be positive"));
        }
        Ok(())
    }

    /// `A(s, a) = Q(s, a) - alpha log sum_a' exp(Q(s, a') / alpha)`.
    pub fn soft_advantage(&self) -> Vec<f64> {
        let m = self.actions;
        (0..self.states)
            .flat_map(|s| {
                let row = &self.q[s * m..(s + 1) * m];
                let v = self.alpha * log_sum_exp(row.iter().map(|q| q / self.alpha));
                row.iter().map(move |q| q - v)
            })
            .collect()
    }

    /// `pi_hat(a | s) = softmax_a(Q(s, a) / alpha)`.
    pub fn greedy_policy(&self) -> Vec<f64> {
        let m = self.actions;
        (0..self.states)
            .flat_map(|s| softmax(&self.q[s * m..(s + 1) * m].iter().map(|q| q / self.alpha).collect::<Vec<_>>()))
            .collect()
    }
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    v.iter().map(|x| x / total).collect()
}

/// L-infinity distance between the normalized `mu * sigma`, with
/// `sigma = exp(xi A) d_on / mu`, and the normalized `d_on * pi_hat^(xi alpha)`.
pub fn check_priority_identity(case: &IdentityCase, xi: f64) -> Result<f64> {
    case.validate()?;
    let adv = case.soft_advantage();
    let pi_hat = case.greedy_policy();
    let reweighted: Vec<f64> = (0..case.mu.len())
        .map(|i| {
            let sigma = (xi * adv[i]).exp() * case.d_on[i] / case.mu[i];
            case.mu[i] * sigma
        })
        .collect();
    let target: Vec<f64> = case
        .d_on
        .iter()
        .zip(&pi_hat)
        .map(|(d, p)| d * p.powf(xi * case.alpha))
        .collect();
    Ok(normalize(&reweighted)
        .iter()
        .zip(normalize(&target))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// A random table of `states x actions` cells with everywhere-positive `mu`.
pub fn random_identity_case(states: usize, actions: usize, alpha: f64, seed: u64) -> IdentityCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = states * actions;
    let mut draw = |lo: f64, hi: f64| (0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<_>>();
    IdentityCase {
        states,
        actions,
        mu: normalize(&draw(0.05, 1.0)),
        d_on: normalize(&draw(0.0, 1.0)),
        q: draw(-2.0, 2.0),
        alpha,
    }
}
