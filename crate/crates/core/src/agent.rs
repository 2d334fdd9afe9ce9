//! Soft actor-critic with an ensemble of critics, random-subset clipped
//! double-Q targets, EMA target networks and a lower-confidence advantage.
//!
//! Every stochastic operation has a `*_with_noise` form taking the standard
//! normal draws explicitly, so updates can be replayed exactly.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::density::{mean_std, Spread};
use crate::envdata::Transition;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, DenseNet, GradBuffer, Head, Matrix, NetShape};
use crate::replay::state_action_matrix;
use crate::scalar::Scalar;

/// Inside `log(1 - a^2 + eps)` of the tanh correction.
pub const TANH_EPS: f64 = 1e-6;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Sign of the entropy bonus inside the bootstrapped target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropySign {
    /// `y = r + gamma (min Q' - alpha log pi)`, the soft Bellman backup.
    #[default]
    Minus,
    /// `y = r + gamma (min Q' + alpha log pi)`.
    Plus,
}

/// What `u_A` measures across the Monte-Carlo value samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageSpread {
    /// Sample standard deviation over `sqrt(M)`.
    #[default]
    StdError,
    /// Sample standard deviation.
    Std,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub hidden: usize,
    pub critics: usize,
    pub subset: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub auto_alpha: bool,
    pub tau_ema: f64,
    pub c_a: f64,
    pub mc_samples: usize,
    pub lr: f64,
    pub critic_layer_norm: bool,
    pub actor_layer_norm: bool,
    pub entropy_sign: EntropySign,
    pub advantage_spread: AdvantageSpread,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            critics: 10,
            subset: 2,
            gamma: 0.99,
            alpha: 0.1,
            auto_alpha: false,
            tau_ema: 0.995,
            c_a: 1.0,
            mc_samples: 10,
            lr: 3e-4,
            critic_layer_norm: true,
            actor_layer_norm: false,
            entropy_sign: EntropySign::Minus,
            advantage_spread: AdvantageSpread::StdError,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.hidden == 0 {
            bad.push("hidden must be at least 1".to_string());
        }
        if self.critics < 2 {
            bad.push(format!("critics must be at least 2, got {}", self.critics));
        }
        if !(self.subset == 1 || self.subset == 2) || self.subset > self.critics {
            bad.push(format!("subset must be 1 or 2 and at most critics, got {}", self.subset));
        }
        if !(self.gamma >= 0.0 && self.gamma <= 1.0) {
            bad.push(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            bad.push(format!("alpha must be finite and nonnegative, got {}", self.alpha));
        }
        if self.auto_alpha && self.alpha <= 0.0 {
            bad.push("auto_alpha needs a positive initial alpha".to_string());
        }
        if !(self.tau_ema > 0.0 && self.tau_ema < 1.0) {
            bad.push(format!("tau_ema must lie in (0, 1), got {}", self.tau_ema));
        }
        if !(self.c_a >= 0.0 && self.c_a.is_finite()) {
            bad.push(format!("c_a must be finite and nonnegative, got {}", self.c_a));
        }
        if self.mc_samples < 2 {
            bad.push(format!("mc_samples must be at least 2, got {}", self.mc_samples));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bad.push(format!("lr must be positive, got {}", self.lr));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

/// `Q_hat - V_hat`, its Monte-Carlo uncertainty and the lower bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdvantageEstimate {
    pub adv: f64,
    pub uncertainty: f64,
    pub lcb: f64,
}

/// Standard normal draws of the given shape.
pub fn normal_noise<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix<T> {
    let data = (0..rows * cols)
        .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape matches")
}

/// One squashed-Gaussian coordinate: `a = tanh(mean + exp(log_std) z)` and
/// its log-density contribution including the tanh correction.
pub fn squashed_log_prob<T: Scalar>(mean: T, log_std: T, z: T) -> (T, T) {
    let u = mean + log_std.exp() * z;
    // Keep actions strictly inside the box when tanh rounds to +-1.
    let edge = T::one() - T::epsilon();
    let a = u.tanh().max(-edge).min(edge);
    let half = T::of(0.5);
    let lp = -half * z * z - log_std - T::of(HALF_LN_2PI) - (T::one() - a * a + T::of(TANH_EPS)).ln();
    (a, lp)
}

/// Policy network, Gaussian head with `[mean, log_std]` per action dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Actor<T> {
    pub net: DenseNet<T>,
}

/// Actions, log-densities and what the backward pass needs.
pub struct PolicySample<T> {
    pub actions: Matrix<T>,
    pub log_pi: Vec<T>,
    outputs: Matrix<T>,
}

impl<T: Scalar> Actor<T> {
    pub fn new(state_dim: usize, action_dim: usize, hidden: usize, layer_norm: bool, rng: &mut impl Rng) -> Result<Self> {
        let shape = NetShape::mlp(state_dim, hidden, 2 * action_dim, layer_norm, Head::Gaussian);
        Ok(Self {
            net: DenseNet::init(shape, rng)?,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.net.output_dim() / 2
    }

    fn squash(&self, outputs: Matrix<T>, z: &Matrix<T>) -> Result<PolicySample<T>> {
        let d = self.action_dim();
        if z.rows() != outputs.rows() || z.cols() != d {
            return Err(Error::DimensionMismatch {
                context: "policy noise",
                expected: outputs.rows() * d,
                got: z.rows() * z.cols(),
            });
        }
        let mut actions = Matrix::zeros(outputs.rows(), d);
        let mut log_pi = vec![T::zero(); outputs.rows()];
        for r in 0..outputs.rows() {
            let o = outputs.row(r);
            for k in 0..d {
                let (a, lp) = squashed_log_prob(o[k], o[d + k], z.row(r)[k]);
                actions.row_mut(r)[k] = a;
                log_pi[r] += lp;
            }
            if !log_pi[r].is_finite() {
                return Err(Error::non_finite(format!("policy log-density of row {r}")));
            }
        }
        Ok(PolicySample {
            actions,
            log_pi,
            outputs,
        })
    }

    /// Reparameterized sample for each row of `states` with noise `z`.
    pub fn sample_with_noise(&self, states: &Matrix<T>, z: &Matrix<T>) -> Result<PolicySample<T>> {
        self.squash(self.net.forward_batch(states)?, z)
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, s: &[T], rng: &mut R) -> Result<(Vec<T>, T)> {
        let z = normal_noise(1, self.action_dim(), rng);
        let out = self.sample_with_noise(&Matrix::row_vector(s), &z)?;
        Ok((out.actions.into_vec(), out.log_pi[0]))
    }

    /// `tanh(mean)`, used for evaluation.
    pub fn mean_action(&self, s: &[T]) -> Result<Vec<T>> {
        let o = self.net.forward(s)?;
        Ok(o[..self.action_dim()].iter().map(|m| m.tanh()).collect())
    }
}

/// `E` critics over `concat(s, a)` with their EMA targets.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticEnsemble<T> {
    pub critics: Vec<DenseNet<T>>,
    pub targets: Vec<DenseNet<T>>,
}

impl<T: Scalar> CriticEnsemble<T> {
    pub fn new(input_dim: usize, hidden: usize, count: usize, layer_norm: bool, rng: &mut impl Rng) -> Result<Self> {
        let shape = NetShape::mlp(input_dim, hidden, 1, layer_norm, Head::Linear);
        let critics = (0..count)
            .map(|_| DenseNet::init(shape.clone(), rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            targets: critics.clone(),
            critics,
        })
    }

    pub fn len(&self) -> usize {
        self.critics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.critics.is_empty()
    }

    /// `target <- tau target + (1 - tau) online` for every member.
    pub fn target_ema(&mut self, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::invalid(format!("tau_ema must lie in (0, 1], got {tau}")));
        }
        let (t, one_minus) = (T::of(tau), T::of(1.0 - tau));
        for (target, online) in self.targets.iter_mut().zip(&self.critics) {
            for (tp, &p) in target.params_mut().iter_mut().zip(online.params()) {
                *tp = t * *tp + one_minus * p;
            }
        }
        Ok(())
    }
}

/// Mean-reduced importance-weighted squared error `mean u (y - Q(x))^2`.
pub fn critic_loss<T: Scalar>(critic: &DenseNet<T>, x: &Matrix<T>, y: &[T], u: &[T]) -> Result<f64> {
    let q = critic.forward_batch(x)?;
    let n = y.len() as f64;
    let loss = q
        .as_slice()
        .iter()
        .zip(y)
        .zip(u)
        .map(|((q, y), u)| u.as_f64() * (y.as_f64() - q.as_f64()).powi(2))
        .sum::<f64>()
        / n;
    Ok(loss)
}

/// [`critic_loss`] and its parameter gradient.
pub fn critic_loss_grad<T: Scalar>(
    critic: &DenseNet<T>,
    x: &Matrix<T>,
    y: &[T],
    u: &[T],
) -> Result<(f64, GradBuffer<T>)> {
    if y.len() != x.rows() || u.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            context: "critic targets",
            expected: x.rows(),
            got: y.len().min(u.len()),
        });
    }
    let (q, tape) = critic.forward_tape(x)?;
    let n = y.len() as f64;
    let mut loss = 0.0;
    let upstream: Vec<T> = q
        .as_slice()
        .iter()
        .zip(y)
        .zip(u)
        .map(|((&q, &y), &u)| {
            let diff = y - q;
            loss += u.as_f64() * diff.as_f64().powi(2) / n;
            T::of(-2.0 / n) * u * diff
        })
        .collect();
    if !loss.is_finite() {
        return Err(Error::non_finite("critic loss"));
    }
    let mut grads = critic.zero_grads();
    critic.backward(&tape, &Matrix::from_vec(x.rows(), 1, upstream)?, Some(&mut grads))?;
    Ok((loss, grads))
}

/// `mean_b [alpha log pi(a_b | s_b) - mean_i Q_i(s_b, a_b)]` with
/// reparameterized actions from noise `z`.
pub fn actor_loss<T: Scalar>(
    actor: &Actor<T>,
    critics: &[DenseNet<T>],
    states: &Matrix<T>,
    z: &Matrix<T>,
    alpha: f64,
) -> Result<f64> {
    let smp = actor.sample_with_noise(states, z)?;
    let x = states.hcat(&smp.actions)?;
    let b = states.rows() as f64;
    let mut q_mean = vec![0.0; states.rows()];
    for c in critics {
        for (m, q) in q_mean.iter_mut().zip(c.forward_batch(&x)?.as_slice()) {
            *m += q.as_f64() / critics.len() as f64;
        }
    }
    Ok(smp
        .log_pi
        .iter()
        .zip(&q_mean)
        .map(|(lp, q)| alpha * lp.as_f64() - q)
        .sum::<f64>()
        / b)
}

/// [`actor_loss`], its gradient with respect to the actor parameters, and
/// the per-row log-densities.
pub fn actor_loss_grad<T: Scalar>(
    actor: &Actor<T>,
    critics: &[DenseNet<T>],
    states: &Matrix<T>,
    z: &Matrix<T>,
    alpha: f64,
) -> Result<(f64, GradBuffer<T>, Vec<T>)> {
    let (outputs, tape) = actor.net.forward_tape(states)?;
    let smp = actor.squash(outputs, z)?;
    let x = states.hcat(&smp.actions)?;
    let (rows, sd, d) = (states.rows(), states.cols(), actor.action_dim());
    let b = rows as f64;
    let e = critics.len() as f64;

    // d loss / d a through the critics.
    let mut dq_da = Matrix::<T>::zeros(rows, d);
    let mut q_mean = vec![0.0; rows];
    let up = Matrix::from_vec(rows, 1, vec![T::of(-1.0 / (b * e)); rows])?;
    for c in critics {
        let (q, ctape) = c.forward_tape(&x)?;
        for (m, q) in q_mean.iter_mut().zip(q.as_slice()) {
            *m += q.as_f64() / e;
        }
        let dx = c.backward(&ctape, &up, None)?;
        for r in 0..rows {
            for k in 0..d {
                dq_da.row_mut(r)[k] += dx.row(r)[sd + k];
            }
        }
    }

    let mut loss = 0.0;
    let mut upstream = Matrix::<T>::zeros(rows, 2 * d);
    let a_scale = T::of(alpha / b);
    for r in 0..rows {
        loss += (alpha * smp.log_pi[r].as_f64() - q_mean[r]) / b;
        let o = smp.outputs.row(r);
        for k in 0..d {
            let a = smp.actions.row(r)[k];
            let one_m = T::one() - a * a;
            // d log pi / d u through the tanh correction.
            let dlp_du = T::of(2.0) * a * one_m / (one_m + T::of(TANH_EPS));
            let du = a_scale * dlp_du + dq_da.row(r)[k] * one_m;
            let sigma = o[d + k].exp();
            upstream.row_mut(r)[k] = du;
            upstream.row_mut(r)[d + k] = du * sigma * z.row(r)[k] - a_scale;
        }
    }
    if !loss.is_finite() {
        return Err(Error::non_finite("actor objective"));
    }
    let mut grads = actor.net.zero_grads();
    actor.net.backward(&tape, &upstream, Some(&mut grads))?;
    Ok((loss, grads, smp.log_pi))
}

fn states_of<'a, T: Scalar>(rows: impl IntoIterator<Item = &'a Transition>, next: bool) -> Result<Matrix<T>> {
    let rows: Vec<Vec<T>> = rows
        .into_iter()
        .map(|t| {
            let s = if next { &t.s_next } else { &t.s };
            s.iter().map(|&v| T::of_f32(v)).collect()
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    Matrix::from_rows(&rows)
}

/// Actor, critic ensemble, their optimizers and the entropy temperature.
#[derive(Clone, Debug)]
pub struct Agent<T> {
    pub actor: Actor<T>,
    pub ensemble: CriticEnsemble<T>,
    actor_opt: AdamState<T>,
    critic_opts: Vec<AdamState<T>>,
    log_alpha: f64,
    alpha_opt: AdamState<f64>,
    config: AgentConfig,
    state_dim: usize,
    action_dim: usize,
}

/// Diagnostics of one actor update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActorStats {
    pub loss: f64,
    pub mean_log_pi: f64,
}

impl<T: Scalar> Agent<T> {
    /// Critics are initialized before the actor, both from `seed`.
    pub fn new(state_dim: usize, action_dim: usize, config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ensemble = CriticEnsemble::new(
            state_dim + action_dim,
            config.hidden,
            config.critics,
            config.critic_layer_norm,
            &mut rng,
        )?;
        let actor = Actor::new(state_dim, action_dim, config.hidden, config.actor_layer_norm, &mut rng)?;
        Ok(Self::from_parts(actor, ensemble, config, state_dim, action_dim))
    }

    /// Wraps existing networks with fresh optimizer state.
    pub fn from_parts(
        actor: Actor<T>,
        ensemble: CriticEnsemble<T>,
        config: AgentConfig,
        state_dim: usize,
        action_dim: usize,
    ) -> Self {
        let adam = AdamConfig::with_lr(config.lr);
        Self {
            actor_opt: AdamState::new(actor.net.num_params(), adam),
            critic_opts: ensemble
                .critics
                .iter()
                .map(|c| AdamState::new(c.num_params(), adam))
                .collect(),
            log_alpha: config.alpha.ln(),
            alpha_opt: AdamState::new(1, adam),
            actor,
            ensemble,
            config,
            state_dim,
            action_dim,
        }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn alpha(&self) -> f64 {
        if self.config.auto_alpha {
            self.log_alpha.exp()
        } else {
            self.config.alpha
        }
    }

    /// `Z` distinct critic indices drawn uniformly.
    pub fn draw_subset<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        sample(rng, self.ensemble.len(), self.config.subset).into_vec()
    }

    /// Clipped double-Q targets over critic `subset` with next-action noise `z_next`.
    pub fn cdq_target_with_noise(&self, batch: &[&Transition], subset: &[usize], z_next: &Matrix<T>) -> Result<Vec<T>> {
        if subset.is_empty() || subset.iter().any(|&i| i >= self.ensemble.len()) {
            return Err(Error::invalid(format!("invalid critic subset {subset:?}")));
        }
        let s_next = states_of::<T>(batch.iter().copied(), true)?;
        let smp = self.actor.sample_with_noise(&s_next, z_next)?;
        let x = s_next.hcat(&smp.actions)?;
        let mut q_min = vec![T::infinity(); batch.len()];
        for &i in subset {
            for (m, &q) in q_min.iter_mut().zip(self.ensemble.targets[i].forward_batch(&x)?.as_slice()) {
                *m = m.min(q);
            }
        }
        let alpha = T::of(self.alpha());
        let gamma = T::of(self.config.gamma);
        let sign = match self.config.entropy_sign {
            EntropySign::Minus => -T::one(),
            EntropySign::Plus => T::one(),
        };
        let y: Vec<T> = batch
            .iter()
            .zip(q_min.iter().zip(&smp.log_pi))
            .map(|(t, (&q, &lp))| {
                let r = T::of_f32(t.r);
                if t.done {
                    r
                } else {
                    r + gamma * (q + sign * alpha * lp)
                }
            })
            .collect();
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("critic target of row {i}")));
        }
        Ok(y)
    }

    pub fn cdq_target<R: Rng + ?Sized>(&self, batch: &[&Transition], subset: &[usize], rng: &mut R) -> Result<Vec<T>> {
        let z = normal_noise(batch.len(), self.action_dim, rng);
        self.cdq_target_with_noise(batch, subset, &z)
    }

    /// One Adam step per critic on the shared targets. Returns the mean loss.
    pub fn critic_update(&mut self, batch: &[&Transition], y: &[T], u: &[T]) -> Result<f64> {
        let x = state_action_matrix::<T>(batch.iter().copied())?;
        let mut total = 0.0;
        for (c, opt) in self.ensemble.critics.iter_mut().zip(&mut self.critic_opts) {
            let (loss, g) = critic_loss_grad(c, &x, y, u)?;
            opt.step(c.params_mut(), g.as_slice())?;
            total += loss;
        }
        Ok(total / self.ensemble.len() as f64)
    }

    /// One Adam step on the entropy-regularized objective, averaged over all critics.
    pub fn actor_update_with_noise(&mut self, batch: &[&Transition], z: &Matrix<T>) -> Result<ActorStats> {
        let s = states_of::<T>(batch.iter().copied(), false)?;
        let (loss, g, log_pi) = actor_loss_grad(&self.actor, &self.ensemble.critics, &s, z, self.alpha())?;
        self.actor_opt.step(self.actor.net.params_mut(), g.as_slice())?;
        let mean_log_pi = log_pi.iter().map(|v| v.as_f64()).sum::<f64>() / log_pi.len() as f64;
        if self.config.auto_alpha {
            let target_entropy = -(self.action_dim as f64);
            let mut la = [self.log_alpha];
            self.alpha_opt.step(&mut la, &[-(mean_log_pi + target_entropy)])?;
            self.log_alpha = la[0];
        }
        Ok(ActorStats { loss, mean_log_pi })
    }

    pub fn actor_update<R: Rng + ?Sized>(&mut self, batch: &[&Transition], rng: &mut R) -> Result<ActorStats> {
        let z = normal_noise(batch.len(), self.action_dim, rng);
        self.actor_update_with_noise(batch, &z)
    }

    pub fn target_ema(&mut self) -> Result<()> {
        self.ensemble.target_ema(self.config.tau_ema)
    }

    fn pessimistic_q(&self, x: &Matrix<T>) -> Result<Vec<f64>> {
        let q0 = self.ensemble.critics[0].forward_batch(x)?;
        let q1 = self.ensemble.critics[1].forward_batch(x)?;
        Ok(q0
            .as_slice()
            .iter()
            .zip(q1.as_slice())
            .map(|(a, b)| a.min(*b).as_f64())
            .collect())
    }

    /// Advantage lower bounds for each `(s, a)` row of `batch`.
    ///
    /// `z` holds `M` noise rows per batch row, row-major by batch row.
    pub fn advantage_lcb_with_noise(&self, batch: &[&Transition], z: &Matrix<T>) -> Result<Vec<AdvantageEstimate>> {
        let m = self.config.mc_samples;
        let n = batch.len();
        if z.rows() != n * m {
            return Err(Error::DimensionMismatch {
                context: "advantage noise rows",
                expected: n * m,
                got: z.rows(),
            });
        }
        let x = state_action_matrix::<T>(batch.iter().copied())?;
        let q_sa = self.pessimistic_q(&x)?;
        let s = states_of::<T>(batch.iter().copied(), false)?;
        let mut s_rep = Matrix::zeros(n * m, s.cols());
        for r in 0..n {
            for j in 0..m {
                s_rep.row_mut(r * m + j).copy_from_slice(s.row(r));
            }
        }
        let smp = self.actor.sample_with_noise(&s_rep, z)?;
        let q_pi = self.pessimistic_q(&s_rep.hcat(&smp.actions)?)?;
        let alpha = self.alpha();
        (0..n)
            .map(|r| {
                let vals: Vec<f64> = (0..m)
                    .map(|j| q_pi[r * m + j] - alpha * smp.log_pi[r * m + j].as_f64())
                    .collect();
                let (v, sd) = mean_std(&vals, Spread::Sample);
                let uncertainty = match self.config.advantage_spread {
                    AdvantageSpread::StdError => sd / (m as f64).sqrt(),
                    AdvantageSpread::Std => sd,
                };
                let adv = q_sa[r] - v;
                if !(adv.is_finite() && uncertainty.is_finite()) {
                    return Err(Error::non_finite(format!("advantage of row {r}")));
                }
                Ok(AdvantageEstimate {
                    adv,
                    uncertainty,
                    lcb: adv - self.config.c_a * uncertainty,
                })
            })
            .collect()
    }

    pub fn advantage_lcb<R: Rng + ?Sized>(&self, batch: &[&Transition], rng: &mut R) -> Result<Vec<AdvantageEstimate>> {
        let z = normal_noise(batch.len() * self.config.mc_samples, self.action_dim, rng);
        self.advantage_lcb_with_noise(batch, &z)
    }

    /// `y - mean_i Q_i(s, a)` with targets over `subset`.
    pub fn td_errors<R: Rng + ?Sized>(&self, batch: &[&Transition], subset: &[usize], rng: &mut R) -> Result<Vec<f64>> {
        let y = self.cdq_target(batch, subset, rng)?;
        let x = state_action_matrix::<T>(batch.iter().copied())?;
        let e = self.ensemble.len() as f64;
        let mut q_mean = vec![0.0; batch.len()];
        for c in &self.ensemble.critics {
            for (m, q) in q_mean.iter_mut().zip(c.forward_batch(&x)?.as_slice()) {
                *m += q.as_f64() / e;
            }
        }
        Ok(y.iter().zip(&q_mean).map(|(y, q)| y.as_f64() - q).collect())
    }

    pub fn optimizer_steps(&self) -> (u64, u64) {
        (self.actor_opt.step_count(), self.critic_opts[0].step_count())
    }
}
