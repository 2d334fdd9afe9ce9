//! Straight-line soft actor-critic in `f64` on the scalar tape, used to replay
//! recorded batches and noise and compare parameters with the library agent.

use super::{Mlp, Tape, V};

const LOG_STD_MIN: f64 = -20.0;
const LOG_STD_MAX: f64 = 2.0;
const TANH_EPS: f64 = 1e-6;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    pub fn step(&mut self, p: &mut [f64], g: &[f64]) {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        self.t += 1;
        let (c1, c2) = (1.0 - b1.powi(self.t), 1.0 - b2.powi(self.t));
        for i in 0..p.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
    }
}

/// One replayed transition.
#[derive(Clone, Debug)]
pub struct Row {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

pub struct Sac {
    pub actor_net: Mlp,
    pub critic_net: Mlp,
    pub actor: Vec<f64>,
    pub critics: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    actor_opt: Adam,
    critic_opts: Vec<Adam>,
    pub gamma: f64,
    pub alpha: f64,
    pub tau: f64,
    pub action_dim: usize,
}

fn vars(t: &mut Tape, xs: &[f64]) -> Vec<V> {
    xs.iter().map(|&x| t.var(x)).collect()
}

impl Sac {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        actor_net: Mlp,
        critic_net: Mlp,
        actor: Vec<f64>,
        critics: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
        lr: f64,
        gamma: f64,
        alpha: f64,
        tau: f64,
    ) -> Self {
        let action_dim = actor_net.widths.last().unwrap() / 2;
        Self {
            actor_opt: Adam::new(actor.len(), lr),
            critic_opts: critics.iter().map(|c| Adam::new(c.len(), lr)).collect(),
            actor_net,
            critic_net,
            actor,
            critics,
            targets,
            gamma,
            alpha,
            tau,
            action_dim,
        }
    }

    /// Squashed-Gaussian action and log-density for state `s` and noise `z`.
    fn policy(&self, t: &mut Tape, actor: &[V], s: &[V], z: &[f64]) -> (Vec<V>, V) {
        let out = self.actor_net.forward(t, actor, s);
        let d = self.action_dim;
        let mut actions = Vec::with_capacity(d);
        let mut lp = t.var(0.0);
        for k in 0..d {
            let log_std = t.clamp(out[d + k], LOG_STD_MIN, LOG_STD_MAX);
            let sd = t.exp(log_std);
            let noise = t.scale(sd, z[k]);
            let u = t.add(out[k], noise);
            let a = t.tanh(u);
            let a = t.clamp(a, -(1.0 - f64::EPSILON), 1.0 - f64::EPSILON);
            let a2 = t.mul(a, a);
            let one_m = t.scale(a2, -1.0);
            let one_m = t.shift(one_m, 1.0 + TANH_EPS);
            let corr = t.ln(one_m);
            let base = t.shift(log_std, HALF_LN_2PI + 0.5 * z[k] * z[k]);
            let term = t.add(base, corr);
            lp = t.sub(lp, term);
            actions.push(a);
        }
        (actions, lp)
    }

    fn q(&self, t: &mut Tape, params: &[V], s: &[V], a: &[V]) -> V {
        let x: Vec<V> = s.iter().chain(a).copied().collect();
        self.critic_net.forward(t, params, &x)[0]
    }

    /// Clipped double-Q targets over `subset`; `z_next` holds one noise row per batch row.
    pub fn targets_for(&self, batch: &[Row], subset: &[usize], z_next: &[Vec<f64>]) -> Vec<f64> {
        batch
            .iter()
            .zip(z_next)
            .map(|(row, z)| {
                if row.done {
                    return row.r;
                }
                let mut t = Tape::new();
                let actor = vars(&mut t, &self.actor);
                let s2 = vars(&mut t, &row.s_next);
                let (a2, lp) = self.policy(&mut t, &actor, &s2, z);
                let q_min = subset
                    .iter()
                    .map(|&i| {
                        let p = vars(&mut t, &self.targets[i]);
                        let q = self.q(&mut t, &p, &s2, &a2);
                        t.val(q)
                    })
                    .fold(f64::INFINITY, f64::min);
                row.r + self.gamma * (q_min - self.alpha * t.val(lp))
            })
            .collect()
    }

    pub fn critic_step(&mut self, batch: &[Row], weights: &[f64], subset: &[usize], z_next: &[Vec<f64>]) {
        let y = self.targets_for(batch, subset, z_next);
        let n = batch.len() as f64;
        for c in 0..self.critics.len() {
            let mut t = Tape::new();
            let p = vars(&mut t, &self.critics[c]);
            let mut terms = Vec::with_capacity(batch.len());
            for ((row, &yi), &u) in batch.iter().zip(&y).zip(weights) {
                let s = vars(&mut t, &row.s);
                let a = vars(&mut t, &row.a);
                let q = self.q(&mut t, &p, &s, &a);
                let neg = t.scale(q, -1.0);
                let diff = t.shift(neg, yi);
                let sq = t.mul(diff, diff);
                terms.push(t.scale(sq, u / n));
            }
            let loss = t.sum(&terms);
            let g = t.grad(loss);
            let grads: Vec<f64> = p.iter().map(|v| g[v.0]).collect();
            self.critic_opts[c].step(&mut self.critics[c], &grads);
        }
        for (target, online) in self.targets.iter_mut().zip(&self.critics) {
            for (tp, &op) in target.iter_mut().zip(online) {
                *tp = self.tau * *tp + (1.0 - self.tau) * op;
            }
        }
    }

    /// Minimizes `mean_b [alpha log pi - mean_i Q_i]` with frozen critics.
    pub fn actor_step(&mut self, batch: &[Row], z: &[Vec<f64>]) {
        let mut t = Tape::new();
        let actor = vars(&mut t, &self.actor);
        let critics: Vec<Vec<V>> = self.critics.iter().map(|c| vars(&mut t, c)).collect();
        let (b, e) = (batch.len() as f64, critics.len() as f64);
        let mut terms = Vec::new();
        for (row, zr) in batch.iter().zip(z) {
            let s = vars(&mut t, &row.s);
            let (a, lp) = self.policy(&mut t, &actor, &s, zr);
            terms.push(t.scale(lp, self.alpha / b));
            for p in &critics {
                let q = self.q(&mut t, p, &s, &a);
                terms.push(t.scale(q, -1.0 / (b * e)));
            }
        }
        let loss = t.sum(&terms);
        let g = t.grad(loss);
        let grads: Vec<f64> = actor.iter().map(|v| g[v.0]).collect();
        self.actor_opt.step(&mut self.actor, &grads);
    }
}
