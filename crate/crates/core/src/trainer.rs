//! The training loop, evaluation and the ablation suite.
//!
//! Per environment step after warm-up:
//!
//! 1. act and push the transition,
//! 2. form the candidate pool,
//! 3. update the density ensemble (modes that use it, with offline data),
//! 4. compute priorities once,
//! 5. `G` times: draw a batch, draw the critic subset, build targets,
//!    weight, update every critic, move the targets,
//! 6. update the actor on the last batch.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{normal_noise, Actor, Agent};
use crate::config::{ActorBatch, ExperimentConfig};
use crate::density::{mean_std, DensityEnsemble, Spread};
use crate::envdata::{reset, step, EnvSpec, OfflineDataset, Policy, Source, Transition};
use crate::error::{Error, Result};
use crate::metrics::{metrics_file_name, write_metrics, MetricsRow};
use crate::nn::Matrix;
use crate::replay::{
    anneal_beta, compute_priorities, form_pool, importance_weights, sample_batch, state_action_matrix,
    CandidatePool, OnlineBuffer, PriorityMode, PrioritySet, RowSignals,
};
use crate::scalar::Scalar;

/// Independent random streams split from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamId {
    Init = 0,
    EnvReset,
    Warmup,
    Acting,
    Pool,
    Batch,
    Subset,
    TargetNoise,
    ActorNoise,
    Advantage,
    TdNoise,
    Density,
    Eval,
}

pub fn stream(seed: u64, id: StreamId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

/// Everything one critic step consumed, for replaying the update elsewhere.
pub struct CriticStepRecord<'a, T> {
    pub env_step: u64,
    pub batch: &'a [&'a Transition],
    pub weights: &'a [T],
    pub subset: &'a [usize],
    pub next_noise: &'a Matrix<T>,
}

pub struct ActorStepRecord<'a, T> {
    pub env_step: u64,
    pub batch: &'a [&'a Transition],
    pub noise: &'a Matrix<T>,
}

/// Hooks into the training loop. All methods default to doing nothing.
pub trait Observer<T> {
    fn on_start(&mut self, _agent: &Agent<T>) {}
    fn on_critic_step(&mut self, _rec: &CriticStepRecord<'_, T>) {}
    fn on_actor_step(&mut self, _rec: &ActorStepRecord<'_, T>) {}
}

/// Observer that ignores everything.
pub struct NoObserver;

impl<T> Observer<T> for NoObserver {}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub mean_return: f64,
    pub success_rate: f64,
}

/// Runs `episodes` episodes of `policy` from seeded resets.
pub fn evaluate_policy(spec: &EnvSpec, policy: &mut impl Policy, episodes: usize, seed: u64) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::invalid("evaluation needs at least one episode"));
    }
    let mut seeds = stream(seed, StreamId::Eval);
    let (mut ret, mut wins) = (0.0, 0usize);
    for _ in 0..episodes {
        let stats = crate::envdata::run_episode(spec, policy, seeds.random())?;
        ret += stats.ret;
        wins += stats.success as usize;
    }
    Ok(EvalResult {
        mean_return: ret / episodes as f64,
        success_rate: wins as f64 / episodes as f64,
    })
}

/// Evaluates the actor's deterministic mean action.
pub fn evaluate<T: Scalar>(actor: &Actor<T>, spec: &EnvSpec, episodes: usize, seed: u64) -> Result<EvalResult> {
    let mut policy = |s: &[f64]| -> Result<Vec<f64>> {
        let s: Vec<T> = s.iter().map(|&v| T::of(v)).collect();
        Ok(actor.mean_action(&s)?.into_iter().map(|a| a.as_f64()).collect())
    };
    evaluate_policy(spec, &mut policy, episodes, seed)
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: u64,
}

impl Mean {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn take(&mut self) -> f64 {
        let m = if self.n == 0 { 0.0 } else { self.sum / self.n as f64 };
        *self = Self::default();
        m
    }
}

#[derive(Default)]
struct Diagnostics {
    critic_loss: Mean,
    actor_loss: Mean,
    density_loss: Mean,
    priority_mean: Mean,
    priority_max: f64,
    w_lcb: Mean,
    a_lcb: Mean,
    beta: f64,
}

pub struct TrainOutcome<T> {
    pub metrics: Vec<MetricsRow>,
    pub agent: Agent<T>,
    pub density: Option<DensityEnsemble<T>>,
    pub env_steps: u64,
    pub gradient_steps: u64,
    /// Offline rows placed into candidate pools.
    pub offline_reads: u64,
}

fn to_t<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::of(x)).collect()
}

/// Runs one experiment. `offline` overrides `config.dataset`, which is not read here.
pub fn train<T: Scalar>(
    config: &ExperimentConfig,
    offline: Option<&OfflineDataset>,
    observer: &mut dyn Observer<T>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let spec = config.env_spec()?;
    if let Some(d) = offline {
        d.check_matches(&spec)?;
        if d.is_empty() {
            return Err(Error::invalid("offline dataset is empty"));
        }
    }
    let offline = offline.filter(|d| !d.is_empty());
    if offline.is_none() && config.mode.uses_density() {
        warn!("mode {} without offline data: training purely online", config.mode);
    }
    let (sd, ad) = (spec.state_dim, spec.action_dim);
    let seed = config.seed;
    let mut init = stream(seed, StreamId::Init);
    let mut agent = Agent::<T>::new(sd, ad, config.agent_config(), init.random())?;
    let mut density = match (offline, config.mode.uses_density()) {
        (Some(_), true) => Some(DensityEnsemble::<T>::new(
            sd + ad,
            config.density_config(),
            stream(seed, StreamId::Density).random(),
        )?),
        _ => None,
    };
    observer.on_start(&agent);

    let mut env_rng = stream(seed, StreamId::EnvReset);
    let mut warm_rng = stream(seed, StreamId::Warmup);
    let mut act_rng = stream(seed, StreamId::Acting);
    let mut pool_rng = stream(seed, StreamId::Pool);
    let mut batch_rng = stream(seed, StreamId::Batch);
    let mut subset_rng = stream(seed, StreamId::Subset);
    let mut target_rng = stream(seed, StreamId::TargetNoise);
    let mut actor_rng = stream(seed, StreamId::ActorNoise);
    let mut adv_rng = stream(seed, StreamId::Advantage);
    let mut td_rng = stream(seed, StreamId::TdNoise);

    let mut buffer = OnlineBuffer::new(config.capacity())?;
    let mut state = reset(&spec, env_rng.random());
    let mut episode_len = 0usize;
    let mut metrics = Vec::new();
    let mut diag = Diagnostics::default();
    let mut gradient_steps = 0u64;
    let mut offline_reads = 0u64;
    let started = Instant::now();
    let n = config.pool_size;

    for t in 0..config.total_steps {
        let action: Vec<f64> = if t < config.warmup {
            (0..ad).map(|_| warm_rng.random_range(-1.0..=1.0)).collect()
        } else {
            let (a, _) = agent.actor.sample_action(&to_t::<T>(&state), &mut act_rng)?;
            a.into_iter().map(|v| v.as_f64()).collect()
        };
        let out = step(&spec, &state, &action).map_err(|e| e.at_step(t))?;
        buffer.push(Transition::from_step(&state, &action, out.reward, &out.s_next, out.done, Source::Online))?;
        episode_len += 1;
        state = out.s_next;
        if out.done || episode_len >= spec.horizon {
            state = reset(&spec, env_rng.random());
            episode_len = 0;
        }

        if t >= config.warmup {
            let mut learn = || -> Result<()> {
                let pool = form_pool(&buffer, offline, n, &mut pool_rng)?;
                offline_reads += pool.count(Source::Offline) as u64;
                if let Some(d) = density.as_mut() {
                    if let Some(loss) = d.update(&pool)? {
                        diag.density_loss.add(loss);
                    }
                }
                let ps = priorities(config, &agent, density.as_ref(), &pool, &mut adv_rng, &mut subset_rng, &mut td_rng, &mut diag)?;
                let beta = anneal_beta(t, config.total_steps, config.beta0)?;
                diag.beta = beta;
                let mut last = Vec::new();
                for _ in 0..config.grad_steps {
                    let idx = sample_batch(&ps, n, &mut batch_rng)?;
                    let batch: Vec<&Transition> = idx.iter().map(|&i| pool.get(i)).collect();
                    let subset = agent.draw_subset(&mut subset_rng);
                    let z_next = normal_noise::<T, _>(n, ad, &mut target_rng);
                    let y = agent.cdq_target_with_noise(&batch, &subset, &z_next)?;
                    let u: Vec<T> = importance_weights(&ps, &idx, beta)?.into_iter().map(T::of).collect();
                    diag.critic_loss.add(agent.critic_update(&batch, &y, &u)?);
                    agent.target_ema()?;
                    gradient_steps += 1;
                    observer.on_critic_step(&CriticStepRecord {
                        env_step: t,
                        batch: &batch,
                        weights: &u,
                        subset: &subset,
                        next_noise: &z_next,
                    });
                    last = idx;
                }
                if config.actor_batch == ActorBatch::Fresh {
                    last = sample_batch(&ps, n, &mut batch_rng)?;
                }
                let batch: Vec<&Transition> = last.iter().map(|&i| pool.get(i)).collect();
                let z = normal_noise::<T, _>(batch.len(), ad, &mut actor_rng);
                let stats = agent.actor_update_with_noise(&batch, &z)?;
                diag.actor_loss.add(stats.loss);
                observer.on_actor_step(&ActorStepRecord {
                    env_step: t,
                    batch: &batch,
                    noise: &z,
                });
                Ok(())
            };
            learn().map_err(|e| e.at_step(t))?;
        }

        let done_steps = t + 1;
        if done_steps % config.eval_interval == 0 || done_steps == config.total_steps {
            let ev = evaluate(&agent.actor, &spec, config.eval_episodes, seed).map_err(|e| e.at_step(t))?;
            let row = MetricsRow {
                step: done_steps,
                eval_return: ev.mean_return,
                eval_success: ev.success_rate,
                critic_loss: diag.critic_loss.take(),
                actor_loss: diag.actor_loss.take(),
                density_loss: diag.density_loss.take(),
                priority_mean: diag.priority_mean.take(),
                priority_max: std::mem::take(&mut diag.priority_max),
                w_lcb_mean: diag.w_lcb.take(),
                a_lcb_mean: diag.a_lcb.take(),
                beta: diag.beta,
                wall_ms: if config.record_timing { started.elapsed().as_millis() as u64 } else { 0 },
            };
            row.check_finite().map_err(|e| e.at_step(t))?;
            info!(
                "{} {} seed {} step {}: return {:.3}, success {:.2}",
                config.env, config.mode, seed, done_steps, row.eval_return, row.eval_success
            );
            metrics.push(row);
        }
    }

    Ok(TrainOutcome {
        metrics,
        agent,
        density,
        env_steps: config.total_steps,
        gradient_steps,
        offline_reads,
    })
}

#[allow(clippy::too_many_arguments)]
fn priorities<T: Scalar>(
    config: &ExperimentConfig,
    agent: &Agent<T>,
    density: Option<&DensityEnsemble<T>>,
    pool: &CandidatePool,
    adv_rng: &mut ChaCha8Rng,
    subset_rng: &mut ChaCha8Rng,
    td_rng: &mut ChaCha8Rng,
    diag: &mut Diagnostics,
) -> Result<PrioritySet> {
    let mode = config.mode;
    let rows: Vec<&Transition> = pool.rows().iter().collect();
    let mut signals = vec![RowSignals::default(); pool.len()];
    if let (Some(d), true) = (density, mode.uses_density()) {
        let off: Vec<usize> = (0..pool.len()).filter(|&i| !rows[i].is_online()).collect();
        if !off.is_empty() {
            let x = state_action_matrix::<T>(off.iter().map(|&i| rows[i]))?;
            for (&i, est) in off.iter().zip(d.predict_lcb_batch(&x)?) {
                signals[i].w_lcb = Some(est.lcb);
                diag.w_lcb.add(est.lcb);
            }
        }
    }
    if mode.uses_advantage() {
        for (s, est) in signals.iter_mut().zip(agent.advantage_lcb(&rows, adv_rng)?) {
            s.a_lcb = Some(est.lcb);
            diag.a_lcb.add(est.lcb);
        }
    }
    if mode.uses_td() {
        let subset = agent.draw_subset(subset_rng);
        for (s, td) in signals.iter_mut().zip(agent.td_errors(&rows, &subset, td_rng)?) {
            s.td = Some(td);
        }
    }
    let ps = compute_priorities(pool, &signals, mode, config.xi, config.rho)?;
    let (mean, _) = mean_std(&ps.sigma, Spread::Population);
    diag.priority_mean.add(mean);
    diag.priority_max = ps.sigma.iter().cloned().fold(diag.priority_max, f64::max);
    Ok(ps)
}

/// One arm of the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub label: &'static str,
    pub mode: PriorityMode,
    pub offline: bool,
}

pub const ABLATION_VARIANTS: [Variant; 8] = [
    Variant { label: "A3", mode: PriorityMode::A3, offline: true },
    Variant { label: "UNIFORM", mode: PriorityMode::Uniform, offline: true },
    Variant { label: "DENSITY_ONLY", mode: PriorityMode::DensityOnly, offline: true },
    Variant { label: "ADV_ONLY", mode: PriorityMode::AdvOnly, offline: true },
    Variant { label: "TD", mode: PriorityMode::Td, offline: true },
    Variant { label: "TD_DENSITY", mode: PriorityMode::TdDensity, offline: true },
    Variant { label: "A3_ONLINE", mode: PriorityMode::A3, offline: false },
    Variant { label: "SAC_ONLINE", mode: PriorityMode::Uniform, offline: false },
];

impl Variant {
    pub fn config(&self, base: &ExperimentConfig, seed: u64) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.mode = self.mode;
        cfg.seed = seed;
        if !self.offline {
            cfg.dataset = None;
        }
        cfg
    }
}

/// Final-row statistics of one variant across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantSummary {
    pub label: String,
    pub seeds: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub success_mean: f64,
    pub success_std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub runs: Vec<PathBuf>,
    pub summary: Vec<VariantSummary>,
}

impl AblationReport {
    /// Mean and population standard deviation across seeds per variant.
    pub fn write_summary(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["variant", "seeds", "return_mean", "return_std", "success_mean", "success_std"])?;
        for s in &self.summary {
            w.write_record([
                s.label.clone(),
                s.seeds.to_string(),
                s.return_mean.to_string(),
                s.return_std.to_string(),
                s.success_mean.to_string(),
                s.success_std.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Trains every variant on every seed and writes one metrics file per run.
pub fn run_ablation_suite(
    base: &ExperimentConfig,
    offline: &OfflineDataset,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::invalid("the ablation suite needs at least one seed"));
    }
    base.validate()?;
    let mut runs = Vec::new();
    let mut summary = Vec::new();
    for v in ABLATION_VARIANTS {
        let (mut rets, mut wins) = (Vec::new(), Vec::new());
        for &seed in seeds {
            let cfg = v.config(base, seed);
            let data = v.offline.then_some(offline);
            let out = train::<f32>(&cfg, data, &mut NoObserver)?;
            let path = out_dir.join(metrics_file_name(&cfg.env, v.label, seed));
            write_metrics(&path, &out.metrics)?;
            runs.push(path);
            let last = out.metrics.last().expect("training emits at least one row");
            rets.push(last.eval_return);
            wins.push(last.eval_success);
        }
        let (return_mean, return_std) = mean_std(&rets, Spread::Population);
        let (success_mean, success_std) = mean_std(&wins, Spread::Population);
        summary.push(VariantSummary {
            label: v.label.into(),
            seeds: seeds.len(),
            return_mean,
            return_std,
            success_mean,
            success_std,
        });
    }
    Ok(AblationReport { runs, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envdata::{generate_offline, Behavior, ScriptedPolicy};

    pub(crate) fn tiny(mode: PriorityMode) -> ExperimentConfig {
        ExperimentConfig {
            mode,
            pool_size: 16,
            grad_steps: 2,
            critics: 2,
            hidden: 8,
            mc_samples: 3,
            density_members: 2,
            density_hidden: 8,
            total_steps: 60,
            warmup: 20,
            eval_interval: 25,
            eval_episodes: 2,
            seed: 3,
            ..ExperimentConfig::default()
        }
    }

    fn data() -> OfflineDataset {
        generate_offline(&EnvSpec::point_reach(), "random".parse().unwrap(), 200, 1).unwrap()
    }

    #[test]
    fn step_accounting_and_rows() {
        let cfg = tiny(PriorityMode::A3);
        let out = train::<f32>(&cfg, Some(&data()), &mut NoObserver).unwrap();
        assert_eq!(out.gradient_steps, 2 * (60 - 20));
        assert_eq!(out.agent.optimizer_steps(), (40, 80));
        let steps: Vec<u64> = out.metrics.iter().map(|m| m.step).collect();
        assert_eq!(steps, vec![25, 50, 60]);
        assert!(out.metrics[2].density_loss != 0.0 && out.metrics[2].w_lcb_mean > 0.0);
        assert!(out.metrics.iter().all(|m| m.wall_ms == 0));
    }

    #[test]
    fn every_mode_runs() {
        let d = data();
        for mode in PriorityMode::ALL {
            let out = train::<f32>(&tiny(mode), Some(&d), &mut NoObserver).unwrap();
            assert_eq!(out.metrics.len(), 3, "{mode}");
            assert_eq!(out.density.is_some(), mode.uses_density());
        }
    }

    #[test]
    fn pure_online_never_reads_offline() {
        let out = train::<f32>(&tiny(PriorityMode::A3), None, &mut NoObserver).unwrap();
        assert_eq!(out.offline_reads, 0);
        assert!(out.density.is_none());
        let with = train::<f32>(&tiny(PriorityMode::A3), Some(&data()), &mut NoObserver).unwrap();
        assert_eq!(with.offline_reads, 40 * 8);
    }

    #[test]
    fn runs_are_deterministic() {
        let d = data();
        let a = train::<f32>(&tiny(PriorityMode::A3), Some(&d), &mut NoObserver).unwrap();
        let b = train::<f32>(&tiny(PriorityMode::A3), Some(&d), &mut NoObserver).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.agent.actor, b.agent.actor);
    }

    #[test]
    fn mismatched_dataset_rejected() {
        let maze = generate_offline(&EnvSpec::point_maze(), "random".parse().unwrap(), 10, 1).unwrap();
        assert!(train::<f32>(&tiny(PriorityMode::A3), Some(&maze), &mut NoObserver).is_err());
    }

    #[test]
    fn evaluation_examples() {
        let spec = EnvSpec::point_reach();
        let mut expert = ScriptedPolicy::new(Behavior::Expert, &spec, 0);
        assert!(evaluate_policy(&spec, &mut expert, 20, 1).unwrap().success_rate >= 0.95);
        let maze = EnvSpec::point_maze();
        let mut random = ScriptedPolicy::new(Behavior::Random, &maze, 0);
        assert_eq!(evaluate_policy(&maze, &mut random, 20, 1).unwrap().success_rate, 0.0);
        let agent = Agent::<f32>::new(4, 2, tiny(PriorityMode::A3).agent_config(), 0).unwrap();
        let a = evaluate(&agent.actor, &spec, 3, 5).unwrap();
        assert_eq!(a, evaluate(&agent.actor, &spec, 3, 5).unwrap());
        assert!(evaluate(&agent.actor, &spec, 0, 5).is_err());
    }

    #[test]
    fn online_variants_differ_only_in_mode() {
        let mut base = tiny(PriorityMode::A3);
        base.dataset = Some("d.bin".into());
        let a3 = ABLATION_VARIANTS[6].config(&base, 1);
        let sac = ABLATION_VARIANTS[7].config(&base, 1);
        let (serde_json::Value::Object(x), serde_json::Value::Object(y)) =
            (serde_json::to_value(&a3).unwrap(), serde_json::to_value(&sac).unwrap())
        else {
            panic!()
        };
        let differing: Vec<&String> = x.keys().filter(|k| x[*k] != y[*k]).collect();
        assert_eq!(differing, vec!["mode"]);
        assert!(a3.dataset.is_none());
    }
}
