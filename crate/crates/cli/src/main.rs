use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use a3rl_core::checkpoint::Checkpoint;
use a3rl_core::envdata::{generate_offline, EnvSpec, OfflineDataset, PolicyKind};
use a3rl_core::metrics::{metrics_file_name, write_metrics};
use a3rl_core::replay::PriorityMode;
use a3rl_core::theory::{check_lemma1, interior_grid, SoftmaxBandit};
use a3rl_core::trainer::{run_ablation_suite, train, NoObserver};
use a3rl_core::{Error, ExperimentConfig};
use clap::{Parser, Subcommand};
use log::warn;

#[derive(Parser)]
#[command(name = "a3rl", version, about = "Prioritized online SAC with offline data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out a scripted policy and write an offline dataset.
    GenData {
        #[arg(long)]
        env: String,
        /// random, medium, expert or mix
        #[arg(long)]
        policy: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one agent; writes a metrics CSV and a final checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check that the softmax-bandit coefficient decreases along a xi grid.
    VerifyTheory {
        #[arg(long, default_value_t = 1.0)]
        beta1: f64,
        #[arg(long, default_value_t = 2.0)]
        beta2: f64,
        /// Comma-separated arm rewards.
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,1")]
        rewards: Vec<f64>,
        /// Comma-separated xi values; five interior points by default.
        #[arg(long, value_delimiter = ',')]
        xi_grid: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train all eight ablation variants over several seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Number of seeds, starting at the config seed.
        #[arg(long)]
        seeds: u64,
    },
}

fn load_dataset(cfg: &ExperimentConfig) -> a3rl_core::Result<Option<OfflineDataset>> {
    match &cfg.dataset {
        None => Ok(None),
        Some(p) if !p.exists() => {
            warn!("dataset {} not found; training purely online", p.display());
            Ok(None)
        }
        Some(p) => OfflineDataset::load(p).map(Some),
    }
}

fn create_dir(dir: &Path) -> a3rl_core::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.into(),
        source: e,
    })
}

fn gen_data(env: &str, policy: &str, n: usize, seed: u64, out: &Path) -> a3rl_core::Result<()> {
    let spec = EnvSpec::by_name(env)?;
    let kind: PolicyKind = policy.parse()?;
    let data = generate_offline(&spec, kind, n, seed)?;
    data.save(out)?;
    println!("wrote {} transitions ({}) to {}", data.len(), kind.label(), out.display());
    Ok(())
}

fn cmd_train(config: &Path, out_dir: &Path, mode: Option<&str>, seed: Option<u64>) -> a3rl_core::Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(m) = mode {
        cfg.mode = m.parse::<PriorityMode>()?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let data = load_dataset(&cfg)?;
    create_dir(out_dir)?;
    let out = train::<f32>(&cfg, data.as_ref(), &mut NoObserver)?;
    let name = metrics_file_name(&cfg.env, cfg.mode.name(), cfg.seed);
    let csv = out_dir.join(&name);
    write_metrics(&csv, &out.metrics)?;
    let ckpt = csv.with_extension("ckpt");
    Checkpoint::from_agent(&out.agent, out.density.as_ref(), &cfg.hash(), out.env_steps).save(&ckpt)?;
    let last = out.metrics.last().expect("training emits at least one row");
    println!(
        "final eval return {:.4}, success {:.2}; wrote {} and {}",
        last.eval_return,
        last.eval_success,
        csv.display(),
        ckpt.display()
    );
    Ok(())
}

fn verify_theory(beta1: f64, beta2: f64, rewards: Vec<f64>, grid: Option<Vec<f64>>, out: &Path) -> a3rl_core::Result<bool> {
    let bandit = SoftmaxBandit::new(rewards, beta1, beta2)?;
    let grid = grid.unwrap_or_else(|| interior_grid(bandit.xi_limit(), 5));
    let report = check_lemma1(&bandit, &grid)?;
    let file = File::create(out).map_err(|e| Error::Io {
        path: out.into(),
        source: e,
    })?;
    report.write_csv(BufWriter::new(file))?;
    for (x, r) in report.xi.iter().zip(&report.sup_r) {
        println!("xi {x:.6}  sup R {r:.6}");
    }
    let holds = report.holds();
    println!("strictly decreasing: {}", if holds { "yes" } else { "no" });
    Ok(holds)
}

fn ablate(config: &Path, out_dir: &Path, seeds: u64) -> a3rl_core::Result<()> {
    if seeds == 0 {
        return Err(Error::InvalidArgument("--seeds must be at least 1".into()));
    }
    let cfg = ExperimentConfig::load(config)?;
    let Some(data) = load_dataset(&cfg)? else {
        return Err(Error::InvalidArgument("ablation needs an existing offline dataset in the config".into()));
    };
    create_dir(out_dir)?;
    let seed_list: Vec<u64> = (0..seeds).map(|i| cfg.seed + i).collect();
    let report = run_ablation_suite(&cfg, &data, &seed_list, out_dir)?;
    let summary = out_dir.join(format!("{}_summary.csv", cfg.env));
    report.write_summary(&summary)?;
    for s in &report.summary {
        println!(
            "{:<13} return {:.4} ± {:.4}  success {:.3} ± {:.3}",
            s.label, s.return_mean, s.return_std, s.success_mean, s.success_std
        );
    }
    println!("wrote {} runs and {}", report.runs.len(), summary.display());
    Ok(())
}

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_usage() { 2 } else { 1 })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData { env, policy, n, seed, out } => gen_data(&env, &policy, n, seed, &out),
        Command::Train { config, out_dir, mode, seed } => cmd_train(&config, &out_dir, mode.as_deref(), seed),
        Command::VerifyTheory { beta1, beta2, rewards, xi_grid, out } => {
            match verify_theory(beta1, beta2, rewards, xi_grid, &out) {
                Ok(true) => Ok(()),
                Ok(false) => return ExitCode::from(1),
                Err(e) => Err(e),
            }
        }
        Command::Ablate { config, out_dir, seeds } => ablate(&config, &out_dir, seeds),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => exit_for(&e),
    }
}
