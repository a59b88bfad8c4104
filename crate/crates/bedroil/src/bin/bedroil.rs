//! Experiment runner: environment/dataset generation, training, evaluation
//! under dynamics shifts, and the verification suites. Every command writes
//! its outputs under a run directory named by the config hash, alongside a
//! `run-metadata.json` from which the run can be reproduced bit-identically.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bedroil::dataset::{generate_dataset, save_dataset};
use bedroil::mdp::{SoftmaxPolicy, StochasticPolicy};
use bedroil::oracle::{
    verify_duality, verify_generator_dominance, verify_occupancy_tv_bounds, verify_prop1_scalar,
    verify_sandwich, SuiteReport,
};
use bedroil::perturb::{
    build_gridworld, evaluate_under_shift, make_expert, GridworldSpec, PerturbationSweep,
    ShiftRecord, SweepParameter,
};
use bedroil::solver::{train_bedroil, Checkpoint, Problem, SolverConfig, TrainingHistory};
use bedroil::{Error, Result};

#[derive(Parser)]
#[command(name = "bedroil", version, about = "Distributionally robust offline imitation learning on tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the gridworld MDP, evaluation reward, and expert policy.
    GenEnv {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Sample expert demonstration trajectories.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
    },
    /// Train a policy and write checkpoint plus history CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
        /// One of: bedroil, bc, bedroil_rho0.
        #[arg(long, default_value = "bedroil")]
        algo: String,
    },
    /// Evaluate a checkpoint on the nominal environment.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate a checkpoint across the configured perturbation sweep.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the verification suites; exits nonzero on any failure.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
        /// all | tv_bounds | prop1 | dominance | duality | sandwich
        #[arg(long, default_value = "all")]
        suite: String,
        /// Overrides the verify section's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EnvConfig {
    grid: GridworldSpec,
    expert_temperature: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            grid: GridworldSpec::default(),
            expert_temperature: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TrainMode {
    /// Exact expectations under the known MDP and expert.
    Exact,
    /// Empirical expectations from generated demonstrations.
    Sampled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DatasetConfig {
    num_trajectories: usize,
    horizon: usize,
    seed: u64,
    mode: TrainMode,
    /// Whether the learner may use the expert's action probabilities for
    /// next-action expectations in sample mode.
    expert_known: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_trajectories: 200,
            horizon: 10,
            seed: 0,
            mode: TrainMode::Sampled,
            expert_known: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct VerifyConfig {
    seed: u64,
    tv_gammas: Vec<f64>,
    tv_rho_primes: Vec<f64>,
    tv_kernels_per_setting: usize,
    tv_instances: usize,
    prop1_cases: usize,
    dominance_points: usize,
    dominance_pairs: usize,
    duality_instances: usize,
    duality_rhos: Vec<f64>,
    sandwich_instances: usize,
    sandwich_rho_prime: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            tv_gammas: vec![0.5, 0.9, 0.99],
            tv_rho_primes: vec![0.05, 0.1, 0.2],
            tv_kernels_per_setting: 1000,
            tv_instances: 5,
            prop1_cases: 1000,
            dominance_points: 100_000,
            dominance_pairs: 1000,
            duality_instances: 10,
            duality_rhos: vec![0.0, 0.05, 0.1],
            sandwich_instances: 20,
            sandwich_rho_prime: 0.05,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Config {
    env: EnvConfig,
    dataset: DatasetConfig,
    solver: SolverConfig,
    sweep: Option<PerturbationSweep>,
    verify: VerifyConfig,
}

impl Config {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    command: &'a str,
    algo: Option<&'a str>,
    suite: Option<&'a str>,
    config_hash: &'a str,
    crate_version: &'a str,
    /// Wall-clock seconds since the Unix epoch; the only non-reproducible
    /// field any command emits.
    timestamp_unix: u64,
    config: &'a Config,
}

fn config_hash(command: &str, extra: &str, config: &Config) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(command.as_bytes());
    hasher.update(b"\0");
    hasher.update(extra.as_bytes());
    hasher.update(b"\0");
    hasher.update(serde_json::to_vec(config)?);
    let digest = hasher.finalize();
    Ok(digest.iter().take(6).map(|b| format!("{b:02x}")).collect())
}

fn prepare_run_dir(
    out_dir: &Path,
    command: &str,
    extra: &str,
    config: &Config,
) -> Result<PathBuf> {
    let hash = config_hash(command, extra, config)?;
    let dir = out_dir.join(format!("{command}-{hash}"));
    fs::create_dir_all(&dir)?;
    let metadata = RunMetadata {
        command,
        algo: (command == "train").then_some(extra),
        suite: (command == "verify").then_some(extra),
        config_hash: &hash,
        crate_version: env!("CARGO_PKG_VERSION"),
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config,
    };
    let file = fs::File::create(dir.join("run-metadata.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &metadata)?;
    Ok(dir)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_history_csv(history: &TrainingHistory, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(
        out,
        "iteration,dual_value,policy_loss,tau,mean_weight,max_weight,balance_residual"
    )?;
    for rec in &history.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            rec.iteration,
            fmt_f64(rec.dual_value),
            fmt_f64(rec.policy_loss),
            fmt_f64(rec.tau),
            fmt_f64(rec.mean_weight),
            fmt_f64(rec.max_weight),
            rec.balance_residual.map(fmt_f64).unwrap_or_default()
        )?;
    }
    Ok(())
}

fn write_shift_csv(records: &[ShiftRecord], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(
        out,
        "param,value,sample_index,exact_return,mc_return_mean,mc_return_std,exact_imitation_loss,kernel_tv_radius"
    )?;
    for rec in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            rec.param,
            fmt_f64(rec.value),
            rec.sample_index,
            fmt_f64(rec.exact_return),
            fmt_f64(rec.mc_return_mean),
            fmt_f64(rec.mc_return_std),
            fmt_f64(rec.exact_imitation_loss),
            fmt_f64(rec.kernel_tv_radius)
        )?;
    }
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)?;
    Ok(())
}

struct Environment {
    mdp: bedroil::mdp::TabularMdp,
    reward: Vec<f64>,
    expert: StochasticPolicy,
}

fn build_environment(config: &Config) -> Result<Environment> {
    let (mdp, reward) = build_gridworld(&config.env.grid)?;
    let expert = make_expert(&mdp, &reward, config.env.expert_temperature)?;
    Ok(Environment {
        mdp,
        reward,
        expert,
    })
}

fn cmd_gen_env(config: &Config, out_dir: &Path) -> Result<()> {
    let dir = prepare_run_dir(out_dir, "gen-env", "", config)?;
    let env = build_environment(config)?;
    write_json(
        &serde_json::json!({
            "mdp": env.mdp,
            "reward": env.reward,
            "expert": env.expert,
        }),
        &dir.join("env.json"),
    )?;
    println!("wrote {}", dir.join("env.json").display());
    Ok(())
}

fn cmd_gen_data(config: &Config, out_dir: &Path) -> Result<()> {
    let dir = prepare_run_dir(out_dir, "gen-data", "", config)?;
    let env = build_environment(config)?;
    let dataset = generate_dataset(
        &env.mdp,
        &env.expert,
        config.dataset.num_trajectories,
        config.dataset.horizon,
        config.dataset.seed,
    );
    let path = dir.join("trajectories.jsonl");
    save_dataset(&dataset, &path)?;
    println!("wrote {} ({} trajectories)", path.display(), dataset.trajectories.len());
    Ok(())
}

fn train_policy(config: &Config, algo: &str) -> Result<(SoftmaxPolicy, Checkpoint, TrainingHistory)> {
    let env = build_environment(config)?;
    let dataset = generate_dataset(
        &env.mdp,
        &env.expert,
        config.dataset.num_trajectories,
        config.dataset.horizon,
        config.dataset.seed,
    );
    let problem = match config.dataset.mode {
        TrainMode::Exact => Problem::Exact {
            mdp: &env.mdp,
            expert: &env.expert,
        },
        TrainMode::Sampled => Problem::Sampled {
            dataset: &dataset,
            num_states: env.mdp.num_states,
            num_actions: env.mdp.num_actions,
            discount: env.mdp.discount,
            expert: config.dataset.expert_known.then_some(&env.expert),
        },
    };
    let (policy, dual, history) = match algo {
        "bedroil" => {
            let outcome = train_bedroil(&problem, &config.solver)?;
            (outcome.policy, Some(outcome.dual), outcome.history)
        }
        name => {
            let (policy, history) =
                bedroil::baselines::run_baseline(name, &problem, &config.solver)?;
            (policy, None, history)
        }
    };
    let checkpoint = Checkpoint {
        logits: policy.logits.clone(),
        q_table: dual
            .as_ref()
            .map(|d| d.q_table.clone())
            .unwrap_or_else(|| vec![vec![0.0; env.mdp.num_actions]; env.mdp.num_states]),
        tau: dual.as_ref().map(|d| d.tau).unwrap_or(config.solver.tau_init),
        config: config.solver.clone(),
        iteration: config.solver.steps,
    };
    Ok((policy, checkpoint, history))
}

fn cmd_train(config: &Config, out_dir: &Path, algo: &str) -> Result<()> {
    let dir = prepare_run_dir(out_dir, "train", algo, config)?;
    let (_, checkpoint, history) = train_policy(config, algo)?;
    checkpoint.save(&dir.join("checkpoint.json"))?;
    write_history_csv(&history, &dir.join("history.csv"))?;
    println!("wrote {}", dir.join("checkpoint.json").display());
    Ok(())
}

fn load_policy(checkpoint: &Path) -> Result<StochasticPolicy> {
    let cp = Checkpoint::load(checkpoint)?;
    let logits = SoftmaxPolicy { logits: cp.logits };
    Ok(logits.materialize())
}

fn cmd_eval(config: &Config, out_dir: &Path, checkpoint: &Path) -> Result<()> {
    let dir = prepare_run_dir(out_dir, "eval", "", config)?;
    let env = build_environment(config)?;
    let policy = load_policy(checkpoint)?;
    // The nominal environment as a single-point sweep.
    let sweep = PerturbationSweep {
        parameter: SweepParameter::SlipProb,
        values: vec![config.env.grid.slip_prob],
        samples_per_value: 1,
        seed: config.dataset.seed,
    };
    let records = evaluate_under_shift(&policy, &config.env.grid, &sweep, &env.expert)?;
    write_shift_csv(&records, &dir.join("eval.csv"))?;
    println!("wrote {}", dir.join("eval.csv").display());
    Ok(())
}

fn cmd_sweep(config: &Config, out_dir: &Path, checkpoint: &Path) -> Result<()> {
    let dir = prepare_run_dir(out_dir, "sweep", "", config)?;
    let sweep = config.sweep.clone().ok_or_else(|| {
        Error::InvalidConfig("sweep command requires a sweep section in the config".into())
    })?;
    let env = build_environment(config)?;
    let policy = load_policy(checkpoint)?;
    let records = evaluate_under_shift(&policy, &config.env.grid, &sweep, &env.expert)?;
    write_shift_csv(&records, &dir.join("sweep.csv"))?;
    println!(
        "wrote {} ({} rows)",
        dir.join("sweep.csv").display(),
        records.len()
    );
    Ok(())
}

fn merge_reports(name: &str, parts: Vec<SuiteReport>) -> SuiteReport {
    let mut merged = SuiteReport {
        suite: name.to_string(),
        cases: 0,
        max_violation: f64::NEG_INFINITY,
        pass: true,
        failures: Vec::new(),
    };
    for part in parts {
        merged.cases += part.cases;
        merged.max_violation = merged.max_violation.max(part.max_violation);
        merged.pass &= part.pass;
        merged.failures.extend(part.failures);
    }
    merged
}

fn run_tv_bounds_suite(cfg: &VerifyConfig) -> Result<SuiteReport> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut parts = Vec::new();
    for &gamma in &cfg.tv_gammas {
        for i in 0..cfg.tv_instances {
            let num_states = rng.gen_range(2..=6);
            let num_actions = rng.gen_range(2..=3);
            let mdp = bedroil::mdp::random_mdp(num_states, num_actions, gamma, &mut rng);
            let policy = bedroil::mdp::random_policy(num_states, num_actions, &mut rng);
            for (j, &rho_prime) in cfg.tv_rho_primes.iter().enumerate() {
                let seed = cfg.seed ^ ((i * cfg.tv_rho_primes.len() + j) as u64).wrapping_mul(0x9e37);
                parts.push(verify_occupancy_tv_bounds(
                    &mdp,
                    &policy,
                    rho_prime,
                    cfg.tv_kernels_per_setting,
                    seed,
                )?);
            }
        }
    }
    Ok(merge_reports("occupancy_tv_bounds", parts))
}

fn run_prop1_suite(cfg: &VerifyConfig) -> Result<SuiteReport> {
    let mut parts = Vec::new();
    for name in ["soft_tv", "kl", "chi2", "soft_chi2"] {
        let gen = bedroil::divergence::make_generator(name)?;
        parts.push(verify_prop1_scalar(&gen, cfg.prop1_cases, cfg.seed)?);
    }
    Ok(merge_reports("prop1_scalar", parts))
}

fn cmd_verify(config: &Config, out_dir: &Path, suite: &str, seed: Option<u64>) -> Result<bool> {
    let mut config = config.clone();
    if let Some(seed) = seed {
        config.verify.seed = seed;
    }
    let dir = prepare_run_dir(out_dir, "verify", suite, &config)?;
    let cfg = &config.verify;
    let selected: Vec<&str> = if suite == "all" {
        vec!["tv_bounds", "prop1", "dominance", "duality", "sandwich"]
    } else {
        vec![suite]
    };
    let mut reports = Vec::new();
    for name in selected {
        let report = match name {
            "tv_bounds" => run_tv_bounds_suite(cfg)?,
            "prop1" => run_prop1_suite(cfg)?,
            "dominance" => {
                verify_generator_dominance(cfg.dominance_points, cfg.dominance_pairs, cfg.seed)?
            }
            "duality" => verify_duality(cfg.duality_instances, &cfg.duality_rhos, cfg.seed)?,
            "sandwich" => verify_sandwich(cfg.sandwich_instances, cfg.sandwich_rho_prime, cfg.seed)?,
            other => return Err(Error::InvalidConfig(format!("unknown suite '{other}'"))),
        };
        println!(
            "suite {}: {} cases, max violation {:.3e}, {}",
            report.suite,
            report.cases,
            report.max_violation,
            if report.pass { "pass" } else { "FAIL" }
        );
        write_json(&report, &dir.join(format!("{name}.json")))?;
        reports.push(report);
    }
    let all_pass = reports.iter().all(|r| r.pass);
    write_json(
        &serde_json::json!({
            "suites": reports.iter().map(|r| &r.suite).collect::<Vec<_>>(),
            "pass": all_pass,
        }),
        &dir.join("summary.json"),
    )?;
    Ok(all_pass)
}

fn run() -> Result<i32> {
    let cli = Cli::parse();
    match &cli.command {
        Command::GenEnv { config, out_dir } => {
            cmd_gen_env(&Config::load(config)?, out_dir)?;
            Ok(0)
        }
        Command::GenData { config, out_dir } => {
            cmd_gen_data(&Config::load(config)?, out_dir)?;
            Ok(0)
        }
        Command::Train {
            config,
            out_dir,
            algo,
        } => {
            cmd_train(&Config::load(config)?, out_dir, algo)?;
            Ok(0)
        }
        Command::Eval {
            config,
            out_dir,
            checkpoint,
        } => {
            cmd_eval(&Config::load(config)?, out_dir, checkpoint)?;
            Ok(0)
        }
        Command::Sweep {
            config,
            out_dir,
            checkpoint,
        } => {
            cmd_sweep(&Config::load(config)?, out_dir, checkpoint)?;
            Ok(0)
        }
        Command::Verify {
            config,
            out_dir,
            suite,
            seed,
        } => {
            let config = match config {
                Some(path) => Config::load(path)?,
                None => Config::default(),
            };
            let pass = cmd_verify(&config, out_dir, suite, *seed)?;
            Ok(if pass { 0 } else { 1 })
        }
    }
}

fn main() {
    match run() {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
