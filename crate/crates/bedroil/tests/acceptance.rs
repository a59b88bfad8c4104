//! End-to-end acceptance checks for the full pipeline: occupancy bounds,
//! closed-form weights, generator dominance, duality certification, the
//! restriction/relaxation sandwich, gradient oracles, robustness of trained
//! policies under dynamics shift, the zero-radius collapse to behavioral
//! cloning, and byte-level determinism of the CLI. Each test prints a single
//! pass/fail line.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bedroil::dataset::generate_dataset;
use bedroil::divergence::make_generator;
use bedroil::mdp::{random_mdp, random_policy, SoftmaxPolicy, StochasticPolicy, TabularMdp};
use bedroil::oracle::{
    verify_duality, verify_generator_dominance, verify_occupancy_tv_bounds, verify_prop1_scalar,
    verify_sandwich, SuiteReport,
};
use bedroil::perturb::{build_gridworld, exact_imitation_loss, exact_return, make_expert, GridworldSpec};
use bedroil::robust::{
    dual_objective, e_score, exact_kl_loss, next_q_expectation, optimal_weight,
    weighted_policy_loss, Atoms, DualState, LossMode, ObjectiveConfig,
};
use bedroil::solver::{train_bc, train_bedroil, Problem, SolverConfig};

fn report(name: &str, pass: bool, elapsed: Duration, detail: &str) {
    println!(
        "acceptance {name}: {} ({detail}, {:.1}s)",
        if pass { "pass" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
}

fn check_suite(name: &str, budget: Duration, reports: Vec<SuiteReport>, start: Instant) {
    let elapsed = start.elapsed();
    let cases: usize = reports.iter().map(|r| r.cases).sum();
    let max_violation = reports
        .iter()
        .map(|r| r.max_violation)
        .fold(f64::NEG_INFINITY, f64::max);
    let pass = reports.iter().all(|r| r.pass) && elapsed <= budget;
    report(
        name,
        pass,
        elapsed,
        &format!("{cases} cases, max violation {max_violation:.3e}"),
    );
    assert!(pass, "{name} failed: {reports:?} in {elapsed:?}");
}

/// Sampled kernels within a per-row TV ball never move the expert's triplet
/// occupancy further than the induced radius, across discount factors and
/// random MDP shapes.
#[test]
fn occupancy_shift_bounded_by_kernel_radius() {
    let start = Instant::now();
    let seed = 7u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho_primes = [0.05, 0.1, 0.2];
    let mut parts = Vec::new();
    for gamma in [0.5, 0.9, 0.99] {
        for i in 0..5usize {
            let num_states = rng.gen_range(2..=6);
            let num_actions = rng.gen_range(2..=3);
            let mdp = random_mdp(num_states, num_actions, gamma, &mut rng);
            let policy = random_policy(num_states, num_actions, &mut rng);
            for (j, &rho_prime) in rho_primes.iter().enumerate() {
                let case_seed = seed ^ ((i * rho_primes.len() + j) as u64).wrapping_mul(0x9e37);
                parts.push(
                    verify_occupancy_tv_bounds(&mdp, &policy, rho_prime, 1000, case_seed).unwrap(),
                );
            }
        }
    }
    check_suite(
        "occupancy_tv_bounds",
        Duration::from_secs(120),
        parts,
        start,
    );
}

/// The closed-form inner maximizer agrees with dense numerical maximization
/// of `w -> -tau f(w) + w e` for every smooth generator.
#[test]
fn closed_form_weights_maximize_scalar_objective() {
    let start = Instant::now();
    let mut parts = Vec::new();
    for name in ["soft_tv", "kl", "chi2", "soft_chi2"] {
        let gen = make_generator(name).unwrap();
        parts.push(verify_prop1_scalar(&gen, 1000, 7).unwrap());
    }
    check_suite("prop1_scalar", Duration::from_secs(30), parts, start);
}

/// Pointwise and distribution-level dominance of the smoothed generators
/// over their exact counterparts.
#[test]
fn smoothed_generators_dominate_exact_ones() {
    let start = Instant::now();
    let parts = vec![verify_generator_dominance(100_000, 1000, 7).unwrap()];
    check_suite("generator_dominance", Duration::from_secs(10), parts, start);
}

/// Independent primal (interior-point) and dual (exact-conjugate Newton)
/// solvers agree on random small instances, and the dual never dips below
/// the primal.
#[test]
fn primal_and_dual_values_coincide() {
    let start = Instant::now();
    let parts = vec![verify_duality(10, &[0.0, 0.05, 0.1], 7).unwrap()];
    check_suite("duality_gap", Duration::from_secs(300), parts, start);
}

/// The occupancy-ball inner maximum upper-bounds every loss reachable by an
/// admissible kernel perturbation.
#[test]
fn occupancy_relaxation_upper_bounds_kernel_shifts() {
    let start = Instant::now();
    let parts = vec![verify_sandwich(20, 0.05, 7).unwrap()];
    check_suite("relaxation_sandwich", Duration::from_secs(300), parts, start);
}

fn mix_to_uniform(policy: &StochasticPolicy, lambda: f64) -> StochasticPolicy {
    let num_actions = policy.num_actions();
    let probs = policy
        .probs
        .iter()
        .map(|row| {
            row.iter()
                .map(|p| (1.0 - lambda) * p + lambda / num_actions as f64)
                .collect()
        })
        .collect();
    StochasticPolicy::new(probs).unwrap()
}

fn fd_instance(seed: u64) -> (TabularMdp, StochasticPolicy, StochasticPolicy, Atoms) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mdp = random_mdp(3, 2, 0.9, &mut rng);
    // Mixing both policies halfway to uniform bounds the per-state KL loss
    // away from the soft-TV saturation region, so every evaluation stays on
    // the smooth branch where the envelope gradient is a total derivative.
    let expert = mix_to_uniform(&random_policy(3, 2, &mut rng), 0.5);
    let learner = mix_to_uniform(&random_policy(3, 2, &mut rng), 0.5);
    let atoms = Atoms::exact(&mdp, &expert).unwrap();
    (mdp, expert, learner, atoms)
}

fn fd_check_one(gen_name: &str, seed: u64) -> f64 {
    let (_, expert, learner, atoms) = fd_instance(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let dual = DualState {
        q_table: (0..3)
            .map(|_| (0..2).map(|_| 0.3 * (rng.gen::<f64>() - 0.5)).collect())
            .collect(),
        tau: 2.0 + rng.gen::<f64>(),
    };
    let gen = make_generator(gen_name).unwrap();
    let cfg = ObjectiveConfig::new(0.1, LossMode::ExactKl);
    let h = 1e-5;
    let mut worst: f64 = 0.0;

    // First-stage objective: Q-table and tau gradients.
    let eval = dual_objective(&dual, &learner, Some(&expert), &atoms, &gen, &cfg).unwrap();
    let value_at = |d: &DualState| {
        dual_objective(d, &learner, Some(&expert), &atoms, &gen, &cfg)
            .unwrap()
            .value
    };
    for s in 0..3 {
        for a in 0..2 {
            let mut plus = dual.clone();
            plus.q_table[s][a] += h;
            let mut minus = dual.clone();
            minus.q_table[s][a] -= h;
            let fd = (value_at(&plus) - value_at(&minus)) / (2.0 * h);
            let g = eval.grad_q[s][a];
            worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-8));
        }
    }
    let mut plus = dual.clone();
    plus.tau += h;
    let mut minus = dual.clone();
    minus.tau -= h;
    let fd_tau = (value_at(&plus) - value_at(&minus)) / (2.0 * h);
    worst = worst.max(
        (fd_tau - eval.grad_tau).abs() / fd_tau.abs().max(eval.grad_tau.abs()).max(1e-8),
    );

    // Second-stage objective: logit gradients with weights detached, checked
    // against an oracle that freezes the per-atom weights explicitly.
    let mut logits = SoftmaxPolicy::zeros(3, 2);
    for row in logits.logits.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.gen::<f64>() - 0.5;
        }
    }
    let peval = weighted_policy_loss(
        &logits.materialize(),
        &dual,
        Some(&expert),
        &atoms,
        &gen,
        &cfg,
        false,
    )
    .unwrap();
    let frozen_weights: Vec<f64> = atoms
        .transitions
        .iter()
        .map(|atom| {
            let loss = exact_kl_loss(&expert.probs[atom.s], &logits.materialize().probs[atom.s]);
            let next_q = next_q_expectation(&dual, atom.next, atom.s_next, Some(&expert)).unwrap();
            let e = e_score(&dual, atoms.discount, atom.s, atom.a, loss, next_q);
            optimal_weight(&gen, e, dual.tau, cfg.tau_min).unwrap()
        })
        .collect();
    let frozen_loss = |lg: &SoftmaxPolicy| -> f64 {
        let probs = lg.materialize();
        atoms
            .transitions
            .iter()
            .zip(&frozen_weights)
            .map(|(atom, &w)| {
                atom.weight * w * exact_kl_loss(&expert.probs[atom.s], &probs.probs[atom.s])
            })
            .sum()
    };
    for s in 0..3 {
        for a in 0..2 {
            let mut plus = logits.clone();
            plus.logits[s][a] += h;
            let mut minus = logits.clone();
            minus.logits[s][a] -= h;
            let fd = (frozen_loss(&plus) - frozen_loss(&minus)) / (2.0 * h);
            let g = peval.grad_logits[s][a];
            worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-8));
        }
    }
    worst
}

/// Analytic gradients of both training objectives match central finite
/// differences to 1e-4 relative error on 20 random instances covering all
/// four smooth generators.
#[test]
fn objective_gradients_match_finite_differences() {
    let start = Instant::now();
    let gens = ["chi2", "soft_tv", "kl", "soft_chi2"];
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        worst = worst.max(fd_check_one(gens[(i % 4) as usize], i));
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-4 && elapsed <= Duration::from_secs(60);
    report(
        "gradient_checks",
        pass,
        elapsed,
        &format!("20 instances, worst relative error {worst:.3e}"),
    );
    assert!(pass, "worst relative error {worst} in {elapsed:?}");
}

struct TrainedPair {
    robust: StochasticPolicy,
    bc: StochasticPolicy,
    expert: StochasticPolicy,
}

fn train_pair(seed: u64, rho: f64, tau_init: f64) -> TrainedPair {
    let spec = GridworldSpec::default();
    let (mdp, reward) = build_gridworld(&spec).unwrap();
    let expert = make_expert(&mdp, &reward, 0.1).unwrap();
    let dataset = generate_dataset(&mdp, &expert, 200, 10, seed);
    let problem = Problem::Sampled {
        dataset: &dataset,
        num_states: mdp.num_states,
        num_actions: mdp.num_actions,
        discount: mdp.discount,
        expert: None,
    };
    let config = SolverConfig {
        rho,
        steps: 8000,
        loss_mode: LossMode::SampleNll,
        seed,
        tau_init,
        ..SolverConfig::default()
    };
    let robust = train_bedroil(&problem, &config).unwrap().policy.materialize();
    let bc = train_bc(&problem, &config).unwrap().0.materialize();
    TrainedPair { robust, bc, expert }
}

/// Over 5 dataset seeds, the robust policy beats behavioral cloning on the
/// worst-case imitation loss across slip-probability shifts and on the exact
/// return at the largest shift.
#[test]
fn robust_training_degrades_less_under_shift() {
    let start = Instant::now();
    let slips = [0.0, 0.1, 0.2, 0.3];
    let mut loss_wins = 0usize;
    let mut return_wins = 0usize;
    for seed in 0..5u64 {
        let pair = train_pair(seed, 0.1, 1.0);
        let mut worst = [f64::NEG_INFINITY; 2];
        let mut last_return = [0.0f64; 2];
        for &slip in &slips {
            let shifted = GridworldSpec {
                slip_prob: slip,
                ..GridworldSpec::default()
            };
            let (mdp, reward) = build_gridworld(&shifted).unwrap();
            for (k, policy) in [&pair.robust, &pair.bc].into_iter().enumerate() {
                let loss = exact_imitation_loss(&mdp, &pair.expert, policy).unwrap();
                worst[k] = worst[k].max(loss);
                last_return[k] = exact_return(&mdp, policy, &reward).unwrap();
            }
        }
        if worst[0] < worst[1] {
            loss_wins += 1;
        }
        if last_return[0] > last_return[1] {
            return_wins += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = loss_wins == 5 && return_wins == 5 && elapsed <= Duration::from_secs(600);
    report(
        "robustness_trend",
        pass,
        elapsed,
        &format!("worst-case loss wins {loss_wins}/5, shifted return wins {return_wins}/5"),
    );
    assert!(pass, "loss wins {loss_wins}/5, return wins {return_wins}/5 in {elapsed:?}");
}

/// At radius zero the robust learner collapses to behavioral cloning: the
/// trained policies agree to within 0.05 max-state total variation on every
/// seed. A large initial tau keeps the weights pinned at one from the start.
#[test]
fn zero_radius_collapses_to_behavioral_cloning() {
    let start = Instant::now();
    let mut max_tv: f64 = 0.0;
    for seed in 0..5u64 {
        let pair = train_pair(seed, 0.0, 25.0);
        max_tv = max_tv.max(pair.robust.max_state_tv(&pair.bc));
    }
    let elapsed = start.elapsed();
    let pass = max_tv <= 0.05 && elapsed <= Duration::from_secs(300);
    report(
        "zero_radius_collapse",
        pass,
        elapsed,
        &format!("max per-state TV to BC {max_tv:.4}"),
    );
    assert!(pass, "max TV {max_tv} in {elapsed:?}");
}

mod determinism {
    use std::collections::BTreeMap;
    use std::fs;
    use std::path::{Path, PathBuf};
    use std::process::Command;
    use std::time::Instant;

    use super::report;

    fn bin() -> &'static str {
        env!("CARGO_BIN_EXE_bedroil")
    }

    fn run(args: &[&str]) {
        let output = Command::new(bin()).args(args).output().unwrap();
        assert!(
            output.status.success(),
            "command {args:?} failed:\nstdout: {}\nstderr: {}",
            String::from_utf8_lossy(&output.stdout),
            String::from_utf8_lossy(&output.stderr)
        );
    }

    /// The single run directory produced under `out_dir`.
    fn run_dir(out_dir: &Path) -> PathBuf {
        let mut dirs: Vec<PathBuf> = fs::read_dir(out_dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_dir())
            .collect();
        assert_eq!(dirs.len(), 1, "expected one run dir in {}", out_dir.display());
        dirs.pop().unwrap()
    }

    fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
        fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    fs::read(e.path()).unwrap(),
                )
            })
            .collect()
    }

    /// Compare two run snapshots byte-for-byte; the run metadata is compared
    /// with its wall-clock timestamp field neutralized, which is the only
    /// value any command is allowed to vary between identical runs.
    fn assert_identical(label: &str, first: &BTreeMap<String, Vec<u8>>, second: &BTreeMap<String, Vec<u8>>) {
        assert_eq!(
            first.keys().collect::<Vec<_>>(),
            second.keys().collect::<Vec<_>>(),
            "{label}: file sets differ"
        );
        for (name, bytes) in first {
            let other = &second[name];
            if name == "run-metadata.json" {
                let mut a: serde_json::Value = serde_json::from_slice(bytes).unwrap();
                let mut b: serde_json::Value = serde_json::from_slice(other).unwrap();
                a["timestamp_unix"] = 0.into();
                b["timestamp_unix"] = 0.into();
                assert_eq!(a, b, "{label}: {name} differs beyond the timestamp");
            } else {
                assert_eq!(bytes, other, "{label}: {name} differs between reruns");
            }
        }
    }

    /// Every CLI command, rerun with an identical config, reproduces its
    /// output files byte-for-byte.
    #[test]
    fn cli_reruns_are_byte_identical() {
        let start = Instant::now();
        let root = std::env::temp_dir().join(format!("bedroil-acceptance-{}", std::process::id()));
        let _ = fs::remove_dir_all(&root);
        fs::create_dir_all(&root).unwrap();
        let config_path = root.join("config.json");
        let config = serde_json::json!({
            "dataset": { "num_trajectories": 20, "horizon": 8, "seed": 3 },
            "solver": { "steps": 60, "loss_mode": "sample_nll" },
            "sweep": {
                "parameter": "slip_prob",
                "values": [0.0, 0.2],
                "samples_per_value": 1,
                "seed": 5
            },
            "verify": {
                "seed": 7,
                "tv_gammas": [0.9],
                "tv_rho_primes": [0.1],
                "tv_kernels_per_setting": 50,
                "tv_instances": 2,
                "prop1_cases": 100,
                "dominance_points": 2000,
                "dominance_pairs": 50,
                "duality_instances": 2,
                "duality_rhos": [0.05],
                "sandwich_instances": 2,
                "sandwich_rho_prime": 0.05
            }
        });
        fs::write(&config_path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
        let cfg = config_path.to_str().unwrap();

        // `train` runs first so its checkpoint can feed `eval` and `sweep`.
        let train_out = root.join("out-train");
        let train_args = ["train", "--config", cfg, "--out-dir", train_out.to_str().unwrap()];
        run(&train_args);
        let checkpoint = run_dir(&train_out).join("checkpoint.json");
        let checkpoint = checkpoint.to_str().unwrap().to_string();

        let mut commands: Vec<(&str, Vec<String>)> = vec![
            ("train", train_args.iter().map(|s| s.to_string()).collect()),
        ];
        for name in ["gen-env", "gen-data", "eval", "sweep", "verify"] {
            let out = root.join(format!("out-{name}"));
            let mut args = vec![
                name.to_string(),
                "--config".into(),
                cfg.into(),
                "--out-dir".into(),
                out.to_str().unwrap().into(),
            ];
            if matches!(name, "eval" | "sweep") {
                args.push("--checkpoint".into());
                args.push(checkpoint.clone());
            }
            commands.push((name, args));
        }

        for (name, args) in &commands {
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            let out_dir = root.join(format!("out-{name}"));
            if *name != "train" {
                run(&args);
            }
            let first = snapshot(&run_dir(&out_dir));
            run(&args);
            let second = snapshot(&run_dir(&out_dir));
            assert_identical(name, &first, &second);
        }

        let elapsed = start.elapsed();
        report(
            "determinism",
            true,
            elapsed,
            &format!("{} commands rerun byte-identical", commands.len()),
        );
        let _ = fs::remove_dir_all(&root);
    }
}
