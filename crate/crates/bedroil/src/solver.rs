//! Alternating first-order training: gradient steps on the dual pair
//! `(Q, tau)` against the dual objective interleaved with gradient steps on
//! policy logits against the weighted imitation loss. Plain constant-rate
//! gradient descent; single-threaded and fully deterministic given the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::divergence::{make_generator, FGenerator};
use crate::mdp::{balance_residual, SoftmaxPolicy, StochasticPolicy, TabularMdp};
use crate::robust::{
    dual_objective, e_score, next_q_expectation, optimal_weight, weighted_policy_loss, Atoms,
    DivergenceCoefficient, DualState, LossMode, ObjectiveConfig, DEFAULT_TAU_MIN,
};
use crate::{Error, Result};

/// Minibatch size, or full-expectation ("exact") evaluation every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatchSize {
    Count(usize),
    Keyword(ExactKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactKeyword {
    Exact,
}

impl BatchSize {
    pub fn count(&self) -> Option<usize> {
        match self {
            BatchSize::Count(n) => Some(*n),
            BatchSize::Keyword(ExactKeyword::Exact) => None,
        }
    }
}

impl Default for BatchSize {
    fn default() -> Self {
        BatchSize::Keyword(ExactKeyword::Exact)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Radius of the occupancy-divergence ball.
    pub rho: f64,
    pub generator_name: String,
    pub lr_dual: f64,
    pub lr_policy: f64,
    pub steps: usize,
    /// Policy : dual update counts per iteration.
    pub update_ratio: (usize, usize),
    pub batch_size: BatchSize,
    pub seed: u64,
    pub tau_init: f64,
    pub tau_min: f64,
    pub loss_mode: LossMode,
    pub saturation_weight: f64,
    /// Run the dual steps before the policy steps within one iteration;
    /// set false to flip the order.
    pub dual_first: bool,
    pub divergence_coefficient: DivergenceCoefficient,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: 0.1,
            generator_name: "soft_tv".into(),
            lr_dual: 5e-2,
            lr_policy: 5e-2,
            steps: 2000,
            update_ratio: (1, 1),
            batch_size: BatchSize::default(),
            seed: 0,
            tau_init: 1.0,
            tau_min: DEFAULT_TAU_MIN,
            loss_mode: LossMode::ExactKl,
            saturation_weight: 1e3,
            dual_first: true,
            divergence_coefficient: DivergenceCoefficient::Tau,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0) {
            return Err(Error::InvalidConfig(format!("rho must be >= 0, got {}", self.rho)));
        }
        for (name, v) in [
            ("lr_dual", self.lr_dual),
            ("lr_policy", self.lr_policy),
            ("tau_init", self.tau_init),
            ("tau_min", self.tau_min),
            ("saturation_weight", self.saturation_weight),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be > 0".into()));
        }
        if self.update_ratio.0 == 0 || self.update_ratio.1 == 0 {
            return Err(Error::InvalidConfig(
                "both components of update_ratio must be > 0".into(),
            ));
        }
        if self.batch_size.count() == Some(0) {
            return Err(Error::InvalidConfig("batch_size must be > 0".into()));
        }
        Ok(())
    }

    pub fn generator(&self) -> Result<FGenerator> {
        let base = make_generator(&self.generator_name)?;
        Ok(FGenerator::with_saturation_weight(base.kind, self.saturation_weight))
    }

    pub fn objective_config(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            rho: self.rho,
            tau_min: self.tau_min,
            loss_mode: self.loss_mode,
            divergence_coefficient: self.divergence_coefficient,
        }
    }
}

/// What the solver trains against: exact expectations under a known MDP and
/// expert, or empirical expectations from logged demonstrations.
#[derive(Debug, Clone, Copy)]
pub enum Problem<'a> {
    Exact {
        mdp: &'a TabularMdp,
        expert: &'a StochasticPolicy,
    },
    Sampled {
        dataset: &'a Dataset,
        num_states: usize,
        num_actions: usize,
        discount: f64,
        expert: Option<&'a StochasticPolicy>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub dual_value: f64,
    pub policy_loss: f64,
    pub tau: f64,
    pub mean_weight: f64,
    pub max_weight: f64,
    /// Max-norm residual of the kernel-free balance equation for the
    /// weight-implied occupancy; only evaluated periodically and only when
    /// the expert policy is available.
    pub balance_residual: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<HistoryRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: SoftmaxPolicy,
    pub dual: DualState,
    pub history: TrainingHistory,
}

/// On-disk training snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub logits: Vec<Vec<f64>>,
    pub q_table: Vec<Vec<f64>>,
    pub tau: f64,
    pub config: SolverConfig,
    pub iteration: usize,
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Empirical distribution over every state visited at a decision point
/// (each one acts as an effective initial state in sample mode).
pub fn effective_initial_states(dataset: &Dataset, num_states: usize) -> Result<Vec<f64>> {
    if dataset.transitions().is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (dist, empty) = dataset.effective_initial_states(num_states);
    if empty > 0 {
        eprintln!("warning: {empty} empty trajectories ignored");
    }
    Ok(dist)
}

struct ProblemData<'a> {
    atoms: Atoms,
    expert: Option<&'a StochasticPolicy>,
    /// Initial distribution for the balance-residual diagnostic.
    initial_dist: Option<Vec<f64>>,
}

fn build_problem<'a>(problem: &Problem<'a>) -> Result<ProblemData<'a>> {
    match problem {
        Problem::Exact { mdp, expert } => {
            expert.validate()?;
            if expert.num_states() != mdp.num_states || expert.num_actions() != mdp.num_actions {
                return Err(Error::DimensionMismatch(
                    "expert policy shape does not match the MDP".into(),
                ));
            }
            Ok(ProblemData {
                atoms: Atoms::exact(mdp, expert)?,
                expert: Some(expert),
                initial_dist: Some(mdp.initial_dist.clone()),
            })
        }
        Problem::Sampled {
            dataset,
            num_states,
            num_actions,
            discount,
            expert,
        } => {
            dataset.validate(*num_states, *num_actions)?;
            let (atoms, flagged) = Atoms::from_dataset(
                dataset,
                *num_states,
                *num_actions,
                *discount,
                expert.is_some(),
            )?;
            if flagged > 0 {
                eprintln!(
                    "warning: {flagged} terminal transitions use a zero next-action expectation"
                );
            }
            let initial_dist = expert
                .is_some()
                .then(|| dataset.effective_initial_states(*num_states).0);
            Ok(ProblemData {
                atoms,
                expert: *expert,
                initial_dist,
            })
        }
    }
}

/// Balance residual of the weight-implied occupancy `w*(s,a,s') d^o(s,a,s')`
/// against the expert policy and initial distribution.
fn weighted_balance_residual(
    atoms: &Atoms,
    dual: &DualState,
    policy: &StochasticPolicy,
    expert: &StochasticPolicy,
    initial_dist: &[f64],
    gen: &FGenerator,
    cfg: &ObjectiveConfig,
) -> Result<f64> {
    let mut mass = vec![vec![vec![0.0; atoms.num_states]; atoms.num_actions]; atoms.num_states];
    for atom in &atoms.transitions {
        let loss = match cfg.loss_mode {
            LossMode::ExactKl => {
                crate::robust::exact_kl_loss(&expert.probs[atom.s], &policy.probs[atom.s])
            }
            LossMode::SampleNll => crate::robust::sample_nll_loss(&policy.probs[atom.s], atom.a),
        };
        let next_q = next_q_expectation(dual, atom.next, atom.s_next, Some(expert))?;
        let e = e_score(dual, atoms.discount, atom.s, atom.a, loss, next_q);
        let w = optimal_weight(gen, e, dual.tau, cfg.tau_min)?;
        mass[atom.s][atom.a][atom.s_next] += atom.weight * w;
    }
    let occ = crate::mdp::TripletOccupancy { mass };
    Ok(balance_residual(&occ, expert, initial_dist, atoms.discount))
}

fn check_finite(value: f64, context: &str, iteration: usize, snapshot: &Checkpoint) -> Result<()> {
    if value.is_finite() {
        return Ok(());
    }
    eprintln!(
        "aborting: non-finite value in {context} at iteration {iteration}; snapshot: {}",
        serde_json::to_string(snapshot).unwrap_or_else(|_| "<unserializable>".into())
    );
    Err(Error::NonFinite {
        context: context.to_string(),
        iteration,
    })
}

const RESIDUAL_EVERY: usize = 50;

/// Everything one alternation step needs besides the mutable parameters.
struct StepContext<'a> {
    batch: &'a Atoms,
    expert: Option<&'a StochasticPolicy>,
    gen: &'a FGenerator,
    obj_cfg: &'a ObjectiveConfig,
    config: &'a SolverConfig,
    iteration: usize,
    dual_steps: usize,
    policy_steps: usize,
    force_unit_weights: bool,
}

impl StepContext<'_> {
    fn snapshot(&self, logits: &SoftmaxPolicy, dual: &DualState) -> Checkpoint {
        Checkpoint {
            logits: logits.logits.clone(),
            q_table: dual.q_table.clone(),
            tau: dual.tau,
            config: self.config.clone(),
            iteration: self.iteration,
        }
    }

    fn dual_steps(&self, logits: &SoftmaxPolicy, dual: &mut DualState) -> Result<f64> {
        let policy = logits.materialize();
        let mut value = f64::NAN;
        for _ in 0..self.dual_steps {
            let eval =
                dual_objective(dual, &policy, self.expert, self.batch, self.gen, self.obj_cfg)?;
            check_finite(
                eval.value,
                "dual objective",
                self.iteration,
                &self.snapshot(logits, dual),
            )?;
            for s in 0..self.batch.num_states {
                for a in 0..self.batch.num_actions {
                    dual.q_table[s][a] -= self.config.lr_dual * eval.grad_q[s][a];
                }
            }
            dual.tau = (dual.tau - self.config.lr_dual * eval.grad_tau).max(self.config.tau_min);
            if !dual.is_finite() {
                check_finite(
                    f64::NAN,
                    "dual parameters",
                    self.iteration,
                    &self.snapshot(logits, dual),
                )?;
            }
            value = eval.value;
        }
        Ok(value)
    }

    /// Returns (loss value, mean weight, max weight) of the last step.
    fn policy_steps(
        &self,
        logits: &mut SoftmaxPolicy,
        dual: &DualState,
    ) -> Result<(f64, f64, f64)> {
        let mut out = (f64::NAN, f64::NAN, f64::NAN);
        for _ in 0..self.policy_steps {
            let policy = logits.materialize();
            let eval = weighted_policy_loss(
                &policy,
                dual,
                self.expert,
                self.batch,
                self.gen,
                self.obj_cfg,
                self.force_unit_weights,
            )?;
            check_finite(
                eval.value,
                "policy loss",
                self.iteration,
                &self.snapshot(logits, dual),
            )?;
            for s in 0..self.batch.num_states {
                for a in 0..self.batch.num_actions {
                    logits.logits[s][a] -= self.config.lr_policy * eval.grad_logits[s][a];
                }
            }
            if !logits.logits.iter().flatten().all(|v| v.is_finite()) {
                check_finite(
                    f64::NAN,
                    "policy logits",
                    self.iteration,
                    &self.snapshot(logits, dual),
                )?;
            }
            out = (eval.value, eval.mean_weight, eval.max_weight);
        }
        Ok(out)
    }
}

fn run_training(
    problem: &Problem,
    config: &SolverConfig,
    force_unit_weights: bool,
    update_dual: bool,
) -> Result<TrainOutcome> {
    config.validate()?;
    let data = build_problem(problem)?;
    let gen = config.generator()?;
    let obj_cfg = config.objective_config();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut logits = SoftmaxPolicy::zeros(data.atoms.num_states, data.atoms.num_actions);
    let mut dual = DualState::zeros(
        data.atoms.num_states,
        data.atoms.num_actions,
        config.tau_init.max(config.tau_min),
    );
    let mut history = TrainingHistory::default();

    let (policy_steps, dual_steps) = config.update_ratio;
    for iteration in 0..config.steps {
        let batch = match config.batch_size.count() {
            Some(n) => {
                let indices: Vec<usize> = (0..n)
                    .map(|_| rng.gen_range(0..data.atoms.transitions.len()))
                    .collect();
                data.atoms.minibatch(&indices)
            }
            None => data.atoms.clone(),
        };
        let step = StepContext {
            batch: &batch,
            expert: data.expert,
            gen: &gen,
            obj_cfg: &obj_cfg,
            config,
            iteration,
            dual_steps,
            policy_steps,
            force_unit_weights,
        };

        let dual_value;
        let policy;
        if update_dual && config.dual_first {
            dual_value = step.dual_steps(&logits, &mut dual)?;
            policy = step.policy_steps(&mut logits, &dual)?;
        } else if update_dual {
            policy = step.policy_steps(&mut logits, &dual)?;
            dual_value = step.dual_steps(&logits, &mut dual)?;
        } else {
            dual_value = f64::NAN;
            policy = step.policy_steps(&mut logits, &dual)?;
        }
        let (policy_value, mean_weight, max_weight) = policy;

        let residual = if update_dual
            && iteration % RESIDUAL_EVERY == 0
            && data.expert.is_some()
            && data.initial_dist.is_some()
        {
            Some(weighted_balance_residual(
                &batch,
                &dual,
                &logits.materialize(),
                data.expert.unwrap(),
                data.initial_dist.as_ref().unwrap(),
                &gen,
                &obj_cfg,
            )?)
        } else {
            None
        };

        history.records.push(HistoryRecord {
            iteration,
            dual_value,
            policy_loss: policy_value,
            tau: dual.tau,
            mean_weight,
            max_weight,
            balance_residual: residual,
        });
    }

    Ok(TrainOutcome {
        policy: logits,
        dual,
        history,
    })
}

/// Full alternating optimization of the distributionally robust objective.
pub fn train_bedroil(problem: &Problem, config: &SolverConfig) -> Result<TrainOutcome> {
    run_training(problem, config, false, true)
}

/// Behavioral cloning: gradient descent on the unweighted imitation loss.
/// Identical to [`train_bedroil`] with every weight forced to 1 and the dual
/// pair frozen.
pub fn train_bc(problem: &Problem, config: &SolverConfig) -> Result<(SoftmaxPolicy, TrainingHistory)> {
    let outcome = run_training(problem, config, true, false)?;
    Ok((outcome.policy, outcome.history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{random_mdp, random_policy};
    use crate::robust::exact_kl_loss;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_state() -> (TabularMdp, StochasticPolicy) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = random_mdp(2, 2, 0.9, &mut rng);
        let expert = random_policy(2, 2, &mut rng);
        (mdp, expert)
    }

    fn max_state_kl(expert: &StochasticPolicy, policy: &StochasticPolicy) -> f64 {
        (0..expert.num_states())
            .map(|s| exact_kl_loss(&expert.probs[s], &policy.probs[s]))
            .fold(0.0, f64::max)
    }

    #[test]
    fn bc_recovers_expert_on_exact_data() {
        let (mdp, expert) = two_state();
        let config = SolverConfig {
            rho: 0.0,
            steps: 20_000,
            ..Default::default()
        };
        let (policy, _) = train_bc(
            &Problem::Exact {
                mdp: &mdp,
                expert: &expert,
            },
            &config,
        )
        .unwrap();
        let kl = max_state_kl(&expert, &policy.materialize());
        assert!(kl <= 1e-3, "max-state KL {kl}");
    }

    #[test]
    fn bedroil_rho_zero_recovers_expert_on_exact_data() {
        let (mdp, expert) = two_state();
        let config = SolverConfig {
            rho: 0.0,
            steps: 20_000,
            ..Default::default()
        };
        let outcome = train_bedroil(
            &Problem::Exact {
                mdp: &mdp,
                expert: &expert,
            },
            &config,
        )
        .unwrap();
        let kl = max_state_kl(&expert, &outcome.policy.materialize());
        assert!(kl <= 1e-3, "max-state KL {kl}");
    }

    #[test]
    fn fixed_seed_gives_bit_identical_history() {
        let (mdp, expert) = two_state();
        let ds = crate::dataset::generate_dataset(&mdp, &expert, 20, 10, 5);
        let problem = Problem::Sampled {
            dataset: &ds,
            num_states: 2,
            num_actions: 2,
            discount: 0.9,
            expert: None,
        };
        let config = SolverConfig {
            steps: 200,
            batch_size: BatchSize::Count(16),
            loss_mode: LossMode::SampleNll,
            seed: 42,
            ..Default::default()
        };
        let a = train_bedroil(&problem, &config).unwrap();
        let b = train_bedroil(&problem, &config).unwrap();
        assert_eq!(
            serde_json::to_string(&a.history).unwrap(),
            serde_json::to_string(&b.history).unwrap()
        );
    }

    #[test]
    fn bc_equals_unit_weight_bedroil_loss_trajectory() {
        let (mdp, expert) = two_state();
        let ds = crate::dataset::generate_dataset(&mdp, &expert, 20, 10, 7);
        let problem = Problem::Sampled {
            dataset: &ds,
            num_states: 2,
            num_actions: 2,
            discount: 0.9,
            expert: None,
        };
        let config = SolverConfig {
            steps: 300,
            batch_size: BatchSize::Count(16),
            loss_mode: LossMode::SampleNll,
            seed: 9,
            ..Default::default()
        };
        let (_, bc_history) = train_bc(&problem, &config).unwrap();
        let unit = run_training(&problem, &config, true, true).unwrap();
        for (a, b) in bc_history.records.iter().zip(&unit.history.records) {
            assert!(
                (a.policy_loss - b.policy_loss).abs() < 1e-9,
                "iteration {}: {} vs {}",
                a.iteration,
                a.policy_loss,
                b.policy_loss
            );
        }
    }

    #[test]
    fn tau_never_drops_below_floor_and_weights_stay_bounded() {
        let (mdp, expert) = two_state();
        let config = SolverConfig {
            rho: 0.3,
            steps: 500,
            tau_init: 0.01,
            ..Default::default()
        };
        let outcome = train_bedroil(
            &Problem::Exact {
                mdp: &mdp,
                expert: &expert,
            },
            &config,
        )
        .unwrap();
        for rec in &outcome.history.records {
            assert!(rec.tau >= config.tau_min);
            assert!(rec.max_weight >= 0.0 && rec.max_weight <= config.saturation_weight);
        }
    }

    #[test]
    fn divergent_rate_aborts_with_iteration_index() {
        let (mdp, expert) = two_state();
        let config = SolverConfig {
            lr_dual: f64::MAX,
            steps: 50,
            generator_name: "kl".into(),
            ..Default::default()
        };
        let err = train_bedroil(
            &Problem::Exact {
                mdp: &mdp,
                expert: &expert,
            },
            &config,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "got {err}");
    }

    #[test]
    fn dual_gradient_check_holds_along_training() {
        // Finite differences at a fresh start, a mid-run and an end-of-run
        // parameter snapshot; chi2 keeps the inner maximizer exact wherever
        // the nonnegativity clamp binds, so the envelope gradient equals the
        // total derivative almost everywhere.
        let (mdp, expert) = two_state();
        let problem = Problem::Exact {
            mdp: &mdp,
            expert: &expert,
        };
        let atoms = Atoms::exact(&mdp, &expert).unwrap();
        let gen = make_generator("chi2").unwrap();
        for steps in [1usize, 250, 500] {
            let config = SolverConfig {
                rho: 0.1,
                steps,
                generator_name: "chi2".into(),
                ..Default::default()
            };
            let outcome = train_bedroil(&problem, &config).unwrap();
            let dual = outcome.dual;
            let policy = outcome.policy.materialize();
            let cfg = config.objective_config();
            let base = dual_objective(&dual, &policy, Some(&expert), &atoms, &gen, &cfg).unwrap();
            let h = 1e-5;
            for s in 0..2 {
                for a in 0..2 {
                    let mut plus = dual.clone();
                    plus.q_table[s][a] += h;
                    let mut minus = dual.clone();
                    minus.q_table[s][a] -= h;
                    let vp = dual_objective(&plus, &policy, Some(&expert), &atoms, &gen, &cfg)
                        .unwrap()
                        .value;
                    let vm = dual_objective(&minus, &policy, Some(&expert), &atoms, &gen, &cfg)
                        .unwrap()
                        .value;
                    let fd = (vp - vm) / (2.0 * h);
                    let g = base.grad_q[s][a];
                    let denom = fd.abs().max(g.abs()).max(1e-6);
                    assert!(
                        (fd - g).abs() / denom < 1e-4,
                        "steps {steps} Q[{s}][{a}]: fd {fd} analytic {g}"
                    );
                }
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let cp = Checkpoint {
            logits: vec![vec![0.1, -0.2]],
            q_table: vec![vec![0.3, 0.4]],
            tau: 0.7,
            config: SolverConfig::default(),
            iteration: 12,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cp.json");
        cp.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.iteration, 12);
        assert_eq!(loaded.logits, cp.logits);
        assert_eq!(loaded.tau, cp.tau);
    }

    #[test]
    fn effective_initial_states_requires_transitions() {
        let ds = Dataset::new(vec![]);
        assert!(matches!(
            effective_initial_states(&ds, 2),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = SolverConfig {
            lr_dual: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            rho: -0.1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            update_ratio: (0, 1),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
