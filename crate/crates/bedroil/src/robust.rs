//! The robust scoring machinery: imitation loss, the advantage-like score
//! `e(s,a,s') = L(s) + gamma E_{a'~pi_D}[Q(s',a')] - Q(s,a)`, the closed-form
//! adversarial importance weight, and the two alternating objectives
//! (dual minimization over `(Q, tau)` and weighted policy minimization).
//!
//! Gradients treat the inner-max weight as a constant (envelope theorem on
//! the inner maximization), so no differentiation through the inverse
//! derivative is ever needed.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::divergence::FGenerator;
use crate::mdp::{triplet_occupancy, StochasticPolicy, TabularMdp};
use crate::{Error, Result};

/// Floor applied to `tau` by the solver; below it the `tau = 0` saturation
/// branch of the closed-form weight is emulated.
pub const DEFAULT_TAU_MIN: f64 = 1e-4;

/// Probability floor for log terms in sampled negative log-likelihood.
const LOG_FLOOR: f64 = 1e-12;

/// Lagrange multipliers of the dual problem: a Q-table over `(s, a)` and a
/// scalar `tau >= tau_min` for the divergence constraint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualState {
    pub q_table: Vec<Vec<f64>>,
    pub tau: f64,
}

impl DualState {
    pub fn zeros(num_states: usize, num_actions: usize, tau: f64) -> Self {
        Self {
            q_table: vec![vec![0.0; num_actions]; num_states],
            tau,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tau.is_finite()
            && self
                .q_table
                .iter()
                .all(|row| row.iter().all(|v| v.is_finite()))
    }
}

/// How the per-state imitation loss is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// `KL(pi_D(.|s) || pi(.|s))`; requires a known expert policy.
    ExactKl,
    /// `-log pi(a_D|s)` at the logged expert action; an unbiased estimator of
    /// the cross-entropy, which exceeds the exact KL by the expert entropy.
    SampleNll,
}

/// Which coefficient multiplies `f(w*)` in the dual objective. `Tau` is the
/// Lagrangian coefficient that makes the objective a valid upper bound and is
/// the default; `Rho` swaps in the ball radius, giving a fixed-penalty
/// variant useful for side-by-side comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceCoefficient {
    #[default]
    Tau,
    Rho,
}

/// How `E_{a'~pi_D(.|s')}[Q(s',a')]` is estimated for one transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextExpect {
    /// Exact expectation under the known expert policy.
    Expert,
    /// Single-sample estimate using the logged next action.
    Logged(usize),
    /// Terminal transition with no successor action and no expert policy;
    /// the expectation is taken as zero and the sample flagged.
    Zero,
}

/// One weighted transition sample `(s, a, s')`.
#[derive(Debug, Clone, Copy)]
pub struct TransitionAtom {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub weight: f64,
    pub next: NextExpect,
}

/// One weighted initial-state sample `(s, a)` for the `(1-gamma) E[Q]` term.
#[derive(Debug, Clone, Copy)]
pub struct InitAtom {
    pub s: usize,
    pub a: usize,
    pub weight: f64,
}

/// The empirical measure both objectives are evaluated against: exact mode
/// uses the nominal triplet occupancy and the true initial distribution,
/// sample mode uses dataset transitions and effective initial states.
#[derive(Debug, Clone)]
pub struct Atoms {
    pub init: Vec<InitAtom>,
    pub transitions: Vec<TransitionAtom>,
    pub discount: f64,
    pub num_states: usize,
    pub num_actions: usize,
}

impl Atoms {
    /// Exact expectations against `d^{pi_D}_{T^o}` and the true `mu`.
    pub fn exact(mdp: &TabularMdp, expert: &StochasticPolicy) -> Result<Self> {
        let occ = triplet_occupancy(mdp, expert)?;
        let mut init = Vec::new();
        for s in 0..mdp.num_states {
            for a in 0..mdp.num_actions {
                let w = mdp.initial_dist[s] * expert.probs[s][a];
                if w > 0.0 {
                    init.push(InitAtom { s, a, weight: w });
                }
            }
        }
        let mut transitions = Vec::new();
        for s in 0..mdp.num_states {
            for a in 0..mdp.num_actions {
                for s_next in 0..mdp.num_states {
                    let w = occ.mass[s][a][s_next];
                    if w > 0.0 {
                        transitions.push(TransitionAtom {
                            s,
                            a,
                            s_next,
                            weight: w,
                            next: NextExpect::Expert,
                        });
                    }
                }
            }
        }
        Ok(Self {
            init,
            transitions,
            discount: mdp.discount,
            num_states: mdp.num_states,
            num_actions: mdp.num_actions,
        })
    }

    /// Empirical expectations from a dataset. Every visited decision state
    /// acts as an effective initial state. Returns the number of terminal
    /// transitions whose next-action expectation had to be taken as zero.
    pub fn from_dataset(
        dataset: &Dataset,
        num_states: usize,
        num_actions: usize,
        discount: f64,
        expert_known: bool,
    ) -> Result<(Self, usize)> {
        let transitions_raw = dataset.transitions();
        if transitions_raw.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = transitions_raw.len() as f64;
        let mut flagged = 0usize;
        let mut transitions = Vec::with_capacity(transitions_raw.len());
        let mut init = Vec::with_capacity(transitions_raw.len());
        for tr in &transitions_raw {
            let next = match (tr.next_action, expert_known) {
                (Some(a), _) => NextExpect::Logged(a),
                (None, true) => NextExpect::Expert,
                (None, false) => {
                    flagged += 1;
                    NextExpect::Zero
                }
            };
            transitions.push(TransitionAtom {
                s: tr.s,
                a: tr.a,
                s_next: tr.s_next,
                weight: 1.0 / n,
                next,
            });
            init.push(InitAtom {
                s: tr.s,
                a: tr.a,
                weight: 1.0 / n,
            });
        }
        Ok((
            Self {
                init,
                transitions,
                discount,
                num_states,
                num_actions,
            },
            flagged,
        ))
    }

    /// A minibatch view selecting the given transition indices (the same
    /// transitions double as effective initial-state samples).
    pub fn minibatch(&self, indices: &[usize]) -> Self {
        let w = 1.0 / indices.len() as f64;
        let transitions = indices
            .iter()
            .map(|&i| {
                let mut atom = self.transitions[i];
                atom.weight = w;
                atom
            })
            .collect();
        let init = indices
            .iter()
            .map(|&i| InitAtom {
                s: self.transitions[i].s,
                a: self.transitions[i].a,
                weight: w,
            })
            .collect();
        Self {
            init,
            transitions,
            discount: self.discount,
            num_states: self.num_states,
            num_actions: self.num_actions,
        }
    }
}

/// `KL(pi_D(.|s) || pi(.|s))` for one state row.
pub fn exact_kl_loss(expert_row: &[f64], policy_row: &[f64]) -> f64 {
    expert_row
        .iter()
        .zip(policy_row)
        .filter(|(&pd, _)| pd > 0.0)
        .map(|(&pd, &p)| pd * (pd / p.max(LOG_FLOOR)).ln())
        .sum()
}

/// `-log pi(a_D|s)` with the probability floored at 1e-12.
pub fn sample_nll_loss(policy_row: &[f64], expert_action: usize) -> f64 {
    -policy_row[expert_action].max(LOG_FLOOR).ln()
}

/// Per-atom imitation loss under the configured mode. In `SampleNll` mode the
/// atom's own logged action plays the expert-action role.
fn atom_loss(
    mode: LossMode,
    policy: &StochasticPolicy,
    expert: Option<&StochasticPolicy>,
    s: usize,
    a: usize,
) -> Result<f64> {
    match mode {
        LossMode::ExactKl => {
            let expert = expert.ok_or_else(|| {
                Error::InvalidConfig("exact_kl loss mode requires a known expert policy".into())
            })?;
            Ok(exact_kl_loss(&expert.probs[s], &policy.probs[s]))
        }
        LossMode::SampleNll => Ok(sample_nll_loss(&policy.probs[s], a)),
    }
}

/// `E_{a'~pi_D(.|s')}[Q(s',a')]` under the configured estimator.
pub fn next_q_expectation(
    dual: &DualState,
    next: NextExpect,
    s_next: usize,
    expert: Option<&StochasticPolicy>,
) -> Result<f64> {
    match next {
        NextExpect::Expert => {
            let expert = expert.ok_or_else(|| {
                Error::InvalidConfig("exact next-action expectation requires the expert policy".into())
            })?;
            Ok(expert.probs[s_next]
                .iter()
                .zip(&dual.q_table[s_next])
                .map(|(&p, &q)| p * q)
                .sum())
        }
        NextExpect::Logged(a_next) => Ok(dual.q_table[s_next][a_next]),
        NextExpect::Zero => Ok(0.0),
    }
}

/// The advantage-like score `e(s,a,s') = L(s) + gamma E[Q(s',.)] - Q(s,a)`.
pub fn e_score(
    dual: &DualState,
    discount: f64,
    s: usize,
    a: usize,
    loss_value: f64,
    next_q: f64,
) -> f64 {
    loss_value + discount * next_q - dual.q_table[s][a]
}

/// Closed-form maximizer of `w -> -tau f(w) + w e` over `w >= 0`:
/// `max(0, (f')^{-1}(e / tau))`, with the generator's domain clamping and
/// saturation cap. For `tau < tau_min` the `tau = 0` branch is emulated:
/// the saturation weight if `e > 0`, else 0.
pub fn optimal_weight(gen: &FGenerator, e: f64, tau: f64, tau_min: f64) -> Result<f64> {
    if tau < tau_min {
        return if e > 0.0 {
            Ok(gen.saturation_weight)
        } else {
            Ok(0.0)
        };
    }
    Ok(gen.inverse_derivative(e / tau)?.max(0.0))
}

/// Shared knobs for the two objective evaluations.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveConfig {
    pub rho: f64,
    pub tau_min: f64,
    pub loss_mode: LossMode,
    pub divergence_coefficient: DivergenceCoefficient,
}

impl ObjectiveConfig {
    pub fn new(rho: f64, loss_mode: LossMode) -> Self {
        Self {
            rho,
            tau_min: DEFAULT_TAU_MIN,
            loss_mode,
            divergence_coefficient: DivergenceCoefficient::Tau,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DualEvaluation {
    pub value: f64,
    pub grad_q: Vec<Vec<f64>>,
    pub grad_tau: f64,
    pub mean_weight: f64,
    pub max_weight: f64,
}

/// The first-stage objective:
/// `(1-gamma) E[Q] + rho tau + E_{d^o}[-tau f(w*) + w* e]`,
/// with gradients w.r.t. the Q-table and tau (weights detached).
pub fn dual_objective(
    dual: &DualState,
    policy: &StochasticPolicy,
    expert: Option<&StochasticPolicy>,
    atoms: &Atoms,
    gen: &FGenerator,
    cfg: &ObjectiveConfig,
) -> Result<DualEvaluation> {
    if atoms.transitions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let gamma = atoms.discount;
    let mut value = cfg.rho * dual.tau;
    let mut grad_q = vec![vec![0.0; atoms.num_actions]; atoms.num_states];
    let mut grad_tau = cfg.rho;

    for atom in &atoms.init {
        value += (1.0 - gamma) * atom.weight * dual.q_table[atom.s][atom.a];
        grad_q[atom.s][atom.a] += (1.0 - gamma) * atom.weight;
    }

    let mut weight_sum = 0.0f64;
    let mut weight_mass = 0.0f64;
    let mut max_weight = 0.0f64;
    for atom in &atoms.transitions {
        let loss = atom_loss(cfg.loss_mode, policy, expert, atom.s, atom.a)?;
        let next_q = next_q_expectation(dual, atom.next, atom.s_next, expert)?;
        let e = e_score(dual, gamma, atom.s, atom.a, loss, next_q);
        let w = optimal_weight(gen, e, dual.tau, cfg.tau_min)?;
        let f_coeff = match cfg.divergence_coefficient {
            DivergenceCoefficient::Tau => dual.tau,
            DivergenceCoefficient::Rho => cfg.rho,
        };
        value += atom.weight * (-f_coeff * gen.eval(w) + w * e);

        // de/dQ(s,a) = -1; de/dQ(s',a') = gamma pi_D(a'|s') (or the logged
        // single-sample analogue). w is detached.
        grad_q[atom.s][atom.a] -= atom.weight * w;
        match atom.next {
            NextExpect::Expert => {
                let expert = expert.expect("checked by next_q_expectation");
                for (a_next, &p) in expert.probs[atom.s_next].iter().enumerate() {
                    grad_q[atom.s_next][a_next] += atom.weight * w * gamma * p;
                }
            }
            NextExpect::Logged(a_next) => {
                grad_q[atom.s_next][a_next] += atom.weight * w * gamma;
            }
            NextExpect::Zero => {}
        }
        if matches!(cfg.divergence_coefficient, DivergenceCoefficient::Tau) {
            grad_tau -= atom.weight * gen.eval(w);
        }

        weight_sum += atom.weight * w;
        weight_mass += atom.weight;
        max_weight = max_weight.max(w);
    }

    Ok(DualEvaluation {
        value,
        grad_q,
        grad_tau,
        mean_weight: weight_sum / weight_mass,
        max_weight,
    })
}

#[derive(Debug, Clone)]
pub struct PolicyEvaluation {
    pub value: f64,
    /// Gradient w.r.t. softmax logits, indexed `[s][a]`.
    pub grad_logits: Vec<Vec<f64>>,
    pub mean_weight: f64,
    pub max_weight: f64,
}

/// The second-stage objective `E_{d^o}[w* L_pi(s)]` with gradient w.r.t. the
/// policy logits, weights detached. `force_unit_weights` collapses it to the
/// plain behavioral-cloning loss.
pub fn weighted_policy_loss(
    policy: &StochasticPolicy,
    dual: &DualState,
    expert: Option<&StochasticPolicy>,
    atoms: &Atoms,
    gen: &FGenerator,
    cfg: &ObjectiveConfig,
    force_unit_weights: bool,
) -> Result<PolicyEvaluation> {
    if atoms.transitions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let gamma = atoms.discount;
    let mut value = 0.0f64;
    let mut grad_logits = vec![vec![0.0; atoms.num_actions]; atoms.num_states];
    let mut weight_sum = 0.0f64;
    let mut weight_mass = 0.0f64;
    let mut max_weight = 0.0f64;

    for atom in &atoms.transitions {
        let loss = atom_loss(cfg.loss_mode, policy, expert, atom.s, atom.a)?;
        let w = if force_unit_weights {
            1.0
        } else {
            let next_q = next_q_expectation(dual, atom.next, atom.s_next, expert)?;
            let e = e_score(dual, gamma, atom.s, atom.a, loss, next_q);
            optimal_weight(gen, e, dual.tau, cfg.tau_min)?
        };
        value += atom.weight * w * loss;

        // Softmax chain rule. ExactKl: dL/dlogit_b = pi(b|s) - pi_D(b|s).
        // SampleNll: pi(b|s) - 1[b = a].
        let scale = atom.weight * w;
        match cfg.loss_mode {
            LossMode::ExactKl => {
                let expert = expert.ok_or_else(|| {
                    Error::InvalidConfig("exact_kl loss mode requires a known expert policy".into())
                })?;
                for b in 0..atoms.num_actions {
                    grad_logits[atom.s][b] +=
                        scale * (policy.probs[atom.s][b] - expert.probs[atom.s][b]);
                }
            }
            LossMode::SampleNll => {
                for b in 0..atoms.num_actions {
                    let indicator = if b == atom.a { 1.0 } else { 0.0 };
                    grad_logits[atom.s][b] += scale * (policy.probs[atom.s][b] - indicator);
                }
            }
        }

        weight_sum += atom.weight * w;
        weight_mass += atom.weight;
        max_weight = max_weight.max(w);
    }

    Ok(PolicyEvaluation {
        value,
        grad_logits,
        mean_weight: weight_sum / weight_mass,
        max_weight,
    })
}
