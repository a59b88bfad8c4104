//! Tabular MDP representation, policies, exact occupancy computation, and
//! trajectory sampling under the nominal kernel.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const PROB_TOL: f64 = 1e-9;
/// Floating-point solves may produce occupancy entries slightly below zero;
/// anything within this floor is clamped, anything below it is an error.
const CLAMP_FLOOR: f64 = 1e-12;

/// A finite MDP with a row-stochastic transition kernel. Reward-free: the
/// imitation setting never exposes rewards to learners.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// Indexed `kernel[s][a][s_next]`.
    pub kernel: Vec<Vec<Vec<f64>>>,
    pub initial_dist: Vec<f64>,
    pub discount: f64,
}

impl TabularMdp {
    pub fn new(
        kernel: Vec<Vec<Vec<f64>>>,
        initial_dist: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        let num_states = kernel.len();
        let num_actions = kernel.first().map_or(0, |row| row.len());
        let mdp = Self {
            num_states,
            num_actions,
            kernel,
            initial_dist,
            discount,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Checks every structural invariant, reporting the first violation with
    /// its indices and the offending sum.
    pub fn validate(&self) -> Result<()> {
        if self.num_states == 0 || self.num_actions == 0 {
            return Err(Error::InvalidMdp(
                "num_states and num_actions must be positive".into(),
            ));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::InvalidMdp(format!(
                "discount out of range: {} (must lie in (0,1))",
                self.discount
            )));
        }
        if self.kernel.len() != self.num_states {
            return Err(Error::InvalidMdp(format!(
                "kernel has {} state rows, expected {}",
                self.kernel.len(),
                self.num_states
            )));
        }
        for (s, per_action) in self.kernel.iter().enumerate() {
            if per_action.len() != self.num_actions {
                return Err(Error::InvalidMdp(format!(
                    "kernel[{s}] has {} action rows, expected {}",
                    per_action.len(),
                    self.num_actions
                )));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != self.num_states {
                    return Err(Error::InvalidMdp(format!(
                        "kernel[{s}][{a}] has {} entries, expected {}",
                        row.len(),
                        self.num_states
                    )));
                }
                if let Some((s2, &p)) = row.iter().enumerate().find(|(_, &p)| p < 0.0) {
                    return Err(Error::InvalidMdp(format!(
                        "kernel[{s}][{a}][{s2}] = {p} is negative"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROB_TOL {
                    return Err(Error::InvalidMdp(format!(
                        "kernel row (s={s}, a={a}) sums to {sum}, expected 1"
                    )));
                }
            }
        }
        if self.initial_dist.len() != self.num_states {
            return Err(Error::InvalidMdp(format!(
                "initial_dist has {} entries, expected {}",
                self.initial_dist.len(),
                self.num_states
            )));
        }
        if let Some((s, &p)) = self.initial_dist.iter().enumerate().find(|(_, &p)| p < 0.0) {
            return Err(Error::InvalidMdp(format!("initial_dist[{s}] = {p} is negative")));
        }
        let sum: f64 = self.initial_dist.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidMdp(format!(
                "initial_dist sums to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// Returns a copy with a different transition kernel, revalidated.
    pub fn with_kernel(&self, kernel: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        Self::new(kernel, self.initial_dist.clone(), self.discount)
    }
}

/// A row-stochastic policy matrix, indexed `probs[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticPolicy {
    pub probs: Vec<Vec<f64>>,
}

impl StochasticPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        let policy = Self { probs };
        policy.validate()?;
        Ok(policy)
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Self {
            probs: vec![vec![p; num_actions]; num_states],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (s, row) in self.probs.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::InvalidPolicy(format!("state {s} has no actions")));
            }
            if let Some((a, &p)) = row.iter().enumerate().find(|(_, &p)| p < 0.0) {
                return Err(Error::InvalidPolicy(format!("probs[{s}][{a}] = {p} is negative")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidPolicy(format!(
                    "policy row {s} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.first().map_or(0, |row| row.len())
    }

    /// Max-norm total variation between two policies over states:
    /// `max_s TV(self(.|s), other(.|s))`.
    pub fn max_state_tv(&self, other: &StochasticPolicy) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| {
                0.5 * p
                    .iter()
                    .zip(q)
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// Unconstrained logits; materialized through a row-wise softmax before any
/// occupancy computation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    pub logits: Vec<Vec<f64>>,
}

impl SoftmaxPolicy {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            logits: vec![vec![0.0; num_actions]; num_states],
        }
    }

    pub fn materialize(&self) -> StochasticPolicy {
        let probs = self
            .logits
            .iter()
            .map(|row| {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&l| (l - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                exps.into_iter().map(|e| e / sum).collect()
            })
            .collect();
        StochasticPolicy { probs }
    }
}

/// Nonnegative measure over `(s, a, s')` triplets summing to one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TripletOccupancy {
    /// Indexed `mass[s][a][s_next]`.
    pub mass: Vec<Vec<Vec<f64>>>,
}

impl TripletOccupancy {
    pub fn num_states(&self) -> usize {
        self.mass.len()
    }

    pub fn num_actions(&self) -> usize {
        self.mass.first().map_or(0, |row| row.len())
    }

    pub fn total(&self) -> f64 {
        self.mass
            .iter()
            .flat_map(|sa| sa.iter().flat_map(|row| row.iter()))
            .sum()
    }

    /// The `(s, a)` marginal obtained by summing over next states.
    pub fn state_action_marginal(&self) -> Vec<Vec<f64>> {
        self.mass
            .iter()
            .map(|sa| sa.iter().map(|row| row.iter().sum()).collect())
            .collect()
    }

    /// The state marginal obtained by summing over actions and next states.
    pub fn state_marginal(&self) -> Vec<f64> {
        self.mass
            .iter()
            .map(|sa| sa.iter().flat_map(|row| row.iter()).sum())
            .collect()
    }

    /// Mass flowing *into* each state: `sum_{s,a} mass[s][a][s_next]`.
    pub fn inflow(&self) -> Vec<f64> {
        let n = self.num_states();
        let mut inflow = vec![0.0; n];
        for sa in &self.mass {
            for row in sa {
                for (s_next, &m) in row.iter().enumerate() {
                    inflow[s_next] += m;
                }
            }
        }
        inflow
    }

    /// Total variation distance to another triplet measure.
    pub fn tv_distance(&self, other: &TripletOccupancy) -> f64 {
        let mut acc = 0.0;
        for (sa, ob) in self.mass.iter().zip(&other.mass) {
            for (row, orow) in sa.iter().zip(ob) {
                for (m, o) in row.iter().zip(orow) {
                    acc += (m - o).abs();
                }
            }
        }
        0.5 * acc
    }
}

/// Exact discounted state occupancy: the unique solution of
/// `d = (1 - gamma) mu + gamma P_pi^T d`, solved densely.
pub fn state_occupancy(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<Vec<f64>> {
    mdp.validate()?;
    policy.validate()?;
    check_shapes(mdp, policy)?;
    let n = mdp.num_states;
    let gamma = mdp.discount;

    // System matrix M = I - gamma * P_pi^T with P_pi(s, s~) = sum_a pi(a|s) T(s~|s,a).
    let mut m = DMatrix::<f64>::identity(n, n);
    for s in 0..n {
        for a in 0..mdp.num_actions {
            let pi = policy.probs[s][a];
            if pi == 0.0 {
                continue;
            }
            for s_next in 0..n {
                m[(s_next, s)] -= gamma * pi * mdp.kernel[s][a][s_next];
            }
        }
    }
    let rhs = DVector::from_iterator(n, mdp.initial_dist.iter().map(|&p| (1.0 - gamma) * p));
    let solution = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::LinearSolve("occupancy system is singular".into()))?;

    let mut d: Vec<f64> = solution.iter().cloned().collect();
    for (s, v) in d.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < -CLAMP_FLOOR {
                return Err(Error::NegativeOccupancy {
                    s,
                    a: 0,
                    s_next: 0,
                    value: *v,
                });
            }
            *v = 0.0;
        }
    }
    let total: f64 = d.iter().sum();
    for v in d.iter_mut() {
        *v /= total;
    }
    Ok(d)
}

/// Exact discounted triplet occupancy via the factorization
/// `d(s,a,s') = d(s) pi(a|s) T(s'|s,a)`.
pub fn triplet_occupancy(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<TripletOccupancy> {
    let d = state_occupancy(mdp, policy)?;
    let mass = (0..mdp.num_states)
        .map(|s| {
            (0..mdp.num_actions)
                .map(|a| {
                    (0..mdp.num_states)
                        .map(|s_next| d[s] * policy.probs[s][a] * mdp.kernel[s][a][s_next])
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(TripletOccupancy { mass })
}

/// Max-norm residual of the Bellman flow conservation constraint:
/// `max_{s,a} | sum_{s'} d(s,a,s') - (1-gamma) mu(s) pi(a|s)
///             - gamma pi(a|s) sum_{s~,a~} d(s~,a~,s) |`.
///
/// The constraint is kernel-free: it vanishes exactly when `occ` is the
/// stationary occupancy of `policy` under *some* transition kernel.
pub fn balance_residual(
    occ: &TripletOccupancy,
    policy: &StochasticPolicy,
    initial_dist: &[f64],
    discount: f64,
) -> f64 {
    let inflow = occ.inflow();
    let sa = occ.state_action_marginal();
    let mut worst: f64 = 0.0;
    for (s, row) in sa.iter().enumerate() {
        for (a, &outflow) in row.iter().enumerate() {
            let pi = policy.probs[s][a];
            let target = (1.0 - discount) * initial_dist[s] * pi + discount * pi * inflow[s];
            worst = worst.max((outflow - target).abs());
        }
    }
    worst
}

/// How a sampled trajectory terminates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HorizonMode {
    /// Exactly `0` steps of slack: the trajectory has the given number of
    /// actions and one extra terminal state.
    Fixed(usize),
    /// Continue with probability `gamma` after each step; the resulting
    /// state-visit frequencies match the discounted occupancy definition.
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

pub fn sample_trajectory<R: Rng>(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    rng: &mut R,
    horizon_mode: HorizonMode,
) -> Trajectory {
    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut s = sample_index(&mdp.initial_dist, rng);
    states.push(s);
    let mut t = 0;
    loop {
        match horizon_mode {
            HorizonMode::Fixed(h) => {
                if t >= h {
                    break;
                }
            }
            HorizonMode::Geometric => {
                if t > 0 && rng.gen::<f64>() >= mdp.discount {
                    break;
                }
            }
        }
        let a = sample_index(&policy.probs[s], rng);
        let s_next = sample_index(&mdp.kernel[s][a], rng);
        actions.push(a);
        states.push(s_next);
        s = s_next;
        t += 1;
    }
    Trajectory { states, actions }
}

pub(crate) fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn check_shapes(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<()> {
    if policy.num_states() != mdp.num_states || policy.num_actions() != mdp.num_actions {
        return Err(Error::DimensionMismatch(format!(
            "policy is {}x{}, MDP is {}x{}",
            policy.num_states(),
            policy.num_actions(),
            mdp.num_states,
            mdp.num_actions
        )));
    }
    Ok(())
}

/// Draws a random MDP with dense strictly-positive rows. Test and oracle
/// helper; rows are Dirichlet-like (normalized exponentials).
pub fn random_mdp<R: Rng>(
    num_states: usize,
    num_actions: usize,
    discount: f64,
    rng: &mut R,
) -> TabularMdp {
    let kernel = (0..num_states)
        .map(|_| (0..num_actions).map(|_| random_dist(num_states, rng)).collect())
        .collect();
    let initial_dist = random_dist(num_states, rng);
    TabularMdp::new(kernel, initial_dist, discount).expect("randomly generated MDP is valid")
}

/// Draws a random row-stochastic policy.
pub fn random_policy<R: Rng>(num_states: usize, num_actions: usize, rng: &mut R) -> StochasticPolicy {
    StochasticPolicy {
        probs: (0..num_states).map(|_| random_dist(num_actions, rng)).collect(),
    }
}

pub(crate) fn random_dist<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n).map(|_| -(rng.gen::<f64>().max(1e-12)).ln()).collect();
    let sum: f64 = row.iter().sum();
    for v in row.iter_mut() {
        *v /= sum;
    }
    row
}
