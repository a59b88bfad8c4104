//! Gridworld construction, structured dynamics perturbations (slip and wind
//! sweeps plus random TV-ball kernels), and policy evaluation under shifted
//! kernels. The evaluation reward (1 at the goal) exists only for return
//! reporting; no learner ever sees it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::tv_distance;
use crate::mdp::{
    sample_trajectory, state_occupancy, HorizonMode, StochasticPolicy, TabularMdp,
};
use crate::oracle::sample_kernel_in_ball;
use crate::robust::exact_kl_loss;
use crate::{Error, Result};

pub const NUM_ACTIONS: usize = 4;
const UP: usize = 0;
const DOWN: usize = 1;
const LEFT: usize = 2;
const RIGHT: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridworldSpec {
    pub width: usize,
    pub height: usize,
    /// Blocked cells as (row, col).
    pub walls: Vec<(usize, usize)>,
    pub goal: (usize, usize),
    /// Probability the chosen action's motion is replaced by a uniformly
    /// random direction.
    pub slip_prob: f64,
    /// Per-column probability of being pushed one cell to the right.
    pub wind: Vec<f64>,
    pub discount: f64,
}

impl Default for GridworldSpec {
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
            walls: Vec::new(),
            goal: (4, 4),
            slip_prob: 0.0,
            wind: vec![0.0; 5],
            discount: 0.9,
        }
    }
}

impl GridworldSpec {
    pub fn num_states(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    fn is_wall(&self, row: usize, col: usize) -> bool {
        self.walls.contains(&(row, col))
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidGridworld("zero-sized grid".into()));
        }
        if self.goal.0 >= self.height || self.goal.1 >= self.width {
            return Err(Error::InvalidGridworld(format!(
                "goal {:?} outside a {}x{} grid",
                self.goal, self.height, self.width
            )));
        }
        if self.is_wall(self.goal.0, self.goal.1) {
            return Err(Error::InvalidGridworld("goal cell is a wall".into()));
        }
        if self.wind.len() != self.width {
            return Err(Error::InvalidGridworld(format!(
                "wind has {} entries for width {}",
                self.wind.len(),
                self.width
            )));
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            return Err(Error::InvalidGridworld(format!(
                "slip_prob {} outside [0, 1)",
                self.slip_prob
            )));
        }
        let max_wind = self.wind.iter().cloned().fold(0.0, f64::max);
        if self.slip_prob + max_wind > 1.0 {
            return Err(Error::InvalidGridworld(format!(
                "slip_prob {} + max wind {max_wind} exceeds 1",
                self.slip_prob
            )));
        }
        if self.wind.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidGridworld("negative wind entry".into()));
        }
        Ok(())
    }

    /// Destination of a unit move, staying put at edges and walls.
    fn step(&self, row: usize, col: usize, action: usize) -> (usize, usize) {
        let (r, c) = match action {
            UP => (row.wrapping_sub(1), col),
            DOWN => (row + 1, col),
            LEFT => (row, col.wrapping_sub(1)),
            RIGHT => (row, col + 1),
            _ => (row, col),
        };
        if r >= self.height || c >= self.width || self.is_wall(r, c) {
            (row, col)
        } else {
            (r, c)
        }
    }
}

/// Builds the tabular MDP plus the evaluation-only reward table (1 at the
/// goal). The goal is absorbing; walls self-loop and carry no initial mass.
pub fn build_gridworld(spec: &GridworldSpec) -> Result<(TabularMdp, Vec<f64>)> {
    spec.validate()?;
    let n = spec.num_states();
    let goal = spec.index(spec.goal.0, spec.goal.1);
    let mut kernel = vec![vec![vec![0.0; n]; NUM_ACTIONS]; n];
    for row in 0..spec.height {
        for col in 0..spec.width {
            let s = spec.index(row, col);
            for a in 0..NUM_ACTIONS {
                let dist = &mut kernel[s][a][..];
                if s == goal || spec.is_wall(row, col) {
                    dist[s] = 1.0;
                    continue;
                }
                let wind = spec.wind[col];
                let main = 1.0 - spec.slip_prob - wind;
                let (r, c) = spec.step(row, col, a);
                dist[spec.index(r, c)] += main;
                for d in 0..NUM_ACTIONS {
                    let (r, c) = spec.step(row, col, d);
                    dist[spec.index(r, c)] += spec.slip_prob / NUM_ACTIONS as f64;
                }
                let (r, c) = spec.step(row, col, RIGHT);
                dist[spec.index(r, c)] += wind;
            }
        }
    }
    let free: Vec<usize> = (0..spec.height)
        .flat_map(|r| (0..spec.width).map(move |c| (r, c)))
        .filter(|&(r, c)| !spec.is_wall(r, c) && spec.index(r, c) != goal)
        .map(|(r, c)| spec.index(r, c))
        .collect();
    if free.is_empty() {
        return Err(Error::InvalidGridworld("no free non-goal cells".into()));
    }
    let mut initial = vec![0.0; n];
    for &s in &free {
        initial[s] = 1.0 / free.len() as f64;
    }

    // Reachability warning: BFS over all-action adjacency from initial cells.
    let mut seen = vec![false; n];
    let mut queue: Vec<usize> = free.clone();
    for &s in &free {
        seen[s] = true;
    }
    while let Some(s) = queue.pop() {
        for a in 0..NUM_ACTIONS {
            for (s2, &p) in kernel[s][a].iter().enumerate() {
                if p > 0.0 && !seen[s2] {
                    seen[s2] = true;
                    queue.push(s2);
                }
            }
        }
    }
    if !seen[goal] {
        eprintln!("warning: goal cell {:?} is unreachable", spec.goal);
    }

    let mut reward = vec![0.0; n];
    reward[goal] = 1.0;
    let mdp = TabularMdp::new(kernel, initial, spec.discount)?;
    Ok((mdp, reward))
}

/// Optimal state values by value iteration on the evaluation reward.
pub fn optimal_values(mdp: &TabularMdp, reward: &[f64]) -> Result<Vec<f64>> {
    let mut values = vec![0.0f64; mdp.num_states];
    let cap = 10_000usize;
    let tol = 1e-10;
    for sweep in 0..cap {
        let mut next = vec![0.0f64; mdp.num_states];
        let mut residual = 0.0f64;
        for s in 0..mdp.num_states {
            let best = (0..mdp.num_actions)
                .map(|a| {
                    reward[s]
                        + mdp.discount
                            * mdp.kernel[s][a]
                                .iter()
                                .zip(&values)
                                .map(|(&p, &v)| p * v)
                                .sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            residual = residual.max((best - values[s]).abs());
            next[s] = best;
        }
        values = next;
        if residual < tol {
            return Ok(values);
        }
        if sweep == cap - 1 {
            return Err(Error::ValueIterationDiverged {
                sweeps: cap,
                residual,
            });
        }
    }
    Ok(values)
}

/// A near-optimal stochastic expert: softmax over optimal Q-values with the
/// given temperature (default 0.1).
pub fn make_expert(
    mdp: &TabularMdp,
    reward: &[f64],
    temperature: f64,
) -> Result<StochasticPolicy> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "expert temperature must be > 0, got {temperature}"
        )));
    }
    let values = optimal_values(mdp, reward)?;
    let mut probs = vec![vec![0.0; mdp.num_actions]; mdp.num_states];
    for s in 0..mdp.num_states {
        let q: Vec<f64> = (0..mdp.num_actions)
            .map(|a| {
                reward[s]
                    + mdp.discount
                        * mdp.kernel[s][a]
                            .iter()
                            .zip(&values)
                            .map(|(&p, &v)| p * v)
                            .sum::<f64>()
            })
            .collect();
        let max_q = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = q.iter().map(|&v| ((v - max_q) / temperature).exp()).collect();
        let total: f64 = exps.iter().sum();
        for a in 0..mdp.num_actions {
            probs[s][a] = exps[a] / total;
        }
    }
    StochasticPolicy::new(probs)
}

/// Exact expected discounted return `E[sum_t gamma^t r(s_t)]` via the state
/// occupancy: `E_d[r] / (1 - gamma)`.
pub fn exact_return(mdp: &TabularMdp, policy: &StochasticPolicy, reward: &[f64]) -> Result<f64> {
    let d = state_occupancy(mdp, policy)?;
    Ok(d.iter().zip(reward).map(|(&m, &r)| m * r).sum::<f64>() / (1.0 - mdp.discount))
}

/// Monte Carlo discounted return over seeded truncated rollouts; returns
/// (mean, standard deviation of the per-rollout returns).
pub fn monte_carlo_return(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    reward: &[f64],
    num_rollouts: usize,
    seed: u64,
) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Truncate where the discounted tail is below 1e-8 of max reward.
    let horizon = ((1e-8f64).ln() / mdp.discount.ln()).ceil() as usize;
    let mut returns = Vec::with_capacity(num_rollouts);
    for _ in 0..num_rollouts {
        let traj = sample_trajectory(mdp, policy, &mut rng, HorizonMode::Fixed(horizon));
        let mut acc = 0.0;
        let mut discount = 1.0;
        for &s in traj.states.iter().take(horizon) {
            acc += discount * reward[s];
            discount *= mdp.discount;
        }
        returns.push(acc);
    }
    let mean = returns.iter().sum::<f64>() / num_rollouts as f64;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
        / (num_rollouts.saturating_sub(1)).max(1) as f64;
    (mean, var.sqrt())
}

/// Exact imitation loss `E_{d^{pi_D}_T(s)}[KL(pi_D(.|s) || pi(.|s))]` under
/// the given (possibly shifted) kernel.
pub fn exact_imitation_loss(
    mdp: &TabularMdp,
    expert: &StochasticPolicy,
    policy: &StochasticPolicy,
) -> Result<f64> {
    let d = state_occupancy(mdp, expert)?;
    Ok((0..mdp.num_states)
        .map(|s| d[s] * exact_kl_loss(&expert.probs[s], &policy.probs[s]))
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    SlipProb,
    WindScale,
    KernelTvRandom,
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::SlipProb => "slip_prob",
            SweepParameter::WindScale => "wind_scale",
            SweepParameter::KernelTvRandom => "kernel_tv_random",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSweep {
    pub parameter: SweepParameter,
    /// Sweep values, ascending.
    pub values: Vec<f64>,
    /// Sampled kernels per value (only > 1 for random TV kernels).
    pub samples_per_value: usize,
    pub seed: u64,
}

impl PerturbationSweep {
    pub fn validate(&self) -> Result<()> {
        if self.values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig("sweep values must be ascending".into()));
        }
        if self.samples_per_value == 0 {
            return Err(Error::InvalidConfig("samples_per_value must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftRecord {
    pub param: String,
    pub value: f64,
    pub sample_index: usize,
    pub exact_return: f64,
    pub mc_return_mean: f64,
    pub mc_return_std: f64,
    pub exact_imitation_loss: f64,
    /// Measured max per-(s,a) TV distance of the shifted kernel to nominal.
    pub kernel_tv_radius: f64,
}

fn max_row_tv(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>]) -> f64 {
    let mut out: f64 = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        for (da, db) in ra.iter().zip(rb) {
            out = out.max(tv_distance(da, db));
        }
    }
    out
}

/// Evaluates the policy under every kernel in the sweep: exact discounted
/// return, exact imitation loss against the expert, and Monte Carlo return
/// over 100 seeded rollouts. Sweep points that fail to build are skipped
/// with a reason on stderr.
pub fn evaluate_under_shift(
    policy: &StochasticPolicy,
    nominal_spec: &GridworldSpec,
    sweep: &PerturbationSweep,
    expert: &StochasticPolicy,
) -> Result<Vec<ShiftRecord>> {
    nominal_spec.validate()?;
    sweep.validate()?;
    let (nominal_mdp, reward) = build_gridworld(nominal_spec)?;
    let mut records = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(sweep.seed);
    for (vi, &value) in sweep.values.iter().enumerate() {
        let kernels: Vec<Vec<Vec<Vec<f64>>>> = match sweep.parameter {
            SweepParameter::SlipProb => {
                let shifted = GridworldSpec {
                    slip_prob: value,
                    ..nominal_spec.clone()
                };
                match build_gridworld(&shifted) {
                    Ok((mdp, _)) => vec![mdp.kernel],
                    Err(e) => {
                        eprintln!("skipping slip_prob = {value}: {e}");
                        continue;
                    }
                }
            }
            SweepParameter::WindScale => {
                let shifted = GridworldSpec {
                    wind: nominal_spec.wind.iter().map(|w| w * value).collect(),
                    ..nominal_spec.clone()
                };
                match build_gridworld(&shifted) {
                    Ok((mdp, _)) => vec![mdp.kernel],
                    Err(e) => {
                        eprintln!("skipping wind_scale = {value}: {e}");
                        continue;
                    }
                }
            }
            SweepParameter::KernelTvRandom => (0..sweep.samples_per_value)
                .map(|_| sample_kernel_in_ball(&nominal_mdp, value, &mut rng))
                .collect(),
        };
        for (sample_index, kernel) in kernels.into_iter().enumerate() {
            let radius = max_row_tv(&kernel, &nominal_mdp.kernel);
            let mdp = match nominal_mdp.with_kernel(kernel) {
                Ok(mdp) => mdp,
                Err(e) => {
                    eprintln!("skipping {} = {value} sample {sample_index}: {e}", sweep.parameter.name());
                    continue;
                }
            };
            let exact = exact_return(&mdp, policy, &reward)?;
            let mc_seed = sweep
                .seed
                .wrapping_add(1 + (vi * sweep.samples_per_value + sample_index) as u64);
            let (mc_mean, mc_std) = monte_carlo_return(&mdp, policy, &reward, 100, mc_seed);
            records.push(ShiftRecord {
                param: sweep.parameter.name().to_string(),
                value,
                sample_index,
                exact_return: exact,
                mc_return_mean: mc_mean,
                mc_return_std: mc_std,
                exact_imitation_loss: exact_imitation_loss(&mdp, expert, policy)?,
                kernel_tv_radius: radius,
            });
        }
    }
    Ok(records)
}

/// Empirical worst-case imitation loss over `num_kernels` sampled kernels in
/// the per-`(s,a)` TV ball (the nominal kernel is candidate 0).
pub fn worst_case_over_ball(
    policy: &StochasticPolicy,
    mdp: &TabularMdp,
    expert: &StochasticPolicy,
    rho_prime: f64,
    num_kernels: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, f64)> {
    let mut worst = (0usize, exact_imitation_loss(mdp, expert, policy)?);
    if rho_prime == 0.0 {
        return Ok(worst);
    }
    for id in 1..=num_kernels {
        let kernel = sample_kernel_in_ball(mdp, rho_prime, rng);
        let shifted = mdp.with_kernel(kernel)?;
        let loss = exact_imitation_loss(&shifted, expert, policy)?;
        if loss > worst.1 {
            worst = (id, loss);
        }
    }
    Ok(worst)
}

/// Worst-case losses across ascending radii with nested candidate sets: the
/// running maximum accumulates, so every earlier (smaller-ball) candidate
/// also counts at larger radii and the curve is non-decreasing by
/// construction.
pub fn worst_case_sweep(
    policy: &StochasticPolicy,
    mdp: &TabularMdp,
    expert: &StochasticPolicy,
    radii: &[f64],
    num_kernels: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if radii.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig("radii must be ascending".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut running = f64::NEG_INFINITY;
    let mut out = Vec::with_capacity(radii.len());
    for &radius in radii {
        let (_, loss) = worst_case_over_ball(policy, mdp, expert, radius, num_kernels, &mut rng)?;
        running = running.max(loss);
        out.push((radius, running));
    }
    Ok(out)
}
