//! Expert demonstration generation, serialization, and transition extraction.
//!
//! Trajectories serialize as JSON-lines, one record per trajectory:
//! `{"states":[...],"actions":[...]}` with `len(states) = len(actions) + 1`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{sample_trajectory, HorizonMode, StochasticPolicy, TabularMdp, Trajectory};
use crate::{Error, Result};

/// A single logged expert transition. `next_action` is the action logged at
/// the successor state within the same trajectory, absent for the final
/// transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub next_action: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryRecord {
    states: Vec<usize>,
    actions: Vec<usize>,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Self {
        Self { trajectories }
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// All `(s, a, s')` transitions in trajectory order.
    pub fn transitions(&self) -> Vec<Transition> {
        let mut out = Vec::new();
        for traj in &self.trajectories {
            for t in 0..traj.actions.len() {
                out.push(Transition {
                    s: traj.states[t],
                    a: traj.actions[t],
                    s_next: traj.states[t + 1],
                    next_action: traj.actions.get(t + 1).copied(),
                });
            }
        }
        out
    }

    /// Empirical distribution over all states visited at decision points.
    /// Every state within a trajectory counts as an effective initial state;
    /// empty trajectories are filtered out (their count is returned so the
    /// caller can warn).
    pub fn effective_initial_states(&self, num_states: usize) -> (Vec<f64>, usize) {
        let mut counts = vec![0.0f64; num_states];
        let mut total = 0.0f64;
        let mut empty = 0usize;
        for traj in &self.trajectories {
            if traj.actions.is_empty() {
                empty += 1;
                continue;
            }
            for t in 0..traj.actions.len() {
                counts[traj.states[t]] += 1.0;
                total += 1.0;
            }
        }
        if total > 0.0 {
            for c in counts.iter_mut() {
                *c /= total;
            }
        }
        (counts, empty)
    }

    /// Index bounds and shape invariants for every stored trajectory.
    pub fn validate(&self, num_states: usize, num_actions: usize) -> Result<()> {
        for (i, traj) in self.trajectories.iter().enumerate() {
            if traj.states.len() != traj.actions.len() + 1 {
                return Err(Error::MalformedRecord {
                    line: i + 1,
                    reason: format!(
                        "{} states but {} actions (expected one more state)",
                        traj.states.len(),
                        traj.actions.len()
                    ),
                });
            }
            if let Some(&s) = traj.states.iter().find(|&&s| s >= num_states) {
                return Err(Error::MalformedRecord {
                    line: i + 1,
                    reason: format!("state index {s} out of range (num_states = {num_states})"),
                });
            }
            if let Some(&a) = traj.actions.iter().find(|&&a| a >= num_actions) {
                return Err(Error::MalformedRecord {
                    line: i + 1,
                    reason: format!("action index {a} out of range (num_actions = {num_actions})"),
                });
            }
        }
        Ok(())
    }
}

/// Samples `num_trajectories` fixed-horizon expert trajectories.
pub fn generate_dataset(
    mdp: &TabularMdp,
    expert: &StochasticPolicy,
    num_trajectories: usize,
    horizon: usize,
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trajectories = (0..num_trajectories)
        .map(|_| sample_trajectory(mdp, expert, &mut rng, HorizonMode::Fixed(horizon)))
        .collect();
    Dataset::new(trajectories)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    for traj in &dataset.trajectories {
        let record = TrajectoryRecord {
            states: traj.states.clone(),
            actions: traj.actions.clone(),
        };
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Loads a JSON-lines dataset; malformed records error with their line
/// number. An empty file yields an empty dataset with a warning on stderr.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut trajectories = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        if record.states.len() != record.actions.len() + 1 {
            return Err(Error::MalformedRecord {
                line: idx + 1,
                reason: format!(
                    "{} states but {} actions (expected one more state)",
                    record.states.len(),
                    record.actions.len()
                ),
            });
        }
        trajectories.push(Trajectory {
            states: record.states,
            actions: record.actions,
        });
    }
    if trajectories.is_empty() {
        eprintln!("warning: dataset at {} is empty", path.display());
    }
    Ok(Dataset::new(trajectories))
}
