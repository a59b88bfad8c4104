//! Reference learners: behavioral cloning and the robustness-off ablation
//! (the full alternating solver with a zero-radius divergence ball).

use crate::mdp::SoftmaxPolicy;
use crate::solver::{train_bc, train_bedroil, Problem, SolverConfig, TrainingHistory};
use crate::{Error, Result};

pub const BASELINE_NAMES: [&str; 2] = ["bc", "bedroil_rho0"];

/// Runs a named baseline. `bedroil_rho0` reuses the caller's config with the
/// radius forced to zero.
pub fn run_baseline(
    name: &str,
    problem: &Problem,
    config: &SolverConfig,
) -> Result<(SoftmaxPolicy, TrainingHistory)> {
    match name {
        "bc" => train_bc(problem, config),
        "bedroil_rho0" => {
            let config = SolverConfig {
                rho: 0.0,
                ..config.clone()
            };
            let outcome = train_bedroil(problem, &config)?;
            Ok((outcome.policy, outcome.history))
        }
        other => Err(Error::UnknownBaseline(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{random_mdp, random_policy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unknown_name_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mdp = random_mdp(2, 2, 0.9, &mut rng);
        let expert = random_policy(2, 2, &mut rng);
        let problem = Problem::Exact {
            mdp: &mdp,
            expert: &expert,
        };
        let err = run_baseline("dagger", &problem, &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::UnknownBaseline(_)));
    }

    #[test]
    fn both_baselines_run_and_ignore_the_configured_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mdp = random_mdp(2, 2, 0.9, &mut rng);
        let expert = random_policy(2, 2, &mut rng);
        let problem = Problem::Exact {
            mdp: &mdp,
            expert: &expert,
        };
        let config = SolverConfig {
            rho: 0.5,
            steps: 200,
            ..Default::default()
        };
        for name in BASELINE_NAMES {
            let (policy, history) = run_baseline(name, &problem, &config).unwrap();
            assert_eq!(history.records.len(), 200);
            policy.materialize().validate().unwrap();
        }
    }
}
