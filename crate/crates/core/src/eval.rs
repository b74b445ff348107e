//! Evaluation harness: scores policies on held-out start states, sweeps the
//! attack cost, and tabulates which actions a policy takes.

use rayon::prelude::*;

use crate::api::{held_out_states, run_api, simulate, ApiConfig, WeightVector};
use crate::error::{Error, Result};
use crate::mdp::{AttackAction, AttackModel};
use crate::policy::{Policy, PolicyHandle};
use crate::scenario::ScenarioConfig;
use crate::seed::{child_rng, derive_seed, tags};
use crate::traffic::SystemState;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluationSettings {
    pub states: usize,
    pub horizon: usize,
    pub trajectories: usize,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self { states: 32, horizon: 100, trajectories: 50 }
    }
}

/// Start states plus the stream every evaluated policy shares.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationSet {
    pub states: Vec<SystemState>,
    pub seed: u64,
    pub horizon: usize,
    pub trajectories: usize,
}

impl EvaluationSet {
    /// Held-out states from `(root, held-out)`, rollouts from `(root, evaluation)`.
    pub fn held_out(model: &AttackModel, root: u64, settings: &EvaluationSettings) -> Self {
        let states = held_out_states(model, &mut child_rng(root, tags::HELD_OUT, &[]), settings.states);
        Self {
            states,
            seed: derive_seed(root, tags::EVALUATION, &[]),
            horizon: settings.horizon,
            trajectories: settings.trajectories,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub scenario: String,
    pub policy: String,
    pub mean_reward: f64,
    pub stderr: f64,
    /// Total trajectories across all start states.
    pub trajectories: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl EvaluationReport {
    /// `√(se_a² + se_b²)`.
    pub fn pooled_stderr(&self, other: &EvaluationReport) -> f64 {
        self.stderr.hypot(other.stderr)
    }
}

fn state_stream(seed: u64, index: usize) -> u64 {
    derive_seed(seed, "state", &[index as u64])
}

/// Runs every `(state, trajectory)` pair, visiting steps in index order.
fn for_each_trajectory<F, T>(starts: &[SystemState], trajectories: usize, seed: u64, per_trajectory: F) -> Vec<T>
where
    F: Fn(&SystemState, &mut crate::seed::SimRng, &mut crate::seed::SimRng) -> T + Sync,
    T: Send,
{
    (0..starts.len() * trajectories)
        .into_par_iter()
        .map(|k| {
            let (i, t) = (k / trajectories, k % trajectories);
            let stream = state_stream(seed, i);
            let mut env = child_rng(stream, tags::ENVIRONMENT, &[t as u64]);
            let mut prng = child_rng(stream, tags::POLICY, &[t as u64]);
            per_trajectory(&starts[i], &mut env, &mut prng)
        })
        .collect()
}

/// Mean discounted return over `trajectories` rollouts from each start state.
pub fn evaluate_policy_on<P: Policy + ?Sized>(
    policy: &P,
    model: &AttackModel,
    starts: &[SystemState],
    horizon: usize,
    trajectories: usize,
    seed: u64,
) -> Result<EvaluationReport> {
    if starts.is_empty() {
        return Err(Error::config("start_states", "must not be empty"));
    }
    if trajectories == 0 || horizon == 0 {
        return Err(Error::config("trajectories", "horizon and trajectory count must be positive"));
    }
    let returns = for_each_trajectory(starts, trajectories, seed, |s, env, prng| {
        simulate(model, policy, s, horizon, env, prng, |_, _, _, _| {})
    });
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let stderr = if returns.len() > 1 {
        (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok(EvaluationReport {
        scenario: model.name.clone(),
        policy: policy.name(),
        mean_reward: mean,
        stderr,
        trajectories: returns.len(),
        horizon,
        seed,
    })
}

pub fn evaluate_policy<P: Policy + ?Sized>(
    policy: &P,
    model: &AttackModel,
    set: &EvaluationSet,
) -> Result<EvaluationReport> {
    evaluate_policy_on(policy, model, &set.states, set.horizon, set.trajectories, set.seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionFrequency {
    pub action: AttackAction,
    pub frequency: f64,
}

/// Fraction of all simulated steps spent on each action, in action order.
pub fn action_histogram<P: Policy + ?Sized>(
    policy: &P,
    model: &AttackModel,
    starts: &[SystemState],
    horizon: usize,
    trajectories: usize,
    seed: u64,
) -> Result<Vec<ActionFrequency>> {
    if starts.is_empty() || trajectories == 0 || horizon == 0 {
        return Err(Error::config("start_states", "need states, trajectories and a positive horizon"));
    }
    let per_trajectory = for_each_trajectory(starts, trajectories, seed, |s, env, prng| {
        let mut counts = vec![0u64; model.actions.len()];
        simulate(model, policy, s, horizon, env, prng, |_, a, _, _| counts[a] += 1);
        counts
    });
    let mut counts = vec![0u64; model.actions.len()];
    for c in per_trajectory {
        for (total, x) in counts.iter_mut().zip(c) {
            *total += x;
        }
    }
    let steps: u64 = counts.iter().sum();
    Ok(model
        .actions
        .iter()
        .zip(counts)
        .map(|(a, c)| ActionFrequency { action: *a, frequency: c as f64 / steps as f64 })
        .collect())
}

pub fn histogram_on_set<P: Policy + ?Sized>(
    policy: &P,
    model: &AttackModel,
    set: &EvaluationSet,
) -> Result<Vec<ActionFrequency>> {
    action_histogram(policy, model, &set.states, set.horizon, set.trajectories, set.seed)
}

/// Share of steps on which any segment was jammed.
pub fn attack_frequency(histogram: &[ActionFrequency]) -> f64 {
    histogram.iter().filter(|f| f.action.is_attack()).map(|f| f.frequency).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cost: f64,
    pub policy: String,
    pub mean_reward: f64,
    pub stderr: f64,
    /// Trained weights for the `api` row.
    pub weights: Option<WeightVector>,
}

/// One row per `(cost, policy)`: costs ascending, then `policies` in order,
/// then `api` when a training configuration is given. API is retrained at
/// every cost; all rows at a cost share the held-out set from `seed`.
pub fn sweep_costs(
    template: &ScenarioConfig,
    costs: &[f64],
    policies: &[PolicyHandle],
    settings: &EvaluationSettings,
    api: Option<&ApiConfig>,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if costs.is_empty() {
        return Err(Error::config("costs", "must not be empty"));
    }
    let mut costs = costs.to_vec();
    costs.sort_by(f64::total_cmp);
    let mut rows = Vec::new();
    for cost in costs {
        let model = template.clone().with_cost(cost).model()?;
        let set = EvaluationSet::held_out(&model, seed, settings);
        for handle in policies {
            let report = evaluate_policy(&handle.build(&model)?, &model, &set)?;
            rows.push(SweepRow {
                cost,
                policy: handle.to_string(),
                mean_reward: report.mean_reward,
                stderr: report.stderr,
                weights: None,
            });
        }
        if let Some(config) = api {
            let config = ApiConfig { evaluation: *settings, ..config.clone() };
            let run = run_api(&model, &config, seed)?;
            rows.push(SweepRow {
                cost,
                policy: "api".into(),
                mean_reward: run.best_report.mean_reward,
                stderr: run.best_report.stderr,
                weights: Some(run.best_weights),
            });
        }
    }
    Ok(rows)
}
