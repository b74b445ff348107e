//! Approximate policy iteration with a linear value architecture.
//!
//! Each iteration rolls out the current policy from a fixed set of
//! representative states, fits `J̃(s) = rᵀφ(s)` to the observed discounted
//! returns by (ridge) least squares, and takes the greedy one-step-lookahead
//! policy against `J̃` as the next policy. Nothing guarantees improvement from
//! one iteration to the next, so every candidate is scored on held-out start
//! states and the best weight vector seen is kept.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{evaluate_policy, EvaluationReport, EvaluationSet, EvaluationSettings};
use crate::mdp::AttackModel;
use crate::policy::{GreedyPolicy, Policy, PolicyHandle};
use crate::seed::{child_rng, derive_seed, tags, SimRng};
use crate::traffic::{Network, SystemState};

/// Length of the feature vector for two segments.
pub const FEATURE_COUNT: usize = 9;
/// Queue normalizer.
pub const QUEUE_REF: f64 = 100.0;
/// Normalizer for the service-time imbalance.
pub const IMBALANCE_REF: f64 = 20.0;
/// Grid spacing of the representative training states.
pub const REPRESENTATIVE_STEP: f64 = 25.0;
/// Upper bound of the held-out queue draws.
pub const HELD_OUT_QUEUE_MAX: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

/// Feature map on two-segment states:
///
/// | idx | feature |
/// |-----|---------|
/// | 0 | bias |
/// | 1, 2 | `q(i) / 100` |
/// | 3 | `|q(1)/β(1) − q(2)/β(2)| / 20` |
/// | 4 | `1{q(1) ≤ q(2)}` |
/// | 5 | advertised `α(1)` |
/// | 6 | `|α(1) − α_true(1)|` |
/// | 7 | `|α(1) − β(1)/(β(1)+β(2))|` |
/// | 8 | `1{both segments empty}` |
pub fn features_array(state: &SystemState, network: &Network) -> [f64; FEATURE_COUNT] {
    let (q1, q2) = (state.queues[0], state.queues[1]);
    let (b1, b2) = (network.service_rate(0), network.service_rate(1));
    let alpha = state.admission[0];
    let true_alpha = network.true_ratio(&state.queues, 0);
    [
        1.0,
        q1 / QUEUE_REF,
        q2 / QUEUE_REF,
        (q1 / b1 - q2 / b2).abs() / IMBALANCE_REF,
        if q1 <= q2 { 1.0 } else { 0.0 },
        alpha,
        (alpha - true_alpha).abs(),
        (alpha - b1 / (b1 + b2)).abs(),
        if q1 == 0.0 && q2 == 0.0 { 1.0 } else { 0.0 },
    ]
}

pub fn feature_vector(state: &SystemState, network: &Network) -> Result<FeatureVector> {
    if network.len() != 2 || state.segments() != 2 {
        return Err(Error::Unsupported(format!("features are defined for 2 segments, got {}", state.segments())));
    }
    Ok(FeatureVector(features_array(state, network).to_vec()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `M v_1 … v_M` on one line, every value in shortest round-trip form.
impl fmt::Display for WeightVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.len())?;
        for v in &self.0 {
            write!(f, " {v:?}")?;
        }
        Ok(())
    }
}

impl FromStr for WeightVector {
    type Err = Error;

    /// Accepts the line format, skipping blank lines and `#` comments.
    fn from_str(s: &str) -> Result<Self> {
        let line = s
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty() && !l.starts_with('#'))
            .ok_or_else(|| Error::Parse("no weight line".into()))?;
        let mut tokens = line.split_whitespace();
        let m: usize =
            tokens.next().and_then(|t| t.parse().ok()).ok_or_else(|| Error::Parse("missing weight count".into()))?;
        let values = tokens
            .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad weight `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != m {
            return Err(Error::LengthMismatch { expected: m, actual: values.len() });
        }
        Ok(Self(values))
    }
}

pub(crate) fn approx_value_unchecked(weights: &[f64; FEATURE_COUNT], features: &[f64; FEATURE_COUNT]) -> f64 {
    weights.iter().zip(features).map(|(w, f)| w * f).sum()
}

/// `rᵀφ`.
pub fn approx_value(weights: &WeightVector, features: &FeatureVector) -> Result<f64> {
    if weights.len() != features.0.len() {
        return Err(Error::LengthMismatch { expected: weights.len(), actual: features.0.len() });
    }
    Ok(weights.0.iter().zip(&features.0).map(|(w, f)| w * f).sum())
}

/// Minimizes `Σ (φᵀr − y)² + ridge ‖r‖²`.
///
/// Solved as the plain least-squares problem `[Φ; √ridge·I] r ≈ [y; 0]` via
/// SVD, which returns the minimum-norm solution when `ridge = 0` and the
/// design is rank deficient.
pub fn fit_weights(samples: &[(FeatureVector, f64)], ridge: f64) -> Result<WeightVector> {
    let m =
        samples.first().map(|(f, _)| f.0.len()).ok_or_else(|| Error::config("samples", "need at least one sample"))?;
    if let Some((f, _)) = samples.iter().find(|(f, _)| f.0.len() != m) {
        return Err(Error::LengthMismatch { expected: m, actual: f.0.len() });
    }
    if ridge.is_nan() || ridge < 0.0 {
        return Err(Error::config("ridge", "must be non-negative"));
    }
    let extra = if ridge > 0.0 { m } else { 0 };
    let rows = samples.len() + extra;
    let mut design = DMatrix::<f64>::zeros(rows, m);
    let mut target = DVector::<f64>::zeros(rows);
    for (i, (f, y)) in samples.iter().enumerate() {
        for (j, v) in f.0.iter().enumerate() {
            design[(i, j)] = *v;
        }
        target[i] = *y;
    }
    for j in 0..extra {
        design[(samples.len() + j, j)] = ridge.sqrt();
    }
    let svd = design.svd(true, true);
    let largest = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = largest * f64::EPSILON * rows.max(m) as f64;
    let solution = svd.solve(&target, cutoff).map_err(|e| Error::Parse(format!("least squares failed: {e}")))?;
    Ok(WeightVector(solution.as_slice().to_vec()))
}

/// Greedy policy against `J̃_r`.
pub fn improve_policy_api(weights: &WeightVector, model: &AttackModel) -> Result<GreedyPolicy> {
    GreedyPolicy::with_weights(model, weights)
}

/// The 32 training states: queue pairs on `{0, 25, 50, 75}²`, each once with
/// honest ratios and once with `α(1) ~ U[0, 1]`.
pub fn representative_states(model: &AttackModel, rng: &mut SimRng) -> Result<Vec<SystemState>> {
    if model.segments() != 2 {
        return Err(Error::Unsupported("representative states are defined for 2 segments".into()));
    }
    let levels: Vec<f64> = (0..4).map(|k| k as f64 * REPRESENTATIVE_STEP).collect();
    let mut out = Vec::with_capacity(32);
    for &q1 in &levels {
        for &q2 in &levels {
            out.push(model.network.honest_state(vec![q1, q2]));
            let a: f64 = rng.random();
            out.push(SystemState { queues: vec![q1, q2], admission: vec![a, 1.0 - a] });
        }
    }
    Ok(out)
}

fn on_representative_grid(state: &SystemState) -> bool {
    state.queues.iter().all(|q| (q / REPRESENTATIVE_STEP).fract() == 0.0 && *q <= 3.0 * REPRESENTATIVE_STEP)
}

/// `count` evaluation states: `q(i) ~ U[0, 100]`, ratios uniform on the simplex
/// (`α(1) ~ U[0, 1]` for two segments). Draws that land on the training grid are
/// redrawn.
pub fn held_out_states(model: &AttackModel, rng: &mut SimRng, count: usize) -> Vec<SystemState> {
    let n = model.segments();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let queues: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..HELD_OUT_QUEUE_MAX)).collect();
        let admission = if n == 2 {
            let a: f64 = rng.random();
            vec![a, 1.0 - a]
        } else {
            let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|x| x / total).collect()
        };
        let state = SystemState { queues, admission };
        if !on_representative_grid(&state) {
            out.push(state);
        }
    }
    out
}

/// Simulates one trajectory, calling `on_step(state, action, next, reward)`
/// each step; returns `Σ_{k<horizon} γ^k g_k`.
///
/// The environment stream is consumed identically whatever the policy does:
/// one arrival draw and one success draw per step.
pub fn simulate<P, F>(
    model: &AttackModel,
    policy: &P,
    start: &SystemState,
    horizon: usize,
    env: &mut SimRng,
    policy_rng: &mut SimRng,
    mut on_step: F,
) -> f64
where
    P: Policy + ?Sized,
    F: FnMut(&SystemState, usize, &SystemState, f64),
{
    let mut state = start.clone();
    let mut discount = 1.0;
    let mut total = 0.0;
    for _ in 0..horizon {
        let action = policy.select(&state, policy_rng);
        let arrivals = model.arrivals.sample(env);
        let success = env.random::<f64>() < model.success_probability;
        let act = &model.actions[action];
        let next = model.transition(&state, act, arrivals, success);
        let reward = model.reward(&state, act, &next, success);
        on_step(&state, action, &next, reward);
        total += discount * reward;
        discount *= model.discount;
        state = next;
    }
    total
}

/// Per-trajectory discounted returns from `start`; trajectory `t` draws from
/// the streams `(seed, environment, t)` and `(seed, policy, t)`.
pub fn rollout_returns<P: Policy + ?Sized>(
    model: &AttackModel,
    policy: &P,
    start: &SystemState,
    horizon: usize,
    trajectories: usize,
    seed: u64,
) -> Vec<f64> {
    (0..trajectories)
        .into_par_iter()
        .map(|t| {
            let mut env = child_rng(seed, tags::ENVIRONMENT, &[t as u64]);
            let mut prng = child_rng(seed, tags::POLICY, &[t as u64]);
            simulate(model, policy, start, horizon, &mut env, &mut prng, |_, _, _, _| {})
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RolloutPlan {
    pub trajectories_per_state: usize,
    pub horizon: usize,
    pub representative_states: Vec<SystemState>,
    pub discount: f64,
}

impl RolloutPlan {
    pub fn validate(&self) -> Result<()> {
        if self.trajectories_per_state == 0 {
            return Err(Error::config("trajectories", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::config("discount", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Mean discounted return of `trajectories_per_state` rollouts from `start`.
pub fn rollout_return<P: Policy + ?Sized>(
    start: &SystemState,
    policy: &P,
    plan: &RolloutPlan,
    model: &AttackModel,
    seed: u64,
) -> Result<f64> {
    plan.validate()?;
    if (plan.discount - model.discount).abs() > 0.0 {
        return Err(Error::config("discount", "plan and scenario discounts differ"));
    }
    let returns = rollout_returns(model, policy, start, plan.horizon, plan.trajectories_per_state, seed);
    Ok(returns.iter().sum::<f64>() / returns.len() as f64)
}

#[derive(Debug, Clone)]
pub struct ApiConfig {
    pub iterations: usize,
    pub trajectories_per_state: usize,
    pub horizon: usize,
    pub ridge: f64,
    /// Policy rolled out in the first iteration.
    pub initial_policy: PolicyHandle,
    pub evaluation: EvaluationSettings,
}

impl Default for ApiConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            trajectories_per_state: 50,
            horizon: 100,
            ridge: 1e-6,
            initial_policy: PolicyHandle::Random,
            evaluation: EvaluationSettings::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ApiIteration {
    pub iteration: usize,
    pub weights: WeightVector,
    pub report: EvaluationReport,
    /// Best evaluation reward up to and including this iteration.
    pub best_reward: f64,
}

#[derive(Debug, Clone)]
pub struct ApiRun {
    pub best_weights: WeightVector,
    pub best_report: EvaluationReport,
    pub best_iteration: usize,
    pub history: Vec<ApiIteration>,
    pub representative_states: Vec<SystemState>,
    pub evaluation_set: EvaluationSet,
}

impl ApiRun {
    pub fn best_reward(&self) -> f64 {
        self.best_report.mean_reward
    }

    pub fn best_policy(&self, model: &AttackModel) -> Result<GreedyPolicy> {
        improve_policy_api(&self.best_weights, model)
    }
}

/// Runs approximate policy iteration from `seed`.
///
/// Streams: representative states `(seed, representative)`, held-out states
/// and evaluation rollouts per [`EvaluationSet::held_out`], training rollouts
/// of iteration `i` from representative state `j` at `(seed, training, i, j)`.
pub fn run_api(model: &AttackModel, config: &ApiConfig, seed: u64) -> Result<ApiRun> {
    if config.iterations == 0 {
        return Err(Error::config("iterations", "must be at least 1"));
    }
    let reps = representative_states(model, &mut child_rng(seed, tags::REPRESENTATIVE, &[]))?;
    let plan = RolloutPlan {
        trajectories_per_state: config.trajectories_per_state,
        horizon: config.horizon,
        representative_states: reps,
        discount: model.discount,
    };
    plan.validate()?;
    let features: Vec<FeatureVector> =
        plan.representative_states.iter().map(|s| feature_vector(s, &model.network)).collect::<Result<_>>()?;
    let eval_set = EvaluationSet::held_out(model, seed, &config.evaluation);

    let mut rollout_policy: Box<dyn Policy> = config.initial_policy.build(model)?;
    let mut history: Vec<ApiIteration> = Vec::with_capacity(config.iterations);
    let mut best: Option<(usize, WeightVector, EvaluationReport)> = None;

    for iteration in 0..config.iterations {
        let targets: Vec<f64> = plan
            .representative_states
            .par_iter()
            .enumerate()
            .map(|(j, start)| {
                let stream = derive_seed(seed, tags::TRAINING, &[iteration as u64, j as u64]);
                rollout_return(start, &rollout_policy, &plan, model, stream)
            })
            .collect::<Result<_>>()?;
        let samples: Vec<(FeatureVector, f64)> = features.iter().cloned().zip(targets).collect();
        let weights = fit_weights(&samples, config.ridge)?;
        let greedy = improve_policy_api(&weights, model)?;
        let report = evaluate_policy(&greedy, model, &eval_set)?;

        if best.as_ref().is_none_or(|(_, _, b)| report.mean_reward > b.mean_reward) {
            best = Some((iteration, weights.clone(), report.clone()));
        }
        let best_reward = best.as_ref().map_or(f64::NEG_INFINITY, |(_, _, b)| b.mean_reward);
        history.push(ApiIteration { iteration, weights, report, best_reward });
        rollout_policy = Box::new(greedy);
    }

    let (best_iteration, best_weights, best_report) = best.expect("at least one iteration ran");
    Ok(ApiRun {
        best_weights,
        best_report,
        best_iteration,
        history,
        representative_states: plan.representative_states,
        evaluation_set: eval_set,
    })
}
