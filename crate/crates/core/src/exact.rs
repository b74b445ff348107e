//! Exact dynamic programming on a discretized copy of the attack problem.
//!
//! The continuous state `(q(1), q(2), α(1))` is snapped onto a regular grid,
//! successors of every `(state, action)` pair are enumerated over the arrival
//! and jam-success product measure, and the resulting finite MDP is solved by
//! policy iteration and value iteration. This is only feasible for coarse
//! grids; it serves as ground truth for the approximate solver.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{argmax_earliest, AttackAction, AttackModel};
use crate::policy::Policy;
use crate::seed::{child_rng, SimRng};
use crate::traffic::SystemState;

/// Default cap on `states × actions`.
pub const DEFAULT_PAIR_CAP: usize = 1_000_000;
/// Largest state count solved by dense LU; above it policy evaluation sweeps.
pub const DIRECT_SOLVE_LIMIT: usize = 2_000;
/// Required `‖J − T_μ J‖∞` on return from policy evaluation.
pub const EVALUATION_RESIDUAL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscretizationGrid {
    pub queue_step: f64,
    pub queue_max: f64,
    pub admission_step: f64,
}

impl Default for DiscretizationGrid {
    fn default() -> Self {
        Self { queue_step: 25.0, queue_max: 75.0, admission_step: 0.25 }
    }
}

/// Nearest multiple of `step` in `[0, max_index · step]`; exact halves round down.
fn snap_index(value: f64, step: f64, max_index: usize) -> usize {
    let x = (value / step).max(0.0);
    let lower = x.floor();
    let idx = if x - lower > 0.5 { lower + 1.0 } else { lower };
    (idx as usize).min(max_index)
}

impl DiscretizationGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.queue_step > 0.0 && self.queue_step.is_finite()) {
            return Err(Error::config("grid.queue_step", "must be positive"));
        }
        let ratio = self.queue_max / self.queue_step;
        if !(self.queue_max >= 0.0 && (ratio - ratio.round()).abs() < 1e-9) {
            return Err(Error::config("grid.queue_max", "must be a non-negative multiple of queue_step"));
        }
        if !(self.admission_step > 0.0 && self.admission_step <= 0.5) {
            return Err(Error::config("grid.admission_step", "must lie in (0, 0.5]"));
        }
        Ok(())
    }

    pub fn queue_points(&self) -> usize {
        (self.queue_max / self.queue_step).round() as usize + 1
    }

    pub fn admission_points(&self) -> usize {
        (1.0 / self.admission_step + 1e-9).floor() as usize + 1
    }

    pub fn state_count(&self) -> usize {
        self.queue_points().pow(2) * self.admission_points()
    }

    /// Grid state number `index`, ordered by `q(1)`, then `q(2)`, then `α(1)`.
    pub fn state(&self, index: usize) -> SystemState {
        let na = self.admission_points();
        let nq = self.queue_points();
        let ia = index % na;
        let i2 = (index / na) % nq;
        let i1 = index / (na * nq);
        let a1 = (ia as f64 * self.admission_step).min(1.0);
        SystemState {
            queues: vec![i1 as f64 * self.queue_step, i2 as f64 * self.queue_step],
            admission: vec![a1, 1.0 - a1],
        }
    }

    /// Index of the grid point nearest to `state` (queues beyond `queue_max` clamp).
    pub fn index_of(&self, state: &SystemState) -> usize {
        let nq = self.queue_points();
        let na = self.admission_points();
        let i1 = snap_index(state.queues[0], self.queue_step, nq - 1);
        let i2 = snap_index(state.queues[1], self.queue_step, nq - 1);
        let ia = snap_index(state.admission[0], self.admission_step, na - 1);
        (i1 * nq + i2) * na + ia
    }
}

/// One nonzero entry of a transition row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub next: usize,
    pub probability: f64,
    /// Probability-weighted mean stage reward of the outcomes merged here.
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct FiniteMdp {
    /// Grid states; empty for synthetic MDPs.
    pub states: Vec<SystemState>,
    /// Attack actions; empty for synthetic MDPs.
    pub actions: Vec<AttackAction>,
    num_states: usize,
    num_actions: usize,
    rows: Vec<Vec<Transition>>,
    pub discount: f64,
}

impl FiniteMdp {
    /// Builds an MDP from raw rows indexed `state * num_actions + action`.
    pub fn from_rows(num_states: usize, num_actions: usize, rows: Vec<Vec<Transition>>, discount: f64) -> Result<Self> {
        if rows.len() != num_states * num_actions {
            return Err(Error::LengthMismatch { expected: num_states * num_actions, actual: rows.len() });
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::config("discount", "must lie in [0, 1)"));
        }
        for (i, row) in rows.iter().enumerate() {
            let total: f64 = row.iter().map(|t| t.probability).sum();
            if (total - 1.0).abs() > 1e-12
                || row.iter().any(|t| !(0.0..=1.0).contains(&t.probability) || t.next >= num_states)
            {
                return Err(Error::config(format!("rows[{i}]"), "not a probability row over valid states"));
            }
        }
        Ok(Self { states: Vec::new(), actions: Vec::new(), num_states, num_actions, rows, discount })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn row(&self, state: usize, action: usize) -> &[Transition] {
        &self.rows[state * self.num_actions + action]
    }

    /// `Σ p (g + γ v(s'))` for one pair.
    pub fn q_value(&self, state: usize, action: usize, values: &[f64]) -> f64 {
        self.row(state, action).iter().map(|t| t.probability * (t.reward + self.discount * values[t.next])).sum()
    }

    pub fn expected_reward(&self, state: usize, action: usize) -> f64 {
        self.row(state, action).iter().map(|t| t.probability * t.reward).sum()
    }

    /// Writes one `state action successor probability reward` line per nonzero.
    pub fn write_listing<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# state action successor probability reward")?;
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                for t in self.row(s, a) {
                    writeln!(out, "{s} {a} {} {} {}", t.next, t.probability, t.reward)?;
                }
            }
        }
        Ok(())
    }
}

/// Discretizes a two-segment attack model.
pub fn build_finite_mdp(model: &AttackModel, grid: &DiscretizationGrid, pair_cap: usize) -> Result<FiniteMdp> {
    grid.validate()?;
    if model.segments() != 2 {
        return Err(Error::Unsupported(format!("exact solver handles 2 segments, scenario has {}", model.segments())));
    }
    let num_states = grid.state_count();
    let num_actions = model.actions.len();
    let pairs = num_states * num_actions;
    if pairs > pair_cap {
        return Err(Error::StateCap { pairs, cap: pair_cap });
    }
    let states: Vec<SystemState> = (0..num_states).map(|i| grid.state(i)).collect();
    let rows: Vec<Vec<Transition>> = (0..pairs)
        .into_par_iter()
        .map(|pair| {
            let state = &states[pair / num_actions];
            let action = &model.actions[pair % num_actions];
            let mut row: Vec<Transition> = Vec::new();
            for o in model.outcomes(action) {
                if o.probability == 0.0 {
                    continue;
                }
                let next = model.transition(state, action, o.arrivals, o.success);
                let reward = model.reward(state, action, &next, o.success);
                let idx = grid.index_of(&next);
                match row.iter_mut().find(|t| t.next == idx) {
                    Some(t) => {
                        // running probability-weighted mean
                        let p = t.probability + o.probability;
                        t.reward = (t.reward * t.probability + reward * o.probability) / p;
                        t.probability = p;
                    }
                    None => row.push(Transition { next: idx, probability: o.probability, reward }),
                }
            }
            row.sort_by_key(|t| t.next);
            row
        })
        .collect();
    Ok(FiniteMdp { states, actions: model.actions.clone(), num_states, num_actions, rows, discount: model.discount })
}

fn policy_residual(mdp: &FiniteMdp, policy: &[usize], values: &[f64]) -> f64 {
    (0..mdp.num_states).map(|s| (values[s] - mdp.q_value(s, policy[s], values)).abs()).fold(0.0, f64::max)
}

/// Solves `J = r_μ + γ P_μ J` for a deterministic stationary policy.
pub fn policy_evaluation_exact(mdp: &FiniteMdp, policy: &[usize]) -> Vec<f64> {
    assert_eq!(policy.len(), mdp.num_states, "policy must cover every state");
    let n = mdp.num_states;
    let rewards: Vec<f64> = (0..n).map(|s| mdp.expected_reward(s, policy[s])).collect();

    let mut values = if n <= DIRECT_SOLVE_LIMIT {
        let mut system = DMatrix::<f64>::identity(n, n);
        for s in 0..n {
            for t in mdp.row(s, policy[s]) {
                system[(s, t.next)] -= mdp.discount * t.probability;
            }
        }
        let lu = system.clone().lu();
        let rhs = DVector::from_vec(rewards.clone());
        let mut x = lu.solve(&rhs).expect("I − γP is nonsingular for γ < 1");
        // iterative refinement
        for _ in 0..5 {
            let r = &rhs - &system * &x;
            if r.amax() <= EVALUATION_RESIDUAL * 0.1 {
                break;
            }
            x += lu.solve(&r).expect("nonsingular");
        }
        x.as_slice().to_vec()
    } else {
        vec![0.0; n]
    };
    // the only route for large systems and a polish for the direct one
    sweep_to_residual(mdp, policy, &mut values);
    values
}

/// Jacobi sweeps `J ← r_μ + γ P_μ J` until the residual bound holds.
fn sweep_to_residual(mdp: &FiniteMdp, policy: &[usize], values: &mut Vec<f64>) -> usize {
    let mut sweeps = 0;
    while policy_residual(mdp, policy, values) > EVALUATION_RESIDUAL && sweeps < 1_000_000 {
        *values = (0..mdp.num_states).map(|s| mdp.q_value(s, policy[s], values)).collect();
        sweeps += 1;
    }
    sweeps
}

/// Greedy policy with respect to `values`; ties resolve to the lowest action index.
pub fn policy_improvement(mdp: &FiniteMdp, values: &[f64]) -> Vec<usize> {
    (0..mdp.num_states).map(|s| argmax_earliest((0..mdp.num_actions).map(|a| mdp.q_value(s, a, values)))).collect()
}

#[derive(Debug, Clone)]
pub struct PolicyIterationResult {
    pub policy: Vec<usize>,
    pub values: Vec<f64>,
    /// Number of improvement steps, including the final one that changed nothing.
    pub iterations: usize,
    /// Value of each evaluated policy, in order.
    pub value_history: Vec<Vec<f64>>,
}

pub fn policy_iteration(mdp: &FiniteMdp, initial: &[usize]) -> PolicyIterationResult {
    let mut policy = initial.to_vec();
    let mut value_history = Vec::new();
    let mut iterations = 0;
    loop {
        let values = policy_evaluation_exact(mdp, &policy);
        let improved = policy_improvement(mdp, &values);
        iterations += 1;
        value_history.push(values);
        // near-ties can in principle alternate; the bound keeps termination unconditional
        if improved == policy || iterations >= 10_000 {
            let values = value_history.last().cloned().unwrap_or_default();
            return PolicyIterationResult { policy, values, iterations, value_history };
        }
        policy = improved;
    }
}

/// One application of the Bellman optimality operator.
pub fn bellman_operator(mdp: &FiniteMdp, values: &[f64]) -> Vec<f64> {
    (0..mdp.num_states)
        .map(|s| (0..mdp.num_actions).map(|a| mdp.q_value(s, a, values)).fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ValueIterationResult {
    pub values: Vec<f64>,
    pub sweeps: usize,
}

/// Sweeps from zero until the sup-norm change is at most `tolerance (1 − γ) / (2γ)`,
/// which leaves the result within `tolerance` of the optimal value.
pub fn value_iteration(mdp: &FiniteMdp, tolerance: f64) -> ValueIterationResult {
    assert!(tolerance > 0.0, "tolerance must be positive");
    let gamma = mdp.discount;
    let threshold = if gamma > 0.0 { tolerance * (1.0 - gamma) / (2.0 * gamma) } else { f64::INFINITY };
    let mut values = vec![0.0; mdp.num_states];
    let mut sweeps = 0;
    loop {
        let next = bellman_operator(mdp, &values);
        let delta = sup_distance(&next, &values);
        values = next;
        sweeps += 1;
        if delta <= threshold {
            return ValueIterationResult { values, sweeps };
        }
    }
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A random MDP with `branching` successors per row, rewards in `[-1, 1]`.
pub fn random_mdp(seed: u64, num_states: usize, num_actions: usize, branching: usize, discount: f64) -> FiniteMdp {
    let mut rng: SimRng = child_rng(seed, "random-mdp", &[]);
    let rows = (0..num_states * num_actions)
        .map(|_| {
            let mut next: Vec<usize> = Vec::new();
            while next.len() < branching.min(num_states) {
                let s = rng.random_range(0..num_states);
                if !next.contains(&s) {
                    next.push(s);
                }
            }
            next.sort_unstable();
            let weights: Vec<f64> = next.iter().map(|_| rng.random::<f64>() + 0.05).collect();
            let total: f64 = weights.iter().sum();
            let mut row: Vec<Transition> = next
                .iter()
                .zip(&weights)
                .map(|(&s, w)| Transition { next: s, probability: w / total, reward: rng.random_range(-1.0..1.0) })
                .collect();
            // absorb rounding so the row sums to one
            let drift: f64 = 1.0 - row.iter().map(|t| t.probability).sum::<f64>();
            row[0].probability += drift;
            row
        })
        .collect();
    FiniteMdp::from_rows(num_states, num_actions, rows, discount).expect("generated rows are valid")
}

/// A grid policy applied to continuous states by snapping.
#[derive(Debug, Clone)]
pub struct TabularPolicy {
    pub grid: DiscretizationGrid,
    pub actions: Vec<usize>,
}

impl Policy for TabularPolicy {
    fn select(&self, state: &SystemState, _rng: &mut SimRng) -> usize {
        self.actions[self.grid.index_of(state)]
    }

    fn name(&self) -> String {
        "tabular".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(next: usize, probability: f64, reward: f64) -> Transition {
        Transition { next, probability, reward }
    }

    #[test]
    fn snapping_rounds_halves_down_and_clamps() {
        assert_eq!(snap_index(12.5, 25.0, 3), 0);
        assert_eq!(snap_index(12.6, 25.0, 3), 1);
        assert_eq!(snap_index(37.5, 25.0, 3), 1);
        assert_eq!(snap_index(500.0, 25.0, 3), 3);
        assert_eq!(snap_index(0.125, 0.25, 4), 0);
        assert_eq!(snap_index(0.9, 0.25, 4), 4);
    }

    #[test]
    fn grid_indexing_round_trips() {
        let g = DiscretizationGrid::default();
        assert_eq!(g.state_count(), 80);
        for i in 0..g.state_count() {
            assert_eq!(g.index_of(&g.state(i)), i);
        }
        assert!(DiscretizationGrid { queue_max: 70.0, ..g }.validate().is_err());
        assert!(DiscretizationGrid { admission_step: 0.6, ..g }.validate().is_err());
    }

    #[test]
    fn geometric_self_loop() {
        let mdp = FiniteMdp::from_rows(1, 1, vec![vec![tr(0, 1.0, 1.0)]], 0.99).unwrap();
        let v = policy_evaluation_exact(&mdp, &[0]);
        assert!((v[0] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn two_state_chain() {
        let rows = vec![vec![tr(1, 1.0, 1.0)], vec![tr(1, 1.0, 0.0)]];
        let mdp = FiniteMdp::from_rows(2, 1, rows, 0.9).unwrap();
        let v = policy_evaluation_exact(&mdp, &[0, 0]);
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(FiniteMdp::from_rows(1, 1, vec![vec![tr(0, 0.5, 0.0)]], 0.9).is_err());
        assert!(FiniteMdp::from_rows(1, 1, vec![vec![tr(3, 1.0, 0.0)]], 0.9).is_err());
        assert!(FiniteMdp::from_rows(1, 1, vec![vec![tr(0, 1.0, 0.0)]], 1.0).is_err());
    }

    /// Every deterministic stationary policy of a small MDP.
    fn all_policies(states: usize, actions: usize) -> Vec<Vec<usize>> {
        (0..actions.pow(states as u32))
            .map(|mut code| {
                (0..states)
                    .map(|_| {
                        let a = code % actions;
                        code /= actions;
                        a
                    })
                    .collect()
            })
            .collect()
    }

    fn brute_force_optimum(mdp: &FiniteMdp) -> Vec<f64> {
        all_policies(mdp.num_states(), mdp.num_actions())
            .iter()
            .map(|p| policy_evaluation_exact(mdp, p))
            .fold(vec![f64::NEG_INFINITY; mdp.num_states()], |best, v| {
                best.iter().zip(&v).map(|(a, b)| a.max(*b)).collect()
            })
    }

    #[test]
    fn improvement_matches_enumeration_on_a_hand_mdp() {
        // state 0: action 0 stays (+1), action 1 jumps to 1 (0); state 1: action 0 stays (+3), action 1 back to 0 (+5)
        let rows = vec![vec![tr(0, 1.0, 1.0)], vec![tr(1, 1.0, 0.0)], vec![tr(1, 1.0, 3.0)], vec![tr(0, 1.0, 5.0)]];
        let mdp = FiniteMdp::from_rows(2, 2, rows, 0.9).unwrap();
        let best = brute_force_optimum(&mdp);
        let pi = policy_iteration(&mdp, &[0, 0]);
        assert!(sup_distance(&pi.values, &best) < 1e-9);
        let improved = policy_improvement(&mdp, &best);
        assert_eq!(improved, pi.policy);
        assert_eq!(policy_improvement(&mdp, &pi.values), pi.policy);
    }

    #[test]
    fn value_iteration_matches_enumeration_on_three_states() {
        let rows = vec![
            vec![tr(0, 0.5, 1.0), tr(1, 0.5, 0.0)],
            vec![tr(2, 1.0, 2.0)],
            vec![tr(0, 1.0, -1.0)],
            vec![tr(1, 0.3, 0.5), tr(2, 0.7, 0.0)],
            vec![tr(2, 1.0, 0.2)],
            vec![tr(0, 0.2, 4.0), tr(1, 0.8, -0.5)],
        ];
        let mdp = FiniteMdp::from_rows(3, 2, rows, 0.8).unwrap();
        let best = brute_force_optimum(&mdp);
        let vi = value_iteration(&mdp, 1e-10);
        assert!(sup_distance(&vi.values, &best) < 1e-10);
    }

    #[test]
    fn zero_discount_is_myopic() {
        let mdp = random_mdp(5, 6, 3, 3, 0.0);
        let vi = value_iteration(&mdp, 1e-9);
        for s in 0..6 {
            let best = (0..3).map(|a| mdp.expected_reward(s, a)).fold(f64::NEG_INFINITY, f64::max);
            assert!((vi.values[s] - best).abs() < 1e-15);
        }
    }

    #[test]
    fn tie_goes_to_earliest_action() {
        let rows = vec![vec![tr(0, 1.0, 1.0)], vec![tr(0, 1.0, 1.0)]];
        let mdp = FiniteMdp::from_rows(1, 2, rows, 0.5).unwrap();
        assert_eq!(policy_improvement(&mdp, &[2.0]), vec![0]);
    }

    #[test]
    fn bellman_contraction() {
        let mdp = random_mdp(11, 15, 3, 4, 0.95);
        let mut rng = child_rng(3, "contraction", &[]);
        for _ in 0..20 {
            let u: Vec<f64> = (0..15).map(|_| rng.random_range(-50.0..50.0)).collect();
            let v: Vec<f64> = (0..15).map(|_| rng.random_range(-50.0..50.0)).collect();
            let lhs = sup_distance(&bellman_operator(&mdp, &u), &bellman_operator(&mdp, &v));
            assert!(lhs <= 0.95 * sup_distance(&u, &v) + 1e-12);
        }
    }

    #[test]
    fn value_iteration_error_shrinks_geometrically() {
        let mdp = random_mdp(2, 12, 3, 3, 0.9);
        let star = policy_iteration(&mdp, &[0; 12]).values;
        let initial = sup_distance(&[0.0; 12], &star);
        let mut v = vec![0.0; 12];
        for k in 1..=30 {
            v = bellman_operator(&mdp, &v);
            assert!(sup_distance(&v, &star) <= 0.9f64.powi(k) * initial + 1e-9);
        }
    }

    #[test]
    fn evaluation_agrees_with_monte_carlo() {
        let mdp = random_mdp(17, 20, 2, 3, 0.9);
        let policy: Vec<usize> = (0..20).map(|s| s % 2).collect();
        let exact = policy_evaluation_exact(&mdp, &policy);

        // independent oracle: sample paths through the rows directly
        let mut rng = child_rng(99, "mc-oracle", &[]);
        let start = 4;
        let runs = 100_000;
        let horizon = 250; // 0.9^250 · 1/(1 − 0.9) < 1e-10
        let returns: Vec<f64> = (0..runs)
            .map(|_| {
                let (mut s, mut disc, mut total) = (start, 1.0, 0.0);
                for _ in 0..horizon {
                    let u: f64 = rng.random();
                    let row = mdp.row(s, policy[s]);
                    let mut acc = 0.0;
                    let mut pick = row[row.len() - 1];
                    for t in row {
                        acc += t.probability;
                        if u < acc {
                            pick = *t;
                            break;
                        }
                    }
                    total += disc * pick.reward;
                    disc *= 0.9;
                    s = pick.next;
                }
                total
            })
            .collect();
        let mean = returns.iter().sum::<f64>() / runs as f64;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
        let se = (var / runs as f64).sqrt();
        assert!((mean - exact[start]).abs() < 3.0 * se, "mc {mean} exact {} se {se}", exact[start]);
    }

    #[test]
    fn sweep_route_agrees_with_direct_solve() {
        let mdp = random_mdp(8, 30, 2, 5, 0.99);
        let policy = vec![1; 30];
        let direct = policy_evaluation_exact(&mdp, &policy);
        assert!(policy_residual(&mdp, &policy, &direct) <= EVALUATION_RESIDUAL);
        let mut swept = vec![0.0; 30];
        assert!(sweep_to_residual(&mdp, &policy, &mut swept) > 0);
        assert!(policy_residual(&mdp, &policy, &swept) <= EVALUATION_RESIDUAL);
        // residual r bounds the error by r / (1 − γ)
        assert!(sup_distance(&direct, &swept) <= 2.0 * EVALUATION_RESIDUAL / 0.01);
    }
}
