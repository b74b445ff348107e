//! The attacker's decision problem: actions, damage, cost and one-step
//! expectations over the known arrival and jam-success model.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traffic::{ArrivalDistribution, Network, SystemState};

/// Two backed-up values closer than this are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// What the attacker does during one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackAction {
    NoAttack,
    /// Hide `fraction` of the vehicles on `segment` (0-based) from its access point.
    Jam {
        segment: usize,
        fraction: f64,
    },
}

impl AttackAction {
    pub fn is_attack(&self) -> bool {
        matches!(self, AttackAction::Jam { .. })
    }
}

impl fmt::Display for AttackAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackAction::NoAttack => f.write_str("no-attack"),
            AttackAction::Jam { segment, fraction } => write!(f, "jam{}@{}", segment + 1, fraction),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DamageKind {
    /// `|q(1) − q(2)|`
    AbsImbalance,
    /// `|q(1)/β(1) − q(2)/β(2)|`
    WeightedImbalance,
    /// `Σ |α_advertised(i) − α_true(i)|`
    AdmissionGap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub damage_kind: DamageKind,
    /// `C_T`: cost per jammed vehicle.
    pub cost_coefficient: f64,
}

impl RewardSpec {
    pub fn check_segments(&self, n: usize) -> Result<()> {
        match self.damage_kind {
            DamageKind::AbsImbalance | DamageKind::WeightedImbalance if n != 2 => {
                Err(Error::Unsupported(format!("{:?} damage needs exactly 2 segments, got {n}", self.damage_kind)))
            }
            _ => Ok(()),
        }
    }
}

/// `NoAttack` followed by `Jam(j, f)` for every segment `j`, then every fraction `f`.
pub fn enumerate_actions(segments: usize, jam_fractions: &[f64]) -> Vec<AttackAction> {
    std::iter::once(AttackAction::NoAttack)
        .chain(
            (0..segments)
                .flat_map(|segment| jam_fractions.iter().map(move |&fraction| AttackAction::Jam { segment, fraction })),
        )
        .collect()
}

/// Damage caused by landing in `next`.
pub fn damage(next: &SystemState, spec: &RewardSpec, network: &Network) -> Result<f64> {
    spec.check_segments(next.segments())?;
    Ok(damage_unchecked(next, spec.damage_kind, network))
}

fn damage_unchecked(next: &SystemState, kind: DamageKind, network: &Network) -> f64 {
    let q = &next.queues;
    match kind {
        DamageKind::AbsImbalance => (q[0] - q[1]).abs(),
        DamageKind::WeightedImbalance => (q[0] / network.service_rate(0) - q[1] / network.service_rate(1)).abs(),
        DamageKind::AdmissionGap => {
            next.admission.iter().enumerate().map(|(i, a)| (a - network.true_ratio(q, i)).abs()).sum()
        }
    }
}

/// `C_T · f · q(j)` on the pre-transition queues; zero for `NoAttack`.
pub fn attack_cost(state: &SystemState, action: &AttackAction, spec: &RewardSpec) -> f64 {
    match action {
        AttackAction::NoAttack => 0.0,
        AttackAction::Jam { segment, fraction } => spec.cost_coefficient * fraction * state.queues[*segment],
    }
}

/// `d(next) − c(state, action)`.
pub fn stage_reward(
    state: &SystemState,
    action: &AttackAction,
    next: &SystemState,
    spec: &RewardSpec,
    network: &Network,
) -> Result<f64> {
    Ok(damage(next, spec, network)? - attack_cost(state, action, spec))
}

/// One joint realization of the step's randomness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub arrivals: u32,
    pub success: bool,
    pub probability: f64,
}

/// Everything needed to simulate and score the attacker's problem.
#[derive(Debug, Clone)]
pub struct AttackModel {
    /// Scenario identifier carried into reports.
    pub name: String,
    pub network: Network,
    pub arrivals: ArrivalDistribution,
    pub actions: Vec<AttackAction>,
    pub success_probability: f64,
    pub reward: RewardSpec,
    pub discount: f64,
    pub charge_cost_on_failure: bool,
}

impl AttackModel {
    pub fn new(
        network: Network,
        arrivals: ArrivalDistribution,
        jam_fractions: &[f64],
        success_probability: f64,
        reward: RewardSpec,
        discount: f64,
        charge_cost_on_failure: bool,
    ) -> Result<Self> {
        reward.check_segments(network.len())?;
        if !(0.0..=1.0).contains(&success_probability) {
            return Err(Error::config("success_probability", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::config("discount", "must lie in [0, 1)"));
        }
        if !(reward.cost_coefficient >= 0.0 && reward.cost_coefficient.is_finite()) {
            return Err(Error::config("reward.cost_coefficient", "must be finite and non-negative"));
        }
        let actions = enumerate_actions(network.len(), jam_fractions);
        Ok(Self {
            name: "custom".into(),
            network,
            arrivals,
            actions,
            success_probability,
            reward,
            discount,
            charge_cost_on_failure,
        })
    }

    pub fn segments(&self) -> usize {
        self.network.len()
    }

    pub fn transition(&self, state: &SystemState, action: &AttackAction, arrivals: u32, success: bool) -> SystemState {
        self.network.transition(state, action, arrivals, success)
    }

    pub fn damage(&self, next: &SystemState) -> f64 {
        damage_unchecked(next, self.reward.damage_kind, &self.network)
    }

    pub fn cost(&self, state: &SystemState, action: &AttackAction, success: bool) -> f64 {
        if success || self.charge_cost_on_failure {
            attack_cost(state, action, &self.reward)
        } else {
            0.0
        }
    }

    /// Stage reward of a realized step.
    pub fn reward(&self, state: &SystemState, action: &AttackAction, next: &SystemState, success: bool) -> f64 {
        self.damage(next) - self.cost(state, action, success)
    }

    /// The product measure over arrivals and (for jams) attack success.
    /// Successes come first, each block in pmf order.
    pub fn outcomes(&self, action: &AttackAction) -> Vec<Outcome> {
        let p = self.success_probability;
        let branches: &[(bool, f64)] = match action {
            AttackAction::NoAttack => &[(true, 1.0)],
            AttackAction::Jam { .. } if p >= 1.0 => &[(true, 1.0)],
            AttackAction::Jam { .. } if p <= 0.0 => &[(false, 1.0)],
            AttackAction::Jam { .. } => &[(true, p), (false, 1.0 - p)],
        };
        branches
            .iter()
            .flat_map(|&(success, ps)| {
                self.arrivals.support().iter().map(move |atom| Outcome {
                    arrivals: atom.count,
                    success,
                    probability: ps * atom.probability,
                })
            })
            .collect()
    }

    /// `Σ_outcomes P · [g(s, u, s') + γ · value(s')]`.
    pub fn expected_one_step<F>(&self, state: &SystemState, action: &AttackAction, value: F) -> f64
    where
        F: Fn(&SystemState) -> f64,
    {
        self.outcomes(action)
            .iter()
            .map(|o| {
                let next = self.transition(state, action, o.arrivals, o.success);
                o.probability * (self.reward(state, action, &next, o.success) + self.discount * value(&next))
            })
            .sum()
    }

    /// Index of the action with the largest backed-up value under `value`.
    pub fn greedy_action<F>(&self, state: &SystemState, value: F) -> usize
    where
        F: Fn(&SystemState) -> f64,
    {
        argmax_earliest(self.actions.iter().map(|a| self.expected_one_step(state, a, &value)))
    }
}

/// Earliest index whose value is within [`TIE_TOLERANCE`] of the maximum.
pub fn argmax_earliest(values: impl IntoIterator<Item = f64>) -> usize {
    let values: Vec<f64> = values.into_iter().collect();
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values.iter().position(|&v| v >= best - TIE_TOLERANCE).unwrap_or(0)
}
