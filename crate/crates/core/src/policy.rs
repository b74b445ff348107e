//! Attack policies: the baselines and the greedy policies derived from a
//! value function.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::api::{approx_value_unchecked, features_array, WeightVector, FEATURE_COUNT};
use crate::error::{Error, Result};
use crate::exact::TabularPolicy;
use crate::mdp::{AttackAction, AttackModel, Outcome};
use crate::seed::SimRng;
use crate::traffic::SystemState;

/// Chooses an index into the model's action list.
pub trait Policy: Send + Sync {
    /// `rng` is the policy's own stream, separate from the environment's.
    fn select(&self, state: &SystemState, rng: &mut SimRng) -> usize;

    fn name(&self) -> String;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn select(&self, state: &SystemState, rng: &mut SimRng) -> usize {
        (**self).select(state, rng)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

/// The same action at every state.
#[derive(Debug, Clone)]
pub struct ConstantPolicy {
    pub action: usize,
    pub label: String,
}

impl Policy for ConstantPolicy {
    fn select(&self, _state: &SystemState, _rng: &mut SimRng) -> usize {
        self.action
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

/// Uniform over the action list, one draw per step.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    pub num_actions: usize,
}

impl Policy for RandomPolicy {
    fn select(&self, _state: &SystemState, rng: &mut SimRng) -> usize {
        rng.random_range(0..self.num_actions)
    }

    fn name(&self) -> String {
        "random".into()
    }
}

/// Greedy one-step lookahead against a linear value approximation.
///
/// With no weights the future term is zero, which is the myopic policy.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    model: AttackModel,
    weights: Option<[f64; FEATURE_COUNT]>,
    outcomes: Vec<Vec<Outcome>>,
    label: String,
}

impl GreedyPolicy {
    pub fn myopic(model: &AttackModel) -> Self {
        Self {
            model: model.clone(),
            weights: None,
            outcomes: model.actions.iter().map(|a| model.outcomes(a)).collect(),
            label: "myopic".into(),
        }
    }

    pub fn with_weights(model: &AttackModel, weights: &WeightVector) -> Result<Self> {
        if model.segments() != 2 {
            return Err(Error::Unsupported("linear value features need exactly 2 segments".into()));
        }
        let w: [f64; FEATURE_COUNT] = weights
            .values()
            .try_into()
            .map_err(|_| Error::LengthMismatch { expected: FEATURE_COUNT, actual: weights.len() })?;
        Ok(Self { weights: Some(w), label: "api".into(), ..Self::myopic(model) })
    }

    /// Backed-up value of every action; same arithmetic as
    /// [`AttackModel::expected_one_step`] with the outcome lists precomputed.
    pub fn action_values(&self, state: &SystemState) -> Vec<f64> {
        let mut scratch = state.clone();
        (0..self.model.actions.len()).map(|a| self.action_value(state, a, &mut scratch)).collect()
    }

    fn action_value(&self, state: &SystemState, action: usize, next: &mut SystemState) -> f64 {
        let m = &self.model;
        let a = &m.actions[action];
        self.outcomes[action]
            .iter()
            .map(|o| {
                m.network.transition_into(state, a, o.arrivals, o.success, next);
                let future = match &self.weights {
                    None => 0.0,
                    Some(w) => approx_value_unchecked(w, &features_array(next, &m.network)),
                };
                o.probability * (m.reward(state, a, next, o.success) + m.discount * future)
            })
            .sum()
    }
}

impl Policy for GreedyPolicy {
    fn select(&self, state: &SystemState, _rng: &mut SimRng) -> usize {
        let mut scratch = state.clone();
        crate::mdp::argmax_earliest((0..self.model.actions.len()).map(|a| self.action_value(state, a, &mut scratch)))
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

/// A policy by kind, resolved against a model with [`PolicyHandle::build`].
#[derive(Debug, Clone)]
pub enum PolicyHandle {
    NoAttack,
    Random,
    /// Jam `segment` (0-based) at `fraction` every step.
    DoS {
        segment: usize,
        fraction: f64,
    },
    Myopic,
    ApiGreedy(WeightVector),
    Tabular(TabularPolicy),
}

impl PolicyHandle {
    pub fn build(&self, model: &AttackModel) -> Result<Box<dyn Policy>> {
        Ok(match self {
            PolicyHandle::NoAttack => Box::new(ConstantPolicy { action: 0, label: self.to_string() }),
            PolicyHandle::Random => Box::new(RandomPolicy { num_actions: model.actions.len() }),
            PolicyHandle::DoS { segment, fraction } => {
                let wanted = AttackAction::Jam { segment: *segment, fraction: *fraction };
                let action =
                    model.actions.iter().position(|a| *a == wanted).ok_or_else(|| {
                        Error::config("policy", format!("{wanted} is not in the scenario's action set"))
                    })?;
                Box::new(ConstantPolicy { action, label: self.to_string() })
            }
            PolicyHandle::Myopic => Box::new(GreedyPolicy::myopic(model)),
            PolicyHandle::ApiGreedy(w) => Box::new(GreedyPolicy::with_weights(model, w)?),
            PolicyHandle::Tabular(t) => {
                if t.actions.iter().any(|&a| a >= model.actions.len()) {
                    return Err(Error::config("policy", "tabular policy uses an unknown action"));
                }
                Box::new(t.clone())
            }
        })
    }
}

/// The comparison set: no attack, random, every fixed jam, myopic.
pub fn baseline_handles(model: &AttackModel) -> Vec<PolicyHandle> {
    let mut out = vec![PolicyHandle::NoAttack, PolicyHandle::Random];
    out.extend(model.actions.iter().filter_map(|a| match *a {
        AttackAction::Jam { segment, fraction } => Some(PolicyHandle::DoS { segment, fraction }),
        AttackAction::NoAttack => None,
    }));
    out.push(PolicyHandle::Myopic);
    out
}

impl fmt::Display for PolicyHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyHandle::NoAttack => f.write_str("no-attack"),
            PolicyHandle::Random => f.write_str("random"),
            PolicyHandle::DoS { segment, fraction } => write!(f, "dos{}@{}", segment + 1, fraction),
            PolicyHandle::Myopic => f.write_str("myopic"),
            PolicyHandle::ApiGreedy(_) => f.write_str("api"),
            PolicyHandle::Tabular(_) => f.write_str("tabular"),
        }
    }
}

impl FromStr for PolicyHandle {
    type Err = Error;

    /// Parses the payload-free kinds: `no-attack`, `random`, `myopic`, `dosJ@F`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no-attack" => Ok(PolicyHandle::NoAttack),
            "random" => Ok(PolicyHandle::Random),
            "myopic" => Ok(PolicyHandle::Myopic),
            _ => {
                let bad = || Error::Parse(format!("unknown policy `{s}`"));
                let rest = s.strip_prefix("dos").ok_or_else(bad)?;
                let (seg, frac) = rest.split_once('@').ok_or_else(bad)?;
                let segment: usize = seg.parse().map_err(|_| bad())?;
                let fraction: f64 = frac.parse().map_err(|_| bad())?;
                if segment == 0 {
                    return Err(bad());
                }
                Ok(PolicyHandle::DoS { segment: segment - 1, fraction })
            }
        }
    }
}
