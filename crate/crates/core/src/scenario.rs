//! JSON scenario files and the three bundled systems.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{AttackModel, RewardSpec};
use crate::traffic::{AdmissionRule, ArrivalAtom, ArrivalDistribution, Network, SegmentSpec, SystemState};

const SYSTEM1: &str = include_str!("../scenarios/system1.json");
const SYSTEM2: &str = include_str!("../scenarios/system2.json");
const SYSTEM3: &str = include_str!("../scenarios/system3.json");

/// Names accepted by [`load_scenario`] when no file exists at the given path.
pub const BUNDLED: [&str; 3] = ["system1", "system2", "system3"];

/// Queue length of every segment in the default starting state.
pub const GRID_DEFAULT_QUEUE: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    /// `"grid-default"`: every queue at [`GRID_DEFAULT_QUEUE`], honest ratios.
    Named(String),
    State(SystemState),
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Named("grid-default".into())
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub segments: Vec<SegmentSpec>,
    pub arrivals: Vec<ArrivalAtom>,
    pub jam_fractions: Vec<f64>,
    pub success_probability: f64,
    pub reward: RewardSpec,
    pub discount: f64,
    #[serde(default = "default_true")]
    pub charge_cost_on_failure: bool,
    #[serde(default)]
    pub initial_state: InitialState,
    pub seed: u64,
    #[serde(default)]
    pub admission_rule: AdmissionRule,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ScenarioConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn bundled(name: &str) -> Option<Self> {
        let text = match name {
            "system1" => SYSTEM1,
            "system2" => SYSTEM2,
            "system3" => SYSTEM3,
            _ => return None,
        };
        Some(Self::from_json(text).expect("bundled scenarios are valid"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn with_cost(mut self, cost: f64) -> Self {
        self.reward.cost_coefficient = cost;
        self
    }

    pub fn with_success_probability(mut self, p: f64) -> Self {
        self.success_probability = p;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn network(&self) -> Result<Network> {
        let segments = self
            .segments
            .iter()
            .enumerate()
            .map(|(i, s)| {
                SegmentSpec::new(s.service_rate)
                    .map_err(|_| Error::config(format!("segments[{i}].service_rate"), "must be positive"))
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(segments, self.admission_rule)
    }

    /// Checks every field constraint and builds the runtime model.
    pub fn model(&self) -> Result<AttackModel> {
        let network = self.network()?;
        let arrivals = ArrivalDistribution::new(self.arrivals.clone())?;
        for (i, f) in self.jam_fractions.iter().enumerate() {
            if !(*f > 0.0 && *f < 1.0) {
                return Err(Error::config(format!("jam_fractions[{i}]"), format!("{f} not in (0, 1)")));
            }
        }
        if self.jam_fractions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("jam_fractions", "must be strictly increasing"));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::config("discount", format!("{} not in (0, 1)", self.discount)));
        }
        if !(0.0..=1.0).contains(&self.success_probability) {
            return Err(Error::config("success_probability", format!("{} not in [0, 1]", self.success_probability)));
        }
        if !(self.reward.cost_coefficient >= 0.0 && self.reward.cost_coefficient.is_finite()) {
            return Err(Error::config("reward.cost_coefficient", "must be finite and non-negative"));
        }
        AttackModel::new(
            network,
            arrivals,
            &self.jam_fractions,
            self.success_probability,
            self.reward,
            self.discount,
            self.charge_cost_on_failure,
        )
        .map(|model| AttackModel { name: self.name.clone(), ..model })
        .map_err(|e| match e {
            Error::Unsupported(msg) => Error::config("reward.damage_kind", msg),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model()?;
        self.start_state(&model)?;
        Ok(())
    }

    pub fn start_state(&self, model: &AttackModel) -> Result<SystemState> {
        match &self.initial_state {
            InitialState::Named(name) if name == "grid-default" => {
                Ok(model.network.honest_state(vec![GRID_DEFAULT_QUEUE; model.segments()]))
            }
            InitialState::Named(name) => Err(Error::config(
                "initial_state",
                format!("unknown name `{name}` (expected \"grid-default\" or a state object)"),
            )),
            InitialState::State(state) => {
                if state.segments() != model.segments() {
                    return Err(Error::config("initial_state", "segment count differs from `segments`"));
                }
                state.validate().map_err(|e| Error::config("initial_state", e.to_string()))?;
                Ok(state.clone())
            }
        }
    }
}

/// Reads a scenario file, falling back to the bundled systems by name.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    if !path.exists() {
        if let Some(config) = path.to_str().and_then(ScenarioConfig::bundled) {
            return Ok(config);
        }
    }
    let text = std::fs::read_to_string(path)?;
    ScenarioConfig::from_json(&text)
}
