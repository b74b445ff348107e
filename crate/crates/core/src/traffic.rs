//! Queue dynamics at a single decision point feeding `n` parallel segments.
//!
//! One step of the simulator, from state `(q, α)` under attack action `u`:
//!
//! 1. the access points measure `q`; a successful jam hides a fraction of
//!    one segment's vehicles, giving the estimate `q̂`;
//! 2. the decision point computes the next advertised ratios `α' = f(q̂)`;
//! 3. this step's arrivals are split by the *current* ratios `α`;
//! 4. each segment discharges `β(i)` vehicles, floored at zero.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::AttackAction;

/// Tolerance on the sum of an arrival pmf.
pub const PMF_TOLERANCE: f64 = 1e-12;
/// Tolerance on the sum of an admission vector.
pub const ADMISSION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    /// Vehicles discharged per time step.
    pub service_rate: f64,
}

impl SegmentSpec {
    pub fn new(service_rate: f64) -> Result<Self> {
        if !(service_rate.is_finite() && service_rate > 0.0) {
            return Err(Error::config("service_rate", format!("must be positive, got {service_rate}")));
        }
        Ok(Self { service_rate })
    }
}

/// One atom of the arrival pmf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalAtom {
    pub count: u32,
    pub probability: f64,
}

/// Finite-support distribution of vehicles arriving per step.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ArrivalDistribution {
    support: Vec<ArrivalAtom>,
}

impl ArrivalDistribution {
    pub fn new(support: Vec<ArrivalAtom>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::config("arrivals", "support is empty"));
        }
        let mut total = 0.0;
        for (i, atom) in support.iter().enumerate() {
            if !(0.0..=1.0).contains(&atom.probability) {
                return Err(Error::config(
                    format!("arrivals[{i}].probability"),
                    format!("must lie in [0, 1], got {}", atom.probability),
                ));
            }
            if support[..i].iter().any(|a| a.count == atom.count) {
                return Err(Error::config(format!("arrivals[{i}].count"), format!("duplicate count {}", atom.count)));
            }
            total += atom.probability;
        }
        if (total - 1.0).abs() > PMF_TOLERANCE {
            return Err(Error::config("arrivals", format!("probabilities sum to {total}, expected 1")));
        }
        Ok(Self { support })
    }

    /// Every draw returns `count`.
    pub fn point_mass(count: u32) -> Self {
        Self { support: vec![ArrivalAtom { count, probability: 1.0 }] }
    }

    pub fn support(&self) -> &[ArrivalAtom] {
        &self.support
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().map(|a| f64::from(a.count) * a.probability).sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.support.iter().map(|a| a.probability * (f64::from(a.count) - mean).powi(2)).sum()
    }

    /// Inverse-CDF draw; consumes exactly one `f64` from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for atom in &self.support {
            acc += atom.probability;
            if u < acc {
                return atom.count;
            }
        }
        // u landed in the rounding gap above the last cumulative sum.
        self.support.iter().rev().find(|a| a.probability > 0.0).map_or(self.support[0].count, |a| a.count)
    }
}

/// Queue lengths plus the admission ratios currently advertised to drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub queues: Vec<f64>,
    pub admission: Vec<f64>,
}

impl SystemState {
    pub fn new(queues: Vec<f64>, admission: Vec<f64>) -> Result<Self> {
        let state = Self { queues, admission };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        if self.queues.len() != self.admission.len() {
            return Err(Error::LengthMismatch { expected: self.queues.len(), actual: self.admission.len() });
        }
        if let Some(q) = self.queues.iter().find(|q| !(q.is_finite() && **q >= 0.0)) {
            return Err(Error::config("queues", format!("negative or non-finite entry {q}")));
        }
        if self.admission.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::config("admission", "entries must lie in [0, 1]"));
        }
        let sum: f64 = self.admission.iter().sum();
        if (sum - 1.0).abs() > ADMISSION_TOLERANCE {
            return Err(Error::config("admission", format!("sums to {sum}, expected 1")));
        }
        Ok(())
    }

    pub fn segments(&self) -> usize {
        self.queues.len()
    }
}

/// Queue lengths as reported to the decision point.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub estimates: Vec<f64>,
}

/// How the decision point turns load estimates into admission ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmissionRule {
    /// `α(i) = (S − w_i) / ((n − 1) S)` with `w_i = q̂(i)/β(i)`, `S = Σ w`.
    #[default]
    InverseLoad,
    /// Everything to the segment with the smallest `q̂(i)/β(i)`; ties split evenly.
    LeastLoaded,
}

/// Inverse-load admission ratios.
pub fn admission_ratios(estimates: &Observation, segments: &[SegmentSpec]) -> Vec<f64> {
    AdmissionRule::InverseLoad.ratios(&estimates.estimates, segments)
}

impl AdmissionRule {
    pub fn ratios(self, estimates: &[f64], segments: &[SegmentSpec]) -> Vec<f64> {
        (0..segments.len()).map(|i| self.ratio(estimates, segments, i)).collect()
    }

    /// Entry `i` of [`AdmissionRule::ratios`] without building the vector.
    pub fn ratio(self, estimates: &[f64], segments: &[SegmentSpec], i: usize) -> f64 {
        debug_assert_eq!(estimates.len(), segments.len());
        let load = |j: usize| estimates[j] / segments[j].service_rate;
        let n = segments.len();
        let total: f64 = (0..n).map(load).sum();
        if total <= 0.0 {
            let capacity: f64 = segments.iter().map(|s| s.service_rate).sum();
            return segments[i].service_rate / capacity;
        }
        match self {
            AdmissionRule::InverseLoad => (total - load(i)) / ((n - 1) as f64 * total),
            AdmissionRule::LeastLoaded => {
                let min = (0..n).map(load).fold(f64::INFINITY, f64::min);
                if load(i) == min {
                    1.0 / (0..n).filter(|&j| load(j) == min).count() as f64
                } else {
                    0.0
                }
            }
        }
    }
}

/// Applies a jam attempt to the true queues.
pub fn observe(queues: &[f64], action: &AttackAction, success: bool) -> Observation {
    let mut estimates = queues.to_vec();
    if let (AttackAction::Jam { segment, fraction }, true) = (action, success) {
        estimates[*segment] *= 1.0 - fraction;
    }
    Observation { estimates }
}

/// Segments plus the decision point's admission rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub segments: Vec<SegmentSpec>,
    pub rule: AdmissionRule,
}

impl Network {
    pub fn new(segments: Vec<SegmentSpec>, rule: AdmissionRule) -> Result<Self> {
        if segments.len() < 2 {
            return Err(Error::config("segments", "need at least two segments"));
        }
        Ok(Self { segments, rule })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn service_rate(&self, i: usize) -> f64 {
        self.segments[i].service_rate
    }

    /// Admission ratios the decision point would advertise given `estimates`.
    pub fn ratios(&self, estimates: &[f64]) -> Vec<f64> {
        self.rule.ratios(estimates, &self.segments)
    }

    /// Ratios computed from undistorted queues.
    pub fn true_ratios(&self, queues: &[f64]) -> Vec<f64> {
        self.ratios(queues)
    }

    /// Entry `i` of [`Network::true_ratios`].
    pub fn true_ratio(&self, queues: &[f64], i: usize) -> f64 {
        self.rule.ratio(queues, &self.segments, i)
    }

    /// A state whose advertised ratios match its queues.
    pub fn honest_state(&self, queues: Vec<f64>) -> SystemState {
        let admission = self.true_ratios(&queues);
        SystemState { queues, admission }
    }

    /// One simulator step; deterministic given `arrivals` and `success`.
    pub fn transition(&self, state: &SystemState, action: &AttackAction, arrivals: u32, success: bool) -> SystemState {
        let n = state.segments();
        let mut next = SystemState { queues: Vec::with_capacity(n), admission: Vec::with_capacity(n) };
        self.transition_into(state, action, arrivals, success, &mut next);
        next
    }

    /// [`Network::transition`] writing into `next`, reusing its buffers.
    pub fn transition_into(
        &self,
        state: &SystemState,
        action: &AttackAction,
        arrivals: u32,
        success: bool,
        next: &mut SystemState,
    ) {
        // next.queues holds the (possibly jammed) estimates until the ratios are known
        next.queues.clear();
        next.queues.extend_from_slice(&state.queues);
        if let (AttackAction::Jam { segment, fraction }, true) = (action, success) {
            next.queues[*segment] *= 1.0 - fraction;
        }
        next.admission.clear();
        next.admission.extend((0..self.len()).map(|i| self.rule.ratio(&next.queues, &self.segments, i)));

        let lambda = f64::from(arrivals);
        next.queues.clear();
        next.queues.extend(
            state
                .queues
                .iter()
                .zip(&state.admission)
                .zip(&self.segments)
                .map(|((q, a), s)| (q + a * lambda - s.service_rate).max(0.0)),
        );
    }
}
