//! Comparison policies and the policy interface shared with trained agents.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::agent::{greedy_action, q_values, Pooling};
use crate::error::{Error, Result};
use crate::neural::QNetwork;
use crate::observe::{Observation, WeightScheme};
use crate::sim::{hdv_lane_change_decision, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    NoLaneChange,
    RuleBased,
    DsqUniform,
    DsqLinear,
    DsqQuadratic,
    DsqUnnormalizedSum,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::NoLaneChange,
        PolicyKind::RuleBased,
        PolicyKind::DsqUniform,
        PolicyKind::DsqLinear,
        PolicyKind::DsqQuadratic,
        PolicyKind::DsqUnnormalizedSum,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::NoLaneChange => "no-lane-change",
            PolicyKind::RuleBased => "rule-based",
            PolicyKind::DsqUniform => "dsq-uniform",
            PolicyKind::DsqLinear => "dsq-linear",
            PolicyKind::DsqQuadratic => "dsq-quadratic",
            PolicyKind::DsqUnnormalizedSum => "dsq-sum",
        }
    }

    /// Pooling of the learned variants; `None` for the fixed baselines.
    pub fn pooling(&self) -> Option<Pooling> {
        match self {
            PolicyKind::NoLaneChange | PolicyKind::RuleBased => None,
            PolicyKind::DsqUniform => Some(Pooling::Weighted(WeightScheme::Uniform)),
            PolicyKind::DsqLinear => Some(Pooling::Weighted(WeightScheme::Linear)),
            PolicyKind::DsqQuadratic => Some(Pooling::Weighted(WeightScheme::Quadratic)),
            PolicyKind::DsqUnnormalizedSum => Some(Pooling::UnnormalizedSum),
        }
    }

    pub fn from_pooling(pooling: Pooling) -> Self {
        match pooling {
            Pooling::Weighted(WeightScheme::Uniform) => PolicyKind::DsqUniform,
            Pooling::Weighted(WeightScheme::Linear) => PolicyKind::DsqLinear,
            Pooling::Weighted(WeightScheme::Quadratic) => PolicyKind::DsqQuadratic,
            Pooling::UnnormalizedSum => PolicyKind::DsqUnnormalizedSum,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        let kind = match key.as_str() {
            "no-lane-change" | "nolanechange" | "no-lc" => PolicyKind::NoLaneChange,
            "rule-based" | "rulebased" | "rule" => PolicyKind::RuleBased,
            "dsq-uniform" | "dsquniform" | "uniform" => PolicyKind::DsqUniform,
            "dsq-linear" | "dsqlinear" | "linear" => PolicyKind::DsqLinear,
            "dsq-quadratic" | "dsqquadratic" | "quadratic" => PolicyKind::DsqQuadratic,
            "dsq-sum" | "dsqunnormalizedsum" | "dsq-unnormalized-sum" | "sum" => PolicyKind::DsqUnnormalizedSum,
            _ => {
                let names: Vec<&str> = PolicyKind::ALL.iter().map(|k| k.name()).collect();
                return Err(Error::Config(format!("unknown policy '{s}'; expected one of {}", names.join(", "))));
            }
        };
        Ok(kind)
    }
}

/// Chooses the CAV action each step.
pub trait Policy {
    fn act(&mut self, obs: &Observation, world: &WorldState) -> Action;
}

pub fn no_lane_change_policy(_obs: &Observation) -> Action {
    Action::KeepLane
}

/// The HDV incentive/safety rule applied to the CAV.
pub fn rule_based_policy(world: &WorldState) -> Action {
    hdv_lane_change_decision(world, world.cav_index())
}

pub struct NoLaneChange;

impl Policy for NoLaneChange {
    fn act(&mut self, obs: &Observation, _world: &WorldState) -> Action {
        no_lane_change_policy(obs)
    }
}

pub struct RuleBased;

impl Policy for RuleBased {
    fn act(&mut self, _obs: &Observation, world: &WorldState) -> Action {
        rule_based_policy(world)
    }
}

/// Greedy (ε = 0) policy of a trained Q network.
pub struct Greedy<'a> {
    pub net: &'a QNetwork,
    pub pooling: Pooling,
}

impl Policy for Greedy<'_> {
    fn act(&mut self, obs: &Observation, _world: &WorldState) -> Action {
        let q = q_values(obs, self.net, self.pooling).expect("observation rows are 3 wide");
        greedy_action(&q, &obs.action_mask)
    }
}

impl<F: FnMut(&Observation, &WorldState) -> Action> Policy for F {
    fn act(&mut self, obs: &Observation, world: &WorldState) -> Action {
        self(obs, world)
    }
}
