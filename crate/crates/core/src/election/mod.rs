//! Live ILV elections for human voters: instance definitions, an
//! event-sourced state machine, durable logs and an HTTP front end.

#[cfg(feature = "server")]
pub mod http;
pub mod service;
pub mod state;
pub mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{lq_norm, FeasibleRegion, NormOrder, Point};

pub use service::{ElectionService, VoteOutcome};
pub use state::{Event, EventRecord, InstanceState};

/// Relative slack allowed on the radius when validating a vote.
pub const RADIUS_SLACK: f64 = 1e-6;
/// Upper end of the elicitation weight sliders.
pub const MAX_WEIGHT: f64 = 10.0;
/// Weight sliders start here.
pub const DEFAULT_WEIGHT: f64 = 5.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    #[default]
    Expenditure,
    Income,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub label: String,
    pub baseline: f64,
    #[serde(default)]
    pub role: Role,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MechanismSpec {
    Constrained { q: NormOrder, r0: f64 },
    FullElicitation,
}

/// What happens to a partially filled batch when an instance closes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosePolicy {
    #[default]
    DiscardIncomplete,
    CommitPartial,
}

fn default_batch() -> usize {
    10
}

fn default_decay() -> u64 {
    60
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    #[serde(default)]
    pub name: String,
    pub mechanism: MechanismSpec,
    pub dims: Vec<Dimension>,
    /// One independent current point per set.
    #[serde(default)]
    pub starting_points: Vec<Point>,
    /// Defaults to the box from zero to twice each baseline.
    #[serde(default)]
    pub region: Option<FeasibleRegion>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_decay")]
    pub decay_interval: u64,
    #[serde(default)]
    pub close_policy: ClosePolicy,
}

impl InstanceSpec {
    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn region(&self) -> FeasibleRegion {
        match &self.region {
            Some(r) => r.clone(),
            None => FeasibleRegion::boxed(vec![0.0; self.dim()], self.slider_max())
                .expect("validated baselines"),
        }
    }

    /// Upper end of each ideal-point slider.
    pub fn slider_max(&self) -> Vec<f64> {
        self.dims.iter().map(|d| 2.0 * d.baseline).collect()
    }

    pub fn expenditure_dims(&self) -> Vec<usize> {
        self.dims_with(Role::Expenditure)
    }

    pub fn income_dims(&self) -> Vec<usize> {
        self.dims_with(Role::Income)
    }

    fn dims_with(&self, role: Role) -> Vec<usize> {
        self.dims.iter().enumerate().filter(|(_, d)| d.role == role).map(|(i, _)| i).collect()
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        let bad = |m: String| Err(ServiceError::InvalidSpec(m));
        if self.dims.is_empty() {
            return bad("at least one dimension is required".into());
        }
        for (i, d) in self.dims.iter().enumerate() {
            if !(d.baseline.is_finite() && d.baseline > 0.0) {
                return bad(format!("dimension {i} needs a positive baseline"));
            }
            if self.dims[..i].iter().any(|o| o.label == d.label) {
                return bad(format!("duplicate dimension label {:?}", d.label));
            }
        }
        if self.batch_size == 0 || self.decay_interval == 0 {
            return bad("batch size and decay interval must be positive".into());
        }
        if let Some(r) = &self.region {
            if r.dim() != self.dim() {
                return bad(format!("region has {} dims, instance has {}", r.dim(), self.dim()));
            }
        }
        let region = self.region();
        for (i, p) in self.starting_points.iter().enumerate() {
            if p.dim() != self.dim() {
                return bad(format!("starting point {i} has {} dims, instance has {}", p.dim(), self.dim()));
            }
            if !region.contains(p, 1e-9) {
                return bad(format!("starting point {i} is not feasible"));
            }
        }
        match self.mechanism {
            MechanismSpec::Constrained { q, r0 } => {
                q.validate().map_err(|e| ServiceError::InvalidSpec(e.to_string()))?;
                if !(r0 > 0.0 && r0.is_finite()) {
                    return bad("r0 must be positive".into());
                }
                if self.starting_points.is_empty() {
                    return bad("constrained instances need a starting point".into());
                }
            }
            MechanismSpec::FullElicitation => {}
        }
        Ok(())
    }
}

/// Instances created at server start-up.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    #[serde(default)]
    pub instances: Vec<InstanceSpec>,
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::InvalidSpec(e.to_string()))
    }
}

/// Credit a move uses: its ℒq length.
pub fn credit_usage(delta: &[f64], q: NormOrder) -> f64 {
    lq_norm(delta, q)
}

/// Whether a move of the given usage fits in radius `r`.
pub fn within_budget(usage: f64, r: f64) -> bool {
    usage <= r * (1.0 + RADIUS_SLACK)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Rejection {
    ConstraintViolated { usage: f64, radius: f64, overage: f64 },
    DuplicateSubmission,
    /// The vote was computed against an older commit.
    StalePoint { shown_version: u64, current_version: u64 },
    InstanceClosed,
    WrongMechanism,
    UnknownSet { set: usize },
    DimensionMismatch { expected: usize, got: usize },
    OutOfRange { field: String, index: usize, value: f64, min: f64, max: f64 },
    NotFinite,
}

impl Rejection {
    /// Whether fetching the current point again may make a retry valid.
    pub fn refresh(&self) -> bool {
        matches!(self, Rejection::StalePoint { .. })
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown instance {0}")]
    UnknownInstance(String),
    #[error("session {0} is not assigned to this instance")]
    NotAssigned(String),
    #[error("no open instance available")]
    NoOpenInstance,
    #[error("invalid instance: {0}")]
    InvalidSpec(String),
    #[error("rejected: {0:?}")]
    Rejected(Rejection),
    #[error("storage: {0}")]
    Storage(#[from] std::io::Error),
    #[error("corrupt event log: {0}")]
    Corrupt(String),
}
