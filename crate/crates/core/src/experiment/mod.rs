//! Declarative experiment plans, the parallel runner and its report.

pub mod presets;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::BehaviorModel;
use crate::engine::{
    max_pairwise_linf, net_normalized_movement, run_ilv, IlvConfig, RadiusSchedule, Trajectory,
};
use crate::geometry::{lq_distance, FeasibleRegion, NormOrder, Point};
use crate::oracles::{
    directional_eq_residual, frozen_sample, median_oracle, sample_objective,
    social_optimum_for_sample, OracleError, OracleResult, ResidualEstimate,
};
use crate::population::{Family, PopulationError, PopulationSpec};
use crate::utility::UtilityModel;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("cannot parse plan: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Population(#[from] PopulationError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("unknown run id {0}")]
    UnknownRun(String),
    #[error("run {id} failed: {message}")]
    RunFailed { id: String, message: String },
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    pub q: NormOrder,
    pub behavior: BehaviorModel,
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "q={} {}", self.q, self.behavior)
    }
}

/// Engine settings that replace the defaults when present.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineOverrides {
    pub schedule: Option<RadiusSchedule>,
    pub batch_size: Option<usize>,
    pub window: Option<usize>,
    pub tolerance: Option<f64>,
    pub max_updates: Option<usize>,
    pub per_response_projection: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridOracleSpec {
    #[serde(default = "default_grid_voters")]
    pub n_voters: usize,
    pub grid_res: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MedianOracleSpec {
    #[serde(default = "default_median_voters")]
    pub n_voters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSpec {
    #[serde(default = "default_residual_samples")]
    pub n_samples: usize,
}

fn default_grid_voters() -> usize {
    10_000
}

fn default_median_voters() -> usize {
    100_000
}

fn default_residual_samples() -> usize {
    100_000
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSelection {
    pub social_optimum: Option<GridOracleSpec>,
    pub median: Option<MedianOracleSpec>,
    pub residual: Option<ResidualSpec>,
}

fn default_groups() -> usize {
    1
}

fn default_movement_window() -> usize {
    30
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    pub population: PopulationSpec,
    pub region: FeasibleRegion,
    pub mechanisms: Vec<Mechanism>,
    pub starting_points: Vec<Point>,
    /// Independent voter streams per mechanism; starts within a group share
    /// the stream.
    #[serde(default = "default_groups")]
    pub groups: usize,
    #[serde(default)]
    pub engine: EngineOverrides,
    #[serde(default)]
    pub oracles: OracleSelection,
    #[serde(default = "default_movement_window")]
    pub movement_window: usize,
}

impl ExperimentPlan {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let plan: ExperimentPlan = toml::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidPlan(m));
        if self.mechanisms.is_empty() {
            return bad("at least one mechanism is required".into());
        }
        if self.starting_points.is_empty() {
            return bad("at least one starting point is required".into());
        }
        if self.groups == 0 {
            return bad("groups must be at least 1".into());
        }
        self.population.validate()?;
        if self.population.dim() != self.region.dim() {
            return bad(format!(
                "population has {} dims, region has {}",
                self.population.dim(),
                self.region.dim()
            ));
        }
        for (i, p) in self.starting_points.iter().enumerate() {
            if p.dim() != self.region.dim() || !self.region.contains(p, 1e-9) {
                return bad(format!("starting point {i} is not feasible"));
            }
        }
        Ok(())
    }

    /// Engine config for one mechanism and starting point.
    pub fn config(&self, mechanism: Mechanism, start: usize) -> IlvConfig {
        let mut cfg = IlvConfig::with_defaults(self.region.clone(), mechanism.behavior, mechanism.q);
        cfg.initial = self.starting_points[start].clone();
        let o = &self.engine;
        if let Some(s) = o.schedule {
            cfg.schedule = s;
        }
        if let Some(b) = o.batch_size {
            cfg.batch_size = b;
        }
        if let Some(w) = o.window {
            cfg.stopping.window = w;
        }
        if let Some(t) = o.tolerance {
            cfg.stopping.tolerance = t;
        }
        if let Some(t) = o.max_updates {
            cfg.stopping.max_updates = t;
        }
        if let Some(p) = o.per_response_projection {
            cfg.per_response_projection = p;
        }
        cfg
    }

    /// Every (mechanism, group, start) combination in report order.
    pub fn run_keys(&self) -> Vec<RunKey> {
        let mut keys = Vec::new();
        for m in 0..self.mechanisms.len() {
            for g in 0..self.groups {
                for s in 0..self.starting_points.len() {
                    keys.push(RunKey {
                        mechanism: m,
                        group: g,
                        start: s,
                    });
                }
            }
        }
        keys
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunKey {
    pub mechanism: usize,
    pub group: usize,
    pub start: usize,
}

impl RunKey {
    pub fn id(&self) -> String {
        format!("m{}-g{}-s{}", self.mechanism, self.group, self.start)
    }

    pub fn parse(id: &str) -> Option<RunKey> {
        let mut parts = id.split('-');
        let mut field = |prefix: char| -> Option<usize> { parts.next()?.strip_prefix(prefix)?.parse().ok() };
        let key = RunKey {
            mechanism: field('m')?,
            group: field('g')?,
            start: field('s')?,
        };
        parts.next().is_none().then_some(key)
    }

    /// Voter substream; shared by the starting points of a group.
    pub fn substream(&self) -> u64 {
        ((self.mechanism as u64) << 32) | self.group as u64
    }
}

/// Whether the theory covers this population family and mechanism.
pub fn theory_guarantee(family: &Family, m: Mechanism) -> bool {
    use BehaviorModel::*;
    use NormOrder::*;
    match family {
        Family::LpNormed { p } => match m.behavior {
            ModelA => matches!((p, m.q), (Two, Two) | (One, Infinity) | (Infinity, One)),
            ModelB => is_dual_pair(*p, m.q),
        },
        Family::WeightedEuclidean { .. } => m.q == Two,
        Family::Decomposable { .. } | Family::Dlcd { .. } => m.q == Infinity && m.behavior == ModelA,
    }
}

fn is_dual_pair(p: NormOrder, q: NormOrder) -> bool {
    let inv = |n: NormOrder| match n {
        NormOrder::Infinity => 0.0,
        other => 1.0 / other.exponent(),
    };
    (inv(p) + inv(q) - 1.0).abs() < 1e-9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub key: RunKey,
    pub mechanism: Mechanism,
    pub seed: u64,
    pub substream: u64,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub terminal: Option<Point>,
    pub updates: usize,
    pub bad_region_count: usize,
    pub net_movement_tail: Option<Vec<f64>>,
    pub distance_to_optimum: Option<f64>,
    pub objective: Option<f64>,
    pub relative_objective_gap: Option<f64>,
    pub distance_to_median: Option<f64>,
    pub residual: Option<ResidualEstimate>,
}

impl RunRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismSummary {
    pub index: usize,
    pub mechanism: Mechanism,
    pub theoretical_guarantee: bool,
    pub runs: usize,
    pub failed: usize,
    pub converged: usize,
    /// Max pairwise ℒ∞ distance between successful terminal points.
    pub dispersion: Option<f64>,
    pub max_distance_to_optimum: Option<f64>,
    pub max_distance_to_median: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleTargets {
    pub social_optimum: Option<OracleResult>,
    pub median: Option<OracleResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub plan: ExperimentPlan,
    pub oracles: OracleTargets,
    pub mechanisms: Vec<MechanismSummary>,
    pub runs: Vec<RunRecord>,
}

impl RunReport {
    pub fn run(&self, id: &str) -> Option<&RunRecord> {
        self.runs.iter().find(|r| r.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Report plus the trajectory of every successful run, in report order.
pub struct PlanOutput {
    pub report: RunReport,
    pub trajectories: Vec<Option<Trajectory>>,
}

/// Executes every run of the plan on a pool of `workers` threads (0 means
/// one per processor). Failed runs are recorded and do not stop the plan.
pub fn run_plan(plan: &ExperimentPlan, workers: usize) -> Result<PlanOutput, ExperimentError> {
    plan.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    pool.install(|| run_plan_in_pool(plan))
}

fn run_plan_in_pool(plan: &ExperimentPlan) -> Result<PlanOutput, ExperimentError> {
    use rayon::prelude::*;

    let oracle_voters: Option<Vec<UtilityModel>> = plan
        .oracles
        .social_optimum
        .as_ref()
        .map(|o| frozen_sample(&plan.population, o.n_voters));
    let social_optimum = match (&plan.oracles.social_optimum, &oracle_voters) {
        (Some(o), Some(voters)) => Some(social_optimum_for_sample(voters, &plan.region, o.grid_res)?),
        _ => None,
    };
    let median = plan
        .oracles
        .median
        .as_ref()
        .map(|o| median_oracle(&plan.population, o.n_voters));
    let targets = OracleTargets {
        social_optimum,
        median,
    };

    let keys = plan.run_keys();
    let results: Vec<(RunRecord, Option<Trajectory>)> = keys
        .par_iter()
        .map(|key| execute_run(plan, *key, &targets, oracle_voters.as_deref()))
        .collect();
    let (runs, trajectories): (Vec<_>, Vec<_>) = results.into_iter().unzip();

    let mechanisms = plan
        .mechanisms
        .iter()
        .enumerate()
        .map(|(index, &mechanism)| summarize(index, mechanism, &plan.population.family, &runs))
        .collect();
    Ok(PlanOutput {
        report: RunReport {
            plan: plan.clone(),
            oracles: targets,
            mechanisms,
            runs,
        },
        trajectories,
    })
}

fn summarize(index: usize, mechanism: Mechanism, family: &Family, runs: &[RunRecord]) -> MechanismSummary {
    let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.key.mechanism == index).collect();
    let terminals: Vec<Point> = mine.iter().filter_map(|r| r.terminal.clone()).collect();
    let max_of = |f: fn(&RunRecord) -> Option<f64>| {
        mine.iter().filter_map(|r| f(r)).fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
    };
    MechanismSummary {
        index,
        mechanism,
        theoretical_guarantee: theory_guarantee(family, mechanism),
        runs: mine.len(),
        failed: mine.iter().filter(|r| !r.ok()).count(),
        converged: mine.iter().filter(|r| r.status == "converged").count(),
        dispersion: (!terminals.is_empty()).then(|| max_pairwise_linf(&terminals)),
        max_distance_to_optimum: max_of(|r| r.distance_to_optimum),
        max_distance_to_median: max_of(|r| r.distance_to_median),
    }
}

/// Re-runs one run of a plan from its key.
pub fn replay_run(plan: &ExperimentPlan, key: RunKey) -> Result<Trajectory, ExperimentError> {
    if key.mechanism >= plan.mechanisms.len() || key.group >= plan.groups || key.start >= plan.starting_points.len() {
        return Err(ExperimentError::UnknownRun(key.id()));
    }
    let cfg = plan.config(plan.mechanisms[key.mechanism], key.start);
    let mut stream = plan.population.substream(key.substream());
    run_ilv(&cfg, &mut stream).map_err(|e| ExperimentError::RunFailed {
        id: key.id(),
        message: e.to_string(),
    })
}

fn execute_run(
    plan: &ExperimentPlan,
    key: RunKey,
    targets: &OracleTargets,
    oracle_voters: Option<&[UtilityModel]>,
) -> (RunRecord, Option<Trajectory>) {
    let mechanism = plan.mechanisms[key.mechanism];
    let mut record = RunRecord {
        id: key.id(),
        key,
        mechanism,
        seed: plan.population.seed,
        substream: key.substream(),
        status: "failed".into(),
        error: None,
        terminal: None,
        updates: 0,
        bad_region_count: 0,
        net_movement_tail: None,
        distance_to_optimum: None,
        objective: None,
        relative_objective_gap: None,
        distance_to_median: None,
        residual: None,
    };
    let traj = match replay_run(plan, key) {
        Ok(t) => t,
        Err(e) => {
            log::warn!("run {} failed: {e}", record.id);
            record.error = Some(e.to_string());
            return (record, None);
        }
    };
    let x = traj.terminal.point().clone();
    record.status = traj.terminal.label().into();
    record.updates = traj.updates();
    record.bad_region_count = traj.bad_region_count();
    let n = plan.movement_window.min(traj.updates());
    if n > 0 {
        record.net_movement_tail = net_normalized_movement(&traj, traj.updates(), n).ok();
    }
    if let (Some(opt), Some(voters)) = (&targets.social_optimum, oracle_voters) {
        record.distance_to_optimum = Some(lq_distance(&x, &opt.point, NormOrder::Infinity));
        if let Ok(obj) = sample_objective(voters, &x) {
            record.objective = Some(obj);
            record.relative_objective_gap = Some((opt.objective - obj) / opt.objective.abs().max(f64::MIN_POSITIVE));
        }
    }
    if let Some(med) = &targets.median {
        record.distance_to_median = Some(lq_distance(&x, &med.point, NormOrder::Infinity));
    }
    if let Some(res) = &plan.oracles.residual {
        record.residual = directional_eq_residual(&x, &plan.population, res.n_samples).ok();
    }
    record.terminal = Some(x);
    (record, Some(traj))
}
