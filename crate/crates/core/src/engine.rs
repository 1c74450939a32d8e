//! The ILV loop: sample voters, collect a batch of responses against the
//! committed point, average, project, decay the radius, stop.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{respond, BehaviorError, BehaviorModel};
use crate::geometry::{mean_point, FeasibleRegion, GeometryError, NormOrder, Point};
use crate::population::VoterStream;

/// Feasibility tolerance for recorded iterates.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("voter {voter} failed at update {t} from {x:?}: {source}")]
    Response {
        voter: u64,
        t: usize,
        x: Vec<f64>,
        #[source]
        source: BehaviorError,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("window of {window} steps ending at {t} exceeds trajectory of length {len}")]
    WindowTooLarge { t: usize, window: usize, len: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadiusSchedule {
    /// `r0 / t`, with `t` counted in updates.
    Harmonic { r0: f64 },
    /// `r0 / ceil(s / decay_interval)`, with `s` counted in submissions.
    Stepped { r0: f64, decay_interval: u64 },
}

impl RadiusSchedule {
    pub fn r0(&self) -> f64 {
        match *self {
            RadiusSchedule::Harmonic { r0 } | RadiusSchedule::Stepped { r0, .. } => r0,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let ok = match *self {
            RadiusSchedule::Harmonic { r0 } => r0 > 0.0 && r0.is_finite(),
            RadiusSchedule::Stepped { r0, decay_interval } => {
                r0 > 0.0 && r0.is_finite() && decay_interval >= 1
            }
        };
        if ok {
            Ok(())
        } else {
            Err(EngineError::InvalidConfig(format!("bad radius schedule {self:?}")))
        }
    }

    /// Radius in force for update `t` when each update consumes
    /// `batch_size` submissions.
    pub fn radius_for_update(&self, t: usize, batch_size: usize) -> f64 {
        match self {
            RadiusSchedule::Harmonic { .. } => radius_at(self, t as u64),
            RadiusSchedule::Stepped { .. } => {
                let first_submission = (t as u64 - 1) * batch_size as u64 + 1;
                radius_at(self, first_submission)
            }
        }
    }
}

/// Radius at counter `t` (updates for harmonic, submissions for stepped).
pub fn radius_at(schedule: &RadiusSchedule, t: u64) -> f64 {
    assert!(t >= 1, "radius counter starts at 1");
    match *schedule {
        RadiusSchedule::Harmonic { r0 } => r0 / t as f64,
        RadiusSchedule::Stepped { r0, decay_interval } => r0 / t.div_ceil(decay_interval) as f64,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub window: usize,
    pub tolerance: f64,
    pub max_updates: usize,
}

impl StoppingRule {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.window >= 2 && self.tolerance > 0.0 && self.max_updates >= self.window {
            Ok(())
        } else {
            Err(EngineError::InvalidConfig(format!("bad stopping rule {self:?}")))
        }
    }
}

/// Whether the max pairwise ℒ∞ distance within `window` is at most the
/// rule's tolerance.
pub fn stopping_check(window: &[Point], rule: &StoppingRule) -> bool {
    max_pairwise_linf(window) <= rule.tolerance
}

/// Max pairwise ℒ∞ distance, which is the largest per-dimension range.
pub fn max_pairwise_linf(points: &[Point]) -> f64 {
    let Some(first) = points.first() else {
        return 0.0;
    };
    let mut spread: f64 = 0.0;
    for m in 0..first.dim() {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in points {
            lo = lo.min(p[m]);
            hi = hi.max(p[m]);
        }
        spread = spread.max(hi - lo);
    }
    spread
}

fn default_batch() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IlvConfig {
    pub schedule: RadiusSchedule,
    pub stopping: StoppingRule,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub behavior: BehaviorModel,
    pub q: NormOrder,
    pub region: FeasibleRegion,
    pub initial: Point,
    /// Project each response before averaging instead of the average.
    #[serde(default)]
    pub per_response_projection: bool,
}

impl IlvConfig {
    /// Defaults: `r0` at 20% of the ℒ∞ diameter, batches of 10, decay every
    /// 60 submissions, window 30, tolerance 0.1% of the diameter, 5000
    /// updates, starting at the region's centre.
    pub fn with_defaults(region: FeasibleRegion, behavior: BehaviorModel, q: NormOrder) -> Self {
        let diameter = region.linf_diameter();
        let initial = region.center();
        IlvConfig {
            schedule: RadiusSchedule::Stepped {
                r0: 0.2 * diameter,
                decay_interval: 60,
            },
            stopping: StoppingRule {
                window: 30,
                tolerance: 1e-3 * diameter,
                max_updates: 5000,
            },
            batch_size: 10,
            behavior,
            q,
            region,
            initial,
            per_response_projection: false,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.schedule.validate()?;
        self.stopping.validate()?;
        self.q.validate()?;
        if self.batch_size == 0 {
            return Err(EngineError::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.initial.dim() != self.region.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.region.dim(),
                got: self.initial.dim(),
            }
            .into());
        }
        if !self.region.contains(&self.initial, FEASIBILITY_TOL) {
            return Err(EngineError::InvalidConfig("initial point is infeasible".into()));
        }
        Ok(())
    }

    pub fn radius(&self, t: usize) -> f64 {
        self.schedule.radius_for_update(t, self.batch_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub t: usize,
    /// `None` for the initial point.
    pub r: Option<f64>,
    pub x: Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub t: usize,
    pub voter: u64,
    pub response: Point,
    pub bad_region: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Terminal {
    Converged { x: Point },
    HitCap { x: Point },
}

impl Terminal {
    pub fn point(&self) -> &Point {
        match self {
            Terminal::Converged { x } | Terminal::HitCap { x } => x,
        }
    }

    pub fn converged(&self) -> bool {
        matches!(self, Terminal::Converged { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Terminal::Converged { .. } => "converged",
            Terminal::HitCap { .. } => "hit_cap",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub iterates: Vec<Iterate>,
    pub responses: Vec<ResponseRecord>,
    pub terminal: Terminal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub status: String,
    pub final_point: Point,
    pub iterations: usize,
    pub bad_region_count: usize,
}

impl Trajectory {
    /// Number of updates performed.
    pub fn updates(&self) -> usize {
        self.iterates.len() - 1
    }

    pub fn bad_region_count(&self) -> usize {
        self.responses.iter().filter(|r| r.bad_region).count()
    }

    pub fn summary(&self) -> TrajectorySummary {
        TrajectorySummary {
            status: self.terminal.label().to_string(),
            final_point: self.terminal.point().clone(),
            iterations: self.updates(),
            bad_region_count: self.bad_region_count(),
        }
    }

    /// Tab-separated rows `t r x1 .. xM`, then a `#summary` line.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let dim = self.iterates[0].x.dim();
        let mut header = vec!["t".to_string(), "r".to_string()];
        header.extend((1..=dim).map(|m| format!("x{m}")));
        writeln!(out, "{}", header.join("\t"))?;
        for it in &self.iterates {
            let mut row = vec![it.t.to_string(), it.r.map(|r| r.to_string()).unwrap_or_default()];
            row.extend(it.x.iter().map(|v| v.to_string()));
            writeln!(out, "{}", row.join("\t"))?;
        }
        let s = self.summary();
        let coords: Vec<String> = s.final_point.iter().map(|v| v.to_string()).collect();
        writeln!(
            out,
            "#summary\t{}\t{}\t{}\t{}",
            s.status,
            s.iterations,
            s.bad_region_count,
            coords.join(",")
        )
    }

    /// One `{t, r, x}` object per line, then `{"summary": ...}`.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for it in &self.iterates {
            serde_json::to_writer(&mut out, it)?;
            writeln!(out)?;
        }
        serde_json::to_writer(&mut out, &serde_json::json!({ "summary": self.summary() }))?;
        writeln!(out)
    }
}

/// Runs ILV until the stopping rule fires or the update cap is reached.
pub fn run_ilv(config: &IlvConfig, stream: &mut VoterStream) -> Result<Trajectory, EngineError> {
    config.validate()?;
    if stream.spec().dim() != config.region.dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: config.region.dim(),
            got: stream.spec().dim(),
        }
        .into());
    }
    let rule = config.stopping;
    let mut x = config.initial.clone();
    let mut iterates = vec![Iterate {
        t: 0,
        r: None,
        x: x.clone(),
    }];
    let mut responses = Vec::with_capacity(rule.max_updates.min(1 << 16) * config.batch_size);
    let mut batch = Vec::with_capacity(config.batch_size);

    for t in 1..=rule.max_updates {
        let r = config.radius(t);
        batch.clear();
        for _ in 0..config.batch_size {
            let voter = stream.cursor();
            let u = stream.sample_voter();
            let resp = respond(config.behavior, &u, &x, r, config.q).map_err(|source| {
                EngineError::Response {
                    voter,
                    t,
                    x: x.0.clone(),
                    source,
                }
            })?;
            let point = if config.per_response_projection {
                config.region.project(&resp.new_point)?
            } else {
                resp.new_point
            };
            responses.push(ResponseRecord {
                t,
                voter,
                response: point.clone(),
                bad_region: resp.bad_region,
            });
            batch.push(point);
        }
        x = config.region.project(&mean_point(&batch))?;
        iterates.push(Iterate {
            t,
            r: Some(r),
            x: x.clone(),
        });
        if t >= rule.window {
            let window: Vec<Point> = iterates[t - rule.window..].iter().map(|i| i.x.clone()).collect();
            if stopping_check(&window, &rule) {
                return Ok(Trajectory {
                    iterates,
                    responses,
                    terminal: Terminal::Converged { x },
                });
            }
        }
    }
    Ok(Trajectory {
        iterates,
        responses,
        terminal: Terminal::HitCap { x },
    })
}

/// Mean of `(x_s - x_{s-1}) / r_s` over the `n` updates ending at `t`.
pub fn net_normalized_movement(traj: &Trajectory, t: usize, n: usize) -> Result<Vec<f64>, EngineError> {
    if n == 0 || t < n || t > traj.updates() {
        return Err(EngineError::WindowTooLarge {
            t,
            window: n,
            len: traj.updates(),
        });
    }
    let dim = traj.iterates[0].x.dim();
    let mut acc = vec![0.0; dim];
    for s in t + 1 - n..=t {
        let cur = &traj.iterates[s];
        let prev = &traj.iterates[s - 1];
        let r = cur.r.expect("updates carry a radius");
        for m in 0..dim {
            acc[m] += (cur.x[m] - prev.x[m]) / r;
        }
    }
    Ok(acc.into_iter().map(|v| v / n as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::lq_distance;
    use crate::population::{Family, Marginal, PopulationSpec};

    fn spec(family: Family, ideals: Vec<Marginal>, seed: u64) -> PopulationSpec {
        PopulationSpec { family, ideals, seed }
    }

    #[test]
    fn radius_examples() {
        let h = RadiusSchedule::Harmonic { r0: 1.0 };
        assert_eq!(radius_at(&h, 4), 0.25);
        let s = RadiusSchedule::Stepped { r0: 1.0, decay_interval: 60 };
        assert_eq!(radius_at(&s, 61), 0.5);
        assert_eq!(radius_at(&s, 60), 1.0);
        assert_eq!(s.radius_for_update(6, 10), 1.0);
        assert_eq!(s.radius_for_update(7, 10), 0.5);
    }

    #[test]
    fn stopping_examples() {
        let rule = StoppingRule { window: 2, tolerance: 0.1, max_updates: 10 };
        let p = Point::from([1.0, 2.0]);
        assert!(stopping_check(&[p.clone(), p.clone(), p.clone()], &rule));
        assert!(!stopping_check(&[p.clone(), Point::from([1.2, 2.0])], &rule));
        assert!(stopping_check(&[p.clone(), Point::from([1.05, 1.95]), Point::from([0.96, 2.04])], &rule));
    }

    fn fake(xs: &[f64], rs: &[f64]) -> Trajectory {
        let mut iterates = vec![Iterate { t: 0, r: None, x: Point::from([xs[0]]) }];
        for (i, (&x, &r)) in xs[1..].iter().zip(rs).enumerate() {
            iterates.push(Iterate { t: i + 1, r: Some(r), x: Point::from([x]) });
        }
        let last = iterates.last().unwrap().x.clone();
        Trajectory { iterates, responses: vec![], terminal: Terminal::HitCap { x: last } }
    }

    #[test]
    fn net_movement_examples() {
        let rs = [0.5, 0.5, 0.25, 0.25];
        let alternating = fake(&[0.0, 0.5, 0.0, 0.25, 0.0], &rs);
        assert_eq!(net_normalized_movement(&alternating, 4, 4).unwrap(), vec![0.0]);
        let steady = fake(&[0.0, 0.5, 1.0, 1.25, 1.5], &rs);
        assert_eq!(net_normalized_movement(&steady, 4, 4).unwrap(), vec![1.0]);
        let still = fake(&[2.0; 5], &rs);
        assert_eq!(net_normalized_movement(&still, 4, 2).unwrap(), vec![0.0]);
        assert!(net_normalized_movement(&still, 5, 2).is_err());
    }

    #[test]
    fn point_mass_is_fixed_point() {
        let region = FeasibleRegion::cube(2, 0.0, 4.0).unwrap();
        let mut cfg = IlvConfig::with_defaults(region, BehaviorModel::ModelA, NormOrder::Two);
        cfg.initial = Point::from([1.0, 3.0]);
        let s = spec(
            Family::LpNormed { p: NormOrder::Two },
            vec![Marginal::PointMass { value: 1.0 }, Marginal::PointMass { value: 3.0 }],
            5,
        );
        let traj = run_ilv(&cfg, &mut s.stream()).unwrap();
        assert!(traj.terminal.converged());
        assert_eq!(traj.updates(), cfg.stopping.window);
        assert!(traj.iterates.iter().all(|i| i.x == cfg.initial));
    }

    #[test]
    fn one_dim_absolute_deviation_finds_median() {
        let region = FeasibleRegion::cube(1, 0.0, 1.0).unwrap();
        let mut cfg = IlvConfig::with_defaults(region, BehaviorModel::ModelA, NormOrder::Infinity);
        cfg.batch_size = 1;
        cfg.initial = Point::from([0.05]);
        cfg.schedule = RadiusSchedule::Harmonic { r0: 0.5 };
        cfg.stopping = StoppingRule { window: 30, tolerance: 1e-4, max_updates: 20_000 };
        let s = spec(
            Family::Decomposable { slopes: Default::default(), plateau_halfwidth: None },
            vec![Marginal::Uniform { lo: 0.0, hi: 1.0 }],
            11,
        );
        let traj = run_ilv(&cfg, &mut s.stream()).unwrap();
        assert!((traj.terminal.point()[0] - 0.5).abs() < 0.05, "{:?}", traj.terminal);
    }

    #[test]
    fn invariants_hold_with_constraints_and_batches() {
        use crate::geometry::LinearConstraint;
        let region = FeasibleRegion::new(
            vec![0.0; 3],
            vec![1.0; 3],
            vec![LinearConstraint::new(vec![1.0, 1.0, 1.0], 1.5)],
        )
        .unwrap();
        for (behavior, q) in [
            (BehaviorModel::ModelA, NormOrder::Two),
            (BehaviorModel::ModelA, NormOrder::Infinity),
            (BehaviorModel::ModelB, NormOrder::One),
        ] {
            let mut cfg = IlvConfig::with_defaults(region.clone(), behavior, q);
            cfg.initial = Point::from([0.2, 0.2, 0.2]);
            cfg.stopping.max_updates = 300;
            let s = spec(
                Family::LpNormed { p: q.dual() },
                vec![Marginal::Uniform { lo: 0.0, hi: 1.0 }; 3],
                3,
            );
            let a = run_ilv(&cfg, &mut s.stream()).unwrap();
            let b = run_ilv(&cfg, &mut s.stream()).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.iterates[0].x, cfg.initial);
            for w in a.iterates.windows(2) {
                assert!(region.contains(&w[1].x, FEASIBILITY_TOL));
                let r = w[1].r.unwrap();
                let batch: Vec<Point> = a
                    .responses
                    .iter()
                    .filter(|rec| rec.t == w[1].t)
                    .map(|rec| rec.response.clone())
                    .collect();
                assert_eq!(batch.len(), cfg.batch_size);
                assert!(lq_distance(&mean_point(&batch), &w[0].x, q) <= r + 1e-9);
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let region = FeasibleRegion::cube(2, 0.0, 1.0).unwrap();
        let mut cfg = IlvConfig::with_defaults(region, BehaviorModel::ModelA, NormOrder::Two);
        cfg.initial = Point::from([2.0, 0.0]);
        assert!(cfg.validate().is_err());
        cfg.initial = Point::from([0.5, 0.5]);
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        cfg.batch_size = 1;
        cfg.stopping.window = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn exports_contain_summary() {
        let traj = fake(&[0.0, 0.5], &[0.5]);
        let mut tsv = Vec::new();
        traj.write_tsv(&mut tsv).unwrap();
        let tsv = String::from_utf8(tsv).unwrap();
        assert!(tsv.starts_with("t\tr\tx1\n0\t\t0\n1\t0.5\t0.5\n"));
        assert!(tsv.ends_with("#summary\thit_cap\t1\t0\t0.5\n"));
        let mut jl = Vec::new();
        traj.write_jsonl(&mut jl).unwrap();
        let lines: Vec<serde_json::Value> = String::from_utf8(jl)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1]["r"], 0.5);
        assert_eq!(lines[2]["summary"]["status"], "hit_cap");
    }
}
