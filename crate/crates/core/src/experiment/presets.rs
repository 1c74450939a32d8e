//! Named verification suites: each is one or more plans plus the checks
//! applied to their reports.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    run_plan, theory_guarantee, EngineOverrides, ExperimentError, ExperimentPlan, GridOracleSpec,
    Mechanism, MedianOracleSpec, OracleSelection, ResidualSpec, RunReport,
};
use crate::behavior::BehaviorModel;
use crate::engine::RadiusSchedule;
use crate::geometry::{FeasibleRegion, NormOrder, Point};
use crate::population::{Family, Marginal, MixtureComponent, PopulationSpec, WeightDistribution};

/// Terminal point within this fraction of the ℒ∞ diameter of the target.
pub const POINT_TOL: f64 = 0.02;
/// Terminal objective within this fraction of the oracle objective.
pub const OBJECTIVE_TOL: f64 = 0.005;
/// Max pairwise distance between terminal points, as a diameter fraction.
pub const DISPERSION_TOL: f64 = 0.01;
/// Residual norm bound in standard errors.
pub const RESIDUAL_SE: f64 = 3.0;

pub const DEFAULT_SEED: u64 = 20_160_901;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Thm1,
    Thm2,
    Prop1,
    Prop2,
    DeResidual,
    NonDual,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Thm1,
        Preset::Thm2,
        Preset::Prop1,
        Preset::Prop2,
        Preset::DeResidual,
        Preset::NonDual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Thm1 => "thm1",
            Preset::Thm2 => "thm2",
            Preset::Prop1 => "prop1",
            Preset::Prop2 => "prop2",
            Preset::DeResidual => "de-residual",
            Preset::NonDual => "non-dual",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                format!("unknown preset {s:?}; expected one of {}", names.join(", "))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub check: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckRow {
    /// Passes when `measured <= tolerance`; NaN never passes.
    pub fn at_most(check: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        CheckRow {
            check: check.into(),
            measured,
            tolerance,
            passed: measured <= tolerance,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    NoGuarantee,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::NoGuarantee => "no theoretical guarantee",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyTable {
    pub preset: String,
    pub verdict: Verdict,
    pub rows: Vec<CheckRow>,
}

impl VerifyTable {
    fn from_rows(preset: Preset, rows: Vec<CheckRow>) -> Self {
        let verdict = if rows.iter().all(|r| r.passed) {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        VerifyTable {
            preset: preset.name().into(),
            verdict,
            rows,
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!("{}: {}\n", self.preset, self.verdict);
        for r in &self.rows {
            out.push_str(&format!(
                "  {:<4} {:<58} {:>12.6e} <= {:.6e}\n",
                if r.passed { "ok" } else { "FAIL" },
                r.check,
                r.measured,
                r.tolerance
            ));
        }
        out
    }
}

fn lp_gaussian_2d(p: NormOrder, seed: u64) -> PopulationSpec {
    PopulationSpec {
        family: Family::LpNormed { p },
        ideals: vec![
            Marginal::TruncatedGaussian { mean: 0.4, std: 0.15, lo: 0.0, hi: 1.0 },
            Marginal::TruncatedGaussian { mean: 0.65, std: 0.2, lo: 0.0, hi: 1.0 },
        ],
        seed,
    }
}

fn harmonic_engine(r0: f64, max_updates: usize) -> EngineOverrides {
    EngineOverrides {
        schedule: Some(RadiusSchedule::Harmonic { r0 }),
        batch_size: Some(10),
        window: Some(30),
        tolerance: Some(1e-7),
        max_updates: Some(max_updates),
        per_response_projection: None,
    }
}

fn optimum_plan(name: String, population: PopulationSpec, mechanism: Mechanism, residual: bool) -> ExperimentPlan {
    let dim = population.dim();
    ExperimentPlan {
        name,
        region: FeasibleRegion::cube(dim, 0.0, 1.0).expect("unit cube"),
        mechanisms: vec![mechanism],
        starting_points: vec![Point(vec![0.1; dim]), Point(vec![0.9; dim])],
        groups: 5,
        engine: harmonic_engine(0.8, 20_000),
        oracles: OracleSelection {
            social_optimum: Some(GridOracleSpec {
                n_voters: 10_000,
                grid_res: if dim <= 2 { 0.02 } else { 0.1 },
            }),
            median: None,
            residual: residual.then_some(ResidualSpec { n_samples: 100_000 }),
        },
        population,
        movement_window: 30,
    }
}

/// Model A with the three dual pairs; two-dimensional gaussian ideals.
pub fn thm1_plans(seed: u64) -> Vec<ExperimentPlan> {
    use NormOrder::*;
    [(Two, Two), (One, Infinity), (Infinity, One)]
        .into_iter()
        .map(|(p, q)| {
            optimum_plan(
                format!("thm1 p={p} q={q}"),
                lp_gaussian_2d(p, seed),
                Mechanism { q, behavior: BehaviorModel::ModelA },
                p == Two,
            )
        })
        .collect()
}

/// Model B with general dual pairs.
pub fn thm2_plans(seed: u64) -> Vec<ExperimentPlan> {
    use NormOrder::General;
    [(General(3.0), General(1.5)), (General(1.5), General(3.0))]
        .into_iter()
        .map(|(p, q)| {
            optimum_plan(
                format!("thm2 p={p} q={q}"),
                lp_gaussian_2d(p, seed),
                Mechanism { q, behavior: BehaviorModel::ModelB },
                false,
            )
        })
        .collect()
}

/// Weighted Euclidean voters over two planar blocks, both behaviour models.
pub fn prop1_plan(seed: u64) -> ExperimentPlan {
    let population = PopulationSpec {
        family: Family::WeightedEuclidean {
            blocks: vec![vec![0, 1], vec![2, 3]],
            weights: WeightDistribution::Uniform { lo: 0.2, hi: 1.0 },
        },
        ideals: vec![
            Marginal::TruncatedGaussian { mean: 0.35, std: 0.15, lo: 0.0, hi: 1.0 },
            Marginal::TruncatedGaussian { mean: 0.6, std: 0.2, lo: 0.0, hi: 1.0 },
            Marginal::Uniform { lo: 0.2, hi: 0.9 },
            Marginal::TruncatedGaussian { mean: 0.5, std: 0.25, lo: 0.0, hi: 1.0 },
        ],
        seed,
    };
    let mut plan = optimum_plan(
        "prop1".into(),
        population,
        Mechanism { q: NormOrder::Two, behavior: BehaviorModel::ModelA },
        true,
    );
    plan.mechanisms.push(Mechanism { q: NormOrder::Two, behavior: BehaviorModel::ModelB });
    plan.groups = 3;
    plan
}

/// Decomposable voters with random slopes, ℒ∞ neighbourhoods, three groups
/// of two starting points each.
pub fn prop2_plan(seed: u64) -> ExperimentPlan {
    let population = PopulationSpec {
        family: Family::Decomposable {
            slopes: WeightDistribution::Uniform { lo: 0.5, hi: 2.0 },
            plateau_halfwidth: None,
        },
        ideals: vec![
            Marginal::TruncatedGaussian { mean: 0.3, std: 0.15, lo: 0.0, hi: 1.0 },
            Marginal::Uniform { lo: 0.2, hi: 0.9 },
            Marginal::Mixture {
                components: vec![
                    MixtureComponent {
                        weight: 0.7,
                        dist: Marginal::TruncatedGaussian { mean: 0.6, std: 0.1, lo: 0.0, hi: 1.0 },
                    },
                    MixtureComponent { weight: 0.3, dist: Marginal::Uniform { lo: 0.0, hi: 1.0 } },
                ],
            },
            Marginal::TruncatedGaussian { mean: 0.7, std: 0.2, lo: 0.0, hi: 1.0 },
        ],
        seed,
    };
    ExperimentPlan {
        name: "prop2".into(),
        region: FeasibleRegion::cube(4, 0.0, 1.0).expect("unit cube"),
        mechanisms: vec![Mechanism { q: NormOrder::Infinity, behavior: BehaviorModel::ModelA }],
        starting_points: vec![Point(vec![0.1, 0.9, 0.1, 0.9]), Point(vec![0.9, 0.1, 0.9, 0.1])],
        groups: 3,
        engine: EngineOverrides {
            schedule: Some(RadiusSchedule::Stepped { r0: 0.2, decay_interval: 60 }),
            batch_size: Some(10),
            window: Some(30),
            tolerance: Some(1e-7),
            max_updates: Some(20_000),
            per_response_projection: None,
        },
        oracles: OracleSelection {
            social_optimum: None,
            median: Some(MedianOracleSpec { n_voters: 100_000 }),
            residual: None,
        },
        population,
        movement_window: 30,
    }
}

/// ℒ²/Model B runs of the Euclidean and weighted Euclidean populations,
/// with the directional-equilibrium residual at each terminal point.
pub fn residual_plans(seed: u64) -> Vec<ExperimentPlan> {
    let model_b = Mechanism { q: NormOrder::Two, behavior: BehaviorModel::ModelB };
    let mut l2 = optimum_plan("residual p=2 q=2 B".into(), lp_gaussian_2d(NormOrder::Two, seed), model_b, true);
    l2.oracles.social_optimum = None;
    let mut weighted = prop1_plan(seed);
    weighted.name = "residual prop1 B".into();
    weighted.mechanisms = vec![model_b];
    weighted.oracles.social_optimum = None;
    vec![l2, weighted]
}

/// ℒ¹ voters with ℒ¹ neighbourhoods; not a dual pair.
pub fn non_dual_plan(seed: u64) -> ExperimentPlan {
    optimum_plan(
        "non-dual p=1 q=1".into(),
        lp_gaussian_2d(NormOrder::One, seed),
        Mechanism { q: NormOrder::One, behavior: BehaviorModel::ModelA },
        false,
    )
}

fn failure_row(report: &RunReport, rows: &mut Vec<CheckRow>) {
    let failed = report.runs.iter().filter(|r| !r.ok()).count();
    if failed > 0 {
        rows.push(CheckRow::at_most(format!("{}: failed runs", report.plan.name), failed as f64, 0.0));
    }
}

fn worst(report: &RunReport, f: impl Fn(&super::RunRecord) -> Option<f64>) -> f64 {
    report
        .runs
        .iter()
        .map(|r| f(r).unwrap_or(f64::NAN))
        .fold(f64::NEG_INFINITY, |a, v| if v.is_nan() || a.is_nan() { f64::NAN } else { a.max(v) })
}

/// Distance and objective gap to the grid oracle, worst over runs.
pub fn optimum_rows(report: &RunReport) -> Vec<CheckRow> {
    let diameter = report.plan.region.linf_diameter();
    let mut rows = vec![
        CheckRow::at_most(
            format!("{}: max distance to optimum / diameter", report.plan.name),
            worst(report, |r| r.distance_to_optimum) / diameter,
            POINT_TOL,
        ),
        CheckRow::at_most(
            format!("{}: max relative objective gap", report.plan.name),
            worst(report, |r| r.relative_objective_gap),
            OBJECTIVE_TOL,
        ),
    ];
    failure_row(report, &mut rows);
    rows
}

/// Objective gap only, for targets that need not be unique.
pub fn objective_rows(report: &RunReport) -> Vec<CheckRow> {
    let mut rows = vec![CheckRow::at_most(
        format!("{}: max relative objective gap", report.plan.name),
        worst(report, |r| r.relative_objective_gap),
        OBJECTIVE_TOL,
    )];
    failure_row(report, &mut rows);
    rows
}

/// Distance to the componentwise median and dispersion per mechanism.
pub fn median_rows(report: &RunReport) -> Vec<CheckRow> {
    let diameter = report.plan.region.linf_diameter();
    let mut rows = vec![CheckRow::at_most(
        format!("{}: max distance to median / diameter", report.plan.name),
        worst(report, |r| r.distance_to_median) / diameter,
        POINT_TOL,
    )];
    for m in &report.mechanisms {
        rows.push(CheckRow::at_most(
            format!("{}: dispersion / diameter ({})", report.plan.name, m.mechanism),
            m.dispersion.unwrap_or(f64::NAN) / diameter,
            DISPERSION_TOL,
        ));
    }
    failure_row(report, &mut rows);
    rows
}

/// Residual norm in units of its standard error, worst over runs that
/// computed one.
pub fn residual_rows(report: &RunReport) -> Vec<CheckRow> {
    let ratios: Vec<f64> = report
        .runs
        .iter()
        .filter_map(|r| r.residual.as_ref())
        .map(|res| res.norm() / res.std_err_norm())
        .collect();
    if ratios.is_empty() {
        return vec![];
    }
    let worst = ratios.iter().fold(f64::NEG_INFINITY, |a, &v| if v.is_nan() { v } else { a.max(v) });
    vec![CheckRow::at_most(
        format!("{}: max residual / standard error ({} runs)", report.plan.name, ratios.len()),
        worst,
        RESIDUAL_SE,
    )]
}

fn run(plan: &ExperimentPlan, workers: usize) -> Result<RunReport, ExperimentError> {
    log::info!("running plan {}", plan.name);
    Ok(run_plan(plan, workers)?.report)
}

/// Runs a preset and tabulates its checks.
pub fn verify_theorems(preset: Preset, seed: u64, workers: usize) -> Result<VerifyTable, ExperimentError> {
    let mut rows = Vec::new();
    match preset {
        Preset::Thm1 => {
            for plan in thm1_plans(seed) {
                rows.extend(optimum_rows(&run(&plan, workers)?));
            }
        }
        Preset::Thm2 => {
            for plan in thm2_plans(seed) {
                rows.extend(optimum_rows(&run(&plan, workers)?));
            }
        }
        Preset::Prop1 => rows.extend(objective_rows(&run(&prop1_plan(seed), workers)?)),
        Preset::Prop2 => rows.extend(median_rows(&run(&prop2_plan(seed), workers)?)),
        Preset::DeResidual => {
            for plan in residual_plans(seed) {
                rows.extend(residual_rows(&run(&plan, workers)?));
            }
        }
        Preset::NonDual => {
            let plan = non_dual_plan(seed);
            let guaranteed = plan
                .mechanisms
                .iter()
                .all(|m| theory_guarantee(&plan.population.family, *m));
            let mut table = VerifyTable::from_rows(preset, optimum_rows(&run(&plan, workers)?));
            if !guaranteed {
                table.verdict = Verdict::NoGuarantee;
            }
            return Ok(table);
        }
    }
    Ok(VerifyTable::from_rows(preset, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>(), Ok(p));
        }
        assert!("thm3".parse::<Preset>().is_err());
    }

    #[test]
    fn plans_validate() {
        for plan in thm1_plans(1).iter().chain(&thm2_plans(1)) {
            plan.validate().unwrap();
        }
        prop1_plan(1).validate().unwrap();
        prop2_plan(1).validate().unwrap();
        non_dual_plan(1).validate().unwrap();
        for plan in residual_plans(1) {
            plan.validate().unwrap();
        }
    }

    #[test]
    fn nan_rows_fail() {
        assert!(!CheckRow::at_most("x", f64::NAN, 1.0).passed);
        assert!(CheckRow::at_most("x", 1.0, 1.0).passed);
    }
}
