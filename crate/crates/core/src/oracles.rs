//! Ground-truth computations for validating ILV outcomes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{in_bad_region, BehaviorError};
use crate::engine::{
    stopping_check, EngineError, IlvConfig, Iterate, ResponseRecord, Terminal, Trajectory,
};
use crate::geometry::{lq_norm, mean_point, normalized_step, FeasibleRegion, GeometryError, NormOrder, Point};
use crate::population::{PopulationSpec, VoterStream, ORACLE_SUBSTREAM};
use crate::utility::{UtilityError, UtilityModel};

/// Largest grid the brute-force search will enumerate.
pub const MAX_GRID_CELLS: u128 = 100_000_000;
pub const MAX_GRID_DIM: usize = 4;
/// Substream for residual estimates, disjoint from runs and the frozen
/// oracle sample.
pub const RESIDUAL_SUBSTREAM: u64 = u64::MAX - 2;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("grid has {cells} cells, above the cap of {MAX_GRID_CELLS}")]
    GridTooLarge { cells: u128 },
    #[error("grid search supports at most {MAX_GRID_DIM} dimensions, got {0}")]
    TooManyDimensions(usize),
    #[error("grid resolution must be positive, got {0}")]
    InvalidResolution(f64),
    #[error("no grid cell lies inside the feasible region")]
    NoFeasibleCell,
    #[error("need at least one sample")]
    NoSamples,
    #[error(transparent)]
    Utility(#[from] UtilityError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    GridSearch,
    ComponentwiseMedian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub point: Point,
    pub objective: f64,
    pub method: OracleMethod,
    pub samples_used: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_resolution: Option<f64>,
}

/// The first `n` voters of the oracle substream.
pub fn frozen_sample(spec: &PopulationSpec, n: usize) -> Vec<UtilityModel> {
    spec.substream(ORACLE_SUBSTREAM).take(n).collect()
}

/// Sample-average utility, summed in voter order.
pub fn sample_objective(voters: &[UtilityModel], x: &[f64]) -> Result<f64, UtilityError> {
    let mut total = 0.0;
    for v in voters {
        total += v.evaluate(x)?;
    }
    Ok(total / voters.len() as f64)
}

/// Axis-aligned grid: per-dimension start, step and count.
struct Grid {
    start: Vec<f64>,
    step: f64,
    counts: Vec<usize>,
}

impl Grid {
    fn cells(&self) -> u128 {
        self.counts.iter().map(|&c| c as u128).product()
    }

    fn point(&self, mut idx: usize, out: &mut [f64]) {
        for m in 0..self.counts.len() {
            out[m] = self.start[m] + self.step * (idx % self.counts[m]) as f64;
            idx /= self.counts[m];
        }
    }

    /// Best feasible cell, ties to the lowest index.
    fn argmax(
        &self,
        voters: &[UtilityModel],
        region: &FeasibleRegion,
    ) -> Result<Option<(f64, Point)>, OracleError> {
        let cells = self.cells();
        if cells > MAX_GRID_CELLS {
            return Err(OracleError::GridTooLarge { cells });
        }
        let dim = self.counts.len();
        let best = (0..cells as usize)
            .into_par_iter()
            .map_init(
                || vec![0.0; dim],
                |buf, idx| -> Result<Option<(f64, usize)>, UtilityError> {
                    self.point(idx, buf);
                    if !region.contains(buf, 1e-12) {
                        return Ok(None);
                    }
                    Ok(Some((sample_objective(voters, buf)?, idx)))
                },
            )
            .try_reduce(
                || None,
                |a, b| {
                    Ok(match (a, b) {
                        (None, o) | (o, None) => o,
                        (Some(a), Some(b)) => Some(better(a, b)),
                    })
                },
            )?;
        Ok(best.map(|(val, idx)| {
            let mut p = vec![0.0; dim];
            self.point(idx, &mut p);
            (val, Point(p))
        }))
    }
}

fn better(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    if a.0 > b.0 || (a.0 == b.0 && a.1 < b.1) {
        a
    } else {
        b
    }
}

/// Maximizes the sample-average utility of `n_voters` frozen draws over a
/// grid of the region, then refines at a tenth of the resolution within half
/// a coarse step of the coarse argmax.
pub fn social_optimum_bruteforce(
    spec: &PopulationSpec,
    region: &FeasibleRegion,
    n_voters: usize,
    grid_res: f64,
) -> Result<OracleResult, OracleError> {
    let voters = frozen_sample(spec, n_voters);
    social_optimum_for_sample(&voters, region, grid_res)
}

/// Grid search over an explicit voter sample.
pub fn social_optimum_for_sample(
    voters: &[UtilityModel],
    region: &FeasibleRegion,
    grid_res: f64,
) -> Result<OracleResult, OracleError> {
    let dim = region.dim();
    if dim > MAX_GRID_DIM {
        return Err(OracleError::TooManyDimensions(dim));
    }
    if !(grid_res > 0.0 && grid_res.is_finite()) {
        return Err(OracleError::InvalidResolution(grid_res));
    }
    if voters.is_empty() {
        return Err(OracleError::NoSamples);
    }
    let counts: Vec<usize> = (0..dim)
        .map(|m| ((region.upper()[m] - region.lower()[m]) / grid_res + 1e-9).floor() as usize + 1)
        .collect();
    let coarse = Grid {
        start: region.lower().to_vec(),
        step: grid_res,
        counts,
    };
    let (mut objective, mut point) = coarse.argmax(voters, region)?.ok_or(OracleError::NoFeasibleCell)?;

    let fine_step = grid_res / 10.0;
    let fine = Grid {
        start: point.iter().map(|c| c - 5.0 * fine_step).collect(),
        step: fine_step,
        counts: vec![11; dim],
    };
    if let Some((val, p)) = fine.argmax(voters, region)? {
        if val > objective {
            objective = val;
            point = p;
        }
    }
    Ok(OracleResult {
        point,
        objective,
        method: OracleMethod::GridSearch,
        samples_used: voters.len(),
        grid_resolution: Some(fine_step),
    })
}

/// Projected normalized-subgradient method on the same stream and batching
/// as [`crate::engine::run_ilv`].
pub fn ssgm_reference(config: &IlvConfig, stream: &mut VoterStream) -> Result<Trajectory, OracleError> {
    config.validate()?;
    let rule = config.stopping;
    let mut x = config.initial.clone();
    let mut iterates = vec![Iterate {
        t: 0,
        r: None,
        x: x.clone(),
    }];
    let mut responses = Vec::new();
    for t in 1..=rule.max_updates {
        let r = config.radius(t);
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let voter = stream.cursor();
            let u = stream.sample_voter();
            let g = u.subgradient(&x)?;
            let step = match normalized_step(&x, &g, r, config.q) {
                Ok(p) => p,
                Err(GeometryError::ZeroGradient) => x.clone(),
                Err(e) => return Err(e.into()),
            };
            let step = if config.per_response_projection {
                config.region.project(&step)?
            } else {
                step
            };
            let bad_region = in_bad_region(&u, &x, r, config.q).map_err(|source: BehaviorError| {
                EngineError::Response {
                    voter,
                    t,
                    x: x.0.clone(),
                    source,
                }
            })?;
            responses.push(ResponseRecord {
                t,
                voter,
                response: step.clone(),
                bad_region,
            });
            batch.push(step);
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

/// Per-dimension median; even counts give the midpoint of the two central
/// order statistics.
pub fn componentwise_median(ideals: &[Point]) -> Point {
    assert!(!ideals.is_empty(), "median of an empty list");
    let dim = ideals[0].dim();
    let n = ideals.len();
    let mut col = Vec::with_capacity(n);
    Point(
        (0..dim)
            .map(|m| {
                col.clear();
                col.extend(ideals.iter().map(|p| p[m]));
                col.sort_by(f64::total_cmp);
                if n % 2 == 1 {
                    col[n / 2]
                } else {
                    0.5 * (col[n / 2 - 1] + col[n / 2])
                }
            })
            .collect(),
    )
}

/// Median of the ideals of the frozen oracle sample.
pub fn median_oracle(spec: &PopulationSpec, n_voters: usize) -> OracleResult {
    let ideals: Vec<Point> = frozen_sample(spec, n_voters).iter().map(|v| v.ideal()).collect();
    let point = componentwise_median(&ideals);
    let objective = -ideals
        .iter()
        .map(|i| i.iter().zip(point.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .sum::<f64>()
        / n_voters as f64;
    OracleResult {
        point,
        objective,
        method: OracleMethod::ComponentwiseMedian,
        samples_used: n_voters,
        grid_resolution: None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualEstimate {
    /// Monte Carlo mean of the ℒ²-normalized gradients.
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    pub samples_used: usize,
    pub skipped: usize,
}

impl ResidualEstimate {
    pub fn norm(&self) -> f64 {
        lq_norm(&self.mean, NormOrder::Two)
    }

    pub fn std_err_norm(&self) -> f64 {
        lq_norm(&self.std_err, NormOrder::Two)
    }
}

/// Estimates `E[∇f/‖∇f‖₂]` at `x`, skipping voters with zero gradient.
pub fn directional_eq_residual(
    x: &[f64],
    spec: &PopulationSpec,
    n_samples: usize,
) -> Result<ResidualEstimate, OracleError> {
    residual_from_stream(x, spec.substream(RESIDUAL_SUBSTREAM), n_samples)
}

pub fn residual_from_stream(
    x: &[f64],
    stream: impl Iterator<Item = UtilityModel>,
    n_samples: usize,
) -> Result<ResidualEstimate, OracleError> {
    let dim = x.len();
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    let mut used = 0usize;
    let mut skipped = 0usize;
    for u in stream.take(n_samples) {
        let g = u.subgradient(x)?;
        let norm = lq_norm(&g, NormOrder::Two);
        if norm == 0.0 {
            skipped += 1;
            continue;
        }
        used += 1;
        for m in 0..dim {
            let v = g[m] / norm;
            sum[m] += v;
            sum_sq[m] += v * v;
        }
    }
    if used == 0 {
        return Err(OracleError::NoSamples);
    }
    let n = used as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_err = (0..dim)
        .map(|m| {
            if used < 2 {
                return 0.0;
            }
            let var = ((sum_sq[m] - n * mean[m] * mean[m]) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        })
        .collect();
    Ok(ResidualEstimate {
        mean,
        std_err,
        samples_used: used,
        skipped,
    })
}
