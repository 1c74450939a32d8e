//! Voter responses to the local query: the exact constrained best response
//! (Model A) and the normalized subgradient step (Model B).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{lq_norm, normalized_step, project_onto_ball, GeometryError, NormOrder, Point};
use crate::utility::{LpNormedUtility, PiecewiseLinear, UtilityError, UtilityModel, WeightedEuclideanUtility};

/// Iterations per start of the numerical best-response fallback.
pub const FALLBACK_ITERATIONS: usize = 500;
/// Starting points tried by the numerical fallback.
pub const FALLBACK_RESTARTS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BehaviorError {
    #[error(transparent)]
    Utility(#[from] UtilityError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("numerical best response failed to produce a finite point")]
    NoConvergence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorModel {
    /// Favorite point inside the neighborhood.
    #[serde(alias = "a", alias = "A")]
    ModelA,
    /// Step to the neighborhood boundary along the utility subgradient.
    #[serde(alias = "b", alias = "B")]
    ModelB,
}

impl fmt::Display for BehaviorModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BehaviorModel::ModelA => write!(f, "A"),
            BehaviorModel::ModelB => write!(f, "B"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoterResponse {
    pub new_point: Point,
    pub moved: bool,
    pub bad_region: bool,
}

/// Which solver produced a Model A response.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResponseMethod {
    /// ℒ² utility: projection of the ideal onto the ball.
    LpTwoProjection,
    /// ℒ¹ utility: equalized per-coordinate moves capped at the deviation.
    LpOneWaterfill,
    /// ℒ∞ utility: lower the largest deviations to a common level.
    LpInfLevel,
    /// Any ℒp utility in an ℒ∞ ball: per-coordinate clamp.
    LpBoxClamp,
    /// Weighted Euclidean in an ℒ² ball: per-block capped allocation.
    WeightedEuclideanWaterfill,
    /// Decomposable / DLCD in an ℒ∞ ball: per-dimension 1-d maximization.
    SeparableBox,
    Numerical,
}

pub fn respond(
    model: BehaviorModel,
    u: &UtilityModel,
    x: &[f64],
    r: f64,
    q: NormOrder,
) -> Result<VoterResponse, BehaviorError> {
    match model {
        BehaviorModel::ModelA => best_response_model_a(u, x, r, q),
        BehaviorModel::ModelB => best_response_model_b(u, x, r, q),
    }
}

fn check_inputs(u: &UtilityModel, x: &[f64], r: f64, q: NormOrder) -> Result<(), BehaviorError> {
    if x.len() != u.dim() {
        return Err(UtilityError::DimensionMismatch {
            expected: u.dim(),
            got: x.len(),
        }
        .into());
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(GeometryError::InvalidRadius(r).into());
    }
    q.validate()?;
    Ok(())
}

/// Exact maximizer of `u` over the closed ℒq ball of radius `r` around `x`.
pub fn best_response_model_a(
    u: &UtilityModel,
    x: &[f64],
    r: f64,
    q: NormOrder,
) -> Result<VoterResponse, BehaviorError> {
    let (point, _) = model_a_with_method(u, x, r, q)?;
    let bad_region = in_bad_region(u, x, r, q)?;
    let moved = point.0 != x;
    Ok(VoterResponse {
        new_point: point,
        moved,
        bad_region,
    })
}

/// Model A response together with the solver that produced it.
pub fn model_a_with_method(
    u: &UtilityModel,
    x: &[f64],
    r: f64,
    q: NormOrder,
) -> Result<(Point, ResponseMethod), BehaviorError> {
    check_inputs(u, x, r, q)?;
    if let Some(found) = closed_form_model_a(u, x, r, q) {
        return Ok(found);
    }
    Ok((numerical_best_response(u, x, r, q)?, ResponseMethod::Numerical))
}

/// `x + r g/‖g‖_q` with `g` the deterministic subgradient; no move at a
/// maximizer.
pub fn best_response_model_b(
    u: &UtilityModel,
    x: &[f64],
    r: f64,
    q: NormOrder,
) -> Result<VoterResponse, BehaviorError> {
    check_inputs(u, x, r, q)?;
    let g = u.subgradient(x)?;
    let bad_region = in_bad_region(u, x, r, q)?;
    match normalized_step(x, &g, r, q) {
        Ok(p) => Ok(VoterResponse {
            new_point: p,
            moved: true,
            bad_region,
        }),
        Err(GeometryError::ZeroGradient) => Ok(VoterResponse {
            new_point: Point(x.to_vec()),
            moved: false,
            bad_region,
        }),
        Err(e) => Err(e.into()),
    }
}

/// Closed-form Model A branches. `None` means no closed form applies.
pub fn closed_form_model_a(
    u: &UtilityModel,
    x: &[f64],
    r: f64,
    q: NormOrder,
) -> Option<(Point, ResponseMethod)> {
    match u {
        UtilityModel::LpNormed(lp) => lp_closed_form(lp, x, r, q),
        UtilityModel::WeightedEuclidean(we) if q == NormOrder::Two => Some((
            weighted_euclidean_response(we, x, r),
            ResponseMethod::WeightedEuclideanWaterfill,
        )),
        UtilityModel::Decomposable(d) if q == NormOrder::Infinity => Some((
            separable_box_response(&d.components, x, r),
            ResponseMethod::SeparableBox,
        )),
        UtilityModel::Dlcd(d) if q == NormOrder::Infinity => Some((
            separable_box_response(&d.effective_components(), x, r),
            ResponseMethod::SeparableBox,
        )),
        _ => None,
    }
}

fn lp_closed_form(
    lp: &LpNormedUtility,
    x: &[f64],
    r: f64,
    q: NormOrder,
) -> Option<(Point, ResponseMethod)> {
    let d: Vec<f64> = lp.ideal.iter().zip(x).map(|(a, b)| a - b).collect();
    let toward = |moves: Vec<f64>| -> Point {
        Point(
            x.iter()
                .zip(&d)
                .zip(moves)
                .map(|((xm, dm), s)| if s >= dm.abs() { xm + dm } else { xm + dm.signum() * s })
                .collect(),
        )
    };
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    match lp.p {
        NormOrder::Two => {
            if lq_norm(&d, q) <= r {
                return Some((lp.ideal.clone(), ResponseMethod::LpTwoProjection));
            }
            let point = if q == NormOrder::Two {
                // Boundary point along the ideal direction.
                let n = lq_norm(&d, NormOrder::Two);
                Point(x.iter().zip(&d).map(|(xm, dm)| xm + r * (dm / n)).collect())
            } else {
                project_onto_ball(x, &lp.ideal, r, q)
            };
            Some((point, ResponseMethod::LpTwoProjection))
        }
        NormOrder::One => Some((toward(capped_waterfill(&abs, r, q)), ResponseMethod::LpOneWaterfill)),
        NormOrder::Infinity => Some((toward(level_moves(&abs, r, q)), ResponseMethod::LpInfLevel)),
        NormOrder::General(_) if q == NormOrder::Infinity => Some((
            toward(abs.iter().map(|a| a.min(r)).collect()),
            ResponseMethod::LpBoxClamp,
        )),
        NormOrder::General(_) => None,
    }
}

/// Moves `s_m = min(a_m, μ)` with `‖s‖_q = r`, or `s = a` when `‖a‖_q ≤ r`.
fn capped_waterfill(abs: &[f64], r: f64, q: NormOrder) -> Vec<f64> {
    if lq_norm(abs, q) <= r {
        return abs.to_vec();
    }
    let mu = match q {
        NormOrder::Infinity => r,
        _ => {
            let e = q.exponent();
            let mut sorted = abs.to_vec();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            let mut saturated = 0.0;
            let mut mu = r;
            for k in 0..n {
                // Coordinates 0..k saturated at their deviation.
                let cand = ((r.powf(e) - saturated).max(0.0) / (n - k) as f64).powf(1.0 / e);
                if cand <= sorted[k] {
                    mu = cand;
                    break;
                }
                saturated += sorted[k].powf(e);
            }
            mu
        }
    };
    abs.iter().map(|a| a.min(mu)).collect()
}

/// Moves `s_m = (a_m − L)_+` with `‖s‖_q = r`, or `s = a` when `‖a‖_q ≤ r`.
fn level_moves(abs: &[f64], r: f64, q: NormOrder) -> Vec<f64> {
    if lq_norm(abs, q) <= r {
        return abs.to_vec();
    }
    let top = abs.iter().cloned().fold(0.0, f64::max);
    let level = match q {
        NormOrder::Infinity => top - r,
        NormOrder::One => {
            let mut sorted = abs.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let mut sum = 0.0;
            let mut level = 0.0;
            for k in 0..sorted.len() {
                sum += sorted[k];
                let cand = (sum - r) / (k + 1) as f64;
                let next = sorted.get(k + 1).copied().unwrap_or(0.0);
                if cand >= next {
                    level = cand;
                    break;
                }
            }
            level
        }
        _ => {
            let excess = |l: f64| -> f64 {
                let s: Vec<f64> = abs.iter().map(|a| (a - l).max(0.0)).collect();
                lq_norm(&s, q)
            };
            let (mut lo, mut hi) = (0.0, top);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if excess(mid) > r {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        }
    };
    abs.iter().map(|a| (a - level).max(0.0)).collect()
}

/// Budget `s_k = min(d_k, λ c_k)` per block with `Σ s_k² = r²`; each block
/// moves straight toward its ideal.
fn weighted_euclidean_response(we: &WeightedEuclideanUtility, x: &[f64], r: f64) -> Point {
    let coef = we.coefficients();
    let dist = we.block_distances(x);
    if dist.iter().map(|d| d * d).sum::<f64>() <= r * r {
        return we.ideal.clone();
    }
    let mut order: Vec<usize> = (0..coef.len()).filter(|&k| coef[k] > 0.0).collect();
    order.sort_by(|&a, &b| (dist[a] / coef[a]).total_cmp(&(dist[b] / coef[b])));
    let mut sat_sq = 0.0;
    let mut free_sq: f64 = order.iter().map(|&k| coef[k] * coef[k]).sum();
    let mut lambda = f64::INFINITY;
    for &k in &order {
        let cand = ((r * r - sat_sq).max(0.0) / free_sq).sqrt();
        if cand * coef[k] <= dist[k] {
            lambda = cand;
            break;
        }
        sat_sq += dist[k] * dist[k];
        free_sq -= coef[k] * coef[k];
    }
    let mut out = x.to_vec();
    for ((block, c), d) in we.blocks.iter().zip(&coef).zip(&dist) {
        if *d == 0.0 || *c == 0.0 {
            continue;
        }
        let s = (lambda * c).min(*d);
        if s >= *d {
            for &m in block {
                out[m] = we.ideal[m];
            }
        } else {
            for &m in block {
                out[m] = x[m] + s * ((we.ideal[m] - x[m]) / d);
            }
        }
    }
    Point(out)
}

fn separable_box_response(components: &[PiecewiseLinear], x: &[f64], r: f64) -> Point {
    Point(
        components
            .iter()
            .zip(x)
            .map(|(f, &xm)| f.argmax_on(xm - r, xm + r, xm))
            .collect(),
    )
}

/// Projected supergradient ascent on the ball from several starts; the best
/// iterate seen is returned.
pub fn numerical_best_response(
    u: &UtilityModel,
    x: &[f64],
    r: f64,
    q: NormOrder,
) -> Result<Point, BehaviorError> {
    let g0 = u.subgradient(x)?;
    let mut starts: Vec<Vec<f64>> = vec![x.to_vec()];
    if let Ok(p) = normalized_step(x, &g0, r, q) {
        starts.push(p.0);
        let mut dims: Vec<usize> = (0..x.len()).filter(|&m| g0[m] != 0.0).collect();
        dims.sort_by(|&a, &b| g0[b].abs().total_cmp(&g0[a].abs()));
        for &m in &dims {
            if starts.len() >= FALLBACK_RESTARTS {
                break;
            }
            let mut e = x.to_vec();
            e[m] += r * g0[m].signum();
            starts.push(e);
        }
        // Opposite extreme along the strongest axis keeps the start set spread.
        if starts.len() < FALLBACK_RESTARTS {
            if let Some(&m) = dims.first() {
                let mut e = x.to_vec();
                e[m] -= r * g0[m].signum();
                starts.push(e);
            }
        }
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    let consider = |val: f64, y: &[f64], best: &mut Option<(f64, Vec<f64>)>| {
        if val.is_finite() && best.as_ref().is_none_or(|(b, _)| val > *b) {
            *best = Some((val, y.to_vec()));
        }
    };
    for start in starts {
        let mut y = start;
        consider(u.evaluate(&y)?, &y, &mut best);
        for k in 1..=FALLBACK_ITERATIONS {
            let g = u.subgradient(&y)?;
            let gn = lq_norm(&g, NormOrder::Two);
            if gn == 0.0 {
                break;
            }
            let step = r / (k as f64).sqrt();
            let trial: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a + step * (b / gn)).collect();
            y = project_onto_ball(x, &trial, r, q).0;
            consider(u.evaluate(&y)?, &y, &mut best);
        }
    }
    best.map(|(_, y)| Point(y)).ok_or(BehaviorError::NoConvergence)
}

/// Whether `(x, r)` falls in the region where a constrained response may
/// differ from a normalized subgradient step.
pub fn in_bad_region(
    u: &UtilityModel,
    x: &[f64],
    r: f64,
    q: NormOrder,
) -> Result<bool, BehaviorError> {
    if x.len() != u.dim() {
        return Err(UtilityError::DimensionMismatch {
            expected: u.dim(),
            got: x.len(),
        }
        .into());
    }
    Ok(match u {
        UtilityModel::LpNormed(lp) => {
            let d: Vec<f64> = lp.ideal.iter().zip(x).map(|(a, b)| (a - b).abs()).collect();
            match (lp.p, q) {
                (NormOrder::Two, NormOrder::Two) => lq_norm(&d, NormOrder::Two) <= r,
                (NormOrder::One, NormOrder::Infinity) => d.iter().any(|v| *v <= r),
                (NormOrder::Infinity, NormOrder::One) => {
                    let mut top = 0;
                    for (m, v) in d.iter().enumerate() {
                        if *v > d[top] {
                            top = m;
                        }
                    }
                    d[top] <= r
                        || d.iter()
                            .enumerate()
                            .any(|(m, v)| m != top && d[top] < v + r)
                }
                _ => lq_norm(&d, q) <= r,
            }
        }
        UtilityModel::WeightedEuclidean(we) => we.block_distances(x).iter().any(|d| *d <= r),
        UtilityModel::Decomposable(dec) => plateau_within(&dec.components, x, r),
        UtilityModel::Dlcd(d) => plateau_within(&d.effective_components(), x, r),
    })
}

fn plateau_within(components: &[PiecewiseLinear], x: &[f64], r: f64) -> bool {
    components.iter().zip(x).any(|(f, &xm)| {
        let (a, b) = f.maximizer_interval();
        let gap = if xm < a {
            a - xm
        } else if xm > b {
            xm - b
        } else {
            0.0
        };
        gap <= r
    })
}
