//! Vector primitives: ℒq norms, norm balls, projection onto the feasible
//! region and normalized steps.

use std::fmt;
use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cycle cap for the alternating projection onto box + half-spaces.
pub const PROJECTION_MAX_CYCLES: usize = 10_000;
/// Convergence / feasibility tolerance for the alternating projection.
pub const PROJECTION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("norm order q must be finite and > 1 for the general case, got {0}")]
    InvalidNormOrder(f64),
    #[error("region bounds invalid in dimension {dim}: lo={lo}, hi={hi}")]
    InvalidBounds { dim: usize, lo: f64, hi: f64 },
    #[error("box and linear constraints have an empty intersection")]
    InfeasibleRegion,
    #[error("zero gradient: cannot normalize a vector with zero norm")]
    ZeroGradient,
    #[error("radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("non-finite coordinate in input")]
    NonFinite,
}

/// A point of the M-dimensional decision space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(pub Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point(coords)
    }

    pub fn zeros(dim: usize) -> Self {
        Point(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for Point {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Point {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Point {
    fn from(v: Vec<f64>) -> Self {
        Point(v)
    }
}

impl From<&[f64]> for Point {
    fn from(v: &[f64]) -> Self {
        Point(v.to_vec())
    }
}

impl<const N: usize> From<[f64; N]> for Point {
    fn from(v: [f64; N]) -> Self {
        Point(v.to_vec())
    }
}

/// Order q of an ℒq norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NormRepr", into = "NormRepr")]
pub enum NormOrder {
    One,
    Two,
    Infinity,
    General(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NormRepr {
    Num(f64),
    Name(String),
}

impl TryFrom<NormRepr> for NormOrder {
    type Error = GeometryError;
    fn try_from(r: NormRepr) -> Result<Self, Self::Error> {
        match r {
            NormRepr::Num(q) => NormOrder::from_f64(q),
            NormRepr::Name(s) => match s.to_ascii_lowercase().as_str() {
                "one" | "l1" | "1" => Ok(NormOrder::One),
                "two" | "l2" | "2" => Ok(NormOrder::Two),
                "inf" | "infinity" | "linf" => Ok(NormOrder::Infinity),
                other => other
                    .parse::<f64>()
                    .map_err(|_| GeometryError::InvalidNormOrder(f64::NAN))
                    .and_then(NormOrder::from_f64),
            },
        }
    }
}

impl From<NormOrder> for NormRepr {
    fn from(q: NormOrder) -> Self {
        match q {
            NormOrder::Infinity => NormRepr::Name("inf".into()),
            other => NormRepr::Num(other.exponent()),
        }
    }
}

impl NormOrder {
    /// Maps 1, 2 and +∞ onto the named variants; anything else finite and
    /// greater than one becomes `General`.
    pub fn from_f64(q: f64) -> Result<Self, GeometryError> {
        if q == 1.0 {
            Ok(NormOrder::One)
        } else if q == 2.0 {
            Ok(NormOrder::Two)
        } else if q == f64::INFINITY {
            Ok(NormOrder::Infinity)
        } else if q.is_finite() && q > 1.0 {
            Ok(NormOrder::General(q))
        } else {
            Err(GeometryError::InvalidNormOrder(q))
        }
    }

    pub fn exponent(self) -> f64 {
        match self {
            NormOrder::One => 1.0,
            NormOrder::Two => 2.0,
            NormOrder::Infinity => f64::INFINITY,
            NormOrder::General(q) => q,
        }
    }

    /// The dual order q* with 1/q + 1/q* = 1.
    pub fn dual(self) -> NormOrder {
        match self {
            NormOrder::One => NormOrder::Infinity,
            NormOrder::Infinity => NormOrder::One,
            NormOrder::Two => NormOrder::Two,
            NormOrder::General(q) => {
                NormOrder::from_f64(q / (q - 1.0)).unwrap_or(NormOrder::General(q / (q - 1.0)))
            }
        }
    }

    pub fn validate(self) -> Result<(), GeometryError> {
        match self {
            NormOrder::General(q) if !(q.is_finite() && q > 1.0) => {
                Err(GeometryError::InvalidNormOrder(q))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormOrder::One => write!(f, "1"),
            NormOrder::Two => write!(f, "2"),
            NormOrder::Infinity => write!(f, "inf"),
            NormOrder::General(q) => write!(f, "{q}"),
        }
    }
}

/// ℒq norm of `v`.
pub fn lq_norm(v: &[f64], q: NormOrder) -> f64 {
    match q {
        NormOrder::One => v.iter().map(|x| x.abs()).sum(),
        NormOrder::Two => {
            // hypot-style scaling keeps huge or tiny inputs from overflowing.
            let max = linf(v);
            if max == 0.0 || !max.is_finite() {
                return max;
            }
            max * v.iter().map(|x| (x / max) * (x / max)).sum::<f64>().sqrt()
        }
        NormOrder::Infinity => linf(v),
        NormOrder::General(p) => {
            let max = linf(v);
            if max == 0.0 || !max.is_finite() {
                return max;
            }
            max * v
                .iter()
                .map(|x| (x.abs() / max).powf(p))
                .sum::<f64>()
                .powf(1.0 / p)
        }
    }
}

fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// ℒq distance between two points of equal dimension.
pub fn lq_distance(a: &[f64], b: &[f64], q: NormOrder) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    lq_norm(&diff, q)
}

/// Returns `x + r * g / ‖g‖_q`.
pub fn normalized_step(x: &[f64], g: &[f64], r: f64, q: NormOrder) -> Result<Point, GeometryError> {
    if x.len() != g.len() {
        return Err(GeometryError::DimensionMismatch {
            expected: x.len(),
            got: g.len(),
        });
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(GeometryError::InvalidRadius(r));
    }
    let norm = lq_norm(g, q);
    if norm == 0.0 {
        return Err(GeometryError::ZeroGradient);
    }
    Ok(Point(
        x.iter()
            .zip(g)
            .map(|(xm, gm)| xm + r * (gm / norm))
            .collect(),
    ))
}

/// Coordinate-wise arithmetic mean, summed in slice order.
pub fn mean_point(points: &[Point]) -> Point {
    assert!(!points.is_empty(), "mean of an empty batch");
    let dim = points[0].dim();
    let mut acc = vec![0.0; dim];
    for p in points {
        for (a, v) in acc.iter_mut().zip(p.iter()) {
            *a += v;
        }
    }
    let n = points.len() as f64;
    Point(acc.into_iter().map(|a| a / n).collect())
}

/// Euclidean projection of `y` onto the closed ℒq ball of radius `r`
/// centred at `center`.
pub fn project_onto_ball(center: &[f64], y: &[f64], r: f64, q: NormOrder) -> Point {
    let d: Vec<f64> = y.iter().zip(center).map(|(a, c)| a - c).collect();
    if lq_norm(&d, q) <= r {
        return Point(y.to_vec());
    }
    let shrunk = match q {
        NormOrder::Infinity => d.iter().map(|v| v.clamp(-r, r)).collect(),
        NormOrder::Two => {
            let n = lq_norm(&d, q);
            d.iter().map(|v| v * (r / n)).collect()
        }
        NormOrder::One => project_l1(&d, r),
        NormOrder::General(p) => project_lp_general(&d, r, p),
    };
    Point(center.iter().zip(shrunk).map(|(c, s)| c + s).collect())
}

// Sort-based simplex projection applied to |d|.
fn project_l1(d: &[f64], r: f64) -> Vec<f64> {
    let mut u: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - r) / (j as f64 + 1.0);
        if uj - t > 0.0 {
            theta = t;
        }
    }
    d.iter()
        .map(|v| v.signum() * (v.abs() - theta).max(0.0))
        .collect()
}

// KKT system s_m + λ p s_m^{p-1} = |d_m|: safeguarded Newton per coordinate,
// Illinois regula falsi on λ.
fn project_lp_general(d: &[f64], r: f64, p: f64) -> Vec<f64> {
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let solve = |lambda: f64| -> Vec<f64> {
        abs.iter()
            .map(|&a| {
                if a == 0.0 || lambda == 0.0 {
                    return a;
                }
                let (mut lo, mut hi) = (0.0, a);
                let mut s = if p >= 2.0 { a } else { 0.5 * a };
                for _ in 0..100 {
                    let f = s + lambda * p * s.powf(p - 1.0) - a;
                    if f > 0.0 {
                        hi = s;
                    } else {
                        lo = s;
                    }
                    let df = 1.0 + lambda * p * (p - 1.0) * s.powf(p - 2.0);
                    let mut next = s - f / df;
                    if f == 0.0 || next == s {
                        break;
                    }
                    if !(next > lo && next < hi) {
                        next = 0.5 * (lo + hi);
                    }
                    let done = (next - s).abs() <= 4.0 * f64::EPSILON * a || hi - lo <= 4.0 * f64::EPSILON * a;
                    s = next;
                    if done {
                        break;
                    }
                }
                s
            })
            .collect()
    };
    let gap = |lambda: f64| lq_norm(&solve(lambda), NormOrder::General(p)) - r;
    let (mut lo, mut g_lo) = (0.0, gap(0.0));
    let mut hi = 1.0;
    let mut g_hi = gap(hi);
    while g_hi > 0.0 && hi < 1e300 {
        (lo, g_lo) = (hi, g_hi);
        hi *= 2.0;
        g_hi = gap(hi);
    }
    let mut side = 0;
    for _ in 0..200 {
        if g_hi.abs() <= 1e-15 * r || hi - lo <= 1e-15 * hi {
            break;
        }
        let mut mid = hi - g_hi * (hi - lo) / (g_hi - g_lo);
        if !(mid > lo && mid < hi) {
            mid = 0.5 * (lo + hi);
        }
        let g = gap(mid);
        if g > 0.0 {
            (lo, g_lo) = (mid, g);
            if side == -1 {
                g_hi *= 0.5;
            }
            side = -1;
        } else {
            (hi, g_hi) = (mid, g);
            if side == 1 {
                g_lo *= 0.5;
            }
            side = 1;
        }
    }
    let mut s = solve(hi);
    let n = lq_norm(&s, NormOrder::General(p));
    if n > r {
        s.iter_mut().for_each(|v| *v *= r / n);
    }
    s.iter()
        .zip(d)
        .map(|(m, v)| m * v.signum())
        .collect()
}

/// Half-space `coeffs · x ≤ bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub coeffs: Vec<f64>,
    pub bound: f64,
}

impl LinearConstraint {
    pub fn new(coeffs: Vec<f64>, bound: f64) -> Self {
        LinearConstraint { coeffs, bound }
    }

    fn slack(&self, x: &[f64]) -> f64 {
        dot(&self.coeffs, x) - self.bound
    }

    fn project(&self, x: &mut [f64]) {
        let excess = self.slack(x);
        if excess > 0.0 {
            let nn = dot(&self.coeffs, &self.coeffs);
            for (xm, a) in x.iter_mut().zip(&self.coeffs) {
                *xm -= excess * a / nn;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Deserialize)]
struct RegionRepr {
    lower: Vec<f64>,
    upper: Vec<f64>,
    #[serde(default)]
    constraints: Vec<LinearConstraint>,
}

/// The convex feasible set: a bounded box intersected with optional
/// half-spaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegionRepr")]
pub struct FeasibleRegion {
    lower: Vec<f64>,
    upper: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    constraints: Vec<LinearConstraint>,
}

impl TryFrom<RegionRepr> for FeasibleRegion {
    type Error = GeometryError;
    fn try_from(r: RegionRepr) -> Result<Self, Self::Error> {
        FeasibleRegion::new(r.lower, r.upper, r.constraints)
    }
}

impl FeasibleRegion {
    pub fn new(
        lower: Vec<f64>,
        upper: Vec<f64>,
        constraints: Vec<LinearConstraint>,
    ) -> Result<Self, GeometryError> {
        if lower.len() != upper.len() {
            return Err(GeometryError::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(GeometryError::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        for (dim, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(GeometryError::InvalidBounds { dim, lo, hi });
            }
        }
        for c in &constraints {
            if c.coeffs.len() != lower.len() {
                return Err(GeometryError::DimensionMismatch {
                    expected: lower.len(),
                    got: c.coeffs.len(),
                });
            }
            if !c.bound.is_finite() || c.coeffs.iter().any(|a| !a.is_finite()) {
                return Err(GeometryError::NonFinite);
            }
        }
        let region = FeasibleRegion {
            lower,
            upper,
            constraints,
        };
        region.check_nonempty()?;
        Ok(region)
    }

    /// Axis-aligned box `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self, GeometryError> {
        FeasibleRegion::new(vec![lo; dim], vec![hi; dim], Vec::new())
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, GeometryError> {
        FeasibleRegion::new(lower, upper, Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn constraints(&self) -> &[LinearConstraint] {
        &self.constraints
    }

    /// ℒ∞ diameter of the bounding box.
    pub fn linf_diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .fold(0.0, f64::max)
    }

    pub fn center(&self) -> Point {
        Point(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| 0.5 * (lo + hi))
                .collect(),
        )
    }

    /// Largest constraint violation of `x` (0 when feasible).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for ((v, lo), hi) in x.iter().zip(&self.lower).zip(&self.upper) {
            worst = worst.max(lo - v).max(v - hi);
        }
        for c in &self.constraints {
            worst = worst.max(c.slack(x));
        }
        worst
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim() && self.violation(x) <= tol
    }

    fn clamp_box(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    fn check_nonempty(&self) -> Result<(), GeometryError> {
        if self.constraints.is_empty() {
            return Ok(());
        }
        // A half-space that misses the whole box is detected exactly.
        for c in &self.constraints {
            let min_over_box: f64 = c
                .coeffs
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(a, (lo, hi))| if *a >= 0.0 { a * lo } else { a * hi })
                .sum();
            if min_over_box > c.bound + PROJECTION_TOL {
                return Err(GeometryError::InfeasibleRegion);
            }
        }
        let mut x = self.center().0;
        for _ in 0..PROJECTION_MAX_CYCLES {
            for c in &self.constraints {
                c.project(&mut x);
            }
            self.clamp_box(&mut x);
            if self.violation(&x) <= PROJECTION_TOL {
                return Ok(());
            }
        }
        Err(GeometryError::InfeasibleRegion)
    }

    /// Euclidean projection onto the region. Boxes are clamped exactly;
    /// half-spaces go through Dykstra's alternating projection.
    pub fn project(&self, x: &[f64]) -> Result<Point, GeometryError> {
        if x.len() != self.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let mut out = x.to_vec();
        if self.violation(&out) <= 0.0 {
            return Ok(Point(out));
        }
        self.clamp_box(&mut out);
        if self.constraints.is_empty() || self.violation(&out) <= 0.0 {
            return Ok(Point(out));
        }
        Ok(Point(self.dykstra(x)))
    }

    fn dykstra(&self, x0: &[f64]) -> Vec<f64> {
        let sets = self.constraints.len() + 1;
        let dim = self.dim();
        let mut x = x0.to_vec();
        let mut increments = vec![vec![0.0; dim]; sets];
        let mut y = vec![0.0; dim];
        for _ in 0..PROJECTION_MAX_CYCLES {
            let before = x.clone();
            for (i, inc) in increments.iter_mut().enumerate() {
                for m in 0..dim {
                    y[m] = x[m] + inc[m];
                }
                x.copy_from_slice(&y);
                if i == 0 {
                    self.clamp_box(&mut x);
                } else {
                    self.constraints[i - 1].project(&mut x);
                }
                for m in 0..dim {
                    inc[m] = y[m] - x[m];
                }
            }
            let moved = before
                .iter()
                .zip(&x)
                .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
            if moved <= PROJECTION_TOL * 1e-3 && self.violation(&x) <= PROJECTION_TOL {
                break;
            }
        }
        // Land exactly inside the box; half-space residue is below tolerance.
        self.clamp_box(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn norms_of_three_four() {
        assert_eq!(lq_norm(&[3.0, 4.0], NormOrder::Two), 5.0);
        assert_eq!(lq_norm(&[3.0, -4.0], NormOrder::One), 7.0);
        assert_eq!(lq_norm(&[3.0, -4.0], NormOrder::Infinity), 4.0);
        assert!((lq_norm(&[3.0, 4.0], NormOrder::General(2.0 + 1e-12)) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn general_norm_does_not_overflow() {
        let v = [1e300, 1e300];
        let n = lq_norm(&v, NormOrder::General(50.0));
        assert!(n.is_finite());
        assert!((n / 1e300 - 2f64.powf(1.0 / 50.0)).abs() < 1e-12);
    }

    #[test]
    fn norm_order_parsing() {
        assert_eq!(NormOrder::from_f64(1.0).unwrap(), NormOrder::One);
        assert_eq!(NormOrder::from_f64(f64::INFINITY).unwrap(), NormOrder::Infinity);
        assert!(NormOrder::from_f64(0.5).is_err());
        assert!(NormOrder::from_f64(f64::NAN).is_err());
        let q: NormOrder = serde_json::from_str("\"inf\"").unwrap();
        assert_eq!(q, NormOrder::Infinity);
        let q: NormOrder = serde_json::from_str("1.5").unwrap();
        assert_eq!(q, NormOrder::General(1.5));
        assert_eq!(NormOrder::General(3.0).dual(), NormOrder::General(1.5));
    }

    #[test]
    fn projection_clamps_box() {
        let region = FeasibleRegion::cube(2, 0.0, 10.0).unwrap();
        assert_eq!(region.project(&[5.0, -2.0]).unwrap().0, vec![5.0, 0.0]);
        assert_eq!(region.project(&[3.0, 3.0]).unwrap().0, vec![3.0, 3.0]);
    }

    #[test]
    fn projection_onto_halfspace_corner() {
        let region = FeasibleRegion::new(
            vec![0.0, 0.0],
            vec![10.0, 10.0],
            vec![LinearConstraint::new(vec![1.0, 1.0], 2.0)],
        )
        .unwrap();
        let p = region.project(&[2.0, 2.0]).unwrap();
        // Oracle: fine-grid minimizer of the Euclidean distance over the region.
        let h = 1e-3;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let steps = (2.0 / h) as usize;
        for i in 0..=steps {
            let a = i as f64 * h;
            for j in 0..=steps {
                let b = j as f64 * h;
                if a + b <= 2.0 + 1e-12 {
                    let d = (a - 2.0).powi(2) + (b - 2.0).powi(2);
                    if d < best.0 {
                        best = (d, a, b);
                    }
                }
            }
        }
        assert!((best.1 - 1.0).abs() < 2.0 * h && (best.2 - 1.0).abs() < 2.0 * h);
        assert!((p[0] - best.1).abs() < 2.0 * h && (p[1] - best.2).abs() < 2.0 * h);
        assert!((p[0] - 1.0).abs() < 1e-9 && (p[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_region_detected_at_construction() {
        let err = FeasibleRegion::new(
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![LinearConstraint::new(vec![-1.0, -1.0], -3.0)],
        )
        .unwrap_err();
        assert_eq!(err, GeometryError::InfeasibleRegion);
        // Two half-spaces, each compatible with the box but not with each other.
        let err = FeasibleRegion::new(
            vec![0.0, 0.0],
            vec![4.0, 4.0],
            vec![
                LinearConstraint::new(vec![1.0, 1.0], 1.0),
                LinearConstraint::new(vec![-1.0, -1.0], -2.0),
            ],
        )
        .unwrap_err();
        assert_eq!(err, GeometryError::InfeasibleRegion);
        assert!(FeasibleRegion::cube(2, 1.0, 0.0).is_err());
    }

    #[test]
    fn normalized_step_examples() {
        let p = normalized_step(&[0.0, 0.0], &[3.0, 4.0], 1.0, NormOrder::Two).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        let p = normalized_step(&[1.0, 1.0], &[0.0, -2.0], 0.5, NormOrder::Infinity).unwrap();
        assert_eq!(p.0, vec![1.0, 0.5]);
        let p = normalized_step(&[0.0, 0.0], &[1.0, 1.0], 1.0, NormOrder::One).unwrap();
        assert_eq!(p.0, vec![0.5, 0.5]);
        assert_eq!(
            normalized_step(&[0.0], &[0.0], 1.0, NormOrder::Two),
            Err(GeometryError::ZeroGradient)
        );
    }

    #[test]
    fn ball_projection_examples() {
        let c = [0.0, 0.0];
        let p = project_onto_ball(&c, &[3.0, 1.0], 2.0, NormOrder::One);
        assert!((p[0] - 2.0).abs() < 1e-12 && p[1].abs() < 1e-12);
        let p = project_onto_ball(&c, &[3.0, 4.0], 1.0, NormOrder::Two);
        assert!((p[0] - 0.6).abs() < 1e-12);
        let p = project_onto_ball(&c, &[3.0, -0.5], 1.0, NormOrder::Infinity);
        assert_eq!(p.0, vec![1.0, -0.5]);
        let p = project_onto_ball(&c, &[3.0, 4.0], 1.0, NormOrder::General(3.0));
        assert!((lq_norm(&p, NormOrder::General(3.0)) - 1.0).abs() < 1e-9);
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0..100.0f64, dim)
    }

    fn order_strategy() -> impl Strategy<Value = NormOrder> {
        prop_oneof![
            Just(NormOrder::One),
            Just(NormOrder::Two),
            Just(NormOrder::Infinity),
            (1.05..12.0f64).prop_map(NormOrder::General),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn triangle_and_homogeneity(a in vec_strategy(4), b in vec_strategy(4), c in -10.0..10.0f64, q in order_strategy()) {
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let na = lq_norm(&a, q);
            let nb = lq_norm(&b, q);
            prop_assert!(lq_norm(&sum, q) <= na + nb + 1e-9 * (1.0 + na + nb));
            let scaled: Vec<f64> = a.iter().map(|x| c * x).collect();
            prop_assert!((lq_norm(&scaled, q) - c.abs() * na).abs() <= 1e-9 * (1.0 + c.abs() * na));
        }

        #[test]
        fn step_has_exact_length(x in vec_strategy(3), g in vec_strategy(3), r in 0.01..10.0f64, q in order_strategy()) {
            prop_assume!(lq_norm(&g, q) > 1e-6);
            let y = normalized_step(&x, &g, r, q).unwrap();
            prop_assert!((lq_distance(&y, &x, q) - r).abs() <= 1e-9);
        }

        #[test]
        fn projection_idempotent_and_feasible(x in vec_strategy(3), a in vec_strategy(3), b in 0.0..50.0f64) {
            prop_assume!(a.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            let region = FeasibleRegion::new(
                vec![-20.0; 3],
                vec![20.0; 3],
                vec![LinearConstraint::new(a, b), LinearConstraint::new(vec![1.0, 1.0, 1.0], 30.0)],
            ).unwrap();
            let p = region.project(&x).unwrap();
            prop_assert!(region.violation(&p) <= 1e-9);
            let pp = region.project(&p).unwrap();
            prop_assert!(lq_distance(&p, &pp, NormOrder::Infinity) <= 1e-9);
        }

        #[test]
        fn general_ball_projection_is_nearest(
            y in vec_strategy(3),
            r in 0.1..20.0f64,
            p in 1.05..12.0f64,
            dirs in prop::collection::vec(vec_strategy(3), 50),
        ) {
            let q = NormOrder::General(p);
            let c = [0.0; 3];
            let proj = project_onto_ball(&c, &y, r, q);
            let best = lq_distance(&proj, &y, NormOrder::Two);
            for z in dirs {
                let n = lq_norm(&z, q);
                prop_assume!(n > 0.0);
                let z: Vec<f64> = z.iter().map(|v| v * r / n).collect();
                prop_assert!(best <= lq_distance(&z, &y, NormOrder::Two) + 1e-9 * (1.0 + best));
            }
        }

        #[test]
        fn ball_projection_lands_in_ball(c in vec_strategy(3), y in vec_strategy(3), r in 0.1..20.0f64, q in order_strategy()) {
            let p = project_onto_ball(&c, &y, r, q);
            prop_assert!(lq_distance(&p, &c, q) <= r * (1.0 + 1e-9));
        }
    }
}
