//! Voter utility families: ℒp-normed, weighted Euclidean, decomposable
//! piecewise-linear, and decomposable with a linear deficit cost (DLCD).
//!
//! Every family is concave. `subgradient` returns a deterministic element of
//! the superdifferential: sign(0) = 0 for ℒ¹ kinks, the lowest-index
//! coordinate for ℒ∞ ties, and 0 whenever 0 is a valid choice (plateaus and
//! maximizing kinks).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{lq_norm, NormOrder, Point};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UtilityError {
    #[error("dimension mismatch: utility has {expected} dims, point has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index sets overlap at dimension {0}")]
    OverlappingIndexSets(usize),
    #[error("index sets do not cover dimension {0}")]
    UncoveredDimension(usize),
    #[error("index {index} out of range for {dims} dims")]
    IndexOutOfRange { index: usize, dims: usize },
    #[error("weights must be nonnegative and not all zero")]
    InvalidWeights,
    #[error("block count {blocks} does not match weight count {weights}")]
    BlockWeightMismatch { blocks: usize, weights: usize },
    #[error("piecewise-linear function invalid: {0}")]
    InvalidPiecewise(String),
    #[error("dual-norm check needs p > 1 and finite, got {0}")]
    InvalidExponent(f64),
    #[error("coordinate {0} of x equals the ideal; gradient undefined")]
    CoincidentCoordinate(usize),
    #[error("deficit weight must be finite and nonnegative")]
    InvalidDeficitWeight,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Coordinates handled without heap allocation in hot evaluations.
const STACK_DIMS: usize = 16;

/// `f(x) = -‖x - ideal‖_p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpNormedUtility {
    pub p: NormOrder,
    pub ideal: Point,
}

impl LpNormedUtility {
    pub fn new(p: NormOrder, ideal: impl Into<Point>) -> Self {
        LpNormedUtility {
            p,
            ideal: ideal.into(),
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut buf = [0.0; STACK_DIMS];
        if x.len() <= STACK_DIMS {
            let d = &mut buf[..x.len()];
            for (dm, (a, b)) in d.iter_mut().zip(x.iter().zip(self.ideal.iter())) {
                *dm = a - b;
            }
            return -lq_norm(d, self.p);
        }
        let d: Vec<f64> = x.iter().zip(self.ideal.iter()).map(|(a, b)| a - b).collect();
        -lq_norm(&d, self.p)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = self.ideal.iter().zip(x).map(|(a, b)| a - b).collect();
        match self.p {
            NormOrder::One => d.iter().map(|v| sign(*v)).collect(),
            NormOrder::Two => {
                let n = lq_norm(&d, NormOrder::Two);
                if n == 0.0 {
                    vec![0.0; d.len()]
                } else {
                    d.iter().map(|v| v / n).collect()
                }
            }
            NormOrder::Infinity => {
                let mut g = vec![0.0; d.len()];
                let mut best = 0.0;
                let mut arg = None;
                for (m, v) in d.iter().enumerate() {
                    if v.abs() > best {
                        best = v.abs();
                        arg = Some(m);
                    }
                }
                if let Some(m) = arg {
                    g[m] = sign(d[m]);
                }
                g
            }
            NormOrder::General(p) => {
                let n = lq_norm(&d, self.p);
                if n == 0.0 {
                    return vec![0.0; d.len()];
                }
                d.iter()
                    .map(|v| sign(*v) * (v.abs() / n).powf(p - 1.0))
                    .collect()
            }
        }
    }
}

/// `f(x) = -Σ_k (w_k / ‖w‖₂) ‖x^k - ideal^k‖₂` over a partition of the
/// coordinates into blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedEuclideanUtility {
    pub blocks: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
    pub ideal: Point,
}

impl WeightedEuclideanUtility {
    pub fn new(
        blocks: Vec<Vec<usize>>,
        weights: Vec<f64>,
        ideal: impl Into<Point>,
    ) -> Result<Self, UtilityError> {
        let u = WeightedEuclideanUtility {
            blocks,
            weights,
            ideal: ideal.into(),
        };
        u.validate()?;
        Ok(u)
    }

    /// One block per coordinate.
    pub fn singletons(weights: Vec<f64>, ideal: impl Into<Point>) -> Result<Self, UtilityError> {
        let blocks = (0..weights.len()).map(|m| vec![m]).collect();
        Self::new(blocks, weights, ideal)
    }

    pub fn validate(&self) -> Result<(), UtilityError> {
        if self.blocks.len() != self.weights.len() {
            return Err(UtilityError::BlockWeightMismatch {
                blocks: self.blocks.len(),
                weights: self.weights.len(),
            });
        }
        check_partition(self.ideal.dim(), &self.blocks)?;
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || self.weights.iter().all(|w| *w == 0.0)
        {
            return Err(UtilityError::InvalidWeights);
        }
        Ok(())
    }

    /// Normalized block coefficients `w_k / ‖w‖₂`.
    pub fn coefficients(&self) -> Vec<f64> {
        let n = lq_norm(&self.weights, NormOrder::Two);
        self.weights.iter().map(|w| w / n).collect()
    }

    /// Euclidean distance from `x` to the ideal within each block.
    pub fn block_distances(&self, x: &[f64]) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|b| {
                let d: Vec<f64> = b.iter().map(|&m| x[m] - self.ideal[m]).collect();
                lq_norm(&d, NormOrder::Two)
            })
            .collect()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let norm = lq_norm(&self.weights, NormOrder::Two);
        let mut total = 0.0;
        for (block, w) in self.blocks.iter().zip(&self.weights) {
            let mut sq = 0.0;
            for &m in block {
                let d = x[m] - self.ideal[m];
                sq += d * d;
            }
            total += (w / norm) * sq.sqrt();
        }
        -total
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let coef = self.coefficients();
        let dist = self.block_distances(x);
        let mut g = vec![0.0; x.len()];
        for ((block, c), d) in self.blocks.iter().zip(coef).zip(dist) {
            if d > 0.0 {
                for &m in block {
                    g[m] = c * (self.ideal[m] - x[m]) / d;
                }
            }
        }
        g
    }
}

/// A concave piecewise-linear function of one variable. Between consecutive
/// breakpoints it interpolates linearly; outside it extends with
/// `left_slope` / `right_slope`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PiecewiseRepr")]
pub struct PiecewiseLinear {
    breakpoints: Vec<(f64, f64)>,
    left_slope: f64,
    right_slope: f64,
}

#[derive(Deserialize)]
struct PiecewiseRepr {
    breakpoints: Vec<(f64, f64)>,
    left_slope: f64,
    right_slope: f64,
}

impl TryFrom<PiecewiseRepr> for PiecewiseLinear {
    type Error = UtilityError;
    fn try_from(r: PiecewiseRepr) -> Result<Self, Self::Error> {
        PiecewiseLinear::new(r.breakpoints, r.left_slope, r.right_slope)
    }
}

impl PiecewiseLinear {
    pub fn new(
        breakpoints: Vec<(f64, f64)>,
        left_slope: f64,
        right_slope: f64,
    ) -> Result<Self, UtilityError> {
        if breakpoints.is_empty() {
            return Err(UtilityError::InvalidPiecewise("no breakpoints".into()));
        }
        if breakpoints
            .iter()
            .any(|(a, b)| !(a.is_finite() && b.is_finite()))
            || !left_slope.is_finite()
            || !right_slope.is_finite()
        {
            return Err(UtilityError::InvalidPiecewise("non-finite value".into()));
        }
        if breakpoints.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(UtilityError::InvalidPiecewise(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        let f = PiecewiseLinear {
            breakpoints,
            left_slope,
            right_slope,
        };
        let slopes = f.slopes();
        let tol = 1e-12 * slopes.iter().fold(1.0_f64, |m, s| m.max(s.abs()));
        if slopes.windows(2).any(|w| w[1] > w[0] + tol) {
            return Err(UtilityError::InvalidPiecewise(
                "slopes must be non-increasing (concavity)".into(),
            ));
        }
        Ok(f)
    }

    /// Zero on `[lo, hi]`, rising with slope `rise` to the left and falling
    /// with slope `fall` to the right. `plateau(v, v, 1, 1)` is `-|x - v|`.
    pub fn plateau(lo: f64, hi: f64, rise: f64, fall: f64) -> Result<Self, UtilityError> {
        if rise < 0.0 || fall < 0.0 {
            return Err(UtilityError::InvalidPiecewise(
                "plateau slopes must be nonnegative".into(),
            ));
        }
        let bps = if hi > lo {
            vec![(lo, 0.0), (hi, 0.0)]
        } else {
            vec![(lo, 0.0)]
        };
        PiecewiseLinear::new(bps, rise, -fall)
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    /// Segment slopes from left to right: `left_slope`, interior segments,
    /// `right_slope`.
    pub fn slopes(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.breakpoints.len() + 1);
        s.push(self.left_slope);
        for w in self.breakpoints.windows(2) {
            s.push((w[1].1 - w[0].1) / (w[1].0 - w[0].0));
        }
        s.push(self.right_slope);
        s
    }

    /// Adds the linear function `c·x`.
    pub fn add_linear(&self, c: f64) -> PiecewiseLinear {
        PiecewiseLinear {
            breakpoints: self
                .breakpoints
                .iter()
                .map(|&(xi, v)| (xi, v + c * xi))
                .collect(),
            left_slope: self.left_slope + c,
            right_slope: self.right_slope + c,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        let bps = &self.breakpoints;
        let first = bps[0];
        let last = bps[bps.len() - 1];
        if x <= first.0 {
            return first.1 + self.left_slope * (x - first.0);
        }
        if x >= last.0 {
            return last.1 + self.right_slope * (x - last.0);
        }
        let j = bps.partition_point(|(xi, _)| *xi <= x);
        let (x0, v0) = bps[j - 1];
        let (x1, v1) = bps[j];
        v0 + (v1 - v0) * (x - x0) / (x1 - x0)
    }

    /// Superdifferential `[right slope, left slope]` at x.
    pub fn superdifferential(&self, x: f64) -> (f64, f64) {
        let slopes = self.slopes();
        let bps = &self.breakpoints;
        match bps.iter().position(|(xi, _)| *xi == x) {
            Some(j) => (slopes[j + 1], slopes[j]),
            None => {
                let seg = bps.partition_point(|(xi, _)| *xi < x);
                (slopes[seg], slopes[seg])
            }
        }
    }

    /// Deterministic supergradient: 0 if allowed, otherwise the endpoint
    /// closest to 0.
    pub fn derivative(&self, x: f64) -> f64 {
        let (lo, hi) = self.superdifferential(x);
        if lo <= 0.0 && 0.0 <= hi {
            0.0
        } else if lo > 0.0 {
            lo
        } else {
            hi
        }
    }

    /// The maximizer set `[a, b]`; endpoints may be infinite.
    pub fn maximizer_interval(&self) -> (f64, f64) {
        let slopes = self.slopes();
        let bps = &self.breakpoints;
        // Segment i spans (bp[i-1], bp[i]); segment 0 is (-inf, bp[0]).
        let a = if slopes[0] <= 0.0 {
            f64::NEG_INFINITY
        } else {
            let j = (0..bps.len())
                .find(|&j| slopes[j + 1] <= 0.0)
                .unwrap_or(bps.len());
            if j == bps.len() {
                f64::INFINITY
            } else {
                bps[j].0
            }
        };
        let n = slopes.len();
        let b = if slopes[n - 1] >= 0.0 {
            f64::INFINITY
        } else {
            match (0..bps.len()).rev().find(|&j| slopes[j] >= 0.0) {
                Some(j) => bps[j].0,
                None => f64::NEG_INFINITY,
            }
        };
        (a, b)
    }

    /// Maximizer over `[lo, hi]` nearest `anchor`.
    pub fn argmax_on(&self, lo: f64, hi: f64, anchor: f64) -> f64 {
        let (a, b) = self.maximizer_interval();
        anchor.clamp(a.min(b), b.max(a)).clamp(lo, hi)
    }
}

/// `f(x) = Σ_m f^m(x^m)` with concave piecewise-linear components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposableUtility {
    pub components: Vec<PiecewiseLinear>,
}

impl DecomposableUtility {
    pub fn new(components: Vec<PiecewiseLinear>) -> Self {
        DecomposableUtility { components }
    }

    /// `-Σ_m |x^m - ideal^m|`, i.e. per-dimension absolute deviation.
    pub fn absolute_deviation(ideal: &[f64]) -> Self {
        DecomposableUtility {
            components: ideal
                .iter()
                .map(|&v| PiecewiseLinear::plateau(v, v, 1.0, 1.0).expect("valid kink"))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// Per-dimension ideal plateaus `[a_m, b_m]`.
    pub fn plateaus(&self) -> Vec<(f64, f64)> {
        self.components
            .iter()
            .map(PiecewiseLinear::maximizer_interval)
            .collect()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.components
            .iter()
            .zip(x)
            .map(|(f, v)| f.value(*v))
            .sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .zip(x)
            .map(|(f, v)| f.derivative(*v))
            .collect()
    }
}

/// Decomposable utility minus `deficit_weight × (Σ_E x − Σ_I x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DlcdUtility {
    pub base: DecomposableUtility,
    pub deficit_weight: f64,
    pub expenditure_dims: Vec<usize>,
    pub income_dims: Vec<usize>,
}

impl DlcdUtility {
    pub fn new(
        base: DecomposableUtility,
        deficit_weight: f64,
        expenditure_dims: Vec<usize>,
        income_dims: Vec<usize>,
    ) -> Result<Self, UtilityError> {
        let u = DlcdUtility {
            base,
            deficit_weight,
            expenditure_dims,
            income_dims,
        };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<(), UtilityError> {
        if !(self.deficit_weight.is_finite() && self.deficit_weight >= 0.0) {
            return Err(UtilityError::InvalidDeficitWeight);
        }
        check_partition(
            self.base.dim(),
            &[self.expenditure_dims.clone(), self.income_dims.clone()],
        )
    }

    /// Per-dimension functions including the linear deficit term.
    pub fn effective_components(&self) -> Vec<PiecewiseLinear> {
        let mut shift = vec![0.0; self.base.dim()];
        for &e in &self.expenditure_dims {
            shift[e] = -self.deficit_weight;
        }
        for &i in &self.income_dims {
            shift[i] = self.deficit_weight;
        }
        self.base
            .components
            .iter()
            .zip(shift)
            .map(|(f, c)| f.add_linear(c))
            .collect()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d: f64 = self.expenditure_dims.iter().map(|&e| x[e]).sum::<f64>()
            - self.income_dims.iter().map(|&i| x[i]).sum::<f64>();
        self.base.value(x) - self.deficit_weight * d
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.effective_components()
            .iter()
            .zip(x)
            .map(|(f, v)| f.derivative(*v))
            .collect()
    }
}

/// A voter's utility, one of the four supported families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum UtilityModel {
    LpNormed(LpNormedUtility),
    WeightedEuclidean(WeightedEuclideanUtility),
    Decomposable(DecomposableUtility),
    Dlcd(DlcdUtility),
}

impl UtilityModel {
    pub fn dim(&self) -> usize {
        match self {
            UtilityModel::LpNormed(u) => u.ideal.dim(),
            UtilityModel::WeightedEuclidean(u) => u.ideal.dim(),
            UtilityModel::Decomposable(u) => u.dim(),
            UtilityModel::Dlcd(u) => u.base.dim(),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), UtilityError> {
        if x.len() != self.dim() {
            return Err(UtilityError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64, UtilityError> {
        self.check_dim(x)?;
        Ok(match self {
            UtilityModel::LpNormed(u) => u.value(x),
            UtilityModel::WeightedEuclidean(u) => u.value(x),
            UtilityModel::Decomposable(u) => u.value(x),
            UtilityModel::Dlcd(u) => u.value(x),
        })
    }

    pub fn subgradient(&self, x: &[f64]) -> Result<Vec<f64>, UtilityError> {
        self.check_dim(x)?;
        Ok(match self {
            UtilityModel::LpNormed(u) => u.gradient(x),
            UtilityModel::WeightedEuclidean(u) => u.gradient(x),
            UtilityModel::Decomposable(u) => u.gradient(x),
            UtilityModel::Dlcd(u) => u.gradient(x),
        })
    }

    /// The voter's ideal point: the stated ideal for spatial families, the
    /// plateau midpoints for decomposable ones (clamped to a finite endpoint
    /// when a plateau is unbounded).
    pub fn ideal(&self) -> Point {
        let mid = |(a, b): (f64, f64)| match (a.is_finite(), b.is_finite()) {
            (true, true) => 0.5 * (a + b),
            (true, false) => a,
            (false, true) => b,
            (false, false) => 0.0,
        };
        match self {
            UtilityModel::LpNormed(u) => u.ideal.clone(),
            UtilityModel::WeightedEuclidean(u) => u.ideal.clone(),
            UtilityModel::Decomposable(u) => Point(u.plateaus().into_iter().map(mid).collect()),
            UtilityModel::Dlcd(u) => Point(
                u.effective_components()
                    .iter()
                    .map(|f| mid(f.maximizer_interval()))
                    .collect(),
            ),
        }
    }

    pub fn validate(&self) -> Result<(), UtilityError> {
        match self {
            UtilityModel::WeightedEuclidean(u) => u.validate(),
            UtilityModel::Dlcd(u) => u.validate(),
            _ => Ok(()),
        }
    }
}

impl From<LpNormedUtility> for UtilityModel {
    fn from(u: LpNormedUtility) -> Self {
        UtilityModel::LpNormed(u)
    }
}

impl From<WeightedEuclideanUtility> for UtilityModel {
    fn from(u: WeightedEuclideanUtility) -> Self {
        UtilityModel::WeightedEuclidean(u)
    }
}

impl From<DecomposableUtility> for UtilityModel {
    fn from(u: DecomposableUtility) -> Self {
        UtilityModel::Decomposable(u)
    }
}

impl From<DlcdUtility> for UtilityModel {
    fn from(u: DlcdUtility) -> Self {
        UtilityModel::Dlcd(u)
    }
}

fn check_partition(dims: usize, sets: &[Vec<usize>]) -> Result<(), UtilityError> {
    let mut seen = vec![false; dims];
    for set in sets {
        for &m in set {
            if m >= dims {
                return Err(UtilityError::IndexOutOfRange { index: m, dims });
            }
            if seen[m] {
                return Err(UtilityError::OverlappingIndexSets(m));
            }
            seen[m] = true;
        }
    }
    match seen.iter().position(|s| !s) {
        Some(m) => Err(UtilityError::UncoveredDimension(m)),
        None => Ok(()),
    }
}

/// Budget deficit: expenditures minus incomes.
pub fn deficit(x: &[f64], expenditure: &[usize], income: &[usize]) -> Result<f64, UtilityError> {
    check_partition(x.len(), &[expenditure.to_vec(), income.to_vec()])?;
    Ok(expenditure.iter().map(|&e| x[e]).sum::<f64>() - income.iter().map(|&i| x[i]).sum::<f64>())
}

/// ℒq norm (q = p/(p−1)) of the gradient of `x ↦ ‖x − ideal‖_p`; equal to
/// one whenever no coordinate of `x` matches the ideal.
pub fn check_dual_norm_gradient(p: f64, x: &[f64], ideal: &[f64]) -> Result<f64, UtilityError> {
    if !(p.is_finite() && p > 1.0) {
        return Err(UtilityError::InvalidExponent(p));
    }
    if x.len() != ideal.len() {
        return Err(UtilityError::DimensionMismatch {
            expected: ideal.len(),
            got: x.len(),
        });
    }
    if let Some(m) = x.iter().zip(ideal).position(|(a, b)| a == b) {
        return Err(UtilityError::CoincidentCoordinate(m));
    }
    let d: Vec<f64> = x.iter().zip(ideal).map(|(a, b)| a - b).collect();
    let norm: f64 = d.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p);
    let grad: Vec<f64> = d
        .iter()
        .map(|v| sign(*v) * v.abs().powf(p - 1.0) / norm.powf(p - 1.0))
        .collect();
    let q = p / (p - 1.0);
    Ok(grad.iter().map(|g| g.abs().powf(q)).sum::<f64>().powf(1.0 / q))
}
