//! Seeded voter populations.
//!
//! Streams use ChaCha8 seeded from the spec's 64-bit seed; each independent
//! stream (experiment group, oracle sample, ...) gets its own ChaCha stream
//! id, so parallel runs stay reproducible without sharing a generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{NormOrder, Point};
use crate::utility::{
    DecomposableUtility, DlcdUtility, LpNormedUtility, PiecewiseLinear, UtilityError,
    UtilityModel, WeightedEuclideanUtility,
};

/// Rejection attempts for truncated gaussians before clamping.
pub const TRUNCATION_TRIES: usize = 1000;

/// Substream reserved for oracle samples, disjoint from run substreams.
pub const ORACLE_SUBSTREAM: u64 = u64::MAX - 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PopulationError {
    #[error("population needs at least one dimension")]
    NoDimensions,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error(transparent)]
    Utility(#[from] UtilityError),
}

/// One-dimensional distribution of an ideal coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Uniform {
        lo: f64,
        hi: f64,
    },
    TruncatedGaussian {
        mean: f64,
        std: f64,
        lo: f64,
        hi: f64,
    },
    /// Degenerate; violates the bounded-density assumption and exists for
    /// fixed-point tests.
    PointMass {
        value: f64,
    },
    Mixture {
        components: Vec<MixtureComponent>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub dist: Marginal,
}

impl Marginal {
    pub fn validate(&self) -> Result<(), PopulationError> {
        let bad = |m: &str| Err(PopulationError::InvalidDistribution(m.to_string()));
        match self {
            Marginal::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return bad("uniform needs finite lo < hi");
                }
            }
            Marginal::TruncatedGaussian { mean, std, lo, hi } => {
                if !(mean.is_finite() && *std > 0.0 && std.is_finite() && lo < hi) {
                    return bad("truncated gaussian needs std > 0 and lo < hi");
                }
            }
            Marginal::PointMass { value } => {
                if !value.is_finite() {
                    return bad("point mass must be finite");
                }
            }
            Marginal::Mixture { components } => {
                if components.is_empty() || components.iter().any(|c| !(c.weight > 0.0)) {
                    return bad("mixture needs positive weights");
                }
                for c in components {
                    c.dist.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn is_degenerate(&self) -> bool {
        match self {
            Marginal::PointMass { .. } => true,
            Marginal::Mixture { components } => components.iter().any(|c| c.dist.is_degenerate()),
            _ => false,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Marginal::Uniform { lo, hi } => rng.random_range(lo..hi),
            Marginal::TruncatedGaussian { mean, std, lo, hi } => {
                let mut v = mean;
                for _ in 0..TRUNCATION_TRIES {
                    let z: f64 = rng.sample(StandardNormal);
                    v = mean + std * z;
                    if (lo..=hi).contains(&v) {
                        return v;
                    }
                }
                v.clamp(lo, hi)
            }
            Marginal::PointMass { value } => value,
            Marginal::Mixture { ref components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let mut pick = rng.random::<f64>() * total;
                for c in components {
                    if pick < c.weight {
                        return c.dist.sample(rng);
                    }
                    pick -= c.weight;
                }
                components[components.len() - 1].dist.sample(rng)
            }
        }
    }
}

/// Distribution of nonnegative weights / slopes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightDistribution {
    Fixed { value: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Default for WeightDistribution {
    fn default() -> Self {
        WeightDistribution::Fixed { value: 1.0 }
    }
}

impl WeightDistribution {
    fn validate(&self) -> Result<(), PopulationError> {
        match *self {
            WeightDistribution::Fixed { value } if value.is_finite() && value >= 0.0 => Ok(()),
            WeightDistribution::Uniform { lo, hi } if lo >= 0.0 && lo < hi && hi.is_finite() => Ok(()),
            _ => Err(PopulationError::InvalidDistribution(format!("{self:?}"))),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            WeightDistribution::Fixed { value } => value,
            WeightDistribution::Uniform { lo, hi } => rng.random_range(lo..hi),
        }
    }
}

fn default_slopes() -> WeightDistribution {
    WeightDistribution::Fixed { value: 1.0 }
}

/// Which utility family the population draws from, with its per-voter
/// parameter distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    LpNormed {
        p: NormOrder,
    },
    WeightedEuclidean {
        blocks: Vec<Vec<usize>>,
        #[serde(default)]
        weights: WeightDistribution,
    },
    Decomposable {
        /// Slope on each side of the plateau.
        #[serde(default = "default_slopes")]
        slopes: WeightDistribution,
        /// Half-width of the indifference plateau around the ideal.
        #[serde(default)]
        plateau_halfwidth: Option<WeightDistribution>,
    },
    Dlcd {
        #[serde(default = "default_slopes")]
        slopes: WeightDistribution,
        #[serde(default)]
        plateau_halfwidth: Option<WeightDistribution>,
        deficit_weight: WeightDistribution,
        expenditure_dims: Vec<usize>,
        income_dims: Vec<usize>,
    },
}

/// Declarative voter population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub family: Family,
    /// One marginal per dimension; coordinates are drawn independently.
    pub ideals: Vec<Marginal>,
    pub seed: u64,
}

impl PopulationSpec {
    pub fn dim(&self) -> usize {
        self.ideals.len()
    }

    pub fn validate(&self) -> Result<(), PopulationError> {
        if self.ideals.is_empty() {
            return Err(PopulationError::NoDimensions);
        }
        for m in &self.ideals {
            m.validate()?;
        }
        match &self.family {
            Family::LpNormed { p } => p
                .validate()
                .map_err(|e| PopulationError::InvalidDistribution(e.to_string()))?,
            Family::WeightedEuclidean { blocks, weights } => {
                weights.validate()?;
                WeightedEuclideanUtility::new(blocks.clone(), vec![1.0; blocks.len()], Point::zeros(self.dim()))?;
            }
            Family::Decomposable {
                slopes,
                plateau_halfwidth,
            } => {
                slopes.validate()?;
                if let Some(h) = plateau_halfwidth {
                    h.validate()?;
                }
            }
            Family::Dlcd {
                slopes,
                plateau_halfwidth,
                deficit_weight,
                expenditure_dims,
                income_dims,
            } => {
                slopes.validate()?;
                deficit_weight.validate()?;
                if let Some(h) = plateau_halfwidth {
                    h.validate()?;
                }
                crate::utility::deficit(&vec![0.0; self.dim()], expenditure_dims, income_dims)?;
            }
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        PopulationSpec {
            seed,
            ..self.clone()
        }
    }

    /// Stream 0 of this population.
    pub fn stream(&self) -> VoterStream {
        VoterStream::new(self.clone(), 0)
    }

    pub fn substream(&self, id: u64) -> VoterStream {
        VoterStream::new(self.clone(), id)
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> UtilityModel {
        let ideal: Vec<f64> = self.ideals.iter().map(|m| m.sample(rng)).collect();
        match &self.family {
            Family::LpNormed { p } => LpNormedUtility::new(*p, ideal).into(),
            Family::WeightedEuclidean { blocks, weights } => {
                let mut w: Vec<f64> = blocks.iter().map(|_| weights.sample(rng)).collect();
                if w.iter().all(|v| *v == 0.0) {
                    w.iter_mut().for_each(|v| *v = 1.0);
                }
                WeightedEuclideanUtility {
                    blocks: blocks.clone(),
                    weights: w,
                    ideal: Point(ideal),
                }
                .into()
            }
            Family::Decomposable {
                slopes,
                plateau_halfwidth,
            } => decomposable(&ideal, slopes, plateau_halfwidth.as_ref(), rng).into(),
            Family::Dlcd {
                slopes,
                plateau_halfwidth,
                deficit_weight,
                expenditure_dims,
                income_dims,
            } => {
                let base = decomposable(&ideal, slopes, plateau_halfwidth.as_ref(), rng);
                DlcdUtility {
                    base,
                    deficit_weight: deficit_weight.sample(rng),
                    expenditure_dims: expenditure_dims.clone(),
                    income_dims: income_dims.clone(),
                }
                .into()
            }
        }
    }
}

fn decomposable<R: Rng>(
    ideal: &[f64],
    slopes: &WeightDistribution,
    halfwidth: Option<&WeightDistribution>,
    rng: &mut R,
) -> DecomposableUtility {
    DecomposableUtility::new(
        ideal
            .iter()
            .map(|&c| {
                let rise = slopes.sample(rng);
                let fall = slopes.sample(rng);
                let h = halfwidth.map(|d| d.sample(rng)).unwrap_or(0.0);
                PiecewiseLinear::plateau(c - h, c + h, rise, fall).expect("nonnegative slopes")
            })
            .collect(),
    )
}

/// A deterministic, single-owner sequence of voters.
#[derive(Clone, Debug)]
pub struct VoterStream {
    spec: PopulationSpec,
    substream: u64,
    cursor: u64,
    rng: ChaCha8Rng,
}

impl VoterStream {
    pub fn new(spec: PopulationSpec, substream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(substream);
        VoterStream {
            spec,
            substream,
            cursor: 0,
            rng,
        }
    }

    pub fn spec(&self) -> &PopulationSpec {
        &self.spec
    }

    pub fn substream_id(&self) -> u64 {
        self.substream
    }

    /// Number of voters drawn so far.
    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn sample_voter(&mut self) -> UtilityModel {
        self.cursor += 1;
        self.spec.draw(&mut self.rng)
    }
}

impl Iterator for VoterStream {
    type Item = UtilityModel;
    fn next(&mut self) -> Option<UtilityModel> {
        Some(self.sample_voter())
    }
}

/// The first `n` voters of the spec's stream 0.
pub fn replay(spec: &PopulationSpec, n: usize) -> Vec<UtilityModel> {
    spec.stream().take(n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform2(seed: u64) -> PopulationSpec {
        PopulationSpec {
            family: Family::LpNormed { p: NormOrder::Two },
            ideals: vec![Marginal::Uniform { lo: 0.0, hi: 1.0 }; 2],
            seed,
        }
    }

    #[test]
    fn uniform_mean_converges() {
        let voters = replay(&uniform2(7), 100_000);
        let mut mean = [0.0; 2];
        for v in &voters {
            let i = v.ideal();
            mean[0] += i[0];
            mean[1] += i[1];
        }
        for m in mean {
            assert!((m / 1e5 - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn point_mass_gives_fixed_ideal() {
        let spec = PopulationSpec {
            family: Family::LpNormed { p: NormOrder::One },
            ideals: vec![Marginal::PointMass { value: 3.0 }, Marginal::PointMass { value: -1.0 }],
            seed: 1,
        };
        assert!(replay(&spec, 50).iter().all(|v| v.ideal().0 == vec![3.0, -1.0]));
    }

    #[test]
    fn bimodal_mixture_median_in_gap() {
        let spec = PopulationSpec {
            family: Family::Decomposable {
                slopes: default_slopes(),
                plateau_halfwidth: None,
            },
            ideals: vec![Marginal::Mixture {
                components: vec![
                    MixtureComponent { weight: 0.5, dist: Marginal::Uniform { lo: 0.0, hi: 1.0 } },
                    MixtureComponent { weight: 0.5, dist: Marginal::Uniform { lo: 9.0, hi: 10.0 } },
                ],
            }],
            seed: 3,
        };
        let mut xs: Vec<f64> = replay(&spec, 100_000).iter().map(|v| v.ideal()[0]).collect();
        xs.sort_by(f64::total_cmp);
        let med = 0.5 * (xs[49_999] + xs[50_000]);
        assert!((0.99..=9.01).contains(&med), "median {med}");
        let below = xs.iter().filter(|v| **v < 5.0).count() as f64 / xs.len() as f64;
        assert!((below - 0.5).abs() < 0.01);
    }

    #[test]
    fn replay_is_deterministic_and_matches_stream() {
        let spec = uniform2(42);
        assert!(replay(&spec, 0).is_empty());
        assert_eq!(replay(&spec, 5), replay(&spec, 5));
        let mut s = spec.stream();
        let drawn: Vec<_> = (0..5).map(|_| s.sample_voter()).collect();
        assert_eq!(drawn, replay(&spec, 5));
        assert_eq!(s.cursor(), 5);
    }

    #[test]
    fn substreams_differ() {
        let spec = uniform2(42);
        let a: Vec<_> = spec.substream(1).take(3).collect();
        let b: Vec<_> = spec.substream(2).take(3).collect();
        assert_ne!(a, b);
    }

    #[test]
    fn truncated_gaussian_respects_bounds() {
        let m = Marginal::TruncatedGaussian { mean: 0.0, std: 5.0, lo: -1.0, hi: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..10_000).map(|_| m.sample(&mut rng)).all(|v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = PopulationSpec {
            family: Family::Dlcd {
                slopes: WeightDistribution::Uniform { lo: 0.5, hi: 2.0 },
                plateau_halfwidth: Some(WeightDistribution::Fixed { value: 0.1 }),
                deficit_weight: WeightDistribution::Uniform { lo: 0.0, hi: 0.3 },
                expenditure_dims: vec![0, 1, 2],
                income_dims: vec![3],
            },
            ideals: vec![Marginal::TruncatedGaussian { mean: 1.0, std: 0.3, lo: 0.0, hi: 2.0 }; 4],
            seed: 9,
        };
        let text = toml::to_string(&spec).unwrap();
        let back: PopulationSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
        back.validate().unwrap();
    }
}
