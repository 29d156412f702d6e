//! Source/query containers, estimator configuration and input normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

/// A single source point with its aggregation weight and channel mass.
#[derive(Clone, Debug, PartialEq)]
pub struct SourcePoint {
    pub position: Vec3,
    pub weight: f64,
    pub mass: Vec<f64>,
}

impl SourcePoint {
    /// Builds a point with the default weight rule (norm of the mass, or 1).
    pub fn new(position: Vec3, mass: Vec<f64>) -> Self {
        let weight = default_weight(&mass);
        SourcePoint {
            position,
            weight,
            mass,
        }
    }
}

/// Weight used for centers of mass when none is given explicitly: the
/// Euclidean norm of the mass vector if positive, otherwise 1.
pub fn default_weight(mass: &[f64]) -> f64 {
    let n = mass.iter().map(|m| m * m).sum::<f64>().sqrt();
    if n > 0.0 && n.is_finite() {
        n
    } else {
        1.0
    }
}

/// Ordered source points stored as parallel arrays. Masses are flattened with
/// stride `channel_count`.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceSet {
    positions: Vec<Vec3>,
    weights: Vec<f64>,
    masses: Vec<f64>,
    channel_count: usize,
}

impl SourceSet {
    /// Validates and wraps parallel arrays. `weights = None` applies the
    /// default weight rule per point.
    pub fn new(
        positions: Vec<Vec3>,
        masses: Vec<f64>,
        channel_count: usize,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        if channel_count == 0 {
            return Err(Error::InvalidInput("channel_count must be positive".into()));
        }
        if masses.len() != positions.len() * channel_count {
            return Err(Error::LengthMismatch {
                left: masses.len(),
                right: positions.len() * channel_count,
            });
        }
        if !positions.iter().all(|p| geom::is_finite(*p)) {
            return Err(Error::NonFinite("source position"));
        }
        if !masses.iter().all(|m| m.is_finite()) {
            return Err(Error::NonFinite("source mass"));
        }
        let weights = match weights {
            Some(w) => {
                if w.len() != positions.len() {
                    return Err(Error::LengthMismatch {
                        left: w.len(),
                        right: positions.len(),
                    });
                }
                if let Some(bad) = w.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
                    return Err(Error::InvalidInput(format!(
                        "weight of point {bad} must be positive and finite"
                    )));
                }
                w
            }
            None => masses.chunks(channel_count).map(default_weight).collect(),
        };
        Ok(SourceSet {
            positions,
            weights,
            masses,
            channel_count,
        })
    }

    pub fn from_points(points: Vec<SourcePoint>) -> Result<Self> {
        let c = points.first().ok_or(Error::EmptyPointSet)?.mass.len();
        let mut positions = Vec::with_capacity(points.len());
        let mut weights = Vec::with_capacity(points.len());
        let mut masses = Vec::with_capacity(points.len() * c);
        for (i, p) in points.into_iter().enumerate() {
            if p.mass.len() != c {
                return Err(Error::InvalidInput(format!(
                    "point {i} has {} mass channels, expected {c}",
                    p.mass.len()
                )));
            }
            positions.push(p.position);
            weights.push(p.weight);
            masses.extend_from_slice(&p.mass);
        }
        SourceSet::new(positions, masses, c, Some(weights))
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn channel_count(&self) -> usize {
        self.channel_count
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    #[inline]
    pub fn position(&self, i: usize) -> Vec3 {
        self.positions[i]
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    #[inline]
    pub fn mass(&self, i: usize) -> &[f64] {
        let c = self.channel_count;
        &self.masses[i * c..(i + 1) * c]
    }

    pub fn point(&self, i: usize) -> SourcePoint {
        SourcePoint {
            position: self.position(i),
            weight: self.weight(i),
            mass: self.mass(i).to_vec(),
        }
    }

    /// Applies `x' = scale * x + offset` to every position.
    pub fn transformed(&self, scale: f64, offset: Vec3) -> SourceSet {
        let positions = self
            .positions
            .iter()
            .map(|&p| geom::add(geom::scale(p, scale), offset))
            .collect();
        SourceSet {
            positions,
            ..self.clone()
        }
    }
}

/// Ordered query locations.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct QuerySet {
    points: Vec<Vec3>,
}

impl QuerySet {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if !points.iter().all(|p| geom::is_finite(*p)) {
            return Err(Error::NonFinite("query point"));
        }
        Ok(QuerySet { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BruteForce,
    BarnesHut,
    Stochastic,
    TelescopingExhaustive,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::BruteForce => "brute_force",
            Method::BarnesHut => "barnes_hut",
            Method::Stochastic => "stochastic",
            Method::TelescopingExhaustive => "telescoping_exhaustive",
        }
    }

    /// Per-dimension branching factor used when none is requested.
    pub fn default_branching(self) -> usize {
        match self {
            Method::Stochastic => 4,
            _ => 2,
        }
    }
}

/// How Russian roulette continuation probabilities are chosen along a path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RrMode {
    /// Ratio of consecutive far-field ratios, parent clamped to at least 1.
    PaperRatio,
    FixedHalf,
    /// Every path runs to its leaf.
    Disabled,
}

impl RrMode {
    pub const ALL: [RrMode; 3] = [RrMode::PaperRatio, RrMode::FixedHalf, RrMode::Disabled];

    pub fn name(self) -> &'static str {
        match self {
            RrMode::PaperRatio => "paper_ratio",
            RrMode::FixedHalf => "fixed_half",
            RrMode::Disabled => "disabled",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub method: Method,
    pub beta: f64,
    pub samples_per_subdomain: usize,
    pub rr_mode: RrMode,
    pub seed: u64,
    pub branching_per_dim: usize,
    pub max_depth: usize,
    pub precision: Precision,
    /// Worker cap for query-parallel evaluation; 0 picks automatically.
    pub threads: usize,
}

impl EstimatorConfig {
    pub fn new(method: Method) -> Self {
        EstimatorConfig {
            method,
            beta: 2.0,
            samples_per_subdomain: 1,
            rr_mode: RrMode::PaperRatio,
            seed: 0,
            branching_per_dim: method.default_branching(),
            max_depth: 32,
            precision: Precision::F64,
            threads: 0,
        }
    }

    pub fn brute_force() -> Self {
        Self::new(Method::BruteForce)
    }

    pub fn barnes_hut(beta: f64) -> Self {
        EstimatorConfig {
            beta,
            ..Self::new(Method::BarnesHut)
        }
    }

    pub fn stochastic(samples_per_subdomain: usize, seed: u64) -> Self {
        EstimatorConfig {
            samples_per_subdomain,
            seed,
            ..Self::new(Method::Stochastic)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.branching_per_dim < 2 {
            return Err(Error::InvalidConfig("branching_per_dim must be >= 2".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::InvalidConfig("max_depth must be positive".into()));
        }
        match self.method {
            Method::BarnesHut if !(self.beta > 0.0) => {
                Err(Error::InvalidConfig("beta must be positive".into()))
            }
            Method::Stochastic if self.samples_per_subdomain == 0 => Err(Error::InvalidConfig(
                "samples_per_subdomain must be >= 1".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Isotropic map of a point list into `[-1, 1]^3`.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    /// Forward map is `x' = scale * x + offset`.
    pub scale: f64,
    pub offset: Vec3,
    pub points: Vec<Vec3>,
}

impl Normalization {
    pub fn apply(&self, p: Vec3) -> Vec3 {
        geom::add(geom::scale(p, self.scale), self.offset)
    }

    pub fn invert(&self, p: Vec3) -> Vec3 {
        geom::scale(geom::sub(p, self.offset), 1.0 / self.scale)
    }
}

/// Centers the bounding box at the origin and scales uniformly so the largest
/// axis spans exactly `[-1, 1]`. Coincident inputs map to the origin with
/// scale 1.
pub fn normalize_to_unit_cube(points: &[Vec3]) -> Result<Normalization> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if !points.iter().all(|p| geom::is_finite(*p)) {
        return Err(Error::NonFinite("point"));
    }
    let (lo, hi) = geom::bounds(points);
    let center = geom::scale(geom::add(lo, hi), 0.5);
    let half = (0..3).map(|k| 0.5 * (hi[k] - lo[k])).fold(0.0, f64::max);
    let scale = if half > 0.0 { 1.0 / half } else { 1.0 };
    let offset = geom::scale(center, -scale);
    let points = points
        .iter()
        .map(|&p| {
            let mut q = geom::scale(geom::sub(p, center), scale);
            for v in &mut q {
                *v = v.clamp(-1.0, 1.0);
            }
            q
        })
        .collect();
    Ok(Normalization {
        scale,
        offset,
        points,
    })
}
