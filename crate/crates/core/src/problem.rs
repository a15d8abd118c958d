//! Cost integrands, source terms, target shapes and the volume penalty of the
//! three benchmark experiments.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector2;
use thiserror::Error;

use crate::mesh::{generate_annulus_in_square, generate_square_in_square, MeshError, Point, ReferenceMesh};

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("integrand evaluated at singular point ({0}, {1})")]
    SingularPoint(f64, f64),
    #[error("invalid penalty configuration: {0}")]
    Penalty(String),
    #[error("unknown experiment '{0}' (expected exp1, exp2 or exp3)")]
    UnknownExperiment(String),
}

/// Integrand `j(x, u, z)` of `J(Ω) = ∫_Ω j(x, u, ∇u)` together with its
/// partial derivatives and the data `f` of the state equation `-Δu = f`.
pub trait CostIntegrand: Send + Sync {
    fn j(&self, x: Point, u: f64, z: Vector2<f64>) -> f64;
    fn j_x(&self, x: Point, u: f64, z: Vector2<f64>) -> Vector2<f64>;
    fn j_u(&self, x: Point, u: f64, z: Vector2<f64>) -> f64;
    fn j_z(&self, x: Point, u: f64, z: Vector2<f64>) -> Vector2<f64>;
    fn source(&self, x: Point) -> f64;
    fn source_gradient(&self, x: Point) -> Vector2<f64>;

    /// Rejects evaluation points where the data is singular.
    fn check_point(&self, _x: Point) -> Result<(), ProblemError> {
        Ok(())
    }
}

/// Tracking functional `½(u − u_d)²` for a desired state with known gradient,
/// and constant source.
pub struct Tracking<D, G> {
    desired: D,
    desired_gradient: G,
    source: f64,
    singular_at_origin: bool,
}

impl<D, G> Tracking<D, G>
where
    D: Fn(Point) -> f64 + Send + Sync,
    G: Fn(Point) -> Vector2<f64> + Send + Sync,
{
    pub fn new(desired: D, desired_gradient: G, source: f64) -> Self {
        Self { desired, desired_gradient, source, singular_at_origin: false }
    }

    pub fn desired(&self, x: Point) -> f64 {
        (self.desired)(x)
    }
}

impl<D, G> CostIntegrand for Tracking<D, G>
where
    D: Fn(Point) -> f64 + Send + Sync,
    G: Fn(Point) -> Vector2<f64> + Send + Sync,
{
    fn j(&self, x: Point, u: f64, _z: Vector2<f64>) -> f64 {
        let r = u - (self.desired)(x);
        0.5 * r * r
    }

    fn j_x(&self, x: Point, u: f64, _z: Vector2<f64>) -> Vector2<f64> {
        -(self.desired_gradient)(x) * (u - (self.desired)(x))
    }

    fn j_u(&self, x: Point, u: f64, _z: Vector2<f64>) -> f64 {
        u - (self.desired)(x)
    }

    fn j_z(&self, _x: Point, _u: f64, _z: Vector2<f64>) -> Vector2<f64> {
        Vector2::zeros()
    }

    fn source(&self, _x: Point) -> f64 {
        self.source
    }

    fn source_gradient(&self, _x: Point) -> Vector2<f64> {
        Vector2::zeros()
    }

    fn check_point(&self, x: Point) -> Result<(), ProblemError> {
        if self.singular_at_origin && x.norm() < 1e-12 {
            return Err(ProblemError::SingularPoint(x.x, x.y));
        }
        Ok(())
    }
}

/// `j = ½|z + x/2|²` with `f = 1`. Vanishes exactly for the state of any ball
/// centred at the origin.
#[derive(Clone, Copy, Debug, Default)]
pub struct GradientMatching;

impl CostIntegrand for GradientMatching {
    fn j(&self, x: Point, _u: f64, z: Vector2<f64>) -> f64 {
        0.5 * (z + x * 0.5).norm_squared()
    }

    fn j_x(&self, x: Point, _u: f64, z: Vector2<f64>) -> Vector2<f64> {
        (z + x * 0.5) * 0.5
    }

    fn j_u(&self, _x: Point, _u: f64, _z: Vector2<f64>) -> f64 {
        0.0
    }

    fn j_z(&self, x: Point, _u: f64, z: Vector2<f64>) -> Vector2<f64> {
        z + x * 0.5
    }

    fn source(&self, _x: Point) -> f64 {
        1.0
    }

    fn source_gradient(&self, _x: Point) -> Vector2<f64> {
        Vector2::zeros()
    }
}

/// Experiment 1 desired state `4/π − |x|²`.
pub fn exp1_desired(x: Point) -> f64 {
    4.0 / PI - x.norm_squared()
}

fn exp1_desired_gradient(x: Point) -> Vector2<f64> {
    -2.0 * x
}

/// Experiment 2 desired state, radially symmetric with zeros on `|x| = 1/√π`
/// and `|x| = 2/√π` and `−Δu_d = 5`.
pub fn exp2_desired(x: Point) -> f64 {
    let r2 = x.norm_squared();
    let ln4 = 4f64.ln();
    5.0 * (-PI * r2 * ln4 + 3.0 * r2.ln() + 3.0 * PI.ln() + ln4) / (PI * 256f64.ln())
}

fn exp2_desired_gradient(x: Point) -> Vector2<f64> {
    // d/dx of (−π r² ln4 + 3 ln r²) = (−2π ln4 + 6/r²) x
    let r2 = x.norm_squared();
    x * (5.0 * (-2.0 * PI * 4f64.ln() + 6.0 / r2) / (PI * 256f64.ln()))
}

pub type TrackingFn = Tracking<fn(Point) -> f64, fn(Point) -> Vector2<f64>>;

pub fn exp1_integrand() -> TrackingFn {
    Tracking::new(exp1_desired as fn(Point) -> f64, exp1_desired_gradient as fn(Point) -> Vector2<f64>, 1.0)
}

pub fn exp2_integrand() -> TrackingFn {
    Tracking {
        singular_at_origin: true,
        ..Tracking::new(exp2_desired as fn(Point) -> f64, exp2_desired_gradient as fn(Point) -> Vector2<f64>, 5.0)
    }
}

/// Known minimiser, used through its complement distance function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TargetShape {
    Ball { radius: f64 },
    Annulus { inner: f64, outer: f64 },
}

impl TargetShape {
    /// Distance to the complement: `inf{|x − y| : y ∉ Ω*}`.
    pub fn complement_distance(&self, x: Point) -> f64 {
        let r = x.norm();
        match *self {
            TargetShape::Ball { radius } => (radius - r).max(0.0),
            TargetShape::Annulus { inner, outer } => (r - inner).min(outer - r).max(0.0),
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            TargetShape::Ball { radius } => PI * radius * radius,
            TargetShape::Annulus { inner, outer } => PI * (outer * outer - inner * inner),
        }
    }
}

/// Free function form of [`TargetShape::complement_distance`].
pub fn target_distance(shape: &TargetShape, x: Point) -> f64 {
    shape.complement_distance(x)
}

/// Quadratic volume penalty `μ/2 (|Ω| − m₀)²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltyConfig {
    pub m0: f64,
    pub mu: f64,
}

impl PenaltyConfig {
    pub fn new(m0: f64, mu: f64) -> Result<Self, ProblemError> {
        if !(m0 > 0.0) || !(mu >= 0.0) || !mu.is_finite() {
            return Err(ProblemError::Penalty(format!("need m0 > 0 and finite mu >= 0, got m0={m0}, mu={mu}")));
        }
        Ok(Self { m0, mu })
    }

    /// Penalty value and the coefficient `μ(|Ω| − m₀)` multiplying `∫_Ω div V`
    /// in its shape derivative.
    pub fn value_and_derivative(&self, volume: f64) -> (f64, f64) {
        let gap = volume - self.m0;
        (0.5 * self.mu * gap * gap, self.mu * gap)
    }
}

pub fn penalty_value_and_derivative(volume: f64, config: &PenaltyConfig) -> (f64, f64) {
    config.value_and_derivative(volume)
}

/// Penalty weight as a function of the reference mesh size: `μ_h = (8h)^{-1/2}`
/// with fixed target volume.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltySchedule {
    pub m0: f64,
}

impl PenaltySchedule {
    pub fn mu(&self, h: f64) -> f64 {
        (8.0 * h).powf(-0.5)
    }

    pub fn config(&self, h: f64) -> PenaltyConfig {
        PenaltyConfig { m0: self.m0, mu: self.mu(h) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExperimentId {
    Exp1,
    Exp2,
    Exp3,
}

impl FromStr for ExperimentId {
    type Err = ProblemError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exp1" => Ok(Self::Exp1),
            "exp2" => Ok(Self::Exp2),
            "exp3" => Ok(Self::Exp3),
            other => Err(ProblemError::UnknownExperiment(other.to_string())),
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Exp1 => "exp1",
            Self::Exp2 => "exp2",
            Self::Exp3 => "exp3",
        })
    }
}

/// Recipe for the initial reference mesh.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MeshSpec {
    /// Criss-cross grid with `n` squares per side, `Ω̂ = (-1, 1)²`.
    SquareInSquare { n: usize },
    Annulus { n_angular: usize, n_radial: usize, r_inner: f64, r_outer: f64 },
}

impl MeshSpec {
    pub fn build(&self) -> Result<ReferenceMesh, MeshError> {
        match *self {
            MeshSpec::SquareInSquare { n } => generate_square_in_square(n),
            MeshSpec::Annulus { n_angular, n_radial, r_inner, r_outer } => {
                generate_annulus_in_square(n_angular, n_radial, r_inner, r_outer)
            }
        }
    }

    /// Same generator family with the resolution parameter replaced.
    pub fn with_resolution(&self, n: usize) -> Self {
        match *self {
            MeshSpec::SquareInSquare { .. } => MeshSpec::SquareInSquare { n },
            MeshSpec::Annulus { r_inner, r_outer, .. } => {
                MeshSpec::Annulus { n_angular: n, n_radial: (n / 8).max(1), r_inner, r_outer }
            }
        }
    }
}

/// One benchmark problem.
pub struct Experiment {
    pub id: ExperimentId,
    pub integrand: Box<dyn CostIntegrand>,
    pub target: TargetShape,
    pub penalty: Option<PenaltySchedule>,
    pub initial_mesh: MeshSpec,
}

impl fmt::Debug for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Experiment")
            .field("id", &self.id)
            .field("target", &self.target)
            .field("penalty", &self.penalty)
            .field("initial_mesh", &self.initial_mesh)
            .finish_non_exhaustive()
    }
}

/// Tracking problem with `u_d = 4/π − |x|²`, `f = 1`, starting from `(-1, 1)²`.
/// Expected local optimum: the ball of radius `4/√(3π)`.
pub fn experiment1() -> Experiment {
    Experiment {
        id: ExperimentId::Exp1,
        integrand: Box::new(exp1_integrand()),
        target: TargetShape::Ball { radius: 4.0 / (3.0 * PI).sqrt() },
        penalty: None,
        initial_mesh: MeshSpec::SquareInSquare { n: 8 },
    }
}

/// Tracking problem with a logarithmic desired state, `f = 5`, starting from
/// the annulus `0.7 < |x| < 1.4`. Optimum: the annulus `1/√π < |x| < 2/√π`.
pub fn experiment2() -> Experiment {
    Experiment {
        id: ExperimentId::Exp2,
        integrand: Box::new(exp2_integrand()),
        target: TargetShape::Annulus { inner: 1.0 / PI.sqrt(), outer: 2.0 / PI.sqrt() },
        penalty: None,
        initial_mesh: MeshSpec::Annulus { n_angular: 16, n_radial: 2, r_inner: 0.7, r_outer: 1.4 },
    }
}

/// Gradient matching `½|∇u + x/2|²`, `f = 1`, with the volume penalty towards
/// `m₀ = 4`. Optimum: the ball of radius `2/√π` with zero energy.
pub fn experiment3() -> Experiment {
    Experiment {
        id: ExperimentId::Exp3,
        integrand: Box::new(GradientMatching),
        target: TargetShape::Ball { radius: 2.0 / PI.sqrt() },
        penalty: Some(PenaltySchedule { m0: 4.0 }),
        initial_mesh: MeshSpec::SquareInSquare { n: 8 },
    }
}

pub fn experiment(id: ExperimentId) -> Experiment {
    match id {
        ExperimentId::Exp1 => experiment1(),
        ExperimentId::Exp2 => experiment2(),
        ExperimentId::Exp3 => experiment3(),
    }
}
