//! Steepest-descent shape optimization in the `W^{1,∞}` topology.
//!
//! Shapes are represented by the method of mappings: a fixed reference
//! triangulation of the hold-all square `D = (-2, 2)²` carries a flag per cell
//! marking the reference domain, and a piecewise linear [`DeformationMap`]
//! moves its vertices. The current shape is the image of the flagged cells.
//!
//! The optimization pipeline per step is
//!
//! 1. [`fem::solve_state`] and [`fem::solve_adjoint`] on the deformed subdomain,
//! 2. [`shapegrad::assemble_shape_gradient`] for the discrete shape derivative,
//! 3. [`direction::admm_direction`] for the steepest-descent direction under the
//!    pointwise constraint `|DV| ≤ 1` (spectral norm),
//! 4. [`descent::armijo_search`] for the step length.
//!
//! [`descent::cascade`] chains levels of congruent refinement.

pub mod descent;
pub mod direction;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod metrics;
pub mod problem;
pub mod shapegrad;

pub use descent::{cascade, optimize_level, CascadeOutcome, DescentConfig, DescentHistory, StepRecord};
pub use direction::{admm_direction, dual_norm, project_spectral_ball, AdmmParams, AdmmState};
pub use fem::{evaluate_cost, solve_adjoint, solve_state, FeFunction, SolverOptions};
pub use mesh::{DeformationMap, Point, ReferenceMesh};
pub use metrics::{deformation_norms, discrete_hcd, eoc, ConvergenceTable};
pub use problem::{CostIntegrand, Experiment, ExperimentId, PenaltyConfig, PenaltySchedule, TargetShape};
pub use shapegrad::{assemble_shape_gradient, evaluate_pairing, volume, ShapeGradient};

/// Half side length of the hold-all square `D = (-L, L)²`.
pub const HOLD_ALL_HALF_WIDTH: f64 = 2.0;
