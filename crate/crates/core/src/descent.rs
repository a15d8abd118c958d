//! Steepest descent with the Armijo rule, and the cascading multi-level driver.
//!
//! One step solves state and adjoint on the current shape, assembles the shape
//! derivative, computes the `W^{1,∞}` direction with ADMM and backtracks over
//! `t ∈ {½, ¼, …, t_min}`. The map is updated nodally,
//! `Φₕ ← Φₕ + t·V(Φₕ)`, which is the composition `(id + tV)∘Φₕ` for P1 fields.

use nalgebra::Vector2;
use thiserror::Error;

use crate::direction::{admm_direction_with, AdmmParams, AdmmState};
use crate::fem::{cost_with, energy, solve_adjoint_with, solve_state_with, CostBreakdown, FeFunction, FemError, SolverOptions};
use crate::mesh::{all_cell_geometry, check_admissible, refine_congruent, DeformationMap, MeshError, ReferenceMesh};
use crate::metrics::{deformation_norms, discrete_hcd, ConvergenceTable, MetricsError};
use crate::problem::{CostIntegrand, Experiment, PenaltyConfig, TargetShape};
use crate::shapegrad::assemble_with;

#[derive(Debug, Error)]
pub enum DescentError {
    #[error("invalid descent configuration: {0}")]
    Config(String),
    #[error("Armijo search needs a descent direction, got pairing {0:e}")]
    NotDescent(f64),
    #[error("initial map is not admissible ({inverted} inverted cells, {moved} moved boundary vertices)")]
    InadmissibleStart { inverted: usize, moved: usize },
    #[error("level {level}, step {step}: {source}")]
    Solver {
        level: usize,
        step: usize,
        #[source]
        source: FemError,
    },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Settings of the descent loop and the cascade.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescentConfig {
    /// Armijo constant in `(0, 1)`.
    pub gamma: f64,
    /// Smallest trial step is `2^{-t_min_exp}`.
    pub t_min_exp: u32,
    /// Steps per level before refining (`None`: until the step length drops to `t_min`).
    pub max_steps: Option<usize>,
    pub levels: usize,
    /// Keep iterating each level until `t ≤ t_min` and report that shape,
    /// while the next level still starts from the shape after `max_steps`.
    pub converge: bool,
    /// Safety cap on the steps of one level when iterating to convergence.
    pub step_cap: usize,
    /// Stop when the dual norm falls below `stationarity_rtol·(1 + |𝒥ₕ|)`.
    pub stationarity_rtol: f64,
    pub admm: AdmmParams,
    pub solver: SolverOptions,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            gamma: 1e-4,
            t_min_exp: 11,
            max_steps: Some(15),
            levels: 4,
            converge: false,
            step_cap: 500,
            stationarity_rtol: 1e-8,
            admm: AdmmParams::default(),
            solver: SolverOptions::default(),
        }
    }
}

impl DescentConfig {
    pub fn t_min(&self) -> f64 {
        0.5f64.powi(self.t_min_exp as i32)
    }

    pub fn validate(&self) -> Result<(), DescentError> {
        let bad = |m: &str| Err(DescentError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if self.t_min_exp == 0 || self.t_min_exp > 60 {
            return bad("t_min_exp must be in 1..=60");
        }
        if self.levels == 0 {
            return bad("levels must be at least 1");
        }
        if self.max_steps == Some(0) || self.step_cap == 0 {
            return bad("step limits must be positive");
        }
        if !(self.stationarity_rtol >= 0.0) {
            return bad("stationarity tolerance must be non-negative");
        }
        if !(self.admm.tau0 > 0.0) || self.admm.max_iter == 0 || !(self.admm.balance_factor > 1.0) {
            return bad("ADMM parameters out of range");
        }
        if self.admm.tol.is_some_and(|t| !(t > 0.0)) {
            return bad("ADMM tolerance must be positive");
        }
        Ok(())
    }

    fn step_limit(&self) -> usize {
        match (self.converge, self.max_steps) {
            (false, Some(k)) => k.min(self.step_cap),
            _ => self.step_cap,
        }
    }
}

/// Values of one accepted step, taken on the shape it produced.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub level: usize,
    /// 1-based within the level.
    pub step: usize,
    pub h: f64,
    pub t_k: f64,
    /// Total energy `𝒥ₕ` including an active penalty.
    pub energy: f64,
    /// Energy before the step.
    pub energy_before: f64,
    /// Objective without the penalty.
    pub objective: f64,
    /// `𝒥ₕ′[Vₖ]` of the direction used for this step.
    pub pairing: f64,
    /// `−𝒥ₕ′[Vₖ]`, the dual norm at the shape the step started from.
    pub dual_norm: f64,
    pub hcd: f64,
    pub dphi_norm: f64,
    pub dphi_inv_norm: f64,
    pub min_det: f64,
    pub volume: f64,
    pub admm_iterations: usize,
    pub admm_converged: bool,
}

/// Energy and shape diagnostics of one shape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeStats {
    pub energy: f64,
    pub objective: f64,
    pub hcd: f64,
    pub dphi_norm: f64,
    pub dphi_inv_norm: f64,
    pub volume: f64,
}

/// Why a level stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    StepLimit,
    /// Accepted a step with `t ≤ t_min`.
    SmallStep,
    /// No trial step down to `t_min` passed.
    Rejected,
    Stationary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelSummary {
    pub level: usize,
    pub h: f64,
    pub mu: Option<f64>,
    /// Carried shape at the start of the level, evaluated on this level's mesh.
    pub start: ShapeStats,
    /// Shape reported for the level.
    pub end: ShapeStats,
    pub steps: usize,
    /// Index of the shape handed to the next level.
    pub k_star: usize,
    pub stop: StopReason,
    /// Dual norm at the first and last iterate that computed one.
    pub first_dual_norm: f64,
    pub last_dual_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DescentHistory {
    pub steps: Vec<StepRecord>,
    pub levels: Vec<LevelSummary>,
}

impl DescentHistory {
    pub fn level_steps(&self, level: usize) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().filter(move |s| s.level == level)
    }
}

/// Outcome of a single level.
#[derive(Clone, Debug)]
pub struct LevelOutcome {
    /// Final shape of the level.
    pub phi: DeformationMap,
    /// Shape after `k*` steps, to be carried to the next level.
    pub seed: DeformationMap,
    pub summary: LevelSummary,
    pub steps: Vec<StepRecord>,
}

/// Data defining the functional of one level.
#[derive(Clone, Copy)]
pub struct LevelProblem<'a> {
    pub integrand: &'a dyn CostIntegrand,
    pub penalty: Option<PenaltyConfig>,
    /// Known optimum for the HCD column; `NaN` entries without it.
    pub target: Option<&'a TargetShape>,
}

/// Largest `t = 2^{-k}`, `k = 1..=t_min_exp`, for which `trial(t)` returns an
/// energy `e` with `e − energy0 ≤ γ·t·pairing`. `None` from `trial` counts as a
/// failed trial (inadmissible shape or solver failure).
pub fn armijo_backtrack<T>(
    energy0: f64,
    pairing: f64,
    gamma: f64,
    t_min_exp: u32,
    mut trial: impl FnMut(f64) -> Option<(f64, T)>,
) -> Result<Option<(f64, f64, T)>, DescentError> {
    if !(pairing < 0.0) {
        return Err(DescentError::NotDescent(pairing));
    }
    let mut t = 1.0;
    for _ in 0..t_min_exp {
        t *= 0.5;
        if let Some((e, payload)) = trial(t) {
            if e - energy0 <= gamma * t * pairing {
                return Ok(Some((t, e, payload)));
            }
        }
    }
    Ok(None)
}

/// An accepted Armijo step.
#[derive(Clone, Debug)]
pub struct ArmijoStep {
    pub t: f64,
    pub phi: DeformationMap,
    pub state: FeFunction,
    pub cost: CostBreakdown,
}

/// Armijo backtracking along `field` from `phi`. Inadmissible trial shapes and
/// failed state solves are treated as failed trials; `Ok(None)` means no step
/// down to `t_min` was accepted.
#[allow(clippy::too_many_arguments)]
pub fn armijo_search(
    mesh: &ReferenceMesh,
    phi: &DeformationMap,
    field: &[Vector2<f64>],
    energy0: f64,
    pairing: f64,
    config: &DescentConfig,
    integrand: &dyn CostIntegrand,
    penalty: Option<&PenaltyConfig>,
) -> Result<Option<ArmijoStep>, DescentError> {
    let found = armijo_backtrack(energy0, pairing, config.gamma, config.t_min_exp, |t| {
        let trial = phi.displaced(field, t);
        if !check_admissible(mesh, &trial).admissible {
            return None;
        }
        let (u, cost) = energy(mesh, &trial, integrand, penalty, &config.solver).ok()?;
        cost.total().is_finite().then_some((cost.total(), (trial, u, cost)))
    })?;
    Ok(found.map(|(t, _, (phi, state, cost))| ArmijoStep { t, phi, state, cost }))
}

fn shape_stats(
    mesh: &ReferenceMesh,
    phi: &DeformationMap,
    cost: &CostBreakdown,
    target: Option<&TargetShape>,
) -> Result<(ShapeStats, f64), DescentError> {
    let (dphi_norm, dphi_inv_norm) = deformation_norms(mesh, phi)?;
    let min_det = check_admissible(mesh, phi).min_det;
    Ok((
        ShapeStats {
            energy: cost.total(),
            objective: cost.objective,
            hcd: target.map_or(f64::NAN, |t| discrete_hcd(mesh, phi, t)),
            dphi_norm,
            dphi_inv_norm,
            volume: cost.volume,
        },
        min_det,
    ))
}

/// Runs Algorithm-1 steepest descent on one level.
pub fn optimize_level(
    mesh: &ReferenceMesh,
    phi0: &DeformationMap,
    level: usize,
    config: &DescentConfig,
    problem: LevelProblem<'_>,
) -> Result<LevelOutcome, DescentError> {
    config.validate()?;
    let report = check_admissible(mesh, phi0);
    if !report.admissible {
        return Err(DescentError::InadmissibleStart {
            inverted: report.inverted_cells.len(),
            moved: report.moved_boundary_vertices.len(),
        });
    }
    let penalty = problem.penalty.as_ref();
    let h = mesh.h();
    let at = |step: usize| move |source: FemError| DescentError::Solver { level, step, source };

    let mut phi = phi0.clone();
    let geometry = all_cell_geometry(mesh, &phi)?;
    let mut u = solve_state_with(mesh, &phi, &geometry, problem.integrand, &config.solver).map_err(at(0))?;
    let mut cost = cost_with(mesh, &phi, &geometry, &u, problem.integrand, penalty).map_err(at(0))?;
    let (start, _) = shape_stats(mesh, &phi, &cost, problem.target)?;

    let limit = config.step_limit();
    let seed_after = config.max_steps.unwrap_or(usize::MAX);
    let mut seed = None;
    let mut steps = Vec::new();
    let mut warm: Option<AdmmState> = None;
    let mut first_dual = f64::NAN;
    let mut last_dual = f64::NAN;
    let mut stop = StopReason::StepLimit;

    for k in 0..limit {
        let geometry = all_cell_geometry(mesh, &phi)?;
        let p = solve_adjoint_with(mesh, &phi, &geometry, &u, problem.integrand, &config.solver).map_err(at(k + 1))?;
        let grad = assemble_with(mesh, &phi, &geometry, &u, &p, problem.integrand, penalty).map_err(at(k + 1))?;
        let direction = admm_direction_with(mesh, &geometry, &grad, &config.admm, warm.as_ref()).map_err(at(k + 1))?;
        let dual = -direction.pairing;
        if k == 0 {
            first_dual = dual;
        }
        last_dual = dual;
        if !(dual >= config.stationarity_rtol * (1.0 + cost.total().abs())) || direction.pairing == 0.0 {
            stop = StopReason::Stationary;
            break;
        }
        let energy_before = cost.total();
        let Some(accepted) = armijo_search(
            mesh,
            &phi,
            &direction.field,
            energy_before,
            direction.pairing,
            config,
            problem.integrand,
            penalty,
        )?
        else {
            stop = StopReason::Rejected;
            break;
        };
        warm = Some(direction.state);
        phi = accepted.phi;
        u = accepted.state;
        cost = accepted.cost;
        let (stats, min_det) = shape_stats(mesh, &phi, &cost, problem.target)?;
        steps.push(StepRecord {
            level,
            step: k + 1,
            h,
            t_k: accepted.t,
            energy: stats.energy,
            energy_before,
            objective: stats.objective,
            pairing: direction.pairing,
            dual_norm: dual,
            hcd: stats.hcd,
            dphi_norm: stats.dphi_norm,
            dphi_inv_norm: stats.dphi_inv_norm,
            min_det,
            volume: stats.volume,
            admm_iterations: warm.as_ref().map_or(0, |s| s.iterations),
            admm_converged: warm.as_ref().is_some_and(|s| s.converged),
        });
        if k + 1 == seed_after {
            seed = Some((k + 1, phi.clone()));
        }
        if accepted.t <= config.t_min() {
            stop = StopReason::SmallStep;
            break;
        }
    }

    let (end, _) = shape_stats(mesh, &phi, &cost, problem.target)?;
    let (k_star, seed) = seed.unwrap_or_else(|| (steps.len(), phi.clone()));
    Ok(LevelOutcome {
        phi,
        seed,
        summary: LevelSummary {
            level,
            h,
            mu: problem.penalty.map(|p| p.mu),
            start,
            end,
            steps: steps.len(),
            k_star,
            stop,
            first_dual_norm: first_dual,
            last_dual_norm: last_dual,
        },
        steps,
    })
}

/// Final mesh and shape of one cascade level.
#[derive(Clone, Debug)]
pub struct LevelResult {
    pub mesh: ReferenceMesh,
    pub phi: DeformationMap,
}

#[derive(Clone, Debug)]
pub struct CascadeOutcome {
    pub history: DescentHistory,
    pub levels: Vec<LevelResult>,
    /// Objective (without penalty) and HCD of each level's reported shape.
    pub table: ConvergenceTable,
}

/// Cascading driver: optimize, refine congruently carrying `Φₕ^{k*}`, update
/// the penalty parameter for the new `h`, repeat.
pub fn cascade(
    config: &DescentConfig,
    experiment: &Experiment,
    initial_mesh: ReferenceMesh,
    mut on_level: impl FnMut(&LevelSummary),
) -> Result<CascadeOutcome, DescentError> {
    config.validate()?;
    let mut mesh = initial_mesh;
    let mut phi = DeformationMap::identity(&mesh);
    let mut history = DescentHistory::default();
    let mut levels = Vec::with_capacity(config.levels);
    for level in 0..config.levels {
        if level > 0 {
            let (fine, carried) = refine_congruent(&mesh, &phi)?;
            mesh = fine;
            phi = carried;
        }
        let problem = LevelProblem {
            integrand: experiment.integrand.as_ref(),
            penalty: experiment.penalty.map(|s| s.config(mesh.h())),
            target: Some(&experiment.target),
        };
        let outcome = optimize_level(&mesh, &phi, level, config, problem)?;
        on_level(&outcome.summary);
        history.steps.extend(outcome.steps);
        history.levels.push(outcome.summary);
        levels.push(LevelResult { mesh: mesh.clone(), phi: outcome.phi });
        phi = outcome.seed;
    }
    let rows: Vec<_> = history.levels.iter().map(|l| (l.h, l.mu, l.end.objective, l.end.hcd)).collect();
    let table = ConvergenceTable::from_levels(&rows)?;
    Ok(CascadeOutcome { history, levels, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_square_in_square, Point};
    use crate::problem::{experiment1, exp1_integrand};

    #[test]
    fn backtrack_first_trial() {
        let r = armijo_backtrack(1.0, -1.0, 1e-4, 11, |t| Some((1.0 - t + 0.1 * t * t, ()))).unwrap();
        assert_eq!(r.unwrap().0, 0.5);
    }

    #[test]
    fn backtrack_rejects_non_descent() {
        assert!(matches!(armijo_backtrack(0.0, 0.0, 1e-4, 11, |_| Some((0.0, ()))), Err(DescentError::NotDescent(_))));
    }

    #[test]
    fn backtrack_matches_closed_form_threshold() {
        let (e0, g, gamma) = (2.0, -0.75f64, 1e-4);
        for c in [0.2, 1.0, 3.7, 50.0, 900.0, 1e4] {
            // e0 + g t + c t² − e0 ≤ γ t g  ⇔  t ≤ (1 − γ)|g|/c
            let threshold = (1.0 - gamma) * g.abs() / c;
            let expected = (1..=11).map(|k| 0.5f64.powi(k)).find(|&t| t <= threshold);
            let got = armijo_backtrack(e0, g, gamma, 11, |t| Some((e0 + g * t + c * t * t, ()))).unwrap().map(|r| r.0);
            assert_eq!(got, expected, "c = {c}");
        }
    }

    #[test]
    fn failed_trials_are_skipped() {
        let r = armijo_backtrack(0.0, -1.0, 0.5, 11, |t| (t < 0.2).then_some((-t, ()))).unwrap();
        assert_eq!(r.unwrap().0, 0.125);
        assert!(armijo_backtrack(0.0, -1.0, 0.5, 3, |_| None::<(f64, ())>).unwrap().is_none());
    }

    #[test]
    fn config_validation() {
        assert!(DescentConfig::default().validate().is_ok());
        assert!(DescentConfig { gamma: 1.5, ..Default::default() }.validate().is_err());
        assert!(DescentConfig { levels: 0, ..Default::default() }.validate().is_err());
        assert_eq!(DescentConfig::default().t_min(), 1.0 / 2048.0);
    }

    struct Nothing;
    impl CostIntegrand for Nothing {
        fn j(&self, _: Point, _: f64, _: Vector2<f64>) -> f64 {
            0.0
        }
        fn j_x(&self, _: Point, _: f64, _: Vector2<f64>) -> Vector2<f64> {
            Vector2::zeros()
        }
        fn j_u(&self, _: Point, _: f64, _: Vector2<f64>) -> f64 {
            0.0
        }
        fn j_z(&self, _: Point, _: f64, _: Vector2<f64>) -> Vector2<f64> {
            Vector2::zeros()
        }
        fn source(&self, _: Point) -> f64 {
            0.0
        }
        fn source_gradient(&self, _: Point) -> Vector2<f64> {
            Vector2::zeros()
        }
    }

    #[test]
    fn zero_gradient_stops_immediately() {
        let mesh = generate_square_in_square(4).unwrap();
        let phi = DeformationMap::identity(&mesh);
        let problem = LevelProblem { integrand: &Nothing, penalty: None, target: None };
        let out = optimize_level(&mesh, &phi, 0, &DescentConfig::default(), problem).unwrap();
        assert_eq!(out.summary.steps, 0);
        assert_eq!(out.summary.stop, StopReason::Stationary);
        assert_eq!(out.summary.first_dual_norm, 0.0);
    }

    #[test]
    fn infinite_stationarity_tolerance_stops_immediately() {
        let mesh = generate_square_in_square(4).unwrap();
        let phi = DeformationMap::identity(&mesh);
        let integrand = exp1_integrand();
        let config = DescentConfig { stationarity_rtol: f64::INFINITY, ..Default::default() };
        let problem = LevelProblem { integrand: &integrand, penalty: None, target: None };
        let out = optimize_level(&mesh, &phi, 0, &config, problem).unwrap();
        assert!(out.steps.is_empty());
        assert_eq!(out.phi, phi);
    }

    #[test]
    fn coarse_exp1_level_decreases() {
        let exp = experiment1();
        let mesh = generate_square_in_square(4).unwrap();
        let phi = DeformationMap::identity(&mesh);
        let config = DescentConfig { max_steps: Some(4), ..Default::default() };
        let problem = LevelProblem { integrand: exp.integrand.as_ref(), penalty: None, target: Some(&exp.target) };
        let out = optimize_level(&mesh, &phi, 0, &config, problem).unwrap();
        assert!(!out.steps.is_empty());
        for s in &out.steps {
            assert!(s.energy - s.energy_before <= config.gamma * s.t_k * s.pairing);
            assert!(s.min_det > 0.0);
        }
    }
}
