//! Penalty-continuation solver for the robust control problem.
//!
//! At a fixed control vector `v` the robust objective equals the optimal
//! value of the inner moment LP, and by strong duality also of its dual:
//! `min_y y . b` subject to `y . a_i >= h_i(v)` for every scenario `i`,
//! where `h_i` is the terminal cost under scenario parameter `p_i` and
//! `a_i = [1, p_i, p_i^2]`. The robust control problem is therefore the
//! joint minimization of `y . b` over `(v, y)` under those constraints and
//! the control box.
//!
//! The dual constraints are handled by a smoothed quadratic penalty: each
//! violation `g_i = h_i - y . a_i` passes through a C^1 ramp
//! ([`smooth_constraint`]), their sum `G_eps >= 0` aggregates the
//! infeasibility, and the merit `J = y . b + (rho/2) G_eps^2` is minimized
//! over the box by a projected-gradient inner loop ([`solve`]). An outer
//! schedule tightens the penalty weight `rho`, the feasibility target `eta`,
//! and the inner stationarity tolerance `omega` until both convergence
//! targets `eta_star` and `omega_star` hold.
//!
//! The schedule is single-loop: every round runs one inner solve, then
//! either relaxes the feasibility target (when the smoothed infeasibility
//! already meets it) or raises the penalty weight, and always tightens the
//! inner tolerance. [`flow_note`] states this for reports.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ambiguity::{build_moment_lp, moment_column, AmbiguitySpec, DiscreteSupport};
use crate::control::ControlGrid;
use crate::dynamics::Dynamics;
use crate::integrator::{
    integrate_terminal, integrate_terminal_scenarios, terminal_cost_gradient,
};
use crate::lp::{check_feasible_support, solve_isp, LpSolution, LpStatus};
use crate::{inf_norm, Error, Result};

/// Armijo sufficient-decrease coefficient.
const ARMIJO_C1: f64 = 1e-4;
/// Step length below which the line search gives up.
const STEP_STALL: f64 = 1e-14;
/// Distance from a bound below which a component counts as active.
const ACTIVE_TOL: f64 = 1e-12;

/// A robust control problem instance: dynamics, moment ambiguity, and the
/// scenario support the adversary optimizes over.
#[derive(Clone)]
pub struct RobustControlProblem {
    pub model: Arc<dyn Dynamics>,
    pub ambiguity: AmbiguitySpec,
    pub support: DiscreteSupport,
}

impl RobustControlProblem {
    /// Validate that the support can match the prescribed moments (so the
    /// inner LP is feasible for every control).
    pub fn new(
        model: Arc<dyn Dynamics>,
        ambiguity: AmbiguitySpec,
        support: DiscreteSupport,
    ) -> Result<Self> {
        if !check_feasible_support(&ambiguity, &support)? {
            return Err(Error::InvalidData(format!(
                "moment-infeasible support: no distribution on the {} given points attains \
                 mean {} and standard deviation {}",
                support.len(),
                ambiguity.mu,
                ambiguity.sigma
            )));
        }
        Ok(Self {
            model,
            ambiguity,
            support,
        })
    }
}

/// C^1 ramp smoothing of `max(g, 0)`; returns `(value, slope)`.
///
/// Zero below `-epsilon`, the parabola `(g + epsilon)^2 / (4 epsilon)` on
/// the band `|g| <= epsilon`, and `g` above; value and slope are continuous
/// at both seams.
pub fn smooth_constraint(g: f64, epsilon: f64) -> (f64, f64) {
    debug_assert!(epsilon > 0.0, "smoothing width must be positive");
    if g < -epsilon {
        (0.0, 0.0)
    } else if g <= epsilon {
        let t = g + epsilon;
        (t * t / (4.0 * epsilon), t / (2.0 * epsilon))
    } else {
        (g, 1.0)
    }
}

/// Dual-constraint residuals `g_i = h_i - y . a_i` (feasible iff all `<= 0`).
pub fn constraint_values(costs: &[f64], points: &[f64], y: &[f64; 3]) -> Vec<f64> {
    costs
        .iter()
        .zip(points)
        .map(|(&h, &p)| {
            let a = moment_column(p);
            h - (y[0] * a[0] + y[1] * a[1] + y[2] * a[2])
        })
        .collect()
}

/// Penalty parameters of one merit evaluation.
#[derive(Debug, Clone, Copy)]
pub struct MeritParams {
    pub rho: f64,
    pub epsilon: f64,
    pub steps_per_piece: usize,
}

impl MeritParams {
    fn validate(&self) -> Result<()> {
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::InvalidData(format!(
                "penalty weight must be positive and finite, got {}",
                self.rho
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidData(format!(
                "smoothing width must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if self.steps_per_piece == 0 {
            return Err(Error::InvalidData(
                "steps per piece must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Merit gradient blocks with respect to the flat control vector and `y`.
#[derive(Debug, Clone)]
pub struct MeritGradient {
    pub v: Vec<f64>,
    pub y: [f64; 3],
}

/// One merit evaluation at a point `(v, y)`.
#[derive(Debug, Clone)]
pub struct MeritEval {
    /// `J = y . b + (rho/2) G_eps^2`.
    pub merit: f64,
    /// The dual objective `y . b`.
    pub dual_objective: f64,
    /// Aggregate smoothed infeasibility `G_eps = sum_i g_i^eps`.
    pub penalty: f64,
    /// Largest unsmoothed residual `max_i g_i`.
    pub max_constraint: f64,
    /// Present when the evaluation was asked for derivatives.
    pub gradient: Option<MeritGradient>,
}

/// Evaluate the penalty merit at `(grid, y)`, optionally with its gradient.
///
/// States are integrated for every scenario; when `with_gradient` is set,
/// forward sensitivities are integrated only for the scenarios whose
/// smoothed residual has a nonzero slope (the others contribute nothing to
/// the chain rule `dJ/dv = rho G_eps sum_i slope_i dh_i/dv`).
pub fn evaluate_merit(
    problem: &RobustControlProblem,
    grid: &ControlGrid,
    y: &[f64; 3],
    params: &MeritParams,
    with_gradient: bool,
) -> Result<MeritEval> {
    params.validate()?;
    if y.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidData("dual vector must be finite".into()));
    }
    let model = problem.model.as_ref();
    let points = problem.support.points();
    let terminals = integrate_terminal_scenarios(
        model,
        grid,
        points,
        params.steps_per_piece,
        false,
    )?;
    let costs: Vec<f64> = terminals.iter().map(|t| t.cost(model)).collect();
    let b = problem.ambiguity.moment_vector();
    let residuals = constraint_values(&costs, points, y);
    let mut penalty = 0.0;
    let mut slopes = Vec::with_capacity(residuals.len());
    let mut max_constraint = f64::NEG_INFINITY;
    for &g in &residuals {
        let (value, slope) = smooth_constraint(g, params.epsilon);
        penalty += value;
        slopes.push(slope);
        max_constraint = max_constraint.max(g);
    }
    let dual_objective = y[0] * b[0] + y[1] * b[1] + y[2] * b[2];
    let merit = dual_objective + 0.5 * params.rho * penalty * penalty;
    if !merit.is_finite() {
        return Err(Error::NumericalBlowup("merit value is not finite".into()));
    }
    let gradient = if with_gradient {
        let scale = params.rho * penalty;
        let mut weighted_column = [0.0f64; 3];
        for (i, &p) in points.iter().enumerate() {
            let a = moment_column(p);
            for r in 0..3 {
                weighted_column[r] += slopes[i] * a[r];
            }
        }
        let grad_y = std::array::from_fn(|r| b[r] - scale * weighted_column[r]);
        let active: Vec<usize> = (0..points.len())
            .filter(|&i| scale * slopes[i] != 0.0)
            .collect();
        let mut grad_v = vec![0.0; grid.dim_flat()];
        let sens_points = active
            .par_iter()
            .map(|&i| {
                integrate_terminal(model, grid, points[i], params.steps_per_piece, true)
            })
            .collect::<Result<Vec<_>>>()?;
        for (&i, point) in active.iter().zip(&sens_points) {
            let dh = terminal_cost_gradient(model, point)?;
            let w = scale * slopes[i];
            for (g, d) in grad_v.iter_mut().zip(&dh) {
                *g += w * d;
            }
        }
        Some(MeritGradient {
            v: grad_v,
            y: grad_y,
        })
    } else {
        None
    };
    Ok(MeritEval {
        merit,
        dual_objective,
        penalty,
        max_constraint,
        gradient,
    })
}

/// Box-projected gradient of the control block: components pressing against
/// an active bound from inside are zeroed, everything else passes through.
pub fn projected_control_gradient(grid: &ControlGrid, grad_v: &[f64]) -> Vec<f64> {
    let n_u = grid.dim_control();
    grid.flat()
        .iter()
        .zip(grad_v)
        .enumerate()
        .map(|(j, (&v, &d))| {
            let l = j % n_u;
            if grid.bounds().at_lower(l, v, ACTIVE_TOL) {
                d.min(0.0)
            } else if grid.bounds().at_upper(l, v, ACTIVE_TOL) {
                d.max(0.0)
            } else {
                d
            }
        })
        .collect()
}

/// Inner-LP solve at a fixed control: returns the scenario terminal costs and
/// the worst-case distribution with its dual certificate.
pub fn inner_worst_case(
    problem: &RobustControlProblem,
    grid: &ControlGrid,
    steps_per_piece: usize,
) -> Result<(Vec<f64>, LpSolution)> {
    let model = problem.model.as_ref();
    let terminals = integrate_terminal_scenarios(
        model,
        grid,
        problem.support.points(),
        steps_per_piece,
        false,
    )?;
    let costs: Vec<f64> = terminals.iter().map(|t| t.cost(model)).collect();
    let data = build_moment_lp(&problem.ambiguity, &problem.support, costs.clone())?;
    let sol = solve_isp(&data)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::InternalError(
            "inner LP was validated feasible at construction but did not solve".into(),
        ));
    }
    Ok((costs, sol))
}

/// Outer-schedule constants.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AlgorithmSchedule {
    /// Initial penalty weight; also sets `omega_0 = 1/rho_0` and
    /// `eta_0 = 1/rho_0^0.1`.
    pub rho0: f64,
    /// Penalty growth factor (> 1).
    pub alpha1: f64,
    /// Inner-tolerance shrink factor (in (0, 1)).
    pub alpha2: f64,
    /// Feasibility-target shrink factor (in (0, 1)).
    pub alpha3: f64,
    /// Terminal stationarity tolerance.
    pub omega_star: f64,
    /// Terminal smoothed-infeasibility tolerance.
    pub eta_star: f64,
    /// Outer-round cap.
    pub max_outer: usize,
}

impl Default for AlgorithmSchedule {
    fn default() -> Self {
        Self {
            rho0: 10.0,
            alpha1: 10.0,
            alpha2: 0.5,
            alpha3: 0.5,
            omega_star: 1e-5,
            eta_star: 1e-6,
            max_outer: 30,
        }
    }
}

impl AlgorithmSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rho0 > 0.0
            && self.rho0.is_finite()
            && self.alpha1 > 1.0
            && self.alpha1.is_finite()
            && self.alpha2 > 0.0
            && self.alpha2 < 1.0
            && self.alpha3 > 0.0
            && self.alpha3 < 1.0
            && self.omega_star > 0.0
            && self.eta_star > 0.0
            && self.max_outer >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidData(
                "schedule constants out of range (need rho0 > 0, alpha1 > 1, \
                 alpha2/alpha3 in (0,1), positive tolerances, max_outer >= 1)"
                    .into(),
            ))
        }
    }
}

/// How the inner loop treats the dual vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Descend jointly in `(v, y)` (default).
    #[default]
    Joint,
    /// Reset `y` to the exact LP dual at the start of every round and
    /// descend in `v` only. Because the exact dual leaves active residuals
    /// at `g_i = 0`, the smoothed infeasibility starts each round near
    /// `epsilon/4 * #active` — above `eta_star` unless
    /// [`SolverOptions::epsilon_shrink`] is set — and the merit's control
    /// gradient carries the vanishing factor `rho * G_eps`, which makes the
    /// mode prone to premature mechanical convergence. Provided for
    /// experimentation; the joint strategy is the supported default.
    AltDirection,
}

/// Full solver configuration.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub schedule: AlgorithmSchedule,
    /// Constraint-smoothing width (fixed across rounds unless
    /// `epsilon_shrink` is set).
    pub epsilon: f64,
    /// Optional per-round geometric shrink factor for `epsilon`.
    pub epsilon_shrink: Option<f64>,
    pub steps_per_piece: usize,
    /// Projected-gradient iteration cap per round.
    pub max_inner: usize,
    pub strategy: Strategy,
    /// Number of random initial controls scored before the descent
    /// (0 disables multistart; the caller's initial point always competes).
    pub multistart: usize,
    /// Seed for the multistart draws.
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            schedule: AlgorithmSchedule::default(),
            epsilon: 1e-3,
            epsilon_shrink: None,
            steps_per_piece: 10,
            max_inner: 500,
            strategy: Strategy::Joint,
            multistart: 0,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidData(
                "smoothing width must be positive and finite".into(),
            ));
        }
        if let Some(f) = self.epsilon_shrink {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidData(
                    "epsilon shrink factor must lie in (0, 1)".into(),
                ));
            }
        }
        if self.steps_per_piece == 0 || self.max_inner == 0 {
            return Err(Error::InvalidData(
                "steps per piece and inner iteration cap must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Why the solver stopped. The report always carries the best iterate found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// Both terminal tolerances hold.
    Converged,
    /// The outer-round cap was exhausted first.
    MaxIterations,
    /// The Armijo search stalled below the minimum step length.
    LineSearchFailure,
}

/// One outer round of the progress trace.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub round: usize,
    pub rho: f64,
    pub omega: f64,
    pub eta: f64,
    pub merit: f64,
    pub dual_objective: f64,
    pub penalty: f64,
    pub max_constraint: f64,
    pub pgrad_norm: f64,
}

/// Solve outcome: final iterate, diagnostics, and the per-round trace.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub control: ControlGrid,
    pub dual: [f64; 3],
    /// Dual objective `y . b` at the final iterate (the robust upper bound).
    pub objective: f64,
    pub merit: f64,
    pub penalty: f64,
    pub max_constraint: f64,
    pub pgrad_norm: f64,
    pub termination: Termination,
    pub outer_rounds: usize,
    pub inner_iterations: usize,
    pub trace: Vec<TraceRow>,
    /// Dual value of the winning multistart candidate, when multistart ran.
    pub multistart_value: Option<f64>,
}

/// One-line description of the schedule flow for report headers.
pub fn flow_note() -> &'static str {
    "schedule: single-loop; each round runs one inner solve, then either relaxes the \
     feasibility target (if already met) or raises the penalty weight, and always \
     tightens the inner tolerance"
}

/// Winner of a multistart scoring pass.
#[derive(Debug, Clone)]
pub struct MultistartOutcome {
    pub grid: ControlGrid,
    pub dual: [f64; 3],
    /// Worst-case expected cost (the LP dual value) of the winner.
    pub value: f64,
    /// 0 is the caller's template values; draws are numbered from 1.
    pub winner_index: usize,
}

/// Score the template control plus `draws` uniform random controls by their
/// exact worst-case value and return the best pair `(v, y)`.
///
/// Draws come from a single seeded stream in index order, so results do not
/// depend on thread scheduling; candidates are evaluated in parallel. Ties
/// go to the lowest index. A candidate whose integration blows up is skipped.
pub fn multistart_init(
    problem: &RobustControlProblem,
    template: &ControlGrid,
    draws: usize,
    steps_per_piece: usize,
    seed: u64,
) -> Result<MultistartOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_u = template.dim_control();
    let lower = template.bounds().lower().to_vec();
    let upper = template.bounds().upper().to_vec();
    let mut candidates = vec![template.clone()];
    for _ in 0..draws {
        let values: Vec<f64> = (0..template.dim_flat())
            .map(|j| {
                let l = j % n_u;
                rng.gen_range(lower[l]..=upper[l])
            })
            .collect();
        candidates.push(template.with_values(values)?);
    }
    let scored: Vec<Result<Option<([f64; 3], f64)>>> = candidates
        .par_iter()
        .map(|grid| match inner_worst_case(problem, grid, steps_per_piece) {
            Ok((_, sol)) => Ok(Some((sol.dual, sol.objective))),
            Err(Error::NumericalBlowup(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut best: Option<(usize, [f64; 3], f64)> = None;
    for (index, entry) in scored.into_iter().enumerate() {
        if let Some((dual, value)) = entry? {
            if best.map_or(true, |(_, _, bv)| value < bv) {
                best = Some((index, dual, value));
            }
        }
    }
    let (winner_index, dual, value) = best.ok_or_else(|| {
        Error::NumericalBlowup("every multistart candidate failed to integrate".into())
    })?;
    Ok(MultistartOutcome {
        grid: candidates.swap_remove(winner_index),
        dual,
        value,
        winner_index,
    })
}

/// Iterate of the inner loop.
struct Iterate {
    grid: ControlGrid,
    y: [f64; 3],
}

struct InnerOutcome {
    iterate: Iterate,
    eval: MeritEval,
    pgrad_norm: f64,
    iterations: usize,
    stalled: bool,
}

/// Norm used for inner termination: projected control block plus (under the
/// joint strategy) the free dual block.
fn stationarity_norm(
    grid: &ControlGrid,
    gradient: &MeritGradient,
    strategy: Strategy,
) -> f64 {
    let pv = projected_control_gradient(grid, &gradient.v);
    let v_norm = inf_norm(&pv);
    match strategy {
        Strategy::Joint => v_norm.max(inf_norm(&gradient.y)),
        Strategy::AltDirection => v_norm,
    }
}

/// Projected-gradient descent with Armijo backtracking on the merit.
fn inner_solve(
    problem: &RobustControlProblem,
    start: Iterate,
    params: &MeritParams,
    omega: f64,
    max_inner: usize,
    strategy: Strategy,
) -> Result<InnerOutcome> {
    let mut iterate = start;
    let mut eval = evaluate_merit(problem, &iterate.grid, &iterate.y, params, true)?;
    let mut iterations = 0;
    loop {
        let gradient = eval.gradient.as_ref().expect("gradient was requested");
        let pgrad_norm = stationarity_norm(&iterate.grid, gradient, strategy);
        if pgrad_norm <= omega || iterations >= max_inner {
            return Ok(InnerOutcome {
                pgrad_norm,
                iterate,
                eval,
                iterations,
                stalled: false,
            });
        }
        match armijo_step(problem, &iterate, &eval, params, strategy)? {
            Some(next) => {
                iterate = next;
                eval = evaluate_merit(problem, &iterate.grid, &iterate.y, params, true)?;
                iterations += 1;
            }
            None => {
                return Ok(InnerOutcome {
                    pgrad_norm,
                    iterate,
                    eval,
                    iterations,
                    stalled: true,
                });
            }
        }
    }
}

/// One backtracking Armijo step along the projected negative gradient arc.
/// Returns the accepted iterate, or None when the step length falls below
/// the stall threshold without achieving the required decrease
/// `J(new) <= J(old) - c1 * alpha * ||projected grad||^2`.
fn armijo_step(
    problem: &RobustControlProblem,
    iterate: &Iterate,
    eval: &MeritEval,
    params: &MeritParams,
    strategy: Strategy,
) -> Result<Option<Iterate>> {
    let gradient = eval.gradient.as_ref().expect("gradient was requested");
    let v = iterate.grid.flat();
    let pv = projected_control_gradient(&iterate.grid, &gradient.v);
    let mut pg_sq: f64 = pv.iter().map(|g| g * g).sum();
    if strategy == Strategy::Joint {
        pg_sq += gradient.y.iter().map(|g| g * g).sum::<f64>();
    }
    let mut alpha = 1.0;
    while alpha >= STEP_STALL {
        let raw: Vec<f64> = v
            .iter()
            .zip(&gradient.v)
            .map(|(&vi, &gi)| vi - alpha * gi)
            .collect();
        let candidate_grid = iterate.grid.project(&raw)?;
        let candidate_y = match strategy {
            Strategy::Joint => std::array::from_fn(|r| iterate.y[r] - alpha * gradient.y[r]),
            Strategy::AltDirection => iterate.y,
        };
        match evaluate_merit(problem, &candidate_grid, &candidate_y, params, false) {
            Ok(candidate_eval) => {
                if candidate_eval.merit <= eval.merit - ARMIJO_C1 * alpha * pg_sq {
                    return Ok(Some(Iterate {
                        grid: candidate_grid,
                        y: candidate_y,
                    }));
                }
            }
            // A blow-up along the trial arc just means the step was too
            // long; treat the candidate as infinitely bad and backtrack.
            Err(Error::NumericalBlowup(_)) => {}
            Err(e) => return Err(e),
        }
        alpha *= 0.5;
    }
    Ok(None)
}

/// Run the full outer solve from `initial` (or from the multistart winner
/// when [`SolverOptions::multistart`] is positive).
pub fn solve(
    problem: &RobustControlProblem,
    initial: &ControlGrid,
    options: &SolverOptions,
) -> Result<SolveReport> {
    options.validate()?;
    if initial.dim_control() != problem.model.dim_control() {
        return Err(Error::DimensionMismatch(format!(
            "control grid has {} components but the model expects {}",
            initial.dim_control(),
            problem.model.dim_control()
        )));
    }
    let schedule = &options.schedule;
    let (mut iterate, multistart_value) = if options.multistart > 0 {
        let outcome = multistart_init(
            problem,
            initial,
            options.multistart,
            options.steps_per_piece,
            options.seed,
        )?;
        (
            Iterate {
                grid: outcome.grid,
                y: outcome.dual,
            },
            Some(outcome.value),
        )
    } else {
        let (_, sol) = inner_worst_case(problem, initial, options.steps_per_piece)?;
        (
            Iterate {
                grid: initial.clone(),
                y: sol.dual,
            },
            None,
        )
    };

    let mut rho = schedule.rho0;
    let mut omega = 1.0 / schedule.rho0;
    let mut eta = 1.0 / schedule.rho0.powf(0.1);
    let mut epsilon = options.epsilon;
    let mut trace = Vec::with_capacity(schedule.max_outer);
    let mut inner_iterations = 0;
    let mut termination = Termination::MaxIterations;
    let mut outer_rounds = 0;
    let mut last: Option<(MeritEval, f64)> = None;

    for round in 0..schedule.max_outer {
        if options.strategy == Strategy::AltDirection {
            let (_, sol) = inner_worst_case(problem, &iterate.grid, options.steps_per_piece)?;
            iterate.y = sol.dual;
        }
        let params = MeritParams {
            rho,
            epsilon,
            steps_per_piece: options.steps_per_piece,
        };
        let outcome = inner_solve(
            problem,
            iterate,
            &params,
            omega,
            options.max_inner,
            options.strategy,
        )?;
        iterate = outcome.iterate;
        inner_iterations += outcome.iterations;
        outer_rounds = round + 1;
        trace.push(TraceRow {
            round,
            rho,
            omega,
            eta,
            merit: outcome.eval.merit,
            dual_objective: outcome.eval.dual_objective,
            penalty: outcome.eval.penalty,
            max_constraint: outcome.eval.max_constraint,
            pgrad_norm: outcome.pgrad_norm,
        });
        let feasible_enough = outcome.eval.penalty <= schedule.eta_star;
        let stationary_enough = outcome.pgrad_norm <= schedule.omega_star;
        let penalty = outcome.eval.penalty;
        last = Some((outcome.eval, outcome.pgrad_norm));
        if feasible_enough && stationary_enough {
            termination = Termination::Converged;
            break;
        }
        if outcome.stalled {
            termination = Termination::LineSearchFailure;
            break;
        }
        if penalty <= eta {
            eta *= schedule.alpha3;
        } else {
            rho *= schedule.alpha1;
        }
        omega *= schedule.alpha2;
        if let Some(factor) = options.epsilon_shrink {
            epsilon *= factor;
        }
    }

    let (eval, pgrad_norm) = last.expect("max_outer >= 1 guarantees at least one round");
    Ok(SolveReport {
        control: iterate.grid,
        dual: iterate.y,
        objective: eval.dual_objective,
        merit: eval.merit,
        penalty: eval.penalty,
        max_constraint: eval.max_constraint,
        pgrad_norm,
        termination,
        outer_rounds,
        inner_iterations,
        trace,
        multistart_value,
    })
}

/// Convenience: worst-case weights as `(scenario index, parameter, cost,
/// weight)` rows for reporting.
pub fn worst_case_rows(
    problem: &RobustControlProblem,
    grid: &ControlGrid,
    steps_per_piece: usize,
) -> Result<Vec<(usize, f64, f64, f64)>> {
    let (costs, sol) = inner_worst_case(problem, grid, steps_per_piece)?;
    Ok(problem
        .support
        .points()
        .iter()
        .enumerate()
        .map(|(i, &p)| (i, p, costs[i], sol.weights[i]))
        .collect())
}
