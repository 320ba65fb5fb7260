//! First-order optimality certificates via backward costate integration.
//!
//! A candidate solution is a pair `(v, y)`: a piecewise-constant control and a
//! dual vector for the three moment constraints. The certificate identifies
//! the distribution multipliers `theta` with the worst-case weights `q*` of
//! the inner moment LP at `v` and then checks four conditions:
//!
//! * **moment identity** — `b = sum_i theta_i a^i` with `theta >= 0`
//!   (LP primal feasibility of `q*`);
//! * **costate dynamics** — for every scenario, `lambda_i' = -lambda_i df/dx`
//!   backward in time with `lambda_i(1) = theta_i dh/dx(x_i(1))`;
//! * **control stationarity** — per control piece `I_k` and component `l`,
//!   `r[k,l] = integral over I_k of sum_i lambda_i df_i/du_l dt` vanishes
//!   after projection by the box-activity rule (at an active bound only the
//!   infeasible-direction part counts);
//! * **complementarity** — `theta_i * (y'a^i - h_i) = 0` for every scenario
//!   (LP complementary slackness).
//!
//! Sign convention: one widespread statement of the moment identity reads
//! `b + sum_i theta_i a^i = 0` with `theta >= 0`, which is unsatisfiable —
//! its first component is `1 + sum_i theta_i > 0`. The residual here is
//! computed as `||b - sum_i theta_i a^i||_inf`, the form consistent with the
//! costate and complementarity conditions and with LP duality; the report
//! emitted by [`KktCertificate::report`] flags this normalization.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::ambiguity::moment_column;
use crate::control::ControlGrid;
use crate::dynamics::Dynamics;
use crate::integrator::{integrate, Trajectory};
use crate::outer::{
    constraint_values, inner_worst_case, projected_control_gradient, RobustControlProblem,
};
use crate::{check_finite, inf_norm, Error, Result};

/// Weights at or below this threshold are treated as inactive scenarios; their
/// costates vanish identically by linearity of the adjoint equation.
const THETA_ACTIVE: f64 = 1e-12;

/// Abort backward integration when a costate component exceeds this magnitude.
const BLOWUP_GUARD: f64 = 1e12;

/// Slack used when locating control breakpoints inside the trajectory mesh.
const NODE_MATCH_TOL: f64 = 1e-9;

/// Componentwise lower bound accepted for the multipliers ("theta >= 0" up to
/// LP round-off).
const THETA_NONNEG_TOL: f64 = -1e-10;

/// One scenario's costate trajectory on the integration mesh.
#[derive(Debug, Clone)]
pub struct CostatePath {
    /// Index of the scenario in the support.
    pub scenario: usize,
    /// Uncertain-parameter value of the scenario.
    pub parameter: f64,
    /// Multiplier `theta_i` baked into the terminal condition.
    pub theta: f64,
    /// Costate row vector at every mesh node (each entry has length `n_x`).
    pub values: Vec<Vec<f64>>,
}

/// Pass/fail thresholds for [`KktCertificate::passes`].
#[derive(Debug, Clone, Copy)]
pub struct KktTolerances {
    /// Bound on the algebraic residuals: moment identity, complementarity,
    /// costate terminal condition, and dual-constraint violation.
    pub algebraic: f64,
    /// Bound on the projected stationarity residual (integration-limited, so
    /// looser than the algebraic bound).
    pub stationarity: f64,
}

impl Default for KktTolerances {
    fn default() -> Self {
        Self {
            algebraic: 1e-6,
            stationarity: 1e-3,
        }
    }
}

/// Residual report for the first-order conditions at a candidate `(v, y)`.
#[derive(Debug, Clone)]
pub struct KktCertificate {
    /// Distribution multipliers, identified with the worst-case weights `q*`.
    pub theta: Vec<f64>,
    /// `||b - sum_i theta_i a^i||_inf` (zero by LP feasibility of `q*`).
    pub moment_residual: f64,
    /// `max_i |theta_i * (y'a^i - h_i)|` (LP complementary slackness).
    pub complementarity_residual: f64,
    /// Max deviation of the stored costate paths from their terminal
    /// condition `lambda_i(1) = theta_i dh/dx` (consistency of the report).
    pub costate_terminal_residual: f64,
    /// Sup-norm of the box-projected piece residuals `r[k,l]`.
    pub stationarity_residual: f64,
    /// Sup-norm of the unprojected piece residuals (informational; nonzero
    /// whenever the optimum sits on the control box).
    pub raw_stationarity_residual: f64,
    /// `max(0, max_i (h_i - y'a^i))`: violation of the dual constraints.
    pub constraint_violation: f64,
    /// Candidate dual objective `y'b`.
    pub dual_value: f64,
    /// Inner-LP optimum at the candidate control (worst-case expectation).
    pub worst_case_value: f64,
    /// Flat piece residual vector `r[k,l]`, length `pieces * n_u`.
    pub piece_residuals: Vec<f64>,
    /// Shared mesh of the costate paths (empty if no scenario is active).
    pub mesh: Vec<f64>,
    /// Costate paths for every scenario with `theta_i` above the activity
    /// threshold; inactive scenarios have identically zero costates.
    pub costates: Vec<CostatePath>,
}

impl KktCertificate {
    /// Smallest multiplier component (should be `>= -1e-10`).
    pub fn min_theta(&self) -> f64 {
        self.theta.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// True when every residual is inside its tolerance and the multipliers
    /// are nonnegative up to LP round-off.
    pub fn passes(&self, tol: &KktTolerances) -> bool {
        self.moment_residual <= tol.algebraic
            && self.complementarity_residual <= tol.algebraic
            && self.costate_terminal_residual <= tol.algebraic
            && self.constraint_violation <= tol.algebraic
            && self.stationarity_residual <= tol.stationarity
            && self.min_theta() >= THETA_NONNEG_TOL
    }

    /// Flat key-value text report with every residual, suitable for a
    /// certificate file.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "first-order certificate (multipliers = worst-case weights; stationarity box-projected)"
        );
        let active: Vec<String> = self
            .theta
            .iter()
            .enumerate()
            .filter(|(_, &t)| t > THETA_ACTIVE)
            .map(|(i, &t)| format!("{i}:{t:.12e}"))
            .collect();
        let _ = writeln!(s, "scenarios = {}", self.theta.len());
        let _ = writeln!(s, "theta_positive = {}", active.join("; "));
        let _ = writeln!(s, "theta_min = {:.6e}", self.min_theta());
        let _ = writeln!(s, "moment_residual = {:.6e}", self.moment_residual);
        let _ = writeln!(
            s,
            "complementarity_residual = {:.6e}",
            self.complementarity_residual
        );
        let _ = writeln!(
            s,
            "costate_terminal_residual = {:.6e}",
            self.costate_terminal_residual
        );
        let _ = writeln!(
            s,
            "stationarity_residual_projected = {:.6e}",
            self.stationarity_residual
        );
        let _ = writeln!(
            s,
            "stationarity_residual_raw = {:.6e}",
            self.raw_stationarity_residual
        );
        let _ = writeln!(s, "constraint_violation = {:.6e}", self.constraint_violation);
        let _ = writeln!(s, "dual_value = {:.12e}", self.dual_value);
        let _ = writeln!(s, "worst_case_value = {:.12e}", self.worst_case_value);
        let _ = writeln!(
            s,
            "note = moment identity checked as ||b - sum_i theta_i a^i||_inf; the alternative \
             convention 'b + sum_i theta_i a^i = 0' with theta >= 0 is unsatisfiable (its first \
             component is 1 + sum theta > 0) and is treated as a sign slip"
        );
        s
    }
}

/// Adjoint right-hand side `out = -lambda * (df/dx)` at one stage point.
fn adjoint_rhs(
    model: &dyn Dynamics,
    x: &[f64],
    u: &[f64],
    p: f64,
    lambda: &[f64],
    jac: &mut [f64],
    out: &mut [f64],
) -> Result<()> {
    let n = lambda.len();
    model.rhs_jac_state(x, u, p, jac)?;
    for (c, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for r in 0..n {
            acc += lambda[r] * jac[r * n + c];
        }
        *slot = -acc;
    }
    Ok(())
}

/// Integrate the costate equation backward over a forward trajectory.
///
/// Runs classical RK4 on the reversed trajectory mesh. Stage evaluations need
/// the forward state between mesh nodes; it is interpolated **linearly**
/// between the two surrounding nodes (the half-step stages use the segment
/// midpoint), which keeps the scheme second-order accurate overall. The
/// terminal condition is `lambda(1) = theta_i * dh/dx(x(1))`; by linearity of
/// the adjoint equation, `theta_i = 0` yields the zero path without
/// integrating.
///
/// Returns the costate row vector at every mesh node, aligned with
/// `trajectory.mesh`.
pub fn integrate_costates(
    model: &dyn Dynamics,
    grid: &ControlGrid,
    theta_i: f64,
    trajectory: &Trajectory,
) -> Result<Vec<Vec<f64>>> {
    let n = model.dim_state();
    let nodes = trajectory.mesh.len();
    if nodes < 2 {
        return Err(Error::TooFewPoints {
            need: 2,
            got: nodes,
        });
    }
    if trajectory.states.len() != nodes {
        return Err(Error::DimensionMismatch(format!(
            "trajectory has {} states for {} mesh nodes",
            trajectory.states.len(),
            nodes
        )));
    }
    let p = trajectory.parameter;

    let mut lambda = vec![vec![0.0; n]; nodes];
    let mut grad = vec![0.0; n];
    model.terminal_cost_grad(trajectory.terminal_state(), &mut grad);
    for c in 0..n {
        lambda[nodes - 1][c] = theta_i * grad[c];
    }
    if theta_i == 0.0 {
        return Ok(lambda);
    }

    let mut jac = vec![0.0; n * n];
    let mut xmid = vec![0.0; n];
    let mut ltmp = vec![0.0; n];
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut current = lambda[nodes - 1].clone();
    let mut next = vec![0.0; n];

    for j in (0..nodes - 1).rev() {
        let t_hi = trajectory.mesh[j + 1];
        let t_lo = trajectory.mesh[j];
        let h = t_lo - t_hi; // negative: integrating backward
        let x_hi = &trajectory.states[j + 1];
        let x_lo = &trajectory.states[j];
        for c in 0..n {
            xmid[c] = 0.5 * (x_lo[c] + x_hi[c]);
        }
        let u = grid.row(grid.piece_of(0.5 * (t_lo + t_hi))?);

        adjoint_rhs(model, x_hi, u, p, &current, &mut jac, &mut k1)?;
        for c in 0..n {
            ltmp[c] = current[c] + 0.5 * h * k1[c];
        }
        adjoint_rhs(model, &xmid, u, p, &ltmp, &mut jac, &mut k2)?;
        for c in 0..n {
            ltmp[c] = current[c] + 0.5 * h * k2[c];
        }
        adjoint_rhs(model, &xmid, u, p, &ltmp, &mut jac, &mut k3)?;
        for c in 0..n {
            ltmp[c] = current[c] + h * k3[c];
        }
        adjoint_rhs(model, x_lo, u, p, &ltmp, &mut jac, &mut k4)?;
        for c in 0..n {
            next[c] = current[c] + h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
        if next.iter().any(|&c| !c.is_finite() || c.abs() > BLOWUP_GUARD) {
            check_finite(
                &next,
                BLOWUP_GUARD,
                &format!("costate at t = {t_lo} for scenario p = {p}"),
            )?;
        }
        lambda[j].copy_from_slice(&next);
        std::mem::swap(&mut current, &mut next);
    }
    Ok(lambda)
}

/// One scenario's contribution to the stationarity integrals: for every piece
/// `I_k` and control component `l`,
/// `r[k,l] = integral over I_k of lambda(t) * df/du_l dt`,
/// returned as a flat vector of length `pieces * n_u`.
///
/// Each piece is integrated by composite Simpson on its (uniform) mesh nodes
/// when the node count allows it (even number of sub-steps); otherwise the
/// trapezoid rule is used. `lambda` must be aligned with `trajectory.mesh`.
pub fn costate_piece_gradient(
    model: &dyn Dynamics,
    grid: &ControlGrid,
    trajectory: &Trajectory,
    lambda: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let n = model.dim_state();
    let n_u = model.dim_control();
    if grid.dim_control() != n_u {
        return Err(Error::DimensionMismatch(format!(
            "grid has {} control components, model expects {}",
            grid.dim_control(),
            n_u
        )));
    }
    let mesh = &trajectory.mesh;
    if lambda.len() != mesh.len() {
        return Err(Error::DimensionMismatch(format!(
            "costate path has {} nodes, mesh has {}",
            lambda.len(),
            mesh.len()
        )));
    }
    let bk = grid.breakpoints();
    let p = trajectory.parameter;
    let mut out = vec![0.0; grid.dim_flat()];
    let mut jac_u = vec![0.0; n * n_u];
    let mut start = 0usize;

    for k in 0..grid.pieces() {
        let t_right = bk[k + 1];
        let mut end = start;
        while end + 1 < mesh.len() && mesh[end] + NODE_MATCH_TOL < t_right {
            end += 1;
        }
        if (mesh[end] - t_right).abs() > NODE_MATCH_TOL {
            return Err(Error::InternalError(format!(
                "trajectory mesh is not aligned with control breakpoint {t_right}"
            )));
        }
        let steps = end - start;
        if steps == 0 {
            return Err(Error::InternalError(format!(
                "control piece {k} contains no integration step"
            )));
        }
        let h = (mesh[end] - mesh[start]) / steps as f64;
        let u = grid.row(k);
        for j in start..=end {
            // Simpson weights 1,4,2,...,4,1 (times h/3) for an even number of
            // sub-steps; trapezoid weights otherwise.
            let w = if steps % 2 == 0 {
                let pos = j - start;
                if pos == 0 || pos == steps {
                    h / 3.0
                } else if pos % 2 == 1 {
                    4.0 * h / 3.0
                } else {
                    2.0 * h / 3.0
                }
            } else if j == start || j == end {
                0.5 * h
            } else {
                h
            };
            model.rhs_jac_control(&trajectory.states[j], u, p, &mut jac_u)?;
            for l in 0..n_u {
                let mut phi = 0.0;
                for r in 0..n {
                    phi += lambda[j][r] * jac_u[r * n_u + l];
                }
                out[k * n_u + l] += w * phi;
            }
        }
        start = end;
    }
    Ok(out)
}

/// Verify the first-order conditions at a candidate `(v, y)`.
///
/// The multipliers are taken from the inner LP at the candidate control, so
/// the moment residual measures LP feasibility and the complementarity
/// residual coincides with LP complementary slackness **against the supplied
/// dual vector `y`** — a perturbed `y` shows up there and in the constraint
/// violation. Costates are integrated for every scenario whose weight exceeds
/// the activity threshold; inactive scenarios contribute identically zero.
pub fn verify(
    problem: &RobustControlProblem,
    grid: &ControlGrid,
    y: &[f64; 3],
    steps_per_piece: usize,
) -> Result<KktCertificate> {
    let model = problem.model.as_ref();
    let points = problem.support.points();
    let (costs, lp) = inner_worst_case(problem, grid, steps_per_piece)?;
    let theta = lp.weights.clone();

    // Moment identity: b - sum_i theta_i a^i.
    let b = problem.ambiguity.moment_vector();
    let mut acc = [0.0f64; 3];
    for (&t, &p) in theta.iter().zip(points) {
        let a = moment_column(p);
        for c in 0..3 {
            acc[c] += t * a[c];
        }
    }
    let moment_residual = (0..3).map(|c| (b[c] - acc[c]).abs()).fold(0.0, f64::max);

    // Complementarity and dual feasibility against the candidate y.
    let g = constraint_values(&costs, points, y);
    let complementarity_residual = theta
        .iter()
        .zip(&g)
        .map(|(&t, &gi)| (t * gi).abs())
        .fold(0.0, f64::max);
    let constraint_violation = g.iter().copied().fold(0.0, f64::max);

    // Costates and stationarity integrals for the active scenarios.
    let active: Vec<usize> = (0..theta.len())
        .filter(|&i| theta[i] > THETA_ACTIVE)
        .collect();
    let contributions: Vec<(usize, Trajectory, Vec<Vec<f64>>, Vec<f64>)> = active
        .par_iter()
        .map(|&i| -> Result<_> {
            let traj = integrate(model, grid, points[i], steps_per_piece)?;
            let lam = integrate_costates(model, grid, theta[i], &traj)?;
            let r = costate_piece_gradient(model, grid, &traj, &lam)?;
            Ok((i, traj, lam, r))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut piece_residuals = vec![0.0; grid.dim_flat()];
    for (_, _, _, r) in &contributions {
        for (slot, &v) in piece_residuals.iter_mut().zip(r) {
            *slot += v;
        }
    }
    let raw_stationarity_residual = inf_norm(&piece_residuals);
    let stationarity_residual = inf_norm(&projected_control_gradient(grid, &piece_residuals));

    // Consistency of the stored paths with their terminal condition.
    let mut costate_terminal_residual = 0.0f64;
    let mut gradbuf = vec![0.0; model.dim_state()];
    for (i, traj, lam, _) in &contributions {
        model.terminal_cost_grad(traj.terminal_state(), &mut gradbuf);
        let last = lam.last().expect("costate path has at least one node");
        for c in 0..gradbuf.len() {
            costate_terminal_residual =
                costate_terminal_residual.max((last[c] - theta[*i] * gradbuf[c]).abs());
        }
    }

    let mesh = contributions
        .first()
        .map(|(_, t, _, _)| t.mesh.clone())
        .unwrap_or_default();
    let costates = contributions
        .into_iter()
        .map(|(i, traj, lam, _)| CostatePath {
            scenario: i,
            parameter: traj.parameter,
            theta: theta[i],
            values: lam,
        })
        .collect();

    Ok(KktCertificate {
        dual_value: y[0] * b[0] + y[1] * b[1] + y[2] * b[2],
        worst_case_value: lp.objective,
        theta,
        moment_residual,
        complementarity_residual,
        costate_terminal_residual,
        stationarity_residual,
        raw_stationarity_residual,
        constraint_violation,
        piece_residuals,
        mesh,
        costates,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::ambiguity::{AmbiguitySpec, DiscreteSupport};
    use crate::control::{ControlBox, ControlGrid};
    use crate::dynamics::toy;
    use crate::integrator::{cost_gradient, integrate_with_sensitivities};

    fn spec() -> AmbiguitySpec {
        AmbiguitySpec::new(1.76, 2.64, 2.2, 0.2).expect("valid moments")
    }

    /// Three symmetric points admitting exactly one feasible distribution:
    /// q = [0.125, 0.75, 0.125] matches mean 2.2 and variance 0.04.
    fn rigid_support() -> DiscreteSupport {
        DiscreteSupport::new(vec![1.8, 2.2, 2.6]).expect("valid support")
    }

    fn five_point_support() -> DiscreteSupport {
        DiscreteSupport::new(vec![1.76, 1.98, 2.2, 2.42, 2.64]).expect("valid support")
    }

    #[test]
    fn zero_dynamics_certificate_is_exact() {
        let problem = RobustControlProblem::new(
            Arc::new(toy::Zero::new(1.0)),
            spec(),
            rigid_support(),
        )
        .expect("feasible problem");
        let bounds = ControlBox::uniform(1, -1.0, 1.0).expect("box");
        let grid = ControlGrid::uniform(4, vec![0.25; 4], bounds).expect("grid");
        let cert = verify(&problem, &grid, &[0.0, 0.0, 0.0], 8).expect("certificate");

        assert!(cert.moment_residual <= 1e-9, "moment {}", cert.moment_residual);
        assert!(
            cert.complementarity_residual <= 1e-9,
            "complementarity {}",
            cert.complementarity_residual
        );
        assert!(cert.costate_terminal_residual <= 1e-9);
        assert!(cert.stationarity_residual <= 1e-9);
        assert!(cert.constraint_violation <= 1e-9);
        assert!(cert.passes(&KktTolerances::default()));
    }

    #[test]
    fn state_independent_dynamics_gives_constant_costate() {
        let model = toy::QuadraticTarget::new(0.4);
        let bounds = ControlBox::uniform(1, -1.0, 1.0).expect("box");
        let grid = ControlGrid::uniform(3, vec![0.3; 3], bounds).expect("grid");
        let traj = integrate(&model, &grid, 2.0, 6).expect("trajectory");
        let theta = 0.6;
        let lam = integrate_costates(&model, &grid, theta, &traj).expect("costates");

        // x(1) = 0.4 + 0.3 = 0.7, dh/dx = 2 x(1) = 1.4, lambda = 0.6 * 1.4.
        let expected = theta * 2.0 * 0.7;
        for node in &lam {
            assert!(
                (node[0] - expected).abs() <= 1e-12,
                "costate {} differs from {}",
                node[0],
                expected
            );
        }
    }

    #[test]
    fn zero_theta_short_circuits_to_zero_costate() {
        let model = toy::Exponential::new(1.0);
        let bounds = ControlBox::uniform(1, 0.0, 1.0).expect("box");
        let grid = ControlGrid::uniform(2, vec![0.5; 2], bounds).expect("grid");
        let traj = integrate(&model, &grid, 2.2, 5).expect("trajectory");
        let lam = integrate_costates(&model, &grid, 0.0, &traj).expect("costates");
        assert!(lam.iter().all(|node| node.iter().all(|&c| c == 0.0)));
    }

    #[test]
    fn costate_scales_linearly_with_theta() {
        let model = toy::ScalarLinear::new(0.7);
        let bounds = ControlBox::uniform(1, -1.0, 1.0).expect("box");
        let grid =
            ControlGrid::uniform(3, vec![0.25, -0.4, 0.1], bounds).expect("grid");
        let traj = integrate(&model, &grid, 2.2, 10).expect("trajectory");
        let unit = integrate_costates(&model, &grid, 1.0, &traj).expect("unit costates");
        let kappa = 0.37;
        let scaled = integrate_costates(&model, &grid, kappa, &traj).expect("scaled costates");
        for (a, b) in unit.iter().zip(&scaled) {
            for (&ua, &sa) in a.iter().zip(b) {
                assert!((kappa * ua - sa).abs() <= 1e-12 * ua.abs().max(1.0));
            }
        }
    }

    /// Adjoint-sensitivity duality: the costate piece integrals must reproduce
    /// the forward-sensitivity gradient of the terminal cost.
    #[test]
    fn costate_gradient_matches_sensitivity_gradient_on_scalar_linear() {
        let model = toy::ScalarLinear::new(0.7);
        let bounds = ControlBox::uniform(1, -1.0, 1.0).expect("box");
        let grid =
            ControlGrid::uniform(3, vec![0.25, -0.4, 0.1], bounds).expect("grid");
        let p = 2.2;
        let spp = 20;

        let with_sens = integrate_with_sensitivities(&model, &grid, p, spp).expect("sensitivities");
        let forward = cost_gradient(&model, &with_sens).expect("gradient");

        let traj = integrate(&model, &grid, p, spp).expect("trajectory");
        let lam = integrate_costates(&model, &grid, 1.0, &traj).expect("costates");
        let adjoint = costate_piece_gradient(&model, &grid, &traj, &lam).expect("piece gradient");

        assert_eq!(forward.len(), adjoint.len());
        for (k, (&f, &a)) in forward.iter().zip(&adjoint).enumerate() {
            assert!(
                (f - a).abs() <= 1e-6,
                "piece {k}: forward {f} vs adjoint {a}"
            );
        }
    }

    /// Odd step counts fall back to the trapezoid rule, which is only
    /// second-order; the agreement degrades but stays small.
    #[test]
    fn trapezoid_fallback_for_odd_step_counts_stays_accurate() {
        let model = toy::ScalarLinear::new(0.7);
        let bounds = ControlBox::uniform(1, -1.0, 1.0).expect("box");
        let grid =
            ControlGrid::uniform(3, vec![0.25, -0.4, 0.1], bounds).expect("grid");
        let p = 2.2;
        let spp = 21;

        let with_sens = integrate_with_sensitivities(&model, &grid, p, spp).expect("sensitivities");
        let forward = cost_gradient(&model, &with_sens).expect("gradient");
        let traj = integrate(&model, &grid, p, spp).expect("trajectory");
        let lam = integrate_costates(&model, &grid, 1.0, &traj).expect("costates");
        let adjoint = costate_piece_gradient(&model, &grid, &traj, &lam).expect("piece gradient");

        for (k, (&f, &a)) in forward.iter().zip(&adjoint).enumerate() {
            assert!(
                (f - a).abs() <= 2e-3,
                "piece {k}: forward {f} vs adjoint {a}"
            );
        }
    }

    /// Nonuniform pieces exercise the breakpoint walk inside the mesh.
    #[test]
    fn piece_gradient_handles_nonuniform_breakpoints() {
        let model = toy::ScalarLinear::new(0.5);
        let bounds = ControlBox::uniform(1, -1.0, 1.0).expect("box");
        let grid = ControlGrid::from_breakpoints(
            vec![0.0, 0.3, 1.0],
            vec![0.4, -0.2],
            bounds,
        )
        .expect("grid");
        let p = 1.9;
        let spp = 16;

        let with_sens = integrate_with_sensitivities(&model, &grid, p, spp).expect("sensitivities");
        let forward = cost_gradient(&model, &with_sens).expect("gradient");
        let traj = integrate(&model, &grid, p, spp).expect("trajectory");
        let lam = integrate_costates(&model, &grid, 1.0, &traj).expect("costates");
        let adjoint = costate_piece_gradient(&model, &grid, &traj, &lam).expect("piece gradient");

        for (k, (&f, &a)) in forward.iter().zip(&adjoint).enumerate() {
            assert!(
                (f - a).abs() <= 1e-6,
                "piece {k}: forward {f} vs adjoint {a}"
            );
        }
    }

    /// An interior optimum of the quadratic toy: x(1) = 0 makes the terminal
    /// gradient (and hence every costate and stationarity integral) vanish.
    #[test]
    fn quadratic_toy_interior_optimum_certifies() {
        let problem = RobustControlProblem::new(
            Arc::new(toy::QuadraticTarget::new(0.5)),
            spec(),
            rigid_support(),
        )
        .expect("feasible problem");
        let bounds = ControlBox::uniform(1, -1.0, 1.0).expect("box");
        let grid = ControlGrid::uniform(4, vec![-0.5; 4], bounds).expect("grid");
        let cert = verify(&problem, &grid, &[0.0, 0.0, 0.0], 10).expect("certificate");

        assert!(cert.raw_stationarity_residual <= 1e-5);
        assert!(cert.passes(&KktTolerances::default()));
        // The rigid support admits exactly one distribution.
        let expected = [0.125, 0.75, 0.125];
        for (t, e) in cert.theta.iter().zip(expected) {
            assert!((t - e).abs() <= 1e-9, "theta {t} vs {e}");
        }
    }

    /// The LP dual certifies cleanly; a perturbed dual vector is flagged by
    /// the complementarity residual.
    #[test]
    fn perturbed_dual_vector_is_detected() {
        let problem = RobustControlProblem::new(
            Arc::new(toy::ScalarLinear::new(0.7)),
            spec(),
            five_point_support(),
        )
        .expect("feasible problem");
        let bounds = ControlBox::uniform(1, 0.0, 1.0).expect("box");
        let grid = ControlGrid::uniform(4, vec![0.2; 4], bounds).expect("grid");
        let spp = 10;

        let (_, lp) = inner_worst_case(&problem, &grid, spp).expect("inner LP");
        let y_star = lp.dual;

        let good = verify(&problem, &grid, &y_star, spp).expect("certificate");
        assert!(good.moment_residual <= 1e-9, "moment {}", good.moment_residual);
        assert!(
            good.complementarity_residual <= 1e-8,
            "complementarity {}",
            good.complementarity_residual
        );
        assert!(
            good.constraint_violation <= 1e-8,
            "violation {}",
            good.constraint_violation
        );

        let y_bad = [y_star[0] + 0.1, y_star[1], y_star[2]];
        let bad = verify(&problem, &grid, &y_bad, spp).expect("certificate");
        assert!(
            bad.complementarity_residual > 1e-3,
            "perturbation went unnoticed: {}",
            bad.complementarity_residual
        );
        assert!(!bad.passes(&KktTolerances::default()));
    }

    #[test]
    fn report_lists_all_residuals_and_the_sign_note() {
        let problem = RobustControlProblem::new(
            Arc::new(toy::Zero::new(1.0)),
            spec(),
            rigid_support(),
        )
        .expect("feasible problem");
        let bounds = ControlBox::uniform(1, -1.0, 1.0).expect("box");
        let grid = ControlGrid::uniform(2, vec![0.0; 2], bounds).expect("grid");
        let cert = verify(&problem, &grid, &[0.0, 0.0, 0.0], 4).expect("certificate");
        let text = cert.report();
        for key in [
            "moment_residual",
            "complementarity_residual",
            "costate_terminal_residual",
            "stationarity_residual_projected",
            "stationarity_residual_raw",
            "constraint_violation",
            "theta_positive",
            "sign slip",
        ] {
            assert!(text.contains(key), "report is missing `{key}`:\n{text}");
        }
    }
}
