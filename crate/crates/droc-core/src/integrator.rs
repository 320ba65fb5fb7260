//! Fixed-step classical RK4 integration with forward sensitivities.
//!
//! The mesh is aligned to control breakpoints: each control piece is cut into
//! `steps_per_piece` equal RK4 steps, so the discontinuous control is constant
//! across every step and breakpoints are hit exactly. Sensitivities with
//! respect to the flattened control vector ride along in the same RK4 pass:
//! the augmented state is `[x, s_1, ..., s_{n_v}]` where each `s_j` solves
//!
//! ```text
//! s_j' = (df/dx) s_j + (df/du) e_l * [t in piece k],   s_j(0) = 0,
//! ```
//!
//! with `(k, l)` the piece/component pair of flat direction `j`.

use crate::control::ControlGrid;
use crate::dynamics::Dynamics;
use crate::{check_finite, Error, Result};
use rayon::prelude::*;

/// Any state or sensitivity component beyond this magnitude aborts the
/// integration with [`Error::NumericalBlowup`].
pub const BLOWUP_GUARD: f64 = 1e12;

/// How much sensitivity information an integration should carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensitivityMode {
    /// States only.
    None,
    /// States plus the terminal sensitivity matrix `S(1)`.
    Terminal,
    /// States plus the sensitivity matrix at every mesh node.
    Full,
}

/// One scenario's integration output on the normalized horizon.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// The uncertain-parameter value this scenario used.
    pub parameter: f64,
    /// Mesh times, `pieces * steps_per_piece + 1` nodes from 0 to 1; every
    /// control breakpoint appears exactly.
    pub mesh: Vec<f64>,
    /// State at each mesh node (each entry has length `n_x`).
    pub states: Vec<Vec<f64>>,
    /// Terminal sensitivity `S(1)`, row-major `n_x x n_v`, if requested.
    pub terminal_sensitivity: Option<Vec<f64>>,
    /// Sensitivity matrix at every mesh node, if requested.
    pub sensitivity_history: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    /// State at the final mesh node.
    pub fn terminal_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one node")
    }
}

/// Trajectories for a family of scenarios, in input order.
#[derive(Debug, Clone)]
pub struct TrajectoryBundle {
    pub scenarios: Vec<Trajectory>,
}

impl TrajectoryBundle {
    /// Parameter values in scenario order.
    pub fn parameters(&self) -> Vec<f64> {
        self.scenarios.iter().map(|t| t.parameter).collect()
    }

    /// Terminal cost of every scenario under `model`.
    pub fn terminal_costs(&self, model: &dyn Dynamics) -> Vec<f64> {
        self.scenarios
            .iter()
            .map(|t| model.terminal_cost(t.terminal_state()))
            .collect()
    }
}

/// Integrate states only.
pub fn integrate(
    model: &dyn Dynamics,
    grid: &ControlGrid,
    p: f64,
    steps_per_piece: usize,
) -> Result<Trajectory> {
    integrate_impl(model, grid, p, steps_per_piece, SensitivityMode::None)
}

/// Integrate states together with the terminal sensitivity matrix.
pub fn integrate_with_sensitivities(
    model: &dyn Dynamics,
    grid: &ControlGrid,
    p: f64,
    steps_per_piece: usize,
) -> Result<Trajectory> {
    integrate_impl(model, grid, p, steps_per_piece, SensitivityMode::Terminal)
}

/// Integrate states with the sensitivity matrix stored at every mesh node.
pub fn integrate_with_sensitivity_history(
    model: &dyn Dynamics,
    grid: &ControlGrid,
    p: f64,
    steps_per_piece: usize,
) -> Result<Trajectory> {
    integrate_impl(model, grid, p, steps_per_piece, SensitivityMode::Full)
}

/// Integrate every scenario parameter (in parallel, results in input order).
pub fn integrate_scenarios(
    model: &dyn Dynamics,
    grid: &ControlGrid,
    parameters: &[f64],
    steps_per_piece: usize,
    mode: SensitivityMode,
) -> Result<TrajectoryBundle> {
    let scenarios = parameters
        .par_iter()
        .map(|&p| integrate_impl(model, grid, p, steps_per_piece, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryBundle { scenarios })
}

/// Gradient of the terminal cost with respect to the flattened control vector,
/// `dh/dv = (dh/dx)(x(1)) * S(1)`.
pub fn cost_gradient(model: &dyn Dynamics, trajectory: &Trajectory) -> Result<Vec<f64>> {
    let sens = trajectory
        .terminal_sensitivity
        .as_deref()
        .ok_or(Error::MissingSensitivities)?;
    chain_terminal_gradient(model, trajectory.terminal_state(), sens)
}

/// Terminal state (and optional terminal sensitivity) of one scenario.
///
/// The lean sibling of [`Trajectory`] for optimization inner loops: the
/// intermediate mesh states are not stored. Produced by
/// [`integrate_terminal`]; numerically identical to the terminal data of the
/// full integration because both run the same stepping code.
#[derive(Debug, Clone)]
pub struct TerminalPoint {
    pub parameter: f64,
    /// State at the end of the normalized horizon.
    pub state: Vec<f64>,
    /// Terminal sensitivity `S(1)`, row-major `n_x x n_v`, if requested.
    pub sensitivity: Option<Vec<f64>>,
}

impl TerminalPoint {
    /// Terminal cost under `model`.
    pub fn cost(&self, model: &dyn Dynamics) -> f64 {
        model.terminal_cost(&self.state)
    }
}

/// `dh/dv` from a terminal point carrying sensitivities.
pub fn terminal_cost_gradient(model: &dyn Dynamics, point: &TerminalPoint) -> Result<Vec<f64>> {
    let sens = point
        .sensitivity
        .as_deref()
        .ok_or(Error::MissingSensitivities)?;
    chain_terminal_gradient(model, &point.state, sens)
}

fn chain_terminal_gradient(
    model: &dyn Dynamics,
    terminal_state: &[f64],
    sens: &[f64],
) -> Result<Vec<f64>> {
    let n_x = model.dim_state();
    let n_v = sens.len() / n_x;
    let mut dh = vec![0.0; n_x];
    model.terminal_cost_grad(terminal_state, &mut dh);
    let mut grad = vec![0.0; n_v];
    for i in 0..n_x {
        let row = &sens[i * n_v..(i + 1) * n_v];
        let w = dh[i];
        if w != 0.0 {
            for (g, &s) in grad.iter_mut().zip(row) {
                *g += w * s;
            }
        }
    }
    Ok(grad)
}

/// Integrate one scenario keeping only terminal data (no mesh storage).
pub fn integrate_terminal(
    model: &dyn Dynamics,
    grid: &ControlGrid,
    p: f64,
    steps_per_piece: usize,
    with_sensitivities: bool,
) -> Result<TerminalPoint> {
    if steps_per_piece == 0 {
        return Err(Error::InvalidData(
            "steps_per_piece must be at least 1".into(),
        ));
    }
    if model.dim_control() != grid.dim_control() {
        return Err(Error::DimensionMismatch(format!(
            "model expects {} control components, grid provides {}",
            model.dim_control(),
            grid.dim_control()
        )));
    }
    let n_x = model.dim_state();
    let n_u = model.dim_control();
    let pieces = grid.pieces();
    let n_v = if with_sensitivities { pieces * n_u } else { 0 };
    let dim = n_x * (1 + n_v);

    let mut y = vec![0.0; dim];
    y[..n_x].copy_from_slice(model.initial_state());
    check_finite(&y[..n_x], BLOWUP_GUARD, "initial state")?;

    let mut ws = Workspace::new(dim, n_x, n_u);
    let bk = grid.breakpoints();
    for k in 0..pieces {
        let h = (bk[k + 1] - bk[k]) / steps_per_piece as f64;
        let u = grid.row(k);
        for _ in 0..steps_per_piece {
            rk4_step(model, u, p, k, n_v, h, &mut y, &mut ws)?;
            if y.iter().any(|&c| !c.is_finite() || c.abs() > BLOWUP_GUARD) {
                check_finite(&y, BLOWUP_GUARD, &format!("piece {k}, scenario p = {p}"))?;
            }
        }
    }

    let sensitivity = if with_sensitivities {
        let mut s = vec![0.0; n_x * n_v];
        for j in 0..n_v {
            for i in 0..n_x {
                s[i * n_v + j] = y[n_x * (1 + j) + i];
            }
        }
        Some(s)
    } else {
        None
    };
    y.truncate(n_x);
    Ok(TerminalPoint {
        parameter: p,
        state: y,
        sensitivity,
    })
}

/// Terminal-only integration of every scenario parameter, in input order.
pub fn integrate_terminal_scenarios(
    model: &dyn Dynamics,
    grid: &ControlGrid,
    parameters: &[f64],
    steps_per_piece: usize,
    with_sensitivities: bool,
) -> Result<Vec<TerminalPoint>> {
    parameters
        .par_iter()
        .map(|&p| integrate_terminal(model, grid, p, steps_per_piece, with_sensitivities))
        .collect()
}

/// Scratch buffers for one RK4 integration pass.
struct Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
    jac_x: Vec<f64>,
    jac_u: Vec<f64>,
}

impl Workspace {
    fn new(dim: usize, n_x: usize, n_u: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            stage: vec![0.0; dim],
            jac_x: vec![0.0; n_x * n_x],
            jac_u: vec![0.0; n_x * n_u],
        }
    }
}

fn integrate_impl(
    model: &dyn Dynamics,
    grid: &ControlGrid,
    p: f64,
    steps_per_piece: usize,
    mode: SensitivityMode,
) -> Result<Trajectory> {
    if steps_per_piece == 0 {
        return Err(Error::InvalidData(
            "steps_per_piece must be at least 1".into(),
        ));
    }
    if model.dim_control() != grid.dim_control() {
        return Err(Error::DimensionMismatch(format!(
            "model expects {} control components, grid provides {}",
            model.dim_control(),
            grid.dim_control()
        )));
    }
    let n_x = model.dim_state();
    let n_u = model.dim_control();
    let pieces = grid.pieces();
    let with_sens = mode != SensitivityMode::None;
    let n_v = if with_sens { pieces * n_u } else { 0 };
    let dim = n_x * (1 + n_v);

    let mut y = vec![0.0; dim];
    y[..n_x].copy_from_slice(model.initial_state());
    check_finite(&y[..n_x], BLOWUP_GUARD, "initial state")?;

    let node_count = pieces * steps_per_piece + 1;
    let mut mesh = Vec::with_capacity(node_count);
    let mut states = Vec::with_capacity(node_count);
    let mut history = match mode {
        SensitivityMode::Full => Some(Vec::with_capacity(node_count)),
        _ => None,
    };
    mesh.push(0.0);
    states.push(y[..n_x].to_vec());
    if let Some(h) = history.as_mut() {
        h.push(y[n_x..].to_vec());
    }

    let mut ws = Workspace::new(dim, n_x, n_u);
    let bk = grid.breakpoints();
    for k in 0..pieces {
        let (a, b) = (bk[k], bk[k + 1]);
        let h = (b - a) / steps_per_piece as f64;
        let u = grid.row(k);
        for step in 0..steps_per_piece {
            rk4_step(model, u, p, k, n_v, h, &mut y, &mut ws)?;
            let t = if step + 1 == steps_per_piece {
                b
            } else {
                a + (step + 1) as f64 * h
            };
            // Cheap scan first; only a failing step pays for the message.
            if y.iter().any(|&c| !c.is_finite() || c.abs() > BLOWUP_GUARD) {
                check_finite(&y, BLOWUP_GUARD, &format!("t = {t:.6}, scenario p = {p}"))?;
            }
            mesh.push(t);
            states.push(y[..n_x].to_vec());
            if let Some(hst) = history.as_mut() {
                hst.push(y[n_x..].to_vec());
            }
        }
    }

    let terminal_sensitivity = if with_sens {
        // Repack from the per-direction layout [s_1 | s_2 | ...] (each n_x)
        // into a row-major n_x x n_v matrix.
        let mut s = vec![0.0; n_x * n_v];
        for j in 0..n_v {
            for i in 0..n_x {
                s[i * n_v + j] = y[n_x * (1 + j) + i];
            }
        }
        Some(s)
    } else {
        None
    };
    let sensitivity_history = history.map(|hst| {
        hst.into_iter()
            .map(|flat| {
                let mut s = vec![0.0; n_x * n_v];
                for j in 0..n_v {
                    for i in 0..n_x {
                        s[i * n_v + j] = flat[n_x * j + i];
                    }
                }
                s
            })
            .collect()
    });

    Ok(Trajectory {
        parameter: p,
        mesh,
        states,
        terminal_sensitivity,
        sensitivity_history,
    })
}

/// One classical RK4 step of the augmented system, in place.
fn rk4_step(
    model: &dyn Dynamics,
    u: &[f64],
    p: f64,
    piece: usize,
    n_v: usize,
    h: f64,
    y: &mut [f64],
    ws: &mut Workspace,
) -> Result<()> {
    augmented_rhs(model, u, p, piece, n_v, y, &mut ws.k1, &mut ws.jac_x, &mut ws.jac_u)?;
    axpy(&mut ws.stage, y, &ws.k1, 0.5 * h);
    augmented_rhs(model, u, p, piece, n_v, &ws.stage, &mut ws.k2, &mut ws.jac_x, &mut ws.jac_u)?;
    axpy(&mut ws.stage, y, &ws.k2, 0.5 * h);
    augmented_rhs(model, u, p, piece, n_v, &ws.stage, &mut ws.k3, &mut ws.jac_x, &mut ws.jac_u)?;
    axpy(&mut ws.stage, y, &ws.k3, h);
    augmented_rhs(model, u, p, piece, n_v, &ws.stage, &mut ws.k4, &mut ws.jac_x, &mut ws.jac_u)?;
    let w = h / 6.0;
    for i in 0..y.len() {
        y[i] += w * (ws.k1[i] + 2.0 * ws.k2[i] + 2.0 * ws.k3[i] + ws.k4[i]);
    }
    Ok(())
}

/// `out = base + scale * dir`.
fn axpy(out: &mut [f64], base: &[f64], dir: &[f64], scale: f64) {
    for ((o, &b), &d) in out.iter_mut().zip(base).zip(dir) {
        *o = b + scale * d;
    }
}

/// Right-hand side of the augmented system `[x, s_1, ..., s_{n_v}]`.
///
/// Directions are flattened piece-major: direction `j` (0-based) drives
/// component `j % n_u` on piece `j / n_u`, so its forcing term
/// `(df/du) e_l` is active only while integrating that piece.
fn augmented_rhs(
    model: &dyn Dynamics,
    u: &[f64],
    p: f64,
    piece: usize,
    n_v: usize,
    y: &[f64],
    out: &mut [f64],
    jac_x: &mut [f64],
    jac_u: &mut [f64],
) -> Result<()> {
    let n_x = model.dim_state();
    let n_u = model.dim_control();
    let x = &y[..n_x];
    model.rhs(x, u, p, &mut out[..n_x])?;
    if n_v == 0 {
        return Ok(());
    }
    model.rhs_jac_state(x, u, p, jac_x)?;
    model.rhs_jac_control(x, u, p, jac_u)?;
    for j in 0..n_v {
        let s = &y[n_x * (1 + j)..n_x * (2 + j)];
        let (ds_start, ds_end) = (n_x * (1 + j), n_x * (2 + j));
        for i in 0..n_x {
            let mut acc = 0.0;
            let row = &jac_x[i * n_x..(i + 1) * n_x];
            for (a, &sv) in row.iter().zip(s) {
                acc += a * sv;
            }
            out[ds_start + i] = acc;
        }
        if j / n_u == piece {
            let l = j % n_u;
            for i in 0..n_x {
                out[ds_start + i] += jac_u[i * n_u + l];
            }
        }
        debug_assert_eq!(ds_end - ds_start, n_x);
    }
    Ok(())
}
