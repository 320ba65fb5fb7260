//! Dense two-phase primal simplex for the inner worst-case problem.
//!
//! The inner problem ("ISP") is tiny: maximize `c . q` over probability
//! weights `q >= 0` subject to three moment equalities `A q = b` with
//! `A` the 3 x m matrix of columns `[1, p_i, p_i^2]`. The solver returns a
//! basic optimal `q` together with the dual vector `y` of the three moment
//! constraints, which solves the dual problem `min y . b` s.t.
//! `A^T y >= c` with zero duality gap.
//!
//! Implementation notes:
//! - rows are equilibrated (scaled by their max magnitude) before pivoting to
//!   tame the Vandermonde-like conditioning of the moment columns;
//! - phase 1 minimizes the sum of three artificial variables; phase 2 keeps
//!   the artificial columns around solely to read off the dual vector from
//!   their reduced costs;
//! - Bland's smallest-index rule (entering and leaving) guarantees
//!   termination under degeneracy, which is the common case here because
//!   optimal bases are 3-sparse; a Dantzig most-negative rule is available
//!   as a fast path.

use crate::ambiguity::{build_moment_lp, AmbiguitySpec, DiscreteSupport, MomentLpData};
use crate::{Error, Result};

/// Entering-column selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PivotRule {
    /// Smallest eligible index (anti-cycling, default).
    #[default]
    Bland,
    /// Most negative reduced cost, ties to the smallest index.
    Dantzig,
}

/// Outcome category of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    /// The support cannot match the prescribed moments.
    Infeasible,
    /// Only reachable through [`solve_dual_isp`] on moment-infeasible data
    /// (the dual of an infeasible primal is unbounded here).
    Unbounded,
}

/// Result of an inner-LP solve.
///
/// When `status` is [`LpStatus::Optimal`]: `weights` is a basic optimal
/// primal point (at most 3 nonzeros), `dual` the moment-constraint dual
/// vector, and `objective` the optimal value. Otherwise `weights`/`dual` are
/// empty/zero and `objective` is NaN.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub weights: Vec<f64>,
    pub dual: [f64; 3],
    pub objective: f64,
    /// Total simplex pivots across both phases.
    pub iterations: usize,
}

impl LpSolution {
    fn infeasible(status: LpStatus, iterations: usize) -> Self {
        Self {
            status,
            weights: Vec::new(),
            dual: [0.0; 3],
            objective: f64::NAN,
            iterations,
        }
    }
}

/// Eligibility threshold on reduced costs.
const REDUCED_COST_TOL: f64 = 1e-9;
/// Positivity threshold for ratio-test pivots.
const PIVOT_TOL: f64 = 1e-11;
/// Phase-1 objective threshold deciding feasibility.
const FEASIBILITY_TOL: f64 = 1e-8;

/// Solve the inner problem `max c . q, A q = b, q >= 0` (Bland's rule).
pub fn solve_isp(data: &MomentLpData) -> Result<LpSolution> {
    solve_isp_with(data, PivotRule::Bland)
}

/// Solve the inner problem with an explicit pivot rule.
pub fn solve_isp_with(data: &MomentLpData, rule: PivotRule) -> Result<LpSolution> {
    let sol = simplex(data, rule)?;
    if sol.status == LpStatus::Optimal {
        validate(data, &sol)?;
    }
    Ok(sol)
}

/// Solve the dual problem `min y . b` s.t. `A^T y >= c` (free `y`).
///
/// Solved through the same tableau: the returned `dual` is the optimal `y`,
/// `objective` is `y . b` (equal to the primal optimum within roundoff), and
/// `weights` carries the primal certificate. Moment-infeasible data makes the
/// dual unbounded, reported as [`LpStatus::Unbounded`].
pub fn solve_dual_isp(data: &MomentLpData) -> Result<LpSolution> {
    let mut sol = solve_isp(data)?;
    match sol.status {
        LpStatus::Optimal => {
            let y = sol.dual;
            sol.objective = y[0] * data.b[0] + y[1] * data.b[1] + y[2] * data.b[2];
            Ok(sol)
        }
        _ => Ok(LpSolution::infeasible(LpStatus::Unbounded, sol.iterations)),
    }
}

/// Whether `b` is matchable by some distribution on the support
/// (phase-1 feasibility probe with zero costs).
pub fn check_feasible_support(spec: &AmbiguitySpec, support: &DiscreteSupport) -> Result<bool> {
    let data = build_moment_lp(spec, support, vec![0.0; support.len()])?;
    Ok(simplex(&data, PivotRule::Bland)?.status == LpStatus::Optimal)
}

/// Runtime sanity guard on optimal solutions; tolerances are deliberately
/// loose relative to the expected roundoff-level residuals so they only
/// trip on genuine breakdowns.
fn validate(data: &MomentLpData, sol: &LpSolution) -> Result<()> {
    let mut residual: f64 = 0.0;
    for r in 0..3 {
        let mut lhs = 0.0;
        for (q, col) in sol.weights.iter().zip(&data.columns) {
            lhs += q * col[r];
        }
        residual = residual.max((lhs - data.b[r]).abs());
    }
    let primal: f64 = sol
        .weights
        .iter()
        .zip(&data.costs)
        .map(|(q, c)| q * c)
        .sum();
    let dual_value: f64 =
        sol.dual[0] * data.b[0] + sol.dual[1] * data.b[1] + sol.dual[2] * data.b[2];
    let scale = data.b[2].abs().max(1.0);
    if residual > 1e-7 * scale {
        return Err(Error::InternalError(format!(
            "simplex returned moment residual {residual:.3e}"
        )));
    }
    if (primal - dual_value).abs() > 1e-7 * primal.abs().max(1.0) {
        return Err(Error::InternalError(format!(
            "simplex duality gap {:.3e}",
            (primal - dual_value).abs()
        )));
    }
    if sol.weights.iter().any(|&q| q < -1e-8) {
        return Err(Error::InternalError("negative optimal weight".into()));
    }
    Ok(())
}

/// Dense tableau for `3` equality rows, `n` real columns plus 3 artificials.
struct Tableau {
    n: usize,
    /// Constraint rows, each of length `n + 3 + 1` (last entry = rhs).
    rows: [Vec<f64>; 3],
    /// Phase-1 objective row (minimize the artificial sum), same layout.
    obj1: Vec<f64>,
    /// Phase-2 objective row (minimize `-c . q`), same layout.
    obj2: Vec<f64>,
    basis: [usize; 3],
    /// Original-row recovery factors for the dual: `y_r = sign_r * y'_r / scale_r`.
    scale: [f64; 3],
    sign: [f64; 3],
    pivots: usize,
}

impl Tableau {
    fn new(data: &MomentLpData) -> Self {
        let n = data.columns.len();
        let width = n + 3 + 1;
        let mut scale = [0.0f64; 3];
        for r in 0..3 {
            let mut s = data.b[r].abs();
            for col in &data.columns {
                s = s.max(col[r].abs());
            }
            scale[r] = s.max(1e-300);
        }
        let sign = std::array::from_fn(|r| if data.b[r] < 0.0 { -1.0 } else { 1.0 });
        let rows: [Vec<f64>; 3] = std::array::from_fn(|r| {
            let mut row = vec![0.0; width];
            for (j, col) in data.columns.iter().enumerate() {
                row[j] = sign[r] * col[r] / scale[r];
            }
            row[n + r] = 1.0;
            row[width - 1] = sign[r] * data.b[r] / scale[r];
            row
        });
        // Phase-1 reduced costs under the all-artificial basis:
        // 0 - sum of rows for real columns, 0 for artificials.
        let mut obj1 = vec![0.0; width];
        for j in (0..n).chain([width - 1]) {
            obj1[j] = -(rows[0][j] + rows[1][j] + rows[2][j]);
        }
        // Phase-2 row: minimize -c . q; artificial basis has zero phase-2
        // cost, so the initial reduced costs are the raw coefficients.
        let mut obj2 = vec![0.0; width];
        for (j, &c) in data.costs.iter().enumerate() {
            obj2[j] = -c;
        }
        Self {
            n,
            rows,
            obj1,
            obj2,
            basis: [n, n + 1, n + 2],
            scale,
            sign,
            pivots: 0,
        }
    }

    fn rhs(&self, r: usize) -> f64 {
        *self.rows[r].last().unwrap()
    }

    fn pivot(&mut self, r: usize, jc: usize) {
        let inv = 1.0 / self.rows[r][jc];
        for v in self.rows[r].iter_mut() {
            *v *= inv;
        }
        self.rows[r][jc] = 1.0;
        let pivot_row = self.rows[r].clone();
        for r2 in 0..3 {
            if r2 != r {
                eliminate(&mut self.rows[r2], &pivot_row, jc);
            }
        }
        eliminate(&mut self.obj1, &pivot_row, jc);
        eliminate(&mut self.obj2, &pivot_row, jc);
        self.basis[r] = jc;
        self.pivots += 1;
    }

    /// Entering real column under the given rule, or None at phase optimum.
    fn entering(&self, obj: &[f64], rule: PivotRule) -> Option<usize> {
        match rule {
            PivotRule::Bland => (0..self.n).find(|&j| obj[j] < -REDUCED_COST_TOL),
            PivotRule::Dantzig => {
                let mut best: Option<(usize, f64)> = None;
                for j in 0..self.n {
                    if obj[j] < -REDUCED_COST_TOL
                        && best.map_or(true, |(_, c)| obj[j] < c)
                    {
                        best = Some((j, obj[j]));
                    }
                }
                best.map(|(j, _)| j)
            }
        }
    }

    /// Leaving row by the minimum-ratio test, ties to the smallest basic
    /// index (Bland). In phase 2, a basic artificial with any nonzero entry
    /// in the entering column leaves first (zero-step pivot) so artificials
    /// can never regain a positive level.
    fn leaving(&self, jc: usize, guard_artificials: bool) -> Option<usize> {
        if guard_artificials {
            let mut zero_step: Option<usize> = None;
            for r in 0..3 {
                if self.basis[r] >= self.n
                    && self.rows[r][jc].abs() > PIVOT_TOL
                    && zero_step.map_or(true, |r0| self.basis[r] < self.basis[r0])
                {
                    zero_step = Some(r);
                }
            }
            if zero_step.is_some() {
                return zero_step;
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for r in 0..3 {
            let a = self.rows[r][jc];
            if a > PIVOT_TOL {
                let ratio = self.rhs(r) / a;
                let better = match best {
                    None => true,
                    Some((rb, ratio_b)) => {
                        ratio < ratio_b - 1e-12
                            || (ratio <= ratio_b + 1e-12 && self.basis[r] < self.basis[rb])
                    }
                };
                if better {
                    best = Some((r, ratio));
                }
            }
        }
        best.map(|(r, _)| r)
    }
}

fn eliminate(row: &mut [f64], pivot_row: &[f64], jc: usize) {
    let factor = row[jc];
    if factor != 0.0 {
        for (v, &p) in row.iter_mut().zip(pivot_row) {
            *v -= factor * p;
        }
        row[jc] = 0.0;
    }
}

fn simplex(data: &MomentLpData, rule: PivotRule) -> Result<LpSolution> {
    if data.is_empty() {
        return Err(Error::DimensionMismatch("LP has no columns".into()));
    }
    let mut t = Tableau::new(data);
    let cap = 100 * (t.n + 3) + 1000;

    // Phase 1: drive the artificial sum to zero.
    while let Some(jc) = t.entering(&t.obj1.clone(), rule) {
        let Some(r) = t.leaving(jc, false) else {
            return Err(Error::InternalError(
                "phase-1 ratio test found no pivot (objective bounded below by 0)".into(),
            ));
        };
        t.pivot(r, jc);
        if t.pivots > cap {
            return Err(Error::InternalError("simplex pivot cap exceeded".into()));
        }
    }
    let infeasibility = -t.obj1.last().unwrap();
    if infeasibility > FEASIBILITY_TOL {
        return Ok(LpSolution::infeasible(LpStatus::Infeasible, t.pivots));
    }
    // Drive remaining zero-level artificials out of the basis where a real
    // pivot exists; rows with no real entry are redundant and stay inert.
    for r in 0..3 {
        if t.basis[r] >= t.n {
            let mut best: Option<(usize, f64)> = None;
            for j in 0..t.n {
                let a = t.rows[r][j].abs();
                if a > PIVOT_TOL && best.map_or(true, |(_, ab)| a > ab) {
                    best = Some((j, a));
                }
            }
            if let Some((j, _)) = best {
                t.pivot(r, j);
            }
        }
    }

    // Phase 2 on the real objective.
    while let Some(jc) = t.entering(&t.obj2.clone(), rule) {
        let Some(r) = t.leaving(jc, true) else {
            return Err(Error::InternalError(
                "inner LP reported unbounded, impossible with the probability constraint".into(),
            ));
        };
        t.pivot(r, jc);
        if t.pivots > cap {
            return Err(Error::InternalError("simplex pivot cap exceeded".into()));
        }
    }

    // Extract the basic primal point and the dual from the artificial
    // reduced costs (see module docs), undoing the row scaling.
    let mut weights = vec![0.0; t.n];
    for r in 0..3 {
        if t.basis[r] < t.n {
            weights[t.basis[r]] = t.rhs(r);
        }
    }
    let dual = std::array::from_fn(|r| t.obj2[t.n + r] * t.sign[r] / t.scale[r]);
    let objective = weights
        .iter()
        .zip(&data.costs)
        .map(|(q, c)| q * c)
        .sum::<f64>();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        weights,
        dual,
        objective,
        iterations: t.pivots,
    })
}
