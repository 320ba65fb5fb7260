//! Model layer: controlled ODE right-hand sides with analytic Jacobians.
//!
//! Every model integrates on the normalized time interval [0, 1]; models with
//! a physical horizon `t_f` fold the factor `t_f` into their right-hand side
//! and report the physical horizon through [`Dynamics::physical_horizon`] for
//! output purposes only.

use crate::{Error, Result};

/// A controlled ODE with one scalar uncertain parameter and a terminal cost.
///
/// Implementors provide the vector field `f(x, u, p)`, its Jacobians with
/// respect to state and control, and the terminal cost `h(x(1))` with its
/// gradient. Jacobians are written row-major: entry `(i, j)` of an
/// `rows x cols` matrix lands at index `i * cols + j`.
pub trait Dynamics: Send + Sync {
    /// State dimension `n_x`.
    fn dim_state(&self) -> usize;

    /// Control dimension `n_u`.
    fn dim_control(&self) -> usize;

    /// Initial state `x(0)`.
    fn initial_state(&self) -> &[f64];

    /// Physical duration represented by the normalized interval [0, 1].
    fn physical_horizon(&self) -> f64 {
        1.0
    }

    /// Vector field on normalized time: writes `f(x, u, p)` into `out`
    /// (length `n_x`).
    fn rhs(&self, x: &[f64], u: &[f64], p: f64, out: &mut [f64]) -> Result<()>;

    /// State Jacobian `df/dx`: row-major `n_x x n_x` into `out`.
    fn rhs_jac_state(&self, x: &[f64], u: &[f64], p: f64, out: &mut [f64]) -> Result<()>;

    /// Control Jacobian `df/du`: row-major `n_x x n_u` into `out`.
    fn rhs_jac_control(&self, x: &[f64], u: &[f64], p: f64, out: &mut [f64]) -> Result<()>;

    /// Terminal cost `h(x)`.
    fn terminal_cost(&self, x: &[f64]) -> f64;

    /// Gradient `dh/dx` (length `n_x`) into `out`.
    fn terminal_cost_grad(&self, x: &[f64], out: &mut [f64]);
}

/// Evaluate a model right-hand side into a fresh vector, rejecting non-finite
/// results.
pub fn eval_rhs(model: &dyn Dynamics, x: &[f64], u: &[f64], p: f64) -> Result<Vec<f64>> {
    if x.len() != model.dim_state() {
        return Err(Error::DimensionMismatch(format!(
            "state has length {}, model expects {}",
            x.len(),
            model.dim_state()
        )));
    }
    if u.len() != model.dim_control() {
        return Err(Error::DimensionMismatch(format!(
            "control has length {}, model expects {}",
            u.len(),
            model.dim_control()
        )));
    }
    let mut out = vec![0.0; model.dim_state()];
    model.rhs(x, u, p, &mut out)?;
    for &v in &out {
        if !v.is_finite() {
            return Err(Error::NumericalBlowup(format!(
                "right-hand side produced {v:e}"
            )));
        }
    }
    Ok(out)
}

/// Physical constants of the fed-batch fermentation model.
///
/// The uncertain parameter `p` passed to the model at evaluation time is the
/// specific maintenance consumption rate of substrate (often written `m_S`);
/// it is not part of this struct because it varies per scenario.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedBatchParams {
    /// Biomass decay rate (1/h).
    pub decay_rate: f64,
    /// Maximum specific growth rate (1/h).
    pub growth_rate_max: f64,
    /// Monod saturation constant for substrate (g/L).
    pub saturation_constant: f64,
    /// Substrate concentration at which growth is fully inhibited (g/L).
    pub substrate_critical: f64,
    /// Maximum biomass yield per unit substrate (dimensionless).
    pub yield_max: f64,
    /// Substrate concentration of the feed stream (g/L).
    pub feed_substrate: f64,
}

impl FedBatchParams {
    /// Check that every constant is strictly positive.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("decay_rate", self.decay_rate),
            ("growth_rate_max", self.growth_rate_max),
            ("saturation_constant", self.saturation_constant),
            ("substrate_critical", self.substrate_critical),
            ("yield_max", self.yield_max),
            ("feed_substrate", self.feed_substrate),
        ];
        for (name, value) in fields {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidData(format!(
                    "fed-batch parameter {name} must be strictly positive, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Fed-batch fermentation reactor.
///
/// State `x = [X, S, V]`: biomass concentration (g/L), substrate
/// concentration (g/L), broth volume (L). Control `u` is the scalar feed
/// rate (L/h). The uncertain parameter `p` is the maintenance consumption
/// rate `m_S` (1/h). On physical time,
///
/// ```text
/// X' = (mu(S) - d) X
/// S' = -(p + mu(S)/Y) X + (rho - S) u / V
/// V' = u
/// mu(S) = mu_max * S / (S + K) * (1 - S / S_crit)
/// ```
///
/// The stored right-hand side is the time-normalized field `t_f * f`.
#[derive(Debug, Clone)]
pub struct FedBatch {
    params: FedBatchParams,
    horizon: f64,
    x0: [f64; 3],
}

/// Build a fed-batch model with horizon `t_f` (hours) and initial state
/// `x0 = [X(0), S(0), V(0)]`.
pub fn fedbatch_model(params: FedBatchParams, t_f: f64, x0: [f64; 3]) -> Result<FedBatch> {
    params.validate()?;
    if !(t_f > 0.0) || !t_f.is_finite() {
        return Err(Error::InvalidData(format!(
            "horizon must be strictly positive, got {t_f}"
        )));
    }
    if !(x0[2] > 0.0) {
        return Err(Error::InvalidData(format!(
            "initial volume must be strictly positive, got {}",
            x0[2]
        )));
    }
    Ok(FedBatch {
        params,
        horizon: t_f,
        x0,
    })
}

impl FedBatch {
    pub fn params(&self) -> &FedBatchParams {
        &self.params
    }

    /// Specific growth rate `mu(S)` and its derivative `dmu/dS`.
    fn growth(&self, s: f64) -> (f64, f64) {
        let p = &self.params;
        let denom = s + p.saturation_constant;
        let monod = s / denom;
        let inhib = 1.0 - s / p.substrate_critical;
        let mu = p.growth_rate_max * monod * inhib;
        // d/dS [S/(S+K)] = K/(S+K)^2 ; d/dS [1 - S/Sc] = -1/Sc
        let dmonod = p.saturation_constant / (denom * denom);
        let dmu = p.growth_rate_max * (dmonod * inhib - monod / p.substrate_critical);
        (mu, dmu)
    }
}

impl Dynamics for FedBatch {
    fn dim_state(&self) -> usize {
        3
    }

    fn dim_control(&self) -> usize {
        1
    }

    fn initial_state(&self) -> &[f64] {
        &self.x0
    }

    fn physical_horizon(&self) -> f64 {
        self.horizon
    }

    fn rhs(&self, x: &[f64], u: &[f64], p: f64, out: &mut [f64]) -> Result<()> {
        let (bio, sub, vol) = (x[0], x[1], x[2]);
        if vol == 0.0 {
            return Err(Error::DivisionByZero("fed-batch volume"));
        }
        let prm = &self.params;
        let (mu, _) = self.growth(sub);
        let uptake = p + mu / prm.yield_max;
        let feed = u[0];
        out[0] = self.horizon * (mu - prm.decay_rate) * bio;
        out[1] = self.horizon * (-uptake * bio + (prm.feed_substrate - sub) / vol * feed);
        out[2] = self.horizon * feed;
        Ok(())
    }

    fn rhs_jac_state(&self, x: &[f64], u: &[f64], p: f64, out: &mut [f64]) -> Result<()> {
        let (bio, sub, vol) = (x[0], x[1], x[2]);
        if vol == 0.0 {
            return Err(Error::DivisionByZero("fed-batch volume"));
        }
        let prm = &self.params;
        let (mu, dmu) = self.growth(sub);
        let uptake = p + mu / prm.yield_max;
        let feed = u[0];
        let tf = self.horizon;
        // Row 0: d(X')/d[X, S, V]
        out[0] = tf * (mu - prm.decay_rate);
        out[1] = tf * dmu * bio;
        out[2] = 0.0;
        // Row 1: d(S')/d[X, S, V]
        out[3] = tf * (-uptake);
        out[4] = tf * (-(dmu / prm.yield_max) * bio - feed / vol);
        out[5] = tf * (-(prm.feed_substrate - sub) / (vol * vol) * feed);
        // Row 2: d(V')/d[X, S, V]
        out[6] = 0.0;
        out[7] = 0.0;
        out[8] = 0.0;
        Ok(())
    }

    fn rhs_jac_control(&self, x: &[f64], _u: &[f64], _p: f64, out: &mut [f64]) -> Result<()> {
        let (sub, vol) = (x[1], x[2]);
        if vol == 0.0 {
            return Err(Error::DivisionByZero("fed-batch volume"));
        }
        let tf = self.horizon;
        out[0] = 0.0;
        out[1] = tf * (self.params.feed_substrate - sub) / vol;
        out[2] = tf;
        Ok(())
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        // Maximize terminal biomass concentration => minimize its negative.
        -x[0]
    }

    fn terminal_cost_grad(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), 3);
        out[0] = -1.0;
        out[1] = 0.0;
        out[2] = 0.0;
    }
}

/// Small closed-form models used by tests and the command-line toy configs.
pub mod toy {
    use super::Dynamics;
    use crate::Result;

    /// `x' = 0`, `h = 0`: nothing moves. One state, one control.
    #[derive(Debug, Clone)]
    pub struct Zero {
        x0: [f64; 1],
    }

    impl Zero {
        pub fn new(x0: f64) -> Self {
            Self { x0: [x0] }
        }
    }

    impl Dynamics for Zero {
        fn dim_state(&self) -> usize {
            1
        }
        fn dim_control(&self) -> usize {
            1
        }
        fn initial_state(&self) -> &[f64] {
            &self.x0
        }
        fn rhs(&self, _x: &[f64], _u: &[f64], _p: f64, out: &mut [f64]) -> Result<()> {
            out[0] = 0.0;
            Ok(())
        }
        fn rhs_jac_state(&self, _x: &[f64], _u: &[f64], _p: f64, out: &mut [f64]) -> Result<()> {
            out[0] = 0.0;
            Ok(())
        }
        fn rhs_jac_control(&self, _x: &[f64], _u: &[f64], _p: f64, out: &mut [f64]) -> Result<()> {
            out[0] = 0.0;
            Ok(())
        }
        fn terminal_cost(&self, _x: &[f64]) -> f64 {
            0.0
        }
        fn terminal_cost_grad(&self, _x: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
    }

    /// `x' = u`, `h = x^2`: the integrator of the control with a quadratic
    /// terminal cost. The minimizer drives the integral of `u` to `-x0`.
    #[derive(Debug, Clone)]
    pub struct QuadraticTarget {
        x0: [f64; 1],
    }

    impl QuadraticTarget {
        pub fn new(x0: f64) -> Self {
            Self { x0: [x0] }
        }
    }

    impl Dynamics for QuadraticTarget {
        fn dim_state(&self) -> usize {
            1
        }
        fn dim_control(&self) -> usize {
            1
        }
        fn initial_state(&self) -> &[f64] {
            &self.x0
        }
        fn rhs(&self, _x: &[f64], u: &[f64], _p: f64, out: &mut [f64]) -> Result<()> {
            out[0] = u[0];
            Ok(())
        }
        fn rhs_jac_state(&self, _x: &[f64], _u: &[f64], _p: f64, out: &mut [f64]) -> Result<()> {
            out[0] = 0.0;
            Ok(())
        }
        fn rhs_jac_control(&self, _x: &[f64], _u: &[f64], _p: f64, out: &mut [f64]) -> Result<()> {
            out[0] = 1.0;
            Ok(())
        }
        fn terminal_cost(&self, x: &[f64]) -> f64 {
            x[0] * x[0]
        }
        fn terminal_cost_grad(&self, x: &[f64], out: &mut [f64]) {
            out[0] = 2.0 * x[0];
        }
    }

    /// `x' = p * x` (control ignored), `h = -x`: scalar exponential growth
    /// with closed-form solution `x(1) = x0 * exp(p)`.
    #[derive(Debug, Clone)]
    pub struct Exponential {
        x0: [f64; 1],
    }

    impl Exponential {
        pub fn new(x0: f64) -> Self {
            Self { x0: [x0] }
        }
    }

    impl Dynamics for Exponential {
        fn dim_state(&self) -> usize {
            1
        }
        fn dim_control(&self) -> usize {
            1
        }
        fn initial_state(&self) -> &[f64] {
            &self.x0
        }
        fn rhs(&self, x: &[f64], _u: &[f64], p: f64, out: &mut [f64]) -> Result<()> {
            out[0] = p * x[0];
            Ok(())
        }
        fn rhs_jac_state(&self, _x: &[f64], _u: &[f64], p: f64, out: &mut [f64]) -> Result<()> {
            out[0] = p;
            Ok(())
        }
        fn rhs_jac_control(&self, _x: &[f64], _u: &[f64], _p: f64, out: &mut [f64]) -> Result<()> {
            out[0] = 0.0;
            Ok(())
        }
        fn terminal_cost(&self, x: &[f64]) -> f64 {
            -x[0]
        }
        fn terminal_cost_grad(&self, _x: &[f64], out: &mut [f64]) {
            out[0] = -1.0;
        }
    }

    /// `x' = p * x + u`, `h = -x`: scalar linear dynamics with an exact
    /// variation-of-constants solution, used to cross-check adjoint math.
    #[derive(Debug, Clone)]
    pub struct ScalarLinear {
        x0: [f64; 1],
    }

    impl ScalarLinear {
        pub fn new(x0: f64) -> Self {
            Self { x0: [x0] }
        }
    }

    impl Dynamics for ScalarLinear {
        fn dim_state(&self) -> usize {
            1
        }
        fn dim_control(&self) -> usize {
            1
        }
        fn initial_state(&self) -> &[f64] {
            &self.x0
        }
        fn rhs(&self, x: &[f64], u: &[f64], p: f64, out: &mut [f64]) -> Result<()> {
            out[0] = p * x[0] + u[0];
            Ok(())
        }
        fn rhs_jac_state(&self, _x: &[f64], _u: &[f64], p: f64, out: &mut [f64]) -> Result<()> {
            out[0] = p;
            Ok(())
        }
        fn rhs_jac_control(&self, _x: &[f64], _u: &[f64], _p: f64, out: &mut [f64]) -> Result<()> {
            out[0] = 1.0;
            Ok(())
        }
        fn terminal_cost(&self, x: &[f64]) -> f64 {
            -x[0]
        }
        fn terminal_cost_grad(&self, _x: &[f64], out: &mut [f64]) {
            out[0] = -1.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Benchmark constants used across the test suite.
    pub(crate) fn bench_params() -> FedBatchParams {
        FedBatchParams {
            decay_rate: 0.05,
            growth_rate_max: 2.7,
            saturation_constant: 280.0,
            substrate_critical: 100.0,
            yield_max: 0.082,
            feed_substrate: 945.0,
        }
    }

    fn bench_model() -> FedBatch {
        fedbatch_model(bench_params(), 25.0, [0.1, 20.0, 3.0]).unwrap()
    }

    #[test]
    fn rhs_matches_hand_computed_values() {
        // Frozen by hand from the model formulas at x = [0.1, 20, 3],
        // u = 0.01, p = 2.2:
        //   mu   = 2.7 * (20/300) * (1 - 20/100)        = 0.144 exactly
        //   q    = 2.2 + 0.144/0.082                    = 3.95609756097...
        //   f1   = (0.144 - 0.05) * 0.1                 = 0.0094
        //   f2   = -q*0.1 + (945-20)/3 * 0.01           = 2.68772357723577...
        //   f3   = 0.01
        // and the stored field is 25 * f.
        let model = bench_model();
        let out = eval_rhs(&model, &[0.1, 20.0, 3.0], &[0.01], 2.2).unwrap();
        let expected: [f64; 3] = [
            0.235,
            25.0 * (925.0 / 300.0 - (2.2 + 0.144 / 0.082) * 0.1),
            0.25,
        ];
        assert!((expected[1] - 67.193_089_430_894_3).abs() < 1e-10);
        for (got, want) in out.iter().zip(expected) {
            assert!(
                (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                "got {got}, want {want}"
            );
        }
    }

    #[test]
    fn zero_volume_is_rejected() {
        let model = bench_model();
        let err = eval_rhs(&model, &[0.1, 20.0, 0.0], &[0.01], 2.2).unwrap_err();
        assert!(matches!(err, Error::DivisionByZero(_)));
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut params = bench_params();
        params.yield_max = 0.0;
        assert!(matches!(
            fedbatch_model(params, 25.0, [0.1, 20.0, 3.0]),
            Err(Error::InvalidData(_))
        ));
        assert!(matches!(
            fedbatch_model(bench_params(), -1.0, [0.1, 20.0, 3.0]),
            Err(Error::InvalidData(_))
        ));
        assert!(matches!(
            fedbatch_model(bench_params(), 25.0, [0.1, 20.0, 0.0]),
            Err(Error::InvalidData(_))
        ));
    }

    /// Central finite-difference check of both Jacobians at several
    /// representative points along plausible trajectories.
    #[test]
    fn jacobians_match_finite_differences() {
        let model = bench_model();
        let points: [([f64; 3], f64, f64); 4] = [
            ([0.1, 20.0, 3.0], 0.01, 2.2),
            ([1.5, 8.0, 3.4], 0.03, 1.76),
            ([4.0, 2.0, 3.6], 0.0, 2.64),
            ([2.0, 60.0, 3.2], 0.04, 2.0),
        ];
        for (x, u, p) in points {
            let u = [u];
            let mut jx = [0.0; 9];
            let mut ju = [0.0; 3];
            model.rhs_jac_state(&x, &u, p, &mut jx).unwrap();
            model.rhs_jac_control(&x, &u, p, &mut ju).unwrap();

            // State Jacobian columns.
            for j in 0..3 {
                let h = 1e-6 * x[j].abs().max(1.0);
                let mut xp = x;
                let mut xm = x;
                xp[j] += h;
                xm[j] -= h;
                let fp = eval_rhs(&model, &xp, &u, p).unwrap();
                let fm = eval_rhs(&model, &xm, &u, p).unwrap();
                for i in 0..3 {
                    let fd = (fp[i] - fm[i]) / (2.0 * h);
                    let scale = jx[i * 3 + j].abs().max(1.0);
                    assert!(
                        (jx[i * 3 + j] - fd).abs() <= 5e-6 * scale,
                        "jac_state[{i}][{j}] = {} vs fd {fd} at x={x:?}",
                        jx[i * 3 + j]
                    );
                }
            }

            // Control Jacobian (single column).
            let h = 1e-6;
            let fp = eval_rhs(&model, &x, &[u[0] + h], p).unwrap();
            let fm = eval_rhs(&model, &x, &[u[0] - h], p).unwrap();
            for i in 0..3 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!(
                    (ju[i] - fd).abs() <= 5e-6 * ju[i].abs().max(1.0),
                    "jac_control[{i}] = {} vs fd {fd}",
                    ju[i]
                );
            }
        }
    }

    #[test]
    fn terminal_cost_is_negative_biomass() {
        let model = bench_model();
        assert_eq!(model.terminal_cost(&[4.2, 1.0, 3.5]), -4.2);
        let mut g = [0.0; 3];
        model.terminal_cost_grad(&[4.2, 1.0, 3.5], &mut g);
        assert_eq!(g, [-1.0, 0.0, 0.0]);
    }

    #[test]
    fn toy_models_have_consistent_jacobians() {
        let models: Vec<Box<dyn Dynamics>> = vec![
            Box::new(toy::Zero::new(1.0)),
            Box::new(toy::QuadraticTarget::new(0.5)),
            Box::new(toy::Exponential::new(1.0)),
            Box::new(toy::ScalarLinear::new(1.0)),
        ];
        for model in &models {
            let x = [0.7];
            let u = [0.3];
            let p = 0.9;
            let mut jx = [0.0];
            let mut ju = [0.0];
            model.rhs_jac_state(&x, &u, p, &mut jx).unwrap();
            model.rhs_jac_control(&x, &u, p, &mut ju).unwrap();
            let h = 1e-7;
            let fp = eval_rhs(model.as_ref(), &[x[0] + h], &u, p).unwrap();
            let fm = eval_rhs(model.as_ref(), &[x[0] - h], &u, p).unwrap();
            assert!((jx[0] - (fp[0] - fm[0]) / (2.0 * h)).abs() < 1e-6);
            let gp = eval_rhs(model.as_ref(), &x, &[u[0] + h], p).unwrap();
            let gm = eval_rhs(model.as_ref(), &x, &[u[0] - h], p).unwrap();
            assert!((ju[0] - (gp[0] - gm[0]) / (2.0 * h)).abs() < 1e-6);
        }
    }

    #[test]
    fn eval_rhs_checks_dimensions() {
        let model = bench_model();
        assert!(matches!(
            eval_rhs(&model, &[0.1, 20.0], &[0.01], 2.2),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            eval_rhs(&model, &[0.1, 20.0, 3.0], &[], 2.2),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
