//! Configuration file schema and problem assembly.
//!
//! A run is described by one JSON document with five sections — `model`,
//! `ambiguity`, `control`, `solver`, `output` — validated strictly on load
//! (unknown keys are rejected) and then re-validated by the library
//! constructors when the problem objects are built.

use std::sync::Arc;

use serde::Deserialize;

use droc_core::ambiguity::{characteristic_grid, AmbiguitySpec, Density, DiscreteSupport, Placement};
use droc_core::control::{ControlBox, ControlGrid};
use droc_core::dynamics::{fedbatch_model, toy, Dynamics, FedBatchParams};
use droc_core::outer::{AlgorithmSchedule, RobustControlProblem, SolverOptions, Strategy};

use crate::CliError;

/// Top-level configuration document.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub model: ModelSection,
    pub ambiguity: AmbiguitySection,
    pub control: ControlSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Which dynamics to instantiate and with what data.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Builtin name: `fedbatch`, `toy:zero`, `toy:quadratic`,
    /// `toy:exponential`, or `toy:scalar-linear`.
    pub name: String,
    /// Kinetic constants; only meaningful for `fedbatch` (defaults to the
    /// embedded benchmark values when omitted).
    #[serde(default)]
    pub params: Option<FedBatchParams>,
    /// Initial state; length 3 for `fedbatch`, length 1 for the toys.
    /// Defaults: benchmark initial state / `0.5` for the toys.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Physical horizon. Defaults to the benchmark duration for `fedbatch`;
    /// the toys are defined on a fixed unit horizon and reject other values.
    #[serde(default)]
    pub t_f: Option<f64>,
}

/// Moment constraints, parameter interval, and scenario discretization.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbiguitySection {
    pub mu: f64,
    pub sigma: f64,
    pub p_lower: f64,
    pub p_upper: f64,
    /// Number of characteristic scenario points.
    pub m: usize,
    /// Representative-point placement; defaults to interval endpoints.
    #[serde(default)]
    pub placement: Option<Placement>,
    /// Optional density for the `discretize` pipeline.
    #[serde(default)]
    pub density: Option<Density>,
}

/// Piecewise-constant control discretization and box.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub pieces: usize,
    pub lower: f64,
    pub upper: f64,
    /// Optional normalized breakpoints (length `pieces + 1`, from 0 to 1);
    /// uniform when omitted.
    #[serde(default)]
    pub breakpoints: Option<Vec<f64>>,
    /// Optional initial control values, flattened piece-major
    /// (`pieces * n_u` entries); defaults to the box midpoint.
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
}

/// Solver schedule and options; every field has the library default.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub rho0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub omega_star: f64,
    pub eta_star: f64,
    pub max_outer: usize,
    pub epsilon: f64,
    pub epsilon_shrink: Option<f64>,
    pub steps_per_piece: usize,
    pub max_inner: usize,
    pub multistart: usize,
    pub seed: u64,
    pub strategy: Strategy,
}

impl Default for SolverSection {
    fn default() -> Self {
        let schedule = AlgorithmSchedule::default();
        let options = SolverOptions::default();
        Self {
            rho0: schedule.rho0,
            alpha1: schedule.alpha1,
            alpha2: schedule.alpha2,
            alpha3: schedule.alpha3,
            omega_star: schedule.omega_star,
            eta_star: schedule.eta_star,
            max_outer: schedule.max_outer,
            epsilon: options.epsilon,
            epsilon_shrink: options.epsilon_shrink,
            steps_per_piece: options.steps_per_piece,
            max_inner: options.max_inner,
            multistart: options.multistart,
            seed: options.seed,
            strategy: options.strategy,
        }
    }
}

impl SolverSection {
    /// Assemble the library options, optionally overriding the seed.
    pub fn to_options(&self, seed_override: Option<u64>) -> SolverOptions {
        SolverOptions {
            schedule: AlgorithmSchedule {
                rho0: self.rho0,
                alpha1: self.alpha1,
                alpha2: self.alpha2,
                alpha3: self.alpha3,
                omega_star: self.omega_star,
                eta_star: self.eta_star,
                max_outer: self.max_outer,
            },
            epsilon: self.epsilon,
            epsilon_shrink: self.epsilon_shrink,
            steps_per_piece: self.steps_per_piece,
            max_inner: self.max_inner,
            strategy: self.strategy,
            multistart: self.multistart,
            seed: seed_override.unwrap_or(self.seed),
        }
    }
}

/// Where artifacts go and whether the trace is emitted.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Output directory; overridden by `--out`.
    pub dir: Option<String>,
    /// Emit `trace.csv` from `solve` (on by default).
    pub trace: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: None,
            trace: true,
        }
    }
}

/// Fully instantiated problem objects derived from a config.
pub struct Built {
    pub model: Arc<dyn Dynamics>,
    pub spec: AmbiguitySpec,
    pub support: DiscreteSupport,
    pub problem: RobustControlProblem,
    pub bounds: ControlBox,
    /// Initial control iterate (config `initial` or the box midpoint).
    pub initial: ControlGrid,
    pub options: SolverOptions,
}

impl ProblemConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, CliError> {
        serde_json::from_slice(bytes)
            .map_err(|e| CliError::Config(format!("cannot parse config: {e}")))
    }

    /// Build every library object the subcommands need, re-validating all
    /// module invariants (moment feasibility included).
    pub fn build(&self, seed_override: Option<u64>) -> Result<Built, CliError> {
        let model = self.build_model()?;
        let spec = AmbiguitySpec::new(
            self.ambiguity.p_lower,
            self.ambiguity.p_upper,
            self.ambiguity.mu,
            self.ambiguity.sigma,
        )?;
        let placement = self.ambiguity.placement.unwrap_or(Placement::Endpoints);
        let support = characteristic_grid(&spec, self.ambiguity.m, placement)?;
        let bounds = ControlBox::uniform(
            model.dim_control(),
            self.control.lower,
            self.control.upper,
        )?;
        let initial = self.build_initial_grid(model.as_ref(), &bounds)?;
        let problem = RobustControlProblem::new(Arc::clone(&model), spec, support.clone())?;
        let options = self.solver.to_options(seed_override);
        options.validate()?;
        Ok(Built {
            model,
            spec,
            support,
            problem,
            bounds,
            initial,
            options,
        })
    }

    fn build_model(&self) -> Result<Arc<dyn Dynamics>, CliError> {
        let section = &self.model;
        if section.name == "fedbatch" {
            let case = droc_core::bench::fedbatch_case();
            let params = section.params.unwrap_or(case.params);
            let x0 = match &section.x0 {
                None => case.initial_state,
                Some(v) => <[f64; 3]>::try_from(v.as_slice()).map_err(|_| {
                    CliError::Config(format!(
                        "fedbatch x0 needs exactly 3 components, got {}",
                        v.len()
                    ))
                })?,
            };
            let t_f = section.t_f.unwrap_or(case.duration);
            return Ok(Arc::new(fedbatch_model(params, t_f, x0)?));
        }
        if section.params.is_some() {
            return Err(CliError::Config(format!(
                "model {} takes no kinetic parameters",
                section.name
            )));
        }
        if let Some(t_f) = section.t_f {
            if t_f != 1.0 {
                return Err(CliError::Config(format!(
                    "toy models are defined on the unit horizon; got t_f = {t_f}"
                )));
            }
        }
        let x0 = match &section.x0 {
            None => 0.5,
            Some(v) if v.len() == 1 => v[0],
            Some(v) => {
                return Err(CliError::Config(format!(
                    "toy x0 needs exactly 1 component, got {}",
                    v.len()
                )))
            }
        };
        let model: Arc<dyn Dynamics> = match section.name.as_str() {
            "toy:zero" => Arc::new(toy::Zero::new(x0)),
            "toy:quadratic" => Arc::new(toy::QuadraticTarget::new(x0)),
            "toy:exponential" => Arc::new(toy::Exponential::new(x0)),
            "toy:scalar-linear" => Arc::new(toy::ScalarLinear::new(x0)),
            other => {
                return Err(CliError::Config(format!(
                    "unknown model {other:?}; expected fedbatch, toy:zero, \
                     toy:quadratic, toy:exponential, or toy:scalar-linear"
                )))
            }
        };
        Ok(model)
    }

    /// Grid from the config's breakpoints/initial values (box midpoint fill).
    pub fn build_initial_grid(
        &self,
        model: &dyn Dynamics,
        bounds: &ControlBox,
    ) -> Result<ControlGrid, CliError> {
        let n_u = model.dim_control();
        let flat_len = self.control.pieces * n_u;
        let values = match &self.control.initial {
            Some(v) => {
                if v.len() != flat_len {
                    return Err(CliError::Config(format!(
                        "control.initial has {} entries; expected pieces * n_u = {}",
                        v.len(),
                        flat_len
                    )));
                }
                v.clone()
            }
            None => {
                let mid = 0.5 * (self.control.lower + self.control.upper);
                vec![mid; flat_len]
            }
        };
        self.grid_with_values(bounds, values)
    }

    /// Grid on the config's mesh carrying the given flat values.
    pub fn grid_with_values(
        &self,
        bounds: &ControlBox,
        values: Vec<f64>,
    ) -> Result<ControlGrid, CliError> {
        let grid = match &self.control.breakpoints {
            Some(bk) => ControlGrid::from_breakpoints(bk.clone(), values, bounds.clone())?,
            None => ControlGrid::uniform(self.control.pieces, values, bounds.clone())?,
        };
        if grid.pieces() != self.control.pieces {
            return Err(CliError::Config(format!(
                "breakpoints define {} pieces but control.pieces = {}",
                grid.pieces(),
                self.control.pieces
            )));
        }
        Ok(grid)
    }
}
