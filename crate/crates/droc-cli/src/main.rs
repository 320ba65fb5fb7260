//! `droc` — command-line front end for the robust optimal control solver.
//!
//! Subcommands cover the pipeline stages: `solve` runs the full outer
//! algorithm and writes the solution artifacts, `inner` prices a given
//! control against the worst-case distribution, `check` verifies a solution
//! file against the first-order optimality certificate, `discretize` turns a
//! density into scenario masses with moment-error bounds, and `bench` runs
//! the embedded fermentation benchmark reproduction and prints a pass/fail
//! table.
//!
//! Exit codes: 0 success/converged, 2 soft failure (solver hit its round
//! cap, certificate check failed, or a benchmark row failed), 1 hard error
//! (bad config, IO, infeasible data).

mod config;
mod output;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use droc_core::ambiguity::{
    build_moment_lp, discretize_density, moment_discretization_error, AmbiguitySpec, Placement,
};
use droc_core::bench as corebench;
use droc_core::kkt::{self, KktTolerances};
use droc_core::lp::solve_dual_isp;
use droc_core::outer::{
    self, evaluate_merit, flow_note, inner_worst_case, worst_case_rows, MeritParams, Termination,
};

use config::ProblemConfig;
use output::{
    discretization_csv, num, parse_control_values, parse_solution, residuals_csv, solution_csv,
    trace_csv, trajectories_csv, worstcase_csv, write_atomic, Manifest,
};

/// CLI-level error: library errors plus config/IO context.
#[derive(Debug)]
pub enum CliError {
    Core(droc_core::Error),
    Io(String, std::io::Error),
    Config(String),
}

impl From<droc_core::Error> for CliError {
    fn from(e: droc_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(context, e) => write!(f, "{context}: {e}"),
            CliError::Config(msg) => write!(f, "{msg}"),
        }
    }
}

impl CliError {
    /// Stable machine-greppable tag printed as `error[Tag]: ...`.
    fn tag(&self) -> &'static str {
        use droc_core::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::NumericalBlowup(_) => "NumericalBlowup",
                E::DivisionByZero(_) => "DivisionByZero",
                E::OutOfDomain(_) => "OutOfDomain",
                E::TooFewPoints { .. } => "TooFewPoints",
                E::DimensionMismatch(_) => "DimensionMismatch",
                E::InvalidDensity(_) => "InvalidDensity",
                E::MassMismatch(_) => "MassMismatch",
                E::MissingSensitivities => "MissingSensitivities",
                E::InvalidData(_) => "InvalidData",
                E::InternalError(_) => "InternalError",
            },
            CliError::Io(..) => "Io",
            CliError::Config(_) => "Config",
        }
    }
}

#[derive(Parser)]
#[command(
    name = "droc",
    version,
    about = "Distributionally robust optimal control under moment ambiguity"
)]
struct Cli {
    /// Path to the JSON problem configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's output.dir; default "out").
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the solver seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread count (env DROC_THREADS as fallback).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress output on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full robust solve and write solution artifacts.
    Solve,
    /// Price a control file against the worst-case distribution.
    Inner {
        /// Control file: a solution CSV or bare piece-major values.
        #[arg(long)]
        control: PathBuf,
    },
    /// Verify a solution file against the first-order certificate.
    Check {
        /// Solution CSV produced by `solve` (control pieces + y-block).
        #[arg(long)]
        solution: PathBuf,
    },
    /// Discretize the configured density into scenario masses.
    Discretize,
    /// Reproduce the embedded fermentation benchmark and print a
    /// pass/fail table.
    Bench,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error[{}]: {}", e.tag(), e);
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    init_threads(cli.threads)?;
    match &cli.command {
        Command::Solve => cmd_solve(cli),
        Command::Inner { control } => cmd_inner(cli, control),
        Command::Check { solution } => cmd_check(cli, solution),
        Command::Discretize => cmd_discretize(cli),
        Command::Bench => cmd_bench(cli),
    }
}

/// Configure the global worker pool from `--threads` or `DROC_THREADS`.
fn init_threads(requested: Option<usize>) -> Result<(), CliError> {
    let from_env = match std::env::var("DROC_THREADS") {
        Ok(raw) => Some(raw.parse::<usize>().map_err(|_| {
            CliError::Config(format!("DROC_THREADS={raw:?} is not a thread count"))
        })?),
        Err(_) => None,
    };
    if let Some(n) = requested.or(from_env) {
        if n == 0 {
            return Err(CliError::Config("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot configure thread pool: {e}")))?;
    }
    Ok(())
}

fn say(quiet: bool, msg: impl AsRef<str>) {
    if !quiet {
        println!("{}", msg.as_ref());
    }
}

fn load_config(cli: &Cli) -> Result<(Vec<u8>, ProblemConfig), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("missing --config <path>".into()))?;
    let bytes = fs::read(path)
        .map_err(|e| CliError::Io(format!("cannot read config {}", path.display()), e))?;
    let cfg = ProblemConfig::from_json(&bytes)?;
    Ok((bytes, cfg))
}

/// Resolve and create the output directory: `--out`, then config, then "out".
fn resolve_out(cli: &Cli, cfg: Option<&ProblemConfig>) -> Result<PathBuf, CliError> {
    let dir = cli
        .out
        .clone()
        .or_else(|| {
            cfg.and_then(|c| c.output.dir.as_ref())
                .map(PathBuf::from)
        })
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::Io(format!("cannot create {}", dir.display()), e))?;
    Ok(dir)
}

fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::MaxIterations => "max-iterations",
        Termination::LineSearchFailure => "line-search-failure",
    }
}

fn cmd_solve(cli: &Cli) -> Result<u8, CliError> {
    let (bytes, cfg) = load_config(cli)?;
    let built = cfg.build(cli.seed)?;
    let out = resolve_out(cli, Some(&cfg))?;
    let started = Instant::now();
    let report = outer::solve(&built.problem, &built.initial, &built.options)?;
    let elapsed = started.elapsed();
    let t_f = built.model.physical_horizon();
    let mut manifest = Manifest::new("solve", &bytes, built.options.seed);

    let path = write_atomic(
        &out,
        "solution.csv",
        &solution_csv(&report.control, t_f, &report.dual, report.objective),
    )?;
    manifest.record(&path);

    let rows = worst_case_rows(&built.problem, &report.control, built.options.steps_per_piece)?;
    let path = write_atomic(&out, "worstcase.csv", &worstcase_csv(&rows))?;
    manifest.record(&path);

    let certificate = kkt::verify(
        &built.problem,
        &report.control,
        &report.dual,
        built.options.steps_per_piece,
    )?;
    let tolerances = KktTolerances::default();
    let verdict = if certificate.passes(&tolerances) {
        "PASS"
    } else {
        "FAIL"
    };
    let mut kkt_text = String::new();
    kkt_text.push_str(flow_note());
    kkt_text.push_str("\n\n");
    kkt_text.push_str(&certificate.report());
    kkt_text.push_str(&format!(
        "\ncertificate: {verdict} (algebraic tolerance {}, stationarity tolerance {})\n",
        tolerances.algebraic, tolerances.stationarity
    ));
    let path = write_atomic(&out, "kkt.txt", kkt_text.as_bytes())?;
    manifest.record(&path);

    if cfg.output.trace {
        let path = write_atomic(&out, "trace.csv", &trace_csv(&report.trace))?;
        manifest.record(&path);
    }
    manifest.write(&out)?;

    say(
        cli.quiet,
        format!("termination      {}", termination_name(report.termination)),
    );
    say(cli.quiet, format!("objective        {}", num(report.objective)));
    say(cli.quiet, format!("penalty          {:e}", report.penalty));
    say(
        cli.quiet,
        format!("max_constraint   {:e}", report.max_constraint),
    );
    say(cli.quiet, format!("pgrad_norm       {:e}", report.pgrad_norm));
    say(
        cli.quiet,
        format!(
            "rounds/inner     {}/{}",
            report.outer_rounds, report.inner_iterations
        ),
    );
    if let Some(v) = report.multistart_value {
        say(cli.quiet, format!("multistart value {}", num(v)));
    }
    say(cli.quiet, format!("certificate      {verdict}"));
    say(
        cli.quiet,
        format!("elapsed          {:.2}s", elapsed.as_secs_f64()),
    );
    say(cli.quiet, format!("artifacts in     {}", out.display()));

    Ok(match report.termination {
        Termination::Converged => 0,
        _ => 2,
    })
}

fn cmd_inner(cli: &Cli, control_path: &Path) -> Result<u8, CliError> {
    let (bytes, cfg) = load_config(cli)?;
    let built = cfg.build(cli.seed)?;
    let text = fs::read_to_string(control_path).map_err(|e| {
        CliError::Io(
            format!("cannot read control file {}", control_path.display()),
            e,
        )
    })?;
    let flat = parse_control_values(&text)?;
    let expected = cfg.control.pieces * built.model.dim_control();
    if flat.len() != expected {
        return Err(CliError::Config(format!(
            "control file has {} values; expected pieces * n_u = {expected}",
            flat.len()
        )));
    }
    let grid = cfg.grid_with_values(&built.bounds, flat)?;
    let (costs, primal) = inner_worst_case(&built.problem, &grid, built.options.steps_per_piece)?;
    let data = build_moment_lp(&built.spec, &built.support, costs.clone())?;
    let dual = solve_dual_isp(&data)?;
    let gap = (primal.objective - dual.objective).abs();

    let points = built.support.points();
    say(cli.quiet, "scenario_index  parameter  cost  weight".to_string());
    for (i, ((&p, &cost), &q)) in points.iter().zip(&costs).zip(&primal.weights).enumerate() {
        say(
            cli.quiet,
            format!("{i}  {}  {}  {}", num(p), num(cost), num(q)),
        );
    }
    say(
        cli.quiet,
        format!(
            "y  [{}, {}, {}]",
            num(dual.dual[0]),
            num(dual.dual[1]),
            num(dual.dual[2])
        ),
    );
    say(
        cli.quiet,
        format!("primal_objective {}", num(primal.objective)),
    );
    say(cli.quiet, format!("dual_objective   {}", num(dual.objective)));
    say(cli.quiet, format!("duality_gap      {:e}", gap));

    let out = resolve_out(cli, Some(&cfg))?;
    let mut manifest = Manifest::new("inner", &bytes, built.options.seed);
    let rows: Vec<(usize, f64, f64, f64)> = points
        .iter()
        .enumerate()
        .map(|(i, &p)| (i, p, costs[i], primal.weights[i]))
        .collect();
    let path = write_atomic(&out, "worstcase.csv", &worstcase_csv(&rows))?;
    manifest.record(&path);
    manifest.write(&out)?;
    Ok(0)
}

fn cmd_check(cli: &Cli, solution_path: &Path) -> Result<u8, CliError> {
    let (bytes, cfg) = load_config(cli)?;
    let built = cfg.build(cli.seed)?;
    let text = fs::read_to_string(solution_path).map_err(|e| {
        CliError::Io(
            format!("cannot read solution file {}", solution_path.display()),
            e,
        )
    })?;
    let parsed = parse_solution(&text, built.model.physical_horizon())?;
    if parsed.n_u != built.model.dim_control() {
        return Err(CliError::Config(format!(
            "solution file has {} control components per piece, model expects {}",
            parsed.n_u,
            built.model.dim_control()
        )));
    }
    let y = parsed.y.ok_or_else(|| {
        CliError::Config("solution file has no y-block; check needs the dual vector".into())
    })?;
    let grid = parsed.grid(&built.bounds)?;
    let certificate = kkt::verify(
        &built.problem,
        &grid,
        &y,
        built.options.steps_per_piece,
    )?;
    let tolerances = KktTolerances::default();
    let passes = certificate.passes(&tolerances);

    let mut report = String::new();
    report.push_str(flow_note());
    report.push_str("\n\n");
    report.push_str(&certificate.report());
    report.push('\n');
    if let Some(stored) = parsed.objective {
        report.push_str(&format!(
            "stored objective {} vs recomputed dual value {} (file drift {:e})\n",
            num(stored),
            num(certificate.dual_value),
            (stored - certificate.dual_value).abs()
        ));
    }
    report.push_str(&gradient_spot_check(&cfg, &built, &grid, &y)?);
    report.push_str(&format!(
        "\ncertificate: {} (algebraic tolerance {}, stationarity tolerance {})\n",
        if passes { "PASS" } else { "FAIL" },
        tolerances.algebraic,
        tolerances.stationarity
    ));
    say(cli.quiet, report.trim_end().to_string());

    let out = resolve_out(cli, Some(&cfg))?;
    let mut manifest = Manifest::new("check", &bytes, built.options.seed);
    let path = write_atomic(&out, "kkt.txt", report.as_bytes())?;
    manifest.record(&path);
    manifest.write(&out)?;
    Ok(if passes { 0 } else { 2 })
}

/// Informational finite-difference vs sensitivity merit-gradient comparison
/// at the candidate point: a few control coordinates plus the first dual
/// coordinate. Coordinates at the control box boundary are skipped (a
/// central step would leave the feasible box).
fn gradient_spot_check(
    cfg: &ProblemConfig,
    built: &config::Built,
    grid: &droc_core::control::ControlGrid,
    y: &[f64; 3],
) -> Result<String, CliError> {
    let params = MeritParams {
        rho: cfg.solver.rho0,
        epsilon: cfg.solver.epsilon,
        steps_per_piece: cfg.solver.steps_per_piece,
    };
    let eval = evaluate_merit(&built.problem, grid, y, &params, true)?;
    let gradient = eval
        .gradient
        .expect("gradient requested from evaluate_merit");
    let flat = grid.flat().to_vec();
    let n = flat.len();
    let bounds = grid.bounds();
    let mut lines = String::from(
        "gradient spot check (merit, sensitivity vs central finite difference):\n",
    );
    let mut coords: Vec<usize> = vec![0, n / 2, n.saturating_sub(1)];
    coords.dedup();
    for j in coords {
        let l = j % grid.dim_control();
        let h = 1e-6 * flat[j].abs().max(1.0);
        let lo = bounds.lower()[l];
        let hi = bounds.upper()[l];
        if flat[j] - h < lo || flat[j] + h > hi {
            lines.push_str(&format!("  v[{j}]: skipped (coordinate at the box boundary)\n"));
            continue;
        }
        let mut plus = flat.clone();
        plus[j] += h;
        let mut minus = flat.clone();
        minus[j] -= h;
        let j_plus = evaluate_merit(&built.problem, &grid.with_values(plus)?, y, &params, false)?;
        let j_minus = evaluate_merit(&built.problem, &grid.with_values(minus)?, y, &params, false)?;
        let fd = (j_plus.merit - j_minus.merit) / (2.0 * h);
        let an = gradient.v[j];
        let rel = (fd - an).abs() / an.abs().max(1.0);
        lines.push_str(&format!(
            "  v[{j}]: analytic {} fd {} rel {:.3e}\n",
            num(an),
            num(fd),
            rel
        ));
    }
    let h = 1e-6 * y[0].abs().max(1.0);
    let mut y_plus = *y;
    y_plus[0] += h;
    let mut y_minus = *y;
    y_minus[0] -= h;
    let j_plus = evaluate_merit(&built.problem, grid, &y_plus, &params, false)?;
    let j_minus = evaluate_merit(&built.problem, grid, &y_minus, &params, false)?;
    let fd = (j_plus.merit - j_minus.merit) / (2.0 * h);
    let an = gradient.y[0];
    let rel = (fd - an).abs() / an.abs().max(1.0);
    lines.push_str(&format!(
        "  y[0]: analytic {} fd {} rel {:.3e}\n",
        num(an),
        num(fd),
        rel
    ));
    Ok(lines)
}

fn cmd_discretize(cli: &Cli) -> Result<u8, CliError> {
    let (bytes, cfg) = load_config(cli)?;
    let ambiguity = &cfg.ambiguity;
    let spec = AmbiguitySpec::new(
        ambiguity.p_lower,
        ambiguity.p_upper,
        ambiguity.mu,
        ambiguity.sigma,
    )?;
    let density = ambiguity.density.as_ref().ok_or_else(|| {
        CliError::Config("discretize needs an ambiguity.density section".into())
    })?;
    let evaluator = density.evaluator(&spec)?;
    let placement = ambiguity.placement.unwrap_or(Placement::Endpoints);
    let m = ambiguity.m;
    // Internal quadrature resolution per cell; ample for smooth densities.
    let quad = 64;
    let (support_m, weights_m) = discretize_density(&spec, &*evaluator, m, quad, placement)?;
    let (e1_m, e2_m) = moment_discretization_error(&spec, &support_m, &weights_m);
    let (support_2m, weights_2m) = discretize_density(&spec, &*evaluator, 2 * m, quad, placement)?;
    let (e1_2m, e2_2m) = moment_discretization_error(&spec, &support_2m, &weights_2m);

    let delta = spec.width() / m as f64;
    say(
        cli.quiet,
        format!(
            "m = {m}: e1 = {:e} (bound {:e}), e2 = {:e} (bound {:e})",
            e1_m,
            delta,
            e2_m,
            2.0 * spec.p_upper * delta
        ),
    );
    let delta2 = spec.width() / (2 * m) as f64;
    say(
        cli.quiet,
        format!(
            "m = {}: e1 = {:e} (bound {:e}), e2 = {:e} (bound {:e})",
            2 * m,
            e1_2m,
            delta2,
            e2_2m,
            2.0 * spec.p_upper * delta2
        ),
    );

    let out = resolve_out(cli, Some(&cfg))?;
    let mut manifest = Manifest::new("discretize", &bytes, cli.seed.unwrap_or(cfg.solver.seed));
    let path = write_atomic(
        &out,
        "discretization.csv",
        &discretization_csv(support_m.points(), &weights_m),
    )?;
    manifest.record(&path);
    let path = write_atomic(
        &out,
        "residuals.csv",
        &residuals_csv(&[(m, e1_m, e2_m), (2 * m, e1_2m, e2_2m)]),
    )?;
    manifest.record(&path);
    manifest.write(&out)?;
    Ok(0)
}

struct BenchRow {
    pass: bool,
    label: &'static str,
    detail: String,
}

fn cmd_bench(cli: &Cli) -> Result<u8, CliError> {
    let case = corebench::fedbatch_case();
    let steps_per_piece = 10;
    let mut rows: Vec<BenchRow> = Vec::new();

    let consistency = case.reference_consistency()?;
    rows.push(BenchRow {
        pass: consistency.max() <= 1e-3,
        label: "printed data internally consistent",
        detail: format!(
            "worst-case {:.2e}, mean {:.2e}, second moment {:.2e} (tolerance 1e-3)",
            consistency.worst_case_residual,
            consistency.mean_residual,
            consistency.second_moment_residual
        ),
    });

    let biomass = corebench::reproduce_trajectories(&case, steps_per_piece)?;
    let biomass_err = biomass
        .iter()
        .zip(&case.reference_biomass)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    rows.push(BenchRow {
        pass: biomass_err <= 2e-3,
        label: "terminal biomass reproduces the published list",
        detail: format!("max per-scenario deviation {biomass_err:.2e} (tolerance 2e-3)"),
    });

    let worst = corebench::reproduce_worst_case(&case, steps_per_piece)?;
    let support_size = worst.weights.iter().filter(|&&q| q > 1e-9).count();
    rows.push(BenchRow {
        pass: support_size <= 3,
        label: "worst-case support has at most 3 points",
        detail: format!("{support_size} points carry weight"),
    });
    let objective_err = (worst.objective - case.reference_worst_case).abs();
    rows.push(BenchRow {
        pass: objective_err <= 1e-3,
        label: "worst-case objective matches the published value",
        detail: format!(
            "re-solved optimum {} vs published {}; the published weights are \
             moment-feasible but price the published biomass below the LP \
             optimum, so an optimal solver cannot return their value",
            num(worst.objective),
            num(case.reference_worst_case)
        ),
    });
    let weight_err = worst
        .weights
        .iter()
        .zip(&case.reference_weights)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    rows.push(BenchRow {
        pass: weight_err <= 1e-3,
        label: "worst-case weights match the published distribution",
        detail: format!(
            "max component deviation {weight_err:.2} — the optimal support \
             differs from the published one (same cause as the objective row)"
        ),
    });

    let baseline = corebench::constant_control_baseline(&case, 0.01, steps_per_piece)?;
    rows.push(BenchRow {
        pass: baseline.objective > worst.objective,
        label: "constant feed 0.01 is strictly worse than the solved control",
        detail: format!(
            "baseline {} vs solved control {}",
            num(baseline.objective),
            num(worst.objective)
        ),
    });
    rows.push(BenchRow {
        pass: baseline.spread() > worst.spread(),
        label: "constant feed spreads terminal biomass more widely",
        detail: format!(
            "baseline spread {:.4} vs solved-control spread {:.4}",
            baseline.spread(),
            worst.spread()
        ),
    });

    let zero_rows = corebench::trajectory_rows(&case, &case.constant_grid(0.0)?, steps_per_piece)?;
    let final_volume = zero_rows
        .last()
        .map(|r| r.volume)
        .unwrap_or(f64::NAN);
    rows.push(BenchRow {
        pass: final_volume == case.initial_state[2],
        label: "zero feed leaves the volume untouched",
        detail: format!("V(t_f) = {} (initial {})", num(final_volume), num(case.initial_state[2])),
    });

    let out = resolve_out(cli, None)?;
    let mut manifest = Manifest::new(
        "bench",
        corebench::fedbatch_data().as_bytes(),
        cli.seed.unwrap_or(0),
    );
    let reference_rows =
        corebench::trajectory_rows(&case, &case.reference_grid()?, steps_per_piece)?;
    let path = write_atomic(
        &out,
        "trajectories_reference.csv",
        &trajectories_csv(&reference_rows),
    )?;
    manifest.record(&path);
    let constant_rows =
        corebench::trajectory_rows(&case, &case.constant_grid(0.01)?, steps_per_piece)?;
    let path = write_atomic(
        &out,
        "trajectories_constant.csv",
        &trajectories_csv(&constant_rows),
    )?;
    manifest.record(&path);
    manifest.write(&out)?;

    let failed = rows.iter().filter(|r| !r.pass).count();
    for row in &rows {
        say(
            cli.quiet,
            format!(
                "[{}] {} — {}",
                if row.pass { "PASS" } else { "FAIL" },
                row.label,
                row.detail
            ),
        );
    }
    say(
        cli.quiet,
        format!("{} passed, {} failed", rows.len() - failed, failed),
    );
    Ok(if failed == 0 { 0 } else { 2 })
}
