//! Acceptance gate: one integration test per acceptance criterion, named
//! `criterion_N_*` so the harness emits exactly one pass/fail line for each.
//! Passing tests additionally print a one-line summary (visible with
//! `--nocapture`); failing tests explain the discrepancy in the panic text.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use droc_core::ambiguity::{
    build_moment_lp, characteristic_grid, discretize_density, moment_discretization_error,
    AmbiguitySpec, Density, DiscreteSupport, Placement,
};
use droc_core::bench::{fedbatch_case, reproduce_trajectories};
use droc_core::control::{ControlBox, ControlGrid};
use droc_core::dynamics::toy;
use droc_core::integrator::{cost_gradient, integrate, integrate_with_sensitivities};
use droc_core::kkt::{costate_piece_gradient, integrate_costates, verify, KktTolerances};
use droc_core::lp::{solve_dual_isp, solve_isp, LpStatus};
use droc_core::outer::{
    evaluate_merit, inner_worst_case, solve, MeritParams, RobustControlProblem, SolverOptions,
};

/// Criterion 1 — trajectory-stack reproduction: the published feed profile
/// must reproduce the published terminal biomass of all ten scenarios within
/// print precision plus integration slack, in under a second.
#[test]
fn criterion_1_trajectory_reproduction() {
    let started = Instant::now();
    let case = fedbatch_case();
    let biomass = reproduce_trajectories(&case, 10).expect("scenario integration");
    let mut worst = 0.0f64;
    for (i, (&computed, &printed)) in biomass.iter().zip(&case.reference_biomass).enumerate() {
        let dev = (computed - printed).abs();
        worst = worst.max(dev);
        assert!(
            dev <= 2e-3,
            "criterion 1 FAIL — scenario {i}: computed biomass {computed:.6} vs published \
             {printed:.4} (|diff| = {dev:.2e} > 2e-3)"
        );
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 1.0,
        "criterion 1 FAIL — reproduction took {elapsed:?} (budget 1 s)"
    );
    println!(
        "criterion 1 PASS — ten scenarios within {:.1e} of the published biomass in {:?}",
        worst, elapsed
    );
}

/// Criterion 2 — LP-stack reproduction from printed numbers alone: solving
/// the inner problem on the published biomass list must return the published
/// worst-case weights and objective, with zero duality gap.
///
/// The duality-gap half holds. The reproduction half cannot: the published
/// weights are moment-feasible but not optimal for the published costs — the
/// LP optimum on those exact numbers is -4.110607024793387 on support points
/// {1, 6, 7} (1-based), strictly better (as a maximization) than the
/// published -4.1217 on {4, 5, 10}. Every correct solver must therefore
/// disagree with the published pair, and this test records that disagreement
/// by asserting the published values faithfully and failing.
#[test]
fn criterion_2_printed_worst_case_reproduction() {
    let spec = AmbiguitySpec::new(1.76, 2.64, 2.2, 0.2).expect("moments");
    let support = characteristic_grid(&spec, 10, Placement::Endpoints).expect("support");
    let case = fedbatch_case();
    let costs: Vec<f64> = case.reference_biomass.iter().map(|&x| -x).collect();
    let data = build_moment_lp(&spec, &support, costs).expect("moment LP");

    let primal = solve_isp(&data).expect("primal solve");
    assert_eq!(primal.status, LpStatus::Optimal);
    let dual = solve_dual_isp(&data).expect("dual solve");
    let gap = (primal.objective - dual.objective).abs();
    assert!(
        gap <= 1e-8,
        "criterion 2 FAIL — duality gap {gap:.2e} > 1e-8"
    );

    let positive: Vec<(usize, f64)> = primal
        .weights
        .iter()
        .enumerate()
        .filter(|(_, &q)| q > 1e-9)
        .map(|(i, &q)| (i + 1, q))
        .collect();
    assert!(
        (primal.objective - case.reference_worst_case).abs() <= 1e-3,
        "criterion 2 FAIL — the LP optimum on the published biomass list is \
         {:.15} on support points {:?} (1-based), not the published {} on {{4, 5, 10}}; \
         the published weights are moment-feasible (they price the list at -4.1216) but \
         suboptimal for their own printed costs, so no correct solver can return them",
        primal.objective,
        positive.iter().map(|&(i, _)| i).collect::<Vec<_>>(),
        case.reference_worst_case,
    );
    for (i, (&q, &q_ref)) in primal
        .weights
        .iter()
        .zip(&case.reference_weights)
        .enumerate()
    {
        assert!(
            (q - q_ref).abs() <= 1e-3,
            "criterion 2 FAIL — weight {i}: computed {q:.6} vs published {q_ref}"
        );
    }
    println!(
        "criterion 2 PASS — published worst case reproduced (gap {:.1e})",
        gap
    );
}

/// Criterion 3 — internal consistency of the published numbers, no
/// simulation: the published weights must price the published biomass at the
/// published worst case and match both prescribed moments.
#[test]
fn criterion_3_printed_data_consistency() {
    let case = fedbatch_case();
    let report = case.reference_consistency().expect("consistency report");
    assert!(
        report.worst_case_residual <= 1e-3,
        "criterion 3 FAIL — priced cost off by {:.2e}",
        report.worst_case_residual
    );
    assert!(
        report.mean_residual <= 1e-3,
        "criterion 3 FAIL — mean off by {:.2e}",
        report.mean_residual
    );
    assert!(
        report.second_moment_residual <= 1e-3,
        "criterion 3 FAIL — second moment off by {:.2e}",
        report.second_moment_residual
    );
    println!(
        "criterion 3 PASS — identities hold to {:.1e}",
        report.max()
    );
}

/// Criterion 4 — end-to-end solve quality on the benchmark: multistart 200
/// with a fixed seed must reach a robust objective of at least -4.0, and the
/// re-solved worst case at the returned control must sit within 0.15 of the
/// dual objective. Budget: five minutes.
#[test]
fn criterion_4_full_solve_quality() {
    let started = Instant::now();
    let case = fedbatch_case();
    let problem = case.problem().expect("problem");
    let initial = case.constant_grid(0.01).expect("initial control");
    let options = SolverOptions {
        multistart: 200,
        seed: 42,
        ..SolverOptions::default()
    };

    let report = solve(&problem, &initial, &options).expect("solve");
    let elapsed = started.elapsed();

    assert!(
        report.objective <= -4.0,
        "criterion 4 FAIL — objective {:.6} > -4.0 (termination {:?})",
        report.objective,
        report.termination
    );
    let (_, lp) = inner_worst_case(&problem, &report.control, options.steps_per_piece)
        .expect("worst case at the returned control");
    let gap = (report.objective - lp.objective).abs();
    assert!(
        gap <= 0.15,
        "criterion 4 FAIL — |dual objective - worst case| = {gap:.4} > 0.15 \
         ({:.6} vs {:.6})",
        report.objective,
        lp.objective
    );
    assert!(
        elapsed.as_secs_f64() < 300.0,
        "criterion 4 FAIL — solve took {elapsed:?} (budget 5 min)"
    );
    println!(
        "criterion 4 PASS — objective {:.6}, worst case {:.6}, gap {:.4}, {:?} after {:?} \
         ({} rounds, {} inner steps)",
        report.objective,
        lp.objective,
        gap,
        report.termination,
        elapsed,
        report.outer_rounds,
        report.inner_iterations
    );
}

/// Criterion 5 — gradient correctness, both derivations: (a) the
/// sensitivity-based merit gradient against central finite differences at 20
/// random points, and (b) the costate-based piece gradients against the
/// forward-sensitivity gradients, scenario by scenario.
#[test]
fn criterion_5_gradient_correctness() {
    let case = fedbatch_case();
    let problem = case.problem().expect("problem");
    let template = case.constant_grid(0.01).expect("template");
    let bounds = template.bounds().clone();
    let params = MeritParams {
        rho: 50.0,
        epsilon: 1e-3,
        steps_per_piece: 10,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(20240823);
    let dim = template.dim_flat();
    let mut worst_rel = 0.0f64;

    for point in 0..20 {
        // Controls strictly inside the box keep the FD stencil feasible; the
        // dual vector is sampled near the LP dual, redrawn if any smoothed
        // residual sits within 5e-4 of a C1 joint (|g_i| = epsilon), where a
        // finite-difference stencil would straddle the curvature jump.
        let v: Vec<f64> = (0..dim)
            .map(|j| {
                let lo = bounds.lower()[j % bounds.dim()] + 1e-5;
                let hi = bounds.upper()[j % bounds.dim()] - 1e-5;
                rng.gen_range(lo..hi)
            })
            .collect();
        let grid = template.with_values(v).expect("in-box control");
        let (costs, lp) = inner_worst_case(&problem, &grid, params.steps_per_piece)
            .expect("inner LP");
        let mut y = [0.0f64; 3];
        let mut ok = false;
        for _ in 0..100 {
            for (slot, base) in y.iter_mut().zip(lp.dual) {
                *slot = base + rng.gen_range(-0.3..0.3);
            }
            let clear = costs
                .iter()
                .zip(problem.support.points())
                .map(|(&h, &p)| h - (y[0] + y[1] * p + y[2] * p * p))
                .all(|g| (g.abs() - params.epsilon).abs() > 5e-4);
            if clear {
                ok = true;
                break;
            }
        }
        assert!(ok, "criterion 5 FAIL — could not sample away from the C1 joints");

        let eval = evaluate_merit(&problem, &grid, &y, &params, true).expect("merit");
        let grad = eval.gradient.as_ref().expect("gradient requested");

        let merit_at = |v: &[f64], y: &[f64; 3]| -> f64 {
            let g = template.with_values(v.to_vec()).expect("in-box control");
            evaluate_merit(&problem, &g, y, &params, false)
                .expect("merit")
                .merit
        };

        let h = 1e-6;
        for j in 0..dim {
            let mut vp = grid.flat().to_vec();
            let mut vm = grid.flat().to_vec();
            vp[j] += h;
            vm[j] -= h;
            let fd = (merit_at(&vp, &y) - merit_at(&vm, &y)) / (2.0 * h);
            let rel = (fd - grad.v[j]).abs() / grad.v[j].abs().max(1.0);
            worst_rel = worst_rel.max(rel);
            assert!(
                rel <= 1e-4,
                "criterion 5 FAIL — point {point}, control coordinate {j}: \
                 FD {fd:.8e} vs sensitivity {:.8e} (rel {rel:.2e})",
                grad.v[j]
            );
        }
        for c in 0..3 {
            let mut yp = y;
            let mut ym = y;
            yp[c] += h;
            ym[c] -= h;
            let fd = (merit_at(grid.flat(), &yp) - merit_at(grid.flat(), &ym)) / (2.0 * h);
            let rel = (fd - grad.y[c]).abs() / grad.y[c].abs().max(1.0);
            worst_rel = worst_rel.max(rel);
            assert!(
                rel <= 1e-4,
                "criterion 5 FAIL — point {point}, dual coordinate {c}: \
                 FD {fd:.8e} vs sensitivity {:.8e} (rel {rel:.2e})",
                grad.y[c]
            );
        }
    }

    // (b) Costate piece gradients against forward-sensitivity gradients for
    // every scenario at the published control. The backward pass interpolates
    // the state linearly (second order), so the comparison runs on a finer
    // mesh than the solver default to let both derivations converge.
    let grid = case.reference_grid().expect("reference control");
    let model = case.model().expect("model");
    let support = case.support().expect("support");
    let spp = 80;
    let mut worst_adj = 0.0f64;
    for &p in support.points() {
        let with_sens =
            integrate_with_sensitivities(&model, &grid, p, spp).expect("sensitivities");
        let forward = cost_gradient(&model, &with_sens).expect("forward gradient");
        let traj = integrate(&model, &grid, p, spp).expect("states");
        let lam = integrate_costates(&model, &grid, 1.0, &traj).expect("costates");
        let adjoint = costate_piece_gradient(&model, &grid, &traj, &lam).expect("adjoint");
        let scale = forward.iter().fold(1.0f64, |m, &g| m.max(g.abs()));
        for (k, (&f, &a)) in forward.iter().zip(&adjoint).enumerate() {
            let rel = (f - a).abs() / scale;
            worst_adj = worst_adj.max(rel);
            assert!(
                rel <= 1e-5,
                "criterion 5 FAIL — scenario p = {p}, piece {k}: forward {f:.8e} vs \
                 costate {a:.8e} (rel {rel:.2e})"
            );
        }
    }
    println!(
        "criterion 5 PASS — FD agreement {:.1e} over 20 points; adjoint agreement {:.1e} \
         over 10 scenarios",
        worst_rel, worst_adj
    );
}

/// Criterion 6 — density-discretization error bounds for uniform and
/// truncated-normal densities at m in {10, 20, 40, 80}: first-moment error
/// at most the cell width, second-moment error at most twice the upper
/// endpoint times the cell width, and first-moment error at least halving
/// when the cell count doubles (above rounding noise).
#[test]
fn criterion_6_density_discretization_bounds() {
    // Geometry interval of the benchmark; the moment parameters are replaced
    // per density below because the error is measured against the density's
    // own moments.
    let (lower, upper) = (1.76, 2.64);
    // Frozen reference moments: exact uniform values and high-resolution
    // quadrature for the truncated normal (mean 2.0, sigma 0.3) on the
    // interval.
    let cases = [
        (
            "uniform",
            Density::Uniform,
            2.2,
            4.84 + 0.88 * 0.88 / 12.0,
        ),
        (
            "truncnorm",
            Density::Truncnorm {
                mean: 2.0,
                sigma: 0.3,
            },
            2.096684832035568,
            4.439513077813263,
        ),
    ];
    const NOISE_FLOOR: f64 = 1e-12;

    for (name, density, ref_mean, ref_second) in cases {
        let ref_sigma = f64::sqrt(ref_second - ref_mean * ref_mean);
        let spec =
            AmbiguitySpec::new(lower, upper, ref_mean, ref_sigma).expect("reference moments");
        let evaluator = density.evaluator(&spec).expect("density evaluator");
        let mut previous: Option<f64> = None;
        for m in [10usize, 20, 40, 80] {
            let (support, weights) =
                discretize_density(&spec, &evaluator, m, 16, Placement::Midpoints)
                    .expect("discretization");
            let (e1, e2) = moment_discretization_error(&spec, &support, &weights);
            let delta = spec.width() / m as f64;
            assert!(
                e1 <= delta,
                "criterion 6 FAIL — {name}, m = {m}: e1 = {e1:.3e} exceeds cell width {delta:.3e}"
            );
            assert!(
                e2 <= 2.0 * upper * delta,
                "criterion 6 FAIL — {name}, m = {m}: e2 = {e2:.3e} exceeds 2 p_u dp = {:.3e}",
                2.0 * upper * delta
            );
            if let Some(prev) = previous {
                // Halving is only checkable above float noise; the uniform
                // density's midpoint mean is exact, so both errors sit at
                // rounding level there.
                if prev > NOISE_FLOOR {
                    assert!(
                        e1 <= 0.5 * prev,
                        "criterion 6 FAIL — {name}, m = {m}: e1 = {e1:.3e} did not halve \
                         from {prev:.3e}"
                    );
                }
            }
            previous = Some(e1);
        }
    }
    println!("criterion 6 PASS — both densities inside the bounds at m = 10, 20, 40, 80");
}

/// Criterion 7 — LP property suite: 1000 random feasible instances with up
/// to 50 support points; every optimum must close the duality gap, satisfy
/// complementary slackness, and use at most 3 support points.
#[test]
fn criterion_7_lp_property_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(424242);
    for instance in 0..1000 {
        let m = rng.gen_range(1..=50);
        // Strictly increasing points with a guaranteed gap.
        let mut points = Vec::with_capacity(m);
        let mut p = rng.gen_range(0.5..1.5);
        for _ in 0..m {
            points.push(p);
            p += rng.gen_range(1e-3..0.2);
        }
        // Moments generated from an actual distribution on the points, so
        // the instance is feasible by construction.
        let mut q: Vec<f64> = (0..m).map(|_| -rng.gen_range(0.0f64..1.0).ln()).collect();
        let total: f64 = q.iter().sum();
        q.iter_mut().for_each(|w| *w /= total);
        let mean: f64 = q.iter().zip(&points).map(|(&w, &p)| w * p).sum();
        let second: f64 = q.iter().zip(&points).map(|(&w, &p)| w * p * p).sum();
        let sigma = (second - mean * mean).max(0.0).sqrt();
        let spec = AmbiguitySpec::new(
            points[0] - 0.1,
            points[m - 1] + 0.1,
            mean,
            sigma,
        )
        .expect("feasible moments");
        let support = DiscreteSupport::new(points).expect("support");
        let costs: Vec<f64> = (0..m).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let data = build_moment_lp(&spec, &support, costs).expect("LP data");

        let sol = solve_isp(&data).expect("solve");
        assert_eq!(
            sol.status,
            LpStatus::Optimal,
            "criterion 7 FAIL — instance {instance} (m = {m}) not solved"
        );
        let y = sol.dual;
        let dual_value = y[0] * data.b[0] + y[1] * data.b[1] + y[2] * data.b[2];
        let gap = (sol.objective - dual_value).abs();
        assert!(
            gap <= 1e-8,
            "criterion 7 FAIL — instance {instance}: duality gap {gap:.2e}"
        );
        let mut nonzeros = 0;
        for (i, (&q, col)) in sol.weights.iter().zip(&data.columns).enumerate() {
            if q > 1e-9 {
                nonzeros += 1;
            }
            let slack = y[0] * col[0] + y[1] * col[1] + y[2] * col[2] - data.costs[i];
            let compl = (q * slack).abs();
            assert!(
                compl <= 1e-8,
                "criterion 7 FAIL — instance {instance}, point {i}: complementarity {compl:.2e}"
            );
        }
        assert!(
            nonzeros <= 3,
            "criterion 7 FAIL — instance {instance}: {nonzeros} support points in the optimum"
        );
    }
    println!("criterion 7 PASS — 1000 random instances: gap, slackness, and support size hold");
}

/// Criterion 8 — integrator order: the terminal-error ratio under step
/// halving on the scalar exponential must sit in the fourth-order window
/// [12, 20], and the volume equation (state-independent, control-affine) must
/// integrate exactly.
#[test]
fn criterion_8_integrator_order() {
    let model = toy::Exponential::new(1.0);
    let bounds = ControlBox::uniform(1, 0.0, 1.0).expect("box");
    let grid = ControlGrid::uniform(1, vec![0.0], bounds).expect("grid");
    let exact = 1.0f64.exp();
    let error_at = |spp: usize| -> f64 {
        let traj = integrate(&model, &grid, 1.0, spp).expect("integrate");
        (traj.terminal_state()[0] - exact).abs()
    };
    let coarse = error_at(4);
    let fine = error_at(8);
    let ratio = coarse / fine;
    assert!(
        (12.0..=20.0).contains(&ratio),
        "criterion 8 FAIL — error ratio {ratio:.2} outside [12, 20] \
         (coarse {coarse:.3e}, fine {fine:.3e})"
    );

    // Volume under the published feed profile: dV/dt = u makes every RK4
    // stage derivative identical, so the quadrature is exact and only
    // rounding over the 250 steps remains.
    let case = fedbatch_case();
    let fb = case.model().expect("model");
    let ref_grid = case.reference_grid().expect("reference control");
    let traj = integrate(&fb, &ref_grid, 2.2, 10).expect("integrate");
    let expected: f64 = 3.0 + case.reference_control.iter().sum::<f64>();
    let volume = traj.terminal_state()[2];
    assert!(
        (volume - expected).abs() <= 1e-12,
        "criterion 8 FAIL — V(1) = {volume:.15} vs exact {expected:.15}"
    );
    println!(
        "criterion 8 PASS — order ratio {ratio:.2}; volume exact to {:.1e}",
        (volume - expected).abs()
    );
}

/// Criterion 9 — certificate behavior on closed-form problems: both toy
/// optima certify with every residual at most 1e-5, and a 0.1 perturbation
/// of the first dual component is caught by the complementarity residual.
#[test]
fn criterion_9_kkt_toy_certificates() {
    let spec = AmbiguitySpec::new(1.76, 2.64, 2.2, 0.2).expect("moments");
    let support = DiscreteSupport::new(vec![1.8, 2.2, 2.6]).expect("support");

    // Zero dynamics: h = 0 everywhere, optimum is any point; y = 0 closes
    // every condition exactly.
    let zero = RobustControlProblem::new(
        Arc::new(toy::Zero::new(1.0)),
        spec,
        support.clone(),
    )
    .expect("problem");
    let bounds = ControlBox::uniform(1, -1.0, 1.0).expect("box");
    let grid = ControlGrid::uniform(3, vec![0.2; 3], bounds.clone()).expect("grid");
    let cert = verify(&zero, &grid, &[0.0, 0.0, 0.0], 8).expect("certificate");
    for (value, name) in [
        (cert.moment_residual, "moment"),
        (cert.complementarity_residual, "complementarity"),
        (cert.costate_terminal_residual, "costate terminal"),
        (cert.stationarity_residual, "stationarity"),
        (cert.raw_stationarity_residual, "raw stationarity"),
        (cert.constraint_violation, "constraint violation"),
    ] {
        assert!(
            value <= 1e-5,
            "criterion 9 FAIL — zero dynamics: {name} residual {value:.2e} > 1e-5"
        );
    }

    // Scalar toy at its interior optimum: x(1) = 0 zeroes the terminal
    // gradient, hence every costate and stationarity integral.
    let quad = RobustControlProblem::new(
        Arc::new(toy::QuadraticTarget::new(0.5)),
        spec,
        support,
    )
    .expect("problem");
    let optimum = ControlGrid::uniform(4, vec![-0.5; 4], bounds).expect("grid");
    let cert = verify(&quad, &optimum, &[0.0, 0.0, 0.0], 10).expect("certificate");
    for (value, name) in [
        (cert.moment_residual, "moment"),
        (cert.complementarity_residual, "complementarity"),
        (cert.costate_terminal_residual, "costate terminal"),
        (cert.stationarity_residual, "stationarity"),
        (cert.raw_stationarity_residual, "raw stationarity"),
        (cert.constraint_violation, "constraint violation"),
    ] {
        assert!(
            value <= 1e-5,
            "criterion 9 FAIL — scalar toy: {name} residual {value:.2e} > 1e-5"
        );
    }
    assert!(cert.passes(&KktTolerances::default()));

    // Perturb the first dual component by 0.1: complementarity must flag it.
    let perturbed = verify(&quad, &optimum, &[0.1, 0.0, 0.0], 10).expect("certificate");
    assert!(
        perturbed.complementarity_residual > 1e-5,
        "criterion 9 FAIL — perturbed dual went unnoticed (complementarity {:.2e})",
        perturbed.complementarity_residual
    );
    assert!(!perturbed.passes(&KktTolerances::default()));
    println!(
        "criterion 9 PASS — toy certificates exact; perturbation raises complementarity to {:.2e}",
        perturbed.complementarity_residual
    );
}
