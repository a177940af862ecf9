//! Acceptance suite. Runs without the libtest harness so the criteria execute
//! one after another on a quiet machine (criterion 8 measures time) and each
//! prints exactly one PASS/FAIL line.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use common::{layout_from_codes, random_layout, random_q, FIG3_CODES};
use hyperarm_core::bench::{
    bench_classic, bench_state, fit_loglog_slope, median, run_bench, BenchOptions,
};
use hyperarm_core::ik::{
    classic_finite_difference_jacobian, classic_jacobian_at, dls_velocity,
    max_relative_column_error, reduced_jacobian_at,
};
use hyperarm_core::meta::state_count;
use hyperarm_core::{
    body_transform_closed, body_transform_iterative, chord_length, classic_forward, count_dofs,
    damped_pseudo_inverse, expand_configuration, finite_difference_jacobian, halving_step,
    reduced_forward, restructure, solve_to_pose, solve_with_escalation, ArmLayout, ControllerState,
    FullConfiguration, LinkMode, SectorDecomposition, SolveOptions, SolveStatus, SolverSettings,
    TargetMode,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for n in [4, 16, 64, 256] {
        for _ in 0..100 {
            let d = rng.random_range(0.2..2.0);
            let layout = random_layout(&mut rng, n, d);
            let decomp = SectorDecomposition::new(&layout);
            if decomp.num_vars() == 0 {
                continue;
            }
            let q = random_q(&mut rng, &decomp, 1.5, 1.0);
            let reduced = reduced_forward(&decomp, &layout, &q).unwrap().end_effector;
            let full = expand_configuration(&decomp, &layout, &q).unwrap();
            let classic = classic_forward(&layout, &full).unwrap().end_effector;
            worst = worst.max(reduced.max_abs_diff(&classic));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-9 && secs <= 60.0,
        format!("max |reduced - classic| = {worst:.2e} (<= 1e-9), {secs:.2} s (<= 60 s)"),
    )
}

/// `d * sum_j (sin j theta, cos j theta)`: tip of `u` equal bends in the y-z plane.
fn planar_tip(theta: f64, u: usize, d: f64) -> (f64, f64) {
    (1..=u).fold((0.0, 0.0), |(y, z), j| {
        let a = j as f64 * theta;
        (y + d * a.sin(), z + d * a.cos())
    })
}

fn closed_form_body() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_transform = 0.0f64;
    let mut worst_chord = 0.0f64;
    let mut fallbacks = 0;
    for u in 1..=50usize {
        let limit = if u == 1 {
            std::f64::consts::PI
        } else {
            2.0 * std::f64::consts::PI / (u - 1) as f64
        };
        for _ in 0..50 {
            let theta = rng.random_range(-limit..limit);
            let closed = body_transform_closed(theta, u, 1.0).unwrap();
            fallbacks += closed.fallback as usize;
            let iterative = body_transform_iterative(theta, u, 1.0).unwrap();
            worst_transform = worst_transform.max(closed.transform.max_abs_diff(&iterative));

            let chord = chord_length(theta, u, 1.0).unwrap();
            let (y, z) = planar_tip(theta, u, 1.0);
            let direction = (u as f64 + 1.0) * theta / 2.0;
            let along = y * direction.sin() + z * direction.cos();
            let length_gap = ((y * y + z * z).sqrt() - chord.abs()).abs();
            worst_chord = worst_chord.max((along - chord).abs()).max(length_gap);
        }
    }
    check(
        worst_transform <= 1e-9 && worst_chord <= 1e-12 && fallbacks == 0,
        format!(
            "closed vs iterative {worst_transform:.2e} (<= 1e-9), chord vs planar sum {worst_chord:.2e} (<= 1e-12), fallbacks {fallbacks}"
        ),
    )
}

fn jacobian_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_classic = 0.0f64;
    let mut worst_reduced = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=64);
        let layout = random_layout(&mut rng, n, 1.0);
        let decomp = SectorDecomposition::new(&layout);
        if decomp.num_vars() == 0 {
            continue;
        }
        let q = random_q(&mut rng, &decomp, 1.5, 0.5);
        let analytic = reduced_jacobian_at(&decomp, &layout, &q).unwrap();
        let fd = finite_difference_jacobian(&decomp, &layout, &q, 1e-6).unwrap();
        worst_reduced = worst_reduced.max(max_relative_column_error(&analytic.matrix, &fd.matrix));

        let full =
            FullConfiguration::new((0..2 * n).map(|_| rng.random_range(-1.5..1.5)).collect())
                .unwrap();
        let classic_layout = layout.fully_articulated();
        let analytic = classic_jacobian_at(&classic_layout, &full).unwrap();
        let fd = classic_finite_difference_jacobian(&classic_layout, &full, 1e-6).unwrap();
        worst_classic = worst_classic.max(max_relative_column_error(&analytic.matrix, &fd.matrix));
    }
    check(
        worst_classic <= 1e-5 && worst_reduced <= 1e-5,
        format!("max relative column error: classic {worst_classic:.2e}, reduced {worst_reduced:.2e} (<= 1e-5)"),
    )
}

fn ik_convergence() -> Outcome {
    let n = 8;
    let layout = ArmLayout::all_heads(n, 1.0).unwrap();
    let decomp = SectorDecomposition::new(&layout);
    let settings = SolverSettings::for_arm(n, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut converged = 0;
    let mut times = Vec::new();
    let mut worst_position = 0.0f64;
    for _ in 0..100 {
        let goal = random_q(&mut rng, &decomp, 1.0, 0.0);
        let target = reduced_forward(&decomp, &layout, &goal)
            .unwrap()
            .end_effector;
        let start = Instant::now();
        let report = solve_to_pose(
            &decomp,
            &layout,
            &hyperarm_core::ReducedConfiguration::zeros(decomp.num_vars()),
            &target,
            &settings,
            &SolveOptions::default(),
        )
        .unwrap();
        times.push(start.elapsed().as_secs_f64());
        if report.status == SolveStatus::Converged {
            converged += 1;
            worst_position = worst_position.max(report.position_error);
        }
    }
    let t = median(&times);
    check(
        converged >= 95 && t <= 1.0,
        format!(
            "{converged}/100 converged (>= 95), worst converged position error {worst_position:.2e}, median solve {:.3} ms (<= 1 s)",
            t * 1e3
        ),
    )
}

fn fig3_reproduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let layout = layout_from_codes(&mut rng, &FIG3_CODES, 1.0);
    let decomp = SectorDecomposition::new(&layout);
    let counts = count_dofs(&decomp);
    let damaged = decomp.damaged().len();
    let sectors = decomp.sectors().len();
    check(
        damaged == 4 && sectors == 5 && counts.mobile_joints == 17 && counts.control_vars == 12,
        format!(
            "damaged {damaged} (4), sectors {sectors} (5), mobile joints {} (17), control variables {} (12)",
            counts.mobile_joints, counts.control_vars
        ),
    )
}

fn meta_controller() -> Outcome {
    let n = 16;
    let mut states = vec![ControllerState::new(n).unwrap()];
    while let Ok(next) = halving_step(states.last().unwrap()) {
        states.push(next);
    }
    let ks: Vec<usize> = states.iter().map(|s| s.max_body()).collect();
    let one_based = |s: &ControllerState| s.heads().iter().map(|h| h + 1).collect::<Vec<_>>();
    let monotone = states.windows(2).all(|w| {
        let next = w[1].heads();
        w[0].heads().iter().all(|h| next.contains(h))
    });
    let final_all = states
        .last()
        .unwrap()
        .modes()
        .iter()
        .all(|&m| m == LinkMode::Head);
    let structure = ks == [16, 8, 4, 2, 1]
        && states.len() == state_count(n)
        && monotone
        && one_based(&states[0]) == [1]
        && one_based(&states[1]) == [1, 9]
        && final_all;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let a = i % (states.len() - 1);
        let layout = states[a].layout(1.0).unwrap();
        let decomp = SectorDecomposition::new(&layout);
        let q = random_q(&mut rng, &decomp, 1.0, 0.4);
        let before = reduced_forward(&decomp, &layout, &q).unwrap().end_effector;
        let physical = expand_configuration(&decomp, &layout, &q).unwrap();
        let next_layout = states[a + 1].layout(1.0).unwrap();
        let (next_decomp, next_q) = restructure(&decomp, &layout, &physical, &next_layout).unwrap();
        let after = reduced_forward(&next_decomp, &next_layout, &next_q)
            .unwrap()
            .end_effector;
        worst = worst.max(before.max_abs_diff(&after));
    }
    check(
        structure && worst <= 1e-12,
        format!(
            "k sequence {ks:?}, heads state0 {:?} state1 {:?}, monotone {monotone}, final all heads {final_all}, restructure pose change {worst:.2e} (<= 1e-12)",
            one_based(&states[0]),
            one_based(&states[1])
        ),
    )
}

fn damage_tolerance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = FIG3_CODES.len();
    let settings = SolverSettings::for_arm(n, 1.0);
    let options = SolveOptions {
        mode: TargetMode::PositionOnly,
        ..SolveOptions::default()
    };
    let mut converged = 0;
    let mut frozen_intact = true;
    for _ in 0..50 {
        let layout = layout_from_codes(&mut rng, &FIG3_CODES, 1.0);
        let decomp = SectorDecomposition::new(&layout);
        let goal = random_q(&mut rng, &decomp, 1.0, 0.3);
        let target = reduced_forward(&decomp, &layout, &goal)
            .unwrap()
            .end_effector;
        let start = random_q(&mut rng, &decomp, 0.3, 0.1);
        let physical = expand_configuration(&decomp, &layout, &start).unwrap();
        let frozen_before = layout.frozen().clone();
        let state = ControllerState::from_layout(&layout);
        let outcome =
            solve_with_escalation(state, 1.0, &physical, &target, &settings, &options).unwrap();
        if outcome.converged() {
            converged += 1;
        }
        let after = outcome.physical_configuration().unwrap();
        frozen_intact &= outcome.layout.frozen() == &frozen_before;
        for (&link, a) in &frozen_before {
            frozen_intact &= after.phi(link).to_bits() == a.phi.to_bits()
                && after.theta(link).to_bits() == a.theta.to_bits();
        }
    }
    check(
        converged >= 45 && frozen_intact,
        format!("{converged}/50 converged (>= 45), frozen angles bit-identical: {frozen_intact}"),
    )
}

fn scaling() -> Outcome {
    let start = Instant::now();
    let mut opts = BenchOptions::new(2000);
    opts.repeats = 5;
    let classic = bench_classic(&opts, false).map_err(|e| e.to_string())?;
    let state0 = bench_state(&opts, 0).map_err(|e| e.to_string())?;
    let ratio = state0.t_step_s / classic.t_step_s;

    let mut dofs = Vec::new();
    let mut times = Vec::new();
    for n in [250, 500, 1000, 2000] {
        let mut o = BenchOptions::new(n);
        o.repeats = 5;
        let r = bench_classic(&o, true).map_err(|e| e.to_string())?;
        dofs.push(r.control_vars as f64);
        times.push(r.t_step_s);
    }
    let slope = fit_loglog_slope(&dofs, &times).unwrap_or(f64::NAN);

    // Full run over every state plus both classic baselines.
    let mut full = BenchOptions::new(2000);
    full.naive = true;
    let report = run_bench(&full).map_err(|e| e.to_string())?;
    let skipped = report.records.iter().filter(|r| r.skipped).count();
    let secs = start.elapsed().as_secs_f64();
    check(
        ratio <= 0.05 && (1.7..=2.5).contains(&slope) && skipped == 0 && secs <= 600.0,
        format!(
            "state 0 / classic step time at N=2000 = {ratio:.4} (<= 0.05), naive log-log slope {slope:.3} (in [1.7, 2.5]), {} records, {secs:.1} s (<= 600 s)",
            report.records.len()
        ),
    )
}

fn dls_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_residual = 0.0f64;
    let mut ratios = Vec::new();
    for _ in 0..20 {
        let m = rng.random_range(7..=24);
        let j = DMatrix::from_fn(6, m, |_, _| rng.random_range(-1.0..1.0));
        let e = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let k = 0.1;
        let qdot = dls_velocity(&j, k, &e).unwrap();
        let lhs = (j.transpose() * &j + DMatrix::identity(m, m) * (k * k)) * &qdot;
        let rhs = j.transpose() * &e;
        worst_residual = worst_residual.max((lhs - rhs).amax());

        // J J* -> I as k -> 0, and J* e -> J+ e, both at rate k^2.
        let identity = DMatrix::<f64>::identity(6, 6);
        let exact = j.clone().svd(true, true).pseudo_inverse(1e-14).unwrap() * &e;
        let gap_identity = |k: f64| (&j * damped_pseudo_inverse(&j, k).unwrap() - &identity).norm();
        let gap_solution = |k: f64| (damped_pseudo_inverse(&j, k).unwrap() * &e - &exact).norm();
        ratios.push(gap_identity(1e-2) / gap_identity(1e-3));
        ratios.push(gap_solution(1e-2) / gap_solution(1e-3));
    }
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    check(
        worst_residual <= 1e-10 && lo >= 50.0 && hi <= 200.0,
        format!(
            "normal-equation residual {worst_residual:.2e} (<= 1e-10), error ratio k=1e-2 / k=1e-3 in [{lo:.1}, {hi:.1}] (within [50, 200])"
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (
            "reduced FK equals classic FK on random layouts",
            oracle_equivalence,
        ),
        ("closed-form body and chord length", closed_form_body),
        (
            "Jacobians match central finite differences",
            jacobian_correctness,
        ),
        ("IK convergence, 8-link all-head arm", ik_convergence),
        ("sixteen-link damaged layout counts", fig3_reproduction),
        (
            "halving controller states and restructuring",
            meta_controller,
        ),
        ("damage tolerance, position-only IK", damage_tolerance),
        ("per-step scaling at 2000 links", scaling),
        ("damped least squares properties", dls_properties),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let result =
            catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".to_string()));
        match result {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {}: FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failures} failed",
        criteria.len() - failures
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
