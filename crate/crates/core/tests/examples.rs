use std::f64::consts::{PI, TAU};

use ckn_core::criteria::{
    lemma41_delta, prop1_verdict, prop2_limsup, schedule_entry, singular_candidates, weighted_data_norm,
    ParabolicCylinder, ScheduleParams, SpaceTimePoint,
};
use ckn_core::grid::{magnitude_sq, VectorLattice};
use ckn_core::initial::{curl_bump, shear_layer, taylor_green};
use ckn_core::mollifier::{mollify, MollifierSchedule};
use ckn_core::solver::{
    local_energy_residual, strong_energy_residual, Nonlinearity, Solver, SolverConfig, TestFunctionSpec, Trajectory,
};
use ckn_core::weighted::{good_sets, weighted_budget, Ball};
use ckn_core::TorusGrid;

fn grid(n: usize) -> TorusGrid {
    TorusGrid::new(n, TAU).unwrap()
}

fn solve(grid: TorusGrid, dt: f64, t_end: f64, u0: &VectorLattice) -> Trajectory {
    Solver::new(grid, SolverConfig::new(dt, t_end))
        .unwrap()
        .run(u0)
        .unwrap()
        .into_result()
        .unwrap()
}

fn add(a: &VectorLattice, b: &VectorLattice) -> VectorLattice {
    std::array::from_fn(|c| a[c].iter().zip(&b[c]).map(|(x, y)| x + y).collect())
}

#[test]
fn small_taylor_green_follows_linear_decay() {
    let g = grid(16);
    let amp = 1e-3;
    let traj = solve(g, 2e-3, 0.1, &taylor_green(&g, amp));
    let mut worst = 0.0f64;
    for snap in traj.snapshots() {
        let exact = taylor_green(&g, amp * (-3.0 * snap.time()).exp());
        for c in 0..3 {
            for (a, b) in snap.velocity()[c].iter().zip(&exact[c]) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(worst <= 1e-6, "max deviation {worst:e}");
}

#[test]
fn stokes_mode_decays_by_heat_factor_each_step() {
    let g = grid(16);
    let dt = 1e-2;
    let u0 = g.sample_vector(|p| [(2.0 * p[1]).sin(), 0.0, 0.0]);
    let traj = Solver::new(g, SolverConfig::new(dt, 0.2))
        .unwrap()
        .with_nonlinearity(Nonlinearity::Disabled)
        .run(&u0)
        .unwrap()
        .into_result()
        .unwrap();
    let factor = (-4.0 * dt).exp();
    for pair in traj.snapshots().windows(2) {
        for (a, b) in pair[0].velocity()[0].iter().zip(&pair[1].velocity()[0]) {
            assert!((b - a * factor).abs() <= 1e-10);
        }
    }
}

#[test]
fn taylor_green_energy_decreases_and_restart_reproduces_tail() {
    let g = grid(32);
    let solver = Solver::new(g, SolverConfig::new(5e-3, 0.5)).unwrap();
    let traj = solver.run(&taylor_green(&g, 1.0)).unwrap().into_result().unwrap();
    let energies: Vec<f64> = traj.snapshots().iter().map(|s| s.energy()).collect();
    assert!(energies.windows(2).all(|w| w[1] < w[0]));

    let mid = traj.snapshots().len() / 2;
    let tail = solver.run_from(&traj.snapshots()[mid]).unwrap().into_result().unwrap();
    assert_eq!(tail.snapshots(), &traj.snapshots()[mid..]);
}

#[test]
fn zero_trajectory_has_zero_residuals() {
    let g = grid(16);
    let traj = solve(g, 1e-2, 0.2, &g.zero_vector());
    assert_eq!(strong_energy_residual(&traj, 0.0, 0.2).unwrap(), 0.0);
    let phi = TestFunctionSpec::bump(0.1, g.center(), 1.5, 0.15, 5.0);
    assert_eq!(local_energy_residual(&traj, &phi, 0.0, 0.2).unwrap().residual, 0.0);
}

#[test]
fn mollified_sharp_feature_converges_monotonically() {
    let g = grid(32);
    let u0 = shear_layer(&g, 0.05);
    let schedule = MollifierSchedule::geometric(1.2, 0.75, 6).unwrap();
    let dist: Vec<f64> = (0..schedule.len())
        .map(|k| {
            let uk = mollify(&u0, &g, &schedule, k).unwrap();
            let diff: VectorLattice = std::array::from_fn(|c| u0[c].iter().zip(&uk[c]).map(|(a, b)| a - b).collect());
            g.integrate(&magnitude_sq(&diff)).sqrt()
        })
        .collect();
    assert!(dist.windows(2).all(|w| w[1] < w[0]), "{dist:?}");

    let zero = mollify(&g.zero_vector(), &g, &schedule, 3).unwrap();
    assert!(zero.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn band_limited_data_has_full_good_sets() {
    let g = grid(32);
    let u0 = taylor_green(&g, 1.0);
    let schedule = MollifierSchedule::geometric(0.02, 0.5, 4).unwrap();
    let region = Ball { center: g.center(), radius: 1.0 };
    let sets = good_sets(&u0, &g, &schedule, 1e-3, &region, 0.01).unwrap();
    assert_eq!(sets.coverage, 1.0);
    assert!(sets.omega_mask.iter().zip(&sets.e_mask).all(|(&o, &e)| !o || e));
}

#[test]
fn budget_threshold_and_horizon() {
    let g = grid(16);
    let (dt, t_end) = (5e-3, 0.25);
    let v0 = taylor_green(&g, 0.05);
    let v = solve(g, dt, t_end, &v0);
    let x = [PI + 0.5, PI + 0.3, PI + 0.2];

    let same = weighted_budget(&v, &v, x, 0.0, 1.0).unwrap();
    assert!(same.certified);
    assert_eq!(same.t_star, t_end);
    assert!(same.w_energy.iter().all(|&e| e == 0.0));
    let doubled = weighted_budget(&v, &v, x, 0.0, 2.0).unwrap();
    assert_eq!(same.threshold / doubled.threshold, 4.0);

    let horizons: Vec<f64> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&amp| {
            let u = solve(g, dt, t_end, &add(&v0, &curl_bump(&g, g.center(), 1.5, amp)));
            let b = weighted_budget(&u, &v, x, 0.0, 1.0).unwrap();
            assert!(b.t_star > 0.0);
            b.t_star
        })
        .collect();
    assert!(horizons.windows(2).all(|w| w[1] >= w[0]), "{horizons:?}");
    assert_eq!(horizons[1], t_end);

    let big = solve(g, dt, t_end, &add(&v0, &curl_bump(&g, g.center(), 1.5, 20.0)));
    let b = weighted_budget(&big, &v, x, 0.0, 1.0).unwrap();
    assert!(!b.hp_at_zero && !b.certified);
    assert_eq!(b.t_star, 0.0);
}

#[test]
fn small_taylor_green_passes_both_criteria() {
    let g = grid(32);
    let traj = solve(g, 5e-3, 0.5, &taylor_green(&g, 0.1));
    let centers = [[3.0, 3.2, 2.9], [3.6, 2.7, 3.3], [2.6, 3.5, 3.1]];
    for &x in &centers {
        for t in [0.3, 0.4, 0.5] {
            let v = prop1_verdict(&traj, &ParabolicCylinder::q(t, x, 0.5), 0.05, 1.0).unwrap();
            assert!(v.passes, "M = {} at t = {t}, x = {x:?}", v.m.total);
            assert!(v.measured_sup <= v.sup_bound);
        }
        let p2 = prop2_limsup(&traj, 0.45, x, &[0.6, 0.5, 0.4], 0.05).unwrap();
        let values: Vec<f64> = p2.table.iter().map(|&(_, v)| v).collect();
        assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
        assert!(p2.passes && !p2.no_limsup);
    }
}

#[test]
fn delta_shrinks_as_velocity_grows() {
    let g = grid(16);
    let traj = solve(g, 5e-3, 0.25, &taylor_green(&g, 0.3));
    let x = [PI + 0.5, PI + 0.3, PI + 0.2];
    let deltas: Vec<f64> = [1.0, 2.0, 4.0]
        .iter()
        .map(|&lambda| {
            lemma41_delta(&traj.scaled(lambda), x, 0.25, 0.05, 1.0, 0.0)
                .unwrap()
                .delta()
                .unwrap_or(0.0)
        })
        .collect();
    assert!(deltas[1] < deltas[0] && deltas[2] < deltas[1], "{deltas:?}");
}

#[test]
fn schedule_entry_out_of_range_is_recorded() {
    let g = grid(16);
    let traj = solve(g, 1e-2, 0.2, &taylor_green(&g, 0.05));
    let params = ScheduleParams {
        c_constant: 1.0,
        epsilon1: 0.05,
        c0: 1.0,
        samples: 10,
    };
    let entry = schedule_entry(&traj, g.center(), 0.3, &params);
    assert!(entry.error.is_some() && !entry.passes());
    let inside = schedule_entry(&traj, g.center(), 0.1, &params);
    assert!(inside.error.is_none());
}

#[test]
fn line_of_failures_is_covered_economically() {
    let (ell, rho) = (2.0, 0.1);
    let line = |spacing: f64| -> Vec<SpaceTimePoint> {
        let count = (ell / spacing).round() as usize;
        (0..=count)
            .map(|i| SpaceTimePoint {
                t: 0.5,
                x: [1.0 + i as f64 * spacing, 2.0, 2.0],
            })
            .collect()
    };
    let coarse = singular_candidates(&line(0.01), rho);
    let expected = ell / (2.0 * rho);
    assert!((coarse.count as f64 - expected).abs() <= 1.0, "count {}", coarse.count);
    assert!(coarse.sum_r <= ell / 2.0 + rho + 1e-12, "sum {}", coarse.sum_r);

    let fine = singular_candidates(&line(0.005), rho);
    assert!(fine.sum_r <= 1.1 * coarse.sum_r);
}

#[test]
fn weighted_data_norm_cases() {
    let g = grid(32);
    assert_eq!(weighted_data_norm(&g.zero_vector(), &g, 1.0).unwrap().l, 0.0);

    let r = 1.2;
    let c = g.center();
    let inside = |p: [f64; 3], center: [f64; 3], radius: f64| {
        let d = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() < radius
    };
    let ball = g.sample_vector(|p| if inside(p, c, r) { [1.0; 3] } else { [0.0; 3] });
    let l = weighted_data_norm(&ball, &g, 1.0).unwrap().l;
    let exact = 6.0 * PI * r * r;
    assert!((l * l / exact - 1.0).abs() < 0.01, "L² = {}, closed form {exact}", l * l);

    let blob = |offset: f64| {
        let center = [c[0] + offset, c[1], c[2]];
        g.sample_vector(|p| if inside(p, center, 0.5) { [1.0; 3] } else { [0.0; 3] })
    };
    let near = weighted_data_norm(&blob(0.5), &g, 1.0).unwrap().l;
    let far = weighted_data_norm(&blob(1.5), &g, 1.0).unwrap().l;
    assert!(far < near);
}
