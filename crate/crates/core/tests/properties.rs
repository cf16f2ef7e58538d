use std::f64::consts::TAU;

use ckn_core::criteria::{
    cylinder_sup, lemma41_delta, m_functional, ns_rescale, prop1_verdict, singular_candidates, thmd_region,
    InitialDataGauge, ParabolicCylinder, SpaceTimePoint,
};
use ckn_core::fields::{leray_project, max_divergence};
use ckn_core::grid::{Point, VectorLattice};
use ckn_core::initial::random_field;
use ckn_core::mollifier::kernel_lattice;
use ckn_core::pressure::{pressure_oracle, solve_pressure};
use ckn_core::quadrature::windowed_trapezoid;
use ckn_core::snapshot_io::{decode, encode};
use ckn_core::solver::{SolverConfig, Trajectory};
use ckn_core::weighted::{
    estimate_t_star, extrapolate_ladder, interpolation_ratio, weighted_integral, Exponents, KernelRule, WeightSpec,
};
use ckn_core::{FieldSnapshot, TorusGrid};
use proptest::prelude::*;

fn grid8() -> TorusGrid {
    TorusGrid::new(8, TAU).unwrap()
}

fn raw_field(len: usize) -> impl Strategy<Value = VectorLattice> {
    (
        prop::collection::vec(-1.0..1.0f64, len),
        prop::collection::vec(-1.0..1.0f64, len),
        prop::collection::vec(-1.0..1.0f64, len),
    )
        .prop_map(|(a, b, c)| [a, b, c])
}

/// Field frozen in time, with its exact pressure, sampled every 0.05.
fn frozen_trajectory(u: &VectorLattice, grid: TorusGrid, amplitude: f64) -> Trajectory {
    let v: VectorLattice = u.clone().map(|c| c.into_iter().map(|x| x * amplitude).collect());
    let p = solve_pressure(&v, &grid, 1e-8).unwrap();
    let snaps = (0..=20)
        .map(|i| FieldSnapshot::new(grid, i as f64 * 0.05, v.clone(), p.clone()).unwrap())
        .collect();
    Trajectory::new(SolverConfig::new(0.05, 1.0), snaps, Vec::new()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projection_is_idempotent(raw in raw_field(512)) {
        let grid = grid8();
        let once = leray_project(&raw, &grid).unwrap();
        let twice = leray_project(&once, &grid).unwrap();
        prop_assert!(max_divergence(&once, &grid) < 1e-12);
        for c in 0..3 {
            for (a, b) in once[c].iter().zip(&twice[c]) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pressure_matches_oracle_and_is_even(raw in raw_field(512)) {
        let grid = grid8();
        let u = leray_project(&raw, &grid).unwrap();
        let fast = solve_pressure(&u, &grid, 1e-10).unwrap();
        let slow = pressure_oracle(&u, &grid).unwrap();
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        let neg: VectorLattice = u.clone().map(|c| c.into_iter().map(|x| -x).collect());
        prop_assert_eq!(solve_pressure(&neg, &grid, 1e-10).unwrap(), fast);
    }

    #[test]
    fn pressure_commutes_with_axis_swap(raw in raw_field(512)) {
        let grid = grid8();
        let u = leray_project(&raw, &grid).unwrap();
        let swap = |idx: usize| {
            let [i, j, k] = grid.coords(idx);
            grid.index(j, i, k)
        };
        let permute = |c: &Vec<f64>| (0..grid.len()).map(|idx| c[swap(idx)]).collect::<Vec<f64>>();
        let swapped = [permute(&u[1]), permute(&u[0]), permute(&u[2])];
        let p = solve_pressure(&u, &grid, 1e-10).unwrap();
        let q = solve_pressure(&swapped, &grid, 1e-10).unwrap();
        for idx in 0..grid.len() {
            prop_assert!((q[idx] - p[swap(idx)]).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_integral_is_monotone_in_mu(
        density in prop::collection::vec(0.0..1.0f64, 512),
        mu in 0.01..3.0f64,
        factor in 1.0..4.0f64,
        x in prop::array::uniform3(1.0..5.0f64),
    ) {
        let grid = grid8();
        let small = weighted_integral(&density, &grid, &WeightSpec::new(x, mu), KernelRule::Midpoint).unwrap();
        let large = weighted_integral(&density, &grid, &WeightSpec::new(x, mu * factor), KernelRule::Midpoint).unwrap();
        prop_assert!(large <= small);
    }

    #[test]
    fn ladder_fit_is_exact_on_its_model(e0 in -5.0..5.0f64, a in -5.0..5.0f64, b in -5.0..5.0f64, h in 0.05..0.5f64) {
        let f = |mu: f64| e0 + a * mu * mu + b * mu * mu * mu.ln();
        let ladder = [(4.0 * h, f(4.0 * h)), (2.0 * h, f(2.0 * h)), (h, f(h))];
        prop_assert!((extrapolate_ladder(&ladder) - e0).abs() < 1e-9);
    }

    #[test]
    fn mollifier_kernel_has_unit_mass(eps in 0.2..3.0f64) {
        let grid = TorusGrid::new(16, TAU).unwrap();
        let k = kernel_lattice(&grid, eps).unwrap();
        prop_assert!((grid.integrate(&k) - 1.0).abs() < 1e-12);
        prop_assert!(k.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn snapshot_encoding_round_trips(raw in raw_field(512), time in 0.0..10.0f64) {
        let grid = grid8();
        let p = raw[0].clone();
        let snap = FieldSnapshot::new(grid, time, raw, p).unwrap();
        prop_assert_eq!(decode(&encode(&snap)).unwrap(), snap);
    }

    #[test]
    fn windowed_trapezoid_is_additive(
        values in prop::collection::vec(-3.0..3.0f64, 11),
        a in 0.0..0.3f64,
        mid in 0.3..0.6f64,
        b in 0.6..1.0f64,
    ) {
        let times: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let whole = windowed_trapezoid(&times, &values, a, b);
        let parts = windowed_trapezoid(&times, &values, a, mid) + windowed_trapezoid(&times, &values, mid, b);
        prop_assert!((whole - parts).abs() < 1e-12);
    }

    #[test]
    fn greedy_cover_is_sound(
        pts in prop::collection::vec((0.0..1.0f64, prop::array::uniform3(0.0..3.0f64)), 0..60),
        rho in 0.05..0.5f64,
    ) {
        let samples: Vec<SpaceTimePoint> = pts.into_iter().map(|(t, x)| SpaceTimePoint { t, x }).collect();
        let cover = singular_candidates(&samples, rho);
        for p in &samples {
            prop_assert!(cover.cylinders.iter().any(|c| c.contains(p)));
        }
        prop_assert!(cover.count <= samples.len());
        prop_assert!(cover.cylinders.iter().all(|c| c.r >= rho));
    }

    #[test]
    fn thmd_region_is_scale_invariant(
        l in 0.0..1.0f64,
        t in 0.01..2.0f64,
        x in prop::array::uniform3(-2.0..2.0f64),
        e in -2i32..3,
    ) {
        let gauge = InitialDataGauge { l, l0: 1.0 };
        let lambda = 2f64.powi(e);
        let scaled: Point = x.map(|v| v * lambda);
        prop_assert_eq!(thmd_region(&gauge, t, x), thmd_region(&gauge, t * lambda * lambda, scaled));
    }

    #[test]
    fn t_star_never_grows_with_more_energy(
        w in prop::collection::vec(0.0..0.05f64, 10),
        d in prop::collection::vec(0.0..0.01f64, 10),
        factor in 1.0..3.0f64,
    ) {
        let times: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let cum: Vec<f64> = d.iter().scan(0.0, |acc, v| { *acc += v; Some(*acc) }).collect();
        let base = estimate_t_star(&times, &w, &cum, 1.0);
        let more: Vec<f64> = w.iter().map(|v| v * factor).collect();
        let worse = estimate_t_star(&times, &more, &cum, 1.0);
        prop_assert!(worse.t_star <= base.t_star);
        prop_assert!(!worse.certified || base.certified);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn interpolation_ratio_is_dilation_invariant(seed in 0u64..1000, e in 1i32..3) {
        let grid = TorusGrid::new(16, TAU).unwrap();
        let u = random_field(&grid, seed, 3, 1.0).unwrap();
        let lambda = 2f64.powi(e);
        let x = grid.center();
        let exps = Exponents::new(4.0, -0.25, -0.25, -0.25, 0.75);
        let a = interpolation_ratio(&u, &grid, &exps, x).unwrap().value().unwrap();
        let b = interpolation_ratio(&u, &grid.dilated(lambda).unwrap(), &exps, x.map(|v| v / lambda))
            .unwrap()
            .value()
            .unwrap();
        prop_assert!((a / b - 1.0).abs() < 1e-8);
    }

    #[test]
    fn m_is_scale_invariant_and_thresholds_are_monotone(
        seed in 0u64..1000,
        amp in 0.1..2.0f64,
        r in 0.5..1.0f64,
        frac in 0.0..1.0f64,
        e1 in 0.0..0.2f64,
        bump in 0.0..0.2f64,
    ) {
        let grid = TorusGrid::new(16, TAU).unwrap();
        let u = random_field(&grid, seed, 2, 1.0).unwrap();
        let traj = frozen_trajectory(&u, grid, amp);
        let x = grid.center();
        let cyl = ParabolicCylinder::q(r * r + frac * (1.0 - r * r), x, r);
        let m = m_functional(&traj, &cyl).unwrap();
        prop_assert!(m.total >= 0.0);
        let scaled = ns_rescale(&traj, 2.0).unwrap();
        let small = ParabolicCylinder::q(cyl.t / 4.0, x.map(|v| v / 2.0), r / 2.0);
        let ms = m_functional(&scaled, &small).unwrap();
        prop_assert!((ms.total / m.total - 1.0).abs() < 1e-8);
        let lo = prop1_verdict(&traj, &cyl, e1, 1.0).unwrap();
        let hi = prop1_verdict(&traj, &cyl, e1 + bump, 1.0).unwrap();
        prop_assert!(!lo.passes || hi.passes);
        prop_assert!(cylinder_sup(&traj, &cyl.half()) <= cylinder_sup(&traj, &cyl));
    }
}

#[test]
fn delta_is_nonincreasing_in_amplitude() {
    let grid = TorusGrid::new(16, TAU).unwrap();
    let u = random_field(&grid, 11, 2, 1.0).unwrap();
    let x = grid.center();
    let deltas: Vec<f64> = [0.05, 0.1, 0.2, 0.4, 0.8]
        .iter()
        .map(|&a| {
            let traj = frozen_trajectory(&u, grid, a);
            lemma41_delta(&traj, x, 1.0, 0.05, 1.0, 0.0)
                .unwrap()
                .delta()
                .unwrap_or(0.0)
        })
        .collect();
    assert!(deltas.windows(2).all(|w| w[1] <= w[0]), "{deltas:?}");
    assert!(deltas[0] > *deltas.last().unwrap(), "{deltas:?}");
}
