use std::collections::HashMap;

use approx::assert_relative_eq;
use proptest::prelude::*;

use dimer_core::correlations::pattern_probability;
use dimer_core::enumerate::{enumerate_torus, DEFAULT_BUDGET};
use dimer_core::faces::check_flatness;
use dimer_core::graph::{square_octagon, z2};
use dimer_core::green::green_pairing;
use dimer_core::sampler::{format_sample, parse_sample, sample_from, sample_rng, WindowState};
use dimer_core::scaling::cycle_cancellation;
use dimer_core::spectral::build_spectral;
use dimer_core::testfn::TestFunction;
use dimer_core::{Color, GraphSpec, KernelTable, Pattern, PatternEdge, Phase, C64};

fn weights() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (0.3f64..3.0, 0.3f64..3.0, 0.3f64..3.0, 0.3f64..3.0)
}

/// Multiplies the weights of every edge at white vertex `w` by `lambda`.
fn gauge_white(g: &GraphSpec, w: usize, lambda: f64) -> GraphSpec {
    let mut h = g.clone();
    for e in g.incident(Color::White, w) {
        h = h.with_weight(e, h.edges[e].weight * lambda).unwrap();
    }
    h
}

fn probabilities(g: &GraphSpec) -> Vec<f64> {
    let s = build_spectral(g).unwrap();
    let t = KernelTable::build(g, &s, 4).unwrap();
    (0..g.edges.len())
        .map(|e| pattern_probability(&t, g, &s, &Pattern::single(e, g)).unwrap().probability)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn adjugate_identity(w in weights(), th in 0.0f64..6.28, ph in 0.0f64..6.28, a in -1.0f64..1.0) {
        for g in [z2(w.0, w.1, w.2, w.3).unwrap(), square_octagon(a).unwrap()] {
            let s = build_spectral(&g).unwrap();
            let (z, x) = (C64::from_polar(1.0, th), C64::from_polar(1.0, ph));
            let m = s.q_at(z, x) * s.k_at(z, x);
            let p = s.p_at(z, x);
            for i in 0..s.n {
                for j in 0..s.n {
                    let want = if i == j { p } else { C64::new(0.0, 0.0) };
                    prop_assert!((m[(i, j)] - want).norm() <= 1e-12 * s.p_scale());
                }
            }
        }
    }

    #[test]
    fn phase_invariant_under_rescaling(w in weights(), lambda in 0.1f64..10.0) {
        let g = z2(w.0, w.1, w.2, w.3).unwrap();
        let p1 = build_spectral(&g).unwrap().phase;
        let p2 = build_spectral(&g.rescaled(lambda)).unwrap().phase;
        prop_assert_eq!(p1, p2);
    }

    #[test]
    fn torus_marginals_invariant_under_rescaling(w in weights(), lambda in 0.1f64..10.0) {
        let g = z2(w.0, w.1, w.2, w.3).unwrap();
        let a = enumerate_torus(&g, (2, 3), &HashMap::new(), DEFAULT_BUDGET).unwrap();
        let b = enumerate_torus(&g.rescaled(lambda), (2, 3), &HashMap::new(), DEFAULT_BUDGET).unwrap();
        prop_assert!(a.vertex_sum_residual(&g) < 1e-12);
        for (x, y) in a.class_marginals.iter().zip(&b.class_marginals) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        // six dimers on a 2x3 torus
        prop_assert!((b.partition_function / a.partition_function / lambda.powi(6) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gauge_leaves_flatness_and_probabilities(a in -0.8f64..0.8, lambda in 0.2f64..5.0, w in 0usize..4) {
        let g = square_octagon(a).unwrap();
        let h = gauge_white(&g, w, lambda);
        prop_assert!(check_flatness(&h).is_ok());
        for (x, y) in probabilities(&g).iter().zip(probabilities(&h).iter()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn liquid_roots_are_conjugate(w in weights()) {
        let g = z2(w.0, w.1, w.2, w.3).unwrap();
        let s = build_spectral(&g).unwrap();
        if s.phase == Phase::LiquidGeneric {
            prop_assert_eq!(s.roots.len(), 2);
            let (r0, r1) = (s.roots[0], s.roots[1]);
            prop_assert!((r0.z - r1.z.conj()).norm() < 1e-9 && (r0.w - r1.w.conj()).norm() < 1e-9);
        }
    }

    #[test]
    fn cycles_cancel(pts in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 3..8)) {
        let u: Vec<C64> = pts.iter().map(|&(x, y)| C64::new(x, y)).collect();
        let distinct = (0..u.len()).all(|i| (0..i).all(|j| (u[i] - u[j]).norm() > 1e-3));
        prop_assume!(distinct);
        let (s, big) = cycle_cancellation(&u).unwrap();
        prop_assert!(s.norm() <= 1e-9 * big);
    }

    #[test]
    fn sampler_never_violates_matching(seed in any::<u64>()) {
        let g = square_octagon(0.0).unwrap();
        let s = build_spectral(&g).unwrap();
        let t = KernelTable::build(&g, &s, 6).unwrap();
        let window: Vec<PatternEdge> = [(0, 0), (0, 1)]
            .iter()
            .flat_map(|&c| (0..g.edges.len()).map(move |e| PatternEdge::new(e, c)))
            .collect();
        let st = WindowState::<f64>::new(&t, &g, &window).unwrap();
        let bits = sample_from(&st, &mut sample_rng(seed, 0)).unwrap();
        let mut seen = std::collections::HashSet::new();
        for (k, e) in st.window.iter().enumerate() {
            if bits[k] {
                prop_assert!(seen.insert(e.white(&g)));
                prop_assert!(seen.insert(e.black(&g)));
            }
        }
        // all 8 white vertices of the two cells are covered
        prop_assert_eq!(bits.iter().filter(|b| **b).count(), 8);
        let line = format_sample(seed, "w", &bits);
        prop_assert_eq!(parse_sample(&line, bits.len()).unwrap().2, bits);
    }

    #[test]
    fn green_pairing_symmetric(cx in -0.5f64..0.5, r in 0.2f64..0.6, vx in -1.0f64..1.0, vy in -1.0f64..1.0) {
        let f = TestFunction::bump([cx, 0.1], r);
        let h = TestFunction::gaussian([0.0, -0.2], 0.2);
        let v = C64::new(vx, vy);
        let w = C64::new(0.3, -0.8);
        let a = green_pairing(&f, v, &h, w).unwrap().value;
        let b = green_pairing(&h, w, &f, v).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-9));
        prop_assert!(green_pairing(&f, v, &f, v).unwrap().value >= 0.0);
    }
}

#[test]
fn crossing_sums_match_polynomial_derivatives() {
    for w in [(1.0, 1.0, 1.0, 1.0), (2.0, 1.0, 1.0, 1.0), (1.0, 1.0, 1.0, 0.0), (1.5, 1.2, 0.7, 0.9)] {
        let g = z2(w.0, w.1, w.2, w.3).unwrap();
        let s = build_spectral(&g).unwrap();
        let geo = dimer_core::spectral::liquid_geometry(&s, &g).unwrap();
        assert!((geo.xhat - geo.xhat_crossing).norm() < 1e-10);
        assert!((geo.yhat - geo.yhat_crossing).norm() < 1e-10);
        assert!(geo.max_divergence() < 1e-10);
    }
}

#[test]
fn gaseous_grid_doubling_is_spectrally_accurate() {
    let g = square_octagon(0.0).unwrap();
    let s = build_spectral(&g).unwrap();
    let a = KernelTable::fft_grid(&g, &s, 256, 12).unwrap();
    let b = KernelTable::fft_grid(&g, &s, 512, 12).unwrap();
    for y in -12..=12 {
        for x in -12..=12 {
            for bi in 0..4 {
                for wi in 0..4 {
                    assert!((a.at(bi, wi, x, y) - b.at(bi, wi, x, y)).norm() <= 1e-12);
                }
            }
        }
    }
}

#[test]
fn liquid_refined_grids_are_consistent() {
    let g = z2(1.0, 1.0, 1.0, 1.0).unwrap();
    let s = build_spectral(&g).unwrap();
    let strip = KernelTable::build(&g, &s, 8).unwrap();
    let tables: Vec<KernelTable> =
        [512, 1024, 2048].iter().map(|&n| KernelTable::refined(&g, &s, n, 8).unwrap()).collect();
    for y in -8..=8 {
        for x in -8..=8 {
            for t in &tables {
                assert!((t.at(0, 0, x, y) - tables[2].at(0, 0, x, y)).norm() <= 1e-4);
                assert!((t.at(0, 0, x, y) - strip.at(0, 0, x, y)).norm() <= 1e-4);
            }
        }
    }
}

#[test]
fn kernel_table_roundtrip() {
    let g = z2(2.0, 1.0, 1.0, 1.0).unwrap();
    let s = build_spectral(&g).unwrap();
    let t = KernelTable::build(&g, &s, 6).unwrap();
    let path = std::env::temp_dir().join(format!("dimer-kt-{}.bin", std::process::id()));
    t.dump(&path).unwrap();
    let u = KernelTable::load(&path).unwrap();
    std::fs::remove_file(&path).ok();
    assert_eq!(u.radius, t.radius);
    for y in -6..=6 {
        for x in -6..=6 {
            assert_eq!(u.at(0, 0, x, y), t.at(0, 0, x, y));
        }
    }
}

#[test]
fn uniform_edge_probability_is_a_quarter() {
    let g = z2(1.0, 1.0, 1.0, 1.0).unwrap();
    for p in probabilities(&g) {
        assert_relative_eq!(p, 0.25, epsilon = 1e-12);
    }
}
