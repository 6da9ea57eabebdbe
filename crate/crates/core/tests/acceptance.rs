//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dimer_core::clt::{clt_harness, CltConfig};
use dimer_core::correlations::{
    centered_correlation, inclusion_exclusion_check, joint_probability, pattern_probability, vertex_sum_residual,
};
use dimer_core::enumerate::{enumerate_torus, DEFAULT_BUDGET};
use dimer_core::graph::{square_octagon, z2};
use dimer_core::kernel::AsymptoticEvaluator;
use dimer_core::sampler::{sample_from, sample_rng, WindowState};
use dimer_core::scaling::{
    covariance_lattice_sum, cross_pattern_sum_rule, cycle_cancellation, free_energy, gaseous_hessian,
    predicted_lattice_limit, strip_sum_identity, white_noise_gaseous, white_noise_liquid,
    AmplitudeMethod, LiquidOptions,
};
use dimer_core::special::{elliptic_ke, square_octagon_series_derivatives};
use dimer_core::spectral::{build_spectral, liquid_geometry};
use dimer_core::testfn::TestFunction;
use dimer_core::{Color, GraphSpec, KernelTable, Pattern, PatternEdge, SpectralData, C64};

type Outcome = Result<String, String>;

fn judge(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn setup(g: &GraphSpec, radius: i64) -> (SpectralData, KernelTable) {
    let s = build_spectral(g).expect("spectral data");
    let t = KernelTable::build(g, &s, radius).expect("kernel table");
    (s, t)
}

/// abcd / (8π R² Area) with Brahmagupta's area and the cyclic-quadrilateral circumradius.
fn z2_oracle(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let sp = (a + b + c + d) / 2.0;
    let area = ((sp - a) * (sp - b) * (sp - c) * (sp - d)).sqrt();
    let r = ((a * b + c * d) * (a * c + b * d) * (a * d + b * c)).sqrt() / (4.0 * area);
    a * b * c * d / (8.0 * PI * r * r * area)
}

fn c1_square_octagon() -> Outcome {
    let start = Instant::now();
    let g = square_octagon(0.0).unwrap();
    let (s, t) = setup(&g, 16);
    let (_, f1, f2) = square_octagon_series_derivatives(0.0);
    let k_series = (0.5 - f1) * 5.0 * PI / 3.0;
    let (k, e) = elliptic_ke(16.0f64 / 25.0);
    let p11 = pattern_probability(&t, &g, &s, &Pattern::single(0, &g)).unwrap().probability;
    let a11 = white_noise_gaseous(&g, &s, 0).unwrap().value;
    let p_sq = pattern_probability(&t, &g, &s, &Pattern::single(3, &g)).unwrap().probability;
    let a_sq = white_noise_gaseous(&g, &s, 3).unwrap().value;
    let errs = [
        ("P(w1b1) vs series", (p11 - f1).abs()),
        ("series vs 1/2-3K/5pi", (f1 - (0.5 - 3.0 * k / (5.0 * PI))).abs()),
        ("A(w1b1) vs series", (a11 - f2).abs()),
        ("series vs (K-E)/2pi", (f2 - (k - e) / (2.0 * PI)).abs()),
        ("P(square) vs 1/4+3K/10pi", (p_sq - (0.25 + 3.0 * k_series / (10.0 * PI))).abs()),
        ("A(square) vs 2K/5pi", (a_sq - 2.0 * k_series / (5.0 * PI)).abs()),
    ];
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    judge(
        worst <= 1e-8 && secs < 60.0,
        format!("P={p11:.12} A={a11:.12} Psq={p_sq:.12} Asq={a_sq:.12}; max err {worst:.1e}; {secs:.1}s"),
    )
}

struct Liquid {
    g: GraphSpec,
    s: SpectralData,
    t: KernelTable,
}

fn liquid(a: f64, b: f64, c: f64, d: f64, radius: i64) -> Liquid {
    let g = z2(a, b, c, d).unwrap();
    let (s, t) = setup(&g, radius);
    Liquid { g, s, t }
}

fn amp(l: &Liquid, i: usize, j: usize) -> f64 {
    let geom = liquid_geometry(&l.s, &l.g).unwrap();
    let pa = pattern_probability(&l.t, &l.g, &l.s, &Pattern::single(i, &l.g)).unwrap();
    let pb = pattern_probability(&l.t, &l.g, &l.s, &Pattern::single(j, &l.g)).unwrap();
    white_noise_liquid(&l.t, &l.g, &l.s, &geom, &pa, &pb, &LiquidOptions::default()).unwrap().value
}

fn c2_z2_amplitude() -> Outcome {
    let start = Instant::now();
    let mut detail = Vec::new();
    let mut ok = true;
    for w in [(1.0, 1.0, 1.0, 1.0), (2.0, 1.0, 1.0, 1.0)] {
        let l = liquid(w.0, w.1, w.2, w.3, 2048);
        let aa = amp(&l, 0, 0);
        let ab = amp(&l, 0, 1);
        let cf = z2_oracle(w.0, w.1, w.2, w.3);
        let (r1, r2) = ((aa - cf).abs() / cf, (ab + aa).abs() / aa.abs());
        ok &= r1 <= 0.02 && r2 <= 0.02;
        detail.push(format!("{w:?}: A_aa={aa:.8} closed={cf:.8} (rel {r1:.1e}), A_ab={ab:.8} (rel {r2:.1e})"));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 600.0;
    judge(ok, format!("{}; {secs:.1}s", detail.join("; ")))
}

fn c3_honeycomb() -> Outcome {
    let l = liquid(1.0, 1.0, 1.0, 0.0, 1024);
    let a = amp(&l, 0, 0);
    judge(a.abs() <= 1e-4, format!("A_aa = {a:.3e}"))
}

fn vertex_double_sum(g: &GraphSpec, a: &DMatrix<f64>, method: AmplitudeMethod) -> f64 {
    let mut worst: f64 = 0.0;
    for color in [Color::White, Color::Black] {
        for v in 0..g.n {
            let inc = g.incident(color, v);
            let m = DMatrix::from_fn(inc.len(), inc.len(), |i, j| a[(inc[i], inc[j])]);
            worst = worst.max(cross_pattern_sum_rule(&m, &vec![method; inc.len()]).unwrap());
        }
    }
    worst
}

fn c4_sum_rules() -> Outcome {
    let g = square_octagon(0.0).unwrap();
    let (s, t) = setup(&g, 8);
    let vs_gas = vertex_sum_residual(&t, &g).unwrap();
    let h = gaseous_hessian(&g, &s, 256);
    let dsum_gas = vertex_double_sum(&g, &h, AmplitudeMethod::FreeEnergyHessian);
    let l = liquid(2.0, 1.0, 1.0, 1.0, 512);
    let vs_liq = vertex_sum_residual(&l.t, &l.g).unwrap();
    let a = DMatrix::from_fn(4, 4, |i, j| amp(&l, i, j));
    let dsum_liq = vertex_double_sum(&l.g, &a, AmplitudeMethod::LatticeSum);
    judge(
        vs_gas <= 1e-7 && vs_liq <= 1e-4 && dsum_gas <= 0.02 && dsum_liq <= 0.02,
        format!(
            "vertex sums {vs_gas:.1e} (gaseous), {vs_liq:.1e} (liquid); double sums {dsum_gas:.1e}, {dsum_liq:.1e} of max|A|"
        ),
    )
}

fn c5_asymptotics() -> Outcome {
    let l = liquid(1.0, 1.0, 1.0, 1.0, 256);
    let asym = AsymptoticEvaluator::new(&l.s).unwrap();
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for x in 32..=256i64 {
        let r = (l.t.at(0, 0, x, 0).re - asym.coefficient(0, 0, x, 0).unwrap()).abs();
        if r > 0.0 {
            lx.push((x as f64).ln());
            ly.push(r.ln());
        }
    }
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / lx.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    judge(slope <= -1.7, format!("residual exponent {slope:.3} over {} points", lx.len()))
}

fn c6_strip_identity() -> Outcome {
    let s = build_spectral(&z2(1.0, 1.0, 1.0, 1.0).unwrap()).unwrap();
    let v = strip_sum_identity(&s, 1, 10_000).unwrap();
    judge(v.norm() <= 1e-3, format!("|sum| = {:.3e}", v.norm()))
}

fn c7_determinantal() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_ie: f64 = 0.0;
    let mut worst_cc: f64 = 0.0;
    let mut worst_ti: f64 = 0.0;
    for g in [
        z2(1.0, 1.0, 1.0, 1.0).unwrap(),
        z2(2.0, 1.0, 1.0, 1.0).unwrap(),
        z2(1.0, 1.0, 1.0, 0.0).unwrap(),
        square_octagon(0.0).unwrap(),
    ] {
        let (_, t) = setup(&g, 16);
        let ne = g.edges.len();
        let mut pairs = 0;
        while pairs < 20 {
            let e1 = PatternEdge::new(rng.gen_range(0..ne), (0, 0));
            let e2 = PatternEdge::new(rng.gen_range(0..ne), (rng.gen_range(-3..=3), rng.gen_range(-3..=3)));
            if e1 == e2 {
                continue;
            }
            pairs += 1;
            worst_ie = worst_ie.max(inclusion_exclusion_check(&t, &g, e1, e2).unwrap().abs());
            let pe = |e: PatternEdge| Pattern { edges: vec![e], marked: e.white(&g) };
            let j = joint_probability(&t, &g, &[pe(e1), pe(e2)]).unwrap();
            let shares = e1.white(&g) == e2.white(&g) || e1.black(&g) == e2.black(&g);
            if !shares {
                let p1 = joint_probability(&t, &g, &[pe(e1)]).unwrap();
                let p2 = joint_probability(&t, &g, &[pe(e2)]).unwrap();
                let c = centered_correlation(&t, &g, &[e1, e2]).unwrap();
                worst_cc = worst_cc.max((c - (j - p1 * p2)).abs());
            }
            let by = (rng.gen_range(-4..=4), rng.gen_range(-4..=4));
            let jt = joint_probability(&t, &g, &[pe(e1.translate(by)), pe(e2.translate(by))]).unwrap();
            worst_ti = worst_ti.max((j - jt).abs());
        }
    }
    judge(
        worst_ie <= 1e-8 && worst_cc <= 1e-12 && worst_ti <= 1e-12,
        format!("inclusion-exclusion {worst_ie:.1e}, centered {worst_cc:.1e}, translation {worst_ti:.1e}"),
    )
}

fn c8_sampler() -> Outcome {
    let g = square_octagon(0.0).unwrap();
    let (_, t) = setup(&g, 8);
    let window: Vec<PatternEdge> =
        [(0, 0), (1, 0)].iter().flat_map(|&c| (0..g.edges.len()).map(move |e| PatternEdge::new(e, c))).collect();
    let state = WindowState::<f64>::new(&t, &g, &window).unwrap();
    let order = state.window.clone();
    let n = 100_000usize;
    let pairs: Vec<(usize, usize)> = (0..10).map(|k| (k, (k * 5 + 13) % order.len())).filter(|(a, b)| a != b).collect();
    let mut single = vec![0u64; order.len()];
    let mut joint = vec![0u64; pairs.len()];
    let mut violations = 0u64;
    for i in 0..n {
        let bits = sample_from(&state, &mut sample_rng(2024, i as u64)).unwrap();
        for (k, b) in bits.iter().enumerate() {
            single[k] += *b as u64;
        }
        for (k, (a, b)) in pairs.iter().enumerate() {
            joint[k] += (bits[*a] && bits[*b]) as u64;
        }
        let mut seen = HashMap::new();
        for (k, e) in order.iter().enumerate() {
            if bits[k] {
                for v in [e.white(&g), e.black(&g)] {
                    if seen.insert(v, ()).is_some() {
                        violations += 1;
                    }
                }
            }
        }
        // white vertices of both cells have every incident edge in the window
        for cell in [(0, 0), (1, 0)] {
            for w in 0..g.n {
                let cnt = order
                    .iter()
                    .enumerate()
                    .filter(|(k, e)| bits[*k] && e.offset == cell && g.edges[e.edge].white == w)
                    .count();
                violations += (cnt != 1) as u64;
            }
        }
    }
    let pe = |e: PatternEdge| Pattern { edges: vec![e], marked: e.white(&g) };
    let z = |count: u64, p: f64| (count as f64 / n as f64 - p).abs() / (p * (1.0 - p) / n as f64).sqrt().max(1e-300);
    let mut worst: f64 = 0.0;
    for (k, e) in order.iter().enumerate() {
        let p = joint_probability(&t, &g, &[pe(*e)]).unwrap();
        worst = worst.max(z(single[k], p));
    }
    for (k, (a, b)) in pairs.iter().enumerate() {
        let p = joint_probability(&t, &g, &[pe(order[*a]), pe(order[*b])]).unwrap();
        if p > 0.0 {
            worst = worst.max(z(joint[k], p));
        } else {
            worst = worst.max(if joint[k] == 0 { 0.0 } else { f64::INFINITY });
        }
    }
    judge(
        worst <= 3.0 && violations == 0,
        format!("{} marginals and {} joints, max |z| = {worst:.2}; {violations} constraint violations", order.len(), pairs.len()),
    )
}

fn c9_clt() -> Outcome {
    let g = square_octagon(0.0).unwrap();
    let (s, t) = setup(&g, 24);
    let cfg = CltConfig {
        pattern: Pattern::single(3, &g),
        phis: vec![("gaussian".into(), TestFunction::gaussian([0.0, 0.0], 0.15))],
        epsilons: vec!["1/16".parse().unwrap()],
        n_samples: 10_000,
        seed: 7,
    };
    let row = clt_harness(&t, &g, &s, &cfg).unwrap().remove(0);
    let rel = (row.moments.var - row.predicted_var).abs() / row.predicted_var;
    let skew_ok = row.skewness.abs() <= 3.0 * row.skewness_se();
    let kurt_ok = (0.9..=1.1).contains(&row.kurtosis_ratio);
    // liquid: Cauchy-in-ε trend of the lattice covariance sums
    let l = liquid(2.0, 1.0, 1.0, 1.0, 300);
    let psi = TestFunction::bump([0.0, 0.0], 1.0);
    let p = Pattern::single(0, &l.g);
    let sums: Vec<f64> = [32.0, 64.0, 128.0]
        .iter()
        .map(|k| covariance_lattice_sum(&l.t, &l.g, &l.s, &p, &p, &psi, 1.0 / k).unwrap())
        .collect();
    let (d1, d2) = ((sums[1] - sums[0]).abs(), (sums[2] - sums[1]).abs());
    let geom = liquid_geometry(&l.s, &l.g).unwrap();
    let pa = pattern_probability(&l.t, &l.g, &l.s, &p).unwrap();
    let a = white_noise_liquid(&l.t, &l.g, &l.s, &geom, &pa, &pa, &LiquidOptions::default()).unwrap();
    let limit = predicted_lattice_limit(a.value, Some(a.dipoles.0), Some(a.dipoles.1), &psi);
    let lrel = (sums[2] - limit).abs() / limit.abs();
    judge(
        rel <= 0.1 && skew_ok && kurt_ok && d2 < d1 && lrel <= 0.02,
        format!(
            "var {:.6e} vs A*int(phi^2) {:.6e} (rel {rel:.1e}); skew {:.3} (3se {:.3}); kurtosis ratio {:.3}; \
             liquid increments {d1:.1e} > {d2:.1e}, limit rel {lrel:.1e}",
            row.moments.var,
            row.predicted_var,
            row.skewness,
            3.0 * row.skewness_se(),
            row.kurtosis_ratio
        ),
    )
}

fn c10_cycles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for m in 3..=7 {
        for _ in 0..100 {
            let u: Vec<C64> = (0..m).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let (s, big) = cycle_cancellation(&u).unwrap();
            worst = worst.max(s.norm() / big);
        }
    }
    judge(worst <= 1e-10, format!("max |sum| / max term = {worst:.1e}"))
}

fn c11_enumeration() -> Outcome {
    let g = z2(1.0, 1.0, 1.0, 1.0).unwrap();
    let s = build_spectral(&g).unwrap();
    let f_inf = free_energy(&s, 1024);
    let mut dev = Vec::new();
    let mut fdev = Vec::new();
    let mut vs: f64 = 0.0;
    for l in 1..=4usize {
        let e = enumerate_torus(&g, (l, l), &HashMap::new(), DEFAULT_BUDGET).unwrap();
        vs = vs.max(e.vertex_sum_residual(&g));
        dev.push(e.class_marginals.iter().map(|m| (m - 0.25).abs()).fold(0.0, f64::max));
        fdev.push(e.partition_function.ln() / (l * l) as f64 - f_inf);
    }
    let mono = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0] + 1e-15);
    judge(
        vs <= 1e-12 && mono(&dev) && mono(&fdev) && fdev.iter().all(|f| *f > 0.0),
        format!("vertex sums {vs:.1e}; marginal deviations {dev:?}; log Z per cell - F: {fdev:.4?}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("1 square-octagon golden values", c1_square_octagon),
        ("2 Z2 liquid amplitude", c2_z2_amplitude),
        ("3 honeycomb degeneration", c3_honeycomb),
        ("4 vertex sum rules", c4_sum_rules),
        ("5 inverse Kasteleyn asymptotics", c5_asymptotics),
        ("6 strip identity", c6_strip_identity),
        ("7 determinantal machinery", c7_determinantal),
        ("8 sampler exactness", c8_sampler),
        ("9 CLT and Wick moments", c9_clt),
        ("10 cycle cancellation", c10_cycles),
        ("11 enumeration oracle", c11_enumeration),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|k| name.split(' ').next() == Some(k.as_str())) {
            continue;
        }
        let start = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or(e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match r {
            Ok(d) => println!("PASS [{name}] {d} ({secs:.1}s)"),
            Err(d) => {
                failed += 1;
                println!("FAIL [{name}] {d} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
