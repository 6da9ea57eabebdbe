//! Predicted limit covariances: dipole vectors, Green pairing terms and
//! white-noise amplitudes, with lattice-sum and free-energy cross-checks.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlations::{joint_probability, PatternAnalysis};
use crate::error::{Error, Result};
use crate::graph::GraphSpec;
use crate::kernel::{strip_row, KernelTable};
use crate::pattern::Pattern;
use crate::special::{elliptic_ke, gauss_legendre, square_octagon_series_derivatives};
use crate::spectral::{build_spectral, DualGeometry, Embedding, Phase, SpectralData};
use crate::testfn::TestFunction;
use crate::{C64, VERSION};

/// Principal square root of tr((E⁻¹Q)²): nonnegative real part, ties to nonnegative imaginary part.
pub fn dipole_vector(pa: &PatternAnalysis) -> Result<C64> {
    let d2 = pa
        .dipole_sq
        .ok_or_else(|| Error::Precondition("dipole vector needs a liquid_generic pattern analysis".into()))?;
    let mut r = d2.sqrt();
    if r.re < 0.0 || (r.re == 0.0 && r.im < 0.0) {
        r = -r;
    }
    Ok(r)
}

/// Unit-area normalized dipole ν · i p̄ vᵀE⁻¹u; for a single edge this is e*.
pub fn normalized_dipole(pa: &PatternAnalysis, geom: &DualGeometry) -> Result<C64> {
    pa.raw_dipole
        .map(|d| d * geom.nu)
        .ok_or_else(|| Error::Precondition("dipole needs a liquid_generic, invertible pattern".into()))
}

/// ∂_v G(u, 0) for G = -(1/2π) log|u|.
pub fn green_derivative(v: C64, u: C64) -> f64 {
    -(v / u).re / (2.0 * PI)
}

/// (1/π) ∫ ∂_{v1}G(u,0) ∂_{v2}ψ(u) du, the Green part of the limit of a
/// lattice sum against ψ, by polar quadrature about the origin.
pub fn gff_point_term(v1: C64, v2: C64, psi: &TestFunction) -> f64 {
    let c = psi.center();
    let rmax = (c[0] * c[0] + c[1] * c[1]).sqrt() + psi.support_radius();
    if rmax == 0.0 {
        return 0.0;
    }
    let (x, w) = gauss_legendre::<f64>(256);
    let nth = 512;
    let mut s = 0.0;
    for (xi, wi) in x.iter().zip(&w) {
        let r = 0.5 * rmax * (xi + 1.0);
        let mut ring = 0.0;
        for k in 0..nth {
            let th = 2.0 * PI * (k as f64 + 0.5) / nth as f64;
            let u = C64::from_polar(r, th);
            let g = psi.grad([u.re, u.im]);
            // r dθ times ∂G, which carries 1/r
            ring += -(v1 * C64::from_polar(1.0, -th)).re / (2.0 * PI) * (v2.re * g[0] + v2.im * g[1]);
        }
        s += wi * ring * 2.0 * PI / nth as f64;
    }
    s * 0.5 * rmax / PI
}

/// (1/π) ∮_{∂B} ∂_{v1}G(u) ⟨v2, n_out⟩ dσ over B = {s x̂ + t ŷ : |s| ≤ sx, |t| ≤ sy}.
pub fn contour_term(v1: C64, v2: C64, xhat: C64, yhat: C64, sx: f64, sy: f64) -> f64 {
    let mut corners = [-xhat * sx - yhat * sy, xhat * sx - yhat * sy, xhat * sx + yhat * sy, -xhat * sx + yhat * sy];
    if (yhat / xhat).im < 0.0 {
        corners.reverse();
    }
    let (x, w) = gauss_legendre::<f64>(64);
    let mut tot = 0.0;
    for k in 0..4 {
        let (p, q) = (corners[k], corners[(k + 1) % 4]);
        let du = (q - p) / 2.0;
        let nds = -C64::i() * du;
        for (xi, wi) in x.iter().zip(&w) {
            let u = (p + q) / 2.0 + du * *xi;
            tot += wi * green_derivative(v1, u) * (v2 * nds.conj()).re;
        }
    }
    tot / PI
}

/// Cov(pattern p1 at the origin, pattern p2 translated by x).
pub fn pattern_covariance(t: &KernelTable, g: &GraphSpec, p1: &Pattern, p2: &Pattern, p1bar: f64, p2bar: f64, x: (i64, i64)) -> Result<f64> {
    let q = p2.translate(x);
    Ok(joint_probability(t, g, &[p1.clone(), q])? - p1bar * p2bar)
}

/// Covariance of two single-edge patterns as a function of the offset,
/// straight from the kernel table.
struct EdgeCov<'a> {
    t: &'a KernelTable,
    k1: C64,
    k2: C64,
    e1: (usize, usize, (i64, i64)),
    e2: (usize, usize, (i64, i64)),
    p1: f64,
    same: bool,
    t11: C64,
    t22: C64,
}

impl<'a> EdgeCov<'a> {
    fn new(t: &'a KernelTable, g: &GraphSpec, a: usize, b: usize) -> Result<Self> {
        let (ea, eb) = (&g.edges[a], &g.edges[b]);
        let t11 = t.get(ea.black, ea.white, ea.offset.0, ea.offset.1)?;
        let t22 = t.get(eb.black, eb.white, eb.offset.0, eb.offset.1)?;
        Ok(Self {
            t,
            k1: ea.kasteleyn(),
            k2: eb.kasteleyn(),
            e1: (ea.white, ea.black, ea.offset),
            e2: (eb.white, eb.black, eb.offset),
            p1: (ea.kasteleyn() * t11).re,
            same: a == b,
            t11,
            t22,
        })
    }

    fn reach(&self) -> i64 {
        [self.e1.2 .0, self.e1.2 .1, self.e2.2 .0, self.e2.2 .1].iter().map(|v| v.abs()).max().unwrap()
    }

    fn cov(&self, x: i64, y: i64) -> f64 {
        if self.same && x == 0 && y == 0 {
            return self.p1 * (1.0 - self.p1);
        }
        let (w1, b1, o1) = self.e1;
        let (w2, b2, o2) = self.e2;
        // K⁻¹(b1, w2_x) and K⁻¹(b2_x, w1)
        let k12 = self.t.at(b1, w2, o1.0 - x, o1.1 - y);
        let k21 = self.t.at(b2, w1, x + o2.0, y + o2.1);
        (self.k1 * self.k2 * (self.t11 * self.t22 - k12 * k21)).re - (self.k1 * self.t11).re * (self.k2 * self.t22).re
    }
}

enum CovSource<'a> {
    Edges(EdgeCov<'a>),
    Patterns { t: &'a KernelTable, g: &'a GraphSpec, p1: Pattern, p2: Pattern, b1: f64, b2: f64, reach: i64 },
}

impl<'a> CovSource<'a> {
    fn new(t: &'a KernelTable, g: &'a GraphSpec, p1: &Pattern, p2: &Pattern) -> Result<Self> {
        if p1.edges.len() == 1 && p2.edges.len() == 1 && p1.edges[0].offset == (0, 0) && p2.edges[0].offset == (0, 0) {
            return Ok(CovSource::Edges(EdgeCov::new(t, g, p1.edges[0].edge, p2.edges[0].edge)?));
        }
        let b1 = joint_probability(t, g, std::slice::from_ref(p1))?;
        let b2 = joint_probability(t, g, std::slice::from_ref(p2))?;
        let reach = p1
            .edges
            .iter()
            .chain(&p2.edges)
            .map(|e| {
                let o = g.edges[e.edge].offset;
                (e.offset.0.abs() + o.0.abs()).max(e.offset.1.abs() + o.1.abs())
            })
            .max()
            .unwrap_or(0)
            * 2;
        Ok(CovSource::Patterns { t, g, p1: p1.clone(), p2: p2.clone(), b1, b2, reach })
    }

    fn reach(&self) -> i64 {
        match self {
            CovSource::Edges(e) => e.reach(),
            CovSource::Patterns { reach, .. } => *reach,
        }
    }

    fn cov(&self, x: i64, y: i64) -> f64 {
        match self {
            CovSource::Edges(e) => e.cov(x, y),
            CovSource::Patterns { t, g, p1, p2, b1, b2, .. } => {
                pattern_covariance(t, g, p1, p2, *b1, *b2, (x, y)).unwrap_or(f64::NAN)
            }
        }
    }
}

/// Σ_x Cov(p1, p2_x) ψ(ε u_x), u_x the lattice vector of x in the phase's embedding.
pub fn covariance_lattice_sum(
    t: &KernelTable,
    g: &GraphSpec,
    s: &SpectralData,
    p1: &Pattern,
    p2: &Pattern,
    psi: &TestFunction,
    eps: f64,
) -> Result<f64> {
    match s.phase {
        Phase::LiquidNongeneric => return Err(Error::Resonant("sum diverges as log(1/eps)".into())),
        Phase::Solid => return Err(Error::Phase("solid phase".into())),
        _ => {}
    }
    if matches!(psi, TestFunction::Zero) {
        return Ok(0.0);
    }
    let emb = Embedding::for_phase(s, g)?;
    let src = CovSource::new(t, g, p1, p2)?;
    // lattice extent needed to cover the support of ψ(ε ·)
    let e1 = emb.lattice(g, 1, 0);
    let e2 = emb.lattice(g, 0, 1);
    let c = psi.center();
    let reach_u = ((c[0] * c[0] + c[1] * c[1]).sqrt() + psi.support_radius()) / eps;
    let det = (e1.conj() * e2).im.abs();
    let rx = (reach_u * e2.norm() / det).ceil() as i64 + 1;
    let ry = (reach_u * e1.norm() / det).ceil() as i64 + 1;
    let need = rx.max(ry) + src.reach();
    if need > t.radius {
        return Err(Error::Precondition(format!("kernel radius {} below required {need}", t.radius)));
    }
    let rows: Vec<f64> = (-ry..=ry)
        .into_par_iter()
        .map(|y| {
            let mut acc = 0.0;
            for x in -rx..=rx {
                let u = (e1 * x as f64 + e2 * y as f64) * eps;
                let v = psi.eval([u.re, u.im]);
                if v != 0.0 {
                    acc += src.cov(x, y) * v;
                }
            }
            acc
        })
        .collect();
    Ok(rows.iter().sum())
}

/// Predicted limit of `covariance_lattice_sum`: A ψ(0) plus the Green term in the liquid phase.
pub fn predicted_lattice_limit(a: f64, d1: Option<C64>, d2: Option<C64>, psi: &TestFunction) -> f64 {
    let base = a * psi.eval([0.0, 0.0]);
    match (d1, d2) {
        (Some(v1), Some(v2)) => base + gff_point_term(v1, v2, psi),
        _ => base,
    }
}

/// F = ∬ log|P| on an N × N midpoint torus grid.
pub fn free_energy(s: &SpectralData, grid: usize) -> f64 {
    let h = 2.0 * PI / grid as f64;
    let rows: Vec<f64> = (0..grid)
        .into_par_iter()
        .map(|j| {
            let w = C64::from_polar(1.0, (j as f64 + 0.5) * h);
            (0..grid)
                .map(|k| s.p.eval(C64::from_polar(1.0, (k as f64 + 0.5) * h), w).norm().ln())
                .sum::<f64>()
        })
        .collect();
    rows.iter().sum::<f64>() / (grid * grid) as f64
}

pub const GASEOUS_GRID: usize = 256;
pub const FD_STEP: f64 = 1e-3;
pub const HESSIAN_TOL: f64 = 1e-6;

/// ∂²F/∂log K_i ∂log K_j for all edge classes, from the torus integrand
/// δ_ij K_i (Q/P)_{b_i w_i} - K_i K_j (Q/P)_{b_i w_j} (Q/P)_{b_j w_i}.
pub fn gaseous_hessian(g: &GraphSpec, s: &SpectralData, grid: usize) -> DMatrix<f64> {
    let ne = g.edges.len();
    let h = 2.0 * PI / grid as f64;
    let parts: Vec<(DMatrix<f64>, Vec<f64>)> = (0..grid)
        .into_par_iter()
        .map(|j| {
            let w = C64::from_polar(1.0, (j as f64 + 0.5) * h);
            let mut acc = DMatrix::zeros(ne, ne);
            let mut first = vec![0.0; ne];
            for k in 0..grid {
                let z = C64::from_polar(1.0, (k as f64 + 0.5) * h);
                let p = s.p_at(z, w);
                let q = s.q_at(z, w);
                let kv: Vec<C64> = g.edges.iter().map(|e| e.kasteleyn_at(z, w)).collect();
                for (a, ea) in g.edges.iter().enumerate() {
                    let d = (kv[a] * q[(ea.black, ea.white)] / p).re;
                    first[a] += d;
                    acc[(a, a)] += d;
                    for (b, eb) in g.edges.iter().enumerate() {
                        acc[(a, b)] -= (kv[a] * kv[b] * q[(ea.black, eb.white)] * q[(eb.black, ea.white)] / (p * p)).re;
                    }
                }
            }
            (acc, first)
        })
        .collect();
    let mut m = DMatrix::zeros(ne, ne);
    for (a, _) in &parts {
        m += a;
    }
    m / (grid * grid) as f64
}

/// Edge probabilities ∂F/∂log K_e from the same torus grid.
pub fn gaseous_probabilities(g: &GraphSpec, s: &SpectralData, grid: usize) -> Vec<f64> {
    let h = 2.0 * PI / grid as f64;
    let mut out = vec![0.0; g.edges.len()];
    for j in 0..grid {
        let w = C64::from_polar(1.0, (j as f64 + 0.5) * h);
        for k in 0..grid {
            let z = C64::from_polar(1.0, (k as f64 + 0.5) * h);
            let p = s.p_at(z, w);
            let q = s.q_at(z, w);
            for (a, e) in g.edges.iter().enumerate() {
                out[a] += (e.kasteleyn_at(z, w) * q[(e.black, e.white)] / p).re;
            }
        }
    }
    out.iter().map(|v| v / (grid * grid) as f64).collect()
}

fn free_energy_at(g: &GraphSpec, shifts: &[(usize, f64)], grid: usize) -> Result<f64> {
    let mut h = g.clone();
    for &(e, d) in shifts {
        h = h.with_weight(e, h.edges[e].weight * d.exp())?;
    }
    let s = build_spectral(&h)?;
    Ok(free_energy(&s, grid))
}

/// Central (or mixed) second difference of F in log-weights.
pub fn free_energy_hessian_fd(g: &GraphSpec, i: usize, j: usize, grid: usize, step: f64) -> Result<f64> {
    if i == j {
        let f0 = free_energy_at(g, &[], grid)?;
        let fp = free_energy_at(g, &[(i, step)], grid)?;
        let fm = free_energy_at(g, &[(i, -step)], grid)?;
        Ok((fp - 2.0 * f0 + fm) / (step * step))
    } else {
        let fpp = free_energy_at(g, &[(i, step), (j, step)], grid)?;
        let fpm = free_energy_at(g, &[(i, step), (j, -step)], grid)?;
        let fmp = free_energy_at(g, &[(i, -step), (j, step)], grid)?;
        let fmm = free_energy_at(g, &[(i, -step), (j, -step)], grid)?;
        Ok((fpp - fpm - fmp + fmm) / (4.0 * step * step))
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GaseousAmplitude {
    pub value: f64,
    pub finite_difference: f64,
    pub mismatch: f64,
    pub probability: f64,
}

/// A_{e_i e_j} = ∂²F/∂log K_i ∂log K_j, by integrand and by finite differences.
pub fn white_noise_gaseous_pair(g: &GraphSpec, s: &SpectralData, i: usize, j: usize) -> Result<GaseousAmplitude> {
    if s.phase != Phase::Gaseous {
        return Err(Error::Phase(format!("white_noise_gaseous needs a gaseous phase, got {}", s.phase)));
    }
    let hess = gaseous_hessian(g, s, GASEOUS_GRID);
    let probs = gaseous_probabilities(g, s, GASEOUS_GRID);
    let fd = free_energy_hessian_fd(g, i, j, GASEOUS_GRID, FD_STEP)?;
    let value = hess[(i, j)];
    let mismatch = (value - fd).abs();
    if mismatch > HESSIAN_TOL {
        return Err(Error::Convergence(format!(
            "integrand {value} and finite-difference {fd} amplitudes differ by {mismatch:e}"
        )));
    }
    Ok(GaseousAmplitude { value, finite_difference: fd, mismatch, probability: probs[i] })
}

pub fn white_noise_gaseous(g: &GraphSpec, s: &SpectralData, e: usize) -> Result<GaseousAmplitude> {
    white_noise_gaseous_pair(g, s, e, e)
}

/// Σ_x Cov(p1, p2_x) by a plain box sum; converges exponentially off the spectral curve.
pub fn gaseous_pattern_amplitude(t: &KernelTable, g: &GraphSpec, p1: &Pattern, p2: &Pattern) -> Result<f64> {
    let src = CovSource::new(t, g, p1, p2)?;
    let m = (t.radius - src.reach()).min(64);
    if m < 16 {
        return Err(Error::Precondition(format!("kernel radius {} too small for box sums", t.radius)));
    }
    let sums = box_sums(|x, y| src.cov(x, y), m, (1, 1));
    Ok(sums[m as usize])
}

#[derive(Clone, Debug)]
pub struct LiquidOptions {
    /// Box half-sides in units of x̂ and ŷ per unit of M.
    pub aspect: (i64, i64),
    /// Number of consecutive M values averaged against lattice oscillations.
    pub window: usize,
    /// Largest M used; defaults to the table reach.
    pub m_max: Option<i64>,
}

impl Default for LiquidOptions {
    fn default() -> Self {
        Self { aspect: (1, 1), window: 12, m_max: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LiquidAmplitude {
    pub value: f64,
    pub contour: f64,
    pub lattice: f64,
    pub spread: f64,
    pub m_max: i64,
    pub dipoles: (C64, C64),
}

/// Partial sums S(M) = Σ over the box |x| ≤ ax M, |y| ≤ ay M, for M = 0..=m_max.
fn box_sums(cov: impl Fn(i64, i64) -> f64 + Sync, m_max: i64, aspect: (i64, i64)) -> Vec<f64> {
    let (ax, ay) = aspect;
    let rings: Vec<f64> = (0..=m_max)
        .into_par_iter()
        .map(|m| {
            if m == 0 {
                return cov(0, 0);
            }
            let (xo, yo) = (ax * m, ay * m);
            let (xi, yi) = (ax * (m - 1), ay * (m - 1));
            let mut s = 0.0;
            for y in -yo..=yo {
                if y.abs() > yi {
                    for x in -xo..=xo {
                        s += cov(x, y);
                    }
                } else {
                    for x in (xi + 1)..=xo {
                        s += cov(x, y) + cov(-x, y);
                    }
                }
            }
            s
        })
        .collect();
    let mut out = Vec::with_capacity(rings.len());
    let mut acc = 0.0;
    for r in rings {
        acc += r;
        out.push(acc);
    }
    out
}

/// Richardson estimate (4 S̄(M) - S̄(M/2))/3 with window-averaged partial sums.
fn accelerate(sums: &[f64], m: usize, window: usize) -> f64 {
    let avg = |m: usize| {
        let lo = m + 1 - window.min(m);
        sums[lo..=m].iter().sum::<f64>() / (m + 1 - lo) as f64
    };
    (4.0 * avg(m) - avg(m / 2)) / 3.0
}

/// A = A₂ + A₁: accelerated box sums of Cov plus the boundary term of the box.
pub fn white_noise_liquid(
    t: &KernelTable,
    g: &GraphSpec,
    s: &SpectralData,
    geom: &DualGeometry,
    pa1: &PatternAnalysis,
    pa2: &PatternAnalysis,
    opts: &LiquidOptions,
) -> Result<LiquidAmplitude> {
    if s.phase != Phase::LiquidGeneric {
        return Err(Error::Phase(format!("white_noise_liquid needs liquid_generic, got {}", s.phase)));
    }
    let d1 = normalized_dipole(pa1, geom)?;
    let d2 = normalized_dipole(pa2, geom)?;
    let src = CovSource::new(t, g, &pa1.pattern, &pa2.pattern)?;
    let (ax, ay) = opts.aspect;
    let limit = (t.radius - src.reach()) / ax.max(ay);
    let m_max = opts.m_max.unwrap_or(limit).min(limit);
    if m_max < 8 * opts.window as i64 {
        return Err(Error::Precondition(format!("kernel radius {} too small for box sums", t.radius)));
    }
    let sums = box_sums(|x, y| src.cov(x, y), m_max, opts.aspect);
    let m = m_max as usize;
    let a2 = accelerate(&sums, m, opts.window);
    let spread = [m * 3 / 4, m * 7 / 8]
        .iter()
        .map(|&mm| (accelerate(&sums, mm, opts.window) - a2).abs())
        .fold(0.0, f64::max);
    let a1 = contour_term(d1, d2, geom.xhat * geom.nu, geom.yhat * geom.nu, ax as f64, ay as f64);
    let scale = a2.abs().max(a1.abs()).max(1e-12);
    if spread > 1e-2 * scale {
        return Err(Error::Convergence(format!(
            "box sums not converged: spread {spread:e} across M windows, A2 {a2}, M {m_max}"
        )));
    }
    Ok(LiquidAmplitude { value: a2 + a1, contour: a1, lattice: a2, spread, m_max, dipoles: (d1, d2) })
}

/// abcd / (8π R² Area) for Z² weights, with the cyclic-quadrilateral area and circumradius.
pub fn z2_closed_form(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let prod = (-a + b + c + d) * (a - b + c + d) * (a + b - c + d) * (a + b + c - d);
    let area = 0.25 * prod.sqrt();
    let r2 = (a * b + c * d) * (a * c + b * d) * (a * d + b * c) / prod;
    a * b * c * d / (8.0 * PI * r2 * area)
}

/// Σ_{|x| ≤ M} K⁻¹(x,y) K⁻¹(-x,-y) for a graph with one vertex of each color.
pub fn strip_sum_identity(s: &SpectralData, y: i64, m: i64) -> Result<C64> {
    if s.n != 1 {
        return Err(Error::Precondition("strip identity applies to graphs with n = 1".into()));
    }
    let r1 = strip_row(s, 0, 0, y, m)?;
    let r2 = strip_row(s, 0, 0, -y, m)?;
    let n = r1.len();
    Ok((0..n).map(|i| r1[i] * r2[n - 1 - i]).sum())
}

/// Σ over m-cycles γ of Π 1/(u_{γ(i)} - u_i), with the largest single-cycle modulus.
pub fn cycle_cancellation(u: &[C64]) -> Result<(C64, f64)> {
    let m = u.len();
    if !(3..=9).contains(&m) {
        return Err(Error::Precondition(format!("cycle sum needs 3 ≤ m ≤ 9, got {m}")));
    }
    for i in 0..m {
        for j in 0..i {
            if u[i] == u[j] {
                return Err(Error::Precondition("entries must be pairwise distinct".into()));
            }
        }
    }
    // cycles as sequences starting at 0: 0 -> p1 -> ... -> p_{m-1} -> 0
    let mut rest: Vec<usize> = (1..m).collect();
    let mut total = C64::new(0.0, 0.0);
    let mut largest = 0.0f64;
    fn permute(k: usize, rest: &mut Vec<usize>, u: &[C64], total: &mut C64, largest: &mut f64) {
        if k == rest.len() {
            let mut prod = C64::new(1.0, 0.0);
            let mut cur = 0;
            for &nx in rest.iter() {
                prod /= u[nx] - u[cur];
                cur = nx;
            }
            prod /= u[0] - u[cur];
            *total += prod;
            *largest = largest.max(prod.norm());
            return;
        }
        for i in k..rest.len() {
            rest.swap(k, i);
            permute(k + 1, rest, u, total, largest);
            rest.swap(k, i);
        }
    }
    permute(0, &mut rest, u, &mut total, &mut largest);
    Ok((total, largest))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeMethod {
    ClosedForm,
    LatticeSum,
    FreeEnergyHessian,
}

/// Σ_i Σ_j A_{e_i e_j} over the edges at one vertex, relative to max |A|.
pub fn cross_pattern_sum_rule(amps: &DMatrix<f64>, methods: &[AmplitudeMethod]) -> Result<f64> {
    if amps.nrows() < 2 {
        return Err(Error::Precondition("a matchable vertex has degree at least 2".into()));
    }
    if methods.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Precondition("mixed-method amplitude matrix".into()));
    }
    let max = amps.iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(amps.sum().abs() / max)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EllipticConvention {
    pub convention: String,
    pub k_series: f64,
    pub k_parameter: f64,
    pub k_modulus: f64,
}

/// Decides whether K(16/25) means parameter m = 16/25 or modulus k = 16/25 by
/// matching the square-octagon connector probability from the series.
pub fn elliptic_convention() -> EllipticConvention {
    let (_, f1, _) = square_octagon_series_derivatives(0.0);
    let k_series = (0.5 - f1) * 5.0 * PI / 3.0;
    let (k_parameter, _) = elliptic_ke(16.0f64 / 25.0);
    let (k_modulus, _) = elliptic_ke((16.0f64 / 25.0).powi(2));
    let convention = if (k_parameter - k_series).abs() < (k_modulus - k_series).abs() {
        "parameter m = 16/25"
    } else {
        "modulus k = 16/25"
    };
    EllipticConvention { convention: convention.into(), k_series, k_parameter, k_modulus }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AmplitudeEntry {
    pub p1: String,
    pub p2: String,
    pub gff_coefficient: f64,
    pub dipole1: Option<C64>,
    pub dipole2: Option<C64>,
    pub white_noise: f64,
    pub method: AmplitudeMethod,
    pub error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AmplitudeReport {
    pub version: String,
    pub graph: String,
    pub graph_hash: String,
    pub phase: String,
    pub elliptic: Option<EllipticConvention>,
    pub entries: Vec<AmplitudeEntry>,
}

impl AmplitudeReport {
    pub fn new(g: &GraphSpec, s: &SpectralData) -> Self {
        Self {
            version: VERSION.to_string(),
            graph: g.name.clone(),
            graph_hash: g.hash(),
            phase: s.phase.to_string(),
            elliptic: None,
            entries: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Diagonal entries must be nonnegative up to their error estimate.
    pub fn check_diagonal(&self, tol: f64) -> Result<()> {
        for e in &self.entries {
            if e.p1 == e.p2 && e.white_noise < -(tol + e.error) {
                return Err(Error::Convergence(format!("negative diagonal amplitude for {}", e.p1)));
            }
        }
        Ok(())
    }
}

/// Amplitude entry for two patterns by the phase's primary method.
pub fn pattern_amplitude(t: &KernelTable, g: &GraphSpec, s: &SpectralData, p1: &Pattern, p2: &Pattern) -> Result<AmplitudeEntry> {
    let name = |p: &Pattern| {
        p.edges
            .iter()
            .map(|e| format!("{}@{},{}", g.edges[e.edge].id, e.offset.0, e.offset.1))
            .collect::<Vec<_>>()
            .join("+")
    };
    let single = |p: &Pattern| (p.edges.len() == 1 && p.edges[0].offset == (0, 0)).then(|| p.edges[0].edge);
    match s.phase {
        Phase::Gaseous => {
            let (value, method, error) = match (single(p1), single(p2)) {
                (Some(i), Some(j)) => {
                    let a = white_noise_gaseous_pair(g, s, i, j)?;
                    (a.value, AmplitudeMethod::FreeEnergyHessian, a.mismatch)
                }
                _ => (gaseous_pattern_amplitude(t, g, p1, p2)?, AmplitudeMethod::LatticeSum, 0.0),
            };
            Ok(AmplitudeEntry {
                p1: name(p1),
                p2: name(p2),
                gff_coefficient: 0.0,
                dipole1: None,
                dipole2: None,
                white_noise: value,
                method,
                error,
            })
        }
        Phase::LiquidGeneric => {
            let geom = crate::spectral::liquid_geometry(s, g)?;
            let pa1 = crate::correlations::pattern_probability(t, g, s, p1)?;
            let pa2 = crate::correlations::pattern_probability(t, g, s, p2)?;
            let a = white_noise_liquid(t, g, s, &geom, &pa1, &pa2, &LiquidOptions::default())?;
            Ok(AmplitudeEntry {
                p1: name(p1),
                p2: name(p2),
                gff_coefficient: 1.0 / PI,
                dipole1: Some(a.dipoles.0),
                dipole2: Some(a.dipoles.1),
                white_noise: a.value,
                method: AmplitudeMethod::LatticeSum,
                error: a.spread,
            })
        }
        Phase::LiquidNongeneric => Err(Error::Resonant("amplitudes diverge as log(1/eps)".into())),
        Phase::Solid => Err(Error::Phase("solid phase".into())),
    }
}

/// Edge-class amplitude matrix for a whole graph, by the phase's primary method.
pub fn edge_amplitudes(g: &GraphSpec, s: &SpectralData, t: Option<&KernelTable>) -> Result<AmplitudeReport> {
    let mut rep = AmplitudeReport::new(g, s);
    let ne = g.edges.len();
    match s.phase {
        Phase::Gaseous => {
            let hess = gaseous_hessian(g, s, GASEOUS_GRID);
            for i in 0..ne {
                for j in 0..ne {
                    rep.entries.push(AmplitudeEntry {
                        p1: g.edges[i].id.clone(),
                        p2: g.edges[j].id.clone(),
                        gff_coefficient: 0.0,
                        dipole1: None,
                        dipole2: None,
                        white_noise: hess[(i, j)],
                        method: AmplitudeMethod::FreeEnergyHessian,
                        error: 0.0,
                    });
                }
            }
            if g.name == "square_octagon" {
                rep.elliptic = Some(elliptic_convention());
            }
        }
        Phase::LiquidGeneric => {
            let t = t.ok_or_else(|| Error::Precondition("liquid amplitudes need a kernel table".into()))?;
            let geom = crate::spectral::liquid_geometry(s, g)?;
            let pas: Vec<PatternAnalysis> = (0..ne)
                .map(|e| crate::correlations::pattern_probability(t, g, s, &Pattern::single(e, g)))
                .collect::<Result<_>>()?;
            for i in 0..ne {
                for j in 0..ne {
                    let a = white_noise_liquid(t, g, s, &geom, &pas[i], &pas[j], &LiquidOptions::default())?;
                    rep.entries.push(AmplitudeEntry {
                        p1: g.edges[i].id.clone(),
                        p2: g.edges[j].id.clone(),
                        gff_coefficient: 1.0 / PI,
                        dipole1: Some(a.dipoles.0),
                        dipole2: Some(a.dipoles.1),
                        white_noise: a.value,
                        method: AmplitudeMethod::LatticeSum,
                        error: a.spread,
                    });
                }
            }
        }
        Phase::LiquidNongeneric => {
            return Err(Error::Resonant("amplitudes diverge as log(1/eps)".into()))
        }
        Phase::Solid => return Err(Error::Phase("solid phase".into())),
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::square_octagon;

    #[test]
    fn uniform_contour_term() {
        let (xh, yh) = (C64::new(1.0, -1.0), C64::new(1.0, 1.0));
        let e = C64::new(0.0, 1.0);
        let a1 = contour_term(e, e, xh, yh, 1.0, 1.0);
        assert!((a1 + 1.0 / (2.0 * PI)).abs() < 1e-12, "{a1}");
        // box scale does not matter, |v|² does
        let half = contour_term(e * 0.5f64.sqrt(), e * 0.5f64.sqrt(), xh * 3.0, yh * 3.0, 1.0, 1.0);
        assert!((half - a1 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn disk_limit_of_point_term() {
        // radial ψ: (1/π)∫ ∂_vG ∂_vψ = |v|² ψ(0) / 2π
        let psi = TestFunction::bump([0.0, 0.0], 1.0);
        let v = C64::new(0.3, 0.4);
        assert!((gff_point_term(v, v, &psi) - 0.25 / (2.0 * PI)).abs() < 1e-8);
    }

    #[test]
    fn closed_form_uniform() {
        assert!((z2_closed_form(1.0, 1.0, 1.0, 1.0) - 1.0 / (4.0 * PI)).abs() < 1e-15);
        assert_eq!(z2_closed_form(1.0, 1.0, 1.0, 0.0), 0.0);
    }

    #[test]
    fn three_cycles_cancel() {
        let u = [C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 1.0)];
        let (s, _) = cycle_cancellation(&u).unwrap();
        assert!(s.norm() < 1e-15);
        assert!(cycle_cancellation(&[u[0], u[1], u[1]]).is_err());
    }

    #[test]
    fn parameter_convention_selected() {
        let c = elliptic_convention();
        assert_eq!(c.convention, "parameter m = 16/25");
        assert!((c.k_series - c.k_parameter).abs() < 1e-12);
    }

    #[test]
    fn square_octagon_hessian_rows_sum_to_zero() {
        let g = square_octagon(0.0).unwrap();
        let s = build_spectral(&g).unwrap();
        let h = gaseous_hessian(&g, &s, 64);
        // Σ_j over edges at a vertex of ∂²F vanishes: rescaling a vertex is a gauge
        for w in 0..4 {
            let inc = g.incident(crate::graph::Color::White, w);
            for i in 0..g.edges.len() {
                let r: f64 = inc.iter().map(|&j| h[(i, j)]).sum();
                assert!(r.abs() < 1e-12);
            }
        }
    }
}
