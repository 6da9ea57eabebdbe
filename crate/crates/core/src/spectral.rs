//! Spectral data: K(z,w), P = det K, Q = adj K, torus roots, phase, and the
//! liquid frame.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::{Color, GraphSpec, VertexRef};
use crate::laurent::{self, Laurent2};
use crate::{c, C64};

/// Largest fundamental domain handled by exact cofactor expansion.
pub const EXACT_MAX_N: usize = 6;
pub const ROOT_TOL: f64 = 1e-10;
pub const DOUBLE_TOL: f64 = 1e-6;
pub const DEFAULT_SCAN_GRID: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Solid,
    LiquidGeneric,
    LiquidNongeneric,
    Gaseous,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Solid => "solid",
            Phase::LiquidGeneric => "liquid_generic",
            Phase::LiquidNongeneric => "liquid_nongeneric",
            Phase::Gaseous => "gaseous",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TorusRoot {
    pub theta: f64,
    pub phi: f64,
    pub z: C64,
    pub w: C64,
    pub residual: f64,
    /// Norm of the angular gradient of P at the root.
    pub grad_norm: f64,
    /// |det| of the real 2x2 Jacobian of P: T² → C at the root.
    pub jacobian: f64,
    pub double: bool,
}

#[derive(Clone, Debug)]
pub struct LiquidData {
    pub z0: C64,
    pub w0: C64,
    pub alpha: C64,
    pub beta: C64,
    pub xhat: C64,
    pub yhat: C64,
    /// Q(z0, w0), indexed [black][white].
    pub q0: DMatrix<C64>,
}

#[derive(Clone, Debug)]
pub struct SpectralData {
    pub n: usize,
    pub kmat: Vec<Vec<Laurent2>>,
    pub p: Laurent2,
    /// Q[b][w] with Q K = P Id.
    pub q: Vec<Vec<Laurent2>>,
    pub exact: bool,
    pub roots: Vec<TorusRoot>,
    pub phase: Phase,
    pub liquid: Option<LiquidData>,
    pub min_abs_p: f64,
    pub argmin: (f64, f64),
    /// Winding numbers of P in z and w when there are no torus roots.
    pub winding: Option<(i32, i32)>,
    pub note: Option<String>,
}

impl SpectralData {
    pub fn k_at(&self, z: C64, w: C64) -> DMatrix<C64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.kmat[i][j].eval(z, w))
    }

    pub fn p_at(&self, z: C64, w: C64) -> C64 {
        self.p.eval(z, w)
    }

    /// Q(z, w) indexed [black][white].
    pub fn q_at(&self, z: C64, w: C64) -> DMatrix<C64> {
        DMatrix::from_fn(self.n, self.n, |b, wi| self.q[b][wi].eval(z, w))
    }

    pub fn p_scale(&self) -> f64 {
        self.p.scale()
    }

    pub fn liquid(&self) -> Result<&LiquidData> {
        self.liquid
            .as_ref()
            .ok_or_else(|| Error::Precondition(format!("phase is {}, not liquid_generic", self.phase)))
    }
}

fn unit(t: f64) -> C64 {
    c(t.cos(), t.sin())
}

/// Numeric Laurent interpolation of a torus function with known exponent box.
fn interpolate(
    f: impl Fn(C64, C64) -> C64,
    zr: (i32, i32),
    wr: (i32, i32),
) -> Laurent2 {
    let nz = (zr.1 - zr.0 + 1) as usize;
    let nw = (wr.1 - wr.0 + 1) as usize;
    let shift = 0.318_309_886;
    let mut out = Laurent2::zero();
    let vals: Vec<Vec<C64>> = (0..nz)
        .map(|j| {
            (0..nw)
                .map(|k| {
                    let z = unit(2.0 * PI * (j as f64 + shift) / nz as f64);
                    let w = unit(2.0 * PI * (k as f64 + shift) / nw as f64);
                    f(z, w)
                })
                .collect()
        })
        .collect();
    for a in zr.0..=zr.1 {
        for b in wr.0..=wr.1 {
            let mut s = C64::new(0.0, 0.0);
            for (j, row) in vals.iter().enumerate() {
                for (k, v) in row.iter().enumerate() {
                    let z = unit(2.0 * PI * (j as f64 + shift) / nz as f64);
                    let w = unit(2.0 * PI * (k as f64 + shift) / nw as f64);
                    s += v * z.powi(-a) * w.powi(-b);
                }
            }
            s /= (nz * nw) as f64;
            out = &out + &Laurent2::monomial(s, a, b);
        }
    }
    out.pruned(1e-13)
}

fn build_polynomials(g: &GraphSpec) -> (Vec<Vec<Laurent2>>, Laurent2, Vec<Vec<Laurent2>>, bool) {
    let kmat = g.kasteleyn_laurent();
    let n = g.n;
    if n <= EXACT_MAX_N {
        let p = laurent::det(&kmat);
        let q = laurent::adjugate(&kmat);
        return (kmat, p, q, true);
    }
    // exponent box: sum over rows of per-row extremes
    let mut zr = (0, 0);
    let mut wr = (0, 0);
    for row in &kmat {
        let (mut zl, mut zh, mut wl, mut wh) = (i32::MAX, i32::MIN, i32::MAX, i32::MIN);
        for e in row {
            if let (Some(a), Some(b)) = (e.z_range(), e.w_range()) {
                zl = zl.min(a.0);
                zh = zh.max(a.1);
                wl = wl.min(b.0);
                wh = wh.max(b.1);
            }
        }
        zr = (zr.0 + zl, zr.1 + zh);
        wr = (wr.0 + wl, wr.1 + wh);
    }
    let kat = |z: C64, w: C64| DMatrix::from_fn(n, n, |i, j| kmat[i][j].eval(z, w));
    let p = interpolate(|z, w| kat(z, w).determinant(), zr, wr);
    let mut q = vec![vec![Laurent2::zero(); n]; n];
    for (b, row) in q.iter_mut().enumerate() {
        for (wi, entry) in row.iter_mut().enumerate() {
            *entry = interpolate(
                |z, w| {
                    let m = kat(z, w);
                    let minor = m.clone().remove_row(wi).remove_column(b);
                    let s = if (b + wi) % 2 == 0 { 1.0 } else { -1.0 };
                    minor.determinant() * s
                },
                zr,
                wr,
            );
        }
    }
    (kmat, p, q, false)
}

/// Builds K, P, Q, scans for torus roots and classifies the phase.
pub fn build_spectral(g: &GraphSpec) -> Result<SpectralData> {
    build_spectral_with(g, DEFAULT_SCAN_GRID, ROOT_TOL)
}

pub fn build_spectral_with(g: &GraphSpec, grid: usize, tol: f64) -> Result<SpectralData> {
    let (kmat, p, q, exact) = build_polynomials(g);
    let mut s = SpectralData {
        n: g.n,
        kmat,
        p,
        q,
        exact,
        roots: Vec::new(),
        phase: Phase::Solid,
        liquid: None,
        min_abs_p: 0.0,
        argmin: (0.0, 0.0),
        winding: None,
        note: None,
    };
    if s.p.is_zero() {
        s.note = Some("P vanishes identically".into());
        return Ok(s);
    }
    let (roots, min_abs, argmin) = find_torus_roots(&s, grid, tol)?;
    s.roots = roots;
    s.min_abs_p = min_abs;
    s.argmin = argmin;
    s.phase = classify_phase(&mut s)?;
    if s.phase == Phase::LiquidGeneric {
        s.liquid = Some(select_direct_root(&s)?);
    }
    Ok(s)
}

/// Grid scan of |P| followed by damped Gauss-Newton in the torus angles.
pub fn find_torus_roots(s: &SpectralData, grid: usize, tol: f64) -> Result<(Vec<TorusRoot>, f64, (f64, f64))> {
    if grid < 64 {
        return Err(Error::Precondition("root scan grid must be at least 64".into()));
    }
    let scale = s.p.scale();
    let h = 2.0 * PI / grid as f64;
    let mut vals = vec![0.0; grid * grid];
    let mut min_abs = f64::INFINITY;
    let mut argmin = (0.0, 0.0);
    for j in 0..grid {
        for k in 0..grid {
            let (t, f) = (j as f64 * h, k as f64 * h);
            let v = s.p.eval(unit(t), unit(f)).norm();
            vals[j * grid + k] = v;
            if v < min_abs {
                min_abs = v;
                argmin = (t, f);
            }
        }
    }
    let mut seeds = Vec::new();
    for j in 0..grid {
        for k in 0..grid {
            let v = vals[j * grid + k];
            let mut is_min = true;
            'nb: for dj in [grid - 1, 0, 1] {
                for dk in [grid - 1, 0, 1] {
                    if dj == 0 && dk == 0 {
                        continue;
                    }
                    let u = vals[((j + dj) % grid) * grid + (k + dk) % grid];
                    if u < v {
                        is_min = false;
                        break 'nb;
                    }
                }
            }
            if is_min && v < 0.25 * scale {
                seeds.push((v, j as f64 * h, k as f64 * h));
            }
        }
    }
    seeds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    seeds.truncate(64);
    let mut roots: Vec<TorusRoot> = Vec::new();
    for &(_, t0, f0) in &seeds {
        if let Some(r) = refine_root(s, t0, f0, tol, scale) {
            if r.residual < min_abs {
                min_abs = r.residual;
                argmin = (r.theta, r.phi);
            }
            let dup = roots.iter().any(|q| {
                let d = |a: f64, b: f64| {
                    let x = (a - b).rem_euclid(2.0 * PI);
                    x.min(2.0 * PI - x)
                };
                d(q.theta, r.theta) < 1e-5 && d(q.phi, r.phi) < 1e-5
            });
            if !dup {
                roots.push(r);
            }
        }
    }
    roots.sort_by(|a, b| (a.theta, a.phi).partial_cmp(&(b.theta, b.phi)).unwrap());
    Ok((roots, min_abs, argmin))
}

fn refine_root(s: &SpectralData, mut t: f64, mut f: f64, tol: f64, scale: f64) -> Option<TorusRoot> {
    let mut lambda = 1e-12;
    for _ in 0..200 {
        let (z, w) = (unit(t), unit(f));
        let (p, pz, pw) = s.p.eval_grad(z, w);
        if p.norm() <= tol * 1e-3 {
            break;
        }
        let a = C64::i() * z * pz;
        let b = C64::i() * w * pw;
        // real 2x2 Gauss-Newton with Levenberg damping
        let j = [[a.re, b.re], [a.im, b.im]];
        let r = [p.re, p.im];
        let jtj = [
            [j[0][0] * j[0][0] + j[1][0] * j[1][0], j[0][0] * j[0][1] + j[1][0] * j[1][1]],
            [j[0][1] * j[0][0] + j[1][1] * j[1][0], j[0][1] * j[0][1] + j[1][1] * j[1][1]],
        ];
        let jtr = [j[0][0] * r[0] + j[1][0] * r[1], j[0][1] * r[0] + j[1][1] * r[1]];
        let mut accepted = false;
        for _ in 0..30 {
            let m = [[jtj[0][0] + lambda * scale * scale, jtj[0][1]], [jtj[1][0], jtj[1][1] + lambda * scale * scale]];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if det == 0.0 {
                lambda *= 10.0;
                continue;
            }
            let dt = -(m[1][1] * jtr[0] - m[0][1] * jtr[1]) / det;
            let df = -(-m[1][0] * jtr[0] + m[0][0] * jtr[1]) / det;
            let pn = s.p.eval(unit(t + dt), unit(f + df)).norm();
            if pn < p.norm() {
                t += dt;
                f += df;
                lambda = (lambda * 0.1).max(1e-16);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    let (z, w) = (unit(t), unit(f));
    let (p, pz, pw) = s.p.eval_grad(z, w);
    if p.norm() > tol {
        return None;
    }
    let grad = ((z * pz).norm_sqr() + (w * pw).norm_sqr()).sqrt();
    let jac = ((C64::i() * z * pz).conj() * (C64::i() * w * pw)).im.abs();
    Some(TorusRoot {
        theta: t.rem_euclid(2.0 * PI),
        phi: f.rem_euclid(2.0 * PI),
        z,
        w,
        residual: p.norm(),
        grad_norm: grad,
        jacobian: jac,
        // a real double point makes the two angular derivatives parallel
        double: grad < DOUBLE_TOL * scale || jac < DOUBLE_TOL * scale * scale,
    })
}

fn winding(f: impl Fn(f64) -> C64) -> i32 {
    let m = 4096;
    let mut total = 0.0;
    let mut prev = f(0.0);
    for k in 1..=m {
        let cur = f(2.0 * PI * k as f64 / m as f64);
        total += (cur / prev).arg();
        prev = cur;
    }
    (total / (2.0 * PI)).round() as i32
}

fn strictly_inside_hull(points: &[(i32, i32)], q: (i32, i32)) -> bool {
    let mut pts: Vec<(i64, i64)> = points.iter().map(|&(a, b)| (a as i64, b as i64)).collect();
    pts.sort();
    pts.dedup();
    if pts.len() < 3 {
        return false;
    }
    let cross = |o: (i64, i64), a: (i64, i64), b: (i64, i64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(i64, i64)> = Vec::new();
    for &p in pts.iter().chain(pts.iter().rev().skip(1)) {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    if hull.len() < 3 {
        return false;
    }
    let q = (q.0 as i64, q.1 as i64);
    (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], q) > 0)
}

/// Phase from the root structure; without roots, from the position of the
/// winding vector inside the Newton polygon.
pub fn classify_phase(s: &mut SpectralData) -> Result<Phase> {
    let roots = &s.roots;
    match roots.len() {
        0 => {
            let w_fix = unit(0.123_456_7);
            let z_fix = unit(0.765_432_1);
            let mz = winding(|t| s.p.eval(unit(t), w_fix));
            let mw = winding(|t| s.p.eval(z_fix, unit(t)));
            s.winding = Some((mz, mw));
            if strictly_inside_hull(&s.p.exponents(), (mz, mw)) {
                Ok(Phase::Gaseous)
            } else {
                s.note = Some(format!("no torus roots; winding ({mz},{mw}) lies on the Newton polygon boundary"));
                Ok(Phase::Solid)
            }
        }
        1 if roots[0].double => {
            s.note = Some("single double root on the torus (boundary of the liquid region)".into());
            Ok(Phase::LiquidNongeneric)
        }
        2 if !roots[0].double && !roots[1].double => {
            let (a, b) = (roots[0], roots[1]);
            if (a.z - b.z.conj()).norm() < 1e-6 && (a.w - b.w.conj()).norm() < 1e-6 {
                Ok(Phase::LiquidGeneric)
            } else {
                Err(Error::Phase("two simple roots that are not complex conjugate".into()))
            }
        }
        1 => Err(Error::Phase(
            "ambiguous: one root with nonvanishing gradient (liquid_generic vs liquid_nongeneric)".into(),
        )),
        2 => Err(Error::Phase(
            "ambiguous: nearly double roots (liquid_generic vs liquid_nongeneric)".into(),
        )),
        k => Err(Error::Phase(format!("ambiguous: {k} torus roots (liquid vs solid/degenerate)"))),
    }
}

fn liquid_at(s: &SpectralData, z0: C64, w0: C64) -> LiquidData {
    let (_, alpha, beta) = s.p.eval_grad(z0, w0);
    let xhat = C64::i() * z0 * alpha;
    let yhat = C64::i() * w0 * beta;
    LiquidData { z0, w0, alpha, beta, xhat, yhat, q0: s.q_at(z0, w0) }
}

fn select_direct_root(s: &SpectralData) -> Result<LiquidData> {
    for r in &s.roots {
        let l = liquid_at(s, r.z, r.w);
        if (l.yhat / l.xhat).im > 1e-12 {
            return Ok(l);
        }
    }
    Err(Error::Phase("no root satisfies the direct-frame condition".into()))
}

/// Per-edge dual vectors, crossing sums, and the unit-area normalization.
#[derive(Clone, Debug)]
pub struct DualGeometry {
    /// omega(e) = i K_e(z0,w0) Q_bw(z0,w0) per edge.
    pub omega: Vec<C64>,
    pub xhat: C64,
    pub yhat: C64,
    pub xhat_crossing: C64,
    pub yhat_crossing: C64,
    /// Unit-area normalization of the dual frame.
    pub nu: f64,
    /// Divergence at each white then each black fundamental-domain vertex.
    pub divergence: Vec<C64>,
    /// Linear map sending the realization periods to nu*xhat, nu*yhat.
    map: [[f64; 2]; 2],
}

impl DualGeometry {
    /// Normalized dual vector of an edge.
    pub fn e_star(&self, edge: usize) -> C64 {
        self.omega[edge] * self.nu
    }

    pub fn max_divergence(&self) -> f64 {
        self.divergence.iter().map(|d| d.norm()).fold(0.0, f64::max)
    }

    /// Image of a planar point under the period-matching linear map.
    pub fn map_point(&self, p: [f64; 2]) -> C64 {
        c(self.map[0][0] * p[0] + self.map[0][1] * p[1], self.map[1][0] * p[0] + self.map[1][1] * p[1])
    }

    pub fn vertex_position(&self, g: &GraphSpec, v: VertexRef) -> C64 {
        self.map_point(g.realization.position(v))
    }

    /// Lattice vector (x, y) in dual coordinates.
    pub fn lattice(&self, x: f64, y: f64) -> C64 {
        (self.xhat * x + self.yhat * y) * self.nu
    }
}

pub fn liquid_geometry(s: &SpectralData, g: &GraphSpec) -> Result<DualGeometry> {
    let l = s.liquid()?;
    let i = C64::i();
    let omega: Vec<C64> = g
        .edges
        .iter()
        .map(|e| i * e.kasteleyn_at(l.z0, l.w0) * l.q0[(e.black, e.white)])
        .collect();
    let mut divergence = vec![C64::new(0.0, 0.0); 2 * g.n];
    let mut xc = C64::new(0.0, 0.0);
    let mut yc = C64::new(0.0, 0.0);
    for (k, e) in g.edges.iter().enumerate() {
        divergence[e.white] += omega[k];
        divergence[g.n + e.black] += omega[k];
        xc -= omega[k] * e.offset.1 as f64;
        yc += omega[k] * e.offset.0 as f64;
    }
    let area = (l.xhat.conj() * l.yhat).im;
    if area <= 0.0 {
        return Err(Error::Phase("degenerate dual frame".into()));
    }
    let nu = 1.0 / area.sqrt();
    // map M with M T_x = nu xhat, M T_y = nu yhat
    let [tx, ty] = g.realization.periods;
    let (ax, ay) = (nu * l.xhat.re, nu * l.xhat.im);
    let (bx, by) = (nu * l.yhat.re, nu * l.yhat.im);
    let det = tx[0] * ty[1] - tx[1] * ty[0];
    let inv = [[ty[1] / det, -ty[0] / det], [-tx[1] / det, tx[0] / det]];
    let map = [
        [ax * inv[0][0] + bx * inv[1][0], ax * inv[0][1] + bx * inv[1][1]],
        [ay * inv[0][0] + by * inv[1][0], ay * inv[0][1] + by * inv[1][1]],
    ];
    Ok(DualGeometry {
        omega,
        xhat: l.xhat,
        yhat: l.yhat,
        xhat_crossing: xc,
        yhat_crossing: yc,
        nu,
        divergence,
        map,
    })
}

/// Planar embedding used for test-function placement: the dual geometry in the
/// liquid phase, the (unit-area) realization otherwise.
#[derive(Clone, Debug)]
pub enum Embedding {
    Realization,
    Dual(DualGeometry),
}

impl Embedding {
    pub fn for_phase(s: &SpectralData, g: &GraphSpec) -> Result<Self> {
        if s.phase == Phase::LiquidGeneric {
            Ok(Embedding::Dual(liquid_geometry(s, g)?))
        } else {
            Ok(Embedding::Realization)
        }
    }

    pub fn position(&self, g: &GraphSpec, v: VertexRef) -> C64 {
        match self {
            Embedding::Realization => {
                let p = g.realization.position(v);
                c(p[0], p[1])
            }
            Embedding::Dual(d) => d.vertex_position(g, v),
        }
    }

    pub fn lattice(&self, g: &GraphSpec, x: i64, y: i64) -> C64 {
        let o = self.position(g, VertexRef { color: Color::White, index: 0, offset: (0, 0) });
        self.position(g, VertexRef { color: Color::White, index: 0, offset: (x, y) }) - o
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{square_octagon, z2};

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn z2_polynomial() {
        let g = z2(2.0, 3.0, 5.0, 7.0).unwrap();
        let s = build_spectral(&g).unwrap();
        assert_eq!(s.p.coefficient(0, 0), c(2.0, 0.0));
        assert_eq!(s.p.coefficient(0, -1), c(3.0, 0.0));
        assert_eq!(s.p.coefficient(1, -1), c(-5.0, 0.0));
        assert_eq!(s.p.coefficient(1, 0), c(7.0, 0.0));
        assert_eq!(s.p.exponents().len(), 4);
    }

    #[test]
    fn square_octagon_polynomial_and_phase() {
        let g = square_octagon(0.0).unwrap();
        let s = build_spectral(&g).unwrap();
        assert_eq!(s.p.to_string(), "5 - z - w - w^-1 - z^-1");
        assert_eq!(s.phase, Phase::Gaseous);
        assert!((s.min_abs_p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn z2_uniform_frame() {
        let g = z2(1.0, 1.0, 1.0, 1.0).unwrap();
        let s = build_spectral(&g).unwrap();
        assert_eq!(s.phase, Phase::LiquidGeneric);
        let l = s.liquid().unwrap();
        assert!(close(l.z0, c(0.0, -1.0), 1e-10));
        assert!(close(l.w0, c(0.0, -1.0), 1e-10));
        assert!(close(l.xhat, c(1.0, -1.0), 1e-10));
        assert!(close(l.yhat, c(1.0, 1.0), 1e-10));
        let d = liquid_geometry(&s, &g).unwrap();
        assert!(close(d.omega[0], c(0.0, 1.0), 1e-10));
        assert!(d.max_divergence() < 1e-10);
        assert!(close(d.xhat_crossing, d.xhat, 1e-10));
        assert!(close(d.yhat_crossing, d.yhat, 1e-10));
        assert!((d.nu - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn boundary_weights_are_nongeneric() {
        let g = z2(3.0, 1.0, 1.0, 1.0).unwrap();
        let s = build_spectral(&g).unwrap();
        assert_eq!(s.phase, Phase::LiquidNongeneric);
    }

    #[test]
    fn dominant_weight_is_solid() {
        let g = z2(4.0, 1.0, 1.0, 1.0).unwrap();
        let s = build_spectral(&g).unwrap();
        assert!(s.roots.is_empty());
        assert_eq!(s.phase, Phase::Solid);
    }

    #[test]
    fn numeric_fallback_matches_exact() {
        let g = square_octagon(0.3).unwrap();
        let (_, p, q, _) = build_polynomials(&g);
        let kat = g.kasteleyn_laurent();
        let zr = (-1, 1);
        let wr = (-1, 1);
        let n = g.n;
        let pn = interpolate(
            |z, w| DMatrix::from_fn(n, n, |i, j| kat[i][j].eval(z, w)).determinant(),
            zr,
            wr,
        );
        let (z, w) = (unit(0.3), unit(1.1));
        assert!(close(p.eval(z, w), pn.eval(z, w), 1e-12));
        let _ = q;
    }
}
