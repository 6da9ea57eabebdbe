//! Inverse-Kasteleyn coefficients K⁻¹(b_x, w) on a window of lattice offsets.
//!
//! Two quadrature paths are provided. `fft_grid` samples Q/P on a midpoint
//! torus grid and transforms in both angles; it is spectrally accurate in the
//! gaseous phase. `strip` integrates the z-angle exactly by partial fractions
//! for every w on a uniform grid, then transforms in the w-angle with jump
//! corrections at the torus roots; it is the accurate path in the liquid phase.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::graph::{GraphSpec, VertexRef};
use crate::laurent::Laurent2;
use crate::special::sawtooth;
use crate::spectral::{Phase, SpectralData};
use crate::{c, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    FftGrid,
    Refined,
    Strip,
    Asymptotic,
}

impl Method {
    fn code(self) -> u8 {
        match self {
            Method::FftGrid => 0,
            Method::Refined => 1,
            Method::Strip => 2,
            Method::Asymptotic => 3,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => Method::FftGrid,
            1 => Method::Refined,
            2 => Method::Strip,
            3 => Method::Asymptotic,
            _ => return Err(Error::Parse(format!("unknown method code {c}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::FftGrid => "fft_grid",
            Method::Refined => "refined",
            Method::Strip => "strip",
            Method::Asymptotic => "asymptotic",
        }
    }
}

#[derive(Clone, Debug)]
pub struct KernelTable {
    pub n: usize,
    pub radius: i64,
    /// Grid size N (fft paths) or strip length L.
    pub grid: usize,
    pub method: Method,
    pub graph_hash: String,
    pub warning: Option<String>,
    data: Vec<C64>,
}

pub const DEFAULT_GASEOUS_GRID: usize = 256;
pub const DEFAULT_LIQUID_GRID: usize = 1024;

impl KernelTable {
    fn side(&self) -> usize {
        (2 * self.radius + 1) as usize
    }

    fn index(&self, b: usize, w: usize, x: i64, y: i64) -> usize {
        let s = self.side();
        ((b * self.n + w) * s + (y + self.radius) as usize) * s + (x + self.radius) as usize
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x.abs() <= self.radius && y.abs() <= self.radius
    }

    /// K⁻¹(b_{(x,y)}, w_{(0,0)}).
    pub fn get(&self, b: usize, w: usize, x: i64, y: i64) -> Result<C64> {
        if !self.contains(x, y) {
            return Err(Error::OutOfTable(x, y, self.radius));
        }
        Ok(self.data[self.index(b, w, x, y)])
    }

    /// Unchecked lookup; panics outside the window.
    pub fn at(&self, b: usize, w: usize, x: i64, y: i64) -> C64 {
        assert!(self.contains(x, y), "offset ({x},{y}) outside radius {}", self.radius);
        self.data[self.index(b, w, x, y)]
    }

    /// K⁻¹ between arbitrary translates, reduced to the offset difference.
    pub fn between(&self, black: VertexRef, white: VertexRef) -> Result<C64> {
        self.get(
            black.index,
            white.index,
            black.offset.0 - white.offset.0,
            black.offset.1 - white.offset.1,
        )
    }

    pub fn is_real(&self, tol: f64) -> bool {
        self.data.iter().all(|v| v.im.abs() <= tol)
    }

    /// Default table for the phase: fft grid when gaseous, strip when liquid.
    pub fn build(g: &GraphSpec, s: &SpectralData, radius: i64) -> Result<Self> {
        match s.phase {
            Phase::Solid => Err(Error::Phase("solid phase: kernel coefficients unsupported".into())),
            Phase::Gaseous => {
                let n = DEFAULT_GASEOUS_GRID.max((2 * radius as usize + 2).next_power_of_two());
                Self::fft_grid(g, s, n, radius)
            }
            Phase::LiquidGeneric | Phase::LiquidNongeneric => {
                let l = 4096usize.max((8 * radius as usize).next_power_of_two());
                Self::strip(g, s, radius, l)
            }
        }
    }

    /// Midpoint torus grid of size N x N, all offsets in the window in one pass.
    pub fn fft_grid(g: &GraphSpec, s: &SpectralData, n_grid: usize, radius: i64) -> Result<Self> {
        if s.phase == Phase::Solid {
            return Err(Error::Phase("solid phase: kernel coefficients unsupported".into()));
        }
        if 2 * radius as usize + 1 > n_grid {
            return Err(Error::Precondition(format!("radius {radius} needs grid > {}", 2 * radius)));
        }
        let n = s.n;
        let side = (2 * radius + 1) as usize;
        let mut data = vec![C64::new(0.0, 0.0); n * n * side * side];
        let grid = TorusGrid::new(s, n_grid);
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_inverse(n_grid);
        for b in 0..n {
            for w in 0..n {
                let block = grid.transform(&s.q[b][w], &fft, radius);
                let off = (b * n + w) * side * side;
                data[off..off + side * side].copy_from_slice(&block);
            }
        }
        let warning = (s.phase != Phase::Gaseous)
            .then(|| "fft grid in a liquid phase: first-order quadrature error".to_string());
        Ok(Self { n, radius, grid: n_grid, method: Method::FftGrid, graph_hash: g.hash(), warning, data })
    }

    /// Richardson combination of fft grids N, 2N, 4N assuming a/N + b/N² error.
    pub fn refined(g: &GraphSpec, s: &SpectralData, n_grid: usize, radius: i64) -> Result<Self> {
        let t1 = Self::fft_grid(g, s, n_grid, radius)?;
        let t2 = Self::fft_grid(g, s, 2 * n_grid, radius)?;
        let t4 = Self::fft_grid(g, s, 4 * n_grid, radius)?;
        let data = t1
            .data
            .iter()
            .zip(&t2.data)
            .zip(&t4.data)
            .map(|((a, b), c)| (a - b * 6.0 + c * 8.0) / 3.0)
            .collect();
        Ok(Self { method: Method::Refined, data, warning: None, ..t1 })
    }

    /// Strip quadrature with strip length L (power of two, L > 2 radius).
    pub fn strip(g: &GraphSpec, s: &SpectralData, radius: i64, l: usize) -> Result<Self> {
        if s.phase == Phase::Solid {
            return Err(Error::Phase("solid phase: kernel coefficients unsupported".into()));
        }
        if (2 * radius as usize + 1) > l {
            return Err(Error::Precondition(format!("radius {radius} needs strip length > {}", 2 * radius)));
        }
        let solver = StripSolver::new(s, l)?;
        let n = s.n;
        let side = (2 * radius + 1) as usize;
        let mut data = vec![C64::new(0.0, 0.0); n * n * side * side];
        for b in 0..n {
            for w in 0..n {
                let rows = solver.rows(b, w, -radius, radius, radius);
                let off = (b * n + w) * side * side;
                for (k, row) in rows.into_iter().enumerate() {
                    data[off + k * side..off + (k + 1) * side].copy_from_slice(&row);
                }
            }
        }
        let mut warning = solver.warning.clone();
        if s.phase == Phase::LiquidNongeneric {
            warning = Some("resonant case: coefficients defined but downstream limits diverge".into());
        }
        Ok(Self { n, radius, grid: l, method: Method::Strip, graph_hash: g.hash(), warning, data })
    }

    pub fn dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(b"DIMERKT1")?;
        let mut hash = [b' '; 64];
        for (d, s) in hash.iter_mut().zip(self.graph_hash.bytes()) {
            *d = s;
        }
        f.write_all(&hash)?;
        f.write_all(&(self.grid as u64).to_le_bytes())?;
        f.write_all(&(self.radius as u64).to_le_bytes())?;
        f.write_all(&(self.n as u64).to_le_bytes())?;
        f.write_all(&[self.method.code()])?;
        for v in &self.data {
            f.write_all(&v.re.to_le_bytes())?;
            f.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != b"DIMERKT1" {
            return Err(Error::Parse("not a kernel table dump".into()));
        }
        let mut hash = [0u8; 64];
        f.read_exact(&mut hash)?;
        let mut u = [0u8; 8];
        let mut next = |f: &mut std::io::BufReader<std::fs::File>| -> Result<u64> {
            f.read_exact(&mut u)?;
            Ok(u64::from_le_bytes(u))
        };
        let grid = next(&mut f)? as usize;
        let radius = next(&mut f)? as i64;
        let n = next(&mut f)? as usize;
        let mut code = [0u8; 1];
        f.read_exact(&mut code)?;
        let side = (2 * radius + 1) as usize;
        let mut data = Vec::with_capacity(n * n * side * side);
        let mut buf = [0u8; 16];
        for _ in 0..n * n * side * side {
            f.read_exact(&mut buf)?;
            let re = f64::from_le_bytes(buf[..8].try_into().unwrap());
            let im = f64::from_le_bytes(buf[8..].try_into().unwrap());
            data.push(c(re, im));
        }
        Ok(Self {
            n,
            radius,
            grid,
            method: Method::from_code(code[0])?,
            graph_hash: String::from_utf8_lossy(&hash).trim().to_string(),
            warning: None,
            data,
        })
    }
}

/// Precomputed monomial tables on a midpoint torus grid.
struct TorusGrid<'a> {
    s: &'a SpectralData,
    n: usize,
    zpow: Vec<(i32, Vec<C64>)>,
}

impl<'a> TorusGrid<'a> {
    fn new(s: &'a SpectralData, n: usize) -> Self {
        let mut exps: Vec<i32> = s.p.exponents().iter().map(|e| e.0).collect();
        for row in &s.q {
            for q in row {
                exps.extend(q.exponents().iter().map(|e| e.0));
            }
        }
        exps.sort();
        exps.dedup();
        let zpow = exps
            .into_iter()
            .map(|a| {
                let v = (0..n)
                    .map(|j| {
                        let t = 2.0 * PI * (j as f64 + 0.5) / n as f64;
                        C64::from_polar(1.0, a as f64 * t)
                    })
                    .collect();
                (a, v)
            })
            .collect();
        Self { s, n, zpow }
    }

    fn eval_row(&self, poly: &Laurent2, w: C64, out: &mut [C64]) {
        out.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        for (&(a, b), &coef) in poly.terms() {
            let cw = coef * w.powi(b);
            let zp = &self.zpow.iter().find(|(e, _)| *e == a).unwrap().1;
            for (o, z) in out.iter_mut().zip(zp) {
                *o += cw * z;
            }
        }
    }

    /// (1/N²) Σ z^{-y} w^{x} Q/P for |x|,|y| ≤ radius, row-major in y.
    fn transform(&self, q: &Laurent2, fft: &Arc<dyn Fft<f64>>, radius: i64) -> Vec<C64> {
        let n = self.n;
        let side = (2 * radius + 1) as usize;
        // after the z transform keep columns for y in window: index (-y) mod n
        let mut cols = vec![C64::new(0.0, 0.0); n * side];
        let mut prow = vec![C64::new(0.0, 0.0); n];
        let mut qrow = vec![C64::new(0.0, 0.0); n];
        let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for k in 0..n {
            let phi = 2.0 * PI * (k as f64 + 0.5) / n as f64;
            let w = C64::from_polar(1.0, phi);
            self.eval_row(&self.s.p, w, &mut prow);
            self.eval_row(q, w, &mut qrow);
            for (qv, pv) in qrow.iter_mut().zip(&prow) {
                *qv /= pv;
            }
            fft.process_with_scratch(&mut qrow, &mut scratch);
            for yi in 0..side {
                let y = yi as i64 - radius;
                cols[yi * n + k] = qrow[(-y).rem_euclid(n as i64) as usize];
            }
        }
        let mut out = vec![C64::new(0.0, 0.0); side * side];
        let norm = 1.0 / (n as f64 * n as f64);
        for yi in 0..side {
            let y = yi as i64 - radius;
            let col = &mut cols[yi * n..(yi + 1) * n];
            fft.process_with_scratch(col, &mut scratch);
            for xi in 0..side {
                let x = xi as i64 - radius;
                let ph = C64::from_polar(norm, PI * (x - y) as f64 / n as f64);
                out[yi * side + xi] = col[x.rem_euclid(n as i64) as usize] * ph;
            }
        }
        out
    }
}

/// Roots of a complex polynomial Σ coef[i] z^i by Aberth iteration.
pub fn poly_roots(coef: &[C64]) -> Vec<C64> {
    let mut d = coef.len() - 1;
    while d > 0 && coef[d].norm() == 0.0 {
        d -= 1;
    }
    let a = &coef[..=d];
    match d {
        0 => return Vec::new(),
        1 => return vec![-a[0] / a[1]],
        2 => {
            let disc = (a[1] * a[1] - a[0] * a[2] * 4.0).sqrt();
            let sgn = if (a[1].conj() * disc).re >= 0.0 { 1.0 } else { -1.0 };
            let qv = -(a[1] + disc * sgn) / 2.0;
            if qv.norm() == 0.0 {
                return vec![C64::new(0.0, 0.0), C64::new(0.0, 0.0)];
            }
            return vec![qv / a[2], a[0] / qv];
        }
        _ => {}
    }
    let eval = |z: C64| -> (C64, C64) {
        let mut p = a[d];
        let mut dp = C64::new(0.0, 0.0);
        for i in (0..d).rev() {
            dp = dp * z + p;
            p = p * z + a[i];
        }
        (p, dp)
    };
    let bound = 1.0 + a[..d].iter().map(|c| (c / a[d]).norm()).fold(0.0, f64::max);
    let mut z: Vec<C64> = (0..d)
        .map(|k| C64::from_polar(bound * 0.5, 2.0 * PI * (k as f64 + 0.25) / d as f64 + 0.4))
        .collect();
    for _ in 0..500 {
        let mut moved = 0.0f64;
        for i in 0..d {
            let (p, dp) = eval(z[i]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let mut sum = C64::new(0.0, 0.0);
            for j in 0..d {
                if j != i {
                    sum += 1.0 / (z[i] - z[j]);
                }
            }
            let step = ratio / (C64::new(1.0, 0.0) - ratio * sum);
            z[i] -= step;
            moved = moved.max(step.norm() / (1.0 + z[i].norm()));
        }
        if moved < 1e-15 {
            break;
        }
    }
    z
}

/// Quotient and remainder of polynomial division q = t p + r.
fn poly_divmod(q: &[C64], p: &[C64]) -> (Vec<C64>, Vec<C64>) {
    let dp = p.len() - 1;
    if q.len() <= dp {
        return (Vec::new(), q.to_vec());
    }
    let mut r = q.to_vec();
    let mut t = vec![C64::new(0.0, 0.0); q.len() - dp];
    for i in (0..t.len()).rev() {
        let f = r[i + dp] / p[dp];
        t[i] = f;
        for j in 0..=dp {
            r[i + j] -= f * p[j];
        }
    }
    r.truncate(dp);
    (t, r)
}

fn horner(a: &[C64], z: C64) -> C64 {
    a.iter().rev().fold(C64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

fn dhorner(a: &[C64], z: C64) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for i in (1..a.len()).rev() {
        acc = acc * z + a[i] * i as f64;
    }
    acc
}

const TAYLOR_ORDER: usize = 5;
const CIRCLE_POINTS: usize = 32;
const CIRCLE_RADIUS: f64 = 0.02;
const ALIAS_TERMS: i64 = 64;

struct Crossing {
    phi: f64,
    z: C64,
    /// +1 when the crossing root lies outside the unit circle for φ > phi.
    sigma: f64,
    /// Taylor coefficients of log(z(φ)/z_c) in (φ - phi).
    ell: Vec<C64>,
    /// Circle samples (w, z, p coefficients) for residue expansions.
    circle: Vec<(C64, C64, Vec<C64>)>,
    /// Exact minus trapezoid coefficient of each sawtooth, per x in [-xmax, xmax].
    delta: Vec<Vec<C64>>,
}

/// Semi-analytic quadrature in strips of constant w.
pub struct StripSolver<'a> {
    s: &'a SpectralData,
    l: usize,
    plo: i32,
    phis: Vec<f64>,
    /// P coefficients in z at each grid w.
    pcoef: Vec<Vec<C64>>,
    roots: Vec<Vec<C64>>,
    /// For each grid point and root: Some(outside?) forced by the crossing side rule.
    forced: Vec<Vec<Option<bool>>>,
    crossings: Vec<Crossing>,
    fft: Arc<dyn Fft<f64>>,
    pub warning: Option<String>,
}

fn taylor_from_circle(vals: &[C64], rho: f64, order: usize) -> Vec<C64> {
    let m = vals.len();
    (0..=order)
        .map(|k| {
            let mut s = C64::new(0.0, 0.0);
            for (j, v) in vals.iter().enumerate() {
                let th = 2.0 * PI * j as f64 / m as f64;
                s += v * C64::from_polar(1.0, -(k as f64) * th);
            }
            s / (m as f64 * rho.powi(k as i32))
        })
        .collect()
}

fn series_mul(a: &[C64], b: &[C64]) -> Vec<C64> {
    let n = a.len().min(b.len());
    (0..n).map(|k| (0..=k).map(|i| a[i] * b[k - i]).sum()).collect()
}

/// exp of a series with zero constant term.
fn series_exp(a: &[C64]) -> Vec<C64> {
    let n = a.len();
    let mut e = vec![C64::new(0.0, 0.0); n];
    e[0] = C64::new(1.0, 0.0);
    for m in 1..n {
        let mut s = C64::new(0.0, 0.0);
        for k in 1..=m {
            s += a[k] * e[m - k] * k as f64;
        }
        e[m] = s / m as f64;
    }
    e
}

impl<'a> StripSolver<'a> {
    pub fn new(s: &'a SpectralData, l: usize) -> Result<Self> {
        let (plo, phi_) = s.p.z_range().ok_or_else(|| Error::Phase("P vanishes".into()))?;
        let phis: Vec<f64> = (0..l).map(|k| 2.0 * PI * (k as f64 + 0.5) / l as f64).collect();
        let pcoef: Vec<Vec<C64>> =
            phis.par_iter().map(|&f| s.p.z_slice(C64::from_polar(1.0, f), plo, phi_)).collect();
        let roots: Vec<Vec<C64>> = pcoef.par_iter().map(|pc| poly_roots(pc)).collect();
        let mut warning = None;
        let mut crossings = Vec::new();
        let mut forced: Vec<Vec<Option<bool>>> = roots.iter().map(|r| vec![None; r.len()]).collect();
        let generic = s.phase == Phase::LiquidGeneric;
        if s.phase == Phase::LiquidNongeneric {
            warning = Some("double torus root: no jump correction applied".into());
        }
        if generic {
            for r in &s.roots {
                let phi_c = r.phi;
                let zc = r.z;
                // circle samples of the crossing root in complex φ
                let mut circle = Vec::with_capacity(CIRCLE_POINTS);
                let mut ell_vals = Vec::with_capacity(CIRCLE_POINTS);
                for j in 0..CIRCLE_POINTS {
                    let t = C64::from_polar(CIRCLE_RADIUS, 2.0 * PI * j as f64 / CIRCLE_POINTS as f64);
                    let w = (C64::i() * (t + phi_c)).exp();
                    let pc = s.p.z_slice(w, plo, phi_);
                    let mut z = zc;
                    for _ in 0..60 {
                        let dz = horner(&pc, z) / dhorner(&pc, z);
                        z -= dz;
                        if dz.norm() < 1e-16 * z.norm() {
                            break;
                        }
                    }
                    ell_vals.push((z / zc).ln());
                    circle.push((w, z, pc));
                }
                let ell = taylor_from_circle(&ell_vals, CIRCLE_RADIUS, TAYLOR_ORDER);
                let sigma = if ell[1].re > 0.0 { 1.0 } else { -1.0 };
                // side rule near the crossing
                for (k, &f) in phis.iter().enumerate() {
                    let mut d = f - phi_c;
                    d -= 2.0 * PI * (d / (2.0 * PI)).round();
                    if d.abs() < 1e-2 {
                        let (idx, _) = roots[k]
                            .iter()
                            .enumerate()
                            .map(|(i, z)| (i, (z - zc).norm()))
                            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
                        forced[k][idx] = Some((sigma > 0.0) == (d > 0.0));
                    }
                }
                crossings.push(Crossing { phi: phi_c, z: zc, sigma, ell, circle, delta: Vec::new() });
            }
        }
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_inverse(l);
        let mut solver = Self { s, l, plo, phis, pcoef, roots, forced, crossings, fft, warning };
        solver.prepare_deltas();
        Ok(solver)
    }

    fn prepare_deltas(&mut self) {
        let l = self.l;
        let half = (l / 2) as i64;
        let mut scratch = vec![C64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for cr in &mut self.crossings {
            let mut delta = Vec::with_capacity(TAYLOR_ORDER);
            // low orders by transform; their aliasing series converge too slowly
            for m in 0..2 {
                let mut buf: Vec<C64> =
                    self.phis.iter().map(|&f| C64::new(sawtooth(m, f - cr.phi), 0.0)).collect();
                self.fft.process_with_scratch(&mut buf, &mut scratch);
                let d: Vec<C64> = (-half..half)
                    .map(|x| {
                        let trap = buf[x.rem_euclid(l as i64) as usize]
                            * C64::from_polar(1.0 / l as f64, PI * x as f64 / l as f64);
                        let exact = if x == 0 {
                            C64::new(0.0, 0.0)
                        } else {
                            C64::from_polar(1.0, x as f64 * cr.phi)
                                / (2.0 * PI * C64::new(0.0, -(x as f64)).powi(m as i32 + 1))
                        };
                        exact - trap
                    })
                    .collect();
                delta.push(d);
            }
            // higher orders from the aliased terms j = lL - x, which keeps
            // the tiny differences free of transform rounding
            for m in 2..TAYLOR_ORDER {
                let d: Vec<C64> = (-half..half)
                    .map(|x| {
                        let mut acc = C64::new(0.0, 0.0);
                        for a in (1..=ALIAS_TERMS).flat_map(|a| [a, -a]) {
                            let j = (a * l as i64 - x) as f64;
                            let sgn = if a % 2 == 0 { 1.0 } else { -1.0 };
                            acc += C64::from_polar(sgn, -j * cr.phi) / C64::new(0.0, j).powi(m as i32 + 1);
                        }
                        -acc / (2.0 * PI)
                    })
                    .collect();
                delta.push(d);
            }
            cr.delta = delta;
        }
    }

    fn q_slices(&self, q: &Laurent2, w: C64) -> (i32, Vec<C64>) {
        match q.z_range() {
            Some((lo, hi)) => (lo, q.z_slice(w, lo, hi)),
            None => (0, Vec::new()),
        }
    }

    /// Rows y in [ylo, yhi] of K⁻¹(b_{(x,y)}, w) for |x| ≤ xmax.
    pub fn rows(&self, b: usize, w: usize, ylo: i64, yhi: i64, xmax: i64) -> Vec<Vec<C64>> {
        assert!(2 * xmax < self.l as i64, "strip length too short for xmax");
        let q = &self.s.q[b][w];
        if q.is_zero() {
            return vec![vec![C64::new(0.0, 0.0); (2 * xmax + 1) as usize]; (yhi - ylo + 1) as usize];
        }
        let qlo = q.z_range().unwrap().0;
        let shift = (qlo - self.plo) as i64;
        // per grid point: residues and polynomial part
        let per_point: Vec<(Vec<C64>, Vec<C64>)> = (0..self.l)
            .into_par_iter()
            .map(|k| {
                let wv = C64::from_polar(1.0, self.phis[k]);
                let (_, qc) = self.q_slices(q, wv);
                let pc = &self.pcoef[k];
                let (t, rem) = poly_divmod(&qc, pc);
                let res = self.roots[k].iter().map(|&z| horner(&rem, z) / dhorner(pc, z)).collect();
                (res, t)
            })
            .collect();
        // crossing jump series per crossing: residue Taylor coefficients
        let res_series: Vec<Vec<C64>> = self
            .crossings
            .iter()
            .map(|cr| {
                let vals: Vec<C64> = cr
                    .circle
                    .iter()
                    .map(|(wv, z, pc)| {
                        let (_, qc) = self.q_slices(q, *wv);
                        let (_, rem) = poly_divmod(&qc, pc);
                        horner(&rem, *z) / dhorner(pc, *z)
                    })
                    .collect();
                taylor_from_circle(&vals, CIRCLE_RADIUS, TAYLOR_ORDER)
            })
            .collect();

        const BLOCK: i64 = 32;
        let blocks: Vec<(i64, i64)> = {
            let mut v = Vec::new();
            let mut a = ylo;
            while a <= yhi {
                v.push((a, (a + BLOCK - 1).min(yhi)));
                a += BLOCK;
            }
            v
        };
        let l = self.l;
        let out: Vec<Vec<Vec<C64>>> = blocks
            .par_iter()
            .map(|&(ya, yb)| {
                let nrows = (yb - ya + 1) as usize;
                let mut buf = vec![C64::new(0.0, 0.0); nrows * l];
                for k in 0..l {
                    let (res, t) = &per_point[k];
                    for (ti, tv) in t.iter().enumerate() {
                        let y = ti as i64 + shift;
                        if y >= ya && y <= yb {
                            buf[(y - ya) as usize * l + k] += tv;
                        }
                    }
                    for (ri, (&z, &r)) in self.roots[k].iter().zip(res.iter()).enumerate() {
                        let outside = self.forced[k][ri].unwrap_or(z.norm() > 1.0);
                        if outside {
                            // -r z^{s-y-1} for y ≥ s
                            let y0 = ya.max(shift);
                            if y0 > yb {
                                continue;
                            }
                            let zi = 1.0 / z;
                            let mut v = -r * zi.powi((y0 - shift + 1) as i32);
                            for y in y0..=yb {
                                buf[(y - ya) as usize * l + k] += v;
                                v *= zi;
                            }
                        } else {
                            // r z^{s-y-1} for y ≤ s-1
                            let y1 = yb.min(shift - 1);
                            if y1 < ya {
                                continue;
                            }
                            let mut v = r * z.powi((shift - y1 - 1) as i32);
                            let mut y = y1;
                            loop {
                                buf[(y - ya) as usize * l + k] += v;
                                if y == ya {
                                    break;
                                }
                                v *= z;
                                y -= 1;
                            }
                        }
                    }
                }
                let mut scratch = vec![C64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
                let half = (l / 2) as i64;
                let mut rows = Vec::with_capacity(nrows);
                for ri in 0..nrows {
                    let y = ya + ri as i64;
                    let row = &mut buf[ri * l..(ri + 1) * l];
                    self.fft.process_with_scratch(row, &mut scratch);
                    let mut outrow: Vec<C64> = (-xmax..=xmax)
                        .map(|x| {
                            row[x.rem_euclid(l as i64) as usize]
                                * C64::from_polar(1.0 / l as f64, PI * x as f64 / l as f64)
                        })
                        .collect();
                    for (cr, rs) in self.crossings.iter().zip(&res_series) {
                        let e = shift - y - 1;
                        let el: Vec<C64> = cr.ell.iter().map(|v| v * e as f64).collect();
                        let ex = series_exp(&el);
                        let g = series_mul(rs, &ex);
                        let ze = cr.z.powi(e as i32);
                        let mut fact = 1.0;
                        for m in 0..TAYLOR_ORDER {
                            if m > 0 {
                                fact *= m as f64;
                            }
                            let jump = -cr.sigma * fact * g[m] * ze;
                            let d = &cr.delta[m];
                            for (xi, v) in outrow.iter_mut().enumerate() {
                                let x = xi as i64 - xmax;
                                *v += jump * d[(x + half) as usize];
                            }
                        }
                    }
                    rows.push(outrow);
                }
                rows
            })
            .collect();
        out.into_iter().flatten().collect()
    }
}

/// Leading-order liquid asymptotics of K⁻¹.
#[derive(Clone, Debug)]
pub struct AsymptoticEvaluator {
    pub z0: C64,
    pub w0: C64,
    pub xhat: C64,
    pub yhat: C64,
    pub q0: nalgebra::DMatrix<C64>,
}

impl AsymptoticEvaluator {
    pub fn new(s: &SpectralData) -> Result<Self> {
        let l = s.liquid()?;
        Ok(Self { z0: l.z0, w0: l.w0, xhat: l.xhat, yhat: l.yhat, q0: l.q0.clone() })
    }

    /// Re(z0^{-y} w0^{x} Q_bw(z0,w0) / (π (x x̂ + y ŷ))) with the direct-frame root.
    pub fn coefficient(&self, b: usize, w: usize, x: i64, y: i64) -> Result<f64> {
        if x == 0 && y == 0 {
            return Err(Error::Precondition("asymptotic formula is singular at offset (0,0)".into()));
        }
        let num = self.z0.powi(-y as i32) * self.w0.powi(x as i32) * self.q0[(b, w)];
        let den = (self.xhat * x as f64 + self.yhat * y as f64) * PI;
        Ok((num / den).re)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecayFit {
    Exponential { rate: f64, residual: f64 },
    Power { exponent: f64, residual: f64 },
}

fn linfit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let res = xs.iter().zip(ys).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum::<f64>() / n;
    (slope, icpt, res)
}

/// Fits the ring envelope max|K⁻¹| over offsets of sup-norm r, r = 1..max_radius,
/// with exponential and power models; returns the better one.
pub fn decay_rate(t: &KernelTable, max_radius: i64) -> Result<DecayFit> {
    let rmax = max_radius.min(t.radius);
    if rmax < 4 {
        return Err(Error::Precondition("insufficient dynamic range".into()));
    }
    let mut rs = Vec::new();
    let mut env = Vec::new();
    for r in 1..=rmax {
        let mut m = 0.0f64;
        for b in 0..t.n {
            for w in 0..t.n {
                for k in -r..=r {
                    for (x, y) in [(k, r), (k, -r), (r, k), (-r, k)] {
                        m = m.max(t.at(b, w, x, y).norm());
                    }
                }
            }
        }
        if m > 1e-300 {
            rs.push(r as f64);
            env.push(m);
        }
    }
    let hi = env.iter().cloned().fold(0.0, f64::max);
    let lo = env.iter().cloned().fold(f64::INFINITY, f64::min);
    if env.len() < 4 || hi / lo < 100.0 {
        return Err(Error::Precondition("insufficient dynamic range (< 2 decades)".into()));
    }
    let logs: Vec<f64> = env.iter().map(|v| v.ln()).collect();
    let (s_exp, _, r_exp) = linfit(&rs, &logs);
    let lr: Vec<f64> = rs.iter().map(|r| r.ln()).collect();
    let (s_pow, _, r_pow) = linfit(&lr, &logs);
    if r_exp <= r_pow {
        Ok(DecayFit::Exponential { rate: -s_exp, residual: r_exp })
    } else {
        Ok(DecayFit::Power { exponent: -s_pow, residual: r_pow })
    }
}

/// Single-row strip evaluation K⁻¹(b_{(x,y)}, w) for |x| ≤ xmax.
pub fn strip_row(s: &SpectralData, b: usize, w: usize, y: i64, xmax: i64) -> Result<Vec<C64>> {
    let l = 1024usize.max((4 * xmax as usize + 4).next_power_of_two());
    let solver = StripSolver::new(s, l)?;
    Ok(solver.rows(b, w, y, y, xmax).pop().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{square_octagon, z2};
    use crate::spectral::build_spectral;

    #[test]
    fn aberth_finds_cubic_roots() {
        let r = [c(1.0, 0.0), c(-2.0, 0.5), c(0.3, -3.0)];
        // (z-r0)(z-r1)(z-r2)
        let coef = vec![
            -(r[0] * r[1] * r[2]),
            r[0] * r[1] + r[0] * r[2] + r[1] * r[2],
            -(r[0] + r[1] + r[2]),
            c(1.0, 0.0),
        ];
        let found = poly_roots(&coef);
        for t in r {
            assert!(found.iter().any(|z| (z - t).norm() < 1e-12));
        }
    }

    #[test]
    fn z2_uniform_center_is_quarter() {
        let g = z2(1.0, 1.0, 1.0, 1.0).unwrap();
        let s = build_spectral(&g).unwrap();
        let t = KernelTable::strip(&g, &s, 4, 4096).unwrap();
        assert!((t.at(0, 0, 0, 0) - c(0.25, 0.0)).norm() < 1e-12);
        assert!((t.at(0, 0, -1, 0) - c(0.25, 0.0)).norm() < 1e-12);
        assert!((t.at(0, 0, -1, -1) - c(-0.25, 0.0)).norm() < 1e-12);
        assert!((t.at(0, 0, 0, -1) - c(0.25, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn strip_agrees_with_fft_in_gaseous_phase() {
        let g = square_octagon(0.0).unwrap();
        let s = build_spectral(&g).unwrap();
        let a = KernelTable::fft_grid(&g, &s, 128, 6).unwrap();
        let b = KernelTable::strip(&g, &s, 6, 256).unwrap();
        for bi in 0..4 {
            for wi in 0..4 {
                for (x, y) in [(0, 0), (1, -2), (-3, 3), (6, 6)] {
                    assert!((a.at(bi, wi, x, y) - b.at(bi, wi, x, y)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn weighted_probabilities_sum_to_one() {
        let g = z2(2.0, 1.0, 1.0, 1.0).unwrap();
        let s = build_spectral(&g).unwrap();
        let t = KernelTable::strip(&g, &s, 4, 4096).unwrap();
        let pa = 2.0 * t.at(0, 0, 0, 0).re;
        assert!((pa - 0.5).abs() < 1e-10, "{pa}");
        let total: f64 = g
            .edges
            .iter()
            .map(|e| (e.kasteleyn() * t.at(0, 0, e.offset.0, e.offset.1)).re)
            .sum();
        assert!((total - 1.0).abs() < 1e-10);
    }
}
