//! Pattern probabilities and correlations as determinants of K⁻¹ blocks.

use std::collections::HashSet;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::{GraphSpec, VertexRef};
use crate::kernel::KernelTable;
use crate::pattern::{Pattern, PatternEdge};
use crate::spectral::{Phase, SpectralData};
use crate::C64;

pub const SINGULAR_TOL: f64 = 1e-14;

#[derive(Clone, Debug)]
pub struct PatternAnalysis {
    pub pattern: Pattern,
    /// E[i][j] = K⁻¹(b_i, w_j) over the pattern's own edges.
    pub e: DMatrix<C64>,
    pub e_inv: Option<DMatrix<C64>>,
    /// Product of the Kasteleyn entries of the pattern edges.
    pub kprod: C64,
    pub probability: f64,
    /// Q_{b_i w_j}(z0,w0) with the translation phases of each vertex.
    pub qblock: Option<DMatrix<C64>>,
    /// tr((E⁻¹ Q)²).
    pub dipole_sq: Option<C64>,
    /// i p̄ vᵀE⁻¹u for the rank-one factorization Q = u vᵀ; equals ω(e) for a single edge.
    pub raw_dipole: Option<C64>,
}

impl PatternAnalysis {
    pub fn invertible(&self) -> bool {
        self.e_inv.is_some()
    }
}

fn kernel_matrix(t: &KernelTable, blacks: &[VertexRef], whites: &[VertexRef]) -> Result<DMatrix<C64>> {
    let mut m = DMatrix::zeros(blacks.len(), whites.len());
    for (i, b) in blacks.iter().enumerate() {
        for (j, w) in whites.iter().enumerate() {
            m[(i, j)] = t.between(*b, *w)?;
        }
    }
    Ok(m)
}

fn edge_ends(g: &GraphSpec, edges: &[PatternEdge]) -> (Vec<VertexRef>, Vec<VertexRef>, C64) {
    let blacks = edges.iter().map(|e| e.black(g)).collect();
    let whites = edges.iter().map(|e| e.white(g)).collect();
    let kprod = edges.iter().map(|e| g.edges[e.edge].kasteleyn()).product();
    (blacks, whites, kprod)
}

/// Rank-one factors of Q(z0,w0): Q[b][w] = u[b] v[w].
pub fn rank_one_factors(q0: &DMatrix<C64>) -> (Vec<C64>, Vec<C64>) {
    let n = q0.nrows();
    let (mut bi, mut wi) = (0, 0);
    for i in 0..n {
        for j in 0..n {
            if q0[(i, j)].norm() > q0[(bi, wi)].norm() {
                bi = i;
                wi = j;
            }
        }
    }
    let u = (0..n).map(|b| q0[(b, wi)]).collect();
    let v = (0..n).map(|w| q0[(bi, w)] / q0[(bi, wi)]).collect();
    (u, v)
}

/// P[pattern] = (Π K_e) det E, plus the dipole data in a liquid phase.
pub fn pattern_probability(
    t: &KernelTable,
    g: &GraphSpec,
    s: &SpectralData,
    p: &Pattern,
) -> Result<PatternAnalysis> {
    if s.phase == Phase::Solid {
        return Err(Error::Phase("solid phase".into()));
    }
    let (blacks, whites, kprod) = edge_ends(g, &p.edges);
    let e = kernel_matrix(t, &blacks, &whites)?;
    let det = e.determinant();
    let probability = (kprod * det).re;
    let e_inv = if det.norm() > SINGULAR_TOL { e.clone().try_inverse() } else { None };
    let (mut qblock, mut dipole_sq, mut raw_dipole) = (None, None, None);
    if s.phase == Phase::LiquidGeneric {
        let l = s.liquid()?;
        let phase = |v: &VertexRef| l.z0.powi(-v.offset.1 as i32) * l.w0.powi(v.offset.0 as i32);
        let k = p.edges.len();
        let (u, v) = rank_one_factors(&l.q0);
        let uu: Vec<C64> = blacks.iter().map(|b| u[b.index] * phase(b)).collect();
        let vv: Vec<C64> = whites.iter().map(|w| v[w.index] / phase(w)).collect();
        qblock = Some(DMatrix::from_fn(k, k, |i, j| uu[i] * vv[j]));
        if let Some(inv) = &e_inv {
            let mut vtu = C64::new(0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    vtu += vv[i] * inv[(i, j)] * uu[j];
                }
            }
            dipole_sq = Some(vtu * vtu);
            raw_dipole = Some(C64::i() * probability * vtu);
        }
    }
    Ok(PatternAnalysis { pattern: p.clone(), e, e_inv, kprod, probability, qblock, dipole_sq, raw_dipole })
}

/// Probability that all patterns occur together. Shared edges count once;
/// two distinct edges meeting at a vertex give probability 0.
pub fn joint_probability(t: &KernelTable, g: &GraphSpec, patterns: &[Pattern]) -> Result<f64> {
    let mut seen = HashSet::new();
    let mut edges = Vec::new();
    for p in patterns {
        for e in &p.edges {
            if seen.insert(*e) {
                edges.push(*e);
            }
        }
    }
    let mut verts = HashSet::new();
    for e in &edges {
        if !verts.insert(e.white(g)) || !verts.insert(e.black(g)) {
            return Ok(0.0);
        }
    }
    let (blacks, whites, kprod) = edge_ends(g, &edges);
    let e = kernel_matrix(t, &blacks, &whites)?;
    Ok((kprod * e.determinant()).re)
}

/// E[Π (1_{e_i} - P[e_i])] via the determinant of K⁻¹ with zeroed diagonal.
pub fn centered_correlation(t: &KernelTable, g: &GraphSpec, edges: &[PatternEdge]) -> Result<f64> {
    let mut seen = HashSet::new();
    for e in edges {
        if !seen.insert(*e) {
            return Err(Error::Precondition(format!(
                "repeated edge {}@{:?}: use moment-level handling (1_e² = 1_e)",
                g.edges[e.edge].id, e.offset
            )));
        }
    }
    let (blacks, whites, kprod) = edge_ends(g, edges);
    let mut e = kernel_matrix(t, &blacks, &whites)?;
    for i in 0..edges.len() {
        e[(i, i)] = C64::new(0.0, 0.0);
    }
    Ok((kprod * e.determinant()).re)
}

/// K⁻¹ of the graph with the weight of `removed` sent to zero, between two vertices.
pub fn kernel_without(t: &KernelTable, g: &GraphSpec, removed: PatternEdge, b: VertexRef, w: VertexRef) -> Result<C64> {
    let k = g.edges[removed.edge].kasteleyn();
    let (b2, w2) = (removed.black(g), removed.white(g));
    let m22 = t.between(b2, w2)?;
    Ok(t.between(b, w)? + k * t.between(b, w2)? * t.between(b2, w)? / (C64::new(1.0, 0.0) - k * m22))
}

/// P(e1) - P(e1,e2) - P(e1, e2 absent), the last from the weight-zero update.
pub fn inclusion_exclusion_check(t: &KernelTable, g: &GraphSpec, e1: PatternEdge, e2: PatternEdge) -> Result<f64> {
    if e1 == e2 {
        return Err(Error::Precondition("edges must differ".into()));
    }
    let single = |e: PatternEdge| -> Result<f64> {
        Ok((g.edges[e.edge].kasteleyn() * t.between(e.black(g), e.white(g))?).re)
    };
    let p1 = single(e1)?;
    let p2 = single(e2)?;
    let pe = |e: PatternEdge| Pattern { edges: vec![e], marked: e.white(g) };
    let p12 = joint_probability(t, g, &[pe(e1), pe(e2)])?;
    let cond = (g.edges[e1.edge].kasteleyn() * kernel_without(t, g, e2, e1.black(g), e1.white(g))?).re;
    Ok(p1 - p12 - (1.0 - p2) * cond)
}

/// Largest deviation from 1 of Σ_{e∋v} P(e) over fundamental-domain vertices.
pub fn vertex_sum_residual(t: &KernelTable, g: &GraphSpec) -> Result<f64> {
    let mut wsum = vec![0.0; g.n];
    let mut bsum = vec![0.0; g.n];
    for e in &g.edges {
        let p = (e.kasteleyn() * t.get(e.black, e.white, e.offset.0, e.offset.1)?).re;
        wsum[e.white] += p;
        bsum[e.black] += p;
    }
    Ok(wsum.iter().chain(&bsum).map(|s| (s - 1.0).abs()).fold(0.0, f64::max))
}
