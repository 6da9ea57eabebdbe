//! Exact sampling of the Gibbs measure restricted to a finite window of edges,
//! by sequential conditioning of the determinantal kernel.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::{Add, Div, Mul, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{GraphSpec, VertexRef};
use crate::kernel::KernelTable;
use crate::pattern::PatternEdge;
use crate::C64;

pub const PIVOT_TOL: f64 = 1e-12;
pub const PROB_TOL: f64 = 1e-8;

/// Arithmetic needed by the conditioning updates.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Send + Sync
{
    fn from_c64(v: C64) -> Self;
    fn re(self) -> f64;
    fn modulus(self) -> f64;
    fn one() -> Self;
}

impl Scalar for f64 {
    fn from_c64(v: C64) -> Self {
        v.re
    }
    fn re(self) -> f64 {
        self
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn one() -> Self {
        1.0
    }
}

impl Scalar for C64 {
    fn from_c64(v: C64) -> Self {
        v
    }
    fn re(self) -> f64 {
        self.re
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn one() -> Self {
        C64::new(1.0, 0.0)
    }
}

/// Window edges in the fixed visitation order: lexicographic by (offset, edge index).
pub fn ordered_window(window: &[PatternEdge]) -> Vec<PatternEdge> {
    let mut w = window.to_vec();
    w.sort_by_key(|e| (e.offset, e.edge));
    w.dedup();
    w
}

/// Conditioning state over the window's vertices.
#[derive(Clone, Debug)]
pub struct WindowState<T: Scalar> {
    pub window: Vec<PatternEdge>,
    pub decided: Vec<Option<bool>>,
    /// M[bi * nw + wi], rows black, columns white.
    m: Vec<T>,
    nw: usize,
    ends: Vec<(usize, usize)>,
    kvals: Vec<T>,
    active_b: Vec<usize>,
    active_w: Vec<usize>,
    /// Step after which each vertex is no longer touched.
    last_b: Vec<usize>,
    last_w: Vec<usize>,
    step: usize,
}

impl<T: Scalar> WindowState<T> {
    pub fn new(t: &KernelTable, g: &GraphSpec, window: &[PatternEdge]) -> Result<Self> {
        let window = ordered_window(window);
        let mut bidx: HashMap<VertexRef, usize> = HashMap::new();
        let mut widx: HashMap<VertexRef, usize> = HashMap::new();
        let mut blacks = Vec::new();
        let mut whites = Vec::new();
        let mut ends = Vec::new();
        let mut last_b = Vec::new();
        let mut last_w = Vec::new();
        for (k, e) in window.iter().enumerate() {
            let b = e.black(g);
            let w = e.white(g);
            let bi = *bidx.entry(b).or_insert_with(|| {
                blacks.push(b);
                last_b.push(0);
                blacks.len() - 1
            });
            let wi = *widx.entry(w).or_insert_with(|| {
                whites.push(w);
                last_w.push(0);
                whites.len() - 1
            });
            last_b[bi] = k;
            last_w[wi] = k;
            ends.push((bi, wi));
        }
        let nw = whites.len();
        let mut m = Vec::with_capacity(blacks.len() * nw);
        for b in &blacks {
            for w in &whites {
                m.push(T::from_c64(t.between(*b, *w)?));
            }
        }
        let kvals = window.iter().map(|e| T::from_c64(g.edges[e.edge].kasteleyn())).collect();
        let n = window.len();
        Ok(Self {
            decided: vec![None; n],
            window,
            m,
            nw,
            ends,
            kvals,
            active_b: (0..blacks.len()).collect(),
            active_w: (0..nw).collect(),
            last_b,
            last_w,
            step: 0,
        })
    }

    pub fn is_done(&self) -> bool {
        self.step == self.window.len()
    }

    /// Conditional presence probability of the next edge.
    pub fn next_probability(&self) -> f64 {
        let (b, w) = self.ends[self.step];
        (self.kvals[self.step] * self.m[b * self.nw + w]).re()
    }

    /// Records the decision for the next edge and updates M.
    pub fn decide(&mut self, present: bool) -> Result<()> {
        let k = self.step;
        let (b, w) = self.ends[k];
        let nw = self.nw;
        let mbw = self.m[b * nw + w];
        let ke = self.kvals[k];
        // drop vertices whose last incident window edge is this one
        let keep_b: Vec<usize> = self.active_b.iter().copied().filter(|&i| self.last_b[i] > k).collect();
        let keep_w: Vec<usize> = self.active_w.iter().copied().filter(|&j| self.last_w[j] > k).collect();
        let col: Vec<T> = keep_b.iter().map(|&i| self.m[i * nw + w]).collect();
        let row: Vec<T> = keep_w.iter().map(|&j| self.m[b * nw + j]).collect();
        if present {
            if mbw.modulus() < PIVOT_TOL {
                return Err(Error::Breakdown(format!("step {k}: pivot |M(b,w)| below tolerance")));
            }
            for (ci, &i) in keep_b.iter().enumerate() {
                let f = col[ci] / mbw;
                for (rj, &j) in keep_w.iter().enumerate() {
                    self.m[i * nw + j] = self.m[i * nw + j] - f * row[rj];
                }
            }
        } else {
            let denom = T::one() - ke * mbw;
            if denom.modulus() < PIVOT_TOL {
                return Err(Error::Breakdown(format!("step {k}: absence of a forced edge")));
            }
            let scale = ke / denom;
            for (ci, &i) in keep_b.iter().enumerate() {
                let f = scale * col[ci];
                for (rj, &j) in keep_w.iter().enumerate() {
                    self.m[i * nw + j] = self.m[i * nw + j] + f * row[rj];
                }
            }
        }
        self.active_b = keep_b;
        self.active_w = keep_w;
        self.decided[k] = Some(present);
        self.step += 1;
        Ok(())
    }
}

/// One exact sample from a prepared initial state.
pub fn sample_from<T: Scalar>(init: &WindowState<T>, rng: &mut impl Rng) -> Result<Vec<bool>> {
    let mut st = init.clone();
    while !st.is_done() {
        let p = st.next_probability();
        if !(-PROB_TOL..=1.0 + PROB_TOL).contains(&p) {
            return Err(Error::Breakdown(format!(
                "step {}: conditional probability {p} outside [0,1]",
                st.step
            )));
        }
        let u: f64 = rng.gen();
        st.decide(u < p)?;
    }
    Ok(st.decided.into_iter().map(|d| d.unwrap()).collect())
}

/// Deterministic per-sample stream: seed plus sample index.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn sample_window(t: &KernelTable, g: &GraphSpec, window: &[PatternEdge], seed: u64) -> Result<Vec<bool>> {
    if t.is_real(1e-12) && g.all_real() {
        let st = WindowState::<f64>::new(t, g, window)?;
        sample_from(&st, &mut sample_rng(seed, 0))
    } else {
        let st = WindowState::<C64>::new(t, g, window)?;
        sample_from(&st, &mut sample_rng(seed, 0))
    }
}

/// Line record `seed window_id bitmask`, bitmask in window order, hex, least significant edge first.
pub fn format_sample(seed: u64, window_id: &str, bits: &[bool]) -> String {
    let mut hex = String::new();
    for chunk in bits.chunks(4) {
        let nib = chunk.iter().enumerate().fold(0u8, |a, (i, &b)| a | ((b as u8) << i));
        write!(hex, "{nib:x}").unwrap();
    }
    format!("{seed} {window_id} {hex}")
}

pub fn parse_sample(line: &str, n: usize) -> Result<(u64, String, Vec<bool>)> {
    let mut it = line.split_whitespace();
    let bad = || Error::Parse(format!("bad sample record: {line}"));
    let seed = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let id = it.next().ok_or_else(bad)?.to_string();
    let hex = it.next().ok_or_else(bad)?;
    let mut bits = Vec::with_capacity(n);
    for ch in hex.chars() {
        let nib = ch.to_digit(16).ok_or_else(bad)?;
        for i in 0..4 {
            bits.push(nib >> i & 1 == 1);
        }
    }
    bits.truncate(n);
    Ok((seed, id, bits))
}
