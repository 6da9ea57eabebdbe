//! Faces of the toroidal quotient traced from the realization's rotation system,
//! and the Kasteleyn flatness check.

use crate::error::{Error, Result};
use crate::graph::{GraphSpec, VertexRef};
use crate::C64;

/// A face as a cyclic list of darts; dart 2i runs white to black along edge i,
/// dart 2i+1 runs back.
#[derive(Clone, Debug)]
pub struct Face {
    pub darts: Vec<usize>,
}

impl Face {
    pub fn describe(&self, g: &GraphSpec) -> String {
        let parts: Vec<String> = self
            .darts
            .iter()
            .map(|&d| {
                let e = &g.edges[d / 2];
                if d % 2 == 0 {
                    format!("w{}->b{}[{}]", e.white, e.black, e.id)
                } else {
                    format!("b{}->w{}[{}]", e.black, e.white, e.id)
                }
            })
            .collect();
        parts.join(" ")
    }

    /// Alternating product of signs along the boundary.
    pub fn alternating_product(&self, g: &GraphSpec) -> C64 {
        let mut p = C64::new(1.0, 0.0);
        for &d in &self.darts {
            let s = g.edges[d / 2].sign;
            p *= if d % 2 == 0 { s } else { s.conj() };
        }
        p
    }
}

fn dart_vertex(g: &GraphSpec, d: usize) -> usize {
    let e = &g.edges[d / 2];
    if d % 2 == 0 {
        e.white
    } else {
        g.n + e.black
    }
}

fn dart_angle(g: &GraphSpec, d: usize) -> f64 {
    let e = &g.edges[d / 2];
    let pw = g.realization.position(VertexRef::white(e.white, (0, 0)));
    let pb = g.realization.position(e.black_at((0, 0)));
    let (dx, dy) = (pb[0] - pw[0], pb[1] - pw[1]);
    if d % 2 == 0 {
        dy.atan2(dx)
    } else {
        (-dy).atan2(-dx)
    }
}

pub fn trace_faces(g: &GraphSpec) -> Result<Vec<Face>> {
    let ndarts = 2 * g.edges.len();
    let nv = 2 * g.n;
    let mut around: Vec<Vec<(f64, usize)>> = vec![Vec::new(); nv];
    for d in 0..ndarts {
        around[dart_vertex(g, d)].push((dart_angle(g, d), d));
    }
    // position of each dart in its vertex's ccw order
    let mut slot = vec![(0usize, 0usize); ndarts];
    for (v, list) in around.iter_mut().enumerate() {
        list.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in list.windows(2) {
            if (w[1].0 - w[0].0).abs() < 1e-12 {
                return Err(Error::InvalidGraph(format!(
                    "realization has overlapping edges at vertex {v}"
                )));
            }
        }
        for (k, &(_, d)) in list.iter().enumerate() {
            slot[d] = (v, k);
        }
    }
    let next = |d: usize| -> usize {
        let rev = d ^ 1;
        let (v, k) = slot[rev];
        let list = &around[v];
        list[(k + list.len() - 1) % list.len()].1
    };
    let mut seen = vec![false; ndarts];
    let mut faces = Vec::new();
    for start in 0..ndarts {
        if seen[start] {
            continue;
        }
        let mut darts = Vec::new();
        let mut d = start;
        while !seen[d] {
            seen[d] = true;
            darts.push(d);
            d = next(d);
        }
        faces.push(Face { darts });
    }
    let expected = g.edges.len() as i64 - nv as i64;
    if faces.len() as i64 != expected {
        return Err(Error::InvalidGraph(format!(
            "realization is not a toroidal embedding: traced {} faces, expected E - V = {}",
            faces.len(),
            expected
        )));
    }
    Ok(faces)
}

/// Checks that each face with 2k edges has alternating sign product (-1)^{k+1}.
pub fn check_flatness(g: &GraphSpec) -> Result<()> {
    for f in trace_faces(g)? {
        let k = f.darts.len() / 2;
        let expected = if k % 2 == 1 { 1.0 } else { -1.0 };
        let p = f.alternating_product(g);
        if (p - C64::new(expected, 0.0)).norm() > 1e-9 {
            return Err(Error::Flatness {
                face: f.describe(g),
                product: format!("{p}"),
                expected,
            });
        }
    }
    Ok(())
}
