//! Fundamental-domain description of a bi-periodic bipartite graph.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::laurent::Laurent2;
use crate::{c, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    White,
    Black,
}

/// A vertex of the infinite graph: fundamental-domain index plus lattice offset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VertexRef {
    pub color: Color,
    pub index: usize,
    pub offset: (i64, i64),
}

impl VertexRef {
    pub fn white(index: usize, offset: (i64, i64)) -> Self {
        Self { color: Color::White, index, offset }
    }

    pub fn black(index: usize, offset: (i64, i64)) -> Self {
        Self { color: Color::Black, index, offset }
    }

    pub fn translate(self, by: (i64, i64)) -> Self {
        Self { offset: (self.offset.0 + by.0, self.offset.1 + by.1), ..self }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSpec {
    pub id: String,
    pub white: usize,
    pub black: usize,
    /// Domain offset of the black end relative to the white end.
    pub offset: (i64, i64),
    pub weight: f64,
    pub sign: C64,
}

impl EdgeSpec {
    /// Position-space Kasteleyn entry sign * weight.
    pub fn kasteleyn(&self) -> C64 {
        self.sign * self.weight
    }

    /// Fourier-space entry sign * weight * z^{-dy} w^{dx}.
    pub fn kasteleyn_at(&self, z: C64, w: C64) -> C64 {
        self.kasteleyn() * z.powi(-self.offset.1 as i32) * w.powi(self.offset.0 as i32)
    }

    pub fn white_at(&self, cell: (i64, i64)) -> VertexRef {
        VertexRef::white(self.white, cell)
    }

    pub fn black_at(&self, cell: (i64, i64)) -> VertexRef {
        VertexRef::black(self.black, (cell.0 + self.offset.0, cell.1 + self.offset.1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Realization {
    pub white: Vec<[f64; 2]>,
    pub black: Vec<[f64; 2]>,
    pub periods: [[f64; 2]; 2],
}

impl Realization {
    pub fn position(&self, v: VertexRef) -> [f64; 2] {
        let p = match v.color {
            Color::White => self.white[v.index],
            Color::Black => self.black[v.index],
        };
        let (x, y) = (v.offset.0 as f64, v.offset.1 as f64);
        [
            p[0] + x * self.periods[0][0] + y * self.periods[1][0],
            p[1] + x * self.periods[0][1] + y * self.periods[1][1],
        ]
    }

    pub fn area(&self) -> f64 {
        let [a, b] = self.periods;
        a[0] * b[1] - a[1] * b[0]
    }
}

#[derive(Clone, Debug)]
pub struct GraphSpec {
    pub name: String,
    pub n: usize,
    pub edges: Vec<EdgeSpec>,
    pub realization: Realization,
    /// Factor applied to the user realization to reach unit fundamental area.
    pub scale: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum SignFile {
    Real(f64),
    Complex([f64; 2]),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct VerticesFile {
    white: usize,
    black: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RealizationFile {
    white: Vec<[f64; 2]>,
    black: Vec<[f64; 2]>,
    periods: [[f64; 2]; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct EdgeFile {
    id: String,
    w: usize,
    b: usize,
    offset: [i64; 2],
    weight: f64,
    sign: SignFile,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GraphFile {
    name: String,
    vertices: VerticesFile,
    realization: RealizationFile,
    edges: Vec<EdgeFile>,
}

impl GraphSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: GraphFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    fn from_file(f: GraphFile) -> Result<Self> {
        if f.vertices.white != f.vertices.black {
            return Err(Error::InvalidGraph(format!(
                "n_white = {} differs from n_black = {}",
                f.vertices.white, f.vertices.black
            )));
        }
        let n = f.vertices.white;
        if n == 0 {
            return Err(Error::InvalidGraph("empty fundamental domain".into()));
        }
        if f.realization.white.len() != n || f.realization.black.len() != n {
            return Err(Error::InvalidGraph("realization does not list every vertex".into()));
        }
        let mut edges = Vec::with_capacity(f.edges.len());
        for e in f.edges {
            if !(e.weight > 0.0) || !e.weight.is_finite() {
                return Err(Error::NonpositiveWeight(e.id));
            }
            if e.w >= n || e.b >= n {
                return Err(Error::InvalidGraph(format!("edge {} references a missing vertex", e.id)));
            }
            let sign = match e.sign {
                SignFile::Real(s) => c(s, 0.0),
                SignFile::Complex([re, im]) => c(re, im),
            };
            if (sign.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidGraph(format!("edge {} has |sign| != 1", e.id)));
            }
            if edges.iter().any(|x: &EdgeSpec| x.id == e.id) {
                return Err(Error::InvalidGraph(format!("duplicate edge id {}", e.id)));
            }
            edges.push(EdgeSpec {
                id: e.id,
                white: e.w,
                black: e.b,
                offset: (e.offset[0], e.offset[1]),
                weight: e.weight,
                sign,
            });
        }
        for i in 0..n {
            if !edges.iter().any(|e| e.white == i) {
                return Err(Error::InvalidGraph(format!("white vertex {i} has degree 0")));
            }
            if !edges.iter().any(|e| e.black == i) {
                return Err(Error::InvalidGraph(format!("black vertex {i} has degree 0")));
            }
        }
        let r = f.realization;
        let raw = Realization { white: r.white, black: r.black, periods: r.periods };
        let area = raw.area().abs();
        if !(area > 0.0) {
            return Err(Error::InvalidGraph("degenerate periods".into()));
        }
        let scale = 1.0 / area.sqrt();
        let sc = |p: [f64; 2]| [p[0] * scale, p[1] * scale];
        let realization = Realization {
            white: raw.white.iter().copied().map(sc).collect(),
            black: raw.black.iter().copied().map(sc).collect(),
            periods: [sc(raw.periods[0]), sc(raw.periods[1])],
        };
        let g = GraphSpec { name: f.name, n, edges, realization, scale };
        crate::faces::check_flatness(&g)?;
        Ok(g)
    }

    pub fn to_toml(&self) -> String {
        let inv = 1.0 / self.scale;
        let sc = |p: [f64; 2]| [p[0] * inv, p[1] * inv];
        let f = GraphFile {
            name: self.name.clone(),
            vertices: VerticesFile { white: self.n, black: self.n },
            realization: RealizationFile {
                white: self.realization.white.iter().copied().map(sc).collect(),
                black: self.realization.black.iter().copied().map(sc).collect(),
                periods: [sc(self.realization.periods[0]), sc(self.realization.periods[1])],
            },
            edges: self
                .edges
                .iter()
                .map(|e| EdgeFile {
                    id: e.id.clone(),
                    w: e.white,
                    b: e.black,
                    offset: [e.offset.0, e.offset.1],
                    weight: e.weight,
                    sign: if e.sign.im == 0.0 {
                        SignFile::Real(e.sign.re)
                    } else {
                        SignFile::Complex([e.sign.re, e.sign.im])
                    },
                })
                .collect(),
        };
        toml::to_string(&f).expect("graph serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn edge_index(&self, id: &str) -> Option<usize> {
        self.edges.iter().position(|e| e.id == id)
    }

    /// Copy with one edge weight replaced.
    pub fn with_weight(&self, edge: usize, weight: f64) -> Result<Self> {
        if !(weight > 0.0) {
            return Err(Error::NonpositiveWeight(self.edges[edge].id.clone()));
        }
        let mut g = self.clone();
        g.edges[edge].weight = weight;
        Ok(g)
    }

    /// Copy with every weight multiplied by `lambda`.
    pub fn rescaled(&self, lambda: f64) -> Self {
        let mut g = self.clone();
        for e in &mut g.edges {
            e.weight *= lambda;
        }
        g
    }

    /// K(z, w) as a matrix of Laurent polynomials, rows white, columns black.
    pub fn kasteleyn_laurent(&self) -> Vec<Vec<Laurent2>> {
        let mut m = vec![vec![Laurent2::zero(); self.n]; self.n];
        for e in &self.edges {
            let mono = Laurent2::monomial(e.kasteleyn(), -e.offset.1 as i32, e.offset.0 as i32);
            m[e.white][e.black] = &m[e.white][e.black] + &mono;
        }
        m
    }

    /// Edge indices incident to a fundamental-domain vertex.
    pub fn incident(&self, color: Color, index: usize) -> Vec<usize> {
        (0..self.edges.len())
            .filter(|&i| match color {
                Color::White => self.edges[i].white == index,
                Color::Black => self.edges[i].black == index,
            })
            .collect()
    }

    pub fn all_real(&self) -> bool {
        self.edges.iter().all(|e| e.sign.im == 0.0)
    }
}

/// Z² with weights (a, b, c, d) counterclockwise around white vertices; `d = 0`
/// drops the d-edge (honeycomb).
pub fn z2(a: f64, b: f64, cw: f64, d: f64) -> Result<GraphSpec> {
    let mut edges = format!(
        "[[edges]]\nid = \"a\"\nw = 0\nb = 0\noffset = [0, 0]\nweight = {a:?}\nsign = 1.0\n\n\
         [[edges]]\nid = \"b\"\nw = 0\nb = 0\noffset = [-1, 0]\nweight = {b:?}\nsign = 1.0\n\n\
         [[edges]]\nid = \"c\"\nw = 0\nb = 0\noffset = [-1, -1]\nweight = {cw:?}\nsign = -1.0\n"
    );
    if d != 0.0 {
        edges.push_str(&format!(
            "\n[[edges]]\nid = \"d\"\nw = 0\nb = 0\noffset = [0, -1]\nweight = {d:?}\nsign = 1.0\n"
        ));
    }
    let name = if d == 0.0 { "honeycomb".to_string() } else { format!("z2_{a}_{b}_{cw}_{d}") };
    let text = format!(
        "name = \"{name}\"\n\n[vertices]\nwhite = 1\nblack = 1\n\n[realization]\n\
         white = [[0.0, 0.0]]\nblack = [[1.0, 0.0]]\nperiods = [[1.0, -1.0], [1.0, 1.0]]\n\n{edges}"
    );
    GraphSpec::from_toml(&text)
}

/// Square-octagon graph with connector weight e^a on (w1, b1) and unit weights elsewhere.
pub fn square_octagon(a: f64) -> Result<GraphSpec> {
    GraphSpec::from_toml(&square_octagon_toml(a.exp()))
}

pub fn square_octagon_toml(w11: f64) -> String {
    let r = std::f64::consts::SQRT_2 / (4.0 + 4.0 * std::f64::consts::SQRT_2);
    let h = 0.5;
    let edges = [
        ("w1b1", 0, 0, [0, 0], w11, 1.0),
        ("w1b2", 0, 1, [-1, 0], 1.0, 1.0),
        ("w1b4", 0, 3, [0, 1], 1.0, -1.0),
        ("w2b1", 1, 0, [0, 0], 1.0, 1.0),
        ("w2b2", 1, 1, [0, 0], 1.0, 1.0),
        ("w2b3", 1, 2, [0, 0], 1.0, 1.0),
        ("w3b2", 2, 1, [0, -1], 1.0, 1.0),
        ("w3b3", 2, 2, [0, 0], 1.0, 1.0),
        ("w3b4", 2, 3, [1, 0], 1.0, 1.0),
        ("w4b1", 3, 0, [0, 0], 1.0, -1.0),
        ("w4b3", 3, 2, [0, 0], 1.0, 1.0),
        ("w4b4", 3, 3, [0, 0], 1.0, 1.0),
    ];
    let mut s = format!(
        "name = \"square_octagon\"\n\n[vertices]\nwhite = 4\nblack = 4\n\n[realization]\n\
         white = [[{:?}, {:?}], [{r:?}, {r:?}], [{:?}, {:?}], [{:?}, {:?}]]\n\
         black = [[{:?}, {r:?}], [{:?}, {:?}], [{r:?}, {:?}], [{:?}, {:?}]]\n\
         periods = [[1.0, 0.0], [0.0, 1.0]]\n",
        -h + r,
        h - r,
        h - r,
        -h + r,
        -r,
        -r,
        -r,
        h - r,
        h - r,
        -r,
        -h + r,
        -h + r,
    );
    for (id, w, b, off, wt, sg) in edges {
        s.push_str(&format!(
            "\n[[edges]]\nid = \"{id}\"\nw = {w}\nb = {b}\noffset = [{}, {}]\nweight = {wt:?}\nsign = {sg:?}\n",
            off[0], off[1]
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z2_loads_with_unit_area() {
        let g = z2(1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(g.n, 1);
        assert!((g.realization.area() - 1.0).abs() < 1e-14);
        assert!((g.scale - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-14);
    }

    #[test]
    fn zero_weight_rejected() {
        let err = z2(1.0, 0.0, 1.0, 1.0).unwrap_err();
        assert!(err.to_string().contains("nonpositive weight"));
    }

    #[test]
    fn toml_roundtrip_preserves_hash() {
        let g = square_octagon(0.0).unwrap();
        let h = GraphSpec::from_toml(&g.to_toml()).unwrap();
        assert_eq!(g.hash(), h.hash());
    }

    #[test]
    fn unequal_color_counts_rejected() {
        let text = "name = \"x\"\n[vertices]\nwhite = 1\nblack = 2\n[realization]\nwhite = [[0.0,0.0]]\n\
                    black = [[1.0,0.0],[2.0,0.0]]\nperiods = [[1.0,0.0],[0.0,1.0]]\n";
        assert!(GraphSpec::from_toml(text).is_err());
    }
}
