//! Finite vertex-disjoint edge patterns with a marked vertex.

use std::collections::HashSet;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::graph::{Color, GraphSpec, VertexRef};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatternEdge {
    pub edge: usize,
    pub offset: (i64, i64),
}

impl PatternEdge {
    pub fn new(edge: usize, offset: (i64, i64)) -> Self {
        Self { edge, offset }
    }

    pub fn translate(self, by: (i64, i64)) -> Self {
        Self { edge: self.edge, offset: (self.offset.0 + by.0, self.offset.1 + by.1) }
    }

    pub fn white(&self, g: &GraphSpec) -> VertexRef {
        g.edges[self.edge].white_at(self.offset)
    }

    pub fn black(&self, g: &GraphSpec) -> VertexRef {
        g.edges[self.edge].black_at(self.offset)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pattern {
    pub edges: Vec<PatternEdge>,
    pub marked: VertexRef,
}

impl Pattern {
    pub fn single(edge: usize, g: &GraphSpec) -> Self {
        let e = PatternEdge::new(edge, (0, 0));
        Self { marked: e.white(g), edges: vec![e] }
    }

    pub fn translate(&self, by: (i64, i64)) -> Self {
        Self {
            edges: self.edges.iter().map(|e| e.translate(by)).collect(),
            marked: self.marked.translate(by),
        }
    }

    /// Parses `id[@x,y]` terms joined by `+`, e.g. `a+a@1,0`; the marked vertex
    /// is the white end of the first edge.
    pub fn parse(g: &GraphSpec, text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for term in text.split('+') {
            let term = term.trim();
            let (id, off) = match term.split_once('@') {
                Some((id, off)) => {
                    let v: Vec<&str> = off.split(',').collect();
                    if v.len() != 2 {
                        return Err(Error::Parse(format!("bad offset in {term}")));
                    }
                    let p = |s: &str| s.trim().parse::<i64>().map_err(|e| Error::Parse(e.to_string()));
                    (id, (p(v[0])?, p(v[1])?))
                }
                None => (term, (0, 0)),
            };
            let edge = g
                .edge_index(id)
                .ok_or_else(|| Error::Pattern(format!("unknown edge id {id}")))?;
            edges.push(PatternEdge::new(edge, off));
        }
        if edges.is_empty() {
            return Err(Error::Pattern("empty pattern".into()));
        }
        let marked = edges[0].white(g);
        validate_pattern(g, Pattern { edges, marked })
    }

    pub fn load(g: &GraphSpec, path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(g, &text)
    }

    pub fn from_toml(g: &GraphSpec, text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Marked {
            color: Color,
            index: usize,
            offset: [i64; 2],
        }
        #[derive(Deserialize)]
        struct Edge {
            id: String,
            offset: [i64; 2],
        }
        #[derive(Deserialize)]
        struct File {
            marked: Marked,
            edges: Vec<Edge>,
        }
        let f: File = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut edges = Vec::new();
        for e in f.edges {
            let edge = g
                .edge_index(&e.id)
                .ok_or_else(|| Error::Pattern(format!("unknown edge id {}", e.id)))?;
            edges.push(PatternEdge::new(edge, (e.offset[0], e.offset[1])));
        }
        if f.marked.index >= g.n {
            return Err(Error::Pattern("marked vertex index out of range".into()));
        }
        let marked = VertexRef {
            color: f.marked.color,
            index: f.marked.index,
            offset: (f.marked.offset[0], f.marked.offset[1]),
        };
        validate_pattern(g, Pattern { edges, marked })
    }

    /// All vertices covered by the pattern.
    pub fn vertices(&self, g: &GraphSpec) -> Vec<VertexRef> {
        self.edges.iter().flat_map(|e| [e.white(g), e.black(g)]).collect()
    }
}

/// Checks that edges are distinct and pairwise vertex-disjoint.
pub fn validate_pattern(g: &GraphSpec, p: Pattern) -> Result<Pattern> {
    if p.edges.is_empty() {
        return Err(Error::Pattern("empty pattern".into()));
    }
    let mut seen_edges = HashSet::new();
    let mut seen_vertices = HashSet::new();
    for e in &p.edges {
        if e.edge >= g.edges.len() {
            return Err(Error::Pattern(format!("edge index {} out of range", e.edge)));
        }
        if !seen_edges.insert(*e) {
            return Err(Error::Pattern(format!("duplicate edge {}", g.edges[e.edge].id)));
        }
        for v in [e.white(g), e.black(g)] {
            if !seen_vertices.insert(v) {
                return Err(Error::Pattern(format!(
                    "shared vertex {:?} {} at {:?}",
                    v.color, v.index, v.offset
                )));
            }
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::z2;

    #[test]
    fn single_edge_is_valid() {
        let g = z2(1.0, 1.0, 1.0, 1.0).unwrap();
        assert!(Pattern::parse(&g, "a").is_ok());
    }

    #[test]
    fn shared_white_rejected() {
        let g = z2(1.0, 1.0, 1.0, 1.0).unwrap();
        let err = Pattern::parse(&g, "a+b").unwrap_err();
        assert!(err.to_string().contains("shared vertex"));
    }

    #[test]
    fn translated_pair_is_valid() {
        let g = z2(1.0, 1.0, 1.0, 1.0).unwrap();
        let p = Pattern::parse(&g, "a+a@1,0").unwrap();
        assert_eq!(p.edges.len(), 2);
    }

    #[test]
    fn duplicate_rejected() {
        let g = z2(1.0, 1.0, 1.0, 1.0).unwrap();
        assert!(Pattern::parse(&g, "a+a").unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn toml_pattern() {
        let g = z2(1.0, 1.0, 1.0, 1.0).unwrap();
        let text = "[marked]\ncolor = \"white\"\nindex = 0\noffset = [0, 0]\n\n\
                    [[edges]]\nid = \"a\"\noffset = [0, 0]\n";
        let p = Pattern::from_toml(&g, text).unwrap();
        assert_eq!(p.edges[0], PatternEdge::new(0, (0, 0)));
    }
}
