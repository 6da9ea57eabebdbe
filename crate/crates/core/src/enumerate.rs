//! Brute-force perfect-matching enumeration on small toroidal quotients.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::GraphSpec;

pub const DEFAULT_BUDGET: usize = 36;

/// An edge instance on the torus: edge class plus cell.
pub type Instance = (usize, (i64, i64));

#[derive(Clone, Debug)]
pub struct TorusEnumeration {
    pub size: (usize, usize),
    pub partition_function: f64,
    pub matchings: u64,
    /// Marginal per edge class (equal across cells by translation invariance).
    pub class_marginals: Vec<f64>,
    /// Marginal per instance, indexed [edge][cell].
    pub instance_marginals: Vec<Vec<f64>>,
}

impl TorusEnumeration {
    /// Largest deviation from 1 of the marginal sums at torus vertices.
    pub fn vertex_sum_residual(&self, g: &GraphSpec) -> f64 {
        let (lx, ly) = self.size;
        let cells = lx * ly;
        let mut wsum = vec![0.0; g.n * cells];
        let mut bsum = vec![0.0; g.n * cells];
        for (ei, e) in g.edges.iter().enumerate() {
            for cell in 0..cells {
                let (cx, cy) = ((cell % lx) as i64, (cell / lx) as i64);
                let bx = (cx + e.offset.0).rem_euclid(lx as i64) as usize;
                let by = (cy + e.offset.1).rem_euclid(ly as i64) as usize;
                let m = self.instance_marginals[ei][cell];
                wsum[e.white * cells + cell] += m;
                bsum[e.black * cells + bx + lx * by] += m;
            }
        }
        wsum.iter().chain(bsum.iter()).map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
    }
}

struct Arc {
    black: usize,
    weight: f64,
    edge: usize,
    cell: usize,
}

pub fn enumerate_torus(
    g: &GraphSpec,
    size: (usize, usize),
    constraint: &HashMap<Instance, bool>,
    budget: usize,
) -> Result<TorusEnumeration> {
    let (lx, ly) = size;
    let cells = lx * ly;
    let nverts = 2 * g.n * cells;
    if nverts > budget || cells == 0 {
        return Err(Error::Budget(nverts));
    }
    let mut arcs: Vec<Vec<Arc>> = (0..g.n * cells).map(|_| Vec::new()).collect();
    for (ei, e) in g.edges.iter().enumerate() {
        for cell in 0..cells {
            let (cx, cy) = ((cell % lx) as i64, (cell / lx) as i64);
            let key = (ei, (cx, cy));
            if constraint.get(&key) == Some(&false) {
                continue;
            }
            let bx = (cx + e.offset.0).rem_euclid(lx as i64) as usize;
            let by = (cy + e.offset.1).rem_euclid(ly as i64) as usize;
            arcs[e.white * cells + cell].push(Arc {
                black: e.black * cells + bx + lx * by,
                weight: e.weight,
                edge: ei,
                cell,
            });
        }
    }
    // forced edges
    let forced: Vec<(usize, usize, usize)> = constraint
        .iter()
        .filter(|(_, &v)| v)
        .map(|(&(ei, (cx, cy)), _)| {
            let cell = cx.rem_euclid(lx as i64) as usize + lx * cy.rem_euclid(ly as i64) as usize;
            (ei, cell, g.edges[ei].white * cells + cell)
        })
        .collect();

    let nw = g.n * cells;
    let ne = g.edges.len();
    let run = |first: Option<usize>| -> (f64, u64, Vec<f64>) {
        let mut used_b = vec![false; nw];
        let mut choice: Vec<Option<usize>> = vec![None; nw];
        let mut acc = vec![0.0; ne * cells];
        let mut z = 0.0;
        let mut count = 0u64;
        for &(ei, cell, wv) in &forced {
            let pos = arcs[wv].iter().position(|a| a.edge == ei && a.cell == cell);
            match pos {
                Some(p) if choice[wv].is_none() && !used_b[arcs[wv][p].black] => {
                    choice[wv] = Some(p);
                    used_b[arcs[wv][p].black] = true;
                }
                _ => return (0.0, 0, acc),
            }
        }
        let order: Vec<usize> = (0..nw).filter(|&v| choice[v].is_none()).collect();
        if let (Some(f), Some(&v0)) = (first, order.first()) {
            let a = &arcs[v0][f];
            if used_b[a.black] {
                return (0.0, 0, acc);
            }
        }
        fn rec(
            depth: usize,
            order: &[usize],
            arcs: &[Vec<Arc>],
            used_b: &mut [bool],
            choice: &mut [Option<usize>],
            first: Option<usize>,
            acc: &mut [f64],
            z: &mut f64,
            count: &mut u64,
            cells: usize,
        ) {
            if depth == order.len() {
                let mut wprod = 1.0;
                for (v, c) in choice.iter().enumerate() {
                    wprod *= arcs[v][c.unwrap()].weight;
                }
                *z += wprod;
                *count += 1;
                for (v, c) in choice.iter().enumerate() {
                    let a = &arcs[v][c.unwrap()];
                    acc[a.edge * cells + a.cell] += wprod;
                }
                return;
            }
            let v = order[depth];
            let range: Vec<usize> = match (depth, first) {
                (0, Some(f)) => vec![f],
                _ => (0..arcs[v].len()).collect(),
            };
            for k in range {
                let b = arcs[v][k].black;
                if used_b[b] {
                    continue;
                }
                used_b[b] = true;
                choice[v] = Some(k);
                rec(depth + 1, order, arcs, used_b, choice, first, acc, z, count, cells);
                choice[v] = None;
                used_b[b] = false;
            }
        }
        rec(0, &order, &arcs, &mut used_b, &mut choice, first, &mut acc, &mut z, &mut count, cells);
        (z, count, acc)
    };

    let first_white = (0..nw).find(|v| !forced.iter().any(|f| f.2 == *v));
    let parts: Vec<(f64, u64, Vec<f64>)> = match first_white {
        Some(v0) => (0..arcs[v0].len()).into_par_iter().map(|k| run(Some(k))).collect(),
        None => vec![run(None)],
    };
    let mut z = 0.0;
    let mut count = 0;
    let mut acc = vec![0.0; ne * cells];
    for (pz, pc, pa) in parts {
        z += pz;
        count += pc;
        for (a, b) in acc.iter_mut().zip(pa) {
            *a += b;
        }
    }
    if z == 0.0 {
        return Ok(TorusEnumeration {
            size,
            partition_function: 0.0,
            matchings: 0,
            class_marginals: vec![f64::NAN; ne],
            instance_marginals: vec![vec![f64::NAN; cells]; ne],
        });
    }
    let instance_marginals: Vec<Vec<f64>> =
        (0..ne).map(|e| (0..cells).map(|c| acc[e * cells + c] / z).collect()).collect();
    let class_marginals = instance_marginals.iter().map(|v| v.iter().sum::<f64>() / cells as f64).collect();
    Ok(TorusEnumeration { size, partition_function: z, matchings: count, class_marginals, instance_marginals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{square_octagon, z2};

    #[test]
    fn z2_uniform_two_by_two() {
        let g = z2(1.0, 1.0, 1.0, 1.0).unwrap();
        let t = enumerate_torus(&g, (2, 2), &HashMap::new(), DEFAULT_BUDGET).unwrap();
        for m in &t.class_marginals {
            assert!((m - 0.25).abs() < 1e-14);
        }
        assert!(t.vertex_sum_residual(&g) < 1e-14);
        assert_eq!(t.partition_function, t.matchings as f64);
    }

    #[test]
    fn heavier_a_edge_is_more_likely() {
        let g = z2(2.0, 1.0, 1.0, 1.0).unwrap();
        let t = enumerate_torus(&g, (2, 2), &HashMap::new(), DEFAULT_BUDGET).unwrap();
        assert!(t.class_marginals[0] > 0.25);
    }

    #[test]
    fn budget_enforced() {
        let g = square_octagon(0.0).unwrap();
        assert!(enumerate_torus(&g, (3, 2), &HashMap::new(), DEFAULT_BUDGET).is_err());
    }

    #[test]
    fn constraint_forces_edge() {
        let g = z2(1.0, 1.0, 1.0, 1.0).unwrap();
        let mut c = HashMap::new();
        c.insert((0usize, (0i64, 0i64)), true);
        let t = enumerate_torus(&g, (2, 2), &c, DEFAULT_BUDGET).unwrap();
        assert!((t.instance_marginals[0][0] - 1.0).abs() < 1e-14);
        assert!(t.vertex_sum_residual(&g) < 1e-14);
    }
}
