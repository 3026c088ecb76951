use crate::error::{Error, Result};
use crate::lattice::SiteSet;
use crate::quadrature::{integrate_unit_cube, CubatureConfig};

use super::forest::Forest;
use super::graph::{connected_with, Graph};

pub const DEFAULT_URSELL_CAP: usize = 6;

/// Alternating sum `sum_g (-1)^|g|` over the connected spanning subgraphs of
/// the incidence graph of `sets`. Equals 1 for a single set.
pub fn ursell_graph_sum(sets: &[SiteSet], cap: usize) -> Result<i64> {
    let n = sets.len();
    if n == 0 {
        return Err(Error::input("Ursell function of an empty family"));
    }
    if n > cap {
        return Err(Error::resource("Ursell family size", n, cap));
    }
    if n == 1 {
        return Ok(1);
    }
    let g = Graph::incidence(sets);
    if !g.is_connected() {
        return Ok(0);
    }
    Ok(connected_subgraph_sum(&g))
}

pub(crate) fn connected_subgraph_sum(g: &Graph) -> i64 {
    let edges = g.edges();
    let m = edges.len();
    let mut total = 0i64;
    for mask in 0u64..(1u64 << m) {
        let chosen = (0..m).filter(|i| mask & (1 << i) != 0).map(|i| edges[i]);
        if connected_with(g.n_vertices(), chosen) {
            total += if mask.count_ones() % 2 == 0 { 1 } else { -1 };
        }
    }
    total
}

/// The part of the Ursell function attributed to the spanning tree `tree`:
/// `(-1)^(n-1) ∫ prod_{l in G minus T} (1 - s^T(l)) ds` when `T` lies in the
/// incidence graph `G`, and 0 otherwise.
pub fn ursell_tree_integral(tree: &Forest, sets: &[SiteSet], cfg: &CubatureConfig) -> Result<f64> {
    let n = sets.len();
    if tree.n_vertices() != n || !tree.is_spanning_tree() {
        return Err(Error::input("tree must span the index set of the family"));
    }
    let g = Graph::incidence(sets);
    if !tree.edges().iter().all(|&(a, b)| g.contains_edge(a, b)) {
        return Ok(0.0);
    }
    let extra: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .copied()
        .filter(|&(a, b)| !tree.contains_edge(a, b))
        .collect();
    let sign = if (n - 1) % 2 == 0 { 1.0 } else { -1.0 };
    if extra.is_empty() {
        return Ok(sign);
    }
    // s^T(a, b) is the smallest weight on the tree path from a to b
    let paths: Vec<Vec<usize>> = extra
        .iter()
        .map(|&(a, b)| tree.path_edges(a, b).expect("spanning tree connects every pair"))
        .collect();
    let out = integrate_unit_cube(tree.len(), cfg, |t| {
        Ok(paths
            .iter()
            .map(|p| 1.0 - p.iter().map(|&e| t[e]).fold(f64::INFINITY, f64::min))
            .product::<f64>())
    })?;
    if !out.converged {
        return Err(Error::numeric("Ursell tree integral did not converge", out.residual));
    }
    Ok(sign * out.value)
}
