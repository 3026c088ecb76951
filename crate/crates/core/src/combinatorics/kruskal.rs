use num_rational::Ratio;

use crate::error::{Error, Result};

use super::forest::{Forest, UnionFind};
use super::graph::Graph;

/// Largest edge count for which all edge orderings are enumerated.
pub const MAX_KRUSKAL_EDGES: usize = 8;

/// The tree Kruskal's greedy loop-free selection builds when the edges of
/// `g` are offered in the given order.
pub fn kruskal_tree(g: &Graph, order: &[usize]) -> Forest {
    let mut uf = UnionFind::new(g.n_vertices());
    let chosen: Vec<(usize, usize)> = order
        .iter()
        .map(|&i| g.edges()[i])
        .filter(|&(a, b)| uf.union(a, b))
        .collect();
    Forest::new(g.n_vertices(), chosen).expect("greedy selection is acyclic")
}

/// `w(T, g)`: the fraction of edge orderings of `g` for which Kruskal's
/// selection returns `T`.
pub fn kruskal_weight(tree: &Forest, g: &Graph) -> Result<Ratio<i64>> {
    let m = g.edges().len();
    if m > MAX_KRUSKAL_EDGES {
        return Err(Error::resource("Kruskal edge count", m, MAX_KRUSKAL_EDGES));
    }
    if tree.n_vertices() != g.n_vertices()
        || !tree.is_spanning_tree()
        || !tree.edges().iter().all(|&(a, b)| g.contains_edge(a, b))
    {
        return Err(Error::input("tree is not a spanning tree of the graph"));
    }
    let mut order: Vec<usize> = (0..m).collect();
    let mut hits = 0i64;
    let mut total = 0i64;
    // Heap's algorithm over all m! orderings.
    let mut c = vec![0usize; m];
    let mut visit = |order: &[usize]| {
        total += 1;
        if &kruskal_tree(g, order) == tree {
            hits += 1;
        }
    };
    visit(&order);
    let mut i = 0;
    while i < m {
        if c[i] < i {
            if i % 2 == 0 {
                order.swap(0, i);
            } else {
                order.swap(c[i], i);
            }
            visit(&order);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(Ratio::new(hits, total))
}
