use crate::error::{Error, Result};
use crate::lattice::SiteSet;

use super::forest::{Forest, UnionFind};

/// Simple undirected graph on `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut edges: Vec<(usize, usize)> = edges
            .into_iter()
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        if let Some(&(a, b)) = edges.iter().find(|&&(a, b)| a == b || b >= n) {
            return Err(Error::input(format!("invalid edge ({a},{b}) on {n} vertices")));
        }
        Ok(Graph { n, edges })
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .collect();
        Graph { n, edges }
    }

    /// Incidence graph of a family of sets: `i ~ j` when `X_i` meets `X_j`.
    pub fn incidence(sets: &[SiteSet]) -> Self {
        let n = sets.len();
        let edges = (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .filter(|&(a, b)| sets[a].intersects(sets[b]))
            .collect();
        Graph { n, edges }
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn contains_edge(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }

    pub fn is_connected(&self) -> bool {
        connected_with(self.n, self.edges.iter().copied())
    }

    /// All spanning trees, by filtering `(n-1)`-edge subsets.
    pub fn spanning_trees(&self) -> Vec<Forest> {
        let m = self.edges.len();
        if self.n <= 1 {
            return vec![Forest::empty(self.n)];
        }
        let need = self.n - 1;
        let mut out = Vec::new();
        if m < need || m > 24 {
            return out;
        }
        for mask in 0u32..(1 << m) {
            if mask.count_ones() as usize != need {
                continue;
            }
            let chosen = (0..m).filter(|i| mask & (1 << i) != 0).map(|i| self.edges[i]);
            if let Ok(f) = Forest::new(self.n, chosen) {
                out.push(f);
            }
        }
        out
    }
}

pub(crate) fn connected_with(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> bool {
    if n <= 1 {
        return true;
    }
    let mut uf = UnionFind::new(n);
    let mut components = n;
    for (a, b) in edges {
        if uf.union(a, b) {
            components -= 1;
        }
    }
    components == 1
}

/// Number of spanning trees by the matrix-tree theorem, evaluated with the
/// fraction-free Bareiss elimination in exact integer arithmetic.
pub fn spanning_tree_count(graph: &Graph) -> u64 {
    let n = graph.n;
    if n <= 1 {
        return 1;
    }
    let k = n - 1;
    let mut lap = vec![vec![0i128; n]; n];
    for &(a, b) in &graph.edges {
        lap[a][a] += 1;
        lap[b][b] += 1;
        lap[a][b] -= 1;
        lap[b][a] -= 1;
    }
    // Reduced Laplacian: drop the last row and column.
    let mut m: Vec<Vec<i128>> = lap.into_iter().take(k).map(|row| row[..k].to_vec()).collect();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for p in 0..k {
        if m[p][p] == 0 {
            match (p + 1..k).find(|&r| m[r][p] != 0) {
                Some(r) => {
                    m.swap(p, r);
                    sign = -sign;
                }
                None => return 0,
            }
        }
        for i in p + 1..k {
            for j in p + 1..k {
                m[i][j] = (m[i][j] * m[p][p] - m[i][p] * m[p][j]) / prev;
            }
        }
        prev = m[p][p];
    }
    (sign * m[k - 1][k - 1]) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_tree_examples() {
        let path = Graph::new(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(spanning_tree_count(&path), 1);
        assert_eq!(spanning_tree_count(&Graph::complete(3)), 3);
        assert_eq!(spanning_tree_count(&Graph::complete(4)), 16);
        assert_eq!(spanning_tree_count(&Graph::complete(6)), 1296);
        let disconnected = Graph::new(3, [(0, 1)]).unwrap();
        assert_eq!(spanning_tree_count(&disconnected), 0);
    }

    #[test]
    fn enumeration_agrees_with_determinant() {
        let g = Graph::new(5, [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 2), (0, 4)]).unwrap();
        assert_eq!(g.spanning_trees().len() as u64, spanning_tree_count(&g));
    }

    #[test]
    fn incidence_graph() {
        let sets = [
            SiteSet::from_sites([0, 1]),
            SiteSet::from_sites([1, 2]),
            SiteSet::from_sites([3]),
        ];
        let g = Graph::incidence(&sets);
        assert_eq!(g.edges(), &[(0, 1)]);
        assert!(!g.is_connected());
    }
}
