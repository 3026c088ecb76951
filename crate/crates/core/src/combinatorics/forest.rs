use crate::error::{Error, Result};

use super::Partition;

pub const DEFAULT_TREE_CAP: usize = 7;

/// An acyclic edge set on the vertices `0..n`.
///
/// Edges are stored as `(min, max)` pairs in sorted order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Forest {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Forest {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut edges: Vec<(usize, usize)> = edges
            .into_iter()
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        let mut uf = UnionFind::new(n);
        for &(a, b) in &edges {
            if b >= n {
                return Err(Error::input(format!("edge ({a},{b}) leaves vertex set 0..{n}")));
            }
            if a == b || !uf.union(a, b) {
                return Err(Error::input(format!("edge ({a},{b}) closes a loop")));
            }
        }
        Ok(Forest { n, edges })
    }

    pub fn empty(n: usize) -> Self {
        Forest { n, edges: Vec::new() }
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains_edge(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }

    /// True when the forest is a single tree on all `n` vertices.
    pub fn is_spanning_tree(&self) -> bool {
        self.n >= 1 && self.edges.len() + 1 == self.n
    }

    /// Coordination number of `x`.
    pub fn degree(&self, x: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == x || b == x).count()
    }

    /// Component label of each vertex (labels are the smallest vertex).
    pub fn component_labels(&self) -> Vec<usize> {
        let mut uf = UnionFind::new(self.n);
        for &(a, b) in &self.edges {
            uf.union(a, b);
        }
        let mut smallest = vec![usize::MAX; self.n];
        for v in 0..self.n {
            let r = uf.find(v);
            smallest[r] = smallest[r].min(v);
        }
        (0..self.n).map(|v| smallest[uf.find(v)]).collect()
    }

    /// The partition of `0..n` into the vertex sets of the trees.
    pub fn partition(&self) -> Partition {
        let labels = self.component_labels();
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        let mut index = vec![usize::MAX; self.n];
        for v in 0..self.n {
            let l = labels[v];
            if index[l] == usize::MAX {
                index[l] = blocks.len();
                blocks.push(Vec::new());
            }
            blocks[index[l]].push(v);
        }
        Partition { blocks }
    }

    /// Edge indices on the forest path from `a` to `b`, or `None` when the
    /// two vertices lie in different trees.
    pub fn path_edges(&self, a: usize, b: usize) -> Option<Vec<usize>> {
        if a == b {
            return Some(Vec::new());
        }
        // Depth-first search recording the edge used to reach each vertex.
        let mut via: Vec<Option<(usize, usize)>> = vec![None; self.n];
        let mut seen = vec![false; self.n];
        let mut stack = vec![a];
        seen[a] = true;
        while let Some(v) = stack.pop() {
            for (i, &(p, q)) in self.edges.iter().enumerate() {
                let w = if p == v {
                    q
                } else if q == v {
                    p
                } else {
                    continue;
                };
                if !seen[w] {
                    seen[w] = true;
                    via[w] = Some((v, i));
                    stack.push(w);
                }
            }
        }
        if !seen[b] {
            return None;
        }
        let mut path = Vec::new();
        let mut cur = b;
        while cur != a {
            let (prev, e) = via[cur].expect("reached vertex has a parent");
            path.push(e);
            cur = prev;
        }
        Some(path)
    }

    /// Embeds a forest on `0..k` into `0..n` via `labels[i]`.
    pub fn relabel(&self, labels: &[usize], n: usize) -> Result<Forest> {
        Forest::new(n, self.edges.iter().map(|&(a, b)| (labels[a], labels[b])))
    }

    /// Union of edge-disjoint forests on the same vertex set.
    pub fn union(parts: &[Forest], n: usize) -> Result<Forest> {
        Forest::new(n, parts.iter().flat_map(|f| f.edges.iter().copied()))
    }
}

/// Labeled spanning trees on `0..q`, each exactly once (Prüfer decoding).
#[derive(Debug, Clone)]
pub struct TreeIter {
    q: usize,
    code: u64,
    total: u64,
}

impl Iterator for TreeIter {
    type Item = Forest;

    fn next(&mut self) -> Option<Forest> {
        if self.code >= self.total {
            return None;
        }
        let q = self.q;
        let code = self.code;
        self.code += 1;
        if q == 1 {
            return Some(Forest::empty(1));
        }
        let mut seq = Vec::with_capacity(q - 2);
        let mut c = code;
        for _ in 0..q - 2 {
            seq.push((c % q as u64) as usize);
            c /= q as u64;
        }
        let mut degree = vec![1usize; q];
        for &s in &seq {
            degree[s] += 1;
        }
        let mut edges = Vec::with_capacity(q - 1);
        for &s in &seq {
            let leaf = (0..q).find(|&i| degree[i] == 1).expect("a leaf exists");
            edges.push((leaf, s));
            degree[leaf] -= 1;
            degree[s] -= 1;
        }
        let rest: Vec<usize> = (0..q).filter(|&i| degree[i] == 1).collect();
        edges.push((rest[0], rest[1]));
        Some(Forest::new(q, edges).expect("Prüfer decoding yields a tree"))
    }
}

/// Every labeled spanning tree on `q` vertices (`q^(q-2)` of them).
pub fn enumerate_trees(q: usize, cap: usize) -> Result<TreeIter> {
    if q > cap {
        return Err(Error::resource("tree vertex count", q, cap));
    }
    let total = match q {
        0 => 0,
        1 | 2 => 1,
        _ => (q as u64).pow(q as u32 - 2),
    };
    Ok(TreeIter { q, code: 0, total })
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false if `a` and `b` were already connected.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn tree_counts_follow_cayley() {
        assert_eq!(enumerate_trees(2, 7).unwrap().count(), 1);
        assert_eq!(enumerate_trees(4, 7).unwrap().count(), 16);
        assert_eq!(enumerate_trees(5, 7).unwrap().count(), 125);
        let trees: HashSet<Forest> = enumerate_trees(5, 7).unwrap().collect();
        assert_eq!(trees.len(), 125);
        assert!(trees.iter().all(Forest::is_spanning_tree));
        assert!(enumerate_trees(8, DEFAULT_TREE_CAP).is_err());
    }

    #[test]
    fn forest_rejects_cycles() {
        assert!(Forest::new(3, [(0, 1), (1, 2), (0, 2)]).is_err());
        assert!(Forest::new(2, [(0, 2)]).is_err());
        assert!(Forest::new(2, [(1, 1)]).is_err());
    }

    #[test]
    fn paths_and_components() {
        let f = Forest::new(5, [(0, 1), (1, 2), (3, 4)]).unwrap();
        assert_eq!(f.path_edges(0, 2).unwrap().len(), 2);
        assert!(f.path_edges(0, 3).is_none());
        assert_eq!(f.partition().canonical(), vec![vec![0, 1, 2], vec![3, 4]]);
        assert_eq!(f.degree(1), 2);
    }
}
