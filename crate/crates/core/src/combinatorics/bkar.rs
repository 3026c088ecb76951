use crate::error::{Error, Result};
use crate::quadrature::{integrate_unit_cube, mixed_partial, CubatureConfig, FdConfig, Scalar};

use super::forest::{enumerate_trees, Forest};
use super::partitions::{enumerate_partitions, Partition};

/// Pair weights `s({x,y})` on `0..n`, with `s({x,x}) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationPoint {
    n: usize,
    values: Vec<f64>,
}

impl InterpolationPoint {
    /// The point with every off-diagonal weight equal to `value`.
    pub fn constant(n: usize, value: f64) -> Self {
        let mut values = vec![value; n * n];
        for x in 0..n {
            values[x * n + x] = 1.0;
        }
        InterpolationPoint { n, values }
    }

    pub fn ones(n: usize) -> Self {
        Self::constant(n, 1.0)
    }

    pub fn n_sites(&self) -> usize {
        self.n
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.n + y]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        if x != y {
            self.values[x * self.n + y] = v;
            self.values[y * self.n + x] = v;
        }
    }

    /// Connected components of the graph of pairs with nonzero weight.
    pub fn partition(&self) -> Partition {
        let edges = (0..self.n)
            .flat_map(|a| (a + 1..self.n).map(move |b| (a, b)))
            .filter(|&(a, b)| self.get(a, b) != 0.0);
        let mut uf = super::forest::UnionFind::new(self.n);
        for (a, b) in edges {
            uf.union(a, b);
        }
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        let mut index = vec![usize::MAX; self.n];
        for v in 0..self.n {
            let r = uf.find(v);
            if index[r] == usize::MAX {
                index[r] = blocks.len();
                blocks.push(Vec::new());
            }
            blocks[index[r]].push(v);
        }
        Partition { blocks }
    }

    /// Restriction to the sites `sub` (relabelled `0..sub.len()`).
    pub fn restrict(&self, sub: &[usize]) -> InterpolationPoint {
        let k = sub.len();
        let mut values = vec![0.0; k * k];
        for (i, &a) in sub.iter().enumerate() {
            for (j, &b) in sub.iter().enumerate() {
                values[i * k + j] = self.get(a, b);
            }
        }
        InterpolationPoint { n: k, values }
    }
}

/// `s^F`: the minimum of the edge values along the forest path between two
/// vertices, and 0 between different trees. `edge_values` follows
/// `forest.edges()`.
pub fn bkar_interpolate(forest: &Forest, edge_values: &[f64]) -> InterpolationPoint {
    let n = forest.n_vertices();
    let mut point = InterpolationPoint::constant(n, 0.0);
    for a in 0..n {
        for b in a + 1..n {
            if let Some(path) = forest.path_edges(a, b) {
                let v = path.iter().map(|&e| edge_values[e]).fold(f64::INFINITY, f64::min);
                point.set(a, b, v);
            }
        }
    }
    point
}

/// How the mixed pair-coordinate derivatives `prod_{l in F} d/ds(l) H` are
/// obtained.
pub enum DerivativeBackend<'a, T> {
    /// Central differences in the pair coordinates with Richardson steps.
    FiniteDifference(FdConfig),
    /// A callable returning the mixed derivative over the listed pairs.
    Exact(&'a dyn Fn(&InterpolationPoint, &[(usize, usize)]) -> Result<T>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BkarOutcome<T> {
    pub value: T,
    /// Sum of cubature residuals over all forests.
    pub residual: f64,
    pub forests: usize,
}

/// Mixed derivative of `h` in the pair coordinates `pairs`, at `point`.
pub(crate) fn pair_derivative<T: Scalar>(
    h: &dyn Fn(&InterpolationPoint) -> Result<T>,
    point: &InterpolationPoint,
    pairs: &[(usize, usize)],
    fd: &FdConfig,
) -> Result<T> {
    let x0: Vec<f64> = pairs.iter().map(|&(a, b)| point.get(a, b)).collect();
    let dirs: Vec<usize> = (0..pairs.len()).collect();
    let mut work = point.clone();
    let out = mixed_partial(
        |x: &[f64]| {
            for (&(a, b), &v) in pairs.iter().zip(x) {
                work.set(a, b, v);
            }
            h(&work)
        },
        &x0,
        &dirs,
        fd,
    )?;
    if !out.value.magnitude().is_finite() {
        return Err(Error::numeric("non-finite finite-difference derivative", f64::NAN));
    }
    Ok(out.value)
}

/// Reconstructs `H(1)` from the forest formula: a sum over partitions of
/// `0..n`, spanning trees on each block, and an integral over the tree-edge
/// weights of the mixed derivative of `H` at the interpolated point.
pub fn bkar_forest_formula<T: Scalar>(
    n: usize,
    h: &dyn Fn(&InterpolationPoint) -> Result<T>,
    backend: &DerivativeBackend<'_, T>,
    cubature: &CubatureConfig,
) -> Result<BkarOutcome<T>> {
    if n > 4 {
        return Err(Error::resource("forest formula vertex count", n, 4));
    }
    let ground: Vec<usize> = (0..n).collect();
    let mut value = T::zero();
    let mut residual = 0.0;
    let mut forests = 0;
    for partition in enumerate_partitions(&ground, n.max(1))? {
        for forest in forests_with_blocks(&partition, n)? {
            forests += 1;
            let pairs = forest.edges().to_vec();
            let out = integrate_unit_cube(pairs.len(), cubature, |t| {
                let point = bkar_interpolate(&forest, t);
                match backend {
                    DerivativeBackend::FiniteDifference(fd) => pair_derivative(h, &point, &pairs, fd),
                    DerivativeBackend::Exact(f) => f(&point, &pairs),
                }
            })?;
            if !out.value.magnitude().is_finite() {
                return Err(Error::numeric("forest formula term is not finite", out.residual));
            }
            value = value + out.value;
            residual += out.residual;
        }
    }
    Ok(BkarOutcome {
        value,
        residual,
        forests,
    })
}

/// Every forest whose trees span exactly the blocks of `partition`.
pub(crate) fn forests_with_blocks(partition: &Partition, n: usize) -> Result<Vec<Forest>> {
    let mut acc = vec![Forest::empty(n)];
    for block in &partition.blocks {
        let trees: Vec<Forest> = enumerate_trees(block.len(), super::DEFAULT_TREE_CAP)?
            .map(|t| t.relabel(block, n))
            .collect::<Result<_>>()?;
        let mut next = Vec::with_capacity(acc.len() * trees.len());
        for f in &acc {
            for t in &trees {
                next.push(Forest::union(&[f.clone(), t.clone()], n)?);
            }
        }
        acc = next;
    }
    Ok(acc)
}
