//! Finite metric lattices, minimal tree sizes and the geometric constants
//! `c_g(m)` and `c_g'(a)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Site = usize;

/// Largest lattice the bitset representation supports.
pub const MAX_SITES: usize = 64;

const METRIC_TOL: f64 = 1e-12;

/// A set of lattice sites stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct SiteSet(pub u64);

impl SiteSet {
    pub const EMPTY: SiteSet = SiteSet(0);

    pub fn singleton(x: Site) -> Self {
        SiteSet(1 << x)
    }

    pub fn from_sites(sites: impl IntoIterator<Item = Site>) -> Self {
        SiteSet(sites.into_iter().fold(0u64, |acc, x| acc | (1 << x)))
    }

    /// All sites `0..n`.
    pub fn full(n: usize) -> Self {
        if n >= 64 {
            SiteSet(u64::MAX)
        } else {
            SiteSet((1u64 << n) - 1)
        }
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, x: Site) -> bool {
        x < 64 && self.0 & (1 << x) != 0
    }

    pub fn union(self, other: SiteSet) -> SiteSet {
        SiteSet(self.0 | other.0)
    }

    pub fn intersection(self, other: SiteSet) -> SiteSet {
        SiteSet(self.0 & other.0)
    }

    pub fn difference(self, other: SiteSet) -> SiteSet {
        SiteSet(self.0 & !other.0)
    }

    pub fn intersects(self, other: SiteSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn is_subset(self, other: SiteSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Smallest site in the set.
    pub fn first(self) -> Option<Site> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as Site)
    }

    pub fn iter(self) -> impl Iterator<Item = Site> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let x = bits.trailing_zeros() as Site;
                bits &= bits - 1;
                Some(x)
            }
        })
    }

    pub fn to_vec(self) -> Vec<Site> {
        self.iter().collect()
    }

    /// All subsets of `self`, including the empty set and `self`.
    pub fn subsets(self) -> impl Iterator<Item = SiteSet> {
        // Standard submask enumeration, yielding the empty set last.
        let full = self.0;
        let mut sub = full;
        let mut done = false;
        std::iter::from_fn(move || {
            if done {
                return None;
            }
            let out = SiteSet(sub);
            if sub == 0 {
                done = true;
            } else {
                sub = (sub - 1) & full;
            }
            Some(out)
        })
    }

    /// Nonempty subsets of `self`.
    pub fn nonempty_subsets(self) -> impl Iterator<Item = SiteSet> {
        self.subsets().filter(|s| !s.is_empty())
    }
}

impl fmt::Debug for SiteSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for SiteSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, x) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{x}")?;
        }
        f.write_str("}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LatticePreset {
    Torus1d { side: usize },
    Torus2d { side: usize },
    Explicit,
}

/// Result of the `c_g'(a)` computation: the brute-force sup over small `Q`
/// and, for vertex-transitive presets, the singleton-ball value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NeighborhoodGrowth {
    pub brute_force: f64,
    pub max_q: usize,
    pub singleton_ball: Option<f64>,
}

impl NeighborhoodGrowth {
    /// Largest of the reported values.
    pub fn value(&self) -> f64 {
        self.singleton_ball
            .map_or(self.brute_force, |b| b.max(self.brute_force))
    }
}

/// Finite set of sites with a metric and an `N`-component field per site.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    n_sites: usize,
    components: usize,
    metric: Vec<f64>,
    preset: LatticePreset,
}

impl Lattice {
    /// Ring `Z/L` with unit nearest-neighbour spacing.
    pub fn torus1d(side: usize, components: usize) -> Result<Self> {
        if side == 0 || side > MAX_SITES {
            return Err(Error::input(format!("torus side {side} out of range")));
        }
        let metric = (0..side)
            .flat_map(|x| (0..side).map(move |y| ring_distance(x, y, side) as f64))
            .collect();
        Self::build(side, components, metric, LatticePreset::Torus1d { side })
    }

    /// `(Z/L)^2` with the graph (taxicab) distance, sites numbered row-major.
    pub fn torus2d(side: usize, components: usize) -> Result<Self> {
        let n = side * side;
        if side == 0 || n > MAX_SITES {
            return Err(Error::input(format!("torus side {side} out of range")));
        }
        let mut metric = vec![0.0; n * n];
        for x in 0..n {
            for y in 0..n {
                let (x0, x1) = (x / side, x % side);
                let (y0, y1) = (y / side, y % side);
                metric[x * n + y] =
                    (ring_distance(x0, y0, side) + ring_distance(x1, y1, side)) as f64;
            }
        }
        Self::build(n, components, metric, LatticePreset::Torus2d { side })
    }

    /// Explicit distance table. The table must be a metric.
    pub fn from_metric(table: &[Vec<f64>], components: usize) -> Result<Self> {
        let n = table.len();
        if n == 0 || n > MAX_SITES {
            return Err(Error::input(format!("lattice size {n} out of range")));
        }
        if table.iter().any(|row| row.len() != n) {
            return Err(Error::input("metric table is not square"));
        }
        let metric: Vec<f64> = table.iter().flatten().copied().collect();
        for x in 0..n {
            if metric[x * n + x].abs() > METRIC_TOL {
                return Err(Error::input(format!("d({x},{x}) is not zero")));
            }
            for y in 0..n {
                let d = metric[x * n + y];
                if !d.is_finite() || d < 0.0 {
                    return Err(Error::input(format!("d({x},{y}) = {d} is not a distance")));
                }
                if (d - metric[y * n + x]).abs() > METRIC_TOL {
                    return Err(Error::input(format!("metric not symmetric at ({x},{y})")));
                }
                for z in 0..n {
                    if d > metric[x * n + z] + metric[z * n + y] + METRIC_TOL {
                        return Err(Error::input(format!(
                            "triangle inequality fails for ({x},{z},{y})"
                        )));
                    }
                }
            }
        }
        Self::build(n, components, metric, LatticePreset::Explicit)
    }

    fn build(n: usize, components: usize, metric: Vec<f64>, preset: LatticePreset) -> Result<Self> {
        if components == 0 {
            return Err(Error::input("field component count must be at least 1"));
        }
        Ok(Lattice {
            n_sites: n,
            components,
            metric,
            preset,
        })
    }

    /// Same sites with every distance multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::input("metric scale factor must be positive"));
        }
        Ok(Lattice {
            metric: self.metric.iter().map(|d| d * factor).collect(),
            preset: LatticePreset::Explicit,
            ..self.clone()
        })
    }

    pub fn len(&self) -> usize {
        self.n_sites
    }

    pub fn is_empty(&self) -> bool {
        self.n_sites == 0
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Number of real field variables, `|L| * N`.
    pub fn dim(&self) -> usize {
        self.n_sites * self.components
    }

    pub fn preset(&self) -> &LatticePreset {
        &self.preset
    }

    pub fn all_sites(&self) -> SiteSet {
        SiteSet::full(self.n_sites)
    }

    pub fn distance(&self, x: Site, y: Site) -> f64 {
        self.metric[x * self.n_sites + y]
    }

    /// Vertex-transitive presets, where singletons attain the `c_g'` sup.
    pub fn is_transitive(&self) -> bool {
        !matches!(self.preset, LatticePreset::Explicit)
    }

    /// Nearest-neighbour lists (with multiplicity) for torus presets.
    pub fn torus_neighbors(&self) -> Option<Vec<Vec<Site>>> {
        match self.preset {
            LatticePreset::Torus1d { side } => Some(
                (0..side)
                    .map(|x| vec![(x + 1) % side, (x + side - 1) % side])
                    .collect(),
            ),
            LatticePreset::Torus2d { side } => Some(
                (0..side * side)
                    .map(|x| {
                        let (r, c) = (x / side, x % side);
                        vec![
                            ((r + 1) % side) * side + c,
                            ((r + side - 1) % side) * side + c,
                            r * side + (c + 1) % side,
                            r * side + (c + side - 1) % side,
                        ]
                    })
                    .collect(),
            ),
            LatticePreset::Explicit => None,
        }
    }

    fn check_sites(&self, points: &[Site]) -> Result<()> {
        match points.iter().find(|&&x| x >= self.n_sites) {
            Some(x) => Err(Error::input(format!("unknown site {x}"))),
            None => Ok(()),
        }
    }

    /// Edges of the minimum spanning tree on `points` (duplicates ignored).
    ///
    /// Prim's algorithm from the smallest site; among equal weights the
    /// lexicographically smallest `(min, max)` site pair wins.
    pub fn mst_edges(&self, points: &[Site]) -> Result<Vec<(Site, Site)>> {
        self.check_sites(points)?;
        let mut sites: Vec<Site> = points.to_vec();
        sites.sort_unstable();
        sites.dedup();
        let mut edges = Vec::with_capacity(sites.len().saturating_sub(1));
        if sites.len() < 2 {
            return Ok(edges);
        }
        let mut in_tree = vec![false; sites.len()];
        in_tree[0] = true;
        for _ in 1..sites.len() {
            let mut best: Option<(f64, (Site, Site), usize)> = None;
            for (_, &u) in sites.iter().enumerate().filter(|(i, _)| in_tree[*i]) {
                for (j, &v) in sites.iter().enumerate().filter(|(j, _)| !in_tree[*j]) {
                    let w = self.distance(u, v);
                    let key = (u.min(v), u.max(v));
                    let better = match best {
                        None => true,
                        Some((bw, bkey, _)) => {
                            w < bw - METRIC_TOL || ((w - bw).abs() <= METRIC_TOL && key < bkey)
                        }
                    };
                    if better {
                        best = Some((w, key, j));
                    }
                }
            }
            let (_, key, j) = best.expect("nonempty frontier");
            in_tree[j] = true;
            edges.push(key);
        }
        Ok(edges)
    }

    /// Minimal total edge length of a tree spanning `points` (`d_t`).
    pub fn tree_size(&self, points: &[Site]) -> Result<f64> {
        if points.is_empty() {
            return Err(Error::input("tree_size needs at least one point"));
        }
        Ok(self
            .mst_edges(points)?
            .iter()
            .map(|&(u, v)| self.distance(u, v))
            .sum())
    }

    /// `c_g(m) = sup_x sum_{x'} exp(-m d(x,x'))`.
    pub fn cg(&self, m: f64) -> Result<f64> {
        if !(m > 0.0) {
            return Err(Error::input("c_g needs m > 0"));
        }
        Ok((0..self.n_sites)
            .map(|x| {
                (0..self.n_sites)
                    .map(|y| (-m * self.distance(x, y)).exp())
                    .sum::<f64>()
            })
            .fold(f64::MIN, f64::max))
    }

    fn neighborhood_size(&self, q: SiteSet, a: f64) -> usize {
        (0..self.n_sites)
            .filter(|&x| q.iter().any(|y| self.distance(x, y) <= a + METRIC_TOL))
            .count()
    }

    /// `c_g'(a) = sup_Q |Q|^{-1} |{x : d(x,Q) <= a}|`, brute force over
    /// nonempty `Q` with `|Q| <= max_q`.
    pub fn cg_prime(&self, a: f64, max_q: usize) -> Result<NeighborhoodGrowth> {
        if !(a > 0.0) {
            return Err(Error::input("c_g' needs a > 0"));
        }
        let max_q = max_q.clamp(1, self.n_sites);
        let mut best = 0.0f64;
        let mut visit = |q: SiteSet| {
            let ratio = self.neighborhood_size(q, a) as f64 / q.len() as f64;
            best = best.max(ratio);
        };
        for_each_subset_up_to(self.n_sites, max_q, &mut visit);
        let singleton_ball = self
            .is_transitive()
            .then(|| self.neighborhood_size(SiteSet::singleton(0), a) as f64);
        Ok(NeighborhoodGrowth {
            brute_force: best,
            max_q,
            singleton_ball,
        })
    }
}

fn ring_distance(x: usize, y: usize, side: usize) -> usize {
    let d = x.abs_diff(y);
    d.min(side - d)
}

/// Calls `f` on every nonempty subset of `0..n` with at most `k` elements.
fn for_each_subset_up_to(n: usize, k: usize, f: &mut impl FnMut(SiteSet)) {
    fn rec(start: usize, n: usize, k: usize, cur: SiteSet, f: &mut impl FnMut(SiteSet)) {
        for x in start..n {
            let next = cur.union(SiteSet::singleton(x));
            f(next);
            if next.len() < k {
                rec(x + 1, n, k, next, f);
            }
        }
    }
    rec(0, n, k, SiteSet::EMPTY, f);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(points: &[f64]) -> Lattice {
        let table: Vec<Vec<f64>> = points
            .iter()
            .map(|a| points.iter().map(|b| (a - b).abs()).collect())
            .collect();
        Lattice::from_metric(&table, 1).unwrap()
    }

    /// Exhaustive minimum over all labeled spanning trees (Prüfer decoding).
    fn brute_tree_size(lat: &Lattice, pts: &[Site]) -> f64 {
        let q = pts.len();
        if q == 1 {
            return 0.0;
        }
        if q == 2 {
            return lat.distance(pts[0], pts[1]);
        }
        let mut best = f64::INFINITY;
        let total = q.pow(q as u32 - 2);
        for code in 0..total {
            let mut seq = Vec::new();
            let mut c = code;
            for _ in 0..q - 2 {
                seq.push(c % q);
                c /= q;
            }
            let mut degree = vec![1usize; q];
            for &s in &seq {
                degree[s] += 1;
            }
            let mut len = 0.0;
            for &s in &seq {
                let leaf = (0..q).find(|&i| degree[i] == 1).unwrap();
                len += lat.distance(pts[leaf], pts[s]);
                degree[leaf] -= 1;
                degree[s] -= 1;
            }
            let rest: Vec<usize> = (0..q).filter(|&i| degree[i] == 1).collect();
            len += lat.distance(pts[rest[0]], pts[rest[1]]);
            best = best.min(len);
        }
        best
    }

    #[test]
    fn tree_size_examples() {
        let lat = line(&[0.0, 1.0, 3.0]);
        assert_eq!(lat.tree_size(&[1]).unwrap(), 0.0);
        assert_eq!(lat.tree_size(&[0, 1, 2]).unwrap(), 3.0);
        assert_eq!(brute_tree_size(&lat, &[0, 1, 2]), 3.0);
        assert_eq!(lat.tree_size(&[0, 2]).unwrap(), 3.0);
        assert!(lat.tree_size(&[5]).is_err());
        assert!(lat.tree_size(&[]).is_err());
    }

    #[test]
    fn cg_examples() {
        let single = Lattice::torus1d(1, 1).unwrap();
        assert_eq!(single.cg(0.7).unwrap(), 1.0);
        let ring = Lattice::torus1d(5, 1).unwrap();
        assert!((ring.cg(2f64.ln()).unwrap() - 2.5).abs() < 1e-14);
        assert!(ring.cg(2.0).unwrap() < ring.cg(1.0).unwrap());
        assert!(ring.cg(0.0).is_err());
    }

    #[test]
    fn cg_prime_examples() {
        let ring = Lattice::torus1d(5, 1).unwrap();
        let small = ring.cg_prime(0.5, 3).unwrap();
        assert_eq!(small.brute_force, 1.0);
        assert_eq!(small.singleton_ball, Some(1.0));
        let unit = ring.cg_prime(1.0, 3).unwrap();
        assert_eq!(unit.singleton_ball, Some(3.0));
        assert_eq!(unit.brute_force, 3.0);
        // Q = L saturates at |L| / |L|.
        let full = ring.all_sites();
        assert_eq!(ring.neighborhood_size(full, 1.0) as f64 / full.len() as f64, 1.0);
        assert!(ring.cg_prime(-1.0, 3).is_err());
    }

    #[test]
    fn explicit_metric_validation() {
        assert!(Lattice::from_metric(&[vec![0.0, 1.0], vec![2.0, 0.0]], 1).is_err());
        assert!(Lattice::from_metric(
            &[vec![0.0, 1.0, 5.0], vec![1.0, 0.0, 1.0], vec![5.0, 1.0, 0.0]],
            1
        )
        .is_err());
        assert!(Lattice::from_metric(&[vec![0.0]], 0).is_err());
    }

    #[test]
    fn torus2d_distances() {
        let t = Lattice::torus2d(3, 1).unwrap();
        assert_eq!(t.len(), 9);
        assert_eq!(t.distance(0, 4), 2.0);
        assert_eq!(t.distance(0, 2), 1.0);
        assert_eq!(t.cg_prime(1.0, 1).unwrap().singleton_ball, Some(5.0));
    }

    #[test]
    fn site_set_subsets() {
        let s = SiteSet::from_sites([0, 2, 5]);
        assert_eq!(s.subsets().count(), 8);
        assert_eq!(s.nonempty_subsets().count(), 7);
        assert_eq!(s.to_string(), "{0,2,5}");
    }

    fn random_lattice() -> impl Strategy<Value = Lattice> {
        prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 2..7).prop_map(|pts| {
            let table: Vec<Vec<f64>> = pts
                .iter()
                .map(|a| pts.iter().map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()).collect())
                .collect();
            Lattice::from_metric(&table, 1).unwrap()
        })
    }

    proptest! {
        #[test]
        fn prim_matches_exhaustive(lat in random_lattice()) {
            let pts: Vec<Site> = (0..lat.len()).collect();
            let fast = lat.tree_size(&pts).unwrap();
            prop_assert!((fast - brute_tree_size(&lat, &pts)).abs() < 1e-9);
        }

        #[test]
        fn tree_size_growth_bounds(lat in random_lattice(), mask_a in 1u64..64, mask_b in 1u64..64, y in 0usize..6) {
            let n = lat.len();
            let a: Vec<Site> = SiteSet(mask_a & SiteSet::full(n).0).to_vec();
            let b: Vec<Site> = SiteSet(mask_b & SiteSet::full(n).0).to_vec();
            prop_assume!(!a.is_empty() && !b.is_empty());
            let y = y % n;
            let ta = lat.tree_size(&a).unwrap();
            let mut with_y = a.clone();
            with_y.push(y);
            let far = a.iter().map(|&x| lat.distance(x, y)).fold(0.0, f64::max);
            prop_assert!(ta <= lat.tree_size(&with_y).unwrap() + far + 1e-9);
            let mut union = a.clone();
            union.extend(&b);
            prop_assert!(lat.tree_size(&union).unwrap() >= 0.5 * ta - 1e-9);
        }

        #[test]
        fn geometric_constants_monotone(lat in random_lattice(), m in 0.1f64..3.0, a in 0.1f64..5.0) {
            prop_assert!(lat.cg(m * 1.5).unwrap() <= lat.cg(m).unwrap() + 1e-12);
            let small = lat.cg_prime(a, 3).unwrap().brute_force;
            let large = lat.cg_prime(a * 1.5, 3).unwrap().brute_force;
            prop_assert!(small <= large + 1e-12);
        }
    }
}
