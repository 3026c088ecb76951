//! Power-series and two-body interactions, their forest interpolations, and
//! the factorization and positivity checks.
//!
//! Fields are stored site-major: `phi[x * N + c]` for site `x`, component `c`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::algebra::Ring;
use crate::combinatorics::{bkar_interpolate, Forest, InterpolationPoint};
use crate::covariance::min_eigenvalue;
use crate::error::{Error, Result};
use crate::lattice::{Lattice, Site, SiteSet};

/// A lattice point with a field component.
pub type Point = (Site, usize);

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// One monomial `coeff * phi(xi) * J(zeta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTerm {
    #[serde(default)]
    pub xi: Vec<Point>,
    #[serde(default)]
    pub zeta: Vec<Point>,
    pub coeff: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
struct CompiledTerm {
    term: KernelTerm,
    support: SiteSet,
    mst: Vec<(Site, Site)>,
}

/// A finite power series in `phi` and `J` without constant term, bound to a
/// lattice (the interpolation weights follow the minimum spanning tree of
/// each term's support).
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSeriesKernel {
    terms: Vec<CompiledTerm>,
}

impl PowerSeriesKernel {
    pub fn empty() -> Self {
        PowerSeriesKernel { terms: Vec::new() }
    }

    /// Sorts the point multisets of every term, merges terms with equal
    /// multisets and drops terms whose merged coefficient vanishes.
    pub fn new(terms: Vec<KernelTerm>, lattice: &Lattice) -> Result<Self> {
        let n = lattice.len();
        let comps = lattice.components();
        let mut canon: Vec<KernelTerm> = Vec::with_capacity(terms.len());
        for mut t in terms {
            if t.xi.is_empty() && t.zeta.is_empty() {
                return Err(Error::input("interaction term without field or source legs"));
            }
            if let Some(&(x, c)) = t.xi.iter().chain(&t.zeta).find(|&&(x, c)| x >= n || c >= comps) {
                return Err(Error::input(format!("term point ({x}, {c}) lies outside the lattice")));
            }
            if !t.coeff.re.is_finite() || !t.coeff.im.is_finite() {
                return Err(Error::input("non-finite interaction coefficient"));
            }
            t.xi.sort_unstable();
            t.zeta.sort_unstable();
            match canon.iter_mut().find(|u| u.xi == t.xi && u.zeta == t.zeta) {
                Some(u) => u.coeff += t.coeff,
                None => canon.push(t),
            }
        }
        canon.retain(|t| t.coeff != ZERO);
        let terms = canon
            .into_iter()
            .map(|term| {
                let sites: Vec<Site> = term.xi.iter().chain(&term.zeta).map(|p| p.0).collect();
                let mst = lattice.mst_edges(&sites)?;
                Ok(CompiledTerm {
                    support: SiteSet::from_sites(sites),
                    mst,
                    term,
                })
            })
            .collect::<Result<_>>()?;
        Ok(PowerSeriesKernel { terms })
    }

    /// `g * phi(x, c)^4` summed over all sites and components.
    pub fn on_site_quartic(lattice: &Lattice, g: Complex64) -> Result<Self> {
        let terms = (0..lattice.len())
            .flat_map(|x| (0..lattice.components()).map(move |c| (x, c)))
            .map(|p| KernelTerm {
                xi: vec![p; 4],
                zeta: Vec::new(),
                coeff: g,
            })
            .collect();
        Self::new(terms, lattice)
    }

    pub fn terms(&self) -> impl Iterator<Item = &KernelTerm> {
        self.terms.iter().map(|t| &t.term)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// `V_2 = -sum_x (sum_y v_half(x,y) s({x,y})^2 |phi(y)|^2)^M - a sum J.phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoBodyPotential {
    pub v_half: DMatrix<f64>,
    /// Source coefficient: the source term is `-a <J, phi>`.
    pub a: f64,
    /// Half the polynomial degree (2 for the quartic potential).
    pub degree: u32,
    pub c_v: f64,
    pub v2_scale: f64,
}

impl TwoBodyPotential {
    pub fn new(v_half: DMatrix<f64>, a: f64, degree: u32) -> Result<Self> {
        if !v_half.is_square() {
            return Err(Error::input("v_half must be square"));
        }
        if (&v_half - v_half.transpose()).amax() > 1e-12 * v_half.amax().max(1.0) {
            return Err(Error::input("v_half must be symmetric"));
        }
        if degree == 0 {
            return Err(Error::input("two-body degree M must be at least 1"));
        }
        let v2_scale = if v_half.nrows() == 0 { 0.0 } else { min_eigenvalue(&v_half).max(0.0).powi(2) };
        Ok(TwoBodyPotential {
            v_half,
            a,
            degree,
            c_v: 1.0,
            v2_scale,
        })
    }

    /// `-v2 sum_x |phi(x)|^4 - a <J, phi>`, i.e. `v_half = sqrt(v2) Id`.
    pub fn quartic(n_sites: usize, v2: f64, a: f64) -> Result<Self> {
        if v2 < 0.0 {
            return Err(Error::input("quartic strength must be nonnegative"));
        }
        Self::new(DMatrix::identity(n_sites, n_sites) * v2.sqrt(), a, 2)
    }

    /// The pure source term `-a <J, phi>`.
    pub fn source_only(n_sites: usize, a: f64) -> Self {
        TwoBodyPotential {
            v_half: DMatrix::zeros(n_sites, n_sites),
            a,
            degree: 2,
            c_v: 1.0,
            v2_scale: 0.0,
        }
    }

    fn has_field_part(&self) -> bool {
        self.v_half.iter().any(|&v| v != 0.0)
    }

    /// `lambda_min(v_half) >= c_v * sqrt(v2_scale)`: returns both sides.
    pub fn spectral_assumption(&self) -> (f64, f64) {
        (min_eigenvalue(&self.v_half), self.c_v * self.v2_scale.sqrt())
    }
}

/// The full interaction `V_1 + V_2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub kernel: PowerSeriesKernel,
    pub two_body: Option<TwoBodyPotential>,
    n_sites: usize,
    components: usize,
}

/// Which terms of `V` an evaluation includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Part {
    All,
    /// Terms without source legs.
    Field,
    /// Terms with at least one source leg, including the linear source.
    Source,
}

impl Interaction {
    pub fn new(kernel: PowerSeriesKernel, two_body: Option<TwoBodyPotential>, lattice: &Lattice) -> Result<Self> {
        if let Some(p) = &two_body {
            if p.v_half.nrows() != lattice.len() {
                return Err(Error::input("v_half dimension differs from the site count"));
            }
        }
        Ok(Interaction {
            kernel,
            two_body,
            n_sites: lattice.len(),
            components: lattice.components(),
        })
    }

    /// `V = 0`.
    pub fn free(lattice: &Lattice) -> Self {
        Interaction {
            kernel: PowerSeriesKernel::empty(),
            two_body: None,
            n_sites: lattice.len(),
            components: lattice.components(),
        }
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// True when `V` is at most linear in `phi` through the source term
    /// `-a <J, phi>` (a Gaussian integral in closed form).
    pub fn is_pure_source(&self) -> bool {
        self.kernel.is_empty() && self.two_body.as_ref().map_or(true, |p| !p.has_field_part())
    }

    /// The interaction seen by the polymer `sites`, relabelled to local
    /// indices `0..sites.len()`.
    pub fn localize(&self, sites: &[Site]) -> LocalInteraction {
        let set = SiteSet::from_sites(sites.iter().copied());
        let local = |x: Site| sites.iter().position(|&y| y == x).expect("site in polymer");
        let terms: Vec<LocalTerm> = self
            .kernel
            .terms
            .iter()
            .filter(|t| t.support.is_subset(set))
            .map(|t| LocalTerm {
                xi: t.term.xi.iter().map(|&(x, c)| local(x) * self.components + c).collect(),
                zeta: t.term.zeta.iter().map(|&(x, c)| local(x) * self.components + c).collect(),
                mst: t.mst.iter().map(|&(x, y)| (local(x), local(y))).collect(),
                coeff: t.term.coeff,
            })
            .collect();
        let two_body = self.two_body.as_ref().map(|p| LocalTwoBody {
            v_half: DMatrix::from_fn(sites.len(), sites.len(), |i, j| p.v_half[(sites[i], sites[j])]),
            a: p.a,
            degree: p.degree,
        });
        LocalInteraction {
            k: sites.len(),
            components: self.components,
            terms,
            two_body,
        }
    }

    fn check_shapes(&self, phi: &[f64], s: &InterpolationPoint, j: &[f64]) -> Result<()> {
        let d = self.n_sites * self.components;
        if phi.len() != d || j.len() != d || s.n_sites() != self.n_sites {
            return Err(Error::input("field, source or interpolation point has the wrong size"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LocalTerm {
    xi: Vec<usize>,
    zeta: Vec<usize>,
    mst: Vec<(usize, usize)>,
    coeff: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
struct LocalTwoBody {
    v_half: DMatrix<f64>,
    a: f64,
    degree: u32,
}

/// An interaction restricted to a polymer, with local site and field
/// indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalInteraction {
    k: usize,
    components: usize,
    terms: Vec<LocalTerm>,
    two_body: Option<LocalTwoBody>,
}

impl LocalInteraction {
    pub fn n_sites(&self) -> usize {
        self.k
    }

    /// True when the value does not depend on the interpolation point.
    pub fn is_s_independent(&self) -> bool {
        self.terms.iter().all(|t| t.mst.is_empty())
            && self.two_body.as_ref().map_or(true, |p| {
                (0..self.k).all(|x| (0..self.k).all(|y| x == y || p.v_half[(x, y)] == 0.0))
            })
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// True when `V` is exactly the linear source `-a <J, phi>`.
    pub fn is_pure_source(&self) -> bool {
        self.terms.is_empty() && self.two_body.as_ref().map_or(true, |p| p.v_half.iter().all(|&v| v == 0.0))
    }

    /// True when every source dependence is the linear term `-a <J, phi>`.
    pub fn is_source_linear(&self) -> bool {
        self.terms.iter().all(|t| t.zeta.is_empty())
    }

    /// The coefficient of the linear source, `-a` (0 without a two-body part).
    pub fn linear_source_coeff(&self) -> f64 {
        self.two_body.as_ref().map_or(0.0, |p| -p.a)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
            && self
                .two_body
                .as_ref()
                .map_or(true, |p| p.a == 0.0 && p.v_half.iter().all(|&v| v == 0.0))
    }

    pub fn eval(&self, phi: &[f64], s: &InterpolationPoint, j: &[f64]) -> Complex64 {
        let phi_c: Vec<Complex64> = phi.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.eval_in(&phi_c, &|a, b| Complex64::new(s.get(a, b), 0.0), j, Part::All)
    }

    /// Evaluation in any of the derivative algebras. `s(a, b)` is called
    /// with `a != b` only.
    pub(crate) fn eval_in<A: Ring>(&self, phi: &[A], s: &dyn Fn(usize, usize) -> A, j: &[f64], part: Part) -> A {
        let n = self.components;
        let mut acc = A::cst(ZERO);
        for t in &self.terms {
            let keep = match part {
                Part::All => true,
                Part::Field => t.zeta.is_empty(),
                Part::Source => !t.zeta.is_empty(),
            };
            if !keep {
                continue;
            }
            let jprod: f64 = t.zeta.iter().map(|&i| j[i]).product();
            if jprod == 0.0 && !t.zeta.is_empty() {
                continue;
            }
            let mut m = A::cst(t.coeff * jprod);
            for &i in &t.xi {
                m = m * phi[i].clone();
            }
            for &(a, b) in &t.mst {
                m = m * s(a, b);
            }
            acc = acc + m;
        }
        if let Some(p) = &self.two_body {
            if part != Part::Source && p.v_half.iter().any(|&v| v != 0.0) {
                let sq: Vec<A> = (0..self.k)
                    .map(|y| {
                        (0..n).fold(A::cst(ZERO), |a, c| a + phi[y * n + c].clone() * phi[y * n + c].clone())
                    })
                    .collect();
                for x in 0..self.k {
                    let mut inner = A::cst(ZERO);
                    for (y, sq_y) in sq.iter().enumerate() {
                        let v = p.v_half[(x, y)];
                        if v == 0.0 {
                            continue;
                        }
                        let term = sq_y.scale(Complex64::new(v, 0.0));
                        inner = inner
                            + if x == y {
                                term
                            } else {
                                let w = s(x, y);
                                term * w.clone() * w
                            };
                    }
                    let mut power = inner.clone();
                    for _ in 1..p.degree {
                        power = power * inner.clone();
                    }
                    acc = acc - power;
                }
            }
            if part != Part::Field && p.a != 0.0 {
                for (i, &ji) in j.iter().enumerate() {
                    if ji != 0.0 {
                        acc = acc + phi[i].scale(Complex64::new(-p.a * ji, 0.0));
                    }
                }
            }
        }
        acc
    }
}

/// `V_1(phi; s; J)`: the power-series part at a global interpolation point.
pub fn eval_v1(interaction: &Interaction, phi: &[f64], s: &InterpolationPoint, j: &[f64]) -> Result<Complex64> {
    interaction.check_shapes(phi, s, j)?;
    let without_two_body = Interaction {
        two_body: None,
        ..interaction.clone()
    };
    Ok(without_two_body.localize(&all_sites(interaction)).eval(phi, s, j))
}

/// `V_2(phi; s; J)` including the source term.
pub fn eval_v2(interaction: &Interaction, phi: &[f64], s: &InterpolationPoint, j: &[f64]) -> Result<Complex64> {
    interaction.check_shapes(phi, s, j)?;
    let only = Interaction {
        kernel: PowerSeriesKernel::empty(),
        ..interaction.clone()
    };
    Ok(only.localize(&all_sites(interaction)).eval(phi, s, j))
}

/// `V_1 + V_2` at a global interpolation point.
pub fn eval_interaction(interaction: &Interaction, phi: &[f64], s: &InterpolationPoint, j: &[f64]) -> Result<Complex64> {
    interaction.check_shapes(phi, s, j)?;
    Ok(interaction.localize(&all_sites(interaction)).eval(phi, s, j))
}

fn all_sites(interaction: &Interaction) -> Vec<Site> {
    (0..interaction.n_sites).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FactorizationReport {
    pub draws: usize,
    pub blocks: usize,
    pub max_discrepancy: f64,
}

/// Compares `V` at the point `s` with the sum over the blocks of `s` of the
/// block-restricted interaction, over random field and source draws.
pub fn factorization_check(
    interaction: &Interaction,
    s: &InterpolationPoint,
    draws: usize,
    rng: &mut impl Rng,
) -> Result<FactorizationReport> {
    let d = interaction.n_sites * interaction.components;
    let n = interaction.components;
    let partition = s.partition();
    let global = interaction.localize(&all_sites(interaction));
    let locals: Vec<(Vec<Site>, LocalInteraction, InterpolationPoint)> = partition
        .blocks
        .iter()
        .map(|b| (b.clone(), interaction.localize(b), s.restrict(b)))
        .collect();
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let phi: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let j: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let whole = global.eval(&phi, s, &j);
        let mut parts = ZERO;
        for (block, local, point) in &locals {
            let gather = |v: &[f64]| -> Vec<f64> { block.iter().flat_map(|&x| v[x * n..(x + 1) * n].to_vec()).collect() };
            parts += local.eval(&gather(&phi), point, &gather(&j));
        }
        let scale = whole.norm().max(1.0);
        worst = worst.max((whole - parts).norm() / scale);
    }
    if worst > 1e-10 {
        return Err(Error::Invariant(format!(
            "interaction does not factorize over the blocks of the point: discrepancy {worst:.3e}"
        )));
    }
    Ok(FactorizationReport {
        draws,
        blocks: partition.len(),
        max_discrepancy: worst,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositivityReport {
    pub samples: usize,
    /// Largest value of `Re V_2 + lambda^{2M} c_pos sum |phi|^{2M} - c_pos' |X|`
    /// (must be `<= 0`).
    pub max_violation: f64,
    /// Smallest `lambda_min(v_half o s^2)` seen over the sampled points.
    pub min_weighted_eigenvalue: f64,
    /// `c_v * sqrt(v2_scale)`.
    pub spectral_bound: f64,
}

/// Samples fields and random forest points and checks
/// `Re V_2(phi; s; 0) <= -lambda^{2M} c_pos sum_x |phi(x)|^{2M} + c_pos' |X|`
/// and the sufficient spectral condition on the weighted `v_half`.
pub fn positivity_check(
    potential: &TwoBodyPotential,
    components: usize,
    lambda_phi: f64,
    c_pos: f64,
    c_pos_prime: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<PositivityReport> {
    if !(lambda_phi > 0.0) {
        return Err(Error::input("lambda_phi must be positive"));
    }
    let n = potential.v_half.nrows();
    let m = potential.degree as i32;
    let local = LocalInteraction {
        k: n,
        components,
        terms: Vec::new(),
        two_body: Some(LocalTwoBody {
            v_half: potential.v_half.clone(),
            a: 0.0,
            degree: potential.degree,
        }),
    };
    let zeros = vec![0.0; n * components];
    let spectral_bound = potential.c_v * potential.v2_scale.sqrt();
    let mut max_violation = f64::NEG_INFINITY;
    let mut min_eig = f64::INFINITY;
    for i in 0..samples {
        let point = random_forest_point(n, rng);
        let scale = if i == 0 { 0.0 } else { rng.gen_range(0.0..3.0) / lambda_phi };
        let phi: Vec<f64> = (0..n * components)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let v2 = local.eval(&phi, &point, &zeros).re;
        let norm_sum: f64 = (0..n)
            .map(|x| phi[x * components..(x + 1) * components].iter().map(|v| v * v).sum::<f64>().powi(m))
            .sum();
        let rhs = -lambda_phi.powi(2 * m) * c_pos * norm_sum + c_pos_prime * n as f64;
        let violation = v2 - rhs;
        let tol = 1e-10 * (1.0 + v2.abs());
        if violation > tol {
            return Err(Error::Stability(format!(
                "positivity bound fails by {violation:.3e} at phi = {phi:?}"
            )));
        }
        max_violation = max_violation.max(violation);
        let weighted = DMatrix::from_fn(n, n, |x, y| potential.v_half[(x, y)] * point.get(x, y).powi(2));
        min_eig = min_eig.min(min_eigenvalue(&weighted));
    }
    if min_eig < spectral_bound - 1e-10 {
        return Err(Error::Stability(format!(
            "weighted v_half has eigenvalue {min_eig:.6e} below c_v sqrt(v2) = {spectral_bound:.6e}"
        )));
    }
    Ok(PositivityReport {
        samples,
        max_violation,
        min_weighted_eigenvalue: min_eig,
        spectral_bound,
    })
}

/// A uniformly random labelled tree on `n` vertices with uniform edge
/// weights, each edge dropped with probability 1/3.
pub fn random_forest_point(n: usize, rng: &mut impl Rng) -> InterpolationPoint {
    if n < 2 {
        return InterpolationPoint::ones(n);
    }
    let tree = random_tree(n, rng);
    let kept: Vec<(usize, usize)> = tree.into_iter().filter(|_| rng.gen_range(0..3) != 0).collect();
    let forest = Forest::new(n, kept).expect("subforest of a tree");
    let values: Vec<f64> = (0..forest.len()).map(|_| rng.gen_range(0.0..=1.0)).collect();
    bkar_interpolate(&forest, &values)
}

/// Decodes a random Prüfer sequence.
pub fn random_tree(n: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    if n < 2 {
        return Vec::new();
    }
    let code: Vec<usize> = (0..n - 2).map(|_| rng.gen_range(0..n)).collect();
    let mut degree = vec![1usize; n];
    for &c in &code {
        degree[c] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for &c in &code {
        let leaf = (0..n).find(|&v| degree[v] == 1).expect("a leaf exists");
        edges.push((leaf.min(c), leaf.max(c)));
        degree[leaf] -= 1;
        degree[c] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
    edges.push((rest[0], rest[1]));
    edges
}

/// `sup_x sum_{terms touching x} R^{n(xi)} lambda_J^{-n(zeta)} e^{m d_t} |v_1|`.
pub fn v1_tree_norm(kernel: &PowerSeriesKernel, r_arg: f64, lambda_j: f64, m_dot: f64, lattice: &Lattice) -> Result<f64> {
    if !(r_arg > 0.0 && lambda_j > 0.0 && m_dot > 0.0) {
        return Err(Error::input("tree norm needs positive R, lambda_J and mass"));
    }
    let mut per_site = vec![0.0f64; lattice.len()];
    for t in &kernel.terms {
        let sites: Vec<Site> = t.support.to_vec();
        let dt = lattice.tree_size(&sites)?;
        let w = r_arg.powi(t.term.xi.len() as i32)
            * lambda_j.powi(-(t.term.zeta.len() as i32))
            * (m_dot * dt).exp()
            * t.term.coeff.norm();
        for x in sites {
            *per_site.get_mut(x).ok_or_else(|| Error::input("kernel bound to another lattice"))? += w;
        }
    }
    Ok(per_site.into_iter().fold(0.0, f64::max))
}
