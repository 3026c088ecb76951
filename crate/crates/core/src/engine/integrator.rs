//! Integration of a polymer's Boltzmann factor against the interpolated
//! Gaussian measure, split into per-site regions ("bins") and batched over
//! several source vectors.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul};

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::algebra::{Jet, Nil, Ring};
use crate::combinatorics::InterpolationPoint;
use crate::covariance::{gaussian_weight, CMatrix, Covariance};
use crate::error::{Error, Result};
use crate::interaction::{LocalInteraction, Part};
use crate::lattice::Site;
use crate::quadrature::{CVec, Rule1d};

const CZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Field-space quadrature settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhiQuadrature {
    /// Width of one Gauss–Legendre panel along a radial or axial direction.
    pub panel_width: f64,
    /// Nodes per panel.
    pub order: usize,
    /// Angular nodes per circle for two and three components.
    pub angular: usize,
    /// Cap on the number of product nodes of one polymer integral.
    pub max_nodes: usize,
}

impl Default for PhiQuadrature {
    fn default() -> Self {
        PhiQuadrature {
            panel_width: 2.5,
            order: 8,
            angular: 16,
            max_nodes: 4_000_000,
        }
    }
}

/// The per-site integration region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    /// `|phi| <= radius`.
    Ball(f64),
    /// `inner < |phi| <= outer`.
    Annulus(f64, f64),
}

/// How the per-site field space is split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SiteSplit {
    /// One ball of radius `R` with its boundary shell.
    Single(f64),
    /// A ball treated as all of space (no boundary terms).
    Unbounded(f64),
    /// `|phi| <= r` (bin bit 0) and `r < |phi| <= R` (bin bit 1).
    SmallLarge { r: f64, big_r: f64 },
}

/// Nodes on a sphere `|phi| = radius` with outward normals.
#[derive(Debug, Clone)]
struct Shell {
    phi: Vec<f64>,
    weight: Vec<f64>,
    normal: Vec<f64>,
    /// `-1` on the outer boundary of a region, `+1` on the inner one.
    sigma: f64,
}

#[derive(Debug, Clone)]
struct Piece {
    phi: Vec<f64>,
    weight: Vec<f64>,
    shells: Vec<Shell>,
    /// Offset of the piece's nodes in the site's concatenated node list.
    offset: usize,
}

impl Piece {
    fn len(&self, n: usize) -> usize {
        self.weight.len().max(self.phi.len() / n.max(1))
    }
}

fn axial_rule(a: f64, b: f64, q: &PhiQuadrature) -> Rule1d {
    let panels = ((b - a) / q.panel_width).ceil().max(1.0) as usize;
    Rule1d::composite(a, b, panels, q.order)
}

/// Unit directions with surface weights (the endpoints for one component).
fn sphere_rule(n: usize, q: &PhiQuadrature) -> Result<(Vec<f64>, Vec<f64>)> {
    match n {
        1 => Ok((vec![-1.0, 1.0], vec![1.0, 1.0])),
        2 => {
            let m = q.angular.max(4);
            let mut dirs = Vec::with_capacity(2 * m);
            for j in 0..m {
                let t = 2.0 * PI * (j as f64 + 0.5) / m as f64;
                dirs.extend([t.cos(), t.sin()]);
            }
            Ok((dirs, vec![2.0 * PI / m as f64; m]))
        }
        3 => {
            let m = q.angular.max(4);
            let polar = Rule1d::gauss_legendre(m / 2);
            let mut dirs = Vec::new();
            let mut w = Vec::new();
            for (&ct, &wt) in polar.nodes.iter().zip(&polar.weights) {
                let st = (1.0 - ct * ct).max(0.0).sqrt();
                for j in 0..m {
                    let p = 2.0 * PI * (j as f64 + 0.5) / m as f64;
                    dirs.extend([st * p.cos(), st * p.sin(), ct]);
                    w.push(wt * 2.0 * PI / m as f64);
                }
            }
            Ok((dirs, w))
        }
        _ => Err(Error::resource("field components", n, 3)),
    }
}

fn region_rule(region: Region, n: usize, q: &PhiQuadrature) -> Result<(Vec<f64>, Vec<f64>)> {
    let (lo, hi) = match region {
        Region::Ball(r) => (0.0, r),
        Region::Annulus(a, b) => (a, b),
    };
    if n == 1 {
        let rule = match region {
            Region::Ball(r) => axial_rule(-r, r, q),
            Region::Annulus(a, b) => Rule1d::concat(&[axial_rule(-b, -a, q), axial_rule(a, b, q)]),
        };
        return Ok((rule.nodes, rule.weights));
    }
    let radial = axial_rule(lo, hi, q);
    let (dirs, dw) = sphere_rule(n, q)?;
    let mut phi = Vec::new();
    let mut w = Vec::new();
    for (&r, &wr) in radial.nodes.iter().zip(&radial.weights) {
        let jac = r.powi(n as i32 - 1);
        for (u, &wu) in dirs.chunks(n).zip(&dw) {
            phi.extend(u.iter().map(|c| c * r));
            w.push(wr * wu * jac);
        }
    }
    Ok((phi, w))
}

fn shell(radius: f64, sigma: f64, n: usize, q: &PhiQuadrature) -> Result<Shell> {
    let (dirs, dw) = sphere_rule(n, q)?;
    let jac = radius.powi(n as i32 - 1);
    Ok(Shell {
        phi: dirs.iter().map(|u| u * radius).collect(),
        weight: dw.iter().map(|w| w * jac).collect(),
        normal: dirs,
        sigma,
    })
}

fn site_pieces(split: SiteSplit, n: usize, q: &PhiQuadrature) -> Result<Vec<Piece>> {
    let make = |region: Region, shells: Vec<Shell>, offset: usize| -> Result<Piece> {
        let (phi, weight) = region_rule(region, n, q)?;
        Ok(Piece {
            phi,
            weight,
            shells,
            offset,
        })
    };
    Ok(match split {
        SiteSplit::Single(r) => vec![make(Region::Ball(r), vec![shell(r, -1.0, n, q)?], 0)?],
        SiteSplit::Unbounded(h) => vec![make(Region::Ball(h), Vec::new(), 0)?],
        SiteSplit::SmallLarge { r, big_r } => {
            let small = make(Region::Ball(r), vec![shell(r, -1.0, n, q)?], 0)?;
            let off = small.len(n);
            let large = make(
                Region::Annulus(r, big_r),
                vec![shell(big_r, -1.0, n, q)?, shell(r, 1.0, n, q)?],
                off,
            )?;
            vec![small, large]
        }
    })
}

/// Arithmetic used by the inner accumulation loop (real fast path or
/// complex).
trait Num:
    Copy + Send + Sync + Zero + Add<Output = Self> + Mul<Output = Self> + Mul<f64, Output = Self> + AddAssign
{
    fn from_c(c: Complex64) -> Self;
    fn to_c(self) -> Complex64;
    fn exp_(self) -> Self;
}

impl Num for f64 {
    fn from_c(c: Complex64) -> Self {
        c.re
    }
    fn to_c(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
    fn exp_(self) -> Self {
        self.exp()
    }
}

impl Num for Complex64 {
    fn from_c(c: Complex64) -> Self {
        c
    }
    fn to_c(self) -> Complex64 {
        self
    }
    fn exp_(self) -> Self {
        self.exp()
    }
}

/// The product quadrature for one polymer, with all bins and source
/// vectors.
pub(crate) struct PolymerIntegrator<'a> {
    sites: Vec<Site>,
    n: usize,
    d: usize,
    cov: &'a Covariance,
    local: LocalInteraction,
    pieces: Vec<Vec<Piece>>,
    /// Nodes per site in the concatenated per-site lists.
    site_len: Vec<usize>,
    nbins: usize,
    phi: Vec<f64>,
    weight: Vec<f64>,
    bin: Vec<u16>,
    /// Per-site index of each product node into the site's node list.
    index: Vec<u32>,
    field_exp: Option<Vec<Complex64>>,
    /// `exp(c <J_x, phi_x>)` per source vector, site and site node.
    tables: Option<Vec<Vec<f64>>>,
    sources: Vec<Vec<f64>>,
    closed_form: bool,
    /// Estimated Gaussian mass outside the box when integrating over all
    /// of field space.
    pub tail_estimate: f64,
}

impl<'a> PolymerIntegrator<'a> {
    /// `sources` holds local source vectors (`sites.len() * N` entries each).
    pub fn new(
        sites: &[Site],
        cov: &'a Covariance,
        local: LocalInteraction,
        split: SiteSplit,
        sources: Vec<Vec<f64>>,
        q: &PhiQuadrature,
    ) -> Result<Self> {
        let n = cov.components();
        let k = sites.len();
        let d = k * n;
        if sources.iter().any(|j| j.len() != d) || sources.is_empty() {
            return Err(Error::input("source batch has the wrong shape"));
        }
        let nbins = match split {
            SiteSplit::SmallLarge { .. } => 1usize << k,
            _ => 1,
        };
        if nbins > u16::MAX as usize {
            return Err(Error::resource("region bins", nbins, u16::MAX as usize));
        }
        let (closed_form, tail_estimate) = match split {
            SiteSplit::Unbounded(h) => (
                local.is_pure_source(),
                (d as f64) * (-0.5 * cov.mu() * h * h).exp(),
            ),
            _ => (false, 0.0),
        };
        let mut me = PolymerIntegrator {
            sites: sites.to_vec(),
            n,
            d,
            cov,
            local,
            pieces: Vec::new(),
            site_len: Vec::new(),
            nbins,
            phi: Vec::new(),
            weight: Vec::new(),
            bin: Vec::new(),
            index: Vec::new(),
            field_exp: None,
            tables: None,
            sources,
            closed_form,
            tail_estimate,
        };
        if closed_form {
            return Ok(me);
        }
        let pieces = site_pieces(split, n, q)?;
        let per_site: Vec<Vec<Piece>> = vec![pieces; k];
        me.site_len = per_site
            .iter()
            .map(|p| p.iter().map(|pc| pc.len(n)).sum())
            .collect();
        let mut total = 0usize;
        for b in 0..nbins {
            let count: usize = (0..k).map(|x| per_site[x][piece_of(b, x, nbins)].len(n)).product();
            total = total.saturating_add(count);
        }
        if total > q.max_nodes {
            return Err(Error::resource("polymer quadrature nodes", total, q.max_nodes));
        }
        me.phi.reserve(total * d);
        for b in 0..nbins {
            let chosen: Vec<&Piece> = (0..k).map(|x| &per_site[x][piece_of(b, x, nbins)]).collect();
            let lens: Vec<usize> = chosen.iter().map(|p| p.len(n)).collect();
            for_each_index(&lens, |idx| {
                let mut w = 1.0;
                for (x, &i) in idx.iter().enumerate() {
                    me.phi.extend_from_slice(&chosen[x].phi[i * n..(i + 1) * n]);
                    w *= chosen[x].weight[i];
                    me.index.push((chosen[x].offset + i) as u32);
                }
                me.weight.push(w);
                me.bin.push(b as u16);
            });
        }
        me.pieces = per_site;
        if me.local.is_s_independent() {
            let zero_j = vec![0.0; d];
            let fe: Vec<Complex64> = me
                .phi
                .chunks(d)
                .map(|p| {
                    let pc: Vec<Complex64> = p.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                    me.local
                        .eval_in(&pc, &|_, _| Complex64::new(1.0, 0.0), &zero_j, Part::Field)
                        .exp()
                })
                .collect();
            me.field_exp = Some(fe);
        }
        if me.local.is_source_linear() {
            me.tables = Some(me.source_tables());
        }
        Ok(me)
    }

    pub fn n_bins(&self) -> usize {
        self.nbins
    }

    pub fn n_nodes(&self) -> usize {
        self.weight.len()
    }

    pub fn is_closed_form(&self) -> bool {
        self.closed_form
    }

    fn source_tables(&self) -> Vec<Vec<f64>> {
        let c = self.local.linear_source_coeff();
        let n = self.n;
        self.sources
            .iter()
            .map(|j| {
                let mut t = Vec::new();
                for (x, pieces) in self.pieces.iter().enumerate() {
                    for p in pieces {
                        for node in p.phi.chunks(n) {
                            let dot: f64 = node.iter().zip(&j[x * n..(x + 1) * n]).map(|(a, b)| a * b).sum();
                            t.push((c * dot).exp());
                        }
                    }
                }
                t
            })
            .collect()
    }

    fn site_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.site_len
            .iter()
            .map(|&l| {
                let o = acc;
                acc += l;
                o
            })
            .collect()
    }

    /// `int dmu_{C_s}(phi) chi(phi) exp(V(phi; s; J))` for every bin and
    /// source vector, laid out `[bin * n_sources + j]`.
    pub fn evaluate(&self, s: &InterpolationPoint) -> Result<CVec> {
        let cs = self.cov.interpolated_block(&self.sites, s);
        if self.closed_form {
            return Ok(self.closed_form_values(&cs));
        }
        let gw = gaussian_weight(&cs)?;
        let real = gw.inverse.iter().all(|z| z.im == 0.0)
            && gw.normalizer.im == 0.0
            && self.tables.is_some()
            && self
                .field_exp
                .as_ref()
                .map_or(false, |f| f.iter().all(|z| z.im == 0.0));
        let sums: Vec<Complex64> = if real {
            let cinv: Vec<f64> = gw.inverse.transpose().iter().map(|z| z.re).collect();
            self.accumulate::<f64>(&cinv, s)
        } else {
            let cinv: Vec<Complex64> = gw.inverse.transpose().iter().copied().collect();
            self.accumulate::<Complex64>(&cinv, s)
        };
        let out: Vec<Complex64> = sums.into_iter().map(|v| v * gw.normalizer).collect();
        if out.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::numeric("polymer integral is not finite", f64::NAN));
        }
        Ok(CVec(out))
    }

    fn closed_form_values(&self, cs: &CMatrix) -> CVec {
        let c = self.local.linear_source_coeff();
        let nb = self.nbins;
        let mut out = Vec::with_capacity(nb * self.sources.len());
        for _ in 0..nb {
            for j in &self.sources {
                let mut q = CZERO;
                for a in 0..self.d {
                    for b in 0..self.d {
                        q += cs[(a, b)] * j[a] * j[b];
                    }
                }
                out.push((0.5 * c * c * q).exp());
            }
        }
        CVec(out)
    }

    /// The exponent is affine in each pair weight, so the mixed derivative
    /// is the value times the product of the single-pair slopes.
    fn closed_form_derivative(&self, cs: &CMatrix, pairs: &[(usize, usize)]) -> CVec {
        let c = self.local.linear_source_coeff();
        let blocks: Vec<CMatrix> = pairs.iter().map(|&(x, y)| self.pair_block(x, y)).collect();
        let form = |m: &CMatrix, j: &[f64]| {
            let mut q = CZERO;
            for a in 0..self.d {
                for b in 0..self.d {
                    q += m[(a, b)] * j[a] * j[b];
                }
            }
            0.5 * c * c * q
        };
        let mut out = Vec::with_capacity(self.nbins * self.sources.len());
        for _ in 0..self.nbins {
            for j in &self.sources {
                let slopes: Complex64 = blocks.iter().map(|e| form(e, j)).product();
                out.push(form(cs, j).exp() * slopes);
            }
        }
        CVec(out)
    }

    fn accumulate<T: Num>(&self, cinv: &[T], s: &InterpolationPoint) -> Vec<Complex64> {
        let n_nodes = self.n_nodes();
        let chunk = 4096;
        let chunks: Vec<(usize, usize)> = (0..n_nodes)
            .step_by(chunk)
            .map(|a| (a, (a + chunk).min(n_nodes)))
            .collect();
        let work = |&(a, b): &(usize, usize)| self.accumulate_range::<T>(cinv, s, a, b);
        let width = self.nbins * self.sources.len();
        let add = |mut x: Vec<T>, y: Vec<T>| {
            for (u, v) in x.iter_mut().zip(y) {
                *u += v;
            }
            x
        };
        #[cfg(feature = "parallel")]
        let total = {
            use rayon::prelude::*;
            // collect first so the summation order does not depend on scheduling
            let parts: Vec<Vec<T>> = chunks.par_iter().map(work).collect();
            parts.into_iter().fold(vec![T::zero(); width], add)
        };
        #[cfg(not(feature = "parallel"))]
        let total = chunks.iter().map(work).fold(vec![T::zero(); width], add);
        total.into_iter().map(Num::to_c).collect()
    }

    fn accumulate_range<T: Num>(&self, cinv: &[T], s: &InterpolationPoint, a: usize, b: usize) -> Vec<T> {
        let d = self.d;
        let k = self.sites.len();
        let nj = self.sources.len();
        let offsets = self.site_offsets();
        let mut acc = vec![T::zero(); self.nbins * nj];
        let sfun = |x: usize, y: usize| Complex64::new(s.get(x, y), 0.0);
        let zero_j = vec![0.0; d];
        let mut pc = vec![CZERO; d];
        for node in a..b {
            let phi = &self.phi[node * d..(node + 1) * d];
            let mut q = T::zero();
            for i in 0..d {
                let mut row = T::zero();
                for j in 0..d {
                    row += cinv[i * d + j] * phi[j];
                }
                q += row * phi[i];
            }
            let field = match &self.field_exp {
                Some(f) => T::from_c(f[node]),
                None => {
                    for (p, &v) in pc.iter_mut().zip(phi) {
                        *p = Complex64::new(v, 0.0);
                    }
                    T::from_c(self.local.eval_in(&pc, &sfun, &zero_j, Part::Field).exp())
                }
            };
            let base = (q * -0.5).exp_() * field * self.weight[node];
            let row = self.bin[node] as usize * nj;
            let idx = &self.index[node * k..(node + 1) * k];
            match &self.tables {
                Some(tables) => {
                    for (jj, t) in tables.iter().enumerate() {
                        let mut src = 1.0;
                        for x in 0..k {
                            src *= t[offsets[x] + idx[x] as usize];
                        }
                        acc[row + jj] += base * src;
                    }
                }
                None => {
                    for (p, &v) in pc.iter_mut().zip(phi) {
                        *p = Complex64::new(v, 0.0);
                    }
                    for (jj, j) in self.sources.iter().enumerate() {
                        let src = self.local.eval_in(&pc, &sfun, j, Part::Source).exp();
                        acc[row + jj] += base * T::from_c(src);
                    }
                }
            }
        }
        acc
    }

    /// The mixed derivative over `pairs` at `s` by the Leibniz split into
    /// covariance and interaction derivatives: Gaussian integration by
    /// parts (with boundary shells) for a single covariance derivative,
    /// derivatives of the Gaussian density for several.
    pub fn derivative_ibp(&self, s: &InterpolationPoint, pairs: &[(usize, usize)]) -> Result<CVec> {
        let m = pairs.len();
        let cs = self.cov.interpolated_block(&self.sites, s);
        if self.closed_form {
            return Ok(self.closed_form_derivative(&cs, pairs));
        }
        let gw = gaussian_weight(&cs)?;
        let e: Vec<CMatrix> = pairs.iter().map(|&(x, y)| self.pair_block(x, y)).collect();
        let inv_der = inverse_derivatives(&gw.inverse, &e);
        let logdet_der = logdet_derivatives(&inv_der, &e);
        let nj = self.sources.len();
        let mut out = vec![CZERO; self.nbins * nj];
        let full = (1usize << m) - 1;
        let s_free = self.local.is_s_independent();
        for fc in 0..=full {
            let fv = full & !fc;
            if s_free && fv != 0 {
                continue;
            }
            let gens: Vec<(usize, usize)> = (0..m).filter(|i| fv & (1 << i) != 0).map(|i| pairs[i]).collect();
            if fc.count_ones() == 1 {
                let l = fc.trailing_zeros() as usize;
                self.ibp_term(&gw.inverse, gw.normalizer, s, pairs[l], &gens, &mut out)?;
            } else {
                self.score_term(&gw.inverse, gw.normalizer, s, fc, &inv_der, &logdet_der, &gens, &mut out);
            }
        }
        if out.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::numeric("analytic derivative is not finite", f64::NAN));
        }
        Ok(CVec(out))
    }

    /// `d C_s / d s({x,y})`: the `x,y` blocks of `C`.
    fn pair_block(&self, x: usize, y: usize) -> CMatrix {
        let n = self.n;
        let mut e = CMatrix::zeros(self.d, self.d);
        for a in 0..n {
            for b in 0..n {
                let v = self.cov.entry(self.sites[x], a, self.sites[y], b);
                e[(x * n + a, y * n + b)] = v;
                e[(y * n + b, x * n + a)] = v;
            }
        }
        e
    }

    fn density(&self, cinv: &CMatrix, norm: Complex64, phi: &[f64]) -> Complex64 {
        let d = self.d;
        let mut q = CZERO;
        for i in 0..d {
            for j in 0..d {
                q += cinv[(i, j)] * phi[i] * phi[j];
            }
        }
        norm * (-0.5 * q).exp()
    }

    /// `exp(V)` in the dual algebra whose generators are the pairs `gens`.
    fn exp_v_nil(&self, phi: &[f64], s: &InterpolationPoint, gens: &[(usize, usize)], j: &[f64]) -> Nil {
        let kv = gens.len();
        let pc: Vec<Nil> = phi.iter().map(|&v| Nil::cst(Complex64::new(v, 0.0))).collect();
        let sf = |a: usize, b: usize| match gen_index(gens, a, b) {
            Some(g) => Nil::variable(s.get(a, b), g, kv),
            None => Nil::cst(Complex64::new(s.get(a, b), 0.0)),
        };
        self.local.eval_in(&pc, &sf, j, Part::All).exp()
    }

    #[allow(clippy::too_many_arguments)]
    fn score_term(
        &self,
        cinv: &CMatrix,
        norm: Complex64,
        s: &InterpolationPoint,
        fc: usize,
        inv_der: &[CMatrix],
        logdet_der: &[Complex64],
        gens: &[(usize, usize)],
        out: &mut [Complex64],
    ) {
        let d = self.d;
        let top = (1usize << gens.len()) - 1;
        let blocks = mask_partitions(fc);
        let nj = self.sources.len();
        for node in 0..self.n_nodes() {
            let phi = &self.phi[node * d..(node + 1) * d];
            let rho = self.density(cinv, norm, phi) * self.weight[node];
            let mut score = if fc == 0 { Complex64::new(1.0, 0.0) } else { CZERO };
            if fc != 0 {
                let mut logder = std::collections::HashMap::new();
                for part in &blocks {
                    let mut prod = Complex64::new(1.0, 0.0);
                    for &b in part {
                        let v = *logder.entry(b).or_insert_with(|| {
                            let mb = &inv_der[b];
                            let mut q = CZERO;
                            for i in 0..d {
                                for j in 0..d {
                                    q += mb[(i, j)] * phi[i] * phi[j];
                                }
                            }
                            -0.5 * logdet_der[b] - 0.5 * q
                        });
                        prod *= v;
                    }
                    score += prod;
                }
            }
            let row = self.bin[node] as usize * nj;
            for (jj, j) in self.sources.iter().enumerate() {
                let ev = self.exp_v_nil(phi, s, gens, j).coeff(top);
                out[row + jj] += rho * score * ev;
            }
        }
    }

    /// Gaussian integration by parts for the single covariance derivative
    /// on the pair `(x, y)`, including the boundary shells of the regions.
    fn ibp_term(
        &self,
        cinv: &CMatrix,
        norm: Complex64,
        s: &InterpolationPoint,
        (x, y): (usize, usize),
        gens: &[(usize, usize)],
        out: &mut [Complex64],
    ) -> Result<()> {
        let n = self.n;
        let k = self.sites.len();
        let nj = self.sources.len();
        let kv = gens.len();
        let top = (1usize << kv) - 1;
        let coeff: Vec<Complex64> = (0..n * n)
            .map(|mn| self.cov.entry(self.sites[x], mn / n, self.sites[y], mn % n))
            .collect();
        // g = d^{F_V} exp(V) as a second-order jet in (phi_x, phi_y)
        let jet = |phi: &[f64], j: &[f64]| -> Jet<Nil> {
            let vars: Vec<Jet<Nil>> = (0..self.d)
                .map(|i| {
                    let v = Nil::cst(Complex64::new(phi[i], 0.0));
                    let (site, c) = (i / n, i % n);
                    if site == x {
                        Jet::variable(v, c, 2 * n)
                    } else if site == y {
                        Jet::variable(v, n + c, 2 * n)
                    } else {
                        Jet::cst(Complex64::new(phi[i], 0.0))
                    }
                })
                .collect();
            let sf = |a: usize, b: usize| -> Jet<Nil> {
                let base = match gen_index(gens, a, b) {
                    Some(g) => Nil::variable(s.get(a, b), g, kv),
                    None => Nil::cst(Complex64::new(s.get(a, b), 0.0)),
                };
                jet_const(base)
            };
            self.local.eval_in(&vars, &sf, j, Part::All).exp()
        };
        for bin in 0..self.nbins {
            let chosen: Vec<&Piece> = (0..k).map(|z| &self.pieces[z][piece_of(bin, z, self.nbins)]).collect();
            // Each site contributes either its interior nodes or one shell.
            let mut modes: Vec<(Option<&Shell>, Option<&Shell>)> = vec![(None, None)];
            for sh in &chosen[x].shells {
                modes.push((Some(sh), None));
            }
            for sh in &chosen[y].shells {
                modes.push((None, Some(sh)));
            }
            for sx in &chosen[x].shells {
                for sy in &chosen[y].shells {
                    modes.push((Some(sx), Some(sy)));
                }
            }
            for (shx, shy) in modes {
                let lists: Vec<(&[f64], &[f64])> = (0..k)
                    .map(|z| {
                        let sh = if z == x { shx } else if z == y { shy } else { None };
                        match sh {
                            Some(sh) => (sh.phi.as_slice(), sh.weight.as_slice()),
                            None => (chosen[z].phi.as_slice(), chosen[z].weight.as_slice()),
                        }
                    })
                    .collect();
                let lens: Vec<usize> = lists.iter().map(|l| l.1.len()).collect();
                let sigma = shx.map_or(1.0, |s| s.sigma) * shy.map_or(1.0, |s| s.sigma);
                let mut phi = vec![0.0; self.d];
                let mut failure = None;
                for_each_index(&lens, |idx| {
                    if failure.is_some() {
                        return;
                    }
                    let mut w = sigma;
                    for (z, &i) in idx.iter().enumerate() {
                        phi[z * n..(z + 1) * n].copy_from_slice(&lists[z].0[i * n..(i + 1) * n]);
                        w *= lists[z].1[i];
                    }
                    let rho = self.density(cinv, norm, &phi) * w;
                    let nx = shx.map(|sh| &sh.normal[idx[x] * n..(idx[x] + 1) * n]);
                    let ny = shy.map(|sh| &sh.normal[idx[y] * n..(idx[y] + 1) * n]);
                    for (jj, j) in self.sources.iter().enumerate() {
                        let g = jet(&phi, j);
                        let mut t = CZERO;
                        for a in 0..n {
                            for b in 0..n {
                                let factor = match (nx, ny) {
                                    (None, None) => g.d2(a, n + b).coeff(top),
                                    (Some(u), None) => u[a] * g.d1(n + b).coeff(top),
                                    (None, Some(v)) => v[b] * g.d1(a).coeff(top),
                                    (Some(u), Some(v)) => u[a] * v[b] * g.val.coeff(top),
                                };
                                t += coeff[a * n + b] * factor;
                            }
                        }
                        if !t.re.is_finite() {
                            failure = Some(Error::numeric("non-finite boundary term", f64::NAN));
                        }
                        out[bin * nj + jj] += rho * t;
                    }
                });
                if let Some(e) = failure {
                    return Err(e);
                }
            }
        }
        Ok(())
    }
}

fn jet_const(v: Nil) -> Jet<Nil> {
    Jet {
        val: v,
        grad: Vec::new(),
        hess: Vec::new(),
    }
}

fn gen_index(gens: &[(usize, usize)], a: usize, b: usize) -> Option<usize> {
    let key = (a.min(b), a.max(b));
    gens.iter().position(|&(u, v)| (u.min(v), u.max(v)) == key)
}

fn piece_of(bin: usize, site: usize, nbins: usize) -> usize {
    if nbins == 1 {
        0
    } else {
        (bin >> site) & 1
    }
}

/// Calls `f` with every multi-index in the box `lens`.
fn for_each_index(lens: &[usize], mut f: impl FnMut(&[usize])) {
    if lens.iter().any(|&l| l == 0) {
        return;
    }
    let mut idx = vec![0usize; lens.len()];
    loop {
        f(&idx);
        let mut p = lens.len();
        loop {
            if p == 0 {
                return;
            }
            p -= 1;
            idx[p] += 1;
            if idx[p] < lens[p] {
                break;
            }
            idx[p] = 0;
        }
    }
}

/// `d^B C^-1` for every subset `B` of the pairs (bitmask index).
fn inverse_derivatives(cinv: &CMatrix, e: &[CMatrix]) -> Vec<CMatrix> {
    let m = e.len();
    let mut out = vec![cinv.clone(); 1 << m];
    for (mask, slot) in out.iter_mut().enumerate().skip(1) {
        let members: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let mut total = CMatrix::zeros(cinv.nrows(), cinv.ncols());
        for perm in crate::quadrature::permutations(members.len()) {
            let mut prod = cinv.clone();
            for &p in &perm {
                prod = prod * &e[members[p]] * cinv;
            }
            total += prod;
        }
        let sign = if members.len() % 2 == 0 { 1.0 } else { -1.0 };
        *slot = total * Complex64::new(sign, 0.0);
    }
    out
}

/// `d^B log det C_s = tr(d^{B - a} (C^-1) E_a)` with `a` the first pair of `B`.
fn logdet_derivatives(inv_der: &[CMatrix], e: &[CMatrix]) -> Vec<Complex64> {
    (0..inv_der.len())
        .map(|mask| {
            if mask == 0 {
                return CZERO;
            }
            let a = mask.trailing_zeros() as usize;
            (&inv_der[mask & !(1 << a)] * &e[a]).trace()
        })
        .collect()
}

/// Set partitions of the bits of `mask`, as lists of block masks.
fn mask_partitions(mask: usize) -> Vec<Vec<usize>> {
    if mask == 0 {
        return vec![Vec::new()];
    }
    let first = mask & mask.wrapping_neg();
    let rest = mask & !first;
    let mut out = Vec::new();
    let mut sub = rest;
    loop {
        let block = first | sub;
        for mut tail in mask_partitions(rest & !sub) {
            tail.push(block);
            out.push(tail);
        }
        if sub == 0 {
            break;
        }
        sub = (sub - 1) & rest;
    }
    out
}

/// Dense real view used by tests.
#[allow(dead_code)]
pub(crate) fn real_matrix(c: &CMatrix) -> DMatrix<f64> {
    c.map(|z| z.re)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partitions_of_masks() {
        assert_eq!(mask_partitions(0b111).len(), 5);
        assert_eq!(mask_partitions(0b1011).len(), 5);
        assert_eq!(mask_partitions(0b1).len(), 1);
    }

    #[test]
    fn ball_rules_integrate_gaussians() {
        let q = PhiQuadrature::default();
        for n in 1..=3 {
            let (phi, w) = region_rule(Region::Ball(9.0), n, &q).unwrap();
            let total: f64 = phi
                .chunks(n)
                .zip(&w)
                .map(|(p, w)| w * (-0.5 * p.iter().map(|v| v * v).sum::<f64>()).exp())
                .sum();
            let expect = (2.0 * PI).powf(n as f64 / 2.0);
            assert!((total - expect).abs() < 1e-9 * expect, "n={n}: {total} vs {expect}");
        }
        let (_, w) = region_rule(Region::Annulus(1.0, 2.0), 2, &q).unwrap();
        let area: f64 = w.iter().sum();
        assert!((area - 3.0 * PI).abs() < 1e-10);
    }
}
