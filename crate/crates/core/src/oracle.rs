//! Brute-force evaluation of `log Z(J)` on tiny lattices by direct
//! integration over the whole field, plus correlations and decay fits.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::correlation::{fd_correlations, CorrelationResult};
use crate::covariance::gaussian_weight;
use crate::engine::Model;
use crate::error::{Error, Result};
use crate::interaction::{LocalInteraction, Part, Point};
use crate::quadrature::{FdConfig, Rule1d};

/// Largest total dimension for the tensor-product rule.
pub const MAX_CUBATURE_DIM: usize = 8;
/// Largest total dimension for quasi-Monte-Carlo.
pub const MAX_QMC_DIM: usize = 16;
/// Points in one scrambled Sobol block.
const QMC_BLOCK: u32 = 1 << 16;

const CZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMethod {
    FullCubature,
    QuasiMonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub method: OracleMethod,
    /// Target width of the radial/linear panels.
    pub panel_width: f64,
    pub order: usize,
    /// Angular nodes per circle (two or three components).
    pub angular: usize,
    /// Node budget for the finer of the two tensor rules.
    pub max_nodes: u64,
    /// `log2` of the number of QMC points per estimate (at least 16).
    pub qmc_log2_points: u32,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            method: OracleMethod::FullCubature,
            panel_width: 1.25,
            order: 8,
            angular: 24,
            max_nodes: 50_000_000,
            qmc_log2_points: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    #[serde(rename = "logZ", serialize_with = "ser_c")]
    pub log_z: Complex64,
    #[serde(serialize_with = "ser_c")]
    pub z: Complex64,
    pub method: OracleMethod,
    /// Difference between two independent estimates of `Z`, relative to `|Z|`.
    pub residual: f64,
    pub nodes: u64,
    /// Gaussian mass outside the box when there is no cutoff.
    pub tail_estimate: f64,
}

fn ser_c<S: serde::Serializer>(v: &Complex64, ser: S) -> std::result::Result<S::Ok, S::Error> {
    [v.re, v.im].serialize(ser)
}

/// Nodes and weights of one site's region, flattened as `nodes[i * n + c]`.
struct SiteRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl SiteRule {
    fn len(&self) -> usize {
        self.weights.len()
    }

    fn build(components: usize, radius: f64, panels: usize, order: usize, angular: usize) -> Result<Self> {
        let radial = Rule1d::composite(0.0, radius, panels, order);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        match components {
            1 => {
                let line = Rule1d::composite(-radius, radius, 2 * panels, order);
                return Ok(SiteRule {
                    nodes: line.nodes,
                    weights: line.weights,
                });
            }
            2 => {
                for (&r, &wr) in radial.nodes.iter().zip(&radial.weights) {
                    for k in 0..angular {
                        let t = 2.0 * PI * (k as f64 + 0.5) / angular as f64;
                        nodes.extend([r * t.cos(), r * t.sin()]);
                        weights.push(wr * r * 2.0 * PI / angular as f64);
                    }
                }
            }
            3 => {
                let polar = Rule1d::gauss_legendre((angular / 2).max(2));
                for (&r, &wr) in radial.nodes.iter().zip(&radial.weights) {
                    for (&ct, &wt) in polar.nodes.iter().zip(&polar.weights) {
                        let st = (1.0 - ct * ct).sqrt();
                        for k in 0..angular {
                            let p = 2.0 * PI * (k as f64 + 0.5) / angular as f64;
                            nodes.extend([r * st * p.cos(), r * st * p.sin(), r * ct]);
                            weights.push(wr * r * r * wt * 2.0 * PI / angular as f64);
                        }
                    }
                }
            }
            n => return Err(Error::resource("oracle field components", n, 3)),
        }
        Ok(SiteRule { nodes, weights })
    }
}

struct Setup {
    dim: usize,
    components: usize,
    n_sites: usize,
    inverse: Vec<Complex64>,
    normalizer: Complex64,
    local: LocalInteraction,
    half_width: f64,
    tail: f64,
}

fn setup(model: &Model, cap: usize) -> Result<Setup> {
    let n_sites = model.n_sites();
    let components = model.components();
    let dim = n_sites * components;
    if dim > cap {
        return Err(Error::resource("oracle dimension", dim, cap));
    }
    let weight = gaussian_weight(model.covariance.matrix())?;
    let sites: Vec<usize> = (0..n_sites).collect();
    let half_width = model.unbounded_half_width();
    let tail = match model.radius {
        crate::engine::Radius::Finite(_) => 0.0,
        crate::engine::Radius::Unbounded { .. } => {
            n_sites as f64 * (-model.covariance.mu() * half_width * half_width / 2.0).exp()
        }
    };
    Ok(Setup {
        dim,
        components,
        n_sites,
        inverse: weight.inverse.iter().copied().collect::<Vec<_>>(),
        normalizer: weight.normalizer,
        local: model.interaction.localize(&sites),
        half_width,
        tail,
    })
}

impl Setup {
    // column-major storage from nalgebra
    fn k(&self, a: usize, b: usize) -> Complex64 {
        self.inverse[a + b * self.dim]
    }

    /// `exp(-phi K phi / 2 + V_field)` times the per-source factors.
    fn leaf(&self, phi: &[f64], quad: Complex64, sources: &[Vec<f64>], out: &mut [Complex64], w: f64) {
        let phi_c: Vec<Complex64> = phi.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let one = |_: usize, _: usize| Complex64::new(1.0, 0.0);
        let field = self.local.eval_in(&phi_c, &one, &[], Part::Field);
        let base = (field - 0.5 * quad).exp() * w;
        for (slot, j) in out.iter_mut().zip(sources) {
            let src = if j.iter().all(|&v| v == 0.0) {
                CZERO
            } else {
                self.local.eval_in(&phi_c, &one, j, Part::Source)
            };
            *slot += base * src.exp();
        }
    }

    fn tensor(&self, rule: &SiteRule, sources: &[Vec<f64>]) -> Vec<Complex64> {
        let n = self.components;
        let first = 0..rule.len();
        let work = |i0: usize| {
            let mut acc = vec![CZERO; sources.len()];
            let mut phi = vec![0.0; self.dim];
            let mut idx = vec![0usize; self.n_sites];
            idx[0] = i0;
            // quadratic form accumulated site by site
            let mut partial = vec![CZERO; self.n_sites + 1];
            let mut weight = vec![1.0; self.n_sites + 1];
            let mut depth = 0usize;
            loop {
                let x = depth;
                let node = idx[x];
                phi[x * n..(x + 1) * n].copy_from_slice(&rule.nodes[node * n..(node + 1) * n]);
                let mut q = partial[x];
                for a in x * n..(x + 1) * n {
                    let mut row = self.k(a, a) * phi[a];
                    for b in 0..a {
                        row += self.k(a, b) * (2.0 * phi[b]);
                    }
                    q += row * phi[a];
                }
                partial[x + 1] = q;
                weight[x + 1] = weight[x] * rule.weights[node];
                if x + 1 == self.n_sites {
                    self.leaf(&phi, q, sources, &mut acc, weight[x + 1]);
                    // advance the odometer
                    let mut d = x;
                    loop {
                        if d == 0 {
                            return acc;
                        }
                        idx[d] += 1;
                        if idx[d] < rule.len() {
                            depth = d;
                            break;
                        }
                        idx[d] = 0;
                        d -= 1;
                    }
                } else {
                    depth = x + 1;
                    idx[depth] = 0;
                }
            }
        };
        #[cfg(feature = "parallel")]
        let parts: Vec<Vec<Complex64>> = {
            use rayon::prelude::*;
            first.into_par_iter().map(work).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let parts: Vec<Vec<Complex64>> = first.map(work).collect();
        let mut total = vec![CZERO; sources.len()];
        for p in parts {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        total.iter().map(|z| z * self.normalizer).collect()
    }

    /// Uniform sampling of the product of per-site regions.
    fn qmc(&self, log2_points: u32, seed: u64, sources: &[Vec<f64>]) -> Vec<Complex64> {
        let n = self.components;
        let r = self.half_width;
        let volume_site = match n {
            1 => 2.0 * r,
            2 => PI * r * r,
            _ => 4.0 / 3.0 * PI * r * r * r,
        };
        let volume = volume_site.powi(self.n_sites as i32);
        let blocks = 1u32 << log2_points.saturating_sub(16);
        let dims_per_site = n;
        let work = |block: u32| {
            let mut acc = vec![CZERO; sources.len()];
            let mut phi = vec![0.0; self.dim];
            let block_seed = (seed as u32).wrapping_mul(0x9E37_79B9) ^ block.wrapping_mul(0x85EB_CA6B) ^ (seed >> 32) as u32;
            for i in 0..QMC_BLOCK {
                for x in 0..self.n_sites {
                    let u = |c: usize| sobol_burley::sample(i, (x * dims_per_site + c) as u32, block_seed) as f64;
                    let p = &mut phi[x * n..(x + 1) * n];
                    match n {
                        1 => p[0] = r * (2.0 * u(0) - 1.0),
                        2 => {
                            let rad = r * u(0).sqrt();
                            let t = 2.0 * PI * u(1);
                            p[0] = rad * t.cos();
                            p[1] = rad * t.sin();
                        }
                        _ => {
                            let rad = r * u(0).cbrt();
                            let ct = 2.0 * u(1) - 1.0;
                            let st = (1.0 - ct * ct).sqrt();
                            let t = 2.0 * PI * u(2);
                            p[0] = rad * st * t.cos();
                            p[1] = rad * st * t.sin();
                            p[2] = rad * ct;
                        }
                    }
                }
                let mut q = CZERO;
                for a in 0..self.dim {
                    let mut row = self.k(a, a) * phi[a];
                    for b in 0..a {
                        row += self.k(a, b) * (2.0 * phi[b]);
                    }
                    q += row * phi[a];
                }
                self.leaf(&phi, q, sources, &mut acc, 1.0);
            }
            acc
        };
        #[cfg(feature = "parallel")]
        let parts: Vec<Vec<Complex64>> = {
            use rayon::prelude::*;
            (0..blocks).into_par_iter().map(work).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let parts: Vec<Vec<Complex64>> = (0..blocks).map(work).collect();
        let scale = volume / (blocks as f64 * QMC_BLOCK as f64);
        let mut total = vec![CZERO; sources.len()];
        for p in parts {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        total.iter().map(|z| z * self.normalizer * scale).collect()
    }
}

/// Per-site rule sizes for the fine and coarse tensor rules within budget.
fn tensor_rules(s: &Setup, cfg: &OracleConfig) -> Result<(SiteRule, SiteRule)> {
    let r = s.half_width;
    let mut panels = ((r / cfg.panel_width).ceil() as usize).max(1);
    let mut order = cfg.order.max(2);
    let mut angular = cfg.angular.max(4);
    loop {
        let fine = SiteRule::build(s.components, r, panels, order, angular)?;
        let total = (fine.len() as f64).powi(s.n_sites as i32);
        if total <= cfg.max_nodes as f64 {
            let coarse = if panels > 1 {
                SiteRule::build(s.components, r, panels.div_ceil(2), order, angular)?
            } else {
                SiteRule::build(s.components, r, 1, order - 2, angular.max(8) * 3 / 4)?
            };
            return Ok((fine, coarse));
        }
        if panels > 1 {
            panels -= 1;
        } else if s.components > 1 && angular > 8 {
            angular -= 4;
        } else if order > 4 {
            order -= 1;
        } else {
            return Err(Error::resource("oracle tensor nodes", total as usize, cfg.max_nodes as usize));
        }
    }
}

fn finish(z: Complex64, other: Complex64, method: OracleMethod, nodes: u64, tail: f64) -> Result<OracleResult> {
    if !(z.norm() >= 1e-12) || !z.is_finite() {
        return Err(Error::numeric(format!("|Z| = {:.3e} too small for a logarithm", z.norm()), f64::NAN));
    }
    Ok(OracleResult {
        log_z: z.ln(),
        z,
        method,
        residual: (z - other).norm() / z.norm(),
        nodes,
        tail_estimate: tail,
    })
}

/// `log Z(J)` for every source vector, sharing the quadrature nodes.
pub fn brute_force_log_z_batch(model: &Model, sources: &[Vec<f64>], cfg: &OracleConfig) -> Result<Vec<OracleResult>> {
    let dim_expected = model.n_sites() * model.components();
    if sources.iter().any(|j| j.len() != dim_expected || j.iter().any(|v| !v.is_finite())) {
        return Err(Error::input("source vector has the wrong length or is not finite"));
    }
    match cfg.method {
        OracleMethod::FullCubature => {
            let s = setup(model, MAX_CUBATURE_DIM)?;
            let (fine, coarse) = tensor_rules(&s, cfg)?;
            let zf = s.tensor(&fine, sources);
            let zc = s.tensor(&coarse, sources);
            let nodes = (fine.len() as u64).pow(s.n_sites as u32);
            zf.into_iter()
                .zip(zc)
                .map(|(a, b)| finish(a, b, cfg.method, nodes, s.tail))
                .collect()
        }
        OracleMethod::QuasiMonteCarlo => {
            let s = setup(model, MAX_QMC_DIM)?;
            let log2 = cfg.qmc_log2_points.max(16);
            let za = s.qmc(log2, cfg.seed.wrapping_mul(2).wrapping_add(1), sources);
            let zb = s.qmc(log2, cfg.seed.wrapping_mul(2).wrapping_add(2), sources);
            za.into_iter()
                .zip(zb)
                .map(|(a, b)| {
                    let mut out = finish(0.5 * (a + b), a, cfg.method, 2u64 << log2, s.tail)?;
                    out.residual *= 2.0;
                    Ok(out)
                })
                .collect()
        }
    }
}

pub fn brute_force_log_z(model: &Model, j: &[f64], cfg: &OracleConfig) -> Result<OracleResult> {
    Ok(brute_force_log_z_batch(model, &[j.to_vec()], cfg)?.remove(0))
}

/// Truncated correlations from finite differences of the brute-force
/// `log Z`, on the same stencil as the engine.
pub fn oracle_correlations(
    model: &Model,
    sets: &[Vec<Point>],
    fd: &FdConfig,
    cfg: &OracleConfig,
) -> Result<Vec<CorrelationResult>> {
    fd_correlations(model.components(), model.n_sites(), sets, fd, |batch| {
        Ok(brute_force_log_z_batch(model, batch, cfg)?.into_iter().map(|r| r.log_z).collect())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub mass: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// False when the fit quality is too poor to call the data exponential.
    pub accepted: bool,
    pub points_used: usize,
}

/// Minimum `r^2` for an accepted fit.
pub const MIN_FIT_QUALITY: f64 = 0.9;

/// Least-squares fit of `log |c(d)| = b - m d`. Values at or below
/// `noise_floor` are dropped; at least three distinct distances must remain.
pub fn decay_fit(values: &[(f64, f64)], noise_floor: f64) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = values
        .iter()
        .filter(|(d, v)| d.is_finite() && v.abs() > noise_floor && v.is_finite())
        .map(|&(d, v)| (d, v.abs().ln()))
        .collect();
    let mut distances: Vec<f64> = pts.iter().map(|p| p.0).collect();
    distances.sort_by(f64::total_cmp);
    distances.dedup();
    if distances.len() < 3 {
        return Err(Error::input(format!(
            "decay fit needs at least 3 distances above the noise floor, got {}",
            distances.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy <= f64::EPSILON * n * (1.0 + my * my) {
        0.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(DecayFit {
        mass: -slope,
        intercept: my - slope * mx,
        r_squared,
        accepted: r_squared >= MIN_FIT_QUALITY && slope < 0.0,
        points_used: pts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_fit_recovers_exponential() {
        let v: Vec<(f64, f64)> = (0..5).map(|d| (d as f64, (-2.0 * d as f64).exp())).collect();
        let f = decay_fit(&v, 0.0).unwrap();
        assert!((f.mass - 2.0).abs() < 1e-10);
        assert!(f.accepted);
    }

    #[test]
    fn decay_fit_rejects_constant() {
        let v: Vec<(f64, f64)> = (0..5).map(|d| (d as f64, 0.3)).collect();
        let f = decay_fit(&v, 0.0).unwrap();
        assert!(f.r_squared < 1e-6);
        assert!(!f.accepted);
    }

    #[test]
    fn decay_fit_needs_three_points() {
        assert!(decay_fit(&[(0.0, 1.0), (1.0, 0.5), (2.0, 1e-20)], 1e-12).is_err());
    }
}
