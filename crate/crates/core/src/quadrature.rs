//! Quadrature rules, cubature over tree-edge parameter cubes, and
//! finite-difference mixed partials with Richardson extrapolation.

use std::num::NonZeroUsize;
use std::ops::{Add, Mul, Sub};

use gauss_quad::GaussLegendre;
use num_complex::Complex64;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values that can be summed with real weights: `f64`, `Complex64` and
/// vectors of complex numbers.
pub trait Scalar:
    Clone + Zero + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> + Send + Sync + 'static
{
    fn magnitude(&self) -> f64;
}

impl Scalar for f64 {
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

/// A vector of complex values combined elementwise. The empty vector acts
/// as zero of any length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CVec(pub Vec<Complex64>);

impl CVec {
    fn zip_with(self, other: CVec, f: impl Fn(Complex64, Complex64) -> Complex64) -> CVec {
        if other.0.is_empty() {
            return self;
        }
        if self.0.is_empty() {
            return CVec(other.0.into_iter().map(|b| f(Complex64::new(0.0, 0.0), b)).collect());
        }
        debug_assert_eq!(self.0.len(), other.0.len());
        CVec(self.0.into_iter().zip(other.0).map(|(a, b)| f(a, b)).collect())
    }
}

impl Add for CVec {
    type Output = CVec;
    fn add(self, other: CVec) -> CVec {
        self.zip_with(other, |a, b| a + b)
    }
}

impl Sub for CVec {
    type Output = CVec;
    fn sub(self, other: CVec) -> CVec {
        self.zip_with(other, |a, b| a - b)
    }
}

impl Mul<f64> for CVec {
    type Output = CVec;
    fn mul(mut self, w: f64) -> CVec {
        for v in &mut self.0 {
            *v *= w;
        }
        self
    }
}

impl Zero for CVec {
    fn zero() -> Self {
        CVec(Vec::new())
    }
    fn is_zero(&self) -> bool {
        self.0.iter().all(|v| v.norm() == 0.0)
    }
}

impl Scalar for CVec {
    fn magnitude(&self) -> f64 {
        self.0.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// A one-dimensional rule `sum_i w_i f(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule1d {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule1d {
    /// Gauss–Legendre rule with `order` nodes on `[-1, 1]`.
    pub fn gauss_legendre(order: usize) -> Self {
        let order = NonZeroUsize::new(order.max(1)).expect("nonzero");
        let rule = GaussLegendre::new(order);
        let (nodes, weights) = rule.iter().map(|(x, w)| (*x, *w)).unzip();
        Rule1d { nodes, weights }
    }

    /// Composite Gauss–Legendre rule on `[a, b]` with equal panels.
    pub fn composite(a: f64, b: f64, panels: usize, order: usize) -> Self {
        let base = Self::gauss_legendre(order);
        let panels = panels.max(1);
        let width = (b - a) / panels as f64;
        let mut nodes = Vec::with_capacity(panels * base.nodes.len());
        let mut weights = Vec::with_capacity(nodes.capacity());
        for p in 0..panels {
            let lo = a + p as f64 * width;
            for (x, w) in base.nodes.iter().zip(&base.weights) {
                nodes.push(lo + 0.5 * width * (x + 1.0));
                weights.push(0.5 * width * w);
            }
        }
        Rule1d { nodes, weights }
    }

    /// Union of rules over disjoint pieces.
    pub fn concat(parts: &[Rule1d]) -> Self {
        Rule1d {
            nodes: parts.iter().flat_map(|r| r.nodes.iter().copied()).collect(),
            weights: parts.iter().flat_map(|r| r.weights.iter().copied()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<T: Scalar>(&self, mut f: impl FnMut(f64) -> T) -> T {
        self.nodes
            .iter()
            .zip(&self.weights)
            .fold(T::zero(), |acc, (&x, &w)| acc + f(x) * w)
    }
}

/// Settings for cubature over `[0,1]^k` tree-edge parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CubatureConfig {
    /// Per-axis Gauss–Legendre order of the first pass.
    pub order: usize,
    /// Relative change between successive doublings accepted as converged.
    pub rel_tol: f64,
    /// Absolute change accepted as converged (for values near zero).
    pub abs_tol: f64,
    /// Number of order doublings allowed after the first pass.
    pub max_doublings: usize,
}

impl Default for CubatureConfig {
    fn default() -> Self {
        CubatureConfig {
            order: 8,
            rel_tol: 1e-8,
            abs_tol: 1e-14,
            max_doublings: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubatureOutcome<T> {
    pub value: T,
    /// Magnitude of the last change between successive orders.
    pub residual: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Integrates `f` over `[0,1]^k`.
///
/// The cube is split into the `k!` simplices on which the ordering of the
/// coordinates is fixed. Functions built from `min` over tree paths are
/// smooth on each piece, so tensor Gauss–Legendre converges geometrically.
pub fn integrate_unit_cube<T: Scalar>(
    k: usize,
    cfg: &CubatureConfig,
    mut f: impl FnMut(&[f64]) -> Result<T>,
) -> Result<CubatureOutcome<T>> {
    if k == 0 {
        return Ok(CubatureOutcome {
            value: f(&[])?,
            residual: 0.0,
            evaluations: 1,
            converged: true,
        });
    }
    let perms = permutations(k);
    let mut order = cfg.order.max(1);
    let mut evaluations = 0;
    let mut previous = simplex_pass(k, order, &perms, &mut f, &mut evaluations)?;
    let mut residual = f64::INFINITY;
    for _ in 0..cfg.max_doublings {
        order *= 2;
        let next = simplex_pass(k, order, &perms, &mut f, &mut evaluations)?;
        residual = (next.clone() - previous).magnitude();
        previous = next;
        if residual <= (cfg.rel_tol * previous.magnitude()).max(cfg.abs_tol) {
            return Ok(CubatureOutcome {
                value: previous,
                residual,
                evaluations,
                converged: true,
            });
        }
    }
    Ok(CubatureOutcome {
        value: previous,
        residual,
        evaluations,
        converged: cfg.max_doublings == 0,
    })
}

fn simplex_pass<T: Scalar>(
    k: usize,
    order: usize,
    perms: &[Vec<usize>],
    f: &mut impl FnMut(&[f64]) -> Result<T>,
    evaluations: &mut usize,
) -> Result<T> {
    let rule = Rule1d::composite(0.0, 1.0, 1, order);
    let n = rule.len();
    let mut idx = vec![0usize; k];
    let mut t = vec![0.0; k];
    let mut total = T::zero();
    loop {
        // Collapsed coordinates: w_1 = u_1 > w_2 = u_1 u_2 > ... > w_k.
        let mut jac = 1.0;
        let mut weight = 1.0;
        let mut w = 1.0;
        let mut sorted = [0.0f64; 16];
        for j in 0..k {
            let u = rule.nodes[idx[j]];
            weight *= rule.weights[idx[j]];
            jac *= w;
            w *= u;
            sorted[j] = w;
        }
        for perm in perms {
            for j in 0..k {
                t[perm[j]] = sorted[j];
            }
            total = total + f(&t)? * (weight * jac);
            *evaluations += 1;
        }
        // Odometer increment.
        let mut j = 0;
        loop {
            if j == k {
                return Ok(total);
            }
            idx[j] += 1;
            if idx[j] < n {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}

/// Adaptive bisection with a 10/20-point Gauss–Legendre error estimate.
pub fn integrate_1d_adaptive(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: usize,
) -> Result<f64> {
    let low = Rule1d::gauss_legendre(10);
    let high = Rule1d::gauss_legendre(20);
    fn panel(rule: &Rule1d, f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        rule.integrate(|x| f(c + h * x)) * h
    }
    fn rec(
        low: &Rule1d,
        high: &Rule1d,
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        tol: f64,
        depth: usize,
    ) -> std::result::Result<f64, f64> {
        let coarse = panel(low, f, a, b);
        let fine = panel(high, f, a, b);
        let err = (fine - coarse).abs();
        if err <= tol {
            return Ok(fine);
        }
        if depth == 0 {
            return Err(err);
        }
        let m = 0.5 * (a + b);
        Ok(rec(low, high, f, a, m, 0.5 * tol, depth - 1)?
            + rec(low, high, f, m, b, 0.5 * tol, depth - 1)?)
    }
    rec(&low, &high, f, a, b, tol, max_depth)
        .map_err(|err| Error::numeric("1D adaptive quadrature did not converge", err))
}

/// Central-difference settings for mixed partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdConfig {
    pub step: f64,
    /// Number of Richardson extrapolation levels (0 = plain central differences).
    pub richardson_levels: usize,
    /// How many times the step may be halved when an evaluation is rejected.
    pub max_halvings: usize,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            step: 1e-4,
            richardson_levels: 1,
            max_halvings: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdOutcome<T> {
    pub value: T,
    pub error_estimate: f64,
    pub step: f64,
}

/// Mixed partial `prod_i d/dx_{dirs[i]} f` at `x0` by central differences.
///
/// Repeated directions are allowed (the stencil then degenerates to the
/// standard central second difference with step `2h`). Evaluations that fail
/// with a model error (for instance an interpolated covariance that lost
/// positivity) trigger a halving of the step.
pub fn mixed_partial<T: Scalar>(
    mut f: impl FnMut(&[f64]) -> Result<T>,
    x0: &[f64],
    dirs: &[usize],
    cfg: &FdConfig,
) -> Result<FdOutcome<T>> {
    if dirs.is_empty() {
        return Ok(FdOutcome {
            value: f(x0)?,
            error_estimate: 0.0,
            step: 0.0,
        });
    }
    let mut h = cfg.step;
    let mut halvings = 0;
    loop {
        match richardson_table(&mut f, x0, dirs, h, cfg.richardson_levels) {
            Ok(out) => return Ok(out),
            Err(Error::Model(msg)) => {
                if halvings == cfg.max_halvings {
                    return Err(Error::Model(format!(
                        "finite-difference stencil rejected after {halvings} halvings: {msg}"
                    )));
                }
                halvings += 1;
                h *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
}

fn central_stencil<T: Scalar>(
    f: &mut impl FnMut(&[f64]) -> Result<T>,
    x0: &[f64],
    dirs: &[usize],
    h: f64,
) -> Result<T> {
    let k = dirs.len();
    let mut x = x0.to_vec();
    let mut total = T::zero();
    for signs in 0u32..(1 << k) {
        x.copy_from_slice(x0);
        let mut sign = 1.0;
        for (i, &d) in dirs.iter().enumerate() {
            if signs & (1 << i) != 0 {
                x[d] -= h;
                sign = -sign;
            } else {
                x[d] += h;
            }
        }
        total = total + f(&x)? * sign;
    }
    Ok(total * (2.0 * h).powi(k as i32).recip())
}

fn richardson_table<T: Scalar>(
    f: &mut impl FnMut(&[f64]) -> Result<T>,
    x0: &[f64],
    dirs: &[usize],
    h: f64,
    levels: usize,
) -> Result<FdOutcome<T>> {
    let mut rows: Vec<Vec<T>> = Vec::with_capacity(levels + 1);
    let mut step = h;
    for level in 0..=levels {
        let base = central_stencil(f, x0, dirs, step)?;
        let mut row = vec![base];
        for j in 1..=level {
            let factor = 4f64.powi(j as i32);
            let prev = rows[level - 1][j - 1].clone();
            let cur = row[j - 1].clone();
            row.push((cur * factor - prev) * (factor - 1.0).recip());
        }
        rows.push(row);
        step *= 0.5;
    }
    let last = rows.last().expect("at least one level");
    let value = last.last().expect("nonempty row").clone();
    let error_estimate = if levels == 0 {
        f64::NAN
    } else {
        let prev_row = &rows[levels - 1];
        (value.clone() - prev_row.last().expect("nonempty row").clone()).magnitude()
    };
    Ok(FdOutcome {
        value,
        error_estimate,
        step: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        let rule = Rule1d::gauss_legendre(5);
        // degree 9 is integrated exactly by 5 nodes
        let v = rule.integrate(|x| x.powi(8) + x.powi(9));
        assert!((v - 2.0 / 9.0).abs() < 1e-14);
        let c = Rule1d::composite(0.0, 3.0, 4, 6);
        assert!((c.integrate(|x| x * x) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn unit_cube_handles_min_kinks() {
        // int_0^1 int_0^1 min(a,b) = 1/3
        let out = integrate_unit_cube(2, &CubatureConfig::default(), |t| Ok(t[0].min(t[1]))).unwrap();
        assert!((out.value - 1.0 / 3.0).abs() < 1e-13);
        assert!(out.converged);
        // int over [0,1]^3 of min(a,b,c) = 1/4
        let out = integrate_unit_cube(3, &CubatureConfig::default(), |t| {
            Ok(t[0].min(t[1]).min(t[2]))
        })
        .unwrap();
        assert!((out.value - 0.25).abs() < 1e-13);
    }

    #[test]
    fn unit_cube_zero_dimensional() {
        let out = integrate_unit_cube(0, &CubatureConfig::default(), |_| Ok(2.5)).unwrap();
        assert_eq!(out.value, 2.5);
    }

    #[test]
    fn adaptive_1d_matches_erf_like_value() {
        // int_{-2}^{2} exp(-x^2/2) dx / sqrt(2 pi) = 0.9544997361036416
        let v = integrate_1d_adaptive(
            &|x| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            -2.0,
            2.0,
            1e-13,
            30,
        )
        .unwrap();
        assert!((v - 0.954_499_736_103_641_6).abs() < 1e-12);
    }

    #[test]
    fn mixed_partial_of_exponential() {
        // d^2/dx dy exp(2x + 3y) at 0 = 6
        let f = |x: &[f64]| Ok((2.0 * x[0] + 3.0 * x[1]).exp());
        let cfg = FdConfig {
            step: 1e-2,
            richardson_levels: 2,
            max_halvings: 0,
        };
        let out = mixed_partial(f, &[0.0, 0.0], &[0, 1], &cfg).unwrap();
        assert!((out.value - 6.0).abs() < 1e-9, "{}", out.value);
        // repeated direction: d^2/dx^2 exp(2x) = 4
        let out = mixed_partial(|x: &[f64]| Ok((2.0 * x[0]).exp()), &[0.0], &[0, 0], &cfg).unwrap();
        assert!((out.value - 4.0).abs() < 1e-8);
    }

    #[test]
    fn mixed_partial_halves_on_model_error() {
        let f = |x: &[f64]| {
            if x[0] > 0.3 {
                Err(Error::model("outside domain"))
            } else {
                Ok(x[0] * x[0])
            }
        };
        let cfg = FdConfig {
            step: 0.5,
            richardson_levels: 1,
            max_halvings: 4,
        };
        let out = mixed_partial(f, &[0.1], &[0], &cfg).unwrap();
        assert!((out.value - 0.2).abs() < 1e-12);
        assert!(out.step < 0.5);
    }
}
