//! Weighted kernel norms and a numeric checker for the convergence
//! hypotheses. The checker reports both sides of every inequality; it does
//! not reconstruct the proof constants, which are user inputs.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::covariance::{gaussian_normalizer, real_part, min_eigenvalue, invert};
use crate::engine::{Model, Radius};
use crate::error::{Error, Result};
use crate::interaction::v1_tree_norm;
use crate::lattice::Lattice;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormFlavor {
    /// `sup_x sum_y e^{m d(x,y)} |A(x,y)|`
    OneInf,
    /// `sup_{x,y} e^{m d(x,y)} |A(x,y)|`
    Inf,
}

/// Weighted norm of a kernel indexed by sites, or by `(site, component)`
/// pairs laid out site-major.
pub fn kernel_norm(a: &DMatrix<Complex64>, m: f64, flavor: NormFlavor, lattice: &Lattice) -> Result<f64> {
    if !(m >= 0.0) {
        return Err(Error::input("kernel norm mass must be nonnegative"));
    }
    if !a.is_square() || a.nrows() % lattice.len() != 0 {
        return Err(Error::input("kernel shape does not match the lattice"));
    }
    let per_site = a.nrows() / lattice.len();
    let mut best = 0.0f64;
    for i in 0..a.nrows() {
        let mut row = 0.0f64;
        for j in 0..a.ncols() {
            let w = (m * lattice.distance(i / per_site, j / per_site)).exp() * a[(i, j)].norm();
            match flavor {
                NormFlavor::OneInf => row += w,
                NormFlavor::Inf => row = row.max(w),
            }
        }
        best = best.max(row);
    }
    Ok(best)
}

pub fn real_kernel_norm(a: &DMatrix<f64>, m: f64, flavor: NormFlavor, lattice: &Lattice) -> Result<f64> {
    kernel_norm(&a.map(|v| Complex64::new(v, 0.0)), m, flavor, lattice)
}

/// `omega(r') = w^-delta ((1/v1 + r') / (1/v1 + R))^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaProfile {
    pub w: f64,
    pub delta: f64,
    pub degree: u32,
    pub v1: f64,
    pub r: f64,
    pub big_r: f64,
}

impl OmegaProfile {
    pub fn eval(&self, r_prime: f64) -> Result<f64> {
        omega_profile(r_prime, self)
    }
}

pub fn omega_profile(r_prime: f64, p: &OmegaProfile) -> Result<f64> {
    if !(p.w > 0.0 && p.v1 > 0.0 && p.delta >= 0.0) {
        return Err(Error::input("omega profile needs w > 0, v1 > 0 and delta >= 0"));
    }
    let span = 1e-12 * p.big_r.abs().max(1.0);
    if !(r_prime >= p.r - span && r_prime <= p.big_r + span) {
        return Err(Error::input(format!("r' = {r_prime} outside [{}, {}]", p.r, p.big_r)));
    }
    let ratio = (1.0 / p.v1 + r_prime) / (1.0 / p.v1 + p.big_r);
    Ok(p.w.powf(-p.delta) * ratio.powi(p.degree as i32))
}

/// Inputs of the hypothesis checker that are not part of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HypothesisParams {
    /// Small-field radius `r`.
    pub r: f64,
    pub v1: f64,
    pub v2: f64,
    pub lambda_j: f64,
    /// Decay mass of `log Z`.
    pub m: f64,
    /// Decay mass reserved for the interaction.
    pub m_v: f64,
    pub c_v: f64,
    /// `w` and `delta` of the omega profile; the degree defaults to the
    /// lowest field degree of `V_1`.
    pub omega_w: f64,
    pub omega_delta: f64,
    pub omega_degree: Option<u32>,
    pub c_pos: f64,
    pub c_pos_prime: f64,
    /// Stand-in for the constant of the small-field positivity condition.
    pub c_small_field: f64,
    /// Grid points in `[r, R]` for the `V_1` bound.
    pub grid: usize,
    /// Largest `|Q|` in the brute-force neighbourhood growth.
    pub growth_max_q: usize,
}

impl Default for HypothesisParams {
    fn default() -> Self {
        HypothesisParams {
            r: 2.0,
            v1: 0.1,
            v2: 0.05,
            lambda_j: 1.0,
            m: 0.5,
            m_v: 0.5,
            c_v: 1.0,
            omega_w: 0.1,
            omega_delta: 0.0,
            omega_degree: None,
            c_pos: 1.0,
            c_pos_prime: 1.0,
            c_small_field: 1.0,
            grid: 16,
            growth_max_q: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs <= rhs` or `lhs >= rhs`, as printed.
    pub relation: String,
    pub pass: bool,
    /// `rhs - lhs` for `<=`, `lhs - rhs` for `>=`.
    pub margin: f64,
}

impl Condition {
    fn at_most(name: &str, lhs: f64, rhs: f64) -> Self {
        Condition {
            name: name.into(),
            lhs,
            rhs,
            relation: "<=".into(),
            pass: lhs <= rhs * (1.0 + 1e-12) + 1e-300,
            margin: rhs - lhs,
        }
    }

    fn at_least(name: &str, lhs: f64, rhs: f64) -> Self {
        Condition {
            name: name.into(),
            lhs,
            rhs,
            relation: ">=".into(),
            pass: lhs * (1.0 + 1e-12) + 1e-300 >= rhs,
            margin: lhs - rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisInputs {
    pub mu: f64,
    pub r: f64,
    /// `None` for no cutoff.
    pub big_r: Option<f64>,
    pub v1: f64,
    pub v2: f64,
    pub lambda_j: f64,
    pub m: f64,
    pub m_v: f64,
    pub m_dot: f64,
    pub omega: Option<OmegaProfile>,
    pub c_v: f64,
    pub c_pos: f64,
    pub c_pos_prime: f64,
    pub c_small_field: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub conditions: Vec<Condition>,
    pub inputs: HypothesisInputs,
}

impl HypothesisReport {
    pub fn all_pass(&self) -> bool {
        self.conditions.iter().all(|c| c.pass)
    }

    pub fn condition(&self, name: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name)
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let width = self.conditions.iter().map(|c| c.name.len()).max().unwrap_or(4).max(9);
        let mut out = format!("{:<width$}  {:>12}     {:>12}  {:>12}  result\n", "condition", "lhs", "rhs", "margin");
        for c in &self.conditions {
            out += &format!(
                "{:<width$}  {:>12.5e}  {:<2} {:>12.5e}  {:>12.5e}  {}\n",
                c.name,
                c.lhs,
                c.relation,
                c.rhs,
                c.margin,
                if c.pass { "pass" } else { "FAIL" }
            );
        }
        out
    }
}

/// Total variation of the single-site Gaussian measure with covariance `c`.
fn measure_mass(c: &DMatrix<Complex64>) -> Result<f64> {
    let n = c.nrows();
    let inv = invert(c)?;
    let re = real_part(&inv);
    let det_re = re.determinant();
    if !(det_re > 0.0) || !(min_eigenvalue(&re) > 0.0) {
        return Err(Error::model("Re C(x,x)^-1 is not positive definite"));
    }
    Ok(gaussian_normalizer(c)?.norm() * (2.0 * PI).powf(n as f64 / 2.0) / det_re.sqrt())
}

/// Evaluates the convergence hypotheses on `model` and reports each side.
pub fn check_hypotheses(model: &Model, p: &HypothesisParams) -> Result<HypothesisReport> {
    let lattice = &model.lattice;
    let mu = model.covariance.mu();
    let m_dot = 2.0 * p.m + 3.0 * p.m_v;
    if !(p.r > 0.0 && p.m > 0.0 && p.m_v > 0.0 && p.lambda_j > 0.0 && p.v1 > 0.0 && p.v2 >= 0.0) {
        return Err(Error::input("r, m, m_V, lambda_J and v1 must be positive and v2 nonnegative"));
    }
    let big_r = match model.radius {
        Radius::Finite(r) => Some(r),
        Radius::Unbounded { .. } => None,
    };
    let kernel = &model.interaction.kernel;
    let mut conditions = Vec::new();
    let omega = match big_r {
        Some(big_r) => {
            let degree = p.omega_degree.unwrap_or_else(|| {
                kernel.terms().map(|t| t.xi.len() as u32).filter(|&d| d > 0).min().unwrap_or(1)
            });
            Some(OmegaProfile {
                w: p.omega_w,
                delta: p.omega_delta,
                degree,
                v1: p.v1,
                r: p.r.min(big_r),
                big_r,
            })
        }
        None => None,
    };
    // the kinetic term dominates V_1 in both regions
    let (omega_big, growth) = match &omega {
        Some(o) => {
            let w = o.eval(o.big_r)?;
            let a = w.ln() / p.m_v;
            let g = if a > 0.0 { lattice.cg_prime(a, p.growth_max_q)?.value() } else { 1.0 };
            (w, g)
        }
        None => (0.0, 1.0),
    };
    conditions.push(Condition::at_least("choice_of_r", mu * p.r * p.r, 16.0 * omega_big * growth));
    match &omega {
        Some(o) => {
            conditions.push(Condition::at_most("omega_at_r", o.eval(o.r)?, 1.0));
            let mut worst: Option<Condition> = None;
            let n = p.grid.max(2);
            for i in 0..n {
                let rp = o.r + (o.big_r - o.r) * i as f64 / (n - 1) as f64;
                let lhs = if kernel.is_empty() {
                    0.0
                } else {
                    v1_tree_norm(kernel, rp + 1.0 / p.v1, p.lambda_j, m_dot, lattice)?
                };
                let c = Condition::at_most("v1_bound", lhs, o.eval(rp)?);
                if worst.as_ref().map_or(true, |w| c.margin < w.margin) {
                    worst = Some(c);
                }
            }
            conditions.extend(worst);
        }
        None => {
            let lhs = if kernel.is_empty() { 0.0 } else { 1.0 };
            conditions.push(Condition::at_most("v1_vanishes_without_cutoff", lhs, 0.0));
        }
    }
    if let Some(tb) = &model.interaction.two_body {
        let lam = if tb.v_half.nrows() == 0 { 0.0 } else { min_eigenvalue(&tb.v_half) };
        conditions.push(Condition::at_least("v_half_spectrum", lam, p.c_v * p.v2.sqrt()));
        conditions.push(Condition::at_most(
            "v_half_decay",
            real_kernel_norm(&tb.v_half, 2.0 * m_dot, NormFlavor::OneInf, lattice)?,
            p.v2.sqrt(),
        ));
        conditions.push(Condition::at_most("source_coefficient", tb.a, p.lambda_j * p.v2.powf(0.25)));
    }
    let n = model.components();
    let mut mass = 0.0f64;
    for x in 0..model.n_sites() {
        mass = mass.max(measure_mass(&model.covariance.block(&[x]))?);
    }
    conditions.push(Condition::at_most(
        "small_field_positivity",
        (-mu * p.r * p.r / 4.0).exp(),
        2f64.powi(-(n as i32)) / mass * (-p.c_small_field).exp(),
    ));
    Ok(HypothesisReport {
        conditions,
        inputs: HypothesisInputs {
            mu,
            r: p.r,
            big_r,
            v1: p.v1,
            v2: p.v2,
            lambda_j: p.lambda_j,
            m: p.m,
            m_v: p.m_v,
            m_dot,
            omega,
            c_v: p.c_v,
            c_pos: p.c_pos,
            c_pos_prime: p.c_pos_prime,
            c_small_field: p.c_small_field,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_has_unit_norm() {
        let lat = Lattice::torus1d(4, 1).unwrap();
        let id = DMatrix::<Complex64>::identity(4, 4);
        for m in [0.0, 1.0, 3.0] {
            assert!((kernel_norm(&id, m, NormFlavor::OneInf, &lat).unwrap() - 1.0).abs() < 1e-15);
            assert!((kernel_norm(&id, m, NormFlavor::Inf, &lat).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn exponential_kernel_on_five_ring() {
        let lat = Lattice::torus1d(5, 1).unwrap();
        let a = DMatrix::from_fn(5, 5, |i, j| Complex64::new((-2.0 * lat.distance(i, j)).exp(), 0.0));
        let v = kernel_norm(&a, 1.0, NormFlavor::OneInf, &lat).unwrap();
        let e = 1.0 + 2.0 * (-1.0f64).exp() + 2.0 * (-2.0f64).exp();
        assert!((v - e).abs() < 1e-14);
    }

    #[test]
    fn omega_examples() {
        let p = OmegaProfile {
            w: 0.01,
            delta: 0.5,
            degree: 2,
            v1: 0.5,
            r: 1.0,
            big_r: 4.0,
        };
        assert!((p.eval(4.0).unwrap() - 10.0).abs() < 1e-12);
        // (2 + 1) / (2 + 4) = 1/2, squared, times 10
        assert!((p.eval(1.0).unwrap() - 2.5).abs() < 1e-12);
        assert!(p.eval(0.5).is_err());
        let flat = OmegaProfile { delta: 0.0, ..p };
        assert!((flat.eval(4.0).unwrap() - 1.0).abs() < 1e-15);
    }
}
