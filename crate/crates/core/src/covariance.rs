//! Complex symmetric normal covariances, their Hadamard interpolation,
//! spectral envelopes and Gaussian normalizers.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::combinatorics::InterpolationPoint;
use crate::error::{Error, Result};
use crate::lattice::{Lattice, Site};

pub type CMatrix = DMatrix<Complex64>;

/// Relative tolerance for the symmetry and normality checks.
pub const NORMALITY_TOL: f64 = 1e-10;

/// A covariance on `sites x components`, indexed `site * N + component`.
#[derive(Debug, Clone)]
pub struct Covariance {
    matrix: CMatrix,
    n_sites: usize,
    components: usize,
    mu: f64,
    a_min: f64,
    decay_mass: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationReport {
    pub symmetry_defect: f64,
    pub normality_defect: f64,
    /// Smallest eigenvalue of `Re C^-1`.
    pub mu: f64,
    /// Smallest eigenvalue of `Re C`.
    pub a_min: f64,
}

/// Checks symmetry, normality and `Re C^-1 > 0`.
pub fn validate_matrix(c: &CMatrix) -> Result<ValidationReport> {
    if !c.is_square() || c.nrows() == 0 {
        return Err(Error::input("covariance must be a nonempty square matrix"));
    }
    let scale = c.norm().max(f64::MIN_POSITIVE);
    let symmetry_defect = (c - c.transpose()).norm() / scale;
    let adj = c.adjoint();
    let normality_defect = (c * &adj - &adj * c).norm() / (scale * scale);
    if symmetry_defect > NORMALITY_TOL {
        return Err(Error::model(format!("covariance not symmetric (defect {symmetry_defect:.3e})")));
    }
    if normality_defect > NORMALITY_TOL {
        return Err(Error::model(format!("covariance not normal (defect {normality_defect:.3e})")));
    }
    let inv = invert(c)?;
    let mu = min_eigenvalue(&real_part(&inv));
    let a_min = min_eigenvalue(&real_part(c));
    if !(mu > 0.0) {
        return Err(Error::model(format!("Re C^-1 is not positive definite (min eigenvalue {mu:.3e})")));
    }
    Ok(ValidationReport {
        symmetry_defect,
        normality_defect,
        mu,
        a_min,
    })
}

impl Covariance {
    pub fn new(matrix: CMatrix, n_sites: usize, components: usize) -> Result<Self> {
        if components == 0 || matrix.nrows() != n_sites * components {
            return Err(Error::input(format!(
                "covariance of size {} does not match {n_sites} sites x {components} components",
                matrix.nrows()
            )));
        }
        let report = validate_matrix(&matrix)?;
        Ok(Covariance {
            matrix,
            n_sites,
            components,
            mu: report.mu,
            a_min: report.a_min,
            decay_mass: None,
        })
    }

    pub fn from_real(matrix: DMatrix<f64>, n_sites: usize, components: usize) -> Result<Self> {
        Self::new(matrix.map(|x| Complex64::new(x, 0.0)), n_sites, components)
    }

    pub fn with_decay_mass(mut self, mass: f64) -> Self {
        self.decay_mass = Some(mass);
        self
    }

    pub fn validate(&self) -> Result<ValidationReport> {
        validate_matrix(&self.matrix)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn a_min(&self) -> f64 {
        self.a_min
    }

    pub fn decay_mass(&self) -> Option<f64> {
        self.decay_mass
    }

    pub fn entry(&self, x: Site, a: usize, y: Site, b: usize) -> Complex64 {
        let n = self.components;
        self.matrix[(x * n + a, y * n + b)]
    }

    /// `C_s` restricted to the listed sites: `C(x,y) s({x,y})`, where the
    /// point is indexed by position in `sites`.
    pub fn interpolated_block(&self, sites: &[Site], s: &InterpolationPoint) -> CMatrix {
        let n = self.components;
        let k = sites.len() * n;
        CMatrix::from_fn(k, k, |i, j| {
            let (p, a) = (i / n, i % n);
            let (q, b) = (j / n, j % n);
            self.matrix[(sites[p] * n + a, sites[q] * n + b)] * s.get(p, q)
        })
    }

    /// Restriction of `C` to the listed sites.
    pub fn block(&self, sites: &[Site]) -> CMatrix {
        self.interpolated_block(sites, &InterpolationPoint::ones(sites.len()))
    }
}

/// `C_s` together with the point it was built from.
#[derive(Debug, Clone)]
pub struct InterpolatedCovariance {
    pub point: InterpolationPoint,
    pub matrix: CMatrix,
}

/// The Hadamard product `C(x,y) s({x,y})` over the whole lattice.
pub fn hadamard_interpolate(c: &Covariance, s: &InterpolationPoint) -> Result<InterpolatedCovariance> {
    if s.n_sites() != c.n_sites {
        return Err(Error::input("interpolation point and covariance disagree on site count"));
    }
    let sites: Vec<Site> = (0..c.n_sites).collect();
    Ok(InterpolatedCovariance {
        point: s.clone(),
        matrix: c.interpolated_block(&sites, s),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeReport {
    /// Extreme eigenvalues of `Re C_s^-1`.
    pub inverse_range: (f64, f64),
    /// Extreme eigenvalues of `Re C_s`.
    pub direct_range: (f64, f64),
    /// Smallest distance to the envelope edges (negative when violated).
    pub margin: f64,
    pub contained: bool,
}

/// Checks `spec(Re C_s^-1) ⊂ [mu, 1/a]` and `spec(Re C_s) ⊂ [a, 1/mu]`.
pub fn spectral_envelope_check(c: &Covariance, s: &InterpolationPoint, tol: f64) -> Result<EnvelopeReport> {
    let cs = hadamard_interpolate(c, s)?.matrix;
    let inv = invert(&cs)?;
    let (lo_i, hi_i) = eigen_range(&real_part(&inv));
    let (lo_d, hi_d) = eigen_range(&real_part(&cs));
    let margin = (lo_i - c.mu)
        .min(1.0 / c.a_min - hi_i)
        .min(lo_d - c.a_min)
        .min(1.0 / c.mu - hi_d);
    Ok(EnvelopeReport {
        inverse_range: (lo_i, hi_i),
        direct_range: (lo_d, hi_d),
        margin,
        contained: margin >= -tol,
    })
}

/// `det(2 pi C)^(-1/2)` with the branch fixed by the principal logarithms of
/// the eigenvalues, which lie in the right half plane.
pub fn gaussian_normalizer(c: &CMatrix) -> Result<Complex64> {
    let eig = eigenvalues(c)?;
    let mut log_det = Complex64::new(0.0, 0.0);
    for lambda in eig.iter() {
        if !(lambda.re > 0.0) {
            return Err(Error::model(format!("covariance eigenvalue {lambda} has Re <= 0")));
        }
        log_det += (lambda * 2.0 * PI).ln();
    }
    Ok((-0.5 * log_det).exp())
}

/// Data needed to integrate against `dmu_C`: `C^-1` and the normalizer.
#[derive(Debug, Clone)]
pub struct GaussianWeight {
    pub inverse: CMatrix,
    pub normalizer: Complex64,
}

/// Prepares the Gaussian weight for `C`, failing with a model error when
/// `Re C^-1` is not positive definite.
pub fn gaussian_weight(c: &CMatrix) -> Result<GaussianWeight> {
    let inverse = invert(c)?;
    let lo = min_eigenvalue(&real_part(&inverse));
    if !(lo > 0.0) {
        return Err(Error::model(format!("Re C_s^-1 not positive definite (min eigenvalue {lo:.3e})")));
    }
    Ok(GaussianWeight {
        normalizer: gaussian_normalizer(c)?,
        inverse,
    })
}

/// `C^-1 = (-Laplacian + mass) ⊗ Id_N` on a torus preset.
pub fn build_laplacian_covariance(lattice: &Lattice, mass: f64) -> Result<Covariance> {
    if !(mass > 0.0) {
        return Err(Error::input("mass must be positive"));
    }
    let neighbors = lattice
        .torus_neighbors()
        .ok_or_else(|| Error::input("Laplacian covariance needs a torus lattice"))?;
    let n = lattice.len();
    let mut inv = DMatrix::<f64>::zeros(n, n);
    for (x, nb) in neighbors.iter().enumerate() {
        inv[(x, x)] += mass + nb.len() as f64;
        for &y in nb {
            inv[(x, y)] -= 1.0;
        }
    }
    let c = inv
        .try_inverse()
        .ok_or_else(|| Error::model("Laplacian operator is singular"))?;
    let c = (&c + c.transpose()) * 0.5;
    let big = c.kronecker(&DMatrix::<f64>::identity(lattice.components(), lattice.components()));
    // Axial decay rate of the massive lattice propagator.
    let decay = (1.0 + 0.5 * mass).acosh();
    Ok(Covariance::from_real(big, n, lattice.components())?.with_decay_mass(decay))
}

/// Output of the many-boson preset.
#[derive(Debug, Clone)]
pub struct ManyBoson {
    /// Two-component real-field covariance on the space-time torus.
    pub covariance: Covariance,
    /// Space-time lattice, sites numbered `tau * space_side + x`.
    pub lattice: Lattice,
    /// Smallest real part in the spectrum of the complex-field kernel `C^-1`.
    pub inverse_min_re: f64,
    /// Value `1 - exp(theta * mu_chem)` attained by the zero mode.
    pub spectral_floor: f64,
}

/// Space-time propagator of the discretized Bose gas, recast as a symmetric
/// complex covariance for two real components.
///
/// `h_hat` is the dispersion on the spatial ring `Z/space_side`; time has
/// `beta / theta` slices with periodic boundary conditions.
pub fn build_many_boson_covariance(
    theta: f64,
    mu_chem: f64,
    h_hat: &dyn Fn(f64) -> f64,
    space_side: usize,
    beta: f64,
) -> Result<ManyBoson> {
    if !(theta > 0.0) || !(mu_chem < 0.0) || space_side == 0 {
        return Err(Error::input("many-boson preset needs theta > 0, mu < 0 and a nonempty space"));
    }
    let slices_f = beta / theta;
    let slices = slices_f.round() as usize;
    if slices == 0 || (slices_f - slices as f64).abs() > 1e-9 {
        return Err(Error::input("beta must be a positive multiple of theta"));
    }
    let l = space_side;
    // Transfer kernel j(theta) = exp(-theta (h - mu)) via the spatial Fourier modes.
    let mut transfer = DMatrix::<f64>::zeros(l, l);
    for x in 0..l {
        for y in 0..l {
            let mut acc = 0.0;
            for q in 0..l {
                let k = 2.0 * PI * q as f64 / l as f64;
                acc += (k * (x as f64 - y as f64)).cos() * (-theta * (h_hat(k) - mu_chem)).exp();
            }
            transfer[(x, y)] = acc / l as f64;
        }
    }
    let n = slices * l;
    let mut kernel = DMatrix::<f64>::identity(n, n);
    for t in 0..slices {
        let next = (t + 1) % slices;
        for x in 0..l {
            for y in 0..l {
                kernel[(t * l + x, next * l + y)] -= transfer[(x, y)];
            }
        }
    }
    let kernel_c = kernel.map(|v| Complex64::new(v, 0.0));
    let inverse_min_re = eigenvalues(&kernel_c)?
        .iter()
        .map(|z| z.re)
        .fold(f64::INFINITY, f64::min);
    let spectral_floor = 1.0 - (theta * mu_chem).exp();
    if inverse_min_re < spectral_floor - 1e-8 {
        return Err(Error::model(format!(
            "many-boson kernel spectrum reaches Re = {inverse_min_re:.6e} below {spectral_floor:.6e}"
        )));
    }
    let prop = kernel
        .try_inverse()
        .ok_or_else(|| Error::model("many-boson kernel is singular"))?;
    let sym = &prop + prop.transpose();
    let anti = &prop - prop.transpose();
    let i = Complex64::new(0.0, 1.0);
    let real_field = CMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let (p, a) = (r / 2, r % 2);
        let (q, b) = (c / 2, c % 2);
        match (a, b) {
            (0, 0) | (1, 1) => Complex64::new(sym[(p, q)], 0.0),
            (0, 1) => i * anti[(p, q)],
            _ => -i * anti[(p, q)],
        }
    });
    let covariance = Covariance::new(real_field, n, 2)?;
    let lattice = space_time_lattice(slices, l)?;
    Ok(ManyBoson {
        covariance,
        lattice,
        inverse_min_re,
        spectral_floor,
    })
}

fn space_time_lattice(slices: usize, side: usize) -> Result<Lattice> {
    if slices == side {
        return Lattice::torus2d(side, 2);
    }
    let ring = |a: usize, b: usize, m: usize| {
        let d = a.abs_diff(b);
        d.min(m - d) as f64
    };
    let n = slices * side;
    let table: Vec<Vec<f64>> = (0..n)
        .map(|u| {
            (0..n)
                .map(|v| ring(u / side, v / side, slices) + ring(u % side, v % side, side))
                .collect()
        })
        .collect();
    Lattice::from_metric(&table, 2)
}

/// `C = U D U^T` with `U` real orthogonal and `D` diagonal with entries in
/// `re ∈ [re_lo, re_hi]`, `|im| ≤ im_max`. Such a matrix is complex
/// symmetric and normal.
pub fn random_normal_covariance(
    rng: &mut impl Rng,
    n_sites: usize,
    components: usize,
    re_range: (f64, f64),
    im_max: f64,
) -> Result<Covariance> {
    let k = n_sites * components;
    let g = DMatrix::<f64>::from_fn(k, k, |_, _| rng.sample(StandardNormal));
    let u = g.qr().q();
    let d: Vec<Complex64> = (0..k)
        .map(|_| {
            Complex64::new(
                rng.gen_range(re_range.0..=re_range.1),
                rng.gen_range(-im_max..=im_max),
            )
        })
        .collect();
    let uc = u.map(|v| Complex64::new(v, 0.0));
    let dm = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(d));
    let c = &uc * dm * uc.transpose();
    let c = (&c + c.transpose()) * Complex64::new(0.5, 0.0);
    Covariance::new(c, n_sites, components)
}

pub(crate) fn invert(c: &CMatrix) -> Result<CMatrix> {
    c.clone()
        .try_inverse()
        .ok_or_else(|| Error::model("covariance is singular"))
}

pub(crate) fn real_part(c: &CMatrix) -> DMatrix<f64> {
    let m = c.map(|z| z.re);
    (&m + m.transpose()) * 0.5
}

fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = SymmetricEigen::new(m.clone()).eigenvalues;
    (ev.min(), ev.max())
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigen_range(m).0
}

/// Eigenvalues of a complex matrix via the complex Schur form.
pub fn eigenvalues(c: &CMatrix) -> Result<Vec<Complex64>> {
    let schur = c.clone().schur();
    schur
        .eigenvalues()
        .map(|v| v.iter().copied().collect())
        .ok_or_else(|| Error::numeric("Schur decomposition failed to converge", f64::NAN))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::{bkar_interpolate, Forest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_and_identity() {
        let c = Covariance::from_real(DMatrix::from_diagonal(&nalgebra::dvector![1.0, 2.0, 4.0]), 3, 1).unwrap();
        assert!((c.mu() - 0.25).abs() < 1e-12);
        assert!((c.a_min() - 1.0).abs() < 1e-12);
        let id = Covariance::from_real(DMatrix::identity(2, 2), 2, 1).unwrap();
        assert!((id.mu() - 1.0).abs() < 1e-12 && (id.a_min() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_symmetric() {
        let m = CMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0].map(|v| Complex64::new(v, 0.0)));
        assert!(matches!(validate_matrix(&m), Err(Error::Model(_))));
    }

    #[test]
    fn normalizer_of_identity_and_blocks() {
        let id = CMatrix::identity(3, 3);
        let v = gaussian_normalizer(&id).unwrap();
        assert!((v.re - (2.0 * PI).powf(-1.5)).abs() < 1e-14 && v.im.abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_normal_covariance(&mut rng, 2, 1, (0.5, 2.0), 0.5).unwrap();
        let b = random_normal_covariance(&mut rng, 1, 1, (0.5, 2.0), 0.5).unwrap();
        let mut big = CMatrix::zeros(3, 3);
        big.view_mut((0, 0), (2, 2)).copy_from(a.matrix());
        big.view_mut((2, 2), (1, 1)).copy_from(b.matrix());
        let lhs = gaussian_normalizer(&big).unwrap();
        let rhs = gaussian_normalizer(a.matrix()).unwrap() * gaussian_normalizer(b.matrix()).unwrap();
        assert!((lhs - rhs).norm() < 1e-12 * rhs.norm());
    }

    #[test]
    fn normalizer_matches_quadrature_for_complex_2x2() {
        // eigenvalues 1 ± i, with a rotated eigenbasis
        let (c, s) = (0.6f64, 0.8f64);
        let u = CMatrix::from_row_slice(2, 2, &[c, -s, s, c].map(|v| Complex64::new(v, 0.0)));
        let d = CMatrix::from_diagonal(&nalgebra::dvector![Complex64::new(1.0, 1.0), Complex64::new(1.0, -1.0)]);
        let cov = &u * d * u.transpose();
        let inv = invert(&cov).unwrap();
        let rule = crate::quadrature::Rule1d::composite(-12.0, 12.0, 24, 12);
        let mut total = Complex64::new(0.0, 0.0);
        for (x, wx) in rule.nodes.iter().zip(&rule.weights) {
            for (y, wy) in rule.nodes.iter().zip(&rule.weights) {
                let q = inv[(0, 0)] * x * x + inv[(1, 1)] * y * y + inv[(0, 1)] * 2.0 * x * y;
                total += (-0.5 * q).exp() * (wx * wy);
            }
        }
        let norm = gaussian_normalizer(&cov).unwrap();
        assert!((total * norm - Complex64::new(1.0, 0.0)).norm() < 1e-10, "{}", total * norm);
    }

    #[test]
    fn laplacian_ring_spectrum() {
        let lat = Lattice::torus1d(3, 1).unwrap();
        let c = build_laplacian_covariance(&lat, 1.0).unwrap();
        let inv = invert(c.matrix()).unwrap();
        let mut ev: Vec<f64> = SymmetricEigen::new(real_part(&inv)).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip([1.0, 4.0, 4.0]) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((c.mu() - 1.0).abs() < 1e-10);
        let single = build_laplacian_covariance(&Lattice::torus1d(1, 1).unwrap(), 2.0).unwrap();
        assert!((single.matrix()[(0, 0)].re - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_site_envelope_closed_form() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let c = Covariance::from_real(m, 2, 1).unwrap();
        let f = Forest::new(2, [(0, 1)]).unwrap();
        let p = bkar_interpolate(&f, &[0.5]);
        let rep = spectral_envelope_check(&c, &p, 1e-10).unwrap();
        // C_s = [[2, .5], [.5, 2]] has eigenvalues 1.5 and 2.5
        assert!((rep.direct_range.0 - 1.5).abs() < 1e-12 && (rep.direct_range.1 - 2.5).abs() < 1e-12);
        assert!(rep.contained);
    }

    #[test]
    fn envelope_on_random_forests() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = random_normal_covariance(&mut rng, 4, 1, (0.3, 2.0), 1.0).unwrap();
        for t in crate::combinatorics::enumerate_trees(4, 7).unwrap() {
            let vals: Vec<f64> = (0..t.len()).map(|_| rng.gen::<f64>()).collect();
            let rep = spectral_envelope_check(&c, &bkar_interpolate(&t, &vals), 1e-10).unwrap();
            assert!(rep.contained, "{rep:?}");
        }
        let rep = spectral_envelope_check(&c, &InterpolationPoint::ones(4), 1e-10).unwrap();
        assert!(rep.margin.abs() < 1e-9);
    }

    #[test]
    fn many_boson_spectrum_floor() {
        let h = |k: f64| 2.0 * (1.0 - k.cos());
        let mb = build_many_boson_covariance(1.0, -0.5, &h, 3, 3.0).unwrap();
        assert!((mb.inverse_min_re - (1.0 - (-0.5f64).exp())).abs() < 1e-8);
        assert_eq!(mb.lattice.len(), 9);
        mb.covariance.validate().unwrap();
        // strongly negative chemical potential: the kernel tends to the identity
        let far = build_many_boson_covariance(1.0, -40.0, &h, 3, 3.0).unwrap();
        assert!((far.inverse_min_re - 1.0).abs() < 1e-12);
    }
}
