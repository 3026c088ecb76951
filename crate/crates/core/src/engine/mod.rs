//! Polymer activities from the forest formula, their Mayer expansion in the
//! plain and small-field/large-field modes, and truncated correlations.

pub mod gas;
mod integrator;

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use num_complex::Complex64;
use serde::{Deserialize, Serialize, Serializer};

use crate::combinatorics::{bkar_interpolate, enumerate_trees, pair_derivative, InterpolationPoint, DEFAULT_TREE_CAP};
use crate::correlation::{fd_correlations, CorrelationResult};
use crate::covariance::Covariance;
use crate::error::{Error, Result};
use crate::interaction::{Interaction, Point};
use crate::lattice::{Lattice, Site, SiteSet};
use crate::quadrature::{integrate_unit_cube, CVec, CubatureConfig, FdConfig, Scalar};

pub use gas::{gas_log, gas_log_ursell, large_field_log, GasLog, LargeFieldLog};
pub use integrator::{PhiQuadrature, Region, SiteSplit};
use integrator::PolymerIntegrator;

const CZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Largest polymer handled by the forest formula.
pub const MAX_POLYMER_SIZE: usize = 6;

/// The per-site field cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Radius {
    /// `|phi(x)| <= R` at every site.
    Finite(f64),
    /// No cutoff. Integration runs over a ball of radius
    /// `max(8 / sqrt(mu), r_min)` and the Gaussian tail is reported.
    Unbounded { r_min: f64 },
}

/// Lattice, covariance, interaction and cutoff.
#[derive(Debug, Clone)]
pub struct Model {
    pub lattice: Lattice,
    pub covariance: Covariance,
    pub interaction: Interaction,
    pub radius: Radius,
}

impl Model {
    pub fn new(lattice: Lattice, covariance: Covariance, interaction: Interaction, radius: Radius) -> Result<Self> {
        if covariance.n_sites() != lattice.len() || covariance.components() != lattice.components() {
            return Err(Error::input("covariance shape differs from the lattice"));
        }
        if interaction.n_sites() != lattice.len() || interaction.components() != lattice.components() {
            return Err(Error::input("interaction shape differs from the lattice"));
        }
        match radius {
            Radius::Finite(r) if !(r > 0.0) => return Err(Error::input("cutoff radius must be positive")),
            Radius::Unbounded { r_min } if !(r_min >= 0.0) => return Err(Error::input("r_min must be nonnegative")),
            _ => {}
        }
        Ok(Model {
            lattice,
            covariance,
            interaction,
            radius,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.lattice.len()
    }

    pub fn components(&self) -> usize {
        self.lattice.components()
    }

    /// Half-width of the integration ball when there is no cutoff.
    pub fn unbounded_half_width(&self) -> f64 {
        match self.radius {
            Radius::Finite(r) => r,
            Radius::Unbounded { r_min } => (8.0 / self.covariance.mu().sqrt()).max(r_min),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionMode {
    Plain,
    LargeField,
}

/// How the tree-edge derivatives of a polymer integral are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Central differences in the pair weights.
    Fd,
    /// Gaussian integration by parts with boundary shells.
    Ibp,
    /// Both, with a consistency check.
    Both,
}

/// How the Mayer series is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MayerRoute {
    /// Logarithm of the gas generating polynomial.
    Generating,
    /// Literal sum over polymer sequences with Ursell weights.
    Ursell,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionConfig {
    pub max_polymer_size: usize,
    /// Highest number of polymers in a Mayer cluster.
    pub max_mayer_order: usize,
    pub mode: ExpansionMode,
    /// Small-field radius `r` (large-field mode only).
    pub small_radius: Option<f64>,
    pub backend: Backend,
    pub route: MayerRoute,
    /// Cubature over the tree-edge weights.
    pub cubature: CubatureConfig,
    /// Finite differences in the pair weights.
    pub fd: FdConfig,
    pub phi: PhiQuadrature,
    /// Absolute tolerance for the backend comparison.
    pub consistency_tol: f64,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            max_polymer_size: 3,
            max_mayer_order: 6,
            mode: ExpansionMode::Plain,
            small_radius: None,
            backend: Backend::Fd,
            route: MayerRoute::Generating,
            cubature: CubatureConfig {
                order: 4,
                rel_tol: 1e-7,
                abs_tol: 1e-12,
                max_doublings: 1,
            },
            fd: FdConfig {
                step: 1e-3,
                richardson_levels: 0,
                max_halvings: 6,
            },
            phi: PhiQuadrature::default(),
            consistency_tol: 1e-6,
        }
    }
}

impl ExpansionConfig {
    pub fn validate(&self, model: &Model) -> Result<()> {
        if self.max_polymer_size == 0 || self.max_polymer_size > MAX_POLYMER_SIZE {
            return Err(Error::resource("max_polymer_size", self.max_polymer_size, MAX_POLYMER_SIZE));
        }
        if self.max_mayer_order == 0 {
            return Err(Error::input("max_mayer_order must be at least 1"));
        }
        if self.mode == ExpansionMode::LargeField {
            let big = match model.radius {
                Radius::Finite(r) => r,
                Radius::Unbounded { .. } => {
                    return Err(Error::input("large-field mode needs a finite cutoff R"))
                }
            };
            match self.small_radius {
                Some(r) if r > 0.0 && r <= big => {}
                _ => return Err(Error::input("large-field mode needs 0 < r <= R")),
            }
        }
        Ok(())
    }

    fn split(&self, model: &Model) -> SiteSplit {
        match (self.mode, model.radius) {
            (ExpansionMode::LargeField, Radius::Finite(big_r)) => SiteSplit::SmallLarge {
                r: self.small_radius.unwrap_or(big_r),
                big_r,
            },
            (_, Radius::Finite(r)) => SiteSplit::Single(r),
            (_, Radius::Unbounded { .. }) => SiteSplit::Unbounded(model.unbounded_half_width()),
        }
    }
}

fn complex_map<S: Serializer>(map: &BTreeMap<SiteSet, Complex64>, ser: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut m = ser.serialize_map(Some(map.len()))?;
    for (k, v) in map {
        m.serialize_entry(&k.to_string(), &[v.re, v.im])?;
    }
    m.end()
}

fn pair_map<S: Serializer>(
    map: &BTreeMap<(SiteSet, SiteSet), Complex64>,
    ser: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut m = ser.serialize_map(Some(map.len()))?;
    for ((x, q), v) in map {
        m.serialize_entry(&format!("{x}|{q}"), &[v.re, v.im])?;
    }
    m.end()
}

/// Large-field parts of a polymer table.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct LargeFieldEntries {
    /// `B(X, Q)` for nonempty `Q` inside `X`, keyed `(X, Q)`.
    #[serde(serialize_with = "pair_map")]
    pub split: BTreeMap<(SiteSet, SiteSet), Complex64>,
    /// `A_s(X)`: activities with every site in the small-field ball.
    #[serde(serialize_with = "complex_map")]
    pub small: BTreeMap<SiteSet, Complex64>,
}

/// Activities of every polymer at one source vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolymerTable {
    pub n_sites: usize,
    pub source: Vec<f64>,
    #[serde(serialize_with = "complex_map")]
    pub entries: BTreeMap<SiteSet, Complex64>,
    pub large_field: Option<LargeFieldEntries>,
    /// Sum of the cubature residuals of the tree integrals.
    pub residual: f64,
    /// Largest gap between the two derivative backends (when both ran).
    pub backend_gap: Option<f64>,
    pub closed_form: bool,
    pub tail_estimate: f64,
}

impl PolymerTable {
    pub fn single_site(&self, x: Site) -> Option<Complex64> {
        self.entries.get(&SiteSet::singleton(x)).copied()
    }

    fn as_list(&self) -> Vec<(SiteSet, Complex64)> {
        self.entries.iter().map(|(&k, &v)| (k, v)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Truncation {
    pub max_polymer_size: usize,
    pub max_mayer_order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Magnitude of the last included Mayer order.
    pub last_term: f64,
    /// Magnitudes of every Mayer order.
    pub order_magnitudes: Vec<f64>,
    /// `log` of the full gas sum over the included polymers (all orders).
    #[serde(serialize_with = "ser_c")]
    pub gas_exact: Complex64,
    pub winding_ok: bool,
    pub quadrature_residual: f64,
    pub backend_gap: Option<f64>,
    /// The Gaussian generating function was used in closed form.
    pub closed_form: bool,
    pub tail_estimate: f64,
    /// `log Z_s`, the small-field partition function (large-field mode).
    #[serde(serialize_with = "ser_opt_c")]
    pub log_z_small: Option<Complex64>,
}

fn ser_c<S: Serializer>(v: &Complex64, ser: S) -> std::result::Result<S::Ok, S::Error> {
    [v.re, v.im].serialize(ser)
}

fn ser_opt_c<S: Serializer>(v: &Option<Complex64>, ser: S) -> std::result::Result<S::Ok, S::Error> {
    v.map(|v| [v.re, v.im]).serialize(ser)
}

fn ser_vec_c<S: Serializer>(v: &[Complex64], ser: S) -> std::result::Result<S::Ok, S::Error> {
    v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>().serialize(ser)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionResult {
    #[serde(rename = "logZ", serialize_with = "ser_c")]
    pub log_z: Complex64,
    /// `partial_sums[k - 1]` includes Mayer orders `1..=k`.
    #[serde(serialize_with = "ser_vec_c")]
    pub partial_sums: Vec<Complex64>,
    /// Cluster contributions by support; they add up to `log_z`.
    #[serde(rename = "W", serialize_with = "complex_map")]
    pub clusters: BTreeMap<SiteSet, Complex64>,
    pub mode: ExpansionMode,
    pub truncation: Truncation,
    pub diagnostics: Diagnostics,
}

fn finish(
    base: Complex64,
    gas: &GasLog,
    mut clusters: BTreeMap<SiteSet, Complex64>,
    mode: ExpansionMode,
    truncation: Truncation,
    table: &PolymerTable,
    log_z_small: Option<Complex64>,
) -> Result<ExpansionResult> {
    let partial_sums: Vec<Complex64> = gas.partial_sums().into_iter().map(|p| base + p).collect();
    let log_z = *partial_sums.last().expect("at least one order");
    if !log_z.is_finite() {
        return Err(Error::numeric("Mayer partial sum is not finite", f64::NAN));
    }
    for (k, v) in &gas.clusters {
        *clusters.entry(*k).or_insert(CZERO) += v;
    }
    let order_magnitudes: Vec<f64> = gas.order_terms.iter().map(|t| t.norm()).collect();
    Ok(ExpansionResult {
        log_z,
        partial_sums,
        clusters,
        mode,
        truncation,
        diagnostics: Diagnostics {
            last_term: *order_magnitudes.last().expect("at least one order"),
            order_magnitudes,
            gas_exact: base + gas.exact,
            winding_ok: gas.winding_ok,
            quadrature_residual: table.residual,
            backend_gap: table.backend_gap,
            closed_form: table.closed_form,
            tail_estimate: table.tail_estimate,
            log_z_small,
        },
    })
}

/// Mayer series of a plain polymer table: `sum_x log A({x}) + sum_X W(X)`
/// with normalized activities `A(X) / prod_x A({x})`.
pub fn mayer_log_z(table: &PolymerTable, truncation: Truncation, route: MayerRoute) -> Result<ExpansionResult> {
    let n = table.n_sites;
    let (singles, normalized) = gas::normalize(n, &table.as_list())?;
    let gas = match route {
        MayerRoute::Generating => gas_log(n, &normalized, truncation.max_mayer_order)?,
        MayerRoute::Ursell => gas_log_ursell(
            n,
            &normalized,
            truncation.max_mayer_order,
            crate::combinatorics::DEFAULT_URSELL_CAP,
        )?,
    };
    let mut clusters = BTreeMap::new();
    let mut base = CZERO;
    for (x, a) in singles.iter().enumerate() {
        let l = a.ln();
        base += l;
        clusters.insert(SiteSet::singleton(x), l);
    }
    finish(base, &gas, clusters, ExpansionMode::Plain, truncation, table, None)
}

/// The small-field / large-field resummed series of a binned table.
pub fn mayer_log_z_large_field(table: &PolymerTable, truncation: Truncation) -> Result<ExpansionResult> {
    let lf = table
        .large_field
        .as_ref()
        .ok_or_else(|| Error::input("table has no large-field entries"))?;
    let small: Vec<(SiteSet, Complex64)> = lf.small.iter().map(|(&k, &v)| (k, v)).collect();
    let mut bar: BTreeMap<SiteSet, Complex64> = BTreeMap::new();
    for (&(x, _), &v) in &lf.split {
        *bar.entry(x).or_insert(CZERO) += v;
    }
    let large: Vec<(SiteSet, Complex64)> = bar.into_iter().filter(|(_, v)| *v != CZERO).collect();
    let out = large_field_log(table.n_sites, &small, &large, truncation.max_mayer_order)?;
    finish(
        out.log_z_small,
        &out.dressed_gas,
        out.small_field.clone(),
        ExpansionMode::LargeField,
        truncation,
        table,
        Some(out.log_z_small),
    )
}

/// Activities of one polymer for a batch of sources: `values[j][bin]`.
struct PolymerOutcome {
    values: Vec<Vec<Complex64>>,
    residual: f64,
    backend_gap: Option<f64>,
    closed_form: bool,
    tail_estimate: f64,
}

type CacheKey = (u64, Vec<u64>);

/// Computes polymer tables and expansions for one model and configuration,
/// caching activities by polymer and restricted source.
pub struct Engine<'m> {
    model: &'m Model,
    cfg: ExpansionConfig,
    cache: Mutex<HashMap<CacheKey, (Vec<Complex64>, f64)>>,
}

impl<'m> Engine<'m> {
    pub fn new(model: &'m Model, cfg: ExpansionConfig) -> Result<Self> {
        cfg.validate(model)?;
        Ok(Engine {
            model,
            cfg,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &ExpansionConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    fn truncation(&self) -> Truncation {
        Truncation {
            max_polymer_size: self.cfg.max_polymer_size,
            max_mayer_order: self.cfg.max_mayer_order,
        }
    }

    fn local_source(&self, sites: &[Site], j: &[f64]) -> Vec<f64> {
        let n = self.model.components();
        sites.iter().flat_map(|&x| j[x * n..(x + 1) * n].iter().copied()).collect()
    }

    fn integrator(&self, sites: &[Site], sources: Vec<Vec<f64>>) -> Result<PolymerIntegrator<'m>> {
        PolymerIntegrator::new(
            sites,
            &self.model.covariance,
            self.model.interaction.localize(sites),
            self.cfg.split(self.model),
            sources,
            &self.cfg.phi,
        )
    }

    /// `int dmu_{C_s} chi exp(V)` over the polymer `sites` for every bin.
    pub fn polymer_z_bins(&self, sites: &[Site], s: &InterpolationPoint, j: &[f64]) -> Result<Vec<Complex64>> {
        self.check_source(j)?;
        if s.n_sites() != sites.len() {
            return Err(Error::input("interpolation point does not match the polymer"));
        }
        let integ = self.integrator(sites, vec![self.local_source(sites, j)])?;
        Ok(integ.evaluate(s)?.0)
    }

    fn check_source(&self, j: &[f64]) -> Result<()> {
        if j.len() != self.model.n_sites() * self.model.components() {
            return Err(Error::input("source vector has the wrong length"));
        }
        if j.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("source vector is not finite"));
        }
        Ok(())
    }

    fn compute(&self, sites: &[Site], sources: Vec<Vec<f64>>) -> Result<PolymerOutcome> {
        let nj = sources.len();
        let integ = self.integrator(sites, sources)?;
        let nb = integ.n_bins();
        let k = sites.len();
        let reshape = |v: CVec| -> Vec<Vec<Complex64>> {
            let flat = if v.0.is_empty() { vec![CZERO; nb * nj] } else { v.0 };
            (0..nj).map(|j| (0..nb).map(|b| flat[b * nj + j]).collect()).collect()
        };
        if k == 1 {
            let v = integ.evaluate(&InterpolationPoint::ones(1))?;
            return Ok(PolymerOutcome {
                values: reshape(v),
                residual: 0.0,
                backend_gap: None,
                closed_form: integ.is_closed_form(),
                tail_estimate: integ.tail_estimate,
            });
        }
        let run = |backend: Backend| -> Result<(CVec, f64)> {
            let mut total = CVec::default();
            let mut residual = 0.0;
            for tree in enumerate_trees(k, DEFAULT_TREE_CAP)? {
                let pairs = tree.edges().to_vec();
                let out = integrate_unit_cube(pairs.len(), &self.cfg.cubature, |t| {
                    let point = bkar_interpolate(&tree, t);
                    match backend {
                        Backend::Ibp => integ.derivative_ibp(&point, &pairs),
                        _ => pair_derivative(&|p: &InterpolationPoint| integ.evaluate(p), &point, &pairs, &self.cfg.fd),
                    }
                })?;
                total = total + out.value;
                residual += out.residual;
            }
            Ok((total, residual))
        };
        let (value, residual, gap) = match self.cfg.backend {
            _ if integ.is_closed_form() => {
                let (v, r) = run(Backend::Ibp)?;
                (v, r, None)
            }
            Backend::Fd => {
                let (v, r) = run(Backend::Fd)?;
                (v, r, None)
            }
            Backend::Ibp => {
                let (v, r) = run(Backend::Ibp)?;
                (v, r, None)
            }
            Backend::Both => {
                let (a, ra) = run(Backend::Fd)?;
                let (b, rb) = run(Backend::Ibp)?;
                let gap = (a.clone() - b).magnitude();
                let scale = a.magnitude().max(1.0);
                let tol = self.cfg.consistency_tol.max(ra + rb) * scale;
                if gap > 10.0 * tol {
                    return Err(Error::Consistency(format!(
                        "derivative backends disagree on polymer {:?}: gap {gap:.3e}, tolerance {tol:.3e}",
                        sites
                    )));
                }
                (a, ra.max(rb), Some(gap))
            }
        };
        Ok(PolymerOutcome {
            values: reshape(value),
            residual,
            backend_gap: gap,
            closed_form: integ.is_closed_form(),
            tail_estimate: integ.tail_estimate,
        })
    }

    /// Per-source activity bins of the polymer, using and filling the cache.
    fn activity_bins(&self, x: SiteSet, sources: &[Vec<f64>]) -> Result<(Vec<Vec<Complex64>>, PolymerOutcome)> {
        let sites = x.to_vec();
        let locals: Vec<Vec<f64>> = sources.iter().map(|j| self.local_source(&sites, j)).collect();
        let keys: Vec<CacheKey> = locals
            .iter()
            .map(|l| (x.0, l.iter().map(|v| v.to_bits()).collect()))
            .collect();
        let mut missing: Vec<Vec<f64>> = Vec::new();
        let mut missing_keys: Vec<CacheKey> = Vec::new();
        {
            let cache = self.cache.lock().expect("cache lock");
            for (key, l) in keys.iter().zip(&locals) {
                if !cache.contains_key(key) && !missing_keys.contains(key) {
                    missing.push(l.clone());
                    missing_keys.push(key.clone());
                }
            }
        }
        let mut info = PolymerOutcome {
            values: Vec::new(),
            residual: 0.0,
            backend_gap: None,
            closed_form: false,
            tail_estimate: 0.0,
        };
        if !missing.is_empty() {
            let out = self.compute(&sites, missing)?;
            let mut cache = self.cache.lock().expect("cache lock");
            for (key, v) in missing_keys.into_iter().zip(&out.values) {
                cache.insert(key, (v.clone(), out.residual));
            }
            info = PolymerOutcome { values: Vec::new(), ..out };
        }
        let cache = self.cache.lock().expect("cache lock");
        let mut values = Vec::with_capacity(keys.len());
        for key in &keys {
            let (v, r) = cache.get(key).expect("filled above");
            info.residual = info.residual.max(*r);
            values.push(v.clone());
        }
        Ok((values, info))
    }

    /// All polymers of size at most the cap.
    pub fn polymers(&self) -> Vec<SiteSet> {
        let all = self.model.lattice.all_sites();
        all.nonempty_subsets()
            .filter(|p| p.len() <= self.cfg.max_polymer_size)
            .collect()
    }

    /// Polymer tables for a batch of source vectors.
    pub fn polymer_tables(&self, sources: &[Vec<f64>]) -> Result<Vec<PolymerTable>> {
        for j in sources {
            self.check_source(j)?;
        }
        let polymers = self.polymers();
        let work = |x: &SiteSet| self.activity_bins(*x, sources).map(|r| (*x, r));
        #[cfg(feature = "parallel")]
        let results: Vec<_> = {
            use rayon::prelude::*;
            polymers.par_iter().map(work).collect::<Result<_>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let results: Vec<_> = polymers.iter().map(work).collect::<Result<_>>()?;
        let n = self.model.n_sites();
        let mut tables: Vec<PolymerTable> = sources
            .iter()
            .map(|j| PolymerTable {
                n_sites: n,
                source: j.clone(),
                entries: BTreeMap::new(),
                large_field: (self.cfg.mode == ExpansionMode::LargeField).then(LargeFieldEntries::default),
                residual: 0.0,
                backend_gap: None,
                closed_form: false,
                tail_estimate: 0.0,
            })
            .collect();
        for (x, (values, info)) in results {
            let sites = x.to_vec();
            for (t, bins) in tables.iter_mut().zip(values) {
                t.entries.insert(x, bins.iter().sum());
                t.residual += info.residual;
                t.closed_form |= info.closed_form;
                t.tail_estimate = t.tail_estimate.max(info.tail_estimate);
                if let Some(g) = info.backend_gap {
                    t.backend_gap = Some(t.backend_gap.unwrap_or(0.0).max(g));
                }
                if let Some(lf) = t.large_field.as_mut() {
                    lf.small.insert(x, bins[0]);
                    for (mask, &v) in bins.iter().enumerate().skip(1) {
                        let q = SiteSet::from_sites(sites.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, &s)| s));
                        lf.split.insert((x, q), v);
                    }
                }
            }
        }
        Ok(tables)
    }

    pub fn polymer_table(&self, j: &[f64]) -> Result<PolymerTable> {
        Ok(self.polymer_tables(&[j.to_vec()])?.remove(0))
    }

    pub fn expand_table(&self, table: &PolymerTable) -> Result<ExpansionResult> {
        match self.cfg.mode {
            ExpansionMode::Plain => mayer_log_z(table, self.truncation(), self.cfg.route),
            ExpansionMode::LargeField => mayer_log_z_large_field(table, self.truncation()),
        }
    }

    pub fn log_z(&self, j: &[f64]) -> Result<ExpansionResult> {
        self.expand_table(&self.polymer_table(j)?)
    }

    pub fn log_z_batch(&self, sources: &[Vec<f64>]) -> Result<Vec<ExpansionResult>> {
        self.polymer_tables(sources)?.iter().map(|t| self.expand_table(t)).collect()
    }

    /// Truncated correlations at `J = 0` for several point lists, from one
    /// batch of expansions.
    pub fn truncated_correlations(&self, sets: &[Vec<Point>], fd: &FdConfig) -> Result<Vec<CorrelationResult>> {
        fd_correlations(self.model.components(), self.model.n_sites(), sets, fd, |batch| {
            Ok(self.log_z_batch(batch)?.into_iter().map(|r| r.log_z).collect())
        })
    }

    pub fn truncated_correlation(&self, points: &[Point], fd: &FdConfig) -> Result<CorrelationResult> {
        Ok(self.truncated_correlations(&[points.to_vec()], fd)?.remove(0))
    }
}

/// `int dmu_{C_s}(phi|_X) chi_R(phi) exp(V(phi; s; J))` for the polymer
/// `sites` (the point `s` is indexed by position in `sites`).
pub fn polymer_z(model: &Model, sites: &[Site], s: &InterpolationPoint, j: &[f64], phi: &PhiQuadrature) -> Result<Complex64> {
    let cfg = ExpansionConfig {
        phi: *phi,
        ..ExpansionConfig::default()
    };
    Ok(Engine::new(model, cfg)?.polymer_z_bins(sites, s, j)?[0])
}

/// The activity `A(X; J)` of one polymer.
pub fn activity(model: &Model, x: SiteSet, j: &[f64], cfg: &ExpansionConfig) -> Result<Complex64> {
    let cfg = ExpansionConfig {
        mode: ExpansionMode::Plain,
        ..*cfg
    };
    let engine = Engine::new(model, cfg)?;
    engine.check_source(j)?;
    let (values, _) = engine.activity_bins(x, &[j.to_vec()])?;
    Ok(values[0][0])
}

/// `B(X, Q; J)` for every `Q` inside `X` (with `B(X, {}) = A_s(X)`).
pub fn large_field_activities(model: &Model, x: SiteSet, j: &[f64], cfg: &ExpansionConfig) -> Result<Vec<(SiteSet, Complex64)>> {
    let cfg = ExpansionConfig {
        mode: ExpansionMode::LargeField,
        ..*cfg
    };
    let engine = Engine::new(model, cfg)?;
    engine.check_source(j)?;
    let sites = x.to_vec();
    let (values, _) = engine.activity_bins(x, &[j.to_vec()])?;
    Ok(values[0]
        .iter()
        .enumerate()
        .map(|(mask, &v)| {
            let q = SiteSet::from_sites(sites.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, &s)| s));
            (q, v)
        })
        .collect())
}
