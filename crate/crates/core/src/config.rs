//! JSON run configuration: model, expansion, oracle and output settings,
//! with dotted-path overrides applied before parsing.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::covariance::{build_laplacian_covariance, build_many_boson_covariance, random_normal_covariance, Covariance};
use crate::engine::{Backend, ExpansionConfig, ExpansionMode, MayerRoute, Model, PhiQuadrature, Radius};
use crate::error::{Error, Result};
use crate::interaction::{Interaction, KernelTerm, Point, PowerSeriesKernel, TwoBodyPotential};
use crate::lattice::Lattice;
use crate::norms::HypothesisParams;
use crate::oracle::OracleConfig;
use crate::quadrature::{CubatureConfig, FdConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatticeSpec {
    Torus1d {
        side: usize,
        #[serde(default = "one")]
        components: usize,
    },
    Torus2d {
        side: usize,
        #[serde(default = "one")]
        components: usize,
    },
    Explicit {
        metric: Vec<Vec<f64>>,
        #[serde(default = "one")]
        components: usize,
    },
}

fn one() -> usize {
    1
}

impl Default for LatticeSpec {
    fn default() -> Self {
        LatticeSpec::Torus1d { side: 3, components: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceSpec {
    /// `(-Laplacian + mass)^-1` on the torus preset.
    Laplacian { mass: f64 },
    /// Entries as `[re, im]`, indexed `(site, component)` site-major.
    Explicit { matrix: Vec<Vec<Complex64>> },
    /// Random complex symmetric normal matrix with the given spectrum box.
    RandomNormal {
        re_min: f64,
        re_max: f64,
        im_max: f64,
    },
    /// Space-time Bose-gas propagator; replaces the lattice with the
    /// space-time torus (`side` spatial sites, `beta / theta` slices).
    ManyBoson {
        theta: f64,
        mu_chem: f64,
        beta: f64,
        side: usize,
    },
}

impl Default for CovarianceSpec {
    fn default() -> Self {
        CovarianceSpec::Laplacian { mass: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TwoBodySpec {
    /// `-v2 sum |phi|^4 - a J.phi`.
    Quartic { v2: f64, a: f64 },
    /// The source term alone.
    Source { a: f64 },
    General {
        v_half: Vec<Vec<f64>>,
        a: f64,
        #[serde(default = "two")]
        degree: u32,
        #[serde(default)]
        c_v: Option<f64>,
    },
}

fn two() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InteractionSpec {
    pub kernel: Vec<KernelTerm>,
    pub two_body: Option<TwoBodySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionSpec {
    pub max_polymer_size: usize,
    pub max_mayer_order: usize,
    pub mode: ExpansionMode,
    pub small_radius: Option<f64>,
    pub backend: Backend,
    pub route: MayerRoute,
    pub cubature: CubatureConfig,
    pub fd: FdConfig,
    pub phi: PhiQuadrature,
    pub consistency_tol: f64,
    /// Cutoff `R`; `null` for none.
    pub big_r: Option<f64>,
    /// Smallest integration half-width without a cutoff.
    pub r_min: f64,
}

impl Default for ExpansionSpec {
    fn default() -> Self {
        ExpansionSpec::from_engine(&ExpansionConfig::default(), Some(5.0), 0.0)
    }
}

impl ExpansionSpec {
    pub fn from_engine(e: &ExpansionConfig, big_r: Option<f64>, r_min: f64) -> Self {
        ExpansionSpec {
            max_polymer_size: e.max_polymer_size,
            max_mayer_order: e.max_mayer_order,
            mode: e.mode,
            small_radius: e.small_radius,
            backend: e.backend,
            route: e.route,
            cubature: e.cubature,
            fd: e.fd,
            phi: e.phi,
            consistency_tol: e.consistency_tol,
            big_r,
            r_min,
        }
    }

    pub fn engine(&self) -> ExpansionConfig {
        ExpansionConfig {
            max_polymer_size: self.max_polymer_size,
            max_mayer_order: self.max_mayer_order,
            mode: self.mode,
            small_radius: self.small_radius,
            backend: self.backend,
            route: self.route,
            cubature: self.cubature,
            fd: self.fd,
            phi: self.phi,
            consistency_tol: self.consistency_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelationSpec {
    pub points: Vec<Vec<Point>>,
    pub fd: FdConfig,
}

impl Default for CorrelationSpec {
    fn default() -> Self {
        CorrelationSpec {
            points: Vec::new(),
            fd: crate::correlation::default_source_fd(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecaySpec {
    pub origin: usize,
    pub component: usize,
    /// Largest distance swept; defaults to the farthest site from the origin.
    pub max_distance: Option<f64>,
    pub noise_floor: f64,
}

impl Default for DecaySpec {
    fn default() -> Self {
        DecaySpec {
            origin: 0,
            component: 0,
            max_distance: None,
            noise_floor: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: String,
    pub json: bool,
    pub csv: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: "out".into(),
            json: true,
            csv: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeSpec,
    pub covariance: CovarianceSpec,
    pub interaction: InteractionSpec,
    pub expansion: ExpansionSpec,
    /// Source vector for `log Z(J)`; zeros when empty.
    pub source: Vec<f64>,
    pub correlations: CorrelationSpec,
    pub oracle: OracleConfig,
    pub decay: DecaySpec,
    pub hypotheses: HypothesisParams,
    pub output: OutputSpec,
    pub seed: u64,
    /// Worker threads; `null` for all available.
    pub workers: Option<usize>,
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

/// Sets `path` (dotted, array indices allowed) in `root` to `raw`, parsed as
/// JSON when possible and as a string otherwise.
pub fn apply_override(root: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(path, "empty path segment"));
    }
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if let Value::Array(items) = cur {
            let idx: usize = part.parse().map_err(|_| config_err(path, format!("`{part}` is not an index")))?;
            let len = items.len();
            let slot = items.get_mut(idx).ok_or_else(|| config_err(path, format!("index {idx} out of range ({len})")))?;
            if last {
                *slot = value;
                return Ok(());
            }
            cur = slot;
            continue;
        }
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| config_err(path, format!("`{part}` is inside a scalar")))?;
        if last {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

impl RunConfig {
    /// Parses a JSON document after applying `key=value` overrides.
    pub fn from_json(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut value: Value = if text.trim().is_empty() {
            Value::Object(Default::default())
        } else {
            serde_json::from_str(text).map_err(|e| config_err("$", format!("malformed JSON: {e}")))?
        };
        for (k, v) in overrides {
            apply_override(&mut value, k, v)?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            config_err(if path.is_empty() { "$".into() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn validate(&self) -> Result<()> {
        let e = &self.expansion;
        if let Some(r) = e.big_r {
            if !(r > 0.0) {
                return Err(config_err("expansion.big_r", "must be positive or null"));
            }
        }
        if e.max_polymer_size == 0 || e.max_polymer_size > crate::engine::MAX_POLYMER_SIZE {
            return Err(config_err(
                "expansion.max_polymer_size",
                format!("must lie in 1..={}", crate::engine::MAX_POLYMER_SIZE),
            ));
        }
        if e.max_mayer_order == 0 {
            return Err(config_err("expansion.max_mayer_order", "must be at least 1"));
        }
        if e.mode == ExpansionMode::LargeField {
            match (e.small_radius, e.big_r) {
                (Some(r), Some(big)) if r > 0.0 && r <= big => {}
                (_, None) => return Err(config_err("expansion.big_r", "large-field mode needs a finite cutoff")),
                _ => return Err(config_err("expansion.small_radius", "large-field mode needs 0 < r <= R")),
            }
        }
        for (i, set) in self.correlations.points.iter().enumerate() {
            if set.is_empty() || set.len() > crate::correlation::MAX_CORRELATION_ORDER {
                return Err(config_err(format!("correlations.points[{i}]"), "needs 1 to 4 points"));
            }
        }
        if self.workers == Some(0) {
            return Err(config_err("workers", "must be positive"));
        }
        Ok(())
    }

    fn lattice(&self) -> Result<Lattice> {
        let lat = match &self.lattice {
            LatticeSpec::Torus1d { side, components } => Lattice::torus1d(*side, *components),
            LatticeSpec::Torus2d { side, components } => Lattice::torus2d(*side, *components),
            LatticeSpec::Explicit { metric, components } => Lattice::from_metric(metric, *components),
        };
        lat.map_err(|e| config_err("lattice", e.to_string()))
    }

    /// Builds the model. The many-boson covariance brings its own lattice.
    pub fn model(&self) -> Result<Model> {
        let (lattice, covariance) = match &self.covariance {
            CovarianceSpec::ManyBoson {
                theta,
                mu_chem,
                beta,
                side,
            } => {
                let mb = build_many_boson_covariance(*theta, *mu_chem, &|k: f64| 2.0 - 2.0 * k.cos(), *side, *beta)
                    .map_err(|e| config_err("covariance", e.to_string()))?;
                (mb.lattice, mb.covariance)
            }
            other => {
                let lattice = self.lattice()?;
                let n = lattice.len();
                let comps = lattice.components();
                let cov = match other {
                    CovarianceSpec::Laplacian { mass } => build_laplacian_covariance(&lattice, *mass),
                    CovarianceSpec::Explicit { matrix } => {
                        let k = n * comps;
                        if matrix.len() != k || matrix.iter().any(|r| r.len() != k) {
                            return Err(config_err("covariance.matrix", format!("must be {k} x {k}")));
                        }
                        Covariance::new(DMatrix::from_fn(k, k, |i, j| matrix[i][j]), n, comps)
                    }
                    CovarianceSpec::RandomNormal { re_min, re_max, im_max } => {
                        use rand::SeedableRng;
                        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
                        random_normal_covariance(&mut rng, n, comps, (*re_min, *re_max), *im_max)
                    }
                    CovarianceSpec::ManyBoson { .. } => unreachable!(),
                };
                (lattice, cov.map_err(|e| config_err("covariance", e.to_string()))?)
            }
        };
        let n = lattice.len();
        let kernel = PowerSeriesKernel::new(self.interaction.kernel.clone(), &lattice)
            .map_err(|e| config_err("interaction.kernel", e.to_string()))?;
        let two_body = match &self.interaction.two_body {
            None => None,
            Some(TwoBodySpec::Quartic { v2, a }) => Some(TwoBodyPotential::quartic(n, *v2, *a)),
            Some(TwoBodySpec::Source { a }) => Some(Ok(TwoBodyPotential::source_only(n, *a))),
            Some(TwoBodySpec::General { v_half, a, degree, c_v }) => {
                if v_half.len() != n || v_half.iter().any(|r| r.len() != n) {
                    return Err(config_err("interaction.two_body.v_half", format!("must be {n} x {n}")));
                }
                Some(TwoBodyPotential::new(DMatrix::from_fn(n, n, |i, j| v_half[i][j]), *a, *degree).map(|mut p| {
                    if let Some(c) = c_v {
                        p.c_v = *c;
                    }
                    p
                }))
            }
        }
        .transpose()
        .map_err(|e| config_err("interaction.two_body", e.to_string()))?;
        let interaction =
            Interaction::new(kernel, two_body, &lattice).map_err(|e| config_err("interaction", e.to_string()))?;
        let radius = match self.expansion.big_r {
            Some(r) => Radius::Finite(r),
            None => Radius::Unbounded {
                r_min: self.expansion.r_min,
            },
        };
        Model::new(lattice, covariance, interaction, radius).map_err(|e| config_err("$", e.to_string()))
    }

    /// The source vector, zero-padded when omitted.
    pub fn source_for(&self, model: &Model) -> Result<Vec<f64>> {
        let dim = model.n_sites() * model.components();
        if self.source.is_empty() {
            return Ok(vec![0.0; dim]);
        }
        if self.source.len() != dim {
            return Err(config_err("source", format!("needs {dim} entries")));
        }
        Ok(self.source.clone())
    }
}

/// The bundled 3-site quartic configuration used by the examples and tests.
pub const QUARTIC_THREE_SITE: &str = include_str!("../configs/quartic_three_site.json");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_parses() {
        let cfg = RunConfig::from_json(QUARTIC_THREE_SITE, &[]).unwrap();
        let m = cfg.model().unwrap();
        assert_eq!(m.n_sites(), 3);
        assert_eq!(cfg.expansion.max_mayer_order, 4);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = RunConfig::from_json(
            QUARTIC_THREE_SITE,
            &[
                ("expansion.max_mayer_order".into(), "6".into()),
                ("expansion.mode".into(), "large_field".into()),
                ("expansion.small_radius".into(), "2".into()),
                ("correlations.points.0.1.0".into(), "2".into()),
            ],
        )
        .unwrap();
        assert_eq!(cfg.expansion.max_mayer_order, 6);
        assert_eq!(cfg.expansion.small_radius, Some(2.0));
        assert_eq!(cfg.correlations.points[0][1], (2, 0));
    }

    #[test]
    fn schema_errors_carry_the_path() {
        let err = RunConfig::from_json(r#"{"expansion": {"max_mayer_order": "x"}}"#, &[]).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "expansion.max_mayer_order"),
            e => panic!("{e:?}"),
        }
        assert!(matches!(RunConfig::from_json("{", &[]), Err(Error::Config { .. })));
        assert!(matches!(
            RunConfig::from_json(r#"{"expansion": {"mode": "large_field"}}"#, &[]),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn empty_config_uses_defaults() {
        let cfg = RunConfig::from_json("", &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }
}
