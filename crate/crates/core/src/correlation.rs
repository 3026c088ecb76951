//! Truncated correlations as mixed source derivatives of `log Z(J)` at
//! `J = 0`. The stencil is shared by the engine and the oracle so both see
//! the same finite-difference bias.

use std::collections::HashMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interaction::Point;
use crate::quadrature::{mixed_partial, FdConfig};

/// Highest correlation order supported.
pub const MAX_CORRELATION_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub points: Vec<Point>,
    pub value: Complex64,
    /// Richardson difference of the last two levels (NaN without Richardson).
    pub error_estimate: f64,
    /// Set when the error estimate exceeds the value itself.
    pub noise_dominated: bool,
}

/// Default source step: large enough to keep quadrature noise small after
/// division by `h^n`, small enough for one Richardson level.
pub fn default_source_fd() -> FdConfig {
    FdConfig {
        step: 1e-2,
        richardson_levels: 1,
        max_halvings: 0,
    }
}

fn key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Mixed derivatives of `log_z` at the origin for every point list in
/// `sets`. `log_z` receives the whole batch of distinct source vectors.
pub fn fd_correlations(
    components: usize,
    n_sites: usize,
    sets: &[Vec<Point>],
    fd: &FdConfig,
    log_z: impl FnOnce(&[Vec<f64>]) -> Result<Vec<Complex64>>,
) -> Result<Vec<CorrelationResult>> {
    let dim = n_sites * components;
    let mut dirs_all = Vec::with_capacity(sets.len());
    for set in sets {
        if set.is_empty() || set.len() > MAX_CORRELATION_ORDER {
            return Err(Error::resource("correlation order", set.len(), MAX_CORRELATION_ORDER));
        }
        let dirs: Vec<usize> = set
            .iter()
            .map(|&(x, c)| {
                if x >= n_sites || c >= components {
                    Err(Error::input(format!("correlation point ({x}, {c}) outside the lattice")))
                } else {
                    Ok(x * components + c)
                }
            })
            .collect::<Result<_>>()?;
        dirs_all.push(dirs);
    }
    let origin = vec![0.0; dim];
    let mut batch: Vec<Vec<f64>> = Vec::new();
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    for dirs in &dirs_all {
        mixed_partial(
            |x: &[f64]| {
                seen.entry(key(x)).or_insert_with(|| {
                    batch.push(x.to_vec());
                    batch.len() - 1
                });
                Ok(0.0)
            },
            &origin,
            dirs,
            fd,
        )?;
    }
    let values = log_z(&batch)?;
    if values.len() != batch.len() {
        return Err(Error::input("log Z batch returned the wrong number of values"));
    }
    sets.iter()
        .zip(&dirs_all)
        .map(|(set, dirs)| {
            let out = mixed_partial(
                |x: &[f64]| {
                    let i = seen.get(&key(x)).ok_or_else(|| Error::input("stencil point missing from batch"))?;
                    Ok(values[*i])
                },
                &origin,
                dirs,
                fd,
            )?;
            Ok(CorrelationResult {
                points: set.clone(),
                value: out.value,
                error_estimate: out.error_estimate,
                noise_dominated: out.error_estimate > out.value.norm(),
            })
        })
        .collect()
}
