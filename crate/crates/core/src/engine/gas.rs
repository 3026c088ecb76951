//! Logarithms of hard-core polymer gases.
//!
//! The gas partition function `Xi(U) = sum over families of disjoint
//! polymers inside U of prod K(P)` is built as a polynomial in a fugacity
//! `lambda` counting polymers. Its logarithm, order by order in `lambda`,
//! is the Mayer series; Möbius inversion over subsets splits each order into
//! cluster contributions `W(X)` by support.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;

use crate::combinatorics::ursell_graph_sum;
use crate::error::{Error, Result};
use crate::lattice::SiteSet;

const CZERO: Complex64 = Complex64::new(0.0, 0.0);
const CONE: Complex64 = Complex64::new(1.0, 0.0);

/// Largest lattice handled by the subset dynamic programs.
pub const MAX_GAS_SITES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct GasLog {
    /// `L_k(universe)` for `k = 1..=max_order`.
    pub order_terms: Vec<Complex64>,
    /// Cluster contributions summed over orders `<= max_order`, by support.
    pub clusters: BTreeMap<SiteSet, Complex64>,
    /// Principal logarithm of the full gas sum (all orders).
    pub exact: Complex64,
    /// False when the partial sums cross a branch of the logarithm.
    pub winding_ok: bool,
}

impl GasLog {
    pub fn partial_sums(&self) -> Vec<Complex64> {
        self.order_terms
            .iter()
            .scan(CZERO, |acc, t| {
                *acc += t;
                Some(*acc)
            })
            .collect()
    }
}

fn check_universe(n: usize) -> Result<()> {
    if n > MAX_GAS_SITES {
        return Err(Error::resource("polymer gas sites", n, MAX_GAS_SITES));
    }
    Ok(())
}

/// Groups polymers by their smallest site.
fn by_first(n: usize, activities: &[(SiteSet, Complex64)]) -> Result<Vec<Vec<(usize, Complex64)>>> {
    let mut out = vec![Vec::new(); n];
    for &(p, k) in activities {
        let first = p.first().ok_or_else(|| Error::input("empty polymer"))?;
        if p.iter().any(|x| x >= n) {
            return Err(Error::input("polymer outside the universe"));
        }
        out[first].push((p.0 as usize, k));
    }
    Ok(out)
}

/// `Xi(U)` for every `U` (bitmask index), truncated at `max_order` polymers.
fn gas_polynomials(n: usize, groups: &[Vec<(usize, Complex64)>], max_order: usize) -> Vec<Vec<Complex64>> {
    let size = 1usize << n;
    let width = max_order + 1;
    let mut f = vec![vec![CZERO; width]; size];
    f[0][0] = CONE;
    for u in 1..size {
        let m = u.trailing_zeros() as usize;
        let mut row = f[u & !(1 << m)].clone();
        for &(p, k) in &groups[m] {
            if p & !u == 0 {
                let rest = &f[u & !p];
                for order in 1..width {
                    row[order] += k * rest[order - 1];
                }
            }
        }
        f[u] = row;
    }
    f
}

fn gas_values(n: usize, groups: &[Vec<(usize, Complex64)>]) -> Vec<Complex64> {
    let size = 1usize << n;
    let mut f = vec![CZERO; size];
    f[0] = CONE;
    for u in 1..size {
        let m = u.trailing_zeros() as usize;
        let mut v = f[u & !(1 << m)];
        for &(p, k) in &groups[m] {
            if p & !u == 0 {
                v += k * f[u & !p];
            }
        }
        f[u] = v;
    }
    f
}

/// Sums over partitions of `U` into the given blocks (every site covered).
fn partition_values(n: usize, groups: &[Vec<(usize, Complex64)>]) -> Vec<Complex64> {
    let size = 1usize << n;
    let mut f = vec![CZERO; size];
    f[0] = CONE;
    for u in 1..size {
        let m = u.trailing_zeros() as usize;
        let mut v = CZERO;
        for &(p, k) in &groups[m] {
            if p & !u == 0 {
                v += k * f[u & !p];
            }
        }
        f[u] = v;
    }
    f
}

/// Power-series logarithm of `1 + sum_{k>=1} f_k lambda^k`.
fn series_log(f: &[Complex64]) -> Vec<Complex64> {
    let k_max = f.len() - 1;
    let mut g = vec![CZERO; k_max + 1];
    for k in 1..=k_max {
        let mut acc = f[k] * k as f64;
        for j in 1..k {
            acc -= g[j] * j as f64 * f[k - j];
        }
        g[k] = acc / k as f64;
    }
    g
}

/// Mayer series of the gas with activities `K(P)` on the sites `0..n`.
pub fn gas_log(n: usize, activities: &[(SiteSet, Complex64)], max_order: usize) -> Result<GasLog> {
    check_universe(n)?;
    if max_order == 0 {
        return Err(Error::input("Mayer order must be at least 1"));
    }
    let groups = by_first(n, activities)?;
    let poly = gas_polynomials(n, &groups, max_order);
    let size = 1usize << n;
    let logs: Vec<Vec<Complex64>> = poly.iter().map(|f| series_log(f)).collect();
    // Möbius inversion of L(Y) over subsets, per order, summed over orders.
    let mut summed: Vec<Complex64> = logs.iter().map(|l| l[1..].iter().sum()).collect();
    for bit in 0..n {
        for u in 0..size {
            if u & (1 << bit) != 0 {
                let lower = summed[u & !(1 << bit)];
                summed[u] -= lower;
            }
        }
    }
    let clusters: BTreeMap<SiteSet, Complex64> = summed
        .into_iter()
        .enumerate()
        .filter(|&(u, w)| u != 0 && w != CZERO)
        .map(|(u, w)| (SiteSet(u as u64), w))
        .collect();
    let full = size - 1;
    let order_terms = logs[full][1..].to_vec();
    let xi = gas_values(n, &groups)[full];
    if xi.norm() == 0.0 {
        return Err(Error::Normalization("polymer gas sum vanishes".into()));
    }
    let exact = xi.ln();
    let mut winding_ok = true;
    let mut prev = CZERO;
    let mut acc = CZERO;
    for t in &order_terms {
        acc += t;
        if (acc.im - prev.im).abs() > PI {
            winding_ok = false;
        }
        prev = acc;
    }
    if acc.is_finite() && (acc.im - exact.im).abs() > PI {
        winding_ok = false;
    }
    Ok(GasLog {
        order_terms,
        clusters,
        exact,
        winding_ok,
    })
}

/// The same series by literal enumeration of ordered polymer sequences with
/// Ursell weights: `W(X) = sum_n 1/n! sum_{(P_1..P_n), union = X}
/// rho(P_1..P_n) prod K(P_i)`. Exponential in the order; a cross-check.
pub fn gas_log_ursell(n: usize, activities: &[(SiteSet, Complex64)], max_order: usize, ursell_cap: usize) -> Result<GasLog> {
    check_universe(n)?;
    if max_order > ursell_cap {
        return Err(Error::resource("Ursell enumeration order", max_order, ursell_cap));
    }
    let mut order_terms = vec![CZERO; max_order];
    let mut clusters: BTreeMap<SiteSet, Complex64> = BTreeMap::new();
    let mut seq: Vec<SiteSet> = Vec::with_capacity(max_order);
    let mut factorial = 1.0;
    let mut inv_fact = vec![1.0; max_order + 1];
    for (k, slot) in inv_fact.iter_mut().enumerate().skip(1) {
        factorial *= k as f64;
        *slot = 1.0 / factorial;
    }
    fn rec(
        activities: &[(SiteSet, Complex64)],
        seq: &mut Vec<SiteSet>,
        weight: Complex64,
        max_order: usize,
        inv_fact: &[f64],
        order_terms: &mut [Complex64],
        clusters: &mut BTreeMap<SiteSet, Complex64>,
    ) -> Result<()> {
        if !seq.is_empty() {
            let rho = ursell_graph_sum(seq, max_order.max(1))?;
            if rho != 0 {
                let contrib = weight * rho as f64 * inv_fact[seq.len()];
                order_terms[seq.len() - 1] += contrib;
                let support = seq.iter().fold(SiteSet::EMPTY, |a, &b| a.union(b));
                *clusters.entry(support).or_insert(CZERO) += contrib;
            }
        }
        if seq.len() == max_order {
            return Ok(());
        }
        for &(p, k) in activities {
            seq.push(p);
            rec(activities, seq, weight * k, max_order, inv_fact, order_terms, clusters)?;
            seq.pop();
        }
        Ok(())
    }
    rec(activities, &mut seq, CONE, max_order, &inv_fact, &mut order_terms, &mut clusters)?;
    clusters.retain(|_, w| *w != CZERO);
    let groups = by_first(n, activities)?;
    let exact = gas_values(n, &groups)[(1usize << n) - 1].ln();
    Ok(GasLog {
        order_terms,
        clusters,
        exact,
        winding_ok: true,
    })
}

/// Output of the small-field / large-field resummation.
#[derive(Debug, Clone, PartialEq)]
pub struct LargeFieldLog {
    /// Small-field cluster values `V(Z)` (singletons carry `log A_s({x})`).
    pub small_field: BTreeMap<SiteSet, Complex64>,
    /// `sum_Z V(Z)`: the logarithm of the small-field partition function.
    pub log_z_small: Complex64,
    /// Activities of the gas of large-field clusters dressed with
    /// small-field links.
    pub dressed: Vec<(SiteSet, Complex64)>,
    pub small_gas: GasLog,
    pub dressed_gas: GasLog,
}

/// `log Z = sum_Z V(Z) + log Xi_K` where `V` is the Mayer series of the
/// small-field activities and `K` the connected large-field clusters.
///
/// `small` holds `A_s(X)` (singletons included, unnormalized) and
/// `large_bar` holds `sum_{Q nonempty} B(X, Q)`.
pub fn large_field_log(
    n: usize,
    small: &[(SiteSet, Complex64)],
    large_bar: &[(SiteSet, Complex64)],
    max_order: usize,
) -> Result<LargeFieldLog> {
    check_universe(n)?;
    let size = 1usize << n;
    let (singles, normalized) = normalize(n, small)?;
    let small_gas = gas_log(n, &normalized, max_order)?;
    let mut small_field = small_gas.clusters.clone();
    for (x, a) in singles.iter().enumerate() {
        *small_field.entry(SiteSet::singleton(x)).or_insert(CZERO) += a.ln();
    }
    // S(U) = sum_{Z subset U} V(Z)
    let mut s = vec![CZERO; size];
    for (z, v) in &small_field {
        s[z.0 as usize] += v;
    }
    for bit in 0..n {
        for u in 0..size {
            if u & (1 << bit) != 0 {
                let lower = s[u & !(1 << bit)];
                s[u] += lower;
            }
        }
    }
    let log_z_small = s[size - 1];
    // Xi_B(X): partitions of X into large-field polymers.
    let groups = by_first(n, large_bar)?;
    let xi_b = partition_values(n, &groups);
    // G(U): all dressed configurations with support exactly U.
    let mut g = vec![CZERO; size];
    g[0] = CONE;
    for (u, slot) in g.iter_mut().enumerate().skip(1) {
        let mut total = CZERO;
        let mut x = u;
        while x != 0 {
            if xi_b[x] != CZERO {
                let free = u & !x;
                let mut h = CZERO;
                let mut m = free;
                loop {
                    let w = u & !m;
                    let sign = if m.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                    h += (-(s[w] - s[w & !x])).exp() * sign;
                    if m == 0 {
                        break;
                    }
                    m = (m - 1) & free;
                }
                total += xi_b[x] * h;
            }
            x = (x - 1) & u;
        }
        *slot = total;
    }
    // Connected parts: G(U) = sum_{Y containing min U} K(Y) G(U - Y).
    let mut k = vec![CZERO; size];
    for u in 1..size {
        let low = u & u.wrapping_neg();
        let rest = u & !low;
        let mut v = g[u];
        let mut sub = rest;
        loop {
            let y = low | sub;
            if y != u {
                v -= k[y] * g[u & !y];
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
        k[u] = v;
    }
    let scale = k.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let dressed: Vec<(SiteSet, Complex64)> = k
        .iter()
        .enumerate()
        .filter(|&(u, v)| u != 0 && v.norm() > 1e-300_f64.max(scale * 1e-300))
        .map(|(u, &v)| (SiteSet(u as u64), v))
        .collect();
    let dressed_gas = gas_log(n, &dressed, max_order)?;
    Ok(LargeFieldLog {
        small_field,
        log_z_small,
        dressed,
        small_gas,
        dressed_gas,
    })
}

/// Splits off the singleton activities and divides the others by them.
pub(crate) fn normalize(n: usize, table: &[(SiteSet, Complex64)]) -> Result<(Vec<Complex64>, Vec<(SiteSet, Complex64)>)> {
    let mut singles = vec![None; n];
    for &(p, a) in table {
        if p.len() == 1 {
            singles[p.first().expect("nonempty")] = Some(a);
        }
    }
    let singles: Vec<Complex64> = singles
        .into_iter()
        .enumerate()
        .map(|(x, a)| match a {
            Some(a) if a.norm() > 0.0 && a.is_finite() => Ok(a),
            Some(_) => Err(Error::Normalization(format!("single-site activity at site {x} vanishes"))),
            None => Err(Error::Normalization(format!("missing single-site activity at site {x}"))),
        })
        .collect::<Result<_>>()?;
    let normalized = table
        .iter()
        .filter(|(p, _)| p.len() >= 2)
        .map(|&(p, a)| (p, p.iter().fold(a, |acc, x| acc / singles[x])))
        .collect();
    Ok((singles, normalized))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    fn s(v: &[usize]) -> SiteSet {
        SiteSet::from_sites(v.iter().copied())
    }

    #[test]
    fn two_sites_is_log_one_plus() {
        let a = 0.3;
        let g = gas_log(2, &[(s(&[0, 1]), c(a))], 8).unwrap();
        let expect: Vec<f64> = (1..=8).map(|k| -(-a as f64).powi(k) / k as f64).collect();
        for (t, e) in g.order_terms.iter().zip(&expect) {
            assert!((t.re - e).abs() < 1e-15);
        }
        assert!((g.exact.re - (1.0f64 + a).ln()).abs() < 1e-15);
        assert_eq!(g.clusters.len(), 1);
    }

    #[test]
    fn ursell_route_agrees() {
        let acts = vec![
            (s(&[0, 1]), c(0.11)),
            (s(&[1, 2]), Complex64::new(-0.07, 0.02)),
            (s(&[0, 2]), c(0.05)),
            (s(&[0, 1, 2]), c(0.03)),
        ];
        let a = gas_log(3, &acts, 4).unwrap();
        let b = gas_log_ursell(3, &acts, 4, 6).unwrap();
        for (x, y) in a.order_terms.iter().zip(&b.order_terms) {
            assert!((x - y).norm() < 1e-14, "{x} vs {y}");
        }
        for (k, v) in &a.clusters {
            assert!((v - b.clusters[k]).norm() < 1e-14);
        }
    }

    #[test]
    fn large_field_without_large_polymers_is_small_field() {
        let small = vec![(s(&[0]), c(0.9)), (s(&[1]), c(0.8)), (s(&[0, 1]), c(0.05))];
        let out = large_field_log(2, &small, &[], 10).unwrap();
        assert!(out.dressed.is_empty());
        let exact = (0.9f64 * 0.8 + 0.05).ln();
        assert!((out.log_z_small.re - exact).abs() < 1e-9);
    }

    #[test]
    fn large_field_resummation_is_exact() {
        // Z = sum over partitions of prod (A_s + B_bar)
        let a_s = [(s(&[0]), 0.9), (s(&[1]), 0.8), (s(&[2]), 0.85), (s(&[0, 1]), 0.04), (s(&[1, 2]), 0.03), (s(&[0, 2]), 0.02), (s(&[0, 1, 2]), 0.01)];
        let b = [(s(&[0]), 0.05), (s(&[1]), 0.07), (s(&[2]), 0.02), (s(&[0, 1]), 0.01), (s(&[1, 2]), 0.004), (s(&[0, 2]), 0.0), (s(&[0, 1, 2]), 0.002)];
        let small: Vec<_> = a_s.iter().map(|&(p, v)| (p, c(v))).collect();
        let large: Vec<_> = b.iter().map(|&(p, v)| (p, c(v))).collect();
        let total: Vec<_> = a_s.iter().zip(&b).map(|(&(p, x), &(_, y))| (p, c(x + y))).collect();
        let exact = partition_values(3, &by_first(3, &total).unwrap())[7].ln();
        let out = large_field_log(3, &small, &large, 40).unwrap();
        let approx = out.log_z_small + out.dressed_gas.partial_sums().last().unwrap();
        assert!((approx - exact).norm() < 1e-12, "{approx} vs {exact}");
        let resummed = out.small_gas.exact + out.small_field.iter().filter(|(k, _)| k.len() == 1).map(|(_, v)| v).sum::<Complex64>() + out.dressed_gas.exact;
        assert!((resummed - exact).norm() < 1e-12);
    }
}
