use cluster_expansion::combinatorics::{
    bkar_forest_formula, bkar_interpolate, kruskal_weight, spanning_tree_count, ursell_graph_sum, ursell_tree_integral,
    enumerate_trees, DerivativeBackend, Forest, Graph, InterpolationPoint,
};
use cluster_expansion::covariance::{
    build_laplacian_covariance, gaussian_normalizer, random_normal_covariance, spectral_envelope_check,
};
use cluster_expansion::engine::{activity, polymer_z, Engine, ExpansionConfig, Model, PhiQuadrature, Radius};
use cluster_expansion::interaction::{
    eval_v1, eval_v2, factorization_check, random_forest_point, v1_tree_norm, Interaction, KernelTerm,
    PowerSeriesKernel, TwoBodyPotential,
};
use cluster_expansion::lattice::{Lattice, SiteSet};
use cluster_expansion::norms::{check_hypotheses, kernel_norm, omega_profile, HypothesisParams, NormFlavor, OmegaProfile};
use cluster_expansion::quadrature::CubatureConfig;
use nalgebra::DMatrix;
use num_complex::Complex64;
use num_rational::Ratio;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ring(n: usize) -> Lattice {
    Lattice::torus1d(n, 1).unwrap()
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Connected graph on `n` vertices: a random tree plus extra edges from `mask`.
fn connected_graph(n: usize, seed: u64, mask: u32) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.gen_range(0..v), v)).collect();
    let mut bit = 0;
    for a in 0..n {
        for b in a + 1..n {
            if mask >> bit & 1 == 1 && !edges.contains(&(a, b)) {
                edges.push((a, b));
            }
            bit += 1;
        }
    }
    Graph::new(n, edges).unwrap()
}

fn random_forest(n: usize, rng: &mut ChaCha8Rng) -> Forest {
    let edges: Vec<(usize, usize)> = (1..n)
        .filter_map(|v| rng.gen_bool(0.7).then(|| (rng.gen_range(0..v), v)))
        .collect();
    Forest::new(n, edges).unwrap()
}

fn family(ground: usize, masks: &[u64]) -> Vec<SiteSet> {
    masks.iter().map(|&m| SiteSet(m % ((1 << ground) - 1) + 1)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kruskal_weights_sum_to_one(n in 1usize..=5, seed in any::<u64>(), mask in any::<u32>()) {
        let g = connected_graph(n, seed, mask);
        prop_assume!(g.edges().len() <= 8);
        let total: Ratio<i64> = g.spanning_trees().iter().map(|t| kruskal_weight(t, &g).unwrap()).sum();
        prop_assert_eq!(total, Ratio::from_integer(1));
    }

    #[test]
    fn ursell_decomposes_over_trees(masks in prop::collection::vec(any::<u64>(), 1..=4)) {
        let sets = family(5, &masks);
        let exact = ursell_graph_sum(&sets, 6).unwrap();
        let bound = spanning_tree_count(&Graph::incidence(&sets));
        prop_assert!(exact.unsigned_abs() <= bound);
        let cfg = CubatureConfig::default();
        let sum: f64 = enumerate_trees(sets.len(), 7)
            .unwrap()
            .map(|t| ursell_tree_integral(&t, &sets, &cfg).unwrap())
            .sum();
        prop_assert!((sum - exact as f64).abs() < 1e-6, "{} vs {}", sum, exact);
    }

    #[test]
    fn interpolation_keeps_the_forest_partition(n in 1usize..=6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let forest = random_forest(n, &mut rng);
        let values: Vec<f64> = (0..forest.len()).map(|_| rng.gen_range(1e-6..=1.0)).collect();
        let s = bkar_interpolate(&forest, &values);
        prop_assert_eq!(s.partition().canonical(), forest.partition().canonical());
        for x in 0..n {
            prop_assert_eq!(s.get(x, x), 1.0);
            for y in 0..n {
                prop_assert!((0.0..=1.0).contains(&s.get(x, y)));
            }
        }
    }

    #[test]
    fn forest_formula_rebuilds_exponentials(a in prop::array::uniform3(-0.5f64..0.5)) {
        let h = move |s: &InterpolationPoint| -> cluster_expansion::Result<f64> {
            Ok((a[0] * s.get(0, 1) + a[1] * s.get(0, 2) + a[2] * s.get(1, 2)).exp())
        };
        let slope = |x: usize, y: usize| match (x.min(y), x.max(y)) {
            (0, 1) => a[0],
            (0, 2) => a[1],
            _ => a[2],
        };
        let exact = |s: &InterpolationPoint, pairs: &[(usize, usize)]| -> cluster_expansion::Result<f64> {
            Ok(pairs.iter().map(|&(x, y)| slope(x, y)).product::<f64>() * h(s)?)
        };
        let out = bkar_forest_formula(3, &h, &DerivativeBackend::Exact(&exact), &CubatureConfig::default()).unwrap();
        prop_assert!((out.value - (a[0] + a[1] + a[2]).exp()).abs() < 1e-6);
    }

    #[test]
    fn hadamard_interpolation_stays_in_the_envelope(n in 2usize..=4, seed in any::<u64>(), im in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cov = random_normal_covariance(&mut rng, n, 1, (0.3, 3.0), im).unwrap();
        let s = random_forest_point(n, &mut rng);
        let rep = spectral_envelope_check(&cov, &s, 1e-10).unwrap();
        prop_assert!(rep.contained, "margin {}", rep.margin);
    }

    #[test]
    fn normalizer_factorizes_over_blocks(seed in any::<u64>(), n1 in 1usize..=3, n2 in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_normal_covariance(&mut rng, n1, 1, (0.5, 2.0), 0.4).unwrap();
        let b = random_normal_covariance(&mut rng, n2, 1, (0.5, 2.0), 0.4).unwrap();
        let k = n1 + n2;
        let mut m = DMatrix::<Complex64>::zeros(k, k);
        m.view_mut((0, 0), (n1, n1)).copy_from(a.matrix());
        m.view_mut((n1, n1), (n2, n2)).copy_from(b.matrix());
        let whole = gaussian_normalizer(&m).unwrap();
        let parts = gaussian_normalizer(a.matrix()).unwrap() * gaussian_normalizer(b.matrix()).unwrap();
        prop_assert!((whole - parts).norm() <= 1e-12 * parts.norm());
    }

    #[test]
    fn interaction_factorizes_at_forest_points(seed in any::<u64>(), n in 2usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lat = ring(n);
        let terms: Vec<KernelTerm> = (0..4)
            .map(|_| KernelTerm {
                xi: (0..rng.gen_range(1..=3)).map(|_| (rng.gen_range(0..n), 0)).collect(),
                zeta: (0..rng.gen_range(0..=1)).map(|_| (rng.gen_range(0..n), 0)).collect(),
                coeff: Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-0.2..0.2)),
            })
            .collect();
        let v = DMatrix::from_fn(n, n, |x, y| if x == y { 0.3 } else if lat.distance(x, y) <= 1.0 { 0.05 } else { 0.0 });
        let inter = Interaction::new(
            PowerSeriesKernel::new(terms, &lat).unwrap(),
            Some(TwoBodyPotential::new(v, -1.0, 2).unwrap()),
            &lat,
        )
        .unwrap();
        let s = random_forest_point(n, &mut rng);
        let rep = factorization_check(&inter, &s, 8, &mut rng);
        prop_assert!(rep.is_ok(), "{:?}", rep);
    }

    #[test]
    fn interactions_at_full_coupling_match_direct_sums(seed in any::<u64>()) {
        let n = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lat = ring(n);
        let terms: Vec<KernelTerm> = (0..3)
            .map(|_| KernelTerm {
                xi: (0..rng.gen_range(1..=3)).map(|_| (rng.gen_range(0..n), 0)).collect(),
                zeta: (0..rng.gen_range(0..=1)).map(|_| (rng.gen_range(0..n), 0)).collect(),
                coeff: c(rng.gen_range(-1.0..1.0)),
            })
            .collect();
        let v = DMatrix::from_fn(n, n, |x, y| if x == y { 0.4 } else { 0.1 });
        let a = rng.gen_range(-1.0..1.0);
        let inter = Interaction::new(
            PowerSeriesKernel::new(terms.clone(), &lat).unwrap(),
            Some(TwoBodyPotential::new(v.clone(), a, 2).unwrap()),
            &lat,
        )
        .unwrap();
        let phi: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let j: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ones = InterpolationPoint::ones(n);

        let direct_v1: Complex64 = terms
            .iter()
            .map(|t| {
                t.coeff
                    * t.xi.iter().map(|&(x, _)| phi[x]).product::<f64>()
                    * t.zeta.iter().map(|&(x, _)| j[x]).product::<f64>()
            })
            .sum();
        let direct_v2: f64 = -(0..n)
            .map(|x| (0..n).map(|y| v[(x, y)] * phi[y] * phi[y]).sum::<f64>().powi(2))
            .sum::<f64>()
            - a * j.iter().zip(&phi).map(|(p, q)| p * q).sum::<f64>();
        let got_v1 = eval_v1(&inter, &phi, &ones, &j).unwrap();
        let got_v2 = eval_v2(&inter, &phi, &ones, &j).unwrap();
        prop_assert!((got_v1 - direct_v1).norm() <= 1e-12 * direct_v1.norm().max(1.0));
        prop_assert!((got_v2 - c(direct_v2)).norm() <= 1e-12 * direct_v2.abs().max(1.0));
    }

    #[test]
    fn tree_norm_is_monotone(seed in any::<u64>(), r in 0.5f64..5.0, lj in 0.5f64..3.0, m in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lat = ring(4);
        let terms: Vec<KernelTerm> = (0..3)
            .map(|_| KernelTerm {
                xi: (0..rng.gen_range(1..=3)).map(|_| (rng.gen_range(0..4), 0)).collect(),
                zeta: (0..rng.gen_range(0..=2)).map(|_| (rng.gen_range(0..4), 0)).collect(),
                coeff: Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            })
            .collect();
        let k = PowerSeriesKernel::new(terms, &lat).unwrap();
        let base = v1_tree_norm(&k, r, lj, m, &lat).unwrap();
        prop_assert!(v1_tree_norm(&k, r * 1.3, lj, m, &lat).unwrap() >= base * (1.0 - 1e-12));
        prop_assert!(v1_tree_norm(&k, r, lj * 1.3, m, &lat).unwrap() <= base * (1.0 + 1e-12));
    }

    #[test]
    fn kernel_norm_monotone_and_submultiplicative(seed in any::<u64>(), n in 2usize..=5, m in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lat = ring(n);
        let draw = |rng: &mut ChaCha8Rng| {
            DMatrix::from_fn(n, n, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        };
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        for flavor in [NormFlavor::OneInf, NormFlavor::Inf] {
            let lo = kernel_norm(&a, m, flavor, &lat).unwrap();
            let hi = kernel_norm(&a, m + 0.5, flavor, &lat).unwrap();
            prop_assert!(hi >= lo * (1.0 - 1e-12));
        }
        let ab = kernel_norm(&(&a * &b), 0.0, NormFlavor::OneInf, &lat).unwrap();
        let na = kernel_norm(&a, 0.0, NormFlavor::OneInf, &lat).unwrap();
        let nb = kernel_norm(&b, 0.0, NormFlavor::OneInf, &lat).unwrap();
        prop_assert!(ab <= na * nb * (1.0 + 1e-12));
    }

    #[test]
    fn omega_is_nondecreasing(w in 0.01f64..1.0, delta in 0.0f64..2.0, degree in 1u32..5, v1 in 0.01f64..1.0,
                              r in 0.5f64..3.0, extra in 0.1f64..5.0, t in 0.0f64..1.0) {
        let p = OmegaProfile { w, delta, degree, v1, r, big_r: r + extra };
        let a = r + t * extra * 0.5;
        let b = r + t * extra;
        prop_assert!(omega_profile(a, &p).unwrap() <= omega_profile(b, &p).unwrap() * (1.0 + 1e-12));
    }
}

fn scaled_model(mass: f64, v1: f64, v2: f64, coeffs: &[(usize, u32, f64)]) -> Model {
    let lat = ring(4);
    let terms: Vec<KernelTerm> = coeffs
        .iter()
        .map(|&(x, d, g)| KernelTerm {
            xi: vec![(x, 0); d as usize],
            zeta: vec![],
            coeff: c(-g * v1.powi(d as i32)),
        })
        .collect();
    let inter = Interaction::new(
        PowerSeriesKernel::new(terms, &lat).unwrap(),
        Some(TwoBodyPotential::quartic(4, v2, -1.0).unwrap()),
        &lat,
    )
    .unwrap();
    let cov = build_laplacian_covariance(&lat, mass).unwrap();
    Model::new(lat, cov, inter, Radius::Finite(5.0)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn hypotheses_are_monotone(mass in 0.2f64..4.0, v1 in 0.01f64..0.5, v2 in 0.001f64..0.5, r in 0.5f64..4.0,
                               shrink in 0.1f64..1.0, grow in 1.0f64..3.0,
                               coeffs in prop::collection::vec((0usize..4, 2u32..=4, 0.0f64..2.0), 0..3)) {
        let p = HypothesisParams { r, v1, v2, ..HypothesisParams::default() };
        let base = check_hypotheses(&scaled_model(mass, v1, v2, &coeffs), &p).unwrap();
        let variants = [
            (scaled_model(mass * grow, v1, v2, &coeffs), p),
            (scaled_model(mass, v1 * shrink, v2, &coeffs), HypothesisParams { v1: v1 * shrink, ..p }),
            (scaled_model(mass, v1, v2 * shrink, &coeffs), HypothesisParams { v2: v2 * shrink, ..p }),
        ];
        for (model, params) in &variants {
            let other = check_hypotheses(model, params).unwrap();
            for cond in base.conditions.iter().filter(|c| c.pass) {
                let after = other.condition(&cond.name).unwrap();
                prop_assert!(after.pass, "{} flipped: {:?} -> {:?}", cond.name, cond, after);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn gaussian_log_z_is_half_the_quadratic_form(j in prop::array::uniform3(-1.0f64..=1.0)) {
        let lat = ring(3);
        let cov = build_laplacian_covariance(&lat, 1.0).unwrap();
        let inter = Interaction::new(PowerSeriesKernel::empty(), Some(TwoBodyPotential::source_only(3, -1.0)), &lat).unwrap();
        let m = Model::new(lat, cov, inter, Radius::Unbounded { r_min: 0.0 }).unwrap();
        let cfg = ExpansionConfig { max_mayer_order: 16, ..ExpansionConfig::default() };
        let got = Engine::new(&m, cfg).unwrap().log_z(&j).unwrap().log_z;
        let cm = m.covariance.matrix();
        let q: Complex64 = (0..3).flat_map(|a| (0..3).map(move |b| (a, b))).map(|(a, b)| j[a] * cm[(a, b)] * j[b]).sum();
        prop_assert!((got - 0.5 * q).norm() < 1e-6);
    }

    #[test]
    fn one_edge_formula_is_exact(x in 0usize..3, v2 in 0.0f64..0.1, j in prop::array::uniform3(-0.5f64..=0.5)) {
        let lat = ring(3);
        let cov = build_laplacian_covariance(&lat, 1.0).unwrap();
        let inter = Interaction::new(PowerSeriesKernel::empty(), Some(TwoBodyPotential::quartic(3, v2, -1.0).unwrap()), &lat).unwrap();
        let m = Model::new(lat, cov, inter, Radius::Finite(5.0)).unwrap();
        let cfg = ExpansionConfig::default();
        let y = (x + 1) % 3;
        let pair = SiteSet::from_sites([x, y]);
        let lhs = activity(&m, pair, &j, &cfg).unwrap()
            + activity(&m, SiteSet::singleton(x), &j, &cfg).unwrap() * activity(&m, SiteSet::singleton(y), &j, &cfg).unwrap();
        let sites = pair.to_vec();
        let rhs = polymer_z(&m, &sites, &InterpolationPoint::ones(2), &j, &PhiQuadrature::default()).unwrap();
        prop_assert!((lhs - rhs).norm() < 1e-6 * rhs.norm(), "{} vs {}", lhs, rhs);
    }
}
