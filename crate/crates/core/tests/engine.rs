use cluster_expansion::combinatorics::{enumerate_partitions, InterpolationPoint, DEFAULT_PARTITION_CAP};
use cluster_expansion::covariance::{build_laplacian_covariance, Covariance};
use cluster_expansion::engine::*;
use cluster_expansion::interaction::{Interaction, PowerSeriesKernel, TwoBodyPotential};
use cluster_expansion::lattice::{Lattice, SiteSet};
use cluster_expansion::quadrature::integrate_1d_adaptive;
use cluster_expansion::Error;
use nalgebra::DMatrix;
use num_complex::Complex64;

fn ring(n: usize) -> Lattice {
    Lattice::torus1d(n, 1).unwrap()
}

fn quartic_model(n: usize, v2: f64, radius: Radius) -> Model {
    let lat = ring(n);
    let cov = build_laplacian_covariance(&lat, 1.0).unwrap();
    let tb = TwoBodyPotential::quartic(n, v2, -1.0).unwrap();
    let inter = Interaction::new(PowerSeriesKernel::empty(), Some(tb), &lat).unwrap();
    Model::new(lat, cov, inter, radius).unwrap()
}

fn gaussian_model(n: usize) -> Model {
    let lat = ring(n);
    let cov = build_laplacian_covariance(&lat, 1.0).unwrap();
    let inter = Interaction::new(PowerSeriesKernel::empty(), Some(TwoBodyPotential::source_only(n, -1.0)), &lat).unwrap();
    Model::new(lat, cov, inter, Radius::Unbounded { r_min: 0.0 }).unwrap()
}

fn quick() -> ExpansionConfig {
    ExpansionConfig {
        max_mayer_order: 4,
        ..ExpansionConfig::default()
    }
}

#[test]
fn free_field_single_site_integrates_to_one() {
    let m = gaussian_model(3);
    let z = polymer_z(&m, &[1], &InterpolationPoint::ones(1), &[0.0; 3], &PhiQuadrature::default()).unwrap();
    assert!((z - 1.0).norm() < 1e-10, "{z}");
}

#[test]
fn source_gives_gaussian_generating_function() {
    let m = gaussian_model(3);
    let j = [0.3, -0.7, 0.5];
    let z = polymer_z(&m, &[0, 1, 2], &InterpolationPoint::ones(3), &j, &PhiQuadrature::default()).unwrap();
    let c = m.covariance.matrix();
    let mut q = Complex64::new(0.0, 0.0);
    for a in 0..3 {
        for b in 0..3 {
            q += j[a] * c[(a, b)] * j[b];
        }
    }
    assert!((z - (0.5 * q).exp()).norm() < 1e-10);
}

#[test]
fn bounded_single_site_matches_one_dimensional_quadrature() {
    let lat = Lattice::torus1d(1, 1).unwrap();
    let cov = Covariance::from_real(DMatrix::identity(1, 1), 1, 1).unwrap();
    let m = Model::new(lat.clone(), cov, Interaction::free(&lat), Radius::Finite(2.0)).unwrap();
    let z = polymer_z(&m, &[0], &InterpolationPoint::ones(1), &[0.0], &PhiQuadrature::default()).unwrap();
    let reference = integrate_1d_adaptive(
        &|x| (-(x * x) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt(),
        -2.0,
        2.0,
        1e-13,
        30,
    )
    .unwrap();
    assert!((z.re - reference).abs() < 1e-10 && z.im.abs() < 1e-14);
}

#[test]
fn two_site_free_activity_vanishes() {
    let m = gaussian_model(3);
    let a = activity(&m, SiteSet::from_sites([0, 1]), &[0.0; 3], &quick()).unwrap();
    assert!(a.norm() < 1e-9, "{a}");
}

#[test]
fn single_site_activity_is_the_single_site_integral() {
    let m = quartic_model(3, 0.05, Radius::Finite(5.0));
    let a = activity(&m, SiteSet::singleton(2), &[0.0; 3], &quick()).unwrap();
    let z = polymer_z(&m, &[2], &InterpolationPoint::ones(1), &[0.0; 3], &PhiQuadrature::default()).unwrap();
    assert!((a - z).norm() < 1e-14);
}

#[test]
fn one_edge_formula_is_exact() {
    let m = quartic_model(3, 0.05, Radius::Finite(5.0));
    let j = [0.2, -0.1, 0.4];
    let cfg = quick();
    let pair = activity(&m, SiteSet::from_sites([0, 1]), &j, &cfg).unwrap();
    let a0 = activity(&m, SiteSet::singleton(0), &j, &cfg).unwrap();
    let a1 = activity(&m, SiteSet::singleton(1), &j, &cfg).unwrap();
    let full = polymer_z(&m, &[0, 1], &InterpolationPoint::ones(2), &j, &cfg.phi).unwrap();
    assert!((pair + a0 * a1 - full).norm() < 1e-8, "{} vs {}", pair + a0 * a1, full);
}

#[test]
fn partitions_of_activities_rebuild_the_full_integral() {
    let m = quartic_model(3, 0.05, Radius::Finite(5.0));
    let j = [0.1, 0.0, -0.2];
    let engine = Engine::new(&m, quick()).unwrap();
    let table = engine.polymer_table(&j).unwrap();
    let mut total = Complex64::new(0.0, 0.0);
    for p in enumerate_partitions(&[0, 1, 2], DEFAULT_PARTITION_CAP).unwrap() {
        total += p
            .canonical()
            .iter()
            .map(|b| table.entries[&SiteSet::from_sites(b.iter().copied())])
            .product::<Complex64>();
    }
    let full = polymer_z(&m, &[0, 1, 2], &InterpolationPoint::ones(3), &j, &PhiQuadrature::default()).unwrap();
    assert!((total - full).norm() < 1e-7, "{total} vs {full}");
}

#[test]
fn backends_agree() {
    let m = quartic_model(3, 0.05, Radius::Finite(4.0));
    let cfg = ExpansionConfig {
        backend: Backend::Both,
        ..quick()
    };
    let a = activity(&m, SiteSet::from_sites([1, 2]), &[0.3, 0.0, 0.1], &cfg).unwrap();
    let fd = activity(&m, SiteSet::from_sites([1, 2]), &[0.3, 0.0, 0.1], &ExpansionConfig { backend: Backend::Fd, ..cfg }).unwrap();
    let ibp = activity(&m, SiteSet::from_sites([1, 2]), &[0.3, 0.0, 0.1], &ExpansionConfig { backend: Backend::Ibp, ..cfg }).unwrap();
    assert!((fd - ibp).norm() < 1e-6, "{fd} vs {ibp}");
    assert!((a - fd).norm() < 1e-14);
}

#[test]
fn gaussian_log_z_is_the_quadratic_form() {
    let m = gaussian_model(3);
    let cfg = ExpansionConfig {
        max_mayer_order: 16,
        ..quick()
    };
    let engine = Engine::new(&m, cfg).unwrap();
    let j = vec![0.9, -1.0, 0.35];
    let out = engine.log_z(&j).unwrap();
    let c = m.covariance.matrix();
    let mut q = Complex64::new(0.0, 0.0);
    for a in 0..3 {
        for b in 0..3 {
            q += j[a] * c[(a, b)] * j[b];
        }
    }
    assert!((out.log_z - 0.5 * q).norm() < 1e-6, "{} vs {}", out.log_z, 0.5 * q);
    assert!(out.diagnostics.closed_form);
}

#[test]
fn free_correlations_are_the_covariance() {
    let m = gaussian_model(3);
    let engine = Engine::new(&m, quick()).unwrap();
    let sets = vec![vec![(0, 0), (1, 0)], vec![(0, 0), (0, 0)], vec![(0, 0), (1, 0), (2, 0)], vec![(0, 0), (0, 0), (1, 0), (2, 0)]];
    let out = engine.truncated_correlations(&sets, &cluster_expansion::correlation::default_source_fd()).unwrap();
    let c = m.covariance.matrix();
    assert!((out[0].value - c[(0, 1)]).norm() < 1e-6);
    assert!((out[1].value - c[(0, 0)]).norm() < 1e-6);
    assert!(out[2].value.norm() < 1e-6);
    assert!(out[3].value.norm() < 1e-6, "{:?}", out);
}

#[test]
fn single_site_lattice_is_log_of_activity() {
    let lat = Lattice::torus1d(1, 1).unwrap();
    let cov = Covariance::from_real(DMatrix::identity(1, 1), 1, 1).unwrap();
    let tb = TwoBodyPotential::quartic(1, 0.1, -1.0).unwrap();
    let inter = Interaction::new(PowerSeriesKernel::empty(), Some(tb), &lat).unwrap();
    let m = Model::new(lat, cov, inter, Radius::Finite(4.0)).unwrap();
    let engine = Engine::new(&m, quick()).unwrap();
    let out = engine.log_z(&[0.0]).unwrap();
    let a = activity(&m, SiteSet::singleton(0), &[0.0], &quick()).unwrap();
    assert!((out.log_z - a.ln()).norm() < 1e-14);
}

#[test]
fn two_sites_mayer_series_is_log_one_plus() {
    let m = quartic_model(2, 0.05, Radius::Finite(5.0));
    let engine = Engine::new(&m, quick()).unwrap();
    let t = engine.polymer_table(&[0.0, 0.0]).unwrap();
    let out = engine.expand_table(&t).unwrap();
    let a1 = t.entries[&SiteSet::singleton(0)];
    let a2 = t.entries[&SiteSet::singleton(1)];
    let a12 = t.entries[&SiteSet::from_sites([0, 1])];
    let x = a12 / (a1 * a2);
    let mut partial = (a1 * a2).ln();
    for (k, p) in out.partial_sums.iter().enumerate() {
        let k = k as i32 + 1;
        partial += -(-x).powi(k) / k as f64;
        assert!((p - partial).norm() < 1e-14);
    }
    assert!((out.diagnostics.gas_exact - (a1 * a2 + a12).ln()).norm() < 1e-13);
    let w_total: Complex64 = out.clusters.values().sum();
    assert!((w_total - out.log_z).norm() < 1e-13);
}

#[test]
fn vanishing_single_site_activity_is_a_normalization_error() {
    let mut t = PolymerTable {
        n_sites: 2,
        source: vec![0.0, 0.0],
        entries: Default::default(),
        large_field: None,
        residual: 0.0,
        backend_gap: None,
        closed_form: false,
        tail_estimate: 0.0,
    };
    t.entries.insert(SiteSet::singleton(0), Complex64::new(0.0, 0.0));
    t.entries.insert(SiteSet::singleton(1), Complex64::new(1.0, 0.0));
    let trunc = Truncation {
        max_polymer_size: 2,
        max_mayer_order: 3,
    };
    assert!(matches!(mayer_log_z(&t, trunc, MayerRoute::Generating), Err(Error::Normalization(_))));
}

#[test]
fn ursell_route_matches_generating_route() {
    let m = quartic_model(3, 0.05, Radius::Finite(5.0));
    let engine = Engine::new(&m, quick()).unwrap();
    let t = engine.polymer_table(&[0.0; 3]).unwrap();
    let trunc = Truncation {
        max_polymer_size: 3,
        max_mayer_order: 4,
    };
    let a = mayer_log_z(&t, trunc, MayerRoute::Generating).unwrap();
    let b = mayer_log_z(&t, trunc, MayerRoute::Ursell).unwrap();
    for (x, y) in a.partial_sums.iter().zip(&b.partial_sums) {
        assert!((x - y).norm() < 1e-13);
    }
}

#[test]
fn splits_reassemble_the_activity() {
    let m = quartic_model(3, 0.05, Radius::Finite(4.0));
    let cfg = ExpansionConfig {
        small_radius: Some(1.5),
        ..quick()
    };
    let x = SiteSet::from_sites([0, 2]);
    let j = [0.1, 0.2, -0.3];
    let parts = large_field_activities(&m, x, &j, &cfg).unwrap();
    assert_eq!(parts.len(), 4);
    let total: Complex64 = parts.iter().map(|p| p.1).sum();
    let plain = activity(&m, x, &j, &cfg).unwrap();
    assert!((total - plain).norm() < 1e-7, "{total} vs {plain}");
}

#[test]
fn full_small_radius_kills_large_field_terms() {
    let m = quartic_model(3, 0.05, Radius::Finite(4.0));
    let cfg = ExpansionConfig {
        small_radius: Some(4.0),
        mode: ExpansionMode::LargeField,
        ..quick()
    };
    let parts = large_field_activities(&m, SiteSet::from_sites([0, 1]), &[0.0; 3], &cfg).unwrap();
    for (q, v) in &parts {
        if !q.is_empty() {
            assert_eq!(v.norm(), 0.0);
        }
    }
    let lf = Engine::new(&m, cfg).unwrap().log_z(&[0.0; 3]).unwrap();
    let plain = Engine::new(&m, quick()).unwrap().log_z(&[0.0; 3]).unwrap();
    assert!((lf.log_z - plain.log_z).norm() < 1e-8, "{} vs {}", lf.log_z, plain.log_z);
}

#[test]
fn large_field_mode_needs_a_valid_small_radius() {
    let m = quartic_model(3, 0.05, Radius::Finite(4.0));
    for r in [None, Some(5.0), Some(0.0)] {
        let cfg = ExpansionConfig {
            mode: ExpansionMode::LargeField,
            small_radius: r,
            ..quick()
        };
        assert!(matches!(Engine::new(&m, cfg), Err(Error::Input(_))));
    }
}

#[test]
fn oversized_polymers_are_refused() {
    let m = quartic_model(3, 0.05, Radius::Finite(4.0));
    let cfg = ExpansionConfig {
        max_polymer_size: MAX_POLYMER_SIZE + 1,
        ..quick()
    };
    assert!(matches!(Engine::new(&m, cfg), Err(Error::Resource { .. })));
}

#[test]
fn result_serializes_complex_pairs() {
    let m = quartic_model(2, 0.05, Radius::Finite(4.0));
    let out = Engine::new(&m, quick()).unwrap().log_z(&[0.0, 0.0]).unwrap();
    let v = serde_json::to_value(&out).unwrap();
    assert!(v["logZ"].as_array().unwrap().len() == 2);
    assert!(v["W"]["{0,1}"].is_array());
}
