//! Built-in property suites that need no configuration.

use cluster_expansion::combinatorics::{
    bell_number, bkar_interpolate, cayley_number, enumerate_partitions, enumerate_trees, kruskal_weight,
    spanning_tree_count, ursell_graph_sum, Graph, DEFAULT_PARTITION_CAP, DEFAULT_TREE_CAP, DEFAULT_URSELL_CAP,
    MAX_KRUSKAL_EDGES,
};
use cluster_expansion::covariance::{
    build_laplacian_covariance, build_many_boson_covariance, random_normal_covariance, spectral_envelope_check,
    Covariance,
};
use cluster_expansion::lattice::{Lattice, SiteSet};
use cluster_expansion::Result;
use num_rational::Ratio;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct CountRow {
    pub n: usize,
    pub bell: u64,
    pub bell_enumerated: u64,
    pub cayley: u64,
    pub cayley_enumerated: u64,
    pub ursell: i64,
    pub ursell_expected: i64,
    pub tree_bound: u64,
    /// Empty when the complete graph has too many edges for exact weights.
    pub kruskal_sum: String,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct CheckRow {
    pub suite: &'static str,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

pub fn counting_table() -> Result<Vec<CountRow>> {
    let max_n = DEFAULT_TREE_CAP.min(DEFAULT_URSELL_CAP);
    let mut rows = Vec::new();
    for n in 1..=max_n {
        let ground: Vec<usize> = (0..n).collect();
        let bell_enumerated = enumerate_partitions(&ground, DEFAULT_PARTITION_CAP)?.count() as u64;
        let cayley_enumerated = enumerate_trees(n, DEFAULT_TREE_CAP)?.count() as u64;

        // n copies of one set: every pair overlaps, so the incidence graph is complete
        let sets = vec![SiteSet::singleton(0); n];
        let ursell = ursell_graph_sum(&sets, DEFAULT_URSELL_CAP)?;
        let fact: i64 = (1..n as i64).product();
        let ursell_expected = if n % 2 == 1 { fact } else { -fact };
        let g = Graph::complete(n);
        let tree_bound = spanning_tree_count(&g);

        let kruskal_sum = if g.edges().len() <= MAX_KRUSKAL_EDGES {
            let mut total = Ratio::<i64>::zero();
            for t in g.spanning_trees() {
                total += kruskal_weight(&t, &g)?;
            }
            total.to_string()
        } else {
            String::new()
        };
        let pass = bell_enumerated == bell_number(n)
            && cayley_enumerated == cayley_number(n)
            && ursell == ursell_expected
            && ursell.unsigned_abs() <= tree_bound
            && (kruskal_sum.is_empty() || kruskal_sum == "1");
        rows.push(CountRow {
            n,
            bell: bell_number(n),
            bell_enumerated,
            cayley: cayley_number(n),
            cayley_enumerated,
            ursell,
            ursell_expected,
            tree_bound,
            kruskal_sum,
            pass,
        });
    }
    Ok(rows)
}

pub fn covariance_checks(seed: u64) -> Vec<CheckRow> {
    let mut rows = Vec::new();
    let mut push = |name: String, outcome: Result<(bool, String)>| {
        let (pass, detail) = outcome.unwrap_or_else(|e| (false, e.to_string()));
        rows.push(CheckRow {
            suite: "covariance",
            name,
            pass,
            detail,
        });
    };

    for (label, lattice) in [
        ("laplacian_ring6", Lattice::torus1d(6, 1)),
        ("laplacian_torus3x3", Lattice::torus2d(3, 1)),
        ("laplacian_ring4_two_components", Lattice::torus1d(4, 2)),
    ] {
        push(
            label.to_string(),
            lattice.and_then(|l| build_laplacian_covariance(&l, 1.0)).and_then(|c| admissible(&c)),
        );
    }

    push(
        "many_boson_ring3_four_slices".into(),
        build_many_boson_covariance(0.25, -0.5, &|k: f64| 2.0 - 2.0 * k.cos(), 3, 1.0)
            .and_then(|mb| admissible(&mb.covariance)),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..6 {
        let n = 2 + trial % 3;
        let outcome = random_normal_covariance(&mut rng, n, 1, (0.5, 2.0), 0.3).and_then(|c| {
            let (ok, detail) = admissible(&c)?;
            // interpolate along a random spanning tree of the complete graph
            let trees = Graph::complete(n).spanning_trees();
            let tree = &trees[rng.gen_range(0..trees.len())];
            let values: Vec<f64> = (0..tree.len()).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s = bkar_interpolate(tree, &values);
            let env = spectral_envelope_check(&c, &s, 1e-9)?;
            Ok((
                ok && env.contained,
                format!("{detail}; interpolation margin {:.3e}", env.margin),
            ))
        });
        push(format!("random_normal_{trial}_n{n}"), outcome);
    }
    rows
}

fn admissible(c: &Covariance) -> Result<(bool, String)> {
    let r = c.validate()?;
    Ok((
        r.mu > 0.0 && r.a_min > 0.0,
        format!("mu {:.4e}, a_min {:.4e}, normality {:.1e}", r.mu, r.a_min, r.normality_defect),
    ))
}
