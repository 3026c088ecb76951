//! Partitions, labeled trees and forests, Ursell functions, Kruskal weights
//! and the BKAR forest interpolation.

mod bkar;
mod forest;
mod graph;
mod kruskal;
mod partitions;
mod ursell;

pub use bkar::{
    bkar_forest_formula, bkar_interpolate, BkarOutcome, DerivativeBackend, InterpolationPoint,
};
pub(crate) use bkar::pair_derivative;
pub use forest::{enumerate_trees, Forest, TreeIter, DEFAULT_TREE_CAP};
pub use graph::{spanning_tree_count, Graph};
pub use kruskal::{kruskal_tree, kruskal_weight, MAX_KRUSKAL_EDGES};
pub use partitions::{enumerate_partitions, Partition, PartitionIter, DEFAULT_PARTITION_CAP};
pub use ursell::{ursell_graph_sum, ursell_tree_integral, DEFAULT_URSELL_CAP};

/// Bell numbers by the Bell triangle.
pub fn bell_number(n: usize) -> u64 {
    let mut row = vec![1u64];
    for _ in 0..n {
        let mut next = vec![*row.last().expect("nonempty")];
        for &v in &row {
            let last = *next.last().expect("nonempty");
            next.push(last + v);
        }
        row = next;
    }
    row[0]
}

/// Cayley's count `q^(q-2)` of labeled trees on `q` vertices.
pub fn cayley_number(q: usize) -> u64 {
    match q {
        0 => 0,
        1 => 1,
        _ => (q as u64).pow(q as u32 - 2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bell numbers from the recursion B(n+1) = sum_k C(n,k) B(k).
    fn bell_by_recursion(n: usize) -> u64 {
        let mut b = vec![1u64];
        for m in 0..n {
            let mut binom = 1u64;
            let mut next = 0;
            for k in 0..=m {
                next += binom * b[k];
                binom = binom * (m - k) as u64 / (k + 1) as u64;
            }
            b.push(next);
        }
        b[n]
    }

    #[test]
    fn bell_numbers_agree() {
        for n in 0..10 {
            assert_eq!(bell_number(n), bell_by_recursion(n));
        }
        assert_eq!(bell_number(3), 5);
        assert_eq!(bell_number(4), 15);
    }

    #[test]
    fn cayley_numbers() {
        assert_eq!(cayley_number(2), 1);
        assert_eq!(cayley_number(4), 16);
        assert_eq!(cayley_number(5), 125);
    }
}
