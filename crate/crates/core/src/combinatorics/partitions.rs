use crate::error::{Error, Result};

pub const DEFAULT_PARTITION_CAP: usize = 8;

/// A set partition of a ground set into nonempty disjoint blocks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    pub blocks: Vec<Vec<usize>>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Blocks as sorted vectors, themselves sorted, for comparisons.
    pub fn canonical(&self) -> Vec<Vec<usize>> {
        let mut blocks: Vec<Vec<usize>> = self
            .blocks
            .iter()
            .map(|b| {
                let mut b = b.clone();
                b.sort_unstable();
                b
            })
            .collect();
        blocks.sort();
        blocks
    }
}

/// Partitions in restricted-growth-string order.
#[derive(Debug, Clone)]
pub struct PartitionIter {
    ground: Vec<usize>,
    codes: Vec<usize>,
    done: bool,
}

impl Iterator for PartitionIter {
    type Item = Partition;

    fn next(&mut self) -> Option<Partition> {
        if self.done {
            return None;
        }
        let n = self.ground.len();
        let n_blocks = self.codes.iter().max().map_or(0, |m| m + 1);
        let mut blocks = vec![Vec::new(); n_blocks];
        for (i, &c) in self.codes.iter().enumerate() {
            blocks[c].push(self.ground[i]);
        }
        // Advance: rightmost position that may grow.
        self.done = true;
        for i in (1..n).rev() {
            let prefix_max = self.codes[..i].iter().copied().max().unwrap_or(0);
            if self.codes[i] <= prefix_max {
                self.codes[i] += 1;
                for c in &mut self.codes[i + 1..] {
                    *c = 0;
                }
                self.done = false;
                break;
            }
        }
        Some(Partition { blocks })
    }
}

/// Every partition of `ground` exactly once (Bell-number many).
pub fn enumerate_partitions(ground: &[usize], cap: usize) -> Result<PartitionIter> {
    if ground.len() > cap {
        return Err(Error::resource("partition ground set", ground.len(), cap));
    }
    Ok(PartitionIter {
        ground: ground.to_vec(),
        codes: vec![0; ground.len()],
        done: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::bell_number;
    use std::collections::HashSet;

    #[test]
    fn counts_match_bell_numbers() {
        assert_eq!(enumerate_partitions(&[7], 8).unwrap().count(), 1);
        assert_eq!(enumerate_partitions(&[0, 1, 2], 8).unwrap().count(), 5);
        assert_eq!(enumerate_partitions(&[0, 1, 2, 3], 8).unwrap().count(), 15);
        for n in 0..=7 {
            let ground: Vec<usize> = (0..n).collect();
            let all: Vec<_> = enumerate_partitions(&ground, 8).unwrap().collect();
            assert_eq!(all.len() as u64, bell_number(n));
            let distinct: HashSet<_> = all.iter().map(Partition::canonical).collect();
            assert_eq!(distinct.len(), all.len());
        }
    }

    #[test]
    fn cap_is_enforced() {
        let ground: Vec<usize> = (0..9).collect();
        assert!(matches!(
            enumerate_partitions(&ground, DEFAULT_PARTITION_CAP),
            Err(Error::Resource { .. })
        ));
    }

    #[test]
    fn blocks_cover_ground() {
        for p in enumerate_partitions(&[3, 5, 9, 11], 8).unwrap() {
            let mut all: Vec<usize> = p.blocks.iter().flatten().copied().collect();
            all.sort_unstable();
            assert_eq!(all, vec![3, 5, 9, 11]);
            assert!(p.blocks.iter().all(|b| !b.is_empty()));
        }
    }
}
