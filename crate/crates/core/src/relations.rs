//! Seeded sampling of example pairs and triplets for the relational losses.

use crate::error::{invalid, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Upper bound on sampled pairs and triplets per batch.
pub const DEFAULT_RELATION_LIMIT: usize = 256;

/// Pairs `(i, j)` with `i < j`, and triplets `(i, j, k)` with vertex `j` and `i < k`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Relations {
    pub pairs: Vec<(usize, usize)>,
    pub triplets: Vec<(usize, usize, usize)>,
}

fn pair_count(m: usize) -> usize {
    m * m.saturating_sub(1) / 2
}

/// The `index`-th unordered pair of `0..m` in lexicographic order.
fn decode_pair(mut index: usize, m: usize) -> (usize, usize) {
    for i in 0..m {
        let row = m - 1 - i;
        if index < row {
            return (i, i + 1 + index);
        }
        index -= row;
    }
    unreachable!("pair index out of range")
}

fn decode_triplet(index: usize, m: usize) -> (usize, usize, usize) {
    let per_vertex = pair_count(m - 1);
    let j = index / per_vertex;
    let (a, b) = decode_pair(index % per_vertex, m - 1);
    let skip = |v: usize| if v >= j { v + 1 } else { v };
    (skip(a), j, skip(b))
}

fn sample_indices(population: usize, limit: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if population <= limit {
        return (0..population).collect();
    }
    let mut picked = rand::seq::index::sample(rng, population, limit).into_vec();
    picked.sort_unstable();
    picked
}

pub fn sample_pairs(m: usize, limit: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if m < 2 {
        return invalid(format!("pairs need at least 2 examples, got {m}"));
    }
    if limit < 1 {
        return invalid("pair limit must be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_indices(pair_count(m), limit, &mut rng).into_iter().map(|i| decode_pair(i, m)).collect())
}

pub fn sample_triplets(m: usize, limit: usize, seed: u64) -> Result<Vec<(usize, usize, usize)>> {
    if m < 3 {
        return invalid(format!("triplets need at least 3 examples, got {m}"));
    }
    if limit < 1 {
        return invalid("triplet limit must be at least 1");
    }
    // independent stream from the pair sample
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let population = m * pair_count(m - 1);
    Ok(sample_indices(population, limit, &mut rng).into_iter().map(|i| decode_triplet(i, m)).collect())
}

/// Uniform sample without replacement of pairs and triplets; populations
/// smaller than their limit are enumerated in full.
pub fn sample_relations(m: usize, pair_limit: usize, triplet_limit: usize, seed: u64) -> Result<Relations> {
    Ok(Relations { pairs: sample_pairs(m, pair_limit, seed)?, triplets: sample_triplets(m, triplet_limit, seed)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn three_examples_enumerate_fully() {
        let r = sample_relations(3, 256, 256, 0).unwrap();
        assert_eq!(r.pairs, vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(r.triplets, vec![(1, 0, 2), (0, 1, 2), (0, 2, 1)]);
    }

    #[test]
    fn decoding_covers_population_once() {
        let m = 7;
        let pairs: HashSet<_> = (0..pair_count(m)).map(|i| decode_pair(i, m)).collect();
        assert_eq!(pairs.len(), 21);
        assert!(pairs.iter().all(|&(i, j)| i < j && j < m));
        let total = m * pair_count(m - 1);
        let trips: HashSet<_> = (0..total).map(|i| decode_triplet(i, m)).collect();
        assert_eq!(trips.len(), total);
        assert!(trips.iter().all(|&(i, j, k)| i < k && i != j && k != j && k < m));
    }

    #[test]
    fn sampling_is_seeded_and_bounded() {
        let a = sample_relations(16, 50, 40, 9).unwrap();
        let b = sample_relations(16, 50, 40, 9).unwrap();
        let c = sample_relations(16, 50, 40, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.pairs.len(), 50);
        assert_eq!(a.triplets.len(), 40);
        let uniq: HashSet<_> = a.triplets.iter().collect();
        assert_eq!(uniq.len(), 40);
    }

    #[test]
    fn too_few_examples_rejected() {
        assert!(sample_pairs(1, 10, 0).is_err());
        assert!(sample_triplets(2, 10, 0).is_err());
        assert!(sample_pairs(4, 0, 0).is_err());
        assert!(sample_relations(2, 10, 10, 0).is_err());
    }
}
