//! Seeded random labeled grids for property tests and benchmarks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mdp::{build_mdp, Cell, LabeledMdp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenParams {
    pub width: usize,
    pub height: usize,
    pub propositions: usize,
    pub min_regions: usize,
    pub max_regions: usize,
    /// Upper bound on the cells grown from each seed cell.
    pub max_blob: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams { width: 8, height: 8, propositions: 3, min_regions: 3, max_regions: 6, max_blob: 4 }
    }
}

pub fn prop_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| if i < 26 { char::from(b'A' + i as u8).to_string() } else { format!("P{i}") })
        .collect()
}

/// Draws grids until one has a region count within bounds. The same seed
/// always yields the same grid.
pub fn random_env(seed: u64, params: GenParams) -> LabeledMdp {
    assert!(params.propositions >= 1 && params.propositions <= 16, "1..=16 propositions supported");
    assert!(params.min_regions <= params.max_regions);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = prop_names(params.propositions);
    let n = params.width * params.height;
    loop {
        let blobs = rng.gen_range(params.min_regions..=params.max_regions);
        let mut labels: Vec<Option<u32>> = vec![None; n];
        for _ in 0..blobs {
            let mask = rng.gen_range(1..(1u32 << params.propositions));
            let start = rng.gen_range(0..n);
            let size = rng.gen_range(1..=params.max_blob.max(1));
            let mut cells = vec![start];
            labels[start] = Some(mask);
            while cells.len() < size {
                let &from = cells.choose(&mut rng).expect("blob is non-empty");
                let (x, y) = (from % params.width, from / params.width);
                let mut next = Vec::new();
                if x > 0 {
                    next.push(from - 1);
                }
                if x + 1 < params.width {
                    next.push(from + 1);
                }
                if y > 0 {
                    next.push(from - params.width);
                }
                if y + 1 < params.height {
                    next.push(from + params.width);
                }
                let &to = next.choose(&mut rng).expect("grid has a neighbour");
                labels[to] = Some(mask);
                if !cells.contains(&to) {
                    cells.push(to);
                }
            }
        }
        let cells: Vec<(Cell, Vec<String>)> = labels
            .iter()
            .enumerate()
            .filter_map(|(i, m)| {
                m.map(|m| {
                    let set = (0..params.propositions).filter(|b| m & (1 << b) != 0).map(|b| names[b].clone()).collect();
                    (Cell::new(i % params.width, i / params.width), set)
                })
            })
            .collect();
        let mdp = build_mdp(params.width, params.height, &names, &cells).expect("generated grids are well formed");
        let r = mdp.regions().len();
        if (params.min_regions..=params.max_regions).contains(&r) {
            return mdp;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_within_bounds() {
        for seed in 0..20 {
            let a = random_env(seed, GenParams::default());
            let b = random_env(seed, GenParams::default());
            assert_eq!(a, b);
            assert!((3..=6).contains(&a.regions().len()));
            assert_eq!((a.width(), a.height(), a.propositions().len()), (8, 8, 3));
        }
        assert_ne!(random_env(1, GenParams::default()), random_env(2, GenParams::default()));
    }
}
