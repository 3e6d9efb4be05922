//! Raw-interaction preparation: iterative degree filtering, id
//! densification, and the train/val/test split, producing everything the
//! training pipeline reads.

use crate::error::{Error, Result};
use crate::evaluation::split_dataset;
use crate::interaction::InteractionMatrix;
use crate::sparse::DenseMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::HashMap;

/// Iteratively drops users and items with fewer than `min_degree`
/// interactions until both sides satisfy the bound. Duplicate pairs count
/// once. Returns the surviving pairs sorted, plus the number of rounds.
pub fn core_filter(pairs: &[(u32, u32)], min_degree: usize) -> (Vec<(u32, u32)>, usize) {
    let mut current: Vec<(u32, u32)> = pairs.to_vec();
    current.sort_unstable();
    current.dedup();
    let mut rounds = 0;
    loop {
        let mut user_deg: HashMap<u32, usize> = HashMap::new();
        let mut item_deg: HashMap<u32, usize> = HashMap::new();
        for &(u, i) in &current {
            *user_deg.entry(u).or_default() += 1;
            *item_deg.entry(i).or_default() += 1;
        }
        let before = current.len();
        current.retain(|&(u, i)| user_deg[&u] >= min_degree && item_deg[&i] >= min_degree);
        rounds += 1;
        if current.len() == before {
            return (current, rounds);
        }
    }
}

/// Remaps surviving ids to 0..count in ascending original-id order.
/// Returns the remapped pairs and, per side, the original id of each new id.
pub fn densify(pairs: &[(u32, u32)]) -> (Vec<(u32, u32)>, Vec<u32>, Vec<u32>) {
    let mut user_map: Vec<u32> = pairs.iter().map(|&(u, _)| u).collect();
    user_map.sort_unstable();
    user_map.dedup();
    let mut item_map: Vec<u32> = pairs.iter().map(|&(_, i)| i).collect();
    item_map.sort_unstable();
    item_map.dedup();
    let user_idx: HashMap<u32, u32> =
        user_map.iter().enumerate().map(|(idx, &u)| (u, idx as u32)).collect();
    let item_idx: HashMap<u32, u32> =
        item_map.iter().enumerate().map(|(idx, &i)| (i, idx as u32)).collect();
    let remapped = pairs.iter().map(|&(u, i)| (user_idx[&u], item_idx[&i])).collect();
    (remapped, user_map, item_map)
}

/// Summary statistics written alongside the prepared files.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrepareStats {
    pub raw_interactions: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub core_rounds: usize,
    pub density: f64,
}

/// Output of `prepare`: split pair lists in dense ids plus the id maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub train: Vec<(u32, u32)>,
    pub val: Vec<(u32, u32)>,
    pub test: Vec<(u32, u32)>,
    /// Original user id of each dense user id.
    pub user_map: Vec<u32>,
    /// Original item id of each dense item id.
    pub item_map: Vec<u32>,
    pub stats: PrepareStats,
}

fn matrix_pairs(m: &InteractionMatrix) -> Vec<(u32, u32)> {
    let mut pairs = Vec::with_capacity(m.nnz());
    for u in 0..m.n_users() {
        for &i in m.user_items(u) {
            pairs.push((u as u32, i as u32));
        }
    }
    pairs
}

fn list_pairs(lists: &[Vec<u32>]) -> Vec<(u32, u32)> {
    lists
        .iter()
        .enumerate()
        .flat_map(|(u, items)| items.iter().map(move |&i| (u as u32, i)))
        .collect()
}

/// Runs the 5-core filter, densifies ids, and splits per user.
pub fn prepare(pairs: &[(u32, u32)], ratios: (f64, f64, f64), seed: u64) -> Result<Prepared> {
    let raw_interactions = pairs.len();
    let (surviving, core_rounds) = core_filter(pairs, 5);
    if surviving.is_empty() {
        return Err(Error::Dataset(
            "no interactions survive 5-core filtering".into(),
        ));
    }
    let (dense, user_map, item_map) = densify(&surviving);
    let n_users = user_map.len();
    let n_items = item_map.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split = split_dataset(&dense, n_users, n_items, ratios, &mut rng)?;
    let train = matrix_pairs(&split.train);
    let val = list_pairs(&split.val);
    let test = list_pairs(&split.test);
    let stats = PrepareStats {
        raw_interactions,
        n_users,
        n_items,
        n_interactions: dense.len(),
        n_train: train.len(),
        n_val: val.len(),
        n_test: test.len(),
        core_rounds,
        density: dense.len() as f64 / (n_users as f64 * n_items as f64),
    };
    Ok(Prepared { train, val, test, user_map, item_map, stats })
}

/// Rows of `m` selected by original id, in map order; used to subset
/// feature files to the surviving items.
pub fn subset_rows(m: &DenseMatrix, keep: &[u32]) -> Result<DenseMatrix> {
    let mut values = Vec::with_capacity(keep.len() * m.cols);
    for &r in keep {
        let r = r as usize;
        if r >= m.rows {
            return Err(Error::Dimension(format!(
                "row {} out of range for {} feature rows",
                r, m.rows
            )));
        }
        values.extend_from_slice(m.row(r));
    }
    DenseMatrix::from_vec(keep.len(), m.cols, values)
}
