//! Per-user dataset splitting, masked all-ranking, and top-K metrics.

use crate::error::{Error, Result};
use crate::interaction::{BipartiteAdjacency, InteractionMatrix};
use crate::modality::ItemItemGraph;
use crate::model::{forward, ModelState};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

/// Train interactions plus held-out per-user validation and test item sets.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: InteractionMatrix,
    /// Validation items per user, ascending; may be empty for small histories.
    pub val: Vec<Vec<u32>>,
    /// Test items per user, ascending; may be empty for small histories.
    pub test: Vec<Vec<u32>>,
    pub n_users: usize,
    pub n_items: usize,
}

/// Top-K item lists, one per user.
pub type RankedLists = Vec<Vec<u32>>;

/// Shuffles each user's history and splits it by `ratios`
/// (train, val, test). Counts are round(n*ratio) with train clamped to at
/// least 1 and val capped by what remains; the test set takes the rest and
/// may be empty (such users are skipped by the metrics). A user with fewer
/// than 3 interactions cannot be split meaningfully and is an error.
pub fn split_dataset(
    pairs: &[(u32, u32)],
    n_users: usize,
    n_items: usize,
    ratios: (f64, f64, f64),
    rng: &mut impl Rng,
) -> Result<SplitDataset> {
    let (rt, rv, rte) = ratios;
    if rt <= 0.0 || rv < 0.0 || rte < 0.0 || (rt + rv + rte - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!(
            "split ratios ({}, {}, {}) must be non-negative and sum to 1",
            rt, rv, rte
        )));
    }
    let full = InteractionMatrix::from_pairs(n_users, n_items, pairs)?;
    let mut train_pairs: Vec<(u32, u32)> = Vec::new();
    let mut val = vec![Vec::new(); n_users];
    let mut test = vec![Vec::new(); n_users];
    for u in 0..n_users {
        let mut items: Vec<u32> = full.user_items(u).iter().map(|&i| i as u32).collect();
        let n = items.len();
        if n < 3 {
            return Err(Error::Dataset(format!(
                "user {} has {} interactions, need at least 3 to split",
                u, n
            )));
        }
        items.shuffle(rng);
        let n_train = ((n as f64 * rt).round() as usize).clamp(1, n);
        let n_val = ((n as f64 * rv).round() as usize).min(n - n_train);
        for (pos, &item) in items.iter().enumerate() {
            if pos < n_train {
                train_pairs.push((u as u32, item));
            } else if pos < n_train + n_val {
                val[u].push(item);
            } else {
                test[u].push(item);
            }
        }
        val[u].sort_unstable();
        test[u].sort_unstable();
    }
    Ok(SplitDataset {
        train: InteractionMatrix::from_pairs(n_users, n_items, &train_pairs)?,
        val,
        test,
        n_users,
        n_items,
    })
}

/// Scores every item for every user from the full (unpruned) normalized
/// adjacency, masks each user's training items, and keeps the top K by
/// score with ties broken by ascending item id. Lists can be shorter than
/// K when fewer than K items are unmasked.
pub fn rank_all(
    state: &ModelState,
    graph: &ItemItemGraph,
    adjacency: &BipartiteAdjacency,
    train: &InteractionMatrix,
    k: usize,
) -> Result<RankedLists> {
    let trace = forward(state, graph, adjacency.full_normalized(), &[])?;
    let n_items = state.n_items();
    let lists = (0..state.n_users())
        .into_par_iter()
        .map(|u| {
            let h_u = trace.final_user.row(u);
            let seen = train.user_items(u);
            let mut scored: Vec<(f64, u32)> = Vec::with_capacity(n_items - seen.len());
            for i in 0..n_items {
                if seen.binary_search(&i).is_ok() {
                    continue;
                }
                let h_i = trace.final_item.row(i);
                let s: f64 = h_u.iter().zip(h_i).map(|(a, b)| a * b).sum();
                scored.push((s, i as u32));
            }
            let by_rank = |a: &(f64, u32), b: &(f64, u32)| {
                b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
            };
            if scored.len() > k {
                scored.select_nth_unstable_by(k - 1, by_rank);
                scored.truncate(k);
            }
            scored.sort_unstable_by(by_rank);
            scored.into_iter().map(|(_, i)| i).collect()
        })
        .collect();
    Ok(lists)
}

/// Mean over users with non-empty truth sets of |top-K hits| / |truth|.
pub fn recall_at_k(lists: &[Vec<u32>], truth: &[Vec<u32>], k: usize) -> f64 {
    assert_eq!(lists.len(), truth.len());
    let mut total = 0.0;
    let mut users = 0usize;
    for (list, t) in lists.iter().zip(truth) {
        if t.is_empty() {
            continue;
        }
        let hits = list
            .iter()
            .take(k)
            .filter(|i| t.binary_search(i).is_ok())
            .count();
        total += hits as f64 / t.len() as f64;
        users += 1;
    }
    if users == 0 {
        0.0
    } else {
        total / users as f64
    }
}

/// Binary-relevance NDCG with a log2(rank+1) discount and ideal DCG
/// truncated at min(K, |truth|); averaged over users with non-empty truth.
pub fn ndcg_at_k(lists: &[Vec<u32>], truth: &[Vec<u32>], k: usize) -> f64 {
    assert_eq!(lists.len(), truth.len());
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let mut total = 0.0;
    let mut users = 0usize;
    for (list, t) in lists.iter().zip(truth) {
        if t.is_empty() {
            continue;
        }
        let mut dcg = 0.0;
        for (pos, i) in list.iter().take(k).enumerate() {
            if t.binary_search(i).is_ok() {
                dcg += discount(pos + 1);
            }
        }
        let idcg: f64 = (1..=k.min(t.len())).map(discount).sum();
        total += dcg / idcg;
        users += 1;
    }
    if users == 0 {
        0.0
    } else {
        total / users as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interaction::build_adjacency;
    use crate::modality::{build_frozen_graph, FeatureMatrix, Modality};
    use crate::sparse::DenseMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn user_history(n: usize) -> Vec<(u32, u32)> {
        (0..n as u32).map(|i| (0, i)).collect()
    }

    fn split_counts(n: usize) -> (usize, usize, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = split_dataset(&user_history(n), 1, n.max(1), (0.8, 0.1, 0.1), &mut rng).unwrap();
        (s.train.user_items(0).len(), s.val[0].len(), s.test[0].len())
    }

    #[test]
    fn ten_interactions_split_8_1_1() {
        assert_eq!(split_counts(10), (8, 1, 1));
    }

    #[test]
    fn five_interactions_split_4_1_0() {
        // The rounding remainder goes to validation first.
        assert_eq!(split_counts(5), (4, 1, 0));
    }

    #[test]
    fn three_interactions_split_2_0_1() {
        assert_eq!(split_counts(3), (2, 0, 1));
    }

    #[test]
    fn too_small_history_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = split_dataset(&[(0, 0), (0, 1)], 1, 2, (0.8, 0.1, 0.1), &mut rng);
        assert!(matches!(r, Err(Error::Dataset(_))));
    }

    #[test]
    fn split_conserves_and_separates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pairs = Vec::new();
        for u in 0..40u32 {
            let n = 3 + (u % 13);
            for t in 0..n {
                pairs.push((u, (u * 7 + t * 3) % 50));
            }
        }
        let before = InteractionMatrix::from_pairs(40, 50, &pairs).unwrap().nnz();
        let s = split_dataset(&pairs, 40, 50, (0.8, 0.1, 0.1), &mut rng).unwrap();
        let total = s.train.nnz()
            + s.val.iter().map(Vec::len).sum::<usize>()
            + s.test.iter().map(Vec::len).sum::<usize>();
        assert_eq!(total, before);
        for u in 0..40 {
            let train_items = s.train.user_items(u);
            assert!(!train_items.is_empty());
            for i in &s.val[u] {
                assert!(train_items.binary_search(&(*i as usize)).is_err());
                assert!(s.test[u].binary_search(i).is_err());
            }
            for i in &s.test[u] {
                assert!(train_items.binary_search(&(*i as usize)).is_err());
            }
        }
    }

    #[test]
    fn dataset_scale_split_conserves_total() {
        // 19445 users; 160792 interactions total, each user at least 8.
        let m = 19445u32;
        let total = 160_792usize;
        let mut pairs = Vec::with_capacity(total);
        let mut count = 0usize;
        'outer: for u in 0..m {
            for t in 0..9u32 {
                if u >= 5232 && t == 8 {
                    continue;
                }
                pairs.push((u, (u.wrapping_mul(31).wrapping_add(t * 97)) % 7050));
                count += 1;
                if count == total {
                    break 'outer;
                }
            }
        }
        // Deduplicate collisions by regenerating deterministically.
        let im = InteractionMatrix::from_pairs(19445, 7050, &pairs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dense_pairs: Vec<(u32, u32)> = (0..im.n_users())
            .flat_map(|u| {
                im.user_items(u)
                    .iter()
                    .map(move |&i| (u as u32, i as u32))
                    .collect::<Vec<_>>()
            })
            .collect();
        let s = split_dataset(&dense_pairs, 19445, 7050, (0.8, 0.1, 0.1), &mut rng).unwrap();
        let out = s.train.nnz()
            + s.val.iter().map(Vec::len).sum::<usize>()
            + s.test.iter().map(Vec::len).sum::<usize>();
        assert_eq!(out, dense_pairs.len());
    }

    fn tiny_state(m: usize, n: usize, d: usize, seed: u64) -> ModelState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand_mat = |r: usize, c: usize| {
            DenseMatrix::from_vec(r, c, (0..r * c).map(|_| rng.random::<f64>() - 0.5).collect())
                .unwrap()
        };
        ModelState {
            user_emb: rand_mat(m, d),
            item_emb: rand_mat(n, d),
            projectors: vec![],
            l_ui: 2,
            l_ii: 1,
        }
    }

    fn tiny_graph(n: usize, seed: u64) -> ItemItemGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = FeatureMatrix::new(
            Modality::Visual,
            DenseMatrix::from_vec(n, 4, (0..n * 4).map(|_| rng.random()).collect()).unwrap(),
        )
        .unwrap();
        build_frozen_graph(&[f], 3, 0.1, false).unwrap()
    }

    #[test]
    fn training_items_never_ranked() {
        let pairs = [(0u32, 7u32), (0, 2), (0, 5), (1, 1), (1, 7), (1, 3)];
        let train = InteractionMatrix::from_pairs(2, 10, &pairs).unwrap();
        let adj = build_adjacency(&train);
        let state = tiny_state(2, 10, 3, 9);
        let graph = tiny_graph(10, 10);
        let lists = rank_all(&state, &graph, &adj, &train, 10).unwrap();
        assert!(!lists[0].contains(&7));
        assert!(!lists[0].contains(&2));
        assert!(!lists[0].contains(&5));
        assert_eq!(lists[0].len(), 7);
    }

    #[test]
    fn zero_embeddings_rank_by_item_id() {
        let pairs = [(0u32, 0u32), (1, 1), (0, 3), (1, 0), (0, 5), (1, 5)];
        let train = InteractionMatrix::from_pairs(2, 8, &pairs).unwrap();
        let adj = build_adjacency(&train);
        let mut state = tiny_state(2, 8, 3, 11);
        state.user_emb = DenseMatrix::zeros(2, 3);
        state.item_emb = DenseMatrix::zeros(8, 3);
        let graph = tiny_graph(8, 12);
        let lists = rank_all(&state, &graph, &adj, &train, 3).unwrap();
        // User 0 masked {0, 3, 5}: first unmasked ids are 1, 2, 4.
        assert_eq!(lists[0], vec![1, 2, 4]);
        // User 1 masked {0, 1, 5}: first unmasked ids are 2, 3, 4.
        assert_eq!(lists[1], vec![2, 3, 4]);
    }

    #[test]
    fn rank_all_matches_bruteforce_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut pairs = Vec::new();
        for u in 0..6u32 {
            for t in 0..5u32 {
                pairs.push((u, (u * 11 + t * 7) % 30));
            }
        }
        let train = InteractionMatrix::from_pairs(6, 30, &pairs).unwrap();
        let adj = build_adjacency(&train);
        let state = tiny_state(6, 30, 4, rng.random());
        let graph = tiny_graph(30, 14);
        let lists = rank_all(&state, &graph, &adj, &train, 10).unwrap();
        let trace = forward(&state, &graph, adj.full_normalized(), &[]).unwrap();
        for u in 0..6 {
            let mut scored: Vec<(f64, u32)> = (0..30)
                .filter(|i| !train.has(u, *i))
                .map(|i| {
                    let s: f64 = trace
                        .final_user
                        .row(u)
                        .iter()
                        .zip(trace.final_item.row(i))
                        .map(|(a, b)| a * b)
                        .sum();
                    (s, i as u32)
                })
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let oracle: Vec<u32> = scored.iter().take(10).map(|s| s.1).collect();
            assert_eq!(lists[u], oracle, "user {}", u);
        }
    }

    #[test]
    fn ranking_invariant_under_positive_rescaling() {
        let pairs = [(0u32, 0u32), (0, 4), (1, 2), (1, 6), (2, 1), (2, 7)];
        let train = InteractionMatrix::from_pairs(3, 9, &pairs).unwrap();
        let adj = build_adjacency(&train);
        let state = tiny_state(3, 9, 4, 17);
        let mut scaled = state.clone();
        scaled.user_emb.scale(2.7);
        scaled.item_emb.scale(2.7);
        let graph = tiny_graph(9, 18);
        let a = rank_all(&state, &graph, &adj, &train, 5).unwrap();
        let b = rank_all(&scaled, &graph, &adj, &train, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn recall_examples() {
        let lists = vec![vec![1, 2, 3]];
        assert_eq!(recall_at_k(&lists, &[vec![2, 9]], 3), 0.5);
        assert_eq!(recall_at_k(&lists, &[vec![1, 3]], 3), 1.0);
        assert_eq!(recall_at_k(&lists, &[vec![]], 3), 0.0);
    }

    #[test]
    fn ndcg_examples() {
        // Single hit at rank 1.
        assert_eq!(ndcg_at_k(&[vec![4, 1, 2]], &[vec![4]], 3), 1.0);
        // Single hit at rank 2.
        let got = ndcg_at_k(&[vec![9, 4, 2]], &[vec![4]], 3);
        assert!((got - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((got - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn metrics_match_recomputation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..50 {
            let n_users = 1 + rng.random_range(0..6);
            let k = 1 + rng.random_range(0..8);
            let mut lists = Vec::new();
            let mut truth = Vec::new();
            for _ in 0..n_users {
                let mut l: Vec<u32> = (0..20u32).collect();
                l.shuffle(&mut rng);
                l.truncate(k + rng.random_range(0..3));
                let mut t: Vec<u32> =
                    (0..20u32).filter(|_| rng.random::<f64>() < 0.2).collect();
                t.sort_unstable();
                lists.push(l);
                truth.push(t);
            }
            let (mut r_sum, mut n_sum, mut users) = (0.0, 0.0, 0);
            for (l, t) in lists.iter().zip(&truth) {
                if t.is_empty() {
                    continue;
                }
                users += 1;
                let hits: Vec<usize> = l
                    .iter()
                    .take(k)
                    .enumerate()
                    .filter(|(_, i)| t.contains(i))
                    .map(|(pos, _)| pos + 1)
                    .collect();
                r_sum += hits.len() as f64 / t.len() as f64;
                let dcg: f64 = hits.iter().map(|&r| 1.0 / ((r + 1) as f64).log2()).sum();
                let idcg: f64 =
                    (1..=k.min(t.len())).map(|r| 1.0 / ((r + 1) as f64).log2()).sum();
                n_sum += dcg / idcg;
            }
            let (er, en) = if users == 0 {
                (0.0, 0.0)
            } else {
                (r_sum / users as f64, n_sum / users as f64)
            };
            assert_eq!(recall_at_k(&lists, &truth, k), er);
            assert_eq!(ndcg_at_k(&lists, &truth, k), en);
        }
    }

    #[test]
    fn metrics_bounded_and_coupled() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..30 {
            let mut l: Vec<u32> = (0..15u32).collect();
            l.shuffle(&mut rng);
            l.truncate(5);
            let mut t: Vec<u32> = (0..15u32).filter(|_| rng.random::<f64>() < 0.3).collect();
            t.sort_unstable();
            if t.is_empty() {
                continue;
            }
            let r = recall_at_k(&[l.clone()], &[t.clone()], 5);
            let n = ndcg_at_k(&[l], &[t], 5);
            assert!((0.0..=1.0).contains(&r));
            assert!((0.0..=1.0).contains(&n));
            if r > 0.0 {
                assert!(n > 0.0);
            }
        }
    }

    #[test]
    fn metrics_invariant_to_user_order() {
        let lists = vec![vec![1, 2], vec![3, 4], vec![5, 6]];
        let truth = vec![vec![2], vec![9], vec![5, 6]];
        let fwd = (recall_at_k(&lists, &truth, 2), ndcg_at_k(&lists, &truth, 2));
        let lists_r: Vec<_> = lists.into_iter().rev().collect();
        let truth_r: Vec<_> = truth.into_iter().rev().collect();
        let rev = (recall_at_k(&lists_r, &truth_r, 2), ndcg_at_k(&lists_r, &truth_r, 2));
        assert_eq!(fwd, rev);
    }
}
