//! Brute-force oracles and data generators shared by the integration
//! suites. Everything here is written independently of the library
//! internals it checks: plain loops, full sorts, and exact arithmetic.

#![allow(dead_code)]

use freedom::evaluation::{split_dataset, SplitDataset};
use freedom::interaction::{BipartiteAdjacency, InteractionMatrix};
use freedom::modality::{FeatureMatrix, ItemItemGraph, Modality};
use freedom::model::{forward, ModelState};
use freedom::sparse::{CsrMatrix, DenseMatrix};
use freedom::training::{bpr_loss, gradients, TrainTriple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::collections::{BTreeSet, HashMap, HashSet};

// ---------------------------------------------------------------------
// Finite-difference gradient oracle
// ---------------------------------------------------------------------

fn n_param_tensors(state: &ModelState) -> usize {
    2 + 2 * state.projectors.len()
}

fn param_len(state: &ModelState, tensor: usize) -> usize {
    match tensor {
        0 => state.user_emb.values.len(),
        1 => state.item_emb.values.len(),
        t => {
            let p = (t - 2) / 2;
            if (t - 2) % 2 == 0 {
                state.projectors[p].weight.values.len()
            } else {
                state.projectors[p].bias.len()
            }
        }
    }
}

fn param_mut(state: &mut ModelState, tensor: usize, idx: usize) -> &mut f64 {
    match tensor {
        0 => &mut state.user_emb.values[idx],
        1 => &mut state.item_emb.values[idx],
        t => {
            let p = (t - 2) / 2;
            if (t - 2) % 2 == 0 {
                &mut state.projectors[p].weight.values[idx]
            } else {
                &mut state.projectors[p].bias[idx]
            }
        }
    }
}

fn analytic_at(
    g: &freedom::training::Gradients,
    state: &ModelState,
    tensor: usize,
    idx: usize,
) -> f64 {
    match tensor {
        0 => g.user_emb.values[idx],
        1 => g.item_emb.values[idx],
        t => {
            let p = (t - 2) / 2;
            let modality = state.projectors[p].modality;
            match g.projectors.iter().find(|x| x.0 == modality) {
                Some(gp) => {
                    if (t - 2) % 2 == 0 {
                        gp.1.values[idx]
                    } else {
                        gp.2[idx]
                    }
                }
                None => 0.0,
            }
        }
    }
}

fn batch_loss(
    state: &ModelState,
    graph: &ItemItemGraph,
    a_hat: &CsrMatrix,
    features: &[FeatureMatrix],
    batch: &[TrainTriple],
    lambda: f64,
) -> f64 {
    let trace = forward(state, graph, a_hat, features).unwrap();
    bpr_loss(batch, &trace, lambda)
}

pub struct FdReport {
    pub max_rel_err: f64,
    pub entries: usize,
}

/// Central finite differences over every parameter entry vs the analytic
/// gradients. Entries where both magnitudes sit below 1e-6 are compared
/// absolutely (the shared denominator floor), everything else relatively.
pub fn fd_check(
    state: &mut ModelState,
    graph: &ItemItemGraph,
    a_hat: &CsrMatrix,
    features: &[FeatureMatrix],
    batch: &[TrainTriple],
    lambda: f64,
    h: f64,
) -> FdReport {
    let analytic = {
        let trace = forward(state, graph, a_hat, features).unwrap();
        gradients(batch, &trace, graph, a_hat, state, features, lambda).unwrap()
    };
    let mut max_rel_err = 0.0f64;
    let mut entries = 0usize;
    for tensor in 0..n_param_tensors(state) {
        for idx in 0..param_len(state, tensor) {
            let orig = *param_mut(state, tensor, idx);
            *param_mut(state, tensor, idx) = orig + h;
            let up = batch_loss(state, graph, a_hat, features, batch, lambda);
            *param_mut(state, tensor, idx) = orig - h;
            let down = batch_loss(state, graph, a_hat, features, batch, lambda);
            *param_mut(state, tensor, idx) = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic_at(&analytic, state, tensor, idx);
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            max_rel_err = max_rel_err.max((a - numeric).abs() / denom);
            entries += 1;
        }
    }
    FdReport { max_rel_err, entries }
}

// ---------------------------------------------------------------------
// Ranking and metric oracles
// ---------------------------------------------------------------------

pub fn recall_oracle(lists: &[Vec<u32>], truth: &[Vec<u32>], k: usize) -> f64 {
    let mut sum = 0.0;
    let mut users = 0usize;
    for (list, t) in lists.iter().zip(truth) {
        if t.is_empty() {
            continue;
        }
        let t_set: HashSet<u32> = t.iter().copied().collect();
        let hits = list.iter().take(k).filter(|i| t_set.contains(i)).count();
        sum += hits as f64 / t.len() as f64;
        users += 1;
    }
    if users == 0 {
        0.0
    } else {
        sum / users as f64
    }
}

pub fn ndcg_oracle(lists: &[Vec<u32>], truth: &[Vec<u32>], k: usize) -> f64 {
    let mut sum = 0.0;
    let mut users = 0usize;
    for (list, t) in lists.iter().zip(truth) {
        if t.is_empty() {
            continue;
        }
        let t_set: HashSet<u32> = t.iter().copied().collect();
        let mut dcg = 0.0;
        for (pos, item) in list.iter().take(k).enumerate() {
            if t_set.contains(item) {
                dcg += 1.0 / ((pos + 2) as f64).log2();
            }
        }
        let mut idcg = 0.0;
        for pos in 0..k.min(t.len()) {
            idcg += 1.0 / ((pos + 2) as f64).log2();
        }
        sum += dcg / idcg;
        users += 1;
    }
    if users == 0 {
        0.0
    } else {
        sum / users as f64
    }
}

/// Full-sort all-ranking: every non-train item scored, sorted by score
/// descending with ascending-id ties, truncated to k.
pub fn rank_all_oracle(
    state: &ModelState,
    graph: &ItemItemGraph,
    adjacency: &BipartiteAdjacency,
    train: &InteractionMatrix,
    k: usize,
) -> Vec<Vec<u32>> {
    let trace = forward(state, graph, adjacency.full_normalized(), &[]).unwrap();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut out = Vec::with_capacity(train.n_users());
    for u in 0..train.n_users() {
        let h_u = trace.final_user.row(u);
        let mut scored: Vec<(f64, u32)> = (0..train.n_items())
            .filter(|&i| !train.has(u, i))
            .map(|i| (dot(h_u, trace.final_item.row(i)), i as u32))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        out.push(scored.into_iter().take(k).map(|(_, i)| i).collect());
    }
    out
}

/// Per-row top-k cosine neighbours by full sort: (column, weight) entries
/// sorted by column, one vec per row.
pub fn knn_oracle(x: &FeatureMatrix, k: usize, weighted: bool) -> Vec<Vec<(usize, f64)>> {
    let n = x.n_items();
    let d = x.dim();
    let mut unit = vec![vec![0.0; d]; n];
    for r in 0..n {
        let row = x.features.row(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for c in 0..d {
                unit[r][c] = row[c] / norm;
            }
        }
    }
    let mut out = Vec::with_capacity(n);
    for r in 0..n {
        if unit[r].iter().all(|&v| v == 0.0) {
            out.push(vec![(r, 1.0)]);
            continue;
        }
        let mut sims: Vec<(f64, usize)> = (0..n)
            .map(|j| (unit[r].iter().zip(&unit[j]).map(|(a, b)| a * b).sum::<f64>(), j))
            .collect();
        sims.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut picked: Vec<(usize, f64)> = sims
            .into_iter()
            .take(k.min(n))
            .map(|(s, j)| (j, if weighted { s.max(0.0) } else { 1.0 }))
            .collect();
        picked.sort_by_key(|&(j, _)| j);
        out.push(picked);
    }
    out
}

/// Recomputes degrees from scratch each round and filters until stable.
pub fn core_oracle(pairs: &[(u32, u32)], min_degree: usize) -> BTreeSet<(u32, u32)> {
    let mut set: BTreeSet<(u32, u32)> = pairs.iter().copied().collect();
    loop {
        let mut user_deg: HashMap<u32, usize> = HashMap::new();
        let mut item_deg: HashMap<u32, usize> = HashMap::new();
        for &(u, i) in &set {
            *user_deg.entry(u).or_default() += 1;
            *item_deg.entry(i).or_default() += 1;
        }
        let keep: BTreeSet<(u32, u32)> = set
            .iter()
            .copied()
            .filter(|&(u, i)| user_deg[&u] >= min_degree && item_deg[&i] >= min_degree)
            .collect();
        if keep.len() == set.len() {
            return keep;
        }
        set = keep;
    }
}

/// Exact retained-edge count for rho = p/q: ceil(e * (q - p) / q) in
/// integer arithmetic.
pub fn retained_oracle(e: usize, p: usize, q: usize) -> usize {
    e - (e * p) / q
}

/// Recall@k of ranking items by training popularity (descending count,
/// ascending id), with the user's training items masked.
pub fn popularity_recall(train: &InteractionMatrix, test: &[Vec<u32>], k: usize) -> f64 {
    let n_items = train.n_items();
    let mut counts = vec![0usize; n_items];
    for u in 0..train.n_users() {
        for &i in train.user_items(u) {
            counts[i] += 1;
        }
    }
    let mut order: Vec<usize> = (0..n_items).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut lists = Vec::with_capacity(train.n_users());
    for u in 0..train.n_users() {
        let list: Vec<u32> = order
            .iter()
            .copied()
            .filter(|&i| !train.has(u, i))
            .take(k)
            .map(|i| i as u32)
            .collect();
        lists.push(list);
    }
    recall_oracle(&lists, test, k)
}

// ---------------------------------------------------------------------
// Statistics helpers
// ---------------------------------------------------------------------

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut pos = 0;
    while pos < order.len() {
        let mut end = pos;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[pos]] {
            end += 1;
        }
        let rank = (pos + end) as f64 / 2.0 + 1.0;
        for &idx in &order[pos..=end] {
            out[idx] = rank;
        }
        pos = end + 1;
    }
    out
}

/// Spearman rank correlation with tie averaging.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..xs.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    cov / (vx.sqrt() * vy.sqrt())
}

/// Upper-tail p-value of a chi-square goodness-of-fit test against a flat
/// expectation, df = cells - 1.
pub fn chi_square_uniform_p(observed: &[u64], expected_per_cell: f64) -> f64 {
    let stat: f64 = observed
        .iter()
        .map(|&o| {
            let diff = o as f64 - expected_per_cell;
            diff * diff / expected_per_cell
        })
        .sum();
    let df = (observed.len() - 1) as f64;
    let dist = ChiSquared::new(df).unwrap();
    1.0 - dist.cdf(stat)
}

// ---------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------

pub struct BlockData {
    pub split: SplitDataset,
    pub features: Vec<FeatureMatrix>,
    pub pairs: Vec<(u32, u32)>,
}

/// Block-structured dataset: users interact only within their block
/// (Bernoulli p per in-block item, redrawn until each user has at least 3
/// interactions) and features are a block one-hot plus Gaussian noise.
pub fn block_dataset(
    n_users: usize,
    n_items: usize,
    n_blocks: usize,
    p: f64,
    sigma: f64,
    seed: u64,
) -> BlockData {
    assert_eq!(n_items % n_blocks, 0);
    let per_block = n_items / n_blocks;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for u in 0..n_users {
        let block = u % n_blocks;
        let base = block * per_block;
        loop {
            let items: Vec<u32> = (0..per_block)
                .filter(|_| rng.random::<f64>() < p)
                .map(|offset| (base + offset) as u32)
                .collect();
            if items.len() >= 3 {
                pairs.extend(items.into_iter().map(|i| (u as u32, i)));
                break;
            }
        }
    }
    let split = split_dataset(&pairs, n_users, n_items, (0.8, 0.1, 0.1), &mut rng).unwrap();
    let noise = Normal::new(0.0, sigma).unwrap();
    let feature = |modality: Modality, rng: &mut ChaCha8Rng| {
        let mut values = Vec::with_capacity(n_items * n_blocks);
        for i in 0..n_items {
            let block = i / per_block;
            for c in 0..n_blocks {
                let one_hot = if c == block { 1.0 } else { 0.0 };
                values.push(one_hot + noise.sample(rng));
            }
        }
        FeatureMatrix::new(modality, DenseMatrix::from_vec(n_items, n_blocks, values).unwrap())
            .unwrap()
    };
    let features = vec![
        feature(Modality::Visual, &mut rng),
        feature(Modality::Textual, &mut rng),
    ];
    BlockData { split, features, pairs }
}

/// Random non-negative feature matrix.
pub fn random_features(modality: Modality, n: usize, d: usize, rng: &mut ChaCha8Rng) -> FeatureMatrix {
    FeatureMatrix::new(
        modality,
        DenseMatrix::from_vec(n, d, (0..n * d).map(|_| rng.random()).collect()).unwrap(),
    )
    .unwrap()
}
