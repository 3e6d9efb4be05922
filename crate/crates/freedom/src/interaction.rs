//! User-item bipartite graph, degree-sensitive edge pruning, and the
//! normalized adjacencies used for training and inference.
//!
//! Pruning draws a fresh sample every epoch; everything else here is built
//! once and read by shared reference afterwards.

use crate::error::{Error, Result};
use crate::sparse::{normalize_sym, CsrMatrix, DegreeVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

/// Binary user-item interaction matrix (M users x N items).
#[derive(Debug, Clone)]
pub struct InteractionMatrix {
    pub matrix: CsrMatrix,
}

impl InteractionMatrix {
    /// Builds from (user, item) pairs; duplicates collapse to one entry.
    pub fn from_pairs(n_users: usize, n_items: usize, pairs: &[(u32, u32)]) -> Result<Self> {
        if n_users == 0 || n_items == 0 {
            return Err(Error::Parameter("interaction matrix needs M, N >= 1".into()));
        }
        let mut sorted: Vec<(u32, u32)> = pairs.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_users];
        for &(u, i) in &sorted {
            if u as usize >= n_users || i as usize >= n_items {
                return Err(Error::Dimension(format!(
                    "interaction ({}, {}) outside {}x{}",
                    u, i, n_users, n_items
                )));
            }
            rows[u as usize].push((i as usize, 1.0));
        }
        Ok(InteractionMatrix { matrix: CsrMatrix::from_rows(n_items, rows)? })
    }

    pub fn n_users(&self) -> usize {
        self.matrix.rows
    }

    pub fn n_items(&self) -> usize {
        self.matrix.cols
    }

    pub fn nnz(&self) -> usize {
        self.matrix.nnz()
    }

    /// Items user `u` interacted with, ascending.
    pub fn user_items(&self, u: usize) -> &[usize] {
        self.matrix.row_entries(u).0
    }

    pub fn has(&self, u: usize, i: usize) -> bool {
        self.user_items(u).binary_search(&i).is_ok()
    }
}

/// Symmetric block adjacency over user and item nodes. Users occupy node
/// indices [0, M), items [M, M+N). `edge_list` holds each undirected edge
/// once as (user_node, item_node) in row-major interaction order.
#[derive(Debug, Clone)]
pub struct BipartiteAdjacency {
    pub adj: CsrMatrix,
    pub n_users: usize,
    pub n_items: usize,
    pub edge_list: Vec<(usize, usize)>,
    full_norm: OnceLock<CsrMatrix>,
}

/// Assembles [[0, R], [R^T, 0]] plus the canonical edge list.
pub fn build_adjacency(r: &InteractionMatrix) -> BipartiteAdjacency {
    let m = r.n_users();
    let n = r.n_items();
    let size = m + n;
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); size];
    let mut edge_list = Vec::with_capacity(r.nnz());
    for u in 0..m {
        for &i in r.user_items(u) {
            rows[u].push((m + i, 1.0));
            rows[m + i].push((u, 1.0));
            edge_list.push((u, m + i));
        }
    }
    // Item rows accumulated in user order are already column-sorted.
    let adj = CsrMatrix::from_rows(size, rows).expect("block adjacency is well-formed");
    BipartiteAdjacency { adj, n_users: m, n_items: n, edge_list, full_norm: OnceLock::new() }
}

impl BipartiteAdjacency {
    /// Node degrees (users then items).
    pub fn degrees(&self) -> DegreeVector {
        self.adj.row_sums()
    }

    /// Normalized unpruned adjacency used at inference time; computed once.
    pub fn full_normalized(&self) -> &CsrMatrix {
        self.full_norm
            .get_or_init(|| normalize_sym(&self.adj).expect("adjacency is square and non-negative"))
    }
}

/// Per-edge retention weight 1/sqrt(deg_i * deg_j), aligned with
/// `edge_list`. Fixed before training; never re-learned.
pub fn edge_probabilities(a: &BipartiteAdjacency) -> Vec<f64> {
    let deg = a.degrees();
    a.edge_list
        .iter()
        .map(|&(i, j)| 1.0 / (deg.values[i].sqrt() * deg.values[j].sqrt()))
        .collect()
}

/// How the per-epoch edge sample is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// n distinct edges, successive draws proportional to remaining weights.
    WithoutReplacement,
    /// n multinomial draws with duplicates collapsed (may keep fewer edges).
    WithReplacementDedup,
}

/// Edge retention weights plus the pruning ratio.
#[derive(Debug, Clone)]
pub struct EdgePruner {
    pub probs: Vec<f64>,
    pub rho: f64,
    pub mode: SamplingMode,
}

impl EdgePruner {
    /// Degree-sensitive weights 1/sqrt(deg_i * deg_j).
    pub fn degree_sensitive(a: &BipartiteAdjacency, rho: f64) -> Result<Self> {
        Self::check_rho(rho)?;
        Ok(EdgePruner { probs: edge_probabilities(a), rho, mode: SamplingMode::WithoutReplacement })
    }

    /// Uniform weights; the degree-agnostic pruning variant.
    pub fn uniform(a: &BipartiteAdjacency, rho: f64) -> Result<Self> {
        Self::check_rho(rho)?;
        Ok(EdgePruner { probs: vec![1.0; a.edge_list.len()], rho, mode: SamplingMode::WithoutReplacement })
    }

    pub fn with_mode(mut self, mode: SamplingMode) -> Self {
        self.mode = mode;
        self
    }

    fn check_rho(rho: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::Parameter(format!("rho {} outside [0, 1)", rho)));
        }
        Ok(())
    }
}

/// ceil(|E| * (1 - rho)) with a small slack so binary fractions of rho do
/// not tip the ceiling by one.
pub fn retained_count(n_edges: usize, rho: f64) -> usize {
    if n_edges == 0 {
        return 0;
    }
    n_edges - ((n_edges as f64 * rho + 1e-6).floor() as usize).min(n_edges)
}

/// Indices into `edge_list` of the retained edges, ascending. Same seed,
/// same sample.
pub fn sample_edges(a: &BipartiteAdjacency, pruner: &EdgePruner, rng_seed: u64) -> Vec<usize> {
    let e = a.edge_list.len();
    let n = retained_count(e, pruner.rho);
    if n >= e {
        return (0..e).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    match pruner.mode {
        SamplingMode::WithoutReplacement => {
            // Exponential-key reservoir ranking: taking the n largest
            // ln(u)/w keys is distributed exactly as sequential weighted
            // draws without replacement.
            let mut keyed: Vec<(f64, usize)> = pruner
                .probs
                .iter()
                .enumerate()
                .map(|(idx, &w)| {
                    let mut u: f64 = rng.random();
                    if u == 0.0 {
                        u = f64::MIN_POSITIVE;
                    }
                    (u.ln() / w, idx)
                })
                .collect();
            keyed.select_nth_unstable_by(n - 1, |x, y| {
                y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1))
            });
            let mut sel: Vec<usize> = keyed[..n].iter().map(|&(_, idx)| idx).collect();
            sel.sort_unstable();
            sel
        }
        SamplingMode::WithReplacementDedup => {
            let mut cumulative = Vec::with_capacity(e);
            let mut total = 0.0;
            for &w in &pruner.probs {
                total += w;
                cumulative.push(total);
            }
            let mut keep = vec![false; e];
            for _ in 0..n {
                let r = rng.random::<f64>() * total;
                let idx = cumulative.partition_point(|&c| c <= r).min(e - 1);
                keep[idx] = true;
            }
            keep.iter()
                .enumerate()
                .filter_map(|(idx, &k)| k.then_some(idx))
                .collect()
        }
    }
}

/// Samples n = ceil(|E|(1-rho)) edges, rebuilds the symmetric adjacency
/// from them, and normalizes by the degrees of the sampled subgraph.
pub fn prune_and_normalize(
    a: &BipartiteAdjacency,
    pruner: &EdgePruner,
    rng_seed: u64,
) -> Result<CsrMatrix> {
    let size = a.n_users + a.n_items;
    let sel = sample_edges(a, pruner, rng_seed);
    if sel.is_empty() {
        log::warn!("edge pruning retained zero edges; adjacency is empty this epoch");
        return Ok(CsrMatrix::empty(size, size));
    }
    if sel.len() == a.edge_list.len() {
        return normalize_sym(&a.adj);
    }
    let mut triplets = Vec::with_capacity(sel.len() * 2);
    for &idx in &sel {
        let (i, j) = a.edge_list[idx];
        triplets.push((i, j, 1.0));
        triplets.push((j, i, 1.0));
    }
    normalize_sym(&CsrMatrix::from_triplets(size, size, &triplets)?)
}
