//! BPR training: triple sampling, loss, closed-form gradients, Adam, and
//! the epoch loop with per-epoch edge re-pruning and early stopping.
//!
//! Every propagation in the forward pass is linear, so backprop is
//! propagation by the transposed matrices: the mean readout's adjoint
//! spreads 1/(L_ui+1) across layer adjoints, the item-item path applies
//! the transposed graph L_ii times, and the projector gradient is an
//! outer-product accumulation over the batch items.

use crate::error::{Error, Result};
use crate::evaluation::{ndcg_at_k, rank_all, recall_at_k, SplitDataset};
use crate::interaction::{build_adjacency, prune_and_normalize, EdgePruner, InteractionMatrix, SamplingMode};
use crate::modality::{build_frozen_graph, FeatureMatrix, ItemItemGraph, Modality};
use crate::model::{forward, ForwardTrace, ModalityProjector, ModelState};
use crate::sparse::{spmm, transpose, CsrMatrix, DenseMatrix};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One BPR training instance: user, interacted item, non-interacted item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainTriple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Hyperparameters. Defaults follow the reference configuration; learning
/// rate, Adam moments, and batch size are exposed because no canonical
/// values exist for them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Weight of the modality-projection loss terms.
    pub lambda: f64,
    /// Fraction of user-item edges dropped each epoch.
    pub rho: f64,
    /// Weight of the visual graph in fusion; textual gets 1 - alpha_v.
    pub alpha_v: f64,
    pub k: usize,
    pub d: usize,
    pub l_ui: usize,
    pub l_ii: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables
    /// early stopping.
    pub patience: usize,
    pub seed: u64,
    pub sampling: SamplingMode,
    /// Uniform edge weights in the pruning sampler (degree-agnostic drop).
    pub uniform_pruning: bool,
    /// Weighted (clamped-cosine) item-item graph instead of the 0/1 one.
    pub weighted_item_graph: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            lambda: 1e-3,
            rho: 0.8,
            alpha_v: 0.1,
            k: 10,
            d: 64,
            l_ui: 2,
            l_ii: 1,
            batch_size: 2048,
            max_epochs: 1000,
            patience: 20,
            seed: 42,
            sampling: SamplingMode::WithoutReplacement,
            uniform_pruning: false,
            weighted_item_graph: false,
        }
    }
}

/// Uniform Xavier/Glorot initialization: U(-a, a), a = sqrt(6/(fan_in+fan_out)).
pub fn xavier_init(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    assert!(rows > 0 && cols > 0);
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * a)
        .collect();
    DenseMatrix { rows, cols, values }
}

/// Fresh parameters for a dataset: Xavier embeddings and projectors (zero
/// biases), drawn in a fixed order from the given rng.
pub fn init_state(
    n_users: usize,
    n_items: usize,
    features: &[FeatureMatrix],
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> ModelState {
    let user_emb = xavier_init(n_users, config.d, rng);
    let item_emb = xavier_init(n_items, config.d, rng);
    let projectors = features
        .iter()
        .map(|f| ModalityProjector {
            modality: f.modality,
            weight: xavier_init(f.dim(), config.d, rng),
            bias: vec![0.0; config.d],
        })
        .collect();
    ModelState { user_emb, item_emb, projectors, l_ui: config.l_ui, l_ii: config.l_ii }
}

/// One epoch's triples: shuffled pass over the training interactions (and
/// over again if `count` exceeds one pass), each positive paired with one
/// uniformly drawn non-interacted item.
pub fn sample_triples(
    r: &InteractionMatrix,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<TrainTriple>> {
    let n_items = r.n_items();
    let mut positives: Vec<(usize, usize)> = Vec::with_capacity(r.nnz());
    for u in 0..r.n_users() {
        let items = r.user_items(u);
        if items.len() >= n_items {
            return Err(Error::Dataset(format!(
                "user {} interacted with every item; no negative exists",
                u
            )));
        }
        for &i in items {
            positives.push((u, i));
        }
    }
    if positives.is_empty() {
        return Err(Error::Dataset("no training interactions to sample from".into()));
    }
    let mut triples = Vec::with_capacity(count);
    while triples.len() < count {
        positives.shuffle(rng);
        for &(u, i) in &positives {
            if triples.len() == count {
                break;
            }
            let mut attempts = 0;
            let j = loop {
                let cand = rng.random_range(0..n_items);
                if !r.has(u, cand) {
                    break cand;
                }
                attempts += 1;
                if attempts > 1_000_000 {
                    return Err(Error::Dataset(format!(
                        "could not draw a negative for user {}",
                        u
                    )));
                }
            };
            triples.push(TrainTriple { user: u, pos: i, neg: j });
        }
    }
    Ok(triples)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// -ln(sigmoid(x)), computed without overflow on either tail.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn score_gap(h_u: &[f64], h_i: &[f64], h_j: &[f64]) -> f64 {
    h_u.iter()
        .zip(h_i.iter().zip(h_j))
        .map(|(u, (i, j))| u * (i - j))
        .sum()
}

/// Summed BPR loss over the batch: the ID-representation term plus lambda
/// times one term per projected modality.
pub fn bpr_loss(batch: &[TrainTriple], trace: &ForwardTrace, lambda: f64) -> f64 {
    let mut total = 0.0;
    for t in batch {
        let h_u = trace.final_user.row(t.user);
        total += neg_log_sigmoid(score_gap(
            h_u,
            trace.final_item.row(t.pos),
            trace.final_item.row(t.neg),
        ));
        if lambda != 0.0 {
            for (_, p) in &trace.projected {
                total += lambda * neg_log_sigmoid(score_gap(h_u, p.row(t.pos), p.row(t.neg)));
            }
        }
    }
    total
}

/// Gradients of the summed batch loss for every parameter tensor.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub user_emb: DenseMatrix,
    pub item_emb: DenseMatrix,
    /// Per modality: (tag, dW, db), aligned with the features used forward.
    pub projectors: Vec<(Modality, DenseMatrix, Vec<f64>)>,
}

/// Closed-form backward pass matching `bpr_loss` over `forward`.
pub fn gradients(
    batch: &[TrainTriple],
    trace: &ForwardTrace,
    graph: &ItemItemGraph,
    a_hat: &CsrMatrix,
    state: &ModelState,
    features: &[FeatureMatrix],
    lambda: f64,
) -> Result<Gradients> {
    let m = state.n_users();
    let n = state.n_items();
    let d = state.embedding_dim();
    let mut g_user = DenseMatrix::zeros(m, d); // dL / d final_user
    let mut g_item = DenseMatrix::zeros(n, d); // dL / d final_item
    let mut g_proj: Vec<DenseMatrix> =
        trace.projected.iter().map(|_| DenseMatrix::zeros(n, d)).collect();
    let mut touched: Vec<usize> = Vec::with_capacity(batch.len() * 2);
    for t in batch {
        let h_u: Vec<f64> = trace.final_user.row(t.user).to_vec();
        let g = {
            let h_i = trace.final_item.row(t.pos);
            let h_j = trace.final_item.row(t.neg);
            let g = sigmoid(score_gap(&h_u, h_i, h_j)) - 1.0;
            let gu = g_user.row_mut(t.user);
            for c in 0..d {
                gu[c] += g * (h_i[c] - h_j[c]);
            }
            g
        };
        {
            let gi = g_item.row_mut(t.pos);
            for c in 0..d {
                gi[c] += g * h_u[c];
            }
            let gj = g_item.row_mut(t.neg);
            for c in 0..d {
                gj[c] -= g * h_u[c];
            }
        }
        if lambda != 0.0 {
            for (p_idx, (_, p)) in trace.projected.iter().enumerate() {
                let gm = {
                    let p_i = p.row(t.pos);
                    let p_j = p.row(t.neg);
                    let gm = lambda * (sigmoid(score_gap(&h_u, p_i, p_j)) - 1.0);
                    let gu = g_user.row_mut(t.user);
                    for c in 0..d {
                        gu[c] += gm * (p_i[c] - p_j[c]);
                    }
                    gm
                };
                let gp_i = g_proj[p_idx].row_mut(t.pos);
                for c in 0..d {
                    gp_i[c] += gm * h_u[c];
                }
                let gp_j = g_proj[p_idx].row_mut(t.neg);
                for c in 0..d {
                    gp_j[c] -= gm * h_u[c];
                }
            }
        }
        touched.push(t.pos);
        touched.push(t.neg);
    }

    // Mean-readout adjoint: dL/dE_0 = sum_{l=0..L} (A^T)^l (G / (L+1)).
    let mut a = DenseMatrix::vstack(&g_user, &g_item)?;
    a.scale(1.0 / (state.l_ui + 1) as f64);
    let a_hat_t = transpose(a_hat);
    let mut acc = a.clone();
    for _ in 0..state.l_ui {
        acc = spmm(&a_hat_t, &acc)?;
        acc.add_scaled(&a, 1.0);
    }
    let (d_user, d_item_ui) = acc.split_rows(m);

    // Item-item path: last-layer output, so the adjoint is (S^T)^{L_ii}.
    let mut d_item_mm = g_item;
    for _ in 0..state.l_ii {
        d_item_mm = spmm(graph.transposed(), &d_item_mm)?;
    }
    let mut d_item = d_item_ui;
    d_item.add_scaled(&d_item_mm, 1.0);

    // Projector gradients only involve the items the batch touched.
    touched.sort_unstable();
    touched.dedup();
    let mut d_projectors = Vec::with_capacity(features.len());
    for (p_idx, f) in features.iter().enumerate() {
        let d_m = f.dim();
        let mut dw = DenseMatrix::zeros(d_m, d);
        let mut db = vec![0.0; d];
        for &r in &touched {
            let gp = g_proj[p_idx].row(r);
            let x_r = f.features.row(r);
            for (a_idx, &xv) in x_r.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let dwr = dw.row_mut(a_idx);
                for c in 0..d {
                    dwr[c] += xv * gp[c];
                }
            }
            for c in 0..d {
                db[c] += gp[c];
            }
        }
        d_projectors.push((f.modality, dw, db));
    }
    Ok(Gradients { user_emb: d_user, item_emb: d_item, projectors: d_projectors })
}

/// Adam optimizer state; moment tensors mirror the parameter shapes.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m_user: DenseMatrix,
    v_user: DenseMatrix,
    m_item: DenseMatrix,
    v_item: DenseMatrix,
    m_proj: Vec<(Modality, DenseMatrix, Vec<f64>)>,
    v_proj: Vec<(Modality, DenseMatrix, Vec<f64>)>,
}

impl AdamState {
    pub fn new(state: &ModelState, lr: f64) -> Self {
        let zeros_like = |mx: &DenseMatrix| DenseMatrix::zeros(mx.rows, mx.cols);
        let proj_zeros = |s: &ModelState| {
            s.projectors
                .iter()
                .map(|p| (p.modality, zeros_like(&p.weight), vec![0.0; p.bias.len()]))
                .collect()
        };
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m_user: zeros_like(&state.user_emb),
            v_user: zeros_like(&state.user_emb),
            m_item: zeros_like(&state.item_emb),
            v_item: zeros_like(&state.item_emb),
            m_proj: proj_zeros(state),
            v_proj: proj_zeros(state),
        }
    }

    fn update(
        params: &mut [f64],
        grads: &[f64],
        m: &mut [f64],
        v: &mut [f64],
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        bc1: f64,
        bc2: f64,
    ) {
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }

    /// One bias-corrected Adam step over every parameter tensor.
    pub fn step(&mut self, state: &mut ModelState, grads: &Gradients) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        Self::update(
            &mut state.user_emb.values,
            &grads.user_emb.values,
            &mut self.m_user.values,
            &mut self.v_user.values,
            lr,
            b1,
            b2,
            eps,
            bc1,
            bc2,
        );
        Self::update(
            &mut state.item_emb.values,
            &grads.item_emb.values,
            &mut self.m_item.values,
            &mut self.v_item.values,
            lr,
            b1,
            b2,
            eps,
            bc1,
            bc2,
        );
        for p in state.projectors.iter_mut() {
            let Some(g_idx) = grads.projectors.iter().position(|g| g.0 == p.modality) else {
                continue;
            };
            let m_idx = self.m_proj.iter().position(|m| m.0 == p.modality).unwrap();
            let (_, gw, gb) = &grads.projectors[g_idx];
            Self::update(
                &mut p.weight.values,
                &gw.values,
                &mut self.m_proj[m_idx].1.values,
                &mut self.v_proj[m_idx].1.values,
                lr,
                b1,
                b2,
                eps,
                bc1,
                bc2,
            );
            Self::update(
                &mut p.bias,
                gb,
                &mut self.m_proj[m_idx].2,
                &mut self.v_proj[m_idx].2,
                lr,
                b1,
                b2,
                eps,
                bc1,
                bc2,
            );
        }
    }
}

/// One row of the per-epoch training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss per triple over the epoch.
    pub loss: f64,
    pub val_recall20: f64,
    pub val_ndcg20: f64,
}

/// Outcome of `fit`: the best-validation parameters and the full log.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: ModelState,
    pub log: Vec<EpochRecord>,
    /// 1-based epoch the returned parameters come from.
    pub best_epoch: usize,
}

/// Independent per-purpose seeds derived from the master seed (splitmix64).
fn derive_seed(master: u64, stream: u64, epoch: u64) -> u64 {
    let mut z = master
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ epoch.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_config(config: &TrainConfig) -> Result<()> {
    if config.lr <= 0.0 || !config.lr.is_finite() {
        return Err(Error::Parameter(format!("learning rate {} must be positive", config.lr)));
    }
    if config.lambda < 0.0 {
        return Err(Error::Parameter(format!("lambda {} must be non-negative", config.lambda)));
    }
    if config.d == 0 || config.batch_size == 0 || config.max_epochs == 0 {
        return Err(Error::Parameter(
            "d, batch_size, and max_epochs must all be positive".into(),
        ));
    }
    Ok(())
}

/// Trains from scratch and returns the parameters of the best-validation
/// epoch.
///
/// Per epoch: resample the pruned adjacency, run one shuffled pass of BPR
/// triples in batches with an Adam step per batch, then evaluate validation
/// R@20 on the full normalized adjacency. Stops after `patience` epochs
/// without improvement or at `max_epochs`. A non-finite loss aborts.
pub fn fit(
    dataset: &SplitDataset,
    features: &[FeatureMatrix],
    config: &TrainConfig,
) -> Result<FitResult> {
    check_config(config)?;
    if features.is_empty() {
        return Err(Error::Parameter("fit needs at least one feature modality".into()));
    }
    for f in features {
        if f.n_items() != dataset.n_items {
            return Err(Error::Dimension(format!(
                "{} features cover {} items, dataset has {}",
                f.modality,
                f.n_items(),
                dataset.n_items
            )));
        }
    }
    for u in 0..dataset.n_users {
        let held = dataset.train.user_items(u).len();
        if held == 0 {
            return Err(Error::Dataset(format!("user {} has no training interactions", u)));
        }
        if held >= dataset.n_items {
            return Err(Error::Dataset(format!(
                "user {} interacted with every item; no negative exists",
                u
            )));
        }
    }

    let graph = build_frozen_graph(features, config.k, config.alpha_v, config.weighted_item_graph)?;
    let adjacency = build_adjacency(&dataset.train);
    let pruner = if config.uniform_pruning {
        EdgePruner::uniform(&adjacency, config.rho)?
    } else {
        EdgePruner::degree_sensitive(&adjacency, config.rho)?
    }
    .with_mode(config.sampling);

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = init_state(dataset.n_users, dataset.n_items, features, config, &mut init_rng);
    let mut adam = AdamState::new(&state, config.lr);

    let mut log = Vec::new();
    let mut best_recall = f64::NEG_INFINITY;
    let mut best_state = state.clone();
    let mut best_epoch = 0usize;
    let mut stale = 0usize;

    for epoch in 1..=config.max_epochs {
        let pruned;
        let a_hat: &CsrMatrix = if config.rho > 0.0 {
            pruned = prune_and_normalize(&adjacency, &pruner, derive_seed(config.seed, 1, epoch as u64))?;
            &pruned
        } else {
            adjacency.full_normalized()
        };
        let mut triple_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2, epoch as u64));
        let triples = sample_triples(&dataset.train, dataset.train.nnz(), &mut triple_rng)?;
        let mut loss_sum = 0.0;
        for batch in triples.chunks(config.batch_size) {
            let trace = forward(&state, &graph, a_hat, features)?;
            let batch_loss = bpr_loss(batch, &trace, config.lambda);
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += batch_loss;
            let grads = gradients(batch, &trace, &graph, a_hat, &state, features, config.lambda)?;
            adam.step(&mut state, &grads);
        }
        let loss = loss_sum / triples.len() as f64;

        let lists = rank_all(&state, &graph, &adjacency, &dataset.train, 20)?;
        let val_recall20 = recall_at_k(&lists, &dataset.val, 20);
        let val_ndcg20 = ndcg_at_k(&lists, &dataset.val, 20);
        log.push(EpochRecord { epoch, loss, val_recall20, val_ndcg20 });
        log::info!(
            "epoch {epoch}: loss {loss:.6}, val R@20 {val_recall20:.6}, val N@20 {val_ndcg20:.6}"
        );

        if val_recall20 > best_recall {
            best_recall = val_recall20;
            best_state = state.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                log::info!("early stop at epoch {epoch}; best epoch {best_epoch}");
                break;
            }
        }
    }
    Ok(FitResult { state: best_state, log, best_epoch })
}
