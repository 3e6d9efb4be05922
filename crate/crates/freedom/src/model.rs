//! Embedding state and the forward computation.
//!
//! The whole forward map is linear: item-item propagation keeps the last
//! layer, user-item propagation takes the mean over layer outputs
//! (layer 0 included), and the two item representations are summed.
//! Modality projections feed the loss only; scoring sees ID-derived
//! representations exclusively.

use crate::error::{Error, Result};
use crate::modality::{FeatureMatrix, ItemItemGraph, Modality};
use crate::sparse::{spmm, CsrMatrix, DenseMatrix};

/// Affine projector for one modality's raw features (d_m x d plus bias).
#[derive(Debug, Clone)]
pub struct ModalityProjector {
    pub modality: Modality,
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

/// All trainable parameters plus the propagation depths.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub user_emb: DenseMatrix,
    pub item_emb: DenseMatrix,
    pub projectors: Vec<ModalityProjector>,
    pub l_ui: usize,
    pub l_ii: usize,
}

impl ModelState {
    pub fn n_users(&self) -> usize {
        self.user_emb.rows
    }

    pub fn n_items(&self) -> usize {
        self.item_emb.rows
    }

    pub fn embedding_dim(&self) -> usize {
        self.user_emb.cols
    }

    pub fn projector(&self, modality: Modality) -> Option<&ModalityProjector> {
        self.projectors.iter().find(|p| p.modality == modality)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.embedding_dim();
        if self.item_emb.cols != d {
            return Err(Error::Dimension("item embedding dim differs from user dim".into()));
        }
        for p in &self.projectors {
            if p.weight.cols != d || p.bias.len() != d {
                return Err(Error::Dimension(format!(
                    "{} projector output dim differs from embedding dim",
                    p.modality
                )));
            }
        }
        let finite = self.user_emb.values.iter().all(|v| v.is_finite())
            && self.item_emb.values.iter().all(|v| v.is_finite())
            && self.projectors.iter().all(|p| {
                p.weight.values.iter().all(|v| v.is_finite())
                    && p.bias.iter().all(|v| v.is_finite())
            });
        if !finite {
            return Err(Error::Domain("non-finite model parameter".into()));
        }
        Ok(())
    }
}

/// Every intermediate of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Item-item layer outputs h^0 .. h^{L_ii}.
    pub item_layers: Vec<DenseMatrix>,
    /// Stacked user-item layer outputs e^0 .. e^{L_ui}, each (M+N) x d.
    pub ui_layers: Vec<DenseMatrix>,
    /// Last item-item layer (no readout).
    pub item_mm: DenseMatrix,
    /// User block of the mean readout.
    pub user_rep: DenseMatrix,
    /// Item block of the mean readout.
    pub item_rep_ui: DenseMatrix,
    /// Final user representation (= user_rep).
    pub final_user: DenseMatrix,
    /// Final item representation (= item_mm + item_rep_ui).
    pub final_item: DenseMatrix,
    /// Per-modality projected features, loss path only.
    pub projected: Vec<(Modality, DenseMatrix)>,
}

fn item_item_layers(
    graph: &ItemItemGraph,
    item_emb: &DenseMatrix,
    l_ii: usize,
) -> Result<Vec<DenseMatrix>> {
    if graph.n_items() != item_emb.rows {
        return Err(Error::Dimension(format!(
            "item graph has {} items, embeddings {}",
            graph.n_items(),
            item_emb.rows
        )));
    }
    let mut layers = Vec::with_capacity(l_ii + 1);
    layers.push(item_emb.clone());
    for _ in 0..l_ii {
        let next = spmm(graph.matrix(), layers.last().unwrap())?;
        layers.push(next);
    }
    Ok(layers)
}

/// Item-item propagation; returns the last layer only.
pub fn propagate_item_item(
    graph: &ItemItemGraph,
    item_emb: &DenseMatrix,
    l_ii: usize,
) -> Result<DenseMatrix> {
    Ok(item_item_layers(graph, item_emb, l_ii)?.pop().unwrap())
}

fn user_item_layers(
    a_hat: &CsrMatrix,
    user_emb: &DenseMatrix,
    item_emb: &DenseMatrix,
    l_ui: usize,
) -> Result<Vec<DenseMatrix>> {
    let stacked = DenseMatrix::vstack(user_emb, item_emb)?;
    if a_hat.rows != stacked.rows || a_hat.cols != stacked.rows {
        return Err(Error::Dimension(format!(
            "user-item adjacency is {}x{}, embeddings stack to {}",
            a_hat.rows, a_hat.cols, stacked.rows
        )));
    }
    let mut layers = Vec::with_capacity(l_ui + 1);
    layers.push(stacked);
    for _ in 0..l_ui {
        let next = spmm(a_hat, layers.last().unwrap())?;
        layers.push(next);
    }
    Ok(layers)
}

fn mean_readout(layers: &[DenseMatrix]) -> DenseMatrix {
    let mut mean = DenseMatrix::zeros(layers[0].rows, layers[0].cols);
    for layer in layers {
        mean.add_scaled(layer, 1.0);
    }
    mean.scale(1.0 / layers.len() as f64);
    mean
}

/// User-item propagation with mean readout over layers 0..L_ui, split back
/// into the user block and the item block.
pub fn propagate_user_item(
    a_hat: &CsrMatrix,
    user_emb: &DenseMatrix,
    item_emb: &DenseMatrix,
    l_ui: usize,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let layers = user_item_layers(a_hat, user_emb, item_emb, l_ui)?;
    let mean = mean_readout(&layers);
    Ok(mean.split_rows(user_emb.rows))
}

/// h_u = user_rep, h_i = item_mm + item_rep_ui.
pub fn fuse_representations(
    item_mm: &DenseMatrix,
    user_rep: &DenseMatrix,
    item_rep_ui: &DenseMatrix,
) -> Result<(DenseMatrix, DenseMatrix)> {
    if item_mm.rows != item_rep_ui.rows || item_mm.cols != item_rep_ui.cols {
        return Err(Error::Dimension("item representation shapes differ".into()));
    }
    let mut item = item_mm.clone();
    item.add_scaled(item_rep_ui, 1.0);
    Ok((user_rep.clone(), item))
}

/// Row-wise affine projection x W + b of one modality's features.
pub fn project_modality(
    x: &FeatureMatrix,
    weight: &DenseMatrix,
    bias: &[f64],
) -> Result<DenseMatrix> {
    if weight.cols != bias.len() {
        return Err(Error::Dimension("projector bias length differs from output dim".into()));
    }
    let mut out = x.features.matmul(weight)?;
    for i in 0..out.rows {
        for (o, b) in out.row_mut(i).iter_mut().zip(bias) {
            *o += b;
        }
    }
    Ok(out)
}

/// Inner-product score of one user against one item.
pub fn score(h_u: &[f64], h_i: &[f64]) -> f64 {
    debug_assert_eq!(h_u.len(), h_i.len());
    h_u.iter().zip(h_i).map(|(a, b)| a * b).sum()
}

/// Full forward pass. `features` may be empty when the caller only needs
/// graph-propagated representations (inference); each supplied modality
/// must have a projector in `state`.
pub fn forward(
    state: &ModelState,
    graph: &ItemItemGraph,
    a_hat: &CsrMatrix,
    features: &[FeatureMatrix],
) -> Result<ForwardTrace> {
    let item_layers = item_item_layers(graph, &state.item_emb, state.l_ii)?;
    let item_mm = item_layers.last().unwrap().clone();
    let ui_layers = user_item_layers(a_hat, &state.user_emb, &state.item_emb, state.l_ui)?;
    let mean = mean_readout(&ui_layers);
    let (user_rep, item_rep_ui) = mean.split_rows(state.n_users());
    let (final_user, final_item) = fuse_representations(&item_mm, &user_rep, &item_rep_ui)?;
    let mut projected = Vec::with_capacity(features.len());
    for f in features {
        let p = state.projector(f.modality).ok_or_else(|| {
            Error::Parameter(format!("no projector for modality {}", f.modality))
        })?;
        projected.push((f.modality, project_modality(f, &p.weight, &p.bias)?));
    }
    Ok(ForwardTrace {
        item_layers,
        ui_layers,
        item_mm,
        user_rep,
        item_rep_ui,
        final_user,
        final_item,
        projected,
    })
}
