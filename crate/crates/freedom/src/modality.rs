//! Frozen item-item graph construction: per-modality cosine-kNN graphs,
//! symmetric normalization, and alpha-weighted fusion.
//!
//! Everything here is deterministic; the only float work is cosine
//! similarity and degree normalization, both order-fixed.

use crate::error::{Error, Result};
use crate::sparse::{normalize_sym, transpose, CsrMatrix, DenseMatrix};
use rayon::prelude::*;
use std::fmt;
use std::str::FromStr;

/// Feature channel an item representation comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Visual,
    Textual,
}

impl Modality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Textual => "textual",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visual" => Ok(Modality::Visual),
            "textual" => Ok(Modality::Textual),
            other => Err(Error::Parameter(format!("unknown modality '{}'", other))),
        }
    }
}

/// Raw per-item features of one modality (N items x d_m).
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub modality: Modality,
    pub features: DenseMatrix,
}

impl FeatureMatrix {
    pub fn new(modality: Modality, features: DenseMatrix) -> Result<Self> {
        if features.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "{} features contain NaN or Inf",
                modality
            )));
        }
        Ok(FeatureMatrix { modality, features })
    }

    pub fn n_items(&self) -> usize {
        self.features.rows
    }

    pub fn dim(&self) -> usize {
        self.features.cols
    }
}

/// Cosine top-k neighborhood graph over feature rows.
///
/// Each row keeps its min(k, N) most similar columns, self included via the
/// natural ranking (self-cosine is 1). Ties break toward the smaller column
/// index, so an identical duplicate at a lower index can displace the self
/// entry. Unweighted entries are 1; weighted entries are the cosine clamped
/// at 0. An all-zero feature row degenerates to a lone self entry of 1, and
/// its cosine against every other row counts as 0.
pub fn knn_graph(x: &FeatureMatrix, k: usize, weighted: bool) -> Result<CsrMatrix> {
    if k < 1 {
        return Err(Error::Parameter("knn_graph needs k >= 1".into()));
    }
    let n = x.n_items();
    if n == 0 {
        return Err(Error::Parameter("knn_graph needs at least one item".into()));
    }
    let d = x.dim();
    let mut unit = x.features.clone();
    let mut zero_row = vec![false; n];
    for i in 0..n {
        let row = unit.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            zero_row[i] = true;
        } else {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
    let kk = k.min(n);
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if zero_row[i] {
                return vec![(i, 1.0)];
            }
            let xi = unit.row(i);
            let mut sims: Vec<(f64, usize)> = (0..n)
                .map(|j| {
                    if zero_row[j] {
                        (0.0, j)
                    } else {
                        let xj = unit.row(j);
                        let mut acc = 0.0;
                        for c in 0..d {
                            acc += xi[c] * xj[c];
                        }
                        (acc, j)
                    }
                })
                .collect();
            // Total order (similarity desc, index asc): distinct keys make
            // the unstable partition deterministic.
            let by_rank = |a: &(f64, usize), b: &(f64, usize)| {
                b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1))
            };
            if kk < n {
                sims.select_nth_unstable_by(kk - 1, by_rank);
                sims.truncate(kk);
            }
            let mut entries: Vec<(usize, f64)> = sims
                .into_iter()
                .map(|(s, j)| (j, if weighted { s.max(0.0) } else { 1.0 }))
                .collect();
            entries.sort_unstable_by_key(|e| e.0);
            entries
        })
        .collect();
    CsrMatrix::from_rows(n, rows)
}

/// Weighted sum of per-modality normalized graphs.
///
/// With both modalities present the visual graph takes weight alpha_v and
/// the textual graph 1 - alpha_v; a lone modality keeps full weight. The
/// output covers the union of the input supports, except that entries whose
/// fused value is exactly zero are dropped (so a weight of 1.0 returns the
/// weighted-1 input unchanged).
pub fn fuse_modalities(graphs: &[(Modality, CsrMatrix)], alpha_v: f64) -> Result<CsrMatrix> {
    if graphs.is_empty() {
        return Err(Error::Parameter("fuse_modalities needs at least one graph".into()));
    }
    if graphs.len() > 2 {
        return Err(Error::Parameter("at most one graph per modality".into()));
    }
    if graphs.len() == 2 && graphs[0].0 == graphs[1].0 {
        return Err(Error::Parameter(format!(
            "modality {} given twice",
            graphs[0].0
        )));
    }
    if !(0.0..=1.0).contains(&alpha_v) {
        return Err(Error::Parameter(format!("alpha_v {} outside [0, 1]", alpha_v)));
    }
    let n = graphs[0].1.rows;
    for (_, g) in graphs {
        if g.rows != n || g.cols != n {
            return Err(Error::Dimension(format!(
                "fuse_modalities expects {0}x{0} graphs, got {1}x{2}",
                n, g.rows, g.cols
            )));
        }
    }
    let weight = |m: Modality| -> f64 {
        if graphs.len() == 1 {
            1.0
        } else {
            match m {
                Modality::Visual => alpha_v,
                Modality::Textual => 1.0 - alpha_v,
            }
        }
    };
    let mut rows_entries: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut merged: Vec<(usize, f64)> = Vec::new();
        for (m, g) in graphs {
            let w = weight(*m);
            let (cols, vals) = g.row_entries(i);
            for (&j, &v) in cols.iter().zip(vals) {
                match merged.binary_search_by_key(&j, |e| e.0) {
                    Ok(p) => merged[p].1 += w * v,
                    Err(p) => merged.insert(p, (j, w * v)),
                }
            }
        }
        merged.retain(|&(_, v)| v != 0.0);
        rows_entries.push(merged);
    }
    CsrMatrix::from_rows(n, rows_entries)
}

/// Item-item graph fixed before training. Construction is the only way to
/// set its contents; downstream code reads it by shared reference.
#[derive(Debug, Clone)]
pub struct ItemItemGraph {
    matrix: CsrMatrix,
    matrix_t: CsrMatrix,
    k: usize,
    alpha_v: f64,
    weighted: bool,
}

impl ItemItemGraph {
    /// Normalized, fused adjacency.
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Transpose of the adjacency, cached for backward passes.
    pub fn transposed(&self) -> &CsrMatrix {
        &self.matrix_t
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alpha_v(&self) -> f64 {
        self.alpha_v
    }

    pub fn weighted(&self) -> bool {
        self.weighted
    }

    pub fn n_items(&self) -> usize {
        self.matrix.rows
    }
}

/// Full graph pipeline: per-modality kNN, symmetric normalization, fusion.
/// `weighted=true` keeps clamped cosines as edge weights instead of 0/1
/// memberships.
pub fn build_frozen_graph(
    features: &[FeatureMatrix],
    k: usize,
    alpha_v: f64,
    weighted: bool,
) -> Result<ItemItemGraph> {
    if features.is_empty() {
        return Err(Error::Parameter("build_frozen_graph needs at least one modality".into()));
    }
    let n = features[0].n_items();
    for f in features {
        if f.n_items() != n {
            return Err(Error::Dimension(format!(
                "modality {} has {} items, expected {}",
                f.modality,
                f.n_items(),
                n
            )));
        }
    }
    let mut graphs = Vec::with_capacity(features.len());
    for f in features {
        let knn = knn_graph(f, k, weighted)?;
        graphs.push((f.modality, normalize_sym(&knn)?));
    }
    let matrix = fuse_modalities(&graphs, alpha_v)?;
    let matrix_t = transpose(&matrix);
    Ok(ItemItemGraph { matrix, matrix_t, k, alpha_v, weighted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feat(modality: Modality, rows: usize, cols: usize, values: Vec<f64>) -> FeatureMatrix {
        FeatureMatrix::new(modality, DenseMatrix::from_vec(rows, cols, values).unwrap()).unwrap()
    }

    fn random_features(
        modality: Modality,
        n: usize,
        d: usize,
        rng: &mut ChaCha8Rng,
    ) -> FeatureMatrix {
        let values = (0..n * d).map(|_| rng.random::<f64>()).collect();
        feat(modality, n, d, values)
    }

    /// Brute-force reference: full similarity list, same tie rule.
    fn knn_support_oracle(x: &FeatureMatrix, k: usize) -> Vec<Vec<usize>> {
        let n = x.n_items();
        let d = x.dim();
        let norm = |i: usize| x.features.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        (0..n)
            .map(|i| {
                if norm(i) == 0.0 {
                    return vec![i];
                }
                let mut sims: Vec<(f64, usize)> = (0..n)
                    .map(|j| {
                        let nj = norm(j);
                        if nj == 0.0 {
                            return (0.0, j);
                        }
                        let mut acc = 0.0;
                        for c in 0..d {
                            acc += x.features.get(i, c) / norm(i) * (x.features.get(j, c) / nj);
                        }
                        (acc, j)
                    })
                    .collect();
                sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
                let mut cols: Vec<usize> = sims.iter().take(k.min(n)).map(|s| s.1).collect();
                cols.sort_unstable();
                cols
            })
            .collect()
    }

    #[test]
    fn duplicate_rows_displace_self() {
        let x = feat(Modality::Visual, 2, 2, vec![3.0, 4.0, 3.0, 4.0]);
        let g = knn_graph(&x, 1, false).unwrap();
        assert_eq!(g.row_entries(0), (&[0usize][..], &[1.0][..]));
        assert_eq!(g.row_entries(1), (&[0usize][..], &[1.0][..]));
    }

    #[test]
    fn orthogonal_rows_k1_is_identity_structure() {
        let x = feat(Modality::Visual, 3, 3, vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0]);
        let g = knn_graph(&x, 1, false).unwrap();
        for i in 0..3 {
            assert_eq!(g.row_entries(i), (&[i][..], &[1.0][..]));
        }
    }

    #[test]
    fn zero_feature_row_gets_self_entry_in_both_variants() {
        let x = feat(Modality::Textual, 3, 2, vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        for weighted in [false, true] {
            let g = knn_graph(&x, 2, weighted).unwrap();
            assert_eq!(g.row_entries(1), (&[1usize][..], &[1.0][..]));
        }
    }

    #[test]
    fn k_at_least_n_takes_all_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_features(Modality::Visual, 4, 3, &mut rng);
        let g = knn_graph(&x, 9, false).unwrap();
        for i in 0..4 {
            assert_eq!(g.row_entries(i).0, &[0, 1, 2, 3]);
        }
    }

    #[test]
    fn weighted_clamps_negative_cosine() {
        let x = feat(Modality::Visual, 2, 2, vec![1.0, 0.0, -1.0, 0.0]);
        let g = knn_graph(&x, 2, true).unwrap();
        // Row 0: self cosine 1, the opposite vector clamps to 0.
        assert_eq!(g.row_entries(0), (&[0usize, 1][..], &[1.0, 0.0][..]));
        let u = knn_graph(&x, 2, false).unwrap();
        assert_eq!(u.row_entries(0), (&[0usize, 1][..], &[1.0, 1.0][..]));
    }

    #[test]
    fn knn_rejects_k_zero() {
        let x = feat(Modality::Visual, 2, 1, vec![1.0, 2.0]);
        assert!(matches!(knn_graph(&x, 0, false), Err(Error::Parameter(_))));
    }

    #[test]
    fn knn_support_matches_bruteforce_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for round in 0..20 {
            let x = random_features(Modality::Visual, 20, 6, &mut rng);
            let g = knn_graph(&x, 5, false).unwrap();
            let oracle = knn_support_oracle(&x, 5);
            for i in 0..20 {
                assert_eq!(g.row_entries(i).0, &oracle[i][..], "round {} row {}", round, i);
            }
        }
    }

    #[test]
    fn row_degree_is_min_k_n_before_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_features(Modality::Visual, 12, 4, &mut rng);
        for k in [1, 3, 12, 40] {
            let g = knn_graph(&x, k, false).unwrap();
            for i in 0..12 {
                assert_eq!(g.row_entries(i).0.len(), k.min(12));
            }
        }
    }

    #[test]
    fn fuse_alpha_one_returns_visual_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let v = normalize_sym(&knn_graph(&random_features(Modality::Visual, 8, 3, &mut rng), 3, false).unwrap()).unwrap();
        let t = normalize_sym(&knn_graph(&random_features(Modality::Textual, 8, 4, &mut rng), 3, false).unwrap()).unwrap();
        let fused = fuse_modalities(&[(Modality::Visual, v.clone()), (Modality::Textual, t)], 1.0).unwrap();
        assert_eq!(fused, v);
    }

    #[test]
    fn fuse_identical_graphs_half_weight_is_identity_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let v = normalize_sym(&knn_graph(&random_features(Modality::Visual, 8, 3, &mut rng), 3, false).unwrap()).unwrap();
        let fused = fuse_modalities(
            &[(Modality::Visual, v.clone()), (Modality::Textual, v.clone())],
            0.5,
        )
        .unwrap();
        assert_eq!(fused, v);
    }

    #[test]
    fn fuse_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..10 {
            let v = normalize_sym(&knn_graph(&random_features(Modality::Visual, 10, 3, &mut rng), 4, false).unwrap()).unwrap();
            let t = normalize_sym(&knn_graph(&random_features(Modality::Textual, 10, 5, &mut rng), 4, false).unwrap()).unwrap();
            let fused =
                fuse_modalities(&[(Modality::Visual, v.clone()), (Modality::Textual, t.clone())], 0.1)
                    .unwrap();
            let mut oracle = v.to_dense();
            oracle.scale(0.1);
            oracle.add_scaled(&t.to_dense(), 0.9);
            assert!(fused.to_dense().max_abs_diff(&oracle) < 1e-15);
        }
    }

    #[test]
    fn fuse_rejects_shape_mismatch() {
        let a = CsrMatrix::identity(3);
        let b = CsrMatrix::identity(4);
        let r = fuse_modalities(&[(Modality::Visual, a), (Modality::Textual, b)], 0.5);
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn frozen_graph_orthogonal_features_weighted_is_identity() {
        // Orthogonal rows: all cross cosines are 0; in the weighted variant
        // they clamp to 0 and drop at fusion, leaving exactly the identity
        // for any k.
        let x = feat(
            Modality::Visual,
            4,
            4,
            vec![
                2.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.5,
            ],
        );
        for k in [1, 2, 4, 7] {
            let g = build_frozen_graph(std::slice::from_ref(&x), k, 0.1, true).unwrap();
            assert_eq!(g.matrix(), &CsrMatrix::identity(4), "k = {}", k);
        }
        let g = build_frozen_graph(std::slice::from_ref(&x), 1, 0.1, false).unwrap();
        assert_eq!(g.matrix(), &CsrMatrix::identity(4));
    }

    #[test]
    fn frozen_graph_rows_sum_to_one_unweighted() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let v = random_features(Modality::Visual, 30, 6, &mut rng);
        let t = random_features(Modality::Textual, 30, 4, &mut rng);
        let g = build_frozen_graph(&[v, t], 5, 0.1, false).unwrap();
        let sums = g.matrix().row_sums();
        for (i, s) in sums.values.iter().enumerate() {
            assert!((s - 1.0).abs() < 1e-9, "row {} sums to {}", i, s);
        }
        assert!(g.matrix().values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn frozen_graph_transpose_cache_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let v = random_features(Modality::Visual, 15, 5, &mut rng);
        let g = build_frozen_graph(&[v], 4, 0.1, false).unwrap();
        assert_eq!(&transpose(g.matrix()), g.transposed());
    }

    #[test]
    fn max_element_unweighted_below_weighted() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for round in 0..50 {
            let n = 10 + (round % 20);
            let v = random_features(Modality::Visual, n, 5, &mut rng);
            let t = random_features(Modality::Textual, n, 3, &mut rng);
            let feats = [v, t];
            let frozen = build_frozen_graph(&feats, 4, 0.1, false).unwrap();
            let weighted = build_frozen_graph(&feats, 4, 0.1, true).unwrap();
            assert!(
                frozen.matrix().max_value() <= weighted.matrix().max_value() + 1e-12,
                "round {}: {} vs {}",
                round,
                frozen.matrix().max_value(),
                weighted.matrix().max_value()
            );
        }
    }
}
