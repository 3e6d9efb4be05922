//! Subcommand implementations behind the binary. Each takes a resolved
//! `RunConfig`, reads and writes only under the configured directories, and
//! returns the artifact it produced so callers and tests can inspect it.
//!
//! Directory conventions: `prepare` reads
//! `<data_dir>/<dataset>/interactions.tsv` (plus optional feature files)
//! and writes the prepared dataset to `<out_dir>/<dataset>/`. The other
//! commands read a prepared `<data_dir>/<dataset>/` and write artifacts
//! directly into `<out_dir>/`.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluation::{ndcg_at_k, rank_all, recall_at_k, SplitDataset};
use crate::interaction::{build_adjacency, InteractionMatrix};
use crate::io::{
    load_checkpoint, read_fmat, read_pairs, save_checkpoint, write_fmat, write_metrics_csv,
    write_pairs, write_results_json, write_spectral_csv, write_spectral_json, ResultsSummary,
};
use crate::modality::{build_frozen_graph, FeatureMatrix, Modality};
use crate::model::ModelState;
use crate::prepare::{prepare, subset_rows};
use crate::spectral::{spectral_report, SpectralReport};
use crate::training::{fit, TrainConfig};
use std::fs;
use std::path::{Path, PathBuf};

const FEATURE_FILES: [(&str, Modality); 2] = [
    ("image_feat.fmat", Modality::Visual),
    ("text_feat.fmat", Modality::Textual),
];

/// Builds the run configuration from an optional file plus CLI overrides.
pub fn load_config(
    path: Option<&Path>,
    seed: Option<u64>,
    ablation: Option<&str>,
    out: Option<&str>,
) -> Result<RunConfig> {
    let mut config = match path {
        Some(p) => RunConfig::parse(&fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        config.train.seed = seed;
    }
    if let Some(tag) = ablation {
        config.ablation = tag.parse()?;
    }
    if let Some(out) = out {
        config.out_dir = out.to_string();
    }
    Ok(config)
}

fn dataset_dir(config: &RunConfig) -> PathBuf {
    Path::new(&config.data_dir).join(&config.dataset)
}

/// Loads whichever feature files exist in the dataset directory, visual
/// first; at least one must be present.
fn load_features(dir: &Path) -> Result<Vec<FeatureMatrix>> {
    let mut features = Vec::new();
    for (file, modality) in FEATURE_FILES {
        let path = dir.join(file);
        if path.exists() {
            features.push(FeatureMatrix::new(modality, read_fmat(&path)?)?);
        }
    }
    if features.is_empty() {
        return Err(Error::Dataset(format!(
            "no feature files (image_feat.fmat / text_feat.fmat) in {}",
            dir.display()
        )));
    }
    Ok(features)
}

/// Loads a prepared split; item count comes from the feature files so
/// items without train interactions stay addressable.
fn load_split(dir: &Path, n_items: usize) -> Result<SplitDataset> {
    let read = |name: &str| -> Result<Vec<(u32, u32)>> { read_pairs(dir.join(name)) };
    let train = read("train.tsv")?;
    let val = read("val.tsv")?;
    let test = read("test.tsv")?;
    let n_users = train
        .iter()
        .chain(&val)
        .chain(&test)
        .map(|&(u, _)| u as usize + 1)
        .max()
        .ok_or_else(|| Error::Dataset(format!("no interactions under {}", dir.display())))?;
    let to_lists = |pairs: &[(u32, u32)]| -> Result<Vec<Vec<u32>>> {
        let mut lists = vec![Vec::new(); n_users];
        for &(u, i) in pairs {
            if i as usize >= n_items {
                return Err(Error::Dataset(format!(
                    "item {} out of range for {} feature rows",
                    i, n_items
                )));
            }
            lists[u as usize].push(i);
        }
        for l in &mut lists {
            l.sort_unstable();
            l.dedup();
        }
        Ok(lists)
    };
    Ok(SplitDataset {
        train: InteractionMatrix::from_pairs(n_users, n_items, &train)?,
        val: to_lists(&val)?,
        test: to_lists(&test)?,
        n_users,
        n_items,
    })
}

fn rank_metrics(
    state: &ModelState,
    features: &[FeatureMatrix],
    t: &TrainConfig,
    split: &SplitDataset,
    truth: &[Vec<u32>],
) -> Result<(f64, f64, f64, f64)> {
    let graph = build_frozen_graph(features, t.k, t.alpha_v, t.weighted_item_graph)?;
    let adjacency = build_adjacency(&split.train);
    let lists = rank_all(state, &graph, &adjacency, &split.train, 20)?;
    Ok((
        recall_at_k(&lists, truth, 10),
        recall_at_k(&lists, truth, 20),
        ndcg_at_k(&lists, truth, 10),
        ndcg_at_k(&lists, truth, 20),
    ))
}

fn check_finite(summary: &ResultsSummary) -> Result<()> {
    for v in [summary.r_at_10, summary.r_at_20, summary.n_at_10, summary.n_at_20] {
        if !v.is_finite() {
            return Err(Error::Domain(format!("non-finite metric in results: {:?}", summary)));
        }
    }
    Ok(())
}

/// Filters, densifies, and splits the raw interactions; subsets any
/// feature files to the surviving items.
pub fn cmd_prepare(config: &RunConfig) -> Result<()> {
    let in_dir = dataset_dir(config);
    let pairs = read_pairs(in_dir.join("interactions.tsv"))?;
    let prepared = prepare(
        &pairs,
        (config.train_ratio, config.val_ratio, config.test_ratio),
        config.train.seed,
    )?;
    let out_dir = Path::new(&config.out_dir).join(&config.dataset);
    fs::create_dir_all(&out_dir)?;
    write_pairs(out_dir.join("train.tsv"), &prepared.train)?;
    write_pairs(out_dir.join("val.tsv"), &prepared.val)?;
    write_pairs(out_dir.join("test.tsv"), &prepared.test)?;
    let map_pairs = |map: &[u32]| -> Vec<(u32, u32)> {
        map.iter().enumerate().map(|(idx, &orig)| (idx as u32, orig)).collect()
    };
    write_pairs(out_dir.join("user_map.tsv"), &map_pairs(&prepared.user_map))?;
    write_pairs(out_dir.join("item_map.tsv"), &map_pairs(&prepared.item_map))?;
    fs::write(
        out_dir.join("stats.json"),
        serde_json::to_string_pretty(&prepared.stats)
            .map_err(|e| Error::Format { path: "stats.json".into(), reason: e.to_string() })?
            + "\n",
    )?;
    for (file, _) in FEATURE_FILES {
        let src = in_dir.join(file);
        if src.exists() {
            let full = read_fmat(&src)?;
            write_fmat(out_dir.join(file), &subset_rows(&full, &prepared.item_map)?)?;
        }
    }
    log::info!(
        "prepared {}: {} users, {} items, {} interactions ({} train / {} val / {} test)",
        config.dataset,
        prepared.stats.n_users,
        prepared.stats.n_items,
        prepared.stats.n_interactions,
        prepared.stats.n_train,
        prepared.stats.n_val,
        prepared.stats.n_test
    );
    Ok(())
}

/// Trains on a prepared dataset and writes the checkpoint, per-epoch
/// metrics, final test results, and the exact configuration used.
pub fn cmd_train(config: &RunConfig) -> Result<ResultsSummary> {
    let dir = dataset_dir(config);
    let features = load_features(&dir)?;
    let split = load_split(&dir, features[0].n_items())?;
    let effective = config.effective_train();
    let fitted = fit(&split, &features, &effective)?;

    let out_dir = Path::new(&config.out_dir);
    fs::create_dir_all(out_dir)?;
    let mut used = config.clone();
    used.train = effective.clone();
    fs::write(out_dir.join("config_used.txt"), used.canonical_string())?;
    save_checkpoint(out_dir.join("model.frdm"), &fitted.state)?;
    write_metrics_csv(out_dir.join("metrics.csv"), &fitted.log)?;

    let (r10, r20, n10, n20) = rank_metrics(&fitted.state, &features, &effective, &split, &split.test)?;
    let summary = ResultsSummary {
        dataset: config.dataset.clone(),
        config_hash: used.hash(),
        r_at_10: r10,
        r_at_20: r20,
        n_at_10: n10,
        n_at_20: n20,
        best_epoch: fitted.best_epoch,
    };
    check_finite(&summary)?;
    write_results_json(out_dir.join("results.json"), &summary)?;
    log::info!(
        "trained {}: best epoch {}, test R@20 {:.6}",
        config.dataset,
        summary.best_epoch,
        summary.r_at_20
    );
    Ok(summary)
}

/// Re-evaluates a saved checkpoint on the test split and writes a results
/// file. `best_epoch` is 0 here: the checkpoint does not carry it.
pub fn cmd_eval(config: &RunConfig) -> Result<ResultsSummary> {
    let dir = dataset_dir(config);
    let features = load_features(&dir)?;
    let split = load_split(&dir, features[0].n_items())?;
    let checkpoint_path = match &config.checkpoint {
        Some(p) => PathBuf::from(p),
        None => Path::new(&config.out_dir).join("model.frdm"),
    };
    let state = load_checkpoint(&checkpoint_path)?;
    if state.n_users() != split.n_users || state.n_items() != split.n_items {
        return Err(Error::Dimension(format!(
            "checkpoint is {}x{} but dataset has {} users and {} items",
            state.n_users(),
            state.n_items(),
            split.n_users,
            split.n_items
        )));
    }
    let effective = config.effective_train();
    let (r10, r20, n10, n20) = rank_metrics(&state, &features, &effective, &split, &split.test)?;
    let mut used = config.clone();
    used.train = effective;
    let summary = ResultsSummary {
        dataset: config.dataset.clone(),
        config_hash: used.hash(),
        r_at_10: r10,
        r_at_20: r20,
        n_at_10: n10,
        n_at_20: n20,
        best_epoch: 0,
    };
    check_finite(&summary)?;
    let out_dir = Path::new(&config.out_dir);
    fs::create_dir_all(out_dir)?;
    write_results_json(out_dir.join("results.json"), &summary)?;
    Ok(summary)
}

/// Computes the spectral report for the dataset's item graphs and writes
/// it as JSON and CSV.
pub fn cmd_spectral(config: &RunConfig) -> Result<SpectralReport> {
    let dir = dataset_dir(config);
    let features = load_features(&dir)?;
    let report = spectral_report(&features, config.train.k, config.train.alpha_v)?;
    let out_dir = Path::new(&config.out_dir);
    fs::create_dir_all(out_dir)?;
    write_spectral_json(out_dir.join("spectral.json"), &report)?;
    write_spectral_csv(out_dir.join("spectral.csv"), &report)?;
    log::info!(
        "spectral {}: fused frozen laplacian {:.6}, weighted {:.6}",
        config.dataset,
        report.frozen.laplacian_lambda_max,
        report.weighted.laplacian_lambda_max
    );
    Ok(report)
}
