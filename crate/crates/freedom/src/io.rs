//! On-disk formats: feature matrices, checkpoints, interaction TSVs, and
//! the CSV/JSON artifacts the pipeline emits.
//!
//! Feature files ("FMAT"): magic, u32 row count, u32 column count, then
//! row-major f32 little-endian values. Checkpoints ("FRDM"): magic, u32
//! version, the five model dimensions, then named f64 tensors so files
//! stay self-describing.

use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::model::{ModalityProjector, ModelState};
use crate::sparse::DenseMatrix;
use crate::spectral::SpectralReport;
use crate::training::EpochRecord;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

const FMAT_MAGIC: &[u8; 4] = b"FMAT";
const FRDM_MAGIC: &[u8; 4] = b"FRDM";
const FRDM_VERSION: u32 = 1;

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), reason: reason.into() }
}

fn read_u32(r: &mut impl Read, path: &Path, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| format_err(path, format!("truncated while reading {}", what)))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_magic(r: &mut impl Read, path: &Path, expected: &[u8; 4]) -> Result<()> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| format_err(path, "file too short for magic"))?;
    if &buf != expected {
        return Err(format_err(
            path,
            format!(
                "bad magic {:?}, expected {}",
                buf,
                String::from_utf8_lossy(expected)
            ),
        ));
    }
    Ok(())
}

/// Writes a dense matrix as an f32 feature file.
pub fn write_fmat(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    let path = path.as_ref();
    for &v in &m.values {
        if v.abs() > f32::MAX as f64 {
            return Err(format_err(path, format!("value {} does not fit in f32", v)));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FMAT_MAGIC)?;
    w.write_all(&(m.rows as u32).to_le_bytes())?;
    w.write_all(&(m.cols as u32).to_le_bytes())?;
    for &v in &m.values {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an f32 feature file into a dense matrix.
pub fn read_fmat(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r, path, FMAT_MAGIC)?;
    let rows = read_u32(&mut r, path, "row count")? as usize;
    let cols = read_u32(&mut r, path, "column count")? as usize;
    let mut values = Vec::with_capacity(rows * cols);
    let mut buf = [0u8; 4];
    for i in 0..rows * cols {
        r.read_exact(&mut buf)
            .map_err(|_| format_err(path, format!("truncated at value {} of {}", i, rows * cols)))?;
        values.push(f32::from_le_bytes(buf) as f64);
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(format_err(path, "trailing bytes after matrix data"));
    }
    DenseMatrix::from_vec(rows, cols, values)
        .map_err(|e| format_err(path, format!("invalid matrix: {}", e)))
}

fn write_tensor(w: &mut impl Write, name: &str, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(rows as u32).to_le_bytes())?;
    w.write_all(&(cols as u32).to_le_bytes())?;
    for &v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Saves model parameters as named f64 tensors.
pub fn save_checkpoint(path: impl AsRef<Path>, state: &ModelState) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FRDM_MAGIC)?;
    for dim in [
        FRDM_VERSION,
        state.n_users() as u32,
        state.n_items() as u32,
        state.embedding_dim() as u32,
        state.l_ui as u32,
        state.l_ii as u32,
        (2 + 2 * state.projectors.len()) as u32,
    ] {
        w.write_all(&dim.to_le_bytes())?;
    }
    write_tensor(&mut w, "user_emb", state.user_emb.rows, state.user_emb.cols, &state.user_emb.values)?;
    write_tensor(&mut w, "item_emb", state.item_emb.rows, state.item_emb.cols, &state.item_emb.values)?;
    for p in &state.projectors {
        write_tensor(&mut w, &format!("w_{}", p.modality), p.weight.rows, p.weight.cols, &p.weight.values)?;
        write_tensor(&mut w, &format!("b_{}", p.modality), 1, p.bias.len(), &p.bias)?;
    }
    w.flush()?;
    Ok(())
}

fn read_tensor(r: &mut impl Read, path: &Path) -> Result<(String, DenseMatrix)> {
    let name_len = read_u32(r, path, "tensor name length")? as usize;
    if name_len > 256 {
        return Err(format_err(path, format!("unreasonable tensor name length {}", name_len)));
    }
    let mut name_buf = vec![0u8; name_len];
    r.read_exact(&mut name_buf)
        .map_err(|_| format_err(path, "truncated tensor name"))?;
    let name = String::from_utf8(name_buf)
        .map_err(|_| format_err(path, "tensor name is not UTF-8"))?;
    let rows = read_u32(r, path, "tensor rows")? as usize;
    let cols = read_u32(r, path, "tensor cols")? as usize;
    let mut values = Vec::with_capacity(rows * cols);
    let mut buf = [0u8; 8];
    for _ in 0..rows * cols {
        r.read_exact(&mut buf)
            .map_err(|_| format_err(path, format!("truncated tensor '{}'", name)))?;
        values.push(f64::from_le_bytes(buf));
    }
    let m = DenseMatrix::from_vec(rows, cols, values)
        .map_err(|e| format_err(path, format!("tensor '{}': {}", name, e)))?;
    Ok((name, m))
}

/// Loads a checkpoint, validating dimensions and tensor names.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r, path, FRDM_MAGIC)?;
    let version = read_u32(&mut r, path, "version")?;
    if version != FRDM_VERSION {
        return Err(format_err(path, format!("unsupported version {}", version)));
    }
    let m = read_u32(&mut r, path, "user count")? as usize;
    let n = read_u32(&mut r, path, "item count")? as usize;
    let d = read_u32(&mut r, path, "embedding dim")? as usize;
    let l_ui = read_u32(&mut r, path, "user-item depth")? as usize;
    let l_ii = read_u32(&mut r, path, "item-item depth")? as usize;
    let n_tensors = read_u32(&mut r, path, "tensor count")? as usize;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        tensors.push(read_tensor(&mut r, path)?);
    }
    let mut take = |name: &str| -> Result<DenseMatrix> {
        let idx = tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| format_err(path, format!("missing tensor '{}'", name)))?;
        Ok(tensors.remove(idx).1)
    };
    let user_emb = take("user_emb")?;
    let item_emb = take("item_emb")?;
    let mut projectors = Vec::new();
    let remaining: Vec<String> = tensors.iter().map(|(n, _)| n.clone()).collect();
    for name in &remaining {
        let Some(suffix) = name.strip_prefix("w_") else {
            if name.starts_with("b_") {
                continue;
            }
            return Err(format_err(path, format!("unknown tensor '{}'", name)));
        };
        let modality = Modality::from_str(suffix)
            .map_err(|e| format_err(path, format!("tensor '{}': {}", name, e)))?;
        let idx = tensors.iter().position(|(n, _)| n == name).unwrap();
        let weight = tensors.remove(idx).1;
        let b_name = format!("b_{}", suffix);
        let b_idx = tensors
            .iter()
            .position(|(n, _)| *n == b_name)
            .ok_or_else(|| format_err(path, format!("missing tensor '{}'", b_name)))?;
        let bias_m = tensors.remove(b_idx).1;
        if bias_m.rows != 1 {
            return Err(format_err(path, format!("tensor '{}' must have one row", b_name)));
        }
        projectors.push(ModalityProjector { modality, weight, bias: bias_m.values });
    }
    if !tensors.is_empty() {
        return Err(format_err(
            path,
            format!("unexpected tensor '{}'", tensors[0].0),
        ));
    }
    let state = ModelState { user_emb, item_emb, projectors, l_ui, l_ii };
    if state.n_users() != m || state.n_items() != n || state.embedding_dim() != d {
        return Err(format_err(path, "header dimensions disagree with tensor shapes"));
    }
    state
        .validate()
        .map_err(|e| format_err(path, format!("inconsistent checkpoint: {}", e)))?;
    Ok(state)
}

/// Reads tab-separated user/item pairs; a third timestamp column is
/// accepted and ignored.
pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<(u32, u32)>> {
    let path = path.as_ref();
    let r = BufReader::new(File::open(path)?);
    let mut pairs = Vec::new();
    for (line_no, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let parse = |field: Option<&str>, what: &str| -> Result<u32> {
            field
                .and_then(|f| f.trim().parse::<u32>().ok())
                .ok_or_else(|| {
                    format_err(path, format!("line {}: bad or missing {}", line_no + 1, what))
                })
        };
        let user = parse(cols.next(), "user id")?;
        let item = parse(cols.next(), "item id")?;
        let rest = cols.count();
        if rest > 1 {
            return Err(format_err(
                path,
                format!("line {}: expected at most 3 columns", line_no + 1),
            ));
        }
        pairs.push((user, item));
    }
    Ok(pairs)
}

/// Writes user/item pairs as a two-column TSV.
pub fn write_pairs(path: impl AsRef<Path>, pairs: &[(u32, u32)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &(u, i) in pairs {
        writeln!(w, "{}\t{}", u, i)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the per-epoch training log.
pub fn write_metrics_csv(path: impl AsRef<Path>, log: &[EpochRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,loss,val_recall20,val_ndcg20")?;
    for rec in log {
        writeln!(w, "{},{},{},{}", rec.epoch, rec.loss, rec.val_recall20, rec.val_ndcg20)?;
    }
    w.flush()?;
    Ok(())
}

/// Final test metrics for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsSummary {
    pub dataset: String,
    pub config_hash: String,
    #[serde(rename = "R@10")]
    pub r_at_10: f64,
    #[serde(rename = "R@20")]
    pub r_at_20: f64,
    #[serde(rename = "N@10")]
    pub n_at_10: f64,
    #[serde(rename = "N@20")]
    pub n_at_20: f64,
    pub best_epoch: usize,
}

pub fn write_results_json(path: impl AsRef<Path>, results: &ResultsSummary) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, results)
        .map_err(|e| format_err(path, e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_results_json(path: impl AsRef<Path>) -> Result<ResultsSummary> {
    let path = path.as_ref();
    let r = BufReader::new(File::open(path)?);
    serde_json::from_reader(r).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_spectral_json(path: impl AsRef<Path>, report: &SpectralReport) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report)
        .map_err(|e| format_err(path, e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// One row per (graph, variant): the fused graph first, then each modality.
pub fn write_spectral_csv(path: impl AsRef<Path>, report: &SpectralReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "graph,variant,n,adjacency_lambda_max,adjacency_converged,laplacian_lambda_max,laplacian_converged,row_sum_max,max_elem"
    )?;
    let mut row = |graph: &str, variant: &str, v: &crate::spectral::VariantSpectrum| {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            graph,
            variant,
            v.n,
            v.adjacency_lambda_max,
            v.adjacency_converged,
            v.laplacian_lambda_max,
            v.laplacian_converged,
            v.row_sum_max,
            v.max_elem
        )
    };
    row("fused", "frozen", &report.frozen)?;
    row("fused", "weighted", &report.weighted)?;
    for m in &report.per_modality {
        row(&m.modality, "frozen", &m.frozen)?;
        row(&m.modality, "weighted", &m.weighted)?;
    }
    drop(row);
    w.flush()?;
    Ok(())
}
