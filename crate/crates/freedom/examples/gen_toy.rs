//! Generates a small block-structured toy dataset: users interact only
//! within their item block and features are a noisy block indicator, so the
//! pipeline has real signal to learn. Output lands under `<root>/toy/`,
//! ready for the `prepare` subcommand.
//!
//! Usage: `cargo run --example gen_toy [root] [seed]` (defaults: `data`, 42).

use freedom::io::{write_fmat, write_pairs};
use freedom::sparse::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::PathBuf;

const N_USERS: usize = 200;
const N_ITEMS: usize = 120;
const N_BLOCKS: usize = 4;
const IN_BLOCK_P: f64 = 0.35;
const NOISE_SIGMA: f64 = 0.1;

fn features(dim: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let per_block = N_ITEMS / N_BLOCKS;
    let noise = Normal::new(0.0, NOISE_SIGMA).unwrap();
    let mut values = Vec::with_capacity(N_ITEMS * dim);
    for i in 0..N_ITEMS {
        let block = i / per_block;
        for c in 0..dim {
            let base = if c == block { 1.0 } else { 0.0 };
            values.push((base + noise.sample(rng)).max(0.0));
        }
    }
    DenseMatrix::from_vec(N_ITEMS, dim, values).unwrap()
}

fn main() {
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let seed: u64 =
        args.next().map(|s| s.parse().expect("seed must be an integer")).unwrap_or(42);
    let dir = root.join("toy");
    std::fs::create_dir_all(&dir).expect("create output directory");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_block = N_ITEMS / N_BLOCKS;
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    for u in 0..N_USERS as u32 {
        let start = (u as usize % N_BLOCKS * per_block) as u32;
        loop {
            let before = pairs.len();
            for i in 0..per_block as u32 {
                if rng.random::<f64>() < IN_BLOCK_P {
                    pairs.push((u, start + i));
                }
            }
            // enough history to survive 5-core filtering and a 3-way split
            if pairs.len() - before >= 6 {
                break;
            }
            pairs.truncate(before);
        }
    }
    write_pairs(dir.join("interactions.tsv"), &pairs).expect("write interactions");
    write_fmat(dir.join("image_feat.fmat"), &features(8, &mut rng)).expect("write image features");
    write_fmat(dir.join("text_feat.fmat"), &features(6, &mut rng)).expect("write text features");
    println!(
        "wrote {} interactions for {N_USERS} users x {N_ITEMS} items under {}",
        pairs.len(),
        dir.display()
    );
}
