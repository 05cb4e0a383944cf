#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hfvae::data::idx::{encode_images, encode_labels, parse_images, parse_labels, read_maybe_gz, IdxImages};
use hfvae_cli::{LearningRate, RunConfig};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn mnist_dir() -> PathBuf {
    repo_root().join("data/mnist")
}

fn head(prefix: &str, n: usize) -> (IdxImages, Vec<u8>) {
    let dir = mnist_dir();
    let imgs = parse_images(&read_maybe_gz(&dir.join(format!("{prefix}-images-idx3-ubyte.gz"))).unwrap()).unwrap();
    let labs = parse_labels(&read_maybe_gz(&dir.join(format!("{prefix}-labels-idx1-ubyte.gz"))).unwrap()).unwrap();
    let px = imgs.rows * imgs.cols;
    let cut = IdxImages {
        count: n,
        pixels: imgs.pixels[..n * px].to_vec(),
        ..imgs
    };
    (cut, labs[..n].to_vec())
}

/// Writes the first `train` training and `test` test digits as plain IDX
/// files into `dir`.
pub fn write_mnist_fixture(dir: &Path, train: usize, test: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for (prefix, n) in [("train", train), ("t10k", test)] {
        let (imgs, labs) = head(prefix, n);
        std::fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), encode_images(&imgs)).unwrap();
        std::fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), encode_labels(&labs)).unwrap();
    }
}

/// A small, fast configuration over a fixture directory.
pub fn tiny_config(data: &Path, out: &Path) -> RunConfig {
    RunConfig {
        mnist_dir: data.to_path_buf(),
        validation_size: 20,
        latent: 4,
        hidden: 16,
        flow_length: 2,
        lr: LearningRate::Fixed(1e-3),
        batch_size: 25,
        max_epochs: 2,
        warmup_epochs: 5,
        lookahead: 10,
        seed: 11,
        out_dir: out.to_path_buf(),
        ..RunConfig::default()
    }
}
