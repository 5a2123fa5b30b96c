#![allow(dead_code)]

use std::fs;
use std::path::Path;

use infoplane::mnist::{Dataset, IMAGE_MAGIC, LABEL_MAGIC, PIXELS};
use infoplane::numerics::{Matrix, SeededRng};

/// Learnable stand-in for MNIST: class `c` lights a band of pixels whose
/// position depends on `c`, on top of sparse noise.
pub fn synthetic_pixels(n: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = SeededRng::new(seed);
    let mut pixels = vec![0u8; n * PIXELS];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = rng.below(10);
        labels.push(class as u8);
        let img = &mut pixels[i * PIXELS..(i + 1) * PIXELS];
        for p in 0..70 {
            img[class * 70 + p] = 128 + rng.below(128) as u8;
        }
        for _ in 0..40 {
            img[rng.below(PIXELS)] = rng.below(256) as u8;
        }
    }
    (pixels, labels)
}

pub fn synthetic_dataset(n: usize, seed: u64) -> Dataset {
    let (pixels, labels) = synthetic_pixels(n, seed);
    let data = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Dataset::new(Matrix::from_vec(n, PIXELS, data).unwrap(), labels).unwrap()
}

pub fn idx_images(pixels: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    b.extend_from_slice(&((pixels.len() / PIXELS) as u32).to_be_bytes());
    b.extend_from_slice(&28u32.to_be_bytes());
    b.extend_from_slice(&28u32.to_be_bytes());
    b.extend_from_slice(pixels);
    b
}

pub fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    b.extend_from_slice(labels);
    b
}

/// Writes a synthetic train/test pair in IDX format under `dir`.
pub fn write_synthetic_idx(dir: &Path, n_train: usize, n_test: usize) {
    fs::create_dir_all(dir).unwrap();
    for (prefix, n, seed) in [("train", n_train, 11), ("t10k", n_test, 12)] {
        let (pixels, labels) = synthetic_pixels(n, seed);
        fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), idx_images(&pixels)).unwrap();
        fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), idx_labels(&labels)).unwrap();
    }
}
