use std::path::PathBuf;

use infoplane::mnist::{verify_dir, Dataset, Split, PIXELS};

/// `INFOPLANE_MNIST_DIR`, else `data/mnist` at the workspace root.
fn data_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("INFOPLANE_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    if dir.join("t10k-labels-idx1-ubyte").exists() {
        Some(dir)
    } else {
        eprintln!("skipping: no MNIST files in {} (run `infoplane fetch`)", dir.display());
        None
    }
}

fn histogram(labels: &[u8]) -> [usize; 10] {
    let mut h = [0; 10];
    for &l in labels {
        h[l as usize] += 1;
    }
    h
}

#[test]
fn official_files_load_with_known_contents() {
    let Some(dir) = data_dir() else { return };
    verify_dir(&dir).unwrap();

    let train = Dataset::load(&dir, Split::Train).unwrap();
    assert_eq!(train.len(), 60_000);
    assert_eq!(train.images.cols(), PIXELS);
    assert_eq!(&train.labels[..5], &[5, 0, 4, 1, 9]);
    assert_eq!(histogram(&train.labels), [5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949]);
    let first: f64 = train.images.row(0).iter().sum();
    assert!((first * 255.0 - 27525.0).abs() < 1e-9);
    let max = train.images.as_slice().iter().cloned().fold(0.0, f64::max);
    assert_eq!(max, 1.0);

    let test = Dataset::load(&dir, Split::Test).unwrap();
    assert_eq!(test.len(), 10_000);
    assert_eq!(&test.labels[..5], &[7, 2, 1, 0, 4]);
    assert_eq!(histogram(&test.labels), [980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009]);
    let first: f64 = test.images.row(0).iter().sum();
    assert!((first * 255.0 - 18454.0).abs() < 1e-9);
}
