use proptest::prelude::*;
use xlab_core::datasets::{load_dataset, load_idx_images, load_idx_labels, LabeledImageSet, Registry};
use xlab_core::nn::Tensor;

fn set_from_bytes(pixels: Vec<u8>, labels: Vec<u8>) -> LabeledImageSet {
    let n = labels.len();
    let images = Tensor::new(vec![n, 28, 28, 1], pixels.iter().map(|&b| b as f32 / 255.0).collect()).unwrap();
    LabeledImageSet::new("synthetic", images, labels).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn idx_round_trip_is_bit_exact(
        n in 1usize..4,
        seed in any::<u64>(),
        gzip in any::<bool>(),
    ) {
        let pixels: Vec<u8> = (0..n * 784).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
        let labels: Vec<u8> = (0..n).map(|i| ((seed >> i) % 10) as u8).collect();
        let set = set_from_bytes(pixels, labels);
        let dir = tempfile::tempdir().unwrap();
        let (img, lbl) = set.write_idx(dir.path(), "train", gzip).unwrap();
        let images = load_idx_images(&img).unwrap();
        prop_assert!(images.data().iter().zip(set.images.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(load_idx_labels(&lbl).unwrap(), set.labels);
    }
}

#[test]
fn standard_layout_loads_plain_and_gzip() {
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("mnist");
    std::fs::create_dir(&dir).unwrap();
    let train = set_from_bytes(vec![7; 3 * 784], vec![1, 2, 3]);
    let val = set_from_bytes(vec![255; 2 * 784], vec![9, 0]);
    train.write_idx(&dir, "train", true).unwrap();
    val.write_idx(&dir, "t10k", false).unwrap();
    let (t, v) = load_dataset(&Registry::standard(root.path()), "mnist").unwrap();
    assert_eq!((t.len(), v.len()), (3, 2));
    assert!(v.images.data().iter().all(|&p| p == 1.0));
    assert_eq!(t.labels, vec![1, 2, 3]);
}

#[test]
fn mismatched_counts_and_missing_files_fail() {
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("kmnist");
    std::fs::create_dir(&dir).unwrap();
    let train = set_from_bytes(vec![0; 2 * 784], vec![1, 2]);
    train.write_idx(&dir, "train", false).unwrap();
    // Overwrite labels with a 3-label file.
    xlab_core::datasets::write_idx_labels(&dir.join("train-labels-idx1-ubyte"), &[1, 2, 3], false).unwrap();
    train.write_idx(&dir, "t10k", false).unwrap();
    let reg = Registry::standard(root.path());
    let err = load_dataset(&reg, "kmnist").unwrap_err();
    assert!(err.to_string().contains("2 images but 3 labels"), "{err}");
    let err = load_dataset(&reg, "fashion_mnist").unwrap_err();
    assert!(err.to_string().contains("fashion_mnist"), "{err}");
    assert!(load_dataset(&reg, "unknown").unwrap_err().to_string().contains("unknown dataset"));
}
