use std::collections::HashSet;

use proptest::prelude::*;

use scalevec::data::fold::{decode_fold, encode_fold, load_fold, save_fold};
use scalevec::data::idx::{parse_idx, IdxData};
use scalevec::data::mnist_scale::{content_side, generate_fold, rescale_and_pad, SourceImage, SplitSizes};
use scalevec::data::{Fold, SampleRecord, PIXELS};
use scalevec::Error;

fn pool(n: usize) -> Vec<SourceImage> {
    (0..n)
        .map(|i| SourceImage {
            image: (0..PIXELS).map(|p| ((p * 31 + i * 17) % 256) as f32 / 255.0).collect(),
            label: (i % 10) as u8,
        })
        .collect()
}

const SMALL: SplitSizes = SplitSizes {
    train: 300,
    val: 60,
    test: 500,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn idx_images_round_trip(count in 0usize..6, rows in 1usize..9, cols in 1usize..9, seed in any::<u8>()) {
        let pixels: Vec<u8> = (0..count * rows * cols).map(|i| (i as u8).wrapping_mul(seed)).collect();
        let data = IdxData::Images { rows, cols, pixels };
        let bytes = data.to_bytes();
        let back = parse_idx(&bytes).unwrap();
        prop_assert_eq!(&back, &data);
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn idx_labels_round_trip(labels in prop::collection::vec(0u8..10, 0..40)) {
        let data = IdxData::Labels(labels);
        prop_assert_eq!(parse_idx(&data.to_bytes()).unwrap(), data);
    }

    #[test]
    fn truncated_idx_is_rejected(cut in 1usize..20) {
        let bytes = IdxData::Images { rows: 2, cols: 2, pixels: vec![7; 12] }.to_bytes();
        let short = &bytes[..bytes.len() - cut.min(bytes.len())];
        prop_assert!(parse_idx(short).is_err());
    }

    #[test]
    fn rescaled_digits_stay_in_range(s in 0.3f64..=1.0) {
        let img: Vec<f64> = (0..PIXELS).map(|i| (i % 7) as f64 / 6.0).collect();
        let out = rescale_and_pad(&img, s).unwrap();
        prop_assert_eq!(out.len(), PIXELS);
        prop_assert!(out.iter().all(|&p| (0.0..=1.0).contains(&p)));
        prop_assert!(content_side(s) <= 28);
    }
}

#[test]
fn bad_idx_magic_is_a_parse_error() {
    let mut bytes = IdxData::Labels(vec![1, 2, 3]).to_bytes();
    bytes[2] = 0x0d;
    assert!(matches!(parse_idx(&bytes), Err(Error::Parse { .. }) | Err(Error::Format(_))));
}

#[test]
fn fold_generation_is_deterministic() {
    let p = pool(1000);
    let a = generate_fold(&p, 1, 7, SMALL).unwrap();
    let b = generate_fold(&p, 1, 7, SMALL).unwrap();
    assert!(a.fold.bitwise_eq(&b.fold));
    assert_eq!(a.fold.checksums(), b.fold.checksums());
    assert_eq!(encode_fold(&a.fold).unwrap(), encode_fold(&b.fold).unwrap());
}

#[test]
fn folds_differ_and_splits_are_disjoint() {
    let p = pool(1000);
    let a = generate_fold(&p, 0, 7, SMALL).unwrap();
    let b = generate_fold(&p, 1, 7, SMALL).unwrap();
    assert_ne!(a.fold.checksums(), b.fold.checksums());
    for g in [&a, &b] {
        let all: Vec<u32> = g.sources.iter().flatten().copied().collect();
        let unique: HashSet<u32> = all.iter().copied().collect();
        assert_eq!(all.len(), unique.len());
        assert_eq!(
            [g.sources[0].len(), g.sources[1].len(), g.sources[2].len()],
            [SMALL.train, SMALL.val, SMALL.test]
        );
        for (r, &src) in g.fold.train.iter().zip(&g.sources[0]) {
            assert_eq!(r.label, p[src as usize].label);
        }
    }
}

#[test]
fn too_small_pool_is_an_input_error() {
    assert!(matches!(generate_fold(&pool(100), 0, 0, SMALL), Err(Error::Input(_))));
}

#[test]
fn scale_factors_follow_the_uniform_moments() {
    // moments of U(0.3, 1): mean 0.65, sd 0.7/√12
    let sizes = SplitSizes {
        train: 20_000,
        val: 0,
        test: 0,
    };
    let g = generate_fold(&pool(20_000), 0, 3, sizes).unwrap();
    let s: Vec<f64> = g.fold.train.iter().map(|r| r.scale as f64).collect();
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let sd = (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((mean - 0.65).abs() < 0.01, "{mean}");
    assert!((sd - 0.7 / 12f64.sqrt()).abs() < 0.01, "{sd}");
    assert!(s.iter().all(|&x| (0.3..=1.0).contains(&x)));
}

fn tiny_fold() -> Fold {
    let rec = |i: usize| SampleRecord {
        image: (0..PIXELS).map(|p| ((p + i) % 5) as f32 / 4.0).collect(),
        label: (i % 10) as u8,
        scale: 0.3 + 0.05 * i as f32,
    };
    Fold {
        train: (0..3).map(rec).collect(),
        val: vec![rec(5)],
        test: (6..8).map(rec).collect(),
    }
}

#[test]
fn fold_files_round_trip_and_detect_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.mscl");
    let fold = tiny_fold();
    save_fold(&path, &fold).unwrap();
    assert!(load_fold(&path).unwrap().bitwise_eq(&fold));

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(matches!(decode_fold(&bytes), Err(Error::Checksum { .. })));
    assert!(decode_fold(&bytes[..10]).is_err());
    let mut wrong = encode_fold(&fold).unwrap();
    wrong[0] = b'X';
    assert!(decode_fold(&wrong).is_err());
}
