use std::path::Path;

use proptest::prelude::*;
use rompca::format::{decode_dataset, encode_dataset, load_dataset, save_dataset};
use rompca_core::sample::TensorSample;
use rompca_core::tensor::DenseTensor;

fn dataset() -> impl Strategy<Value = Vec<TensorSample>> {
    (prop::collection::vec(1usize..4, 1..4), 1usize..5).prop_flat_map(|(shape, n)| {
        let len: usize = shape.iter().product();
        let cell = prop_oneof![
            8 => any::<f64>().prop_filter("finite", |x| x.is_finite()).prop_map(Some),
            1 => Just(None),
        ];
        prop::collection::vec(prop::collection::vec(cell, len), n).prop_map(move |rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, mut cells)| {
                    // every cell observed somewhere, every sample non-empty
                    if i == 0 || cells.iter().all(Option::is_none) {
                        for c in cells.iter_mut().filter(|c| c.is_none()).take(if i == 0 {
                            len
                        } else {
                            1
                        }) {
                            *c = Some(0.0);
                        }
                    }
                    let data = cells.iter().map(|c| c.unwrap_or(0.0)).collect();
                    let mask = cells
                        .iter()
                        .map(|c| if c.is_some() { 1.0 } else { 0.0 })
                        .collect();
                    TensorSample::new(
                        DenseTensor::from_vec(&shape, data).unwrap(),
                        DenseTensor::from_vec(&shape, mask).unwrap(),
                    )
                    .unwrap()
                })
                .collect()
        })
    })
}

fn same(a: &[TensorSample], b: &[TensorSample]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.shape() == y.shape()
                && x.mask() == y.mask()
                && x.data()
                    .as_slice()
                    .iter()
                    .zip(y.data().as_slice())
                    .zip(x.mask().as_slice())
                    .all(|((u, v), &m)| m == 0.0 || u.to_bits() == v.to_bits())
        })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn binary_round_trip(samples in dataset()) {
        let bytes = encode_dataset(&samples).unwrap();
        let back = decode_dataset(&bytes, Path::new("x.romt")).unwrap();
        prop_assert!(same(&samples, &back));
        prop_assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn manifest_round_trip(samples in dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.txt");
        save_dataset(&path, &samples).unwrap();
        let back = load_dataset(&path).unwrap();
        prop_assert!(same(&samples, &back));
        let first: Vec<Vec<u8>> = files(dir.path());
        save_dataset(&path, &back).unwrap();
        prop_assert_eq!(files(dir.path()), first);
    }

    #[test]
    fn truncated_binary_is_rejected(samples in dataset(), cut in 1usize..64) {
        let bytes = encode_dataset(&samples).unwrap();
        let cut = cut.min(bytes.len());
        prop_assert!(decode_dataset(&bytes[..bytes.len() - cut], Path::new("x.romt")).is_err());
    }
}

fn files(dir: &Path) -> Vec<Vec<u8>> {
    let mut names: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    names.sort();
    names.iter().map(|p| std::fs::read(p).unwrap()).collect()
}
