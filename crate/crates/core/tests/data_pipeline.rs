use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::PathBuf;

use flate2::write::GzEncoder;
use flate2::Compression;
use hfvae::data::idx::{encode_images, encode_labels, IdxImages};
use hfvae::data::{
    ingest_patch_dir, load_gray_image, load_mnist_idx, read_cache, split_by_patient, write_cache, ImageDataset, Split, PIXELS,
};
use hfvae::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn idx_fixture(count: usize) -> (IdxImages, Vec<u8>) {
    let mut pixels = vec![0u8; count * PIXELS];
    for (i, p) in pixels.iter_mut().enumerate() {
        *p = (i * 37 % 256) as u8;
    }
    pixels[0] = 255;
    pixels[1] = 0;
    let images = IdxImages {
        count,
        rows: 28,
        cols: 28,
        pixels,
    };
    (images, (0..count as u8).collect())
}

#[test]
fn idx_files_load_plain_and_gzipped() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = idx_fixture(3);
    let img_path = dir.path().join("imgs.idx");
    let lab_path = dir.path().join("labs.idx.gz");
    std::fs::write(&img_path, encode_images(&images)).unwrap();
    let mut gz = GzEncoder::new(Vec::new(), Compression::default());
    gz.write_all(&encode_labels(&labels)).unwrap();
    std::fs::write(&lab_path, gz.finish().unwrap()).unwrap();

    let ds = load_mnist_idx(&img_path, &lab_path, Split::Train).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.dim(), 784);
    assert_eq!(ds.item(0)[0], 1.0);
    assert_eq!(ds.item(0)[1], 0.0);
    for (p, &b) in ds.pixels().iter().zip(&images.pixels) {
        assert_eq!(*p, f64::from(b) / 255.0);
    }
    assert_eq!(ds.labels.as_deref(), Some(&[0u8, 1, 2][..]));

    std::fs::write(&lab_path, encode_labels(&[1, 2])).unwrap();
    assert!(matches!(
        load_mnist_idx(&img_path, &lab_path, Split::Train),
        Err(Error::CountMismatch { images: 3, labels: 2 })
    ));
}

fn repo_data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist").join(name)
}

#[test]
fn bundled_mnist_subset_loads() {
    let train = load_mnist_idx(&repo_data("train-images-idx3-ubyte.gz"), &repo_data("train-labels-idx1-ubyte.gz"), Split::Train).unwrap();
    let test = load_mnist_idx(&repo_data("t10k-images-idx3-ubyte.gz"), &repo_data("t10k-labels-idx1-ubyte.gz"), Split::Test).unwrap();
    assert_eq!((train.len(), test.len()), (8000, 2000));
    assert!(train.pixels().iter().chain(test.pixels()).all(|p| (0.0..=1.0).contains(p)));
    let classes: BTreeSet<u8> = train.labels.unwrap().into_iter().collect();
    assert_eq!(classes.len(), 10);
}

#[test]
fn png_and_pgm_ingestion() {
    let dir = tempfile::tempdir().unwrap();
    let rgb = image::RgbImage::from_fn(56, 30, |x, _| if x < 28 { image::Rgb([255, 0, 0]) } else { image::Rgb([0, 0, 255]) });
    rgb.save(dir.path().join("p1_0.png")).unwrap();
    let gray = image::GrayImage::from_fn(28, 28, |x, y| image::Luma([((x + y) * 4) as u8]));
    gray.save(dir.path().join("p2_0.pgm")).unwrap();
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();

    let img = load_gray_image(&dir.path().join("p1_0.png")).unwrap();
    assert_eq!((img.width, img.height), (56, 30));
    assert!((img.pixels[0] - 0.299).abs() < 1e-15);
    assert!((img.pixels[40] - 0.114).abs() < 1e-15);

    let patches = ingest_patch_dir(dir.path(), 28).unwrap();
    let ids: Vec<&str> = patches.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(ids, vec!["p1", "p1", "p2"]);
    assert_eq!(patches[2].1[29], 8.0 / 255.0);

    std::fs::write(dir.path().join("badname.png"), []).unwrap();
    assert!(ingest_patch_dir(dir.path(), 28).is_err());
}

fn synthetic_patches(patients: usize, per_patient: usize) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    for p in 0..patients {
        for k in 0..per_patient {
            out.push((format!("patient{p:02}"), vec![(p * per_patient + k) as f64 / 1000.0; PIXELS]));
        }
    }
    out
}

fn assignment_10_3_3() -> BTreeMap<String, Split> {
    (0..16)
        .map(|p| {
            let split = match p {
                0..=9 => Split::Train,
                10..=12 => Split::Validation,
                _ => Split::Test,
            };
            (format!("patient{p:02}"), split)
        })
        .collect()
}

#[test]
fn patient_splits_are_disjoint_and_order_free() {
    let patches = synthetic_patches(16, 4);
    let splits = split_by_patient(&patches, &assignment_10_3_3()).unwrap();
    assert_eq!((splits.train.len(), splits.validation.len(), splits.test.len()), (40, 12, 12));
    let (tr, va, te) = (splits.patients(Split::Train), splits.patients(Split::Validation), splits.patients(Split::Test));
    assert_eq!((tr.len(), va.len(), te.len()), (10, 3, 3));
    assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));

    let mut shuffled = patches.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let again = split_by_patient(&shuffled, &assignment_10_3_3()).unwrap();
    for split in [Split::Train, Split::Validation, Split::Test] {
        assert_eq!(again.patients(split), splits.patients(split));
    }
    let members = |ds: &ImageDataset| -> BTreeSet<u64> { (0..ds.len()).map(|i| ds.item(i)[0].to_bits()).collect() };
    assert_eq!(members(&again.train), members(&splits.train));
}

#[test]
fn patient_split_errors() {
    let one = synthetic_patches(1, 3);
    let only_train: BTreeMap<String, Split> = [("patient00".to_string(), Split::Train)].into();
    assert!(matches!(split_by_patient(&one, &only_train), Err(Error::EmptySplit("validation"))));
    let mut partial = assignment_10_3_3();
    partial.remove("patient05");
    assert!(matches!(
        split_by_patient(&synthetic_patches(16, 1), &partial),
        Err(Error::UnassignedPatient(id)) if id == "patient05"
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cache_round_trip_is_bit_exact(
        rows in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 5), 1..20),
        with_labels in any::<bool>(),
        with_ids in any::<bool>(),
        split_tag in 0usize..3,
    ) {
        let split = [Split::Train, Split::Validation, Split::Test][split_tag];
        let n = rows.len();
        let mut ds = ImageDataset::new(rows.concat(), 5, split).unwrap();
        if with_labels {
            ds = ds.with_labels((0..n).map(|i| (i % 10) as u8).collect()).unwrap();
        }
        if with_ids {
            ds = ds.with_patient_ids((0..n).map(|i| format!("p{}", i % 3)).collect()).unwrap();
        }
        let mut bytes = Vec::new();
        write_cache(&ds, &mut bytes).unwrap();
        let back = read_cache(&mut bytes.as_slice()).unwrap();
        let bits = |d: &ImageDataset| d.pixels().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&ds));
        prop_assert_eq!(&back, &ds);
        let mut again = Vec::new();
        write_cache(&back, &mut again).unwrap();
        prop_assert_eq!(again, bytes);
    }
}
