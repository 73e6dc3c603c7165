use std::collections::HashSet;

use eigenhearts::dataset::{write_dataset, Partition};
use eigenhearts::experiment::synthetic_split;
use eigenhearts::{
    assemble_snapshot_matrix, flatten_image, generate_synthetic, load_dataset, svd_thin,
    unflatten_image, Image, SyntheticSpec,
};
use proptest::prelude::*;

fn spec(
    classes: usize,
    samples: usize,
    frames_per_sample: usize,
    noise: f64,
    seed: u64,
) -> SyntheticSpec {
    SyntheticSpec {
        class_count: classes,
        frames_per_class: samples * frames_per_sample,
        image_side: 8,
        intrinsic_rank: 2,
        noise_level: noise,
        seed,
        samples_per_class: samples,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn flatten_and_unflatten_are_inverse(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
        let pixels: Vec<f64> = (0..h * w).map(|i| ((i as u64 ^ seed) % 256) as f64 / 255.0).collect();
        let img = Image::new(h, w, pixels).unwrap();
        let v = flatten_image(&img);
        prop_assert_eq!(v.len(), h * w);
        prop_assert_eq!(unflatten_image(&v, h, w).unwrap(), img);
    }

    #[test]
    fn snapshot_columns_are_flattened_frames(k in 1usize..6, seed in any::<u64>()) {
        let frames: Vec<Image> = (0..k)
            .map(|i| Image::new(3, 4, (0..12).map(|p| ((p * 7 + i * 3) as u64 ^ seed) as f64 % 1.0).collect()).unwrap())
            .collect();
        let m = assemble_snapshot_matrix(frames.iter()).unwrap();
        for (i, f) in frames.iter().enumerate() {
            prop_assert_eq!(m.matrix().column(i).clone_owned(), flatten_image(f));
        }
    }

    #[test]
    fn splits_are_disjoint_and_balanced(
        classes in 2usize..5,
        samples in 3usize..9,
        fps in 4usize..12,
        seed in any::<u64>(),
    ) {
        let (_, split) = synthetic_split(&spec(classes, samples, fps, 0.1, seed)).unwrap();
        let seen: HashSet<&str> = [Partition::Train, Partition::Validation, Partition::Test]
            .into_iter()
            .flat_map(|p| split.partition(p).iter().map(|f| f.sample_id.as_str()))
            .collect();
        let unseen: HashSet<&str> = split.unseen.iter().map(|f| f.sample_id.as_str()).collect();
        prop_assert!(seen.is_disjoint(&unseen));
        for p in [Partition::Train, Partition::Validation, Partition::Test, Partition::Unseen] {
            let counts = split.class_counts(p);
            prop_assert!(counts.windows(2).all(|w| w[0] == w[1]), "{:?}: {:?}", p, counts);
        }
    }
}

#[test]
fn noise_free_synthetic_classes_have_exact_rank() {
    let spec = SyntheticSpec {
        class_count: 4,
        frames_per_class: 40,
        image_side: 16,
        intrinsic_rank: 3,
        noise_level: 0.0,
        seed: 5,
        samples_per_class: 5,
    };
    let samples = generate_synthetic(&spec).unwrap();
    for c in 0..4 {
        let frames = samples
            .iter()
            .filter(|s| s.label.id == c)
            .flat_map(|s| &s.frames);
        let f = svd_thin(assemble_snapshot_matrix(frames).unwrap().matrix()).unwrap();
        let s = f.singular_values();
        assert!(s[3] < 1e-10 * s[0], "class {c}: {:e}", s[3] / s[0]);
    }
}

#[test]
fn pgm_export_reloads_at_byte_precision() {
    let samples = generate_synthetic(&spec(3, 4, 5, 0.2, 9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &samples).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.len(), samples.len());
    for (a, b) in samples.iter().zip(&loaded) {
        assert_eq!((&a.label, &a.sample_id), (&b.label, &b.sample_id));
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            for (&x, &y) in fa.pixels().iter().zip(fb.pixels()) {
                assert_eq!(y, (x * 255.0).round() / 255.0);
            }
        }
    }
    // a second export of the reloaded data is lossless
    let again = tempfile::tempdir().unwrap();
    write_dataset(again.path(), &loaded).unwrap();
    assert_eq!(load_dataset(again.path()).unwrap(), loaded);
}
