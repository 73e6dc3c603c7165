//! Image ensembles: frames, labelled samples, and the train/validation/test/unseen split.

mod manifest;
mod pgm;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use manifest::{
    apply_manifest, manifest_text, parse_manifest, read_manifest, write_manifest, ManifestEntry,
};
pub use pgm::{
    decode_pgm, encode_pgm, frame_file_name, load_dataset, read_pgm, write_dataset, write_pgm,
    write_split,
};
pub use synthetic::{generate_synthetic, SyntheticSpec};

/// Class codes of the five cardiac conditions, in roster order.
pub const CARDIAC_CLASS_CODES: [&str; 5] = ["H", "DC", "MI", "Ob", "HT"];

/// One grayscale frame stored row-major.
///
/// Loaded and generated frames live in `[0, 1]`; projected frames may leave that range
/// and are only required to be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Format(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::Format(format!(
                "image {height}x{width} needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!("pixel {i} is not finite")));
        }
        Ok(Image {
            height,
            width,
            pixels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn is_unit_range(&self) -> bool {
        self.pixels.iter().all(|&p| (0.0..=1.0).contains(&p))
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }
}

/// Row-major scan of the frame into a column vector of length `height * width`.
pub fn flatten_image(image: &Image) -> DVector<f64> {
    DVector::from_column_slice(&image.pixels)
}

/// Inverse of [`flatten_image`].
pub fn unflatten_image(vector: &DVector<f64>, height: usize, width: usize) -> Result<Image> {
    Image::new(height, width, vector.as_slice().to_vec())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassLabel {
    pub id: usize,
    pub code: String,
}

impl ClassLabel {
    pub fn new(id: usize, code: impl Into<String>) -> Self {
        ClassLabel {
            id,
            code: code.into(),
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code)
    }
}

/// Roster for `count` classes: the cardiac codes when they suffice, `C<i>` otherwise.
pub fn default_roster(count: usize) -> Vec<ClassLabel> {
    (0..count)
        .map(|i| {
            if count <= CARDIAC_CLASS_CODES.len() {
                ClassLabel::new(i, CARDIAC_CLASS_CODES[i])
            } else {
                ClassLabel::new(i, format!("C{i}"))
            }
        })
        .collect()
}

/// One recording (video) of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: ClassLabel,
    pub sample_id: String,
    pub frames: Vec<Image>,
}

impl Sample {
    pub fn new(
        label: ClassLabel,
        sample_id: impl Into<String>,
        frames: Vec<Image>,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        let first = frames
            .first()
            .ok_or_else(|| Error::Format(format!("sample {sample_id} has no frames")))?;
        let shape = first.shape();
        if let Some(k) = frames.iter().position(|f| f.shape() != shape) {
            return Err(Error::Format(format!(
                "sample {sample_id}: frame {k} is {:?}, expected {:?}",
                frames[k].shape(),
                shape
            )));
        }
        Ok(Sample {
            label,
            sample_id,
            frames,
        })
    }

    pub fn frame_shape(&self) -> (usize, usize) {
        self.frames[0].shape()
    }
}

/// Column-stacked flattened frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    matrix: DMatrix<f64>,
    frame_shape: (usize, usize),
}

impl SnapshotMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn frame_shape(&self) -> (usize, usize) {
        self.frame_shape
    }

    pub fn pixel_count(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn frame_count(&self) -> usize {
        self.matrix.ncols()
    }
}

pub fn assemble_snapshot_matrix<'a, I>(frames: I) -> Result<SnapshotMatrix>
where
    I: IntoIterator<Item = &'a Image>,
{
    let frames: Vec<&Image> = frames.into_iter().collect();
    let first = frames
        .first()
        .ok_or_else(|| Error::Capacity("snapshot matrix needs at least one frame".into()))?;
    let shape = first.shape();
    let rows = first.len();
    let mut data = Vec::with_capacity(rows * frames.len());
    for (k, frame) in frames.iter().enumerate() {
        if frame.shape() != shape {
            return Err(Error::Format(format!(
                "frame {k} is {:?}, expected {:?}",
                frame.shape(),
                shape
            )));
        }
        data.extend_from_slice(frame.pixels());
    }
    Ok(SnapshotMatrix {
        matrix: DMatrix::from_vec(rows, frames.len(), data),
        frame_shape: shape,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    Train,
    Validation,
    Test,
    Unseen,
}

impl Partition {
    pub const ALL: [Partition; 4] = [
        Partition::Train,
        Partition::Validation,
        Partition::Test,
        Partition::Unseen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
            Partition::Unseen => "unseen",
        }
    }

    pub fn parse(name: &str) -> Option<Partition> {
        Partition::ALL.into_iter().find(|p| p.name() == name)
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A frame with its class and provenance inside the source dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub image: Image,
    pub label: ClassLabel,
    pub sample_id: String,
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledFrame>,
    pub validation: Vec<LabeledFrame>,
    pub test: Vec<LabeledFrame>,
    pub unseen: Vec<LabeledFrame>,
    pub view: String,
    pub frame_shape: (usize, usize),
    pub roster: Vec<ClassLabel>,
}

impl DatasetSplit {
    pub fn partition(&self, which: Partition) -> &[LabeledFrame] {
        match which {
            Partition::Train => &self.train,
            Partition::Validation => &self.validation,
            Partition::Test => &self.test,
            Partition::Unseen => &self.unseen,
        }
    }

    pub fn partition_mut(&mut self, which: Partition) -> &mut Vec<LabeledFrame> {
        match which {
            Partition::Train => &mut self.train,
            Partition::Validation => &mut self.validation,
            Partition::Test => &mut self.test,
            Partition::Unseen => &mut self.unseen,
        }
    }

    /// Frames of the training samples (train, validation and test partitions) for one class.
    ///
    /// These are the frames the class bases are built from; unseen frames never are.
    pub fn training_sample_frames(&self, label: &ClassLabel) -> Vec<&Image> {
        [Partition::Train, Partition::Validation, Partition::Test]
            .into_iter()
            .flat_map(|p| self.partition(p))
            .filter(|f| &f.label == label)
            .map(|f| &f.image)
            .collect()
    }

    /// Per-class frame counts for one partition, indexed by class id.
    pub fn class_counts(&self, which: Partition) -> Vec<usize> {
        let mut counts = vec![0; self.roster.len()];
        for f in self.partition(which) {
            counts[f.label.id] += 1;
        }
        counts
    }
}

/// How many samples and frames per class go into each partition.
///
/// Train/validation/test frame counts per class are `F * w / sum(w)` (rounded down) where
/// `F = train_samples * frames_per_sample` and `w` are the partition weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPolicy {
    pub train_samples: usize,
    pub unseen_samples: usize,
    pub frames_per_sample: usize,
    pub weights: [usize; 3],
}

impl SplitPolicy {
    /// 20 training and 6 hold-out samples per class, 90 frames each, 1200/500/100 frames.
    pub const REFERENCE: SplitPolicy = SplitPolicy {
        train_samples: 20,
        unseen_samples: 6,
        frames_per_sample: 90,
        weights: [1200, 500, 100],
    };

    /// Keeps the 20:6 sample ratio and the 1200:500:100 frame ratio for other dataset sizes.
    pub fn proportional(samples_per_class: usize, frames_per_sample: usize) -> Self {
        let train = ((samples_per_class as f64) * 20.0 / 26.0).round() as usize;
        let train = train.clamp(1.min(samples_per_class), samples_per_class);
        SplitPolicy {
            train_samples: train,
            unseen_samples: samples_per_class - train,
            frames_per_sample: frames_per_sample.min(Self::REFERENCE.frames_per_sample),
            weights: Self::REFERENCE.weights,
        }
    }

    /// Frames per class in (train, validation, test).
    pub fn frame_quota(&self) -> [usize; 3] {
        let total = self.train_samples * self.frames_per_sample;
        let sum: usize = self.weights.iter().sum();
        let mut quota = [0; 3];
        for (q, w) in quota.iter_mut().zip(self.weights) {
            *q = (total * w).checked_div(sum).unwrap_or(0);
        }
        quota
    }

    fn block_size(&self) -> usize {
        let mut b = self.frames_per_sample;
        for q in self.frame_quota() {
            if q > 0 {
                b = gcd(b, q);
            }
        }
        b.max(1)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Roster of the classes present in `samples`, ordered by class id.
pub fn roster_of(samples: &[Sample]) -> Vec<ClassLabel> {
    let mut roster: Vec<ClassLabel> = samples.iter().map(|s| s.label.clone()).collect();
    roster.sort();
    roster.dedup();
    roster
}

fn common_frame_shape(samples: &[Sample]) -> Result<(usize, usize)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Capacity("no samples to split".into()))?;
    let shape = first.frame_shape();
    if let Some(s) = samples.iter().find(|s| s.frame_shape() != shape) {
        return Err(Error::Format(format!(
            "sample {} has frames of {:?}, expected {:?}",
            s.sample_id,
            s.frame_shape(),
            shape
        )));
    }
    Ok(shape)
}

/// Partitions samples into train/validation/test/unseen.
///
/// Per class, samples are ordered by id and shuffled under `seed`; the first
/// `train_samples` feed train/validation/test and the next `unseen_samples` are held out
/// whole. Each training sample's first `frames_per_sample` frames are cut into contiguous
/// blocks, block order is shuffled within each sample, and the blocks are dealt round-robin
/// across samples into the train, validation and test quotas in that order.
pub fn split_dataset(
    samples: Vec<Sample>,
    policy: &SplitPolicy,
    seed: u64,
) -> Result<DatasetSplit> {
    let frame_shape = common_frame_shape(&samples)?;
    let roster = roster_of(&samples);
    let quota = policy.frame_quota();
    let block = policy.block_size();
    let blocks_per_sample = policy.frames_per_sample / block;

    let mut by_class: BTreeMap<usize, Vec<Sample>> = BTreeMap::new();
    for s in samples {
        by_class.entry(s.label.id).or_default().push(s);
    }

    let needed = policy.train_samples + policy.unseen_samples;
    for label in &roster {
        let class_samples = &by_class[&label.id];
        if class_samples.len() < needed {
            return Err(Error::Capacity(format!(
                "class {label}: needs {needed} samples, has {} (short by {})",
                class_samples.len(),
                needed - class_samples.len()
            )));
        }
        if let Some(s) = class_samples
            .iter()
            .find(|s| s.frames.len() < policy.frames_per_sample)
        {
            return Err(Error::Capacity(format!(
                "class {label}: sample {} has {} frames, needs {} (short by {})",
                s.sample_id,
                s.frames.len(),
                policy.frames_per_sample,
                policy.frames_per_sample - s.frames.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        unseen: Vec::new(),
        view: String::new(),
        frame_shape,
        roster: roster.clone(),
    };

    for (_, mut class_samples) in by_class {
        class_samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        class_samples.shuffle(&mut rng);
        class_samples.truncate(needed);
        let unseen = class_samples.split_off(policy.train_samples);

        // (sample position, block index) in dealing order
        let mut block_orders: Vec<Vec<usize>> = Vec::with_capacity(class_samples.len());
        for _ in &class_samples {
            let mut order: Vec<usize> = (0..blocks_per_sample).collect();
            order.shuffle(&mut rng);
            block_orders.push(order);
        }
        let mut dealt = Vec::with_capacity(class_samples.len() * blocks_per_sample);
        for round in 0..blocks_per_sample {
            for (s, order) in block_orders.iter().enumerate() {
                dealt.push((s, order[round]));
            }
        }

        let mut frames: Vec<Vec<Option<Image>>> = class_samples
            .iter_mut()
            .map(|s| {
                std::mem::take(&mut s.frames)
                    .into_iter()
                    .map(Some)
                    .collect()
            })
            .collect();
        let mut cursor = dealt.into_iter();
        for (partition, count) in [Partition::Train, Partition::Validation, Partition::Test]
            .into_iter()
            .zip(quota)
        {
            for (s, b) in cursor.by_ref().take(count / block) {
                let sample = &class_samples[s];
                let range = b * block..(b + 1) * block;
                for (index, slot) in range.clone().zip(&mut frames[s][range]) {
                    let image = slot.take().expect("each block is dealt once");
                    split.partition_mut(partition).push(LabeledFrame {
                        image,
                        label: sample.label.clone(),
                        sample_id: sample.sample_id.clone(),
                        frame_index: index,
                    });
                }
            }
        }

        for sample in unseen {
            let label = sample.label.clone();
            let sample_id = sample.sample_id.clone();
            for (index, image) in sample
                .frames
                .into_iter()
                .take(policy.frames_per_sample)
                .enumerate()
            {
                split.unseen.push(LabeledFrame {
                    image,
                    label: label.clone(),
                    sample_id: sample_id.clone(),
                    frame_index: index,
                });
            }
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn constant_sample(class: usize, id: &str, frames: usize, side: usize) -> Sample {
        let label = default_roster(5)[class].clone();
        let frames = (0..frames)
            .map(|k| Image::new(side, side, vec![(k % 256) as f64 / 255.0; side * side]).unwrap())
            .collect();
        Sample::new(label, id, frames).unwrap()
    }

    fn reference_shaped_samples(per_class: usize, frames: usize) -> Vec<Sample> {
        let mut samples = Vec::new();
        for c in 0..5 {
            for s in 0..per_class {
                samples.push(constant_sample(c, &format!("s{c}_{s:02}"), frames, 2));
            }
        }
        samples
    }

    #[test]
    fn flatten_is_row_major() {
        let img = Image::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(flatten_image(&img).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(Image::zeros(256, 256).len(), 65536);
    }

    #[test]
    fn image_rejects_bad_input() {
        assert!(matches!(
            Image::new(2, 2, vec![0.0; 3]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            Image::new(1, 1, vec![f64::NAN]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn snapshot_columns_follow_input_order() {
        let a = Image::new(1, 2, vec![0.1, 0.2]).unwrap();
        let b = Image::new(1, 2, vec![0.3, 0.4]).unwrap();
        let m = assemble_snapshot_matrix([&a, &b]).unwrap();
        assert_eq!(m.matrix().column(0).as_slice(), &[0.1, 0.2]);
        assert_eq!(m.matrix().column(1).as_slice(), &[0.3, 0.4]);

        let single = assemble_snapshot_matrix([&a]).unwrap();
        assert_eq!(single.matrix().ncols(), 1);

        let c = Image::zeros(2, 1);
        assert!(matches!(
            assemble_snapshot_matrix([&a, &c]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn reference_policy_counts() {
        let split =
            split_dataset(reference_shaped_samples(26, 90), &SplitPolicy::REFERENCE, 3).unwrap();
        assert_eq!(split.class_counts(Partition::Train), vec![1200; 5]);
        assert_eq!(split.class_counts(Partition::Validation), vec![500; 5]);
        assert_eq!(split.class_counts(Partition::Test), vec![100; 5]);
        assert_eq!(split.class_counts(Partition::Unseen), vec![540; 5]);

        let training_ids: BTreeSet<_> = [&split.train, &split.validation, &split.test]
            .into_iter()
            .flatten()
            .map(|f| f.sample_id.clone())
            .collect();
        let unseen_ids: BTreeSet<_> = split.unseen.iter().map(|f| f.sample_id.clone()).collect();
        assert!(training_ids.is_disjoint(&unseen_ids));
        assert_eq!(training_ids.len(), 100);
        assert_eq!(unseen_ids.len(), 30);
    }

    #[test]
    fn every_training_sample_feeds_train_and_validation() {
        let split = split_dataset(
            reference_shaped_samples(26, 90),
            &SplitPolicy::REFERENCE,
            11,
        )
        .unwrap();
        for part in [&split.train, &split.validation] {
            let ids: BTreeSet<_> = part.iter().map(|f| &f.sample_id).collect();
            assert_eq!(ids.len(), 100);
        }
    }

    #[test]
    fn zero_unseen_policy_leaves_unseen_empty() {
        let policy = SplitPolicy {
            train_samples: 2,
            unseen_samples: 0,
            frames_per_sample: 9,
            weights: [1200, 500, 100],
        };
        let split = split_dataset(reference_shaped_samples(2, 9), &policy, 0).unwrap();
        assert!(split.unseen.is_empty());
        assert_eq!(split.class_counts(Partition::Train), vec![12; 5]);
        assert_eq!(split.class_counts(Partition::Validation), vec![5; 5]);
        assert_eq!(split.class_counts(Partition::Test), vec![1; 5]);
    }

    #[test]
    fn split_is_deterministic_under_seed() {
        let a = split_dataset(
            reference_shaped_samples(8, 15),
            &SplitPolicy::proportional(8, 15),
            5,
        )
        .unwrap();
        let b = split_dataset(
            reference_shaped_samples(8, 15),
            &SplitPolicy::proportional(8, 15),
            5,
        )
        .unwrap();
        assert_eq!(a, b);
        let c = split_dataset(
            reference_shaped_samples(8, 15),
            &SplitPolicy::proportional(8, 15),
            6,
        )
        .unwrap();
        assert_ne!(
            a.unseen.iter().map(|f| &f.sample_id).collect::<Vec<_>>(),
            c.unseen.iter().map(|f| &f.sample_id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn capacity_errors_name_the_shortfall() {
        let err = split_dataset(reference_shaped_samples(25, 90), &SplitPolicy::REFERENCE, 0)
            .unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Capacity(_)));
        assert!(msg.contains("short by 1"), "{msg}");

        let err = split_dataset(reference_shaped_samples(26, 89), &SplitPolicy::REFERENCE, 0)
            .unwrap_err();
        assert!(err.to_string().contains("short by 1"));
    }

    #[test]
    fn proportional_policy_scales_the_reference_ratios() {
        let p = SplitPolicy::proportional(26, 120);
        assert_eq!(p, SplitPolicy::REFERENCE);
        let p = SplitPolicy::proportional(8, 15);
        assert_eq!((p.train_samples, p.unseen_samples), (6, 2));
        assert_eq!(p.frame_quota(), [60, 25, 5]);
    }

    proptest! {
        #[test]
        fn flatten_unflatten_roundtrip(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pixels: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
            let img = Image::new(h, w, pixels).unwrap();
            let back = unflatten_image(&flatten_image(&img), h, w).unwrap();
            prop_assert_eq!(back, img);
        }

        #[test]
        fn snapshot_columns_equal_flattened_frames(k in 1usize..6, h in 1usize..5, w in 1usize..5) {
            let frames: Vec<Image> = (0..k)
                .map(|i| Image::new(h, w, (0..h * w).map(|p| (p + i) as f64 / 100.0).collect()).unwrap())
                .collect();
            let m = assemble_snapshot_matrix(&frames).unwrap();
            for (i, f) in frames.iter().enumerate() {
                prop_assert_eq!(m.matrix().column(i).into_owned(), flatten_image(f));
            }
        }

        #[test]
        fn splits_are_disjoint_and_balanced(per_class in 2usize..6, frames in 4usize..12, seed in any::<u64>()) {
            let policy = SplitPolicy::proportional(per_class, frames);
            let split = split_dataset(reference_shaped_samples(per_class, frames), &policy, seed).unwrap();
            let training: BTreeSet<_> = [&split.train, &split.validation, &split.test]
                .into_iter().flatten().map(|f| f.sample_id.clone()).collect();
            let unseen: BTreeSet<_> = split.unseen.iter().map(|f| f.sample_id.clone()).collect();
            prop_assert!(training.is_disjoint(&unseen));
            for p in Partition::ALL {
                let counts = split.class_counts(p);
                prop_assert!(counts.iter().all(|&c| c == counts[0]));
            }
        }
    }
}
