//! Per-class mean-centred bases and projection onto them.

use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::binio::{ByteReader, ByteWriter};
use crate::dataset::{
    assemble_snapshot_matrix, flatten_image, ClassLabel, DatasetSplit, Image, LabeledFrame,
    Partition,
};
use crate::error::{Error, Result};
use crate::svd::{self, SvdFactors, TruncationRule, FACTORS_MAGIC};

/// Library files reuse the factor-file magic with their own version number.
pub const LIBRARY_VERSION: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    pub label: ClassLabel,
    /// Average frame of the class, flattened.
    pub mean: DVector<f64>,
    /// Column-orthonormal `J x r'` basis.
    pub basis: DMatrix<f64>,
    /// Singular values of the retained directions.
    pub sigma: Vec<f64>,
    pub frame_shape: (usize, usize),
    /// Number of frames the basis was built from.
    pub source_frames: usize,
}

impl EigenBasis {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn pixel_count(&self) -> usize {
        self.mean.len()
    }

    fn check_shape(&self, image: &Image) -> Result<()> {
        if image.shape() != self.frame_shape {
            return Err(Error::Format(format!(
                "image is {:?} but the {} basis expects {:?}",
                image.shape(),
                self.label,
                self.frame_shape
            )));
        }
        Ok(())
    }

    /// `x - mean` for a flattened image.
    pub fn centered(&self, image: &Image) -> Result<DVector<f64>> {
        self.check_shape(image)?;
        Ok(flatten_image(image) - &self.mean)
    }

    /// Orthogonal projection of a centred vector onto the span of the basis.
    pub fn project_centered(&self, centered: &DVector<f64>) -> DVector<f64> {
        let coefficients = self.basis.tr_mul(centered);
        &self.basis * coefficients
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub source: String,
    pub rule: String,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl Provenance {
    fn to_text(&self) -> String {
        let mut s = format!(
            "source={}\nrule={}\nseed={}\n",
            self.source, self.rule, self.seed
        );
        for w in &self.warnings {
            s.push_str(&format!("warning={w}\n"));
        }
        s
    }

    fn from_text(text: &str) -> Self {
        let mut p = Provenance::default();
        for line in text.lines() {
            match line.split_once('=') {
                Some(("source", v)) => p.source = v.to_string(),
                Some(("rule", v)) => p.rule = v.to_string(),
                Some(("seed", v)) => p.seed = v.parse().unwrap_or_default(),
                Some(("warning", v)) => p.warnings.push(v.to_string()),
                _ => {}
            }
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasisLibrary {
    pub bases: Vec<EigenBasis>,
    pub frame_shape: (usize, usize),
    pub provenance: Provenance,
}

impl EigenBasisLibrary {
    pub fn new(bases: Vec<EigenBasis>, provenance: Provenance) -> Result<Self> {
        let first = bases
            .first()
            .ok_or_else(|| Error::Capacity("library needs at least one class basis".into()))?;
        let frame_shape = first.frame_shape;
        for (i, b) in bases.iter().enumerate() {
            if b.frame_shape != frame_shape {
                return Err(Error::Format(format!(
                    "basis {} has frame shape {:?}, expected {:?}",
                    b.label, b.frame_shape, frame_shape
                )));
            }
            if bases[..i].iter().any(|o| o.label.id == b.label.id) {
                return Err(Error::Config(format!(
                    "duplicate basis for class {}",
                    b.label
                )));
            }
        }
        Ok(EigenBasisLibrary {
            bases,
            frame_shape,
            provenance,
        })
    }

    pub fn basis_of(&self, label: &ClassLabel) -> Result<&EigenBasis> {
        self.bases
            .iter()
            .find(|b| b.label.id == label.id)
            .ok_or_else(|| Error::Config(format!("no basis for class {label}")))
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.bases.iter().map(EigenBasis::rank).collect()
    }
}

/// Mean-centred snapshot SVD of one class, before truncation.
pub fn centered_factors(frames: &[&Image]) -> Result<(DVector<f64>, SvdFactors)> {
    if frames.is_empty() {
        return Err(Error::Capacity(
            "class basis needs at least one frame".into(),
        ));
    }
    let mut matrix = assemble_snapshot_matrix(frames.iter().copied())?.into_matrix();
    let mean = matrix.column_mean();
    for mut col in matrix.column_iter_mut() {
        col -= &mean;
    }
    let factors = svd::svd_auto(&matrix)?;
    Ok((mean, factors))
}

/// Builds one class basis from its frames.
///
/// A class whose centred frames are all zero gets a rank-1 basis along the first pixel
/// direction, and the returned warning says so.
pub fn build_class_basis(
    frames: &[&Image],
    label: &ClassLabel,
    rule: TruncationRule,
) -> Result<(EigenBasis, Option<String>)> {
    let (mean, factors) = centered_factors(frames)?;
    build_from_factors(mean, &factors, label, rule, frames[0].shape(), frames.len())
}

pub fn build_from_factors(
    mean: DVector<f64>,
    factors: &SvdFactors,
    label: &ClassLabel,
    rule: TruncationRule,
    frame_shape: (usize, usize),
    source_frames: usize,
) -> Result<(EigenBasis, Option<String>)> {
    rule.validate()?;
    let degenerate = factors.singular_values().first().is_none_or(|&s| s == 0.0);
    if degenerate {
        let message = format!(
            "class {label}: all {source_frames} frames identical; using a rank-1 canonical basis"
        );
        warn!("{message}");
        let mut basis = DMatrix::zeros(mean.len(), 1);
        basis[(0, 0)] = 1.0;
        return Ok((
            EigenBasis {
                label: label.clone(),
                mean,
                basis,
                sigma: vec![0.0],
                frame_shape,
                source_frames,
            },
            Some(message),
        ));
    }
    let truncated = svd::truncate(factors, rule).map_err(|e| match e {
        Error::Bounds(m) => Error::Bounds(format!("class {label}: {m}")),
        other => other,
    })?;
    let (left, sigma, _) = truncated.into_parts();
    Ok((
        EigenBasis {
            label: label.clone(),
            mean,
            basis: left,
            sigma,
            frame_shape,
            source_frames,
        },
        None,
    ))
}

/// Mean and centred SVD of every roster class, from the frames of its training samples.
pub fn class_factors(split: &DatasetSplit) -> Result<Vec<(DVector<f64>, SvdFactors)>> {
    split
        .roster
        .par_iter()
        .map(|label| {
            centered_factors(&split.training_sample_frames(label)).map_err(|e| match e {
                Error::Capacity(m) => Error::Capacity(format!("class {label}: {m}")),
                other => other,
            })
        })
        .collect()
}

/// Truncates precomputed class factors (from [`class_factors`]) into a library.
pub fn library_from_factors(
    split: &DatasetSplit,
    factors: &[(DVector<f64>, SvdFactors)],
    rule: TruncationRule,
    source: &str,
    seed: u64,
) -> Result<EigenBasisLibrary> {
    let mut provenance = Provenance {
        source: source.to_string(),
        rule: rule.to_string(),
        seed,
        warnings: Vec::new(),
    };
    let mut bases = Vec::with_capacity(factors.len());
    for (label, (mean, f)) in split.roster.iter().zip(factors) {
        let frames = split.training_sample_frames(label).len();
        let (basis, warning) =
            build_from_factors(mean.clone(), f, label, rule, split.frame_shape, frames)?;
        provenance.warnings.extend(warning);
        bases.push(basis);
    }
    EigenBasisLibrary::new(bases, provenance)
}

/// Builds one basis per roster class from the frames of the training samples.
pub fn build_library(
    split: &DatasetSplit,
    rule: TruncationRule,
    source: &str,
    seed: u64,
) -> Result<EigenBasisLibrary> {
    rule.validate()?;
    library_from_factors(split, &class_factors(split)?, rule, source, seed)
}

/// `mean + W W^T (x - mean)` reshaped to the frame; values are not clamped.
pub fn project_image(basis: &EigenBasis, image: &Image) -> Result<Image> {
    let centered = basis.centered(image)?;
    let projected = basis.project_centered(&centered) + &basis.mean;
    Image::new(image.height(), image.width(), projected.as_slice().to_vec())
}

/// Replaces every frame with its projection onto the basis of its own class.
pub fn project_dataset(library: &EigenBasisLibrary, split: &DatasetSplit) -> Result<DatasetSplit> {
    let mut out = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        unseen: Vec::new(),
        view: split.view.clone(),
        frame_shape: split.frame_shape,
        roster: split.roster.clone(),
    };
    for p in Partition::ALL {
        let projected: Vec<LabeledFrame> = split
            .partition(p)
            .par_iter()
            .map(|f| {
                let basis = library.basis_of(&f.label)?;
                Ok(LabeledFrame {
                    image: project_image(basis, &f.image)?,
                    label: f.label.clone(),
                    sample_id: f.sample_id.clone(),
                    frame_index: f.frame_index,
                })
            })
            .collect::<Result<_>>()?;
        *out.partition_mut(p) = projected;
    }
    Ok(out)
}

pub fn encode_library(library: &EigenBasisLibrary) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(FACTORS_MAGIC);
    w.u32(LIBRARY_VERSION);
    w.usize(library.frame_shape.0);
    w.usize(library.frame_shape.1);
    w.usize(library.bases.len());
    w.string(&library.provenance.to_text());
    for b in &library.bases {
        w.usize(b.label.id);
        w.string(&b.label.code);
        w.usize(b.pixel_count());
        w.usize(b.source_frames);
        w.usize(b.rank());
        w.f64s(&b.sigma);
        w.f64s(b.mean.as_slice());
        w.f64s(b.basis.as_slice());
    }
    w.finish()
}

pub fn decode_library(bytes: &[u8], path: &Path) -> Result<EigenBasisLibrary> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(FACTORS_MAGIC)?;
    r.version(LIBRARY_VERSION)?;
    let height = r.count(0)?;
    let width = r.count(0)?;
    let classes = r.count(0)?;
    let provenance = Provenance::from_text(&r.string()?);
    let mut bases = Vec::with_capacity(classes.min(1024));
    for _ in 0..classes {
        let id = r.count(0)?;
        let code = r.string()?;
        let pixels = r.count(8)?;
        if pixels != height * width {
            return Err(Error::Format(format!(
                "{}: class {code} has {pixels} pixels, frame is {height}x{width}",
                path.display()
            )));
        }
        let source_frames = r.count(0)?;
        let rank = r.count(8)?;
        let sigma = r.f64s(rank)?;
        let mean = DVector::from_vec(r.f64s(pixels)?);
        let basis = DMatrix::from_vec(pixels, rank, r.f64s(pixels * rank)?);
        bases.push(EigenBasis {
            label: ClassLabel::new(id, code),
            mean,
            basis,
            sigma,
            frame_shape: (height, width),
            source_frames,
        });
    }
    r.finish()?;
    EigenBasisLibrary::new(bases, provenance)
}

pub fn save_library(path: &Path, library: &EigenBasisLibrary) -> Result<()> {
    fs::write(path, encode_library(library)).map_err(|e| Error::io(path, e))
}

pub fn load_library(path: &Path) -> Result<EigenBasisLibrary> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_library(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
        Image::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn label(id: usize) -> ClassLabel {
        ClassLabel::new(id, format!("C{id}"))
    }

    #[test]
    fn identical_frames_give_canonical_rank_one_basis() {
        let img = Image::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let (b, warning) =
            build_class_basis(&[&img, &img, &img], &label(0), TruncationRule::FixedRank(1))
                .unwrap();
        assert!(warning.is_some());
        assert_eq!(b.rank(), 1);
        assert_eq!(b.mean.as_slice(), img.pixels());
        assert_eq!(b.basis.column(0).as_slice(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn two_frame_centering_finds_the_difference_direction() {
        let u = [0.5, 0.4, 0.3, 0.6, 0.5, 0.2];
        let d = [0.1, -0.05, 0.02, 0.0, 0.03, -0.1];
        let plus = Image::new(2, 3, u.iter().zip(&d).map(|(a, b)| a + b).collect()).unwrap();
        let minus = Image::new(2, 3, u.iter().zip(&d).map(|(a, b)| a - b).collect()).unwrap();
        let (b, _) =
            build_class_basis(&[&plus, &minus], &label(0), TruncationRule::FixedRank(1)).unwrap();
        for (m, x) in b.mean.iter().zip(u) {
            assert!((m - x).abs() < 1e-15);
        }
        let dn = DVector::from_column_slice(&d).normalize();
        assert!((b.basis.column(0).dot(&dn).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_fixes_its_range_and_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames: Vec<Image> = (0..6).map(|_| random_image(&mut rng, 4, 4)).collect();
        let refs: Vec<&Image> = frames.iter().collect();
        let (b, _) = build_class_basis(&refs, &label(0), TruncationRule::FixedRank(3)).unwrap();

        let mean_img = Image::new(4, 4, b.mean.as_slice().to_vec()).unwrap();
        assert_eq!(project_image(&b, &mean_img).unwrap(), mean_img);

        let coeffs = DVector::from_vec(vec![0.3, -0.2, 0.1]);
        let inside = &b.mean + &b.basis * coeffs;
        let inside = Image::new(4, 4, inside.as_slice().to_vec()).unwrap();
        let p = project_image(&b, &inside).unwrap();
        for (a, c) in p.pixels().iter().zip(inside.pixels()) {
            assert!((a - c).abs() < 1e-10);
        }

        let x = random_image(&mut rng, 4, 4);
        let once = project_image(&b, &x).unwrap();
        let twice = project_image(&b, &once).unwrap();
        for (a, c) in once.pixels().iter().zip(twice.pixels()) {
            assert!((a - c).abs() < 1e-10);
        }

        assert!(matches!(
            project_image(&b, &Image::zeros(2, 8)),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn rank_beyond_available_is_a_bounds_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames: Vec<Image> = (0..3).map(|_| random_image(&mut rng, 3, 3)).collect();
        let refs: Vec<&Image> = frames.iter().collect();
        let err = build_class_basis(&refs, &label(0), TruncationRule::FixedRank(4)).unwrap_err();
        assert!(matches!(err, Error::Bounds(_)), "{err}");
        assert!(build_class_basis(&[], &label(0), TruncationRule::FixedRank(1)).is_err());
    }

    fn small_library(rng: &mut ChaCha8Rng, rank: usize) -> EigenBasisLibrary {
        let bases = (0..2)
            .map(|c| {
                let frames: Vec<Image> = (0..5).map(|_| random_image(rng, 3, 2)).collect();
                let refs: Vec<&Image> = frames.iter().collect();
                build_class_basis(&refs, &label(c), TruncationRule::FixedRank(rank))
                    .unwrap()
                    .0
            })
            .collect();
        EigenBasisLibrary::new(
            bases,
            Provenance {
                source: "unit".into(),
                rule: "fixed_rank".into(),
                seed: 3,
                warnings: vec!["w".into()],
            },
        )
        .unwrap()
    }

    #[test]
    fn library_roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let lib = small_library(&mut rng, 2);
        let bytes = encode_library(&lib);
        let back = decode_library(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, lib);
        assert_eq!(encode_library(&back), bytes);

        let mut bad = bytes.clone();
        bad[1] = b'Z';
        assert!(matches!(
            decode_library(&bad, Path::new("mem")),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            decode_library(&bytes[..bytes.len() - 1], Path::new("mem")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn missing_class_basis_is_a_configuration_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let lib = small_library(&mut rng, 1);
        let split = DatasetSplit {
            train: vec![LabeledFrame {
                image: random_image(&mut rng, 3, 2),
                label: label(7),
                sample_id: "s".into(),
                frame_index: 0,
            }],
            validation: vec![],
            test: vec![],
            unseen: vec![],
            view: String::new(),
            frame_shape: (3, 2),
            roster: vec![label(7)],
        };
        let err = project_dataset(&lib, &split).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("C7")));
    }
}
