//! Seeded synthetic image ensembles with a known per-class intrinsic rank.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{default_roster, Image, Sample};
use crate::config::KeyValues;
use crate::error::{Error, Result};

/// Weight of the background pattern shared by every class.
const SHARED_BACKGROUND: f64 = 0.2;
/// Pixel-cell edge length; pattern supports are unions of disjoint cells.
const CELL: usize = 2;
/// Largest noise-free intensity.
const PEAK: f64 = 0.9;
/// Spread of a sample's mean mixing weights and of frames around that mean.
const SAMPLE_SPREAD: (f64, f64) = (0.2, 0.8);
const FRAME_JITTER: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub class_count: usize,
    pub frames_per_class: usize,
    pub image_side: usize,
    pub intrinsic_rank: usize,
    pub noise_level: f64,
    pub seed: u64,
    /// Recordings per class; frames are spread over them as evenly as possible.
    pub samples_per_class: usize,
}

impl SyntheticSpec {
    pub const DEFAULT_SAMPLES_PER_CLASS: usize = 8;

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.class_count == 0 {
            return fail("classes must be at least 1".into());
        }
        if self.intrinsic_rank == 0 || self.intrinsic_rank >= self.frames_per_class {
            return fail(format!(
                "rank must satisfy 1 <= rank < frames, got rank={} frames={}",
                self.intrinsic_rank, self.frames_per_class
            ));
        }
        if self.image_side < 8 {
            return fail(format!("side must be at least 8, got {}", self.image_side));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return fail(format!(
                "noise must be finite and >= 0, got {}",
                self.noise_level
            ));
        }
        if self.samples_per_class == 0 || self.samples_per_class > self.frames_per_class {
            return fail(format!(
                "samples must be in 1..=frames, got {}",
                self.samples_per_class
            ));
        }
        let cells = (self.image_side / CELL).pow(2);
        if cells < self.class_count * self.intrinsic_rank {
            return fail(format!(
                "a {side}x{side} image cannot hold {} disjoint patterns",
                self.class_count * self.intrinsic_rank,
                side = self.image_side
            ));
        }
        Ok(())
    }

    /// Parses `classes=5`, `frames=120`, `side=64`, `rank=5`, `noise=0.05`, `seed=7`
    /// and the optional `samples=8`.
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.reject_unknown(&[
            "classes", "frames", "side", "rank", "noise", "seed", "samples",
        ])?;
        let spec = SyntheticSpec {
            class_count: kv.require("classes")?,
            frames_per_class: kv.require("frames")?,
            image_side: kv.require("side")?,
            intrinsic_rank: kv.require("rank")?,
            noise_level: kv.require("noise")?,
            seed: kv.require("seed")?,
            samples_per_class: kv
                .get("samples")?
                .unwrap_or(Self::DEFAULT_SAMPLES_PER_CLASS),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_config_text(&self) -> String {
        format!(
            "classes={}\nframes={}\nside={}\nrank={}\nnoise={}\nseed={}\nsamples={}\n",
            self.class_count,
            self.frames_per_class,
            self.image_side,
            self.intrinsic_rank,
            self.noise_level,
            self.seed,
            self.samples_per_class
        )
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Per-class spatial patterns: disjoint nonnegative cell patterns (orthonormal across all
/// classes) each blended with one shared background and renormalized.
fn class_patterns(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<Vec<f64>>> {
    let side = spec.image_side;
    let cells_per_row = side / CELL;
    let mut cells: Vec<usize> = (0..cells_per_row * cells_per_row).collect();
    cells.shuffle(rng);
    let pattern_count = spec.class_count * spec.intrinsic_rank;
    let cells_per_pattern = cells.len() / pattern_count;

    let mut background: Vec<f64> = (0..side * side)
        .map(|p| {
            let (y, x) = ((p / side) as f64, (p % side) as f64);
            let c = (side as f64 - 1.0) / 2.0;
            let r = ((y - c).powi(2) + (x - c).powi(2)).sqrt() / c;
            1.0 - 0.5 * r.min(1.0)
        })
        .collect();
    normalize(&mut background);

    let mut patterns = Vec::with_capacity(spec.class_count);
    for c in 0..spec.class_count {
        let mut class = Vec::with_capacity(spec.intrinsic_rank);
        for i in 0..spec.intrinsic_rank {
            let g = c * spec.intrinsic_rank + i;
            let mut q = vec![0.0; side * side];
            for &cell in &cells[g * cells_per_pattern..(g + 1) * cells_per_pattern] {
                let (cy, cx) = (cell / cells_per_row, cell % cells_per_row);
                let value = rng.random_range(0.5..1.0);
                for dy in 0..CELL {
                    for dx in 0..CELL {
                        q[(cy * CELL + dy) * side + cx * CELL + dx] = value;
                    }
                }
            }
            normalize(&mut q);
            let mut p: Vec<f64> = q
                .iter()
                .zip(&background)
                .map(|(a, b)| a + SHARED_BACKGROUND * b)
                .collect();
            normalize(&mut p);
            class.push(p);
        }
        patterns.push(class);
    }
    patterns
}

/// Generates `frames_per_class` frames per class, each a nonnegative mixture of the class
/// patterns plus i.i.d. Gaussian noise, clamped to `[0, 1]`.
///
/// Every sample draws its own mean mixing weights, so recordings of one class differ from
/// each other the way different subjects do. Without noise no clamping occurs and each
/// class snapshot matrix has rank exactly `intrinsic_rank`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let patterns = class_patterns(spec, &mut rng);
    let pixel_count = spec.image_side * spec.image_side;

    let peak_sum = patterns
        .iter()
        .flat_map(|class| {
            (0..pixel_count).map(move |p| class.iter().map(|pat| pat[p]).sum::<f64>())
        })
        .fold(0.0, f64::max);
    let amplitude = PEAK / peak_sum;

    let roster = default_roster(spec.class_count);
    let base = spec.frames_per_class / spec.samples_per_class;
    let extra = spec.frames_per_class % spec.samples_per_class;
    let mut samples = Vec::with_capacity(spec.class_count * spec.samples_per_class);
    for (c, label) in roster.into_iter().enumerate() {
        for s in 0..spec.samples_per_class {
            let mean: Vec<f64> = (0..spec.intrinsic_rank)
                .map(|_| rng.random_range(SAMPLE_SPREAD.0..SAMPLE_SPREAD.1))
                .collect();
            let count = base + usize::from(s < extra);
            let mut frames = Vec::with_capacity(count);
            for _ in 0..count {
                let weights: Vec<f64> = mean
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (m + FRAME_JITTER * z).clamp(0.0, 1.0)
                    })
                    .collect();
                let mut pixels = vec![0.0; pixel_count];
                for (w, pat) in weights.iter().zip(&patterns[c]) {
                    for (px, v) in pixels.iter_mut().zip(pat) {
                        *px += amplitude * w * v;
                    }
                }
                if spec.noise_level > 0.0 {
                    for px in pixels.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *px = (*px + spec.noise_level * z).clamp(0.0, 1.0);
                    }
                }
                frames.push(Image::new(spec.image_side, spec.image_side, pixels)?);
            }
            samples.push(Sample::new(
                label.clone(),
                format!("{}{:03}", label.code, s),
                frames,
            )?);
        }
    }
    Ok(samples)
}
