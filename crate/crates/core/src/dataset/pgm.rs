//! Binary PGM (P5) frames and the `<root>/<class>/<sample>/<frame>.pgm` dataset layout.

use std::fs;
use std::path::{Path, PathBuf};

use super::{ClassLabel, DatasetSplit, Image, Partition, Sample, CARDIAC_CLASS_CODES};
use crate::error::{Error, Result};

pub fn frame_file_name(index: usize) -> String {
    format!("{index:04}.pgm")
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> std::result::Result<usize, String> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format!("missing {what} in header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("bad {what} in header"))
    }
}

/// Decodes a binary PGM, rescaling stored values by the declared maximum into `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<Image, String> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err("not a binary PGM (missing P5 magic)".into());
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(format!("degenerate size {width}x{height}"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("missing separator after maxval".into());
    }
    let raster = &bytes[cur.pos + 1..];
    let bytes_per_value = if maxval < 256 { 1 } else { 2 };
    let expected = width * height * bytes_per_value;
    if raster.len() < expected {
        return Err(format!(
            "truncated raster: {} bytes, expected {expected}",
            raster.len()
        ));
    }
    let scale = maxval as f64;
    let mut pixels = Vec::with_capacity(width * height);
    for i in 0..width * height {
        let stored = if bytes_per_value == 1 {
            raster[i] as usize
        } else {
            u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as usize
        };
        if stored > maxval {
            return Err(format!("value {stored} exceeds maxval {maxval}"));
        }
        pixels.push(stored as f64 / scale);
    }
    Image::new(height, width, pixels).map_err(|e| e.to_string())
}

/// 8-bit P5 encoding; values are clamped to `[0, 1]` and rounded to the nearest level.
pub fn encode_pgm(image: &Image) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", image.width(), image.height());
    let mut out = Vec::with_capacity(header.len() + image.len());
    out.extend_from_slice(header.as_bytes());
    out.extend(
        image
            .pixels()
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    decode_pgm(&bytes).map_err(|reason| Error::Decode {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn write_pgm(path: &Path, image: &Image) -> Result<()> {
    fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if want_dirs {
            if path.is_dir() {
                paths.push(path);
            }
        } else if path.is_file() && path.extension().is_some_and(|e| e == "pgm") {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads every `<root>/<class>/<sample>/*.pgm`, one [`Sample`] per sample directory.
///
/// Class ids follow the cardiac roster order when every class directory uses one of those
/// codes, and lexicographic directory order otherwise.
pub fn load_dataset(root: &Path) -> Result<Vec<Sample>> {
    if !root.is_dir() {
        return Err(Error::Path {
            path: root.to_path_buf(),
            reason: "dataset root is not a directory".into(),
        });
    }
    let class_dirs = sorted_entries(root, true)?;
    if class_dirs.is_empty() {
        return Err(Error::Path {
            path: root.to_path_buf(),
            reason: "no class directories".into(),
        });
    }
    let mut codes: Vec<String> = class_dirs.iter().map(|p| file_name(p)).collect();
    if codes
        .iter()
        .all(|c| CARDIAC_CLASS_CODES.contains(&c.as_str()))
    {
        codes.sort_by_key(|c| CARDIAC_CLASS_CODES.iter().position(|p| p == c));
    }

    let mut samples = Vec::new();
    for (id, code) in codes.iter().enumerate() {
        let label = ClassLabel::new(id, code.clone());
        let class_dir = root.join(code);
        for sample_dir in sorted_entries(&class_dir, true)? {
            let frame_paths = sorted_entries(&sample_dir, false)?;
            let frames = frame_paths
                .iter()
                .map(|p| read_pgm(p))
                .collect::<Result<Vec<_>>>()?;
            let sample_id = file_name(&sample_dir);
            samples.push(
                Sample::new(label.clone(), sample_id, frames).map_err(|e| match e {
                    Error::Format(m) => Error::Format(format!("{}: {m}", sample_dir.display())),
                    other => other,
                })?,
            );
        }
    }
    Ok(samples)
}

/// Writes every frame of a split in the dataset layout under its original frame index,
/// clamped to 8 bits.
pub fn write_split(root: &Path, split: &DatasetSplit) -> Result<()> {
    for p in Partition::ALL {
        for f in split.partition(p) {
            let dir = root.join(&f.label.code).join(&f.sample_id);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_pgm(&dir.join(frame_file_name(f.frame_index)), &f.image)?;
        }
    }
    Ok(())
}

/// Writes samples in the dataset layout, frames numbered from 0.
pub fn write_dataset(root: &Path, samples: &[Sample]) -> Result<()> {
    for sample in samples {
        let dir = root.join(&sample.label.code).join(&sample.sample_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (k, frame) in sample.frames.iter().enumerate() {
            write_pgm(&dir.join(frame_file_name(k)), frame)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pgm_bytes(width: usize, height: usize, maxval: usize, raster: &[u8]) -> Vec<u8> {
        let mut b = format!("P5\n# comment line\n{width} {height}\n{maxval}\n").into_bytes();
        b.extend_from_slice(raster);
        b
    }

    #[test]
    fn rescales_eight_bit_values() {
        let img = decode_pgm(&pgm_bytes(3, 1, 255, &[255, 0, 128])).unwrap();
        assert_eq!(img.pixels(), &[1.0, 0.0, 128.0 / 255.0]);
    }

    #[test]
    fn sixteen_bit_values_are_big_endian() {
        let img = decode_pgm(&pgm_bytes(1, 1, 1000, &[0x01, 0xF4])).unwrap();
        assert_eq!(img.pixels(), &[0.5]);
    }

    #[test]
    fn rejects_malformed_files() {
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(&pgm_bytes(2, 2, 255, &[1, 2, 3])).is_err());
        assert!(decode_pgm(&pgm_bytes(1, 1, 100, &[200])).is_err());
    }

    #[test]
    fn encode_then_decode_quantizes_to_levels() {
        let img = Image::new(1, 4, vec![0.0, 0.5, 1.2, -0.3]).unwrap();
        let back = decode_pgm(&encode_pgm(&img)).unwrap();
        assert_eq!(back.pixels(), &[0.0, 128.0 / 255.0, 1.0, 0.0]);
    }

    #[test]
    fn loads_layout_and_reports_errors() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let sample = Sample::new(ClassLabel::new(0, "H"), "a01", vec![Image::zeros(2, 3)]).unwrap();
        write_dataset(root, &[sample]).unwrap();
        let loaded = load_dataset(root).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].frames[0], Image::zeros(2, 3));
        assert_eq!(loaded[0].label.code, "H");

        assert!(matches!(
            load_dataset(&root.join("missing")),
            Err(Error::Path { .. })
        ));

        let bad = root.join("H/a01/0001.pgm");
        fs::write(&bad, b"garbage").unwrap();
        match load_dataset(root) {
            Err(Error::Decode { path, .. }) => assert_eq!(path, bad),
            other => panic!("expected decode error, got {other:?}"),
        }

        write_pgm(&bad, &Image::zeros(3, 3)).unwrap();
        assert!(matches!(load_dataset(root), Err(Error::Format(_))));
    }

    #[test]
    fn cardiac_codes_keep_roster_order() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<Sample> = ["HT", "DC", "H"]
            .iter()
            .enumerate()
            .map(|(i, c)| {
                Sample::new(ClassLabel::new(i, *c), "s", vec![Image::zeros(1, 1)]).unwrap()
            })
            .collect();
        write_dataset(dir.path(), &samples).unwrap();
        let codes: Vec<_> = load_dataset(dir.path())
            .unwrap()
            .into_iter()
            .map(|s| (s.label.id, s.label.code))
            .collect();
        assert_eq!(
            codes,
            vec![(0, "H".into()), (1, "DC".into()), (2, "HT".into())]
        );
    }
}
