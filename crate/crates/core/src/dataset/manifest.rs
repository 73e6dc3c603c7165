//! Tab-separated split manifest: `<partition>\t<class_code>\t<sample_id>\t<frame_index>`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{roster_of, DatasetSplit, LabeledFrame, Partition, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub partition: Partition,
    pub class_code: String,
    pub sample_id: String,
    pub frame_index: usize,
}

pub fn manifest_text(split: &DatasetSplit) -> String {
    let mut out = String::new();
    for p in Partition::ALL {
        for f in split.partition(p) {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                p.name(),
                f.label.code,
                f.sample_id,
                f.frame_index
            ));
        }
    }
    out
}

pub fn write_manifest(split: &DatasetSplit, path: &Path) -> Result<()> {
    fs::write(path, manifest_text(split)).map_err(|e| Error::io(path, e))
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, line)| {
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |what: &str| Error::Format(format!("manifest line {}: {what}", n + 1));
            if fields.len() != 4 {
                return Err(bad("expected 4 tab-separated fields"));
            }
            Ok(ManifestEntry {
                partition: Partition::parse(fields[0]).ok_or_else(|| bad("unknown partition"))?,
                class_code: fields[1].to_string(),
                sample_id: fields[2].to_string(),
                frame_index: fields[3].parse().map_err(|_| bad("bad frame index"))?,
            })
        })
        .collect()
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

/// Rebuilds a split from loaded samples and a manifest, in manifest order.
pub fn apply_manifest(samples: &[Sample], entries: &[ManifestEntry]) -> Result<DatasetSplit> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Capacity("no samples".into()))?;
    let by_key: HashMap<(&str, &str), &Sample> = samples
        .iter()
        .map(|s| ((s.label.code.as_str(), s.sample_id.as_str()), s))
        .collect();
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        unseen: Vec::new(),
        view: String::new(),
        frame_shape: first.frame_shape(),
        roster: roster_of(samples),
    };
    for e in entries {
        let sample = by_key
            .get(&(e.class_code.as_str(), e.sample_id.as_str()))
            .ok_or_else(|| {
                Error::Format(format!(
                    "manifest references missing sample {}/{}",
                    e.class_code, e.sample_id
                ))
            })?;
        let image = sample.frames.get(e.frame_index).ok_or_else(|| {
            Error::Format(format!(
                "manifest references frame {} of {}/{}, which has {} frames",
                e.frame_index,
                e.class_code,
                e.sample_id,
                sample.frames.len()
            ))
        })?;
        if image.shape() != split.frame_shape {
            return Err(Error::Format(format!(
                "sample {} has frames of {:?}, expected {:?}",
                e.sample_id,
                image.shape(),
                split.frame_shape
            )));
        }
        split.partition_mut(e.partition).push(LabeledFrame {
            image: image.clone(),
            label: sample.label.clone(),
            sample_id: e.sample_id.clone(),
            frame_index: e.frame_index,
        });
    }
    Ok(split)
}
