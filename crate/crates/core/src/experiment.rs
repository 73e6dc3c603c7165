//! End-to-end protocol: raw and projected arms, repeated CNN runs, residual baseline,
//! aggregate reports.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::DVector;
use serde::Serialize;

use crate::config::KeyValues;
use crate::convnet::{self, init_model, ConvNetArch, TrainConfig};
use crate::dataset::{
    apply_manifest, generate_synthetic, load_dataset, read_manifest, split_dataset, write_manifest,
    DatasetSplit, LabeledFrame, Partition, Sample, SplitPolicy, SyntheticSpec,
};
use crate::eigenbasis::{
    class_factors, library_from_factors, project_dataset, save_library, EigenBasisLibrary,
};
use crate::error::{Error, Result};
use crate::evaluator::{
    accuracy, confusion, data_hash, majority_vote_accuracy, EvaluationReport, ReportMetadata,
    RunAggregate,
};
use crate::subspace::{classify_split, residual_csv, residual_reports};
use crate::svd::{SvdFactors, TruncationRule};

/// Split manifest stored next to the class directories.
pub const MANIFEST_FILE: &str = "manifest.tsv";
/// Copy of the generator settings written by `synth`.
pub const SPEC_FILE: &str = "synth.spec";

pub const LEAK_CAVEAT: &str = "projected arms give the network the projection of every \
validation, test and unseen frame onto the basis of its true class, so class labels are \
used at inference; the residual baseline is the label-free comparison";

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Directory(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Arm {
    Raw,
    Projected(TruncationRule),
}

impl Arm {
    pub fn name(&self) -> String {
        match self {
            Arm::Raw => "raw".into(),
            Arm::Projected(rule) => rule.tag(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub view: String,
    pub rules: Vec<TruncationRule>,
    pub runs: usize,
    pub train: TrainConfig,
    pub layers: ([usize; 3], usize),
    pub seed: u64,
    pub out: PathBuf,
}

pub const CONFIG_KEYS: [&str; 13] = [
    "data",
    "spec",
    "view",
    "rank",
    "tolerance",
    "gavish",
    "runs",
    "epochs",
    "batch",
    "lr",
    "seed",
    "arch",
    "out",
];

impl ExperimentConfig {
    /// Parses a `key=value` experiment file; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.reject_unknown(&CONFIG_KEYS)?;
        let resolve = |p: &str| base.join(p);
        let data = match (kv.raw("data"), kv.raw("spec")) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either data= or spec=, not both".into()))
            }
            (Some(d), None) => DataSource::Directory(resolve(d)),
            (None, Some(s)) => {
                let path = resolve(s);
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                DataSource::Synthetic(SyntheticSpec::parse(&text)?)
            }
            (None, None) => return Err(Error::Config("missing data= or spec=".into())),
        };
        let mut rules: Vec<TruncationRule> = kv
            .get_all::<usize>("rank")?
            .into_iter()
            .map(TruncationRule::FixedRank)
            .collect();
        rules.extend(
            kv.get_all::<f64>("tolerance")?
                .into_iter()
                .map(TruncationRule::EnergyTolerance),
        );
        if kv.get::<bool>("gavish")?.unwrap_or(false) {
            rules.push(TruncationRule::GavishDonoho);
        }
        let defaults = TrainConfig::default();
        let seed = kv.get("seed")?.unwrap_or(0);
        let layers = match kv.raw("arch") {
            Some(a) => ConvNetArch::parse_layers(a)?,
            None => ([32, 64, 64], 128),
        };
        let config = ExperimentConfig {
            data,
            view: kv.get("view")?.unwrap_or_default(),
            rules,
            runs: kv.get("runs")?.unwrap_or(5),
            train: TrainConfig {
                epochs: kv.get("epochs")?.unwrap_or(defaults.epochs),
                batch_size: kv.get("batch")?.unwrap_or(defaults.batch_size),
                learning_rate: kv.get("lr")?.unwrap_or(defaults.learning_rate),
                seed,
                ..defaults
            },
            layers,
            seed,
            out: resolve(kv.raw("out").unwrap_or("out")),
        };
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.rules.is_empty() {
            return Err(Error::Config(
                "at least one truncation rule is required".into(),
            ));
        }
        for r in &self.rules {
            r.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.train.validate()
    }

    pub fn arms(&self) -> Vec<Arm> {
        std::iter::once(Arm::Raw)
            .chain(self.rules.iter().copied().map(Arm::Projected))
            .collect()
    }
}

/// Split policy for a loaded dataset without a manifest: the reference sample and frame
/// ratios scaled to the smallest class and shortest sample.
pub fn infer_policy(samples: &[Sample]) -> Result<SplitPolicy> {
    let roster = crate::dataset::roster_of(samples);
    let per_class = roster
        .iter()
        .map(|l| samples.iter().filter(|s| s.label.id == l.id).count())
        .min()
        .ok_or_else(|| Error::Capacity("no samples".into()))?;
    let frames = samples.iter().map(|s| s.frames.len()).min().unwrap_or(0);
    Ok(SplitPolicy::proportional(per_class, frames))
}

/// Loads a dataset directory, using its manifest when present.
pub fn load_split(root: &Path, seed: u64) -> Result<DatasetSplit> {
    let samples = load_dataset(root)?;
    let manifest = root.join(MANIFEST_FILE);
    let mut split = if manifest.is_file() {
        apply_manifest(&samples, &read_manifest(&manifest)?)?
    } else {
        let policy = infer_policy(&samples)?;
        info!(
            "no manifest in {}; splitting with {policy:?}",
            root.display()
        );
        split_dataset(samples, &policy, seed)?
    };
    if split.view.is_empty() {
        split.view = root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(split)
}

/// Generates the synthetic samples and their split.
pub fn synthetic_split(spec: &SyntheticSpec) -> Result<(Vec<Sample>, DatasetSplit)> {
    let samples = generate_synthetic(spec)?;
    let policy = infer_policy(&samples)?;
    let split = split_dataset(samples.clone(), &policy, spec.seed)?;
    Ok((samples, split))
}

pub fn load_source(source: &DataSource, seed: u64) -> Result<DatasetSplit> {
    match source {
        DataSource::Directory(p) => load_split(p, seed),
        DataSource::Synthetic(spec) => {
            let (_, mut split) = synthetic_split(spec)?;
            split.view = "synthetic".into();
            Ok(split)
        }
    }
}

/// Frames of one partition in the raw split or in a projected copy.
fn frames(split: &DatasetSplit, p: Partition) -> &[LabeledFrame] {
    split.partition(p)
}

const EVALUATED: [Partition; 3] = [Partition::Validation, Partition::Test, Partition::Unseen];

fn report_name(p: Partition) -> &'static str {
    match p {
        Partition::Validation => "validation",
        Partition::Test => "testing",
        Partition::Unseen => "unseen",
        Partition::Train => "training",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualBaseline {
    pub validation: Option<f64>,
    pub testing: Option<f64>,
    pub unseen: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmReport {
    pub arm: String,
    pub caveat: Option<String>,
    pub ranks: Vec<usize>,
    pub validation: Option<EvaluationReport>,
    pub testing: Option<EvaluationReport>,
    pub unseen: Option<EvaluationReport>,
    /// Extra metric: per-sample majority vote over unseen frames, one value per run.
    pub unseen_majority_vote: Vec<f64>,
    /// Nearest-subspace accuracy on raw frames; absent on the raw arm.
    pub residual_baseline: Option<ResidualBaseline>,
}

impl ArmReport {
    fn aggregate(report: &Option<EvaluationReport>) -> String {
        match report {
            Some(r) => RunAggregate {
                accuracies: r.accuracies.clone(),
                mean: r.mean,
                std: r.std,
            }
            .display(),
            None => "n/a".into(),
        }
    }

    /// `<arm>\tvalidation m±s\ttesting m±s\tunseen m±s`
    pub fn summary_row(&self) -> String {
        format!(
            "{}\tvalidation {}\ttesting {}\tunseen {}",
            self.arm,
            Self::aggregate(&self.validation),
            Self::aggregate(&self.testing),
            Self::aggregate(&self.unseen)
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub reports: Vec<ArmReport>,
    pub failures: Vec<(String, Error)>,
    pub data_hash: String,
}

impl ExperimentOutcome {
    pub fn summary(&self) -> String {
        let mut out = format!("# data {}\n# caveat: {LEAK_CAVEAT}\n", self.data_hash);
        for r in &self.reports {
            out.push_str(&r.summary_row());
            out.push('\n');
        }
        for (arm, e) in &self.failures {
            out.push_str(&format!("{arm}\tfailed: {e}\n"));
        }
        out
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn residual_baseline(
    library: &EigenBasisLibrary,
    split: &DatasetSplit,
) -> Result<ResidualBaseline> {
    let score = |p: Partition| -> Result<Option<f64>> {
        let f = frames(split, p);
        if f.is_empty() {
            return Ok(None);
        }
        Ok(Some(accuracy(&classify_split(library, f)?)?))
    };
    Ok(ResidualBaseline {
        validation: score(Partition::Validation)?,
        testing: score(Partition::Test)?,
        unseen: score(Partition::Unseen)?,
    })
}

type ClassFactors = Vec<(DVector<f64>, SvdFactors)>;

fn run_arm(
    arm: Arm,
    config: &ExperimentConfig,
    split: &DatasetSplit,
    factors: &mut Option<ClassFactors>,
    hash: &str,
    dir: &Path,
) -> Result<ArmReport> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (data, ranks, baseline) = match arm {
        Arm::Raw => (None, Vec::new(), None),
        Arm::Projected(rule) => {
            if factors.is_none() {
                *factors = Some(class_factors(split)?);
            }
            let factors = factors.as_deref().expect("computed above");
            let library = library_from_factors(split, factors, rule, &split.view, config.seed)?;
            for w in &library.provenance.warnings {
                warn!("{w}");
            }
            save_library(&dir.join("library.eigh"), &library)?;
            let ranks = library.ranks();
            info!("arm {}: ranks {ranks:?}", arm.name());
            let unseen = frames(split, Partition::Unseen);
            if !unseen.is_empty() {
                let reports = residual_reports(&library, unseen)?;
                write(
                    &dir.join("residuals_unseen.csv"),
                    &residual_csv(&library, unseen, &reports),
                )?;
            }
            let baseline = residual_baseline(&library, split)?;
            (
                Some(project_dataset(&library, split)?),
                ranks,
                Some(baseline),
            )
        }
    };
    let data = data.as_ref().unwrap_or(split);
    let (h, w) = split.frame_shape;
    let arch = ConvNetArch::new(h, w, config.layers.0, config.layers.1, split.roster.len())?;

    let mut per_partition: Vec<Vec<(f64, crate::evaluator::ConfusionMatrix)>> = vec![Vec::new(); 3];
    let mut majority = Vec::new();
    for run in 0..config.runs {
        let seed = config.seed + run as u64;
        let train_config = TrainConfig {
            seed,
            ..config.train
        };
        info!("arm {} run {}/{}", arm.name(), run + 1, config.runs);
        let (model, history) = convnet::train(
            init_model(arch, seed),
            frames(data, Partition::Train),
            frames(data, Partition::Validation),
            &split.roster,
            &train_config,
        )?;
        write(
            &dir.join(format!("run{run}_history.csv")),
            &history.to_csv(),
        )?;
        for (slot, p) in EVALUATED.into_iter().enumerate() {
            let f = frames(data, p);
            if f.is_empty() {
                continue;
            }
            let pairs = convnet::predict(&model, f, &split.roster)?;
            let m = confusion(&pairs, &split.roster)?;
            write(
                &dir.join(format!("run{run}_{}_confusion.csv", report_name(p))),
                &m.to_csv(),
            )?;
            if p == Partition::Unseen {
                let predicted: Vec<_> = pairs.iter().map(|(_, q)| q.clone()).collect();
                majority.push(majority_vote_accuracy(f, &predicted)?);
            }
            per_partition[slot].push((accuracy(&pairs)?, m));
        }
    }

    let metadata = ReportMetadata {
        rank: if ranks.is_empty() {
            "raw".into()
        } else {
            format!(
                "{}:{}",
                arm.name(),
                ranks
                    .iter()
                    .map(|r| r.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            )
        },
        view: split.view.clone(),
        data_hash: hash.to_string(),
        seed: config.seed,
    };
    let mut reports = per_partition
        .iter()
        .map(|runs| {
            if runs.is_empty() {
                Ok(None)
            } else {
                EvaluationReport::from_runs(runs, metadata.clone()).map(Some)
            }
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    let report = ArmReport {
        arm: arm.name(),
        caveat: matches!(arm, Arm::Projected(_)).then(|| LEAK_CAVEAT.to_string()),
        ranks,
        validation: reports.next().flatten(),
        testing: reports.next().flatten(),
        unseen: reports.next().flatten(),
        unseen_majority_vote: majority,
        residual_baseline: baseline,
    };
    write(&dir.join("report.json"), &report.to_json())?;
    Ok(report)
}

/// Runs every arm; a failing arm is recorded and the rest continue.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let mut split = load_source(&config.data, config.seed)?;
    if !config.view.is_empty() {
        split.view = config.view.clone();
    }
    fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
    write_manifest(&split, &config.out.join(MANIFEST_FILE))?;
    let hash = data_hash(&split);

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    let mut factors = None;
    for arm in config.arms() {
        let dir = config.out.join(arm.name());
        match run_arm(arm, config, &split, &mut factors, &hash, &dir) {
            Ok(r) => {
                info!("{}", r.summary_row());
                reports.push(r);
            }
            Err(e) => {
                warn!("arm {} failed: {e}", arm.name());
                failures.push((arm.name(), e));
            }
        }
    }
    let outcome = ExperimentOutcome {
        reports,
        failures,
        data_hash: hash,
    };
    write(&config.out.join("summary.tsv"), &outcome.summary())?;
    Ok(outcome)
}
