use std::fs;
use std::path::{Path, PathBuf};

use eigenhearts::convnet::{load_checkpoint, save_checkpoint};
use eigenhearts::dataset::{write_dataset, write_manifest, write_split};
use eigenhearts::eigenbasis::{class_factors, library_from_factors};
use eigenhearts::evaluator::{data_hash, ReportMetadata};
use eigenhearts::experiment::{
    load_split, residual_baseline, synthetic_split, MANIFEST_FILE, SPEC_FILE,
};
use eigenhearts::svd::spectrum_csv;
use eigenhearts::{
    accuracy, confusion, gavish_donoho_rank, init_model, load_library, project_dataset,
    run_experiment, save_library, ConvNetArch, DatasetSplit, Error, EvaluationReport,
    ExperimentConfig, Partition, Result, SyntheticSpec, TrainConfig,
};
use log::info;
use serde::Serialize;

use crate::{Command, RuleArgs, TrainArgs};

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { spec, out } => synth(&spec, &out),
        Command::IngestCheck { data, seed } => ingest_check(&data, seed),
        Command::BuildBasis {
            data,
            rules,
            seed,
            out,
        } => build_basis(&data, &rules, seed, &out),
        Command::Spectrum { data, seed, out } => spectrum(&data, seed, &out),
        Command::Project {
            data,
            library,
            seed,
            out,
        } => project(&data, &library, seed, &out),
        Command::Train {
            data,
            library,
            train,
            seed,
            out,
        } => train_model(&data, library.as_deref(), &train, seed, &out),
        Command::Evaluate {
            data,
            model,
            library,
            seed,
            out,
        } => evaluate(&data, &model, library.as_deref(), seed, &out),
        Command::Experiment {
            config,
            data,
            spec,
            rules,
            runs,
            train,
            seed,
            out,
        } => experiment(
            config.as_deref(),
            data.as_deref(),
            spec.as_deref(),
            &rules,
            runs,
            &train,
            seed,
            out.as_deref(),
        ),
    }
}

fn synth(spec_path: &Path, out: &Path) -> Result<()> {
    let spec = SyntheticSpec::parse(&read_text(spec_path)?)?;
    let (samples, split) = synthetic_split(&spec)?;
    create_dir(out)?;
    write_dataset(out, &samples)?;
    write_manifest(&split, &out.join(MANIFEST_FILE))?;
    write(&out.join(SPEC_FILE), &spec.to_config_text())?;
    let frames: usize = samples.iter().map(|s| s.frames.len()).sum();
    println!(
        "wrote {} classes, {} samples, {frames} frames to {}",
        split.roster.len(),
        samples.len(),
        out.display()
    );
    Ok(())
}

fn ingest_check(data: &Path, seed: u64) -> Result<()> {
    let split = load_split(data, seed)?;
    let (h, w) = split.frame_shape;
    println!("view\t{}", split.view);
    println!("frame_shape\t{h}x{w}");
    println!(
        "manifest\t{}",
        if data.join(MANIFEST_FILE).is_file() {
            "present"
        } else {
            "inferred"
        }
    );
    for p in Partition::ALL {
        let counts = split.class_counts(p);
        let cells: Vec<String> = split
            .roster
            .iter()
            .zip(&counts)
            .map(|(l, c)| format!("{}={c}", l.code))
            .collect();
        println!("{}\t{}", p.name(), cells.join("\t"));
        if counts.windows(2).any(|c| c[0] != c[1]) {
            log::warn!("partition {} is not balanced across classes", p.name());
        }
    }
    println!("data_hash\t{}", data_hash(&split));
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{suffix}"),
    };
    path.with_file_name(name)
}

fn require_rules(rules: &RuleArgs) -> Result<Vec<eigenhearts::TruncationRule>> {
    if rules.is_empty() {
        return Err(Error::Config("give --rank, --tolerance or --gavish".into()));
    }
    let rules = rules.rules();
    for r in &rules {
        r.validate().map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(rules)
}

fn build_basis(data: &Path, rules: &RuleArgs, seed: u64, out: &Path) -> Result<()> {
    let rules = require_rules(rules)?;
    let split = load_split(data, seed)?;
    let factors = class_factors(&split)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    for (label, (_, f)) in split.roster.iter().zip(&factors) {
        write(
            &with_suffix(out, &format!("spectrum_{}", label.code)).with_extension("csv"),
            &spectrum_csv(f),
        )?;
    }
    for rule in &rules {
        let library = library_from_factors(&split, &factors, *rule, &split.view, seed)?;
        let path = if rules.len() == 1 {
            out.to_path_buf()
        } else {
            with_suffix(out, &rule.tag())
        };
        save_library(&path, &library)?;
        for b in &library.bases {
            info!("{rule}: class {} rank {}", b.label.code, b.rank());
        }
        println!(
            "{}\t{}\t{}",
            path.display(),
            rule.tag(),
            library
                .ranks()
                .iter()
                .map(|r| r.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
    }
    Ok(())
}

fn spectrum(data: &Path, seed: u64, out: &Path) -> Result<()> {
    let split = load_split(data, seed)?;
    create_dir(out)?;
    for (label, (_, f)) in split.roster.iter().zip(class_factors(&split)?) {
        let path = out.join(format!("spectrum_{}.csv", label.code));
        write(&path, &spectrum_csv(&f))?;
        println!(
            "{}\tgavish_rank {}\t{}",
            label.code,
            gavish_donoho_rank(&f),
            path.display()
        );
    }
    Ok(())
}

fn rank_tag(ranks: &[usize]) -> String {
    if ranks.windows(2).all(|w| w[0] == w[1]) {
        ranks.first().map(|r| r.to_string()).unwrap_or_default()
    } else {
        ranks
            .iter()
            .map(|r| r.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }
}

fn project(data: &Path, library: &Path, seed: u64, out: &Path) -> Result<()> {
    let library = load_library(library)?;
    let split = load_split(data, seed)?;
    let projected = project_dataset(&library, &split)?;
    let dir = out.join(format!(
        "{}_proj_r{}",
        split.view,
        rank_tag(&library.ranks())
    ));
    create_dir(&dir)?;
    write_split(&dir, &projected)?;
    write_manifest(&projected, &dir.join(MANIFEST_FILE))?;
    println!("{}", dir.display());
    Ok(())
}

fn arch_for(split: &DatasetSplit, args: &TrainArgs) -> Result<ConvNetArch> {
    let (h, w) = split.frame_shape;
    match &args.arch {
        Some(a) => {
            let (channels, hidden) = ConvNetArch::parse_layers(a)?;
            ConvNetArch::new(h, w, channels, hidden, split.roster.len())
        }
        None => ConvNetArch::default_for(h, w, split.roster.len()),
    }
}

fn train_config(args: &TrainArgs, seed: u64) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        epochs: args.epochs.unwrap_or(d.epochs),
        batch_size: args.batch.unwrap_or(d.batch_size),
        learning_rate: args.lr.unwrap_or(d.learning_rate),
        seed,
        ..d
    }
}

fn inputs(
    data: &Path,
    library: Option<&Path>,
    seed: u64,
) -> Result<(DatasetSplit, Option<eigenhearts::EigenBasisLibrary>)> {
    let split = load_split(data, seed)?;
    match library {
        Some(p) => {
            let lib = load_library(p)?;
            Ok((project_dataset(&lib, &split)?, Some(lib)))
        }
        None => Ok((split, None)),
    }
}

fn train_model(
    data: &Path,
    library: Option<&Path>,
    args: &TrainArgs,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let (split, _) = inputs(data, library, seed)?;
    let arch = arch_for(&split, args)?;
    let config = train_config(args, seed);
    config.validate()?;
    let (model, history) = eigenhearts::train(
        init_model(arch, seed),
        split.partition(Partition::Train),
        split.partition(Partition::Validation),
        &split.roster,
        &config,
    )?;
    create_dir(out)?;
    save_checkpoint(&out.join("model.ehcn"), &model)?;
    write(&out.join("history.csv"), &history.to_csv())?;
    if let Some(last) = history.epochs.last() {
        println!(
            "epoch {}\ttrain_acc {}\tval_acc {}",
            last.epoch, last.train_acc, last.val_acc
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct Evaluation {
    validation: Option<EvaluationReport>,
    testing: Option<EvaluationReport>,
    unseen: Option<EvaluationReport>,
    residual_baseline: Option<eigenhearts::experiment::ResidualBaseline>,
}

fn evaluate(
    data: &Path,
    model: &Path,
    library: Option<&Path>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let model = load_checkpoint(model)?;
    let raw = load_split(data, seed)?;
    let (split, lib) = match library {
        Some(p) => {
            let lib = load_library(p)?;
            (project_dataset(&lib, &raw)?, Some(lib))
        }
        None => (raw.clone(), None),
    };
    let metadata = ReportMetadata {
        rank: lib
            .as_ref()
            .map(|l| rank_tag(&l.ranks()))
            .unwrap_or_else(|| "raw".into()),
        view: split.view.clone(),
        data_hash: data_hash(&raw),
        seed,
    };
    let score = |p: Partition| -> Result<Option<EvaluationReport>> {
        let frames = split.partition(p);
        if frames.is_empty() {
            return Ok(None);
        }
        let pairs = eigenhearts::predict(&model, frames, &split.roster)?;
        let m = confusion(&pairs, &split.roster)?;
        println!("{}\taccuracy {}", p.name(), accuracy(&pairs)?);
        EvaluationReport::from_runs(&[(accuracy(&pairs)?, m)], metadata.clone()).map(Some)
    };
    let report = Evaluation {
        validation: score(Partition::Validation)?,
        testing: score(Partition::Test)?,
        unseen: score(Partition::Unseen)?,
        residual_baseline: lib
            .as_ref()
            .map(|l| residual_baseline(l, &raw))
            .transpose()?,
    };
    create_dir(out)?;
    let path = out.join("evaluation.json");
    write(
        &path,
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    println!("{}", path.display());
    Ok(())
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

#[allow(clippy::too_many_arguments)]
fn experiment(
    config: Option<&Path>,
    data: Option<&Path>,
    spec: Option<&Path>,
    rules: &RuleArgs,
    runs: Option<usize>,
    train: &TrainArgs,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<()> {
    let (text, base) = match config {
        Some(p) => (
            read_text(p)?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (String::new(), PathBuf::from(".")),
    };
    let overridden = |key: &str| match key {
        "data" | "spec" => data.is_some() || spec.is_some(),
        "rank" | "tolerance" | "gavish" => !rules.is_empty(),
        _ => false,
    };
    let mut lines: Vec<String> = text
        .lines()
        .filter(|l| {
            let key = l
                .split('#')
                .next()
                .unwrap_or("")
                .split('=')
                .next()
                .unwrap_or("")
                .trim();
            !overridden(key)
        })
        .map(str::to_string)
        .collect();
    let mut push = |k: &str, v: String| lines.push(format!("{k}={v}"));
    if let Some(d) = data {
        push("data", absolute(d)?.display().to_string());
    }
    if let Some(s) = spec {
        push("spec", absolute(s)?.display().to_string());
    }
    for r in &rules.ranks {
        push("rank", r.to_string());
    }
    for t in &rules.tolerances {
        push("tolerance", t.to_string());
    }
    if rules.gavish {
        push("gavish", "true".into());
    }
    if let Some(v) = runs {
        push("runs", v.to_string());
    }
    if let Some(v) = train.epochs {
        push("epochs", v.to_string());
    }
    if let Some(v) = train.batch {
        push("batch", v.to_string());
    }
    if let Some(v) = train.lr {
        push("lr", v.to_string());
    }
    if let Some(v) = &train.arch {
        push("arch", v.clone());
    }
    if let Some(v) = seed {
        push("seed", v.to_string());
    }
    if let Some(o) = out {
        push("out", absolute(o)?.display().to_string());
    }
    let config = ExperimentConfig::parse(&lines.join("\n"), &base)?;
    let outcome = run_experiment(&config)?;
    print!("{}", outcome.summary());
    match outcome.failures.into_iter().next() {
        Some((_, e)) => Err(e),
        None => Ok(()),
    }
}
