// SPDX-License-Identifier: Apache-2.0

//! One function per subcommand. Every artifact lives under `config.out`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use recunlearn::dataset::{binarize, flip_labels, k_core_filter, parse_interactions, remove_interactions, split};
use recunlearn::evaluation::{compare, ComparedModels, Comparison};
use recunlearn::trainer::{read_params, write_params, EpochLog};
use recunlearn::{
    benchmark, retrain_from_scratch, synthetic, train, unlearn_params, AttackManifest, CsvSchema, Dataset, EvalReport,
    HeaderPolicy, ModelParams, TrainConfig, UnlearnOptions, UnlearnStats,
};
use serde::Serialize;

use crate::config::{HeaderSetting, RunConfig};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub const RATINGS: &str = "ratings.csv";
pub const TRAIN: &str = "train.tsv";
pub const VALID: &str = "valid.tsv";
pub const TEST: &str = "test.tsv";
pub const ATTACKED: &str = "attacked.tsv";
pub const MANIFEST: &str = "manifest.txt";
pub const ORIGINAL: &str = "original.ckpt";
pub const UNLEARNED: &str = "unlearned.ckpt";
pub const RETRAINED: &str = "retrained.ckpt";

fn path(config: &RunConfig, name: &str) -> PathBuf {
    config.out.join(name)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn finish(path: &Path, mut out: BufWriter<File>) -> Result<()> {
    out.flush().map_err(|e| CliError::io(path, e))
}

fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut out = create(path)?;
    ds.write_to(&mut out).map_err(|e| CliError::in_file(path, e))?;
    finish(path, out)
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::read_from(open(path)?).map_err(|e| CliError::in_file(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::io(path, e.into()))?;
    writeln!(out).map_err(|e| CliError::io(path, e))?;
    finish(path, out)
}

fn write_checkpoint(path: &Path, params: &ModelParams, config: &RunConfig) -> Result<()> {
    let mut out = create(path)?;
    write_params(&mut out, params, config.model.kind(), config.train.seed).map_err(|e| CliError::in_file(path, e))?;
    finish(path, out)
}

fn read_checkpoint(path: &Path, config: &RunConfig) -> Result<ModelParams> {
    let (header, params) = read_params(open(path)?).map_err(|e| CliError::in_file(path, e))?;
    if header.kind != config.model.kind() {
        return Err(CliError::Usage(format!(
            "{} holds a {} model but the config asks for {}",
            path.display(),
            header.kind.name(),
            config.model.kind().name()
        )));
    }
    Ok(params)
}

fn read_manifest(config: &RunConfig) -> Result<AttackManifest> {
    let p = path(config, MANIFEST);
    AttackManifest::read_from(open(&p)?).map_err(|e| CliError::in_file(&p, e))
}

/// The training split the model sees: the attacked one when an attack is
/// configured.
fn training_split(config: &RunConfig) -> Result<Dataset> {
    if config.attack.ratio > 0.0 {
        read_dataset(&path(config, ATTACKED))
    } else {
        read_dataset(&path(config, TRAIN))
    }
}

/// Manifest matching [`training_split`]; empty without an attack.
fn erasure_manifest(config: &RunConfig) -> Result<AttackManifest> {
    if config.attack.ratio > 0.0 {
        read_manifest(config)
    } else {
        Ok(AttackManifest::empty())
    }
}

#[derive(Serialize)]
struct PrepareSummary<'a> {
    config: &'a RunConfig,
    raw_records: usize,
    kept_records: usize,
    users: usize,
    items: usize,
    positive_rate: f64,
    train: usize,
    valid: usize,
    test: usize,
}

/// Writes `ratings.csv` from the planted-preference generator.
pub fn synth(config: &RunConfig) -> Result<()> {
    let ds = synthetic::generate(&config.data.synthetic)?;
    let p = path(config, RATINGS);
    let mut out = create(&p)?;
    let d = config.data.delimiter;
    let io = |e| CliError::io(&p, e);
    writeln!(out, "user{d}item{d}rating").map_err(io)?;
    for r in &ds.records {
        let rating = r.raw_rating.expect("generated records are rated");
        writeln!(out, "u{}{d}i{}{d}{rating}", r.user, r.item).map_err(io)?;
    }
    finish(&p, out)?;
    info!("wrote {} ratings to {}", ds.len(), p.display());
    Ok(())
}

/// parse, binarize, k-core, split.
pub fn prepare(config: &RunConfig) -> Result<()> {
    let input = config
        .data
        .input
        .clone()
        .ok_or_else(|| CliError::Usage("data.input is not set".into()))?;
    let schema = CsvSchema {
        header: match config.data.header {
            HeaderSetting::Auto => HeaderPolicy::Auto,
            HeaderSetting::Present => HeaderPolicy::Present,
            HeaderSetting::Absent => HeaderPolicy::Absent,
        },
        delimiter: config.data.delimiter as u8,
    };
    let raw = parse_interactions(open(&input)?, &schema).map_err(|e| CliError::in_file(&input, e))?;
    let mut data = binarize(&raw, config.data.binarize_threshold)?;
    if config.data.k_core > 0 {
        data = k_core_filter(&data, config.data.k_core)?;
    }
    let (tr, va, te) = split(&data, config.data.split, config.data.split_seed)?;
    write_dataset(&path(config, TRAIN), &tr)?;
    write_dataset(&path(config, VALID), &va)?;
    write_dataset(&path(config, TEST), &te)?;
    let summary = PrepareSummary {
        config,
        raw_records: raw.len(),
        kept_records: data.len(),
        users: data.num_users,
        items: data.num_items,
        positive_rate: data.positive_rate(),
        train: tr.len(),
        valid: va.len(),
        test: te.len(),
    };
    write_json(&path(config, "prepare.json"), &summary)?;
    info!(
        "{} records kept of {}; split {}/{}/{}",
        data.len(),
        raw.len(),
        tr.len(),
        va.len(),
        te.len()
    );
    Ok(())
}

/// Flips labels on the training split and records which.
pub fn attack(config: &RunConfig) -> Result<()> {
    let tr = read_dataset(&path(config, TRAIN))?;
    let (attacked, manifest) = flip_labels(&tr, config.attack.ratio, config.attack.seed)?;
    write_dataset(&path(config, ATTACKED), &attacked)?;
    let p = path(config, MANIFEST);
    let mut out = create(&p)?;
    manifest.write_to(&mut out).map_err(|e| CliError::in_file(&p, e))?;
    finish(&p, out)?;
    info!("flipped {} of {} training labels", manifest.len(), tr.len());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    config: &'a RunConfig,
    best_valid_auc: f64,
    best_epoch: usize,
    epochs_run: usize,
    wall_time_secs: f64,
    log: &'a [EpochLog],
}

fn train_and_save(config: &RunConfig, data: &Dataset, ckpt: &str, summary: &str) -> Result<()> {
    let valid = read_dataset(&path(config, VALID))?;
    let started = Instant::now();
    let cp = if ckpt == RETRAINED {
        retrain_from_scratch(data, &valid, config.model.kind(), &config.train)?
    } else {
        train(data, &valid, config.model.kind(), &config.train)?
    };
    let secs = started.elapsed().as_secs_f64();
    write_checkpoint(&path(config, ckpt), &cp.params, config)?;
    write_json(
        &path(config, summary),
        &TrainSummary {
            config,
            best_valid_auc: cp.best_valid_auc,
            best_epoch: cp.best_epoch,
            epochs_run: cp.epochs_run,
            wall_time_secs: secs,
            log: &cp.log,
        },
    )?;
    info!(
        "{} epochs, best validation AUC {:.4} at epoch {}",
        cp.epochs_run, cp.best_valid_auc, cp.best_epoch
    );
    Ok(())
}

pub fn train_cmd(config: &RunConfig) -> Result<()> {
    let data = training_split(config)?;
    train_and_save(config, &data, ORIGINAL, "train.json")
}

pub fn retrain(config: &RunConfig) -> Result<()> {
    let data = training_split(config)?;
    let reduced = remove_interactions(&data, &erasure_manifest(config)?)?;
    train_and_save(config, &reduced, RETRAINED, "retrain.json")
}

#[derive(Serialize)]
struct UnlearnSummary<'a> {
    config: &'a RunConfig,
    options: &'a UnlearnOptions,
    stats: &'a UnlearnStats,
}

pub fn unlearn(config: &RunConfig) -> Result<()> {
    let data = training_split(config)?;
    let manifest = erasure_manifest(config)?;
    let original = read_checkpoint(&path(config, ORIGINAL), config)?;
    let options = config.unlearn_options();
    let (params, stats) = unlearn_params(
        &original,
        config.model.kind(),
        config.train.l2,
        &data,
        &manifest,
        &options,
    )?;
    write_checkpoint(&path(config, UNLEARNED), &params, config)?;
    write_json(
        &path(config, "unlearn.json"),
        &UnlearnSummary {
            config,
            options: &options,
            stats: &stats,
        },
    )?;
    info!(
        "erased {} records in {:.3}s ({} iterations, residual {:.2e})",
        stats.erased_records, stats.wall_time_secs, stats.iterations, stats.relative_residual
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    config: &'a RunConfig,
    #[serde(flatten)]
    comparison: Comparison,
}

/// AUCs of the three checkpoints on the test split. No timings, so repeated
/// runs give identical files.
pub fn eval(config: &RunConfig) -> Result<()> {
    let data = training_split(config)?;
    let manifest = erasure_manifest(config)?;
    let test = read_dataset(&path(config, TEST))?;
    let original = read_checkpoint(&path(config, ORIGINAL), config)?;
    let retrained = read_checkpoint(&path(config, RETRAINED), config)?;
    let unlearned = read_checkpoint(&path(config, UNLEARNED), config)?;
    let models = ComparedModels {
        kind: config.model.kind(),
        l2: config.train.l2,
        original: &original,
        retrain: &retrained,
        unlearned: &unlearned,
    };
    let comparison = compare(&models, &data, &manifest, &test)?;
    let fmt = |x: Option<f64>| x.map_or("n/a".to_owned(), |v| format!("{v:.4}"));
    println!("model      auc0    auc1    auc2");
    let c = &comparison;
    for (name, t) in [
        ("original", &c.original),
        ("retrain", &c.retrain),
        ("unlearned", &c.unlearned),
    ] {
        println!("{name:<10} {} {} {}", fmt(t.auc0), fmt(t.auc1), fmt(t.auc2));
    }
    write_json(&path(config, "report.json"), &EvalSummary { config, comparison })
}

#[derive(Serialize)]
struct BenchReport<'a> {
    config: &'a RunConfig,
    attack_ratio: f64,
    report: &'a EvalReport,
}

/// For each configured attack ratio: attack, train, unlearn, retrain and
/// compare, one report per ratio.
pub fn bench(config: &RunConfig) -> Result<()> {
    let tr = read_dataset(&path(config, TRAIN))?;
    let valid = read_dataset(&path(config, VALID))?;
    let test = read_dataset(&path(config, TEST))?;
    let train_config: &TrainConfig = &config.train;
    let options = config.unlearn_options();
    println!("ratio    erased  orig_auc0 retr_auc0 unl_auc0  unlearn_s retrain_s");
    for &ratio in &config.bench.ratios {
        let (attacked, manifest) = flip_labels(&tr, ratio, config.attack.seed)?;
        let original = train(&attacked, &valid, config.model.kind(), train_config)?;
        let run = benchmark(&original, &attacked, &valid, &test, &manifest, &options)?;
        let r = &run.report;
        let fmt = |x: Option<f64>| x.map_or("n/a".to_owned(), |v| format!("{v:.4}"));
        println!(
            "{ratio:<8} {:<7} {:<9} {:<9} {:<9} {:<9.3} {:.3}",
            r.erased_records,
            fmt(r.original.auc0),
            fmt(r.retrain.auc0),
            fmt(r.unlearned.auc0),
            r.wall_times["unlearn"],
            r.wall_times["retrain"]
        );
        write_json(
            &path(config, &format!("bench/report_{ratio}.json")),
            &BenchReport {
                config,
                attack_ratio: ratio,
                report: r,
            },
        )?;
    }
    Ok(())
}
