//! Subcommand bodies. Each one echoes its resolved configuration to the
//! output directory before doing any work.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use psp_core::checkpoint::Checkpoint;
use psp_core::evalkit::{evaluate_run, EvalReport, MetricRow, PrefixRecord};
use psp_core::eventlog::{compute_stats, parse_csv, validate_log, write_csv, ColumnMapping, DatasetStats, EventLog, TimeUnit};
use psp_core::features::{pairs_for, prepare_dataset, EncodingModel, PrefixSuffixPair, Split};
use psp_core::mcsampler::{mc_suffix_sampling, prefix_seed, write_sample_dump, SampleSet};
use psp_core::synthlog::generate;
use psp_core::trainer::{fit, FitOptions, CHECKPOINT_FILE};
use psp_core::{CoreError, HyperparameterSetting, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const BUNDLE_FILE: &str = "bundle.json";
pub const SPLIT_FILE: &str = "split.json";
pub const ENCODING_FILE: &str = "encoding.json";
pub const STATS_FILE: &str = "stats.json";
pub const RECORDS_FILE: &str = "records.json";
pub const SAMPLES_FILE: &str = "samples.csv";

/// What `preprocess` leaves behind. Pairs are not stored; they are rebuilt
/// from the log, which is pinned by its hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub csv: PathBuf,
    pub csv_sha256: String,
    pub mapping: ColumnMapping,
    pub window: usize,
    pub setting: HyperparameterSetting,
    pub seed: u64,
    pub n_train_pairs: usize,
    pub n_validation_pairs: usize,
    pub n_test_pairs: usize,
}

/// A loaded bundle with its pairs rebuilt.
pub struct Bundle {
    pub manifest: BundleManifest,
    pub encoding: EncodingModel,
    pub train: Vec<PrefixSuffixPair>,
    pub validation: Vec<PrefixSuffixPair>,
    pub test: Vec<PrefixSuffixPair>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CoreError::Data(format!("cannot read {}: {e}", path.display())))
}

fn load_log(path: &Path, mapping: &ColumnMapping) -> Result<(EventLog, String)> {
    let bytes = read_input(path)?;
    let log = parse_csv(bytes.as_slice(), mapping)?;
    Ok((log, sha256_hex(&bytes)))
}

fn echo_config(cfg: &RunConfig, command: &str) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join(format!("config.{command}.json")), cfg)
}

fn bundle_dir(cfg: &RunConfig) -> PathBuf {
    cfg.dataset.bundle.clone().unwrap_or_else(|| cfg.out_dir.join("dataset"))
}

pub fn print_stats(stats: &DatasetStats, unit: TimeUnit) {
    let (mean, sd) = stats.duration_in(unit);
    println!("{:<22} {:>12}", "cases", stats.n_cases);
    println!("{:<22} {:>12}", "events", stats.n_events);
    println!("{:<22} {:>12}", "variants", stats.n_variants);
    println!("{:<22} {:>12}", "activities", stats.n_activities);
    println!("{:<22} {:>12.3}", "mean case length", stats.mean_case_length);
    println!("{:<22} {:>12.3}", "sd case length", stats.sd_case_length);
    println!("{:<22} {:>12.3}", format!("mean duration ({})", unit.label()), mean);
    println!("{:<22} {:>12.3}", format!("sd duration ({})", unit.label()), sd);
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    echo_config(cfg, "synth")?;
    let spec = cfg.process_spec()?;
    let log = generate(&spec)?;
    let path = cfg.out_dir.join("log.csv");
    write_csv(&log, BufWriter::new(File::create(&path)?))?;
    write_json(&cfg.out_dir.join("process_spec.json"), &spec)?;
    println!("wrote {} ({} cases)", path.display(), log.cases.len());
    print_stats(&compute_stats(&log)?, cfg.dataset.report_unit);
    Ok(())
}

pub fn preprocess(cfg: &RunConfig) -> Result<()> {
    echo_config(cfg, "preprocess")?;
    let csv = cfg.dataset.csv.clone().expect("paths resolved");
    let mapping = cfg.dataset.mapping.clone().expect("paths resolved");
    let (log, digest) = load_log(&csv, &mapping)?;
    let report = validate_log(&log);
    if !report.is_empty() {
        eprintln!("warning: {} validation issue(s); first: {:?}", report.issues.len(), report.issues[0]);
    }
    let setting = cfg.setting.resolve()?;
    let ds = prepare_dataset(&log, cfg.dataset.split, cfg.seed, &setting, cfg.dataset.window)?;
    let stats = compute_stats(&log)?;

    let dir = bundle_dir(cfg);
    fs::create_dir_all(&dir)?;
    write_json(&dir.join(SPLIT_FILE), &ds.split)?;
    write_json(&dir.join(ENCODING_FILE), &ds.encoding)?;
    write_json(&dir.join(STATS_FILE), &stats)?;
    write_json(
        &dir.join(BUNDLE_FILE),
        &BundleManifest {
            csv,
            csv_sha256: digest,
            mapping,
            window: cfg.dataset.window,
            setting,
            seed: cfg.seed,
            n_train_pairs: ds.train.len(),
            n_validation_pairs: ds.validation.len(),
            n_test_pairs: ds.test.len(),
        },
    )?;
    print_stats(&stats, cfg.dataset.report_unit);
    println!(
        "{:<22} {:>12}",
        "pairs (train/val/test)",
        format!("{}/{}/{}", ds.train.len(), ds.validation.len(), ds.test.len())
    );
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<Bundle> {
    let manifest: BundleManifest = read_json(&dir.join(BUNDLE_FILE))?;
    let split: Split = read_json(&dir.join(SPLIT_FILE))?;
    let encoding: EncodingModel = read_json(&dir.join(ENCODING_FILE))?;
    let (log, digest) = load_log(&manifest.csv, &manifest.mapping)?;
    if digest != manifest.csv_sha256 {
        return Err(CoreError::Data(format!(
            "{} changed since preprocessing (sha256 {digest}, expected {})",
            manifest.csv.display(),
            manifest.csv_sha256
        )));
    }
    let s = manifest.window;
    Ok(Bundle {
        train: pairs_for(&log, &split.train, &encoding, s)?,
        validation: pairs_for(&log, &split.validation, &encoding, s)?,
        test: pairs_for(&log, &split.test, &encoding, s)?,
        manifest,
        encoding,
    })
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    echo_config(cfg, "train")?;
    let bundle = load_bundle(&bundle_dir(cfg))?;
    let tc = cfg.train_config()?;
    let b = &bundle.manifest.setting;
    if (tc.setting.time_noise, tc.setting.decoder_routing) != (b.time_noise, b.decoder_routing) {
        return Err(CoreError::Config(
            "time_noise and decoder_routing must match the preprocessed bundle; rerun preprocess".into(),
        ));
    }
    if tc.window != bundle.manifest.window {
        return Err(CoreError::Config(format!(
            "dataset.window is {} but the bundle was built with {}",
            tc.window, bundle.manifest.window
        )));
    }
    let dir = cfg.out_dir.join("train");
    fs::create_dir_all(&dir)?;
    let resume = if cfg.train.resume {
        Some(Checkpoint::load(&dir.join(CHECKPOINT_FILE))?)
    } else {
        None
    };
    let result = fit(
        &bundle.train,
        &bundle.validation,
        &bundle.encoding,
        &tc,
        FitOptions {
            out_dir: Some(&dir),
            resume,
            stop_after: cfg.train.stop_after,
            verbose: true,
        },
    )?;
    if let Some(last) = result.history.last() {
        println!(
            "epoch {}: train loss {:.4}, validation loss {:.4}",
            last.epoch, last.train_total, last.val_total_det
        );
    }
    println!("checkpoint: {}", dir.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn test_pairs(cfg: &RunConfig, bundle: &Bundle) -> Result<Vec<PrefixSuffixPair>> {
    let mut pairs = bundle.test.clone();
    if let Some(n) = cfg.sample.max_prefixes {
        pairs.truncate(n);
    }
    if pairs.is_empty() {
        return Err(CoreError::Data("the test split has no prefixes".into()));
    }
    Ok(pairs)
}

fn load_model(cfg: &RunConfig, enc: &EncodingModel) -> Result<psp_core::ulstm::Model> {
    let path = cfg.sample.checkpoint.clone().expect("paths resolved");
    Checkpoint::load(&path)?.model(enc)
}

pub fn sample(cfg: &RunConfig) -> Result<()> {
    echo_config(cfg, "sample")?;
    let bundle = load_bundle(&bundle_dir(cfg))?;
    let model = load_model(cfg, &bundle.encoding)?;
    let sc = cfg.sample_config()?;
    let pairs = test_pairs(cfg, &bundle)?;
    let sets = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| mc_suffix_sampling(&model, &bundle.encoding, p, &sc, prefix_seed(sc.seed, i)))
        .collect::<Result<Vec<SampleSet>>>()?;
    let dir = cfg.out_dir.join("sample");
    fs::create_dir_all(&dir)?;
    let path = dir.join(SAMPLES_FILE);
    write_sample_dump(BufWriter::new(File::create(&path)?), &bundle.encoding, &sets)?;
    println!("wrote {} ({} prefixes x {} trials)", path.display(), sets.len(), sc.t);
    Ok(())
}

pub fn print_summary(report: &EvalReport) {
    let unit = report.unit.label();
    println!(
        "{:>6} {:>6} {:>8} {:>8} {:>8} {:>8} {:>12} {:>12}",
        "k", "n", "DLS ml", "DLS mc", "len ml", "len mc", "rt ml", "rt mc"
    );
    let line = |r: &MetricRow| {
        println!(
            "{:>6} {:>6} {:>8.4} {:>8.4} {:>8.3} {:>8.3} {:>12.4} {:>12.4}",
            r.prefix_len.map_or_else(|| "all".to_string(), |k| k.to_string()),
            r.n,
            r.dls_ml,
            r.dls_prob,
            r.len_mae_ml,
            r.len_mae_prob,
            r.rt_sum_mae_ml,
            r.rt_sum_mae_prob
        );
    };
    for r in &report.by_prefix_len {
        line(r);
    }
    line(&report.overall);
    println!("(remaining-time MAE in {unit})");
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    echo_config(cfg, "evaluate")?;
    let bundle = load_bundle(&bundle_dir(cfg))?;
    let model = load_model(cfg, &bundle.encoding)?;
    let sc = cfg.sample_config()?;
    let pairs = test_pairs(cfg, &bundle)?;
    let report = evaluate_run(&model, &bundle.encoding, &pairs, &sc, cfg.dataset.report_unit)?;
    let dir = cfg.out_dir.join("eval");
    report.write_artifacts(&dir, cfg.eval.svg)?;
    write_json(&dir.join(RECORDS_FILE), &report.records)?;
    print_summary(&report);
    Ok(())
}

pub fn report(cfg: &RunConfig) -> Result<()> {
    echo_config(cfg, "report")?;
    let records: Vec<PrefixRecord> = read_json(&cfg.eval.records.clone().expect("paths resolved"))?;
    let report = EvalReport::from_records(records, cfg.dataset.report_unit)?;
    report.write_artifacts(&cfg.out_dir.join("report"), cfg.eval.svg)?;
    print_summary(&report);
    Ok(())
}
