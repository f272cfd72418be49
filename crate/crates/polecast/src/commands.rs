//! The experiment commands. Each takes plain arguments, writes its files and
//! returns what it computed; the binary only parses flags and prints.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use neuralcast::{checkpoint, evaluate, train, EvalReport, Model, ModelConfig, TrainConfig, TrainReport};
use polecast_core::circuit::{assemble_system, reconstruction_error};
use polecast_core::featurize::{
    build_records, read_dataset, split_indices, write_dataset, DatasetConfig, Driver, FeatureRecord, NormStats,
};
use polecast_core::oracle::{analytic_response, numerical_response};
use polecast_core::{emit_spef, extract_tf, parse_spef, SpefNet, Stimulus, TransferFunction, ValueRanges, Waveform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{excitations, generate, net_specs, network};
use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Reads a JSON file, or TOML when the extension is `.toml`.
pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read(path)?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
    } else {
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
    };
    Ok(parsed)
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable value") + "\n"
}

// ---------------------------------------------------------------- gen

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub order: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub order_min: usize,
    pub order_max: usize,
    pub ranges: ValueRanges,
    pub nets: Vec<ManifestEntry>,
}

/// Writes `nets` random ladders as `net_NNNN.spef` plus `manifest.json`.
pub fn gen(nets: usize, order_min: usize, order_max: usize, seed: u64, ranges: &ValueRanges, out: &Path) -> Result<Manifest> {
    ranges.validate()?;
    let specs = net_specs(nets, order_min, order_max, seed)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut entries = Vec::with_capacity(specs.len());
    for spec in &specs {
        let file = format!("net_{:04}.spef", spec.index);
        write(&out.join(&file), &emit_spef(&generate(spec, ranges)?))?;
        entries.push(ManifestEntry { file, order: spec.order, seed: spec.seed });
    }
    let manifest = Manifest { seed, order_min, order_max, ranges: *ranges, nets: entries };
    write(&out.join(MANIFEST), &to_json(&manifest))?;
    Ok(manifest)
}

// ---------------------------------------------------------------- decompose

/// First net of a SPEF file.
pub fn load_net(path: &Path) -> Result<SpefNet> {
    let text = read(path)?;
    let nets = parse_spef(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    nets.into_iter().next().ok_or_else(|| CliError::Usage(format!("{}: no *D_NET section", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub net: String,
    pub transfer_function: TransferFunction,
    /// Frequency-sweep reconstruction error relative to the peak `|H|`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check_error: Option<f64>,
}

pub const CHECK_FREQUENCIES: usize = 50;

pub fn decompose(spef: &Path, check: bool) -> Result<Decomposition> {
    let net = load_net(spef)?;
    let rc = network(&net)?;
    let tf = extract_tf(&rc)?;
    let check_error = if check {
        Some(reconstruction_error(&assemble_system(&rc)?, &tf, CHECK_FREQUENCIES)?)
    } else {
        None
    };
    Ok(Decomposition { net: net.name, transfer_function: tf, check_error })
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Spef(PathBuf),
    /// Transfer-function JSON as written by `decompose`, or a bare
    /// transfer function.
    Tf(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateArgs {
    pub source: Source,
    pub stimulus: Stimulus,
    pub samples: usize,
    /// Defaults to seven slowest time constants plus the rise time.
    pub t_span: Option<f64>,
    pub compare: bool,
    pub substeps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub waveform: Waveform,
    /// Max-abs gap between the closed-form and time-stepping oracles.
    pub deviation: Option<f64>,
}

pub fn load_tf(path: &Path) -> Result<TransferFunction> {
    let text = read(path)?;
    if let Ok(d) = serde_json::from_str::<Decomposition>(&text) {
        d.transfer_function.validate()?;
        return Ok(d.transfer_function);
    }
    TransferFunction::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn simulate(args: &SimulateArgs) -> Result<Simulation> {
    let (tf, rc) = match &args.source {
        Source::Spef(p) => {
            let rc = network(&load_net(p)?)?;
            (extract_tf(&rc)?, Some(rc))
        }
        Source::Tf(p) => (load_tf(p)?, None),
    };
    let stim = &args.stimulus;
    let t_span = args.t_span.unwrap_or_else(|| DatasetConfig::default().t_span(&tf, stim));
    if !(t_span > 0.0) {
        return Err(CliError::Usage(format!("t_span must be positive, got {t_span}")));
    }
    if stim.rise_time > t_span {
        return Err(CliError::Usage(format!("ramp rise time {} exceeds t_span {t_span}", stim.rise_time)));
    }
    let waveform = analytic_response(&tf, stim, t_span, args.samples)?;
    let deviation = if args.compare {
        let rc = rc.ok_or_else(|| CliError::Usage("--compare needs a SPEF source".into()))?;
        let numeric = numerical_response(&rc, stim, t_span, args.samples, args.substeps)?;
        Some(waveform.max_abs_diff(&numeric))
    } else {
        None
    };
    Ok(Simulation { waveform, deviation })
}

// ---------------------------------------------------------------- dataset

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_records: usize,
    pub n_nets: usize,
    pub order_histogram: BTreeMap<usize, usize>,
    pub device_histogram: BTreeMap<usize, usize>,
    pub norm_stats: NormStats,
    /// Largest `|base + correction − target|` over every sample.
    pub max_identity_error: f64,
}

fn spef_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "spef"))
        .collect();
    files.sort();
    Ok(files)
}

fn summarize(records: &[FeatureRecord], n_nets: usize, norm_stats: NormStats) -> DatasetSummary {
    let mut order_histogram = BTreeMap::new();
    let mut device_histogram = BTreeMap::new();
    let mut max_identity_error = 0.0f64;
    for r in records {
        *order_histogram.entry(r.order).or_insert(0) += 1;
        *device_histogram.entry(r.device_id).or_insert(0) += 1;
        for ((t, b), c) in r.target.samples.iter().zip(&r.base_target.samples).zip(&r.correction_target.samples) {
            max_identity_error = max_identity_error.max((b + c - t).abs());
        }
    }
    DatasetSummary { n_records: records.len(), n_nets, order_histogram, device_histogram, norm_stats, max_identity_error }
}

/// Drives every net in `spef_dir` `per_net` times, cycling through
/// `drivers`, and writes the records as JSON lines.
pub fn dataset(
    spef_dir: &Path,
    per_net: usize,
    drivers: &[Driver],
    config: &DatasetConfig,
    seed: u64,
    out: &Path,
) -> Result<DatasetSummary> {
    if drivers.is_empty() {
        return Err(CliError::Usage("at least one stimulus family is required".into()));
    }
    let files = spef_files(spef_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    for file in &files {
        let net = network(&load_net(file)?)?;
        for ex in excitations(&net, per_net, drivers, &mut rng)? {
            items.push((net.clone(), ex));
        }
    }
    let (records, stats) = if items.is_empty() {
        (Vec::new(), NormStats { mu_t: 0.0, sigma_t: 1.0 })
    } else {
        build_records(&items, config, seed)?
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    write_dataset(out, &records).map_err(|e| CliError::io(out, e))?;
    Ok(summarize(&records, files.len(), stats))
}

/// Streams a dataset file into memory, stopping at the first bad line.
pub fn load_records(path: &Path) -> Result<Vec<FeatureRecord>> {
    let reader = read_dataset(path).map_err(|e| CliError::io(path, e))?;
    reader
        .enumerate()
        .map(|(i, r)| r.map_err(|e| CliError::Usage(format!("{}: record {}: {e}", path.display(), i + 1))))
        .collect()
}

// ---------------------------------------------------------------- train / eval

/// Model and optimizer settings, read from JSON or TOML. Missing fields take
/// their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Fits time normalization on the same split the trainer uses.
pub fn fit_norm_stats(records: &[FeatureRecord], seed: u64) -> Result<NormStats> {
    let (train_idx, _) = split_indices(records.len(), seed);
    let idx = if train_idx.is_empty() { (0..records.len()).collect() } else { train_idx };
    let spans: Vec<f64> = idx.iter().map(|&i| records[i].t_span).collect();
    Ok(NormStats::fit(&spans)?)
}

/// Trains on `records`, taking sequence length and triplet rows from the
/// data, then writes the checkpoint to `out` and the
/// report next to it as `<stem>.report.json`.
pub fn train_model(records: &[FeatureRecord], config: &ExperimentConfig, out: &Path) -> Result<(Model, TrainReport)> {
    let stats = fit_norm_stats(records, config.train.seed)?;
    let mut model_cfg = config.model;
    if let Some(r) = records.first() {
        model_cfg.n_terms = r.triplets.rows.len();
        model_cfg.seq_len = r.n_samples();
        model_cfg.target_len = r.n_samples();
    }
    let (model, report) = train(records, Some(stats), model_cfg, &config.train)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    checkpoint::save(&model, out).map_err(|e| CliError::io(out, e))?;
    write(&report_path(out), &to_json(&report))?;
    Ok((model, report))
}

pub fn report_path(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    checkpoint.with_file_name(format!("{stem}.report.json"))
}

/// Evaluates a checkpoint; writes the report and, when asked, an overlay CSV
/// of truth against both predictions per sample.
pub fn eval_model(model_path: &Path, data: &Path, report: &Path, overlay: Option<&Path>) -> Result<EvalReport> {
    let model = checkpoint::load(model_path).map_err(|e| match e {
        neuralcast::Error::Io(_) => CliError::io(model_path, e),
        other => CliError::Usage(format!("{}: {other}", model_path.display())),
    })?;
    let records = load_records(data)?;
    let evaluation = evaluate(&model, &records)?;
    write(report, &to_json(&evaluation.report))?;
    if let Some(path) = overlay {
        let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut emit = || -> std::io::Result<()> {
            writeln!(w, "record_id,order,device_id,t,truth,base,prediction")?;
            for (r, (base, pred)) in records.iter().zip(&evaluation.predictions) {
                for (k, t) in r.target.times().iter().enumerate() {
                    writeln!(w, "{},{},{},{:e},{:e},{:e},{:e}", r.id, r.order, r.device_id, t, r.target.samples[k], base[k], pred[k])?;
                }
            }
            w.flush()
        };
        emit().map_err(|e| CliError::io(path, e))?;
    }
    Ok(evaluation.report)
}
