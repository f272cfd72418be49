//! Fixed-shape model inputs built from a network, its excitation and its
//! pole-residue decomposition, plus the JSON-Lines dataset container.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{extract_tf, TransferFunction};
use crate::error::{Error, Result};
use crate::network::RcNetwork;
use crate::oracle::{analytic_response, term_response, Stimulus, WaveKind, Waveform};

pub const SCHEMA_VERSION: u32 = 1;
pub const N_DEVICES: usize = 3;
pub const DEFAULT_N_TERMS: usize = 8;
pub const DEFAULT_N_SAMPLES: usize = 128;

/// Min-max scaling to `[0, 1]`; a constant waveform maps to zeros.
pub fn normalize_voltage(w: &Waveform) -> Waveform {
    let (lo, hi) = w
        .samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let range = hi - lo;
    let samples = if range > 0.0 {
        w.samples.iter().map(|&x| ((x - lo) / range).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; w.samples.len()]
    };
    Waveform { t_span: w.t_span, samples, kind: w.kind }
}

/// Mean and standard deviation of `log10(t_span)` over a training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu_t: f64,
    pub sigma_t: f64,
}

impl NormStats {
    /// Population statistics; a degenerate corpus gets `sigma_t = 1`.
    pub fn fit(t_spans: &[f64]) -> Result<Self> {
        if t_spans.is_empty() {
            return Err(Error::InvalidArgument("cannot fit statistics on an empty corpus".into()));
        }
        let logs = t_spans
            .iter()
            .map(|&t| if t > 0.0 { Ok(t.log10()) } else { Err(Error::NonPositiveTime(t)) })
            .collect::<Result<Vec<_>>>()?;
        let n = logs.len() as f64;
        let mu_t = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|x| (x - mu_t).powi(2)).sum::<f64>() / n;
        let sigma_t = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(NormStats { mu_t, sigma_t })
    }
}

/// `(log10(t_span) − μ_t) / σ_t`.
pub fn normalize_tspan(t_span: f64, stats: &NormStats) -> Result<f64> {
    if !(t_span > 0.0) {
        return Err(Error::NonPositiveTime(t_span));
    }
    Ok((t_span.log10() - stats.mu_t) / stats.sigma_t)
}

/// One `A/(s−p)^order` term scaled by the largest pole magnitude. Padding
/// rows are all zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TripletRow {
    pub pole_norm: f64,
    pub order: usize,
    pub residue_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletBlock {
    pub rows: Vec<TripletRow>,
    pub n_active: usize,
}

impl TripletBlock {
    /// Rows as a flat `[pole_norm, order, residue_norm, ...]` vector.
    pub fn flatten(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| [r.pole_norm, r.order as f64, r.residue_norm]).collect()
    }

    /// Inverse of the normalization for the active rows: `(pole, order, residue)`.
    pub fn denormalize(&self, max_pole_magnitude: f64) -> Vec<(f64, usize, f64)> {
        self.rows[..self.n_active]
            .iter()
            .map(|r| {
                (
                    r.pole_norm * max_pole_magnitude,
                    r.order,
                    r.residue_norm * max_pole_magnitude.powi(r.order as i32),
                )
            })
            .collect()
    }
}

/// Flattens every `(p_i, j, A_ij)` into a row with `pole_norm = p/|p_max|`
/// and `residue_norm = A/|p_max|^j`, sorts rows by `|residue_norm|`
/// (descending; ties broken by pole then order), and truncates or zero-pads
/// to `n_terms` rows.
pub fn encode_triplets(tf: &TransferFunction, n_terms: usize) -> TripletBlock {
    let scale = tf.max_pole_magnitude();
    let mut rows: Vec<TripletRow> = tf
        .terms
        .iter()
        .flat_map(|t| {
            t.residues.iter().enumerate().map(move |(j, &a)| TripletRow {
                pole_norm: t.pole / scale,
                order: j + 1,
                residue_norm: a / scale.powi(j as i32 + 1),
            })
        })
        .collect();
    rows.sort_by(|a, b| {
        b.residue_norm
            .abs()
            .total_cmp(&a.residue_norm.abs())
            .then(a.pole_norm.total_cmp(&b.pole_norm))
            .then(a.order.cmp(&b.order))
    });
    rows.truncate(n_terms);
    let n_active = rows.len();
    rows.resize(n_terms, TripletRow::default());
    TripletBlock { rows, n_active }
}

/// Driver families standing in for standard-cell categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Driver {
    IdealStep,
    SlowRamp,
    FastRamp,
}

impl Driver {
    pub const ALL: [Driver; 3] = [Driver::IdealStep, Driver::SlowRamp, Driver::FastRamp];

    pub fn device_id(self) -> usize {
        match self {
            Driver::IdealStep => 0,
            Driver::SlowRamp => 1,
            Driver::FastRamp => 2,
        }
    }

    /// Draws a stimulus; ramp rise times scale with the net's slowest time
    /// constant `tau`.
    pub fn stimulus(self, tau: f64, rng: &mut impl Rng) -> Stimulus {
        match self {
            Driver::IdealStep => Stimulus::step(1.0),
            Driver::SlowRamp => Stimulus::ramp(tau * rng.random_range(1.0..3.0), 1.0),
            Driver::FastRamp => Stimulus::ramp(tau * rng.random_range(0.1..0.5), 1.0),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "step" | "ideal_step" => Ok(Driver::IdealStep),
            "slow" | "slow_ramp" => Ok(Driver::SlowRamp),
            "fast" | "fast_ramp" => Ok(Driver::FastRamp),
            _ => Err(Error::InvalidArgument(format!("unknown driver `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Excitation {
    pub driver: Driver,
    pub stimulus: Stimulus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_samples: usize,
    pub n_terms: usize,
    /// Window length in slowest time constants, added to the ramp rise time.
    pub settle_factor: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_samples: DEFAULT_N_SAMPLES,
            n_terms: DEFAULT_N_TERMS,
            settle_factor: 7.0,
        }
    }
}

impl DatasetConfig {
    pub fn t_span(&self, tf: &TransferFunction, stim: &Stimulus) -> f64 {
        self.settle_factor * tf.max_time_constant() + stim.rise_time
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: u64,
    pub order: usize,
    pub device_id: usize,
    pub t_span: f64,
    pub t_norm: f64,
    pub triplets: TripletBlock,
    pub v_in: Waveform,
    pub target: Waveform,
    pub base_target: Waveform,
    pub correction_target: Waveform,
}

impl FeatureRecord {
    pub fn n_samples(&self) -> usize {
        self.v_in.n_samples()
    }
}

/// Builds one record with ground truth from the closed-form oracle. The base
/// target is the response of the dominant term alone and the correction
/// target is what the remaining terms add.
pub fn build_record(
    net: &RcNetwork,
    excitation: &Excitation,
    config: &DatasetConfig,
    stats: &NormStats,
    id: u64,
) -> Result<FeatureRecord> {
    let tf = extract_tf(net)?;
    build_record_from_tf(&tf, excitation, config, stats, id)
}

pub fn build_record_from_tf(
    tf: &TransferFunction,
    excitation: &Excitation,
    config: &DatasetConfig,
    stats: &NormStats,
    id: u64,
) -> Result<FeatureRecord> {
    let stim = &excitation.stimulus;
    let t_span = config.t_span(tf, stim);
    let n = config.n_samples;
    let amp = if stim.amplitude > 0.0 { stim.amplitude } else { 1.0 };

    let v_in = normalize_voltage(&stim.sample(t_span, n)?);
    let mut target = analytic_response(tf, stim, t_span, n)?;
    let dominant = tf.dominant_term().ok_or_else(|| Error::InvalidArgument("empty transfer function".into()))?;
    let mut base_target = term_response(dominant, stim, t_span, n)?;
    for x in target.samples.iter_mut().chain(base_target.samples.iter_mut()) {
        *x /= amp;
    }
    let correction = target.samples.iter().zip(&base_target.samples).map(|(t, b)| t - b).collect();

    Ok(FeatureRecord {
        id,
        order: tf.order(),
        device_id: excitation.driver.device_id(),
        t_span,
        t_norm: normalize_tspan(t_span, stats)?,
        triplets: encode_triplets(tf, config.n_terms),
        v_in,
        target,
        base_target,
        correction_target: Waveform::new(correction, t_span, WaveKind::Correction)?,
    })
}

/// Deterministic 90/10 split of `0..n` into (train, validation) indices,
/// each sorted ascending. At least one validation item when `n >= 2`.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT));
    let n_val = if n >= 2 { ((n as f64 * 0.1).round() as usize).max(1) } else { 0 };
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

const SPLIT_SALT: u64 = 0x5eed_5b17;

/// Builds records for every `(network, excitation)` pair. `NormStats` are
/// fitted on the items that [`split_indices`] assigns to training.
pub fn build_records(
    items: &[(RcNetwork, Excitation)],
    config: &DatasetConfig,
    seed: u64,
) -> Result<(Vec<FeatureRecord>, NormStats)> {
    let tfs = items.iter().map(|(net, _)| extract_tf(net)).collect::<Result<Vec<_>>>()?;
    let t_spans: Vec<f64> =
        tfs.iter().zip(items).map(|(tf, (_, ex))| config.t_span(tf, &ex.stimulus)).collect();
    let (train, _) = split_indices(items.len(), seed);
    let train_spans: Vec<f64> = if train.is_empty() {
        t_spans.clone()
    } else {
        train.iter().map(|&i| t_spans[i]).collect()
    };
    let stats = NormStats::fit(&train_spans)?;
    let records = tfs
        .iter()
        .zip(items)
        .enumerate()
        .map(|(i, (tf, (_, ex)))| build_record_from_tf(tf, ex, config, &stats, i as u64))
        .collect::<Result<Vec<_>>>()?;
    Ok((records, stats))
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    v: u32,
    id: u64,
    order: usize,
    device_id: usize,
    t_span: f64,
    t_norm: f64,
    triplets: Vec<(f64, usize, f64)>,
    v_in: Vec<f64>,
    target: Vec<f64>,
    base_target: Vec<f64>,
    correction_target: Vec<f64>,
}

impl From<&FeatureRecord> for RecordLine {
    fn from(r: &FeatureRecord) -> Self {
        RecordLine {
            v: SCHEMA_VERSION,
            id: r.id,
            order: r.order,
            device_id: r.device_id,
            t_span: r.t_span,
            t_norm: r.t_norm,
            triplets: r.triplets.rows.iter().map(|t| (t.pole_norm, t.order, t.residue_norm)).collect(),
            v_in: r.v_in.samples.clone(),
            target: r.target.samples.clone(),
            base_target: r.base_target.samples.clone(),
            correction_target: r.correction_target.samples.clone(),
        }
    }
}

impl TryFrom<RecordLine> for FeatureRecord {
    type Error = Error;

    fn try_from(l: RecordLine) -> Result<Self> {
        if l.v != SCHEMA_VERSION {
            return Err(Error::SchemaMismatch(format!("unsupported record version {}", l.v)));
        }
        let n = l.v_in.len();
        if [l.target.len(), l.base_target.len(), l.correction_target.len()].iter().any(|&k| k != n) {
            return Err(Error::SchemaMismatch(format!("record {} has waveforms of unequal length", l.id)));
        }
        if l.device_id >= N_DEVICES {
            return Err(Error::SchemaMismatch(format!("record {} has device id {}", l.id, l.device_id)));
        }
        let rows: Vec<TripletRow> = l
            .triplets
            .into_iter()
            .map(|(pole_norm, order, residue_norm)| TripletRow { pole_norm, order, residue_norm })
            .collect();
        let n_active = rows.iter().filter(|r| r.order > 0).count();
        let wave = |s: Vec<f64>, kind| Waveform::new(s, l.t_span, kind);
        Ok(FeatureRecord {
            id: l.id,
            order: l.order,
            device_id: l.device_id,
            t_span: l.t_span,
            t_norm: l.t_norm,
            triplets: TripletBlock { rows, n_active },
            v_in: wave(l.v_in, WaveKind::Input)?,
            target: wave(l.target, WaveKind::Output)?,
            base_target: wave(l.base_target, WaveKind::Output)?,
            correction_target: wave(l.correction_target, WaveKind::Correction)?,
        })
    }
}

pub fn record_to_line(record: &FeatureRecord) -> String {
    serde_json::to_string(&RecordLine::from(record)).expect("record serializes")
}

pub fn record_from_line(line: &str) -> Result<FeatureRecord> {
    let value: serde_json::Value = serde_json::from_str(line)?;
    match value.get("v").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => return Err(Error::SchemaMismatch(format!("unsupported record version {v}"))),
        None => return Err(Error::SchemaMismatch("record has no version field".into())),
    }
    let parsed: RecordLine =
        serde_json::from_value(value).map_err(|e| Error::SchemaMismatch(e.to_string()))?;
    parsed.try_into()
}

/// Writes one JSON object per line.
pub fn write_dataset<'a>(path: &Path, records: impl IntoIterator<Item = &'a FeatureRecord>) -> Result<usize> {
    let mut out = BufWriter::new(File::create(path)?);
    let mut count = 0;
    for r in records {
        writeln!(out, "{}", record_to_line(r))?;
        count += 1;
    }
    out.flush()?;
    Ok(count)
}

/// Streams records from a JSON-Lines file one line at a time.
pub fn read_dataset(path: &Path) -> Result<DatasetReader> {
    Ok(DatasetReader { lines: BufReader::new(File::open(path)?), buf: String::new() })
}

pub fn read_dataset_all(path: &Path) -> Result<Vec<FeatureRecord>> {
    read_dataset(path)?.collect()
}

pub struct DatasetReader {
    lines: BufReader<File>,
    buf: String,
}

impl DatasetReader {
    /// Capacity of the line buffer, i.e. the memory held between records.
    pub fn buffer_capacity(&self) -> usize {
        self.buf.capacity()
    }
}

impl Iterator for DatasetReader {
    type Item = Result<FeatureRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.lines.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) if self.buf.trim().is_empty() => continue,
                Ok(_) => return Some(record_from_line(self.buf.trim_end())),
                Err(e) => return Some(Err(e.into())),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::PoleTerm;

    #[test]
    fn voltage_normalization() {
        let w = |s: Vec<f64>| Waveform::new(s, 1.0, WaveKind::Input).unwrap();
        assert_eq!(normalize_voltage(&w(vec![0.0, 0.5, 1.0])).samples, vec![0.0, 0.5, 1.0]);
        let n = normalize_voltage(&w(vec![0.2, 0.7, 1.2])).samples;
        assert!((n[0]).abs() < 1e-15 && (n[1] - 0.5).abs() < 1e-15 && (n[2] - 1.0).abs() < 1e-15);
        assert_eq!(normalize_voltage(&w(vec![0.5, 0.5])).samples, vec![0.0, 0.0]);
    }

    #[test]
    fn tspan_normalization() {
        let stats = NormStats { mu_t: -9.0, sigma_t: 1.0 };
        assert!(normalize_tspan(1e-9, &stats).unwrap().abs() < 1e-12);
        assert!((normalize_tspan(1e-8, &stats).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(normalize_tspan(0.0, &stats), Err(Error::NonPositiveTime(_))));
    }

    #[test]
    fn fitted_stats_standardize_their_corpus() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spans: Vec<f64> = (0..500).map(|_| 10f64.powf(rng.random_range(-10.0..-8.0))).collect();
        let stats = NormStats::fit(&spans).unwrap();
        let z: Vec<f64> = spans.iter().map(|&t| normalize_tspan(t, &stats).unwrap()).collect();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let var = z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
        assert_eq!(NormStats::fit(&[1e-9, 1e-9]).unwrap().sigma_t, 1.0);
    }

    #[test]
    fn single_term_triplets() {
        let tf = TransferFunction::new(vec![PoleTerm::simple(-1.0, 1.0)]);
        let block = encode_triplets(&tf, 4);
        assert_eq!(block.n_active, 1);
        assert_eq!(block.rows[0], TripletRow { pole_norm: -1.0, order: 1, residue_norm: 1.0 });
        assert!(block.rows[1..].iter().all(|r| *r == TripletRow::default()));
    }

    #[test]
    fn truncation_keeps_largest_residues() {
        let residues = [0.3, -5.0, 0.01, 2.0, -0.7, 1.1];
        let terms = residues.iter().enumerate().map(|(k, &r)| PoleTerm::simple(-(k as f64 + 1.0), r)).collect();
        let tf = TransferFunction::new(terms);
        let block = encode_triplets(&tf, 4);
        assert_eq!(block.n_active, 4);
        let kept: Vec<f64> = block.rows.iter().map(|r| r.residue_norm * 6.0).collect();
        let expected = [-5.0, 2.0, 1.1, -0.7];
        for (k, e) in kept.iter().zip(expected) {
            assert!((k - e).abs() < 1e-12);
        }
    }

    #[test]
    fn repeated_pole_rows() {
        let tf = TransferFunction {
            dc_gain: 0.0,
            terms: vec![PoleTerm { pole: -2.0, multiplicity: 2, residues: vec![1.0, 8.0] }],
        };
        let block = encode_triplets(&tf, 3);
        assert_eq!(block.n_active, 2);
        assert_eq!(block.rows[0], TripletRow { pole_norm: -1.0, order: 2, residue_norm: 2.0 });
        assert_eq!(block.rows[1], TripletRow { pole_norm: -1.0, order: 1, residue_norm: 0.5 });
        let back = block.denormalize(2.0);
        assert_eq!(back, vec![(-2.0, 2, 8.0), (-2.0, 1, 1.0)]);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (t1, v1) = split_indices(100, 3);
        let (t2, v2) = split_indices(100, 3);
        assert_eq!((t1.clone(), v1.clone()), (t2, v2));
        assert_eq!(v1.len(), 10);
        assert_eq!(t1.len(), 90);
        assert!(v1.iter().all(|i| !t1.contains(i)));
        let (_, v3) = split_indices(100, 4);
        assert_ne!(v1, v3);
        assert_eq!(split_indices(1, 0), (vec![0], vec![]));
        assert_eq!(split_indices(2, 0).1.len(), 1);
    }

    #[test]
    fn schema_version_is_checked() {
        let net = RcNetwork::ladder(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        let ex = Excitation { driver: Driver::IdealStep, stimulus: Stimulus::step(1.0) };
        let stats = NormStats { mu_t: 0.0, sigma_t: 1.0 };
        let rec = build_record(&net, &ex, &DatasetConfig { n_samples: 16, ..Default::default() }, &stats, 7).unwrap();
        let line = record_to_line(&rec);
        assert_eq!(record_from_line(&line).unwrap(), rec);
        let bumped = line.replacen("\"v\":1", "\"v\":2", 1);
        assert!(matches!(record_from_line(&bumped), Err(Error::SchemaMismatch(_))));
        assert!(matches!(record_from_line("{\"id\":1}"), Err(Error::SchemaMismatch(_))));
    }
}
