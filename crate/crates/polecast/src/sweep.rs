//! Validation RMSE as a function of the number of distinct nets in the
//! training corpus, with CSV and SVG output.

use std::fmt::Write as _;
use std::path::Path;

use neuralcast::{train, ModelConfig, TrainConfig};
use polecast_core::featurize::DatasetConfig;
use polecast_core::ValueRanges;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusConfig;
use crate::error::{CliError, Result};

/// Settings shared by every point of a sweep. The defaults are sized so the
/// whole sweep runs in minutes on one core.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Excitations per net.
    pub per_net: usize,
    pub order_min: usize,
    pub order_max: usize,
    /// Small corpora train for extra epochs until they see at least this
    /// many optimizer steps per stage.
    pub min_steps: usize,
    pub n_samples: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ranges: ValueRanges,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let n_samples = 64;
        SweepConfig {
            per_net: 6,
            order_min: 2,
            order_max: 15,
            min_steps: 400,
            n_samples,
            model: ModelConfig {
                d_embed: 32,
                n_heads: 4,
                n_enc_layers: 2,
                n_dec_layers: 2,
                d_ff: 64,
                conv_channels: 32,
                kernel_size: 3,
                hidden: 64,
                seq_len: n_samples,
                target_len: n_samples,
                ..ModelConfig::default()
            },
            train: TrainConfig { lr: 2e-3, epochs: 20, ..TrainConfig::default() },
            ranges: ValueRanges::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub val_rmse: f64,
    pub train_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

/// Parses `2,5,10`; values must be positive and strictly increasing.
pub fn parse_n_list(s: &str) -> Result<Vec<usize>> {
    let ns = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| CliError::Usage(format!("bad n `{t}`: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    check_n_list(&ns)?;
    Ok(ns)
}

fn check_n_list(ns: &[usize]) -> Result<()> {
    if ns.is_empty() || ns[0] == 0 || ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Usage(format!("n list {ns:?} must be positive and strictly increasing")));
    }
    Ok(())
}

/// Corpus and training settings for one sweep point.
pub fn point_config(cfg: &SweepConfig, n: usize, seed: u64) -> (CorpusConfig, TrainConfig) {
    let corpus = CorpusConfig {
        n_nets: n,
        per_net: cfg.per_net,
        order_min: cfg.order_min,
        order_max: cfg.order_max,
        seed,
        ranges: cfg.ranges,
        dataset: DatasetConfig { n_samples: cfg.n_samples, n_terms: cfg.model.n_terms, ..DatasetConfig::default() },
    };
    let n_records = n * cfg.per_net;
    let n_train = n_records - if n_records >= 2 { ((n_records as f64 * 0.1).round() as usize).max(1) } else { 0 };
    let batches = n_train.div_ceil(cfg.train.batch_size).max(1);
    let epochs = cfg.train.epochs.max(cfg.min_steps.div_ceil(batches));
    (corpus, TrainConfig { epochs, seed, ..cfg.train })
}

pub fn run(ns: &[usize], cfg: &SweepConfig, seed: u64) -> Result<SweepResult> {
    check_n_list(ns)?;
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let (corpus, train_cfg) = point_config(cfg, n, seed);
        let (records, stats) = corpus.records()?;
        let model_cfg = ModelConfig { seed, ..cfg.model };
        let (_, report) = train(&records, Some(stats), model_cfg, &train_cfg)?;
        if train_cfg.verbose {
            eprintln!("n={n} records={} val_rmse={:.6} time={:.1}s", records.len(), report.val_rmse, report.wall_time_s);
        }
        rows.push(SweepRow { n, val_rmse: report.val_rmse, train_time_s: report.wall_time_s });
    }
    Ok(SweepResult { rows })
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,val_rmse,train_time_s\n");
        for r in &self.rows {
            writeln!(s, "{},{:e},{:.3}", r.n, r.val_rmse, r.train_time_s).unwrap();
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("n,val_rmse,train_time_s") {
            return Err(CliError::Usage("sweep CSV header mismatch".into()));
        }
        let rows = lines
            .enumerate()
            .map(|(i, line)| {
                let bad = || CliError::Usage(format!("sweep CSV line {}: `{line}`", i + 2));
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 3 {
                    return Err(bad());
                }
                Ok(SweepRow {
                    n: f[0].parse().map_err(|_| bad())?,
                    val_rmse: f[1].parse().map_err(|_| bad())?,
                    train_time_s: f[2].parse().map_err(|_| bad())?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(SweepResult { rows })
    }

    /// Line chart of RMSE against n: axes, ticks and one polyline. Depends
    /// only on the RMSE values, not on timings.
    pub fn to_svg(&self) -> String {
        const W: f64 = 480.0;
        const H: f64 = 320.0;
        const M: f64 = 56.0;
        let mut s = String::new();
        writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#).unwrap();
        writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
        let (x0, x1, y0, y1) = (M, W - 16.0, H - M, 16.0);
        writeln!(s, r#"<path d="M{x0} {y1} V{y0} H{x1}" fill="none" stroke="black"/>"#).unwrap();
        if let (Some(first), Some(last)) = (self.rows.first(), self.rows.last()) {
            let (n_lo, n_hi) = (first.n as f64, last.n as f64);
            let r_hi = self.rows.iter().map(|r| r.val_rmse).fold(0.0, f64::max);
            let r_hi = if r_hi > 0.0 { r_hi * 1.1 } else { 1.0 };
            let px = |n: f64| if n_hi > n_lo { x0 + (n - n_lo) / (n_hi - n_lo) * (x1 - x0) } else { (x0 + x1) / 2.0 };
            let py = |r: f64| y0 - r / r_hi * (y0 - y1);
            for r in &self.rows {
                let x = px(r.n as f64);
                writeln!(s, r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, y0 + 4.0).unwrap();
                writeln!(s, r#"<text x="{x:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#, y0 + 16.0, r.n)
                    .unwrap();
            }
            for k in 0..=4 {
                let v = r_hi * k as f64 / 4.0;
                let y = py(v);
                writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#, x0 - 4.0).unwrap();
                writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{v:.4}</text>"#, x0 - 6.0, y + 4.0)
                    .unwrap();
            }
            let points: Vec<String> =
                self.rows.iter().map(|r| format!("{:.2},{:.2}", px(r.n as f64), py(r.val_rmse))).collect();
            writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, points.join(" "))
                .unwrap();
        }
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">n (nets)</text>"#, (x0 + x1) / 2.0, H - 12.0)
            .unwrap();
        writeln!(s, r#"<text x="14" y="{:.2}" font-size="12" transform="rotate(-90 14 {:.2})" text-anchor="middle">validation RMSE</text>"#, (y0 + y1) / 2.0, (y0 + y1) / 2.0).unwrap();
        s.push_str("</svg>\n");
        s
    }

    /// Writes `path` and the chart next to it with an `.svg` extension.
    pub fn write(&self, csv_path: &Path) -> Result<()> {
        if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        std::fs::write(csv_path, self.to_csv()).map_err(|e| CliError::io(csv_path, e))?;
        let svg = csv_path.with_extension("svg");
        std::fs::write(&svg, self.to_svg()).map_err(|e| CliError::io(&svg, e))
    }
}
