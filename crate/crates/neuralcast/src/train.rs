use std::time::Instant;

use ndarray::Array2;
use polecast_core::featurize::{split_indices, FeatureRecord, NormStats};
use polecast_core::oracle::{WaveKind, Waveform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{init_rng, record_input, Dropout, HybridNet, ModelConfig};
use crate::real::Real;
use crate::tape::{ParamStore, Tape};

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "POLECAST_THREADS";

/// Base network plus the additive correction network.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<R = f32> {
    pub cfg: ModelConfig,
    pub norm_stats: Option<NormStats>,
    pub base: HybridNet,
    pub base_params: ParamStore<R>,
    pub correction: HybridNet,
    pub correction_params: ParamStore<R>,
}

impl<R: Real> Model<R> {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        let mut base_params = ParamStore::new();
        let base = HybridNet::new(&cfg, cfg.d_in_base(), &mut base_params, "base", &mut init_rng(cfg.seed, 0))?;
        let mut correction_params = ParamStore::new();
        let correction = HybridNet::new(
            &cfg,
            cfg.d_in_base() + 1,
            &mut correction_params,
            "correction",
            &mut init_rng(cfg.seed, 1),
        )?;
        Ok(Model { cfg, norm_stats: None, base, base_params, correction, correction_params })
    }

    pub fn base_output(&self, record: &FeatureRecord) -> Result<Vec<R>> {
        let x = record_input(record, &self.cfg, None)?;
        Ok(self.base.predict(&self.base_params, &x))
    }

    pub fn correction_output(&self, record: &FeatureRecord, base: &[R]) -> Result<Vec<R>> {
        let x = record_input(record, &self.cfg, Some(base))?;
        Ok(self.correction.predict(&self.correction_params, &x))
    }

    /// Dominant-term response predicted by the base network.
    pub fn forward_base(&self, record: &FeatureRecord) -> Result<Waveform> {
        let y = self.base_output(record)?;
        to_waveform(&y, record.t_span)
    }

    /// Base prediction plus the correction network's output.
    pub fn forward_corrected(&self, record: &FeatureRecord) -> Result<Waveform> {
        let base = self.base_output(record)?;
        let corr = self.correction_output(record, &base)?;
        let y: Vec<R> = base.iter().zip(&corr).map(|(&b, &c)| b + c).collect();
        to_waveform(&y, record.t_span)
    }

    /// Both predictions at once, sharing the base pass.
    pub fn predict_pair(&self, record: &FeatureRecord) -> Result<(Vec<f64>, Vec<f64>)> {
        let base = self.base_output(record)?;
        let corr = self.correction_output(record, &base)?;
        let corrected = base.iter().zip(&corr).map(|(&b, &c)| (b + c).f64()).collect();
        Ok((base.iter().map(|b| b.f64()).collect(), corrected))
    }
}

fn to_waveform<R: Real>(y: &[R], t_span: f64) -> Result<Waveform> {
    Ok(Waveform::new(y.iter().map(|v| v.f64()).collect(), t_span, WaveKind::Output)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Epochs per stage.
    pub epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm clip.
    pub clip: f64,
    pub seed: u64,
    /// Worker threads; `None` reads the environment, then the CPU count.
    pub threads: Option<usize>,
    pub verbose: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 1e-3, epochs: 50, batch_size: 16, clip: 1.0, seed: 0, threads: None, verbose: false }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageLog {
    /// Mean training MSE per epoch.
    pub epoch_losses: Vec<f64>,
    /// Validation RMSE per epoch against the stage's target.
    pub val_rmse: Vec<f64>,
    /// Best validation RMSE so far, per epoch.
    pub best_val_rmse: Vec<f64>,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    /// Stage-1 then stage-2 epoch losses.
    pub epoch_losses: Vec<f64>,
    pub base_stage: StageLog,
    pub correction_stage: StageLog,
    /// Corrected prediction against the full target on the validation split.
    pub val_rmse: f64,
    /// Base prediction alone against the full target on the validation split.
    pub base_only_val_rmse: f64,
    pub wall_time_s: f64,
}

pub fn rmse(pred: &[f64], target: &[f64]) -> f64 {
    let n = pred.len().max(1) as f64;
    (pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n).sqrt()
}

/// Root mean square over all samples of several waveforms.
pub fn pooled_rmse<'a>(pairs: impl IntoIterator<Item = (&'a [f64], &'a [f64])>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, t) in pairs {
        sum += p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        n += p.len();
    }
    if n == 0 { 0.0 } else { (sum / n as f64).sqrt() }
}

pub fn thread_count(requested: Option<usize>) -> usize {
    requested
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()))
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
        .max(1)
}

struct StageData {
    inputs: Vec<Array2<f32>>,
    targets: Vec<Array2<f32>>,
}

struct Adam {
    m: Vec<Array2<f32>>,
    v: Vec<Array2<f32>>,
    step: i32,
}

impl Adam {
    const B1: f32 = 0.9;
    const B2: f32 = 0.999;
    const EPS: f32 = 1e-8;

    fn new(store: &ParamStore<f32>) -> Self {
        Adam { m: store.zeros_like(), v: store.zeros_like(), step: 0 }
    }

    fn update(&mut self, store: &mut ParamStore<f32>, grads: &[Array2<f32>], lr: f32) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        for (((p, g), m), v) in store.values_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = Self::B1 * *m + (1.0 - Self::B1) * g;
                *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            });
        }
    }
}

fn dropout_rng(seed: u64, stage: u64, epoch: u64, record: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd50f_0a7e);
    rng.set_stream(stage << 40 | epoch << 24 | record);
    rng
}

/// Trains one network on `(inputs, targets)` and leaves the best-validation
/// parameters in `store`.
#[allow(clippy::too_many_arguments)]
fn run_stage(
    net: &HybridNet,
    store: &mut ParamStore<f32>,
    data: &StageData,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
    stage: u64,
    pool: &rayon::ThreadPool,
    report: &mut TrainReport,
) -> Result<StageLog> {
    let mut log = StageLog::default();
    let mut adam = Adam::new(store);
    let mut best = (f64::INFINITY, store.clone());
    let rate = net.cfg.dropout;
    let val_rmse = |store: &ParamStore<f32>| -> f64 {
        let outs: Vec<Vec<f32>> =
            pool.install(|| val_idx.par_iter().map(|&i| net.predict(store, &data.inputs[i])).collect());
        let mut sum = 0.0;
        let mut n = 0;
        for (o, &i) in outs.iter().zip(val_idx) {
            for (p, t) in o.iter().zip(data.targets[i].iter()) {
                sum += (*p as f64 - *t as f64).powi(2);
                n += 1;
            }
        }
        if n == 0 { f64::NAN } else { (sum / n as f64).sqrt() }
    };

    let mut order = train_idx.to_vec();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ (stage << 32 | epoch as u64)));
        let mut losses = vec![0.0f64; data.inputs.len()];
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let weight = 1.0 / batch.len() as f32;
            let params: &ParamStore<f32> = store;
            let results: Vec<(f64, Vec<Array2<f32>>)> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| {
                        let mut tape = Tape::new(params);
                        let x = tape.leaf(data.inputs[i].clone());
                        let mut rng = dropout_rng(cfg.seed, stage, epoch as u64, i as u64);
                        let drop = (rate > 0.0).then_some(Dropout { rate, rng: &mut rng });
                        let y = net.forward(&mut tape, x, drop);
                        let loss = tape.mse(y, data.targets[i].clone());
                        let mut grads = params.zeros_like();
                        tape.backward_into(loss, weight, &mut grads);
                        (tape.value(loss)[(0, 0)] as f64, grads)
                    })
                    .collect()
            });
            let mut grads = store.zeros_like();
            for (&i, (loss, g)) in batch.iter().zip(results) {
                if !loss.is_finite() {
                    report.epoch_losses.extend(&log.epoch_losses);
                    return Err(Error::DivergenceDetected {
                        stage: stage as usize,
                        epoch,
                        report: Box::new(report.clone()),
                    });
                }
                losses[i] = loss;
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    *acc += gi;
                }
            }
            let norm = grads.iter().flat_map(|g| g.iter()).map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            if norm > cfg.clip {
                let k = (cfg.clip / norm) as f32;
                grads.iter_mut().for_each(|g| g.mapv_inplace(|x| x * k));
            }
            adam.update(store, &grads, cfg.lr as f32);
        }
        let epoch_loss = train_idx.iter().map(|&i| losses[i]).sum::<f64>() / train_idx.len().max(1) as f64;
        let v = if val_idx.is_empty() { epoch_loss.sqrt() } else { val_rmse(store) };
        if v < best.0 {
            best = (v, store.clone());
            log.best_epoch = epoch;
        }
        log.epoch_losses.push(epoch_loss);
        log.val_rmse.push(v);
        log.best_val_rmse.push(best.0);
        if cfg.verbose {
            eprintln!("stage {stage} epoch {epoch:>3}  loss {epoch_loss:.3e}  val rmse {v:.5}  best {:.5}", best.0);
        }
    }
    if best.0.is_finite() {
        *store = best.1;
    }
    Ok(log)
}

/// Two-stage training: the base network learns the dominant-term response,
/// then, with the base frozen, the correction network learns the residual
/// between the full target and the base network's own prediction.
pub fn train(
    records: &[FeatureRecord],
    norm_stats: Option<NormStats>,
    model_cfg: ModelConfig,
    cfg: &TrainConfig,
) -> Result<(Model<f32>, TrainReport)> {
    let start = Instant::now();
    if records.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    if !(cfg.lr >= 0.0) || cfg.batch_size == 0 || !(cfg.clip > 0.0) {
        return Err(Error::InvalidConfig("lr must be non-negative, batch size and clip positive".into()));
    }
    let mut model = Model::<f32>::new(model_cfg)?;
    model.norm_stats = norm_stats;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(cfg.threads))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let (train_idx, val_idx) = split_indices(records.len(), cfg.seed);
    let mut report = TrainReport { seed: cfg.seed, n_train: train_idx.len(), n_val: val_idx.len(), ..Default::default() };

    let column = |v: &[f64]| Array2::from_shape_fn((v.len(), 1), |(i, _)| v[i] as f32);
    let stage1 = StageData {
        inputs: records.iter().map(|r| record_input(r, &model_cfg, None)).collect::<Result<_>>()?,
        targets: records.iter().map(|r| column(&r.base_target.samples)).collect(),
    };
    let base_log = run_stage(&model.base, &mut model.base_params, &stage1, &train_idx, &val_idx, cfg, 1, &pool, &mut report)?;
    report.epoch_losses.extend(&base_log.epoch_losses);
    report.base_stage = base_log;
    drop(stage1);

    let base_preds: Vec<Vec<f32>> =
        pool.install(|| records.par_iter().map(|r| model.base_output(r)).collect::<Result<_>>())?;
    let stage2 = StageData {
        inputs: records
            .iter()
            .zip(&base_preds)
            .map(|(r, b)| record_input(r, &model_cfg, Some(b)))
            .collect::<Result<_>>()?,
        targets: records
            .iter()
            .zip(&base_preds)
            .map(|(r, b)| Array2::from_shape_fn((b.len(), 1), |(i, _)| (r.target.samples[i] - b[i] as f64) as f32))
            .collect(),
    };
    let corr_log =
        run_stage(&model.correction, &mut model.correction_params, &stage2, &train_idx, &val_idx, cfg, 2, &pool, &mut report)?;
    report.epoch_losses.extend(&corr_log.epoch_losses);
    report.correction_stage = corr_log;

    let eval_idx = if val_idx.is_empty() { &train_idx } else { &val_idx };
    let pairs: Vec<(Vec<f64>, Vec<f64>)> =
        pool.install(|| eval_idx.par_iter().map(|&i| model.predict_pair(&records[i])).collect::<Result<_>>())?;
    report.base_only_val_rmse =
        pooled_rmse(pairs.iter().zip(eval_idx).map(|((b, _), &i)| (b.as_slice(), records[i].target.samples.as_slice())));
    report.val_rmse =
        pooled_rmse(pairs.iter().zip(eval_idx).map(|((_, c), &i)| (c.as_slice(), records[i].target.samples.as_slice())));
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((model, report))
}
