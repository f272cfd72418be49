use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::Array2;
use polecast_core::featurize::{FeatureRecord, N_DEVICES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tape::{ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_embed: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub conv_channels: usize,
    pub kernel_size: usize,
    pub hidden: usize,
    pub seq_len: usize,
    pub target_len: usize,
    /// Rows of the pole-residue triplet block.
    pub n_terms: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_embed: 64,
            n_heads: 4,
            n_enc_layers: 3,
            n_dec_layers: 3,
            d_ff: 256,
            conv_channels: 64,
            kernel_size: 3,
            hidden: 128,
            seq_len: 128,
            target_len: 128,
            n_terms: 8,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// The configuration used for gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            d_embed: 8,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            d_ff: 16,
            conv_channels: 8,
            kernel_size: 3,
            hidden: 16,
            seq_len: 6,
            target_len: 6,
            n_terms: 2,
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.d_embed == 0 || self.n_heads == 0 || self.d_embed % self.n_heads != 0 {
            return bad("d_embed must be a positive multiple of n_heads");
        }
        if self.kernel_size % 2 == 0 {
            return bad("kernel_size must be odd");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.seq_len < self.kernel_size || self.target_len == 0 {
            return bad("sequence lengths must be positive and at least kernel_size");
        }
        if [self.d_ff, self.conv_channels, self.hidden, self.n_terms].contains(&0) {
            return bad("layer widths must be positive");
        }
        Ok(())
    }

    /// Width of one input row: voltage, transient time, device one-hot and
    /// the flattened triplet block.
    pub fn d_in_base(&self) -> usize {
        2 + N_DEVICES + 3 * self.n_terms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    /// Output length equals input length.
    Same,
    /// Output length is `L − S + 1`.
    Valid,
}

/// Sinusoidal position table: even columns `sin(pos / 10000^(2i/D))`, odd
/// columns the matching cosine.
type PeCache = Mutex<HashMap<(usize, usize), Arc<Array2<f64>>>>;

pub fn positional_encoding<R: Real>(len: usize, d: usize) -> Array2<R> {
    static CACHE: OnceLock<PeCache> = OnceLock::new();
    let table = CACHE
        .get_or_init(Default::default)
        .lock()
        .expect("positional table cache")
        .entry((len, d))
        .or_insert_with(|| {
            Arc::new(Array2::from_shape_fn((len, d), |(pos, k)| {
                let i = (k / 2) as f64;
                let angle = pos as f64 / 10000f64.powf(2.0 * i / d as f64);
                if k % 2 == 0 { angle.sin() } else { angle.cos() }
            }))
        })
        .clone();
    table.mapv(R::c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<R: Real>(store: &mut ParamStore<R>, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            w: store.add(format!("{name}.w"), uniform(fan_in, fan_out, rng)),
            b: store.add(format!("{name}.b"), Array2::zeros((1, fan_out))),
        }
    }

    pub fn zeroed<R: Real>(store: &mut ParamStore<R>, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Dense {
            w: store.add(format!("{name}.w"), Array2::zeros((fan_in, fan_out))),
            b: store.add(format!("{name}.b"), Array2::zeros((1, fan_out))),
        }
    }

    pub fn forward<R: Real>(&self, t: &mut Tape<R>, x: Var) -> Var {
        let w = t.param(self.w);
        let b = t.param(self.b);
        let y = t.matmul(x, w);
        t.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    fn new<R: Real>(store: &mut ParamStore<R>, name: &str, d: usize) -> Self {
        Norm {
            gamma: store.add(format!("{name}.gamma"), Array2::ones((1, d))),
            beta: store.add(format!("{name}.beta"), Array2::zeros((1, d))),
        }
    }

    fn forward<R: Real>(&self, t: &mut Tape<R>, x: Var) -> Var {
        let g = t.param(self.gamma);
        let b = t.param(self.beta);
        t.layer_norm(x, g, b)
    }
}

/// `U(−1/√fan_in, 1/√fan_in)` weights.
fn uniform<R: Real>(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Array2<R> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || R::c(rng.random_range(-bound..bound)))
}

fn weight<R: Real>(store: &mut ParamStore<R>, name: String, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> ParamId {
    store.add(name, uniform(fan_in, fan_out, rng))
}

/// Scaled dot-product attention of `q` over `k`/`v`, split into `heads`
/// column blocks. Returns the concatenated head outputs and the attention
/// matrices.
pub fn attention<R: Real>(t: &mut Tape<R>, q: Var, k: Var, v: Var, heads: usize, scale: f64, causal: bool) -> (Var, Vec<Var>) {
    let d = t.value(q).ncols();
    let dh = d / heads;
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (t.slice_cols(q, h * dh, (h + 1) * dh), t.slice_cols(k, h * dh, (h + 1) * dh), t.slice_cols(v, h * dh, (h + 1) * dh))
        };
        let scores = t.matmul_nt(qh, kh);
        let a = t.softmax(scores, R::c(scale), causal);
        weights.push(a);
        outs.push(t.matmul(a, vh));
    }
    let out = if heads == 1 { outs[0] } else { t.concat_cols(&outs) };
    (out, weights)
}

/// Per-pass dropout state; `None` disables dropout.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

fn dropout<R: Real>(t: &mut Tape<R>, x: Var, drop: &mut Option<Dropout>) -> Var {
    match drop {
        Some(d) if d.rate > 0.0 => {
            let keep = R::c(1.0 / (1.0 - d.rate));
            let (rate, rng) = (d.rate, &mut *d.rng);
            let mask = Array2::from_shape_simple_fn(t.value(x).raw_dim(), || {
                if rng.random::<f64>() < rate { R::zero() } else { keep }
            });
            t.mul_const(x, mask)
        }
        _ => x,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub norm1: Norm,
    pub ffn1: Dense,
    pub ffn2: Dense,
    pub norm2: Norm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub w_qkv: ParamId,
    pub norm1: Norm,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub norm2: Norm,
    pub ffn1: Dense,
    pub ffn2: Dense,
    pub norm3: Norm,
}

/// Attention matrices captured during a forward pass.
#[derive(Debug, Default)]
pub struct AttentionTrace {
    pub encoder: Vec<Var>,
    pub decoder_self: Vec<Var>,
    pub decoder_cross: Vec<Var>,
}

/// One CNN–Transformer regressor: embedding, parallel encoder stack and
/// convolution branch, multiplicative fusion, decoder stack and a linear
/// head producing one value per output step.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridNet {
    pub cfg: ModelConfig,
    pub d_in: usize,
    pub embed: Dense,
    pub conv: Dense,
    pub dense1: Dense,
    pub dense2: Dense,
    pub encoder: Vec<EncoderLayer>,
    pub fuse: Dense,
    pub decoder: Vec<DecoderLayer>,
    pub head: Dense,
}

impl HybridNet {
    /// Registers all parameters in `store` under `prefix`, in a fixed order.
    pub fn new<R: Real>(cfg: &ModelConfig, d_in: usize, store: &mut ParamStore<R>, prefix: &str, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let (d, f) = (cfg.d_embed, cfg.d_ff);
        let name = |s: &str| format!("{prefix}.{s}");
        let embed = Dense::new(store, &name("embed"), d_in, d, rng);
        let conv = Dense::new(store, &name("conv"), cfg.kernel_size * d, cfg.conv_channels, rng);
        let dense1 = Dense::new(store, &name("conv_dense1"), cfg.conv_channels, cfg.hidden, rng);
        let dense2 = Dense::new(store, &name("conv_dense2"), cfg.hidden, d, rng);
        let encoder = (0..cfg.n_enc_layers)
            .map(|l| {
                let n = |s: &str| name(&format!("enc{l}.{s}"));
                EncoderLayer {
                    wq: weight(store, n("wq"), d, d, rng),
                    wk: weight(store, n("wk"), d, d, rng),
                    wv: weight(store, n("wv"), d, d, rng),
                    wo: weight(store, n("wo"), d, d, rng),
                    norm1: Norm::new(store, &n("norm1"), d),
                    ffn1: Dense::new(store, &n("ffn1"), d, f, rng),
                    ffn2: Dense::new(store, &n("ffn2"), f, d, rng),
                    norm2: Norm::new(store, &n("norm2"), d),
                }
            })
            .collect();
        let fuse = Dense::new(store, &name("fuse"), d, d, rng);
        let decoder = (0..cfg.n_dec_layers)
            .map(|l| {
                let n = |s: &str| name(&format!("dec{l}.{s}"));
                DecoderLayer {
                    w_qkv: weight(store, n("w_qkv"), d, d, rng),
                    norm1: Norm::new(store, &n("norm1"), d),
                    wq: weight(store, n("wq"), d, d, rng),
                    wk: weight(store, n("wk"), d, d, rng),
                    wv: weight(store, n("wv"), d, d, rng),
                    wo: weight(store, n("wo"), d, d, rng),
                    norm2: Norm::new(store, &n("norm2"), d),
                    ffn1: Dense::new(store, &n("ffn1"), d, f, rng),
                    ffn2: Dense::new(store, &n("ffn2"), f, d, rng),
                    norm3: Norm::new(store, &n("norm3"), d),
                }
            })
            .collect();
        let head = Dense::zeroed(store, &name("head"), d, 1);
        Ok(HybridNet { cfg: *cfg, d_in, embed, conv, dense1, dense2, encoder, fuse, decoder, head })
    }

    /// `ReLU(X W_e + b_e) + PE`.
    pub fn embed<R: Real>(&self, t: &mut Tape<R>, x: Var) -> Var {
        let h = self.embed.forward(t, x);
        let h = t.relu(h);
        let (l, d) = t.value(h).dim();
        let pe = t.leaf(positional_encoding(l, d));
        t.add(h, pe)
    }

    /// Convolution over time with `kernel_size` taps, ReLU, then two dense
    /// layers back to `d_embed` channels.
    pub fn cnn_branch<R: Real>(&self, t: &mut Tape<R>, h: Var, padding: Padding) -> Var {
        let s = self.cfg.kernel_size;
        let pad = match padding {
            Padding::Same => s / 2,
            Padding::Valid => 0,
        };
        let cols = t.window(h, s, pad);
        let c = self.conv.forward(t, cols);
        let c = t.relu(c);
        let m = self.dense1.forward(t, c);
        let m = t.relu(m);
        self.dense2.forward(t, m)
    }

    pub fn encoder_layer<R: Real>(&self, t: &mut Tape<R>, layer: &EncoderLayer, x: Var, drop: &mut Option<Dropout>, trace: &mut AttentionTrace) -> Var {
        let (d, h) = (self.cfg.d_embed, self.cfg.n_heads);
        let [wq, wk, wv, wo] = [layer.wq, layer.wk, layer.wv, layer.wo].map(|p| t.param(p));
        let q = t.matmul(x, wq);
        let k = t.matmul(x, wk);
        let v = t.matmul(x, wv);
        let (heads, weights) = attention(t, q, k, v, h, 1.0 / ((d / h) as f64).sqrt(), false);
        trace.encoder.extend(weights);
        let mha = t.matmul(heads, wo);
        let mha = dropout(t, mha, drop);
        let x1 = t.add(x, mha);
        let x1 = layer.norm1.forward(t, x1);
        let f = layer.ffn1.forward(t, x1);
        let f = t.relu(f);
        let f = layer.ffn2.forward(t, f);
        let f = dropout(t, f, drop);
        let x2 = t.add(x1, f);
        layer.norm2.forward(t, x2)
    }

    /// `(X_enc ⊙ X_cnn) W_f + b_f`.
    pub fn fuse<R: Real>(&self, t: &mut Tape<R>, x_enc: Var, x_cnn: Var) -> Var {
        let p = t.mul(x_enc, x_cnn);
        self.fuse.forward(t, p)
    }

    pub fn decoder_layer<R: Real>(&self, t: &mut Tape<R>, layer: &DecoderLayer, y: Var, memory: Var, drop: &mut Option<Dropout>, trace: &mut AttentionTrace) -> Var {
        let scale = 1.0 / (self.cfg.d_embed as f64).sqrt();
        let w_qkv = t.param(layer.w_qkv);
        let qkv = t.matmul(y, w_qkv);
        let (sa, w_self) = attention(t, qkv, qkv, qkv, 1, scale, true);
        trace.decoder_self.extend(w_self);
        let sa = dropout(t, sa, drop);
        let y1 = t.add(y, sa);
        let y1 = layer.norm1.forward(t, y1);

        let [wq, wk, wv, wo] = [layer.wq, layer.wk, layer.wv, layer.wo].map(|p| t.param(p));
        let q = t.matmul(y1, wq);
        let k = t.matmul(memory, wk);
        let v = t.matmul(memory, wv);
        let (ca, w_cross) = attention(t, q, k, v, 1, scale, false);
        trace.decoder_cross.extend(w_cross);
        let ca = t.matmul(ca, wo);
        let ca = dropout(t, ca, drop);
        let y2 = t.add(y1, ca);
        let y2 = layer.norm2.forward(t, y2);

        let f = layer.ffn1.forward(t, y2);
        let f = t.gelu(f);
        let f = layer.ffn2.forward(t, f);
        let f = dropout(t, f, drop);
        let y3 = t.add(y2, f);
        layer.norm3.forward(t, y3)
    }

    pub fn decoder_stack<R: Real>(&self, t: &mut Tape<R>, y: Var, memory: Var, drop: &mut Option<Dropout>, trace: &mut AttentionTrace) -> Var {
        self.decoder.iter().fold(y, |y, layer| self.decoder_layer(t, layer, y, memory, drop, trace))
    }

    /// Full pass from an input matrix `[L, d_in]` to a `[T, 1]` prediction.
    pub fn forward_traced<R: Real>(&self, t: &mut Tape<R>, x: Var, mut drop: Option<Dropout>, trace: &mut AttentionTrace) -> Var {
        let h0 = self.embed(t, x);
        let h0 = dropout(t, h0, &mut drop);
        let x_cnn = self.cnn_branch(t, h0, Padding::Same);
        let x_enc = self.encoder.iter().fold(h0, |x, layer| self.encoder_layer(t, layer, x, &mut drop, trace));
        let memory = self.fuse(t, x_enc, x_cnn);
        let queries = t.leaf(positional_encoding(self.cfg.target_len, self.cfg.d_embed));
        let y = self.decoder_stack(t, queries, memory, &mut drop, trace);
        self.head.forward(t, y)
    }

    pub fn forward<R: Real>(&self, t: &mut Tape<R>, x: Var, drop: Option<Dropout>) -> Var {
        self.forward_traced(t, x, drop, &mut AttentionTrace::default())
    }

    /// Inference without dropout.
    pub fn predict<R: Real>(&self, store: &ParamStore<R>, x: &Array2<R>) -> Vec<R> {
        let mut t = Tape::new(store);
        let xv = t.leaf(x.clone());
        let y = self.forward(&mut t, xv, None);
        t.value(y).iter().copied().collect()
    }
}

/// Builds the `[L, d_in]` input matrix of a record. `extra`, when given, is
/// appended as one more column (the base prediction for the correction net).
pub fn record_input<R: Real>(record: &FeatureRecord, cfg: &ModelConfig, extra: Option<&[R]>) -> Result<Array2<R>> {
    let l = cfg.seq_len;
    if record.v_in.n_samples() != l || record.target.n_samples() != cfg.target_len {
        return Err(Error::ShapeMismatch(format!(
            "record {} has {} samples, model expects L = {l}, T = {}",
            record.id,
            record.v_in.n_samples(),
            cfg.target_len
        )));
    }
    if record.triplets.rows.len() != cfg.n_terms {
        return Err(Error::ShapeMismatch(format!(
            "record {} has {} triplet rows, model expects {}",
            record.id,
            record.triplets.rows.len(),
            cfg.n_terms
        )));
    }
    if record.device_id >= N_DEVICES {
        return Err(Error::ShapeMismatch(format!("device id {} out of range", record.device_id)));
    }
    if let Some(e) = extra {
        if e.len() != l {
            return Err(Error::ShapeMismatch(format!("extra channel has {} samples, expected {l}", e.len())));
        }
    }
    let d_in = cfg.d_in_base() + usize::from(extra.is_some());
    let triplets = record.triplets.flatten();
    let mut x = Array2::zeros((l, d_in));
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        row[0] = R::c(record.v_in.samples[i]);
        row[1] = R::c(record.t_norm);
        row[2 + record.device_id] = R::one();
        for (k, &v) in triplets.iter().enumerate() {
            row[2 + N_DEVICES + k] = R::c(v);
        }
        if let Some(e) = extra {
            row[d_in - 1] = e[i];
        }
    }
    Ok(x)
}

/// Seeded RNG for parameter initialization of one network.
pub fn init_rng(seed: u64, net_index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(net_index))
}
