use ndarray::{s, Array2};
use neuralcast::model::{attention, init_rng, positional_encoding, AttentionTrace, HybridNet};
use neuralcast::{ModelConfig, Padding, ParamStore, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

fn tiny_net(cfg: &ModelConfig, seed: u64) -> (HybridNet, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let net = HybridNet::new(cfg, cfg.d_in_base(), &mut store, "t", &mut init_rng(seed, 0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in [net.head.w, net.head.b] {
        store.get_mut(id).mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    (net, store)
}

fn set_identity(a: &mut Array2<f64>, row_offset: usize) {
    a.fill(0.0);
    for i in 0..a.ncols() {
        a[(row_offset + i, i)] = 1.0;
    }
}

#[test]
fn decoder_is_causal() {
    let cfg = ModelConfig { n_dec_layers: 2, target_len: 7, ..ModelConfig::tiny() };
    for seed in 0..20u64 {
        let (net, store) = tiny_net(&cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let y = random(cfg.target_len, cfg.d_embed, &mut rng);
        let memory = random(cfg.seq_len, cfg.d_embed, &mut rng);
        let run = |y: &Array2<f64>| {
            let mut t = Tape::new(&store);
            let (yv, mv) = (t.leaf(y.clone()), t.leaf(memory.clone()));
            let out = net.decoder_stack(&mut t, yv, mv, &mut None, &mut AttentionTrace::default());
            t.value(out).clone()
        };
        let base = run(&y);
        let pos = rng.random_range(0..cfg.target_len - 1);
        let mut perturbed = y.clone();
        perturbed.slice_mut(s![pos + 1.., ..]).mapv_inplace(|v| v + rng.random_range(-3.0..3.0));
        let out = run(&perturbed);
        let diff = (&out.slice(s![..=pos, ..]) - &base.slice(s![..=pos, ..])).mapv(f64::abs);
        assert!(diff.iter().all(|&d| d < 1e-9), "seed {seed}: past rows moved by {}", diff.fold(0.0, |m: f64, &d| m.max(d)));
        assert!((&out - &base).iter().any(|d| d.abs() > 1e-6), "seed {seed}: perturbation had no effect");
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let cfg = ModelConfig { seq_len: 9, target_len: 5, ..ModelConfig::tiny() };
    let (net, store) = tiny_net(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(cfg.seq_len, cfg.d_in_base(), &mut rng);
    let mut t = Tape::new(&store);
    let xv = t.leaf(x);
    let mut trace = AttentionTrace::default();
    net.forward_traced(&mut t, xv, None, &mut trace);
    assert_eq!(trace.encoder.len(), cfg.n_heads * cfg.n_enc_layers);
    assert_eq!(trace.decoder_self.len(), cfg.n_dec_layers);
    assert_eq!(trace.decoder_cross.len(), cfg.n_dec_layers);
    for &a in trace.encoder.iter().chain(&trace.decoder_self).chain(&trace.decoder_cross) {
        for row in t.value(a).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p >= 0.0));
        }
    }
    let cross = t.value(trace.decoder_cross[0]);
    assert_eq!(cross.dim(), (cfg.target_len, cfg.seq_len));
    let masked = t.value(trace.decoder_self[0]);
    for i in 0..cfg.target_len {
        for j in i + 1..cfg.target_len {
            assert_eq!(masked[(i, j)], 0.0);
        }
    }
}

#[test]
fn single_query_self_attention_is_the_identity_weight() {
    let store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = random(1, 4, &mut rng);
    let mut t = Tape::new(&store);
    let qv = t.leaf(q.clone());
    let (out, weights) = attention(&mut t, qv, qv, qv, 1, 0.5, true);
    assert_eq!(t.value(weights[0]), &Array2::from_elem((1, 1), 1.0));
    assert_eq!(t.value(out), &q);
}

#[test]
fn single_token_encoder_passes_the_value_path() {
    let cfg = ModelConfig { seq_len: 1, target_len: 1, kernel_size: 1, ..ModelConfig::tiny() };
    let (net, store) = tiny_net(&cfg, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = random(1, cfg.d_embed, &mut rng);
    let layer = &net.encoder[0];
    let mut t = Tape::new(&store);
    let hv = t.leaf(h.clone());
    let mut trace = AttentionTrace::default();
    let out = net.encoder_layer(&mut t, layer, hv, &mut None, &mut trace);
    for &a in &trace.encoder {
        assert!((t.value(a)[(0, 0)] - 1.0).abs() < 1e-15);
    }
    // With one token the attention output is x·W_V·W_O.
    let mut t2 = Tape::new(&store);
    let hv = t2.leaf(h);
    let wv = t2.param(layer.wv);
    let wo = t2.param(layer.wo);
    let v = t2.matmul(hv, wv);
    let mha = t2.matmul(v, wo);
    let x1 = t2.add(hv, mha);
    let g1 = t2.param(layer.norm1.gamma);
    let b1 = t2.param(layer.norm1.beta);
    let x1 = t2.layer_norm(x1, g1, b1);
    let f = layer.ffn1.forward(&mut t2, x1);
    let f = t2.relu(f);
    let f = layer.ffn2.forward(&mut t2, f);
    let x2 = t2.add(x1, f);
    let g2 = t2.param(layer.norm2.gamma);
    let b2 = t2.param(layer.norm2.beta);
    let expected = t2.layer_norm(x2, g2, b2);
    let diff = (t.value(out) - t2.value(expected)).mapv(f64::abs);
    assert!(diff.iter().all(|&d| d < 1e-12));
}

#[test]
fn identical_tokens_give_identical_outputs() {
    let cfg = ModelConfig::tiny();
    let (net, store) = tiny_net(&cfg, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let row = random(1, cfg.d_embed, &mut rng);
    let h = Array2::from_shape_fn((cfg.seq_len, cfg.d_embed), |(_, j)| row[(0, j)]);
    let mut t = Tape::new(&store);
    let hv = t.leaf(h);
    let out = net.encoder_layer(&mut t, &net.encoder[0], hv, &mut None, &mut AttentionTrace::default());
    let out = t.value(out);
    for i in 1..cfg.seq_len {
        for j in 0..cfg.d_embed {
            assert!((out[(i, j)] - out[(0, j)]).abs() < 1e-12);
        }
    }
}

#[test]
fn valid_padding_shortens_by_kernel_minus_one() {
    let cfg = ModelConfig { seq_len: 100, target_len: 4, ..ModelConfig::tiny() };
    let (net, store) = tiny_net(&cfg, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = random(100, cfg.d_embed, &mut rng);
    let mut t = Tape::new(&store);
    let hv = t.leaf(h);
    let valid = net.cnn_branch(&mut t, hv, Padding::Valid);
    let same = net.cnn_branch(&mut t, hv, Padding::Same);
    assert_eq!(t.value(valid).dim(), (98, cfg.d_embed));
    assert_eq!(t.value(same).dim(), (100, cfg.d_embed));
    // Interior rows see the same taps under either padding.
    let d = (&t.value(valid).slice(s![.., ..]) - &t.value(same).slice(s![1..99, ..])).mapv(f64::abs);
    assert!(d.iter().all(|&x| x < 1e-12));
}

#[test]
fn identity_convolution_reproduces_nonnegative_input() {
    let d = 6;
    let cfg = ModelConfig { d_embed: d, n_heads: 2, conv_channels: d, hidden: d, seq_len: 10, ..ModelConfig::tiny() };
    let (net, mut store) = tiny_net(&cfg, 0);
    set_identity(store.get_mut(net.conv.w), d);
    set_identity(store.get_mut(net.dense1.w), 0);
    set_identity(store.get_mut(net.dense2.w), 0);
    for b in [net.conv.b, net.dense1.b, net.dense2.b] {
        store.get_mut(b).fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = random(cfg.seq_len, d, &mut rng).mapv(f64::abs);
    let mut t = Tape::new(&store);
    let hv = t.leaf(h.clone());
    let out = net.cnn_branch(&mut t, hv, Padding::Same);
    assert_eq!(t.value(out), &h);
    // Negative entries are clipped by the ReLU.
    let signed = random(cfg.seq_len, d, &mut rng);
    let hv = t.leaf(signed.clone());
    let out = net.cnn_branch(&mut t, hv, Padding::Same);
    assert_eq!(t.value(out), &signed.mapv(|v| v.max(0.0)));
}

#[test]
fn fusion_identities() {
    let cfg = ModelConfig::tiny();
    let (net, mut store) = tiny_net(&cfg, 2);
    let d = cfg.d_embed;
    set_identity(store.get_mut(net.fuse.w), 0);
    store.get_mut(net.fuse.b).fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x_enc = random(cfg.seq_len, d, &mut rng);
    let mut t = Tape::new(&store);
    let (e, ones) = (t.leaf(x_enc.clone()), t.leaf(Array2::ones((cfg.seq_len, d))));
    let out = net.fuse(&mut t, e, ones);
    assert_eq!(t.value(out), &x_enc);

    let (net, store) = tiny_net(&cfg, 3);
    let bias = store.get(net.fuse.b).clone();
    let mut t = Tape::new(&store);
    let (e, zero) = (t.leaf(x_enc.clone()), t.leaf(Array2::zeros((cfg.seq_len, d))));
    for out in [net.fuse(&mut t, e, zero), net.fuse(&mut t, zero, e)] {
        for row in t.value(out).rows() {
            assert_eq!(row, bias.row(0));
        }
    }
}

/// Central differences with respect to the two fusion inputs, through the
/// projection and a squared-sum loss.
#[test]
fn fusion_gradient_reaches_both_branches() {
    let cfg = ModelConfig::tiny();
    let (net, store) = tiny_net(&cfg, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (a, b) = (random(cfg.seq_len, cfg.d_embed, &mut rng), random(cfg.seq_len, cfg.d_embed, &mut rng));
    let w = random(cfg.d_embed, 1, &mut rng);
    let loss = |a: &Array2<f64>, b: &Array2<f64>| {
        let fused = (a * b).dot(store.get(net.fuse.w)) + store.get(net.fuse.b);
        fused.dot(&w).mapv(|v| v * v).sum()
    };
    // Analytic: route both inputs through parameters so the tape returns their gradients.
    let mut tmp = store.clone();
    let ia = tmp.add("a", a.clone());
    let ib = tmp.add("b", b.clone());
    let iw = tmp.add("w", w.clone());
    let mut t = Tape::new(&tmp);
    let (av, bv, wv) = (t.param(ia), t.param(ib), t.param(iw));
    let fused = net.fuse(&mut t, av, bv);
    let y = t.matmul(fused, wv);
    let n = cfg.seq_len as f64;
    let l = t.mse(y, Array2::zeros((cfg.seq_len, 1)));
    let g = t.backward(l);
    let eps = 1e-6;
    for (which, grad) in [(0, &g[ia.0]), (1, &g[ib.0])] {
        for i in 0..cfg.seq_len {
            for j in 0..cfg.d_embed {
                let (mut ap, mut am, mut bp, mut bm) = (a.clone(), a.clone(), b.clone(), b.clone());
                if which == 0 {
                    ap[(i, j)] += eps;
                    am[(i, j)] -= eps;
                } else {
                    bp[(i, j)] += eps;
                    bm[(i, j)] -= eps;
                }
                let numeric = (loss(&ap, &bp) - loss(&am, &bm)) / (2.0 * eps) / n;
                let analytic = grad[(i, j)];
                let scale = numeric.abs().max(analytic.abs()).max(1e-8);
                assert!((numeric - analytic).abs() / scale < 1e-6, "input {which} ({i},{j}): {analytic} vs {numeric}");
            }
        }
        assert!(grad.iter().any(|v| v.abs() > 1e-6));
    }
}

#[test]
fn cnn_branch_gradient_matches_finite_differences() {
    let cfg = ModelConfig { d_embed: 6, n_heads: 2, conv_channels: 5, hidden: 7, seq_len: 8, ..ModelConfig::tiny() };
    let (net, mut store) = tiny_net(&cfg, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // Zero biases put all-zero ReLU rows exactly on the kink of the next layer.
    for b in [net.conv.b, net.dense1.b, net.dense2.b] {
        store.get_mut(b).mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
    let batch: Vec<Array2<f64>> = (0..4).map(|_| random(cfg.seq_len, cfg.d_embed, &mut rng)).collect();
    let targets: Vec<Array2<f64>> = (0..4).map(|_| random(cfg.seq_len, cfg.d_embed, &mut rng)).collect();
    let loss = |store: &ParamStore<f64>, grads: Option<&mut Vec<Array2<f64>>>| {
        let mut total = 0.0;
        let mut grads = grads;
        for (h, y) in batch.iter().zip(&targets) {
            let mut t = Tape::new(store);
            let hv = t.leaf(h.clone());
            let out = net.cnn_branch(&mut t, hv, Padding::Same);
            let l = t.mse(out, y.clone());
            total += t.value(l)[(0, 0)];
            if let Some(g) = grads.as_deref_mut() {
                t.backward_into(l, 1.0, g);
            }
        }
        total
    };
    let mut analytic = store.zeros_like();
    loss(&store, Some(&mut analytic));
    let eps = 1e-6;
    for id in [net.conv.w, net.conv.b, net.dense1.w, net.dense1.b, net.dense2.w, net.dense2.b] {
        let (r, c) = store.get(id).dim();
        for (i, j) in [(0, 0), (r / 2, c / 2), (r - 1, c - 1)] {
            let (mut p, mut m) = (store.clone(), store.clone());
            p.get_mut(id)[(i, j)] += eps;
            m.get_mut(id)[(i, j)] -= eps;
            let numeric = (loss(&p, None) - loss(&m, None)) / (2.0 * eps);
            let a = analytic[id.0][(i, j)];
            let scale = a.abs().max(numeric.abs());
            if scale > 1e-10 {
                assert!((a - numeric).abs() / scale < 1e-4, "{} ({i},{j}): {a} vs {numeric}", store.name(id));
            }
        }
    }
}

#[test]
fn positional_encoding_table() {
    let pe = positional_encoding::<f64>(128, 64);
    let row0: Vec<f64> = (0..64).map(|k| if k % 2 == 0 { 0.0 } else { 1.0 }).collect();
    assert_eq!(pe.row(0).to_vec(), row0);
    assert!((pe[(1, 0)] - 1f64.sin()).abs() < 1e-15);
    assert!((pe[(3, 1)] - 3f64.cos()).abs() < 1e-15);
    let k = 10;
    let angle = 5.0 / 10000f64.powf(k as f64 / 64.0);
    assert!((pe[(5, k)] - angle.sin()).abs() < 1e-15);
    assert!((pe[(5, k + 1)] - angle.cos()).abs() < 1e-15);
}

#[test]
fn zero_input_and_weights_embed_to_positional_encoding() {
    let cfg = ModelConfig::tiny();
    let (net, mut store) = tiny_net(&cfg, 0);
    store.get_mut(net.embed.w).fill(0.0);
    store.get_mut(net.embed.b).fill(0.0);
    let mut t = Tape::new(&store);
    let x = t.leaf(Array2::zeros((cfg.seq_len, cfg.d_in_base())));
    let h = net.embed(&mut t, x);
    assert_eq!(t.value(h), &positional_encoding::<f64>(cfg.seq_len, cfg.d_embed));
}

#[test]
fn output_shape_and_zero_head() {
    let cfg = ModelConfig { target_len: 6, ..ModelConfig::tiny() };
    let mut store = ParamStore::<f64>::new();
    let net = HybridNet::new(&cfg, cfg.d_in_base(), &mut store, "z", &mut init_rng(1, 0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y = net.predict(&store, &random(cfg.seq_len, cfg.d_in_base(), &mut rng));
    assert_eq!(y, vec![0.0; cfg.target_len]);
}

#[test]
fn single_step_target_masks_nothing_but_itself() {
    let cfg = ModelConfig { target_len: 1, ..ModelConfig::tiny() };
    let (net, store) = tiny_net(&cfg, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut t = Tape::new(&store);
    let x = t.leaf(random(cfg.seq_len, cfg.d_in_base(), &mut rng));
    let mut trace = AttentionTrace::default();
    let y = net.forward_traced(&mut t, x, None, &mut trace);
    assert_eq!(t.value(y).dim(), (1, 1));
    assert_eq!(t.value(trace.decoder_self[0]), &Array2::from_elem((1, 1), 1.0));
}

#[test]
fn invalid_configs_are_rejected() {
    let base = ModelConfig::default();
    for cfg in [
        ModelConfig { n_heads: 3, ..base },
        ModelConfig { kernel_size: 4, ..base },
        ModelConfig { dropout: 1.0, ..base },
        ModelConfig { seq_len: 2, ..base },
    ] {
        assert!(matches!(cfg.validate(), Err(neuralcast::Error::InvalidConfig(_))));
    }
    assert!(base.validate().is_ok());
}
