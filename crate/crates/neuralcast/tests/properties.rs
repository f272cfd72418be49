use ndarray::Array2;
use neuralcast::model::{attention, init_rng, HybridNet};
use neuralcast::tape::LN_EPS;
use neuralcast::{ModelConfig, ParamStore, Tape};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, values: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(i, j)| values[(i * cols + j) % values.len()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_weights_are_distributions(
        rows in 1usize..9,
        keys in 1usize..9,
        heads in 1usize..3,
        causal in any::<bool>(),
        values in prop::collection::vec(-4.0f64..4.0, 1..64),
    ) {
        let d = 4 * heads;
        let store = ParamStore::<f64>::new();
        let mut t = Tape::new(&store);
        let q = t.leaf(matrix(rows, d, &values));
        let kv = t.leaf(matrix(keys, d, &values[values.len() / 2..]));
        let (out, weights) = attention(&mut t, q, kv, kv, heads, 0.7, causal);
        prop_assert_eq!(t.value(out).dim(), (rows, d));
        for &w in &weights {
            for (i, row) in t.value(w).rows().into_iter().enumerate() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-12);
                if causal {
                    prop_assert!(row.iter().skip(i + 1).all(|&p| p == 0.0));
                }
            }
        }
    }

    #[test]
    fn layer_norm_standardizes_rows(rows in 1usize..6, cols in 2usize..12, values in prop::collection::vec(-50.0f64..50.0, 2..80)) {
        let mut store = ParamStore::<f64>::new();
        let g = store.add("g", Array2::ones((1, cols)));
        let b = store.add("b", Array2::zeros((1, cols)));
        let x = matrix(rows, cols, &values);
        let input_vars: Vec<f64> = x
            .rows()
            .into_iter()
            .map(|r| {
                let m = r.sum() / cols as f64;
                r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / cols as f64
            })
            .collect();
        let mut t = Tape::new(&store);
        let (xv, gv, bv) = (t.leaf(x), t.param(g), t.param(b));
        let y = t.layer_norm(xv, gv, bv);
        for (row, v) in t.value(y).rows().into_iter().zip(input_vars) {
            let mean = row.sum() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            prop_assert!(mean.abs() < 1e-9);
            // Unit variance up to the stabilizing epsilon.
            prop_assert!((var - v / (v + LN_EPS)).abs() < 1e-9);
        }
    }

    #[test]
    fn every_stage_keeps_the_sequence_shape(seed in 0u64..1000, l in 3usize..10, t_len in 1usize..8) {
        let cfg = ModelConfig { seq_len: l, target_len: t_len, ..ModelConfig::tiny() };
        let mut store = ParamStore::<f64>::new();
        let net = HybridNet::new(&cfg, cfg.d_in_base(), &mut store, "p", &mut init_rng(seed, 0)).unwrap();
        let x = Array2::from_shape_fn((l, cfg.d_in_base()), |(i, j)| ((i * 31 + j * 7 + seed as usize) % 13) as f64 / 13.0);
        let mut t = Tape::new(&store);
        let xv = t.leaf(x);
        let h = net.embed(&mut t, xv);
        prop_assert_eq!(t.value(h).dim(), (l, cfg.d_embed));
        let c = net.cnn_branch(&mut t, h, neuralcast::Padding::Same);
        prop_assert_eq!(t.value(c).dim(), (l, cfg.d_embed));
        let y = net.forward(&mut t, xv, None);
        prop_assert_eq!(t.value(y).dim(), (t_len, 1));
    }
}
