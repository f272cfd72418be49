//! Attention weights of an untrained tiny network: encoder heads, the causal
//! decoder self-attention and the cross-attention into the encoder.

use ndarray::Array2;
use neuralcast::model::{init_rng, AttentionTrace, HybridNet};
use neuralcast::{ModelConfig, ParamStore, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn show(title: &str, a: &Array2<f64>) {
    println!("{title}");
    for row in a.rows() {
        let cells: Vec<String> = row.iter().map(|p| format!("{p:.3}")).collect();
        println!("  {}  (sum {:.6})", cells.join(" "), row.sum());
    }
}

fn main() -> neuralcast::Result<()> {
    let cfg = ModelConfig { seq_len: 6, target_len: 5, ..ModelConfig::tiny() };
    let mut store = ParamStore::<f64>::new();
    let net = HybridNet::new(&cfg, cfg.d_in_base(), &mut store, "demo", &mut init_rng(7, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Array2::from_shape_simple_fn((cfg.seq_len, cfg.d_in_base()), || rng.random_range(-1.0..1.0));

    let mut tape = Tape::new(&store);
    let input = tape.leaf(x);
    let mut trace = AttentionTrace::default();
    net.forward_traced(&mut tape, input, None, &mut trace);

    show("encoder layer 0, head 0", tape.value(trace.encoder[0]));
    show("decoder self-attention (causal)", tape.value(trace.decoder_self[0]));
    show("decoder cross-attention", tape.value(trace.decoder_cross[0]));
    Ok(())
}
