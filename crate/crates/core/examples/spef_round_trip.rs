//! Generate a random RC ladder, write it as SPEF, and read it back.
//!
//! cargo run -p polecast-core --example spef_round_trip -- [order] [seed]

use polecast_core::{emit_spef, generate_spef, parse_spef, to_network, ValueRanges};

fn main() -> polecast_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let order: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(6);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(1);

    let net = generate_spef(order, seed, &ValueRanges::default())?;
    let text = emit_spef(&net);
    print!("{text}");

    let parsed = parse_spef(&text)?;
    assert_eq!(parsed[0], net);
    let rc = to_network(&parsed[0], "I1:Y", "I2:A")?;
    println!("# {} nodes, {} resistors, total cap {} fF", rc.n_nodes(), rc.conductances.len(), net.total_cap);
    Ok(())
}
