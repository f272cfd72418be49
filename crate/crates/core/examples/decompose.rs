//! Pole-residue decomposition of the five-segment reference net, checked
//! against direct solves of the nodal equations.

use num_complex::Complex64;
use polecast_core::circuit::{assemble_system, reconstruction_error};
use polecast_core::{eval_tf, extract_tf, parse_spef, to_network};

const REFERENCE: &str = include_str!("../../polecast/data/reference_net.spef");

fn main() -> polecast_core::Result<()> {
    let spef = &parse_spef(REFERENCE)?[0];
    let net = to_network(spef, "I1:Y", "I2:A")?;
    let tf = extract_tf(&net)?;

    println!("{:>14} {:>14} {:>10}", "pole (1/s)", "residue", "tau (ps)");
    for term in &tf.terms {
        println!("{:>14.6e} {:>14.6e} {:>10.3}", term.pole, term.residues[0], -1e12 / term.pole);
    }
    println!("DC gain {:.12}", tf.dc_gain);

    let sys = assemble_system(&net)?;
    let w = 1.0 / tf.max_time_constant();
    let s = Complex64::new(0.0, w);
    println!("H(j/tau): direct {:.9}, partial fractions {:.9}", sys.transfer_at(s)?, eval_tf(&tf, s)?);
    println!("reconstruction error over 50 frequencies: {:.3e}", reconstruction_error(&sys, &tf, 50)?);
    Ok(())
}
