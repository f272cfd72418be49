//! Step and ramp responses from the closed-form oracle, compared with the
//! trapezoidal integrator, plus the per-term breakdown.

use polecast_core::oracle::{analytic_response, numerical_response, term_response};
use polecast_core::{extract_tf, parse_spef, to_network, Stimulus};

const REFERENCE: &str = include_str!("../../polecast/data/reference_net.spef");

fn main() -> polecast_core::Result<()> {
    let net = to_network(&parse_spef(REFERENCE)?[0], "I1:Y", "I2:A")?;
    let tf = extract_tf(&net)?;
    let tau = tf.max_time_constant();

    for stim in [Stimulus::step(1.0), Stimulus::ramp(tau, 1.0)] {
        let t_span = 7.0 * tau + stim.rise_time;
        let exact = analytic_response(&tf, &stim, t_span, 16)?;
        let numeric = numerical_response(&net, &stim, t_span, 16, 8)?;
        println!("{:?} rise {:.3e} s: max |analytic - trapezoid| = {:.2e}", stim.kind, stim.rise_time, exact.max_abs_diff(&numeric));
        for (t, v) in exact.times().iter().zip(&exact.samples).step_by(3) {
            println!("  t = {t:.3e}  v = {v:.6}");
        }
    }

    let t_span = 7.0 * tau;
    println!("per-term share of the step response at t = tau:");
    for term in &tf.terms {
        let w = term_response(term, &Stimulus::step(1.0), t_span, 8)?;
        println!("  pole {:.3e}: {:+.6}", term.pole, w.samples[1]);
    }
    Ok(())
}
