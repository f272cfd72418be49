//! Partial fractions with a double pole: (2s + 3) / ((s + 1)^2 (s + 2)).

use polecast_core::circuit::{expand_repeated, Polynomial, RationalFunction, DEFAULT_CLUSTER_TOL};
use polecast_core::oracle::analytic_response;
use polecast_core::Stimulus;

fn main() -> polecast_core::Result<()> {
    let num = Polynomial::new(vec![3.0, 2.0]);
    let den = Polynomial::from_roots(&[-1.0, -1.0, -2.0], 1.0);
    let tf = expand_repeated(&RationalFunction::new(num, den), DEFAULT_CLUSTER_TOL)?;
    for term in &tf.terms {
        for (j, a) in term.residues.iter().enumerate() {
            println!("pole {:+.3}  A_{} = {:+.12}", term.pole, j + 1, a);
        }
    }

    let step = analytic_response(&tf, &Stimulus::step(1.0), 8.0, 9)?;
    println!("\n  t    y(t)        3/2 - 2e^-t - t e^-t + e^-2t/2");
    for (t, y) in step.times().iter().zip(&step.samples) {
        let exact = 1.5 - 2.0 * (-t).exp() - t * (-t).exp() + 0.5 * (-2.0 * t).exp();
        println!("{t:4.1}  {y:.10}  {exact:.10}");
    }
    Ok(())
}
