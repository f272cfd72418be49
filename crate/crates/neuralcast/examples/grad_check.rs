//! Analytic gradients of the tiny configuration against central finite
//! differences.

use neuralcast::{grad_check, GradScope, ModelConfig};

fn main() -> neuralcast::Result<()> {
    let cfg = ModelConfig::tiny();
    for (scope, eps, tol) in [(GradScope::HeadOnly, 1e-5, 1e-8), (GradScope::Full, 1e-6, 1e-4)] {
        let report = grad_check(&cfg, eps, tol, 50, scope, 0)?;
        println!("{scope:?}: max relative error {:.3e} over {} coordinates", report.max_rel_err, report.coords.len());
        for c in report.coords.iter().take(5) {
            println!("  {}[{},{}]  analytic {:+.6e}  numeric {:+.6e}", c.param, c.index[0], c.index[1], c.analytic, c.numeric);
        }
    }
    Ok(())
}
