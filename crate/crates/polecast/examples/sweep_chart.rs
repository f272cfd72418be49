//! A reduced RMSE-versus-n sweep written as CSV and SVG.
//!
//! cargo run -p polecast --example sweep_chart -- [n-list] [out.csv]

use polecast::sweep::{self, SweepConfig};

fn main() -> polecast::Result<()> {
    let mut args = std::env::args().skip(1);
    let ns = sweep::parse_n_list(&args.next().unwrap_or_else(|| "2,5,10".into()))?;
    let out = args.next().map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("rmse_vs_n.csv"));

    let cfg = SweepConfig { min_steps: 150, ..SweepConfig::default() };
    let result = sweep::run(&ns, &cfg, 0)?;
    result.write(&out)?;
    print!("{}", result.to_csv());
    println!("chart: {}", out.with_extension("svg").display());
    Ok(())
}
