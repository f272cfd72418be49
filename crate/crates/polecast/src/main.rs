use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use polecast::commands::{self, ExperimentConfig, SimulateArgs, Source};
use polecast::sweep::{self, SweepConfig};
use polecast::{CliError, Result};
use polecast_core::featurize::{DatasetConfig, Driver};
use polecast_core::{Stimulus, ValueRanges};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "polecast", version, about = "Pole-residue waveform learning experiments on RC interconnect")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random RC ladders as SPEF files plus a manifest.
    Gen {
        #[arg(long)]
        nets: usize,
        #[arg(long, default_value_t = 2)]
        order_min: usize,
        #[arg(long, default_value_t = 100)]
        order_max: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Value ranges as flat TOML (cap_min_ff, r_end_min, ...).
        #[arg(long)]
        ranges: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the pole-residue transfer function of a SPEF net.
    Decompose {
        #[arg(long)]
        spef: PathBuf,
        #[arg(long)]
        json_out: Option<PathBuf>,
        /// Report the frequency-sweep reconstruction error.
        #[arg(long)]
        check: bool,
    },
    /// Closed-form transient response of a net or transfer function.
    Simulate {
        #[arg(long, conflicts_with = "tf", required_unless_present = "tf")]
        spef: Option<PathBuf>,
        #[arg(long)]
        tf: Option<PathBuf>,
        /// `step` or `ramp:<rise seconds>`.
        #[arg(long, default_value = "step")]
        stim: Stimulus,
        #[arg(long, default_value_t = 128)]
        samples: usize,
        #[arg(long)]
        t_span: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Also run the trapezoidal oracle and report the deviation.
        #[arg(long)]
        compare: bool,
        #[arg(long, default_value_t = 8)]
        substeps: usize,
    },
    /// Build a JSON-Lines feature dataset from a directory of SPEF files.
    Dataset {
        #[arg(long)]
        spef_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        samples_per_net: usize,
        /// Comma-separated driver families: step, slow, fast.
        #[arg(long, default_value = "step,slow,fast")]
        stims: String,
        #[arg(long, default_value_t = 128)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the base and correction networks.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// JSON or TOML with optional `model` and `train` tables.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "POLECAST_THREADS")]
        threads: Option<usize>,
        #[arg(long)]
        verbose: bool,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Per-sample truth, base and prediction for plotting.
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
    /// Validation RMSE against the number of training nets.
    Sweep {
        #[arg(long, default_value = "2,10,40,80")]
        n_list: String,
        #[arg(long, default_value = "rmse_vs_n.csv")]
        out: PathBuf,
        /// JSON or TOML overriding the sweep defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "POLECAST_THREADS")]
        threads: Option<usize>,
        #[arg(long)]
        verbose: bool,
    },
}

fn json(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("serializable value")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { nets, order_min, order_max, seed, ranges, out } => {
            let ranges = match ranges {
                Some(p) => commands::load_config::<ValueRanges>(&p)?,
                None => ValueRanges::default(),
            };
            let manifest = commands::gen(nets, order_min, order_max, seed, &ranges, &out)?;
            println!("wrote {} nets to {}", manifest.nets.len(), out.display());
        }
        Command::Decompose { spef, json_out, check } => {
            let d = commands::decompose(&spef, check)?;
            match json_out {
                Some(p) => std::fs::write(&p, json(&d) + "\n").map_err(|e| CliError::io(&p, e))?,
                None => println!("{}", json(&d)),
            }
            if let Some(err) = d.check_error {
                eprintln!("max relative reconstruction error: {err:e}");
            }
        }
        Command::Simulate { spef, tf, stim, samples, t_span, out, csv, compare, substeps } => {
            let source = match (spef, tf) {
                (Some(p), _) => Source::Spef(p),
                (None, Some(p)) => Source::Tf(p),
                (None, None) => return Err(CliError::Usage("one of --spef or --tf is required".into())),
            };
            let sim = commands::simulate(&SimulateArgs { source, stimulus: stim, samples, t_span, compare, substeps })?;
            match out {
                Some(p) => std::fs::write(&p, sim.waveform.to_json() + "\n").map_err(|e| CliError::io(&p, e))?,
                None if csv.is_none() => println!("{}", sim.waveform.to_json()),
                None => {}
            }
            if let Some(p) = csv {
                std::fs::write(&p, sim.waveform.to_csv()).map_err(|e| CliError::io(&p, e))?;
            }
            if let Some(dev) = sim.deviation {
                eprintln!("max abs deviation analytic vs trapezoidal: {dev:e}");
            }
        }
        Command::Dataset { spef_dir, samples_per_net, stims, samples, seed, out } => {
            let drivers = stims.split(',').map(|s| Driver::parse(s.trim())).collect::<Result<Vec<_>, _>>()?;
            let config = DatasetConfig { n_samples: samples, ..DatasetConfig::default() };
            let summary = commands::dataset(&spef_dir, samples_per_net, &drivers, &config, seed, &out)?;
            println!("{}", json(&summary));
        }
        Command::Train { data, config, out, seed, threads, verbose } => {
            let mut cfg = match config {
                Some(p) => commands::load_config(&p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.train.seed = seed;
                cfg.model.seed = seed;
            }
            cfg.train.threads = threads.or(cfg.train.threads);
            cfg.train.verbose |= verbose;
            let records = commands::load_records(&data)?;
            let (_, report) = commands::train_model(&records, &cfg, &out)?;
            println!(
                "val_rmse {:.6}  base_only {:.6}  train {} / val {}  {:.1}s",
                report.val_rmse, report.base_only_val_rmse, report.n_train, report.n_val, report.wall_time_s
            );
        }
        Command::Eval { model, data, report, overlay } => {
            let r = commands::eval_model(&model, &data, &report, overlay.as_deref())?;
            println!("rmse {:.6}  base_only {:.6}  over {} records", r.rmse, r.base_rmse, r.n_records);
        }
        Command::Sweep { n_list, out, config, seed, threads, verbose } => {
            let ns = sweep::parse_n_list(&n_list)?;
            let mut cfg = match config {
                Some(p) => commands::load_config::<SweepConfig>(&p)?,
                None => SweepConfig::default(),
            };
            cfg.train.threads = threads.or(cfg.train.threads);
            cfg.train.verbose |= verbose;
            let result = sweep::run(&ns, &cfg, seed)?;
            result.write(&out)?;
            print!("{}", result.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
