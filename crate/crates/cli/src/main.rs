use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use estsel::config::{RunConfig, SimulateConfig, VerifyConfig};
use estsel::{pipeline, Error, ErrorKind};

#[derive(Parser)]
#[command(name = "estsel", version, about = "Estimand selection over the h(c,d) weight family")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate every estimand of the grid.
    Evaluate,
    /// Select estimands from an evaluated run, or evaluate first with --config.
    Select {
        /// Directory of an earlier `evaluate`.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Run simulation scenarios.
    Simulate {
        /// Full study scale instead of the desk-scale defaults.
        #[arg(long)]
        full_scale: bool,
    },
    /// Check the asymptotic-variance minimiser numerically.
    VerifyVariance,
    /// Covariate balance and propensity-score distribution.
    Balance,
}

fn config_path(cli: &Cli) -> Result<&Path, Error> {
    cli.config
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --config".into()))
}

fn out_dir(cli: &Cli, from_config: Option<&PathBuf>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| from_config.cloned())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Evaluate => {
            let cfg = RunConfig::load(config_path(cli)?)?;
            let seed = cfg.resolve_seed(cli.seed)?;
            let out = out_dir(cli, cfg.out.as_ref());
            let o = pipeline::evaluate(&cfg, seed, &out)?;
            println!("wrote {} grid rows to {}", o.output.grid.rows.len(), out.display());
        }
        Command::Select { run } => {
            let (run_dir, out) = match (run, &cli.config) {
                (Some(dir), _) => (dir.clone(), cli.out.clone().unwrap_or_else(|| dir.clone())),
                (None, Some(path)) => {
                    let cfg = RunConfig::load(path)?;
                    let seed = cfg.resolve_seed(cli.seed)?;
                    let out = out_dir(cli, cfg.out.as_ref());
                    pipeline::evaluate(&cfg, seed, &out)?;
                    (out.clone(), out)
                }
                (None, None) => return Err(Error::Config("select needs --run or --config".into())),
            };
            let o = pipeline::select(&run_dir, &out)?;
            print!("{}", o.report.selection.to_table());
        }
        Command::Simulate { full_scale } => {
            let mut cfg = SimulateConfig::load(config_path(cli)?)?;
            cfg.full_scale |= *full_scale;
            let out = out_dir(cli, cfg.out.as_ref());
            let o = pipeline::simulate(&cfg, cli.seed, &out)?;
            for r in &o.reports {
                println!("{}: {} replicates", pipeline::scenario_stem(r), r.completed);
                for e in &r.estimators {
                    println!("  {:<24} n={:<5} bias={:>9.5} mse={:.5}", e.label, e.count, e.bias, e.mse);
                }
            }
        }
        Command::VerifyVariance => {
            let cfg = VerifyConfig::load(config_path(cli)?)?;
            let out = out_dir(cli, cfg.out.as_ref());
            let o = pipeline::verify(&cfg, cli.seed, &out)?;
            let r = &o.report;
            println!(
                "minimiser {} (target {}), gap {:.3} SE, forms agree to {:.1e}: {}",
                r.candidates[r.argmin].label,
                r.candidates[r.target].label,
                r.gap_in_se,
                r.max_form_discrepancy,
                if r.passed { "PASS" } else { "FAIL" }
            );
        }
        Command::Balance => {
            let cfg = RunConfig::load(config_path(cli)?)?;
            let seed = cfg.resolve_seed(cli.seed)?;
            let out = out_dir(cli, cfg.out.as_ref());
            let o = pipeline::balance(&cfg, seed, &out)?;
            println!(
                "mean |SMD| {:.4} (unweighted {:.4}), max |SMD| {:.4} (unweighted {:.4})",
                o.report.mean_abs_weighted,
                o.report.mean_abs_unweighted,
                o.report.max_abs_weighted,
                o.report.max_abs_unweighted
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            })
        }
    }
}
