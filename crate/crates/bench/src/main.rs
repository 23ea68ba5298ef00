use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use symphmc_bench::*;

#[derive(Parser)]
#[command(
    name = "symphmc",
    version,
    about = "Processed splitting integrators for HMC"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Integrator name or comma-separated list.
    #[arg(long, global = true)]
    integrator: Option<String>,
    /// Dimension of the Gaussian model.
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Comma-separated step sizes.
    #[arg(long, global = true)]
    h: Option<String>,
    /// Geometric step-size grid `lo:hi:n`.
    #[arg(long, global = true)]
    h_grid: Option<String>,
    /// Leg length N h [default: 5].
    #[arg(long, global = true)]
    leg_time: Option<f64>,
    /// Chain length per step size.
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with the same fields; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// 5,000 samples regardless of dimension.
    #[arg(long, global = true)]
    full: bool,
    /// Integrate every leg step by step even on linear targets.
    #[arg(long, global = true)]
    direct: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Recompute the parameter table and check it.
    Table2,
    /// Efficiency curves on the Gaussian model, as CSV.
    Sweep,
    /// Minimize the rho norm over (b, c, d).
    Tune {
        #[arg(long, default_value_t = 3.0)]
        hbar: f64,
        /// Starting point `b,c,d`.
        #[arg(long, default_value = "0.35,0,0", allow_hyphen_values = true)]
        init: String,
    },
    /// Kernel stability lengths.
    Stability,
    /// (h, rho_h) CSV up to --h (default: the stability length).
    RhoScan {
        #[arg(long, default_value_t = 1000)]
        points: usize,
    },
    /// Observed convergence orders of the Rowlands scheme.
    RowlandsOrder,
}

impl Common {
    fn experiment(&self) -> CliResult<ExperimentConfig> {
        let file = match &self.config {
            Some(p) => ExperimentConfig::from_json_file(p)?,
            None => ExperimentConfig::default(),
        };
        let flags = ExperimentConfig {
            integrator: self.integrator.clone().map(NameList::One),
            dim: self.dim,
            h: self.h.as_deref().map(parse_f64_list).transpose()?,
            h_grid: self.h_grid.clone(),
            leg_time: self.leg_time,
            samples: self.samples,
            seed: self.seed,
            out: self.out.clone(),
            full: self.full.then_some(true),
            direct: self.direct.then_some(true),
        };
        Ok(file.overridden_by(flags))
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("SYMPHMC_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!(
            "SYMPHMC_THREADS must be a positive integer, got '{v}'"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli) -> CliResult<bool> {
    configure_threads()?;
    let cfg = cli.common.experiment()?;
    let stdout = &mut io::stdout().lock();
    match cli.command {
        Command::Table2 => Ok(cmd_table2(stdout)?.pass()),
        Command::Sweep => {
            let mut out = open_output(cfg.out.as_deref())?;
            cmd_sweep(&cfg, &mut out, &mut io::stderr())?;
            out.flush()?;
            Ok(true)
        }
        Command::Tune { hbar, init } => {
            cmd_tune(hbar, parse_init(&init)?, stdout)?;
            Ok(true)
        }
        Command::Stability => {
            cmd_stability(
                &cfg.integrators(&symphmc::catalog::INTEGRATOR_NAMES),
                stdout,
            )?;
            Ok(true)
        }
        Command::RhoScan { points } => {
            let names = cfg.integrators(&["proc-3.0"]);
            let [name] = names.as_slice() else {
                return Err(CliError::Usage(
                    "rho-scan takes exactly one integrator".into(),
                ));
            };
            let hmax = match &cfg.h {
                Some(h) if h.len() == 1 => Some(h[0]),
                Some(_) => {
                    return Err(CliError::Usage("rho-scan takes a single --h (hmax)".into()))
                }
                None => None,
            };
            let mut out = open_output(cfg.out.as_deref())?;
            cmd_rho_scan(name, hmax, points, &mut out)?;
            out.flush()?;
            Ok(true)
        }
        Command::RowlandsOrder => Ok(cmd_rowlands_order(stdout)?.pass()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
