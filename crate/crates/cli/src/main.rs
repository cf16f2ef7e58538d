use std::path::PathBuf;
use std::process::ExitCode;

use ckn_cli::commands::{self, Format};
use ckn_cli::config::RunConfig;
use ckn_cli::verify::SuiteOptions;
use ckn_cli::CliError;
use ckn_core::criteria::MHook;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ckn", version, about = "Partial-regularity diagnostics for periodic Navier-Stokes runs")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "CKN_THREADS")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "CKN_OUT_DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured initial data and its reference, writing snapshots.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate every criterion on a run directory.
    Analyze {
        /// Directory written by `run`.
        #[arg(long)]
        run: PathBuf,
        /// Overrides constants and sampling; defaults to the run's config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the acceptance suite.
    Verify {
        /// Comma-separated criterion ids; all when omitted.
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u8>,
        /// Flip the sign of the pressure exponent in M (the suite must then fail).
        #[arg(long, hide = true)]
        inject_m_fault: bool,
    },
    /// Export CSV plot data from a regularity map.
    Plotdata {
        #[arg(long)]
        map: PathBuf,
    },
    /// Sweep thresholds against a smooth run.
    Calibrate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn out_dir(cli: &Cli, fallback: Option<&PathBuf>) -> Result<PathBuf, CliError> {
    cli.out
        .clone()
        .or_else(|| fallback.cloned())
        .ok_or_else(|| CliError::Config("--out (or CKN_OUT_DIR) is required".into()))
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    }
    match &cli.command {
        Command::Run { config } => {
            let cfg = RunConfig::load(config)?;
            let out = out_dir(cli, None)?;
            let manifest = commands::cmd_run(&cfg, &out)?;
            println!(
                "wrote {} snapshots to {} (config {})",
                manifest.trajectory.files.len(),
                out.display(),
                manifest.config_hash
            );
        }
        Command::Analyze { run, config } => {
            let cfg = config.as_deref().map(RunConfig::load).transpose()?;
            let out = out_dir(cli, Some(run))?;
            let map = commands::cmd_analyze(run, cfg.as_ref(), &out, cli.format)?;
            println!("{}", map.summary_line());
        }
        Command::Verify {
            criteria,
            inject_m_fault,
        } => {
            let opts = SuiteOptions {
                only: criteria.clone(),
                m_hook: if *inject_m_fault {
                    MHook::FlippedPressureExponent
                } else {
                    MHook::Standard
                },
                threads: cli.threads,
            };
            let report = commands::cmd_verify(&opts, cli.out.as_deref(), cli.format)?;
            let failed = report.criteria.iter().filter(|c| !c.passed).count();
            println!("{} criteria, {} failed", report.criteria.len(), failed);
            if failed > 0 {
                return Err(CliError::Failed(format!("{failed} criteria failed")));
            }
        }
        Command::Plotdata { map } => {
            let fallback = map.parent().map(|p| p.to_path_buf());
            let out = out_dir(cli, fallback.as_ref())?;
            for path in commands::cmd_plotdata(map, &out)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Calibrate { run, config } => {
            let cfg = config.as_deref().map(RunConfig::load).transpose()?;
            let out = out_dir(cli, Some(run))?;
            let cal = commands::cmd_calibrate(run, cfg.as_ref(), &out)?;
            println!("{}", serde_json::to_string(&cal).expect("calibration serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
