use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hydrolim_cli::commands::{cmd_analyze, cmd_generate, cmd_report, cmd_simulate, cmd_verify, Globals};
use hydrolim_cli::sweep::run_sweep;
use hydrolim_cli::{CliError, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "hydrolim", version, about = "Rescaled N-body runs, coarse-grained fields and weak-form checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path for this subcommand, replacing the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    h: Option<f64>,
    #[arg(long, global = true)]
    stride: Option<usize>,
    /// Write and run configurations whose certificate fails.
    #[arg(long, global = true)]
    allow_uncertified: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build an initial configuration and its scaling certificate.
    Generate,
    /// Integrate the generated configuration.
    Simulate,
    /// Coarse-grain the trajectory into fields.
    Analyze,
    /// Weak-form residuals for the configured test functions.
    Verify,
    /// Run the whole pipeline for every N in [sweep].
    Sweep,
    /// Two-column plot data.
    Report,
}

fn threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("HYDROLIM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Validation(format!("HYDROLIM_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn run(cli: Cli) -> Result<String, CliError> {
    threads()?;
    let path = cli
        .config
        .ok_or_else(|| CliError::Validation("--config <path> is required".into()))?;
    let mut cfg = RunConfig::load(&path)?;
    cfg.apply(&Overrides {
        n: cli.n,
        seed: cli.seed,
        h: cli.h,
        stride: cli.stride,
    })?;
    let g = Globals {
        out: cli.out,
        allow_uncertified: cli.allow_uncertified,
    };
    Ok(match cli.command {
        Command::Generate => format!("wrote {}", cmd_generate(&cfg, &g)?.display()),
        Command::Simulate => cmd_simulate(&cfg, &g)?.log_line(&g.out.clone().unwrap_or(cfg.output.trajectory)),
        Command::Analyze => format!("wrote {}", cmd_analyze(&cfg, &g)?.display()),
        Command::Verify => {
            cmd_verify(&cfg, &g)?;
            format!("wrote {}", g.out.unwrap_or(cfg.output.residuals).display())
        }
        Command::Sweep => {
            let o = run_sweep(&cfg, g.allow_uncertified, g.out.as_deref())?;
            let failed = o.runs.iter().filter(|(_, r)| r.is_err()).count();
            let slope = o.slope.map_or_else(|| "none".into(), |s| format!("{s:.4}"));
            format!("sweep: {} runs, {failed} failed, interaction slope {slope}", o.runs.len())
        }
        Command::Report => format!("wrote {}", cmd_report(&cfg, &g)?.display()),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
