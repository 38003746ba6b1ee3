use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_bigint::BigInt;

use psatz::driver::{run, EmitTarget, Input, Mode, RunConfig};
use psatz::sdp::Backend;

/// Search for Positivstellensatz certificates of nonlinear real
/// conjectures and emit ACL2 proof scripts for them.
#[derive(Parser)]
#[command(name = "psatz", version)]
struct Cli {
    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for a certificate and emit the proof.
    Prove {
        /// Conjecture file, or `-` for stdin.
        file: PathBuf,
        #[command(flatten)]
        opts: ProveOpts,
    },
    /// Re-verify a certificate against a conjecture.
    Check {
        file: PathBuf,
        #[arg(long)]
        cert: PathBuf,
    },
    /// Print the negated, normalized system.
    Parse { file: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Emit {
    Proof,
    Certificate,
    Both,
    None,
}

#[derive(Args)]
struct ProveOpts {
    /// Largest total degree tried.
    #[arg(long)]
    max_degree: Option<u32>,
    #[arg(long, default_value_t = 2)]
    max_cone_subset: usize,
    #[arg(long, default_value_t = 2)]
    max_monoid_power: u32,
    /// Largest Gram basis allowed.
    #[arg(long, default_value_t = psatz::certshape::DEFAULT_BASIS_CAP)]
    basis_cap: usize,
    #[arg(long, default_value_t = psatz::sdp::DEFAULT_TOL)]
    sdp_tol: f64,
    /// Largest rounding denominator.
    #[arg(long)]
    denominator_max: Option<BigInt>,
    #[arg(long, value_enum, default_value = "both")]
    emit: Emit,
    /// Directory for the .lisp and .cert.json outputs.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Wall-clock limit in seconds.
    #[arg(long, default_value_t = 60.0)]
    time_limit: f64,
    /// `builtin` or `external:<path>` to a csdp-compatible solver.
    #[arg(long, env = "PSATZ_SDP_BACKEND", default_value = "builtin")]
    sdp_backend: Backend,
    /// Try shapes of one degree concurrently.
    #[arg(long)]
    parallel: bool,
}

fn input(file: PathBuf) -> Input {
    if file.as_os_str() == "-" {
        Input::Stdin
    } else {
        Input::File(file)
    }
}

fn config(command: Command) -> anyhow::Result<RunConfig> {
    Ok(match command {
        Command::Prove { file, opts } => {
            anyhow::ensure!(
                opts.time_limit.is_finite() && opts.time_limit > 0.0,
                "--time-limit must be a positive number of seconds"
            );
            let mut cfg = RunConfig::new(input(file), Mode::Prove);
            cfg.max_degree = opts.max_degree;
            cfg.max_cone_subset = opts.max_cone_subset;
            cfg.max_monoid_power = opts.max_monoid_power;
            cfg.basis_cap = opts.basis_cap;
            cfg.sdp_tol = opts.sdp_tol;
            cfg.denominator_max = opts.denominator_max;
            cfg.emit = match opts.emit {
                Emit::Proof => EmitTarget::Proof,
                Emit::Certificate => EmitTarget::Certificate,
                Emit::Both => EmitTarget::Both,
                Emit::None => EmitTarget::None,
            };
            cfg.out_dir = opts.out_dir;
            cfg.time_limit = Duration::from_secs_f64(opts.time_limit);
            cfg.backend = opts.sdp_backend;
            cfg.parallel = opts.parallel;
            cfg
        }
        Command::Check { file, cert } => RunConfig::new(input(file), Mode::Check { certificate: cert }),
        Command::Parse { file } => RunConfig::new(input(file), Mode::Parse),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = config(cli.command).and_then(|cfg| Ok(run(&cfg)?));
    match result {
        Ok(report) => {
            // a closed pipe is not worth a panic
            let _ = writeln!(std::io::stdout(), "{report}");
            ExitCode::from(report.outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
