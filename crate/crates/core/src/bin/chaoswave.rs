use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use chaoswave::cli::{self, Command, EXIT_CONFIG};
use chaoswave::config::{seed_from_env, RunConfig};

#[derive(Parser)]
#[command(name = "chaoswave", version, about = "Chaos-expansion numerics for the stochastic wave equation")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (run.output_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed (run.seed); takes precedence over CHAOSWAVE_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker cap (run.threads); 0 keeps the default pool.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Chaos truncation N (run.order).
    #[arg(long, global = true)]
    order: Option<usize>,
    /// Sample count (run.samples).
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Override any key, e.g. `--set grid.nt=32` or `--set model.spatial_mode=white`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Print the effective config and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Deterministic identity and bound suite.
    Verify,
    /// Monte Carlo E[u_N²] against the discrete and continuum series.
    Moments,
    /// Empirical noise covariance against the exact cell covariance.
    NoiseCheck,
    /// Samples of u_N(t, x) with their chaos parts and noise dump.
    Simulate,
    /// KDE, atom scan, truncation masses and (at N = 1) a KS test.
    Density,
    /// RHS(δ) ladder and the vanishing-Malliavin-norm probability.
    DeltaScan,
    /// Γ_T, K_M, c₀, M_T, C_T, C_T′, C_T″ and C_T*.
    Constants,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Verify => Command::Verify,
            Cmd::Moments => Command::Moments,
            Cmd::NoiseCheck => Command::NoiseCheck,
            Cmd::Simulate => Command::Simulate,
            Cmd::Density => Command::Density,
            Cmd::DeltaScan => Command::DeltaScan,
            Cmd::Constants => Command::Constants,
        }
    }
}

fn overrides(args: &Args) -> chaoswave::Result<Vec<(String, String)>> {
    let mut ov = Vec::new();
    ov.extend(seed_from_env()?);
    let quoted = |p: &PathBuf| format!("{:?}", p.to_string_lossy());
    let flags = [
        ("run.output_dir", args.out.as_ref().map(quoted)),
        ("run.seed", args.seed.map(|v| v.to_string())),
        ("run.threads", args.threads.map(|v| v.to_string())),
        ("run.order", args.order.map(|v| v.to_string())),
        ("run.samples", args.samples.map(|v| v.to_string())),
    ];
    ov.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| chaoswave::Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        ov.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(ov)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = Command::from(args.command);
    let cfg = match overrides(&args).and_then(|ov| RunConfig::load(args.config.as_deref(), &ov)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("chaoswave: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    if args.print_config {
        let _ = write!(std::io::stdout(), "{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }
    if cfg.run.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.run.threads).build_global() {
            eprintln!("chaoswave: thread pool: {e}");
        }
    }
    match cli::run(command, &cfg) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{} [{}] {}", command.name(), if out.passed { "ok" } else { "FAILED" }, out.summary);
            for a in &out.artifacts {
                let _ = writeln!(stdout, "  wrote {}", a.display());
            }
            ExitCode::from(out.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("chaoswave {}: {e}", command.name());
            ExitCode::from(cli::error_exit_code(&e) as u8)
        }
    }
}
