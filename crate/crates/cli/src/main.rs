//! `jaclab`: config-driven runs of the solver, construction, Jacobian and
//! reconstruction pipelines.
//!
//! Exit codes: 0 success, 2 config error, 3 numerical failure, 1 anything
//! else (I/O).

mod commands;
mod config;
mod expr;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Failure, Run};
use config::ExperimentConfig;

/// Environment variable naming the default output directory.
const OUT_ENV: &str = "JACLAB_OUT_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "jaclab",
    version,
    about = "Non-vanishing Jacobian families for piecewise-regular elliptic equations"
)]
struct Cli {
    /// Seed for randomized commands (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: $JACLAB_OUT_DIR/<prefix>-<command>, or
    /// ./out/... when unset).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Experiment config (JSON); `bundled-two-phase.json` names the bundled
    /// two-phase config when no such file exists.
    #[arg(long)]
    config: PathBuf,
    /// Mesh size, e.g. `0.03125` or `1/32` (overrides `solver.h`).
    #[arg(long, value_parser = parse_h)]
    h: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sphere-frame formula checks.
    #[command(subcommand)]
    Frames(FramesCommand),
    /// One Dirichlet solve with a trace expression.
    Solve {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dirichlet trace in `x`, `y` (also `r`, `theta`).
        #[arg(long, default_value = "x", allow_hyphen_values = true)]
        bc: String,
    },
    /// Certified admissible family construction.
    Construct {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        dict_size: Option<usize>,
    },
    /// Generalized Jacobian report and reduction for the config's trace family.
    #[command(subcommand)]
    Jac(JacCommand),
    /// Same as `jac reduce`.
    Reduce {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Conductivity reconstruction from a forward-solved family.
    Recon {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// First Dirichlet eigenvalue of an annulus and Rayleigh-quotient checks.
    Poincare {
        #[arg(long, default_value_t = 0.5)]
        inner: f64,
        #[arg(long, default_value_t = 0.75)]
        outer: f64,
        #[arg(long, default_value_t = 16)]
        samples: usize,
    },
}

#[derive(Subcommand, Debug)]
enum FramesCommand {
    Check {
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
}

#[derive(Subcommand, Debug)]
enum JacCommand {
    Report {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    Reduce {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn parse_h(s: &str) -> Result<f64, String> {
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| format!("bad numerator in {s:?}"))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad denominator in {s:?}"))?;
            a / b
        }
        None => s.parse().map_err(|_| format!("not a number: {s:?}"))?,
    };
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("mesh size must lie in (0, 1), got {v}"))
    }
}

fn out_dir(explicit: Option<&Path>, prefix: Option<&str>, command: &str) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    let base = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("out"), PathBuf::from);
    match prefix {
        Some(p) => base.join(format!("{p}-{command}")),
        None => base.join(command),
    }
}

fn load(args: &ConfigArgs) -> Result<(ExperimentConfig, f64), Failure> {
    let cfg = config::load(&args.config).map_err(Failure::Config)?;
    let h = args.h.unwrap_or(cfg.solver.h);
    Ok((cfg, h))
}

fn dispatch(cli: &Cli) -> Result<(Run, PathBuf), Failure> {
    let seed = cli.seed;
    let out = cli.out.as_deref();
    let with_config = |args: &ConfigArgs, name: &str, f: &dyn Fn(&ExperimentConfig, f64) -> Result<Run, Failure>| {
        let (cfg, h) = load(args)?;
        let run = f(&cfg, h)?;
        Ok((run, out_dir(out, cfg.output.prefix.as_deref(), name)))
    };
    match &cli.command {
        Command::Frames(FramesCommand::Check { dim, samples }) => {
            let run = commands::frames_check(*dim, *samples, seed)?;
            Ok((run, out_dir(out, None, &format!("frames-d{dim}"))))
        }
        Command::Solve { cfg, bc } => with_config(cfg, "solve", &|c, h| commands::solve(c, h, bc)),
        Command::Construct { cfg, sigma, dict_size } => with_config(cfg, "construct", &|c, h| {
            commands::construct(c, h, *sigma, *dict_size, seed.or(c.seed))
        }),
        Command::Jac(JacCommand::Report { cfg }) => with_config(cfg, "jac-report", &commands::jac_report),
        Command::Jac(JacCommand::Reduce { cfg }) | Command::Reduce { cfg } => {
            with_config(cfg, "jac-reduce", &|c, h| commands::jac_reduce(c, h, seed.or(c.seed)))
        }
        Command::Recon { cfg } => with_config(cfg, "recon", &commands::recon),
        Command::Poincare { inner, outer, samples } => {
            let run = commands::poincare(*inner, *outer, *samples, seed)?;
            Ok((run, out_dir(out, None, "poincare")))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok((run, dir)) => match run.outputs.commit(&dir) {
            Ok(dir) => {
                println!("{}", dir.join(output::MANIFEST).display());
                match run.failed {
                    None => ExitCode::SUCCESS,
                    Some(msg) => {
                        eprintln!("error: numerical failure: {msg}");
                        ExitCode::from(3)
                    }
                }
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
        Err(Failure::Config(lines)) => {
            for l in lines {
                eprintln!("config error: {l}");
            }
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: numerical failure: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn mesh_size_accepts_fractions() {
        assert_eq!(parse_h("1/64").unwrap(), 1.0 / 64.0);
        assert_eq!(parse_h("0.25").unwrap(), 0.25);
        assert!(parse_h("2").is_err());
        assert!(parse_h("1/x").is_err());
    }

    #[test]
    fn output_directory_defaults() {
        let p = out_dir(Some(Path::new("/tmp/x")), Some("a"), "recon");
        assert_eq!(p, PathBuf::from("/tmp/x"));
        let q = out_dir(None, Some("two-phase"), "recon");
        assert!(q.ends_with("two-phase-recon"));
    }
}
