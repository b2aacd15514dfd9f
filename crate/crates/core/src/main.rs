//! `ivtlab` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ivtlab::expcli::{
    cmd_eval, cmd_landscape, cmd_lmc, cmd_quadcheck, cmd_report, cmd_run, CliResult, EvalOptions,
    LandscapeOptions, LmcOptions, QuadcheckOptions, ReportOptions, RunOptions, OUTPUT_ROOT_ENV,
};

#[derive(Parser)]
#[command(
    name = "ivtlab",
    version,
    about = "Class-incremental learning experiments with increment vector transformation"
)]
struct Cli {
    /// Default parent directory for outputs.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV, default_value = "runs")]
    output_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a config over all its seeds and write a result bundle.
    Run {
        config: PathBuf,
        /// Replace the configured seeds with this one.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite an existing output directory.
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a checkpoint on every task it covers.
    Eval {
        config: PathBuf,
        checkpoint: PathBuf,
        /// Write the checkpoint as JSON text to this path.
        #[arg(long)]
        export: Option<PathBuf>,
        /// Write the CSV here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scan accuracy and loss along the line between two checkpoints.
    Lmc {
        config: PathBuf,
        anchor: PathBuf,
        target: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a plane through three checkpoints.
    Landscape {
        config: PathBuf,
        origin: PathBuf,
        dir_a: PathBuf,
        dir_b: PathBuf,
        #[arg(long, default_value_t = 1.5)]
        extent: f64,
        #[arg(long, default_value_t = 21)]
        steps: usize,
        /// Project an extra checkpoint onto the plane, as NAME=PATH.
        #[arg(long, value_parser = parse_named)]
        project: Vec<(String, PathBuf)>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Run the quadratic-task verification suites.
    Quadcheck {
        /// TOML suite file; defaults apply otherwise.
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Inject a negative eigenvalue into every generated curvature.
        #[arg(long)]
        corrupt: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Compare finished bundles in one table.
    Report {
        #[arg(required = true)]
        bundles: Vec<PathBuf>,
        /// Add an improvement row, as BASELINE=TREATED (labels or positions).
        #[arg(long, value_parser = parse_pair)]
        pair: Vec<(String, String)>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_named(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or("expected NAME=PATH")?;
    Ok((name.to_string(), PathBuf::from(path)))
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    let (a, b) = s.split_once('=').ok_or("expected BASELINE=TREATED")?;
    Ok((a.to_string(), b.to_string()))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let root = cli.output_root;
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            force,
        } => {
            let s = cmd_run(&RunOptions {
                config,
                force,
                seed,
                out,
                output_root: root,
            })?;
            print!("{}", s.table);
            println!("bundle written to {}", s.out_dir.display());
        }
        Command::Eval {
            config,
            checkpoint,
            export,
            out,
        } => {
            print!(
                "{}",
                cmd_eval(&EvalOptions {
                    config,
                    checkpoint,
                    export,
                    out,
                })?
            );
        }
        Command::Lmc {
            config,
            anchor,
            target,
            out,
            force,
        } => {
            let (dir, scan) = cmd_lmc(&LmcOptions {
                config,
                anchor,
                target,
                out,
                output_root: root,
                force,
            })?;
            println!(
                "{} grid points, lambda_hat {:.6}, written to {}",
                scan.points.len(),
                scan.lambda_hat,
                dir.display()
            );
        }
        Command::Landscape {
            config,
            origin,
            dir_a,
            dir_b,
            extent,
            steps,
            project,
            out,
            force,
        } => {
            let (dir, grid) = cmd_landscape(&LandscapeOptions {
                config,
                origin,
                dir_a,
                dir_b,
                extent,
                steps,
                project,
                out,
                output_root: root,
                force,
            })?;
            println!(
                "{} grid points written to {}",
                grid.points.len(),
                dir.display()
            );
        }
        Command::Quadcheck {
            suite,
            corrupt,
            seed,
            out,
            force,
        } => {
            let (dir, report) = cmd_quadcheck(&QuadcheckOptions {
                suite,
                corrupt,
                seed,
                out,
                output_root: root,
                force,
            })?;
            for a in &report.assertions {
                println!(
                    "{} {}: {}",
                    if a.passed { "ok  " } else { "FAIL" },
                    a.name,
                    a.detail
                );
            }
            println!("report written to {}", dir.display());
        }
        Command::Report { bundles, pair, out } => {
            print!(
                "{}",
                cmd_report(&ReportOptions {
                    bundles,
                    pairs: pair,
                    out
                })?
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
