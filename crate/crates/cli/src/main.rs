use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pneutop::sensitivity::Fault;
use pneutop_cli::{cmd_check_gradients, cmd_extract_contour, cmd_optimize, parse_config, CliError};

#[derive(Parser)]
#[command(name = "pneutop", version, about = "Topology optimization of pressure-actuated soft members")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the robust optimization and write all artifacts.
    Optimize {
        config: PathBuf,
        /// Overrides `output.dir`.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Suppress progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Compare adjoint gradients with central differences on a small mesh.
    CheckGradients {
        config: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Projection steepness of the checked designs.
        #[arg(long, default_value_t = 2.0)]
        beta: f64,
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultArg>,
    },
    /// Trace the iso-contour of a design file as SVG and CSV polylines.
    ExtractContour {
        design: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        level: f64,
        /// Output path without extension.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    FlowCoefficient,
    Stiffness,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Optimize {
            config,
            output_dir,
            quiet,
        } => {
            let mut cfg = parse_config(&config)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir.display().to_string();
            }
            let out = cmd_optimize(&cfg, !quiet)?;
            let s = pneutop_cli::commands::summary(&out.model, &out.result);
            println!("delta = {:.6} mm", s.delta[1] * 1e3);
            println!("volume fractions (e/i/d) = {:.4} {:.4} {:.4}", s.volume[0], s.volume[1], s.volume[2]);
            println!(
                "Mnd % (e/i/d) = {:.3} {:.3} {:.3}",
                s.discreteness[0], s.discreteness[1], s.discreteness[2]
            );
            println!("artifacts in {}", out.dir.display());
            Ok(())
        }
        Command::CheckGradients {
            config,
            seed,
            beta,
            inject_fault,
        } => {
            let cfg = parse_config(&config)?;
            let fault = inject_fault.map(|f| match f {
                FaultArg::FlowCoefficient => Fault::FlowCoefficient,
                FaultArg::Stiffness => Fault::Stiffness,
            });
            let report = cmd_check_gradients(&cfg, seed, beta, fault)?;
            for (s, err) in &report.seeds {
                println!("seed {s}: max relative error {err:.3e}");
            }
            let verdict = if report.passed { "PASS" } else { "FAIL" };
            println!("{verdict}: max relative error {:.3e} (table: {})", report.max_error, report.table.display());
            if report.passed {
                Ok(())
            } else {
                Err(CliError::Numerical(format!(
                    "adjoint gradients disagree with finite differences ({:.3e})",
                    report.max_error
                )))
            }
        }
        Command::ExtractContour { design, level, output } => {
            let out = cmd_extract_contour(&design, level, output.as_deref())?;
            println!("{} closed loops -> {} , {}", out.loops, out.svg.display(), out.csv.display());
            Ok(())
        }
    }
}
