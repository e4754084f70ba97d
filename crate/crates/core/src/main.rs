use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use stefan_homog::config::ProblemSpec;
use stefan_homog::harness::{run, write_failure, Command, EpsChoice};

#[derive(Parser)]
#[command(name = "stefan-homog", version, about = "Numerical homogenization of generalized Stefan problems")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args)]
struct Common {
    /// Problem file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Intervals per axis, overriding the config's grid rule.
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Subcommand)]
enum Sub {
    /// Check the structural hypotheses on the problem data.
    Validate(Common),
    /// Mean values and ergodicity defects of every oscillatory field.
    Mean(Common),
    /// Correctors and the effective tensor.
    Cell(Common),
    /// The homogenized dissipation potential at sample gradients.
    Psi0(Common),
    /// One evolution run.
    Solve {
        #[command(flatten)]
        common: Common,
        /// A value of ε, or `homogenized`.
        #[arg(long)]
        eps: Option<String>,
    },
    /// The ε-convergence table against the homogenized solution.
    Converge {
        #[command(flatten)]
        common: Common,
        /// ε values, comma separated; defaults to the config's list.
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
    },
    /// The H⁻¹ contraction test for the homogenized linear problem.
    Unique(Common),
}

fn parse_eps(s: &str) -> anyhow::Result<EpsChoice> {
    if s == "homogenized" {
        return Ok(EpsChoice::Homogenized);
    }
    let v: f64 = s.parse().with_context(|| format!("`{s}` is neither a number nor `homogenized`"))?;
    if !(v > 0.0 && v.is_finite()) {
        bail!("ε must be positive, got {v}");
    }
    Ok(EpsChoice::Value(v))
}

fn execute(command: &Command, common: &Common) -> anyhow::Result<bool> {
    let spec = ProblemSpec::load(&common.config).with_context(|| format!("reading {}", common.config.display()))?;
    let result = run(command, &spec, &common.out, common.grid);
    match result {
        Ok(report) => {
            for (name, ok) in &report.checks {
                println!("{:<40} {}", name, if *ok { "pass" } else { "FAIL" });
            }
            println!("report: {}", common.out.join("report.json").display());
            Ok(report.passed)
        }
        Err(e) => {
            write_failure(&common.out, command.name(), Some(&spec.hash()), &e.to_string())?;
            Err(e.into())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Sub::Validate(c) => (Ok(Command::Validate), c),
        Sub::Mean(c) => (Ok(Command::Mean), c),
        Sub::Cell(c) => (Ok(Command::Cell), c),
        Sub::Psi0(c) => (Ok(Command::Psi0), c),
        Sub::Solve { common, eps } => (eps.as_deref().map(parse_eps).transpose().map(|eps| Command::Solve { eps }), common),
        Sub::Converge { common, eps } => (Ok(Command::Converge { eps }), common),
        Sub::Unique(c) => (Ok(Command::Unique), c),
    };
    let outcome = command.and_then(|cmd| execute(&cmd, &common).inspect_err(|e| record(&common.out, cmd.name(), e)));
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Failures before the problem file is loaded still leave a record.
fn record(out: &Path, command: &str, e: &anyhow::Error) {
    if !out.join("failure.json").exists() {
        let _ = write_failure(out, command, None, &format!("{e:#}"));
    }
}
