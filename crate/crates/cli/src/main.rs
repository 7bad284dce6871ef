//! `shrinkerlab`: run the experiment suites and emit their reports.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shrinkerlab::cli_reports::{run, Command, ExperimentConfig, Status};
use shrinkerlab::Error;

#[derive(Parser, Debug)]
#[command(name = "shrinkerlab", version, about = "Numerical checks on gradient Ricci shrinkers")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Curvature and commutator identities, analytic and by step halving.
    Identities(Opts),
    /// Galerkin spectrum of the drift Laplacian, P or L.
    Spectrum(Opts),
    /// Growth exponents of Killing fields and P-eigenfields.
    Growth(Opts),
    /// First and second variations of the soliton tensor.
    Variation(Opts),
    /// Iterative gauge fixing and balancing of a perturbation.
    GaugeFix(Opts),
    /// Every suite at its defaults.
    All(Opts),
    /// The command named in a configuration file.
    Run(Opts),
}

#[derive(Args, Debug, Default)]
struct Opts {
    /// `key = value` configuration file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// gaussian:n, cylinder:l,n or torus:n
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    degree: Option<String>,
    /// drift, P or L
    #[arg(long)]
    op: Option<String>,
    /// Number of eigenpairs.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    points: Option<String>,
    #[arg(long)]
    step: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Write the JSON report here.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    emit_csv: Option<PathBuf>,
    /// Gauge input field file.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Save the generated gauge input here.
    #[arg(long)]
    write_input: Option<PathBuf>,
    /// Cutoff radius.
    #[arg(long = "R")]
    radius: Option<String>,
    #[arg(long)]
    iters: Option<String>,
    /// Slope fitting window `lo,hi`.
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    /// Variation direction, e.g. `jacobi:x1^2-2`; repeatable.
    #[arg(long)]
    direction: Vec<String>,
}

fn command_of(sub: &Sub) -> (Option<Command>, &Opts) {
    match sub {
        Sub::Identities(o) => (Some(Command::Identities), o),
        Sub::Spectrum(o) => (Some(Command::Spectrum), o),
        Sub::Growth(o) => (Some(Command::Growth), o),
        Sub::Variation(o) => (Some(Command::Variation), o),
        Sub::GaugeFix(o) => (Some(Command::GaugeFix), o),
        Sub::All(o) => (Some(Command::All), o),
        Sub::Run(o) => (None, o),
    }
}

fn build_config(sub: &Sub) -> Result<ExperimentConfig, Error> {
    let (command, o) = command_of(sub);
    let mut cfg = ExperimentConfig::default();
    match &o.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        None if command.is_none() => return Err(Error::Config("`run` needs --config".into())),
        None => {}
    }
    if let Some(c) = command {
        cfg.command = c;
    }
    let text = [
        ("model", o.model.clone()),
        ("degree", o.degree.clone()),
        ("op", o.op.clone()),
        ("k", o.k.clone()),
        ("points", o.points.clone()),
        ("step", o.step.clone()),
        ("seed", o.seed.clone()),
        ("R", o.radius.clone()),
        ("iters", o.iters.clone()),
        ("window", o.window.clone()),
        ("beta", o.beta.clone()),
    ];
    for (key, value) in text {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    let paths = [("json", &o.json), ("emit_csv", &o.emit_csv), ("input", &o.input), ("write_input", &o.write_input)];
    for (key, value) in paths {
        if let Some(p) = value {
            cfg.set(key, &p.to_string_lossy())?;
        }
    }
    if !o.direction.is_empty() {
        cfg.directions.clear();
        for d in &o.direction {
            cfg.set("direction", d)?;
        }
    }
    if let Some(p) = &cfg.input {
        if !p.exists() {
            return Err(Error::Config(format!("input file {} does not exist", p.display())));
        }
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build_config(&cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let report = match run(&cfg) {
        Ok(r) => r,
        Err(e @ (Error::Config(_) | Error::Parse(_))) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("internal error: {e}");
            return ExitCode::from(3);
        }
    };
    for r in &report.records {
        println!("{r}");
    }
    let (pass, fail, info) = report.counts();
    println!("{}: {pass} passed, {fail} failed, {info} informational ({:.1} s)", cfg.command, report.timing.total_seconds);
    if let Some(p) = &cfg.json {
        println!("report written to {}", p.display());
    }
    if report.records.iter().any(|r| r.status == Status::Fail) {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}
