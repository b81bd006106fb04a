use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seesim::config::{Experiment, ExperimentConfig};
use seesim::experiments::{run, write_output};

#[derive(Parser)]
#[command(name = "seesim", version, about = "Spectral Galerkin experiments and bound checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the constants of a model's bounds.
    Constants(Common),
    /// Simulate an ensemble and write norm statistics.
    Simulate(Common),
    /// Weighted sup of the solution against the a priori bound.
    Apriori(Common),
    /// Coupled initial-value pairs against the Lipschitz bound.
    Perturbation(Common),
    /// Second moments across a Galerkin sweep for rough initial data.
    Barrier(Common),
    /// Strong convergence order against the exact solution.
    Convergence(Common),
    /// Lower bounds for the norm-diffusion and norm-drift models.
    Counterexamples(Common),
    /// Both sides of the Itô isometry.
    Isometry(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    modes: Option<usize>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

impl Command {
    fn split(self) -> (Experiment, Common) {
        match self {
            Command::Constants(c) => (Experiment::Constants, c),
            Command::Simulate(c) => (Experiment::Simulate, c),
            Command::Apriori(c) => (Experiment::Apriori, c),
            Command::Perturbation(c) => (Experiment::Perturbation, c),
            Command::Barrier(c) => (Experiment::Barrier, c),
            Command::Convergence(c) => (Experiment::Convergence, c),
            Command::Counterexamples(c) => (Experiment::Counterexamples, c),
            Command::Isometry(c) => (Experiment::Isometry, c),
        }
    }
}

fn load_config(exp: Experiment, args: &Common) -> seesim::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(name) = cfg.experiment()? {
        if name != exp {
            return Err(seesim::Error::InvalidParameter(format!(
                "config is for {:?}, not {:?}",
                name.name(),
                exp.name()
            )));
        }
    }
    cfg.experiment = Some(exp.name().to_string());
    cfg.seed = args.seed.or(cfg.seed);
    cfg.paths = args.paths.or(cfg.paths);
    cfg.steps = args.steps.or(cfg.steps);
    cfg.modes = args.modes.or(cfg.modes);
    if let Some(out) = &args.out {
        cfg.out = Some(out.display().to_string());
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let (exp, args) = Cli::parse().command.split();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let cfg = match load_config(exp, &args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let out = run(exp, &cfg);
    let dir = PathBuf::from(cfg.out.clone().unwrap_or_else(|| "out".to_string()));
    if let Err(e) = write_output(&out, &cfg, &dir) {
        eprintln!("error: writing {}: {e}", dir.display());
        return ExitCode::from(2);
    }
    for r in &out.reports {
        let mark = if r.satisfied { "ok  " } else { "FAIL" };
        println!(
            "{mark} {:<36} theoretical {:>12.6e}  empirical {:>12.6e}",
            r.name, r.theoretical, r.empirical
        );
        if let Some(err) = r.metadata.get("error") {
            println!("     {err}");
        }
    }
    if out.all_satisfied() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
