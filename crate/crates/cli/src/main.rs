use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rotgpe::convergence::run_study;
use rotgpe::model::GpeOperators;
use rotgpe::solver::{initial_guess, solve_ground_state, write_summary};
use rotgpe::spectrum::{lowest_spectrum, write_report};
use rotgpe::{FeField, FeSpace, MeshGrid};

mod config;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "rotgpe", version, about = "Ground states of rotating Bose-Einstein condensates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Log progress (`RUST_LOG` overrides).
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute a discrete ground state and write its field dump.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Lowest eigenvalues of the second derivative at a ground state.
    Spectrum {
        #[arg(long)]
        config: PathBuf,
        /// Field dump written by `solve`.
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mesh-refinement study with EOC table.
    Convergence {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
enum Failure {
    Config(Vec<String>),
    Data(String),
    Solver(rotgpe::Error),
    Io(PathBuf, std::io::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Solver(_) => 4,
            Failure::Io(..) => 1,
        }
    }

    fn report(&self) {
        match self {
            Failure::Config(errs) => {
                eprintln!("configuration error:");
                for e in errs {
                    eprintln!("  - {e}");
                }
            }
            Failure::Data(msg) => eprintln!("data mismatch: {msg}"),
            Failure::Solver(e) => eprintln!("solver failure: {e}"),
            Failure::Io(path, e) => eprintln!("i/o error on {}: {e}", path.display()),
        }
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::Io(path.to_owned(), e))
}

fn write_with<F>(path: &Path, f: F) -> Result<(), Failure>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut out = create(path)?;
    f(&mut out).and_then(|_| out.flush()).map_err(|e| Failure::Io(path.to_owned(), e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    write_with(path, |out| serde_json::to_writer_pretty(&mut *out, value).map_err(std::io::Error::other))
}

fn space(cfg: &RunConfig) -> Result<Arc<FeSpace>, Failure> {
    let mesh = MeshGrid::uniform(cfg.domain.half_width, cfg.mesh.subdivisions).map_err(|e| Failure::Config(vec![e.to_string()]))?;
    FeSpace::new(mesh, cfg.mesh.order).map_err(|e| Failure::Config(vec![e.to_string()]))
}

fn solve(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let space = space(cfg)?;
    let params = cfg.params();
    let bound_holds = params.centrifugal_bound_holds(&space);
    let ops = GpeOperators::new(Arc::clone(&space), params);
    let start = initial_guess(&space, &params, ops.mass()).map_err(Failure::Solver)?;
    let res = solve_ground_state(&ops, &cfg.solver, &start).map_err(Failure::Solver)?;
    write_with(out, |w| res.u.write_dump(w))?;
    write_with(&sibling(out, ".summary"), |w| {
        writeln!(w, "lambda energy iterations residual")?;
        write_summary(&res, &mut *w)?;
        writeln!(w, "centrifugal_bound {bound_holds}")
    })?;
    write_json(
        &sibling(out, ".json"),
        &serde_json::json!({
            "config": cfg,
            "lambda": res.lambda,
            "energy": res.energy,
            "iterations": res.iterations,
            "residual_norm": res.residual_norm,
            "residual_euclidean": res.residual_euclidean,
            "final_step": res.final_step,
            "centrifugal_bound": bound_holds,
            "energy_history": res.energy_history,
        }),
    )?;
    let mut line = Vec::new();
    write_summary(&res, &mut line).expect("writing to memory");
    print!("{}", String::from_utf8_lossy(&line));
    Ok(())
}

fn spectrum(cfg: &RunConfig, state: &Path, out: &Path) -> Result<(), Failure> {
    let space = space(cfg)?;
    let file = File::open(state).map_err(|e| Failure::Io(state.to_owned(), e))?;
    let u = FeField::read_dump(Arc::clone(&space), BufReader::new(file)).map_err(|e| match e {
        rotgpe::Error::Io(io) => Failure::Io(state.to_owned(), io),
        other => Failure::Data(other.to_string()),
    })?;
    let ops = GpeOperators::new(space, cfg.params());
    let result = lowest_spectrum(&ops, &u, &cfg.spectrum).map_err(Failure::Solver)?;
    write_with(out, |w| write_report(&result, w))?;
    write_json(
        &sibling(out, ".json"),
        &serde_json::json!({
            "config": cfg,
            "state": state,
            "lambda": result.lambda,
            "eigenvalues": result.eigenvalues,
            "residuals": result.residuals,
            "iterations": result.iterations,
            "gap": result.gap,
            "overlap_iu": result.overlap_iu,
            "quasi_isolated": result.quasi_isolated,
        }),
    )?;
    println!(
        "lambda {:.10} mu1 {:.10} gap {:.6e} overlap_iu {:.6} quasi_isolated {}",
        result.lambda, result.eigenvalues[0], result.gap, result.overlap_iu, result.quasi_isolated
    );
    Ok(())
}

fn convergence(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let study_cfg = cfg.study_config().ok_or_else(|| Failure::Config(vec!["missing [study] section".into()]))?;
    let study = run_study(&study_cfg).map_err(Failure::Solver)?;
    write_with(out, |w| study.table.write_csv(w))?;
    write_with(&sibling(out, ".json"), |w| study.table.write_metadata(&study_cfg, w))?;
    let mut csv = Vec::new();
    study.table.write_csv(&mut csv).expect("writing to memory");
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let config = match &cli.command {
        Command::Solve { config, .. } | Command::Spectrum { config, .. } | Command::Convergence { config, .. } => config,
    };
    let cfg = RunConfig::load(config).map_err(Failure::Config)?;
    match &cli.command {
        Command::Solve { out, .. } => solve(&cfg, out),
        Command::Spectrum { state, out, .. } => spectrum(&cfg, state, out),
        Command::Convergence { out, .. } => convergence(&cfg, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default = if cli.verbose { "info" } else { "warn" };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            f.report();
            ExitCode::from(f.code())
        }
    }
}
