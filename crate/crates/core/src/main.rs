use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use oilgame::config::{ConfigError, RunConfig};
use oilgame::grid::write_values_csv;
use oilgame::policy::{region_boundaries, write_regions_csv, PolicyField};
use oilgame::simulator::{dump_paths, run_game, write_paths_csv, PayoffEstimate, StartState};
use oilgame::solver::SolverError;
use oilgame::verify::run_verify;

const EXIT_PROPERTY: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NON_CONVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(name = "oilgame", version, about = "Oil extraction and taxation differential game solver")]
struct Cli {
    /// Worker threads for the solver and simulator.
    #[arg(long, global = true, env = "OILGAME_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the equilibrium and write values, policies, regions and a report.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output.dir`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Estimate both payoffs by Monte Carlo under stored policies.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policies: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        x0: f64,
        #[arg(long)]
        y0: f64,
        /// Starting regime, 1-based.
        #[arg(long, default_value_t = 1)]
        regime: usize,
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        #[arg(long)]
        n_paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the first `--dump-count` paths to this CSV.
        #[arg(long)]
        paths_out: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        dump_count: usize,
    },
    /// Recompute region boundaries from a policies CSV.
    Regions {
        #[arg(long)]
        policies: PathBuf,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the property checks and print a pass/fail table.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        quick: bool,
        /// Also write the table as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::new(EXIT_CONFIG, format!("{}: {e}", path.display()))
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let message = match &e {
            ConfigError::Invalid(v) => {
                let lines: Vec<String> = v.iter().map(|x| format!("  {x}")).collect();
                format!("invalid config:\n{}", lines.join("\n"))
            }
            _ => e.to_string(),
        };
        Self::new(EXIT_CONFIG, message)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure::io(path, e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Failure::io(path, e))
}

fn solve(config: &Path, output: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = RunConfig::load(config)?;
    let dir = output.unwrap_or_else(|| cfg.output.dir.clone());
    std::fs::create_dir_all(&dir).map_err(|e| Failure::io(&dir, e))?;
    let (_, grid, sol) = match cfg.solve() {
        Ok(s) => s,
        Err(SolverError::NonConvergence { report, rounds, nodes }) => {
            write_json(&dir.join("report.json"), &report)?;
            let text = serde_json::to_string_pretty(&report).unwrap_or_default();
            println!("{text}");
            return Err(Failure::new(
                EXIT_NON_CONVERGENCE,
                format!("no equilibrium after {rounds} rounds; {} nodes still changing", nodes.len()),
            ));
        }
        Err(e @ (SolverError::Configuration { .. } | SolverError::Model(_))) => {
            return Err(Failure::new(EXIT_CONFIG, e.to_string()))
        }
        Err(e) => return Err(Failure::new(EXIT_NON_CONVERGENCE, e.to_string())),
    };

    let path = dir.join("values.csv");
    write_values_csv(create(&path)?, &grid, &sol.values, cfg.output.values_time_stride)
        .map_err(|e| Failure::io(&path, e))?;
    let path = dir.join("policies.csv");
    sol.policies
        .write_csv(create(&path)?, cfg.output.policies_time_stride)
        .map_err(|e| Failure::io(&path, e))?;
    let path = dir.join("regions.csv");
    write_regions_csv(create(&path)?, &region_boundaries(&sol.policies))
        .map_err(|e| Failure::io(&path, e))?;
    write_json(&dir.join("report.json"), &sol.report)?;
    let r = &sol.report;
    println!(
        "converged in {} rounds ({} sweeps, measured contraction {:.6} <= {:.6}); wrote {}",
        r.nash_rounds,
        r.iterations,
        r.measured_delta,
        r.delta,
        dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SimulateOutput {
    company: PayoffEstimate,
    government: PayoffEstimate,
    clamp_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning: Option<String>,
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    config: &Path,
    policies: &Path,
    start: StartState,
    n_paths: Option<usize>,
    seed: Option<u64>,
    paths_out: Option<PathBuf>,
    dump_count: usize,
) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(n) = n_paths {
        cfg.monte_carlo.n_paths = n;
    }
    if let Some(s) = seed {
        cfg.monte_carlo.seed = s;
    }
    let file = File::open(policies).map_err(|e| Failure::io(policies, e))?;
    let field = PolicyField::read_csv(BufReader::new(file)).map_err(|e| Failure::io(policies, e))?;
    let model = cfg.effective_model();
    let est = run_game(&model, &field, start, &cfg.monte_carlo)
        .map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    if let Some(path) = paths_out {
        let rows = dump_paths(&model, &field, start, &cfg.monte_carlo, dump_count)
            .map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
        write_paths_csv(create(&path)?, &rows).map_err(|e| Failure::io(&path, e))?;
    }
    let clamp = est.clamp_fraction();
    let out = SimulateOutput {
        company: est.company,
        government: est.government,
        clamp_fraction: clamp,
        warning: (clamp > 0.01).then(|| {
            format!("{:.1}% of steps looked up outside the policy grid", 100.0 * clamp)
        }),
    };
    println!("{}", serde_json::to_string_pretty(&out).unwrap_or_default());
    Ok(())
}

fn regions(policies: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let file = File::open(policies).map_err(|e| Failure::io(policies, e))?;
    let field = PolicyField::read_csv(BufReader::new(file)).map_err(|e| Failure::io(policies, e))?;
    let b = region_boundaries(&field);
    match out {
        Some(path) => write_regions_csv(create(&path)?, &b).map_err(|e| Failure::io(&path, e)),
        None => write_regions_csv(io::stdout().lock(), &b)
            .map_err(|e| Failure::new(EXIT_CONFIG, e.to_string())),
    }
}

fn verify(config: &Path, quick: bool, json: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = RunConfig::load(config)?;
    let report = run_verify(&cfg, quick);
    report
        .write_table(io::stdout().lock())
        .map_err(|e| Failure::new(EXIT_PROPERTY, e.to_string()))?;
    if let Some(path) = json {
        write_json(&path, &report)?;
    }
    if report.all_passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().iter().map(|c| c.name.as_str()).collect();
        Err(Failure::new(EXIT_PROPERTY, format!("failed: {}", names.join(", "))))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    }
    match cli.command {
        Command::Solve { config, output } => solve(&config, output),
        Command::Simulate {
            config,
            policies,
            x0,
            y0,
            regime,
            t0,
            n_paths,
            seed,
            paths_out,
            dump_count,
        } => {
            if regime == 0 {
                return Err(Failure::new(EXIT_CONFIG, "--regime is 1-based"));
            }
            let start = StartState {
                t0,
                x0,
                y0,
                regime: regime - 1,
            };
            simulate(&config, &policies, start, n_paths, seed, paths_out, dump_count)
        }
        Command::Regions { policies, out } => regions(&policies, out),
        Command::Verify { config, quick, json } => verify(&config, quick, json),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
