use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use swomt::cli::{
    optimize_kernel, parse_config, simulate, solve_omt, write_resolved_config, CliError, RunConfig, StageOptions,
};

/// Density control of swarms: transport solve, kernel synthesis and agent
/// simulation.
///
/// Exit codes: 0 success, 2 usage, 3 parse error, 4 schema error,
/// 5 missing artifact, 6 i/o, 7 transport solver, 8 kernel optimization,
/// 9 simulation or density estimate, 10 field format.
#[derive(Parser)]
#[command(name = "swomt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the transport problem; writes density levels, velocities and
    /// convergence.csv under <out>/omt.
    SolveOmt(Common),
    /// Synthesize the agent kernel; writes kernel CSVs and C1 values under
    /// <out>/kernel.
    OptimizeKernel(Common),
    /// Simulate the agents against an existing transport solution.
    Simulate(Common),
    /// solve-omt, optimize-kernel and simulate in sequence.
    Pipeline(Common),
    /// Parse and validate the config only.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(value_name = "CONFIG", required_unless_present = "config")]
    config_path: Option<PathBuf>,
    #[arg(long, conflicts_with = "config_path")]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides swarm.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "SWOMT_THREADS")]
    threads: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn load(&self) -> Result<(RunConfig, StageOptions), CliError> {
        let path = self.config.as_ref().or(self.config_path.as_ref()).expect("clap enforces a config");
        let mut cfg = parse_config(path)?;
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.swarm.seed = seed;
        }
        let opts = StageOptions {
            out: cfg.output.dir.clone(),
            quiet: self.quiet,
        };
        Ok((cfg, opts))
    }
}

fn execute(command: &Command) -> Result<(), CliError> {
    let common = match command {
        Command::SolveOmt(c) | Command::OptimizeKernel(c) | Command::Simulate(c) | Command::Pipeline(c) | Command::Validate(c) => c,
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Schema("--threads must be positive".into()));
        }
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let (cfg, opts) = common.load()?;
    if matches!(command, Command::Validate(_)) {
        if !opts.quiet {
            println!("{}", cfg.to_json());
        }
        return Ok(());
    }
    write_resolved_config(&cfg, &opts.out)?;
    match command {
        Command::SolveOmt(_) => {
            solve_omt(&cfg, &opts)?;
        }
        Command::OptimizeKernel(_) => {
            optimize_kernel(&cfg, &opts)?;
        }
        Command::Simulate(_) => {
            simulate(&cfg, &opts)?;
        }
        Command::Pipeline(_) => {
            solve_omt(&cfg, &opts)?;
            optimize_kernel(&cfg, &opts)?;
            simulate(&cfg, &opts)?;
        }
        Command::Validate(_) => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
