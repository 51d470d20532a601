use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use isac_secure::design::AlgorithmSettings;
use isac_secure::harness::{
    convergence_trace_run, emit_csv, emit_summary, run_sweep, write_summary_csv, Scheme, SweepParam,
    SweepSpec, TracedAlgorithm,
};
use isac_secure::scenario::{Preset, ScenarioConfig};
use isac_secure::validate::{run_all, ValidateOptions};
use std::path::PathBuf;
use std::process::ExitCode;

/// Secure beamforming for radar-communication coexistence.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo sweep of one scenario parameter.
    Sweep(SweepArgs),
    /// Per-iteration trace of one algorithm run.
    Trace(TraceArgs),
    /// Invariant checks on random instances; exits nonzero on any failure.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// known-csi or unknown-csi.
    #[arg(long, default_value = "known-csi")]
    preset: Preset,
    /// TOML scenario file replacing the preset parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario field override, `field=value` in TOML syntax. Repeatable.
    #[arg(long = "set", value_name = "FIELD=VALUE")]
    overrides: Vec<String>,
}

impl ScenarioArgs {
    fn config(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => ScenarioConfig::from_file(path)?,
            None => self.preset.config(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// comm_qos_db, radar_antennas or radar_power.
    #[arg(long, value_parser = parse_axis)]
    axis: SweepParam,
    /// Comma-separated values of the swept parameter.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Comma-separated schemes; defaults depend on the preset.
    #[arg(long, value_delimiter = ',', value_parser = parse_scheme)]
    schemes: Vec<Scheme>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Seed of the first trial; trial t uses seed + t.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads, 0 for one per core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Per-trial CSV.
    #[arg(long, short)]
    output: PathBuf,
    /// Median and IQR table per scheme and value.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// known-csi or an-aided; defaults to the one matching the preset.
    #[arg(long, value_parser = parse_algorithm)]
    algorithm: Option<TracedAlgorithm>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Channel draws per preset for the algorithm checks.
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Monte-Carlo samples per SINR estimate.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 100)]
    sdp_problems: usize,
}

fn parse_axis(s: &str) -> Result<SweepParam, String> {
    SweepParam::parse(s).ok_or_else(|| format!("unknown axis `{s}` (comm_qos_db | radar_antennas | radar_power)"))
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    Scheme::parse(s).ok_or_else(|| {
        let names: Vec<_> = Scheme::ALL.iter().map(|k| k.name()).collect();
        format!("unknown scheme `{s}` ({})", names.join(" | "))
    })
}

fn parse_algorithm(s: &str) -> Result<TracedAlgorithm, String> {
    match s {
        "known-csi" => Ok(TracedAlgorithm::KnownCsi),
        "an-aided" => Ok(TracedAlgorithm::AnAided),
        _ => Err(format!("unknown algorithm `{s}` (known-csi | an-aided)")),
    }
}

fn default_schemes(preset: Preset) -> Vec<Scheme> {
    match preset {
        Preset::KnownCsi => vec![Scheme::Proposed, Scheme::Separate, Scheme::NoRadar],
        Preset::UnknownCsi => vec![Scheme::ProposedAn, Scheme::NullSpaceAn, Scheme::NoPls],
    }
}

fn sweep(args: SweepArgs) -> Result<()> {
    let schemes = if args.schemes.is_empty() {
        default_schemes(args.scenario.preset)
    } else {
        args.schemes
    };
    let spec = SweepSpec {
        config: args.scenario.config()?,
        param: args.axis,
        values: args.values,
        n_trials: args.trials,
        base_seed: args.seed,
        schemes,
        workers: args.workers,
        settings: AlgorithmSettings::default(),
    };
    let rows = run_sweep(&spec)?;
    emit_csv(&rows, &args.output)?;
    let failed = rows.iter().filter(|r| !r.ok()).count();
    eprintln!("{} rows ({failed} failed) -> {}", rows.len(), args.output.display());
    if let Some(path) = args.summary {
        let summary = emit_summary(&rows)?;
        let file = std::fs::File::create(&path).with_context(|| path.display().to_string())?;
        write_summary_csv(&summary, file).with_context(|| path.display().to_string())?;
    }
    Ok(())
}

fn trace(args: TraceArgs) -> Result<()> {
    let cfg = args.scenario.config()?;
    let algorithm = args.algorithm.unwrap_or(match args.scenario.preset {
        Preset::KnownCsi => TracedAlgorithm::KnownCsi,
        Preset::UnknownCsi => TracedAlgorithm::AnAided,
    });
    let trace = convergence_trace_run(&cfg, algorithm, args.seed, &AlgorithmSettings::default())?;
    let file = std::fs::File::create(&args.output).with_context(|| args.output.display().to_string())?;
    trace
        .write_csv(file, algorithm == TracedAlgorithm::AnAided)
        .with_context(|| args.output.display().to_string())?;
    eprintln!(
        "{} steps, {} outer iterations, converged: {}",
        trace.records.len(),
        trace.outer_objective.len().saturating_sub(1),
        trace.converged
    );
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<bool> {
    if args.samples < 1000 {
        bail!("--samples must be at least 1000");
    }
    let opts = ValidateOptions {
        mc_samples: args.samples,
        sdp_problems: args.sdp_problems,
        algorithm_seeds: args.seeds,
        base_seed: args.seed,
        ..ValidateOptions::default()
    };
    let outcomes = run_all(&opts);
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    Ok(outcomes.iter().all(|o| o.passed))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let outcome = match Cli::parse().command {
        Command::Sweep(a) => sweep(a).map(|_| true),
        Command::Trace(a) => trace(a).map(|_| true),
        Command::Validate(a) => validate(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
