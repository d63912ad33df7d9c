//! Batch front end for the compass-bell experiments: configure, run, and
//! export trajectories, chaos diagnostics, Bell/CHSH correlation runs, and
//! the cosine-law syntheses.
//!
//! Exit codes: 0 on success, 1 on configuration errors (bad flags, config
//! file problems, invalid values), 2 on runtime errors (unflippable
//! searches, empty switching bins, non-finite states, output failures).

use std::f64::consts::TAU;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use compass_bell::dynamics::{bifurcation_scan, largest_lyapunov, stroboscopic_section};
use compass_bell::eprb::{
    run_plan, run_random_switching, scan_measuring_times, time_grid, Dichotomizer, Ensemble,
    ExperimentPlan, SideCorrections,
};
use compass_bell::nonlocal::reproduce_cos;
use compass_bell::ode::{integrate, state_at};
use compass_bell::separatrix::reproduce_cos_exact;
use compass_bell::Error as CoreError;

use compass_bell_cli::config::{CorrectionsConfig, ExperimentConfig};
use compass_bell_cli::output::{
    CommandResult, DriftResult, Envelope, LyapRow, StrobeRow, Table1Row,
};

#[derive(Parser)]
#[command(
    name = "compass-bell",
    about = "Deterministic driven-compass Bell/CHSH experiments",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Overrides the config seed (random-switching generator).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Export one trajectory.
    Traj,
    /// Wrapped angles at the measuring time over a grid of settings and
    /// initial conditions.
    Table1,
    /// Stroboscopic section (one sample per drive period).
    Strobe,
    /// Largest Lyapunov exponent per setting.
    Lyap,
    /// Stroboscopic bifurcation scan over the fixed-field amplitude.
    Bifurcate,
    /// Four-run correlation experiment with a shared ensemble.
    BellStatic,
    /// Four-run experiment with per-run hidden-variable drift, plus the
    /// measuring-time escalation search for |S| = 4.
    BellDrift,
    /// Randomly switched analyser settings with optional setting-dependent
    /// corrections.
    BellRandom,
    /// Synthesize cos 2(a-b) on the compass model with bounded
    /// corrections.
    SynthCos,
    /// Exact cosine synthesis on the separatrix flow.
    SepCos,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Traj => "traj",
            Command::Table1 => "table1",
            Command::Strobe => "strobe",
            Command::Lyap => "lyap",
            Command::Bifurcate => "bifurcate",
            Command::BellStatic => "bell-static",
            Command::BellDrift => "bell-drift",
            Command::BellRandom => "bell-random",
            Command::SynthCos => "synth-cos",
            Command::SepCos => "sep-cos",
        }
    }
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(1),
            CliError::Runtime(_) => ExitCode::from(2),
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidParameter(_) | CoreError::Domain(_) => {
                CliError::Config(e.to_string())
            }
            CoreError::NonFiniteState { .. }
            | CoreError::NoFlipFound { .. }
            | CoreError::EmptyBin { .. }
            | CoreError::OnSeparatrix => CliError::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Both usage errors and --help/--version land here; only the
            // former are failures.
            let benign = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if benign {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut config = match &cli.config {
        None => ExperimentConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("invalid config: {e}")))?
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = load_config(cli)?;
    let (result, warning) = execute(cli.command, &config)?;

    let mut bytes = Vec::new();
    match cli.format {
        Format::Csv => result
            .write_csv(&mut bytes)
            .map_err(|e| CliError::Runtime(format!("cannot render output: {e}")))?,
        Format::Json => {
            let envelope = Envelope {
                command: cli.command.name().to_string(),
                config: config.clone(),
                result,
            };
            bytes = serde_json::to_vec_pretty(&envelope)
                .map_err(|e| CliError::Runtime(format!("cannot render output: {e}")))?;
            bytes.push(b'\n');
        }
    }
    match &cli.out {
        Some(path) => std::fs::write(path, &bytes).map_err(|e| {
            CliError::Runtime(format!("cannot write {}: {e}", path.display()))
        })?,
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| CliError::Runtime(format!("cannot write output: {e}")))?,
    }
    if let Some(message) = warning {
        return Err(CliError::Runtime(message));
    }
    Ok(())
}

/// Runs a command; besides the result, may carry a runtime diagnostic that
/// is reported (exit 2) after the output has been written.
fn execute(
    command: Command,
    config: &ExperimentConfig,
) -> Result<(CommandResult, Option<String>), CliError> {
    let model = config.model;
    let integrator = config.integrator;
    match command {
        Command::Traj => {
            let c = &config.traj;
            let params = model.params(c.x)?;
            let trajectory = integrate(&params, c.initial, c.t_end, &integrator, c.sample_every)?;
            Ok((CommandResult::Traj { trajectory }, None))
        }
        Command::Table1 => {
            let c = &config.table1;
            let mut rows = Vec::with_capacity(c.x_values.len());
            for &x in &c.x_values {
                let params = model.params(x)?;
                let mut theta_wrapped = Vec::with_capacity(c.initials.len());
                for init in &c.initials {
                    theta_wrapped
                        .push(state_at(&params, *init, c.t_m, &integrator)?.wrapped_theta());
                }
                rows.push(Table1Row { x, theta_wrapped });
            }
            Ok((CommandResult::Table1 { rows }, None))
        }
        Command::Strobe => {
            let c = &config.strobe;
            let params = model.params(c.x)?;
            let states =
                stroboscopic_section(&params, c.initial, c.n_transient, c.n_keep, &integrator)?;
            let rows = states
                .iter()
                .enumerate()
                .map(|(k, s)| StrobeRow {
                    t: (c.n_transient + 1 + k as u64) as f64 * TAU,
                    theta: s.theta,
                    theta_dot: s.theta_dot,
                    theta_wrapped: s.wrapped_theta(),
                })
                .collect();
            Ok((CommandResult::Strobe { rows }, None))
        }
        Command::Lyap => {
            let c = &config.lyap;
            let mut rows = Vec::with_capacity(c.x_values.len());
            for &x in &c.x_values {
                let params = model.params(x)?;
                let lambda_max = largest_lyapunov(&params, c.initial, &c.settings, &integrator)?;
                rows.push(LyapRow { x, lambda_max });
            }
            Ok((CommandResult::Lyap { rows }, None))
        }
        Command::Bifurcate => {
            let c = &config.bifurcate;
            let base = model.params(c.x_lo)?;
            let dataset = bifurcation_scan(
                &base,
                c.x_lo,
                c.x_hi,
                c.n_x,
                c.initial,
                c.n_transient,
                c.n_keep,
                &integrator,
            )?;
            Ok((CommandResult::Bifurcate { dataset }, None))
        }
        Command::BellStatic => {
            let c = &config.bell_static;
            let plan = ExperimentPlan::shared_ensemble(
                model,
                (c.a, c.b, c.a_prime, c.b_prime),
                Ensemble::new(c.ensemble.clone())?,
                config.dichotomizer,
                integrator,
            )?;
            let result = run_plan(&plan)?;
            Ok((CommandResult::BellStatic { result }, None))
        }
        Command::BellDrift => {
            let c = &config.bell_drift;
            let plan = ExperimentPlan::drifting_single(
                model,
                (c.a, c.b, c.a_prime, c.b_prime),
                c.lambda_runs,
                Dichotomizer::new(c.delta, c.t_m)?,
                integrator,
            )?;
            let direct = run_plan(&plan)?;
            let search = if direct.s.abs() < 4.0 && c.search.enabled {
                scan_measuring_times(
                    &plan,
                    &time_grid(c.search.spacing, c.search.t_max, c.search.spacing),
                    4.0,
                )?
            } else {
                None
            };
            Ok((
                CommandResult::BellDrift {
                    result: DriftResult {
                        direct,
                        direct_t_m: c.t_m,
                        search,
                    },
                },
                None,
            ))
        }
        Command::BellRandom => {
            let c = &config.bell_random;
            let ensemble = Ensemble::new(c.ensemble.clone())?;
            let n_members = ensemble.len();
            if let CorrectionsConfig::Table(t) = &c.corrections {
                if t.len() != 4 || t.iter().any(|row| row.len() != n_members) {
                    return Err(CliError::Config(format!(
                        "corrections table must be 4 x {n_members} (combos x members)"
                    )));
                }
            }
            let rule = |ci: usize, cii: usize, member: usize| match &c.corrections {
                CorrectionsConfig::Zero => SideCorrections::ZERO,
                CorrectionsConfig::Table(t) => t[ci * 2 + cii][member],
            };
            let result = run_random_switching(
                &model,
                &c.menu,
                &ensemble,
                c.n_pairs,
                config.seed,
                rule,
                &config.dichotomizer,
                &integrator,
            )?;
            Ok((CommandResult::BellRandom { result }, None))
        }
        Command::SynthCos => {
            let report = reproduce_cos(&model, &config.synth_cos)?;
            let warning = (report.failure_count > 0).then(|| {
                format!(
                    "{} searches found no flip within the budget (report written)",
                    report.failure_count
                )
            });
            Ok((CommandResult::SynthCos { report }, warning))
        }
        Command::SepCos => {
            let c = &config.sep_cos;
            let report = reproduce_cos_exact(&c.grid, c.n, c.epsilon, c.assignment)?;
            Ok((CommandResult::SepCos { report }, None))
        }
    }
}
