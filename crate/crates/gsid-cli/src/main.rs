//! `gsid` — simulate the built-in dynamical systems, identify sparse
//! governing equations shared across data sources, run repeated-trial
//! benchmarks from config files, and check dictionary conditioning.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 runtime/numerical error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use gsid::diagnostics::{degeneracy_warning, full_rank_check, RankReport, SourceDiagnostics};
use gsid::dictionary::{build_dictionary, enumerate_monomials};
use gsid::differentiate::{add_noise_with, central_difference};
use gsid::experiments::{
    emit_report, emit_switching_report, lorenz_regimes_experiment, run_trials,
    switching_experiment, ExperimentConfig, InitPolicy, SystemKind,
};
use gsid::model::{assemble_model, IdentifiedModel, RegressionProblem};
use gsid::series::SourceSeries;
use gsid::solver::{least_squares_init, solve, SolverConfig, Variant};
use gsid::systems::{duffing, integrate, logistic, lorenz, simulate_switching};

#[derive(Parser)]
#[command(
    name = "gsid",
    version,
    about = "Sparse identification of governing equations across data sources"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a built-in system and write the trajectory as CSV
    Simulate(SimulateArgs),
    /// Fit one sparse model with a shared support to one or more trajectory CSVs
    Identify(IdentifyArgs),
    /// Run a repeated-trial benchmark described by a TOML config file
    Experiment(ExperimentArgs),
    /// Check dictionary rank and per-degree conditioning of trajectory CSVs
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// System name: logistic, lorenz, duffing, or switching
    system: String,
    /// Bifurcation parameter for logistic/lorenz
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    /// Cubic stiffness for duffing
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    /// Damping for duffing
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
    /// Parameter before the switch (switching only)
    #[arg(long, allow_hyphen_values = true)]
    alpha_before: Option<f64>,
    /// Parameter after the switch (switching only)
    #[arg(long, allow_hyphen_values = true)]
    alpha_after: Option<f64>,
    /// Time of the parameter switch (switching only)
    #[arg(long)]
    t_switch: Option<f64>,
    /// Initial state, comma separated (e.g. --x0 -8,7,27)
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required = true
    )]
    x0: Vec<f64>,
    #[arg(long, default_value_t = 0.005)]
    dt: f64,
    #[arg(long)]
    t_final: f64,
    /// Output CSV path
    #[arg(short, long, default_value = "trajectory.csv")]
    output: PathBuf,
}

#[derive(Args)]
struct IdentifyArgs {
    /// Input trajectory CSVs, one per source (header t,x1,...,xn)
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Dictionary degree p (all monomials up to total degree p)
    #[arg(short = 'p', long, default_value_t = 4)]
    degree: u32,
    /// Row-norm threshold a (the penalty weight is a²)
    #[arg(short = 't', long)]
    threshold: f64,
    /// Solver variant: group-l20, per-source-l0, or ks-rows
    #[arg(long, default_value = "group-l20")]
    variant: String,
    /// Target support size for ks-rows
    #[arg(long)]
    ks_size: Option<usize>,
    /// Oversampling factor for ks-rows support schedules
    #[arg(long, default_value_t = 3.0)]
    ks_growth: f64,
    /// Stop when the coefficient update falls below this
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Initial coefficients: zero or least-squares
    #[arg(long, default_value = "least-squares")]
    init: String,
    /// Optional relative velocity noise to inject (0 = fit the data as-is)
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Noise seed (only used when --noise > 0)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model JSON path
    #[arg(short, long, default_value = "model.json")]
    output: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML config file describing the experiment
    config: PathBuf,
    /// Directory for report.json, summary.csv, and figure data
    #[arg(short, long, default_value = "results")]
    output: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Input trajectory CSVs, one per source
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Dictionary degree p
    #[arg(short = 'p', long, default_value_t = 4)]
    degree: u32,
    /// Flag a degree when its normalized σ_min/σ_max falls below this
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
    /// Output JSON path
    #[arg(short, long, default_value = "diagnostics.json")]
    output: PathBuf,
}

/// Errors routed to exit code 1 (bad input) or 2 (runtime failure).
enum CliError {
    Usage(String),
    Runtime(String),
}

type CliResult<T> = Result<T, CliError>;

/// Library errors keep their own input/runtime classification.
fn classify(e: gsid::Error) -> CliError {
    if e.is_input_error() {
        CliError::Usage(e.to_string())
    } else {
        CliError::Runtime(e.to_string())
    }
}

/// Failures while opening/reading user-supplied files are input errors.
fn input_error(e: gsid::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Identify(args) => cmd_identify(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Diagnose(args) => cmd_diagnose(args),
    };
    match result {
        Ok(()) => {}
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(1);
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(2);
        }
    }
}

fn require(value: Option<f64>, flag: &str, system: &str) -> CliResult<f64> {
    value.ok_or_else(|| CliError::Usage(format!("{system} requires --{flag}")))
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let series = match args.system.as_str() {
        "logistic" => integrate(
            &logistic(require(args.alpha, "alpha", "logistic")?),
            &args.x0,
            args.dt,
            args.t_final,
        ),
        "lorenz" => integrate(
            &lorenz(require(args.alpha, "alpha", "lorenz")?),
            &args.x0,
            args.dt,
            args.t_final,
        ),
        "duffing" => integrate(
            &duffing(
                require(args.beta, "beta", "duffing")?,
                require(args.delta, "delta", "duffing")?,
            ),
            &args.x0,
            args.dt,
            args.t_final,
        ),
        "switching" => simulate_switching(
            require(args.alpha_before, "alpha-before", "switching")?,
            require(args.alpha_after, "alpha-after", "switching")?,
            &args.x0,
            args.dt,
            require(args.t_switch, "t-switch", "switching")?,
            args.t_final,
        ),
        other => {
            return Err(CliError::Usage(format!(
                "unknown system '{other}' (expected logistic, lorenz, duffing, or switching)"
            )))
        }
    }
    .map_err(classify)?;

    series.write_csv(&args.output).map_err(classify)?;
    let last = series.states().row(series.len() - 1);
    let final_state: Vec<String> = last.iter().map(|v| format!("{v:.4}")).collect();
    println!(
        "wrote {} rows to {} (final state: {})",
        series.len(),
        args.output.display(),
        final_state.join(", ")
    );
    Ok(())
}

fn parse_variant(args: &IdentifyArgs) -> CliResult<Variant> {
    match args.variant.as_str() {
        "group-l20" => Ok(Variant::GroupL20),
        "per-source-l0" => Ok(Variant::PerSourceL0),
        "ks-rows" => {
            let s = args.ks_size.ok_or_else(|| {
                CliError::Usage("--variant ks-rows requires --ks-size".to_string())
            })?;
            Ok(Variant::KsRows {
                s,
                k_factor: args.ks_growth,
            })
        }
        other => Err(CliError::Usage(format!(
            "unknown variant '{other}' (expected group-l20, per-source-l0, or ks-rows)"
        ))),
    }
}

fn parse_init(name: &str) -> CliResult<InitPolicy> {
    match name {
        "zero" => Ok(InitPolicy::Zero),
        "least-squares" => Ok(InitPolicy::LeastSquares),
        other => Err(CliError::Usage(format!(
            "unknown init '{other}' (expected zero or least-squares)"
        ))),
    }
}

fn read_sources(inputs: &[PathBuf]) -> CliResult<Vec<SourceSeries>> {
    let mut sources = Vec::with_capacity(inputs.len());
    for (i, path) in inputs.iter().enumerate() {
        let series = SourceSeries::read_csv(path, i + 1).map_err(input_error)?;
        if let Some(first) = sources.first() {
            let first: &SourceSeries = first;
            if series.dim() != first.dim() {
                return Err(CliError::Usage(format!(
                    "{}: has {} state components but {} has {}",
                    path.display(),
                    series.dim(),
                    inputs[0].display(),
                    first.dim()
                )));
            }
        }
        sources.push(series);
    }
    Ok(sources)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serialization failed: {e}")))?;
    fs::write(path, json + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn print_model(model: &IdentifiedModel, source_names: &[String]) {
    for (i, name) in source_names.iter().enumerate() {
        println!("source {} ({}):", i + 1, name);
        for j in 0..model.components.len() {
            println!("  {}", model.equation_string(j, i));
        }
    }
    // One coefficient table per component: term rows, source columns.
    for (j, component) in model.components.iter().enumerate() {
        if component.support.is_empty() {
            continue;
        }
        println!("component {} coefficients:", j + 1);
        let width = component
            .term_names
            .iter()
            .map(|n| n.len())
            .max()
            .unwrap_or(4)
            .max(4);
        print!("  {:width$}", "term");
        for i in 1..=model.n_sources {
            print!("  {:>10}", format!("source {i}"));
        }
        println!();
        for (k, name) in component.term_names.iter().enumerate() {
            print!("  {name:width$}");
            for coeffs in &component.coefficients {
                print!("  {:>10.4}", coeffs[k]);
            }
            println!();
        }
    }
}

fn cmd_identify(args: IdentifyArgs) -> CliResult<()> {
    let variant = parse_variant(&args)?;
    let init = parse_init(&args.init)?;
    let sources = read_sources(&args.inputs)?;

    let n = sources[0].dim();
    let spec = enumerate_monomials(n, args.degree);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut dicts = Vec::with_capacity(sources.len());
    let mut vels = Vec::with_capacity(sources.len());
    for series in &sources {
        let (states, velocities) = central_difference(series);
        dicts.push(build_dictionary(&states, &spec).map_err(classify)?);
        vels.push(add_noise_with(&velocities, args.noise, &mut rng));
    }
    let problems =
        RegressionProblem::per_component(dicts, &vels, spec.clone()).map_err(classify)?;

    let config = SolverConfig {
        threshold: args.threshold,
        tol: args.tol,
        max_iter: args.max_iter,
        variant,
    };
    let mut parts = Vec::with_capacity(problems.len());
    for problem in &problems {
        let c0 = match init {
            InitPolicy::Zero => None,
            InitPolicy::LeastSquares => Some(least_squares_init(problem)),
        };
        parts.push(solve(problem, &config, c0.as_ref()).map_err(classify)?);
    }
    let model = assemble_model(&spec, sources.len(), &parts);

    let names: Vec<String> = args
        .inputs
        .iter()
        .map(|p| p.display().to_string())
        .collect();
    print_model(&model, &names);
    if model.components.iter().all(|c| c.support.is_empty()) {
        println!("warning: no dictionary term survived thresholding; the model is identically zero (threshold {} may be too large)", args.threshold);
    }
    let rank_warnings: usize = model.components.iter().map(|c| c.rank_warnings).sum();
    if rank_warnings > 0 {
        println!("warning: {rank_warnings} restricted least-squares solve(s) were rank-deficient; coefficients use the minimum-norm solution");
    }
    if model.components.iter().any(|c| !c.converged) {
        println!("warning: iteration limit reached before the update dropped below tol");
    }
    write_json(&model, &args.output)?;
    println!("wrote {}", args.output.display());
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> CliResult<()> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.config.display())))?;
    let config = ExperimentConfig::from_toml(&text).map_err(input_error)?;

    match config.system {
        SystemKind::Switching => {
            let report = switching_experiment(&config).map_err(classify)?;
            let files = emit_switching_report(&report, &args.output).map_err(classify)?;
            println!(
                "switch located in segment {} of {} (expected segment {}); component-2 support: {:?}",
                report.switch_segment,
                report.segment_residuals.len(),
                report.expected_segment,
                report.model.components[1].term_names
            );
            for path in files {
                println!("wrote {}", path.display());
            }
        }
        SystemKind::Lorenz => {
            let (report, table) = lorenz_regimes_experiment(&config).map_err(classify)?;
            let mut files = emit_report(&report, &args.output).map_err(classify)?;
            if let Some(table) = table {
                let path = args.output.join("coefficient_table.csv");
                fs::write(&path, table.to_csv())
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
                files.push(path);
            }
            print_summary(&report);
            for path in files {
                println!("wrote {}", path.display());
            }
        }
        _ => {
            let report = run_trials(&config).map_err(classify)?;
            let files = emit_report(&report, &args.output).map_err(classify)?;
            print_summary(&report);
            for path in files {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn print_summary(report: &gsid::experiments::ExperimentReport) {
    for v in &report.variants {
        let errors: Vec<String> = v
            .mean_error_pct
            .iter()
            .map(|e| format!("{e:.4}%"))
            .collect();
        println!(
            "{}: P = {:.4} over {} trials ({} failed); mean coefficient error per source: {}",
            v.variant.label(),
            v.probability,
            report.n_trials,
            v.failed_trials,
            if errors.is_empty() {
                "n/a".to_string()
            } else {
                errors.join(", ")
            }
        );
    }
}

#[derive(Serialize)]
struct SourceReport {
    source: usize,
    path: String,
    rank: RankReport,
    degeneracy: SourceDiagnostics,
}

fn cmd_diagnose(args: DiagnoseArgs) -> CliResult<()> {
    let sources = read_sources(&args.inputs)?;
    let n = sources[0].dim();
    let spec = enumerate_monomials(n, args.degree);
    let dicts: Vec<_> = sources
        .iter()
        .map(|s| build_dictionary(s.states(), &spec))
        .collect::<gsid::Result<_>>()
        .map_err(classify)?;
    let degeneracy = degeneracy_warning(&dicts, &spec, args.tolerance).map_err(classify)?;

    let mut reports = Vec::with_capacity(dicts.len());
    for ((dict, diag), path) in dicts.iter().zip(degeneracy).zip(&args.inputs) {
        let rank = full_rank_check(dict);
        let mut notes = Vec::new();
        if !rank.full_rank {
            notes.push("rank-deficient dictionary".to_string());
        }
        for f in &diag.flags {
            notes.push(format!(
                "near-degenerate at degree {} (ratio {:.2e})",
                f.degree, f.ratio
            ));
        }
        if notes.is_empty() {
            println!("{}: ok", path.display());
        } else {
            println!("{}: {}", path.display(), notes.join("; "));
        }
        reports.push(SourceReport {
            source: diag.source,
            path: path.display().to_string(),
            rank,
            degeneracy: diag,
        });
    }
    write_json(&reports, &args.output)?;
    println!("wrote {}", args.output.display());
    Ok(())
}
