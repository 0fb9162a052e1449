//! `hybridmpc` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 a closed loop went
//! unstable, 3 bad configuration or input file.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hybridmpc::controller::Measurements;
use hybridmpc::dnn::model_io::{decode_model, save_model, TrainingInfo};
use hybridmpc::dnn::{generate_dataset, train as train_network, Dataset, DatasetGrid, MlpNetwork, Policy};
use hybridmpc::dnn::{RpropConfig, TrainingSet, DEFAULT_LAYERS};
use hybridmpc::harness::{
    bench_controller, build_controller, compare_controllers, run_kind, simulate_and_evaluate, ControllerKind,
    LatencyStats, MetricsReport, ScenarioConfig,
};
use hybridmpc::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_UNSTABLE: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "hybridmpc", version, about = "Exoskeleton squat simulation with NMPC and hybrid DNN+PI control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop scenario and print its metrics as JSON.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Write the per-step time series here.
        #[arg(long)]
        csv_out: Option<PathBuf>,
        /// Write the metrics JSON here instead of stdout.
        #[arg(long)]
        metrics_out: Option<PathBuf>,
        /// Fill the CSV `solve_ms` column with wall-clock times (breaks byte-identical output).
        #[arg(long)]
        timing: bool,
    },
    /// Generate an NMPC imitation dataset from a grid config (defaults to the built-in grid).
    GenData {
        grid: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the policy network on a dataset.
    Train {
        dataset: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Weight initialization seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stop early once the scaled MSE falls below this.
        #[arg(long)]
        target_mse: Option<f64>,
    },
    /// Run several controllers on the same scenario and tabulate the metrics.
    Compare {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "nmpc,dnn-only,hybrid,none")]
        controllers: Vec<ControllerKind>,
        #[command(flatten)]
        overrides: Overrides,
        /// Print the reports as a JSON array instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Time controller steps on measurements recorded from an NMPC run.
    Bench {
        config: PathBuf,
        /// Defaults to nmpc, plus hybrid when a model is available.
        #[arg(long, value_delimiter = ',')]
        controllers: Vec<ControllerKind>,
        #[command(flatten)]
        overrides: Overrides,
        /// Timed steps per controller.
        #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(100..))]
        iterations: u64,
        /// Untimed steps before measuring.
        #[arg(long, default_value_t = 100)]
        warmup: usize,
    },
    /// Print the default scenario config (or dataset grid) as TOML.
    PrintDefaultConfig {
        #[arg(long)]
        grid: bool,
    },
}

/// Scenario fields that can be set from the command line.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated time (s).
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    controller: Option<ControllerKind>,
    /// Trained model file; overrides `model` in the config.
    #[arg(long)]
    model: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with 2 on usage errors, which would read as instability
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        // a closed pipe on stdout (`| head`) is not a failure
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_instability() {
        return EXIT_UNSTABLE;
    }
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Format { .. } => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

fn run(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Simulate { config, overrides, csv_out, metrics_out, timing } => {
            simulate(&config, &overrides, csv_out.as_deref(), metrics_out.as_deref(), timing)
        }
        Command::GenData { grid, output, seed } => gen_data(grid.as_deref(), &output, seed),
        Command::Train { dataset, output, epochs, seed, target_mse } => {
            train(&dataset, &output, epochs, seed, target_mse)
        }
        Command::Compare { config, controllers, overrides, json } => compare(&config, &controllers, &overrides, json),
        Command::Bench { config, controllers, overrides, iterations, warmup } => {
            bench(&config, &controllers, &overrides, iterations as usize, warmup)
        }
        Command::PrintDefaultConfig { grid } => {
            let text = if grid { DatasetGrid::default().to_toml() } else { ScenarioConfig::default().to_toml() };
            io::stdout().lock().write_all(text.as_bytes())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// A file that cannot be read is a configuration problem, not a crash.
fn read_input(path: &Path) -> Result<Vec<u8>, Error> {
    std::fs::read(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Loads the scenario, applies overrides and resolves a relative `model`
/// path against the config file's directory.
fn load_scenario(path: &Path, overrides: &Overrides) -> Result<ScenarioConfig, Error> {
    let text = String::from_utf8(read_input(path)?)
        .map_err(|_| Error::Config(format!("{}: not UTF-8", path.display())))?;
    let mut config = ScenarioConfig::from_toml(&text)?;
    if let Some(model) = config.model.as_mut() {
        if model.is_relative() {
            *model = path.parent().unwrap_or(Path::new("")).join(&*model);
        }
    }
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(duration) = overrides.duration {
        config.duration = duration;
    }
    if let Some(kind) = overrides.controller {
        config.controller = kind;
    }
    if let Some(model) = &overrides.model {
        config.model = Some(model.clone());
    }
    config.validate()?;
    Ok(config)
}

fn load_policy(config: &ScenarioConfig, required: bool) -> Result<Option<Policy>, Error> {
    match &config.model {
        Some(path) => Ok(Some(decode_model(&read_input(path)?)?.0)),
        None if required => Err(Error::Config("a trained model is required (set `model` or pass --model)".into())),
        None => Ok(None),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(path)?))
}

fn simulate(
    path: &Path,
    overrides: &Overrides,
    csv_out: Option<&Path>,
    metrics_out: Option<&Path>,
    timing: bool,
) -> Result<ExitCode, Error> {
    let config = load_scenario(path, overrides)?;
    let policy = load_policy(&config, config.controller.needs_model())?;
    let clock = Instant::now();
    let (run, report) = simulate_and_evaluate(&config, config.controller, policy.as_ref())?;
    log::info!("{} steps of `{}` in {:.2?}", run.series.len(), config.controller, clock.elapsed());
    if let Some(csv) = csv_out {
        let mut out = create(csv)?;
        run.series.write_csv(&mut out, timing)?;
        out.flush()?;
    }
    let json = serde_json::to_string_pretty(&report).expect("metrics serialize");
    match metrics_out {
        Some(p) => {
            let mut out = create(p)?;
            writeln!(out, "{json}")?;
            out.flush()?;
        }
        None => writeln!(io::stdout().lock(), "{json}")?,
    }
    if let Some(why) = &run.failure {
        eprintln!("unstable: {why}");
        return Ok(ExitCode::from(EXIT_UNSTABLE));
    }
    Ok(ExitCode::SUCCESS)
}

fn gen_data(grid_path: Option<&Path>, output: &Path, seed: Option<u64>) -> Result<ExitCode, Error> {
    let mut grid = match grid_path {
        Some(p) => {
            let text = String::from_utf8(read_input(p)?)
                .map_err(|_| Error::Config(format!("{}: not UTF-8", p.display())))?;
            DatasetGrid::from_toml(&text)?
        }
        None => DatasetGrid::default(),
    };
    if let Some(seed) = seed {
        grid.seed = seed;
    }
    let clock = Instant::now();
    let data = generate_dataset(&grid)?;
    let scenarios = &data.header.scenarios;
    let skipped = scenarios.iter().filter(|s| s.skipped.is_some()).count();
    for s in scenarios.iter().filter(|s| s.skipped.is_some()) {
        log::warn!("scenario {} skipped: {}", s.index, s.skipped.as_deref().unwrap_or(""));
    }
    data.save(output)?;
    log::info!(
        "{} samples from {} scenarios ({skipped} skipped) in {:.1?} -> {}",
        data.len(),
        scenarios.len(),
        clock.elapsed(),
        output.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn train(
    dataset: &Path,
    output: &Path,
    epochs: Option<usize>,
    seed: u64,
    target_mse: Option<f64>,
) -> Result<ExitCode, Error> {
    let data = Dataset::decode(&read_input(dataset)?)?;
    let set = TrainingSet::new(&data.samples, &data.header.scaler)?;
    let mut config = RpropConfig::default();
    if let Some(n) = epochs {
        config.max_epochs = n;
    }
    if let Some(t) = target_mse {
        config.target_mse = t;
    }
    let mut net = MlpNetwork::new(&DEFAULT_LAYERS, seed)?;
    let clock = Instant::now();
    let report = train_network(&mut net, &set, &config)?;
    let info = TrainingInfo {
        seed,
        epochs: report.history.len(),
        best_epoch: report.best_epoch,
        best_mse: report.best_mse,
        samples: data.len(),
    };
    save_model(&Policy::new(net, data.header.scaler.clone())?, Some(&info), output)?;
    log::info!(
        "{} epochs on {} samples in {:.1?}: best MSE {:.3e} at epoch {} -> {}",
        info.epochs,
        info.samples,
        clock.elapsed(),
        info.best_mse,
        info.best_epoch,
        output.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn compare(path: &Path, kinds: &[ControllerKind], overrides: &Overrides, json: bool) -> Result<ExitCode, Error> {
    if kinds.is_empty() {
        return Err(Error::InvalidArgument("no controllers to compare".into()));
    }
    let config = load_scenario(path, overrides)?;
    let policy = load_policy(&config, kinds.iter().any(|k| k.needs_model()))?;
    let reports = compare_controllers(&config, kinds, policy.as_ref())?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&reports).expect("metrics serialize"))?;
    } else {
        write_table(&mut out, &reports)?;
    }
    if reports.iter().any(|r| !r.stable) {
        return Ok(ExitCode::from(EXIT_UNSTABLE));
    }
    Ok(ExitCode::SUCCESS)
}

fn write_table(out: &mut impl Write, reports: &[MetricsReport]) -> io::Result<()> {
    writeln!(
        out,
        "{:<10} {:>6}  {:>26}  {:>23}  {:>10}",
        "controller", "stable", "tracking RMS (N·m)", "torque reduction (%)", "mean ms"
    )?;
    for r in reports {
        let [t1, t2, t3] = r.tracking_rms;
        let [p1, p2, p3] = r.torque_reduction_pct;
        let latency = r.latency.map_or("-".to_string(), |l| format!("{:.4}", l.mean_ms));
        writeln!(
            out,
            "{:<10} {:>6}  {t1:>8.3} {t2:>8.3} {t3:>8.3}  {p1:>7.2} {p2:>7.2} {p3:>7.2}  {latency:>10}",
            r.controller, r.stable
        )?;
        if let Some(why) = &r.failure {
            writeln!(out, "{:<10} stopped: {why}", "")?;
        }
    }
    let mean = |kind: ControllerKind| {
        reports.iter().find(|r| r.controller == kind.as_str()).and_then(|r| r.latency).map(|l| l.mean_ms)
    };
    if let (Some(nmpc), Some(hybrid)) = (mean(ControllerKind::Nmpc), mean(ControllerKind::Hybrid)) {
        writeln!(out, "hybrid speedup over nmpc: {:.1}x", nmpc / hybrid)?;
    }
    Ok(())
}

fn bench(
    path: &Path,
    kinds: &[ControllerKind],
    overrides: &Overrides,
    iterations: usize,
    warmup: usize,
) -> Result<ExitCode, Error> {
    let config = load_scenario(path, overrides)?;
    let mut kinds = kinds.to_vec();
    if kinds.is_empty() {
        kinds.push(ControllerKind::Nmpc);
        if config.model.is_some() {
            kinds.push(ControllerKind::Hybrid);
        }
    }
    if kinds.contains(&ControllerKind::None) {
        return Err(Error::InvalidArgument("`none` has no controller to time".into()));
    }
    let policy = load_policy(&config, kinds.iter().any(|k| k.needs_model()))?;
    // every controller replays the same stream recorded from the NMPC loop
    let recorded = run_kind(&config, ControllerKind::Nmpc, None)?;
    if let Some(why) = &recorded.failure {
        eprintln!("recording run unstable: {why}");
        return Ok(ExitCode::from(EXIT_UNSTABLE));
    }
    let stream: Vec<Measurements> = recorded.series.samples.iter().map(|s| s.measurements).collect();
    if stream.is_empty() {
        return Err(Error::InvalidArgument("recorded run is empty".into()));
    }
    let inputs: Vec<Measurements> = stream.iter().copied().cycle().take(warmup + iterations).collect();
    let mut results: Vec<(ControllerKind, LatencyStats)> = Vec::new();
    for &kind in &kinds {
        let mut controller = build_controller(&config, kind, policy.as_ref())?.expect("controller for timed kind");
        results.push((kind, bench_controller(controller.as_mut(), &inputs, warmup)?));
    }
    let mut out = io::stdout().lock();
    writeln!(out, "{:<10} {:>8} {:>12} {:>12} {:>12} {:>12}", "controller", "steps", "mean ms", "median ms", "p99 ms", "max ms")?;
    for (kind, s) in &results {
        writeln!(
            out,
            "{:<10} {:>8} {:>12.5} {:>12.5} {:>12.5} {:>12.5}",
            kind.as_str(),
            s.samples,
            s.mean_ms,
            s.median_ms,
            s.p99_ms,
            s.max_ms
        )?;
    }
    let mean = |k: ControllerKind| results.iter().find(|(kind, _)| *kind == k).map(|(_, s)| s.mean_ms);
    if let (Some(nmpc), Some(hybrid)) = (mean(ControllerKind::Nmpc), mean(ControllerKind::Hybrid)) {
        writeln!(out, "hybrid speedup over nmpc: {:.1}x", nmpc / hybrid)?;
    }
    Ok(ExitCode::SUCCESS)
}
