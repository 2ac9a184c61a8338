use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fpso::benchmarks::{BenchmarkFn, ObjectiveId};
use fpso::calibration::{
    calibrate, distance_histogram, scaling_sweep, CalibrationConfig, HistogramSpec, SweepAxis,
    SweepPoint,
};
use fpso::experiments::{
    emit_plot_data, load_sigma_stag, read_records, run_experiment, summarize, write_outputs,
    ExperimentConfig, PlotKind, PlotSource,
};
use fpso::phase_stats::{verify_all, verify_recovery_bound, HarnessConfig};
use fpso::stopping::StoppingRule;
use fpso::swarm::{Mode, STANDARD_CHI, STANDARD_DELTA};
use fpso::telemetry::WindowMode;

type Res<T> = Result<T, Box<dyn Error>>;

/// Forced-step particle swarm optimisation experiments.
///
/// Replicates, calibration trials and verification batches run in parallel;
/// set FPSO_THREADS to cap the worker count.
#[derive(Parser)]
#[command(name = "fpso", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replicated optimisation runs with a budget or forcing-frequency stop.
    Run(RunArgs),
    /// Measure the stagnation frequency with attractors planted at the optimum.
    Calibrate(CalibrateArgs),
    /// Repeat the calibration along one axis.
    Sweep(SweepArgs),
    /// Monte-Carlo checks of the pulsation phases; exits non-zero on failure.
    Verify(VerifyArgs),
    /// Median, standard deviation and geometric mean of stored runs.
    Summarize(SummarizeArgs),
    /// Whitespace-separated plot data.
    Plotdata(PlotArgs),
}

#[derive(Args, Clone)]
struct SwarmArgs {
    #[arg(long, default_value = "sphere")]
    objective: BenchmarkFn,
    #[arg(long, default_value_t = 5)]
    particles: usize,
    #[arg(long, default_value_t = 15)]
    dimensions: usize,
    #[arg(long, default_value_t = STANDARD_DELTA)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    swarm: SwarmArgs,
    /// Window length for the frequency rules and telemetry.
    #[arg(long, default_value_t = 50_000)]
    mu: u64,
    #[arg(long, default_value_t = 1350)]
    gamma: u64,
    /// Switches to the partial stop with this κ.
    #[arg(long)]
    kappa: Option<f64>,
    /// Stagnation frequency, or a calibration summary JSON. Without it the run
    /// stops on the budget only.
    #[arg(long)]
    sigma_stag: Option<String>,
    #[arg(long, default_value_t = 15_000_000)]
    budget: u64,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long, default_value = "forced")]
    mode: Mode,
    #[arg(long, default_value_t = 1000)]
    log_every: u64,
    #[arg(long, default_value = "sliding")]
    window_mode: WindowMode,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct CalibrationArgs {
    #[command(flatten)]
    swarm: SwarmArgs,
    #[arg(long, default_value_t = 50_000)]
    mu: u64,
    #[arg(long, default_value_t = STANDARD_CHI)]
    chi: f64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 10)]
    intervals: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
}

impl CalibrationArgs {
    fn config(&self) -> CalibrationConfig {
        let s = &self.swarm;
        let mut c = CalibrationConfig::new(s.particles, s.dimensions, self.mu)
            .with_trials(self.trials, self.intervals)
            .with_seed(s.seed)
            .with_delta(s.delta)
            .with_objective(s.objective);
        c.chi = self.chi;
        c.warmup_intervals = self.warmup;
        c
    }
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    cal: CalibrationArgs,
    #[arg(long, default_value = "calibration")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cal: CalibrationArgs,
    /// dimensions, particles, interval-length or delta.
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated values along the axis.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long, default_value = "sweep")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 5)]
    particles: usize,
    #[arg(long, default_value_t = 15)]
    dimensions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Minimum sample count per lemma.
    #[arg(long, default_value_t = 1_000_000)]
    samples: u64,
    /// Additional χ values for the recovery bound.
    #[arg(long, value_delimiter = ',')]
    chi: Vec<f64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Output directory of `run`, or a records JSON file.
    #[arg(long, default_value = "results")]
    input: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// forcing-vs-iteration, frequency-vs-d, frequency-vs-n,
    /// frequency-vs-interval or distance-histogram.
    #[arg(long)]
    kind: PlotKind,
    /// Run directory (forcing-vs-iteration) or sweep JSON (frequency plots).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value = "cumulative")]
    window_mode: WindowMode,
    /// Calibration settings for the distance histogram.
    #[command(flatten)]
    cal: CalibrationArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(text: &str, out: Option<&Path>) -> Res<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn run(a: RunArgs) -> Res<ExitCode> {
    let s = &a.swarm;
    let obj = ObjectiveId::new(s.objective, s.dimensions)?;
    let rule = match &a.sigma_stag {
        None => StoppingRule::MaxIterations { limit: a.budget },
        Some(arg) => {
            let sigma_stag = load_sigma_stag(arg)?;
            match a.kappa {
                Some(kappa) => StoppingRule::PartialStop {
                    sigma_stag,
                    gamma: a.gamma,
                    mu: a.mu,
                    kappa,
                },
                None => StoppingRule::FullStop {
                    sigma_stag,
                    gamma: a.gamma,
                    mu: a.mu,
                },
            }
        }
    };
    let has_frequency_rule = rule.window().is_some();
    let mut cfg = ExperimentConfig::new(obj, s.particles, rule)
        .with_budget(has_frequency_rule.then_some(a.budget))
        .with_replicates(a.replicates)
        .with_seed(s.seed);
    cfg.swarm.delta = s.delta;
    cfg.swarm.mode = a.mode;
    cfg.log_every = a.log_every;
    cfg.window = a.mu;
    cfg.window_mode = a.window_mode;
    cfg.output_dir = Some(a.out.clone());
    let records = run_experiment(&cfg)?;
    let summary = write_outputs(&cfg, &records, &a.out)?;
    fs::write(
        a.out.join("config.json"),
        serde_json::to_string_pretty(&cfg)?,
    )?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}

fn calibrate_cmd(a: CalibrateArgs) -> Res<ExitCode> {
    let result = calibrate(&a.cal.config())?;
    fs::create_dir_all(&a.out)?;
    result.write_csv(fs::File::create(a.out.join("calibration.csv"))?)?;
    let summary = result.summary();
    fs::write(
        a.out.join("calibration.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    println!(
        "sigma_stag = {} (mean {:.1}, std {:.1}, standard error {:.1}); gamma of about {:.0} covers 3 std",
        summary.sigma_stag,
        summary.sigma_stag_mean,
        summary.sigma_stag_std,
        summary.standard_error,
        3.0 * summary.sigma_stag_std
    );
    if summary.attractor_updates > 0 {
        eprintln!(
            "warning: {} attractor updates during calibration",
            summary.attractor_updates
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep_cmd(a: SweepArgs) -> Res<ExitCode> {
    let points = scaling_sweep(a.axis, &a.values, &a.cal.config())?;
    fs::create_dir_all(&a.out)?;
    fs::write(
        a.out.join("sweep.json"),
        serde_json::to_string_pretty(&points)?,
    )?;
    let kind = match a.axis {
        SweepAxis::Dimensions => Some(PlotKind::FrequencyVsD),
        SweepAxis::Particles => Some(PlotKind::FrequencyVsN),
        SweepAxis::IntervalLength => Some(PlotKind::FrequencyVsInterval),
        SweepAxis::Delta => None,
    };
    if let Some(kind) = kind {
        let text = emit_plot_data(kind, &PlotSource::Sweep(&points))?;
        fs::write(a.out.join("sweep.dat"), text)?;
    }
    for p in &points {
        println!(
            "{} -> sigma_stag {:.1} (std {:.1})",
            p.value, p.result.sigma_stag_mean, p.result.sigma_stag_std
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn verify_cmd(a: VerifyArgs) -> Res<ExitCode> {
    let cfg = HarnessConfig::new(a.particles, a.dimensions).with_seed(a.seed);
    let suite = verify_all(&cfg, a.samples)?;
    let extra = if a.chi.is_empty() {
        Vec::new()
    } else {
        verify_recovery_bound(&cfg, a.samples, &a.chi)?
    };
    let pass = suite.pass() && extra.iter().all(|r| r.pass);
    let report = serde_json::json!({
        "pass": pass,
        "suite": suite,
        "recovery_bound_by_chi": extra,
    });
    emit(&serde_json::to_string_pretty(&report)?, a.out.as_deref())?;
    for r in suite.lemmas.iter().chain(&extra) {
        eprintln!(
            "{:?}: statistic {:.6} expected {:.6} samples {} -> {}",
            r.lemma,
            r.statistic,
            r.expected,
            r.samples,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    eprintln!(
        "theorem: {}",
        if suite.theorem.pass { "pass" } else { "FAIL" }
    );
    Ok(if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn summarize_cmd(a: SummarizeArgs) -> Res<ExitCode> {
    let records = read_records(&a.input)?;
    println!("{}", serde_json::to_string_pretty(&summarize(&records)?)?);
    Ok(ExitCode::SUCCESS)
}

fn plot_cmd(a: PlotArgs) -> Res<ExitCode> {
    let need_input = || {
        a.input
            .clone()
            .ok_or("--input is required for this plot kind")
    };
    let text = match a.kind {
        PlotKind::ForcingVsIteration => {
            let records = read_records(&need_input()?)?;
            emit_plot_data(
                a.kind,
                &PlotSource::Records {
                    records: &records,
                    mode: a.window_mode,
                },
            )?
        }
        PlotKind::FrequencyVsD | PlotKind::FrequencyVsN | PlotKind::FrequencyVsInterval => {
            let points: Vec<SweepPoint> =
                serde_json::from_str(&fs::read_to_string(need_input()?)?)?;
            emit_plot_data(a.kind, &PlotSource::Sweep(&points))?
        }
        PlotKind::DistanceHistogram => {
            let h = distance_histogram(&a.cal.config(), &HistogramSpec::default())?;
            emit_plot_data(a.kind, &PlotSource::Histogram(&h))?
        }
    };
    emit(&text, a.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Summarize(a) => summarize_cmd(a),
        Command::Plotdata(a) => plot_cmd(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}
