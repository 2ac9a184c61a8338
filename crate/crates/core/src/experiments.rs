//! Experiment runner: replicated optimisation runs, persisted records,
//! summary statistics and plot data.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmarks::{BenchmarkError, ObjectiveId};
use crate::calibration::{
    mean_and_std, CalibrationSummary, DistanceHistogram, ForcingCounter, SweepAxis, SweepPoint,
};
use crate::parallel::map_ordered;
use crate::stopping::{evaluate_all, StoppingError, StoppingRule, TerminationReport};
use crate::swarm::{SwarmConfig, SwarmError, SwarmState};
use crate::telemetry::{windows_in_mode, IntervalStats, WindowMode};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Stopping(#[from] StoppingError),
    #[error(transparent)]
    Swarm(#[from] SwarmError),
    #[error(transparent)]
    Benchmark(#[from] BenchmarkError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("no records to summarise")]
    Empty,
    #[error("records lack the telemetry needed for {0}")]
    MissingTelemetry(&'static str),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub objective: ObjectiveId,
    /// `rng_seed` is the master seed; replicate `k` runs on stream `k`.
    pub swarm: SwarmConfig,
    pub rule: StoppingRule,
    /// Iteration cap attached to a frequency rule.
    pub budget: Option<u64>,
    pub replicates: usize,
    pub log_every: u64,
    /// Telemetry window length when the rule has none of its own.
    pub window: u64,
    pub window_mode: WindowMode,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Standard swarm on the objective's default box.
    pub fn new(objective: ObjectiveId, num_particles: usize, rule: StoppingRule) -> Self {
        let (lo, hi) = objective.default_init_box();
        let mut swarm = SwarmConfig::standard(num_particles, objective.dimension, 0.0, 1.0);
        swarm.init_low = lo;
        swarm.init_high = hi;
        Self {
            objective,
            swarm,
            rule,
            budget: None,
            replicates: 100,
            log_every: 1000,
            window: 50_000,
            window_mode: WindowMode::Sliding,
            output_dir: None,
        }
    }

    pub fn with_budget(mut self, budget: Option<u64>) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_replicates(mut self, replicates: usize) -> Self {
        self.replicates = replicates;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.swarm.rng_seed = seed;
        self
    }

    pub fn rules(&self) -> Vec<StoppingRule> {
        let mut rules = vec![self.rule.clone()];
        if let Some(limit) = self.budget {
            rules.push(StoppingRule::MaxIterations { limit });
        }
        rules
    }

    /// Telemetry window: the rule's `μ` for frequency rules, `window` otherwise.
    pub fn window_length(&self) -> u64 {
        self.rule.window().unwrap_or(self.window)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.replicates == 0 {
            return Err(ExperimentError::Invalid(
                "replicates must be at least 1".into(),
            ));
        }
        if self.log_every == 0 || self.window_length() == 0 {
            return Err(ExperimentError::Invalid(
                "log_every and the window length must be at least 1".into(),
            ));
        }
        if self.objective.dimension != self.swarm.num_dimensions {
            return Err(ExperimentError::Invalid(format!(
                "objective has {} dimensions, swarm {}",
                self.objective.dimension, self.swarm.num_dimensions
            )));
        }
        self.swarm.validate()?;
        for r in self.rules() {
            r.validate(self.swarm.num_dimensions)?;
        }
        Ok(())
    }

    pub fn replicate_swarm(&self, replicate: usize) -> SwarmConfig {
        let mut cfg = self.swarm.clone();
        cfg.rng_stream = replicate as u64;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub iteration: u64,
    pub best_value: f64,
    pub gradient_norm: f64,
    /// `σ` of the window ending at this iteration, if one does.
    pub window_sigma: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub replicate: usize,
    pub seed: u64,
    pub objective: ObjectiveId,
    pub swarm: SwarmConfig,
    pub rules: Vec<StoppingRule>,
    pub termination: TerminationReport,
    pub series: Vec<SeriesRow>,
    /// Consecutive windows `[kμ, (k+1)μ)`, independent of the reporting mode.
    pub windows: Vec<IntervalStats>,
    pub final_global: Vec<f64>,
    pub final_value: f64,
    pub final_gradient_norm: f64,
    pub wall_time_secs: f64,
}

impl RunRecord {
    pub fn iter_term(&self) -> u64 {
        self.termination.iteration
    }
}

/// Runs one replicate until a rule fires.
pub fn run_replicate(
    config: &ExperimentConfig,
    replicate: usize,
) -> Result<RunRecord, ExperimentError> {
    let started = Instant::now();
    let rules = config.rules();
    let obj = config.objective;
    let mu = config.window_length();
    let mut swarm = SwarmState::initialize(config.replicate_swarm(replicate), &obj)?;
    let mut counter = ForcingCounter::new(config.swarm.num_dimensions);
    let mut windows: Vec<IntervalStats> = Vec::new();
    let mut series = Vec::new();
    let log = |swarm: &SwarmState, window_sigma| -> Result<SeriesRow, ExperimentError> {
        Ok(SeriesRow {
            iteration: swarm.iteration(),
            best_value: swarm.global_value(),
            gradient_norm: obj.gradient_norm(swarm.global_attractor())?,
            window_sigma,
        })
    };
    series.push(log(&swarm, None)?);
    let termination = loop {
        swarm.step_iteration_with(&obj, &mut counter)?;
        let it = swarm.iteration();
        let closed = it % mu == 0;
        if closed {
            windows.push(counter.take(it - mu, it));
        }
        let latest = if closed { windows.last() } else { None };
        let report = evaluate_all(&rules, latest, it);
        if closed || report.is_some() || it % config.log_every == 0 {
            series.push(log(&swarm, latest.map(|w| w.total_forced))?);
        }
        if let Some(r) = report {
            break r;
        }
    };
    Ok(RunRecord {
        replicate,
        seed: config.swarm.rng_seed,
        objective: obj,
        swarm: config.replicate_swarm(replicate),
        rules,
        termination,
        final_global: swarm.global_attractor().to_vec(),
        final_value: swarm.global_value(),
        final_gradient_norm: obj.gradient_norm(swarm.global_attractor())?,
        series,
        windows,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// All replicates, in replicate order regardless of the thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunRecord>, ExperimentError> {
    config.validate()?;
    map_ordered((0..config.replicates).collect(), |k| {
        run_replicate(config, k)
    })
    .into_iter()
    .collect()
}

/// Lower-middle element for even counts.
pub fn median_lower(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// Geometric mean over the positive values and the number of values left out.
pub fn geometric_mean(values: &[f64]) -> (Option<f64>, usize) {
    let positive: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).collect();
    let excluded = values.len() - positive.len();
    if positive.is_empty() {
        return (None, excluded);
    }
    let log_mean = positive.iter().map(|v| v.ln()).sum::<f64>() / positive.len() as f64;
    (Some(log_mean.exp()), excluded)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Statistic {
    pub median: f64,
    pub std_deviation: f64,
    pub geometric_mean: Option<f64>,
    pub excluded_nonpositive: usize,
    pub min: f64,
    pub max: f64,
}

impl Statistic {
    pub fn of(values: &[f64]) -> Result<Self, ExperimentError> {
        let median = median_lower(values).ok_or(ExperimentError::Empty)?;
        let (_, std_deviation) = mean_and_std(values);
        let (geometric_mean, excluded_nonpositive) = geometric_mean(values);
        Ok(Self {
            median,
            std_deviation,
            geometric_mean,
            excluded_nonpositive,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub replicates: usize,
    pub iter_term: Statistic,
    pub gradient_norm: Statistic,
    pub final_value: Statistic,
}

pub fn summarize(records: &[RunRecord]) -> Result<SummaryStats, ExperimentError> {
    let pick = |f: fn(&RunRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
    Ok(SummaryStats {
        replicates: records.len(),
        iter_term: Statistic::of(&pick(|r| r.iter_term() as f64))?,
        gradient_norm: Statistic::of(&pick(|r| r.final_gradient_norm))?,
        final_value: Statistic::of(&pick(|r| r.final_value))?,
    })
}

/// Resolves `--sigma-stag`: an integer, or a path to a calibration summary JSON.
pub fn load_sigma_stag(arg: &str) -> Result<u64, ExperimentError> {
    if let Ok(v) = arg.trim().parse::<u64>() {
        return Ok(v);
    }
    let path = Path::new(arg);
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let summary: CalibrationSummary = serde_json::from_str(&text)?;
    Ok(summary.sigma_stag)
}

pub const RUNS_CSV: &str = "runs.csv";
pub const SERIES_CSV: &str = "series.csv";
pub const WINDOWS_CSV: &str = "windows.csv";
pub const RECORDS_JSON: &str = "records.json";
pub const SUMMARY_JSON: &str = "summary.json";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_runs_csv<W: std::io::Write>(
    records: &[RunRecord],
    out: W,
) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "replicate",
        "seed",
        "stream",
        "cause",
        "iter_term",
        "triggering_sigma",
        "threshold",
        "final_value",
        "final_gradient_norm",
    ])?;
    for r in records {
        let cause = serde_json::to_value(r.termination.cause)?;
        w.write_record([
            r.replicate.to_string(),
            r.seed.to_string(),
            r.swarm.rng_stream.to_string(),
            cause.as_str().unwrap_or_default().to_string(),
            r.termination.iteration.to_string(),
            r.termination.triggering_sigma.to_string(),
            r.termination.threshold.to_string(),
            r.final_value.to_string(),
            r.final_gradient_norm.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(Path::new("<runs>")))?;
    Ok(())
}

pub fn write_series_csv<W: std::io::Write>(
    records: &[RunRecord],
    out: W,
) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "replicate",
        "iteration",
        "best_value",
        "gradient_norm",
        "window_sigma",
    ])?;
    for r in records {
        for s in &r.series {
            w.write_record([
                r.replicate.to_string(),
                s.iteration.to_string(),
                s.best_value.to_string(),
                s.gradient_norm.to_string(),
                opt(s.window_sigma),
            ])?;
        }
    }
    w.flush().map_err(io_err(Path::new("<series>")))?;
    Ok(())
}

pub fn write_windows_csv<W: std::io::Write>(
    records: &[RunRecord],
    mode: WindowMode,
    out: W,
) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    let dims = records.first().map_or(0, |r| r.swarm.num_dimensions);
    w.write_record(IntervalStats::csv_header(dims))?;
    for r in records {
        for (k, s) in windows_in_mode(&r.windows, mode).iter().enumerate() {
            w.write_record(s.csv_record(r.replicate, k, mode))?;
        }
    }
    w.flush().map_err(io_err(Path::new("<windows>")))?;
    Ok(())
}

fn create(path: &Path) -> Result<fs::File, ExperimentError> {
    fs::File::create(path).map_err(io_err(path))
}

/// Writes the CSV tables, the records and the summary into `dir`.
/// CSV files carry no timing data, so equal configs give byte-identical CSVs.
pub fn write_outputs(
    config: &ExperimentConfig,
    records: &[RunRecord],
    dir: &Path,
) -> Result<SummaryStats, ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_runs_csv(records, create(&dir.join(RUNS_CSV))?)?;
    write_series_csv(records, create(&dir.join(SERIES_CSV))?)?;
    write_windows_csv(records, config.window_mode, create(&dir.join(WINDOWS_CSV))?)?;
    let summary = summarize(records)?;
    let path = dir.join(RECORDS_JSON);
    fs::write(&path, serde_json::to_string_pretty(records)?).map_err(io_err(&path))?;
    let path = dir.join(SUMMARY_JSON);
    fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(io_err(&path))?;
    Ok(summary)
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, ExperimentError> {
    let path = if path.is_dir() {
        path.join(RECORDS_JSON)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    ForcingVsIteration,
    FrequencyVsD,
    FrequencyVsN,
    FrequencyVsInterval,
    DistanceHistogram,
}

impl std::str::FromStr for PlotKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "forcing_vs_iteration" => Ok(PlotKind::ForcingVsIteration),
            "frequency_vs_d" => Ok(PlotKind::FrequencyVsD),
            "frequency_vs_n" => Ok(PlotKind::FrequencyVsN),
            "frequency_vs_interval" => Ok(PlotKind::FrequencyVsInterval),
            "distance_histogram" => Ok(PlotKind::DistanceHistogram),
            other => Err(format!("unknown plot kind `{other}`")),
        }
    }
}

pub enum PlotSource<'a> {
    Records {
        records: &'a [RunRecord],
        mode: WindowMode,
    },
    Sweep(&'a [SweepPoint]),
    Histogram(&'a DistanceHistogram),
}

/// Whitespace-separated columns with `#` header lines.
pub fn emit_plot_data(kind: PlotKind, source: &PlotSource) -> Result<String, ExperimentError> {
    let mut out = String::new();
    match (kind, source) {
        (PlotKind::ForcingVsIteration, PlotSource::Records { records, mode }) => {
            let first = records.first().ok_or(ExperimentError::Empty)?;
            let dims = first.swarm.num_dimensions;
            for r in records.iter() {
                if r.windows.is_empty() {
                    return Err(ExperimentError::MissingTelemetry("forcing_vs_iteration"));
                }
                let _ = writeln!(
                    out,
                    "# replicate {} objective {} windows {}",
                    r.replicate,
                    r.objective.function,
                    mode.name()
                );
                let mut header = String::from("# interval");
                for d in 1..=dims {
                    let _ = write!(header, " sigma_d_{d}");
                }
                let _ = writeln!(out, "{header} best_value");
                for (k, w) in windows_in_mode(&r.windows, *mode).iter().enumerate() {
                    let best = r
                        .series
                        .iter()
                        .find(|s| s.iteration == w.interval_end)
                        .map(|s| s.best_value)
                        .ok_or(ExperimentError::MissingTelemetry("forcing_vs_iteration"))?;
                    let _ = write!(out, "{}", k + 1);
                    for c in &w.per_dim_forced {
                        let _ = write!(out, " {c}");
                    }
                    let _ = writeln!(out, " {best:e}");
                }
                out.push('\n');
            }
        }
        (
            PlotKind::FrequencyVsD | PlotKind::FrequencyVsN | PlotKind::FrequencyVsInterval,
            PlotSource::Sweep(points),
        ) => {
            if points.is_empty() {
                return Err(ExperimentError::Empty);
            }
            let (axis, label) = match kind {
                PlotKind::FrequencyVsD => (SweepAxis::Dimensions, "D sigma_per_dim std_per_dim"),
                PlotKind::FrequencyVsN => (
                    SweepAxis::Particles,
                    "N sigma_per_particle std_per_particle",
                ),
                _ => (
                    SweepAxis::IntervalLength,
                    "interval_length sigma_per_iteration std_per_iteration",
                ),
            };
            let _ = writeln!(out, "# {label}");
            for p in points.iter() {
                let c = &p.result.config;
                let scale = match axis {
                    SweepAxis::Dimensions => c.num_dimensions as f64,
                    SweepAxis::Particles => c.num_particles as f64,
                    _ => c.mu as f64,
                };
                let _ = writeln!(
                    out,
                    "{} {} {}",
                    p.value,
                    p.result.sigma_stag_mean / scale,
                    p.result.sigma_stag_std / scale
                );
            }
        }
        (PlotKind::DistanceHistogram, PlotSource::Histogram(h)) => {
            if h.samples == 0 {
                return Err(ExperimentError::MissingTelemetry("distance_histogram"));
            }
            let _ = writeln!(out, "# distance_over_delta count fraction");
            for (k, &c) in h.counts.iter().enumerate() {
                let centre = 0.5 * (h.edges[k] + h.edges[k + 1]);
                let _ = writeln!(out, "{centre} {c} {}", c as f64 / h.samples as f64);
            }
        }
        (PlotKind::ForcingVsIteration, _) => {
            return Err(ExperimentError::MissingTelemetry("forcing_vs_iteration"))
        }
        (PlotKind::DistanceHistogram, _) => {
            return Err(ExperimentError::MissingTelemetry("distance_histogram"))
        }
        _ => return Err(ExperimentError::MissingTelemetry("sweep plots")),
    }
    Ok(out)
}
