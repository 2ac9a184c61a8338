//! Measurement of the stagnation frequency with all attractors planted at an optimum.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmarks::{BenchmarkError, BenchmarkFn, ObjectiveId};
use crate::parallel::map_ordered;
use crate::swarm::{
    DimensionMove, MoveObserver, MoveOutcome, SwarmConfig, SwarmError, SwarmState, STANDARD_CHI,
    STANDARD_DELTA,
};
use crate::telemetry::IntervalStats;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("invalid calibration config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Benchmark(#[from] BenchmarkError),
    #[error(transparent)]
    Swarm(#[from] SwarmError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub num_particles: usize,
    pub num_dimensions: usize,
    pub mu: u64,
    pub delta: f64,
    pub chi: f64,
    pub trials: usize,
    pub intervals_per_trial: usize,
    pub warmup_intervals: usize,
    pub seed: u64,
    /// Function whose optimum hosts the planted attractors.
    pub objective: BenchmarkFn,
}

impl CalibrationConfig {
    /// Standard coefficients, 100 trials of 10 windows after one warm-up window.
    pub fn new(num_particles: usize, num_dimensions: usize, mu: u64) -> Self {
        Self {
            num_particles,
            num_dimensions,
            mu,
            delta: STANDARD_DELTA,
            chi: STANDARD_CHI,
            trials: 100,
            intervals_per_trial: 10,
            warmup_intervals: 1,
            seed: 0,
            objective: BenchmarkFn::Sphere,
        }
    }

    pub fn with_trials(mut self, trials: usize, intervals_per_trial: usize) -> Self {
        self.trials = trials;
        self.intervals_per_trial = intervals_per_trial;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_objective(mut self, objective: BenchmarkFn) -> Self {
        self.objective = objective;
        self
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if self.trials == 0 || self.intervals_per_trial == 0 {
            return Err(CalibrationError::Invalid(
                "need at least one trial and one interval per trial".into(),
            ));
        }
        if self.mu == 0 {
            return Err(CalibrationError::Invalid("mu must be at least 1".into()));
        }
        Ok(())
    }

    pub fn objective_id(&self) -> Result<ObjectiveId, BenchmarkError> {
        ObjectiveId::new(self.objective, self.num_dimensions)
    }

    /// Swarm configuration for trial `trial`; the trial index selects the RNG stream.
    pub fn swarm_config(&self, trial: usize) -> SwarmConfig {
        let mut cfg = SwarmConfig::standard(self.num_particles, self.num_dimensions, -1.0, 1.0)
            .with_seed(self.seed, trial as u64)
            .with_delta(self.delta);
        cfg.chi = self.chi;
        cfg
    }

    /// Planted swarm for `trial`: `X = L = G =` optimum, `V = 0`.
    pub fn planted_swarm(
        &self,
        trial: usize,
    ) -> Result<(SwarmState, ObjectiveId), CalibrationError> {
        let obj = self.objective_id()?;
        let swarm = SwarmState::planted(self.swarm_config(trial), &obj, &obj.known_optimum())?;
        Ok((swarm, obj))
    }
}

/// Counts forced updates per dimension and attractor movements.
#[derive(Debug, Clone)]
pub struct ForcingCounter {
    pub per_dim: Vec<u64>,
    pub attractor_moves: u64,
}

impl ForcingCounter {
    pub fn new(num_dimensions: usize) -> Self {
        Self {
            per_dim: vec![0; num_dimensions],
            attractor_moves: 0,
        }
    }

    pub fn take(&mut self, start: u64, end: u64) -> IntervalStats {
        let mut s = IntervalStats::new(start, end, self.per_dim.len());
        s.per_dim_forced.copy_from_slice(&self.per_dim);
        s.total_forced = self.per_dim.iter().sum();
        self.per_dim.iter_mut().for_each(|c| *c = 0);
        s
    }
}

impl MoveObserver for ForcingCounter {
    #[inline]
    fn dimension_moved(&mut self, ev: &DimensionMove) {
        self.per_dim[ev.dim] += ev.forced as u64;
    }

    fn particle_moved(&mut self, _iteration: u64, outcome: &MoveOutcome) {
        self.attractor_moves += outcome.attractor_moved as u64;
    }
}

/// Runs `windows` windows of length `mu` and returns one [`IntervalStats`] each.
pub fn count_windows(
    swarm: &mut SwarmState,
    objective: &ObjectiveId,
    mu: u64,
    windows: usize,
    counter: &mut ForcingCounter,
) -> Result<Vec<IntervalStats>, SwarmError> {
    let mut out = Vec::with_capacity(windows);
    for _ in 0..windows {
        let start = swarm.iteration();
        for _ in 0..mu {
            swarm.step_iteration_with(objective, counter)?;
        }
        out.push(counter.take(start, swarm.iteration()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    /// Counted windows only; warm-up windows are dropped.
    pub windows: Vec<IntervalStats>,
    pub attractor_updates: u64,
}

impl TrialResult {
    pub fn mean_sigma(&self) -> f64 {
        self.windows
            .iter()
            .map(|w| w.total_forced as f64)
            .sum::<f64>()
            / self.windows.len() as f64
    }
}

pub fn run_trial(
    config: &CalibrationConfig,
    trial: usize,
) -> Result<TrialResult, CalibrationError> {
    let (mut swarm, obj) = config.planted_swarm(trial)?;
    let mut counter = ForcingCounter::new(config.num_dimensions);
    let mut windows = count_windows(
        &mut swarm,
        &obj,
        config.mu,
        config.warmup_intervals + config.intervals_per_trial,
        &mut counter,
    )?;
    windows.drain(..config.warmup_intervals);
    Ok(TrialResult {
        trial,
        windows,
        attractor_updates: counter.attractor_moves,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub config: CalibrationConfig,
    /// Mean over trials of the per-trial mean window count.
    pub sigma_stag_mean: f64,
    /// Sample standard deviation of the per-trial means.
    pub sigma_stag_std: f64,
    pub per_dim_mean: Vec<f64>,
    pub trial_means: Vec<f64>,
    pub trials: Vec<TrialResult>,
    /// Attractor moves across all trials; zero except for measure-zero ties.
    pub attractor_updates: u64,
}

impl CalibrationResult {
    /// Rounded mean, the value handed to the stopping rules.
    pub fn sigma_stag(&self) -> u64 {
        self.sigma_stag_mean.round() as u64
    }

    pub fn standard_error(&self) -> f64 {
        self.sigma_stag_std / (self.trial_means.len() as f64).sqrt()
    }

    /// Mean relative frequency `σ(I)/|I|` and its standard error.
    pub fn relative_rate(&self) -> (f64, f64) {
        let mu = self.config.mu as f64;
        (self.sigma_stag_mean / mu, self.standard_error() / mu)
    }

    pub fn summary(&self) -> CalibrationSummary {
        CalibrationSummary {
            num_particles: self.config.num_particles,
            num_dimensions: self.config.num_dimensions,
            mu: self.config.mu,
            delta: self.config.delta,
            chi: self.config.chi,
            trials: self.config.trials,
            intervals_per_trial: self.config.intervals_per_trial,
            warmup_intervals: self.config.warmup_intervals,
            seed: self.config.seed,
            objective: self.config.objective,
            sigma_stag: self.sigma_stag(),
            sigma_stag_mean: self.sigma_stag_mean,
            sigma_stag_std: self.sigma_stag_std,
            standard_error: self.standard_error(),
            per_dim_mean: self.per_dim_mean.clone(),
            attractor_updates: self.attractor_updates,
        }
    }

    /// One row per trial per counted window.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CalibrationError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "trial".to_string(),
            "window_index".into(),
            "sigma_total".into(),
        ];
        header.extend((1..=self.config.num_dimensions).map(|d| format!("sigma_d_{d}")));
        w.write_record(&header)?;
        for t in &self.trials {
            for (k, s) in t.windows.iter().enumerate() {
                let mut row = vec![
                    t.trial.to_string(),
                    k.to_string(),
                    s.total_forced.to_string(),
                ];
                row.extend(s.per_dim_forced.iter().map(|c| c.to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Compact calibration output, read back by the experiment runner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub num_particles: usize,
    pub num_dimensions: usize,
    pub mu: u64,
    pub delta: f64,
    pub chi: f64,
    pub trials: usize,
    pub intervals_per_trial: usize,
    pub warmup_intervals: usize,
    pub seed: u64,
    pub objective: BenchmarkFn,
    pub sigma_stag: u64,
    pub sigma_stag_mean: f64,
    pub sigma_stag_std: f64,
    pub standard_error: f64,
    pub per_dim_mean: Vec<f64>,
    pub attractor_updates: u64,
}

pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn calibrate(config: &CalibrationConfig) -> Result<CalibrationResult, CalibrationError> {
    config.validate()?;
    config.objective_id()?;
    let trials = map_ordered((0..config.trials).collect(), |t| run_trial(config, t))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let trial_means: Vec<f64> = trials.iter().map(TrialResult::mean_sigma).collect();
    let (sigma_stag_mean, sigma_stag_std) = mean_and_std(&trial_means);
    let count = (config.trials * config.intervals_per_trial) as f64;
    let mut per_dim_mean = vec![0.0; config.num_dimensions];
    for w in trials.iter().flat_map(|t| &t.windows) {
        for (m, &c) in per_dim_mean.iter_mut().zip(&w.per_dim_forced) {
            *m += c as f64 / count;
        }
    }
    let attractor_updates = trials.iter().map(|t| t.attractor_updates).sum();
    Ok(CalibrationResult {
        config: config.clone(),
        sigma_stag_mean,
        sigma_stag_std,
        per_dim_mean,
        trial_means,
        trials,
        attractor_updates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Dimensions,
    Particles,
    IntervalLength,
    Delta,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "dimensions" | "d" => Ok(SweepAxis::Dimensions),
            "particles" | "n" => Ok(SweepAxis::Particles),
            "interval_length" | "mu" => Ok(SweepAxis::IntervalLength),
            "delta" => Ok(SweepAxis::Delta),
            other => Err(format!("unknown sweep axis `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub result: CalibrationResult,
}

fn as_count(axis: SweepAxis, v: f64) -> Result<u64, CalibrationError> {
    if v >= 1.0 && v.fract() == 0.0 && v < u64::MAX as f64 {
        Ok(v as u64)
    } else {
        Err(CalibrationError::Invalid(format!(
            "{axis:?} sweep needs positive integers, got {v}"
        )))
    }
}

/// One calibration per value along `axis`, all other settings from `base`.
pub fn scaling_sweep(
    axis: SweepAxis,
    values: &[f64],
    base: &CalibrationConfig,
) -> Result<Vec<SweepPoint>, CalibrationError> {
    if values.is_empty() {
        return Err(CalibrationError::Invalid(
            "sweep needs at least one value".into(),
        ));
    }
    values
        .iter()
        .map(|&value| {
            let mut cfg = base.clone();
            match axis {
                SweepAxis::Dimensions => cfg.num_dimensions = as_count(axis, value)? as usize,
                SweepAxis::Particles => cfg.num_particles = as_count(axis, value)? as usize,
                SweepAxis::IntervalLength => cfg.mu = as_count(axis, value)?,
                SweepAxis::Delta => cfg.delta = value,
            }
            Ok(SweepPoint {
                value,
                result: calibrate(&cfg)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    /// Histogram covers `[-half_width·δ, half_width·δ]`.
    pub half_width: f64,
    pub bins: usize,
    pub particle: usize,
    pub dim: usize,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self {
            half_width: 4.0,
            bins: 80,
            particle: 0,
            dim: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceHistogram {
    /// Bin edges in units of δ; `bins + 1` entries.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub below_range: u64,
    pub above_range: u64,
    pub samples: u64,
    /// Mean signed distance in units of δ.
    pub mean: f64,
    /// Batch-means standard error of `mean`, one batch per window.
    pub standard_error: f64,
    /// 99.9% quantile of `|G − X|/δ`.
    pub abs_quantile_999: f64,
}

/// Histogram of one particle's signed distance `G − X` (in units of δ) in one
/// dimension, sampled after every iteration of the counted windows.
pub fn distance_histogram(
    config: &CalibrationConfig,
    spec: &HistogramSpec,
) -> Result<DistanceHistogram, CalibrationError> {
    config.validate()?;
    if spec.bins == 0 || !(spec.half_width > 0.0) {
        return Err(CalibrationError::Invalid(
            "histogram needs bins and a positive width".into(),
        ));
    }
    if spec.particle >= config.num_particles || spec.dim >= config.num_dimensions {
        return Err(CalibrationError::Invalid(
            "histogram particle/dimension out of range".into(),
        ));
    }
    let per_trial = map_ordered((0..config.trials).collect(), |trial| {
        let (mut swarm, obj) = config.planted_swarm(trial)?;
        for _ in 0..config.warmup_intervals as u64 * config.mu {
            swarm.step_iteration(&obj)?;
        }
        let mut values = Vec::with_capacity(config.intervals_per_trial * config.mu as usize);
        for _ in 0..config.intervals_per_trial as u64 * config.mu {
            swarm.step_iteration(&obj)?;
            let g = swarm.global_attractor()[spec.dim];
            let x = swarm.particles()[spec.particle].position[spec.dim];
            values.push((g - x) / config.delta);
        }
        Ok::<_, CalibrationError>(values)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let width = 2.0 * spec.half_width / spec.bins as f64;
    let edges: Vec<f64> = (0..=spec.bins)
        .map(|k| -spec.half_width + k as f64 * width)
        .collect();
    let mut counts = vec![0u64; spec.bins];
    let (mut below, mut above) = (0, 0);
    let mut abs_values = Vec::new();
    let mut batch_means = Vec::new();
    for values in &per_trial {
        for batch in values.chunks(config.mu as usize) {
            batch_means.push(batch.iter().sum::<f64>() / batch.len() as f64);
        }
        for &v in values {
            abs_values.push(v.abs());
            if v < -spec.half_width {
                below += 1;
            } else if v >= spec.half_width {
                above += 1;
            } else {
                let k = ((v + spec.half_width) / width) as usize;
                counts[k.min(spec.bins - 1)] += 1;
            }
        }
    }
    let (mean, batch_std) = mean_and_std(&batch_means);
    let standard_error = batch_std / (batch_means.len() as f64).sqrt();
    abs_values.sort_by(f64::total_cmp);
    let q = ((abs_values.len() as f64 * 0.999).ceil() as usize).clamp(1, abs_values.len()) - 1;
    Ok(DistanceHistogram {
        edges,
        counts,
        below_range: below,
        above_range: above,
        samples: abs_values.len() as u64,
        mean,
        standard_error,
        abs_quantile_999: abs_values[q],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CalibrationConfig {
        CalibrationConfig::new(3, 4, 2000)
            .with_trials(4, 3)
            .with_seed(5)
    }

    #[test]
    fn deterministic_and_bounded() {
        let cfg = small();
        let a = calibrate(&cfg).unwrap();
        let b = calibrate(&cfg).unwrap();
        assert_eq!(a, b);
        let max = (cfg.num_particles * cfg.num_dimensions) as f64 * cfg.mu as f64;
        assert!(a.sigma_stag_mean > 0.0 && a.sigma_stag_mean <= max);
        assert_eq!(a.attractor_updates, 0);
        assert_eq!(a.trials.len(), 4);
        assert!(a.trials.iter().all(|t| t.windows.len() == 3));
        assert_eq!(a.trials[0].windows[0].interval_start, 2000);
        let per_dim: f64 = a.per_dim_mean.iter().sum();
        assert!((per_dim - a.sigma_stag_mean).abs() < 1e-6 * a.sigma_stag_mean);
    }

    #[test]
    fn rejects_empty_protocol() {
        assert!(calibrate(&small().with_trials(0, 3)).is_err());
        assert!(calibrate(&small().with_trials(3, 0)).is_err());
    }

    #[test]
    fn mean_and_std_examples() {
        assert_eq!(mean_and_std(&[2.0, 2.0, 2.0]), (2.0, 0.0));
        let (m, s) = mean_and_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_changes_only_the_axis() {
        let pts = scaling_sweep(SweepAxis::Dimensions, &[2.0, 3.0], &small()).unwrap();
        assert_eq!(pts[0].result.per_dim_mean.len(), 2);
        assert_eq!(pts[1].result.config.num_particles, 3);
        assert!(scaling_sweep(SweepAxis::Particles, &[], &small()).is_err());
        assert!(scaling_sweep(SweepAxis::Particles, &[2.5], &small()).is_err());
    }

    #[test]
    fn csv_has_row_per_trial_window() {
        let r = calibrate(&small()).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "trial,window_index,sigma_total,sigma_d_1,sigma_d_2,sigma_d_3,sigma_d_4"
        );
        assert_eq!(lines.len(), 1 + 4 * 3);
    }

    #[test]
    fn summary_round_trip() {
        let s = calibrate(&small()).unwrap().summary();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(
            serde_json::from_str::<CalibrationSummary>(&json).unwrap(),
            s
        );
    }

    #[test]
    fn histogram_is_centred_and_narrow() {
        let cfg = CalibrationConfig::new(4, 2, 5000)
            .with_trials(2, 4)
            .with_seed(1);
        let h = distance_histogram(&cfg, &HistogramSpec::default()).unwrap();
        assert_eq!(h.samples, 2 * 4 * 5000);
        assert!(h.mean.abs() <= 3.0 * h.standard_error + 1e-12, "{h:?}");
        assert!(h.abs_quantile_999 <= 10.0);
        let total: u64 = h.counts.iter().sum::<u64>() + h.below_range + h.above_range;
        assert_eq!(total, h.samples);
        let peak = h
            .counts
            .iter()
            .enumerate()
            .max_by_key(|(_, c)| **c)
            .unwrap()
            .0;
        let centre = h.counts.len() / 2;
        assert!(peak + 2 >= centre && peak <= centre + 1, "peak bin {peak}");
    }
}
