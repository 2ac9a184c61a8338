//! Monte-Carlo checks of the pulsation-phase structure with fixed attractors.
//!
//! A single observer tallies everything while a planted swarm runs; the
//! `verify_*` functions turn the tallies into [`LemmaReport`]s.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

use crate::benchmarks::{BenchmarkFn, ObjectiveId};
use crate::parallel::{map_ordered, thread_limit};
use crate::swarm::{
    DimensionMove, Fault, Mode, MoveObserver, MoveOutcome, SwarmConfig, SwarmError, SwarmState,
    STANDARD_CHI, STANDARD_DELTA,
};
use crate::telemetry::{PhaseKind, PhaseSample, PhaseTracker};

#[derive(Debug, Error)]
pub enum PhaseStatsError {
    #[error("a sample target of zero proves nothing")]
    NoSamples,
    #[error("collected only {got} of {wanted} samples for {what} within {iterations} iterations")]
    InsufficientSamples {
        what: &'static str,
        got: u64,
        wanted: u64,
        iterations: u64,
    },
    #[error("an attractor moved during a fixed-attractor run")]
    AttractorMoved,
    #[error(transparent)]
    Swarm(#[from] SwarmError),
    #[error("invalid harness config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LemmaId {
    L1Lockout,
    L2HalfProb,
    L3Geometric,
    L4RecoveryBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma: LemmaId,
    pub samples: u64,
    pub statistic: f64,
    pub expected: f64,
    pub standard_error: f64,
    pub pass: bool,
    pub details: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessConfig {
    pub num_particles: usize,
    pub num_dimensions: usize,
    pub chi: f64,
    pub delta: f64,
    pub seed: u64,
    /// Iterations per independent batch; batch `k` uses RNG stream `k`.
    pub batch_iterations: u64,
    pub max_batches: usize,
    pub mode: Mode,
    pub fault: Fault,
}

impl HarnessConfig {
    pub fn new(num_particles: usize, num_dimensions: usize) -> Self {
        Self {
            num_particles,
            num_dimensions,
            chi: STANDARD_CHI,
            delta: STANDARD_DELTA,
            seed: 0,
            batch_iterations: 50_000,
            max_batches: 400,
            mode: Mode::Forced,
            fault: Fault::None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_chi(mut self, chi: f64) -> Self {
        self.chi = chi;
        self
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = fault;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    fn swarm_config(&self, batch: usize) -> SwarmConfig {
        let mut cfg = SwarmConfig::standard(self.num_particles, self.num_dimensions, -1.0, 1.0)
            .with_seed(self.seed, batch as u64)
            .with_delta(self.delta)
            .with_mode(self.mode);
        cfg.chi = self.chi;
        cfg.fault = self.fault;
        cfg
    }
}

/// Sign pattern of the offset `Δ = G − X` before a forced move and the
/// forced velocity `V`, following the six cases of the half-probability proof.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForcedCase {
    /// `V ≥ Δ ≥ 0`
    OvershootPositive,
    /// `Δ > V ≥ 0`
    TowardPositive,
    /// `Δ ≥ 0 > V`
    AwayFromPositive,
    /// `Δ ≤ V < 0`
    TowardNegative,
    /// `V < Δ < 0`
    OvershootNegative,
    /// `Δ < 0 ≤ V`
    AwayFromNegative,
}

impl ForcedCase {
    pub const ALL: [ForcedCase; 6] = [
        ForcedCase::OvershootPositive,
        ForcedCase::TowardPositive,
        ForcedCase::AwayFromPositive,
        ForcedCase::TowardNegative,
        ForcedCase::OvershootNegative,
        ForcedCase::AwayFromNegative,
    ];

    pub fn classify(offset: f64, velocity: f64) -> Self {
        if offset >= 0.0 {
            if velocity >= offset {
                ForcedCase::OvershootPositive
            } else if velocity >= 0.0 {
                ForcedCase::TowardPositive
            } else {
                ForcedCase::AwayFromPositive
            }
        } else if velocity < 0.0 {
            if velocity >= offset {
                ForcedCase::TowardNegative
            } else {
                ForcedCase::OvershootNegative
            }
        } else {
            ForcedCase::AwayFromNegative
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ForcedCase::OvershootPositive => "overshoot_positive",
            ForcedCase::TowardPositive => "toward_positive",
            ForcedCase::AwayFromPositive => "away_from_positive",
            ForcedCase::TowardNegative => "toward_negative",
            ForcedCase::OvershootNegative => "overshoot_negative",
            ForcedCase::AwayFromNegative => "away_from_negative",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

const RUN_BINS: usize = 64;
const RECOVERY_BINS: usize = 512;

/// Summable counts over any number of batches.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhaseTally {
    pub iterations: u64,
    pub lockout_triggers: u64,
    pub lockout_violations: u64,
    /// `(conditioning events, next move forced)` over all dimensions.
    pub half_prob: (u64, u64),
    pub half_prob_by_dim: Vec<(u64, u64)>,
    pub half_prob_by_case: [(u64, u64); 6],
    /// `run_lengths[k]` counts runs of length `k`; the last bin collects longer runs.
    pub run_lengths: Vec<u64>,
    pub run_length_sum: u64,
    /// `(first unforced moves after a forced one, those ending with φ ≥ δ)`.
    pub recovery_hits: (u64, u64),
    pub tracker_violations: u64,
    /// `recovery_lengths[ℓ]`; the last bin collects longer spans.
    pub recovery_lengths: Vec<u64>,
    pub attractor_moves: u64,
}

impl PhaseTally {
    fn new(num_dimensions: usize) -> Self {
        Self {
            half_prob_by_dim: vec![(0, 0); num_dimensions],
            run_lengths: vec![0; RUN_BINS + 1],
            recovery_lengths: vec![0; RECOVERY_BINS + 1],
            ..Default::default()
        }
    }

    fn merge(&mut self, o: &PhaseTally) {
        fn add(a: &mut (u64, u64), b: &(u64, u64)) {
            a.0 += b.0;
            a.1 += b.1;
        }
        self.iterations += o.iterations;
        self.lockout_triggers += o.lockout_triggers;
        self.lockout_violations += o.lockout_violations;
        add(&mut self.half_prob, &o.half_prob);
        for (a, b) in self.half_prob_by_dim.iter_mut().zip(&o.half_prob_by_dim) {
            add(a, b);
        }
        for (a, b) in self.half_prob_by_case.iter_mut().zip(&o.half_prob_by_case) {
            add(a, b);
        }
        for (a, b) in self.run_lengths.iter_mut().zip(&o.run_lengths) {
            *a += b;
        }
        self.run_length_sum += o.run_length_sum;
        add(&mut self.recovery_hits, &o.recovery_hits);
        self.tracker_violations += o.tracker_violations;
        for (a, b) in self.recovery_lengths.iter_mut().zip(&o.recovery_lengths) {
            *a += b;
        }
        self.attractor_moves += o.attractor_moves;
    }

    pub fn runs(&self) -> u64 {
        self.run_lengths.iter().sum()
    }

    pub fn recoveries(&self) -> u64 {
        self.recovery_lengths.iter().sum()
    }
}

/// Streaming state for one batch.
struct PhaseObserver {
    dims: usize,
    particles: u64,
    delta: f64,
    lock_remaining: Vec<u64>,
    prev_forced_case: Vec<Option<ForcedCase>>,
    last_own_forced: Vec<bool>,
    trackers: Vec<PhaseTracker>,
    lockout_step: Vec<u64>,
    tally: PhaseTally,
}

impl PhaseObserver {
    fn new(num_particles: usize, num_dimensions: usize, delta: f64) -> Self {
        Self {
            dims: num_dimensions,
            particles: num_particles as u64,
            delta,
            lock_remaining: vec![0; num_dimensions],
            prev_forced_case: vec![None; num_dimensions],
            last_own_forced: vec![false; num_particles * num_dimensions],
            trackers: (0..num_dimensions)
                .map(|d| PhaseTracker::new(d, num_particles))
                .collect(),
            lockout_step: vec![0; num_dimensions],
            tally: PhaseTally::new(num_dimensions),
        }
    }
}

impl MoveObserver for PhaseObserver {
    fn dimension_moved(&mut self, ev: &DimensionMove) {
        let d = ev.dim;
        let t = &mut self.tally;

        if self.lock_remaining[d] > 0 {
            t.lockout_violations += ev.forced as u64;
            self.lock_remaining[d] -= 1;
        }
        if ev.contribution_after >= self.delta {
            self.lock_remaining[d] = self.particles;
            t.lockout_triggers += 1;
        }

        if let Some(case) = self.prev_forced_case[d] {
            let f = ev.forced as u64;
            t.half_prob.0 += 1;
            t.half_prob.1 += f;
            t.half_prob_by_dim[d].0 += 1;
            t.half_prob_by_dim[d].1 += f;
            t.half_prob_by_case[case.index()].0 += 1;
            t.half_prob_by_case[case.index()].1 += f;
        }
        self.prev_forced_case[d] = ev
            .forced
            .then(|| ForcedCase::classify(ev.offset_before, ev.velocity));

        let slot = ev.particle * self.dims + d;
        if !ev.forced && self.last_own_forced[slot] {
            t.recovery_hits.0 += 1;
            t.recovery_hits.1 += (ev.contribution_after >= self.delta) as u64;
        }
        self.last_own_forced[slot] = ev.forced;

        let sample = PhaseSample {
            iteration: ev.iteration,
            particle: ev.particle,
            forced: ev.forced,
            attractor_updated: false,
        };
        let lockout_step = &mut self.lockout_step[d];
        self.trackers[d]
            .push(sample, |e| match e.kind {
                PhaseKind::ForcedRunEnd => {
                    let len = e.run_length.unwrap_or(0);
                    t.run_lengths[(len as usize).min(RUN_BINS)] += 1;
                    t.run_length_sum += len;
                }
                PhaseKind::LockoutEnd => *lockout_step = e.step,
                PhaseKind::RecoveryEnd => {
                    let len = e.step - *lockout_step;
                    t.recovery_lengths[(len as usize).min(RECOVERY_BINS)] += 1;
                }
                PhaseKind::ForcedRunStart => {}
            })
            .expect("samples never carry attractor updates");
    }

    fn particle_moved(&mut self, _iteration: u64, outcome: &MoveOutcome) {
        self.tally.attractor_moves += outcome.attractor_moved as u64;
    }
}

fn run_batch(config: &HarnessConfig, batch: usize) -> Result<PhaseTally, PhaseStatsError> {
    let obj = ObjectiveId::new(BenchmarkFn::Sphere, config.num_dimensions)
        .map_err(|e| PhaseStatsError::Invalid(e.to_string()))?;
    let mut swarm = SwarmState::planted(config.swarm_config(batch), &obj, &obj.known_optimum())?;
    let mut obs = PhaseObserver::new(config.num_particles, config.num_dimensions, config.delta);
    for _ in 0..config.batch_iterations {
        swarm.step_iteration_with(&obj, &mut obs)?;
    }
    let mut tally = obs.tally;
    tally.tracker_violations = obs.trackers.iter().map(|t| t.lockout_violations()).sum();
    tally.iterations = config.batch_iterations;
    Ok(tally)
}

/// Runs batches in index order until `done` holds for the merged tally or
/// `max_batches` is reached. Batches may execute in parallel; the result only
/// depends on the batch index sequence.
pub fn collect<P: Fn(&PhaseTally) -> bool>(
    config: &HarnessConfig,
    done: P,
) -> Result<PhaseTally, PhaseStatsError> {
    if config.batch_iterations == 0 || config.max_batches == 0 {
        return Err(PhaseStatsError::Invalid(
            "need at least one non-empty batch".into(),
        ));
    }
    let mut total = PhaseTally::new(config.num_dimensions);
    let chunk = thread_limit().max(1);
    let mut next = 0;
    while next < config.max_batches {
        let end = (next + chunk).min(config.max_batches);
        let tallies = map_ordered((next..end).collect(), |b| run_batch(config, b));
        for t in tallies {
            total.merge(&t?);
            if total.attractor_moves > 0 {
                return Err(PhaseStatsError::AttractorMoved);
            }
            if done(&total) {
                return Ok(total);
            }
        }
        next = end;
    }
    Ok(total)
}

fn need(what: &'static str, got: u64, wanted: u64, iterations: u64) -> Result<(), PhaseStatsError> {
    if got < wanted {
        Err(PhaseStatsError::InsufficientSamples {
            what,
            got,
            wanted,
            iterations,
        })
    } else {
        Ok(())
    }
}

fn check_target(target: u64) -> Result<(), PhaseStatsError> {
    if target == 0 {
        Err(PhaseStatsError::NoSamples)
    } else {
        Ok(())
    }
}

pub fn lockout_report(t: &PhaseTally) -> LemmaReport {
    let mut details = BTreeMap::new();
    details.insert("iterations".into(), t.iterations as f64);
    LemmaReport {
        lemma: LemmaId::L1Lockout,
        samples: t.lockout_triggers,
        statistic: t.lockout_violations as f64,
        expected: 0.0,
        standard_error: 0.0,
        pass: t.lockout_violations == 0,
        details,
    }
}

fn three_se_band(successes: u64, n: u64, p: f64) -> (f64, f64, bool) {
    let freq = successes as f64 / n as f64;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    (freq, se, (freq - p).abs() <= 3.0 * se)
}

pub fn half_probability_report(t: &PhaseTally) -> Result<LemmaReport, PhaseStatsError> {
    let (n, forced) = t.half_prob;
    if n == 0 {
        return Err(PhaseStatsError::NoSamples);
    }
    let (freq, se, mut pass) = three_se_band(forced, n, 0.5);
    let mut details = BTreeMap::new();
    // Per-dimension bands share the pooled 3 SE family-wise error rate.
    let dims = t.half_prob_by_dim.len().max(1) as f64;
    let unit = Normal::new(0.0, 1.0).expect("standard normal");
    let family_alpha = 2.0 * unit.sf(3.0);
    let z_dim = unit.inverse_cdf(1.0 - family_alpha / (2.0 * dims));
    details.insert("per_dim_z".into(), z_dim);
    for (d, &(nd, fd)) in t.half_prob_by_dim.iter().enumerate() {
        if nd == 0 {
            pass = false;
            continue;
        }
        let (f, se_d, _) = three_se_band(fd, nd, 0.5);
        pass &= (f - 0.5).abs() <= z_dim * se_d;
        details.insert(format!("dim_{}", d + 1), f);
    }
    for case in ForcedCase::ALL {
        let (nc, fc) = t.half_prob_by_case[case.index()];
        details.insert(format!("case_{}_share", case.name()), nc as f64 / n as f64);
        details.insert(
            format!("case_{}_forced", case.name()),
            if nc > 0 {
                fc as f64 / nc as f64
            } else {
                f64::NAN
            },
        );
    }
    Ok(LemmaReport {
        lemma: LemmaId::L2HalfProb,
        samples: n,
        statistic: freq,
        expected: 0.5,
        standard_error: se,
        pass,
        details,
    })
}

/// Probability that a forced run has length `k ≥ 1`: `2^-k`.
pub fn run_length_pmf(k: u32) -> f64 {
    0.5f64.powi(k as i32)
}

pub const GEOMETRIC_BINS: usize = 10;
pub const SIGNIFICANCE: f64 = 0.01;

pub fn geometric_report(t: &PhaseTally) -> Result<LemmaReport, PhaseStatsError> {
    let runs = t.runs();
    if runs == 0 {
        return Err(PhaseStatsError::NoSamples);
    }
    let n = runs as f64;
    let mut chi2 = 0.0;
    for k in 1..=GEOMETRIC_BINS {
        let expected = n * run_length_pmf(k as u32);
        let observed = t.run_lengths[k] as f64;
        chi2 += (observed - expected).powi(2) / expected;
    }
    let tail_observed: u64 = t.run_lengths[GEOMETRIC_BINS + 1..].iter().sum();
    let tail_expected = n * 0.5f64.powi(GEOMETRIC_BINS as i32);
    chi2 += (tail_observed as f64 - tail_expected).powi(2) / tail_expected;
    let dist = ChiSquared::new(GEOMETRIC_BINS as f64).expect("positive degrees of freedom");
    let p_value = 1.0 - dist.cdf(chi2);
    let critical = dist.inverse_cdf(1.0 - SIGNIFICANCE);

    let share = |k: usize| t.run_lengths[k] as f64 / n;
    let mut details = BTreeMap::new();
    details.insert("p_value".into(), p_value);
    details.insert("p_len_1".into(), share(1));
    details.insert("p_len_2".into(), share(2));
    details.insert("p_len_3".into(), share(3));
    details.insert("p_len_at_least_3".into(), 1.0 - share(1) - share(2));
    details.insert("mean_length".into(), t.run_length_sum as f64 / n);
    Ok(LemmaReport {
        lemma: LemmaId::L3Geometric,
        samples: runs,
        statistic: chi2,
        expected: critical,
        standard_error: 0.0,
        pass: p_value >= SIGNIFICANCE,
        details,
    })
}

/// Lower bound `(1 − 1/(2χ))/2`; not clamped, so it is negative for `χ < 1/2`.
pub fn recovery_bound(chi: f64) -> f64 {
    0.5 * (1.0 - 1.0 / (2.0 * chi))
}

pub fn recovery_report(t: &PhaseTally, chi: f64) -> Result<LemmaReport, PhaseStatsError> {
    let (n, hits) = t.recovery_hits;
    if n == 0 {
        return Err(PhaseStatsError::NoSamples);
    }
    let freq = hits as f64 / n as f64;
    let se = (freq * (1.0 - freq) / n as f64).sqrt();
    let bound = recovery_bound(chi);
    let mut details = BTreeMap::new();
    details.insert("chi".into(), chi);
    details.insert("vacuous".into(), if bound <= 0.0 { 1.0 } else { 0.0 });
    Ok(LemmaReport {
        lemma: LemmaId::L4RecoveryBound,
        samples: n,
        statistic: freq,
        expected: bound,
        standard_error: se,
        pass: freq >= bound - 3.0 * se,
        details,
    })
}

/// Runs a fixed number of iterations (split into batches) and checks that no
/// forced move follows a move ending with `φ ≥ δ` within `N` particle moves.
pub fn verify_lockout(
    config: &HarnessConfig,
    iterations: u64,
) -> Result<LemmaReport, PhaseStatsError> {
    let mut cfg = config.clone();
    cfg.max_batches = iterations.div_ceil(cfg.batch_iterations).max(1) as usize;
    let tally = collect(&cfg, |_| false)?;
    Ok(lockout_report(&tally))
}

pub fn verify_half_probability(
    config: &HarnessConfig,
    samples_target: u64,
) -> Result<LemmaReport, PhaseStatsError> {
    check_target(samples_target)?;
    let t = collect(config, |t| t.half_prob.0 >= samples_target)?;
    need(
        "half-probability",
        t.half_prob.0,
        samples_target,
        t.iterations,
    )?;
    half_probability_report(&t)
}

pub fn verify_geometric(
    config: &HarnessConfig,
    samples_target: u64,
) -> Result<LemmaReport, PhaseStatsError> {
    check_target(samples_target)?;
    let t = collect(config, |t| t.runs() >= samples_target)?;
    need("forced runs", t.runs(), samples_target, t.iterations)?;
    geometric_report(&t)
}

/// One report per `χ`, each from its own fixed-attractor run.
pub fn verify_recovery_bound(
    config: &HarnessConfig,
    samples_target: u64,
    chi_values: &[f64],
) -> Result<Vec<LemmaReport>, PhaseStatsError> {
    check_target(samples_target)?;
    chi_values
        .iter()
        .map(|&chi| {
            let cfg = config.clone().with_chi(chi);
            let t = collect(&cfg, |t| t.recovery_hits.0 >= samples_target)?;
            need(
                "first unforced moves",
                t.recovery_hits.0,
                samples_target,
                t.iterations,
            )?;
            recovery_report(&t, chi)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub iterations: u64,
    pub cycles: u64,
    /// Forced moves inside a span of `N` unforced moves after a run.
    pub unclassified: u64,
    /// Shortest unforced span between runs (`N` + recovery length).
    pub min_unforced_span: Option<u64>,
    pub zero_length_recoveries: u64,
    pub mean_recovery_length: f64,
    /// `(length, count)` for recovery spans; the last entry collects longer spans.
    pub recovery_histogram: Vec<(u64, u64)>,
    pub run_lengths: LemmaReport,
    pub pass: bool,
}

pub fn theorem_report(
    t: &PhaseTally,
    num_particles: usize,
) -> Result<TheoremReport, PhaseStatsError> {
    let run_lengths = geometric_report(t)?;
    let cycles = t.recoveries();
    let first = t.recovery_lengths.iter().position(|&c| c > 0);
    let weighted: u64 = t
        .recovery_lengths
        .iter()
        .enumerate()
        .map(|(l, &c)| l as u64 * c)
        .sum();
    let recovery_histogram = t
        .recovery_lengths
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(l, &c)| (l as u64, c))
        .collect();
    let unclassified = t.tracker_violations;
    Ok(TheoremReport {
        iterations: t.iterations,
        cycles,
        unclassified,
        min_unforced_span: first.map(|l| num_particles as u64 + l as u64),
        zero_length_recoveries: t.recovery_lengths[0],
        mean_recovery_length: if cycles > 0 {
            weighted as f64 / cycles as f64
        } else {
            0.0
        },
        recovery_histogram,
        pass: unclassified == 0 && cycles > 0 && run_lengths.pass,
        run_lengths,
    })
}

pub fn verify_theorem(
    config: &HarnessConfig,
    iterations: u64,
) -> Result<TheoremReport, PhaseStatsError> {
    let mut cfg = config.clone();
    cfg.max_batches = iterations.div_ceil(cfg.batch_iterations).max(1) as usize;
    let t = collect(&cfg, |_| false)?;
    theorem_report(&t, config.num_particles)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub lemmas: Vec<LemmaReport>,
    pub theorem: TheoremReport,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.lemmas.iter().all(|r| r.pass) && self.theorem.pass
    }
}

/// All four lemma reports and the theorem report from one shared run that
/// continues until every lemma has at least `samples_target` samples.
pub fn verify_all(
    config: &HarnessConfig,
    samples_target: u64,
) -> Result<SuiteReport, PhaseStatsError> {
    check_target(samples_target)?;
    let enough = |t: &PhaseTally| {
        t.lockout_triggers >= samples_target
            && t.half_prob.0 >= samples_target
            && t.runs() >= samples_target
            && t.recovery_hits.0 >= samples_target
    };
    let t = collect(config, enough)?;
    need(
        "lockout triggers",
        t.lockout_triggers,
        samples_target,
        t.iterations,
    )?;
    need(
        "half-probability",
        t.half_prob.0,
        samples_target,
        t.iterations,
    )?;
    need("forced runs", t.runs(), samples_target, t.iterations)?;
    need(
        "first unforced moves",
        t.recovery_hits.0,
        samples_target,
        t.iterations,
    )?;
    Ok(SuiteReport {
        lemmas: vec![
            lockout_report(&t),
            half_probability_report(&t)?,
            geometric_report(&t)?,
            recovery_report(&t, config.chi)?,
        ],
        theorem: theorem_report(&t, config.num_particles)?,
    })
}
