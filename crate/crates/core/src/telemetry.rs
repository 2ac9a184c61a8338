//! Forcing-frequency counters and pulsation-phase tracking.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::swarm::MoveOutcome;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TelemetryError {
    #[error("move in iteration {iteration} lies outside the window [{start}, {end})")]
    OutsideInterval {
        iteration: u64,
        start: u64,
        end: u64,
    },
    #[error("dimension {dim} out of range for {dims} dimensions")]
    DimensionOutOfRange { dim: usize, dims: usize },
    #[error("the interval [{start}, {end}) is empty")]
    EmptyInterval { start: u64, end: u64 },
    #[error("intervals [{a_start}, {a_end}) and [{b_start}, {b_end}) are not adjacent")]
    NotAdjacent {
        a_start: u64,
        a_end: u64,
        b_start: u64,
        b_end: u64,
    },
    #[error("an attractor moved in iteration {iteration} (particle {particle}); phase tracking needs fixed attractors")]
    AttractorMoved { iteration: u64, particle: usize },
}

/// How telemetry windows are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowMode {
    /// Window `k` covers `[0, (k+1)·μ)`.
    Cumulative,
    /// Window `k` covers `[k·μ, (k+1)·μ)`.
    #[default]
    Sliding,
}

impl WindowMode {
    pub fn name(self) -> &'static str {
        match self {
            WindowMode::Cumulative => "cumulative",
            WindowMode::Sliding => "sliding",
        }
    }
}

impl std::str::FromStr for WindowMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cumulative" => Ok(WindowMode::Cumulative),
            "sliding" => Ok(WindowMode::Sliding),
            other => Err(format!("unknown window mode `{other}`")),
        }
    }
}

/// Forced-update counts over the half-open iteration range `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalStats {
    pub interval_start: u64,
    pub interval_end: u64,
    pub per_dim_forced: Vec<u64>,
    pub total_forced: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeFrequency {
    pub total: f64,
    pub per_dim: Vec<f64>,
}

impl IntervalStats {
    pub fn new(interval_start: u64, interval_end: u64, num_dimensions: usize) -> Self {
        Self {
            interval_start,
            interval_end,
            per_dim_forced: vec![0; num_dimensions],
            total_forced: 0,
        }
    }

    pub fn len(&self) -> u64 {
        self.interval_end.saturating_sub(self.interval_start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_dimensions(&self) -> usize {
        self.per_dim_forced.len()
    }

    pub fn record_move(
        &mut self,
        iteration: u64,
        outcome: &MoveOutcome,
    ) -> Result<(), TelemetryError> {
        if iteration < self.interval_start || iteration >= self.interval_end {
            return Err(TelemetryError::OutsideInterval {
                iteration,
                start: self.interval_start,
                end: self.interval_end,
            });
        }
        let dims = self.per_dim_forced.len();
        if let Some(&dim) = outcome.forced_dimensions.iter().find(|&&d| d >= dims) {
            return Err(TelemetryError::DimensionOutOfRange { dim, dims });
        }
        for &d in &outcome.forced_dimensions {
            self.per_dim_forced[d] += 1;
        }
        self.total_forced += outcome.forced_dimensions.len() as u64;
        Ok(())
    }

    /// `σ(I)/|I|` and `σ(I,d)/|I|`.
    pub fn relative_frequency(&self) -> Result<RelativeFrequency, TelemetryError> {
        if self.is_empty() {
            return Err(TelemetryError::EmptyInterval {
                start: self.interval_start,
                end: self.interval_end,
            });
        }
        let len = self.len() as f64;
        Ok(RelativeFrequency {
            total: self.total_forced as f64 / len,
            per_dim: self
                .per_dim_forced
                .iter()
                .map(|&c| c as f64 / len)
                .collect(),
        })
    }

    /// Union of two adjacent windows, `self` first.
    pub fn merge(&self, next: &IntervalStats) -> Result<IntervalStats, TelemetryError> {
        if self.interval_end != next.interval_start
            || self.per_dim_forced.len() != next.per_dim_forced.len()
        {
            return Err(TelemetryError::NotAdjacent {
                a_start: self.interval_start,
                a_end: self.interval_end,
                b_start: next.interval_start,
                b_end: next.interval_end,
            });
        }
        Ok(IntervalStats {
            interval_start: self.interval_start,
            interval_end: next.interval_end,
            per_dim_forced: self
                .per_dim_forced
                .iter()
                .zip(&next.per_dim_forced)
                .map(|(a, b)| a + b)
                .collect(),
            total_forced: self.total_forced + next.total_forced,
        })
    }

    pub fn csv_header(num_dimensions: usize) -> Vec<String> {
        let mut h: Vec<String> = ["run_id", "window_index", "window_mode", "sigma_total"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend((1..=num_dimensions).map(|d| format!("sigma_d_{d}")));
        h
    }

    pub fn csv_record(&self, run_id: usize, window_index: usize, mode: WindowMode) -> Vec<String> {
        let mut r = vec![
            run_id.to_string(),
            window_index.to_string(),
            mode.name().to_string(),
            self.total_forced.to_string(),
        ];
        r.extend(self.per_dim_forced.iter().map(|c| c.to_string()));
        r
    }
}

/// Turns a list of consecutive sliding windows into the requested reporting mode.
pub fn windows_in_mode(sliding: &[IntervalStats], mode: WindowMode) -> Vec<IntervalStats> {
    match mode {
        WindowMode::Sliding => sliding.to_vec(),
        WindowMode::Cumulative => {
            let mut out: Vec<IntervalStats> = Vec::with_capacity(sliding.len());
            for w in sliding {
                let next = match out.last() {
                    Some(prev) => prev.merge(w).expect("sliding windows are consecutive"),
                    None => w.clone(),
                };
                out.push(next);
            }
            out
        }
    }
}

/// Splits a run into aligned windows of length `mu` and counts forced updates.
#[derive(Debug, Clone)]
pub struct WindowCounter {
    mu: u64,
    current: IntervalStats,
    closed: Vec<IntervalStats>,
}

impl WindowCounter {
    pub fn new(mu: u64, num_dimensions: usize) -> Self {
        assert!(mu >= 1, "window length must be positive");
        Self {
            mu,
            current: IntervalStats::new(0, mu, num_dimensions),
            closed: Vec::new(),
        }
    }

    pub fn mu(&self) -> u64 {
        self.mu
    }

    pub fn current(&self) -> &IntervalStats {
        &self.current
    }

    pub fn record_move(
        &mut self,
        iteration: u64,
        outcome: &MoveOutcome,
    ) -> Result<(), TelemetryError> {
        self.current.record_move(iteration, outcome)
    }

    /// Call after `completed` iterations have run. Returns the window that
    /// just closed, if `completed` is a window boundary.
    pub fn finish_iteration(&mut self, completed: u64) -> Option<&IntervalStats> {
        if completed != self.current.interval_end {
            return None;
        }
        let next = IntervalStats::new(
            completed,
            completed + self.mu,
            self.current.num_dimensions(),
        );
        self.closed.push(std::mem::replace(&mut self.current, next));
        self.closed.last()
    }

    pub fn closed(&self) -> &[IntervalStats] {
        &self.closed
    }

    pub fn into_closed(self) -> Vec<IntervalStats> {
        self.closed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseKind {
    ForcedRunStart,
    ForcedRunEnd,
    LockoutEnd,
    RecoveryEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseEvent {
    pub kind: PhaseKind,
    pub dim: usize,
    pub particle: usize,
    pub iteration: u64,
    /// Position of the move in the per-dimension stream (0-based).
    pub step: u64,
    /// Set on `ForcedRunEnd` only.
    pub run_length: Option<u64>,
}

/// One particle move as seen from a single dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseSample {
    pub iteration: u64,
    pub particle: usize,
    pub forced: bool,
    pub attractor_updated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PhaseState {
    /// Before the first forced move; the phase is unknown.
    Searching,
    Forced {
        len: u64,
    },
    Lockout {
        len: u64,
    },
    Recovery,
}

/// Incremental segmentation of one dimension's move stream into forced runs,
/// lockout spans of `N` unforced moves, and recovery spans.
///
/// A forced move inside a lockout span is counted as a violation and starts
/// a new forced run.
#[derive(Debug, Clone)]
pub struct PhaseTracker {
    dim: usize,
    num_particles: u64,
    state: PhaseState,
    step: u64,
    last: Option<PhaseSample>,
    violations: u64,
}

impl PhaseTracker {
    pub fn new(dim: usize, num_particles: usize) -> Self {
        Self {
            dim,
            num_particles: num_particles as u64,
            state: PhaseState::Searching,
            step: 0,
            last: None,
            violations: 0,
        }
    }

    pub fn lockout_violations(&self) -> u64 {
        self.violations
    }

    fn event(
        &self,
        kind: PhaseKind,
        at: &PhaseSample,
        step: u64,
        run_length: Option<u64>,
    ) -> PhaseEvent {
        PhaseEvent {
            kind,
            dim: self.dim,
            particle: at.particle,
            iteration: at.iteration,
            step,
            run_length,
        }
    }

    pub fn push<F: FnMut(PhaseEvent)>(
        &mut self,
        sample: PhaseSample,
        mut emit: F,
    ) -> Result<(), TelemetryError> {
        if sample.attractor_updated {
            return Err(TelemetryError::AttractorMoved {
                iteration: sample.iteration,
                particle: sample.particle,
            });
        }
        let step = self.step;
        self.state = match (self.state, sample.forced) {
            (PhaseState::Searching, false) => PhaseState::Searching,
            (PhaseState::Forced { len }, true) => PhaseState::Forced { len: len + 1 },
            (PhaseState::Forced { len }, false) => {
                let last = self.last.expect("a forced run has a previous move");
                emit(self.event(PhaseKind::ForcedRunEnd, &last, step - 1, Some(len)));
                self.after_lockout_move(1, &sample, step, &mut emit)
            }
            (PhaseState::Lockout { len }, false) => {
                self.after_lockout_move(len + 1, &sample, step, &mut emit)
            }
            (PhaseState::Lockout { .. }, true) => {
                self.violations += 1;
                emit(self.event(PhaseKind::ForcedRunStart, &sample, step, None));
                PhaseState::Forced { len: 1 }
            }
            (PhaseState::Recovery, false) => PhaseState::Recovery,
            (PhaseState::Recovery, true) => {
                let last = self.last.expect("recovery follows a lockout");
                emit(self.event(PhaseKind::RecoveryEnd, &last, step - 1, None));
                emit(self.event(PhaseKind::ForcedRunStart, &sample, step, None));
                PhaseState::Forced { len: 1 }
            }
            (PhaseState::Searching, true) => {
                emit(self.event(PhaseKind::ForcedRunStart, &sample, step, None));
                PhaseState::Forced { len: 1 }
            }
        };
        self.last = Some(sample);
        self.step += 1;
        Ok(())
    }

    fn after_lockout_move<F: FnMut(PhaseEvent)>(
        &self,
        len: u64,
        sample: &PhaseSample,
        step: u64,
        emit: &mut F,
    ) -> PhaseState {
        if len >= self.num_particles {
            emit(self.event(PhaseKind::LockoutEnd, sample, step, None));
            PhaseState::Recovery
        } else {
            PhaseState::Lockout { len }
        }
    }
}

/// Result of segmenting a complete stream.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrace {
    pub events: Vec<PhaseEvent>,
    pub lockout_violations: u64,
}

pub fn track_phases(
    stream: &[PhaseSample],
    dim: usize,
    num_particles: usize,
) -> Result<PhaseTrace, TelemetryError> {
    let mut tracker = PhaseTracker::new(dim, num_particles);
    let mut events = Vec::new();
    for &s in stream {
        tracker.push(s, |e| events.push(e))?;
    }
    Ok(PhaseTrace {
        events,
        lockout_violations: tracker.lockout_violations(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{BenchmarkFn, ObjectiveId};
    use crate::swarm::{Mode, SwarmConfig, SwarmState};
    use proptest::prelude::*;

    fn outcome(dims: &[usize]) -> MoveOutcome {
        MoveOutcome {
            forced_dimensions: dims.to_vec(),
            ..Default::default()
        }
    }

    #[test]
    fn record_move_counts() {
        let mut s = IntervalStats::new(0, 10, 4);
        s.record_move(3, &outcome(&[])).unwrap();
        assert_eq!(s.total_forced, 0);
        s.record_move(3, &outcome(&[0, 2])).unwrap();
        assert_eq!(s.per_dim_forced, vec![1, 0, 1, 0]);
        assert_eq!(s.total_forced, 2);
    }

    #[test]
    fn record_move_rejects_contract_violations() {
        let mut s = IntervalStats::new(10, 20, 2);
        assert!(matches!(
            s.record_move(20, &outcome(&[0])),
            Err(TelemetryError::OutsideInterval { .. })
        ));
        assert!(matches!(
            s.record_move(9, &outcome(&[0])),
            Err(TelemetryError::OutsideInterval { .. })
        ));
        assert!(matches!(
            s.record_move(12, &outcome(&[2])),
            Err(TelemetryError::DimensionOutOfRange { dim: 2, dims: 2 })
        ));
        assert_eq!(s.total_forced, 0);
    }

    #[test]
    fn relative_frequency_examples() {
        let mut s = IntervalStats::new(0, 50_000, 15);
        s.total_forced = 318_350;
        assert!((s.relative_frequency().unwrap().total - 6.367).abs() < 1e-12);
        let z = IntervalStats::new(0, 10, 2);
        assert_eq!(z.relative_frequency().unwrap().total, 0.0);
        assert!(IntervalStats::new(5, 5, 2).relative_frequency().is_err());
    }

    #[test]
    fn classical_run_never_counts() {
        let obj = ObjectiveId::new(BenchmarkFn::Sphere, 3).unwrap();
        let cfg = SwarmConfig::standard(3, 3, -1.0, 1.0).with_mode(Mode::Classical);
        let mut swarm = SwarmState::planted(cfg, &obj, &[0.0; 3]).unwrap();
        let mut w = WindowCounter::new(100, 3);
        for _ in 0..500 {
            let it = swarm.iteration();
            for o in swarm.step_iteration(&obj).unwrap() {
                w.record_move(it, &o).unwrap();
            }
            w.finish_iteration(swarm.iteration());
        }
        assert_eq!(w.closed().len(), 5);
        assert!(w.closed().iter().all(|s| s.total_forced == 0));
    }

    #[test]
    fn cumulative_windows_are_prefix_sums() {
        let mut a = IntervalStats::new(0, 10, 2);
        a.per_dim_forced = vec![1, 2];
        a.total_forced = 3;
        let mut b = IntervalStats::new(10, 20, 2);
        b.per_dim_forced = vec![4, 0];
        b.total_forced = 4;
        let cum = windows_in_mode(&[a.clone(), b.clone()], WindowMode::Cumulative);
        assert_eq!(cum[1].interval_start, 0);
        assert_eq!(cum[1].per_dim_forced, vec![5, 2]);
        assert_eq!(cum[1].total_forced, 7);
        assert!(b.merge(&a).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut a = IntervalStats::new(0, 10, 2);
        a.per_dim_forced = vec![1, 2];
        a.total_forced = 3;
        assert_eq!(
            IntervalStats::csv_header(2),
            vec![
                "run_id",
                "window_index",
                "window_mode",
                "sigma_total",
                "sigma_d_1",
                "sigma_d_2"
            ]
        );
        assert_eq!(
            a.csv_record(4, 0, WindowMode::Sliding),
            vec!["4", "0", "sliding", "3", "1", "2"]
        );
    }

    fn stream(flags: &[bool], n: usize) -> Vec<PhaseSample> {
        flags
            .iter()
            .enumerate()
            .map(|(k, &forced)| PhaseSample {
                iteration: (k / n) as u64,
                particle: k % n,
                forced,
                attractor_updated: false,
            })
            .collect()
    }

    #[test]
    fn forced_run_length_three() {
        let flags = [true, true, true, false, false, false];
        let trace = track_phases(&stream(&flags, 3), 0, 3).unwrap();
        let ends: Vec<_> = trace
            .events
            .iter()
            .filter(|e| e.kind == PhaseKind::ForcedRunEnd)
            .collect();
        assert_eq!(ends.len(), 1);
        assert_eq!(ends[0].run_length, Some(3));
        assert_eq!(ends[0].particle, 2);
        let lock = trace
            .events
            .iter()
            .find(|e| e.kind == PhaseKind::LockoutEnd)
            .unwrap();
        // three unforced moves after the run close the lockout for N = 3
        assert_eq!(lock.step, 5);
        assert_eq!(trace.lockout_violations, 0);
    }

    #[test]
    fn zero_length_recovery_and_violations() {
        // N = 2: F ¬F ¬F F → lockout of 2, recovery of 0
        let trace = track_phases(&stream(&[true, false, false, true], 2), 1, 2).unwrap();
        let kinds: Vec<_> = trace.events.iter().map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            vec![
                PhaseKind::ForcedRunStart,
                PhaseKind::ForcedRunEnd,
                PhaseKind::LockoutEnd,
                PhaseKind::RecoveryEnd,
                PhaseKind::ForcedRunStart
            ]
        );
        let lock = trace.events[2];
        let rec = trace.events[3];
        assert_eq!(rec.step, lock.step);
        // F ¬F F: forced inside the lockout
        let bad = track_phases(&stream(&[true, false, true], 2), 0, 2).unwrap();
        assert_eq!(bad.lockout_violations, 1);
    }

    #[test]
    fn refuses_moving_attractors() {
        let mut s = stream(&[true, false], 2);
        s[1].attractor_updated = true;
        assert!(matches!(
            track_phases(&s, 0, 2),
            Err(TelemetryError::AttractorMoved { .. })
        ));
    }

    #[test]
    fn lockout_after_leaving_the_band_in_planted_swarm() {
        // Fixed attractors: every run end is followed by at least N unforced moves.
        let n = 4;
        let obj = ObjectiveId::new(BenchmarkFn::Sphere, 2).unwrap();
        let cfg = SwarmConfig::standard(n, 2, -1.0, 1.0).with_seed(12, 0);
        let mut swarm = SwarmState::planted(cfg, &obj, &[0.0; 2]).unwrap();
        let mut samples = Vec::new();
        for _ in 0..20_000 {
            let it = swarm.iteration();
            for o in swarm.step_iteration(&obj).unwrap() {
                samples.push(PhaseSample {
                    iteration: it,
                    particle: o.particle,
                    forced: o.forced_dimensions.contains(&0),
                    attractor_updated: o.attractor_moved,
                });
            }
        }
        let trace = track_phases(&samples, 0, n).unwrap();
        assert_eq!(trace.lockout_violations, 0);
        let runs = trace
            .events
            .iter()
            .filter(|e| e.kind == PhaseKind::ForcedRunEnd)
            .count();
        assert!(runs > 1000, "{runs}");
    }

    proptest! {
        #[test]
        fn counters_are_conserved(
            moves in prop::collection::vec(prop::collection::btree_set(0usize..5, 0..5), 1..200),
            cut in 1u64..100,
        ) {
            let len = moves.len() as u64;
            let cut = cut.min(len);
            let mut whole = IntervalStats::new(0, len, 5);
            let mut first = IntervalStats::new(0, cut, 5);
            let mut second = IntervalStats::new(cut, len, 5);
            for (it, dims) in moves.iter().enumerate() {
                let o = outcome(&dims.iter().copied().collect::<Vec<_>>());
                let it = it as u64;
                whole.record_move(it, &o).unwrap();
                if it < cut { first.record_move(it, &o).unwrap(); } else { second.record_move(it, &o).unwrap(); }
            }
            let merged = first.merge(&second).unwrap();
            prop_assert_eq!(&merged, &whole);
            prop_assert_eq!(whole.total_forced, whole.per_dim_forced.iter().sum::<u64>());
            let rel = whole.relative_frequency().unwrap();
            prop_assert!((rel.per_dim.iter().sum::<f64>() - rel.total).abs() < 1e-12);
        }
    }
}
