pub mod benchmarks;
pub mod calibration;
pub mod experiments;
pub mod parallel;
pub mod phase_stats;
pub mod potential;
pub mod stopping;
pub mod swarm;
pub mod telemetry;
