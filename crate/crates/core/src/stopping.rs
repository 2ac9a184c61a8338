//! Termination rules: iteration budget, full stop and partial stop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::IntervalStats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoppingError {
    #[error("invalid stopping rule: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StoppingRule {
    MaxIterations {
        limit: u64,
    },
    FullStop {
        sigma_stag: u64,
        gamma: u64,
        mu: u64,
    },
    PartialStop {
        sigma_stag: u64,
        gamma: u64,
        mu: u64,
        kappa: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    Budget,
    FullStop,
    PartialStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminationReport {
    pub cause: TerminationCause,
    pub iteration: u64,
    /// `σ(I)` of the deciding window; 0 for a budget stop.
    pub triggering_sigma: u64,
    /// The value `σ(I)` was compared against (the budget limit for a budget stop).
    pub threshold: f64,
}

/// `σ_stag − σ(I) ≤ γ`, in signed arithmetic.
pub fn full_stop_check(sigma: u64, sigma_stag: u64, gamma: u64) -> bool {
    sigma_stag as i128 - sigma as i128 <= gamma as i128
}

pub fn partial_stop_threshold(
    sigma_stag: u64,
    gamma: u64,
    kappa: f64,
    num_dimensions: usize,
) -> f64 {
    kappa * (sigma_stag as f64 - gamma as f64) / num_dimensions as f64
}

/// `σ(I) ≥ κ·(σ_stag − γ)/D`.
pub fn partial_stop_check(
    sigma: u64,
    sigma_stag: u64,
    gamma: u64,
    kappa: f64,
    num_dimensions: usize,
) -> bool {
    sigma as f64 >= partial_stop_threshold(sigma_stag, gamma, kappa, num_dimensions)
}

impl StoppingRule {
    pub fn validate(&self, num_dimensions: usize) -> Result<(), StoppingError> {
        let bad = |m: String| Err(StoppingError::Invalid(m));
        match *self {
            StoppingRule::MaxIterations { limit } => {
                if limit == 0 {
                    return bad("iteration budget must be positive".into());
                }
            }
            StoppingRule::FullStop {
                sigma_stag,
                gamma,
                mu,
            } => check_frequency(sigma_stag, gamma, mu)?,
            StoppingRule::PartialStop {
                sigma_stag,
                gamma,
                mu,
                kappa,
            } => {
                check_frequency(sigma_stag, gamma, mu)?;
                if !(kappa >= 1.0 && kappa <= num_dimensions as f64) {
                    return bad(format!(
                        "kappa must lie in [1, {num_dimensions}], got {kappa}"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Window length for frequency rules.
    pub fn window(&self) -> Option<u64> {
        match *self {
            StoppingRule::MaxIterations { .. } => None,
            StoppingRule::FullStop { mu, .. } | StoppingRule::PartialStop { mu, .. } => Some(mu),
        }
    }

    /// Decides after `iteration` completed iterations. `stats` is the most
    /// recent completed window; frequency rules only look at it when
    /// `iteration` is a positive multiple of `μ` and the window ends there.
    pub fn evaluate(
        &self,
        stats: Option<&IntervalStats>,
        iteration: u64,
    ) -> Option<TerminationReport> {
        match *self {
            StoppingRule::MaxIterations { limit } => {
                (iteration >= limit).then(|| TerminationReport {
                    cause: TerminationCause::Budget,
                    iteration,
                    triggering_sigma: 0,
                    threshold: limit as f64,
                })
            }
            StoppingRule::FullStop {
                sigma_stag,
                gamma,
                mu,
            } => {
                let sigma = window_sigma(stats, iteration, mu)?;
                full_stop_check(sigma, sigma_stag, gamma).then(|| TerminationReport {
                    cause: TerminationCause::FullStop,
                    iteration,
                    triggering_sigma: sigma,
                    threshold: sigma_stag as f64 - gamma as f64,
                })
            }
            StoppingRule::PartialStop {
                sigma_stag,
                gamma,
                mu,
                kappa,
            } => {
                let sigma = window_sigma(stats, iteration, mu)?;
                let dims = stats?.num_dimensions();
                partial_stop_check(sigma, sigma_stag, gamma, kappa, dims).then(|| {
                    TerminationReport {
                        cause: TerminationCause::PartialStop,
                        iteration,
                        triggering_sigma: sigma,
                        threshold: partial_stop_threshold(sigma_stag, gamma, kappa, dims),
                    }
                })
            }
        }
    }
}

fn check_frequency(sigma_stag: u64, gamma: u64, mu: u64) -> Result<(), StoppingError> {
    if mu == 0 {
        return Err(StoppingError::Invalid(
            "window length mu must be at least 1".into(),
        ));
    }
    if sigma_stag <= gamma {
        return Err(StoppingError::Invalid(format!(
            "sigma_stag ({sigma_stag}) must exceed gamma ({gamma})"
        )));
    }
    Ok(())
}

fn window_sigma(stats: Option<&IntervalStats>, iteration: u64, mu: u64) -> Option<u64> {
    let s = stats?;
    let aligned = iteration > 0 && iteration % mu == 0;
    (aligned && s.interval_end == iteration && s.len() == mu).then_some(s.total_forced)
}

/// Several rules attached to one run; the first that fires wins. Frequency
/// rules are consulted before the budget when both fire at the same iteration.
pub fn evaluate_all(
    rules: &[StoppingRule],
    stats: Option<&IntervalStats>,
    iteration: u64,
) -> Option<TerminationReport> {
    let frequency = rules
        .iter()
        .filter(|r| r.window().is_some())
        .find_map(|r| r.evaluate(stats, iteration));
    frequency.or_else(|| {
        rules
            .iter()
            .filter(|r| r.window().is_none())
            .find_map(|r| r.evaluate(stats, iteration))
    })
}
