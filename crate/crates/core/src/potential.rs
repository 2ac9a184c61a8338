//! Per-dimension swarm potential.
//!
//! The contribution of particle `n` in dimension `d` is
//! `φ_d^n = |V_d^n| + |G_d − X_d^n|`; the potential `Φ_d` is the column sum
//! over particles, accumulated in ascending particle order.

use serde::{Deserialize, Serialize};

use crate::swarm::{contribution_of, SwarmState};

pub fn contribution(state: &SwarmState, particle: usize, dim: usize) -> f64 {
    let p = &state.particles()[particle];
    contribution_of(
        p.velocity[dim],
        p.position[dim],
        state.global_attractor()[dim],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSnapshot {
    pub iteration: u64,
    /// `contributions[n][d] = φ_d^n`.
    pub contributions: Vec<Vec<f64>>,
    /// `totals[d] = Φ_d`.
    pub totals: Vec<f64>,
}

impl PotentialSnapshot {
    pub fn from_parts(
        iteration: u64,
        positions: &[&[f64]],
        velocities: &[&[f64]],
        global: &[f64],
    ) -> Self {
        let contributions: Vec<Vec<f64>> = positions
            .iter()
            .zip(velocities)
            .map(|(x, v)| {
                global
                    .iter()
                    .enumerate()
                    .map(|(d, &g)| contribution_of(v[d], x[d], g))
                    .collect()
            })
            .collect();
        let mut totals = vec![0.0; global.len()];
        for row in &contributions {
            for (t, c) in totals.iter_mut().zip(row) {
                *t += c;
            }
        }
        Self {
            iteration,
            contributions,
            totals,
        }
    }

    pub fn max_total(&self) -> f64 {
        self.totals.iter().copied().fold(0.0, f64::max)
    }

    /// Whether every entry of column `dim` is strictly below `delta`.
    pub fn column_below(&self, dim: usize, delta: f64) -> bool {
        self.contributions.iter().all(|row| row[dim] < delta)
    }

    pub fn column_count_at_least(&self, dim: usize, delta: f64) -> usize {
        self.contributions
            .iter()
            .filter(|row| row[dim] >= delta)
            .count()
    }
}

pub fn snapshot(state: &SwarmState) -> PotentialSnapshot {
    let positions: Vec<&[f64]> = state.particles().iter().map(|p| &p.position[..]).collect();
    let velocities: Vec<&[f64]> = state.particles().iter().map(|p| &p.velocity[..]).collect();
    PotentialSnapshot::from_parts(
        state.iteration(),
        &positions,
        &velocities,
        state.global_attractor(),
    )
}
