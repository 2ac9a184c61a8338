//! Swarm state and the classical / forced-step movement rules.
//!
//! Particles move sequentially in ascending index order. Within a move the
//! dimensions are processed in ascending order, and each dimension either
//! performs the regular velocity update
//!
//! ```text
//! V_d := χ·V_d + c1·r·(L_d − X_d) + c2·s·(G_d − X_d)
//! ```
//!
//! or, in [`Mode::Forced`] when every particle's contribution
//! `|V_d| + |G_d − X_d|` is strictly below `δ`, the forced update
//! `V_d := (2t − 1)·δ`. The position then advances by the new velocity.
//! Attractors are refreshed once the particle has moved in all dimensions,
//! with `≤` comparisons, so a later particle in the same iteration already
//! sees an updated global attractor.
//!
//! # Random numbers
//!
//! Each swarm owns a [`SwarmRng`]: ChaCha8 seeded with
//! `ChaCha8Rng::seed_from_u64(rng_seed)` and switched to stream `rng_stream`
//! via `set_stream`. Experiments keep one master seed and use the replicate
//! (or trial) index as the stream number. A regular dimension draws `r` then
//! `s`; a forced dimension draws `t`. Initial positions are drawn particle by
//! particle, dimension by dimension, before the first move.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmarks::Objective;

/// Inertia weight used throughout the experiments.
pub const STANDARD_CHI: f64 = 0.72984;
/// Cognitive and social acceleration coefficients.
pub const STANDARD_C1: f64 = 1.49617;
pub const STANDARD_C2: f64 = 1.49617;
/// Forced-step bound.
pub const STANDARD_DELTA: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SwarmError {
    #[error("invalid swarm configuration: {0}")]
    InvalidConfig(String),
    #[error("objective has dimension {objective} but the swarm has {swarm}")]
    DimensionMismatch { objective: usize, swarm: usize },
    #[error("objective returned {value} for particle {particle} in iteration {iteration}")]
    NonFiniteObjective {
        particle: usize,
        iteration: u64,
        value: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Classical,
    #[default]
    Forced,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "classical" => Ok(Mode::Classical),
            "forced" => Ok(Mode::Forced),
            other => Err(format!(
                "unknown mode `{other}` (expected classical or forced)"
            )),
        }
    }
}

/// Deliberate engine defects. Only used to show that the phase verifiers
/// reject a broken forcing rule; never set outside tests and fault drills.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Fault {
    #[default]
    None,
    /// The forced condition inspects only the moving particle.
    OwnContributionOnly,
    /// Forced velocities are drawn from `[-scale·δ, scale·δ]` instead of `[-δ, δ]`.
    ForcedRangeScale(f64),
    /// The forced condition compares against `scale·δ` instead of `δ`.
    ThresholdScale(f64),
    /// The forcing rule runs with `scale·δ` (both the comparison and the
    /// forced range) while everything else believes in `δ`.
    DeltaScale(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmConfig {
    pub chi: f64,
    pub c1: f64,
    pub c2: f64,
    pub delta: f64,
    pub num_particles: usize,
    pub num_dimensions: usize,
    pub init_low: Vec<f64>,
    pub init_high: Vec<f64>,
    pub rng_seed: u64,
    #[serde(default)]
    pub rng_stream: u64,
    pub mode: Mode,
    #[serde(skip)]
    pub fault: Fault,
}

impl SwarmConfig {
    /// Standard coefficients and a uniform `[low, high]^D` initialisation box.
    pub fn standard(num_particles: usize, num_dimensions: usize, low: f64, high: f64) -> Self {
        Self {
            chi: STANDARD_CHI,
            c1: STANDARD_C1,
            c2: STANDARD_C2,
            delta: STANDARD_DELTA,
            num_particles,
            num_dimensions,
            init_low: vec![low; num_dimensions],
            init_high: vec![high; num_dimensions],
            rng_seed: 0,
            rng_stream: 0,
            mode: Mode::Forced,
            fault: Fault::None,
        }
    }

    pub fn with_seed(mut self, seed: u64, stream: u64) -> Self {
        self.rng_seed = seed;
        self.rng_stream = stream;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn validate(&self) -> Result<(), SwarmError> {
        let bad = |msg: String| Err(SwarmError::InvalidConfig(msg));
        for (name, v) in [
            ("chi", self.chi),
            ("c1", self.c1),
            ("c2", self.c2),
            ("delta", self.delta),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.num_particles < 2 {
            return bad(format!(
                "need at least 2 particles, got {}",
                self.num_particles
            ));
        }
        if self.num_dimensions == 0 {
            return bad("need at least one dimension".into());
        }
        if self.init_low.len() != self.num_dimensions || self.init_high.len() != self.num_dimensions
        {
            return bad(format!(
                "initialisation box has {}/{} bounds for {} dimensions",
                self.init_low.len(),
                self.init_high.len(),
                self.num_dimensions
            ));
        }
        for (d, (lo, hi)) in self.init_low.iter().zip(&self.init_high).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return bad(format!(
                    "initialisation box is empty in dimension {d}: [{lo}, {hi}]"
                ));
            }
        }
        Ok(())
    }
}

/// Seeded uniform source that counts how many numbers it has handed out.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmRng {
    inner: ChaCha8Rng,
    draws: u64,
}

impl SwarmRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner, draws: 0 }
    }

    /// Uniform draw from `[0, 1)`.
    #[inline]
    pub fn unit(&mut self) -> f64 {
        self.draws += 1;
        self.inner.gen::<f64>()
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub local_attractor: Vec<f64>,
    pub local_value: f64,
}

/// Result of one particle move.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MoveOutcome {
    pub particle: usize,
    /// Zero-based indices of the dimensions whose velocity was forced.
    pub forced_dimensions: Vec<usize>,
    pub local_updated: bool,
    pub global_updated: bool,
    /// Whether either attractor changed position (a tie at the same point does not count).
    pub attractor_moved: bool,
}

/// Per-dimension view of a move, handed to a [`MoveObserver`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimensionMove {
    pub iteration: u64,
    pub particle: usize,
    pub dim: usize,
    pub forced: bool,
    /// `G_d − X_d` before the move.
    pub offset_before: f64,
    /// The velocity written by this move.
    pub velocity: f64,
    /// `|V_d| + |G_d − X_d|` right after the position update, against the
    /// global attractor as it stood during the move.
    pub contribution_after: f64,
}

/// Hook into the inner loop. The unit type ignores everything.
pub trait MoveObserver {
    fn dimension_moved(&mut self, _ev: &DimensionMove) {}
    fn particle_moved(&mut self, _iteration: u64, _outcome: &MoveOutcome) {}
}

impl MoveObserver for () {}

/// Regular update for one coordinate.
#[inline]
#[allow(clippy::too_many_arguments)]
pub fn regular_velocity(
    chi: f64,
    c1: f64,
    c2: f64,
    velocity: f64,
    position: f64,
    local: f64,
    global: f64,
    r: f64,
    s: f64,
) -> f64 {
    chi * velocity + c1 * r * (local - position) + c2 * s * (global - position)
}

/// Forced update for one coordinate: maps `t ∈ [0, 1]` onto `[-δ, δ]`.
#[inline]
pub fn forced_velocity(t: f64, delta: f64) -> f64 {
    (2.0 * t - 1.0) * delta
}

/// Contribution of one particle to the potential in one coordinate.
#[inline]
pub fn contribution_of(velocity: f64, position: f64, global: f64) -> f64 {
    velocity.abs() + (global - position).abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    config: SwarmConfig,
    particles: Vec<ParticleState>,
    global_attractor: Vec<f64>,
    global_value: f64,
    iteration: u64,
    rng: SwarmRng,
    // Per dimension, how many particles currently have contribution ≥ δ;
    // `above[n * D + d]` is that flag for particle n. Kept in step with every
    // velocity, position and global-attractor write.
    blocked: Vec<u32>,
    above: Vec<bool>,
}

impl SwarmState {
    /// Random positions in the configured box, zero velocities, `L = X`.
    pub fn initialize<F: Objective + ?Sized>(
        config: SwarmConfig,
        objective: &F,
    ) -> Result<Self, SwarmError> {
        config.validate()?;
        check_dimension(&config, objective)?;
        let mut rng = SwarmRng::new(config.rng_seed, config.rng_stream);
        let positions = (0..config.num_particles)
            .map(|_| {
                config
                    .init_low
                    .iter()
                    .zip(&config.init_high)
                    .map(|(lo, hi)| lo + (hi - lo) * rng.unit())
                    .collect()
            })
            .collect();
        Self::assemble(config, objective, positions, rng)
    }

    /// Start from caller-supplied positions (zero velocities, `L = X`).
    pub fn from_positions<F: Objective + ?Sized>(
        config: SwarmConfig,
        objective: &F,
        positions: Vec<Vec<f64>>,
    ) -> Result<Self, SwarmError> {
        config.validate()?;
        check_dimension(&config, objective)?;
        if positions.len() != config.num_particles
            || positions.iter().any(|p| p.len() != config.num_dimensions)
        {
            return Err(SwarmError::InvalidConfig(format!(
                "expected {} positions of length {}",
                config.num_particles, config.num_dimensions
            )));
        }
        let rng = SwarmRng::new(config.rng_seed, config.rng_stream);
        Self::assemble(config, objective, positions, rng)
    }

    /// Every particle, local attractor and the global attractor placed on `point`.
    pub fn planted<F: Objective + ?Sized>(
        config: SwarmConfig,
        objective: &F,
        point: &[f64],
    ) -> Result<Self, SwarmError> {
        let positions = vec![point.to_vec(); config.num_particles];
        Self::from_positions(config, objective, positions)
    }

    fn assemble<F: Objective + ?Sized>(
        config: SwarmConfig,
        objective: &F,
        positions: Vec<Vec<f64>>,
        rng: SwarmRng,
    ) -> Result<Self, SwarmError> {
        let mut particles = Vec::with_capacity(positions.len());
        for (n, x) in positions.into_iter().enumerate() {
            let value = objective.evaluate(&x);
            if !value.is_finite() {
                return Err(SwarmError::NonFiniteObjective {
                    particle: n,
                    iteration: 0,
                    value,
                });
            }
            particles.push(ParticleState {
                velocity: vec![0.0; x.len()],
                local_attractor: x.clone(),
                position: x,
                local_value: value,
            });
        }
        // Strict comparison: ties keep the lowest particle index.
        let best = particles.iter().enumerate().fold(0, |best, (n, p)| {
            if p.local_value < particles[best].local_value {
                n
            } else {
                best
            }
        });
        let dims = config.num_dimensions;
        let mut state = Self {
            global_attractor: particles[best].local_attractor.clone(),
            global_value: particles[best].local_value,
            blocked: vec![0; dims],
            above: vec![false; particles.len() * dims],
            config,
            particles,
            iteration: 0,
            rng,
        };
        state.refresh_blocked();
        Ok(state)
    }

    #[inline]
    fn threshold(&self) -> f64 {
        match self.config.fault {
            Fault::ThresholdScale(k) | Fault::DeltaScale(k) => k * self.config.delta,
            _ => self.config.delta,
        }
    }

    fn refresh_blocked(&mut self) {
        let dims = self.config.num_dimensions;
        let delta = self.threshold();
        self.blocked.iter_mut().for_each(|b| *b = 0);
        for (n, p) in self.particles.iter().enumerate() {
            for d in 0..dims {
                let above = contribution_of(p.velocity[d], p.position[d], self.global_attractor[d])
                    >= delta;
                self.above[n * dims + d] = above;
                self.blocked[d] += above as u32;
            }
        }
    }

    pub fn config(&self) -> &SwarmConfig {
        &self.config
    }

    pub fn particles(&self) -> &[ParticleState] {
        &self.particles
    }

    pub fn global_attractor(&self) -> &[f64] {
        &self.global_attractor
    }

    pub fn global_value(&self) -> f64 {
        self.global_value
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn rng_draws(&self) -> u64 {
        self.rng.draws()
    }

    pub fn num_particles(&self) -> usize {
        self.particles.len()
    }

    pub fn num_dimensions(&self) -> usize {
        self.config.num_dimensions
    }

    /// Overwrite one particle's velocity. Used by fixtures.
    pub fn set_velocity(&mut self, particle: usize, velocity: Vec<f64>) {
        assert_eq!(velocity.len(), self.config.num_dimensions);
        self.particles[particle].velocity = velocity;
        self.refresh_blocked();
    }

    /// Regular update for `particle` in `dim`; draws `r` then `s`.
    pub fn regular_velocity_update(&mut self, particle: usize, dim: usize) -> f64 {
        let r = self.rng.unit();
        let s = self.rng.unit();
        let p = &self.particles[particle];
        regular_velocity(
            self.config.chi,
            self.config.c1,
            self.config.c2,
            p.velocity[dim],
            p.position[dim],
            p.local_attractor[dim],
            self.global_attractor[dim],
            r,
            s,
        )
    }

    /// Forced update; draws `t`.
    pub fn forced_velocity_update(&mut self) -> f64 {
        let scale = match self.config.fault {
            Fault::ForcedRangeScale(k) | Fault::DeltaScale(k) => k,
            _ => 1.0,
        };
        forced_velocity(self.rng.unit(), scale * self.config.delta)
    }

    /// `true` iff every particle has `|V_d| + |G_d − X_d| < δ` right now.
    pub fn forced_condition(&self, dim: usize, delta: f64) -> bool {
        let g = self.global_attractor[dim];
        self.particles
            .iter()
            .all(|p| contribution_of(p.velocity[dim], p.position[dim], g) < delta)
    }

    #[inline]
    fn forced_for(&self, particle: usize, dim: usize) -> bool {
        match self.config.fault {
            Fault::OwnContributionOnly => {
                let p = &self.particles[particle];
                contribution_of(p.velocity[dim], p.position[dim], self.global_attractor[dim])
                    < self.threshold()
            }
            _ => self.blocked[dim] == 0,
        }
    }

    pub fn step_particle<F: Objective + ?Sized>(
        &mut self,
        particle: usize,
        objective: &F,
    ) -> Result<MoveOutcome, SwarmError> {
        self.step_particle_with(particle, objective, &mut ())
    }

    pub fn step_particle_with<F, O>(
        &mut self,
        particle: usize,
        objective: &F,
        observer: &mut O,
    ) -> Result<MoveOutcome, SwarmError>
    where
        F: Objective + ?Sized,
        O: MoveObserver,
    {
        let forced_mode = self.config.mode == Mode::Forced;
        let threshold = self.threshold();
        let mut forced_dimensions = Vec::new();
        for dim in 0..self.config.num_dimensions {
            let forced = forced_mode && self.forced_for(particle, dim);
            let velocity = if forced {
                forced_dimensions.push(dim);
                self.forced_velocity_update()
            } else {
                self.regular_velocity_update(particle, dim)
            };
            let g = self.global_attractor[dim];
            let p = &mut self.particles[particle];
            let offset_before = g - p.position[dim];
            p.velocity[dim] = velocity;
            p.position[dim] += velocity;
            let contribution_after = contribution_of(velocity, p.position[dim], g);
            let slot = particle * self.config.num_dimensions + dim;
            let above = contribution_after >= threshold;
            if above != self.above[slot] {
                self.above[slot] = above;
                if above {
                    self.blocked[dim] += 1;
                } else {
                    self.blocked[dim] -= 1;
                }
            }
            observer.dimension_moved(&DimensionMove {
                iteration: self.iteration,
                particle,
                dim,
                forced,
                offset_before,
                velocity,
                contribution_after,
            });
        }

        let p = &mut self.particles[particle];
        let value = objective.evaluate(&p.position);
        if !value.is_finite() {
            return Err(SwarmError::NonFiniteObjective {
                particle,
                iteration: self.iteration,
                value,
            });
        }
        let local_updated = value <= p.local_value;
        let mut attractor_moved = false;
        if local_updated {
            attractor_moved |= p.local_attractor != p.position;
            p.local_attractor.copy_from_slice(&p.position);
            p.local_value = value;
        }
        let global_updated = value <= self.global_value;
        if global_updated {
            let moved = self.global_attractor != p.position;
            attractor_moved |= moved;
            self.global_attractor.copy_from_slice(&p.position);
            self.global_value = value;
            if moved {
                self.refresh_blocked();
            }
        }
        let outcome = MoveOutcome {
            particle,
            forced_dimensions,
            local_updated,
            global_updated,
            attractor_moved,
        };
        observer.particle_moved(self.iteration, &outcome);
        Ok(outcome)
    }

    /// Moves every particle once, in ascending order.
    pub fn step_iteration<F: Objective + ?Sized>(
        &mut self,
        objective: &F,
    ) -> Result<Vec<MoveOutcome>, SwarmError> {
        self.step_iteration_with(objective, &mut ())
    }

    pub fn step_iteration_with<F, O>(
        &mut self,
        objective: &F,
        observer: &mut O,
    ) -> Result<Vec<MoveOutcome>, SwarmError>
    where
        F: Objective + ?Sized,
        O: MoveObserver,
    {
        let outcomes = (0..self.particles.len())
            .map(|n| self.step_particle_with(n, objective, observer))
            .collect::<Result<Vec<_>, _>>()?;
        self.iteration += 1;
        Ok(outcomes)
    }
}

fn check_dimension<F: Objective + ?Sized>(
    config: &SwarmConfig,
    objective: &F,
) -> Result<(), SwarmError> {
    if objective.dimension() != config.num_dimensions {
        return Err(SwarmError::DimensionMismatch {
            objective: objective.dimension(),
            swarm: config.num_dimensions,
        });
    }
    Ok(())
}
