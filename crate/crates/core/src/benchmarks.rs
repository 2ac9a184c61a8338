//! Benchmark objectives with analytic gradients.
//!
//! All five functions are written so that their global optimum value is 0:
//!
//! | name         | formula                                              | optimum  |
//! |--------------|------------------------------------------------------|----------|
//! | `sphere`     | `Σ x_d²`                                             | origin   |
//! | `hcelliptic` | `Σ (10⁶)^((d−1)/(D−1)) x_d²`                         | origin   |
//! | `schwefel12` | `Σ_d (Σ_{j≤d} x_j)²`                                 | origin   |
//! | `rastrigin`  | `10D + Σ (x_d² − 10 cos(2π x_d))`                    | origin   |
//! | `rosenbrock` | `Σ_{d<D} 100 (x_{d+1} − x_d²)² + (1 − x_d)²`         | all ones |

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Anything the swarm can minimise.
pub trait Objective {
    fn dimension(&self) -> usize;
    fn evaluate(&self, x: &[f64]) -> f64;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchmarkError {
    #[error("unknown objective `{0}` (expected sphere, hcelliptic, schwefel12, rastrigin or rosenbrock)")]
    UnknownName(String),
    #[error("{function} needs at least {min} dimension(s), got {got}")]
    DimensionTooSmall {
        function: BenchmarkFn,
        min: usize,
        got: usize,
    },
    #[error("expected a point with {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("coordinate {index} is not finite ({value})")]
    NonFiniteInput { index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkFn {
    Sphere,
    #[serde(rename = "hcelliptic")]
    HcElliptic,
    Schwefel12,
    Rastrigin,
    Rosenbrock,
}

impl BenchmarkFn {
    pub const ALL: [BenchmarkFn; 5] = [
        BenchmarkFn::Sphere,
        BenchmarkFn::HcElliptic,
        BenchmarkFn::Schwefel12,
        BenchmarkFn::Rastrigin,
        BenchmarkFn::Rosenbrock,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkFn::Sphere => "sphere",
            BenchmarkFn::HcElliptic => "hcelliptic",
            BenchmarkFn::Schwefel12 => "schwefel12",
            BenchmarkFn::Rastrigin => "rastrigin",
            BenchmarkFn::Rosenbrock => "rosenbrock",
        }
    }

    pub fn min_dimension(self) -> usize {
        match self {
            BenchmarkFn::Rosenbrock => 2,
            _ => 1,
        }
    }

    /// Symmetric per-coordinate initialisation range `[-r, r]`.
    pub fn init_half_width(self) -> f64 {
        match self {
            BenchmarkFn::Sphere | BenchmarkFn::HcElliptic | BenchmarkFn::Schwefel12 => 100.0,
            BenchmarkFn::Rastrigin => 5.12,
            BenchmarkFn::Rosenbrock => 30.0,
        }
    }

    /// Whether component `d` of the gradient depends on `x_d` alone.
    pub fn is_separable(self) -> bool {
        matches!(
            self,
            BenchmarkFn::Sphere | BenchmarkFn::HcElliptic | BenchmarkFn::Rastrigin
        )
    }
}

impl fmt::Display for BenchmarkFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkFn {
    type Err = BenchmarkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BenchmarkFn::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| BenchmarkError::UnknownName(s.to_string()))
    }
}

/// A benchmark function bound to a dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectiveId {
    pub function: BenchmarkFn,
    pub dimension: usize,
}

impl ObjectiveId {
    pub fn new(function: BenchmarkFn, dimension: usize) -> Result<Self, BenchmarkError> {
        if dimension < function.min_dimension() {
            return Err(BenchmarkError::DimensionTooSmall {
                function,
                min: function.min_dimension(),
                got: dimension,
            });
        }
        Ok(Self {
            function,
            dimension,
        })
    }

    pub fn known_optimum(&self) -> Vec<f64> {
        let coord = match self.function {
            BenchmarkFn::Rosenbrock => 1.0,
            _ => 0.0,
        };
        vec![coord; self.dimension]
    }

    pub fn optimal_value(&self) -> f64 {
        0.0
    }

    pub fn default_init_box(&self) -> (Vec<f64>, Vec<f64>) {
        let r = self.function.init_half_width();
        (vec![-r; self.dimension], vec![r; self.dimension])
    }

    fn check(&self, x: &[f64]) -> Result<(), BenchmarkError> {
        if x.len() != self.dimension {
            return Err(BenchmarkError::DimensionMismatch {
                expected: self.dimension,
                got: x.len(),
            });
        }
        if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(BenchmarkError::NonFiniteInput { index, value });
        }
        Ok(())
    }

    /// Checked evaluation: rejects wrong lengths and non-finite coordinates.
    pub fn try_evaluate(&self, x: &[f64]) -> Result<f64, BenchmarkError> {
        self.check(x)?;
        Ok(self.value(x))
    }

    pub fn try_gradient(&self, x: &[f64]) -> Result<Vec<f64>, BenchmarkError> {
        self.check(x)?;
        Ok(self.gradient(x))
    }

    pub fn gradient_norm(&self, x: &[f64]) -> Result<f64, BenchmarkError> {
        Ok(self
            .try_gradient(x)?
            .iter()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt())
    }

    fn elliptic_weight(&self, d: usize) -> f64 {
        if self.dimension == 1 {
            1.0
        } else {
            1e6_f64.powf(d as f64 / (self.dimension - 1) as f64)
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        match self.function {
            BenchmarkFn::Sphere => x.iter().map(|v| v * v).sum(),
            BenchmarkFn::HcElliptic => x
                .iter()
                .enumerate()
                .map(|(d, v)| self.elliptic_weight(d) * v * v)
                .sum(),
            BenchmarkFn::Schwefel12 => {
                let mut prefix = 0.0;
                let mut total = 0.0;
                for v in x {
                    prefix += v;
                    total += prefix * prefix;
                }
                total
            }
            // 10 − 10 cos(2πx) = 20 sin²(πx): same function, but no
            // cancellation against the 10D offset near the optimum.
            BenchmarkFn::Rastrigin => x
                .iter()
                .map(|v| {
                    let s = (PI * v).sin();
                    v * v + 20.0 * s * s
                })
                .sum(),
            BenchmarkFn::Rosenbrock => x
                .windows(2)
                .map(|w| {
                    let a = w[1] - w[0] * w[0];
                    let b = 1.0 - w[0];
                    100.0 * a * a + b * b
                })
                .sum(),
        }
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self.function {
            BenchmarkFn::Sphere => x.iter().map(|v| 2.0 * v).collect(),
            BenchmarkFn::HcElliptic => x
                .iter()
                .enumerate()
                .map(|(d, v)| 2.0 * self.elliptic_weight(d) * v)
                .collect(),
            BenchmarkFn::Schwefel12 => {
                // ∂f/∂x_k = 2 Σ_{d≥k} S_d with S_d the prefix sums.
                let mut prefix = 0.0;
                let sums: Vec<f64> = x
                    .iter()
                    .map(|v| {
                        prefix += v;
                        prefix
                    })
                    .collect();
                let mut grad = vec![0.0; x.len()];
                let mut suffix = 0.0;
                for k in (0..x.len()).rev() {
                    suffix += sums[k];
                    grad[k] = 2.0 * suffix;
                }
                grad
            }
            BenchmarkFn::Rastrigin => x
                .iter()
                .map(|v| 2.0 * v + 20.0 * PI * (2.0 * PI * v).sin())
                .collect(),
            BenchmarkFn::Rosenbrock => {
                let n = x.len();
                let mut grad = vec![0.0; n];
                for d in 0..n - 1 {
                    let a = x[d + 1] - x[d] * x[d];
                    grad[d] += -400.0 * x[d] * a - 2.0 * (1.0 - x[d]);
                    grad[d + 1] += 200.0 * a;
                }
                grad
            }
        }
    }
}

impl Objective for ObjectiveId {
    fn dimension(&self) -> usize {
        self.dimension
    }

    /// Unchecked on the hot path; length is validated once when a swarm is built.
    fn evaluate(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dimension);
        self.value(x)
    }
}
