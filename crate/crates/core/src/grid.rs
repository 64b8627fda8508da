use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which boundary a grid is anchored to.
///
/// `Unit01` grids live in (0, 1] with the implicit anchor `τ₀ = 0`, where the
/// process is pinned to zero. `HalfLine` grids live in [0, ∞) with the
/// implicit anchor `t_n = ∞`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridDomain {
    Unit01,
    HalfLine,
}

/// Strictly increasing sample instants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
    domain: GridDomain,
}

impl TimeGrid {
    /// Grid in (0, 1] anchored at `τ₀ = 0`.
    pub fn unit(points: Vec<f64>) -> Result<Self> {
        Self::check_increasing(&points)?;
        if let (Some(&first), Some(&last)) = (points.first(), points.last()) {
            if first <= 0.0 || last > 1.0 {
                return Err(Error::InvalidGrid(format!(
                    "unit grid must satisfy 0 < τ₁ and τ_n ≤ 1, got [{first}, {last}]"
                )));
            }
        }
        Ok(Self {
            points,
            domain: GridDomain::Unit01,
        })
    }

    /// Grid in [0, ∞) anchored at `t_n = ∞`.
    pub fn half_line(points: Vec<f64>) -> Result<Self> {
        Self::check_increasing(&points)?;
        if let Some(&first) = points.first() {
            if first < 0.0 {
                return Err(Error::InvalidGrid(format!(
                    "half-line grid must start at t₀ ≥ 0, got {first}"
                )));
            }
        }
        Ok(Self {
            points,
            domain: GridDomain::HalfLine,
        })
    }

    /// `count` equally spaced points from `start` to `stop` inclusive.
    pub fn linspace(start: f64, stop: f64, count: usize) -> Vec<f64> {
        match count {
            0 => Vec::new(),
            1 => vec![start],
            _ => {
                let h = (stop - start) / (count - 1) as f64;
                (0..count)
                    .map(|k| if k + 1 == count { stop } else { start + h * k as f64 })
                    .collect()
            }
        }
    }

    fn check_increasing(points: &[f64]) -> Result<()> {
        if let Some(bad) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "non-finite point at index {bad}"
            )));
        }
        if let Some(i) = points.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGrid(format!(
                "points must be strictly increasing: {} ≥ {} at index {}",
                points[i],
                points[i + 1],
                i + 1
            )));
        }
        Ok(())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn domain(&self) -> GridDomain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
