//! Scaled integer lattices `αℤⁿ` with the half-open cubic cell `α(−½, ½]ⁿ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::randomness::RandomTape;

/// Generator matrix family. Only `αIₙ` is implemented; the tag keeps room for others.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneratorKind {
    ScaledIdentity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    dim: usize,
    scale: f64,
    generator: GeneratorKind,
}

/// Exact integer lattice coordinates; the real position is `scale · coords`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LatticePoint {
    pub coords: Vec<i64>,
}

impl LatticePoint {
    pub fn new(coords: Vec<i64>) -> Self {
        Self { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn to_real(&self, spec: &LatticeSpec) -> Vec<f64> {
        self.coords.iter().map(|&c| spec.scale * c as f64).collect()
    }
}

impl LatticeSpec {
    pub fn scaled_integer(dim: usize, scale: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Parameter("lattice dimension must be at least 1".into()));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Parameter(format!("lattice scale must be positive, got {scale}")));
        }
        Ok(Self {
            dim,
            scale,
            generator: GeneratorKind::ScaledIdentity,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn generator(&self) -> GeneratorKind {
        self.generator
    }

    /// Membership in the basic cell: every `z_i ∈ (−α/2, α/2]`.
    pub fn cell_contains(&self, z: &[f64]) -> bool {
        let half = 0.5 * self.scale;
        z.len() == self.dim && z.iter().all(|&zi| zi > -half && zi <= half)
    }

    /// The unique lattice point `y` with `y − x` in the basic cell.
    pub fn nearest_point(&self, x: &[f64]) -> Result<LatticePoint> {
        if x.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "expected a {}-vector, got length {}",
                self.dim,
                x.len()
            )));
        }
        let coords = x
            .iter()
            .map(|&xi| nearest_coord(xi, self.scale))
            .collect::<Result<Vec<_>>>()?;
        Ok(LatticePoint { coords })
    }

    /// Uniform draw on `α(−½, ½]ⁿ`; consumes exactly `n` tape draws.
    pub fn sample_cell_uniform(&self, tape: &mut RandomTape) -> Vec<f64> {
        (0..self.dim).map(|_| self.scale * (0.5 - tape.next_uniform())).collect()
    }

    /// Lebesgue measure of the basic cell.
    pub fn cell_volume(&self) -> f64 {
        self.scale.powi(self.dim as i32)
    }
}

// Largest magnitude whose i64 conversion is exact and leaves room for the ±1 fix-up.
const COORD_LIMIT: f64 = 4.0e18;

fn nearest_coord(x: f64, scale: f64) -> Result<i64> {
    if !x.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite coordinate {x}")));
    }
    let c = (x / scale + 0.5).floor();
    if c.abs() > COORD_LIMIT {
        return Err(Error::InvalidInput(format!(
            "coordinate {x} overflows lattice index at scale {scale}"
        )));
    }
    let mut c = c as i64;
    // floor(x/α + ½) can land one cell off when x/α rounds; re-check membership exactly.
    let half = 0.5 * scale;
    for _ in 0..4 {
        let d = scale * c as f64 - x;
        if d <= -half {
            c += 1;
        } else if d > half {
            c -= 1;
        } else {
            break;
        }
    }
    Ok(c)
}
