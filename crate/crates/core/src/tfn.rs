//! Triangular fuzzy numbers.
//!
//! A value is an ordered triple `(z1, z2, z3)` with a piecewise-linear
//! membership function peaking at `z2`. Degenerate triples (all three
//! components equal) are legal and represent crisp values, so a crisp
//! saturation flow stays expressible. No general fuzzy arithmetic is
//! provided; fuzzy outputs are assembled component-wise from integer
//! channel results.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Triangular fuzzy number. Serialized as a three-element array `[z1, z2, z3]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct TriangularFuzzy {
    z1: f64,
    z2: f64,
    z3: f64,
}

impl TriangularFuzzy {
    /// Builds a fuzzy number, requiring `z1 <= z2 <= z3` and finite inputs.
    pub fn new(z1: f64, z2: f64, z3: f64) -> Result<Self> {
        if !(z1.is_finite() && z2.is_finite() && z3.is_finite()) {
            return Err(SimError::OrderViolation(z1, z2, z3));
        }
        if !(z1 <= z2 && z2 <= z3) {
            return Err(SimError::OrderViolation(z1, z2, z3));
        }
        Ok(Self { z1, z2, z3 })
    }

    /// Builds a fuzzy number from components in arbitrary order.
    pub fn from_sorted(mut c: [f64; 3]) -> Result<Self> {
        c.sort_by(|a, b| a.partial_cmp(b).expect("finite components"));
        Self::new(c[0], c[1], c[2])
    }

    /// Crisp value as a degenerate triple.
    pub fn crisp(z: f64) -> Result<Self> {
        Self::new(z, z, z)
    }

    pub fn lower(&self) -> f64 {
        self.z1
    }

    pub fn peak(&self) -> f64 {
        self.z2
    }

    pub fn upper(&self) -> f64 {
        self.z3
    }

    pub fn components(&self) -> [f64; 3] {
        [self.z1, self.z2, self.z3]
    }

    /// Membership degree of `x`: 0 outside the support, a linear ramp up to 1
    /// at the peak. A degenerate triple is a point mass with membership 1 at
    /// its value.
    pub fn membership(&self, x: f64) -> f64 {
        if x < self.z1 || x > self.z3 {
            return 0.0;
        }
        if x <= self.z2 {
            if self.z2 == self.z1 {
                1.0
            } else {
                (x - self.z1) / (self.z2 - self.z1)
            }
        } else if self.z3 == self.z2 {
            1.0
        } else {
            (self.z3 - x) / (self.z3 - self.z2)
        }
    }

    /// Component-wise multiplication by a positive factor. Used for unit
    /// conversion between vehicles/hour and vehicles/time step (1 step = 1 s).
    pub fn scale(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(SimError::NonPositiveFactor(factor));
        }
        Self::new(self.z1 * factor, self.z2 * factor, self.z3 * factor)
    }
}

impl TryFrom<[f64; 3]> for TriangularFuzzy {
    type Error = SimError;

    fn try_from(c: [f64; 3]) -> Result<Self> {
        Self::new(c[0], c[1], c[2])
    }
}

impl From<TriangularFuzzy> for [f64; 3] {
    fn from(z: TriangularFuzzy) -> Self {
        z.components()
    }
}
