use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of reward components: forward progress, control cost, alive bonus.
pub const N_COMPONENTS: usize = 3;

pub type Components = [f64; N_COMPONENTS];

/// Weight vector over the reward components; the scalar reward is `goal · rc`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Goal([f64; N_COMPONENTS]);

impl Goal {
    pub fn new(weights: Components) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("goal weights"));
        }
        Ok(Self(weights))
    }

    pub fn weights(&self) -> &Components {
        &self.0
    }

    /// Goal-weighted reward of one component vector.
    pub fn reward(&self, rc: &Components) -> f64 {
        self.0[0] * rc[0] + self.0[1] * rc[1] + self.0[2] * rc[2]
    }

    pub fn speed() -> Self {
        Self([1.0, 0.1, 0.1])
    }

    pub fn balanced() -> Self {
        Self([0.5, 0.5, 0.5])
    }

    pub fn efficient() -> Self {
        Self([0.1, 1.0, 0.1])
    }
}

impl TryFrom<[f64; N_COMPONENTS]> for Goal {
    type Error = Error;

    fn try_from(w: [f64; N_COMPONENTS]) -> Result<Self> {
        Goal::new(w)
    }
}

impl From<Goal> for [f64; N_COMPONENTS] {
    fn from(g: Goal) -> Self {
        g.0
    }
}
