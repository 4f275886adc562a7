//! Weighted composite loss `w1*L_pde + w2*L_data + w3*L_ic + w4*L_bc`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub pde: f64,
    pub data: f64,
    pub ic: f64,
    pub bc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            pde: 1.0,
            data: 0.0,
            ic: 0.0,
            bc: 1.0,
        }
    }
}

/// The four loss terms and their weighted total. `ic` is always zero for the
/// steady problems handled here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub pde: f64,
    pub data: f64,
    pub ic: f64,
    pub bc: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    pub fn combine(pde: f64, data: f64, ic: f64, bc: f64, weights: LossWeights) -> Self {
        LossBreakdown {
            total: weights.pde * pde + weights.data * data + weights.ic * ic + weights.bc * bc,
            pde,
            data,
            ic,
            bc,
            weights,
        }
    }

    /// Loss of a problem with no physics terms, e.g. a plain objective.
    pub fn scalar(total: f64) -> Self {
        LossBreakdown {
            total,
            pde: total,
            data: 0.0,
            ic: 0.0,
            bc: 0.0,
            weights: LossWeights {
                pde: 1.0,
                data: 0.0,
                ic: 0.0,
                bc: 0.0,
            },
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.total, self.pde, self.data, self.ic, self.bc]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_is_weighted_sum() {
        let w = LossWeights {
            pde: 1.0,
            data: 0.5,
            ic: 3.0,
            bc: 2.0,
        };
        let l = LossBreakdown::combine(0.1, 0.2, 0.0, 0.3, w);
        assert!((l.total - (0.1 + 0.1 + 0.6)).abs() < 1e-15);
    }
}
