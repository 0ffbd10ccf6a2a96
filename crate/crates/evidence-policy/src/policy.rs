//! The assignment-policy abstraction shared by every learner and the
//! hold-out evaluator.

use serde::{Deserialize, Serialize};

use crate::Matrix;

/// A treatment rule mapping a covariate row to a weight in [0,1].
///
/// Binary policies return exactly 0.0 or 1.0; relaxed policies may return
/// fractional weights.
pub trait Policy: Send + Sync {
    fn assign(&self, x: &[f64]) -> f64;

    /// One weight per row.
    fn assign_all(&self, covariates: &Matrix) -> Vec<f64> {
        covariates.rows().map(|x| self.assign(x)).collect()
    }
}

/// The constant policy; `ConstantPolicy(1.0)` treats everyone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantPolicy(pub f64);

impl Policy for ConstantPolicy {
    fn assign(&self, _x: &[f64]) -> f64 {
        self.0
    }
}

/// Table policy over integer-coded cells: row covariate x[0] is the cell
/// index, weights[cell] the assignment. Out-of-range cells get 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTablePolicy {
    pub weights: Vec<f64>,
}

impl Policy for CellTablePolicy {
    fn assign(&self, x: &[f64]) -> f64 {
        let cell = x[0].round();
        if cell < 0.0 {
            return 0.0;
        }
        self.weights.get(cell as usize).copied().unwrap_or(0.0)
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn assign(&self, x: &[f64]) -> f64 {
        (**self).assign(x)
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn assign(&self, x: &[f64]) -> f64 {
        (**self).assign(x)
    }
}
