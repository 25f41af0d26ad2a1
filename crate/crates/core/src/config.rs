//! Numerical tolerances. One record, passed explicitly to everything that
//! makes a threshold decision.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Eigenvalues above `-pos_tol` count as non-negative.
    pub pos_tol: f64,
    /// Relative spectral cutoff: eigenvalues `<= rank_tol * lambda_max` are outside the support.
    pub rank_tol: f64,
    /// Asymmetry below which an element is symmetrized instead of rejected.
    pub herm_tol: f64,
    /// Tolerance on `tau(x) = 1` for states.
    pub trace_tol: f64,
    /// `||(1 - p_x) p_y||_inf` above this means `supp(y)` is not inside `supp(x)`.
    pub support_tol: f64,
    /// Two states are equal when `||x - y||_1` is below this.
    pub state_eq_tol: f64,
    /// Projective action refuses states with `tau(gamma(x))` below this.
    pub kernel_tol: f64,
    /// Choi matrix minimum eigenvalue floor for complete positivity.
    pub cp_tol: f64,
    /// Unitality / traciality tolerance.
    pub unital_tol: f64,
    /// Fixed-point iteration stops once `||x_{k+1} - x_k||_1` is below this.
    pub fixed_point_tol: f64,
    /// Contraction values below this are indistinguishable from zero.
    pub noise_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            pos_tol: 1e-9,
            rank_tol: 1e-12,
            herm_tol: 1e-10,
            trace_tol: 1e-10,
            support_tol: 1e-8,
            state_eq_tol: 1e-8,
            kernel_tol: 1e-12,
            cp_tol: 1e-9,
            unital_tol: 1e-10,
            fixed_point_tol: 1e-12,
            noise_floor: 1e-14,
        }
    }
}
