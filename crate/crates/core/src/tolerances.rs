//! All numerical tolerances used by deterministic checks, in one place.
//!
//! Two profiles are provided. `default` matches the accuracy the solvers
//! are designed to deliver on well-conditioned desk-scale inputs; `strict`
//! tightens the discretization-bound tolerances for regression hunting.
//! Statistical test windows (slope intervals, variance-ratio bands, KS
//! bounds) are separate constants in [`crate::harness`] since they are
//! properties of the experiment designs, not of floating-point error.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Identities that hold in exact arithmetic (antisymmetry, row sums,
    /// carre-du-champ forms, algebraic residuals).
    pub exact_identity: f64,
    /// Residual norms for the dominant eigen-triplet of Q + Lambda.
    pub eigen_residual: f64,
    /// Mass defect allowed in a flow measure before renormalisation reports.
    pub flow_mass: f64,
    /// Propagation checks mu_T = Phi_{t,T}(mu_t) along a normalised flow.
    pub flow_propagation: f64,
    /// Agreement between the semigroup flow and the mean-field integrator.
    pub flow_consistency: f64,
    /// Gate: a kernel transform must leave the flow unchanged below this.
    pub reduction_flow_gate: f64,
    /// The identity log mu_t(P_{T-t}(1)) = integral of mu_s(Lambda).
    pub semigroup_identity: f64,
    /// W-operator propagation mu_t(W_{t,T} phi) = mu_T(phi).
    pub w_propagation: f64,
    /// Row-stochasticity of the inhomogeneous propagator.
    pub propagator_stochastic: f64,
    /// Semigroup property of the inhomogeneous propagator.
    pub propagator_semigroup: f64,
    /// Relative change at which quadrature refinement stops.
    pub quadrature_rel: f64,
    /// Tail threshold (relative to the running total) for improper integrals.
    pub improper_tail_rel: f64,
    /// Cross-check between independent routes to the same variance value.
    pub variance_cross_check: f64,
}

impl Tolerances {
    pub fn default_profile() -> Self {
        Tolerances {
            exact_identity: 1e-12,
            eigen_residual: 1e-10,
            flow_mass: 1e-10,
            flow_propagation: 1e-9,
            flow_consistency: 1e-6,
            reduction_flow_gate: 1e-8,
            semigroup_identity: 1e-8,
            w_propagation: 1e-9,
            propagator_stochastic: 1e-8,
            propagator_semigroup: 1e-7,
            quadrature_rel: 1e-6,
            improper_tail_rel: 1e-12,
            variance_cross_check: 1e-8,
        }
    }

    /// Tighter discretization bounds; exact-arithmetic tolerances stay at
    /// their floating-point floor.
    pub fn strict() -> Self {
        Tolerances {
            exact_identity: 1e-12,
            eigen_residual: 1e-11,
            flow_mass: 1e-11,
            flow_propagation: 1e-10,
            flow_consistency: 1e-8,
            reduction_flow_gate: 1e-9,
            semigroup_identity: 1e-9,
            w_propagation: 1e-10,
            propagator_stochastic: 1e-9,
            propagator_semigroup: 1e-8,
            quadrature_rel: 1e-8,
            improper_tail_rel: 1e-13,
            variance_cross_check: 1e-9,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Self::default_profile()),
            "strict" => Some(Self::strict()),
            _ => None,
        }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::default_profile()
    }
}
