//! Finite-state mutation-selection population dynamics: exact stochastic
//! simulation, deterministic limit flows, spectral analysis, and asymptotic
//! variance computation, with a small zoo of reference models.

pub mod engine;
pub mod error;
pub mod expr;
pub mod harness;
pub mod linalg;
pub mod measure;
pub mod model;
pub mod solvers;
pub mod stats;
pub mod tolerances;
pub mod variance;
pub mod zoo;

pub use engine::{
    enumerate_rates, fleming_viot_mode, init_iid, master_generator, simulate, simulate_labeled,
    simulate_with_options, step, JumpEvent, LabeledTrajectoryRecord, MasterSystem, SimState,
    SimulateOptions, TrajectoryRecord,
};
pub use error::{Error, Result};
pub use harness::{
    replicate_seed, run_experiment, EstimateRow, ExperimentKind, ExperimentPlan, ExperimentReport,
    Finding, Provenance,
};
pub use measure::{tv_distance, weighted_distance, Measure, SignedMeasure, TestFunction};
pub use model::{
    effective_drift, lambda_of, sigma_reduce, validate_model, BoundaryPolicy, KernelForm,
    ModelSpec, MuFn, ProductComponent, RateMatrix, SelectionKernel, StateSpace, SymPart,
    TruncationInfo, ValidationReport, Violation,
};
pub use solvers::{
    doob_transform, eigen_triplet, fk_generator, fk_semigroup, full_jump_generator,
    inhomogeneous_propagator, mean_field_jump_generator, mean_field_ode, mean_field_ode_with_step,
    normalized_flow, stationary_law, w_operator, EigenDiagnostics, EigenTriplet, FlowMethod,
    FlowTrajectory, OdeDiagnostics,
};
pub use stats::{
    bootstrap_ci, chi_square_gof, ks_statistic_normal, log_log_fit, ols, summarize, BootstrapCi,
    ChiSquareGof, Regression, SummaryStats,
};
pub use tolerances::Tolerances;
pub use variance::{
    carre_du_champ, carre_du_champ_jump, s_mu, sigma2_inf, sigma2_t, variance_compare,
    VarianceComparison, VarianceDecomposition, VarianceDiagnostics, VarianceReport,
};
pub use zoo::{
    bd_qsd_uniqueness_check, birth_death, counterexample_bd, rate_criterion_check,
    spectral_criterion_check, spectral_criterion_check_doubling, two_allelic,
    two_allelic_absorbed, B1Mode, BDParams, CounterexampleBd, CounterexampleResiduals,
    DoublingTest, RateCriterionReport, SeriesReport, SeriesVerdict, SpectralCriterionReport,
};
