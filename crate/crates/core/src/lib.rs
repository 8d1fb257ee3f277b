//! Hidden Markov model segmentation and its risks.
//!
//! The crate decodes state paths (Viterbi, pointwise posterior, and penalized
//! hybrids between them), evaluates conditional risks of any path, and
//! estimates the long-run limits of those risks by simulation, including a
//! decomposition of the Viterbi log-joint risk into emission, transition, and
//! observation-entropy terms. Supports categorical and univariate Gaussian
//! emissions.

pub mod alignment;
pub mod error;
pub mod estimation;
pub mod inference;
pub mod model;
pub mod oracle;
pub mod presets;
pub mod regeneration;
pub mod risk;

pub use alignment::{hybrid_log_r1, hybrid_r1, pmap, viterbi, PathKind, StatePath};
pub use error::{Error, ModelViolation, Result};
pub use estimation::{
    estimate_r1, estimate_rbar1, estimate_rbar_inf, estimate_rbar_y_inf, posterior_floor_stats,
    simulate, AsymptoticRiskReport, EstimateSummary, FloorStats, QsTable, SimConfig,
    SimulationTrace, TraceRow,
};
pub use inference::{forgetting_profile, forward_backward, tv_distance, ForgettingProfile, Posteriors};
pub use model::{
    EmissionFamily, HmmModel, LabeledSample, LossMatrix, ModelSpec, ObsSeq,
};
pub use oracle::{brute_best, enumerate_paths, EnumeratedPosterior, OracleObjective};
pub use regeneration::{
    check_a2, detect_cluster, fixation_points, stopping_times, BarrierSet, ClusterInfo,
    ClusterOutcome, DominanceReport, RenewalDiagnostics,
};
pub use risk::{empirical_r1, evaluate_risks, RiskReport, RiskValue};
