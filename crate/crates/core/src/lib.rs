//! Desk-scale workbench for frequency-domain diffuse optical tomography.
//!
//! The pipeline simulates intensity-modulated photon transport through
//! voxelized layered phantoms, replays the recorded photon paths into
//! log-amplitude/phase measurements and exact absorption Jacobians, and
//! reconstructs absorption changes with linearized Gaussian inversion.
//! Orthogonal projections built from nuisance Jacobians (optode coupling
//! coefficients, absorption activity outside the region of interest, and
//! misspecified tissue baselines) are applied to the measurement model to
//! suppress the corresponding modeling errors.

pub mod bayes;
pub mod error;
pub mod phantom;
pub mod projector;
pub mod replay;
pub mod rng;
pub mod runner;
pub mod sparse;
pub mod transport;

pub use bayes::{
    covariance_gap, l2_error, posterior, prior_covariance, projected_posterior, CovarianceMode,
    PosteriorResult, PriorModel,
};
pub use error::{Error, Result};
pub use phantom::{
    build_layered_phantom, compute_fov, insert_perturbation, place_optodes, split_roi_roni,
    LayeredPhantomSpec, OpticalProperties, OptodeConfig, PerturbationField, RegionMasks, RoiSpec,
    Tissue, VoxelMask, VoxelPhantom,
};
pub use projector::{
    baseline_subspace, combined_projection, coupling_jacobian, projection_from_basis,
    roni_subspace, CouplingJacobian, ProjectionKind, ProjectionOperator, SpsdWeight,
    SubspaceBasis,
};
pub use replay::{
    absorption_jacobian, add_noise, apply_coupling, complex_intensity, difference_data,
    measurement_frame, replay_frame, tissue_difference_jacobian, CouplingState, JacobianSet,
    MeasurementFrame, NoiseModel,
};
pub use runner::{RunReport, ScenarioConfig};
pub use sparse::CsrMatrix;
pub use transport::{
    simulate_source, PhotonRecord, PhotonRecordSet, TransportSettings,
};
