//! Photon-pair generation rates from a quasi-normal-mode expansion.
//!
//! A scenario bundles the resonator modes (complex eigenfrequencies, near
//! fields on a voxel grid, far-field patterns), the pump field and the
//! second-order susceptibility. From it the crate computes mode-pair overlap
//! coefficients, two-photon amplitudes, detected coincidence rates under a
//! collection model (NA cone, fiber coupling, spectral filter, knife edge)
//! and the derived observables built on them.

pub mod cli;
pub mod emission;
pub mod error;
pub mod fit;
pub mod io;
pub mod model;
pub mod observables;
pub mod overlap;
pub mod quadrature;
pub mod testbed;

pub use emission::{
    detected_pair_rate, detected_pair_rate_with, differential_pair_rate, prefactor_c,
    two_photon_amplitude, CollectionKernel, DetectorPol, RateOptions, RateResult,
};
pub use error::{Error, Result};
pub use fit::ErfFit;
pub use io::{read_scenario, write_scenario};
pub use model::{
    q_factor, validate_scenario, BlockedSide, ComplexFrequency, DetectionConfig, FarFieldAmplitude,
    FiberMode, GridGeometry, KnifeState, NearFieldGrid, Polarization, QnmMode, Scenario,
    SpectralWindow, C64,
};
pub use observables::{farfield_map, fit_erf, knife_scan, moving_average, scaling_sweep, spectrum};
pub use overlap::{
    modal_overlap_coefficient, overlap_matrix, spatial_overlap, spectral_factor, xi_table,
    OverlapTable,
};
pub use quadrature::QuadratureOrder;
