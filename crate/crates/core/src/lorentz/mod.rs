//! Electrons scattering off fixed, randomly placed, screened ions.
//!
//! Units: `λ_D = ω_p = v_th = 1`.

mod covariance;
mod plasma;
mod potential;
mod spline;

pub use covariance::{
    bipolar_components, closed_form_in, direct_in, field_covariance, potential_covariance, CovarianceValues,
    IsotropicCovariance, TABLE_POINTS,
};
pub use plasma::{
    asymptotic_scan, energy_growth, lorentz_form, lorentz_frequency, lorentz_tensor, non_hamiltonian_witness, projector_u,
    EnergyGrowth, Lorentz, LorentzParams, ScanRow, Split, SCAN_COLUMNS,
};
pub use potential::{regularized_potential, Potential, Profile};

use crate::quad::QuadratureError;

#[derive(Debug, thiserror::Error)]
pub enum LorentzError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("quadrature failed: {0}")]
    Quadrature(String),
    #[error("diffusion tensor is not positive semi-definite: eigenvalue {min_eigenvalue:e} with trace {trace:e}")]
    NotPsd { min_eigenvalue: f64, trace: f64 },
}

impl From<QuadratureError> for LorentzError {
    fn from(e: QuadratureError) -> Self {
        LorentzError::Quadrature(e.to_string())
    }
}
