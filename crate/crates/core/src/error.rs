use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("operator is not Hermitian (max |A - A^H| = {deviation:.3e})")]
    NonHermitian { deviation: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-decaying coherence: coherence block has eigenvalue {eigenvalue}")]
    NonDecayingCoherence { eigenvalue: Complex64 },

    #[error("resolvent singular at s = {s}: generator eigenvalue {eigenvalue}")]
    SingularResolvent { s: Complex64, eigenvalue: Complex64 },

    #[error("non-unique steady state: smallest eigenvalue magnitudes {smallest:.3e} and {second:.3e}")]
    NonUniqueSteadyState { smallest: f64, second: f64 },

    #[error("state is not stationary (residual {residual:.3e})")]
    NonStationary { residual: f64 },

    #[error("effective rate matrix is not real (max imaginary part {max_imag:.3e})")]
    NonRealRates { max_imag: f64 },

    #[error("rate matrix columns do not sum to zero (max defect {defect:.3e})")]
    NotConservative { defect: f64 },

    #[error("singular diagonal at state {state}: {reason}")]
    SingularDiagonal { state: usize, reason: &'static str },

    #[error("flux violates loop conditions: {0}")]
    InvalidCurlFlux(String),

    #[error("loop extraction left residual flux {remaining:.3e} at state {state}")]
    ResidualFlux { state: usize, remaining: f64 },

    #[error("model is not detailed balanced (max |t_mn - t_nm| = {violation:.3e})")]
    NotDetailedBalanced { violation: f64 },

    #[error("mismatched model components: {0}")]
    ModelMismatch(String),
}
