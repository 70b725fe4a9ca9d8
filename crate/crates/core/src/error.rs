use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input `{field}`: {reason}")]
    InvalidInput { field: String, reason: String },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        what: String,
        iterations: usize,
        residual: f64,
    },

    #[error(
        "zigzag instability in {direction} direction: trap anisotropy {anisotropy:.4} is below the critical value {critical:.4}"
    )]
    ZigzagInstability {
        direction: String,
        anisotropy: f64,
        critical: f64,
    },

    #[error("mode {mode} is near resonance: |detuning| = {detuning:.4e} rad/s below guard {guard:.4e} rad/s")]
    NearResonance {
        mode: usize,
        detuning: f64,
        guard: f64,
    },

    #[error("{qubits} qubits exceed the dimension cap of {cap}; raise the cap explicitly if the memory is available")]
    DimensionCap { qubits: usize, cap: usize },

    #[error("density matrix is not Hermitian (deviation {deviation:.3e})")]
    NonHermitian { deviation: f64 },

    #[error("no modulation detected in the scan")]
    NoModulation,

    #[error("excitation {value} saturates the model (must be below 1/2)")]
    Saturated { value: f64 },

    #[error("Fock-space leak {leak:.3e} exceeds {limit:.1e}; increase fock_cutoff (currently {cutoff})")]
    CutoffLeak { leak: f64, limit: f64, cutoff: usize },

    #[error("singular regression: {0}")]
    Singular(String),

    #[error("non-positive averaged coupling at distance {distance}")]
    NonPositiveCoupling { distance: usize },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidInput {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input, as opposed to numerical failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput { .. } | Error::DimensionCap { .. } | Error::NonHermitian { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
