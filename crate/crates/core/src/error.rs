use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("linear system is singular: {0}")]
    Singular(String),

    #[error("factorization failed: non-positive pivot at global dof {dof} ({system})")]
    Factorization { system: &'static str, dof: usize },

    #[error("{system} solve residual {residual:.3e} exceeds tolerance {tolerance:.1e}")]
    Residual {
        system: &'static str,
        residual: f64,
        tolerance: f64,
    },

    #[error("strain energy is not positive (SE = {0:e}); load vector vanished or solve failed")]
    DegenerateStrainEnergy(f64),

    #[error("intermediate volume is zero; cannot rescale the dilated volume target")]
    ZeroIntermediateVolume,

    #[error("MMA subproblem did not converge: {0}")]
    Subproblem(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

impl Error {
    /// True for failures caused by numerics rather than by user input.
    pub fn is_numerical(&self) -> bool {
        !matches!(self, Error::InvalidConfig(_) | Error::InvalidModel(_))
    }
}
