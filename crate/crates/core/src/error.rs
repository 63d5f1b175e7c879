use thiserror::Error;

use crate::geometry::SiteId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown site id {0}")]
    UnknownSite(SiteId),

    #[error("duplicate site id {0}")]
    DuplicateSite(SiteId),

    #[error("sites {a} and {b} are {distance:.6e} apart, below the separation floor {floor:.6e}")]
    Separation {
        a: SiteId,
        b: SiteId,
        distance: f64,
        floor: f64,
    },

    #[error("empty configuration: {0}")]
    Empty(String),

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("matrix is not positive definite (smallest eigenvalue {0:.3e})")]
    NotPositiveDefinite(f64),

    #[error("contour construction failed: {0}")]
    Contour(String),

    #[error("resolvent factorization failed at z = {re:.6}{im:+.6}i")]
    Factorization { re: f64, im: f64 },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("relaxation failed: {0}")]
    Relax(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors raised by numerical routines rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Eigen(_)
                | Error::NotPositiveDefinite(_)
                | Error::Contour(_)
                | Error::Factorization { .. }
                | Error::Fit(_)
                | Error::Relax(_)
                | Error::Separation { .. }
        )
    }
}
