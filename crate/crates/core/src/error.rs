use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the noisy clustering pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters, mismatched dimensions or unsupported options.
    #[error("configuration error: {0}")]
    Config(String),

    /// The noise characteristic function is (numerically) zero inside the kernel band.
    #[error("ill-posed deconvolution: |F[eta]({t})| = {value:e} inside the band at bandwidth {lambda}")]
    IllPosed { lambda: f64, t: f64, value: f64 },

    /// A kernel table was asked for an offset outside its tabulated range.
    #[error("offset {offset} outside the kernel table range [-{range}, {range}] (bandwidth {lambda})")]
    Range { lambda: f64, offset: f64, range: f64 },

    /// An optimisation or quadrature produced non-finite values.
    #[error("numerical failure at bandwidth {lambda}: {reason}")]
    Numerical { lambda: f64, reason: String },

    /// Brute-force search refused because the combinatorial guard was exceeded.
    #[error("brute-force search over {candidates}^{k} codebooks exceeds the guard of {limit}")]
    Guard { candidates: usize, k: usize, limit: u64 },

    /// A stored oracle was beaten by more than the quadrature tolerance.
    #[error("excess risk {excess:e} is negative beyond tolerance: the stored oracle is not optimal")]
    OracleNotOptimal { excess: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by invalid input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Guard { .. } | Error::Json(_) | Error::Range { .. }
        )
    }
}
