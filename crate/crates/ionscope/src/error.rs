//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A (n, m) pair that is not a valid Zernike index.
    #[error("invalid Zernike index (n={n}, m={m}): {reason}")]
    InvalidIndex {
        n: i64,
        m: i64,
        reason: &'static str,
    },

    /// Inconsistent or out-of-range configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// An expansion evaluated against optics configured for another wavelength.
    #[error("expansion wavelength {expansion_nm} nm does not match configured {config_nm} nm")]
    WavelengthMismatch { expansion_nm: f64, config_nm: f64 },

    /// Grid too coarse for the requested aperture, field or period.
    #[error("sampling error: {0}")]
    Sampling(String),

    /// A frame measurement (FWHM, spot radius) could not be taken.
    #[error("measurement error: {0}")]
    Measurement(String),

    /// Bar-pattern analysis found fewer bars than requested.
    #[error("bar pattern error: {0}")]
    Pattern(String),

    /// Spectral deconvolution requested where the object spectrum has no power.
    #[error("ill-conditioned deconvolution: {0}")]
    IllConditioned(String),

    /// The modulation curve never crosses the resolution threshold.
    #[error(
        "no downward crossing of modulation {threshold} within the sampled band \
         (band edge {band_edge_mm:.3} mm^-1)"
    )]
    ResolutionUnbounded { threshold: f64, band_edge_mm: f64 },

    /// Scene geometry does not fit the requested extent.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Equilibrium solver did not reach the target gradient norm.
    #[error("equilibrium solver failed: {0}")]
    Solver(String),

    /// Every fit restart diverged.
    #[error("fit failed on all restarts:\n{}", diagnostics.join("\n"))]
    FitFailure { diagnostics: Vec<String> },

    /// Malformed input file (JSON, PGM header, ...).
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// CLI process exit code: 2 configuration, 3 numeric failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidIndex { .. }
            | Error::Config(_)
            | Error::WavelengthMismatch { .. }
            | Error::Parse(_) => 2,
            Error::Io(_) => 4,
            _ => 3,
        }
    }
}
