use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("feature absent for day{}", match .0 { Some(d) => format!(" {d}"), None => String::new() })]
    FeatureAbsent(Option<i64>),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("improper product: precision sum is not positive definite")]
    ImproperProduct,

    #[error("cannot smooth: {0}")]
    CannotSmooth(String),

    #[error("grid too small: {boundary_fraction:.3e} of the mass lies on the grid boundary")]
    GridTooSmall { boundary_fraction: f64 },

    #[error("degenerate: boundary undefined")]
    DegenerateBoundary,

    #[error(
        "rejection sampler stalled on day {day}: {accepted} acceptances in {proposals} proposals \
         (nearest feature {distance_km:.1} km away)"
    )]
    RejectionStalled {
        day: i64,
        proposals: u64,
        accepted: u64,
        distance_km: f64,
    },

    #[error("non-finite log-posterior at initialization: {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Param(_) => 2,
            Error::FeatureAbsent(_)
            | Error::Geometry(_)
            | Error::CannotSmooth(_)
            | Error::Data(_)
            | Error::Io { .. } => 3,
            Error::ImproperProduct
            | Error::GridTooSmall { .. }
            | Error::DegenerateBoundary
            | Error::RejectionStalled { .. }
            | Error::NonFinite(_) => 4,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
