use thiserror::Error;

/// Errors produced by the spin-ratchet model.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid spin system: {0}")]
    InvalidSystem(String),
    #[error("invalid drive: {0}")]
    InvalidDrive(String),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("nucleus index {index} out of range for {count} nuclei")]
    NucleusOutOfRange { index: usize, count: usize },
    #[error("no anti-crossing found inside the sweep window [{lo} Hz, {hi} Hz]")]
    NoCrossingInBandwidth { lo: f64, hi: f64 },
    #[error("maximum sits on the search window boundary at {at}")]
    NoInteriorMaximum { at: f64 },
    #[error("step too coarse: {0}")]
    StepTooCoarse(String),
    #[error("{nuclei} nuclei exceed the exact-propagation cap of {cap}")]
    TooManyNuclei { nuclei: usize, cap: usize },
    #[error("need at least {required} samples, got {got}")]
    InsufficientSamples { required: usize, got: usize },
    #[error("fit diverged: {0}")]
    FitDiverged(String),
    #[error("all x values are equal")]
    DegenerateX,
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
