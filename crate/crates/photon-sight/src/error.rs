use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient counts: {0}")]
    InsufficientCounts(String),

    #[error(
        "stop condition unreachable: simulated {pulses_simulated} pulses (cap) \
         with only {heralds} heralds toward a target of {target}"
    )]
    StopUnreachable {
        pulses_simulated: u64,
        heralds: u64,
        target: u64,
    },

    #[error("calibration target unreachable: {0}")]
    CalibrationUnreachable(String),

    #[error("model unidentifiable: {0}")]
    Unidentifiable(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
