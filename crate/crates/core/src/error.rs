use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular working matrix at iteration {iteration}")]
    Singular { iteration: usize },

    #[error("covariance is not positive semidefinite (leading minor {minor})")]
    NotPsd { minor: usize },

    #[error("logit undefined at p = {0}")]
    LogitDomain(f64),

    #[error("region '{region}' has an odd number of communities ({count})")]
    OddRegion { region: String, count: usize },

    #[error("region '{region}' has {count} communities; exact matching supports at most 16")]
    RegionTooLarge { region: String, count: usize },

    #[error("no measured uncensored members")]
    EmptyMeasured,

    #[error("ratio undefined: control-arm estimate is zero")]
    RatioUndefined,

    #[error("zero person-time")]
    ZeroPersonTime,

    #[error("record {id}: {rule}")]
    InconsistentRecord { id: String, rule: String },

    #[error("underpowered design: no reduction in (0,1) reaches the requested power")]
    Underpowered,

    #[error("invalid scenario: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
