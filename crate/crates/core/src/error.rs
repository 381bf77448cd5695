use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("no events observed")]
    NoEvents,
    #[error("requested {requested} time points but only {available} distinct event times are observed")]
    TooFewEventTimes { requested: usize, available: usize },
    #[error("leave-one-out pseudo-observations need at least 2 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("design matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },
    #[error("chain {chain}: initial value is outside the support of the target density")]
    InitOutsideSupport { chain: usize },
    #[error("chain {chain}: no proposal accepted during warm-up; try initial values closer to the mode")]
    NoAcceptance { chain: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("censoring rate {0} cannot be attained by a uniform censoring distribution")]
    Unattainable(f64),
}
