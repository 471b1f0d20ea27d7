#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("need at least {need} observations, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("design has rank {rank} < {cols} columns")]
    RankDeficient { rank: usize, cols: usize },
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("duplicate key {0}")]
    DuplicateKey(String),
    #[error("non-finite value at {0}")]
    NonFinite(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("alternating demeaning did not converge in {0} sweeps")]
    NonConvergent(usize),
    #[error("need at least two clusters, got {0}")]
    SingleCluster(usize),
    #[error("feature {feature} has fewer than two distinct values")]
    Constant { feature: usize },
    #[error("expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
}
