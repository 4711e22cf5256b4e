use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix {0} contains a non-finite entry")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A factor that must be square and nonsingular is numerically singular.
    #[error("factor {factor} is singular at the rank tolerance (rank {rank} of {dim})")]
    SingularBlock {
        factor: String,
        rank: usize,
        dim: usize,
    },

    #[error("real Schur iteration did not converge")]
    SchurFailed,

    #[error("the pencil is singular")]
    SingularPencil,

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A block that the port-Hamiltonian structure forces to be zero or
    /// nonsingular is not. Usually the input is not port-Hamiltonian or the
    /// rank tolerance is too tight for the data.
    #[error("structure violated: {0}")]
    Structure(String),

    #[error("port-Hamiltonian validation failed: {0}")]
    ValidationFailed(String),

    #[error("proportional feedback condition fails: rank {rank} < {n}")]
    ProportionalConditionFailed { rank: usize, n: usize },

    #[error("derivative feedback condition fails: ranks ({first}, {second}), need {n}")]
    DerivativeConditionFailed {
        first: usize,
        second: usize,
        n: usize,
    },

    #[error("system is not completely observable: {0}")]
    NotObservable(String),

    #[error("target rank {r} infeasible, feasible ranks: {}", format_ranks(.feasible))]
    RankInfeasible { r: usize, feasible: Vec<usize> },

    #[error("target rank {r} violates the parity constraint (n - r must be even), feasible ranks: {}", format_ranks(.feasible))]
    ParityViolated { r: usize, feasible: Vec<usize> },

    #[error(
        "no derivative feedback found within the trial budget ({draws} draws x {steps} scalings)"
    )]
    SynthesisExhausted { draws: usize, steps: usize },

    #[error("closed-loop verification failed: {0}")]
    VerificationFailed(String),
}

pub(crate) fn format_ranks(ranks: &[usize]) -> String {
    let inner: Vec<String> = ranks.iter().map(|r| r.to_string()).collect();
    format!("{{{}}}", inner.join(", "))
}
