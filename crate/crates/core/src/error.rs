use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("lattice index {index} out of range for a lattice of {len} nodes")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),

    #[error("step {step} outside schedule range [0, {total}]")]
    StepOutOfRange { step: u64, total: u64 },

    #[error(
        "lambda = {0} lies outside the serial stability window [-1, 1]; \
         pass allow-unstable-lambda to run it anyway"
    )]
    UnstableLambda(f64),

    #[error("topological defect: weight sequence is not strictly monotone ({defects} sign flips)")]
    TopologicalDefect { defects: usize },

    #[error("degenerate regressor: ln p(w) has zero variance, exponent is unidentifiable")]
    DegenerateRegressor,

    #[error("only {used} usable points for the log-log fit, at least 3 required")]
    InsufficientPoints { used: usize },

    #[error("Voronoi border within probe range: margin {margin:e} does not exceed {required:e}")]
    BorderCrossing { margin: f64, required: f64 },

    #[error("{neurons} neurons but {cities} cities; the TSP limit needs equal counts")]
    CountMismatch { neurons: usize, cities: usize },

    #[error("neuron {neuron} wins {wins} cities; the TSP limit needs a one-to-one matching")]
    NotBijective { neuron: usize, wins: usize },

    #[error("no Voronoi border found along the sweep direction within {0}")]
    NoBorderFound(f64),
}
