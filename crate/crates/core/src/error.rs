use thiserror::Error;

/// Errors surfaced by grid construction, operator assembly and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid spec: {0}")]
    GridSpec(String),

    #[error("quadrature sample length {got} does not match node count {expect}")]
    SampleLength { got: usize, expect: usize },

    #[error("operator assembly failed: {0}")]
    Assembly(String),

    #[error("input has a null-space component |Ph| = {p_norm:.3e} above tolerance {tol:.3e}")]
    NullComponent { p_norm: f64, tol: f64 },

    #[error("grazing velocity (v3 = 0) has no backward exit")]
    Grazing,

    #[error("invalid slab: {0}")]
    Slab(String),

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("boundary data fails the flux compatibility conditions; residual moments {moments:?}")]
    Incompatible { moments: [f64; 4] },

    #[error("boundary lift moment residuals {residuals:?} above tolerance {tol:.3e}")]
    LiftMoments { residuals: [f64; 4], tol: f64 },

    #[error("fixed-point iteration failed to contract (ratio {ratio:.4}) after {iters} iterations")]
    NonContractive { ratio: f64, iters: usize, history: Vec<f64> },

    #[error("sequence is not Cauchy: successive differences {diffs:?} do not decrease")]
    NonCauchy { diffs: Vec<f64> },

    #[error("slab-doubling discrepancy did not decrease: {diffs:?}")]
    DomainExtension { diffs: Vec<f64> },

    #[error("operator invalid: {0}")]
    OperatorInvalid(String),

    #[error("Picard iteration not contracting at delta = {delta:.3e} (ratio {ratio:.4})")]
    DeltaTooLarge { delta: f64, ratio: f64, history: Vec<f64> },

    #[error("weighted norm would overflow: sigma * x = {0:.3e}")]
    NormOverflow(f64),

    #[error("cache i/o: {0}")]
    CacheIo(String),

    #[error("{0}")]
    Invalid(String),
}
