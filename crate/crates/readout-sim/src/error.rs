use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("nonpositive input: {0}")]
    NonPositive(String),
    #[error("probe frequency within 1e-3 Γ of resonance with line {0}")]
    ResonanceProximity(String),
    #[error("singular linear system in {0}")]
    SingularSystem(String),
    #[error("tweezer laser resonant with {0} transition")]
    TrapResonant(String),
    #[error("integration step underflow: {0} steps required (limit 1e9)")]
    StepUnderflow(u64),
    #[error("malformed circuit: {0}")]
    MalformedCircuit(String),
    #[error("unresolved bit: readout index {0} out of range for circuit with {1} readouts")]
    UnresolvedBit(usize, usize),
    #[error("mixture fit did not converge after {0} iterations")]
    FitNonConvergence(usize),
    #[error("degenerate single-mode data: {0}")]
    DegenerateData(String),
    #[error("empty conditioning set for condition `{0}`")]
    EmptyConditioningSet(String),
    #[error("estimator failed in {failed} of {total} bootstrap sets")]
    BootstrapFailure { failed: usize, total: usize },
    #[error("lifetime fit did not converge: {0}")]
    LifetimeFitNonConvergence(String),
    #[error("fitted temperature {0} K outside scan grid")]
    TemperatureOutsideGrid(f64),
    #[error("unsupported circuit block: {0}")]
    UnsupportedBlock(String),
    #[error("condition never satisfiable: zero-denominator for `{0}`")]
    ZeroDenominator(String),
    #[error("singular Jacobian at iteration {iter}; trace: {trace}")]
    JacobianSingular { iter: usize, trace: String },
    #[error("Newton solve did not converge after {iter} iterations; trace: {trace}")]
    NewtonNonConvergence { iter: usize, trace: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
