use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("control voltage {u} V exceeds the limit {u0} V")]
    ControlOutOfRange { u: f64, u0: f64 },

    #[error("singular {0} matrix")]
    Singular(&'static str),

    #[error("no saturation equilibrium: arcsin argument {0} lies outside [-1, 1]")]
    NoSaturationEquilibrium(f64),

    #[error("polynomial leading coefficient is zero")]
    ZeroLeadingCoefficient,

    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),

    #[error("expected {expected} unstable mode(s), found {found}")]
    UnstableModeCount { expected: usize, found: usize },

    #[error("unstable eigenvalue {re}{im:+}i is not real")]
    ComplexUnstable { re: f64, im: f64 },

    #[error("repeated unstable eigenvalue {0}")]
    RepeatedEigenvalue(f64),

    #[error("input gain d = {0} of an unstable mode vanishes; the pair (A, b) is not controllable")]
    Uncontrollable(f64),

    #[error("gain {gamma} violates the pole condition lambda + d*gamma = {value} < 0")]
    PoleCondition { gamma: f64, value: f64 },

    #[error("gain {gamma} has the wrong sign; required sign is {required}")]
    GammaSign { gamma: f64, required: f64 },

    #[error("eigenvalue {0} must be positive")]
    NonPositiveEigenvalue(f64),

    #[error("bisection bracket [{lo}, {hi}] does not straddle the basin boundary ({detail})")]
    Bracket { lo: f64, hi: f64, detail: String },

    #[error("no limit cycle found: {0}")]
    NoCycle(String),

    #[error("invalid simulation settings: {0}")]
    Settings(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("{0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(line: usize, msg: impl Into<String>) -> Self {
        Error::Config {
            line,
            msg: msg.into(),
        }
    }
}
