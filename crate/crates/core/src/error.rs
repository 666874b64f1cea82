use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point {point:?} lies outside the domain box")]
    Domain { point: Vec<f64> },

    #[error("{0}")]
    Contract(String),

    #[error("expression error: {0}")]
    Expression(String),

    /// Diffusion vanishes (or changes sign) at `abscissa`; the chart has no inverse there.
    #[error("singular noise at x = {abscissa}: not a zero point of b(x) is required")]
    SingularNoise { abscissa: f64 },

    #[error("rank of the diffusion matrix varies: {0}")]
    RankVariation(String),

    #[error("diffusion matrix is indefinite at {point:?} (min eigenvalue {min_eigenvalue})")]
    Indefinite { point: Vec<f64>, min_eigenvalue: f64 },

    #[error("value {value:?} outside chart range")]
    ChartRange { value: Vec<f64>, path: Option<usize> },

    /// `map` holds `(x1, x2, residual)` at every validation point.
    #[error("chart rejected: validation residual {residual} exceeds {tolerance}")]
    ChartRejected {
        residual: f64,
        tolerance: f64,
        map: Vec<[f64; 3]>,
    },

    #[error("singular chart Jacobian at {0:?}")]
    SingularJacobian(Vec<f64>),

    #[error("time step {dt} violates the stability bound; maximal admissible dt is {max_dt}")]
    Stability { dt: f64, max_dt: f64 },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
