use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// One failed invariant of a model or config, with the offending field path.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },

    #[error("invalid location grid: {0}")]
    InvalidGrid(String),

    #[error("matrix is not a valid covariance: {0}")]
    InvalidCovariance(String),

    #[error("unsupported Matern smoothness {0} (supported: 0.5, 1.5, 2.5, inf)")]
    UnsupportedSmoothness(f64),

    #[error("invalid spec: {}", join_violations(.0))]
    InvalidSpec(Vec<Violation>),

    #[error("matrix is not positive definite: {0}")]
    NotPD(String),

    #[error("closed form requires the Gaussian-limit latent correlation (nu = inf)")]
    ClosedFormUnavailable,

    #[error(
        "quadrature produced an indefinite matrix (min eigenvalue {min_eig:e}, max {max_eig:e})"
    )]
    QuadratureDiverged { min_eig: f64, max_eig: f64 },

    #[error("multivariate Matern parameters are not a valid model (min eigenvalue {min_eig:e}, max {max_eig:e})")]
    NotValidModel { min_eig: f64, max_eig: f64 },

    #[error(
        "Mardia symmetry condition violated at pair ({i},{j}), relative mismatch {mismatch:e}"
    )]
    SymmetryConditionViolated { i: usize, j: usize, mismatch: f64 },

    #[error("unsupported number of components {0} (Cressie supports 2 or 3)")]
    UnsupportedP(usize),

    #[error("non-positive variance at flat index {0}")]
    ZeroVariance(usize),

    #[error("need at least 2 replicates, got {0}")]
    InsufficientReplicates(usize),

    #[error("kriging system is singular: {0}")]
    SingularSystem(String),

    #[error("observation set is empty")]
    EmptyObservations,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown model family '{0}'")]
    UnknownFamily(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    /// A TOML error with its byte span turned into a 1-based line and column.
    pub fn from_toml(source: &str, err: &toml::de::Error) -> Self {
        let (line, column) = match err.span() {
            Some(span) => {
                let before = &source[..span.start.min(source.len())];
                let line = before.matches('\n').count() + 1;
                let column = before.chars().rev().take_while(|&c| c != '\n').count() + 1;
                (line, column)
            }
            None => (0, 0),
        };
        Error::Parse {
            line,
            column,
            message: err.message().trim().to_string(),
        }
    }

    /// Short kebab-case reason with key=value details, suitable for one-line
    /// machine parsing.
    pub fn reason(&self) -> String {
        match self {
            Error::IndexOutOfRange(what) => format!("index-out-of-range what={:?}", what),
            Error::NonSquare { rows, cols } => format!("non-square rows={rows} cols={cols}"),
            Error::InvalidGrid(m) => format!("invalid-grid detail={:?}", m),
            Error::InvalidCovariance(m) => format!("invalid-covariance detail={:?}", m),
            Error::UnsupportedSmoothness(nu) => format!("unsupported-smoothness nu={nu}"),
            Error::InvalidSpec(v) => {
                let fields: Vec<_> = v.iter().map(|v| v.field.as_str()).collect();
                format!("invalid-spec fields={}", fields.join(","))
            }
            Error::NotPD(m) => format!("not-pd detail={:?}", m),
            Error::ClosedFormUnavailable => "closed-form-unavailable".into(),
            Error::QuadratureDiverged { min_eig, .. } => {
                format!("quadrature-diverged min_eig={min_eig:e}")
            }
            Error::NotValidModel { min_eig, .. } => format!("not-valid-model min_eig={min_eig:e}"),
            Error::SymmetryConditionViolated { i, j, .. } => {
                format!("symmetry-condition-violated pair=({i},{j})")
            }
            Error::UnsupportedP(p) => format!("unsupported-p p={p}"),
            Error::ZeroVariance(k) => format!("zero-variance index={k}"),
            Error::InsufficientReplicates(m) => format!("insufficient-replicates m={m}"),
            Error::SingularSystem(m) => format!("singular-system detail={:?}", m),
            Error::EmptyObservations => "empty-observations".into(),
            Error::LengthMismatch(a, b) => format!("length-mismatch left={a} right={b}"),
            Error::Parse { line, column, .. } => format!("parse-error line={line} column={column}"),
            Error::UnknownFamily(f) => format!("unknown-family name={f}"),
            Error::Io(e) => format!("io-error detail={:?}", e.to_string()),
        }
    }
}
