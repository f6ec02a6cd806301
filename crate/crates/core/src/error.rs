use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("quadrilateral is not a rectangle (residual {residual:.3e} px)")]
    NotRectangular { residual: f64 },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("batch contains no ground-truth boxes")]
    NoGroundTruth,
    #[error("invalid normalizer: kw={kw}, kh={kh}")]
    InvalidNormalizer { kw: f64, kh: f64 },
    #[error("angle {0} outside (-90, 90]")]
    AngleDomain(f64),
    #[error("region of interest lies entirely outside the score map")]
    OutOfBounds,
    #[error("probabilities are not normalized (sum {0})")]
    NotNormalized(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("could not place objects after {0} attempts")]
    Placement(usize),
    #[error("frame {got} received after frame {last}")]
    Sequencing { last: i64, got: i64 },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
