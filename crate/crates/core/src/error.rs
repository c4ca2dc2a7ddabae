use thiserror::Error;

use crate::identity::IdentityReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("grid error: {0}")]
    Grid(String),
    #[error("point {x} lies outside the grid domain [{lo}, {hi}]")]
    Domain { x: f64, lo: f64, hi: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate state: {0}")]
    DegenerateState(String),
    #[error("singular gauge: |sin {angle}| = {value:.3e} at x = {x}")]
    SingularGauge { angle: &'static str, value: f64, x: f64 },
    #[error("front under-resolved: {points_per_width:.2} points per front width at t = {t} (need {required})")]
    Resolution {
        t: f64,
        points_per_width: f64,
        required: f64,
    },
    #[error("invalid recipe: {0}")]
    Recipe(String),
    #[error("numerical blow-up at t = {t}")]
    NumericalBlowup { t: f64 },
    #[error("time step {dt} exceeds the accuracy guard {max}")]
    AccuracyGuard { dt: f64, max: f64 },
    #[error("identity verification failed: best relative residual {residual:.3e} > tolerance {tolerance:.3e}")]
    VerificationFailure {
        residual: f64,
        tolerance: f64,
        report: Box<IdentityReport>,
    },
}

pub(crate) fn ensure_finite(name: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    for (i, v) in values.into_iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidField(format!("{name}[{i}] = {v}")));
        }
    }
    Ok(())
}
