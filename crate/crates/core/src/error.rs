use std::io;

use thiserror::Error;

/// Violations of the [`TomoCube`](crate::domain::TomoCube) invariants.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CubeError {
    #[error("non-finite intensity at pol {pol}, voxel ({x}, {y}, {z})")]
    NonFiniteIntensity { pol: usize, x: usize, y: usize, z: usize },
    #[error("negative intensity at pol {pol}, voxel ({x}, {y}, {z})")]
    NegativeIntensity { pol: usize, x: usize, y: usize, z: usize },
    #[error("z axis is not strictly increasing with uniform spacing at bin {0}")]
    NonMonotoneZAxis(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("header parse error: {0}")]
    HeaderParse(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("incompatible pixel spacing: {0}")]
    IncompatibleSpacing(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<CubeError> for FormatError {
    fn from(e: CubeError) -> Self {
        FormatError::InvariantViolation(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("bad scene parameters: {0}")]
    BadParams(String),
    #[error("profile has no bins at or above the vegetation floor {0} m")]
    EmptyVegetationWindow(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SplitError {
    #[error("bad split spec: {0}")]
    BadSpec(String),
    #[error("grid {nx}x{ny} too small for a geographic split")]
    TooSmall { nx: usize, ny: usize },
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} predictions vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("truth has zero variance")]
    ZeroVariance,
    #[error("channel {0} is constant on the fitting data")]
    ConstantChannel(usize),
    #[error("scaler used before fit")]
    NotFitted,
    #[error("non-finite value in input")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TabularError {
    #[error("selection contains no usable pixels")]
    EmptySelection,
    #[error("too few rows: need {need}, have {have}")]
    TooFewRows { need: usize, have: usize },
    #[error("singular normal equations")]
    SingularSystem,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("bad regressor: {0}")]
    BadRegressor(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("bad model spec: {0}")]
    BadSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no patches: {0}")]
    NoPatches(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("loss diverged at step {step}")]
    DivergedLoss { step: usize },
    #[error("bad train config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Split(#[from] SplitError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HpoError {
    #[error("bad search space: {0}")]
    BadSpace(String),
    #[error("point outside search space: {0}")]
    OutOfSpace(String),
    #[error("budget {0} below the minimum of 5")]
    BudgetTooSmall(usize),
    #[error("all trials failed")]
    AllTrialsFailed,
}

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Crate-wide error used by the pipeline entry points.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Cube(#[from] CubeError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tabular(#[from] TabularError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Hpo(#[from] HpoError),
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error("config error: {0}")]
    Config(String),
}

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    /// Machine-readable variant name, e.g. `BadSpec` or `TruncatedPayload`.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Cube(e) => match e {
                CubeError::NonFiniteIntensity { .. } => "NonFiniteIntensity",
                CubeError::NegativeIntensity { .. } => "NegativeIntensity",
                CubeError::NonMonotoneZAxis(_) => "NonMonotoneZAxis",
                CubeError::DimensionMismatch(_) => "DimensionMismatch",
            },
            Error::Format(e) => match e {
                FormatError::BadMagic { .. } => "BadMagic",
                FormatError::HeaderParse(_) => "HeaderParse",
                FormatError::TruncatedPayload { .. } => "TruncatedPayload",
                FormatError::InvariantViolation(_) => "InvariantViolation",
                FormatError::IncompatibleSpacing(_) => "IncompatibleSpacing",
                FormatError::Io(_) => "Io",
            },
            Error::Synth(e) => match e {
                SynthError::BadParams(_) => "BadParams",
                SynthError::EmptyVegetationWindow(_) => "EmptyVegetationWindow",
            },
            Error::Split(e) => split_name(e),
            Error::Metrics(e) => metrics_name(e),
            Error::Tabular(e) => match e {
                TabularError::EmptySelection => "EmptySelection",
                TabularError::TooFewRows { .. } => "TooFewRows",
                TabularError::SingularSystem => "SingularSystem",
                TabularError::SchemaMismatch(_) => "SchemaMismatch",
                TabularError::BadRegressor(_) => "BadRegressor",
                TabularError::Metrics(m) => metrics_name(m),
            },
            Error::Net(e) => net_name(e),
            Error::Train(e) => match e {
                TrainError::NoPatches(_) => "NoPatches",
                TrainError::EmptyDataset(_) => "EmptyDataset",
                TrainError::DivergedLoss { .. } => "DivergedLoss",
                TrainError::BadConfig(_) => "BadConfig",
                TrainError::Net(n) => net_name(n),
                TrainError::Metrics(m) => metrics_name(m),
                TrainError::Split(s) => split_name(s),
            },
            Error::Hpo(e) => match e {
                HpoError::BadSpace(_) => "BadSpace",
                HpoError::OutOfSpace(_) => "OutOfSpace",
                HpoError::BudgetTooSmall(_) => "BudgetTooSmall",
                HpoError::AllTrialsFailed => "AllTrialsFailed",
            },
            Error::Recon(e) => match e {
                ReconError::ShapeMismatch(_) => "ShapeMismatch",
                ReconError::DimensionMismatch(_) => "DimensionMismatch",
                ReconError::Net(n) => net_name(n),
                ReconError::Metrics(m) => metrics_name(m),
            },
            Error::Config(_) => "ConfigError",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self.name() {
            "BadSpec" | "BadParams" | "BadConfig" | "BadSpace" | "OutOfSpace" | "BudgetTooSmall"
            | "BadRegressor" | "ConfigError" => ErrorClass::Config,
            "DivergedLoss" | "SingularSystem" | "NonFinite" | "ZeroVariance" | "AllTrialsFailed" => {
                ErrorClass::Numerical
            }
            _ => ErrorClass::Data,
        }
    }
}

fn split_name(e: &SplitError) -> &'static str {
    match e {
        SplitError::BadSpec(_) => "BadSpec",
        SplitError::TooSmall { .. } => "TooSmall",
        SplitError::DegenerateSplit(_) => "DegenerateSplit",
    }
}

fn metrics_name(e: &MetricsError) -> &'static str {
    match e {
        MetricsError::EmptyInput => "EmptyInput",
        MetricsError::LengthMismatch(..) => "LengthMismatch",
        MetricsError::ZeroVariance => "ZeroVariance",
        MetricsError::ConstantChannel(_) => "ConstantChannel",
        MetricsError::NotFitted => "NotFitted",
        MetricsError::NonFinite => "NonFinite",
    }
}

fn net_name(e: &NetError) -> &'static str {
    match e {
        NetError::BadSpec(_) => "BadSpec",
        NetError::ShapeMismatch(_) => "ShapeMismatch",
        NetError::NonFinite(_) => "NonFinite",
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
