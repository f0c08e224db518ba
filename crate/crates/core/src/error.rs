use thiserror::Error;

/// Errors raised by the simulation engine and its front end.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("fuzzy number components must be ordered: {0} <= {1} <= {2} violated")]
    OrderViolation(f64, f64, f64),

    #[error("scale factor must be positive, got {0}")]
    NonPositiveFactor(f64),

    #[error("unknown rule '{0}'")]
    UnknownRule(String),

    #[error("invalid rule table: {0}")]
    InvalidRuleTable(String),

    #[error("previous velocity {0} outside table range 0..=3")]
    VelocityOutOfRange(i64),

    #[error("collision detected at step {step}: vehicle {vehicle} would reach cell {cell}")]
    CollisionDetected { step: u64, vehicle: usize, cell: i64 },

    #[error("position {x} outside auxiliary bounds [{lo}, {hi}]")]
    BoundViolation { x: i64, lo: i64, hi: i64 },

    #[error("saturation flow {s} veh/step outside calibratable range [{lo}, {hi}]")]
    OutOfRange { s: f64, lo: f64, hi: f64 },

    #[error("upstream queue exhausted at step {0}; saturation flow measurement invalid")]
    QueueExhausted(u64),

    #[error("component {component} never crossed cell {cell} within the log horizon")]
    NeverArrived { component: usize, cell: i64 },

    #[error("empty sample")]
    EmptySample,

    #[error("{vehicles} vehicles do not fit on a ring of {cells} cells")]
    Overfull { vehicles: usize, cells: i64 },

    #[error("dimension mismatch: fuzzy run (T={fuzzy_t}, N={fuzzy_n}) vs ensemble (T={nasch_t}, N={nasch_n})")]
    DimensionMismatch { fuzzy_t: u64, fuzzy_n: usize, nasch_t: u64, nasch_n: usize },

    #[error("invalid geometry: {0}")]
    GeometryError(String),

    #[error("invalid signal schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SimError {
    /// Short machine-readable tag for the error record emitted by the CLI.
    pub fn kind(&self) -> &'static str {
        match self {
            SimError::OrderViolation(..) => "order_violation",
            SimError::NonPositiveFactor(..) => "non_positive_factor",
            SimError::UnknownRule(..) => "unknown_rule",
            SimError::InvalidRuleTable(..) => "invalid_rule_table",
            SimError::VelocityOutOfRange(..) => "velocity_out_of_range",
            SimError::CollisionDetected { .. } => "collision_detected",
            SimError::BoundViolation { .. } => "bound_violation",
            SimError::OutOfRange { .. } => "out_of_range",
            SimError::QueueExhausted(..) => "queue_exhausted",
            SimError::NeverArrived { .. } => "never_arrived",
            SimError::EmptySample => "empty_sample",
            SimError::Overfull { .. } => "overfull",
            SimError::DimensionMismatch { .. } => "dimension_mismatch",
            SimError::GeometryError(..) => "geometry_error",
            SimError::InvalidSchedule(..) => "invalid_schedule",
            SimError::InvalidParameter(..) => "invalid_parameter",
            SimError::Config(..) => "config",
            SimError::Io(..) => "io",
            SimError::Json(..) => "json",
            SimError::Csv(..) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
