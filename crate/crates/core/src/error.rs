use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("grasp missed: end effector outside capture radius ({distance:.4} m, {angle:.3} rad)")]
    GraspMiss { distance: f64, angle: f64 },
    #[error("no grasp candidates available")]
    NoGrasp,
    #[error("regrasp budget of {budget} exhausted")]
    UnstableGrasp { budget: u32 },
    #[error("training error at batch {batch}: {reason}")]
    Training { batch: usize, reason: String },
    #[error("invalid episode: {0}")]
    Episode(String),
}
