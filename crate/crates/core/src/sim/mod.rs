//! Deterministic quasi-static simulation of contact-constrained scenes.

pub mod render;
pub mod scene;
pub mod world;

pub use render::{FRAME_CHANNELS, FRAME_LEN, FRAME_SIZE, PROPRIO_LEN};
pub use scene::{EvalStart, ObjectSpec, Physics, Scenario, SceneConfig, Shape, Slot};
pub use world::{lowest_point, Attachment, Gripper, Placement, ResetMode, Scene, WorldState};

use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum StiffnessMode {
    Stiff,
    CompliantFull,
    CompliantRotational,
}

/// Cartesian impedance gains: translational (N/m) and rotational (N m/rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiffnessSetting {
    pub k_t: f64,
    pub k_r: f64,
    pub mode: StiffnessMode,
}

impl StiffnessSetting {
    pub fn stiff(p: &Physics) -> Self {
        StiffnessSetting { k_t: p.k_t_stiff, k_r: p.k_r_stiff, mode: StiffnessMode::Stiff }
    }

    pub fn compliant(p: &Physics) -> Self {
        StiffnessSetting { k_t: p.k_t_compliant, k_r: p.k_r_compliant, mode: StiffnessMode::CompliantFull }
    }

    /// Stiff in translation, compliant about the rotational axes.
    pub fn compliant_rotational(p: &Physics) -> Self {
        StiffnessSetting { k_t: p.k_t_stiff, k_r: p.k_r_compliant, mode: StiffnessMode::CompliantRotational }
    }
}

/// Contact patch seen by the fingertip sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TactilePatch {
    /// Fraction of the sensor in contact, in [0, 1].
    pub area: f64,
    /// Patch centroid in the sensor plane (m); +x points to the fingertip.
    pub centroid: [f64; 2],
}

impl TactilePatch {
    pub const NONE: TactilePatch = TactilePatch { area: 0.0, centroid: [0.0, 0.0] };
}

/// One rendered wrist view plus proprioception.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFrame {
    /// `FRAME_SIZE x FRAME_SIZE x FRAME_CHANNELS`, row-major, channel last.
    pub raster: Vec<f32>,
    /// End-effector pose relative to the scene origin (6) and gripper bit.
    pub proprio: [f32; PROPRIO_LEN],
}
