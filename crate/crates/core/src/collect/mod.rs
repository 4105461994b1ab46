//! Demonstration synthesis: grasp, retrieve, reverse, augment.

pub mod augment;
pub mod episode;
pub mod kinesthetic;
pub mod pvp;
pub mod trajectory;

pub use augment::{augment_waypoints, perturbed_count, sample_clearance};
pub use episode::{Action, Episode, EpisodeMeta, FailureCause, Source, Telemetry};
pub use kinesthetic::{run_kinesthetic_episode, KinestheticConfig};
pub use pvp::{replay_actions, run_pvp_episode, tactile_regrasp, PvpRun};
pub use trajectory::{actions_from_waypoints, downsample, reverse_to_actions, DenseTrajectory, SparseTrajectory};

use crate::error::{Error, Result};
use crate::se3::NoiseParams;

/// Parameters of the collection loop.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CollectConfig {
    /// Policy period (s).
    pub dt: f64,
    /// Identity actions with the gripper open appended to every episode.
    pub open_steps: usize,
    /// Per-axis spread of the clearance pose (m).
    pub sigma_clearance: f64,
    /// Leading fraction of place waypoints that receive noise.
    pub noise_fraction: f64,
    pub noise: NoiseParams,
    pub ccg: bool,
    pub tr: bool,
    pub noise_aug: bool,
    pub frame_stack: usize,
    pub pregrasp_offset: f64,
    pub regrasp_budget: u32,
    /// Retrieval recording rate (Hz).
    pub record_hz: f64,
    /// Vertical lift speed from grasp to pregrasp (m/s).
    pub lift_speed: f64,
    /// Translational speed from pregrasp to clearance (m/s).
    pub move_speed: f64,
    /// Rotational speed from pregrasp to clearance (rad/s).
    pub turn_speed: f64,
    /// Interpolation steps for scan -> pregrasp and pregrasp -> grasp.
    pub approach_steps: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            dt: 0.2,
            open_steps: 5,
            sigma_clearance: 0.025,
            noise_fraction: 0.75,
            noise: NoiseParams::default(),
            ccg: true,
            tr: true,
            noise_aug: false,
            frame_stack: 4,
            pregrasp_offset: 0.08,
            regrasp_budget: 3,
            record_hz: 120.0,
            lift_speed: 0.034,
            move_speed: 0.1,
            turn_speed: 0.7,
            approach_steps: 10,
        }
    }
}

impl CollectConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt > 0.0
            && (0.0..=1.0).contains(&self.noise_fraction)
            && self.sigma_clearance >= 0.0
            && self.frame_stack >= 1
            && self.pregrasp_offset > 0.0
            && self.record_hz > 0.0
            && self.lift_speed > 0.0
            && self.move_speed > 0.0
            && self.turn_speed > 0.0
            && self.approach_steps >= 1;
        if !ok {
            return Err(Error::Config("invalid collection parameters".into()));
        }
        self.noise.validate()
    }
}
