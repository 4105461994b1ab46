//! Actions, episodes and per-episode telemetry.

use crate::se3::{Pose, RelPose};
use crate::sim::{ObservationFrame, Scenario};
use alloc::vec::Vec;

/// Relative end-effector command plus gripper bit (`true` = closed).
///
/// The delta is held as single-precision `(t, theta * e)` so that stored
/// and in-memory actions are bit-identical.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub delta: [f32; 6],
    pub gripper: bool,
}

impl Action {
    pub fn new(delta: &RelPose, gripper: bool) -> Self {
        let a = delta.to_array();
        Action { delta: a.map(|v| v as f32), gripper }
    }

    pub fn from_array(a: [f64; 6], gripper: bool) -> Self {
        Action { delta: a.map(|v| v as f32), gripper }
    }

    pub fn values(&self) -> [f64; 6] {
        self.delta.map(f64::from)
    }

    pub fn rel(&self) -> RelPose {
        RelPose::from_array(self.values())
    }

    pub fn is_identity_open(&self) -> bool {
        !self.gripper && self.delta.iter().all(|v| *v == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Source {
    Pvp,
    Kinesthetic,
}

impl Source {
    pub fn code(self) -> u8 {
        match self {
            Source::Pvp => 0,
            Source::Kinesthetic => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Source::Pvp),
            1 => Some(Source::Kinesthetic),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeMeta {
    pub seed: u64,
    pub scenario: Scenario,
    pub source: Source,
    pub noise_aug: bool,
    pub ccg: bool,
    pub tr: bool,
    pub regrasps: u32,
    pub success: bool,
    /// Index of the placed object.
    pub target: u32,
    /// End-effector pose the actions start from.
    pub start: Pose,
    /// Object pose in the end-effector frame at grasp time.
    pub grasp_offset: Pose,
}

/// Frames `0..=T` and actions `0..T`; tuple `i` is
/// `(stack(i), actions[i], stack(i + 1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub meta: EpisodeMeta,
    pub frames: Vec<ObservationFrame>,
    pub actions: Vec<Action>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Frame `i` followed by up to `depth - 1` predecessors; the first frame
    /// fills in before the episode start.
    pub fn stack(&self, i: usize, depth: usize) -> Vec<&ObservationFrame> {
        (0..depth).map(|k| &self.frames[i.saturating_sub(k)]).collect()
    }

    /// Frame and action counts agree and the episode ends with
    /// `open_steps` identity open actions.
    pub fn is_well_formed(&self, open_steps: usize) -> bool {
        !self.actions.is_empty()
            && self.frames.len() == self.actions.len() + 1
            && self.actions.len() >= open_steps
            && self.actions[self.actions.len() - open_steps..].iter().all(Action::is_identity_open)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum FailureCause {
    NoGrasp,
    GraspMiss,
    UnstableGrasp,
    /// Stored preload shifted the object in hand on release.
    PreloadShift,
    /// Shallow grasp slipped during retrieval.
    Slip,
    Misplacement,
}

impl FailureCause {
    pub const ALL: [FailureCause; 6] = [
        FailureCause::NoGrasp,
        FailureCause::GraspMiss,
        FailureCause::UnstableGrasp,
        FailureCause::PreloadShift,
        FailureCause::Slip,
        FailureCause::Misplacement,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FailureCause::NoGrasp => "no-grasp",
            FailureCause::GraspMiss => "grasp-miss",
            FailureCause::UnstableGrasp => "unstable-grasp",
            FailureCause::PreloadShift => "preload-shift",
            FailureCause::Slip => "slip",
            FailureCause::Misplacement => "misplacement",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Telemetry {
    pub seed: u64,
    pub success: bool,
    pub cause: Option<FailureCause>,
    pub peak_preload: f64,
    pub regrasps: u32,
    /// Contact area at the start of retrieval.
    pub retrieval_area: f64,
    pub pos_err: f64,
    pub rot_err: f64,
    /// Released and resting at the goal height.
    pub settled: bool,
    pub length: usize,
}

impl Telemetry {
    /// Success under tolerances scaled by `factor`.
    pub fn success_at(&self, eps_pos: f64, eps_rot: f64, factor: f64) -> bool {
        self.settled && self.pos_err <= eps_pos * factor && self.rot_err <= eps_rot * factor
    }
}
