//! Timestamped pose sequences, resampling and reversal into actions.

use super::episode::Action;
use crate::error::{Error, Result};
use crate::math;
use crate::se3::{self, Pose, RelPose};
use alloc::vec::Vec;

/// Poses recorded at a fixed rate, starting at t = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTrajectory {
    pub entries: Vec<(Pose, f64)>,
    pub rate_hz: f64,
}

impl DenseTrajectory {
    pub fn new(rate_hz: f64) -> Self {
        DenseTrajectory { entries: Vec::new(), rate_hz }
    }

    /// Appends a sample; the first must be at 0 and times must increase.
    pub fn push(&mut self, pose: Pose, t: f64) -> Result<()> {
        let ok = match self.entries.last() {
            None => t == 0.0,
            Some(&(_, last)) => t > last,
        };
        if !ok || !t.is_finite() {
            return Err(Error::Domain(alloc::format!("timestamp {t} breaks ordering")));
        }
        self.entries.push((pose, t));
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        match (self.entries.first(), self.entries.last()) {
            (Some(a), Some(b)) => b.1 - a.1,
            _ => 0.0,
        }
    }
}

/// Poses at uniform spacing `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTrajectory {
    pub poses: Vec<Pose>,
    pub dt: f64,
}

impl SparseTrajectory {
    pub fn reversed(&self) -> SparseTrajectory {
        SparseTrajectory { poses: self.poses.iter().rev().copied().collect(), dt: self.dt }
    }
}

/// Nearest-timestamp resampling at `k * dt` for `k = 0..=ceil(T / dt)`.
/// Ties go to the earlier sample.
pub fn downsample(d: &DenseTrajectory, dt: f64) -> Result<SparseTrajectory> {
    if d.entries.is_empty() {
        return Err(Error::Domain("empty trajectory".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::Domain(alloc::format!("non-positive resampling period {dt}")));
    }
    let t0 = d.entries[0].1;
    let m = math::ceil((d.duration()) / dt) as usize;
    let mut poses = Vec::with_capacity(m + 1);
    let mut j = 0;
    for k in 0..=m {
        let target = t0 + k as f64 * dt;
        while j + 1 < d.entries.len() && d.entries[j + 1].1 <= target {
            j += 1;
        }
        let mut best = j;
        if j + 1 < d.entries.len() && (d.entries[j + 1].1 - target).abs() < (target - d.entries[j].1).abs() {
            best = j + 1;
        }
        poses.push(d.entries[best].0);
    }
    Ok(SparseTrajectory { poses, dt })
}

/// Actions moving between consecutive waypoints with the gripper closed,
/// then `open_steps` identity actions with the gripper open.
pub fn actions_from_waypoints(waypoints: &[Pose], open_steps: usize) -> Vec<Action> {
    let mut out: Vec<Action> =
        waypoints.windows(2).map(|w| Action::new(&se3::relative_action(&w[0], &w[1]), true)).collect();
    out.extend((0..open_steps).map(|_| Action::new(&RelPose::IDENTITY, false)));
    out
}

/// Place actions from a retrieval trajectory: the waypoints in reverse
/// order, then the gripper opens.
pub fn reverse_to_actions(s: &SparseTrajectory, open_steps: usize) -> Result<Vec<Action>> {
    if s.poses.len() < 2 {
        return Err(Error::Domain("reversal needs at least two poses".into()));
    }
    Ok(actions_from_waypoints(&s.reversed().poses, open_steps))
}
