//! Scripted stand-in for demonstrations taught by hand.
//!
//! The generator follows the same start and goal as the collection loop
//! but humanizes the path: it is slower, jittery, pauses, sometimes
//! overshoots and corrects, and waits before opening the gripper.

use super::episode::{Episode, Source};
use super::pvp::{execute, hold, run_pvp_episode};
use super::trajectory::actions_from_waypoints;
use super::CollectConfig;
use crate::error::{Error, Result};
use crate::math;
use crate::rng::{normal, seeded, stream};
use crate::se3::{self, Pose};
use crate::sim::{ResetMode, Scene, WorldState};
use alloc::sync::Arc;
use alloc::vec::Vec;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct KinestheticConfig {
    /// Range of the time-stretch factor applied to the path.
    pub stretch: (f64, f64),
    /// Per-axis translational jitter (m).
    pub jitter_t: f64,
    /// Per-axis rotational jitter (rad).
    pub jitter_rot: f64,
    /// Final waypoints kept free of jitter, pauses and overshoot.
    pub clean_tail: usize,
    /// Probabilities of 0, 1, 2 and 3 pauses.
    pub idle_counts: [f64; 4],
    /// Inclusive range of pause lengths (steps).
    pub idle_len: (usize, usize),
    pub overshoot_prob: f64,
    /// Overshoot as a multiple of the preceding step.
    pub overshoot_gain: f64,
    /// Inclusive range of steps waited before opening the gripper.
    pub open_delay: (usize, usize),
}

impl Default for KinestheticConfig {
    fn default() -> Self {
        KinestheticConfig {
            stretch: (0.93, 1.56),
            jitter_t: 0.004,
            jitter_rot: math::deg(1.0),
            clean_tail: 4,
            idle_counts: [0.1, 0.35, 0.35, 0.2],
            idle_len: (1, 4),
            overshoot_prob: 0.3,
            overshoot_gain: 0.8,
            open_delay: (1, 4),
        }
    }
}

impl KinestheticConfig {
    /// No humanization: reproduces the collection-loop place path.
    pub fn disabled() -> Self {
        KinestheticConfig {
            stretch: (1.0, 1.0),
            jitter_t: 0.0,
            jitter_rot: 0.0,
            clean_tail: 0,
            idle_counts: [1.0, 0.0, 0.0, 0.0],
            idle_len: (0, 0),
            overshoot_prob: 0.0,
            overshoot_gain: 0.0,
            open_delay: (0, 0),
        }
    }
}

fn range_usize<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (usize, usize)) -> usize {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Resamples a waypoint path to `(n - 1) * factor + 1` points.
fn stretch(path: &[Pose], factor: f64) -> Vec<Pose> {
    let n = path.len();
    let m = math::round((n - 1) as f64 * factor) as usize + 1;
    if m == n || n < 2 {
        return path.to_vec();
    }
    (0..m)
        .map(|j| {
            let u = j as f64 * (n - 1) as f64 / (m - 1) as f64;
            let i = (math::floor(u) as usize).min(n - 2);
            let s = (u - i as f64).clamp(0.0, 1.0);
            se3::interpolate(&path[i], &path[i + 1], s).expect("fraction in range")
        })
        .collect()
}

/// Humanized variant of a place-ordered path, including the pause before
/// the gripper opens.
pub fn humanize<R: Rng + ?Sized>(path: &[Pose], k: &KinestheticConfig, rng: &mut R) -> Vec<Pose> {
    let factor = if k.stretch.1 > k.stretch.0 { rng.random_range(k.stretch.0..=k.stretch.1) } else { k.stretch.0 };
    let mut w = stretch(path, factor);
    let free = w.len().saturating_sub(k.clean_tail.max(1));
    if k.jitter_t > 0.0 || k.jitter_rot > 0.0 {
        for p in &mut w[1..free.max(1)] {
            let dt = [normal(rng), normal(rng), normal(rng)].map(|v| v * k.jitter_t);
            let dr = [normal(rng), normal(rng), normal(rng)].map(|v| v * k.jitter_rot);
            p.translation = math::add(p.translation, dt);
            p.rotation = se3::quat_from_vector(dr).mul_raw(&p.rotation).normalized();
        }
    }
    if free >= 3 && rng.random::<f64>() < k.overshoot_prob {
        let j = rng.random_range(1..(free * 3 / 5).max(2));
        let step = math::sub(w[j].translation, w[j - 1].translation);
        let past = Pose::new(w[j].rotation, math::add(w[j].translation, math::scale(step, k.overshoot_gain)));
        w.insert(j + 1, past);
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut pauses = 0;
    for (c, p) in k.idle_counts.iter().enumerate() {
        acc += p;
        if u < acc {
            pauses = c;
            break;
        }
    }
    for _ in 0..pauses {
        let free = w.len().saturating_sub(k.clean_tail.max(1));
        let j = rng.random_range(0..free.max(1));
        let len = range_usize(rng, k.idle_len);
        let p = w[j];
        for _ in 0..len {
            w.insert(j, p);
        }
    }
    let last = *w.last().expect("non-empty path");
    for _ in 0..range_usize(rng, k.open_delay) {
        w.push(last);
    }
    w
}

/// One hand-taught-style episode with the same start and goal as
/// `run_pvp_episode(scene, cc, seed)` without augmentation.
pub fn run_kinesthetic_episode(
    scene: &Arc<Scene>,
    cc: &CollectConfig,
    k: &KinestheticConfig,
    seed: u64,
) -> Result<Option<Episode>> {
    let base = CollectConfig { noise_aug: false, ccg: true, tr: true, ..*cc };
    let run = run_pvp_episode(scene, &base, seed)?;
    let (Some(episode), Some(place)) = (run.episode, run.place) else { return Ok(None) };
    let mut rng = seeded(seed, stream::HUMAN);
    let waypoints = humanize(&place.poses, k, &mut rng);
    let mut world = WorldState::reset(scene.clone(), seed, ResetMode::Collect)?;
    let target = episode.meta.target as usize;
    if target >= world.objects.len() {
        return Err(Error::Episode("target outside scene".into()));
    }
    hold(&mut world, target, episode.meta.grasp_offset, waypoints[0]);
    let actions = actions_from_waypoints(&waypoints, cc.open_steps);
    let frames = execute(&mut world, &actions);
    let phys = &scene.cfg.physics;
    let success = world.placement(target, &scene.cfg.objects[target].goal).success_at(phys.eps_pos, phys.eps_rot, 1.0);
    let mut meta = episode.meta;
    meta.source = Source::Kinesthetic;
    meta.noise_aug = false;
    meta.regrasps = 0;
    meta.success = success;
    meta.start = waypoints[0];
    Ok(Some(Episode { meta, frames, actions }))
}
