//! The collection loop: plan, grasp, retrieve, reverse.

use super::augment::{augment_waypoints, sample_clearance};
use super::episode::{Action, Episode, EpisodeMeta, FailureCause, Source, Telemetry};
use super::trajectory::{actions_from_waypoints, downsample, DenseTrajectory, SparseTrajectory};
use super::CollectConfig;
use crate::error::{Error, Result};
use crate::grasp::{self, GraspCandidate};
use crate::math;
use crate::rng::{seeded, stream};
use crate::se3::{self, Pose, RelPose, RotVec};
use crate::sim::{
    Attachment, Gripper, ObservationFrame, Physics, Placement, ResetMode, Scene, StiffnessSetting, TactilePatch,
    WorldState,
};
use alloc::sync::Arc;
use alloc::vec::Vec;

/// Result of one collection attempt. `episode` is absent when no
/// trajectory was recorded.
#[derive(Debug, Clone)]
pub struct PvpRun {
    pub episode: Option<Episode>,
    pub telemetry: Telemetry,
    /// Place-ordered waypoints before augmentation.
    pub place: Option<SparseTrajectory>,
}

/// Corrective end-effector motion for a shallow grasp: the offset between
/// the ideal (centred) and detected patch centroid, applied along the
/// approach axis. `None` when the contact area is sufficient.
pub fn tactile_regrasp(patch: &TactilePatch, phys: &Physics) -> Option<RelPose> {
    if patch.area >= phys.f_stable {
        return None;
    }
    let ideal = [0.0, 0.0];
    let shift = patch.centroid[0] - ideal[0];
    Some(RelPose { translation: [0.0, 0.0, shift], rotation: RotVec::ZERO })
}

/// Interpolated motion to `target` in `steps` equal commands.
fn move_to(world: &mut WorldState, target: &Pose, steps: usize, k: &StiffnessSetting, closed: bool) {
    let from = world.ee;
    for j in 1..=steps {
        let wp = se3::interpolate(&from, target, j as f64 / steps as f64).expect("fraction in range");
        let cmd = se3::relative_action(&world.ee, &wp);
        world.step(&cmd, closed, k);
    }
}

fn telemetry(seed: u64) -> Telemetry {
    Telemetry {
        seed,
        success: false,
        cause: None,
        peak_preload: 0.0,
        regrasps: 0,
        retrieval_area: 0.0,
        pos_err: f64::NAN,
        rot_err: f64::NAN,
        settled: false,
        length: 0,
    }
}

fn failed(t: Telemetry, cause: FailureCause) -> PvpRun {
    PvpRun { episode: None, telemetry: Telemetry { cause: Some(cause), ..t }, place: None }
}

/// Executes `actions` from the current state, rendering a frame before the
/// first and after every action.
pub(crate) fn execute(world: &mut WorldState, actions: &[Action]) -> Vec<ObservationFrame> {
    let stiff = StiffnessSetting::stiff(&world.cfg().physics);
    let mut frames = Vec::with_capacity(actions.len() + 1);
    frames.push(world.render_observation());
    for a in actions {
        world.step(&a.rel(), a.gripper, &stiff);
        frames.push(world.render_observation());
    }
    frames
}

/// Puts `object` in the closed hand at `ee` with in-hand pose `offset`.
pub(crate) fn hold(world: &mut WorldState, object: usize, offset: Pose, ee: Pose) {
    world.ee = ee;
    world.gripper = Gripper::Closed;
    world.attached = Some(Attachment { object, offset });
    world.objects[object] = se3::compose(&ee, &offset);
    world.in_contact = false;
    world.preload = 0.0;
}

/// Grasps and retrieves one object, then reverses the retrieval into a
/// placing episode executed in the same world.
pub fn run_pvp_episode(scene: &Arc<Scene>, cc: &CollectConfig, seed: u64) -> Result<PvpRun> {
    cc.validate()?;
    let mut world = WorldState::reset(scene.clone(), seed, ResetMode::Collect)?;
    let cfg = &scene.cfg;
    let phys = cfg.physics;
    let mut t = telemetry(seed);

    let mut plan_rng = seeded(seed, stream::PLAN);
    let cands = grasp::generate_candidates(&world, &mut plan_rng);
    let pruned = grasp::prune_by_label(&cands, &cfg.query, cfg);
    let g: GraspCandidate = match grasp::select_grasp(&pruned, &mut plan_rng) {
        Ok(g) => g,
        Err(_) => return Ok(failed(t, FailureCause::NoGrasp)),
    };
    let pre = grasp::pregrasp_of(&g, cc.pregrasp_offset, cfg.up)?;

    let stiff = StiffnessSetting::stiff(&phys);
    move_to(&mut world, &pre, 2 * cc.approach_steps, &stiff, false);
    move_to(&mut world, &g.pose, cc.approach_steps, &stiff, false);

    let k_grasp = if cc.ccg { StiffnessSetting::compliant(&phys) } else { stiff };
    if world.close_gripper(&k_grasp, &g).is_err() {
        return Ok(failed(t, FailureCause::GraspMiss));
    }
    t.peak_preload = world.preload;
    if cc.tr {
        while let Some(fix) = tactile_regrasp(&world.read_tactile(), &phys) {
            if t.regrasps >= cc.regrasp_budget {
                return Ok(failed(t, FailureCause::UnstableGrasp));
            }
            world.open_gripper();
            world.step(&fix, false, &k_grasp);
            if world.close_gripper(&k_grasp, &g).is_err() {
                return Ok(failed(t, FailureCause::GraspMiss));
            }
            t.regrasps += 1;
            t.peak_preload = t.peak_preload.max(world.preload);
        }
    }
    t.retrieval_area = world.read_tactile().area;
    let Some(att) = world.attached else { return Err(Error::Episode("grasp did not attach".into())) };
    let grasp_offset = att.offset;

    // retrieval, recorded densely
    world.stiffness = StiffnessSetting::compliant_rotational(&phys);
    let mut clearance_rng = seeded(seed, stream::CLEARANCE);
    let clearance = sample_clearance(&cfg.clearance_pose, cc.sigma_clearance, &mut clearance_rng);
    let start = world.ee;
    let up = math::normalize(cfg.up).ok_or_else(|| Error::Config("zero up direction".into()))?;
    let lifted = Pose::new(start.rotation, math::add(start.translation, math::scale(up, cc.pregrasp_offset)));
    let (move_dist, move_angle) = lifted.distance(&clearance);
    let segments = [
        (start, lifted, cc.pregrasp_offset / cc.lift_speed),
        (lifted, clearance, move_dist / cc.move_speed + move_angle / cc.turn_speed),
    ];
    let mut slip_rng = seeded(seed, stream::SLIP);
    let mut dense = DenseTrajectory::new(cc.record_hz);
    dense.push(world.ee, 0.0)?;
    let mut tick = 0u64;
    for (from, to, duration) in segments {
        let n = (math::ceil(duration * cc.record_hz) as usize).max(1);
        for j in 1..=n {
            let wp = se3::interpolate(&from, &to, j as f64 / n as f64)?;
            let cmd = se3::relative_action(&world.ee, &wp);
            world.retrieve_tick(&cmd, &mut slip_rng);
            tick += 1;
            dense.push(world.ee, tick as f64 / cc.record_hz)?;
        }
    }

    let sparse = downsample(&dense, cc.dt)?;
    let place = sparse.reversed();
    let mut noise_rng = seeded(seed, stream::NOISE);
    let waypoints = augment_waypoints(&place, cc, &mut noise_rng);

    let Some(att) = world.attached else { return Err(Error::Episode("object lost during retrieval".into())) };
    hold(&mut world, att.object, att.offset, waypoints.poses[0]);
    let actions = actions_from_waypoints(&waypoints.poses, cc.open_steps);
    let frames = execute(&mut world, &actions);

    let target = att.object;
    let placement = world.placement(target, &cfg.objects[target].goal);
    let success = placement.success_at(phys.eps_pos, phys.eps_rot, 1.0);
    t.success = success;
    t.pos_err = placement.pos_err;
    t.rot_err = placement.rot_err;
    t.settled = placement.stable && placement.released;
    t.length = actions.len();
    if !success {
        t.cause = Some(if world.shifted {
            FailureCause::PreloadShift
        } else if world.slipped {
            FailureCause::Slip
        } else {
            FailureCause::Misplacement
        });
    }
    let meta = EpisodeMeta {
        seed,
        scenario: cfg.scenario,
        source: Source::Pvp,
        noise_aug: cc.noise_aug,
        ccg: cc.ccg,
        tr: cc.tr,
        regrasps: t.regrasps,
        success,
        target: target as u32,
        start: waypoints.poses[0],
        grasp_offset,
    };
    Ok(PvpRun { episode: Some(Episode { meta, frames, actions }), telemetry: t, place: Some(place) })
}

/// Open-loop replay of `actions` in a fresh world holding the target at its
/// grasp-time offset, starting from `meta.start`.
pub fn replay_actions(scene: &Arc<Scene>, meta: &EpisodeMeta, actions: &[Action]) -> Result<Placement> {
    let mut world = WorldState::reset(scene.clone(), meta.seed, ResetMode::Collect)?;
    let target = meta.target as usize;
    if target >= world.objects.len() {
        return Err(Error::Episode(alloc::format!("target {target} not in scene")));
    }
    hold(&mut world, target, meta.grasp_offset, meta.start);
    let stiff = StiffnessSetting::stiff(&world.cfg().physics);
    for a in actions {
        world.step(&a.rel(), a.gripper, &stiff);
    }
    Ok(world.placement(target, &scene.cfg.objects[target].goal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SceneConfig;

    fn scene() -> Arc<Scene> {
        Arc::new(Scene::new(SceneConfig::dishrack(3)).unwrap())
    }

    #[test]
    fn regrasp_correction() {
        let p = Physics::default();
        assert!(tactile_regrasp(&TactilePatch { area: 0.9, centroid: [0.0012, 0.0] }, &p).is_none());
        let fix = tactile_regrasp(&TactilePatch { area: 0.5, centroid: [0.006, 0.0] }, &p).unwrap();
        assert!((fix.translation[2] - 0.006).abs() < 1e-15);
        assert_eq!(fix.translation[0], 0.0);
        assert!(fix.rotation.angle == 0.0);
    }

    #[test]
    fn nominal_episode_succeeds() {
        let s = scene();
        let cc = CollectConfig::default();
        for seed in 0..8 {
            let run = run_pvp_episode(&s, &cc, seed).unwrap();
            let t = run.telemetry;
            assert!(t.success, "seed {seed}: {t:?}");
            assert!(t.regrasps <= 1);
            assert!(t.peak_preload < s.cfg.physics.preload_crit);
            assert!(t.retrieval_area >= s.cfg.physics.f_stable);
            let e = run.episode.unwrap();
            assert!(e.is_well_formed(cc.open_steps));
            let place = run.place.unwrap();
            assert_eq!(e.len(), place.poses.len() - 1 + cc.open_steps);
        }
    }

    #[test]
    fn episodes_are_deterministic() {
        let s = scene();
        let cc = CollectConfig { noise_aug: true, ..CollectConfig::default() };
        let a = run_pvp_episode(&s, &cc, 3).unwrap().episode.unwrap();
        let b = run_pvp_episode(&s, &cc, 3).unwrap().episode.unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn replay_reaches_goal() {
        let s = scene();
        let cc = CollectConfig::default();
        for seed in 10..16 {
            let e = run_pvp_episode(&s, &cc, seed).unwrap().episode.unwrap();
            let p = replay_actions(&s, &e.meta, &e.actions).unwrap();
            let phys = &s.cfg.physics;
            assert!(p.success_at(phys.eps_pos, phys.eps_rot, 1.0), "{p:?}");
        }
    }

    #[test]
    fn stiff_grasps_store_preload() {
        let s = scene();
        let cc = CollectConfig { ccg: false, tr: false, ..CollectConfig::default() };
        let over = (0..64)
            .filter(|&seed| run_pvp_episode(&s, &cc, seed).unwrap().telemetry.peak_preload > s.cfg.physics.preload_crit)
            .count();
        assert!(over > 0);
    }
}
