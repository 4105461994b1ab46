//! Quasi-static world: impedance-controlled end effector, series-spring
//! contacts, grasp preload and slip.

use super::scene::{SceneConfig, Shape};
use super::{ObservationFrame, StiffnessSetting, TactilePatch};
use crate::error::{Error, Result};
use crate::grasp::{self, GraspCandidate};
use crate::math::{self, Vec3};
use crate::rng::{self, stream};
use crate::se3::{self, Pose, Quat, RelPose};
use alloc::sync::Arc;
use alloc::vec::Vec;
use rand::Rng as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gripper {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetMode {
    /// All objects at their goal poses.
    Collect,
    /// `target` starts in the hand at a randomized pose; its goal is empty.
    Evaluate { target: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attachment {
    pub object: usize,
    /// Object pose in the end-effector frame.
    pub offset: Pose,
}

/// Axis-aligned region in which a half-space constraint `n . p >= offset`
/// acts on the contact probe.
#[derive(Debug, Clone, Copy)]
struct HalfSpace {
    normal: Vec3,
    offset: f64,
    lo: Vec3,
    hi: Vec3,
}

impl HalfSpace {
    fn penetration(&self, p: Vec3) -> Option<f64> {
        let inside = (0..3).all(|k| p[k] >= self.lo[k] && p[k] <= self.hi[k]);
        let pen = self.offset - math::dot(self.normal, p);
        (inside && pen > 0.0).then_some(pen)
    }
}

/// Scene plus geometry derived from it once.
#[derive(Debug)]
pub struct Scene {
    pub cfg: SceneConfig,
    clouds: Vec<Vec<Vec3>>,
    fixed: Vec<HalfSpace>,
}

impl Scene {
    pub fn new(cfg: SceneConfig) -> Result<Self> {
        cfg.validate()?;
        let clouds = cfg.objects.iter().map(|o| o.shape.point_cloud()).collect();
        const BIG: f64 = 1e9;
        let mut fixed = alloc::vec![HalfSpace { normal: [0.0, 0.0, 1.0], offset: 0.0, lo: [-BIG; 3], hi: [BIG; 3] }];
        for s in &cfg.slots {
            let [x, y, z] = s.bottom;
            let (ylo, yhi) = (y - 0.5 * s.length, y + 0.5 * s.length);
            let top = z + s.wall_height;
            fixed.push(HalfSpace {
                normal: [0.0, 0.0, 1.0],
                offset: z,
                lo: [x - 0.5 * s.pitch, ylo, -BIG],
                hi: [x + 0.5 * s.pitch, yhi, top],
            });
            fixed.push(HalfSpace {
                normal: [1.0, 0.0, 0.0],
                offset: x - s.half_width,
                lo: [x - 0.5 * s.pitch, ylo, -BIG],
                hi: [x, yhi, top],
            });
            fixed.push(HalfSpace {
                normal: [-1.0, 0.0, 0.0],
                offset: -(x + s.half_width),
                lo: [x, ylo, -BIG],
                hi: [x + 0.5 * s.pitch, yhi, top],
            });
        }
        Ok(Scene { cfg, clouds, fixed })
    }

    pub fn cloud(&self, object: usize) -> &[Vec3] {
        &self.clouds[object]
    }
}

/// Lowest point of the base circle of `shape` at `pose`.
pub fn lowest_point(shape: &Shape, pose: &Pose) -> Vec3 {
    let (off, radius) = shape.base_circle();
    let axis = pose.rotation.axis(2);
    let c = pose.transform_point([0.0, 0.0, off]);
    let up = [0.0, 0.0, 1.0];
    let d = math::sub(up, math::scale(axis, math::dot(up, axis)));
    match math::normalize(d) {
        Some(d) => math::sub(c, math::scale(d, radius)),
        None => c,
    }
}

/// Outcome geometry of a released object relative to its goal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub pos_err: f64,
    /// Angle between symmetry axes.
    pub rot_err: f64,
    pub stable: bool,
    pub released: bool,
}

impl Placement {
    /// Success under tolerances scaled by `factor`.
    pub fn success_at(&self, eps_pos: f64, eps_rot: f64, factor: f64) -> bool {
        self.released && self.stable && self.pos_err <= eps_pos * factor && self.rot_err <= eps_rot * factor
    }
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub scene: Arc<Scene>,
    pub ee: Pose,
    pub gripper: Gripper,
    pub attached: Option<Attachment>,
    pub objects: Vec<Pose>,
    /// Static force stored between the grasped object and its constraint.
    pub preload: f64,
    /// End-effector contact force from the last step.
    pub contact_force: f64,
    pub grasp_depth: f64,
    pub slipped: bool,
    /// Preload release shifted the object in hand.
    pub shifted: bool,
    /// Grasped object still touches its environment constraint.
    pub in_contact: bool,
    pub stiffness: StiffnessSetting,
    /// Finger/object misalignment along the closing axis for this episode.
    pub alignment_error: f64,
    pub steps: u64,
}

impl WorldState {
    /// Deterministic in `(cfg, seed, mode)`.
    pub fn reset(scene: Arc<Scene>, seed: u64, mode: ResetMode) -> Result<Self> {
        let cfg = &scene.cfg;
        let mut world_rng = rng::seeded(seed, stream::WORLD);
        let alignment_error = cfg.physics.sigma_align * rng::normal(&mut world_rng);
        let objects: Vec<Pose> = cfg.objects.iter().map(|o| o.goal).collect();
        let mut w = WorldState {
            ee: cfg.scan_pose,
            gripper: Gripper::Open,
            attached: None,
            objects,
            preload: 0.0,
            contact_force: 0.0,
            grasp_depth: 0.0,
            slipped: false,
            shifted: false,
            in_contact: false,
            stiffness: StiffnessSetting::stiff(&cfg.physics),
            alignment_error,
            steps: 0,
            scene: scene.clone(),
        };
        if let ResetMode::Evaluate { target } = mode {
            if target >= w.objects.len() {
                return Err(Error::Config(alloc::format!("evaluation target {target} out of range")));
            }
            let mut plan_rng = rng::seeded(seed, stream::PLAN);
            let cands = grasp::candidates_for_object(&w, target, &mut plan_rng);
            if cands.is_empty() {
                return Err(Error::NoGrasp);
            }
            let g = cands[plan_rng.random_range(0..cands.len())];
            let offset = se3::relative_pose(&g.pose, &w.objects[target]);
            let es = cfg.eval_start;
            let base = cfg.clearance_pose;
            let dt = [
                es.sigma_t * rng::normal(&mut world_rng),
                es.sigma_t * rng::normal(&mut world_rng),
                es.sigma_t * rng::normal(&mut world_rng),
            ];
            let dr = [
                es.sigma_rot * rng::normal(&mut world_rng),
                es.sigma_rot * rng::normal(&mut world_rng),
                es.sigma_rot * rng::normal(&mut world_rng),
            ];
            let rot = se3::quat_from_vector(dr).mul_raw(&base.rotation).normalized();
            w.ee = Pose::new(rot, math::add(base.translation, dt));
            w.attached = Some(Attachment { object: target, offset });
            w.gripper = Gripper::Closed;
            w.grasp_depth = cfg.physics.finger_depth;
            w.objects[target] = se3::compose(&w.ee, &offset);
        }
        Ok(w)
    }

    pub fn cfg(&self) -> &SceneConfig {
        &self.scene.cfg
    }

    /// Contact probe: lowest point of the held object, else the fingertip centre.
    fn probe_at(&self, ee: &Pose) -> Vec3 {
        match self.attached {
            Some(a) => {
                let obj = se3::compose(ee, &a.offset);
                lowest_point(&self.cfg().objects[a.object].shape, &obj)
            }
            None => ee.translation,
        }
    }

    fn constraints(&self) -> Vec<HalfSpace> {
        let mut out = self.scene.fixed.clone();
        let held = self.attached.map(|a| a.object);
        for (i, (spec, pose)) in self.cfg().objects.iter().zip(&self.objects).enumerate() {
            if Some(i) == held {
                continue;
            }
            let axis = pose.rotation.axis(2);
            if axis[2].abs() < 0.9 {
                continue;
            }
            let flat = matches!(spec.shape, Shape::Plate { .. } | Shape::Coaster { .. });
            if !flat {
                continue;
            }
            let r = spec.shape.support_radius();
            let top = pose.translation[2] + spec.shape.top_offset();
            let [x, y, _] = pose.translation;
            out.push(HalfSpace { normal: [0.0, 0.0, 1.0], offset: top, lo: [x - r, y - r, -1e9], hi: [x + r, y + r, top] });
        }
        out
    }

    /// Held object rests in its rack slot.
    fn seated(&self, probe: Vec3) -> bool {
        let Some(a) = self.attached else { return false };
        let Some(k) = self.cfg().objects[a.object].slot else { return false };
        let s = &self.cfg().slots[k];
        (probe[0] - s.bottom[0]).abs() <= s.half_width + 1e-9
            && (probe[1] - s.bottom[1]).abs() <= 0.5 * s.length
            && probe[2] <= s.bottom[2] + self.cfg().physics.release_height
    }

    /// Applies a relative end-effector command, then the gripper command.
    ///
    /// Along a violated constraint the realized penetration is
    /// `K / (K + K_env)` of the commanded one; the contact force is
    /// `K * (commanded - realized)`.
    pub fn step(&mut self, cmd: &RelPose, gripper_closed: bool, k: &StiffnessSetting) {
        self.steps += 1;
        self.stiffness = *k;
        let want = if gripper_closed { Gripper::Closed } else { Gripper::Open };
        if cmd.is_identity() && want == self.gripper {
            return;
        }
        if !cmd.is_identity() {
            self.move_ee(cmd, k);
        }
        match (self.gripper, want) {
            (Gripper::Closed, Gripper::Open) => self.open_gripper(),
            (Gripper::Open, Gripper::Closed) => self.gripper = Gripper::Closed,
            _ => {}
        }
    }

    fn move_ee(&mut self, cmd: &RelPose, k: &StiffnessSetting) {
        let phys = self.cfg().physics;
        let mut cmd = *cmd;
        let current_probe = self.probe_at(&self.ee);
        if cmd.rotation.angle > 0.0 && self.seated(current_probe) {
            let keep = k.k_r / (k.k_r + phys.k_env_r);
            cmd.rotation.angle *= keep;
        }
        let mut target = se3::compose(&self.ee, &cmd.to_pose());
        let probe = self.probe_at(&target);
        let mut correction = [0.0; 3];
        let mut force = [0.0; 3];
        for c in self.constraints() {
            if let Some(pen) = c.penetration(probe) {
                let back = pen * phys.k_env / (phys.k_env + k.k_t);
                correction = math::add(correction, math::scale(c.normal, back));
                force = math::add(force, math::scale(c.normal, k.k_t * back));
            }
        }
        target.translation = math::add(target.translation, correction);
        self.contact_force = math::norm(force);
        self.ee = target;
        if let Some(a) = self.attached {
            self.objects[a.object] = se3::compose(&self.ee, &a.offset);
        }
    }

    pub fn open_gripper(&mut self) {
        self.gripper = Gripper::Open;
        self.attached = None;
        self.preload = 0.0;
        self.grasp_depth = 0.0;
        self.in_contact = false;
    }

    /// Closes the fingers on `grasp`, attaching its object.
    pub fn close_gripper(&mut self, k: &StiffnessSetting, grasp: &GraspCandidate) -> Result<()> {
        let phys = self.cfg().physics;
        let approach = grasp.pose.rotation.axis(2);
        let rel = math::sub(self.ee.translation, grasp.pose.translation);
        let advance = math::dot(rel, approach);
        // pushing further along the approach axis only deepens the grasp
        let along = if (0.0..=phys.finger_depth).contains(&advance) { advance } else { 0.0 };
        let dist = math::norm(math::sub(rel, math::scale(approach, along)));
        let angle = self.ee.rotation.angle_to(&grasp.pose.rotation);
        if dist > phys.capture_dist || angle > phys.capture_angle {
            return Err(Error::GraspMiss { distance: dist, angle });
        }
        self.stiffness = *k;
        let depth = (grasp.depth + advance).clamp(1e-4, phys.finger_depth);
        let object = grasp.object;
        let constrained = self.cfg().objects[object].slot.is_some();
        self.preload = 0.0;
        if constrained {
            // Series springs: controller (k_t) and slot (k_env) share the
            // misalignment; the controller's share is the residual.
            let closing = self.ee.rotation.axis(0);
            let lateral = math::dot(math::sub(self.ee.translation, grasp.pose.translation), closing);
            let e = self.alignment_error - lateral;
            let ee_share = e * phys.k_env / (phys.k_env + k.k_t);
            let residual = e - ee_share;
            self.ee.translation = math::add(self.ee.translation, math::scale(closing, ee_share));
            self.preload = k.k_t * residual.abs();
        }
        let offset = se3::relative_pose(&self.ee, &self.objects[object]);
        self.attached = Some(Attachment { object, offset });
        self.gripper = Gripper::Closed;
        self.grasp_depth = depth;
        self.in_contact = true;
        self.slipped = false;
        self.shifted = false;
        Ok(())
    }

    pub fn read_tactile(&self) -> TactilePatch {
        if self.gripper == Gripper::Open || self.attached.is_none() {
            return TactilePatch::NONE;
        }
        let phys = &self.cfg().physics;
        let ratio = (self.grasp_depth / phys.finger_depth).clamp(0.0, 1.0);
        TactilePatch { area: ratio, centroid: [(1.0 - ratio) * phys.half_sensor_length, 0.0] }
    }

    /// One 120 Hz retrieval tick with the failure modes of a held object.
    ///
    /// When contact with the environment breaks, stored preload above the
    /// critical value is released as an in-hand shift of `c_shift * preload`
    /// in a uniformly random direction. While airborne, a grasp with contact
    /// area below `f_stable` slips with probability `p_slip` per tick.
    pub fn retrieve_tick<R: rand::Rng + ?Sized>(&mut self, cmd: &RelPose, rng: &mut R) {
        let k = self.stiffness;
        self.step(cmd, true, &k);
        let Some(mut att) = self.attached else { return };
        let phys = self.cfg().physics;
        let spec = &self.cfg().objects[att.object];
        if self.in_contact {
            let low = lowest_point(&spec.shape, &self.objects[att.object]);
            let goal_low = lowest_point(&spec.shape, &spec.goal);
            if low[2] - goal_low[2] > phys.release_height {
                self.in_contact = false;
                let dir = [rng::normal(rng), rng::normal(rng), rng::normal(rng)];
                if self.preload > phys.preload_crit {
                    let dir = math::normalize(dir).unwrap_or([1.0, 0.0, 0.0]);
                    let shift = math::scale(dir, phys.c_shift * self.preload);
                    att.offset.translation = math::add(att.offset.translation, shift);
                    self.shifted = true;
                }
                self.preload = 0.0;
            }
        } else {
            let u: f64 = rng.random();
            let m: f64 = rng.random_range(phys.slip_min..=phys.slip_max);
            if !self.slipped && self.read_tactile().area < phys.f_stable && u < phys.p_slip {
                // object slides out of the fingers and pivots about the closing axis
                let out = Pose::new(Quat::from_axis_angle([1.0, 0.0, 0.0], 4.0 * m), [0.0, 0.0, m]);
                att.offset = se3::compose(&out, &att.offset);
                self.slipped = true;
            }
        }
        self.attached = Some(att);
        self.objects[att.object] = se3::compose(&self.ee, &att.offset);
    }

    /// Released-object pose error against `goal`, symmetric about the
    /// object's axis.
    pub fn placement(&self, object: usize, goal: &Pose) -> Placement {
        let spec = &self.cfg().objects[object];
        let pose = &self.objects[object];
        let pos_err = math::norm(math::sub(pose.translation, goal.translation));
        let cos = math::dot(pose.rotation.axis(2), goal.rotation.axis(2)).clamp(-1.0, 1.0);
        let rot_err = math::acos(cos);
        let low = lowest_point(&spec.shape, pose);
        let goal_low = lowest_point(&spec.shape, goal);
        let stable = (low[2] - goal_low[2]).abs() <= self.cfg().physics.eps_pos;
        let released = self.gripper == Gripper::Open && self.attached.is_none();
        Placement { pos_err, rot_err, stable, released }
    }

    pub fn check_success(&self, object: usize, goal: &Pose) -> bool {
        let p = &self.cfg().physics;
        self.placement(object, goal).success_at(p.eps_pos, p.eps_rot, 1.0)
    }

    /// Goals whose object is absent (held or moved away).
    pub fn goal_empty(&self, i: usize) -> bool {
        if self.attached.map(|a| a.object) == Some(i) {
            return true;
        }
        let (d, _) = self.objects[i].distance(&self.cfg().objects[i].goal);
        d > self.cfg().physics.eps_pos
    }

    pub fn render_observation(&self) -> ObservationFrame {
        super::render::render(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scene::SceneConfig;

    fn dishrack() -> Arc<Scene> {
        Arc::new(Scene::new(SceneConfig::dishrack(3)).unwrap())
    }

    fn stiff(s: &WorldState) -> StiffnessSetting {
        StiffnessSetting::stiff(&s.cfg().physics)
    }

    #[test]
    fn reset_is_deterministic() {
        let scene = dishrack();
        let a = WorldState::reset(scene.clone(), 7, ResetMode::Collect).unwrap();
        let b = WorldState::reset(scene, 7, ResetMode::Collect).unwrap();
        assert_eq!(a.objects, b.objects);
        assert_eq!(a.ee, b.ee);
        assert_eq!(a.alignment_error.to_bits(), b.alignment_error.to_bits());
    }

    #[test]
    fn reset_places_objects_at_goals() {
        let scene = dishrack();
        let w = WorldState::reset(scene.clone(), 1, ResetMode::Collect).unwrap();
        assert_eq!(w.objects.len(), 3);
        for (p, o) in w.objects.iter().zip(&scene.cfg.objects) {
            let (dt, dr) = p.distance(&o.goal);
            assert!(dt <= 1e-12 && dr <= 1e-12);
        }
        assert_eq!(w.ee, scene.cfg.scan_pose);
    }

    #[test]
    fn table_targets_are_stacked() {
        let cfg = SceneConfig::table();
        let w = WorldState::reset(Arc::new(Scene::new(cfg.clone()).unwrap()), 0, ResetMode::Collect).unwrap();
        let targets: Vec<usize> = (0..cfg.objects.len())
            .filter(|&i| cfg.query.iter().any(|q| cfg.objects[i].label.contains(q.as_str())))
            .collect();
        assert_eq!(targets.len(), 2);
        for i in targets {
            let base = cfg.objects[i].rests_on.expect("stacked");
            let support = &cfg.objects[base];
            let top = support.goal.translation[2] + support.shape.top_offset();
            assert!((w.objects[i].translation[2] - top).abs() < 1e-12);
        }
    }

    #[test]
    fn free_space_motion_is_exact() {
        let mut w = WorldState::reset(dishrack(), 0, ResetMode::Collect).unwrap();
        let z0 = w.ee.translation[2];
        let k = StiffnessSetting::compliant(&w.cfg().physics);
        w.step(&RelPose { translation: [0.0, 0.0, -0.05], rotation: crate::se3::RotVec::ZERO }, false, &k);
        // tool z points down, so -0.05 along tool z is +0.05 in world z
        assert!((w.ee.translation[2] - (z0 + 0.05)).abs() < 1e-15);
        assert_eq!(w.contact_force, 0.0);
    }

    fn wall_press(k_t: f64) -> (f64, f64) {
        let scene = dishrack();
        let mut w = WorldState::reset(scene.clone(), 0, ResetMode::Collect).unwrap();
        let s = scene.cfg.slots[1];
        // fingertip just touching the +x wall of the middle slot, inside the rack
        let wall_x = s.bottom[0] + s.half_width;
        w.ee = Pose::from_translation([wall_x, 0.0, s.bottom[2] + 0.02]);
        let k = StiffnessSetting { k_t, k_r: 300.0, mode: super::super::StiffnessMode::Stiff };
        w.step(&RelPose { translation: [0.01, 0.0, 0.0], rotation: crate::se3::RotVec::ZERO }, false, &k);
        (w.ee.translation[0] - wall_x, w.contact_force)
    }

    #[test]
    fn series_spring_wall_contact() {
        let (pen, force) = wall_press(3000.0);
        assert!((pen - 0.005).abs() < 1e-12, "{pen}");
        assert!((force - 15.0).abs() < 1e-9, "{force}");
        let (_, soft) = wall_press(30.0);
        assert!(soft <= 0.3, "{soft}");
    }

    #[test]
    fn preload_increases_with_stiffness() {
        let mut last = 0.0;
        for k in [10.0, 30.0, 100.0, 300.0, 1000.0, 3000.0, 10000.0] {
            let (_, f) = wall_press(k);
            assert!(f > last);
            last = f;
        }
    }

    #[test]
    fn identity_command_changes_nothing() {
        let (_, _) = wall_press(3000.0);
        let scene = dishrack();
        let mut w = WorldState::reset(scene, 0, ResetMode::Evaluate { target: 1 }).unwrap();
        let before = w.clone();
        let k = stiff(&w);
        w.step(&RelPose::IDENTITY, true, &k);
        assert_eq!(w.ee, before.ee);
        assert_eq!(w.objects, before.objects);
        assert_eq!(w.attached, before.attached);
        assert_eq!(w.gripper, before.gripper);
    }

    fn grasp_for(w: &WorldState, object: usize, depth_frac: f64) -> GraspCandidate {
        let mut rng = rng::seeded(3, stream::PLAN);
        let mut g = grasp::candidates_for_object(w, object, &mut rng)[0];
        g.depth = depth_frac * w.cfg().physics.finger_depth;
        g
    }

    #[test]
    fn compliant_deep_grasp_is_clean() {
        let mut w = WorldState::reset(dishrack(), 5, ResetMode::Collect).unwrap();
        w.alignment_error = 0.004;
        let g = grasp_for(&w, 0, 1.0);
        w.ee = g.pose;
        let k = StiffnessSetting::compliant(&w.cfg().physics);
        w.close_gripper(&k, &g).unwrap();
        assert!(w.read_tactile().area >= 0.9);
        assert!(w.preload < 0.01, "{}", w.preload);
    }

    #[test]
    fn stiff_misaligned_grasp_stores_preload() {
        let mut w = WorldState::reset(dishrack(), 5, ResetMode::Collect).unwrap();
        w.alignment_error = 0.005;
        let g = grasp_for(&w, 0, 1.0);
        w.ee = g.pose;
        let k = stiff(&w);
        w.close_gripper(&k, &g).unwrap();
        // k_t * k_t / (k_t + k_env) * e = 1500 * 0.005
        assert!((w.preload - 7.5).abs() < 1e-9);
        assert!(w.preload > w.cfg().physics.preload_crit);
    }

    #[test]
    fn shallow_grasp_tactile() {
        let mut w = WorldState::reset(dishrack(), 5, ResetMode::Collect).unwrap();
        assert_eq!(w.read_tactile().area, 0.0);
        let g = grasp_for(&w, 2, 0.4);
        w.ee = g.pose;
        w.close_gripper(&stiff(&w), &g).unwrap();
        let t = w.read_tactile();
        assert!((t.area - 0.4).abs() < 1e-12);
        assert!((t.centroid[0] - 0.6 * 0.012).abs() < 1e-12);
        let full = {
            let mut w = WorldState::reset(dishrack(), 5, ResetMode::Collect).unwrap();
            let g = grasp_for(&w, 2, 1.0);
            w.ee = g.pose;
            w.close_gripper(&stiff(&w), &g).unwrap();
            w.read_tactile().area
        };
        assert!((0.85..=1.0).contains(&full));
    }

    #[test]
    fn grasp_outside_capture_radius_misses() {
        let mut w = WorldState::reset(dishrack(), 5, ResetMode::Collect).unwrap();
        let g = grasp_for(&w, 0, 1.0);
        w.ee = se3::compose(&g.pose, &Pose::from_translation([0.0, 0.02, 0.0]));
        let before = w.clone();
        assert!(matches!(w.close_gripper(&stiff(&w), &g), Err(Error::GraspMiss { .. })));
        assert!(w.attached.is_none() && before.attached.is_none());
    }

    fn lift_ticks(w: &mut WorldState, n: usize, rng: &mut crate::rng::Rng) {
        let up = RelPose { translation: [0.0, 0.0, -0.001], rotation: crate::se3::RotVec::ZERO };
        for _ in 0..n {
            w.retrieve_tick(&up, rng);
        }
    }

    #[test]
    fn nominal_retrieval_keeps_offset() {
        let mut w = WorldState::reset(dishrack(), 5, ResetMode::Collect).unwrap();
        w.alignment_error = 0.0;
        let g = grasp_for(&w, 0, 0.9 / 0.02 * 0.02);
        w.ee = g.pose;
        w.close_gripper(&StiffnessSetting::compliant(&w.cfg().physics), &g).unwrap();
        w.stiffness = StiffnessSetting::compliant_rotational(&w.cfg().physics);
        let offset = w.attached.unwrap().offset;
        let mut rng = rng::seeded(1, stream::SLIP);
        lift_ticks(&mut w, 200, &mut rng);
        assert!(!w.in_contact);
        assert_eq!(w.attached.unwrap().offset, offset);
        assert!(!w.slipped && !w.shifted);
        let obj = se3::compose(&w.ee, &offset);
        assert_eq!(obj, w.objects[0]);
    }

    #[test]
    fn preload_release_shifts_object() {
        let mut w = WorldState::reset(dishrack(), 5, ResetMode::Collect).unwrap();
        let g = grasp_for(&w, 0, 1.0);
        w.ee = g.pose;
        w.close_gripper(&stiff(&w), &g).unwrap();
        // twice the critical preload
        w.preload = 2.0 * w.cfg().physics.preload_crit;
        let offset = w.attached.unwrap().offset;
        let mut rng = rng::seeded(1, stream::SLIP);
        lift_ticks(&mut w, 20, &mut rng);
        let moved = math::norm(math::sub(w.attached.unwrap().offset.translation, offset.translation));
        let expect = w.cfg().physics.c_shift * 2.0 * w.cfg().physics.preload_crit;
        assert!((moved - expect).abs() < 1e-12);
        assert!(moved > w.cfg().physics.eps_pos);
        assert!(w.shifted && w.preload == 0.0);
    }

    #[test]
    fn shallow_grasp_slip_rate() {
        // f = 0.5 over 40 airborne ticks: slip probability 1 - (1 - p)^40
        let p = Physics::default().p_slip;
        let expect = 1.0 - (1.0 - p).powi(40);
        let trials = 20_000;
        let mut slips = 0;
        let scene = dishrack();
        let base = {
            let mut w = WorldState::reset(scene, 5, ResetMode::Collect).unwrap();
            let g = grasp_for(&w, 0, 0.5);
            w.ee = g.pose;
            w.close_gripper(&StiffnessSetting::compliant(&w.cfg().physics), &g).unwrap();
            w.in_contact = false;
            w
        };
        let mut rng = rng::seeded(9, stream::SLIP);
        for _ in 0..trials {
            let mut w = base.clone();
            lift_ticks(&mut w, 40, &mut rng);
            slips += w.slipped as usize;
        }
        let rate = slips as f64 / trials as f64;
        let sd = (expect * (1.0 - expect) / trials as f64).sqrt();
        assert!((rate - expect).abs() < 4.0 * sd, "rate {rate} expected {expect}");
    }

    use super::super::scene::Physics;

    #[test]
    fn success_thresholds() {
        let scene = dishrack();
        let mut w = WorldState::reset(scene.clone(), 0, ResetMode::Collect).unwrap();
        let goal = scene.cfg.objects[1].goal;
        assert!(w.check_success(1, &goal));
        w.objects[1].translation[1] += 0.02;
        assert!(!w.check_success(1, &goal));
        // 0.8 cm along the slot and a 3 degree tilt of the symmetry axis
        let tilt = Quat::from_axis_angle(goal.rotation.axis(1), math::deg(3.0));
        w.objects[1] = Pose::new(tilt.mul_raw(&goal.rotation), math::add(goal.translation, [0.0, 0.008, 0.0]));
        assert!(w.check_success(1, &goal));
    }
}
