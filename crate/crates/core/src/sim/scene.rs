//! Scene definitions: objects, rack slots, physics constants.

use crate::error::{Error, Result};
use crate::math::{self, Vec3};
use crate::se3::{Pose, Quat};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Scenario {
    Dishrack,
    Table,
}

impl Scenario {
    pub fn code(self) -> u8 {
        match self {
            Scenario::Dishrack => 0,
            Scenario::Table => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Scenario::Dishrack),
            1 => Some(Scenario::Table),
            _ => None,
        }
    }
}

/// Parametric object primitives. Every shape is symmetric about its local z
/// axis.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum Shape {
    /// Disc centred on the frame origin, normal along local z.
    Plate { radius: f64, thickness: f64 },
    /// Origin at the centre of the foot; rim circle at `height`.
    Bowl { rim_radius: f64, foot_radius: f64, height: f64 },
    /// Origin at the centre of the base; rim circle at `height`.
    Cup { radius: f64, height: f64 },
    /// Thin disc with no graspable feature.
    Coaster { radius: f64, thickness: f64 },
}

impl Shape {
    /// Lowest circle of the shape: (offset along local z, radius).
    pub fn base_circle(&self) -> (f64, f64) {
        match *self {
            Shape::Plate { radius, .. } => (0.0, radius),
            Shape::Bowl { foot_radius, .. } => (0.0, foot_radius),
            Shape::Cup { radius, .. } => (0.0, radius),
            Shape::Coaster { radius, .. } => (0.0, radius),
        }
    }

    /// Height of the upper face above the origin, for flat supports.
    pub fn top_offset(&self) -> f64 {
        match *self {
            Shape::Plate { thickness, .. } | Shape::Coaster { thickness, .. } => 0.5 * thickness,
            Shape::Bowl { height, .. } | Shape::Cup { height, .. } => height,
        }
    }

    pub fn support_radius(&self) -> f64 {
        match *self {
            Shape::Plate { radius, .. } | Shape::Coaster { radius, .. } => radius,
            Shape::Bowl { foot_radius, .. } => foot_radius,
            Shape::Cup { radius, .. } => radius,
        }
    }

    /// Surface samples in the object frame, used by the renderer and for
    /// bounding boxes.
    pub fn point_cloud(&self) -> Vec<Vec3> {
        let mut pts = Vec::new();
        let ring = |pts: &mut Vec<Vec3>, r: f64, z: f64, n: usize| {
            for k in 0..n {
                let a = 2.0 * math::PI * k as f64 / n as f64;
                pts.push([r * math::cos(a), r * math::sin(a), z]);
            }
        };
        match *self {
            Shape::Plate { radius, .. } => {
                ring(&mut pts, radius, 0.0, 64);
                ring(&mut pts, 0.66 * radius, 0.0, 40);
                ring(&mut pts, 0.33 * radius, 0.0, 20);
                pts.push([0.0; 3]);
            }
            Shape::Bowl { rim_radius, foot_radius, height } => {
                for (i, f) in [0.0, 0.35, 0.7, 1.0].iter().enumerate() {
                    let r = foot_radius + (rim_radius - foot_radius) * f * f;
                    ring(&mut pts, r, height * f, 24 + 8 * i);
                }
            }
            Shape::Cup { radius, height } => {
                for f in [0.0, 0.5, 1.0] {
                    ring(&mut pts, radius, height * f, 24);
                }
            }
            Shape::Coaster { radius, .. } => {
                ring(&mut pts, radius, 0.0, 24);
                ring(&mut pts, 0.5 * radius, 0.0, 12);
            }
        }
        pts
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObjectSpec {
    pub label: String,
    pub shape: Shape,
    pub goal: Pose,
    /// Rack slot the object stands in, if any.
    #[cfg_attr(feature = "serde", serde(default))]
    pub slot: Option<usize>,
    /// Index of the object this one is stacked on, if any.
    #[cfg_attr(feature = "serde", serde(default))]
    pub rests_on: Option<usize>,
}

/// A dish-rack slot. `bottom` is the centre of the slot floor.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Slot {
    pub bottom: Vec3,
    pub half_width: f64,
    pub length: f64,
    pub wall_height: f64,
    pub pitch: f64,
}

/// Simulation constants. Stiffness in N/m and N*m/rad, lengths in meters,
/// angles in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct Physics {
    pub k_t_stiff: f64,
    pub k_t_compliant: f64,
    pub k_r_stiff: f64,
    pub k_r_compliant: f64,
    pub k_env: f64,
    pub k_env_r: f64,
    pub preload_crit: f64,
    pub f_stable: f64,
    pub finger_depth: f64,
    /// Half length of the tactile sensing surface along the finger.
    pub half_sensor_length: f64,
    pub eps_pos: f64,
    pub eps_rot: f64,
    pub capture_dist: f64,
    pub capture_angle: f64,
    /// In-hand shift per newton of released preload, m/N.
    pub c_shift: f64,
    /// Per-tick slip probability of a shallow grasp while airborne.
    pub p_slip: f64,
    pub slip_min: f64,
    pub slip_max: f64,
    /// Probability that a sampled grasp candidate is shallow.
    pub shallow_fraction: f64,
    /// Shallow depths as fractions of the finger depth.
    pub shallow_depth: (f64, f64),
    pub deep_depth: (f64, f64),
    /// Std of the finger/object misalignment along the closing axis.
    pub sigma_align: f64,
    /// Lift above the support at which object/environment contact breaks.
    pub release_height: f64,
    /// Half-angle of the graspable rim arc on rack plates.
    pub grasp_arc: f64,
    pub candidates_per_object: usize,
}

impl Default for Physics {
    fn default() -> Self {
        Physics {
            k_t_stiff: 3000.0,
            k_t_compliant: 30.0,
            k_r_stiff: 300.0,
            k_r_compliant: 3.0,
            k_env: 3000.0,
            k_env_r: 300.0,
            preload_crit: 5.0,
            f_stable: 0.7,
            finger_depth: 0.02,
            half_sensor_length: 0.012,
            eps_pos: 0.01,
            eps_rot: math::deg(5.0),
            capture_dist: 0.01,
            capture_angle: math::deg(5.0),
            c_shift: 0.002,
            p_slip: 0.0006,
            slip_min: 0.015,
            slip_max: 0.03,
            shallow_fraction: 0.12,
            shallow_depth: (0.3, 0.65),
            deep_depth: (0.85, 1.0),
            sigma_align: 0.0023,
            release_height: 0.005,
            grasp_arc: math::deg(35.0),
            candidates_per_object: 12,
        }
    }
}

/// Start-pose spread for evaluation rollouts.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct EvalStart {
    pub sigma_t: f64,
    pub sigma_rot: f64,
}

impl Default for EvalStart {
    fn default() -> Self {
        EvalStart { sigma_t: 0.025, sigma_rot: math::deg(2.0) }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SceneConfig {
    pub scenario: Scenario,
    pub objects: Vec<ObjectSpec>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub slots: Vec<Slot>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub seed: u64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub physics: Physics,
    /// Pose from which the scene is scanned for grasps.
    pub scan_pose: Pose,
    /// Fixed pose above the scene around which clearance poses are sampled.
    pub clearance_pose: Pose,
    /// World direction of "above" for pregrasp offsets.
    #[cfg_attr(feature = "serde", serde(default = "default_up"))]
    pub up: Vec3,
    /// Labels of the objects to pick.
    #[cfg_attr(feature = "serde", serde(default))]
    pub query: Vec<String>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub eval_start: EvalStart,
}

#[cfg(feature = "serde")]
fn default_up() -> Vec3 {
    [0.0, 0.0, 1.0]
}

/// Gripper pointing straight down, fingers closing along world x.
pub fn top_down() -> Quat {
    Quat::from_basis([1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0])
}

impl SceneConfig {
    /// Rack with `n` evenly spaced slots holding `n` plates.
    pub fn dishrack(n: usize) -> Self {
        const COLORS: [&str; 6] = ["green", "blue", "red", "white", "yellow", "black"];
        let pitch = 0.06;
        let lean = math::deg(8.0);
        let radius = 0.10;
        let mut slots = Vec::new();
        let mut objects = Vec::new();
        for k in 0..n {
            let x = (k as f64 - 0.5 * (n as f64 - 1.0)) * pitch;
            let bottom = [x, 0.0, 0.03];
            slots.push(Slot { bottom, half_width: 0.006, length: 0.16, wall_height: 0.05, pitch });
            // plate normal along world x, leaning about world y
            let lean_q = Quat::from_axis_angle([0.0, 1.0, 0.0], if k % 2 == 0 { lean } else { -lean });
            let normal = lean_q.rotate([1.0, 0.0, 0.0]);
            let in_plane_up = lean_q.rotate([0.0, 0.0, 1.0]);
            let y_axis = in_plane_up;
            let x_axis = math::cross(y_axis, normal);
            let rotation = Quat::from_basis(x_axis, y_axis, normal);
            let center = math::add(bottom, math::scale(in_plane_up, radius));
            let label = if k < COLORS.len() { format!("{} plate", COLORS[k]) } else { format!("plate {k}") };
            objects.push(ObjectSpec {
                label,
                shape: Shape::Plate { radius, thickness: 0.004 },
                goal: Pose::new(rotation, center),
                slot: Some(k),
                rests_on: None,
            });
        }
        SceneConfig {
            scenario: Scenario::Dishrack,
            objects,
            slots,
            seed: 0,
            physics: Physics::default(),
            scan_pose: Pose::new(top_down(), [0.0, 0.0, 0.50]),
            clearance_pose: Pose::new(top_down(), [0.0, 0.16, 0.40]),
            up: [0.0, 0.0, 1.0],
            query: vec!["plate".to_string()],
            eval_start: EvalStart::default(),
        }
    }

    /// Bowl stacked on a plate and a cup on a coaster.
    pub fn table() -> Self {
        let plate = Shape::Plate { radius: 0.11, thickness: 0.01 };
        let coaster = Shape::Coaster { radius: 0.05, thickness: 0.006 };
        let plate_goal = Pose::from_translation([-0.12, 0.0, 0.005]);
        let coaster_goal = Pose::from_translation([0.14, 0.04, 0.003]);
        let bowl_goal = Pose::from_translation(math::add(plate_goal.translation, [0.0, 0.0, plate.top_offset()]));
        let cup_goal = Pose::from_translation(math::add(coaster_goal.translation, [0.0, 0.0, coaster.top_offset()]));
        let objects = vec![
            ObjectSpec { label: "plate".into(), shape: plate, goal: plate_goal, slot: None, rests_on: None },
            ObjectSpec {
                label: "bowl".into(),
                shape: Shape::Bowl { rim_radius: 0.08, foot_radius: 0.04, height: 0.06 },
                goal: bowl_goal,
                slot: None,
                rests_on: Some(0),
            },
            ObjectSpec { label: "coaster".into(), shape: coaster, goal: coaster_goal, slot: None, rests_on: None },
            ObjectSpec {
                label: "cup".into(),
                shape: Shape::Cup { radius: 0.04, height: 0.09 },
                goal: cup_goal,
                slot: None,
                rests_on: Some(2),
            },
        ];
        SceneConfig {
            scenario: Scenario::Table,
            objects,
            slots: Vec::new(),
            seed: 0,
            physics: Physics::default(),
            scan_pose: Pose::new(top_down(), [0.0, 0.0, 0.50]),
            clearance_pose: Pose::new(top_down(), [0.0, 0.10, 0.35]),
            up: [0.0, 0.0, 1.0],
            query: vec!["bowl".to_string(), "cup".to_string()],
            eval_start: EvalStart::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::Config("scene has no objects".into()));
        }
        for (i, a) in self.objects.iter().enumerate() {
            if !a.goal.is_finite() {
                return Err(Error::Config(format!("object {i} has a non-finite goal")));
            }
            if let Some(s) = a.slot {
                if s >= self.slots.len() {
                    return Err(Error::Config(format!("object '{}' refers to missing slot {s}", a.label)));
                }
            }
            if let Some(r) = a.rests_on {
                if r >= self.objects.len() || r == i {
                    return Err(Error::Config(format!("object '{}' rests on invalid index {r}", a.label)));
                }
            }
            for b in &self.objects[i + 1..] {
                if a.label == b.label {
                    return Err(Error::Config(format!("duplicate object label '{}'", a.label)));
                }
            }
        }
        let p = &self.physics;
        let positive = [p.k_t_stiff, p.k_t_compliant, p.k_r_stiff, p.k_r_compliant, p.k_env, p.k_env_r, p.finger_depth];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("stiffness constants and finger depth must be positive".into()));
        }
        if math::normalize(self.up).is_none() {
            return Err(Error::Config("up direction must be non-zero".into()));
        }
        // goal poses must not overlap unless stacked
        let boxes: Vec<([f64; 3], [f64; 3])> = self.objects.iter().map(|o| world_aabb(&o.shape, &o.goal)).collect();
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                let stacked = self.objects[i].rests_on == Some(j) || self.objects[j].rests_on == Some(i);
                if !stacked && aabb_overlap(&boxes[i], &boxes[j]) {
                    return Err(Error::Config(format!(
                        "goal poses of '{}' and '{}' overlap",
                        self.objects[i].label, self.objects[j].label
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn object_index(&self, label: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.label == label)
    }
}

fn world_aabb(shape: &Shape, pose: &Pose) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in shape.point_cloud() {
        let w = pose.transform_point(p);
        for k in 0..3 {
            lo[k] = lo[k].min(w[k]);
            hi[k] = hi[k].max(w[k]);
        }
    }
    (lo, hi)
}

fn aabb_overlap(a: &([f64; 3], [f64; 3]), b: &([f64; 3], [f64; 3])) -> bool {
    // 1 mm slack so touching neighbours do not count
    (0..3).all(|k| a.0[k] + 1e-3 < b.1[k] && b.0[k] + 1e-3 < a.1[k])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_scenes_validate() {
        SceneConfig::dishrack(3).validate().unwrap();
        SceneConfig::dishrack(5).validate().unwrap();
        SceneConfig::table().validate().unwrap();
    }

    #[test]
    fn overlapping_goals_rejected() {
        let mut cfg = SceneConfig::dishrack(2);
        cfg.objects[1].goal = cfg.objects[0].goal;
        cfg.objects[1].slot = Some(0);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn duplicate_labels_rejected() {
        let mut cfg = SceneConfig::table();
        cfg.objects[2].label = "cup".into();
        assert!(cfg.validate().is_err());
    }
}
