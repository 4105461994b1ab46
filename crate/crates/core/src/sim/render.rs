//! Orthographic point-splat wrist view.

use super::world::WorldState;
use super::{Gripper, ObservationFrame};
use crate::math::{self, Vec3};
use crate::se3::{self, Pose, RelPose};
use alloc::vec;

pub const FRAME_SIZE: usize = 32;
pub const FRAME_CHANNELS: usize = 3;
pub const FRAME_LEN: usize = FRAME_SIZE * FRAME_SIZE * FRAME_CHANNELS;
pub const PROPRIO_LEN: usize = 7;

/// Camera sits this far behind the fingertips along the tool axis.
const CAMERA_BACK: f64 = 0.12;
/// Half extent of the square view window (m).
const HALF_WINDOW: f64 = 0.24;
const DEPTH_SCALE: f64 = 0.2;

const OBJECTS: usize = 0;
const GOALS: usize = 1;
const DEPTH: usize = 2;

pub fn render(w: &WorldState) -> ObservationFrame {
    let mut raster = vec![0f32; FRAME_LEN];
    let cam = se3::compose(&w.ee, &Pose::from_translation([0.0, 0.0, -CAMERA_BACK]));
    let cam_inv = se3::inverse(&cam);
    for (i, pose) in w.objects.iter().enumerate() {
        let to_cam = se3::compose(&cam_inv, pose);
        for &p in w.scene.cloud(i) {
            splat(&mut raster, to_cam.transform_point(p), true);
        }
    }
    for (i, spec) in w.cfg().objects.iter().enumerate() {
        if w.goal_empty(i) {
            let to_cam = se3::compose(&cam_inv, &spec.goal);
            for &p in w.scene.cloud(i) {
                splat(&mut raster, to_cam.transform_point(p), false);
            }
        }
    }
    let rel = RelPose::from_pose(&w.ee).to_array();
    let mut proprio = [0f32; 7];
    for (d, s) in proprio.iter_mut().zip(rel) {
        *d = s as f32;
    }
    proprio[6] = (w.gripper == Gripper::Closed) as u8 as f32;
    ObservationFrame { raster, proprio }
}

fn splat(raster: &mut [f32], p: Vec3, object: bool) {
    let depth = p[2];
    if depth <= 1e-3 {
        return;
    }
    let px = 2.0 * HALF_WINDOW / FRAME_SIZE as f64;
    let col = (p[0] + HALF_WINDOW) / px - 0.5;
    let row = (p[1] + HALF_WINDOW) / px - 0.5;
    let (c0, r0) = (math::floor(col), math::floor(row));
    let (fc, fr) = (col - c0, row - r0);
    let inv_depth = DEPTH_SCALE / (DEPTH_SCALE + depth);
    for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
        for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
            let r = r0 as i64 + dr;
            let c = c0 as i64 + dc;
            if r < 0 || c < 0 || r >= FRAME_SIZE as i64 || c >= FRAME_SIZE as i64 {
                continue;
            }
            let wgt = wr * wc;
            let base = (r as usize * FRAME_SIZE + c as usize) * FRAME_CHANNELS;
            if object {
                bump(&mut raster[base + OBJECTS], wgt);
                bump(&mut raster[base + DEPTH], wgt * inv_depth);
            } else {
                bump(&mut raster[base + GOALS], wgt);
            }
        }
    }
}

fn bump(cell: &mut f32, v: f64) {
    let v = v as f32;
    if v > *cell {
        *cell = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{ResetMode, Scene, SceneConfig};
    use alloc::sync::Arc;

    fn world() -> WorldState {
        let scene = Arc::new(Scene::new(SceneConfig::dishrack(3)).unwrap());
        WorldState::reset(scene, 0, ResetMode::Collect).unwrap()
    }

    #[test]
    fn values_in_unit_range_and_deterministic() {
        let w = world();
        let a = render(&w);
        let b = render(&w);
        assert_eq!(a, b);
        assert!(a.raster.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        assert!(a.raster.iter().any(|&v| v > 0.0));
    }

    #[test]
    fn empty_view_has_no_objects() {
        let mut w = world();
        // looking up into empty space
        w.ee = Pose::from_translation([0.0, 0.0, 1.0]);
        let f = render(&w);
        assert!(f.raster.chunks(FRAME_CHANNELS).all(|c| c[OBJECTS] == 0.0));
    }

    #[test]
    fn centred_object_projects_to_centre() {
        let mut w = world();
        let target = w.objects[1].translation;
        w.ee = Pose::new(crate::sim::scene::top_down(), math::add(target, [0.0, 0.0, 0.3]));
        let f = render(&w);
        // centroid over pixels belonging to object 1 only: hide the others
        let mut solo = w.clone();
        solo.objects[0].translation[2] += 10.0;
        solo.objects[2].translation[2] += 10.0;
        let f1 = render(&solo);
        let (mut sr, mut sc, mut s) = (0.0, 0.0, 0.0);
        for r in 0..FRAME_SIZE {
            for c in 0..FRAME_SIZE {
                let v = f1.raster[(r * FRAME_SIZE + c) * FRAME_CHANNELS] as f64;
                sr += v * r as f64;
                sc += v * c as f64;
                s += v;
            }
        }
        let mid = (FRAME_SIZE as f64 - 1.0) / 2.0;
        assert!(s > 0.0);
        assert!((sr / s - mid).abs() <= 1.0 && (sc / s - mid).abs() <= 1.0, "{} {}", sr / s, sc / s);
        assert_ne!(f, f1);
    }

    #[test]
    fn proprio_encodes_pose_and_gripper() {
        let w = world();
        let f = render(&w);
        let rel = RelPose::from_pose(&w.ee).to_array();
        for k in 0..6 {
            assert_eq!(f.proprio[k], rel[k] as f32);
        }
        assert_eq!(f.proprio[6], 0.0);
    }
}
