//! Geometric grasp sampling with label filtering.

use crate::error::{Error, Result};
use crate::math::{self, Vec3};
use crate::sim::{Physics, SceneConfig, Shape, WorldState};
use crate::se3::{Pose, Quat};
use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspCandidate {
    /// Fingertip-centre pose; local z is the approach axis, local x the
    /// closing axis.
    pub pose: Pose,
    pub object: usize,
    /// How far the graspable feature reaches into the fingers (m).
    pub depth: f64,
    pub quality: f64,
}

/// Depth drawn from the mixture of shallow and deep grasps.
pub fn sample_depth<R: Rng + ?Sized>(p: &Physics, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let (lo, hi) = if u < p.shallow_fraction { p.shallow_depth } else { p.deep_depth };
    let s: f64 = rng.random();
    (lo + (hi - lo) * s) * p.finger_depth
}

fn frame(approach: Vec3, closing: Vec3) -> Quat {
    let y = math::cross(approach, closing);
    Quat::from_basis(closing, y, approach)
}

/// Rim samples of one object. Empty for shapes without a graspable feature.
pub fn candidates_for_object<R: Rng + ?Sized>(world: &WorldState, object: usize, rng: &mut R) -> Vec<GraspCandidate> {
    let cfg = world.cfg();
    let spec = &cfg.objects[object];
    let pose = world.objects[object];
    let phys = &cfg.physics;
    let n = phys.candidates_per_object;
    let rot = pose.rotation;
    let mut out = Vec::with_capacity(n);
    match spec.shape {
        Shape::Plate { radius, .. } => {
            let wall_top = spec.slot.map(|k| cfg.slots[k].bottom[2] + cfg.slots[k].wall_height);
            let arc = if wall_top.is_some() { phys.grasp_arc } else { math::PI };
            let normal = rot.axis(2);
            let mut tries = 0;
            while out.len() < n && tries < 64 * n {
                tries += 1;
                let phi = (2.0 * rng.random::<f64>() - 1.0) * arc;
                let depth = sample_depth(phys, rng);
                let radial = rot.rotate([math::sin(phi), math::cos(phi), 0.0]);
                let at = math::add(pose.translation, math::scale(radial, radius));
                if wall_top.is_some_and(|top| at[2] <= top) {
                    continue;
                }
                let q = frame(math::scale(radial, -1.0), normal);
                out.push(GraspCandidate { pose: Pose::new(q, at), object, depth, quality: depth / phys.finger_depth });
            }
        }
        Shape::Bowl { rim_radius: r, height: h, .. } | Shape::Cup { radius: r, height: h } => {
            let down = math::scale(rot.axis(2), -1.0);
            for _ in 0..n {
                let phi = 2.0 * math::PI * rng.random::<f64>();
                let depth = sample_depth(phys, rng);
                let radial = rot.rotate([math::cos(phi), math::sin(phi), 0.0]);
                let at = pose.transform_point([r * math::cos(phi), r * math::sin(phi), h]);
                let q = frame(down, radial);
                out.push(GraspCandidate { pose: Pose::new(q, at), object, depth, quality: depth / phys.finger_depth });
            }
        }
        Shape::Coaster { .. } => {}
    }
    out
}

/// Candidates on every free object, in object order.
pub fn generate_candidates<R: Rng + ?Sized>(world: &WorldState, rng: &mut R) -> Vec<GraspCandidate> {
    let held = world.attached.map(|a| a.object);
    (0..world.objects.len())
        .filter(|&i| Some(i) != held)
        .flat_map(|i| candidates_for_object(world, i, rng))
        .collect()
}

/// Case-insensitive exact or substring match of an object label.
pub fn label_matches(label: &str, query: &[String]) -> bool {
    let label = label.to_lowercase();
    query.iter().any(|q| {
        let q = q.trim().to_lowercase();
        !q.is_empty() && (label == q || label.contains(q.as_str()))
    })
}

/// Keeps candidates whose object label matches the query, preserving order.
pub fn prune_by_label(cands: &[GraspCandidate], query: &[String], cfg: &SceneConfig) -> Vec<GraspCandidate> {
    cands.iter().filter(|c| label_matches(&cfg.objects[c.object].label, query)).copied().collect()
}

pub fn select_grasp<R: Rng + ?Sized>(cands: &[GraspCandidate], rng: &mut R) -> Result<GraspCandidate> {
    if cands.is_empty() {
        return Err(Error::NoGrasp);
    }
    Ok(cands[rng.random_range(0..cands.len())])
}

/// Grasp pose moved `offset` metres along `up`, orientation unchanged.
pub fn pregrasp_of(g: &GraspCandidate, offset: f64, up: Vec3) -> Result<Pose> {
    if !(offset > 0.0 && offset.is_finite()) {
        return Err(Error::Domain(alloc::format!("pregrasp offset must be positive, got {offset}")));
    }
    let up = math::normalize(up).ok_or_else(|| Error::Domain("zero up direction".into()))?;
    Ok(Pose::new(g.pose.rotation, math::add(g.pose.translation, math::scale(up, offset))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, stream};
    use crate::sim::{ResetMode, Scene};
    use alloc::string::ToString;
    use alloc::sync::Arc;

    fn world(cfg: SceneConfig) -> WorldState {
        WorldState::reset(Arc::new(Scene::new(cfg).unwrap()), 0, ResetMode::Collect).unwrap()
    }

    #[test]
    fn plate_candidates_lie_on_exposed_rim() {
        let cfg = SceneConfig::dishrack(1);
        let w = world(cfg.clone());
        let mut rng = seeded(1, stream::PLAN);
        let cands = generate_candidates(&w, &mut rng);
        assert!(cands.len() >= 8);
        let Shape::Plate { radius, .. } = cfg.objects[0].shape else { panic!() };
        let goal = cfg.objects[0].goal;
        let top = cfg.slots[0].bottom[2] + cfg.slots[0].wall_height;
        for c in &cands {
            let d = math::sub(c.pose.translation, goal.translation);
            // in the plate plane and on the circle
            assert!(math::dot(d, goal.rotation.axis(2)).abs() < 1e-9);
            assert!((math::norm(d) - radius).abs() < 1e-9);
            assert!(c.pose.translation[2] > top);
            assert!(c.depth > 0.0 && c.depth <= cfg.physics.finger_depth);
            // closing axis along the plate normal, approach towards the centre
            assert!((math::dot(c.pose.rotation.axis(0), goal.rotation.axis(2)) - 1.0).abs() < 1e-9);
            let inward = math::scale(math::normalize(d).unwrap(), -1.0);
            assert!((math::dot(c.pose.rotation.axis(2), inward) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cup_candidates_on_rim() {
        let cfg = SceneConfig::table();
        let w = world(cfg.clone());
        let cup = cfg.object_index("cup").unwrap();
        let mut rng = seeded(1, stream::PLAN);
        let cands = candidates_for_object(&w, cup, &mut rng);
        assert_eq!(cands.len(), cfg.physics.candidates_per_object);
        let Shape::Cup { radius, height } = cfg.objects[cup].shape else { panic!() };
        for c in cands {
            let local = crate::se3::inverse(&w.objects[cup]).transform_point(c.pose.translation);
            assert!((local[2] - height).abs() < 1e-9);
            assert!((math::sqrt(local[0] * local[0] + local[1] * local[1]) - radius).abs() < 1e-9);
        }
        let coaster = cfg.object_index("coaster").unwrap();
        assert!(candidates_for_object(&w, coaster, &mut rng).is_empty());
    }

    #[test]
    fn candidates_are_deterministic() {
        let w = world(SceneConfig::dishrack(3));
        let a = generate_candidates(&w, &mut seeded(4, stream::PLAN));
        let b = generate_candidates(&w, &mut seeded(4, stream::PLAN));
        assert_eq!(a, b);
    }

    #[test]
    fn fully_held_scene_has_no_candidates() {
        let cfg = SceneConfig::dishrack(1);
        let w = WorldState::reset(Arc::new(Scene::new(cfg).unwrap()), 0, ResetMode::Evaluate { target: 0 }).unwrap();
        assert!(generate_candidates(&w, &mut seeded(0, stream::PLAN)).is_empty());
    }

    #[test]
    fn pruning_by_label() {
        let cfg = SceneConfig::dishrack(2);
        let w = world(cfg.clone());
        let cands = generate_candidates(&w, &mut seeded(2, stream::PLAN));
        let green = prune_by_label(&cands, &["green plate".to_string()], &cfg);
        assert!(!green.is_empty());
        assert!(green.iter().all(|c| cfg.objects[c.object].label == "green plate"));
        assert_eq!(prune_by_label(&cands, &["Plate".to_string()], &cfg), cands);
        assert!(prune_by_label(&cands, &["mug".to_string()], &cfg).is_empty());
        // idempotent
        assert_eq!(prune_by_label(&green, &["green plate".to_string()], &cfg), green);
    }

    #[test]
    fn selection_is_uniform() {
        let cfg = SceneConfig::dishrack(1);
        let w = world(cfg);
        let cands: Vec<_> = generate_candidates(&w, &mut seeded(0, stream::PLAN)).into_iter().take(4).collect();
        let mut rng = seeded(9, stream::PLAN);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            let g = select_grasp(&cands, &mut rng).unwrap();
            counts[cands.iter().position(|c| *c == g).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.02 * 0.25);
        }
        assert_eq!(select_grasp(&cands[..1], &mut rng).unwrap(), cands[0]);
        assert!(matches!(select_grasp(&[], &mut rng), Err(Error::NoGrasp)));
    }

    #[test]
    fn pregrasp_moves_along_world_up() {
        let cfg = SceneConfig::dishrack(1);
        let w = world(cfg);
        let mut g = generate_candidates(&w, &mut seeded(0, stream::PLAN))[0];
        g.pose.translation[2] = 0.10;
        let p = pregrasp_of(&g, 0.08, [0.0, 0.0, 1.0]).unwrap();
        assert!((p.translation[2] - 0.18).abs() < 1e-15);
        assert_eq!(p.translation[0], g.pose.translation[0]);
        assert_eq!(p.translation[1], g.pose.translation[1]);
        assert_eq!(p.rotation, g.pose.rotation);
        assert!(pregrasp_of(&g, 0.0, [0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn shallow_fraction_matches_config() {
        let p = Physics::default();
        let mut rng = seeded(3, stream::PLAN);
        let n = 50_000;
        let shallow = (0..n).filter(|_| sample_depth(&p, &mut rng) < p.f_stable * p.finger_depth).count();
        let rate = shallow as f64 / n as f64;
        assert!((rate - p.shallow_fraction).abs() < 0.01, "{rate}");
    }
}
