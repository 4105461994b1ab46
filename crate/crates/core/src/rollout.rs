//! Closed-loop evaluation of a controller from randomized in-hand starts.

use crate::collect::Action;
use crate::error::{Error, Result};
use crate::grasp;
use crate::policy::{Obs, PolicyParams};
use crate::rng::{self, seeded, stream};
use crate::se3::RelPose;
use crate::sim::{ObservationFrame, Placement, ResetMode, Scene, StiffnessSetting, WorldState};
use alloc::collections::VecDeque;
use alloc::sync::Arc;
use alloc::vec::Vec;
use rand::Rng as _;

pub const MAX_STEPS: usize = 60;

/// Anything that maps a stack of observations (current first) to an action.
pub trait Controller {
    fn act(&mut self, frames: &[&ObservationFrame]) -> Action;
}

/// A trained policy sampling from its own stream.
pub struct PolicyController<'a> {
    pub params: &'a PolicyParams,
    pub low_noise: bool,
    pub sigma_eval: f64,
    rng: rng::Rng,
}

impl<'a> PolicyController<'a> {
    pub fn new(params: &'a PolicyParams, low_noise: bool, sigma_eval: f64, seed: u64) -> Self {
        PolicyController { params, low_noise, sigma_eval, rng: seeded(seed, stream::POLICY) }
    }
}

impl Controller for PolicyController<'_> {
    fn act(&mut self, frames: &[&ObservationFrame]) -> Action {
        let obs = Obs::encode(frames);
        self.params.act(&obs, self.low_noise, self.sigma_eval, &mut self.rng)
    }
}

/// Uniformly random small motions; opens the gripper with probability
/// `p_open` per step.
pub struct RandomController {
    pub max_translation: f64,
    pub max_rotation: f64,
    pub p_open: f64,
    rng: rng::Rng,
}

impl RandomController {
    pub fn new(seed: u64) -> Self {
        RandomController { max_translation: 0.03, max_rotation: 0.1, p_open: 0.1, rng: seeded(seed, stream::POLICY) }
    }
}

impl Controller for RandomController {
    fn act(&mut self, _frames: &[&ObservationFrame]) -> Action {
        let r = &mut self.rng;
        let a: [f64; 6] = core::array::from_fn(|d| {
            let m = if d < 3 { self.max_translation } else { self.max_rotation };
            r.random_range(-m..=m)
        });
        let open = r.random::<f64>() < self.p_open;
        Action::from_array(a, !open)
    }
}

/// Plays back a fixed action sequence, then holds still with the gripper open.
pub struct ReplayController<'a> {
    actions: &'a [Action],
    next: usize,
}

impl<'a> ReplayController<'a> {
    pub fn new(actions: &'a [Action]) -> Self {
        ReplayController { actions, next: 0 }
    }
}

impl Controller for ReplayController<'_> {
    fn act(&mut self, _frames: &[&ObservationFrame]) -> Action {
        let a = self.actions.get(self.next).copied().unwrap_or(Action::new(&RelPose::IDENTITY, false));
        self.next += 1;
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Outcome {
    pub seed: u64,
    pub target: u32,
    pub success: bool,
    pub steps: usize,
    pub pos_err: f64,
    pub rot_err: f64,
    pub stable: bool,
    pub released: bool,
}

impl Outcome {
    fn new(seed: u64, target: usize, steps: usize, p: &Placement, success: bool) -> Self {
        Outcome {
            seed,
            target: target as u32,
            success,
            steps,
            pos_err: p.pos_err,
            rot_err: p.rot_err,
            stable: p.stable,
            released: p.released,
        }
    }

    /// Success under tolerances scaled by `factor`.
    pub fn success_at(&self, eps_pos: f64, eps_rot: f64, factor: f64) -> bool {
        let p = Placement { pos_err: self.pos_err, rot_err: self.rot_err, stable: self.stable, released: self.released };
        p.success_at(eps_pos, eps_rot, factor)
    }
}

/// Objects the scene query selects that can be grasped.
pub fn eval_targets(scene: &Arc<Scene>) -> Result<Vec<usize>> {
    let world = WorldState::reset(scene.clone(), 0, ResetMode::Collect)?;
    let cfg = &scene.cfg;
    let mut rng = seeded(0, stream::PLAN);
    let out: Vec<usize> = (0..cfg.objects.len())
        .filter(|&i| grasp::label_matches(&cfg.objects[i].label, &cfg.query))
        .filter(|&i| !grasp::candidates_for_object(&world, i, &mut rng).is_empty())
        .collect();
    if out.is_empty() {
        return Err(Error::NoGrasp);
    }
    Ok(out)
}

/// Picks the target for evaluation seed `seed`.
pub fn eval_target(scene: &Arc<Scene>, seed: u64) -> Result<usize> {
    let targets = eval_targets(scene)?;
    let mut rng = seeded(rng::mix(seed, 1), stream::POLICY);
    Ok(targets[rng.random_range(0..targets.len())])
}

/// Runs `ctrl` from a fresh evaluation world until the gripper opens or
/// `max_steps` actions have been taken.
pub fn rollout<C: Controller + ?Sized>(
    scene: &Arc<Scene>,
    ctrl: &mut C,
    seed: u64,
    max_steps: usize,
    stack: usize,
) -> Result<Outcome> {
    let target = eval_target(scene, seed)?;
    let world = WorldState::reset(scene.clone(), seed, ResetMode::Evaluate { target })?;
    run_from(world, target, ctrl, seed, max_steps, stack)
}

/// Closed loop from an already prepared world holding `target`.
pub fn run_from<C: Controller + ?Sized>(
    mut world: WorldState,
    target: usize,
    ctrl: &mut C,
    seed: u64,
    max_steps: usize,
    stack: usize,
) -> Result<Outcome> {
    if stack == 0 {
        return Err(Error::Config("frame stack must be positive".into()));
    }
    let stiff = StiffnessSetting::stiff(&world.cfg().physics);
    let mut history: VecDeque<ObservationFrame> = VecDeque::with_capacity(stack);
    let first = world.render_observation();
    for _ in 0..stack {
        history.push_back(first.clone());
    }
    let mut steps = 0;
    while steps < max_steps {
        let frames: Vec<&ObservationFrame> = history.iter().collect();
        let a = ctrl.act(&frames);
        world.step(&a.rel(), a.gripper, &stiff);
        steps += 1;
        if world.attached.is_none() {
            break;
        }
        history.pop_back();
        history.push_front(world.render_observation());
    }
    let goal = world.cfg().objects[target].goal;
    let p = world.placement(target, &goal);
    let phys = world.cfg().physics;
    Ok(Outcome::new(seed, target, steps, &p, p.success_at(phys.eps_pos, phys.eps_rot, 1.0)))
}
