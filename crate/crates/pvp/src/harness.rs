//! Seeded experiments: collection robustness, noise augmentation, and the
//! comparison against hand-taught demonstrations.
//!
//! Every unit of work (an episode, a training run, a rollout) draws from its
//! own seed, so results do not depend on how work is spread over threads.
//! Reductions run in seed order.

use crate::error::{Error, Result};
use pvp_core::collect::{run_kinesthetic_episode, run_pvp_episode, CollectConfig, Episode, KinestheticConfig, Telemetry};
use pvp_core::policy::{train, PolicyParams, TrainConfig};
use pvp_core::rng::mix;
use pvp_core::rollout::{rollout, Outcome, PolicyController, MAX_STEPS};
use pvp_core::sim::{Physics, Scene, SceneConfig, FRAME_LEN};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

/// Tolerance multipliers reported alongside the nominal thresholds.
pub const SENSITIVITY: [f64; 3] = [0.5, 1.0, 1.5];

const EVAL_TAG: u64 = 0xE7A1;
const KINESTHETIC_TAG: u64 = 0x4B1E;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub rollouts: usize,
    pub max_steps: usize,
    /// Shrink the action std to `sigma_eval` when acting.
    pub low_noise: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { rollouts: 20, max_steps: MAX_STEPS, low_noise: true }
    }
}

/// Seed of episode `i` in a batch collected with `seed`.
pub fn episode_seed(seed: u64, i: usize) -> u64 {
    mix(seed, i as u64)
}

/// Seed of evaluation rollout `i` for experiment seed `seed`.
pub fn rollout_seed(seed: u64, i: usize) -> u64 {
    mix(mix(seed, EVAL_TAG), i as u64)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Runs `n` collection episodes; `None` marks episodes that never produced
/// a demonstration.
pub fn collect_pvp(scene: &Arc<Scene>, cc: &CollectConfig, seed: u64, n: usize) -> Result<Vec<(Telemetry, Option<Episode>)>> {
    collect_pvp_range(scene, cc, seed, 0, n)
}

/// Episodes `first..first + n` of the batch seeded with `seed`.
pub fn collect_pvp_range(
    scene: &Arc<Scene>,
    cc: &CollectConfig,
    seed: u64,
    first: usize,
    n: usize,
) -> Result<Vec<(Telemetry, Option<Episode>)>> {
    cc.validate()?;
    (first..first + n)
        .into_par_iter()
        .map(|i| {
            let run = run_pvp_episode(scene, cc, episode_seed(seed, i))?;
            Ok((run.telemetry, run.episode))
        })
        .collect()
}

pub fn collect_kinesthetic(scene: &Arc<Scene>, cc: &CollectConfig, k: &KinestheticConfig, seed: u64, n: usize) -> Result<Vec<Option<Episode>>> {
    collect_kinesthetic_range(scene, cc, k, seed, 0, n)
}

pub fn collect_kinesthetic_range(
    scene: &Arc<Scene>,
    cc: &CollectConfig,
    k: &KinestheticConfig,
    seed: u64,
    first: usize,
    n: usize,
) -> Result<Vec<Option<Episode>>> {
    cc.validate()?;
    (first..first + n)
        .into_par_iter()
        .map(|i| Ok(run_kinesthetic_episode(scene, cc, k, episode_seed(seed, i))?))
        .collect()
}

/// Closed-loop rollouts of `params` from `cfg.rollouts` evaluation starts.
pub fn evaluate(scene: &Arc<Scene>, params: &PolicyParams, sigma_eval: f64, stack: usize, ec: &EvalConfig, seed: u64) -> Result<Vec<Outcome>> {
    (0..ec.rollouts)
        .into_par_iter()
        .map(|i| {
            let s = rollout_seed(seed, i);
            let mut ctrl = PolicyController::new(params, ec.low_noise, sigma_eval, s);
            Ok(rollout(scene, &mut ctrl, s, ec.max_steps, stack)?)
        })
        .collect()
}

fn successes(outcomes: &[Outcome], phys: &Physics, factor: f64) -> usize {
    outcomes.iter().filter(|o| o.success_at(phys.eps_pos, phys.eps_rot, factor)).count()
}

// ---------------------------------------------------------------------------
// robustness

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    Naive,
    CcgOnly,
    CcgTr,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Naive, Condition::CcgOnly, Condition::CcgTr];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Naive => "naive",
            Condition::CcgOnly => "ccg-only",
            Condition::CcgTr => "ccg+tr",
        }
    }

    pub fn apply(self, cc: &CollectConfig) -> CollectConfig {
        let (ccg, tr) = match self {
            Condition::Naive => (false, false),
            Condition::CcgOnly => (true, false),
            Condition::CcgTr => (true, true),
        };
        CollectConfig { ccg, tr, ..*cc }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailures {
    pub seed: u64,
    pub failures: usize,
    pub causes: BTreeMap<String, usize>,
    /// Failures when the placement tolerances are scaled by each factor in
    /// [`SENSITIVITY`].
    pub failures_at: Vec<usize>,
    pub peak_preload: f64,
    pub regrasps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub per_seed: Vec<SeedFailures>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub scene: SceneConfig,
    pub collect: CollectConfig,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub sensitivity: Vec<f64>,
    pub conditions: Vec<ConditionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_s: Option<f64>,
}

impl RobustnessReport {
    pub fn condition(&self, c: Condition) -> &ConditionReport {
        self.conditions.iter().find(|r| r.condition == c).expect("all conditions are reported")
    }

    /// `condition,seed,failures` rows.
    pub fn csv(&self) -> String {
        let mut s = String::from("condition,seed,failures\n");
        for c in &self.conditions {
            for f in &c.per_seed {
                let _ = writeln!(s, "{},{},{}", c.condition.name(), f.seed, f.failures);
            }
        }
        s
    }

    pub fn summary(&self) -> String {
        let parts: Vec<String> = self
            .conditions
            .iter()
            .map(|c| format!("{} {:.1} ({:.1})", c.condition.name(), c.mean, c.std))
            .collect();
        format!("failures per {} episodes: {}", self.episodes, parts.join(", "))
    }
}

fn seed_failures(seed: u64, runs: &[(Telemetry, Option<Episode>)], phys: &Physics) -> SeedFailures {
    let mut causes = BTreeMap::new();
    for (t, _) in runs {
        if let Some(c) = t.cause {
            *causes.entry(c.name().to_string()).or_insert(0) += 1;
        }
    }
    SeedFailures {
        seed,
        failures: runs.iter().filter(|(t, _)| !t.success).count(),
        causes,
        failures_at: SENSITIVITY
            .iter()
            .map(|&f| runs.iter().filter(|(t, _)| !t.success_at(phys.eps_pos, phys.eps_rot, f)).count())
            .collect(),
        peak_preload: runs.iter().map(|(t, _)| t.peak_preload).fold(0.0, f64::max),
        regrasps: runs.iter().map(|(t, _)| t.regrasps).sum(),
    }
}

/// Collection failures over `episodes` episodes per seed for each grasping
/// condition. Conditions see the same episode seeds.
pub fn ablate_robustness(scene: &SceneConfig, cc: &CollectConfig, seeds: &[u64], episodes: usize) -> Result<RobustnessReport> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let s = Arc::new(Scene::new(scene.clone())?);
    let mut conditions = Vec::new();
    for cond in Condition::ALL {
        let c = cond.apply(cc);
        let per_seed = seeds
            .iter()
            .map(|&seed| Ok(seed_failures(seed, &collect_pvp(&s, &c, seed, episodes)?, &scene.physics)))
            .collect::<Result<Vec<_>>>()?;
        let (mean, std) = mean_std(&per_seed.iter().map(|f| f.failures as f64).collect::<Vec<_>>());
        conditions.push(ConditionReport { condition: cond, per_seed, mean, std });
    }
    Ok(RobustnessReport {
        scene: scene.clone(),
        collect: *cc,
        seeds: seeds.to_vec(),
        episodes,
        sensitivity: SENSITIVITY.to_vec(),
        conditions,
        runtime_s: None,
    })
}

// ---------------------------------------------------------------------------
// policy cells

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRollouts {
    pub seed: u64,
    pub train_episodes: usize,
    pub final_train_nll: f64,
    pub final_heldout_nll: f64,
    pub outcomes: Vec<Outcome>,
}

impl SeedRollouts {
    pub fn successes(&self, phys: &Physics, factor: f64) -> usize {
        successes(&self.outcomes, phys, factor)
    }

    pub fn rate(&self, phys: &Physics, factor: f64) -> f64 {
        if self.outcomes.is_empty() {
            return f64::NAN;
        }
        100.0 * self.successes(phys, factor) as f64 / self.outcomes.len() as f64
    }
}

/// Success rates (percent) over seeds for one experimental cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub name: String,
    pub per_seed: Vec<SeedRollouts>,
    /// Total successes at the nominal tolerances.
    pub successes: usize,
    pub rollouts: usize,
    pub mean: f64,
    pub std: f64,
    /// Mean success rate for each factor in [`SENSITIVITY`].
    pub mean_at: Vec<f64>,
}

impl Cell {
    fn new(name: String, per_seed: Vec<SeedRollouts>, phys: &Physics) -> Self {
        let rates = |f: f64| per_seed.iter().map(|s| s.rate(phys, f)).collect::<Vec<_>>();
        let (mean, std) = mean_std(&rates(1.0));
        let mean_at = SENSITIVITY.iter().map(|&f| mean_std(&rates(f)).0).collect();
        Cell {
            name,
            successes: per_seed.iter().map(|s| s.successes(phys, 1.0)).sum(),
            rollouts: per_seed.iter().map(|s| s.outcomes.len()).sum(),
            per_seed,
            mean,
            std,
            mean_at,
        }
    }
}

/// Trains on the successful episodes in `data` and evaluates the result.
pub fn train_and_evaluate(
    scene: &Arc<Scene>,
    data: &[Episode],
    tc: &TrainConfig,
    stack: usize,
    ec: &EvalConfig,
    seed: u64,
) -> Result<SeedRollouts> {
    let tc = TrainConfig { seed, ..*tc };
    let trained = train(data, &tc, FRAME_LEN, stack)?;
    let last = trained.log.last().expect("log has the initial entry");
    let outcomes = evaluate(scene, &trained.params, tc.sigma_eval, stack, ec, seed)?;
    Ok(SeedRollouts {
        seed,
        train_episodes: trained.train_episodes,
        final_train_nll: last.train_nll,
        final_heldout_nll: last.heldout_nll,
        outcomes,
    })
}

fn head(tc: &TrainConfig, gmm: bool) -> TrainConfig {
    if gmm {
        TrainConfig { fixed_std: false, ..*tc }
    } else {
        TrainConfig { modes: 1, fixed_std: true, ..*tc }
    }
}

fn demos(runs: Vec<(Telemetry, Option<Episode>)>) -> Vec<Episode> {
    runs.into_iter().filter_map(|(_, e)| e).collect()
}

// ---------------------------------------------------------------------------
// noise ablation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub scene: SceneConfig,
    pub collect: CollectConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub sensitivity: Vec<f64>,
    /// `det`, `det+noise`, `gmm`, `gmm+noise`.
    pub cells: Vec<Cell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_s: Option<f64>,
}

impl NoiseReport {
    pub fn cell(&self, name: &str) -> &Cell {
        self.cells.iter().find(|c| c.name == name).expect("known cell")
    }

    /// `cell,seed,successes,rollouts` rows.
    pub fn csv(&self) -> String {
        let mut s = String::from("cell,seed,successes,rollouts\n");
        let phys = self.scene.physics;
        for c in &self.cells {
            for r in &c.per_seed {
                let _ = writeln!(s, "{},{},{},{}", c.name, r.seed, r.successes(&phys, 1.0), r.outcomes.len());
            }
        }
        s
    }

    pub fn summary(&self) -> String {
        let parts: Vec<String> = self.cells.iter().map(|c| format!("{} {:.2} ({:.2})", c.name, c.mean, c.std)).collect();
        format!("success rate %: {}", parts.join(", "))
    }
}

pub const NOISE_CELLS: [(&str, bool, bool); 4] =
    [("det", false, false), ("det+noise", false, true), ("gmm", true, false), ("gmm+noise", true, true)];

/// Deterministic and mixture heads trained on datasets collected with and
/// without waypoint noise; per seed both datasets come from the same
/// episode seeds.
pub fn ablate_noise(
    scene: &SceneConfig,
    cc: &CollectConfig,
    tc: &TrainConfig,
    ec: &EvalConfig,
    seeds: &[u64],
    episodes: usize,
) -> Result<NoiseReport> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let s = Arc::new(Scene::new(scene.clone())?);
    let mut per_cell: Vec<Vec<SeedRollouts>> = vec![Vec::new(); NOISE_CELLS.len()];
    for &seed in seeds {
        let clean = demos(collect_pvp(&s, &CollectConfig { noise_aug: false, ..*cc }, seed, episodes)?);
        let noisy = demos(collect_pvp(&s, &CollectConfig { noise_aug: true, ..*cc }, seed, episodes)?);
        let results: Vec<SeedRollouts> = NOISE_CELLS
            .par_iter()
            .map(|&(_, gmm, noise)| {
                let data = if noise { &noisy } else { &clean };
                train_and_evaluate(&s, data, &head(tc, gmm), cc.frame_stack, ec, seed)
            })
            .collect::<Result<_>>()?;
        for (cell, r) in per_cell.iter_mut().zip(results) {
            cell.push(r);
        }
    }
    let cells = NOISE_CELLS
        .iter()
        .zip(per_cell)
        .map(|(&(name, _, _), runs)| Cell::new(name.to_string(), runs, &scene.physics))
        .collect();
    Ok(NoiseReport {
        scene: scene.clone(),
        collect: *cc,
        train: *tc,
        eval: *ec,
        seeds: seeds.to_vec(),
        episodes,
        sensitivity: SENSITIVITY.to_vec(),
        cells,
        runtime_s: None,
    })
}

// ---------------------------------------------------------------------------
// comparison with hand-taught demonstrations

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl LengthSummary {
    fn of(eps: &[Episode]) -> Self {
        let l: Vec<f64> = eps.iter().map(|e| e.len() as f64).collect();
        let n = l.len().max(1) as f64;
        let mean = l.iter().sum::<f64>() / n;
        let std = (l.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        LengthSummary { mean, std, count: l.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub scene: SceneConfig,
    pub collect: CollectConfig,
    pub kinesthetic: KinestheticConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub seeds: Vec<u64>,
    pub sizes: Vec<usize>,
    pub sensitivity: Vec<f64>,
    /// One cell per size, in `sizes` order.
    pub pvp: Vec<Cell>,
    pub kinesthetic_curve: Vec<Cell>,
    pub pvp_lengths: LengthSummary,
    pub kinesthetic_lengths: LengthSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_s: Option<f64>,
}

impl ComparisonReport {
    /// `source,size,seed,successes,rollouts` rows.
    pub fn csv(&self) -> String {
        let mut s = String::from("source,size,seed,successes,rollouts\n");
        let phys = self.scene.physics;
        for (source, curve) in [("pvp", &self.pvp), ("kinesthetic", &self.kinesthetic_curve)] {
            for (size, c) in self.sizes.iter().zip(curve) {
                for r in &c.per_seed {
                    let _ = writeln!(s, "{source},{size},{},{},{}", r.seed, r.successes(&phys, 1.0), r.outcomes.len());
                }
            }
        }
        s
    }

    pub fn summary(&self) -> String {
        let row = |curve: &[Cell]| curve.iter().map(|c| format!("{:.1}", c.mean)).collect::<Vec<_>>().join(" ");
        format!(
            "sizes {:?}: pvp [{}] kinesthetic [{}]; lengths pvp {:.2} ({:.2}) kinesthetic {:.2} ({:.2})",
            self.sizes,
            row(&self.pvp),
            row(&self.kinesthetic_curve),
            self.pvp_lengths.mean,
            self.pvp_lengths.std,
            self.kinesthetic_lengths.mean,
            self.kinesthetic_lengths.std
        )
    }
}

pub const COMPARISON_SIZES: [usize; 4] = [16, 32, 64, 128];

/// Mixture policies trained on the first `n` demonstrations of a
/// noise-augmented collection run and of a hand-taught run.
pub fn compare_kinesthetic(
    scene: &SceneConfig,
    cc: &CollectConfig,
    kc: &KinestheticConfig,
    tc: &TrainConfig,
    ec: &EvalConfig,
    seeds: &[u64],
    sizes: &[usize],
) -> Result<ComparisonReport> {
    if seeds.is_empty() || sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::Config("seeds and positive dataset sizes are required".into()));
    }
    let s = Arc::new(Scene::new(scene.clone())?);
    let largest = *sizes.iter().max().unwrap();
    let gmm = head(tc, true);
    let mut pvp_runs: Vec<Vec<SeedRollouts>> = vec![Vec::new(); sizes.len()];
    let mut kin_runs: Vec<Vec<SeedRollouts>> = vec![Vec::new(); sizes.len()];
    let mut all_pvp = Vec::new();
    let mut all_kin = Vec::new();
    for &seed in seeds {
        let pvp = demos(collect_pvp(&s, &CollectConfig { noise_aug: true, ..*cc }, seed, largest)?);
        let kin: Vec<Episode> =
            collect_kinesthetic(&s, cc, kc, mix(seed, KINESTHETIC_TAG), largest)?.into_iter().flatten().collect();
        let jobs: Vec<(bool, usize)> = sizes.iter().flat_map(|&n| [(true, n), (false, n)]).collect();
        let results: Vec<SeedRollouts> = jobs
            .par_iter()
            .map(|&(is_pvp, n)| {
                let data = if is_pvp { &pvp } else { &kin };
                train_and_evaluate(&s, &data[..n.min(data.len())], &gmm, cc.frame_stack, ec, seed)
            })
            .collect::<Result<_>>()?;
        for (k, pair) in results.chunks(2).enumerate() {
            pvp_runs[k].push(pair[0].clone());
            kin_runs[k].push(pair[1].clone());
        }
        all_pvp.extend(pvp);
        all_kin.extend(kin);
    }
    let curve = |runs: Vec<Vec<SeedRollouts>>, tag: &str| -> Vec<Cell> {
        sizes.iter().zip(runs).map(|(n, r)| Cell::new(format!("{tag}-{n}"), r, &scene.physics)).collect()
    };
    Ok(ComparisonReport {
        scene: scene.clone(),
        collect: *cc,
        kinesthetic: *kc,
        train: *tc,
        eval: *ec,
        seeds: seeds.to_vec(),
        sizes: sizes.to_vec(),
        sensitivity: SENSITIVITY.to_vec(),
        pvp: curve(pvp_runs, "pvp"),
        kinesthetic_curve: curve(kin_runs, "kinesthetic"),
        pvp_lengths: LengthSummary::of(&all_pvp),
        kinesthetic_lengths: LengthSummary::of(&all_kin),
        runtime_s: None,
    })
}
