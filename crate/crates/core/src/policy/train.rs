//! Minibatch training with momentum and lazily updated first-layer columns.

use super::loss::{nll_loss, Sample};
use super::{Layout, Obs, PolicyParams, ACTION_DIM};
use crate::collect::{Action, Episode};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::{seeded, stream};
use crate::sim::PROPRIO_LEN;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub modes: usize,
    /// Unit variance instead of learned log-std (squared-error equivalent).
    pub fixed_std: bool,
    /// Action std used for low-noise evaluation.
    pub sigma_eval: f64,
    pub hidden: usize,
    /// Fraction of episodes held out for validation.
    pub holdout: f64,
    /// Upper bound on the minibatch gradient norm.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 64,
            epochs: 30,
            lr: 3e-3,
            momentum: 0.9,
            seed: 0,
            modes: 5,
            fixed_std: false,
            sigma_eval: 1e-4,
            hidden: 128,
            holdout: 0.1,
            grad_clip: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch > 0
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.modes >= 1
            && self.sigma_eval > 0.0
            && self.hidden > 0
            && (0.0..1.0).contains(&self.holdout)
            && self.grad_clip > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid training parameters".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochLog {
    pub epoch: usize,
    pub train_nll: f64,
    pub heldout_nll: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: PolicyParams,
    pub log: Vec<EpochLog>,
    pub train_episodes: usize,
    pub heldout_episodes: usize,
}

/// Network inputs and labels for every step of every episode.
pub fn build_samples(episodes: &[&Episode], stack: usize) -> (Vec<Obs>, Vec<Action>) {
    let mut obs = Vec::new();
    let mut acts = Vec::new();
    for e in episodes {
        for i in 0..e.len() {
            obs.push(Obs::encode(&e.stack(i, stack)));
            acts.push(e.actions[i]);
        }
    }
    (obs, acts)
}

fn mean_std<const N: usize>(rows: impl Iterator<Item = [f64; N]> + Clone) -> ([f64; N], [f64; N]) {
    let n = rows.clone().count().max(1) as f64;
    let mut mean = [0.0; N];
    for r in rows.clone() {
        for d in 0..N {
            mean[d] += r[d] / n;
        }
    }
    let mut var = [0.0; N];
    for r in rows {
        for d in 0..N {
            var[d] += (r[d] - mean[d]) * (r[d] - mean[d]) / n;
        }
    }
    (mean, var.map(|v| math::sqrt(v).max(1e-6)))
}

/// Fits a policy to the successful episodes.
pub fn train(episodes: &[Episode], tc: &TrainConfig, frame_len: usize, stack: usize) -> Result<Trained> {
    tc.validate()?;
    let good: Vec<&Episode> = episodes.iter().filter(|e| e.meta.success && !e.is_empty()).collect();
    if good.is_empty() {
        return Err(Error::Training { batch: 0, reason: "no successful episodes".to_string() });
    }
    let mut rng = seeded(tc.seed, stream::TRAIN);
    let mut order: Vec<usize> = (0..good.len()).collect();
    order.shuffle(&mut rng);
    let n_hold = if good.len() >= 2 { (math::round(tc.holdout * good.len() as f64) as usize).max(1) } else { 0 };
    let hold: Vec<&Episode> = order[..n_hold].iter().map(|&i| good[i]).collect();
    let fit: Vec<&Episode> = order[n_hold..].iter().map(|&i| good[i]).collect();
    let (obs, acts) = build_samples(&fit, stack);
    let (hobs, hacts) = build_samples(if hold.is_empty() { &fit } else { &hold }, stack);

    let layout = Layout { frame_len, stack, hidden: tc.hidden, modes: tc.modes };
    let mut p = PolicyParams::init(layout, tc.fixed_std, &mut rng);
    let (ao, asd) = mean_std::<ACTION_DIM>(acts.iter().map(|a| a.values()));
    let (pm, psd) = mean_std::<PROPRIO_LEN>(obs.iter().map(|o| o.proprio));
    p.action_offset = ao;
    p.action_scale = asd;
    p.proprio_mean = pm;
    p.proprio_std = psd;

    let samples: Vec<Sample> = obs.iter().zip(&acts).map(|(obs, action)| Sample { obs, action }).collect();
    let held: Vec<Sample> = hobs.iter().zip(&hacts).map(|(obs, action)| Sample { obs, action }).collect();
    let mut log = vec![EpochLog { epoch: 0, train_nll: nll_loss(&p, &samples)?, heldout_nll: nll_loss(&p, &held)? }];

    let mut opt = Momentum::new(&p, tc);
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    for epoch in 1..=tc.epochs {
        idx.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in idx.chunks(tc.batch).enumerate() {
            let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i]).collect();
            let loss = opt.step(&mut p, &batch);
            if !loss.is_finite() {
                return Err(Error::Training { batch: b, reason: alloc::format!("loss diverged in epoch {epoch}") });
            }
            total += loss * chunk.len() as f64;
        }
        opt.flush(&mut p);
        if !p.is_finite() {
            return Err(Error::Training { batch: 0, reason: alloc::format!("non-finite weights in epoch {epoch}") });
        }
        log.push(EpochLog { epoch, train_nll: total / samples.len() as f64, heldout_nll: nll_loss(&p, &held)? });
    }
    p.quantize();
    Ok(Trained { params: p, log, train_episodes: fit.len(), heldout_episodes: hold.len() })
}

/// Heavy-ball momentum. First-layer input columns that receive no gradient
/// in a step are skipped and brought up to date in closed form when next
/// touched.
struct Momentum {
    lr: f64,
    mu: f64,
    clip: f64,
    hidden: usize,
    /// Number of first-layer columns (inputs).
    columns: usize,
    /// End of the first-layer block in `theta`.
    w1_end: usize,
    velocity: Vec<f64>,
    grad: Vec<f64>,
    last: Vec<u64>,
    stamp: Vec<u64>,
    touched: Vec<u32>,
    t: u64,
    dense_cols: Vec<u32>,
}

impl Momentum {
    fn new(p: &PolicyParams, tc: &TrainConfig) -> Self {
        let l = p.layout;
        let columns = l.input();
        let pbase = (l.frame_len * l.stack) as u32;
        Momentum {
            lr: tc.lr,
            mu: tc.momentum,
            clip: tc.grad_clip,
            hidden: l.hidden,
            columns,
            w1_end: columns * l.hidden,
            velocity: vec![0.0; p.theta.len()],
            grad: vec![0.0; p.theta.len()],
            last: vec![0; columns],
            stamp: vec![u64::MAX; columns],
            touched: Vec::new(),
            t: 0,
            dense_cols: (pbase..pbase + PROPRIO_LEN as u32).collect(),
        }
    }

    /// Applies `n` zero-gradient steps to column `c`.
    fn catch_up(&mut self, p: &mut PolicyParams, c: usize, n: u64) {
        if n == 0 {
            return;
        }
        let decay = math::powi(self.mu, n as i32);
        let travel = self.lr * self.mu * (1.0 - decay) / (1.0 - self.mu);
        let h = self.hidden;
        for j in c * h..(c + 1) * h {
            p.theta[j] -= travel * self.velocity[j];
            self.velocity[j] *= decay;
        }
    }

    fn step(&mut self, p: &mut PolicyParams, batch: &[Sample]) -> f64 {
        self.t += 1;
        // columns used by this batch must be current before the forward pass
        let mut touched = core::mem::take(&mut self.touched);
        touched.clear();
        for s in batch {
            for &(c, _) in &s.obs.sparse {
                if self.stamp[c as usize] != self.t {
                    self.stamp[c as usize] = self.t;
                    touched.push(c);
                }
            }
        }
        touched.extend_from_slice(&self.dense_cols);
        for &c in &touched {
            let skipped = self.t - 1 - self.last[c as usize];
            self.catch_up(p, c as usize, skipped);
        }
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut scratch = Vec::new();
        for s in batch {
            loss += p.accumulate(s, scale, &mut self.grad, &mut scratch);
            scratch.clear();
        }
        let h = self.hidden;
        let mut sq: f64 = self.grad[self.w1_end..].iter().map(|g| g * g).sum();
        for &c in &touched {
            let c = c as usize;
            sq += self.grad[c * h..(c + 1) * h].iter().map(|g| g * g).sum::<f64>();
        }
        let norm = math::sqrt(sq);
        let gs = if norm > self.clip { self.clip / norm } else { 1.0 };
        for &c in &touched {
            let c = c as usize;
            for j in c * h..(c + 1) * h {
                self.velocity[j] = self.mu * self.velocity[j] + gs * self.grad[j];
                p.theta[j] -= self.lr * self.velocity[j];
                self.grad[j] = 0.0;
            }
            self.last[c] = self.t;
        }
        self.touched = touched;
        for j in self.w1_end..p.theta.len() {
            self.velocity[j] = self.mu * self.velocity[j] + gs * self.grad[j];
            p.theta[j] -= self.lr * self.velocity[j];
            self.grad[j] = 0.0;
        }
        loss * scale
    }

    /// Brings every column up to the current step.
    fn flush(&mut self, p: &mut PolicyParams) {
        for c in 0..self.columns {
            let n = self.t - self.last[c];
            self.catch_up(p, c, n);
            self.last[c] = self.t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collect::{EpisodeMeta, Source};
    use crate::rng::normal;
    use crate::se3::Pose;
    use crate::sim::{ObservationFrame, Scenario};
    use rand::Rng;

    fn meta() -> EpisodeMeta {
        EpisodeMeta {
            seed: 0,
            scenario: Scenario::Dishrack,
            source: Source::Pvp,
            noise_aug: false,
            ccg: true,
            tr: true,
            regrasps: 0,
            success: true,
            target: 0,
            start: Pose::IDENTITY,
            grasp_offset: Pose::IDENTITY,
        }
    }

    /// Episodes whose single observation is uninformative and whose action
    /// is one of two mirrored values.
    fn bimodal(n: usize) -> Vec<Episode> {
        let mut rng = seeded(1, 0);
        (0..n)
            .map(|i| {
                let frame = ObservationFrame { raster: vec![0.0, 0.5, 0.0, 1.0], proprio: [0.0; 7] };
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                let v: [f64; 6] = core::array::from_fn(|d| sign * 0.05 * (d as f64 + 1.0) + 0.001 * normal(&mut rng));
                let _ = rng.random::<u8>();
                Episode { meta: meta(), frames: vec![frame.clone(), frame], actions: vec![Action::from_array(v, true)] }
            })
            .collect()
    }

    fn cfg(modes: usize) -> TrainConfig {
        TrainConfig { modes, hidden: 16, epochs: 150, batch: 16, lr: 1e-2, ..TrainConfig::default() }
    }

    #[test]
    fn mixture_beats_single_gaussian_on_bimodal_data() {
        let data = bimodal(64);
        let one = train(&data, &cfg(1), 4, 1).unwrap();
        let five = train(&data, &cfg(5), 4, 1).unwrap();
        let (l1, l5) = (one.log.last().unwrap().train_nll, five.log.last().unwrap().train_nll);
        assert!(l1 - l5 > 0.1, "single {l1} mixture {l5}");
    }

    #[test]
    fn training_is_deterministic_and_improves() {
        let data = bimodal(20);
        let a = train(&data, &cfg(5), 4, 1).unwrap();
        let b = train(&data, &cfg(5), 4, 1).unwrap();
        assert_eq!(a.params, b.params);
        assert!(a.log.last().unwrap().heldout_nll < a.log[0].heldout_nll);
        assert_eq!(a.heldout_episodes, 2);
    }

    #[test]
    fn lazy_momentum_matches_dense_updates() {
        // inputs alternate between disjoint columns, so every column is skipped
        let data: Vec<Episode> = (0..8)
            .map(|i| {
                let mut raster = vec![0.0f32; 4];
                raster[i % 4] = 1.0;
                let frame = ObservationFrame { raster, proprio: [0.1 * i as f64 as f32; 7] };
                let v: [f64; 6] = core::array::from_fn(|d| 0.01 * (i + d) as f64);
                Episode { meta: meta(), frames: vec![frame.clone(), frame], actions: vec![Action::from_array(v, i % 3 == 0)] }
            })
            .collect();
        let refs: Vec<&Episode> = data.iter().collect();
        let (obs, acts) = build_samples(&refs, 1);
        let samples: Vec<Sample> = obs.iter().zip(&acts).map(|(obs, action)| Sample { obs, action }).collect();
        let tc = TrainConfig { hidden: 6, modes: 2, lr: 0.05, grad_clip: f64::INFINITY, ..TrainConfig::default() };
        let p0 = PolicyParams::init(Layout { frame_len: 4, stack: 1, hidden: 6, modes: 2 }, false, &mut seeded(3, 0));
        let mut lazy = p0.clone();
        let mut opt = Momentum::new(&lazy, &tc);
        let mut dense = p0.clone();
        let mut vel = vec![0.0; dense.theta.len()];
        for step in 0..12 {
            let batch = [samples[step % samples.len()]];
            opt.step(&mut lazy, &batch);
            let (_, g) = super::super::nll_grad(&dense, &batch).unwrap();
            for j in 0..g.len() {
                vel[j] = tc.momentum * vel[j] + g[j];
                dense.theta[j] -= tc.lr * vel[j];
            }
        }
        opt.flush(&mut lazy);
        for (a, b) in lazy.theta.iter().zip(&dense.theta) {
            assert!((a - b).abs() < 1e-12, "{a} {b}");
        }
    }

    #[test]
    fn failed_episodes_are_excluded() {
        let mut data = bimodal(4);
        for e in &mut data {
            e.meta.success = false;
        }
        assert!(matches!(train(&data, &cfg(1), 4, 1), Err(Error::Training { .. })));
    }
}
