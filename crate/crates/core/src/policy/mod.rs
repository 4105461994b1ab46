//! Behavioural-cloning policy: a two-layer tanh network over the stacked
//! wrist views and proprioception with a Gaussian-mixture action head and a
//! Bernoulli gripper head.

mod loss;
mod train;

pub use loss::{mse_grad, nll_grad, nll_loss, Sample};
pub use train::{build_samples, train, EpochLog, TrainConfig, Trained};

use crate::collect::Action;
use crate::error::{Error, Result};
use crate::math;
use crate::rng::normal;
use crate::sim::{ObservationFrame, PROPRIO_LEN};
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

pub const ACTION_DIM: usize = 6;
/// Per mode: logit, mean and log-std.
pub const MODE_WIDTH: usize = 1 + 2 * ACTION_DIM;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Smoothly bounds a raw head output to `(LOG_STD_MIN, LOG_STD_MAX)`;
/// returns the value and its derivative.
pub fn squash_log_std(raw: f64) -> (f64, f64) {
    let mid = 0.5 * (LOG_STD_MAX + LOG_STD_MIN);
    let half = 0.5 * (LOG_STD_MAX - LOG_STD_MIN);
    let t = math::tanh((raw - mid) / half);
    (mid + half * t, 1.0 - t * t)
}

/// Network dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    /// Values per rendered frame.
    pub frame_len: usize,
    /// Frames per observation.
    pub stack: usize,
    pub hidden: usize,
    pub modes: usize,
}

impl Layout {
    pub fn input(&self) -> usize {
        self.frame_len * self.stack + PROPRIO_LEN
    }

    pub fn output(&self) -> usize {
        MODE_WIDTH * self.modes + 1
    }

    pub fn param_count(&self) -> usize {
        let (i, h, o) = (self.input(), self.hidden, self.output());
        i * h + h + h * h + h + h * o + o
    }

    fn offsets(&self) -> Offsets {
        let (i, h, o) = (self.input(), self.hidden, self.output());
        let w1 = 0;
        let b1 = w1 + i * h;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + h * o;
        Offsets { w1, b1, w2, b2, w3, b3, end: b3 + o }
    }
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    end: usize,
}

/// Observation in network input form: non-zero raster entries over the
/// whole stack plus raw proprioception.
#[derive(Debug, Clone, PartialEq)]
pub struct Obs {
    pub sparse: Vec<(u32, f32)>,
    pub proprio: [f64; PROPRIO_LEN],
}

impl Obs {
    /// `frames[0]` is the current frame, followed by its predecessors.
    pub fn encode(frames: &[&ObservationFrame]) -> Obs {
        let mut sparse = Vec::new();
        let mut base = 0u32;
        for f in frames {
            for (j, &v) in f.raster.iter().enumerate() {
                if v != 0.0 {
                    sparse.push((base + j as u32, v));
                }
            }
            base += f.raster.len() as u32;
        }
        Obs { sparse, proprio: frames[0].proprio.map(f64::from) }
    }
}

/// Trainable weights plus fixed input and output normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub layout: Layout,
    /// Use unit variance instead of the learned log-std.
    pub fixed_std: bool,
    /// Flat weights: first layer stored input-major, then biases, second
    /// layer, head.
    pub theta: Vec<f64>,
    pub action_offset: [f64; ACTION_DIM],
    pub action_scale: [f64; ACTION_DIM],
    pub proprio_mean: [f64; PROPRIO_LEN],
    pub proprio_std: [f64; PROPRIO_LEN],
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Forward {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub out: Vec<f64>,
}

/// Per-mode head parameters after clamping.
#[derive(Debug, Clone, Copy)]
pub struct ModeHead {
    pub logit: f64,
    pub mean: [f64; ACTION_DIM],
    pub log_std: [f64; ACTION_DIM],
}

impl PolicyParams {
    /// Small random weights; identity normalization.
    pub fn init<R: Rng + ?Sized>(layout: Layout, fixed_std: bool, rng: &mut R) -> Self {
        let o = layout.offsets();
        let mut theta = vec![0.0; o.end];
        let (i, h) = (layout.input(), layout.hidden);
        // inputs are sparse: scale by a typical active count rather than the full width
        let s1 = 1.0 / math::sqrt((i.min(1024)) as f64);
        for w in &mut theta[o.w1..o.b1] {
            *w = s1 * normal(rng);
        }
        let s2 = 1.0 / math::sqrt(h as f64);
        for w in &mut theta[o.w2..o.b2] {
            *w = s2 * normal(rng);
        }
        for w in &mut theta[o.w3..o.b3] {
            *w = 0.1 * s2 * normal(rng);
        }
        PolicyParams {
            layout,
            fixed_std,
            theta,
            action_offset: [0.0; ACTION_DIM],
            action_scale: [1.0; ACTION_DIM],
            proprio_mean: [0.0; PROPRIO_LEN],
            proprio_std: [1.0; PROPRIO_LEN],
        }
    }

    pub(crate) fn forward(&self, obs: &Obs) -> Forward {
        let l = self.layout;
        let o = l.offsets();
        let h = l.hidden;
        let t = &self.theta;
        let mut z1 = t[o.b1..o.b1 + h].to_vec();
        for &(j, v) in &obs.sparse {
            let col = &t[o.w1 + j as usize * h..o.w1 + (j as usize + 1) * h];
            let v = v as f64;
            for (z, w) in z1.iter_mut().zip(col) {
                *z += w * v;
            }
        }
        let pbase = l.frame_len * l.stack;
        for k in 0..PROPRIO_LEN {
            let v = (obs.proprio[k] - self.proprio_mean[k]) / self.proprio_std[k];
            let col = &t[o.w1 + (pbase + k) * h..o.w1 + (pbase + k + 1) * h];
            for (z, w) in z1.iter_mut().zip(col) {
                *z += w * v;
            }
        }
        let h1: Vec<f64> = z1.iter().map(|&z| math::tanh(z)).collect();
        let mut h2 = t[o.b2..o.b2 + h].to_vec();
        for (r, z) in h2.iter_mut().enumerate() {
            let row = &t[o.w2 + r * h..o.w2 + (r + 1) * h];
            *z += row.iter().zip(&h1).map(|(w, x)| w * x).sum::<f64>();
            *z = math::tanh(*z);
        }
        let nout = l.output();
        let mut out = t[o.b3..o.b3 + nout].to_vec();
        for (r, z) in out.iter_mut().enumerate() {
            let row = &t[o.w3 + r * h..o.w3 + (r + 1) * h];
            *z += row.iter().zip(&h2).map(|(w, x)| w * x).sum::<f64>();
        }
        Forward { h1, h2, out }
    }

    pub fn heads(&self, out: &[f64]) -> (Vec<ModeHead>, f64) {
        let modes = (0..self.layout.modes)
            .map(|k| {
                let b = k * MODE_WIDTH;
                let mut mean = [0.0; ACTION_DIM];
                let mut log_std = [0.0; ACTION_DIM];
                for d in 0..ACTION_DIM {
                    mean[d] = out[b + 1 + d];
                    log_std[d] = if self.fixed_std { 0.0 } else { squash_log_std(out[b + 1 + ACTION_DIM + d]).0 };
                }
                ModeHead { logit: out[b], mean, log_std }
            })
            .collect();
        (modes, out[MODE_WIDTH * self.layout.modes])
    }

    /// Samples an action. With `low_noise` the per-dimension std is
    /// replaced by `sigma_eval` (in action units).
    pub fn act<R: Rng + ?Sized>(&self, obs: &Obs, low_noise: bool, sigma_eval: f64, rng: &mut R) -> Action {
        let f = self.forward(obs);
        let (modes, grip) = self.heads(&f.out);
        let max = modes.iter().map(|m| m.logit).fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = modes.iter().map(|m| math::exp(m.logit - max)).collect();
        let total: f64 = weights.iter().sum();
        let u: f64 = rng.random::<f64>() * total;
        let mut k = modes.len() - 1;
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let m = &modes[k];
        let mut a = [0.0; ACTION_DIM];
        for d in 0..ACTION_DIM {
            let n = normal(rng);
            let mean = m.mean[d] * self.action_scale[d] + self.action_offset[d];
            let sd = if low_noise { sigma_eval } else { math::exp(m.log_std[d]) * self.action_scale[d] };
            a[d] = mean + sd * n;
        }
        Action::from_array(a, math::sigmoid(grip) >= 0.5)
    }

    /// Rounds every stored value to single precision.
    pub fn quantize(&mut self) {
        let q = |v: &mut f64| *v = *v as f32 as f64;
        self.theta.iter_mut().for_each(q);
        self.action_offset.iter_mut().for_each(q);
        self.action_scale.iter_mut().for_each(q);
        self.proprio_mean.iter_mut().for_each(q);
        self.proprio_std.iter_mut().for_each(q);
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }
}

const MAGIC: &[u8; 8] = b"PVPPOLCY";
pub const PARAMS_VERSION: u32 = 1;

impl PolicyParams {
    /// Versioned little-endian encoding; floats are stored as `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let l = self.layout;
        let mut out = Vec::with_capacity(48 + 4 * (self.theta.len() + 26));
        out.extend_from_slice(MAGIC);
        for v in [PARAMS_VERSION, l.frame_len as u32, l.stack as u32, l.hidden as u32, l.modes as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(self.fixed_std as u8);
        out.extend_from_slice(&[0u8; 3]);
        out.extend_from_slice(&(self.theta.len() as u64).to_le_bytes());
        let tail = self.action_offset.iter().chain(&self.action_scale).chain(&self.proprio_mean).chain(&self.proprio_std);
        for v in self.theta.iter().chain(tail) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Config(alloc::format!("policy file: {m}"));
        if bytes.len() < 44 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        if u32_at(8) != PARAMS_VERSION {
            return Err(bad("unsupported version"));
        }
        let layout = Layout {
            frame_len: u32_at(12) as usize,
            stack: u32_at(16) as usize,
            hidden: u32_at(20) as usize,
            modes: u32_at(24) as usize,
        };
        let fixed_std = bytes[28] != 0;
        let n = u64::from_le_bytes(bytes[32..40].try_into().unwrap()) as usize;
        if layout.modes == 0 || layout.hidden == 0 || n != layout.param_count() {
            return Err(bad("layout mismatch"));
        }
        let total = n + 2 * ACTION_DIM + 2 * PROPRIO_LEN;
        if bytes.len() != 40 + 4 * total {
            return Err(bad("truncated"));
        }
        let vals: Vec<f64> = bytes[40..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let mut p = PolicyParams {
            layout,
            fixed_std,
            theta: vals[..n].to_vec(),
            action_offset: [0.0; ACTION_DIM],
            action_scale: [0.0; ACTION_DIM],
            proprio_mean: [0.0; PROPRIO_LEN],
            proprio_std: [0.0; PROPRIO_LEN],
        };
        let mut i = n;
        for dst in [&mut p.action_offset[..], &mut p.action_scale[..], &mut p.proprio_mean[..], &mut p.proprio_std[..]] {
            for d in dst.iter_mut() {
                *d = vals[i];
                i += 1;
            }
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    pub(crate) fn tiny(modes: usize, fixed_std: bool, seed: u64) -> PolicyParams {
        let layout = Layout { frame_len: 6, stack: 2, hidden: 8, modes };
        let mut rng = seeded(seed, 0);
        let mut p = PolicyParams::init(layout, fixed_std, &mut rng);
        for v in &mut p.theta {
            *v = 0.5 * normal(&mut rng);
        }
        p
    }

    fn obs(seed: u64) -> Obs {
        let mut rng = seeded(seed, 1);
        let sparse = (0..12).filter(|j| j % 3 != 0).map(|j| (j as u32, rng.random::<f32>())).collect();
        let mut proprio = [0.0; 7];
        proprio.iter_mut().for_each(|v| *v = normal(&mut rng));
        Obs { sparse, proprio }
    }

    #[test]
    fn layout_counts() {
        let l = Layout { frame_len: 3072, stack: 4, hidden: 128, modes: 5 };
        assert_eq!(l.input(), 4 * 3072 + 7);
        assert_eq!(l.output(), 66);
        assert!(tiny(1, false, 0).theta.len() >= 200);
    }

    #[test]
    fn low_noise_concentrates_on_mean() {
        let p = tiny(1, false, 3);
        let o = obs(0);
        let f = p.forward(&o);
        let (modes, _) = p.heads(&f.out);
        let mut rng = seeded(0, 2);
        for _ in 0..1000 {
            let a = p.act(&o, true, 1e-4, &mut rng).values();
            let d: f64 = (0..6).map(|k| (a[k] - modes[0].mean[k]).powi(2)).sum::<f64>().sqrt();
            assert!(d <= 3.0 * 1e-4 * 6f64.sqrt() + 1e-6);
        }
    }

    #[test]
    fn dominant_mode_always_chosen() {
        let mut p = tiny(5, false, 4);
        let o = obs(1);
        // push mode 2's logit far above the others through its bias
        let off = p.layout.offsets();
        for k in 0..5 {
            p.theta[off.b3 + k * MODE_WIDTH] = if k == 2 { 60.0 } else { -60.0 };
            for j in 0..p.layout.hidden {
                p.theta[off.w3 + (k * MODE_WIDTH) * p.layout.hidden + j] = 0.0;
            }
        }
        let f = p.forward(&o);
        let (modes, _) = p.heads(&f.out);
        let mut rng = seeded(1, 2);
        for _ in 0..10_000 {
            let a = p.act(&o, true, 1e-4, &mut rng).values();
            assert!((a[0] - modes[2].mean[0]).abs() < 1e-2);
        }
    }

    #[test]
    fn gripper_threshold() {
        let mut p = tiny(1, false, 5);
        let off = p.layout.offsets();
        let g = MODE_WIDTH;
        for j in 0..p.layout.hidden {
            p.theta[off.w3 + g * p.layout.hidden + j] = 0.0;
        }
        p.theta[off.b3 + g] = 4.0;
        let mut rng = seeded(0, 0);
        assert!(p.act(&obs(2), true, 1e-4, &mut rng).gripper);
        p.theta[off.b3 + g] = -4.0;
        assert!(!p.act(&obs(2), true, 1e-4, &mut rng).gripper);
    }

    #[test]
    fn bytes_round_trip() {
        let mut p = tiny(5, false, 6);
        p.action_scale = [0.5; 6];
        p.quantize();
        let q = PolicyParams::from_bytes(&p.to_bytes()).unwrap();
        assert_eq!(p, q);
        let mut bad = p.to_bytes();
        bad[0] = b'X';
        assert!(PolicyParams::from_bytes(&bad).is_err());
        let short = p.to_bytes();
        assert!(PolicyParams::from_bytes(&short[..short.len() - 4]).is_err());
    }
}
