//! Negative log-likelihood of demonstrated actions and its gradient.

use super::{squash_log_std, Obs, PolicyParams, ACTION_DIM, MODE_WIDTH};
use crate::collect::Action;
use crate::error::{Error, Result};
use crate::math;
use crate::sim::PROPRIO_LEN;
use alloc::vec;
use alloc::vec::Vec;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub obs: &'a Obs,
    pub action: &'a Action,
}

impl PolicyParams {
    fn normalized_action(&self, a: &Action) -> [f64; ACTION_DIM] {
        let v = a.values();
        core::array::from_fn(|d| (v[d] - self.action_offset[d]) / self.action_scale[d])
    }

    fn log_scale(&self) -> f64 {
        self.action_scale.iter().map(|s| math::ln(*s)).sum()
    }

    /// Loss of one sample and, if `grad_out` is given, its gradient with
    /// respect to the network outputs.
    fn sample_nll(&self, out: &[f64], a: &Action, grad_out: Option<&mut [f64]>) -> f64 {
        let y = self.normalized_action(a);
        let (modes, grip) = self.heads(out);
        let lmax = modes.iter().map(|m| m.logit).fold(f64::NEG_INFINITY, f64::max);
        let lse_logit = lmax + math::ln(modes.iter().map(|m| math::exp(m.logit - lmax)).sum::<f64>());
        let comp: Vec<f64> = modes
            .iter()
            .map(|m| {
                let mut lp = m.logit - lse_logit;
                for d in 0..ACTION_DIM {
                    let z = (y[d] - m.mean[d]) * math::exp(-m.log_std[d]);
                    lp -= 0.5 * z * z + m.log_std[d] + HALF_LN_2PI;
                }
                lp
            })
            .collect();
        let cmax = comp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = cmax + math::ln(comp.iter().map(|c| math::exp(c - cmax)).sum::<f64>());
        let g = a.gripper as u8 as f64;
        let bce = math::softplus(grip) - g * grip;
        let loss = -lse + self.log_scale() + bce;
        if let Some(go) = grad_out {
            for (k, m) in modes.iter().enumerate() {
                let b = k * MODE_WIDTH;
                let r = math::exp(comp[k] - lse);
                go[b] = math::exp(m.logit - lse_logit) - r;
                for d in 0..ACTION_DIM {
                    let inv_var = math::exp(-2.0 * m.log_std[d]);
                    let diff = y[d] - m.mean[d];
                    go[b + 1 + d] = -(r * (diff * inv_var));
                    go[b + 1 + ACTION_DIM + d] = if self.fixed_std {
                        0.0
                    } else {
                        let (_, slope) = squash_log_std(out[b + 1 + ACTION_DIM + d]);
                        -r * (diff * diff * inv_var - 1.0) * slope
                    };
                }
            }
            go[MODE_WIDTH * modes.len()] = math::sigmoid(grip) - g;
        }
        loss
    }

    /// Backpropagates `go` (output gradient) through the network, adding
    /// into `grad`. Records first-layer input columns in `touched`.
    pub(crate) fn backward(
        &self,
        obs: &Obs,
        f: &super::Forward,
        go: &[f64],
        grad: &mut [f64],
        mut touched: Option<&mut Vec<u32>>,
    ) {
        let l = self.layout;
        let o = l.offsets();
        let h = l.hidden;
        let t = &self.theta;
        let mut g_h2 = vec![0.0; h];
        for (r, &gr) in go.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            grad[o.b3 + r] += gr;
            let row = o.w3 + r * h;
            for j in 0..h {
                grad[row + j] += gr * f.h2[j];
                g_h2[j] += gr * t[row + j];
            }
        }
        let g_z2: Vec<f64> = g_h2.iter().zip(&f.h2).map(|(g, a)| g * (1.0 - a * a)).collect();
        let mut g_h1 = vec![0.0; h];
        for (r, &gr) in g_z2.iter().enumerate() {
            grad[o.b2 + r] += gr;
            let row = o.w2 + r * h;
            for j in 0..h {
                grad[row + j] += gr * f.h1[j];
                g_h1[j] += gr * t[row + j];
            }
        }
        let g_z1: Vec<f64> = g_h1.iter().zip(&f.h1).map(|(g, a)| g * (1.0 - a * a)).collect();
        for j in 0..h {
            grad[o.b1 + j] += g_z1[j];
        }
        let mut column = |c: usize, v: f64| {
            let base = o.w1 + c * h;
            for (g, d) in grad[base..base + h].iter_mut().zip(&g_z1) {
                *g += d * v;
            }
        };
        for &(c, v) in &obs.sparse {
            column(c as usize, v as f64);
            if let Some(t) = touched.as_deref_mut() {
                t.push(c);
            }
        }
        let pbase = l.frame_len * l.stack;
        for k in 0..PROPRIO_LEN {
            column(pbase + k, (obs.proprio[k] - self.proprio_mean[k]) / self.proprio_std[k]);
        }
    }

    fn check(&self, batch: &[Sample]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Training { batch: 0, reason: "empty batch".into() });
        }
        for (i, s) in batch.iter().enumerate() {
            let finite = s.obs.proprio.iter().all(|v| v.is_finite())
                && s.obs.sparse.iter().all(|(_, v)| v.is_finite())
                && s.action.delta.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::Training { batch: i, reason: "non-finite input".into() });
            }
        }
        Ok(())
    }
}

/// Mean negative log-likelihood of the batch actions, in action units.
pub fn nll_loss(p: &PolicyParams, batch: &[Sample]) -> Result<f64> {
    p.check(batch)?;
    let total: f64 = batch.iter().map(|s| p.sample_nll(&p.forward(s.obs).out, s.action, None)).sum();
    Ok(total / batch.len() as f64)
}

/// Loss and exact gradient with respect to `theta`.
pub fn nll_grad(p: &PolicyParams, batch: &[Sample]) -> Result<(f64, Vec<f64>)> {
    p.check(batch)?;
    let mut grad = vec![0.0; p.theta.len()];
    let mut go = vec![0.0; p.layout.output()];
    let inv = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for s in batch {
        let f = p.forward(s.obs);
        total += p.sample_nll(&f.out, s.action, Some(&mut go));
        go.iter_mut().for_each(|g| *g *= inv);
        p.backward(s.obs, &f, &go, &mut grad, None);
    }
    Ok((total * inv, grad))
}

/// Gradient of the mean of `0.5 |y - mean|^2` plus the gripper
/// cross-entropy, for single-mode heads.
pub fn mse_grad(p: &PolicyParams, batch: &[Sample]) -> Result<Vec<f64>> {
    p.check(batch)?;
    if p.layout.modes != 1 {
        return Err(Error::Training { batch: 0, reason: "squared-error loss needs one mode".into() });
    }
    let mut grad = vec![0.0; p.theta.len()];
    let mut go = vec![0.0; p.layout.output()];
    let inv = 1.0 / batch.len() as f64;
    for s in batch {
        let f = p.forward(s.obs);
        let y = p.normalized_action(s.action);
        go.iter_mut().for_each(|g| *g = 0.0);
        for d in 0..ACTION_DIM {
            go[1 + d] = f.out[1 + d] - y[d];
        }
        go[MODE_WIDTH] = math::sigmoid(f.out[MODE_WIDTH]) - s.action.gripper as u8 as f64;
        go.iter_mut().for_each(|g| *g *= inv);
        p.backward(s.obs, &f, &go, &mut grad, None);
    }
    Ok(grad)
}

impl PolicyParams {
    /// Loss of one sample, accumulating `scale` times its gradient.
    pub(crate) fn accumulate(&self, s: &Sample, scale: f64, grad: &mut [f64], touched: &mut Vec<u32>) -> f64 {
        let f = self.forward(s.obs);
        let mut go = vec![0.0; self.layout.output()];
        let loss = self.sample_nll(&f.out, s.action, Some(&mut go));
        go.iter_mut().for_each(|g| *g *= scale);
        self.backward(s.obs, &f, &go, grad, Some(touched));
        loss
    }
}
