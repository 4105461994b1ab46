//! Waypoint noise and clearance sampling.

use super::trajectory::SparseTrajectory;
use super::CollectConfig;
use crate::math;
use crate::rng::normal;
use crate::se3::{perturb_pose, Pose};
use rand::Rng;

/// Number of leading waypoints perturbed: `ceil(fraction * len)`.
pub fn perturbed_count(len: usize, fraction: f64) -> usize {
    (math::ceil(fraction * len as f64) as usize).min(len)
}

/// Perturbs the leading waypoints of a place-ordered trajectory; the
/// approach tail is left untouched. Returns the input unchanged when
/// augmentation is off.
pub fn augment_waypoints<R: Rng + ?Sized>(place: &SparseTrajectory, c: &CollectConfig, rng: &mut R) -> SparseTrajectory {
    if !c.noise_aug {
        return place.clone();
    }
    let k = perturbed_count(place.poses.len(), c.noise_fraction);
    let mut out = place.clone();
    for p in &mut out.poses[..k] {
        *p = perturb_pose(p, &c.noise, rng);
    }
    out
}

/// `base` with per-axis Gaussian translation noise; rotation untouched.
pub fn sample_clearance<R: Rng + ?Sized>(base: &Pose, sigma: f64, rng: &mut R) -> Pose {
    let mut p = *base;
    for t in &mut p.translation {
        let n = normal(rng);
        if sigma > 0.0 {
            *t += sigma * n;
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::se3::Quat;
    use alloc::vec::Vec;

    fn line(n: usize) -> SparseTrajectory {
        let poses = (0..n)
            .map(|i| Pose::new(Quat::from_axis_angle([0.0, 0.0, 1.0], 0.1 * i as f64), [0.0, 0.0, 0.4 - 0.01 * i as f64]))
            .collect();
        SparseTrajectory { poses, dt: 0.2 }
    }

    fn on() -> CollectConfig {
        CollectConfig { noise_aug: true, ..CollectConfig::default() }
    }

    #[test]
    fn disabled_is_identity() {
        let s = line(10);
        let mut rng = seeded(0, 0);
        assert_eq!(augment_waypoints(&s, &CollectConfig::default(), &mut rng), s);
    }

    #[test]
    fn length_eight_perturbs_six() {
        let s = line(8);
        let mut rng = seeded(1, 0);
        let a = augment_waypoints(&s, &on(), &mut rng);
        for i in 0..6 {
            assert_ne!(a.poses[i], s.poses[i]);
        }
        assert_eq!(a.poses[6..], s.poses[6..]);
    }

    #[test]
    fn split_is_exact_for_all_lengths() {
        let mut rng = seeded(2, 0);
        for n in 2..=50 {
            let s = line(n);
            let a = augment_waypoints(&s, &on(), &mut rng);
            let k = (0.75 * n as f64).ceil() as usize;
            assert_eq!(perturbed_count(n, 0.75), k);
            assert!(a.poses[..k].iter().zip(&s.poses[..k]).all(|(x, y)| x != y));
            assert_eq!(a.poses[k..], s.poses[k..]);
            // tail of floor(0.25 n) is untouched
            let tail = n / 4;
            assert_eq!(a.poses[n - tail..], s.poses[n - tail..]);
        }
    }

    #[test]
    fn perturbation_statistics() {
        let s = line(12);
        let c = on();
        let mut rng = seeded(3, 0);
        let k = perturbed_count(12, 0.75);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for _ in 0..10_000 {
            let a = augment_waypoints(&s, &c, &mut rng);
            assert_eq!(a.poses.last(), s.poses.last());
            for i in 0..k {
                let d = math::norm(math::sub(a.poses[i].translation, s.poses[i].translation));
                sum += d;
                sum_sq += d * d;
                count += 1;
            }
        }
        // mean of a chi distribution with 3 dof: sigma * 2 sqrt(2 / pi)
        let expect = c.noise.sigma_t * 2.0 * (2.0 / core::f64::consts::PI).sqrt();
        let mean = sum / count as f64;
        assert!((mean - expect).abs() < 0.05 * expect, "{mean} vs {expect}");
        let rms = (sum_sq / count as f64).sqrt();
        assert!((rms - 3f64.sqrt() * c.noise.sigma_t).abs() < 0.05 * 3f64.sqrt() * c.noise.sigma_t);
    }

    #[test]
    fn clearance_statistics() {
        let base = Pose::new(Quat::from_axis_angle([1.0, 0.0, 0.0], 0.3), [0.0, 0.16, 0.4]);
        let mut rng = seeded(4, 0);
        assert_eq!(sample_clearance(&base, 0.0, &mut rng), base);
        let n = 100_000;
        let draws: Vec<Pose> = (0..n).map(|_| sample_clearance(&base, 0.025, &mut rng)).collect();
        assert!(draws.iter().all(|p| p.rotation == base.rotation));
        for k in 0..3 {
            let mean = draws.iter().map(|p| p.translation[k]).sum::<f64>() / n as f64;
            let var = draws.iter().map(|p| (p.translation[k] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((var.sqrt() - 0.025).abs() < 0.03 * 0.025);
        }
    }
}
