//! Cosine noise schedule with an exact zero terminal signal-to-noise ratio,
//! plus the closed-form forward process and velocity-target algebra.

use crate::error::{Error, Result};

/// Cumulative signal levels ᾱ_n for n = 1..=N, with ᾱ_0 defined as 1.
///
/// The raw cosine schedule leaves a tiny residual signal at the last step;
/// rescaling √ᾱ affinely so that √ᾱ_N lands on exactly 0 (and √ᾱ_1 keeps its
/// value) makes the final step pure noise, so sampling can start from a
/// standard Gaussian with no train/test mismatch.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub n: usize,
    alpha_bar: Vec<f64>,
}

pub const COSINE_OFFSET: f64 = 0.008;

pub fn build_schedule(n: usize) -> Result<NoiseSchedule> {
    if n < 2 {
        return Err(Error::Config(format!(
            "noise schedule needs at least 2 steps, got {n}"
        )));
    }
    let s = COSINE_OFFSET;
    let sqrt_ab = |step: usize| -> f64 {
        let u = (step as f64 / n as f64 + s) / (1.0 + s);
        (u * std::f64::consts::FRAC_PI_2).cos()
    };
    let g1 = sqrt_ab(1);
    let gn = sqrt_ab(n);
    let scale = g1 / (g1 - gn);
    let mut alpha_bar = Vec::with_capacity(n);
    for step in 1..=n {
        let g = (sqrt_ab(step) - gn) * scale;
        alpha_bar.push(g * g);
    }
    // The affine map sends step N to exactly 0; enforce the endpoints in
    // the stored table so downstream identities are exact.
    alpha_bar[n - 1] = 0.0;
    Ok(NoiseSchedule { n, alpha_bar })
}

impl NoiseSchedule {
    /// ᾱ_n, valid for n in 0..=N; ᾱ_0 = 1.
    pub fn alpha_bar(&self, n: usize) -> f64 {
        assert!(n <= self.n, "schedule step {n} out of range 0..={}", self.n);
        if n == 0 {
            1.0
        } else {
            self.alpha_bar[n - 1]
        }
    }

    pub fn sqrt_alpha_bar(&self, n: usize) -> f64 {
        self.alpha_bar(n).sqrt()
    }

    pub fn sqrt_one_minus_alpha_bar(&self, n: usize) -> f64 {
        (1.0 - self.alpha_bar(n)).sqrt()
    }

    /// Per-step noise amount β_n = 1 − ᾱ_n/ᾱ_{n−1}, n in 1..=N.
    pub fn beta(&self, n: usize) -> f64 {
        assert!((1..=self.n).contains(&n));
        1.0 - self.alpha_bar(n) / self.alpha_bar(n - 1)
    }

    fn check_step(&self, n: usize) -> Result<()> {
        if n < 1 || n > self.n {
            return Err(Error::Config(format!(
                "diffusion step {n} outside 1..={}",
                self.n
            )));
        }
        Ok(())
    }

    /// z_n = √ᾱ_n·z0 + √(1−ᾱ_n)·ε.
    pub fn forward_diffuse(&self, z0: &[f64], eps: &[f64], n: usize) -> Result<Vec<f64>> {
        self.check_step(n)?;
        if z0.len() != eps.len() {
            return Err(Error::Shape(format!(
                "forward_diffuse: z0 has {} values, noise has {}",
                z0.len(),
                eps.len()
            )));
        }
        let (a, b) = (self.sqrt_alpha_bar(n), self.sqrt_one_minus_alpha_bar(n));
        Ok(z0.iter().zip(eps).map(|(z, e)| a * z + b * e).collect())
    }

    /// v_n = √ᾱ_n·ε − √(1−ᾱ_n)·z0.
    pub fn v_target(&self, z0: &[f64], eps: &[f64], n: usize) -> Result<Vec<f64>> {
        self.check_step(n)?;
        if z0.len() != eps.len() {
            return Err(Error::Shape(format!(
                "v_target: z0 has {} values, noise has {}",
                z0.len(),
                eps.len()
            )));
        }
        let (a, b) = (self.sqrt_alpha_bar(n), self.sqrt_one_minus_alpha_bar(n));
        Ok(z0.iter().zip(eps).map(|(z, e)| a * e - b * z).collect())
    }

    /// Recover (ẑ0, ε̂) from a state and a velocity at step n:
    /// ẑ0 = √ᾱ_n·z − √(1−ᾱ_n)·v, ε̂ = √(1−ᾱ_n)·z + √ᾱ_n·v.
    pub fn split_state(&self, z: &[f64], v: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
        let (a, b) = (self.sqrt_alpha_bar(n), self.sqrt_one_minus_alpha_bar(n));
        let z0 = z.iter().zip(v).map(|(z, v)| a * z - b * v).collect();
        let eps = z.iter().zip(v).map(|(z, v)| b * z + a * v).collect();
        (z0, eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::standard_normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn terminal_is_exactly_zero_and_start_is_near_one() {
        let sched = build_schedule(1000).unwrap();
        assert_eq!(sched.alpha_bar(1000), 0.0);
        assert!(sched.alpha_bar(1) >= 0.99, "ᾱ_1 = {}", sched.alpha_bar(1));
        assert_eq!(sched.alpha_bar(0), 1.0);
    }

    #[test]
    fn strictly_decreasing_and_betas_in_range() {
        for n in [2usize, 10, 50, 1000] {
            let sched = build_schedule(n).unwrap();
            for i in 1..=n {
                assert!(
                    sched.alpha_bar(i) < sched.alpha_bar(i - 1),
                    "not strictly decreasing at {i}/{n}"
                );
                let b = sched.beta(i);
                assert!(b > 0.0 && b <= 1.0, "β_{i} = {b} out of (0,1] for N={n}");
            }
        }
        assert!(matches!(build_schedule(1), Err(Error::Config(_))));
    }

    #[test]
    fn endpoint_cases_of_forward_and_velocity() {
        let sched = build_schedule(100).unwrap();
        let z0 = vec![0.5, -1.0, 2.0];
        let eps = vec![0.1, 0.2, -0.3];
        // Terminal step: pure noise, and v = −z0.
        let zn = sched.forward_diffuse(&z0, &eps, 100).unwrap();
        assert_eq!(zn, eps);
        let v = sched.v_target(&z0, &eps, 100).unwrap();
        let neg: Vec<f64> = z0.iter().map(|x| -x).collect();
        assert_eq!(v, neg);
    }

    #[test]
    fn state_velocity_identities_hold() {
        let sched = build_schedule(250).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let z0: Vec<f64> = (0..24).map(|_| standard_normal(&mut rng)).collect();
        let eps: Vec<f64> = (0..24).map(|_| standard_normal(&mut rng)).collect();
        for n in [1usize, 2, 100, 200, 249, 250] {
            let zn = sched.forward_diffuse(&z0, &eps, n).unwrap();
            let v = sched.v_target(&z0, &eps, n).unwrap();
            let (z0_hat, eps_hat) = sched.split_state(&zn, &v, n);
            for i in 0..24 {
                assert!(
                    (z0_hat[i] - z0[i]).abs() <= 1e-6,
                    "z0 identity fails at n={n}: {} vs {}",
                    z0_hat[i],
                    z0[i]
                );
                assert!(
                    (eps_hat[i] - eps[i]).abs() <= 1e-6,
                    "ε identity fails at n={n}"
                );
            }
        }
    }

    #[test]
    fn forward_diffuse_second_moment_matches_theory() {
        // E‖z_n‖² = ᾱ_n‖z0‖² + (1−ᾱ_n)·dim, checked by Monte Carlo.
        let sched = build_schedule(100).unwrap();
        let dim = 16;
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let z0: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
        let n = 60;
        let draws = 10_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let eps: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
            let zn = sched.forward_diffuse(&z0, &eps, n).unwrap();
            acc += zn.iter().map(|v| v * v).sum::<f64>();
        }
        let measured = acc / draws as f64;
        let ab = sched.alpha_bar(n);
        let expected = ab * z0.iter().map(|v| v * v).sum::<f64>() + (1.0 - ab) * dim as f64;
        let rel = (measured - expected).abs() / expected;
        assert!(rel < 0.05, "second moment off by {:.1}%", rel * 100.0);
    }

    #[test]
    fn out_of_range_step_is_config_error() {
        let sched = build_schedule(10).unwrap();
        assert!(sched.forward_diffuse(&[0.0], &[0.0], 0).is_err());
        assert!(sched.forward_diffuse(&[0.0], &[0.0], 11).is_err());
        assert!(matches!(
            sched.v_target(&[0.0], &[0.0, 1.0], 5),
            Err(Error::Shape(_))
        ));
    }
}
