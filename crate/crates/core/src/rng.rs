//! Stateless counter-based normal generator keyed by (seed, stream, step, k).
//!
//! Every draw is a pure function of its key, so any worker can regenerate any
//! increment without coordination.

use std::f64::consts::TAU;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit hash of a key tuple.
#[inline]
pub fn hash4(a: u64, b: u64, c: u64, d: u64) -> u64 {
    let mut h = mix(a);
    h = mix(h ^ b.rotate_left(17));
    h = mix(h ^ c.rotate_left(31));
    mix(h ^ d.rotate_left(47))
}

/// Uniform in the open interval (0, 1).
#[inline]
pub fn uniform(seed: u64, stream: u64, step: u64, k: u64) -> f64 {
    let bits = hash4(seed, stream, step, k) >> 11;
    (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw via Box–Muller on two hashed uniforms.
#[inline]
pub fn normal(seed: u64, stream: u64, step: u64, k: u64) -> f64 {
    let u1 = uniform(seed, stream, step, 2 * k);
    let u2 = uniform(seed, stream, step, 2 * k + 1);
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// Uniformly distributed unit 3-vector.
pub fn unit_vector(seed: u64, stream: u64, step: u64) -> [f64; 3] {
    let c = 2.0 * uniform(seed, stream, step, 0) - 1.0;
    let phi = TAU * uniform(seed, stream, step, 1);
    let s = (1.0 - c * c).max(0.0).sqrt();
    [s * phi.cos(), s * phi.sin(), c]
}

/// Wiener increments `dW_k ~ N(0, dt)` for one (seed, stream) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WienerStream {
    pub seed: u64,
    pub stream: u64,
}

impl WienerStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn increment(&self, step: u64, k: usize, dt: f64) -> f64 {
        dt.sqrt() * normal(self.seed, self.stream, step, k as u64)
    }

    pub fn increments(&self, step: u64, modes: usize, dt: f64) -> Vec<f64> {
        (0..modes).map(|k| self.increment(step, k, dt)).collect()
    }

    pub fn fill(&self, step: u64, dt: f64, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.increment(step, k, dt);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_keys_reproduce() {
        let a = WienerStream::new(7, 3).increments(11, 5, 0.1);
        let b = WienerStream::new(7, 3).increments(11, 5, 0.1);
        assert_eq!(a, b);
        let c = WienerStream::new(7, 4).increments(11, 5, 0.1);
        assert_ne!(a, c);
    }

    #[test]
    fn increment_moments_within_three_sigma() {
        let n = 100_000u64;
        let dt = 0.01;
        let w = WienerStream::new(2024, 0);
        let xs: Vec<f64> = (0..n).map(|s| w.increment(s, 0, dt)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 3.0 * (dt / n as f64).sqrt(), "mean {mean}");
        // Var of sample variance for a Gaussian is 2 dt^2 / (n-1)
        let se = dt * (2.0 / (n - 1) as f64).sqrt();
        assert!((var - dt).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn unit_vectors_are_isotropic() {
        let n = 50_000u64;
        let mut m = [[0.0; 3]; 3];
        for s in 0..n {
            let u = unit_vector(5, 1, s);
            let norm: f64 = u.iter().map(|c| c * c).sum();
            assert!((norm - 1.0).abs() < 1e-12);
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += u[i] * u[j] / n as f64;
                }
            }
        }
        // Var(u_i u_j) <= 1/5 for unit vectors
        let tol = 3.0 * (0.2 / n as f64).sqrt();
        for (i, row) in m.iter().enumerate() {
            for (j, &mij) in row.iter().enumerate() {
                let expect = if i == j { 1.0 / 3.0 } else { 0.0 };
                assert!((mij - expect).abs() < tol, "{i}{j}: {mij}");
            }
        }
    }
}
