//! Jump-moment estimation with block-jackknife error bars.

use nalgebra::{DMatrix, DVector};

/// `⟨Δz⟩/τ` and `⟨Δz ⊗ Δz⟩/(2τ)` with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpMoments {
    pub samples: usize,
    pub drift: DVector<f64>,
    pub drift_stderr: DVector<f64>,
    pub diffusion: DMatrix<f64>,
    pub diffusion_stderr: DMatrix<f64>,
}

/// Jump moments of per-interval displacements, with jackknife errors over
/// `blocks` contiguous blocks.
pub fn jump_moments(increments: &[Vec<f64>], tau: f64, blocks: usize) -> JumpMoments {
    let n = increments.len();
    let m = increments.first().map_or(0, Vec::len);
    let blocks = blocks.clamp(2, n.max(2));
    let mut block_sum1 = vec![DVector::<f64>::zeros(m); blocks];
    let mut block_sum2 = vec![DMatrix::<f64>::zeros(m, m); blocks];
    let mut block_n = vec![0usize; blocks];
    for (i, dz) in increments.iter().enumerate() {
        let b = i * blocks / n.max(1);
        let d = DVector::from_column_slice(dz);
        block_sum2[b] += &d * d.transpose();
        block_sum1[b] += d;
        block_n[b] += 1;
    }
    let tot1: DVector<f64> = block_sum1.iter().fold(DVector::zeros(m), |a, b| a + b);
    let tot2: DMatrix<f64> = block_sum2.iter().fold(DMatrix::zeros(m, m), |a, b| a + b);
    let nf = n as f64;
    let drift = &tot1 / (nf * tau);
    let diffusion = &tot2 / (2.0 * nf * tau);
    let mut var1 = DVector::<f64>::zeros(m);
    let mut var2 = DMatrix::<f64>::zeros(m, m);
    let live: Vec<usize> = (0..blocks).filter(|&b| block_n[b] > 0).collect();
    let bf = live.len() as f64;
    for &b in &live {
        let rest = nf - block_n[b] as f64;
        let d1 = (&tot1 - &block_sum1[b]) / (rest * tau) - &drift;
        let d2 = (&tot2 - &block_sum2[b]) / (2.0 * rest * tau) - &diffusion;
        var1 += d1.component_mul(&d1);
        var2 += d2.component_mul(&d2);
    }
    let scale = (bf - 1.0) / bf;
    JumpMoments {
        samples: n,
        drift,
        drift_stderr: (var1 * scale).map(f64::sqrt),
        diffusion,
        diffusion_stderr: (var2 * scale).map(f64::sqrt),
    }
}
