//! Polynomials on phase space with exact gradients.

use rand::Rng;

use crate::phase::{PhasePoint, ScalarField};

/// `Σ c · Π z_i^{e_i}` over the phase-space coordinates `(x, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<(Vec<u32>, f64)>,
}

impl Polynomial {
    /// Exponent vectors must have length `2·dim`.
    pub fn new(dim: usize, terms: Vec<(Vec<u32>, f64)>) -> Self {
        assert!(terms.iter().all(|(e, _)| e.len() == 2 * dim));
        Self { dim, terms }
    }

    /// Every monomial of total degree ≤ `degree` with a coefficient uniform in `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(dim: usize, degree: u32, rng: &mut R) -> Self {
        let mut exps = Vec::new();
        monomials(2 * dim, degree, &mut vec![0; 2 * dim], 0, &mut exps);
        let terms = exps.into_iter().map(|e| (e, rng.gen_range(-1.0..=1.0))).collect();
        Self { dim, terms }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[(Vec<u32>, f64)] {
        &self.terms
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(z).map(|(&k, &x)| x.powi(k as i32)).product::<f64>())
            .sum()
    }

    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; z.len()];
        for (e, c) in &self.terms {
            for (i, gi) in g.iter_mut().enumerate() {
                if e[i] == 0 {
                    continue;
                }
                let mut t = c * e[i] as f64;
                for (j, (&k, &x)) in e.iter().zip(z).enumerate() {
                    let k = if j == i { k - 1 } else { k };
                    t *= x.powi(k as i32);
                }
                *gi += t;
            }
        }
        g
    }

    /// `∂/∂z_i`.
    pub fn derivative(&self, i: usize) -> Self {
        let terms = self
            .terms
            .iter()
            .filter(|(e, _)| e[i] > 0)
            .map(|(e, c)| {
                let mut e = e.clone();
                let k = e[i];
                e[i] -= 1;
                (e, c * k as f64)
            })
            .collect();
        Self { dim: self.dim, terms }
    }

    pub fn product(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                terms.push((a.iter().zip(b).map(|(x, y)| x + y).collect(), ca * cb));
            }
        }
        Self { dim: self.dim, terms }.collected()
    }

    pub fn plus(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let terms = self.terms.iter().chain(&other.terms).cloned().collect();
        Self { dim: self.dim, terms }.collected()
    }

    /// Canonical bracket `Σ ∂_x f ∂_v g − ∂_v f ∂_x g`, computed symbolically.
    pub fn bracket(&self, other: &Self) -> Self {
        let n = self.dim;
        let mut out = Self { dim: n, terms: Vec::new() };
        for i in 0..n {
            let a = self.derivative(i).product(&other.derivative(n + i));
            let mut b = self.derivative(n + i).product(&other.derivative(i));
            b.terms.iter_mut().for_each(|(_, c)| *c = -*c);
            out = out.plus(&a).plus(&b);
        }
        out
    }

    fn collected(mut self) -> Self {
        self.terms.sort_by(|a, b| a.0.cmp(&b.0));
        let mut terms: Vec<(Vec<u32>, f64)> = Vec::with_capacity(self.terms.len());
        for (e, c) in self.terms {
            match terms.last_mut() {
                Some((le, lc)) if *le == e => *lc += c,
                _ => terms.push((e, c)),
            }
        }
        self.terms = terms;
        self
    }

    /// Scalar field with the exact gradient attached.
    pub fn field(&self, name: impl Into<String>) -> ScalarField {
        let (pv, pg) = (self.clone(), self.clone());
        ScalarField::new(name, self.dim, move |z: &PhasePoint| pv.value(z.coords()))
            .with_gradient(move |z| pg.gradient(z.coords()))
    }
}

fn monomials(vars: usize, left: u32, cur: &mut Vec<u32>, i: usize, out: &mut Vec<Vec<u32>>) {
    if i == vars {
        out.push(cur.clone());
        return;
    }
    for k in 0..=left {
        cur[i] = k;
        monomials(vars, left - k, cur, i + 1, out);
    }
    cur[i] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn monomial_count_and_gradient() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = Polynomial::random(2, 3, &mut rng);
        // C(4 + 3, 3) monomials in four variables.
        assert_eq!(p.terms().len(), 35);
        let z = [0.3, -0.7, 1.1, 0.2];
        let g = p.gradient(&z);
        for i in 0..4 {
            let h = 1e-6;
            let mut a = z;
            let mut b = z;
            a[i] += h;
            b[i] -= h;
            assert!((g[i] - (p.value(&a) - p.value(&b)) / (2.0 * h)).abs() < 1e-8);
        }
    }

    #[test]
    fn explicit_polynomial() {
        // x² v − 3 on one degree of freedom.
        let p = Polynomial::new(1, vec![(vec![2, 1], 1.0), (vec![0, 0], -3.0)]);
        assert_eq!(p.value(&[2.0, 5.0]), 17.0);
        assert_eq!(p.gradient(&[2.0, 5.0]), vec![20.0, 4.0]);
        // {x² v − 3, x v} = 2xv·x − x²·v.
        let q = Polynomial::new(1, vec![(vec![1, 1], 1.0)]);
        let b = p.bracket(&q);
        assert_eq!(b.value(&[2.0, 5.0]), 20.0);
    }
}
