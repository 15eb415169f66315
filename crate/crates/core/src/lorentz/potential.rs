//! Regularised single-ion potential `ḡ_Λ(r̄)` in Debye units.

use super::LorentzError;

/// Radius beyond which an untruncated profile is treated as zero.
const UNTRUNCATED_RADIUS: f64 = 40.0;

/// Shape of the middle branch on `(1/Λ, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    /// `1/r̄`.
    Coulomb,
    /// `e^{-r̄}/r̄`.
    #[default]
    Yukawa,
}

impl Profile {
    /// `(f, f', f'')` at r.
    fn eval(self, r: f64) -> (f64, f64, f64) {
        match self {
            Profile::Coulomb => (1.0 / r, -1.0 / (r * r), 2.0 / (r * r * r)),
            Profile::Yukawa => {
                let e = (-r).exp();
                let (r2, r3) = (r * r, r * r * r);
                (e / r, -e * (1.0 / r + 1.0 / r2), e * (1.0 / r + 2.0 / r2 + 2.0 / r3))
            }
        }
    }
}

/// `ḡ_Λ`: a quintic core `c0 + c4 r⁴ + c5 r⁵` below `1/Λ`, the profile on
/// `(1/Λ, 1)`, and a quintic Hermite blend to zero on `[1, 1 + δ]`.
/// Both joins match the value and the first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Potential {
    pub lambda: f64,
    pub delta_reg: f64,
    pub profile: Profile,
    /// When false the profile continues past 1 (only for Yukawa).
    pub truncated: bool,
    core: [f64; 3],
    outer: (f64, f64, f64),
}

impl Potential {
    pub fn new(lambda: f64, delta_reg: f64, profile: Profile, truncated: bool) -> Result<Self, LorentzError> {
        if !(lambda > 1.0) {
            return Err(LorentzError::InvalidParams(format!("Lambda must exceed 1, got {lambda}")));
        }
        if !(delta_reg > 0.0) {
            return Err(LorentzError::InvalidParams(format!(
                "delta_reg must be positive, got {delta_reg}"
            )));
        }
        if !truncated && profile == Profile::Coulomb {
            return Err(LorentzError::InvalidParams(
                "an untruncated Coulomb profile has no finite covariance".into(),
            ));
        }
        let a = 1.0 / lambda;
        let (f, f1, f2) = profile.eval(a);
        let p = a * f1 - a * a * f2 / 4.0;
        let q = (a * f1 - 4.0 * p) / 5.0;
        let core = [f - p - q, p / a.powi(4), q / a.powi(5)];
        Ok(Self {
            lambda,
            delta_reg,
            profile,
            truncated,
            core,
            outer: profile.eval(1.0),
        })
    }

    pub fn coulomb(lambda: f64, delta_reg: f64) -> Result<Self, LorentzError> {
        Self::new(lambda, delta_reg, Profile::Coulomb, true)
    }

    /// Support radius `λ_{D+}`.
    pub fn support(&self) -> f64 {
        if self.truncated {
            1.0 + self.delta_reg
        } else {
            UNTRUNCATED_RADIUS
        }
    }

    /// Radii where the definition changes branch.
    pub fn joins(&self) -> Vec<f64> {
        if self.truncated {
            vec![1.0 / self.lambda, 1.0, self.support()]
        } else {
            vec![1.0 / self.lambda, self.support()]
        }
    }

    /// `(ḡ, ḡ', ḡ'')` at `r ≥ 0`.
    pub fn eval(&self, r: f64) -> (f64, f64, f64) {
        let a = 1.0 / self.lambda;
        let rs = self.support();
        if r >= rs {
            return (0.0, 0.0, 0.0);
        }
        if r < a {
            let [c0, c4, c5] = self.core;
            let (r3, r4) = (r * r * r, r * r * r * r);
            return (
                c0 + c4 * r4 + c5 * r4 * r,
                4.0 * c4 * r3 + 5.0 * c5 * r4,
                12.0 * c4 * r * r + 20.0 * c5 * r3,
            );
        }
        if r <= 1.0 || !self.truncated {
            return self.profile.eval(r);
        }
        let d = self.delta_reg;
        let s = (r - 1.0) / d;
        let (s2, s3, s4, s5) = (s * s, s * s * s, s.powi(4), s.powi(5));
        let h0 = [1.0 - 10.0 * s3 + 15.0 * s4 - 6.0 * s5, -30.0 * s2 + 60.0 * s3 - 30.0 * s4, -60.0 * s + 180.0 * s2 - 120.0 * s3];
        let h1 = [s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5, 1.0 - 18.0 * s2 + 32.0 * s3 - 15.0 * s4, -36.0 * s + 96.0 * s2 - 60.0 * s3];
        let h2 = [
            0.5 * (s2 - 3.0 * s3 + 3.0 * s4 - s5),
            0.5 * (2.0 * s - 9.0 * s2 + 12.0 * s3 - 5.0 * s4),
            0.5 * (2.0 - 18.0 * s + 36.0 * s2 - 20.0 * s3),
        ];
        let (f, f1, f2) = self.outer;
        let comb = |k: usize| f * h0[k] + d * f1 * h1[k] + d * d * f2 * h2[k];
        (comb(0), comb(1) / d, comb(2) / (d * d))
    }

    pub fn value(&self, r: f64) -> f64 {
        self.eval(r).0
    }

    pub fn deriv(&self, r: f64) -> f64 {
        self.eval(r).1
    }

    /// `∫ ḡ d³r = 4π ∫ r² ḡ dr`.
    pub fn volume_integral(&self) -> Result<f64, LorentzError> {
        let v = crate::quad::adaptive(0.0, self.support(), &self.joins(), 1e-12, 0.0, |r| {
            4.0 * std::f64::consts::PI * r * r * self.value(r)
        })?;
        Ok(v)
    }
}

/// `ḡ_Λ(r̄)` with the Coulomb middle branch.
pub fn regularized_potential(rbar: f64, lambda: f64, delta_reg: f64) -> Result<f64, LorentzError> {
    if !(rbar >= 0.0) {
        return Err(LorentzError::InvalidParams(format!("rbar must be non-negative, got {rbar}")));
    }
    Ok(Potential::coulomb(lambda, delta_reg)?.value(rbar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn middle_branch_is_exact() {
        assert_eq!(regularized_potential(0.5, 100.0, 0.1).unwrap(), 2.0);
        let y = Potential::new(100.0, 0.1, Profile::Yukawa, true).unwrap();
        assert!((y.value(0.5) - 2.0 * (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn compact_support_and_flat_core() {
        assert_eq!(regularized_potential(1.11, 100.0, 0.1).unwrap(), 0.0);
        let p = Potential::coulomb(100.0, 0.1).unwrap();
        assert_eq!(p.deriv(0.0), 0.0);
    }

    #[test]
    fn joins_are_second_order_continuous() {
        for profile in [Profile::Coulomb, Profile::Yukawa] {
            let p = Potential::new(50.0, 0.1, profile, true).unwrap();
            for r in [0.02, 1.0] {
                let lo = p.eval(r * (1.0 - 1e-12));
                let hi = p.eval(r * (1.0 + 1e-12));
                assert!((lo.0 - hi.0).abs() < 1e-8 * lo.0.abs().max(1.0));
                assert!((lo.1 - hi.1).abs() < 1e-7 * lo.1.abs().max(1.0));
                assert!((lo.2 - hi.2).abs() < 1e-6 * lo.2.abs().max(1.0), "{profile:?} r={r}");
            }
            let end = p.eval(1.1 * (1.0 - 1e-9));
            assert!(end.0.abs() < 1e-12 && end.1.abs() < 1e-8);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let p = Potential::new(30.0, 0.1, Profile::Yukawa, true).unwrap();
        for r in [0.01, 0.03, 0.4, 1.05] {
            let h = 1e-6 * r;
            let fd = (p.value(r + h) - p.value(r - h)) / (2.0 * h);
            let fd2 = (p.deriv(r + h) - p.deriv(r - h)) / (2.0 * h);
            let (_, d1, d2) = p.eval(r);
            assert!((d1 - fd).abs() < 1e-6 * d1.abs().max(1.0), "r={r}");
            assert!((d2 - fd2).abs() < 1e-5 * d2.abs().max(1.0), "r={r}");
        }
    }

    #[test]
    fn volume_integral_of_the_bare_profiles() {
        // Coulomb: 4π[∫₀^a r²ḡ + (1 − a²)/2 + blend]; the blend and core are small.
        let c = Potential::coulomb(1e4, 1e-3).unwrap().volume_integral().unwrap();
        assert!((c - 2.0 * PI).abs() < 0.01, "{c}");
        let y = Potential::new(1e4, 0.1, Profile::Yukawa, false).unwrap().volume_integral().unwrap();
        assert!((y - 4.0 * PI).abs() < 1e-6, "{y}");
    }

    #[test]
    fn untruncated_coulomb_is_rejected() {
        assert!(Potential::new(10.0, 0.1, Profile::Coulomb, false).is_err());
        assert!(Potential::new(1.0, 0.1, Profile::Coulomb, true).is_err());
    }
}
