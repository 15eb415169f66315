use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use shk_core::coarse::{compute_s1, compute_s2, kl_decompose, latin_hypercube, BackgroundFlow, KlOptions, TimeField};
use shk_core::langevin::{stratonovich_step, Scheme};
use shk_core::lorentz::{lorentz_tensor, IsotropicCovariance, Lorentz, LorentzParams};
use shk_core::models::{karney_mean_s2, kinetic_energy, pulse_kernel, pulse_model, KarneyParams, PulseParams, Window};
use shk_core::phase::{
    free_streaming_jacobian, hamiltonian_vector_field, map_jacobian, poisson_bracket, symplectic_matrix, PhasePoint,
    ScalarField,
};
use shk_core::poly::Polynomial;
use shk_core::quad::QuadratureSpec;

fn point(dim: usize, seed: u64) -> PhasePoint {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: Vec<f64> = (0..2 * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    PhasePoint::from_coords(c).unwrap()
}

fn cubic(dim: usize, seed: u64, name: &str) -> (Polynomial, ScalarField) {
    let p = Polynomial::random(dim, 3, &mut ChaCha8Rng::seed_from_u64(seed));
    let f = p.field(name);
    (p, f)
}


proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn bracket_antisymmetry_and_leibniz(dim in 1usize..=3, seed in any::<u64>()) {
        let (pf, f) = cubic(dim, seed, "f");
        let (pg, g) = cubic(dim, seed ^ 1, "g");
        let (_, h) = cubic(dim, seed ^ 2, "h");
        let z = point(dim, seed ^ 3);
        let fg = poisson_bracket(&f, &g, &z).unwrap();
        let gf = poisson_bracket(&g, &f, &z).unwrap();
        prop_assert!((fg + gf).abs() <= 1e-12 * fg.abs().max(1.0));
        // Exact gradient of the product against the field-level product.
        let exact = pf.product(&pg).field("fg");
        for prod in [exact, f.product(&g)] {
            let lhs = poisson_bracket(&prod, &h, &z).unwrap();
            let rhs = f.value(&z) * poisson_bracket(&g, &h, &z).unwrap()
                + g.value(&z) * poisson_bracket(&f, &h, &z).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(1.0), "{} vs {}", lhs, rhs);
        }
    }

    #[test]
    fn bracket_jacobi_identity(dim in 1usize..=3, seed in any::<u64>()) {
        let (pf, f) = cubic(dim, seed, "f");
        let (pg, g) = cubic(dim, seed ^ 1, "g");
        let (ph, h) = cubic(dim, seed ^ 2, "h");
        let z = point(dim, seed ^ 3);
        let cyc = poisson_bracket(&f, &pg.bracket(&ph).field("{g,h}"), &z).unwrap()
            + poisson_bracket(&g, &ph.bracket(&pf).field("{h,f}"), &z).unwrap()
            + poisson_bracket(&h, &pf.bracket(&pg).field("{f,g}"), &z).unwrap();
        prop_assert!(cyc.abs() < 1e-8, "{:e}", cyc);
    }

    #[test]
    fn hamiltonian_vector_field_is_linear(dim in 1usize..=3, seed in any::<u64>(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let (_, f) = cubic(dim, seed, "f");
        let (_, g) = cubic(dim, seed ^ 1, "g");
        let z = point(dim, seed ^ 2);
        let lhs = hamiltonian_vector_field(&f.scaled(a).plus(&g.scaled(b)), &z).unwrap();
        let xf = hamiltonian_vector_field(&f, &z).unwrap();
        let xg = hamiltonian_vector_field(&g, &z).unwrap();
        for i in 0..2 * dim {
            prop_assert!((lhs[i] - (a * xf[i] + b * xg[i])).abs() < 1e-12 * (1.0 + lhs[i].abs()));
        }
    }

    #[test]
    fn free_streaming_is_symplectic(n in 1usize..=4, t in -50.0..50.0f64) {
        let j = free_streaming_jacobian(n, t);
        let omega = symplectic_matrix(n);
        prop_assert_eq!(j.transpose() * &omega * &j, omega);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kl_modes_are_orthonormal_and_diffusion_is_psd(
        phi0 in 0.2..2.0f64,
        qm in -2.0..2.0f64,
        tau in 0.5..4.0f64,
        uniform in any::<bool>(),
        seed in 0u64..1000,
    ) {
        prop_assume!(qm.abs() > 0.1);
        let p = PulseParams { phi0, qm, tau, window: if uniform { Window::Uniform } else { Window::Impulse } };
        let grid = latin_hypercube(&[-1.0; 6], &[1.0; 6], 10, seed);
        let basis = kl_decompose(&pulse_kernel(&p), &grid, &KlOptions::default()).unwrap();
        prop_assert_eq!(basis.rank(), 3);
        let gram = basis.rkhs_gram().unwrap();
        prop_assert!((gram - DMatrix::<f64>::identity(3, 3)).amax() < 1e-6);
        for z in &grid {
            let mut d = DMatrix::<f64>::zeros(6, 6);
            for h in &basis.modes {
                let x = nalgebra::DVector::from_vec(hamiltonian_vector_field(&h.scaled(1.0 / tau.sqrt()), z).unwrap());
                d += 0.5 * &x * x.transpose();
            }
            prop_assert!((&d - d.transpose()).amax() < 1e-12);
            let scale = d.trace().max(1e-300);
            prop_assert!(SymmetricEigen::new(d).eigenvalues.min() > -1e-10 * scale);
        }
    }

    #[test]
    fn pulse_drift_is_free_streaming(seed in any::<u64>(), tau in 0.1..5.0f64) {
        let p = PulseParams { tau, ..Default::default() };
        let model = pulse_model(&p).unwrap();
        let z = point(3, seed);
        prop_assert!(model.drift().is_hamiltonian());
        let x = model.drift().eval(&z).unwrap();
        let free = hamiltonian_vector_field(&kinetic_energy(3), &z).unwrap();
        prop_assert_eq!(x, free);
    }

    #[test]
    fn kick_functionals_self_converge(seed in any::<u64>(), tau in 0.2..3.0f64, w in 0.1..3.0f64) {
        let (p, _) = cubic(1, seed, "p");
        let h = TimeField::smooth("h", 1, move |t, z| (w * t).cos() * p.value(z.coords()));
        let z = point(1, seed ^ 5);
        let q = QuadratureSpec::default();
        let flow = BackgroundFlow::FreeStreaming;
        let s1a = compute_s1(&h, tau, &z, &q, &flow).unwrap();
        let s1b = compute_s1(&h, tau, &z, &q.refined(2), &flow).unwrap();
        prop_assert!((s1a - s1b).abs() < 1e-8, "{:e}", s1a - s1b);
        let s2a = compute_s2(&h, tau, &z, &q, &flow).unwrap();
        let s2b = compute_s2(&h, tau, &z, &q.refined(2), &flow).unwrap();
        prop_assert!((s2a - s2b).abs() < 1e-8, "{:e}", s2a - s2b);
    }

    #[test]
    fn midpoint_step_is_symplectic_for_linear_fields(seed in any::<u64>(), dw in -0.2..0.2f64, dt in 0.01..0.1f64) {
        use shk_core::langevin::LangevinModel;
        use shk_core::phase::Generator;
        let quad = Polynomial::random(1, 2, &mut ChaCha8Rng::seed_from_u64(seed));
        let noise = Polynomial::random(1, 2, &mut ChaCha8Rng::seed_from_u64(seed ^ 9));
        let model = LangevinModel::new(
            "quadratic",
            Generator::Hamiltonian(quad.field("H0")),
            vec![Generator::Hamiltonian(noise.field("H1"))],
        ).unwrap();
        let z = point(1, seed ^ 4);
        let step = |p: &PhasePoint| stratonovich_step(&model, p, dt, &[dw], Scheme::ImplicitMidpoint)
            .map_err(|e| shk_core::phase::PhaseError::NonFinite(e.to_string()));
        let j = map_jacobian(step, &z, 1e-5).unwrap();
        let omega = symplectic_matrix(1);
        prop_assert!((j.transpose() * &omega * &j - omega).amax() < 1e-9);
    }

    #[test]
    fn karney_series_converges_in_the_cutoff(delta in 0.05..0.45f64, sign in any::<bool>(), i in 0.5..20.0f64) {
        let nu = 3.0 + if sign { delta } else { -delta };
        let p = KarneyParams { nu, cutoff: 40, ..Default::default() };
        let q = KarneyParams { cutoff: 80, ..p.clone() };
        let (a, da) = karney_mean_s2(&p, i);
        let (b, db) = karney_mean_s2(&q, i);
        prop_assert!((a - b).abs() < 1e-8 && (da - db).abs() < 1e-8, "{:e} {:e}", a - b, da - db);
    }
}

fn table(lambda: f64) -> Arc<IsotropicCovariance> {
    static TABLES: OnceLock<Mutex<HashMap<u64, Arc<IsotropicCovariance>>>> = OnceLock::new();
    let tables = TABLES.get_or_init(Default::default);
    let mut map = tables.lock().unwrap();
    map.entry(lambda.to_bits())
        .or_insert_with(|| {
            let p = LorentzParams { lambda, ..Default::default() };
            Arc::new(IsotropicCovariance::tabulate(&p.potential().unwrap()).unwrap())
        })
        .clone()
}

fn lorentz(lambda: f64, tau: f64) -> Lorentz {
    let p = LorentzParams { lambda, tau, ..Default::default() };
    Lorentz::with_covariance(p, table(lambda)).unwrap()
}

fn velocity() -> impl Strategy<Value = Vector3<f64>> {
    (0.3..3.0f64, -1.0..1.0f64, 0.0..std::f64::consts::TAU)
        .prop_map(|(s, c, phi)| {
            let r = (1.0 - c * c).sqrt();
            Vector3::new(s * r * phi.cos(), s * r * phi.sin(), s * c)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hamiltonian_diffusion_is_psd(v in velocity(), tau in 1.0..30.0f64, k in 0usize..3) {
        let lambda = [20.0, 100.0, 1000.0][k];
        let d = lorentz(lambda, tau).diffusion_tensor_hl(&v).unwrap();
        let scale = d.trace();
        prop_assert!(SymmetricEigen::new(d).eigenvalues.min() > -1e-10 * scale);
    }

    #[test]
    fn energy_rates(v in velocity(), k in 0usize..3) {
        let lambda = [20.0, 100.0, 1000.0][k];
        let params = LorentzParams { lambda, ..Default::default() };
        let dl = lorentz_tensor(&v, &params).unwrap();
        let dh0 = nalgebra::DVector::from_iterator(6, [0.0, 0.0, 0.0, v.x, v.y, v.z]);
        prop_assert!((&dl * &dh0).amax() < 1e-14 * dl.amax().max(1.0));
        // |v|τ above twice the support radius.
        let tau = (2.5 * (1.0 + params.delta_reg) / v.norm()).max(2.0);
        let m = lorentz(lambda, tau);
        let dhl = m.diffusion_tensor_hl(&v).unwrap();
        prop_assert!((&dhl * &dh0).amax() > 0.0);
        let num = m.energy_rate_numeric(&v).unwrap();
        let asym = m.energy_rate_asymptotic(&v).unwrap();
        prop_assert!((num - asym).abs() < 0.05 * asym, "{} vs {}", num, asym);
    }

    #[test]
    fn covariance_vanishes_outside_support(d in 0.0..10.0f64, k in 0usize..3) {
        let lambda = [20.0, 100.0, 1000.0][k];
        let c = table(lambda);
        let r = 2.0 * c.support() + d;
        let v = c.components(r);
        prop_assert_eq!((v.c, v.perp, v.par), (0.0, 0.0, 0.0));
        let m = shk_core::lorentz::field_covariance(&Vector3::new(r, 0.0, 0.0), &c);
        prop_assert_eq!(m.amax(), 0.0);
    }
}
