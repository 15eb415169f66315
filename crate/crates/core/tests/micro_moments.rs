use nalgebra::Vector3;
use shk_core::lorentz::{Lorentz, LorentzParams};
use shk_core::micro::{empirical_jump_moments, z_scores_vec, JumpOptions};

fn params() -> LorentzParams {
    LorentzParams {
        lambda: 10.0,
        tau: 5.0,
        ..Default::default()
    }
}

#[test]
fn mean_jump_matches_model_drift() {
    let p = params();
    let v = Vector3::new(0.6, 0.8, 0.0);
    let m = empirical_jump_moments(
        &p,
        &v,
        &JumpOptions {
            intervals: 600,
            seed: 11,
            ..Default::default()
        },
    )
    .unwrap();
    let model = Lorentz::new(p).unwrap().jump_drift(&v).unwrap();
    let z = z_scores_vec(&m.moments.drift, &m.moments.drift_stderr, &model);
    for (i, zi) in z.iter().enumerate() {
        assert!(zi.abs() < 3.5, "component {i}: z = {zi:.2}, all {z:.2?}");
    }
    assert!(m.max_energy_drift < 1e-4);
}

#[test]
fn velocity_diffusion_is_box_size_invariant() {
    let p = params();
    let v = Vector3::new(1.0, 0.0, 0.0);
    let run = |scale: f64, seed: u64| {
        empirical_jump_moments(
            &p,
            &v,
            &JumpOptions {
                intervals: 400,
                seed,
                box_scale: scale,
                ..Default::default()
            },
        )
        .unwrap()
    };
    let a = run(1.0, 1);
    let b = run(2.0, 2);
    assert!(b.sides[0] > 1.99 * a.sides[0]);
    for i in 3..6 {
        let d = a.moments.diffusion[(i, i)] - b.moments.diffusion[(i, i)];
        let se = a.moments.diffusion_stderr[(i, i)].hypot(b.moments.diffusion_stderr[(i, i)]);
        assert!(d.abs() < 3.5 * se, "axis {i}: {d:e} vs {se:e}");
    }
}
