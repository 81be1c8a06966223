use cpforce_core::atomdyn::*;
use cpforce_core::greenfunc::*;
use cpforce_core::material::*;
use cpforce_core::nalgebra::{DMatrix, Vector3};
use cpforce_core::num_complex::Complex64;
use cpforce_core::quad::*;
use cpforce_core::thermalenv::*;
use proptest::prelude::*;

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn lossy(eps_inf: f64, plasma: f64, res: f64, damp: f64) -> MaterialModel {
    MaterialModel::dielectric(eps_inf, vec![Oscillator::lorentz(plasma, res, damp)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn passive_media_reflect_at_most_unity(
        eps_inf in 1.0..5.0f64,
        plasma in 1e14..2e16f64,
        res in 0.0..3e15f64,
        damp in 1e12..1e15f64,
        omega in 1e13..5e15f64,
        frac in 0.0..0.999f64,
    ) {
        let st = LayerStack::half_space(lossy(eps_inf, plasma, res, damp)).unwrap();
        let f = fresnel(&st, c(omega), frac * omega / cpforce_core::constants::C).unwrap();
        prop_assert!(f.r_s.norm() <= 1.0 + 1e-12);
        prop_assert!(f.r_p.norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn slab_of_substrate_material_is_invisible(
        plasma in 1e14..2e16f64,
        damp in 1e12..1e15f64,
        thickness in 1e-9..1e-6f64,
        omega in 1e13..5e15f64,
        kpar in 0.0..5e7f64,
    ) {
        let m = lossy(2.0, plasma, 1e15, damp);
        let half = LayerStack::half_space(m.clone()).unwrap();
        let slab = LayerStack::new(vec![
            Layer { material: m.clone(), thickness: Some(thickness) },
            Layer { material: m, thickness: None },
        ]).unwrap();
        let (a, b) = (fresnel(&half, c(omega), kpar).unwrap(), fresnel(&slab, c(omega), kpar).unwrap());
        prop_assert!((a.r_s - b.r_s).norm() <= 1e-10 * (1.0 + a.r_s.norm()));
        prop_assert!((a.r_p - b.r_p).norm() <= 1e-10 * (1.0 + a.r_p.norm()));
    }

    #[test]
    fn rate_generator_conserves_probability(
        rates in proptest::collection::vec(0.0..1e6f64, 9),
        t in 0.0..1e-5f64,
    ) {
        let gamma = DMatrix::from_fn(3, 3, |i, k| if i == k { 0.0 } else { rates[3 * i + k] });
        let gamma_total: Vec<f64> = (0..3).map(|i| gamma.row(i).sum()).collect();
        let r = RatesAndShifts {
            gamma,
            gamma_total,
            delta_omega: vec![0.0; 3],
            omega_tilde: DMatrix::zeros(3, 3),
            big_omega: DMatrix::zeros(3, 3),
            fixed_point_fallback: false,
            warnings: vec![],
        };
        let p = evolve_populations(&r, &Populations::pure(3, 2), t).unwrap();
        prop_assert!((p.diag.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.diag.iter().all(|x| *x >= -1e-14));
    }

    #[test]
    fn photon_number_satisfies_kms_relation(t in 1.0..5000.0f64, omega in 1e11..1e15f64) {
        use cpforce_core::constants::{HBAR, KB};
        let n = photon_number(t, omega).unwrap();
        let ratio = n / (n + 1.0);
        let x = HBAR * omega / (KB * t);
        if x < 600.0 {
            prop_assert!((ratio / (-x).exp() - 1.0).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn kernels_split_into_psd_parts(
        z in 1e-8..1e-6f64,
        omega in 5e13..3e15f64,
        damp in 5e13..5e14f64,
    ) {
        let st = LayerStack::new(vec![
            Layer { material: lossy(1.5, 1e15, 8e14, damp), thickness: Some(3e-8) },
            Layer { material: lossy(2.5, 2e15, 2e15, damp), thickness: None },
        ]).unwrap();
        let set = kernel_set(&st, z, omega, &QuadOptions::with_rel_tol(1e-9)).unwrap();
        prop_assert!(set.psd_violation.is_none());
        let sum = set.bodies.iter().fold(set.environment, |acc, b| acc.add(b));
        prop_assert!((sum.xx - set.total.xx).abs() <= 1e-12 * set.total.xx.abs());
        for b in &set.bodies {
            prop_assert!(b.xx >= 0.0 && b.zz >= 0.0);
        }
    }

    #[test]
    fn uniform_temperature_gives_detailed_balance(
        z in 2e-8..5e-7f64,
        omega in 1e13..1e14f64,
        t in 50.0..1000.0f64,
    ) {
        use cpforce_core::constants::{HBAR, KB};
        let d = Complex64::new(3e-29, 1e-29);
        let atom = AtomSpec::two_level(omega, Vector3::new(d, c(0.0), d), z).unwrap();
        let st = LayerStack::half_space(lossy(1.5, 2e14, 6e13, 2e13)).unwrap();
        let r = rates_and_shifts(&atom, &st, &TemperatureField::uniform(t, &st).unwrap(), &Numerics::default()).unwrap();
        let boltz = (-HBAR * r.omega_tilde[(1, 0)] / (KB * t)).exp();
        prop_assert!((r.gamma[(0, 1)] / r.gamma[(1, 0)] / boltz - 1.0).abs() <= 1e-10);
    }
}

#[test]
fn hotter_body_raises_absorption_rate() {
    let atom = AtomSpec::two_level(4e13, Vector3::new(c(3e-29), c(3e-29), c(3e-29)), 5e-8).unwrap();
    let st = LayerStack::half_space(lossy(1.5, 2e14, 5e13, 2e13)).unwrap();
    let num = Numerics::default();
    let up = |t_body: f64| {
        let temps = TemperatureField::new(300.0, vec![t_body]).unwrap();
        unshifted_rates(&atom, &st, &temps, &num).unwrap().gamma[(0, 1)]
    };
    let (cold, warm, hot) = (up(100.0), up(300.0), up(900.0));
    assert!(cold < warm && warm < hot, "{cold} {warm} {hot}");
}

#[test]
fn static_limit_is_continuous() {
    let st = LayerStack::half_space(MaterialModel::dielectric(1.0, vec![Oscillator::drude(1.4e16, 1e14)])).unwrap();
    let o = QuadOptions::with_rel_tol(1e-11);
    let at0 = xi2_scattering_green_imag(&st, 1e-7, 0.0, &o).unwrap();
    let near = xi2_scattering_green_imag(&st, 1e-7, 1e9, &o).unwrap();
    assert!(at0.value.xx.re.is_finite());
    assert!((at0.value.xx.re / near.value.xx.re - 1.0).abs() < 1e-6);
    assert!((at0.grad_z.zz.re / near.grad_z.zz.re - 1.0).abs() < 1e-6);
}
