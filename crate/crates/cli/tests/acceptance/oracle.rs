//! Brute-force absorption kernel: depth quadrature of
//! sum_lambda G_lambda G_lambda^*T over the body, with the in-plane volume
//! integral done in Weyl components (Plancherel) on an azimuthal grid.

use super::*;

/// Magnetodielectric absorber with both loss channels active.
pub fn absorber() -> LayerStack {
    LayerStack::half_space(MaterialModel::DrudeLorentz {
        eps_inf: 2.0,
        electric: vec![Oscillator::lorentz(1.5e15, 1e15, 2e14)],
        magnetic: vec![Oscillator::lorentz(4e14, 1.2e15, 3e14)],
    })
    .unwrap()
}

const AZIMUTHS: usize = 8;

fn weyl(stack: &LayerStack, z_a: f64, z_s: f64, kx: f64, ky: f64, omega: f64) -> Matrix3<Complex64> {
    transmission_green(stack, z_a, z_s, kx, ky, omega).unwrap()
}

/// Curl over the first (field-point) index of the Weyl component.
fn curl(stack: &LayerStack, z_a: f64, z_s: f64, kx: f64, ky: f64, omega: f64, h: f64) -> Matrix3<Complex64> {
    let m = weyl(stack, z_a, z_s, kx, ky, omega);
    let f = |dz: f64| weyl(stack, z_a, z_s + dz, kx, ky, omega);
    let dm = ((f(-2.0 * h) - f(2.0 * h)) + (f(h) - f(-h)) * c(8.0)) / c(12.0 * h);
    let i = Complex64::new(0.0, 1.0);
    let (dx, dy) = (i * kx, i * ky);
    let mut out = Matrix3::zeros();
    for j in 0..3 {
        out[(0, j)] = dy * m[(2, j)] - dm[(1, j)];
        out[(1, j)] = dm[(0, j)] - dx * m[(2, j)];
        out[(2, j)] = dx * m[(1, j)] - dy * m[(0, j)];
    }
    out
}

/// (K_xx, K_zz) of the bottom half-space by direct integration.
pub fn brute_force_kernel(stack: &LayerStack, z_a: f64, omega: f64, rel_tol: f64) -> (f64, f64) {
    let resp = stack.layers()[0].material.response_real(omega);
    let (eps, mu) = (resp.eps, resp.mu);
    let k0 = omega / C;
    let ae = (omega / C).powi(4) * HBAR * eps.im / (PI * EPS0);
    let am = (omega / C).powi(2) * HBAR * mu.im / (PI * EPS0 * mu.norm_sqr());
    let opts = QuadOptions::with_rel_tol(rel_tol);
    let n_med = (eps * mu).sqrt();
    let kmax = 40.0 / z_a + 4.0 * k0 * n_med.norm();
    let kbps = [k0, k0 * n_med.re, 0.5 / z_a, 2.0 / z_a, 8.0 / z_a];

    let kint = |k: f64| -> DVec {
        let kz1 = kz_branch(eps * mu * k0 * k0 - c(k * k));
        let decay = kz1.im.max(1e-3 * k0);
        let depth = 30.0 / decay;
        let h_max = 1e-4 / kz1.norm().max(k0);
        let zint = |u: f64| -> DVec {
            let z_s = -u;
            let h = h_max.min(0.2 * u);
            let mut acc = Matrix3::<Complex64>::zeros();
            for a in 0..AZIMUTHS {
                let phi = 2.0 * PI * a as f64 / AZIMUTHS as f64;
                let (kx, ky) = (k * phi.cos(), k * phi.sin());
                let m = weyl(stack, z_a, z_s, kx, ky, omega).transpose();
                let cu = curl(stack, z_a, z_s, kx, ky, omega, h).transpose();
                acc += m * m.adjoint() * c(ae) + cu * cu.adjoint() * c(am);
            }
            let w = 2.0 * PI / AZIMUTHS as f64 * k / (4.0 * PI * PI);
            DVec(vec![acc[(0, 0)].re * w, acc[(2, 2)].re * w])
        };
        let bps = [1.0 / decay, 4.0 / decay];
        integrate_interval(zint, 0.0, depth, &bps, &opts).value
    };
    let r = integrate_interval(kint, 0.0, kmax, &kbps, &opts);
    (r.value.0[0], r.value.0[1])
}

pub fn criterion_3() -> Outcome {
    let st = absorber();
    let freqs = [6e14, 9e14, 1.1e15, 1.3e15, 2e15];
    let heights = [2e-8, 6e-8, 2e-7];
    let cases: Vec<(f64, f64)> = freqs.iter().flat_map(|w| heights.iter().map(move |z| (*w, *z))).collect();
    let results: Vec<(f64, f64, bool)> = std::thread::scope(|s| {
        let handles: Vec<_> = cases
            .iter()
            .map(|&(w, z)| {
                let st = &st;
                s.spawn(move || {
                    let opts = QuadOptions::with_rel_tol(1e-9);
                    let set = kernel_set(st, z, w, &opts).unwrap();
                    let body = set.bodies[0];
                    let (bx, bz) = brute_force_kernel(st, z, w, 1e-5);
                    let (min_eig, trace) = set.environment.min_eigen_and_trace();
                    let psd = set.psd_violation.is_none() && min_eig >= -PSD_TOLERANCE * trace.abs();
                    (rel(body.xx, bx), rel(body.zz, bz), psd)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let worst = results.iter().map(|r| r.0.max(r.1)).fold(0.0, f64::max);
    let psd = results.iter().all(|r| r.2);
    check(
        worst <= 2e-2 && psd,
        format!("{} cases, max rel. deviation {worst:.2e} (tol 2e-2), K_env PSD {psd}", cases.len()),
    )
}
