//! Casimir-Polder force on the atom: out-of-equilibrium level components,
//! the equilibrium Matsubara form and the Lifshitz long-time limit.
//!
//! Only the z-component survives in planar symmetry. Each level component
//! is split into a nonresonant (imaginary-frequency) part, a resonant part,
//! and thermal parts from the environment and from the bodies.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::atomdyn::{accept, thermal_cutoff, AtomSpec, Numerics, Populations, RatesAndShifts};
use crate::constants::{C, HBAR, KB, MU0};
use crate::error::{Error, Result};
use crate::greenfunc::{scattering_green, xi2_scattering_green_imag, LayerStack};
use crate::quad::{integrate_from, integrate_interval, matsubara_sum, principal_value, DVec, QuadOptions, ResonanceHint};
use crate::thermalenv::{photon_number, thermal_kernel, TemperatureField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForceMode {
    /// Complex Omega_nk with its damping kept, adaptive real-axis integrals.
    FullComplex,
    /// Omega_nk -> omega~_nk, poles as PV + i pi delta.
    Perturbative,
}

/// Force contributions in N.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ForceParts {
    pub nonresonant: f64,
    pub resonant: f64,
    pub thermal_environment: f64,
    pub thermal_body: f64,
}

impl ForceParts {
    pub fn total(&self) -> f64 {
        self.nonresonant + self.resonant + self.thermal_environment + self.thermal_body
    }

    fn add(&self, o: &Self) -> Self {
        Self {
            nonresonant: self.nonresonant + o.nonresonant,
            resonant: self.resonant + o.resonant,
            thermal_environment: self.thermal_environment + o.thermal_environment,
            thermal_body: self.thermal_body + o.thermal_body,
        }
    }

    fn scaled(&self, s: f64) -> Self {
        Self {
            nonresonant: self.nonresonant * s,
            resonant: self.resonant * s,
            thermal_environment: self.thermal_environment * s,
            thermal_body: self.thermal_body * s,
        }
    }
}

/// F_n for one level with per-part error estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceComponent {
    pub level: usize,
    pub parts: ForceParts,
    pub errors: ForceParts,
    pub warnings: Vec<String>,
}

impl ForceComponent {
    pub fn total(&self) -> f64 {
        self.parts.total()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForceResult {
    /// N; x and y vanish by symmetry.
    pub force: Vector3<f64>,
    pub parts: ForceParts,
    pub errors: ForceParts,
    pub components: Vec<ForceComponent>,
}

impl ForceResult {
    pub fn z(&self) -> f64 {
        self.force.z
    }
}

/// `xi^2 d.(1/2) dG^(1)/dz(i xi).d`, finite at xi = 0.
fn xi2_half_grad(stack: &LayerStack, z: f64, xi: f64, w: (f64, f64), num: &Numerics) -> Result<f64> {
    let g = xi2_scattering_green_imag(stack, z, xi, &num.kernel_opts())?;
    Ok(0.5 * g.grad_z.contract(w.0, w.1).re)
}

/// Zero-point part: (2 mu0/pi) Re[pi Theta(Re W) W^2 g1(W) + int xi^2 g1(i xi) W/(xi^2 + W^2)].
fn zero_point(
    stack: &LayerStack,
    z: f64,
    big: Complex64,
    w: (f64, f64),
    num: &Numerics,
    warnings: &mut Vec<String>,
) -> Result<(f64, f64, f64)> {
    if stack.is_vacuum() {
        return Ok((0.0, 0.0, 0.0));
    }
    let mut err = None;
    let scale = big.norm();
    let r = integrate_from(
        |xi: f64| match xi2_half_grad(stack, z, xi, w, num) {
            Ok(v) => v * (big / (xi * xi + big * big)).re,
            Err(e) => {
                err = Some(e);
                0.0
            }
        },
        0.0,
        scale,
        &[scale, C / (2.0 * z)],
        &num.quad,
    );
    if let Some(e) = err {
        return Err(e);
    }
    let abs_error = 2.0 * MU0 / PI * r.abs_error;
    let nonres = 2.0 * MU0 / PI * accept(r, "nonresonant force integral", warnings)?;
    let res = if big.re > 0.0 {
        let g = scattering_green(stack, z, big, &num.kernel_opts())?;
        2.0 * MU0 * (big * big * 0.5 * g.grad_z.contract(w.0, w.1)).re
    } else {
        0.0
    };
    Ok((nonres, res, abs_error))
}

/// Thermal parts (environment, body) and their error:
/// (2/hbar) Re int s(w) 2W/(w^2 - W^2), s = sum_r n_r d.grad1 K_r.d.
fn thermal(
    stack: &LayerStack,
    temps: &TemperatureField,
    z: f64,
    big: Complex64,
    w: (f64, f64),
    mode: ForceMode,
    num: &Numerics,
    warnings: &mut Vec<String>,
) -> Result<(f64, f64, f64)> {
    let cutoff = thermal_cutoff(temps);
    if cutoff == 0.0 {
        return Ok((0.0, 0.0, 0.0));
    }
    let a = big.re.abs();
    let upper = cutoff.max(2.0 * a);
    let mut err = None;
    let mut s_at = |x: f64| -> (Complex64, Complex64) {
        let r = num.kernels(stack, z, x).and_then(|set| thermal_kernel(&set, temps));
        match r {
            Ok(tk) => (tk.environment.contract_grad1(w.0, w.1), tk.bodies.contract_grad1(w.0, w.1)),
            Err(e) => {
                err = Some(e);
                (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0))
            }
        }
    };
    let base = [cutoff / 60.0, cutoff / 10.0];
    // Environment and body parts add up to one force; the environment part
    // can be a near-cancelling remainder well below the body part.
    let opts = QuadOptions { joint: true, ..num.quad };
    let (value, abs_error, delta) = match mode {
        ForceMode::FullComplex => {
            let mut bps = base.to_vec();
            if a > 0.0 {
                bps.extend(ResonanceHint::new(a, big.im.max(0.0))?.breakpoints());
            }
            let r = integrate_interval(
                |x: f64| {
                    let wt = 2.0 * big / (x * x - big * big);
                    let (se, sb) = s_at(x);
                    DVec(vec![(se * wt).re, (sb * wt).re])
                },
                0.0,
                upper,
                &bps,
                &opts,
            );
            let e = r.abs_error;
            (accept(r, "thermal force integral", warnings)?, e, [0.0, 0.0])
        }
        ForceMode::Perturbative => {
            let om = big.re;
            let r = principal_value(
                |x: f64| {
                    let (se, sb) = s_at(x);
                    let f = 2.0 * om / (x + a);
                    DVec(vec![se.re * f, sb.re * f])
                },
                a,
                Some(upper),
                a,
                &base,
                &opts,
            )?;
            let e = r.abs_error;
            let v = accept(r, "thermal force principal value", warnings)?;
            let (se, sb) = s_at(a);
            (v, e, [-PI * se.im, -PI * sb.im])
        }
    };
    if let Some(e) = err {
        return Err(e);
    }
    let f = 2.0 / HBAR;
    Ok((f * (value.0[0] + delta[0]), f * (value.0[1] + delta[1]), f * abs_error))
}

/// F_n for level `n` given rates and shifts of the configuration.
pub fn force_component(
    atom: &AtomSpec,
    stack: &LayerStack,
    temps: &TemperatureField,
    rates: &RatesAndShifts,
    n: usize,
    mode: ForceMode,
    num: &Numerics,
) -> Result<ForceComponent> {
    temps.validate_for(stack)?;
    if n >= atom.len() || rates.len() != atom.len() {
        return Err(Error::InvalidInput(format!("level {n} out of range or rates do not match the atom")));
    }
    let z = atom.z();
    let terms: Vec<Result<(ForceParts, ForceParts, Vec<String>)>> = (0..atom.len())
        .into_par_iter()
        .filter(|k| atom.couples(n, *k))
        .map(|k| {
            let mut warn = Vec::new();
            let w = atom.weights(n, k);
            let big = match mode {
                ForceMode::FullComplex => rates.big_omega[(n, k)],
                ForceMode::Perturbative => Complex64::new(rates.omega_tilde[(n, k)], 0.0),
            };
            let (nonres, res, e_zp) = zero_point(stack, z, big, w, num, &mut warn)?;
            let (te, tb, e_th) = thermal(stack, temps, z, big, w, mode, num, &mut warn)?;
            let parts = ForceParts { nonresonant: nonres, resonant: res, thermal_environment: te, thermal_body: tb };
            let errors = ForceParts { nonresonant: e_zp, resonant: 0.0, thermal_environment: e_th, thermal_body: e_th };
            Ok((parts, errors, warn))
        })
        .collect();
    let mut parts = ForceParts::default();
    let mut errors = ForceParts::default();
    let mut warnings = Vec::new();
    for t in terms {
        let (p, e, w) = t?;
        parts = parts.add(&p);
        errors = errors.add(&e);
        warnings.extend(w);
    }
    Ok(ForceComponent { level: n, parts, errors, warnings })
}

/// All level components, in level order.
pub fn force_components(
    atom: &AtomSpec,
    stack: &LayerStack,
    temps: &TemperatureField,
    rates: &RatesAndShifts,
    mode: ForceMode,
    num: &Numerics,
) -> Result<Vec<ForceComponent>> {
    (0..atom.len()).into_par_iter().map(|n| force_component(atom, stack, temps, rates, n, mode, num)).collect()
}

/// Population-weighted force from precomputed components.
pub fn weighted_force(components: &[ForceComponent], sigma: &Populations) -> Result<ForceResult> {
    if components.len() != sigma.diag.len() {
        return Err(Error::InvalidInput("populations do not match the force components".into()));
    }
    let mut parts = ForceParts::default();
    let mut errors = ForceParts::default();
    for (c, p) in components.iter().zip(&sigma.diag) {
        parts = parts.add(&c.parts.scaled(*p));
        errors = errors.add(&c.errors.scaled(p.abs()));
    }
    Ok(ForceResult { force: Vector3::new(0.0, 0.0, parts.total()), parts, errors, components: components.to_vec() })
}

/// F(r_A) = sum_n sigma_nn F_n.
pub fn total_force(
    atom: &AtomSpec,
    stack: &LayerStack,
    temps: &TemperatureField,
    rates: &RatesAndShifts,
    sigma: &Populations,
    mode: ForceMode,
    num: &Numerics,
) -> Result<ForceResult> {
    weighted_force(&force_components(atom, stack, temps, rates, mode, num)?, sigma)
}

/// Polarisability tensor of level `n` at complex frequency `omega`, in
/// C^2 m^2 / J. `broadening` supplies rates for eps = (Gamma_n + Gamma_k)/2.
pub fn polarisability(
    atom: &AtomSpec,
    n: usize,
    omega: Complex64,
    broadening: Option<&RatesAndShifts>,
) -> Result<Matrix3<Complex64>> {
    let mut a = Matrix3::zeros();
    for k in (0..atom.len()).filter(|k| atom.couples(n, *k)) {
        let eps = broadening.map(|r| 0.5 * (r.gamma_total[n] + r.gamma_total[k])).unwrap_or(0.0);
        let wkn = atom.omega(k, n);
        let d1 = omega - wkn + Complex64::new(0.0, eps);
        let d2 = omega + wkn + Complex64::new(0.0, eps);
        if d1.norm() == 0.0 || d2.norm() == 0.0 {
            return Err(Error::Singular(format!("polarisability evaluated on the pole omega = {wkn:e} rad/s")));
        }
        let dnk = atom.dipole(n, k);
        let dkn = atom.dipole(k, n);
        a += (dnk * dkn.transpose()) / (-d1) + (dkn * dnk.transpose()) / d2;
    }
    Ok(a / Complex64::new(HBAR, 0.0))
}

/// `xi^2 d/dz Tr[alpha_n(i xi) G^(1)(i xi)]` for the diagonal planar G^(1).
fn matsubara_integrand(atom: &AtomSpec, stack: &LayerStack, n: usize, freqs: &dyn Fn(usize) -> f64, xi: f64, num: &Numerics) -> Result<f64> {
    let g = xi2_scattering_green_imag(stack, atom.z(), xi, &num.kernel_opts())?;
    let mut acc = 0.0;
    for k in (0..atom.len()).filter(|k| atom.couples(n, *k)) {
        let wkn = freqs(k);
        let (wp, wz) = atom.weights(n, k);
        acc += 2.0 * wkn / (HBAR * (wkn * wkn + xi * xi)) * g.grad_z.contract(wp, wz).re;
    }
    Ok(acc)
}

/// Sum' over Matsubara frequencies (or the T = 0 integral) of `g`, times
/// -mu0 k_B T.
fn matsubara_force<F: FnMut(f64) -> f64>(mut g: F, temperature: f64, scale: f64, z: f64, num: &Numerics, warnings: &mut Vec<String>) -> Result<(f64, f64)> {
    if temperature > 0.0 {
        let r = matsubara_sum(&mut g, temperature, num.matsubara_rel_tol)?;
        let e = r.abs_error;
        let v = accept(r, "Matsubara sum", warnings)?;
        Ok((-MU0 * KB * temperature * v, MU0 * KB * temperature * e))
    } else {
        let r = integrate_from(&mut g, 0.0, scale, &[scale, C / (2.0 * z)], &num.quad);
        let e = r.abs_error;
        let v = accept(r, "imaginary-frequency integral", warnings)?;
        let f = MU0 * HBAR / (2.0 * PI);
        Ok((-f * v, f * e))
    }
}

/// Equilibrium force on level `n` at uniform temperature, summed over
/// Matsubara frequencies plus the resonant terms. Transition frequencies
/// are taken from `rates` when given, otherwise bare.
pub fn equilibrium_force_matsubara(
    atom: &AtomSpec,
    stack: &LayerStack,
    temperature: f64,
    n: usize,
    rates: Option<&RatesAndShifts>,
    num: &Numerics,
) -> Result<ForceComponent> {
    if !(temperature >= 0.0) {
        return Err(Error::InvalidInput(format!("temperature must be >= 0, got {temperature}")));
    }
    let mut warnings = Vec::new();
    if stack.is_vacuum() {
        return Ok(ForceComponent { level: n, parts: ForceParts::default(), errors: ForceParts::default(), warnings });
    }
    let freq = |m: usize, k: usize| rates.map(|r| r.omega_tilde[(m, k)]).unwrap_or_else(|| atom.omega(m, k));
    let z = atom.z();
    let wkn = |k: usize| freq(k, n);
    let scale = (0..atom.len()).filter(|k| atom.couples(n, *k)).map(|k| freq(k, n).abs()).fold(0.0, f64::max);
    let mut err = None;
    let (nonres, e_nonres) = matsubara_force(
        |xi| match matsubara_integrand(atom, stack, n, &wkn, xi, num) {
            Ok(v) => v,
            Err(e) => {
                err = Some(e);
                0.0
            }
        },
        temperature,
        scale,
        z,
        num,
        &mut warnings,
    )?;
    if let Some(e) = err {
        return Err(e);
    }
    let mut res = 0.0;
    for k in (0..atom.len()).filter(|k| atom.couples(n, *k)) {
        let om = freq(n, k);
        let occ = photon_number(temperature, om.abs())?;
        let weight = if om > 0.0 { occ + 1.0 } else { -occ };
        let g = scattering_green(stack, z, Complex64::new(om.abs(), 0.0), &num.kernel_opts())?;
        let (wp, wz) = atom.weights(n, k);
        res += MU0 * weight * om * om * g.grad_z.contract(wp, wz).re;
    }
    Ok(ForceComponent {
        level: n,
        parts: ForceParts { nonresonant: nonres, resonant: res, ..Default::default() },
        errors: ForceParts { nonresonant: e_nonres, ..Default::default() },
        warnings,
    })
}

/// Long-time Lifshitz force with the Boltzmann-weighted polarisability.
pub fn lifshitz_force(atom: &AtomSpec, stack: &LayerStack, temperature: f64, num: &Numerics) -> Result<ForceResult> {
    let sigma = Populations::thermal(atom, temperature)?;
    let z = atom.z();
    let mut warnings = Vec::new();
    let levels: Vec<usize> = (0..atom.len()).filter(|i| sigma.diag[*i] > 0.0).collect();
    let scale = (0..atom.len())
        .flat_map(|m| (0..atom.len()).map(move |k| (m, k)))
        .filter(|(m, k)| atom.couples(*m, *k))
        .map(|(m, k)| atom.omega(m, k).abs())
        .fold(0.0, f64::max);
    let (value, error) = if stack.is_vacuum() {
        (0.0, 0.0)
    } else {
        let mut err = None;
        let r = matsubara_force(
            |xi| {
                let mut acc = 0.0;
                for &n in &levels {
                    match matsubara_integrand(atom, stack, n, &|k| atom.omega(k, n), xi, num) {
                        Ok(v) => acc += sigma.diag[n] * v,
                        Err(e) => err = Some(e),
                    }
                }
                acc
            },
            temperature,
            scale,
            z,
            num,
            &mut warnings,
        )?;
        if let Some(e) = err {
            return Err(e);
        }
        r
    };
    let parts = ForceParts { nonresonant: value, ..Default::default() };
    let errors = ForceParts { nonresonant: error, ..Default::default() };
    Ok(ForceResult {
        force: Vector3::new(0.0, 0.0, value),
        parts,
        errors,
        components: vec![ForceComponent { level: atom.ground(), parts, errors, warnings }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atomdyn::rates_and_shifts;
    use crate::material::{MaterialModel, Oscillator};
    use approx::assert_relative_eq;

    fn iso(d: f64) -> Vector3<Complex64> {
        let c = Complex64::new(d / 3f64.sqrt(), 0.0);
        Vector3::new(c, c, c)
    }

    #[test]
    fn polarisability_two_level() {
        let w = 2e15;
        let d = 3e-29;
        let atom = AtomSpec::two_level(w, iso(d), 1e-7).unwrap();
        let g = polarisability(&atom, 0, Complex64::new(0.0, 0.0), None).unwrap();
        let tr = (g[(0, 0)] + g[(1, 1)] + g[(2, 2)]).re / 3.0;
        assert_relative_eq!(tr, 2.0 * d * d / (3.0 * HBAR * w), max_relative = 1e-14);
        let e = polarisability(&atom, 1, Complex64::new(0.0, 0.0), None).unwrap();
        assert_relative_eq!(e[(0, 0)].re, -g[(0, 0)].re, max_relative = 1e-14);
        let a1 = polarisability(&atom, 0, Complex64::new(0.0, 1e15), None).unwrap();
        let a2 = polarisability(&atom, 0, Complex64::new(0.0, 4e15), None).unwrap();
        assert!(a1[(2, 2)].im.abs() < 1e-14 * a1[(2, 2)].re && a2[(2, 2)].re < a1[(2, 2)].re);
        assert!(polarisability(&atom, 0, Complex64::new(w, 0.0), None).is_err());
        let x = Complex64::new(1.3e15, 2e12);
        let p = polarisability(&atom, 0, x, None).unwrap();
        let q = polarisability(&atom, 0, -x.conj(), None).unwrap();
        assert_relative_eq!(p[(0, 1)].re, q[(0, 1)].re, max_relative = 1e-12);
        assert_relative_eq!(p[(0, 1)].im, -q[(0, 1)].im, max_relative = 1e-12);
    }

    #[test]
    fn vacuum_exerts_no_force() {
        let st = LayerStack::vacuum();
        let atom = AtomSpec::two_level(2e15, iso(3e-29), 1e-7).unwrap();
        let num = Numerics::default();
        for t in [0.0, 500.0] {
            let temps = TemperatureField::uniform(t, &st).unwrap();
            let r = rates_and_shifts(&atom, &st, &temps, &num).unwrap();
            let f = total_force(&atom, &st, &temps, &r, &Populations::pure(2, 1), ForceMode::FullComplex, &num).unwrap();
            assert_eq!(f.z(), 0.0);
        }
    }

    #[test]
    fn ground_state_attracted_to_dielectric() {
        let st = LayerStack::half_space(MaterialModel::dielectric(1.0, vec![Oscillator::lorentz(1.5e16, 1e16, 1e14)])).unwrap();
        let num = Numerics::with_rel_tol(1e-7);
        let temps = TemperatureField::uniform(0.0, &st).unwrap();
        for z in [5e-9, 5e-8, 5e-7] {
            let atom = AtomSpec::two_level(3e15, iso(3e-29), z).unwrap();
            let r = rates_and_shifts(&atom, &st, &temps, &num).unwrap();
            let full = force_component(&atom, &st, &temps, &r, 0, ForceMode::FullComplex, &num).unwrap();
            let eq = equilibrium_force_matsubara(&atom, &st, 0.0, 0, Some(&r), &num).unwrap();
            assert!(full.total() < 0.0);
            assert_relative_eq!(full.total(), eq.total(), max_relative = 1e-6);
        }
    }
}
