//! Multilevel atom: decay rates, level shifts and rate-equation dynamics.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::constants::{HBAR, KB, MU0};
use crate::error::{Error, Result};
use crate::greenfunc::{scattering_green, xi2_scattering_green_imag, LayerStack};
use crate::quad::{integrate_from, principal_value, QuadOptions, QuadResult, QuadValue};
use crate::thermalenv::{thermal_kernel, KernelCache, KernelSet, TemperatureField};

#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub label: String,
    /// J
    pub energy: f64,
}

/// Energy levels, transition dipoles (C m) and position of the atom.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomSpec {
    levels: Vec<Level>,
    dipoles: Vec<Vec<Vector3<Complex64>>>,
    z: f64,
}

impl AtomSpec {
    /// `dipoles[m][n] = <m| d |n>`; must be Hermitian.
    pub fn new(levels: Vec<Level>, dipoles: Vec<Vec<Vector3<Complex64>>>, z: f64) -> Result<Self> {
        let n = levels.len();
        if n < 2 {
            return Err(Error::InvalidInput("atom needs at least two levels".into()));
        }
        if dipoles.len() != n || dipoles.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput(format!("dipole matrix must be {n} x {n}")));
        }
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::InvalidPosition(z));
        }
        let scale = dipoles.iter().flatten().map(|d| d.norm()).fold(0.0, f64::max);
        for m in 0..n {
            if !levels[m].energy.is_finite() {
                return Err(Error::InvalidInput(format!("level {} energy is not finite", levels[m].label)));
            }
            for k in 0..n {
                let diff = (dipoles[m][k] - dipoles[k][m].map(|c| c.conj())).norm();
                if diff > 1e-12 * scale {
                    return Err(Error::InvalidInput(format!(
                        "dipole matrix not Hermitian at ({}, {})",
                        levels[m].label, levels[k].label
                    )));
                }
                if m < k {
                    let e = (levels[m].energy - levels[k].energy).abs();
                    if e <= 1e-12 * levels[m].energy.abs().max(levels[k].energy.abs()) || e == 0.0 {
                        return Err(Error::InvalidInput(format!(
                            "levels {} and {} are degenerate",
                            levels[m].label, levels[k].label
                        )));
                    }
                }
            }
        }
        Ok(Self { levels, dipoles, z })
    }

    /// Two-level atom with ground energy 0 and transition dipole `d`.
    pub fn two_level(omega: f64, d: Vector3<Complex64>, z: f64) -> Result<Self> {
        let zero = Vector3::zeros();
        Self::new(
            vec![Level { label: "g".into(), energy: 0.0 }, Level { label: "e".into(), energy: HBAR * omega }],
            vec![vec![zero, d], vec![d.map(|c| c.conj()), zero]],
            z,
        )
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn with_position(&self, z: f64) -> Result<Self> {
        Self::new(self.levels.clone(), self.dipoles.clone(), z)
    }

    pub fn dipole(&self, m: usize, n: usize) -> Vector3<Complex64> {
        self.dipoles[m][n]
    }

    /// Bare transition frequency (E_m - E_n) / hbar.
    pub fn omega(&self, m: usize, n: usize) -> f64 {
        (self.levels[m].energy - self.levels[n].energy) / HBAR
    }

    /// Weights (|d_x|^2 + |d_y|^2, |d_z|^2) of the m-n transition dipole.
    pub fn weights(&self, m: usize, n: usize) -> (f64, f64) {
        let d = self.dipoles[m][n];
        (d.x.norm_sqr() + d.y.norm_sqr(), d.z.norm_sqr())
    }

    /// True when the m-n transition couples to the field.
    pub fn couples(&self, m: usize, n: usize) -> bool {
        m != n && self.dipoles[m][n].norm() > 0.0
    }

    /// Index of the lowest-energy level.
    pub fn ground(&self) -> usize {
        (0..self.len())
            .min_by(|a, b| self.levels[*a].energy.partial_cmp(&self.levels[*b].energy).unwrap())
            .unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftMode {
    /// Bare frequencies inside the shift integrals.
    Perturbative,
    /// Iterate shifted frequencies to self-consistency.
    FixedPoint,
}

/// Numerical settings shared by the rate, shift and force pipelines.
#[derive(Debug, Clone)]
pub struct Numerics {
    pub quad: QuadOptions,
    pub matsubara_rel_tol: f64,
    pub shift_mode: ShiftMode,
    pub cache: Arc<KernelCache>,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            quad: QuadOptions::default(),
            matsubara_rel_tol: 1e-10,
            shift_mode: ShiftMode::Perturbative,
            cache: Arc::new(KernelCache::new()),
        }
    }
}

impl Numerics {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        Self { quad: QuadOptions::with_rel_tol(rel_tol), ..Self::default() }
    }

    /// Kernel options: an order of magnitude tighter than the outer quadrature.
    pub(crate) fn kernel_opts(&self) -> QuadOptions {
        QuadOptions { rel_tol: (self.quad.rel_tol * 0.1).max(1e-13), ..self.quad }
    }

    pub(crate) fn kernels(&self, stack: &LayerStack, z: f64, omega: f64) -> Result<Arc<KernelSet>> {
        self.cache.get(stack, z, omega, &self.kernel_opts())
    }
}

/// Accepts a quadrature result, downgrading mild non-convergence to a warning.
pub(crate) fn accept<T: QuadValue>(r: QuadResult<T>, what: &str, warnings: &mut Vec<String>) -> Result<T> {
    if r.converged {
        return Ok(r.value);
    }
    let mag = (0..r.value.dim()).map(|i| r.value.component(i).abs()).fold(0.0, f64::max);
    if r.abs_error <= 1e-4 * mag {
        warnings.push(format!("{what}: tolerance not reached, error estimate {:.3e} of {mag:.3e}", r.abs_error));
        Ok(r.value)
    } else {
        Err(Error::NotConverged { value: mag, abs_error: r.abs_error, evaluations: r.evaluations })
    }
}

/// Rates, shifts and complex transition frequencies of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RatesAndShifts {
    /// Gamma[n][k]: rate n -> k in 1/s.
    pub gamma: DMatrix<f64>,
    pub gamma_total: Vec<f64>,
    /// Level shifts in rad/s.
    pub delta_omega: Vec<f64>,
    /// Shifted transition frequencies omega~_mn.
    pub omega_tilde: DMatrix<f64>,
    /// omega~_mn + i (Gamma_m + Gamma_n) / 2.
    pub big_omega: DMatrix<Complex64>,
    /// True when fixed-point shifts failed and perturbative ones were used.
    pub fixed_point_fallback: bool,
    pub warnings: Vec<String>,
}

impl RatesAndShifts {
    pub fn len(&self) -> usize {
        self.gamma_total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma_total.is_empty()
    }

    /// Generator M with M_nk = Gamma_kn - delta_nk Gamma_n.
    pub fn generator(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, k| if i == k { -self.gamma_total[i] } else { self.gamma[(k, i)] })
    }
}

/// Highest temperature in the field, used to bound thermal integrals.
fn t_max(temps: &TemperatureField) -> f64 {
    temps.layers.iter().cloned().fold(temps.environment, f64::max)
}

/// Frequency beyond which every photon number is below e^-60.
pub(crate) fn thermal_cutoff(temps: &TemperatureField) -> f64 {
    60.0 * KB * t_max(temps) / HBAR
}

/// (n-weighted) `d . N(omega) . d` for a transition, split into
/// (environment, bodies).
fn thermal_contraction(
    stack: &LayerStack,
    temps: &TemperatureField,
    z: f64,
    omega: f64,
    w: (f64, f64),
    num: &Numerics,
) -> Result<(f64, f64)> {
    let set = num.kernels(stack, z, omega)?;
    let tk = thermal_kernel(&set, temps)?;
    Ok((tk.environment.contract(w.0, w.1), tk.bodies.contract(w.0, w.1)))
}

/// Zero-point part of delta omega_nk for transition frequency `om`:
/// (mu0/(pi hbar)) [ -om int_0^inf xi^2 g(i xi)/(xi^2 + om^2) dxi
///                   - pi Theta(om) om^2 Re g(om) ],  g = d.G^(1).d.
fn zero_point_shift(
    stack: &LayerStack,
    z: f64,
    om: f64,
    w: (f64, f64),
    num: &Numerics,
    warnings: &mut Vec<String>,
) -> Result<f64> {
    if stack.is_vacuum() {
        return Ok(0.0);
    }
    let kopts = num.kernel_opts();
    let mut err = None;
    let scale = om.abs();
    let knee = crate::constants::C / (2.0 * z);
    let r = integrate_from(
        |xi: f64| match xi2_scattering_green_imag(stack, z, xi, &kopts) {
            Ok(g) => g.value.contract(w.0, w.1).re / (xi * xi + om * om),
            Err(e) => {
                err = Some(e);
                0.0
            }
        },
        0.0,
        scale,
        &[scale, knee],
        &num.quad,
    );
    if let Some(e) = err {
        return Err(e);
    }
    let nonres = -om * accept(r, "zero-point shift integral", warnings)?;
    let res = if om > 0.0 {
        let g = scattering_green(stack, z, Complex64::new(om, 0.0), &kopts)?;
        -PI * om * om * g.value.contract(w.0, w.1).re
    } else {
        0.0
    };
    Ok(MU0 / (PI * HBAR) * (nonres + res))
}

/// Thermal part of delta omega_nk: (1/hbar^2) PV int n k 2 om/(om^2 - w^2).
fn thermal_shift(
    stack: &LayerStack,
    temps: &TemperatureField,
    z: f64,
    om: f64,
    w: (f64, f64),
    num: &Numerics,
    warnings: &mut Vec<String>,
) -> Result<f64> {
    if t_max(temps) == 0.0 {
        return Ok(0.0);
    }
    let a = om.abs();
    let cutoff = thermal_cutoff(temps);
    let upper = cutoff.max(2.0 * a);
    let mut err = None;
    let mut f = |x: f64| match thermal_contraction(stack, temps, z, x, w, num) {
        Ok((e, b)) => -2.0 * om * (e + b) / (a + x),
        Err(e) => {
            err = Some(e);
            0.0
        }
    };
    let r = principal_value(&mut f, a, Some(upper), a, &[cutoff / 60.0, cutoff / 10.0], &num.quad)?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(accept(r, "thermal shift integral", warnings)? / (HBAR * HBAR))
}

fn pairs(atom: &AtomSpec) -> Vec<(usize, usize)> {
    let n = atom.len();
    (0..n).flat_map(|i| (0..n).map(move |k| (i, k))).filter(|(i, k)| atom.couples(*i, *k)).collect()
}

/// Level shifts for given transition frequencies inside the integrals.
fn shifts_at(
    atom: &AtomSpec,
    stack: &LayerStack,
    temps: &TemperatureField,
    freqs: &DMatrix<f64>,
    num: &Numerics,
) -> Result<(Vec<f64>, Vec<String>)> {
    let z = atom.z();
    let parts: Vec<Result<(usize, f64, Vec<String>)>> = pairs(atom)
        .into_par_iter()
        .map(|(n, k)| {
            let mut warn = Vec::new();
            let om = freqs[(n, k)];
            let w = atom.weights(n, k);
            let zp = zero_point_shift(stack, z, om, w, num, &mut warn)?;
            let th = thermal_shift(stack, temps, z, om, w, num, &mut warn)?;
            Ok((n, zp + th, warn))
        })
        .collect();
    let mut delta = vec![0.0; atom.len()];
    let mut warnings = Vec::new();
    for p in parts {
        let (n, v, w) = p?;
        delta[n] += v;
        warnings.extend(w);
    }
    Ok((delta, warnings))
}

fn bare_frequencies(atom: &AtomSpec) -> DMatrix<f64> {
    let n = atom.len();
    DMatrix::from_fn(n, n, |i, k| atom.omega(i, k))
}

fn shifted(atom: &AtomSpec, delta: &[f64]) -> DMatrix<f64> {
    let n = atom.len();
    DMatrix::from_fn(n, n, |i, k| atom.omega(i, k) + delta[i] - delta[k])
}

/// Level shifts delta omega_n and shifted frequencies omega~_mn, with the
/// fallback flag and warnings.
pub fn frequency_shifts(
    atom: &AtomSpec,
    stack: &LayerStack,
    temps: &TemperatureField,
    num: &Numerics,
) -> Result<(Vec<f64>, DMatrix<f64>, bool, Vec<String>)> {
    temps.validate_for(stack)?;
    let (delta0, mut warnings) = shifts_at(atom, stack, temps, &bare_frequencies(atom), num)?;
    if num.shift_mode == ShiftMode::Perturbative {
        let wt = shifted(atom, &delta0);
        return Ok((delta0, wt, false, warnings));
    }
    let mut delta = delta0.clone();
    for _ in 0..50 {
        let wt = shifted(atom, &delta);
        // A shift large enough to reorder levels leaves the Markov regime.
        if wt.iter().zip(bare_frequencies(atom).iter()).any(|(a, b)| a * b < 0.0) {
            break;
        }
        let (next, w) = shifts_at(atom, stack, temps, &wt, num)?;
        let change = next.iter().zip(&delta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let size = next.iter().map(|v| v.abs()).fold(0.0, f64::max);
        delta = next;
        if change <= 1e-10 * size || size == 0.0 {
            warnings.extend(w);
            let wt = shifted(atom, &delta);
            return Ok((delta, wt, false, warnings));
        }
    }
    warnings.push("fixed-point shift iteration did not converge; using perturbative shifts".into());
    let wt = shifted(atom, &delta0);
    Ok((delta0, wt, true, warnings))
}

/// Transition rates at given shifted frequencies.
fn rates_at(
    atom: &AtomSpec,
    stack: &LayerStack,
    temps: &TemperatureField,
    wt: &DMatrix<f64>,
    num: &Numerics,
    warnings: &mut Vec<String>,
) -> Result<DMatrix<f64>> {
    let z = atom.z();
    let n = atom.len();
    let pref = 2.0 * PI / (HBAR * HBAR);
    let vals: Vec<Result<(usize, usize, f64, Option<String>)>> = pairs(atom)
        .into_par_iter()
        .map(|(i, k)| {
            let om = wt[(i, k)];
            let set = num.kernels(stack, z, om.abs())?;
            let w = atom.weights(i, k);
            let thermal = thermal_kernel(&set, temps)?.total().contract(w.0, w.1);
            let spont = if om > 0.0 { set.total.contract(w.0, w.1) } else { 0.0 };
            let warn = set
                .psd_violation
                .map(|v| format!("environment kernel not PSD at omega = {:.6e} rad/s (relative {v:.3e})", om.abs()))
                .or_else(|| (!set.converged).then(|| format!("kernel quadrature at omega = {:.6e} rad/s did not reach tolerance", om.abs())));
            Ok((i, k, pref * (spont + thermal), warn))
        })
        .collect();
    let mut gamma = DMatrix::zeros(n, n);
    for v in vals {
        let (i, k, g, w) = v?;
        gamma[(i, k)] = g;
        warnings.extend(w);
    }
    Ok(gamma)
}

/// Full pipeline: shifts first, then rates at the shifted frequencies.
pub fn rates_and_shifts(
    atom: &AtomSpec,
    stack: &LayerStack,
    temps: &TemperatureField,
    num: &Numerics,
) -> Result<RatesAndShifts> {
    let (delta_omega, omega_tilde, fixed_point_fallback, mut warnings) = frequency_shifts(atom, stack, temps, num)?;
    let gamma = rates_at(atom, stack, temps, &omega_tilde, num, &mut warnings)?;
    Ok(assemble(gamma, delta_omega, omega_tilde, fixed_point_fallback, warnings))
}

/// Rates at bare frequencies with all shifts set to zero.
pub fn unshifted_rates(atom: &AtomSpec, stack: &LayerStack, temps: &TemperatureField, num: &Numerics) -> Result<RatesAndShifts> {
    temps.validate_for(stack)?;
    let wt = bare_frequencies(atom);
    let mut warnings = Vec::new();
    let gamma = rates_at(atom, stack, temps, &wt, num, &mut warnings)?;
    Ok(assemble(gamma, vec![0.0; atom.len()], wt, false, warnings))
}

fn assemble(gamma: DMatrix<f64>, delta_omega: Vec<f64>, omega_tilde: DMatrix<f64>, fallback: bool, warnings: Vec<String>) -> RatesAndShifts {
    let n = gamma.nrows();
    let gamma_total: Vec<f64> = (0..n).map(|i| gamma.row(i).sum()).collect();
    let big_omega = DMatrix::from_fn(n, n, |i, k| {
        Complex64::new(omega_tilde[(i, k)], 0.5 * (gamma_total[i] + gamma_total[k]))
    });
    RatesAndShifts { gamma, gamma_total, delta_omega, omega_tilde, big_omega, fixed_point_fallback: fallback, warnings }
}

/// Transition-rate matrix Gamma_nk.
pub fn loss_rates(atom: &AtomSpec, stack: &LayerStack, temps: &TemperatureField, num: &Numerics) -> Result<DMatrix<f64>> {
    Ok(rates_and_shifts(atom, stack, temps, num)?.gamma)
}

/// Level populations and optional coherences.
#[derive(Debug, Clone, PartialEq)]
pub struct Populations {
    pub diag: Vec<f64>,
    /// Full density matrix sigma_mn when coherences are tracked.
    pub coherences: Option<DMatrix<Complex64>>,
}

impl Populations {
    pub fn new(diag: Vec<f64>) -> Result<Self> {
        let sum: f64 = diag.iter().sum();
        if diag.iter().any(|p| !(*p >= -1e-14)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("populations must be >= 0 and sum to 1 (sum {sum})")));
        }
        Ok(Self { diag, coherences: None })
    }

    pub fn pure(n: usize, level: usize) -> Self {
        let mut diag = vec![0.0; n];
        diag[level] = 1.0;
        Self { diag, coherences: None }
    }

    /// Boltzmann distribution of the bare levels at temperature T > 0.
    pub fn thermal(atom: &AtomSpec, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Ok(Self::pure(atom.len(), atom.ground()));
        }
        let e0 = atom.levels()[atom.ground()].energy;
        let w: Vec<f64> = atom.levels().iter().map(|l| (-(l.energy - e0) / (KB * temperature)).exp()).collect();
        let s: f64 = w.iter().sum();
        Ok(Self { diag: w.iter().map(|x| x / s).collect(), coherences: None })
    }
}

/// sigma(t) = exp(M t) sigma(0).
pub fn evolve_populations(rates: &RatesAndShifts, sigma0: &Populations, t: f64) -> Result<Populations> {
    if sigma0.diag.len() != rates.len() {
        return Err(Error::InvalidInput("population vector does not match the atom".into()));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidInput(format!("time must be >= 0, got {t}")));
    }
    let m = rates.generator() * t;
    let p = m.exp() * DVector::from_vec(sigma0.diag.clone());
    Ok(Populations { diag: p.iter().cloned().collect(), coherences: None })
}

/// sigma_mn(t) = sigma_mn(0) exp[(-i omega~_mn - (Gamma_m + Gamma_n)/2) t]
/// off the diagonal; populations follow the rate equations.
pub fn coherence_evolution(rates: &RatesAndShifts, sigma0: &DMatrix<Complex64>, t: f64) -> Result<DMatrix<Complex64>> {
    let n = rates.len();
    if sigma0.nrows() != n || sigma0.ncols() != n {
        return Err(Error::InvalidInput("density matrix does not match the atom".into()));
    }
    let pops = Populations { diag: (0..n).map(|i| sigma0[(i, i)].re).collect(), coherences: None };
    let pops = evolve_populations(rates, &pops, t)?;
    Ok(DMatrix::from_fn(n, n, |m, k| {
        if m == k {
            Complex64::new(pops.diag[m], 0.0)
        } else {
            let g = 0.5 * (rates.gamma_total[m] + rates.gamma_total[k]);
            sigma0[(m, k)] * Complex64::new(-g * t, -rates.omega_tilde[(m, k)] * t).exp()
        }
    }))
}

/// Long-time populations and whether they are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub populations: Populations,
    pub unique: bool,
}

pub fn steady_state(rates: &RatesAndShifts) -> Result<SteadyState> {
    let m = rates.generator();
    let n = m.nrows();
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let nullity = svd.singular_values.iter().filter(|s| **s <= 1e-12 * smax.max(f64::MIN_POSITIVE)).count();
    if smax == 0.0 || nullity > 1 {
        // Reducible: settle in the lowest absorbing level.
        let absorbing = (0..n).filter(|i| rates.gamma_total[*i] == 0.0);
        let e = &rates.omega_tilde;
        let lowest = absorbing.min_by(|a, b| e[(*a, 0)].partial_cmp(&e[(*b, 0)]).unwrap());
        return match lowest {
            Some(i) => Ok(SteadyState { populations: Populations::pure(n, i), unique: false }),
            None => Err(Error::Singular("rate matrix is reducible without an absorbing level".into())),
        };
    }
    let mut a = m;
    let mut b = DVector::zeros(n);
    for k in 0..n {
        a[(n - 1, k)] = 1.0;
    }
    b[n - 1] = 1.0;
    let x = a.lu().solve(&b).ok_or_else(|| Error::Singular("steady-state system is singular".into()))?;
    Ok(SteadyState { populations: Populations { diag: x.iter().cloned().collect(), coherences: None }, unique: true })
}
