//! Temperatures, photon numbers and region-resolved absorption kernels.
//!
//! A kernel `K_r(omega) = sum over channels of int_r d^3s G G*^T` is the
//! noise strength that region `r` contributes at the atom. Body kernels are
//! computed from the power each plane wave deposits in a layer; the
//! environment kernel is the remainder of the sum rule
//! `sum_r K_r = (hbar mu0 / pi) omega^2 Im G`.
//!
//! Planar symmetry makes every kernel diagonal with `xx = yy`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::constants::{EPS0, HBAR, KB, MU0};
use crate::error::{Error, Result};
use crate::greenfunc::{
    im_green_vacuum, layer_field, layer_field_bottom, spectral_integrate, LayerMode, LayerStack, Modes,
    SpectralPoint, WaveAmplitudes,
};
use crate::quad::{DVec, QuadOptions};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Piecewise-constant temperatures: one per layer plus the environment.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureField {
    /// K, far-field (vacuum) region.
    pub environment: f64,
    /// K, one entry per stack layer, top first.
    pub layers: Vec<f64>,
}

impl TemperatureField {
    pub fn new(environment: f64, layers: Vec<f64>) -> Result<Self> {
        let t = Self { environment, layers };
        for v in std::iter::once(&t.environment).chain(&t.layers) {
            if !(*v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("temperatures must be finite and >= 0 K, got {v}")));
            }
        }
        Ok(t)
    }

    pub fn uniform(temperature: f64, stack: &LayerStack) -> Result<Self> {
        Self::new(temperature, vec![temperature; stack.layers().len()])
    }

    pub fn validate_for(&self, stack: &LayerStack) -> Result<()> {
        Self::new(self.environment, self.layers.clone())?;
        if self.layers.len() != stack.layers().len() {
            return Err(Error::InvalidInput(format!(
                "temperature field has {} layer entries, stack has {} layers",
                self.layers.len(),
                stack.layers().len()
            )));
        }
        Ok(())
    }

    pub fn is_uniform(&self) -> bool {
        self.layers.iter().all(|t| *t == self.environment)
    }
}

/// Bose-Einstein occupation 1/(exp(hbar w / kT) - 1).
pub fn photon_number(temperature: f64, omega: f64) -> Result<f64> {
    if !(omega > 0.0) {
        return Err(Error::InvalidInput(format!("photon number needs omega > 0, got {omega}")));
    }
    if !(temperature >= 0.0) {
        return Err(Error::InvalidInput(format!("temperature must be >= 0, got {temperature}")));
    }
    if temperature == 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 / (HBAR * omega / (KB * temperature)).exp_m1())
}

/// Diagonal kernel and its half-gradient (derivative on the first Green
/// tensor only).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AbsorptionKernel {
    pub xx: f64,
    pub zz: f64,
    pub grad1_xx: Complex64,
    pub grad1_zz: Complex64,
}

impl AbsorptionKernel {
    pub fn matrix(&self) -> Matrix3<Complex64> {
        Matrix3::from_diagonal(&nalgebra::Vector3::new(self.xx, self.xx, self.zz).map(|v| Complex64::new(v, 0.0)))
    }

    pub fn grad1_matrix(&self) -> Matrix3<Complex64> {
        Matrix3::from_diagonal(&nalgebra::Vector3::new(self.grad1_xx, self.grad1_xx, self.grad1_zz))
    }

    /// `d* . K . d` for dipole weights `w_par = |dx|^2 + |dy|^2`, `w_z = |dz|^2`.
    pub fn contract(&self, w_par: f64, w_z: f64) -> f64 {
        self.xx * w_par + self.zz * w_z
    }

    pub fn contract_grad1(&self, w_par: f64, w_z: f64) -> Complex64 {
        self.grad1_xx * w_par + self.grad1_zz * w_z
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { xx: self.xx * s, zz: self.zz * s, grad1_xx: self.grad1_xx * s, grad1_zz: self.grad1_zz * s }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self { xx: self.xx + o.xx, zz: self.zz + o.zz, grad1_xx: self.grad1_xx + o.grad1_xx, grad1_zz: self.grad1_zz + o.grad1_zz }
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.scaled(-1.0))
    }

    /// Smallest eigenvalue and trace of the (real diagonal) kernel matrix.
    pub fn min_eigen_and_trace(&self) -> (f64, f64) {
        (self.xx.min(self.zz), 2.0 * self.xx + self.zz)
    }
}

/// All region kernels at one (z_A, omega), evaluated on a shared set of
/// spectral nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    pub omega: f64,
    pub z: f64,
    /// One entry per stack layer (zero for lossless layers).
    pub bodies: Vec<AbsorptionKernel>,
    pub environment: AbsorptionKernel,
    /// `(hbar mu0 / pi) omega^2 Im G` and its half-gradient.
    pub total: AbsorptionKernel,
    pub abs_error: f64,
    pub converged: bool,
    /// Most negative environment eigenvalue relative to the total trace, when
    /// it exceeds the PSD tolerance.
    pub psd_violation: Option<f64>,
}

/// Relative PSD tolerance for the environment remainder.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Time-averaged z-component of the Poynting vector for tangential field
/// `u` and its derivative `du`.
fn flux(pol_s: bool, u: Complex64, du: Complex64, omega: f64, l: &LayerMode) -> f64 {
    if pol_s {
        0.5 * (u * (du / (I * omega * MU0 * l.response.mu)).conj()).re
    } else {
        0.5 * (u.conj() * du / (I * omega * EPS0 * l.response.eps)).re
    }
}

/// Power absorbed per unit area in a layer for a unit incident tangential field.
fn absorbed(pol_s: bool, l: &LayerMode, amp: &WaveAmplitudes, omega: f64) -> f64 {
    let (ut, dut) = layer_field(l, amp, l.z_top);
    let top = flux(pol_s, ut, dut, omega, l);
    let bottom = match layer_field_bottom(l, amp) {
        Some((ub, dub)) => flux(pol_s, ub, dub, omega, l),
        None => 0.0,
    };
    bottom - top
}

/// Kernel contributions of one layer at one spectral node, per unit of the
/// path parameter: [K_xx, K_zz, Re/Im grad1 K_xx, Re/Im grad1 K_zz].
fn body_node(p: &SpectralPoint, l: &LayerMode, omega: f64, z: f64) -> [f64; 6] {
    let a_s = absorbed(true, l, &l.s, omega);
    let a_p = absorbed(false, l, &l.p, omega);
    let kz_abs2 = p.kz0.norm_sqr();
    let k_sq = p.kpar_sq().re;
    let w = p.k_measure().re * (-2.0 * p.kz0.im * z).exp() / kz_abs2;
    let kxx = HBAR * omega.powi(3) * MU0 * MU0 / (8.0 * PI * PI) * (a_s + kz_abs2 * a_p / (omega * omega * MU0 * MU0)) * w;
    let kzz = HBAR * omega / (4.0 * PI * PI) * k_sq * a_p * w;
    // Gradients are carried times z so all components share units.
    let g = I * p.kz0 * z;
    let (gx, gz) = (g * kxx, g * kzz);
    [kxx, kzz, gx.re, gx.im, gz.re, gz.im]
}

/// Evaluates every region kernel at height `z` and real frequency `omega`.
pub fn kernel_set(stack: &LayerStack, z: f64, omega: f64, opts: &QuadOptions) -> Result<KernelSet> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::InvalidPosition(z));
    }
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::InvalidInput(format!("kernel frequency must be positive, got {omega}")));
    }
    let n_layers = stack.layers().len();
    // Layers that carry local noise: lossy, and above any perfect reflector.
    let mut lossy = Vec::new();
    for (j, l) in stack.layers().iter().enumerate() {
        if l.material.is_perfect_reflector() {
            break;
        }
        if l.material.is_lossy(omega) {
            lossy.push(j);
        }
    }
    let pref = HBAR * MU0 / PI * omega * omega;
    let w = Complex64::new(omega, 0.0);
    let vac = pref * im_green_vacuum(omega);
    if stack.is_vacuum() {
        let total = AbsorptionKernel { xx: vac, zz: vac, ..Default::default() };
        return Ok(KernelSet {
            omega,
            z,
            bodies: vec![AbsorptionKernel::default(); n_layers],
            environment: total,
            total,
            abs_error: 0.0,
            converged: true,
            psd_violation: None,
        });
    }
    // Parts far below the free-space noise level need no relative accuracy;
    // reflected terms of a near-vacuum stack sit at rounding level.
    let kopts = QuadOptions { abs_tol: opts.abs_tol.max(opts.rel_tol * 1e-6 * vac), ..*opts };
    let r = spectral_integrate(stack, z, w, &kopts, |p| {
        let modes = Modes::solve(stack, w, p.kz0);
        let ratio = p.kz0 * p.kz0 / p.k0_sq;
        let ph = (2.0 * I * p.kz0 * z).exp() * p.measure;
        let gxx = I / (8.0 * PI) * (modes.r_s - ratio * modes.r_p) * ph;
        let gzz = I / (4.0 * PI) * (Complex64::new(1.0, 0.0) - ratio) * modes.r_p * ph;
        // Half of the z-derivative of the coincidence value.
        let (hxx, hzz) = (I * p.kz0 * z * gxx, I * p.kz0 * z * gzz);
        let mut v = Vec::with_capacity(4 + 6 * lossy.len());
        v.extend_from_slice(&[pref * gxx.im, pref * gzz.im, pref * hxx.im, pref * hzz.im]);
        for &j in &lossy {
            if (p.kz0.im * z) > 300.0 {
                v.extend_from_slice(&[0.0; 6]);
            } else {
                v.extend_from_slice(&body_node(p, &modes.layers[j], omega, z));
            }
        }
        DVec(v)
    });
    let v = &r.value.0;
    let total = AbsorptionKernel {
        xx: vac + v[0],
        zz: vac + v[1],
        grad1_xx: Complex64::new(v[2] / z, 0.0),
        grad1_zz: Complex64::new(v[3] / z, 0.0),
    };
    let mut bodies = vec![AbsorptionKernel::default(); n_layers];
    for (i, &j) in lossy.iter().enumerate() {
        let b = &v[4 + 6 * i..10 + 6 * i];
        bodies[j] = AbsorptionKernel {
            xx: b[0],
            zz: b[1],
            grad1_xx: Complex64::new(b[2], b[3]) / z,
            grad1_zz: Complex64::new(b[4], b[5]) / z,
        };
    }
    let environment = bodies.iter().fold(total, |acc, b| acc.sub(b));
    let (min_eig, trace) = environment.min_eigen_and_trace();
    let psd_violation = (min_eig < -PSD_TOLERANCE * trace.abs()).then(|| min_eig / trace.abs());
    Ok(KernelSet { omega, z, bodies, environment, total, abs_error: r.abs_error, converged: r.converged, psd_violation })
}

/// Local-noise kernel of layer `j`; zero when the layer is lossless.
pub fn body_kernel(stack: &LayerStack, z: f64, omega: f64, j: usize, opts: &QuadOptions) -> Result<AbsorptionKernel> {
    if j >= stack.layers().len() {
        return Err(Error::InvalidInput(format!("layer index {j} out of range")));
    }
    Ok(kernel_set(stack, z, omega, opts)?.bodies[j])
}

/// Far-field remainder; errors when it is not PSD within tolerance.
pub fn environment_kernel(stack: &LayerStack, z: f64, omega: f64, opts: &QuadOptions) -> Result<AbsorptionKernel> {
    let set = kernel_set(stack, z, omega, opts)?;
    if let Some(v) = set.psd_violation {
        return Err(Error::NotConverged { value: v, abs_error: set.abs_error, evaluations: 0 });
    }
    Ok(set.environment)
}

/// `N = n_env K_env + sum_j n_j K_j`, with its half-gradient; also returns
/// the environment and body parts separately.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ThermalKernel {
    pub environment: AbsorptionKernel,
    pub bodies: AbsorptionKernel,
}

impl ThermalKernel {
    pub fn total(&self) -> AbsorptionKernel {
        self.environment.add(&self.bodies)
    }
}

pub fn thermal_kernel(set: &KernelSet, temps: &TemperatureField) -> Result<ThermalKernel> {
    if temps.layers.len() != set.bodies.len() {
        return Err(Error::InvalidInput("temperature field does not match the stack".into()));
    }
    if temps.is_uniform() {
        // Collapse onto the total so the sum rule holds to rounding.
        let n = photon_number(temps.environment, set.omega)?;
        let bodies = set.bodies.iter().fold(AbsorptionKernel::default(), |a, b| a.add(b)).scaled(n);
        return Ok(ThermalKernel { environment: set.total.scaled(n).sub(&bodies), bodies });
    }
    let mut bodies = AbsorptionKernel::default();
    for (k, t) in set.bodies.iter().zip(&temps.layers) {
        if *k != AbsorptionKernel::default() {
            bodies = bodies.add(&k.scaled(photon_number(*t, set.omega)?));
        }
    }
    let environment = set.environment.scaled(photon_number(temps.environment, set.omega)?);
    Ok(ThermalKernel { environment, bodies })
}

/// Thread-safe memo of kernel sets keyed by (stack, z_A, omega).
#[derive(Debug, Default)]
pub struct KernelCache {
    map: Mutex<HashMap<(u64, u64, u64), Arc<KernelSet>>>,
}

impl KernelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, stack: &LayerStack, z: f64, omega: f64, opts: &QuadOptions) -> Result<Arc<KernelSet>> {
        let key = (stack.fingerprint() ^ opts.rel_tol.to_bits().rotate_left(17), z.to_bits(), omega.to_bits());
        if let Some(v) = self.map.lock().expect("kernel cache poisoned").get(&key) {
            return Ok(v.clone());
        }
        // Computed outside the lock; a racing duplicate is identical.
        let set = Arc::new(kernel_set(stack, z, omega, opts)?);
        Ok(self.map.lock().expect("kernel cache poisoned").entry(key).or_insert(set).clone())
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("kernel cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::{MaterialModel, Oscillator};
    use approx::assert_relative_eq;

    fn opts() -> QuadOptions {
        QuadOptions::with_rel_tol(1e-10)
    }

    fn drude() -> LayerStack {
        LayerStack::half_space(MaterialModel::dielectric(1.0, vec![Oscillator::drude(1.4e16, 1e14)])).unwrap()
    }

    #[test]
    fn photon_number_limits() {
        assert_eq!(photon_number(0.0, 1e14).unwrap(), 0.0);
        let t = 300.0;
        let w = KB * t * 2f64.ln() / HBAR;
        assert_relative_eq!(photon_number(t, w).unwrap(), 1.0, max_relative = 1e-14);
        let w = 1e-6 * KB * t / HBAR;
        // Laurent series 1/x - 1/2 + x/12.
        assert_relative_eq!(photon_number(t, w).unwrap(), 1e6 - 0.5 + 1e-6 / 12.0, max_relative = 1e-12);
        assert!(photon_number(t, 0.0).is_err());
        assert!(photon_number(-1.0, 1.0).is_err());
    }

    #[test]
    fn empty_space_is_all_environment() {
        let w = 2e15;
        let set = kernel_set(&LayerStack::vacuum(), 1e-8, w, &opts()).unwrap();
        let expect = HBAR * MU0 / PI * w * w * w / (6.0 * PI * C);
        assert_relative_eq!(set.environment.xx, expect, max_relative = 1e-14);
        assert_relative_eq!(set.environment.zz, expect, max_relative = 1e-14);
        assert!(set.bodies.iter().all(|b| *b == AbsorptionKernel::default()));
    }
    use crate::constants::C;

    #[test]
    fn matched_absorber_takes_the_lower_half_space() {
        // eps -> 1 + i0: nothing reflects and every downward wave is absorbed;
        // glancing modes leave an O(sqrt(Im eps)) deficit.
        let st = LayerStack::half_space(MaterialModel::Tabulated(crate::material::TabulatedResponse {
            omega: vec![1e10, 1e20],
            eps: vec![Complex64::new(1.0, 1e-14); 2],
            mu: vec![Complex64::new(1.0, 0.0); 2],
        }))
        .unwrap();
        let w = 1e15;
        let set = kernel_set(&st, 1e-6, w, &opts()).unwrap();
        let half = HBAR * MU0 * w.powi(3) / (12.0 * PI * PI * C);
        assert_relative_eq!(set.bodies[0].xx, half, max_relative = 1e-6);
        assert_relative_eq!(set.bodies[0].zz, half, max_relative = 1e-6);
        assert_relative_eq!(set.environment.xx, half, max_relative = 1e-6);
    }

    #[test]
    fn perfect_reflector_has_no_body_noise() {
        let st = LayerStack::half_space(MaterialModel::PerfectReflector).unwrap();
        let set = kernel_set(&st, 3e-7, 2e15, &opts()).unwrap();
        assert_eq!(set.bodies[0], AbsorptionKernel::default());
        assert_eq!(set.environment, set.total);
        assert!(set.total.zz > 0.0);
    }

    #[test]
    fn lossy_half_space_sum_rule_and_psd() {
        let st = drude();
        for z in [1e-8, 1e-7, 1e-6] {
            let set = kernel_set(&st, z, 3e14, &opts()).unwrap();
            assert!(set.psd_violation.is_none(), "{z}: {:?}", set.environment);
            let sum = set.environment.add(&set.bodies[0]);
            assert_relative_eq!(sum.xx, set.total.xx, max_relative = 1e-14);
            assert!(set.bodies[0].xx > 0.0 && set.bodies[0].zz > 0.0);
        }
    }

    #[test]
    fn half_gradient_matches_finite_difference() {
        let st = drude();
        let (z, w) = (5e-8, 3e14);
        let set = kernel_set(&st, z, w, &opts()).unwrap();
        for (pick, an) in [
            (0usize, 2.0 * set.bodies[0].grad1_xx.re),
            (1, 2.0 * set.bodies[0].grad1_zz.re),
            (2, 2.0 * set.total.grad1_zz.re),
        ] {
            let fd = crate::quad::fd_gradient(
                |zz: f64| {
                    let s = kernel_set(&st, zz, w, &opts()).unwrap();
                    [s.bodies[0].xx, s.bodies[0].zz, s.total.zz][pick]
                },
                z,
                1e-10,
            )
            .unwrap();
            assert_relative_eq!(an, fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn uniform_temperature_collapses() {
        let st = drude();
        let set = kernel_set(&st, 1e-7, 3e14, &opts()).unwrap();
        let t = TemperatureField::uniform(400.0, &st).unwrap();
        let n = photon_number(400.0, 3e14).unwrap();
        let tk = thermal_kernel(&set, &t).unwrap().total();
        assert_relative_eq!(tk.xx, n * set.total.xx, max_relative = 1e-14);
        let hot = TemperatureField::new(0.0, vec![400.0]).unwrap();
        let tk = thermal_kernel(&set, &hot).unwrap();
        assert_eq!(tk.environment.xx, 0.0);
        assert_relative_eq!(tk.bodies.zz, n * set.bodies[0].zz, max_relative = 1e-14);
    }

    #[test]
    fn cache_reuses_entries() {
        let st = drude();
        let cache = KernelCache::new();
        let a = cache.get(&st, 1e-7, 3e14, &opts()).unwrap();
        let b = cache.get(&st, 1e-7, 3e14, &opts()).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(cache.len(), 1);
    }
}
