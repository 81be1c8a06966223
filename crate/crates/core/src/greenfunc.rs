//! Dyadic Green tensor of a planar multilayer below a vacuum half-space.
//!
//! Geometry: vacuum for z > 0 (the atom lives there), interface 0 at z = 0,
//! layers stacked downward with the last one semi-infinite.
//!
//! All k-parallel integrals are written in the vertical vacuum wavenumber
//! `kz0 = sqrt(k0^2 - k^2)`, which removes the 1/kz0 branch-point
//! singularity. With `k dk = -kz0 dkz0` the real-k axis maps to the path
//! `kz0: k0 -> 0 -> i inf`, split into a propagating segment `kz0 in (0, k0)`
//! and an evanescent segment `kz0 = i kappa`, `kappa in (0, inf)`. On the
//! imaginary frequency axis only `kappa > xi / c` contributes.

use std::f64::consts::PI;
use std::hash::{Hash, Hasher};

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::constants::C;
use crate::error::{Error, Result};
use crate::material::{MaterialModel, Response};
use crate::quad::{integrate_from, integrate_interval, DVec, QuadOptions, QuadResult};

/// 3x3 complex Green tensor in 1/m.
pub type GreenTensor3 = Matrix3<Complex64>;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub material: MaterialModel,
    /// Thickness in m; `None` marks the semi-infinite bottom layer.
    pub thickness: Option<f64>,
}

/// Ordered layers from the top interface downward.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    layers: Vec<Layer>,
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("layer stack needs at least one layer".into()));
        }
        let last = layers.len() - 1;
        for (i, l) in layers.iter().enumerate() {
            l.material.validate()?;
            match (i == last, l.thickness) {
                (true, None) => {}
                (true, Some(_)) => {
                    return Err(Error::InvalidInput("bottom layer must be semi-infinite (no thickness)".into()))
                }
                (false, Some(d)) if d > 0.0 && d.is_finite() => {}
                (false, _) => {
                    return Err(Error::InvalidInput(format!("layer {i} needs a finite positive thickness")))
                }
            }
        }
        Ok(Self { layers })
    }

    /// Empty space: a vacuum half-space below the interface.
    pub fn vacuum() -> Self {
        Self { layers: vec![Layer { material: MaterialModel::Vacuum, thickness: None }] }
    }

    pub fn half_space(material: MaterialModel) -> Result<Self> {
        Self::new(vec![Layer { material, thickness: None }])
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Layers that take part in the optics: everything down to and including
    /// the first perfect reflector.
    fn optical_layers(&self) -> &[Layer] {
        match self.layers.iter().position(|l| l.material.is_perfect_reflector()) {
            Some(i) => &self.layers[..=i],
            None => &self.layers,
        }
    }

    /// Stable fingerprint used as a cache key.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        format!("{:?}", self.layers).hash(&mut h);
        h.finish()
    }

    /// True when no layer differs from vacuum.
    pub fn is_vacuum(&self) -> bool {
        self.layers.iter().all(|l| matches!(l.material, MaterialModel::Vacuum))
    }
}

/// Vertical wavenumber with the branch Im kz >= 0, ties broken by Re kz >= 0.
pub fn kz_branch(kz_sq: Complex64) -> Complex64 {
    let r = kz_sq.sqrt();
    if r.im < 0.0 || (r.im == 0.0 && r.re < 0.0) {
        -r
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarization {
    S,
    P,
}

/// Field amplitudes of one polarisation inside one material layer, for a
/// unit-amplitude wave incident from the vacuum side. The tangential field
/// is `U(z) = down * exp(-i kz (z - z_top)) + up * exp(i kz (z - z_top))`;
/// `U` is E_y for s and H_y for p.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveAmplitudes {
    pub down: Complex64,
    pub up: Complex64,
    /// Up/down ratio just above the layer bottom (0 when semi-infinite).
    pub bottom: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerMode {
    pub kz: Complex64,
    pub response: Response,
    /// z coordinate of the layer top (<= 0) and its thickness.
    pub z_top: f64,
    pub thickness: Option<f64>,
    pub s: WaveAmplitudes,
    pub p: WaveAmplitudes,
    pub perfect_reflector: bool,
}

/// Plane-wave solution of the stack for one (omega, kz0).
#[derive(Debug, Clone, PartialEq)]
pub struct Modes {
    pub omega: Complex64,
    pub kz0: Complex64,
    pub k0_sq: Complex64,
    pub r_s: Complex64,
    pub r_p: Complex64,
    pub layers: Vec<LayerMode>,
}

/// Surface admittance-like quantity: kz/mu for s, kz/eps for p.
fn admittance(pol: Polarization, kz: Complex64, r: &Response) -> Complex64 {
    match pol {
        Polarization::S => kz / r.mu,
        Polarization::P => kz / r.eps,
    }
}

fn interface_r(qa: Complex64, qb: Complex64) -> Complex64 {
    (qa - qb) / (qa + qb)
}

struct Recursion {
    /// Generalised reflection at each layer top (up/down ratio).
    top: Vec<Complex64>,
    /// Local reflection at each layer bottom.
    bottom: Vec<Complex64>,
    /// Interface coefficient between layer j and j+1 (last entry unused).
    interface: Vec<Complex64>,
    r: Complex64,
    r01: Complex64,
}

fn recursion(pol: Polarization, kz0: Complex64, kzs: &[Complex64], resp: &[Response], layers: &[Layer], pr: bool) -> Recursion {
    let n = kzs.len();
    let q: Vec<Complex64> = kzs.iter().zip(resp).map(|(k, r)| admittance(pol, *k, r)).collect();
    let mut top = vec![c(0.0); n];
    let mut bottom = vec![c(0.0); n];
    let mut interface = vec![c(0.0); n];
    let pr_r = match pol {
        Polarization::S => c(-1.0),
        Polarization::P => c(1.0),
    };
    // Layer n-1 is semi-infinite, or a perfect reflector whose surface
    // terminates the recursion.
    let start = if pr { n - 1 } else { n };
    for j in (0..start).rev() {
        if j + 1 == n {
            top[j] = c(0.0);
            continue;
        }
        let rho = if pr && j + 1 == n - 1 {
            interface[j] = pr_r;
            pr_r
        } else {
            let rab = interface_r(q[j], q[j + 1]);
            interface[j] = rab;
            (rab + top[j + 1]) / (c(1.0) + rab * top[j + 1])
        };
        bottom[j] = rho;
        let d = layers[j].thickness.unwrap_or(0.0);
        top[j] = rho * (2.0 * I * kzs[j] * d).exp();
    }
    let q0 = admittance(pol, kz0, &Response { eps: c(1.0), mu: c(1.0) });
    let (r01, r) = if pr && n == 1 {
        (pr_r, pr_r)
    } else {
        let r01 = interface_r(q0, q[0]);
        (r01, (r01 + top[0]) / (c(1.0) + r01 * top[0]))
    };
    Recursion { top, bottom, interface, r, r01 }
}

impl Modes {
    /// Solves the stack at complex frequency `omega` for vacuum vertical
    /// wavenumber `kz0` (any point of the integration path).
    pub fn solve(stack: &LayerStack, omega: Complex64, kz0: Complex64) -> Self {
        Self::solve_inner(stack, omega, kz0, true)
    }

    fn solve_inner(stack: &LayerStack, omega: Complex64, kz0: Complex64, amplitudes: bool) -> Self {
        let layers = stack.optical_layers();
        let k0 = omega / C;
        let k0_sq = k0 * k0;
        let pr = layers.last().map(|l| l.material.is_perfect_reflector()).unwrap_or(false);
        let resp: Vec<Response> = layers.iter().map(|l| l.material.response(omega)).collect();
        let kzs: Vec<Complex64> = resp
            .iter()
            .zip(layers)
            .map(|(r, l)| {
                if matches!(l.material, MaterialModel::Vacuum) || l.material.is_perfect_reflector() {
                    kz0
                } else {
                    kz_branch((r.eps * r.mu - 1.0) * k0_sq + kz0 * kz0)
                }
            })
            .collect();
        let rs = recursion(Polarization::S, kz0, &kzs, &resp, layers, pr);
        let rp = recursion(Polarization::P, kz0, &kzs, &resp, layers, pr);
        let mut out = Vec::new();
        if amplitudes {
            let mut z_top = 0.0;
            let (mut a_s, mut a_p) = (c(0.0), c(0.0));
            for (j, l) in layers.iter().enumerate() {
                if l.material.is_perfect_reflector() {
                    out.push(LayerMode {
                        kz: kzs[j],
                        response: resp[j],
                        z_top,
                        thickness: l.thickness,
                        s: WaveAmplitudes { down: c(0.0), up: c(0.0), bottom: c(0.0) },
                        p: WaveAmplitudes { down: c(0.0), up: c(0.0), bottom: c(0.0) },
                        perfect_reflector: true,
                    });
                    break;
                }
                if j == 0 {
                    a_s = (c(1.0) + rs.r01) / (c(1.0) + rs.r01 * rs.top[0]);
                    a_p = (c(1.0) + rp.r01) / (c(1.0) + rp.r01 * rp.top[0]);
                } else {
                    let d = layers[j - 1].thickness.unwrap_or(0.0);
                    let ph = (I * kzs[j - 1] * d).exp();
                    let (ris, rip) = (rs.interface[j - 1], rp.interface[j - 1]);
                    a_s = a_s * ph * (c(1.0) + ris) / (c(1.0) + ris * rs.top[j]);
                    a_p = a_p * ph * (c(1.0) + rip) / (c(1.0) + rip * rp.top[j]);
                    z_top -= d;
                }
                out.push(LayerMode {
                    kz: kzs[j],
                    response: resp[j],
                    z_top,
                    thickness: l.thickness,
                    s: WaveAmplitudes { down: a_s, up: a_s * rs.top[j], bottom: rs.bottom[j] },
                    p: WaveAmplitudes { down: a_p, up: a_p * rp.top[j], bottom: rp.bottom[j] },
                    perfect_reflector: false,
                });
            }
        }
        Modes { omega, kz0, k0_sq, r_s: rs.r, r_p: rp.r, layers: out }
    }

    /// Reflection coefficients only.
    pub fn reflection(stack: &LayerStack, omega: Complex64, kz0: Complex64) -> (Complex64, Complex64) {
        let m = Self::solve_inner(stack, omega, kz0, false);
        (m.r_s, m.r_p)
    }
}

/// Stack reflection coefficients and top-interface transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fresnel {
    pub r_s: Complex64,
    pub r_p: Complex64,
    /// Tangential-field transmission into the top layer, 1 + r at the interface.
    pub t_s: Complex64,
    pub t_p: Complex64,
}

/// Reflection of the whole stack for in-plane wavenumber `kpar`.
pub fn fresnel(stack: &LayerStack, omega: Complex64, kpar: f64) -> Result<Fresnel> {
    if omega == c(0.0) || !(kpar >= 0.0) {
        return Err(Error::InvalidInput("fresnel needs omega != 0 and kpar >= 0".into()));
    }
    let k0 = omega / C;
    let kz0 = kz_branch(k0 * k0 - kpar * kpar);
    let m = Modes::solve(stack, omega, kz0);
    let (t_s, t_p) = match m.layers.first() {
        Some(l) if !l.perfect_reflector => (l.s.down + l.s.up, l.p.down + l.p.up),
        _ => (c(0.0), c(0.0)),
    };
    Ok(Fresnel { r_s: m.r_s, r_p: m.r_p, t_s, t_p })
}

/// A node of the k-parallel integration path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralPoint {
    pub kz0: Complex64,
    pub k0_sq: Complex64,
    /// Jacobian such that `int_0^inf dk k/kz0 phi = sum measure * phi dparam`.
    pub measure: Complex64,
    pub propagating: bool,
}

impl SpectralPoint {
    pub fn kpar_sq(&self) -> Complex64 {
        self.k0_sq - self.kz0 * self.kz0
    }

    /// Jacobian for `int_0^inf dk k phi`.
    pub fn k_measure(&self) -> Complex64 {
        self.kz0 * self.measure
    }
}

/// Near-grazing scales `sqrt|eps mu - 1|` of the layers, where the
/// reflection coefficients vary on a width set by the index contrast.
fn contrast_scales(stack: &LayerStack, omega: Complex64) -> Vec<f64> {
    stack
        .optical_layers()
        .iter()
        .filter(|l| !l.material.is_perfect_reflector())
        .map(|l| {
            let r = l.material.response(omega);
            (r.eps * r.mu - 1.0).norm().sqrt()
        })
        .filter(|v| v.is_finite() && *v > 0.0)
        .collect()
}

fn evanescent_breakpoints(stack: &LayerStack, omega: Complex64, z: f64) -> Vec<f64> {
    let k0 = (omega / C).norm();
    let mut pts = vec![k0, 0.5 / z, 2.0 / z, 8.0 / z];
    for v in contrast_scales(stack, omega) {
        pts.push(k0 * v);
        pts.push(k0 * v.min(1.0) * 0.1);
    }
    for l in stack.optical_layers() {
        if l.material.is_perfect_reflector() {
            continue;
        }
        let r = l.material.response(omega);
        let n = (r.eps * r.mu).norm().sqrt();
        if n.is_finite() && n > 1.0 {
            pts.push(k0 * n);
        }
        if let Some(d) = l.thickness {
            pts.push(0.5 / d);
        }
    }
    pts.retain(|p| p.is_finite() && *p > 0.0);
    pts
}

/// Integrates `f` along the k-parallel path at height `z` and frequency
/// `omega`, summing both segments. `f` returns real components.
pub fn spectral_integrate<F: FnMut(&SpectralPoint) -> DVec>(
    stack: &LayerStack,
    z: f64,
    omega: Complex64,
    opts: &QuadOptions,
    mut f: F,
) -> QuadResult<DVec> {
    let k0 = omega / C;
    let k0_sq = k0 * k0;
    let imaginary = omega.re == 0.0;
    let kappa_min = if imaginary { omega.im / C } else { 0.0 };
    let bps = evanescent_breakpoints(stack, omega, z);
    let evan = integrate_from(
        |kappa: f64| {
            f(&SpectralPoint { kz0: I * kappa, k0_sq, measure: -I, propagating: false })
        },
        kappa_min,
        0.5 / z,
        &bps,
        opts,
    );
    if imaginary {
        return evan;
    }
    // Propagating segment kz0 = s k0, s in (0, 1), dkz0 = k0 ds.
    let cycles = (k0.norm() * z / PI).ceil();
    let mut bp: Vec<f64> = if cycles > 1.0 {
        let n = cycles.min(4000.0) as usize;
        (1..n).map(|i| i as f64 / n as f64).collect()
    } else {
        Vec::new()
    };
    for v in contrast_scales(stack, omega) {
        bp.extend([v, 0.1 * v].into_iter().filter(|s| *s < 1.0));
    }
    let prop = integrate_interval(
        |s: f64| f(&SpectralPoint { kz0: k0 * s, k0_sq, measure: k0, propagating: true }),
        0.0,
        1.0,
        &bp,
        opts,
    );
    QuadResult {
        value: prop.value + evan.value,
        abs_error: prop.abs_error + evan.abs_error,
        evaluations: prop.evaluations + evan.evaluations,
        converged: prop.converged && evan.converged,
    }
}

/// Coincidence tensor `diag(xx, xx, zz)` of a planar problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagTensor {
    pub xx: Complex64,
    pub zz: Complex64,
}

impl DiagTensor {
    pub fn zero() -> Self {
        Self { xx: c(0.0), zz: c(0.0) }
    }

    pub fn tensor(&self) -> GreenTensor3 {
        let z = c(0.0);
        Matrix3::new(self.xx, z, z, z, self.xx, z, z, z, self.zz)
    }

    /// `d* . T . d` weighted by in-plane and vertical dipole strengths.
    pub fn contract(&self, w_par: f64, w_z: f64) -> Complex64 {
        self.xx * w_par + self.zz * w_z
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self { xx: self.xx * s, zz: self.zz * s }
    }

    pub fn re(&self) -> Self {
        Self { xx: c(self.xx.re), zz: c(self.zz.re) }
    }

    pub fn im(&self) -> Self {
        Self { xx: c(self.xx.im), zz: c(self.zz.im) }
    }
}

/// Scattering Green tensor at coincidence with its z-derivative and an
/// error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoincidentGreen {
    pub value: DiagTensor,
    /// d/dz_A of the coincidence tensor.
    pub grad_z: DiagTensor,
    pub abs_error: f64,
    pub converged: bool,
}

fn check_height(z: f64) -> Result<()> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::InvalidPosition(z));
    }
    Ok(())
}

/// Spectral integrand of G^(1)(z, z, omega) per unit `measure`:
/// (xx, zz) = (i/8pi)(r_s - kz0^2/k0^2 r_p), (i/4pi)(1 - kz0^2/k0^2) r_p,
/// times exp(2 i kz0 z).
fn g1_integrand(p: &SpectralPoint, r_s: Complex64, r_p: Complex64, z: f64) -> (Complex64, Complex64) {
    let ratio = p.kz0 * p.kz0 / p.k0_sq;
    let ph = (2.0 * I * p.kz0 * z).exp();
    let xx = I / (8.0 * PI) * (r_s - ratio * r_p) * ph;
    let zz = I / (4.0 * PI) * (c(1.0) - ratio) * r_p * ph;
    (xx, zz)
}

/// G^(1)(r_A, r_A, omega) and d/dz_A of it for any omega off the imaginary
/// axis (real, or complex in the upper half plane).
pub fn scattering_green(stack: &LayerStack, z: f64, omega: Complex64, opts: &QuadOptions) -> Result<CoincidentGreen> {
    check_height(z)?;
    if omega.re == 0.0 {
        return scattering_green_imag(stack, z, omega.im, opts);
    }
    if stack.is_vacuum() {
        return Ok(CoincidentGreen { value: DiagTensor::zero(), grad_z: DiagTensor::zero(), abs_error: 0.0, converged: true });
    }
    let r = spectral_integrate(stack, z, omega, opts, |p| {
        let (r_s, r_p) = Modes::reflection(stack, omega, p.kz0);
        let (xx, zz) = g1_integrand(p, r_s, r_p, z);
        let (xx, zz) = (xx * p.measure, zz * p.measure);
        // Gradient carried times z to share units with the value.
        let d = 2.0 * I * p.kz0 * z;
        let (gx, gz) = (xx * d, zz * d);
        DVec(vec![xx.re, xx.im, zz.re, zz.im, gx.re, gx.im, gz.re, gz.im])
    });
    let v = &r.value.0;
    Ok(CoincidentGreen {
        value: DiagTensor { xx: Complex64::new(v[0], v[1]), zz: Complex64::new(v[2], v[3]) },
        grad_z: DiagTensor { xx: Complex64::new(v[4], v[5]) / z, zz: Complex64::new(v[6], v[7]) / z },
        abs_error: r.abs_error,
        converged: r.converged,
    })
}

/// Real-frequency convenience wrapper returning the tensor.
pub fn scattering_green_coincident(stack: &LayerStack, z: f64, omega: Complex64, opts: &QuadOptions) -> Result<GreenTensor3> {
    Ok(scattering_green(stack, z, omega, opts)?.value.tensor())
}

pub fn scattering_green_grad_z(stack: &LayerStack, z: f64, omega: Complex64, opts: &QuadOptions) -> Result<GreenTensor3> {
    Ok(scattering_green(stack, z, omega, opts)?.grad_z.tensor())
}

/// `xi^2 G^(1)(r_A, r_A, i xi)` and its z-derivative, finite as xi -> 0.
///
/// xi^2 G_xx = (1/8pi) int_{xi/c} dkappa (xi^2 r_s - c^2 kappa^2 r_p) e^{-2 kappa z},
/// xi^2 G_zz = -(1/4pi) int_{xi/c} dkappa c^2 (kappa^2 - xi^2/c^2) r_p e^{-2 kappa z}.
pub fn xi2_scattering_green_imag(stack: &LayerStack, z: f64, xi: f64, opts: &QuadOptions) -> Result<CoincidentGreen> {
    check_height(z)?;
    if !(xi >= 0.0) {
        return Err(Error::InvalidInput(format!("imaginary frequency must be >= 0, got {xi}")));
    }
    if stack.is_vacuum() {
        return Ok(CoincidentGreen { value: DiagTensor::zero(), grad_z: DiagTensor::zero(), abs_error: 0.0, converged: true });
    }
    if xi == 0.0 {
        // The reflection coefficients are singular at omega = 0 for
        // conductors; take the limit by linear extrapolation from a
        // frequency far below every retardation and material scale.
        let h = 1e-6 * C / z;
        let a = xi2_green_imag_positive(stack, z, h, opts);
        let b = xi2_green_imag_positive(stack, z, 0.5 * h, opts);
        let ex = |u: &DiagTensor, v: &DiagTensor| DiagTensor { xx: 2.0 * v.xx - u.xx, zz: 2.0 * v.zz - u.zz };
        return Ok(CoincidentGreen {
            value: ex(&a.value, &b.value),
            grad_z: ex(&a.grad_z, &b.grad_z),
            abs_error: 2.0 * b.abs_error + a.abs_error,
            converged: a.converged && b.converged,
        });
    }
    Ok(xi2_green_imag_positive(stack, z, xi, opts))
}

fn xi2_green_imag_positive(stack: &LayerStack, z: f64, xi: f64, opts: &QuadOptions) -> CoincidentGreen {
    let omega = Complex64::new(0.0, xi);
    let xi2 = xi * xi;
    let kmin = xi / C;
    if 2.0 * kmin * z > 1400.0 {
        // exp(-2 kappa z) underflows over the whole range.
        return CoincidentGreen { value: DiagTensor::zero(), grad_z: DiagTensor::zero(), abs_error: 0.0, converged: true };
    }
    let bps: Vec<f64> = evanescent_breakpoints(stack, omega, z).into_iter().filter(|p| *p > kmin).collect();
    let r = integrate_from(
        |kappa: f64| {
            let (r_s, r_p) = Modes::reflection(stack, omega, I * kappa);
            let (r_s, r_p) = (r_s.re, r_p.re);
            let e = (-2.0 * kappa * z).exp();
            let xx = (xi2 * r_s - C * C * kappa * kappa * r_p) * e / (8.0 * PI);
            let zz = -C * C * (kappa * kappa - kmin * kmin) * r_p * e / (4.0 * PI);
            DVec(vec![xx, zz, -2.0 * kappa * z * xx, -2.0 * kappa * z * zz])
        },
        kmin,
        0.5 / z,
        &bps,
        opts,
    );
    let v = &r.value.0;
    CoincidentGreen {
        value: DiagTensor { xx: c(v[0]), zz: c(v[1]) },
        grad_z: DiagTensor { xx: c(v[2] / z), zz: c(v[3] / z) },
        abs_error: r.abs_error,
        converged: r.converged,
    }
}

/// G^(1)(r_A, r_A, i xi) for xi > 0 (real-valued).
pub fn scattering_green_imag(stack: &LayerStack, z: f64, xi: f64, opts: &QuadOptions) -> Result<CoincidentGreen> {
    if !(xi > 0.0) {
        return Err(Error::InvalidInput(format!("imaginary frequency must be > 0, got {xi}")));
    }
    let r = xi2_scattering_green_imag(stack, z, xi, opts)?;
    let s = c(1.0 / (xi * xi));
    Ok(CoincidentGreen { value: r.value.scale(s), grad_z: r.grad_z.scale(s), ..r })
}

/// Im of the free-space Green tensor at coincidence, omega / (6 pi c) per axis.
pub fn im_green_vacuum(omega: f64) -> f64 {
    omega / (6.0 * PI * C)
}

/// Im G(r_A, r_A, omega) = Im G_vac + Im G^(1); real symmetric.
pub fn im_green_coincident(stack: &LayerStack, z: f64, omega: f64, opts: &QuadOptions) -> Result<Matrix3<f64>> {
    if !(omega > 0.0) {
        return Err(Error::InvalidInput(format!("frequency must be positive, got {omega}")));
    }
    let g = scattering_green(stack, z, c(omega), opts)?.value;
    let v = im_green_vacuum(omega);
    Ok(Matrix3::from_diagonal(&nalgebra::Vector3::new(v + g.xx.im, v + g.xx.im, v + g.zz.im)))
}

/// Weyl component of G(s, r_A, omega) for a source point `s` at depth
/// `z_s` inside an absorbing layer and in-plane wavevector (kx, ky):
/// `G(s, r_A) = int d^2k / (2 pi)^2 M(k) exp(i k . (rho_s - rho_A))`.
pub fn transmission_green(
    stack: &LayerStack,
    z_a: f64,
    z_s: f64,
    kx: f64,
    ky: f64,
    omega: f64,
) -> Result<GreenTensor3> {
    check_height(z_a)?;
    let modes = Modes::solve(
        stack,
        c(omega),
        kz_branch(c((omega / C).powi(2) - kx * kx - ky * ky)),
    );
    let layer = layer_at(&modes, z_s)?;
    if !(layer.response.eps.im > 0.0 || layer.response.mu.im > 0.0) {
        return Err(Error::InvalidInput(format!("source depth {z_s} m lies in a lossless layer")));
    }
    Ok(transmission_tensor(&modes, layer, z_a, z_s, kx, ky))
}

/// Finds the material layer containing depth `z_s < 0`.
pub fn layer_at(modes: &Modes, z_s: f64) -> Result<&LayerMode> {
    if !(z_s < 0.0) {
        return Err(Error::InvalidInput(format!("source depth must be below the interface, got {z_s}")));
    }
    modes
        .layers
        .iter()
        .find(|l| !l.perfect_reflector && (l.thickness.is_none() || z_s >= l.z_top - l.thickness.unwrap()))
        .ok_or_else(|| Error::InvalidInput(format!("depth {z_s} m is not inside a material layer")))
}

/// Tangential field U and dU/dz of one polarisation at depth z inside `layer`.
pub fn layer_field(layer: &LayerMode, amp: &WaveAmplitudes, z: f64) -> (Complex64, Complex64) {
    let dz = z - layer.z_top;
    let down = amp.down * (-I * layer.kz * dz).exp();
    let up = amp.up * (I * layer.kz * dz).exp();
    (down + up, -I * layer.kz * (down - up))
}

/// U and dU/dz just above the bottom of a finite layer, written without
/// the growing exponential so that thick evanescent layers stay finite.
pub fn layer_field_bottom(layer: &LayerMode, amp: &WaveAmplitudes) -> Option<(Complex64, Complex64)> {
    let d = layer.thickness?;
    let down = amp.down * (I * layer.kz * d).exp();
    Some((down * (1.0 + amp.bottom), -I * layer.kz * down * (1.0 - amp.bottom)))
}

fn transmission_tensor(modes: &Modes, layer: &LayerMode, z_a: f64, z_s: f64, kx: f64, ky: f64) -> GreenTensor3 {
    use crate::constants::{EPS0, MU0};
    let omega = modes.omega;
    let k0 = omega / C;
    let kz0 = modes.kz0;
    let k = (kx * kx + ky * ky).sqrt();
    let (cph, sph) = if k > 0.0 { (kx / k, ky / k) } else { (1.0, 0.0) };
    let khat = nalgebra::Vector3::new(c(cph), c(sph), c(0.0));
    let shat = nalgebra::Vector3::new(c(-sph), c(cph), c(0.0));
    let zhat = nalgebra::Vector3::new(c(0.0), c(0.0), c(1.0));
    let phat = (khat * kz0 + zhat * c(k)) / k0;
    let (us, _) = layer_field(layer, &layer.s, z_s);
    // p: unit incident E amplitude carries H = -(1/(mu0 c)) s-hat.
    let (up, dup) = layer_field(layer, &layer.p, z_s);
    let h = -1.0 / (MU0 * C);
    let (up, dup) = (up * h, dup * h);
    let e_s = shat * us;
    let e_p = (zhat * (I * k * up) - khat * dup) / (-I * omega * EPS0 * layer.response.eps);
    let pref = I / (2.0 * kz0) * (I * kz0 * z_a).exp();
    (e_s * shat.transpose() + e_p * phat.transpose()) * pref
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::Oscillator;
    use approx::assert_relative_eq;

    fn opts() -> QuadOptions {
        QuadOptions::with_rel_tol(1e-10)
    }

    fn dielectric(eps: f64) -> MaterialModel {
        MaterialModel::dielectric(eps, vec![])
    }

    #[test]
    fn normal_incidence_fresnel() {
        let st = LayerStack::half_space(dielectric(4.0)).unwrap();
        let f = fresnel(&st, c(1e15), 0.0).unwrap();
        assert_relative_eq!(f.r_s.re, -1.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(f.r_p.re, 1.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(f.t_s.re, 1.0 + f.r_s.re, epsilon = 1e-14);
    }

    #[test]
    fn perfect_reflector_limits() {
        let st = LayerStack::half_space(MaterialModel::PerfectReflector).unwrap();
        let f = fresnel(&st, c(1e15), 1e6).unwrap();
        assert_eq!(f.r_s, c(-1.0));
        assert_eq!(f.r_p, c(1.0));
        let big = LayerStack::half_space(dielectric(1e12)).unwrap();
        let f = fresnel(&big, c(1e15), 1e6).unwrap();
        assert!((f.r_s + 1.0).norm() < 1e-5 && (f.r_p - 1.0).norm() < 1e-5);
    }

    #[test]
    fn no_contrast_has_no_reflection() {
        let st = LayerStack::half_space(dielectric(1.0)).unwrap();
        for k in [0.0, 1e6, 1e8] {
            let f = fresnel(&st, c(2e15), k).unwrap();
            assert!(f.r_s.norm() < 1e-15 && f.r_p.norm() < 1e-15);
        }
        let g = scattering_green_coincident(&LayerStack::vacuum(), 1e-8, c(1e15), &opts()).unwrap();
        assert_eq!(g, GreenTensor3::zeros());
    }

    #[test]
    fn thin_layer_matches_airy_formula() {
        let eps = 2.25;
        let d = 1e-7;
        let w = 3e15;
        let st = LayerStack::new(vec![
            Layer { material: dielectric(eps), thickness: Some(d) },
            Layer { material: MaterialModel::Vacuum, thickness: None },
        ])
        .unwrap();
        let f = fresnel(&st, c(w), 0.0).unwrap();
        let n = eps.sqrt();
        let r01 = (1.0 - n) / (1.0 + n);
        let ph = (2.0 * I * n * w / C * d).exp();
        let expected = (r01 - r01 * ph) / (c(1.0) - r01 * r01 * ph);
        assert_relative_eq!(f.r_s.re, expected.re, epsilon = 1e-13);
        assert_relative_eq!(f.r_s.im, expected.im, epsilon = 1e-13);
    }

    #[test]
    fn branch_is_decaying() {
        assert!(kz_branch(Complex64::new(-4.0, 0.0)).im > 0.0);
        assert_eq!(kz_branch(c(4.0)), c(2.0));
        assert!(kz_branch(Complex64::new(-1.0, -1e-3)).im >= 0.0);
        assert!(kz_branch(Complex64::new(1.0, -1e-3)).im >= 0.0);
    }

    #[test]
    fn perfect_reflector_nonretarded_image_dipole() {
        let st = LayerStack::half_space(MaterialModel::PerfectReflector).unwrap();
        let (z, w) = (1e-9, 1e14);
        let g = scattering_green(&st, z, c(w), &opts()).unwrap();
        let base = C * C / (32.0 * PI * w * w * z.powi(3));
        assert_relative_eq!(g.value.xx.re, base, max_relative = 1e-4);
        assert_relative_eq!(g.value.zz.re, 2.0 * base, max_relative = 1e-4);
        assert_relative_eq!(g.grad_z.xx.re, -3.0 * base / z, max_relative = 1e-4);
        assert_relative_eq!(g.grad_z.zz.re, -6.0 * base / z, max_relative = 1e-4);
        let t = g.value.tensor();
        assert_eq!(t[(0, 1)], c(0.0));
        assert_eq!(t[(0, 2)], c(0.0));
    }

    #[test]
    fn imaginary_axis_matches_real_axis_continuation() {
        // Exact closed forms for a perfect reflector at imaginary frequency.
        let st = LayerStack::half_space(MaterialModel::PerfectReflector).unwrap();
        let (z, xi) = (1e-7, 2e15);
        let g = scattering_green_imag(&st, z, xi, &opts()).unwrap().value;
        let a = 2.0 * xi * z / C;
        let e = (-a).exp();
        // Standard results: G_xx = -(c^2 e^{-a}/(32 pi xi^2 z^3))(1 + a + a^2),
        // G_zz = -(c^2 e^{-a}/(16 pi xi^2 z^3))(1 + a).
        let pre = C * C / (32.0 * PI * xi * xi * z.powi(3));
        assert_relative_eq!(g.xx.re, -pre * e * (1.0 + a + a * a), max_relative = 1e-8);
        assert_relative_eq!(g.zz.re, -2.0 * pre * e * (1.0 + a), max_relative = 1e-8);
        assert_eq!(g.xx.im, 0.0);
    }

    #[test]
    fn complex_frequency_is_continuous() {
        let st = LayerStack::half_space(MaterialModel::dielectric(
            1.0,
            vec![Oscillator::lorentz(1e16, 5e15, 1e14)],
        ))
        .unwrap();
        let z = 2e-8;
        let a = scattering_green(&st, z, c(3e15), &opts()).unwrap().value;
        let b = scattering_green(&st, z, Complex64::new(3e15, 1e6), &opts()).unwrap().value;
        assert_relative_eq!(a.xx.re, b.xx.re, max_relative = 1e-6);
        assert_relative_eq!(a.zz.im, b.zz.im, max_relative = 1e-6);
    }

    #[test]
    fn vacuum_imaginary_part_and_far_field() {
        let w = 2e15;
        let st = LayerStack::vacuum();
        let m = im_green_coincident(&st, 1e-7, w, &opts()).unwrap();
        assert_relative_eq!(m[(0, 0)], w / (6.0 * PI * C), max_relative = 1e-14);
        let past = LayerStack::half_space(dielectric(3.0)).unwrap();
        // k0 z = 200: the reflected part is down by ~1/(k0 z).
        let far = im_green_coincident(&past, 3e-5, w, &opts()).unwrap();
        assert_relative_eq!(far[(2, 2)], w / (6.0 * PI * C), max_relative = 5e-3);
    }

    #[test]
    fn gradient_rejects_bad_height() {
        let st = LayerStack::vacuum();
        assert!(matches!(scattering_green(&st, 0.0, c(1e15), &opts()), Err(Error::InvalidPosition(_))));
        assert!(scattering_green(&st, -1.0, c(1e15), &opts()).is_err());
    }

    #[test]
    fn stack_validation() {
        assert!(LayerStack::new(vec![]).is_err());
        assert!(LayerStack::new(vec![Layer { material: MaterialModel::Vacuum, thickness: Some(1.0) }]).is_err());
        assert!(LayerStack::new(vec![
            Layer { material: MaterialModel::Vacuum, thickness: Some(-1.0) },
            Layer { material: MaterialModel::Vacuum, thickness: None },
        ])
        .is_err());
    }

    fn lossy(eps_im: f64) -> LayerStack {
        LayerStack::half_space(MaterialModel::Tabulated(crate::material::TabulatedResponse {
            omega: vec![1e10, 1e20],
            eps: vec![Complex64::new(1.0, eps_im); 2],
            mu: vec![c(1.0); 2],
        }))
        .unwrap()
    }

    #[test]
    fn transmission_no_contrast_is_free_propagation() {
        let st = lossy(1e-12);
        let w = 1e15;
        let (za, zs, kx) = (1e-7, -2e-7, 1e6);
        let m = transmission_green(&st, za, zs, kx, 0.0, w).unwrap();
        let k0 = w / C;
        let kz0 = kz_branch(c(k0 * k0 - kx * kx));
        let free = I / (2.0 * kz0) * (I * kz0 * (za - zs)).exp();
        // s-projection along y for in-plane k along x: s-hat = y-hat.
        assert_relative_eq!(m[(1, 1)].re, free.re, max_relative = 1e-9);
        assert_relative_eq!(m[(1, 1)].im, free.im, max_relative = 1e-9);
    }

    #[test]
    fn transmission_continuity_and_decay() {
        let st = lossy(0.5);
        let w = 1e15;
        let kz0 = c(0.6 * w / C);
        let k = (w / C) * 0.8;
        let modes = Modes::solve(&st, c(w), kz0);
        let l = &modes.layers[0];
        let (u, _) = layer_field(l, &l.s, -1e-300);
        assert!((u - (c(1.0) + modes.r_s)).norm() < 1e-12);
        let a = transmission_green(&st, 1e-7, -1e-8, k, 0.0, w).unwrap()[(1, 1)].norm();
        let b = transmission_green(&st, 1e-7, -2e-8, k, 0.0, w).unwrap()[(1, 1)].norm();
        assert_relative_eq!(b / a, (-l.kz.im * 1e-8).exp(), max_relative = 1e-10);
        assert!(transmission_green(&st, 1e-7, 1e-8, k, 0.0, w).is_err());
        assert!(transmission_green(&LayerStack::vacuum(), 1e-7, -1e-8, k, 0.0, w).is_err());
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let st = LayerStack::new(vec![
            Layer { material: MaterialModel::dielectric(2.0, vec![Oscillator::lorentz(8e15, 3e15, 3e14)]), thickness: Some(3e-8) },
            Layer { material: MaterialModel::dielectric(1.0, vec![Oscillator::drude(1.4e16, 1e14)]), thickness: None },
        ])
        .unwrap();
        let (z, w) = (4e-8, Complex64::new(2.5e15, 0.0));
        let g = scattering_green(&st, z, w, &opts()).unwrap();
        let fd = crate::quad::fd_gradient(
            |zz: f64| {
                let v = scattering_green(&st, zz, w, &opts()).unwrap().value;
                Complex64::new(v.xx.re, v.zz.im)
            },
            z,
            1e-10,
        )
        .unwrap();
        assert_relative_eq!(g.grad_z.xx.re, fd.re, max_relative = 1e-6);
        assert_relative_eq!(g.grad_z.zz.im, fd.im, max_relative = 1e-6);
    }

    #[test]
    fn imaginary_part_is_positive() {
        let st = LayerStack::half_space(MaterialModel::dielectric(1.0, vec![Oscillator::drude(1.4e16, 1e14)])).unwrap();
        for z in [1e-9, 1e-8, 1e-7, 1e-6] {
            let m = im_green_coincident(&st, z, 3e15, &opts()).unwrap();
            assert!(m[(0, 0)] > 0.0 && m[(2, 2)] > 0.0);
        }
    }
}
