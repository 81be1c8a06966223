//! Deterministic integration and summation primitives.
//!
//! Everything here is built on a globally adaptive 21-point Gauss-Kronrod
//! rule. Vector-valued integrands share one set of nodes so that
//! differences of their components (the remainder kernels in
//! [`crate::thermalenv`]) cancel node by node.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::constants::{HBAR, KB};
use crate::error::{Error, Result};

/// Values that can be integrated: a real vector space with inspectable
/// real components.
pub trait QuadValue: Clone + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {
    /// Number of real components.
    fn dim(&self) -> usize;
    fn component(&self, i: usize) -> f64;
}

impl QuadValue for f64 {
    fn dim(&self) -> usize {
        1
    }
    fn component(&self, _: usize) -> f64 {
        *self
    }
}

impl QuadValue for Complex64 {
    fn dim(&self) -> usize {
        2
    }
    fn component(&self, i: usize) -> f64 {
        if i == 0 {
            self.re
        } else {
            self.im
        }
    }
}

/// Runtime-length real vector used to integrate several quantities on one
/// node set.
#[derive(Debug, Clone, PartialEq)]
pub struct DVec(pub Vec<f64>);

impl Add for DVec {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
        self
    }
}

impl Sub for DVec {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a -= b;
        }
        self
    }
}

impl Mul<f64> for DVec {
    type Output = Self;
    fn mul(mut self, rhs: f64) -> Self {
        for a in self.0.iter_mut() {
            *a *= rhs;
        }
        self
    }
}

impl QuadValue for DVec {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn component(&self, i: usize) -> f64 {
        self.0[i]
    }
}

/// Outcome of an integration or summation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult<T> {
    pub value: T,
    /// Largest component-wise absolute error estimate.
    pub abs_error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

impl<T: QuadValue> QuadResult<T> {
    /// Converts a non-converged result into an error carrying the partial value.
    pub fn check(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                value: (0..self.value.dim())
                    .map(|i| self.value.component(i).abs())
                    .fold(0.0, f64::max),
                abs_error: self.abs_error,
                evaluations: self.evaluations,
            })
        }
    }
}

/// A known near-pole of the integrand, e.g. an atomic resonance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonanceHint {
    pub center: f64,
    pub half_width: f64,
}

impl ResonanceHint {
    pub fn new(center: f64, half_width: f64) -> Result<Self> {
        if !(center > 0.0) || !(half_width >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "resonance hint needs center > 0 and half_width >= 0, got ({center}, {half_width})"
            )));
        }
        Ok(Self { center, half_width })
    }

    /// Initial breakpoints: the center, center +- {1, 3, 10} half widths and
    /// a geometric continuation out to half the center frequency.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts = vec![self.center];
        if self.half_width > 0.0 {
            let mut offsets = vec![1.0, 3.0, 10.0];
            let mut f = 30.0;
            while f * self.half_width < 0.5 * self.center && offsets.len() < 40 {
                offsets.push(f);
                f *= 3.0;
            }
            for o in offsets {
                let d = o * self.half_width;
                if d < self.center {
                    pts.push(self.center - d);
                }
                pts.push(self.center + d);
            }
        } else {
            pts.push(0.5 * self.center);
            pts.push(1.5 * self.center);
        }
        pts
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_evals: usize,
    /// Vector components are parts of one sum: every component gets the
    /// loosest per-component tolerance.
    pub joint: bool,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-8, abs_tol: 0.0, max_evals: 400_000, joint: false }
    }
}

impl QuadOptions {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        Self { rel_tol, ..Self::default() }
    }
}

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689,
    0.973_906_528_517_171_720_077_964_012_084,
    0.930_157_491_355_708_226_001_207_180_060,
    0.865_063_366_688_984_510_732_096_688_423,
    0.780_817_726_586_416_897_063_717_578_345,
    0.679_409_568_299_024_406_234_327_365_115,
    0.562_757_134_668_604_683_339_000_099_273,
    0.433_395_394_129_247_190_799_265_943_166,
    0.294_392_862_701_460_198_131_126_603_104,
    0.148_874_338_981_631_210_884_826_001_130,
    0.0,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062,
    0.032_558_162_307_964_727_478_818_972_459,
    0.054_755_896_574_351_996_031_381_300_245,
    0.075_039_674_810_919_952_767_043_140_916,
    0.093_125_454_583_697_605_535_065_465_083,
    0.109_387_158_802_297_641_899_210_590_326,
    0.123_491_976_262_065_851_077_600_525_822,
    0.134_709_217_311_473_325_928_054_001_772,
    0.142_775_938_577_060_080_797_094_273_139,
    0.147_739_104_901_338_491_374_841_515_972,
    0.149_445_554_002_916_905_664_936_468_390,
];
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893,
    0.149_451_349_150_580_593_145_776_339_658,
    0.219_086_362_515_982_043_995_534_934_228,
    0.269_266_719_309_996_355_091_226_921_569,
    0.295_524_224_714_752_870_173_892_994_651,
];

/// Absolute errors below this carry no information in double precision.
const UNDERFLOW_FLOOR: f64 = 1e-250;

struct Panel<T> {
    a: f64,
    b: f64,
    value: T,
    errors: Vec<f64>,
    /// Integral of |f| per component.
    resabs: Vec<f64>,
}

/// Applies the 21-point Kronrod rule on [a, b] with QUADPACK error scaling
/// per component.
fn gk21<T: QuadValue, F: FnMut(f64) -> T>(f: &mut F, a: f64, b: f64) -> Panel<T> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut fv: Vec<T> = Vec::with_capacity(21);
    for j in 0..10 {
        fv.push(f(center - half * XGK[j]));
    }
    fv.push(f(center));
    for j in (0..10).rev() {
        fv.push(f(center + half * XGK[j]));
    }
    let mut kron = fv[10].clone() * WGK[10];
    let mut gauss = fv[10].clone() * 0.0;
    for j in 0..10 {
        let pair = fv[j].clone() + fv[20 - j].clone();
        if j % 2 == 1 {
            gauss = gauss + pair.clone() * WG[j / 2];
        }
        kron = kron + pair * WGK[j];
    }
    let dim = kron.dim();
    let mut errors = Vec::with_capacity(dim);
    let mut absint = Vec::with_capacity(dim);
    for c in 0..dim {
        let resk = kron.component(c);
        let mean = 0.5 * resk;
        let mut resabs = WGK[10] * fv[10].component(c).abs();
        let mut resasc = WGK[10] * (fv[10].component(c) - mean).abs();
        for j in 0..10 {
            let (l, r) = (fv[j].component(c), fv[20 - j].component(c));
            resabs += WGK[j] * (l.abs() + r.abs());
            resasc += WGK[j] * ((l - mean).abs() + (r - mean).abs());
        }
        resabs *= half.abs();
        resasc *= half.abs();
        let mut err = ((resk - gauss.component(c)) * half).abs();
        if resasc != 0.0 && err != 0.0 {
            err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
        }
        if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
            err = err.max(50.0 * f64::EPSILON * resabs);
        }
        if !resk.is_finite() {
            err = f64::INFINITY;
        }
        errors.push(err);
        absint.push(resabs);
    }
    Panel { a, b, value: kron * half, errors, resabs: absint }
}

/// Globally adaptive integration over the union of the panels delimited by
/// `points` (sorted, at least two entries).
fn adaptive<T: QuadValue, F: FnMut(f64) -> T>(
    f: &mut F,
    points: &[f64],
    opts: &QuadOptions,
) -> QuadResult<T> {
    let mut panels: Vec<Panel<T>> = points
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| gk21(f, w[0], w[1]))
        .collect();
    let mut evaluations = 21 * panels.len();
    assert!(!panels.is_empty(), "adaptive quadrature needs a nonempty range");
    loop {
        let mut total = panels[0].value.clone() * 0.0;
        let dim = total.dim();
        let mut err = vec![0.0; dim];
        let mut l1 = vec![0.0; dim];
        for p in &panels {
            total = total + p.value.clone();
            for (e, pe) in err.iter_mut().zip(&p.errors) {
                *e += pe;
            }
            for (a, pa) in l1.iter_mut().zip(&p.resabs) {
                *a += pa;
            }
        }
        // Relative to the result, but never tighter than a small fraction of
        // the integral of |f|, so that components cancelling to ~0 terminate.
        let mut tol: Vec<f64> = (0..dim)
            .map(|c| (opts.rel_tol * total.component(c).abs().max(1e-2 * l1[c])).max(opts.abs_tol).max(UNDERFLOW_FLOOR))
            .collect();
        if opts.joint {
            let t = tol.iter().cloned().fold(0.0, f64::max);
            tol.iter_mut().for_each(|x| *x = t);
        }
        let done = err.iter().zip(&tol).all(|(e, t)| e <= t);
        let max_err = err.iter().cloned().fold(0.0, f64::max);
        if done || evaluations + 42 > opts.max_evals || !max_err.is_finite() && evaluations > opts.max_evals {
            return QuadResult { value: total, abs_error: max_err, evaluations, converged: done };
        }
        // Split the panel carrying the largest tolerance-normalised error.
        let scale: Vec<f64> = tol.iter().map(|t| t.max(f64::MIN_POSITIVE)).collect();
        let mut worst = 0;
        let mut worst_score = -1.0;
        for (i, p) in panels.iter().enumerate() {
            let score = p
                .errors
                .iter()
                .zip(&scale)
                .map(|(e, s)| e / s)
                .fold(0.0, f64::max);
            if score > worst_score {
                worst_score = score;
                worst = i;
            }
        }
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if !(mid > p.a && mid < p.b) {
            // Panel below floating-point resolution: accept what we have.
            return QuadResult { value: total, abs_error: max_err, evaluations, converged: false };
        }
        panels.push(gk21(f, p.a, mid));
        panels.push(gk21(f, mid, p.b));
        evaluations += 42;
    }
}

fn sorted_points(a: f64, b: f64, extra: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut pts = vec![a, b];
    pts.extend(extra.into_iter().filter(|x| *x > a && *x < b));
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup();
    pts
}

/// Integrates `f` over the finite interval [a, b] with optional interior breakpoints.
pub fn integrate_interval<T: QuadValue, F: FnMut(f64) -> T>(
    mut f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    opts: &QuadOptions,
) -> QuadResult<T> {
    if a == b {
        return QuadResult { value: f(a) * 0.0, abs_error: 0.0, evaluations: 1, converged: true };
    }
    if b < a {
        let mut r = integrate_interval(f, b, a, breakpoints, opts);
        r.value = r.value * -1.0;
        return r;
    }
    let pts = sorted_points(a, b, breakpoints.iter().cloned());
    adaptive(&mut f, &pts, opts)
}

/// Integrates `f` over (0, inf).
///
/// Resonance hints place breakpoints around each near-pole; beyond the last
/// breakpoint `x0` the tail is mapped by `x = x0 + scale * t / (1 - t)`.
pub fn integrate_semi_infinite<T: QuadValue, F: FnMut(f64) -> T>(
    f: F,
    scale: f64,
    hints: &[ResonanceHint],
    opts: &QuadOptions,
) -> QuadResult<T> {
    let pts: Vec<f64> = hints.iter().flat_map(|h| h.breakpoints()).collect();
    integrate_from(f, 0.0, scale, &pts, opts)
}

/// Integrates `f` over (a, inf) with finite breakpoints and a mapped tail.
pub fn integrate_from<T: QuadValue, F: FnMut(f64) -> T>(
    mut f: F,
    a: f64,
    scale: f64,
    breakpoints: &[f64],
    opts: &QuadOptions,
) -> QuadResult<T> {
    let mut pts: Vec<f64> = breakpoints.iter().cloned().filter(|x| *x > a && x.is_finite()).collect();
    pts.push(a);
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup();
    let x0 = *pts.last().unwrap();
    let s = scale;
    // Finite panels are tagged with negative parameter values so that one
    // adaptive run handles both the finite part and the mapped tail:
    // parameter u in [-(n-1), 0] is piecewise linear over the breakpoints,
    // u in (0, 1) is the tail coordinate t.
    let n = pts.len();
    let mut g = |u: f64| -> T {
        if u <= 0.0 {
            let pos = u + (n - 1) as f64;
            let i = (pos.floor() as usize).min(n.saturating_sub(2));
            let frac = pos - i as f64;
            let (lo, hi) = (pts[i], pts[(i + 1).min(n - 1)]);
            let x = lo + frac * (hi - lo);
            f(x) * (hi - lo)
        } else {
            let om = 1.0 - u;
            let x = x0 + s * u / om;
            f(x) * (s / (om * om))
        }
    };
    let mut params: Vec<f64> = (0..n).map(|i| i as f64 - (n - 1) as f64).collect();
    params.extend([0.25, 0.5, 0.75, 1.0]);
    adaptive(&mut g, &params, opts)
}

/// Cauchy principal value of `f(x) / (x - pole)` over (0, upper) where
/// `upper = None` means infinity. Uses the subtraction method.
pub fn principal_value<T: QuadValue, F: FnMut(f64) -> T>(
    mut f: F,
    pole: f64,
    upper: Option<f64>,
    scale: f64,
    breakpoints: &[f64],
    opts: &QuadOptions,
) -> Result<QuadResult<T>> {
    let b = upper.unwrap_or(f64::INFINITY);
    if !(pole > 0.0 && pole < b) {
        return Err(Error::InvalidInput(format!(
            "principal value pole {pole} must lie strictly inside (0, {b})"
        )));
    }
    let fp = f(pole);
    let sub_end = if b.is_finite() { b } else { 2.0 * pole };
    let mut regular = |x: f64| -> T {
        let d = x - pole;
        if d == 0.0 {
            fp.clone() * 0.0
        } else {
            (f(x) - fp.clone()) * (1.0 / d)
        }
    };
    let mut pts: Vec<f64> = breakpoints.to_vec();
    pts.push(pole);
    let head = integrate_interval(&mut regular, 0.0, sub_end, &pts, opts);
    let log_ratio = ((sub_end - pole) / pole).ln();
    let mut value = head.value + fp.clone() * log_ratio;
    let mut abs_error = head.abs_error;
    let mut evaluations = head.evaluations + 1;
    let mut converged = head.converged;
    if !b.is_finite() {
        let tail = integrate_from(|x| f(x) * (1.0 / (x - pole)), sub_end, scale.max(pole), breakpoints, opts);
        value = value + tail.value;
        abs_error += tail.abs_error;
        evaluations += tail.evaluations;
        converged &= tail.converged;
    }
    Ok(QuadResult { value, abs_error, evaluations, converged })
}

/// First Matsubara frequency 2 pi k_B T / hbar.
pub fn matsubara_spacing(temperature: f64) -> f64 {
    2.0 * std::f64::consts::PI * KB * temperature / HBAR
}

/// Primed Matsubara sum: sum over N >= 0 of (1 - delta_N0 / 2) g(xi_N).
///
/// The zero term is `g(0)` when finite; otherwise it is extrapolated from
/// `g` at xi_1 / {8, 4, 2} by two Richardson steps. Summation stops once
/// the geometric tail estimate drops below `rel_tol * |partial sum|`.
pub fn matsubara_sum<F: FnMut(f64) -> f64>(mut g: F, temperature: f64, rel_tol: f64) -> Result<QuadResult<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidInput(format!(
            "Matsubara sum requires T > 0, got {temperature}; use the imaginary-frequency integral at T = 0"
        )));
    }
    const MIN_TERMS: usize = 4;
    const MAX_TERMS: usize = 2_000_000;
    let xi1 = matsubara_spacing(temperature);
    let mut evaluations = 1;
    let g0 = {
        let direct = g(0.0);
        if direct.is_finite() {
            direct
        } else {
            evaluations += 3;
            let (g1, g2, g3) = (g(0.5 * xi1), g(0.25 * xi1), g(0.125 * xi1));
            let r1 = 2.0 * g2 - g1;
            let r2 = 2.0 * g3 - g2;
            (4.0 * r2 - r1) / 3.0
        }
    };
    let mut sum = 0.5 * g0;
    let mut prev = g0;
    for n in 1..MAX_TERMS {
        let term = g(n as f64 * xi1);
        evaluations += 1;
        sum += term;
        if n >= MIN_TERMS {
            let tail = if term == 0.0 {
                0.0
            } else {
                let q = (term / prev).abs();
                if q < 1.0 {
                    term.abs() * q / (1.0 - q)
                } else {
                    f64::INFINITY
                }
            };
            if tail <= rel_tol * sum.abs() {
                return Ok(QuadResult { value: sum, abs_error: tail, evaluations, converged: true });
            }
        }
        prev = term;
    }
    Ok(QuadResult { value: sum, abs_error: prev.abs() * MAX_TERMS as f64, evaluations, converged: false })
}

/// Fourth-order central difference dF/dz with step h.
pub fn fd_gradient<T: QuadValue, F: FnMut(f64) -> T>(mut field: F, z: f64, h: f64) -> Result<T> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("finite-difference step must be positive, got {h}")));
    }
    let d = (field(z - 2.0 * h) - field(z + 2.0 * h)) + (field(z + h) - field(z - h)) * 8.0;
    Ok(d * (1.0 / (12.0 * h)))
}
