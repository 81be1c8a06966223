//! Dispersive permittivity and permeability models.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// One Lorentz oscillator contributing `plasma^2 / (resonance^2 - w^2 - i damping w)`.
/// A Drude term is an oscillator with zero resonance frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Oscillator {
    /// rad/s
    pub plasma: f64,
    /// rad/s
    pub resonance: f64,
    /// rad/s
    pub damping: f64,
}

impl Oscillator {
    pub fn drude(plasma: f64, damping: f64) -> Self {
        Self { plasma, resonance: 0.0, damping }
    }

    pub fn lorentz(plasma: f64, resonance: f64, damping: f64) -> Self {
        Self { plasma, resonance, damping }
    }

    fn response(&self, w: Complex64) -> Complex64 {
        let p2 = self.plasma * self.plasma;
        let r2 = self.resonance * self.resonance;
        p2 / (r2 - w * w - Complex64::i() * self.damping * w)
    }
}

/// Sampled complex response on a real-frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedResponse {
    /// Strictly increasing, positive frequencies in rad/s.
    pub omega: Vec<f64>,
    pub eps: Vec<Complex64>,
    pub mu: Vec<Complex64>,
}

impl TabulatedResponse {
    /// Linear interpolation in log(omega); values are clamped outside the grid.
    fn interpolate(&self, values: &[Complex64], w: f64) -> Complex64 {
        let n = self.omega.len();
        if w <= self.omega[0] {
            return values[0];
        }
        if w >= self.omega[n - 1] {
            return values[n - 1];
        }
        let i = self.omega.partition_point(|x| *x <= w) - 1;
        let (l0, l1) = (self.omega[i].ln(), self.omega[i + 1].ln());
        let t = (w.ln() - l0) / (l1 - l0);
        values[i] * (1.0 - t) + values[i + 1] * t
    }

    /// Imaginary-axis value from the dispersion relation
    /// 1 + (2/pi) int w Im f(w) / (w^2 + xi^2) dw, using the trapezoid rule
    /// on the grid (Im f is taken as zero outside the table).
    fn imaginary_axis(&self, values: &[Complex64], xi: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.omega.len() - 1 {
            let (w0, w1) = (self.omega[i], self.omega[i + 1]);
            let f0 = w0 * values[i].im / (w0 * w0 + xi * xi);
            let f1 = w1 * values[i + 1].im / (w1 * w1 + xi * xi);
            acc += 0.5 * (f0 + f1) * (w1 - w0);
        }
        1.0 + 2.0 / std::f64::consts::PI * acc
    }
}

/// Local electromagnetic response of a layer.
#[derive(Debug, Clone, PartialEq)]
pub enum MaterialModel {
    Vacuum,
    /// `eps(w) = eps_inf + sum of electric oscillators`, likewise for `mu`
    /// with background 1.
    DrudeLorentz {
        eps_inf: f64,
        electric: Vec<Oscillator>,
        magnetic: Vec<Oscillator>,
    },
    /// Tabulated data; Kramers-Kronig consistency is the caller's responsibility.
    Tabulated(TabulatedResponse),
    /// Ideal conductor: r_s = -1, r_p = +1 at its surface.
    PerfectReflector,
}

/// (eps, mu) at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Response {
    pub eps: Complex64,
    pub mu: Complex64,
}

impl MaterialModel {
    pub fn dielectric(eps_inf: f64, electric: Vec<Oscillator>) -> Self {
        MaterialModel::DrudeLorentz { eps_inf, electric, magnetic: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MaterialModel::Vacuum | MaterialModel::PerfectReflector => Ok(()),
            MaterialModel::DrudeLorentz { eps_inf, electric, magnetic } => {
                if !(*eps_inf >= 1.0) {
                    return Err(Error::InvalidInput(format!("eps_inf must be >= 1, got {eps_inf}")));
                }
                for o in electric.iter().chain(magnetic) {
                    if !(o.plasma >= 0.0 && o.resonance >= 0.0 && o.damping >= 0.0) {
                        return Err(Error::InvalidInput(format!(
                            "oscillator parameters must be nonnegative: {o:?}"
                        )));
                    }
                    if o.resonance == 0.0 && o.damping == 0.0 && o.plasma > 0.0 {
                        return Err(Error::InvalidInput(
                            "lossless Drude term is singular at zero frequency".into(),
                        ));
                    }
                }
                Ok(())
            }
            MaterialModel::Tabulated(t) => {
                let n = t.omega.len();
                if n < 2 || t.eps.len() != n || t.mu.len() != n {
                    return Err(Error::InvalidInput(
                        "tabulated material needs >= 2 samples with matching eps and mu columns".into(),
                    ));
                }
                if t.omega[0] <= 0.0 || t.omega.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidInput(
                        "tabulated frequencies must be positive and strictly increasing".into(),
                    ));
                }
                if t.eps.iter().chain(&t.mu).any(|v| v.im < 0.0) {
                    return Err(Error::InvalidInput("tabulated Im eps and Im mu must be >= 0".into()));
                }
                Ok(())
            }
        }
    }

    pub fn is_perfect_reflector(&self) -> bool {
        matches!(self, MaterialModel::PerfectReflector)
    }

    /// Response at a complex frequency in the closed upper half plane.
    ///
    /// Tabulated data are evaluated at `Re w` off the imaginary axis and
    /// through the dispersion relation on it.
    pub fn response(&self, w: Complex64) -> Response {
        let one = Complex64::new(1.0, 0.0);
        match self {
            MaterialModel::Vacuum => Response { eps: one, mu: one },
            MaterialModel::PerfectReflector => Response {
                eps: Complex64::new(f64::INFINITY, 0.0),
                mu: one,
            },
            MaterialModel::DrudeLorentz { eps_inf, electric, magnetic } => {
                let eps = electric.iter().fold(Complex64::new(*eps_inf, 0.0), |acc, o| acc + o.response(w));
                let mu = magnetic.iter().fold(one, |acc, o| acc + o.response(w));
                if w.re == 0.0 {
                    // Exact reality on the imaginary axis.
                    Response { eps: Complex64::new(eps.re, 0.0), mu: Complex64::new(mu.re, 0.0) }
                } else {
                    Response { eps, mu }
                }
            }
            MaterialModel::Tabulated(t) => {
                if w.re == 0.0 {
                    Response {
                        eps: Complex64::new(t.imaginary_axis(&t.eps, w.im), 0.0),
                        mu: Complex64::new(t.imaginary_axis(&t.mu, w.im), 0.0),
                    }
                } else {
                    Response { eps: t.interpolate(&t.eps, w.re.abs()), mu: t.interpolate(&t.mu, w.re.abs()) }
                }
            }
        }
    }

    pub fn response_real(&self, omega: f64) -> Response {
        self.response(Complex64::new(omega, 0.0))
    }

    pub fn response_imag(&self, xi: f64) -> Response {
        self.response(Complex64::new(0.0, xi))
    }

    /// True when the material dissipates at real frequency `omega`.
    pub fn is_lossy(&self, omega: f64) -> bool {
        if self.is_perfect_reflector() {
            return false;
        }
        let r = self.response_real(omega);
        r.eps.im > 0.0 || r.mu.im > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gold_like() -> MaterialModel {
        MaterialModel::DrudeLorentz {
            eps_inf: 1.0,
            electric: vec![Oscillator::drude(1.37e16, 5.3e13), Oscillator::lorentz(5e15, 4e15, 1e15)],
            magnetic: vec![Oscillator::lorentz(1e14, 2e14, 1e13)],
        }
    }

    #[test]
    fn passivity_on_real_axis() {
        let m = gold_like();
        for k in 0..60 {
            let w = 10f64.powf(11.0 + k as f64 * 0.1);
            let r = m.response_real(w);
            assert!(r.eps.im >= 0.0 && r.mu.im >= 0.0);
        }
    }

    #[test]
    fn imaginary_axis_real_and_above_one() {
        let m = gold_like();
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let xi = 10f64.powf(12.0 + k as f64 * 0.1);
            let r = m.response_imag(xi);
            assert_eq!(r.eps.im, 0.0);
            assert!(r.eps.re >= 1.0 && r.mu.re >= 1.0);
            assert!(r.eps.re <= prev);
            prev = r.eps.re;
        }
    }

    #[test]
    fn tabulated_dispersion_reproduces_lorentz() {
        let lor = MaterialModel::dielectric(1.0, vec![Oscillator::lorentz(2e15, 1e15, 1e14)]);
        let omega: Vec<f64> = (0..4000).map(|i| 1e12 * 10f64.powf(i as f64 * 5.0 / 4000.0)).collect();
        let eps = omega.iter().map(|w| lor.response_real(*w).eps).collect();
        let mu = vec![Complex64::new(1.0, 0.0); omega.len()];
        let tab = MaterialModel::Tabulated(TabulatedResponse { omega, eps, mu });
        tab.validate().unwrap();
        let xi = 1.5e15;
        assert_relative_eq!(tab.response_imag(xi).eps.re, lor.response_imag(xi).eps.re, max_relative = 1e-3);
        let w = 7.3e14;
        assert_relative_eq!(tab.response_real(w).eps.re, lor.response_real(w).eps.re, max_relative = 1e-3);
    }

    #[test]
    fn validation_rejects_active_media() {
        let bad = MaterialModel::dielectric(1.0, vec![Oscillator::lorentz(1e15, 1e15, -1.0)]);
        assert!(bad.validate().is_err());
        assert!(MaterialModel::dielectric(0.5, vec![]).validate().is_err());
    }
}
