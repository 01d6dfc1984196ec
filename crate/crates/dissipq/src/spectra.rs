//! Noise spectral densities: quantum Johnson-Nyquist voltage noise
//! (double- and single-sided), Ohmic bath spectral density J(omega),
//! LC-filter shaping, and Landauer-Buttiker zero-frequency shot noise.
//!
//! Signed-frequency convention: positive omega is absorption by the bath,
//! negative is emission. `engineering_frequency` converts to the opposite
//! (engineering) sign convention.

use crate::{ECHARGE, HBAR, KB};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpectraError {
    #[error("Bose-Einstein occupation needs omega > 0, got {0}; use occupancy_signed for signed frequencies")]
    DomainError(f64),
    #[error("transmission eigenvalue {0} outside [0, 1]")]
    TransmissionOutOfRange(f64),
}

/// Inverse temperature carrier. T = 0 is a first-class value (infinite beta)
/// so the zero-temperature limits are exact rather than catastrophic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalParams {
    /// Temperature, K.
    pub temperature: f64,
}

impl ThermalParams {
    pub fn new(temperature: f64) -> Self {
        assert!(temperature >= 0.0, "temperature must be non-negative");
        Self { temperature }
    }

    pub fn is_zero(&self) -> bool {
        self.temperature == 0.0
    }

    /// beta = 1/(k_B T), infinite at T = 0.
    pub fn beta(&self) -> f64 {
        if self.is_zero() { f64::INFINITY } else { 1.0 / (KB * self.temperature) }
    }

    /// beta*hbar*omega, the dimensionless thermal exponent.
    pub fn x(&self, omega: f64) -> f64 {
        if self.is_zero() {
            if omega > 0.0 {
                f64::INFINITY
            } else if omega < 0.0 {
                f64::NEG_INFINITY
            } else {
                0.0
            }
        } else {
            self.beta() * HBAR * omega
        }
    }
}

/// Bose-Einstein occupation 1/(e^{beta hbar omega} - 1) for omega > 0.
pub fn bose_einstein(omega: f64, thermal: ThermalParams) -> Result<f64, SpectraError> {
    if omega <= 0.0 {
        return Err(SpectraError::DomainError(omega));
    }
    if thermal.is_zero() {
        return Ok(0.0);
    }
    Ok(1.0 / f64::exp_m1(thermal.x(omega)))
}

/// Double-sided quantum Johnson-Nyquist voltage noise,
/// S_VV(omega) = 2 Re[Z(omega)] hbar omega / (1 - e^{-beta hbar omega}),
/// with the even extension Re[Z(-omega)] = Re[Z(omega)]. V^2 s.
pub fn voltage_psd(
    re_z: impl Fn(f64) -> f64,
    omega: f64,
    thermal: ThermalParams,
) -> f64 {
    let rz = re_z(omega.abs());
    if omega == 0.0 {
        // analytic limit hbar*omega/(1-e^{-x}) -> k_B T
        return 2.0 * rz * KB * thermal.temperature;
    }
    if thermal.is_zero() {
        return if omega > 0.0 { 2.0 * rz * HBAR * omega } else { 0.0 };
    }
    2.0 * rz * HBAR * omega / (-f64::exp_m1(-thermal.x(omega)))
}

/// Symmetrized single-sided spectral density,
/// S_VV(omega) + S_VV(-omega) = 2 hbar omega Re[Z] coth(beta hbar omega / 2),
/// for omega > 0. V^2 s.
pub fn symmetrized_single_sided_psd(
    re_z: impl Fn(f64) -> f64,
    omega: f64,
    thermal: ThermalParams,
) -> f64 {
    assert!(omega > 0.0, "single-sided density needs omega > 0");
    voltage_psd(&re_z, omega, thermal) + voltage_psd(&re_z, -omega, thermal)
}

/// Ohmic bath spectral density parameters:
/// J(omega) = gamma * omega * wc^2 / (pi (wc^2 + omega^2)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OhmicBathDensity {
    /// Dimensionless rate prefactor gamma = (R kappa^2 / hbar), where kappa
    /// is the qubit's effective voltage-coupling charge.
    pub gamma: f64,
    /// Cutoff, rad/s.
    pub cutoff: f64,
}

impl OhmicBathDensity {
    /// Build from a resistance and a voltage-coupling charge kappa (the
    /// coefficient multiplying sigma^y V in the interaction).
    pub fn from_coupling(resistance: f64, kappa: f64, cutoff: f64) -> Self {
        Self { gamma: resistance * kappa * kappa / HBAR, cutoff }
    }

    /// J(omega) for omega >= 0, units 1/s.
    pub fn j(&self, omega: f64) -> f64 {
        let wc2 = self.cutoff * self.cutoff;
        self.gamma * omega * wc2 / (PI * (wc2 + omega * omega))
    }
}

/// Squared transfer function of a parallel-LC stage read out through a
/// series resistance: |h_f(omega)|^2 = w^2 / (w^2 + R^2 C_f^2 (w_f^2-w^2)^2).
/// Dimensionless, in (0, 1], equal to 1 only on resonance.
pub fn filter_transfer_sq(
    resistance: f64,
    c_f: f64,
    l_f: f64,
    omega: f64,
) -> f64 {
    let wf2 = 1.0 / (l_f * c_f);
    let w2 = omega * omega;
    let d = resistance * c_f * (wf2 - w2);
    w2 / (w2 + d * d)
}

/// Fermi-Dirac occupation at energy `e` (J) relative to chemical potential
/// `mu`, temperature `t` (K).
fn fermi(e: f64, mu: f64, t: f64) -> f64 {
    if t == 0.0 {
        return if e < mu { 1.0 } else if e > mu { 0.0 } else { 0.5 };
    }
    1.0 / (f64::exp((e - mu) / (KB * t)) + 1.0)
}

/// Zero-frequency current noise of a NIN junction at zero bias:
/// S = (e^2 / pi hbar) sum_n t_n * int dE [f_L(1-f_L) + f_R(1-f_R)].
///
/// At equilibrium (T_L == T_R) this reduces to the closed form 2 k_B T G
/// with the Landauer conductance G = (e^2/pi hbar) sum_n t_n; otherwise the
/// Fermi integrals are evaluated by adaptive quadrature. A^2 s.
pub fn shot_noise_zero_freq(
    transmissions: &[f64],
    t_left: f64,
    t_right: f64,
    mu: f64,
) -> Result<f64, SpectraError> {
    for &t in transmissions {
        if !(0.0..=1.0).contains(&t) {
            return Err(SpectraError::TransmissionOutOfRange(t));
        }
    }
    let t_sum: f64 = transmissions.iter().sum();
    let pref = ECHARGE * ECHARGE / (PI * HBAR);
    if t_left == t_right {
        return Ok(2.0 * KB * t_left * pref * t_sum);
    }
    // f(1-f) decays exponentially; +-40 k_B T around mu captures it to well
    // below 1e-12 relative.
    let integral = |t: f64| -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        let span = 40.0 * KB * t;
        adaptive_simpson(
            |e| {
                let f = fermi(e, mu, t);
                f * (1.0 - f)
            },
            mu - span,
            mu + span,
            1e-12 * KB * t,
            30,
        )
    };
    Ok(pref * t_sum * (integral(t_left) + integral(t_right)))
}

/// Closed form of the equilibrium Fermi window integral,
/// int dE f(1-f) = k_B T. Exposed for cross-checks.
pub fn fermi_window_integral(temperature: f64) -> f64 {
    KB * temperature
}

/// Numerically integrate int dE f(1-f) for one lead; the independent route
/// against [`fermi_window_integral`].
pub fn fermi_window_integral_numeric(temperature: f64, mu: f64) -> f64 {
    if temperature == 0.0 {
        return 0.0;
    }
    let span = 40.0 * KB * temperature;
    adaptive_simpson(
        |e| {
            let f = fermi(e, mu, temperature);
            f * (1.0 - f)
        },
        mu - span,
        mu + span,
        1e-13 * KB * temperature,
        32,
    )
}

fn adaptive_simpson(
    f: impl Fn(f64) -> f64 + Copy,
    a: f64,
    b: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
    }
    fn rec(
        f: impl Fn(f64) -> f64 + Copy,
        a: f64,
        b: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let left = simpson(f, a, m);
        let right = simpson(f, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            rec(f, a, m, left, tol / 2.0, depth - 1)
                + rec(f, m, b, right, tol / 2.0, depth - 1)
        }
    }
    rec(f, a, b, simpson(f, a, b), tol, depth)
}

/// Convert a signed frequency from the physics convention used here
/// (positive = absorption) to the engineering convention (sign flipped).
pub fn engineering_frequency(omega: f64) -> f64 {
    -omega
}
