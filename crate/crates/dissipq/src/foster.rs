//! Foster first-form synthesis of a resistive impedance as a chain of
//! parallel LC stages, plus the consistency checks that justify it:
//! impedance recomposition from the discretized modes and a numerical
//! Kramers-Kronig residual.

use num_complex::Complex64;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FosterError {
    #[error("Re[Z] must be positive on the synthesis grid, got {value} at omega={omega}")]
    NonPositiveRealPart { omega: f64, value: f64 },
    #[error("Kramers-Kronig grid too coarse: {0} points (need at least 64)")]
    GridTooCoarse(usize),
}

/// One LC stage of the synthesized bath.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FosterMode {
    /// Stage capacitance, F.
    pub capacitance: f64,
    /// Stage inductance, H.
    pub inductance: f64,
    /// Resonance frequency, rad/s.
    pub omega: f64,
}

/// Discretized bath: uniformly spaced LC stages synthesizing Re[Z].
#[derive(Debug, Clone, PartialEq)]
pub struct FosterBath {
    pub modes: Vec<FosterMode>,
    /// Frequency spacing, rad/s; mode j sits at j * delta_omega, j = 1..N.
    pub delta_omega: f64,
}

impl FosterBath {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
}

/// Lorentz-Drude impedance of a resistor with high-frequency cutoff:
/// Z(omega) = R*wc^2/(wc^2+w^2) + i*R*w*wc/(wc^2+w^2).
///
/// Satisfies Z(-omega) = conj(Z(omega)).
pub fn ohmic_impedance(resistance: f64, cutoff: f64, omega: f64) -> Complex64 {
    let denom = cutoff * cutoff + omega * omega;
    Complex64::new(
        resistance * cutoff * cutoff / denom,
        resistance * omega * cutoff / denom,
    )
}

/// Synthesize a bath of `n` LC stages at omega_j = j*delta_omega with
/// C_j = pi / (2*delta_omega*Re[Z(omega_j)]) and L_j = 1/(C_j omega_j^2).
pub fn synthesize(
    re_z: impl Fn(f64) -> f64,
    delta_omega: f64,
    n: usize,
) -> Result<FosterBath, FosterError> {
    assert!(delta_omega > 0.0 && n >= 1, "need delta_omega > 0 and n >= 1");
    let mut modes = Vec::with_capacity(n);
    for j in 1..=n {
        let omega = j as f64 * delta_omega;
        let rz = re_z(omega);
        if !(rz > 0.0) {
            return Err(FosterError::NonPositiveRealPart { omega, value: rz });
        }
        let capacitance = PI / (2.0 * delta_omega * rz);
        let inductance = 1.0 / (capacitance * omega * omega);
        modes.push(FosterMode { capacitance, inductance, omega });
    }
    Ok(FosterBath { modes, delta_omega })
}

/// Generalized impedance of the synthesized chain at broadening `eta`:
/// sum_j (i/2C_j) [1/(w - w_j + i eta) + 1/(w + w_j + i eta)].
///
/// The mode sum uses pairwise (tree) reduction so the result is deterministic
/// and independent of any chunked evaluation order.
pub fn recompose(bath: &FosterBath, omega: f64, eta: f64) -> Complex64 {
    assert!(eta > 0.0, "eta must be positive");
    let terms: Vec<Complex64> = bath
        .modes
        .iter()
        .map(|m| {
            let pref = Complex64::new(0.0, 0.5 / m.capacitance);
            let a = Complex64::new(omega - m.omega, eta);
            let b = Complex64::new(omega + m.omega, eta);
            pref * (a.inv() + b.inv())
        })
        .collect();
    pairwise_sum(&terms)
}

fn pairwise_sum(terms: &[Complex64]) -> Complex64 {
    match terms.len() {
        0 => Complex64::new(0.0, 0.0),
        1 => terms[0],
        n => pairwise_sum(&terms[..n / 2]) + pairwise_sum(&terms[n / 2..]),
    }
}

/// Per-frequency residual of the Kramers-Kronig relation
/// Im[Z(w)] = -(1/pi) PV int Re[Z(w')]/(w'-w) dw'
/// evaluated by trapezoid quadrature over the provided symmetric grid.
///
/// The mean edge value of Re[Z] is subtracted before integrating: a constant
/// has vanishing principal value over the whole line, and the subtraction
/// makes the integrand decay at the grid boundary so the truncated tails are
/// negligible. The pole itself is excluded; on a uniform grid its symmetric
/// neighbors cancel the odd part of the singularity.
///
/// Returns |Im[Z(w)] + (1/pi) PV-sum| for each interior grid point.
pub fn kramers_kronig_residual(
    z: impl Fn(f64) -> Complex64,
    grid: &[f64],
) -> Result<Vec<f64>, FosterError> {
    if grid.len() < 64 {
        return Err(FosterError::GridTooCoarse(grid.len()));
    }
    let re: Vec<f64> = grid.iter().map(|&w| z(w).re).collect();
    let h = grid[1] - grid[0];
    let n = grid.len();
    let edge = 0.5 * (re[0] + re[n - 1]);
    let mut residuals = Vec::with_capacity(n);
    for i in 1..n - 1 {
        let w = grid[i];
        let mut pv = 0.0;
        for k in 0..n {
            if k == i {
                continue;
            }
            let weight = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
            pv += weight * (re[k] - edge) / (grid[k] - w);
        }
        pv *= h;
        residuals.push((z(w).im + pv / PI).abs());
    }
    Ok(residuals)
}

/// Uniform symmetric grid over [-span, span] with `n` points (n even keeps
/// the grid free of an exact zero only when shifted; here endpoints are
/// included and the spacing is 2*span/(n-1)).
pub fn symmetric_grid(span: f64, n: usize) -> Vec<f64> {
    let h = 2.0 * span / (n as f64 - 1.0);
    (0..n).map(|i| -span + i as f64 * h).collect()
}
