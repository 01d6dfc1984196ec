//! Exact reference dynamics against a finite truncated bath: the
//! single-excitation (Wigner-Weisskopf) sector solved by dense
//! eigendecomposition, a small full-Hilbert-space thermal oracle, rate
//! extraction by log-linear fitting, and the mode-summed bath correlation
//! function.

use ndarray::{Array1, Array2};
use ndarray_linalg::eigh::Eigh;
use ndarray_linalg::UPLO;
use num_complex::Complex64;
use std::f64::consts::TAU;
use thiserror::Error;

use crate::foster::FosterBath;
use crate::hamiltonian::SystemBathModel;
use crate::lindblad::{kron, sigma_minus, sigma_plus, sigma_y, sigma_z};
use crate::spectra::{bose_einstein, ThermalParams};
use crate::HBAR;

/// Hard cap on single-excitation sector size (bath modes).
pub const MAX_SECTOR_MODES: usize = 5000;
/// Hard cap on the full-Hilbert-space oracle dimension.
pub const MAX_DENSE_DIM: usize = 4096;
/// Truncated thermal tail mass above which the Fock cutoff is rejected.
pub const TAIL_TOL: f64 = 0.01;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("requested dimension {requested} exceeds limit {limit}")]
    DimensionTooLarge { requested: usize, limit: usize },
    #[error("Fock cutoff too low: truncated thermal tail mass {tail:.3e} exceeds 1%")]
    CutoffTooLow { tail: f64 },
    #[error("non-positive sample p = {value} at index {index}")]
    NonPositiveSample { index: usize, value: f64 },
}

/// The excitation-conserving sector Hamiltonian: an arrowhead matrix over
/// the basis {qubit j excited (x) vacuum, mode alpha excited}.
#[derive(Debug, Clone)]
pub struct SingleExcitationModel {
    /// Real symmetric Hamiltonian, joules. The first `qubits` rows are the
    /// qubit-excited states, the rest one-photon states of the bath modes.
    pub hamiltonian: Array2<f64>,
    pub qubits: usize,
}

/// Assemble the single-excitation Hamiltonian from a weak-coupling model,
/// using the first `n` modes of every channel. The rotating-wave reduction
/// of i g sigma^y (a+ - a) leaves the matrix element <g,1_a|H|e,vac> = -g_a.
pub fn build_single_excitation(
    model: &SystemBathModel,
    n: usize,
) -> Result<SingleExcitationModel, OracleError> {
    let nq = model.qubits.len();
    for ch in &model.channels {
        assert!(
            ch.temperature == 0.0,
            "single-excitation sector requires a zero-temperature model"
        );
        assert!(n <= ch.mode_frequencies.len(), "channel has too few modes");
    }
    let total_modes = n * model.channels.len();
    if total_modes > MAX_SECTOR_MODES {
        return Err(OracleError::DimensionTooLarge {
            requested: total_modes,
            limit: MAX_SECTOR_MODES,
        });
    }
    let dim = nq + total_modes;
    let mut h = Array2::zeros((dim, dim));
    for (j, q) in model.qubits.iter().enumerate() {
        h[[j, j]] = HBAR * q.omega;
    }
    if nq == 2 {
        // sigma^y_A sigma^y_B maps |eg> to |ge> with unit coefficient
        h[[0, 1]] = model.direct_coupling;
        h[[1, 0]] = model.direct_coupling;
    }
    let mut offset = nq;
    for ch in &model.channels {
        for alpha in 0..n {
            let row = offset + alpha;
            h[[row, row]] = HBAR * ch.mode_frequencies[alpha];
            for j in 0..nq {
                let g = ch.couplings[[j, alpha]];
                h[[j, row]] = -g;
                h[[row, j]] = -g;
            }
        }
        offset += n;
    }
    Ok(SingleExcitationModel { hamiltonian: h, qubits: nq })
}

/// Survival probability |<psi0| e^{-iHt/hbar} |psi0>|^2 of the normalized
/// qubit superposition given by `weights` (length = number of qubits),
/// restricted to the single-excitation sector.
pub fn sector_survival(
    model: &SystemBathModel,
    n: usize,
    weights: &[f64],
    t_grid: &[f64],
) -> Result<Vec<f64>, OracleError> {
    let sector = build_single_excitation(model, n)?;
    assert_eq!(weights.len(), sector.qubits);
    let norm: f64 = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    assert!(norm > 0.0);
    let (vals, vecs) = sector
        .hamiltonian
        .eigh(UPLO::Lower)
        .expect("symmetric eigendecomposition");
    let dim = vals.len();
    // overlap of each eigenvector with the initial state
    let mut a = Array1::zeros(dim);
    for k in 0..dim {
        let mut s = 0.0;
        for (j, w) in weights.iter().enumerate() {
            s += vecs[[j, k]] * w / norm;
        }
        a[k] = s;
    }
    let total: f64 = a.iter().map(|v: &f64| v * v).sum();
    assert!(
        (total - 1.0).abs() < 1e-12,
        "sector norm deviation {}",
        (total - 1.0).abs()
    );
    Ok(t_grid
        .iter()
        .map(|&t| {
            let mut amp = Complex64::new(0.0, 0.0);
            for k in 0..dim {
                let phase = Complex64::from_polar(1.0, -vals[k] * t / HBAR);
                amp += phase * a[k] * a[k];
            }
            amp.norm_sqr()
        })
        .collect())
}

/// Survival probability of the excited qubit (qubit A for two-qubit models)
/// against the vacuum bath.
pub fn wigner_weisskopf(
    model: &SystemBathModel,
    n: usize,
    t_grid: &[f64],
) -> Result<Vec<f64>, OracleError> {
    let mut weights = vec![0.0; model.qubits.len()];
    weights[0] = 1.0;
    sector_survival(model, n, &weights, t_grid)
}

/// Finite-bath recurrence time 2 pi / delta_omega.
pub fn recurrence_time(delta_omega: f64) -> f64 {
    TAU / delta_omega
}

/// Default fit window [0.1/Gamma, 1/Gamma], clipped below half the
/// recurrence time. When the clip bites (weak decay on a coarse bath,
/// 1/Gamma > t_rec/2), the whole window is scaled down so it stays
/// non-empty: [0.1 t1, t1] with t1 = min(1/Gamma, t_rec/2].
pub fn default_fit_window(gamma_down: f64, delta_omega: f64) -> (f64, f64) {
    let t1 = (1.0 / gamma_down).min(0.5 * recurrence_time(delta_omega));
    (0.1 * t1, t1)
}

#[derive(Debug, Clone, Copy)]
pub struct RateFit {
    /// 1/s.
    pub rate: f64,
    /// RMS residual of the log-linear fit, dimensionless.
    pub residual: f64,
}

/// Least-squares slope of ln p(t) over the samples falling inside `window`.
pub fn extract_rate(
    times: &[f64],
    p: &[f64],
    window: (f64, f64),
) -> Result<RateFit, OracleError> {
    assert_eq!(times.len(), p.len());
    assert!(window.0 < window.1, "empty fit window");
    for (i, &v) in p.iter().enumerate() {
        if v <= 0.0 {
            return Err(OracleError::NonPositiveSample { index: i, value: v });
        }
    }
    let samples: Vec<(f64, f64)> = times
        .iter()
        .zip(p)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    assert!(samples.len() >= 2, "fit window must contain at least two samples");
    let m = samples.len() as f64;
    let sx: f64 = samples.iter().map(|(t, _)| t).sum();
    let sy: f64 = samples.iter().map(|(_, y)| y).sum();
    let sxx: f64 = samples.iter().map(|(t, _)| t * t).sum();
    let sxy: f64 = samples.iter().map(|(t, y)| t * y).sum();
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    let intercept = (sy - slope * sx) / m;
    let residual = (samples
        .iter()
        .map(|(t, y)| (y - slope * t - intercept).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    Ok(RateFit { rate: -slope, residual })
}

/// Mode-summed voltage correlation function of the synthesized bath:
/// C_VV(t) = sum_j (hbar w_j / 2 C_j) [(n+1) e^{-i w_j t} + n e^{i w_j t}].
pub fn bath_correlation(bath: &FosterBath, thermal: ThermalParams, t: f64) -> Complex64 {
    let mut c = Complex64::new(0.0, 0.0);
    for mode in &bath.modes {
        let weight = HBAR * mode.omega / (2.0 * mode.capacitance);
        let n = if thermal.is_zero() {
            0.0
        } else {
            bose_einstein(mode.omega, thermal).expect("mode omega > 0")
        };
        c += Complex64::from_polar(weight * (n + 1.0), -mode.omega * t)
            + Complex64::from_polar(weight * n, mode.omega * t);
    }
    c
}

#[derive(Debug, Clone)]
pub struct DenseOracleRun {
    /// Reduced 2x2 qubit density matrices, one per grid time.
    pub states: Vec<Array2<Complex64>>,
    /// Thermal tail mass removed by the Fock truncation (before
    /// renormalization), summed over modes.
    pub tail_mass: f64,
}

/// Evolve qubit (x) truncated thermal bath under the full (non-RWA)
/// Hamiltonian by dense eigendecomposition, and trace out the bath.
///
/// `drop_counter_rotating` replaces i g sigma^y (a+ - a) with its
/// excitation-conserving part -g (sigma^+ a + sigma^- a+), which makes the
/// run directly comparable to the single-excitation sector.
pub fn dense_bath_oracle(
    model: &SystemBathModel,
    n: usize,
    fock_cutoff: usize,
    thermal: ThermalParams,
    t_grid: &[f64],
    drop_counter_rotating: bool,
) -> Result<DenseOracleRun, OracleError> {
    assert_eq!(model.qubits.len(), 1, "dense oracle covers a single qubit");
    assert_eq!(model.channels.len(), 1);
    let ch = &model.channels[0];
    assert!(n <= ch.mode_frequencies.len(), "channel has too few modes");
    assert!(n <= 6 && fock_cutoff <= 3, "dense oracle is for small baths");
    let levels = fock_cutoff + 1;
    let bath_dim = levels.pow(n as u32);
    let dim = 2 * bath_dim;
    if dim > MAX_DENSE_DIM {
        return Err(OracleError::DimensionTooLarge { requested: dim, limit: MAX_DENSE_DIM });
    }

    let c = |re: f64| Complex64::new(re, 0.0);
    let eye = |d: usize| Array2::<Complex64>::eye(d);
    let mut lower = Array2::<Complex64>::zeros((levels, levels));
    for m in 1..levels {
        lower[[m - 1, m]] = c((m as f64).sqrt());
    }
    let raise = lower.t().mapv(|v| v.conj());

    let embed_mode = |op: &Array2<Complex64>, alpha: usize| -> Array2<Complex64> {
        let mut out = eye(2);
        for k in 0..n {
            let factor = if k == alpha { op.clone() } else { eye(levels) };
            out = kron(&out, &factor);
        }
        out
    };

    let omega_q = model.qubits[0].omega;
    let mut h = kron(&sigma_z(), &eye(bath_dim)).mapv(|v| v * c(HBAR * omega_q / 2.0));
    for alpha in 0..n {
        let number = raise.dot(&lower);
        h = h + embed_mode(&number, alpha).mapv(|v| v * c(HBAR * ch.mode_frequencies[alpha]));
        let g = ch.couplings[[0, alpha]];
        if drop_counter_rotating {
            let plus_a = kron(&sigma_plus(), &eye(bath_dim)).dot(&embed_mode(&lower, alpha));
            let minus_ad = kron(&sigma_minus(), &eye(bath_dim)).dot(&embed_mode(&raise, alpha));
            h = h + (plus_a + minus_ad).mapv(|v| v * c(-g));
        } else {
            let quad = embed_mode(&raise, alpha) - embed_mode(&lower, alpha);
            let coupling = kron(&sigma_y(), &eye(bath_dim)).dot(&quad);
            h = h + coupling.mapv(|v| v * Complex64::new(0.0, g));
        }
    }

    // thermal product state, truncated geometric weights renormalized
    let mut tail_mass = 0.0;
    let mut bath_rho: Array2<Complex64> = Array2::eye(1);
    for alpha in 0..n {
        let occ = if thermal.is_zero() {
            0.0
        } else {
            bose_einstein(ch.mode_frequencies[alpha], thermal).expect("omega > 0")
        };
        let ratio = occ / (1.0 + occ);
        let tail = ratio.powi(levels as i32);
        if tail > TAIL_TOL {
            return Err(OracleError::CutoffTooLow { tail });
        }
        tail_mass += tail;
        let kept = 1.0 - tail;
        let mut mode_rho = Array2::<Complex64>::zeros((levels, levels));
        for m in 0..levels {
            mode_rho[[m, m]] = c(ratio.powi(m as i32) / (1.0 + occ) / kept);
        }
        bath_rho = kron(&bath_rho, &mode_rho);
    }
    let mut qubit = Array2::<Complex64>::zeros((2, 2));
    qubit[[1, 1]] = c(1.0);
    let rho0 = kron(&qubit, &bath_rho);

    let (vals, vecs) = h.eigh(UPLO::Lower).expect("Hermitian eigendecomposition");
    let vdag = vecs.t().mapv(|v| v.conj());
    let rho_eig = vdag.dot(&rho0).dot(&vecs);

    let states = t_grid
        .iter()
        .map(|&t| {
            let mut rot = rho_eig.clone();
            for k in 0..dim {
                for l in 0..dim {
                    rot[[k, l]] *= Complex64::from_polar(1.0, -(vals[k] - vals[l]) * t / HBAR);
                }
            }
            let full = vecs.dot(&rot).dot(&vdag);
            let mut red = Array2::<Complex64>::zeros((2, 2));
            for q in 0..2 {
                for qp in 0..2 {
                    for b in 0..bath_dim {
                        red[[q, qp]] += full[[q * bath_dim + b, qp * bath_dim + b]];
                    }
                }
            }
            red
        })
        .collect();

    Ok(DenseOracleRun { states, tail_mass })
}
