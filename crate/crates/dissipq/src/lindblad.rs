//! GKSL (Lindblad) generators for the supported topologies, a fixed-step
//! RK4 integrator with automatic step refinement, and dense steady-state
//! solving via the vectorized superoperator.

use ndarray::Array2;
use ndarray_linalg::eigh::Eigh;
use ndarray_linalg::svd::SVD;
use ndarray_linalg::UPLO;
use num_complex::Complex64;
use std::f64::consts::PI;
use thiserror::Error;

use crate::hamiltonian::{BathChannel, SystemBathModel};
use crate::spectra::{bose_einstein, OhmicBathDensity, ThermalParams};
use crate::HBAR;

#[derive(Debug, Error)]
pub enum LindbladError {
    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),
    #[error("internal consistency failure: negative rate {0}")]
    NegativeRate(f64),
    #[error("step size underflow: self-consistency not reached")]
    StepSizeUnderflow,
    #[error(
        "invariant breach at t={time}: trace deviation {trace_deviation}, min eigenvalue {min_eigenvalue}"
    )]
    InvariantBreach { time: f64, trace_deviation: f64, min_eigenvalue: f64 },
    #[error("stationary kernel is {dimension}-dimensional, not unique")]
    DegenerateKernel { dimension: usize, basis: Vec<Array2<Complex64>> },
    #[error("no stationary state found within tolerance")]
    NoStationaryState,
}

/// One jump term: the dissipator rate * D[operator].
#[derive(Debug, Clone)]
pub struct Jump {
    pub operator: Array2<Complex64>,
    /// 1/s.
    pub rate: f64,
}

/// Common-bath emission/absorption rate matrices Gamma_jk.
#[derive(Debug, Clone)]
pub struct RateMatrices {
    pub down: Array2<f64>,
    pub up: Array2<f64>,
    /// Shared channel frequency, rad/s.
    pub omega: f64,
}

#[derive(Debug, Clone)]
pub struct LindbladGenerator {
    pub dim: usize,
    /// Coherent Hamiltonian, joules.
    pub hamiltonian: Array2<Complex64>,
    pub jumps: Vec<Jump>,
    /// Present for a common-bath channel.
    pub rate_matrices: Option<RateMatrices>,
    /// Lamb-shift correction, joules. Defaults to zero; callers may supply
    /// their own Hermitian term.
    pub lamb_shift: Array2<Complex64>,
}

#[derive(Debug, Clone, Copy)]
pub struct StepDiagnostics {
    pub trace_deviation: f64,
    pub min_eigenvalue: f64,
    pub purity: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Array2<Complex64>>,
    pub diagnostics: Vec<StepDiagnostics>,
}

const TRACE_TOL: f64 = 1e-9;
const EIG_TOL: f64 = 1e-9;
/// Relative detuning below which two common-bath qubits count as resonant.
pub const RESONANCE_TOL: f64 = 1e-6;

/// Emission and absorption rates from a bath density evaluator:
/// Gamma_down = pi J(w) (coth(b hbar w / 2) + 1), Gamma_up with (coth - 1).
/// At T = 0 these reduce to (2 pi J, 0); the zero-temperature rate
/// Gamma = 2 pi J(w) satisfies Gamma_down = Gamma (n+1), Gamma_up = Gamma n.
pub fn decay_rates(j: impl Fn(f64) -> f64, omega: f64, thermal: ThermalParams) -> (f64, f64) {
    assert!(omega > 0.0, "decay rates need omega > 0");
    let gamma = 2.0 * PI * j(omega);
    if thermal.is_zero() {
        return (gamma, 0.0);
    }
    let n = bose_einstein(omega, thermal).expect("omega > 0");
    (gamma * (n + 1.0), gamma * n)
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub(crate) fn kron(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Array2<Complex64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = a[[i, j]] * b[[k, l]];
                }
            }
        }
    }
    out
}

fn identity(n: usize) -> Array2<Complex64> {
    Array2::eye(n)
}

/// Basis ordering: index 0 = |g>, 1 = |e>; two qubits as A (x) B.
pub fn sigma_z() -> Array2<Complex64> {
    ndarray::array![[c(-1.0), c(0.0)], [c(0.0), c(1.0)]]
}

pub fn sigma_minus() -> Array2<Complex64> {
    ndarray::array![[c(0.0), c(1.0)], [c(0.0), c(0.0)]]
}

pub fn sigma_plus() -> Array2<Complex64> {
    ndarray::array![[c(0.0), c(0.0)], [c(1.0), c(0.0)]]
}

pub fn sigma_y() -> Array2<Complex64> {
    ndarray::array![
        [c(0.0), Complex64::new(0.0, 1.0)],
        [Complex64::new(0.0, -1.0), c(0.0)]
    ]
}

/// Embed a single-qubit operator on qubit `j` of an `nq`-qubit register.
pub fn embed(op: &Array2<Complex64>, j: usize, nq: usize) -> Array2<Complex64> {
    let mut out = if j == 0 { op.clone() } else { identity(2) };
    for k in 1..nq {
        let factor = if k == j { op.clone() } else { identity(2) };
        out = kron(&out, &factor);
    }
    out
}

fn effective_density(ch: &BathChannel, qubit: usize) -> impl Fn(f64) -> f64 + '_ {
    let density = OhmicBathDensity { gamma: ch.gamma[qubit], cutoff: ch.cutoff };
    move |w: f64| {
        let base = density.j(w);
        match ch.filter {
            Some(f) => {
                let d = f.rc * (f.omega_f * f.omega_f - w * w);
                base * w * w / (w * w + d * d)
            }
            None => base,
        }
    }
}

/// Assemble the GKSL generator for a weak-coupling model.
///
/// Common-bath channels require the two qubits resonant within
/// [`RESONANCE_TOL`]; the shipped rate matrices are the maximally correlated
/// Gamma_jk = sqrt(Gamma_j Gamma_k), which follow from both qubits sampling
/// the same bath spectrum at the shared frequency. With a direct coupling
/// capacitor the dissipator is kept in the bare qubit basis.
pub fn build_generator(model: &SystemBathModel) -> Result<LindbladGenerator, LindbladError> {
    let nq = model.qubits.len();
    let dim = 1 << nq;
    let mut h: Array2<Complex64> = Array2::zeros((dim, dim));
    for (j, q) in model.qubits.iter().enumerate() {
        h = h + embed(&sigma_z(), j, nq).mapv(|v| v * c(HBAR * q.omega / 2.0));
    }
    if nq == 2 && model.direct_coupling != 0.0 {
        let syy = embed(&sigma_y(), 0, nq).dot(&embed(&sigma_y(), 1, nq));
        h = h + syy.mapv(|v| v * c(model.direct_coupling));
    }

    let mut jumps = Vec::new();
    let mut rate_matrices = None;
    for ch in &model.channels {
        let thermal = ThermalParams::new(ch.temperature);
        let active: Vec<usize> = (0..nq).filter(|&j| ch.gamma[j] > 0.0).collect();
        match active.len() {
            0 => {}
            1 => {
                let j = active[0];
                let omega = model.qubits[j].omega;
                let (down, up) = decay_rates(effective_density(ch, j), omega, thermal);
                push_jump(&mut jumps, embed(&sigma_minus(), j, nq), down)?;
                push_jump(&mut jumps, embed(&sigma_plus(), j, nq), up)?;
            }
            2 => {
                let (wa, wb) = (model.qubits[0].omega, model.qubits[1].omega);
                if (wa - wb).abs() / wa > RESONANCE_TOL {
                    return Err(LindbladError::UnsupportedRegime(format!(
                        "common bath with detuned qubits (|wA-wB|/wA = {:.3e}); \
                         off-resonant cross rates are not modeled",
                        (wa - wb).abs() / wa
                    )));
                }
                let rates: Vec<(f64, f64)> = active
                    .iter()
                    .map(|&j| decay_rates(effective_density(ch, j), wa, thermal))
                    .collect();
                let mut down = Array2::zeros((nq, nq));
                let mut up = Array2::zeros((nq, nq));
                for j in 0..nq {
                    for k in 0..nq {
                        down[[j, k]] = (rates[j].0 * rates[k].0).sqrt();
                        up[[j, k]] = (rates[j].1 * rates[k].1).sqrt();
                    }
                }
                // Gamma_jk = sqrt(Gamma_j Gamma_k) is rank one, so the
                // dissipator reduces to a single collective jump operator.
                let total_down: f64 = rates.iter().map(|r| r.0).sum();
                let total_up: f64 = rates.iter().map(|r| r.1).sum();
                if total_down > 0.0 {
                    let mut op: Array2<Complex64> = Array2::zeros((dim, dim));
                    for (idx, &j) in active.iter().enumerate() {
                        let w = (rates[idx].0 / total_down).sqrt();
                        op = op + embed(&sigma_minus(), j, nq).mapv(|v| v * c(w));
                    }
                    push_jump(&mut jumps, op, total_down)?;
                }
                if total_up > 0.0 {
                    let mut op: Array2<Complex64> = Array2::zeros((dim, dim));
                    for (idx, &j) in active.iter().enumerate() {
                        let w = (rates[idx].1 / total_up).sqrt();
                        op = op + embed(&sigma_plus(), j, nq).mapv(|v| v * c(w));
                    }
                    push_jump(&mut jumps, op, total_up)?;
                }
                rate_matrices = Some(RateMatrices { down, up, omega: wa });
            }
            _ => unreachable!("at most two qubits"),
        }
    }

    Ok(LindbladGenerator {
        dim,
        hamiltonian: h,
        jumps,
        rate_matrices,
        lamb_shift: Array2::zeros((dim, dim)),
    })
}

fn push_jump(
    jumps: &mut Vec<Jump>,
    operator: Array2<Complex64>,
    rate: f64,
) -> Result<(), LindbladError> {
    if rate < 0.0 {
        return Err(LindbladError::NegativeRate(rate));
    }
    if rate > 0.0 {
        jumps.push(Jump { operator, rate });
    }
    Ok(())
}

fn adjoint(m: &Array2<Complex64>) -> Array2<Complex64> {
    m.t().mapv(|v| v.conj())
}

/// Apply the generator: L(rho) = -i/hbar [H + H_LS, rho] + sum_k r_k D[L_k](rho).
pub fn apply(gen: &LindbladGenerator, rho: &Array2<Complex64>) -> Array2<Complex64> {
    let h = &gen.hamiltonian + &gen.lamb_shift;
    let comm = h.dot(rho) - rho.dot(&h);
    let mut out = comm.mapv(|v| v * Complex64::new(0.0, -1.0 / HBAR));
    for j in &gen.jumps {
        let ld = adjoint(&j.operator);
        let ldl = ld.dot(&j.operator);
        let gain = j.operator.dot(rho).dot(&ld);
        let loss = ldl.dot(rho) + rho.dot(&ldl);
        out = out + (gain - loss.mapv(|v| v * c(0.5))).mapv(|v| v * c(j.rate));
    }
    out
}

fn diagnostics_of(rho: &Array2<Complex64>) -> StepDiagnostics {
    let dim = rho.nrows();
    let mut tr = Complex64::new(0.0, 0.0);
    for i in 0..dim {
        tr += rho[[i, i]];
    }
    let herm = (rho + &adjoint(rho)).mapv(|v| v * c(0.5));
    let min_eigenvalue = herm
        .eigh(UPLO::Lower)
        .map(|(vals, _)| vals.iter().cloned().fold(f64::INFINITY, f64::min))
        .unwrap_or(f64::NAN);
    let purity = rho
        .dot(rho)
        .diag()
        .iter()
        .map(|v| v.re)
        .sum::<f64>();
    StepDiagnostics {
        trace_deviation: (tr - c(1.0)).norm(),
        min_eigenvalue,
        purity,
    }
}

/// Integrate with classic RK4 using `total_steps` uniform steps spread over
/// the span of `t_grid`, sampling at each grid time. Exposed so the
/// convergence order can be measured; use [`evolve`] for the self-refining
/// driver.
pub fn evolve_fixed(
    gen: &LindbladGenerator,
    rho0: &Array2<Complex64>,
    t_grid: &[f64],
    total_steps: usize,
) -> Trajectory {
    assert!(t_grid.windows(2).all(|w| w[1] > w[0]), "t_grid must increase");
    let span = t_grid[t_grid.len() - 1] - t_grid[0];
    let dt_target = if span > 0.0 { span / total_steps as f64 } else { 1.0 };
    let mut rho = rho0.clone();
    let mut states = Vec::with_capacity(t_grid.len());
    let mut diagnostics = Vec::with_capacity(t_grid.len());
    states.push(rho.clone());
    diagnostics.push(diagnostics_of(&rho));
    for w in t_grid.windows(2) {
        let seg = w[1] - w[0];
        let n = (seg / dt_target).ceil().max(1.0) as usize;
        let h = seg / n as f64;
        for _ in 0..n {
            let k1 = apply(gen, &rho);
            let k2 = apply(gen, &(&rho + &k1.mapv(|v| v * c(h / 2.0))));
            let k3 = apply(gen, &(&rho + &k2.mapv(|v| v * c(h / 2.0))));
            let k4 = apply(gen, &(&rho + &k3.mapv(|v| v * c(h))));
            rho = &rho
                + &(k1 + k2.mapv(|v| v * c(2.0)) + k3.mapv(|v| v * c(2.0)) + k4)
                    .mapv(|v| v * c(h / 6.0));
        }
        states.push(rho.clone());
        diagnostics.push(diagnostics_of(&rho));
    }
    Trajectory { times: t_grid.to_vec(), states, diagnostics }
}

/// Integrate the master equation, doubling the step count until every
/// sampled population changes by less than 1e-8, then verify the trace and
/// positivity invariants on the accepted trajectory.
pub fn evolve(
    gen: &LindbladGenerator,
    rho0: &Array2<Complex64>,
    t_grid: &[f64],
) -> Result<Trajectory, LindbladError> {
    let dim = gen.dim;
    assert_eq!(rho0.nrows(), dim);
    let mut total_steps = 64usize.max(t_grid.len());
    let mut prev: Option<Vec<f64>> = None;
    loop {
        let traj = evolve_fixed(gen, rho0, t_grid, total_steps);
        let pops: Vec<f64> = traj
            .states
            .iter()
            .flat_map(|s| (0..dim).map(move |i| s[[i, i]].re))
            .collect();
        if let Some(p) = &prev {
            // NaN (a diverged run) must count as not converged, so fold with
            // a NaN-propagating maximum rather than f64::max.
            let max_diff = p.iter().zip(&pops).fold(0.0f64, |acc, (a, b)| {
                let d = (a - b).abs();
                if d.is_nan() { f64::INFINITY } else { acc.max(d) }
            });
            if max_diff < 1e-8 {
                for (t, d) in traj.times.iter().zip(&traj.diagnostics) {
                    if !(d.trace_deviation <= TRACE_TOL) || !(d.min_eigenvalue >= -EIG_TOL) {
                        return Err(LindbladError::InvariantBreach {
                            time: *t,
                            trace_deviation: d.trace_deviation,
                            min_eigenvalue: d.min_eigenvalue,
                        });
                    }
                }
                return Ok(traj);
            }
        }
        if total_steps > (1 << 26) {
            return Err(LindbladError::StepSizeUnderflow);
        }
        prev = Some(pops);
        total_steps *= 2;
    }
}

fn vec_index(i: usize, j: usize, dim: usize) -> usize {
    // column-stacking: vec(rho)[j*dim + i] = rho[i, j]
    j * dim + i
}

/// Dense superoperator of the generator under column-stacking vectorization.
pub fn superoperator(gen: &LindbladGenerator) -> Array2<Complex64> {
    let dim = gen.dim;
    let n2 = dim * dim;
    let mut sup = Array2::zeros((n2, n2));
    // build by applying the generator to matrix units
    for a in 0..dim {
        for b in 0..dim {
            let mut unit: Array2<Complex64> = Array2::zeros((dim, dim));
            unit[[a, b]] = c(1.0);
            let image = apply(gen, &unit);
            let col = vec_index(a, b, dim);
            for i in 0..dim {
                for j in 0..dim {
                    sup[[vec_index(i, j, dim), col]] = image[[i, j]];
                }
            }
        }
    }
    sup
}

/// Solve L(rho) = 0 by SVD null space of the vectorized generator.
///
/// A unique kernel yields the normalized stationary state. A degenerate
/// kernel (e.g. a zero-temperature common bath, where the subradiant state
/// is dark) is returned as `DegenerateKernel` carrying an orthonormal basis
/// of kernel matrices.
pub fn steady_state(gen: &LindbladGenerator) -> Result<Array2<Complex64>, LindbladError> {
    let dim = gen.dim;
    let sup = superoperator(gen);
    let (_, s, vt) = sup.svd(false, true).map_err(|_| LindbladError::NoStationaryState)?;
    let vt = vt.expect("requested");
    let smax = s[0];
    let kernel: Vec<usize> = (0..s.len()).filter(|&i| s[i] < 1e-12 * smax).collect();
    match kernel.len() {
        0 => Err(LindbladError::NoStationaryState),
        1 => {
            let row = vt.row(kernel[0]);
            let mut rho: Array2<Complex64> = Array2::zeros((dim, dim));
            for i in 0..dim {
                for j in 0..dim {
                    rho[[i, j]] = row[vec_index(i, j, dim)].conj();
                }
            }
            let rho_h = (&rho + &adjoint(&rho)).mapv(|v| v * c(0.5));
            let tr: Complex64 = rho_h.diag().iter().sum();
            if tr.norm() < 1e-12 {
                return Err(LindbladError::NoStationaryState);
            }
            let rho_n = rho_h.mapv(|v| v / tr);
            // post-condition ||L(rho)|| < 1e-12 ||L||
            let residual = apply(gen, &rho_n)
                .iter()
                .map(|v| v.norm())
                .fold(0.0, f64::max);
            let scale = sup.iter().map(|v| v.norm()).fold(0.0, f64::max);
            if residual > 1e-10 * scale.max(1.0) {
                return Err(LindbladError::NoStationaryState);
            }
            Ok(rho_n)
        }
        k => {
            let basis = kernel
                .iter()
                .map(|&idx| {
                    let row = vt.row(idx);
                    let mut m: Array2<Complex64> = Array2::zeros((dim, dim));
                    for i in 0..dim {
                        for j in 0..dim {
                            m[[i, j]] = row[vec_index(i, j, dim)].conj();
                        }
                    }
                    m
                })
                .collect();
            Err(LindbladError::DegenerateKernel { dimension: k, basis })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::foster::{ohmic_impedance, synthesize};
    use crate::hamiltonian::weak_coupling_model;
    use crate::netlist::parse_netlist;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TAU: f64 = std::f64::consts::TAU;

    fn reference_model(temp_mk: f64) -> SystemBathModel {
        let spec = parse_netlist(&format!(
            "qubit A freq=5GHz C=80fF\n\
             resistor R1 R=50ohm cutoff=628GHz T={temp_mk}mK\n\
             cap A R1 Cg=0.8fF\n"
        ))
        .unwrap();
        let wc = spec.resistors[0].cutoff;
        let dw = 20.0 * TAU * 5e9 / 400.0;
        let bath = synthesize(|w| ohmic_impedance(50.0, wc, w).re, dw, 400).unwrap();
        weak_coupling_model(&spec, &[bath]).unwrap()
    }

    fn common_bath_model(freq_b_ghz: f64) -> SystemBathModel {
        let spec = parse_netlist(&format!(
            "qubit A freq=5GHz C=80fF\n\
             qubit B freq={freq_b_ghz}GHz C=80fF\n\
             resistor R1 R=50ohm cutoff=628GHz T=0K\n\
             cap A R1 Cg=0.8fF\n\
             cap B R1 Cg=0.8fF\n"
        ))
        .unwrap();
        let wc = spec.resistors[0].cutoff;
        let dw = 20.0 * TAU * 5e9 / 400.0;
        let bath = synthesize(|w| ohmic_impedance(50.0, wc, w).re, dw, 400).unwrap();
        weak_coupling_model(&spec, &[bath]).unwrap()
    }

    fn excited() -> Array2<Complex64> {
        ndarray::array![[c(0.0), c(0.0)], [c(0.0), c(1.0)]]
    }

    fn log_linear_rate(times: &[f64], p: &[f64]) -> f64 {
        let n = times.len() as f64;
        let sx: f64 = times.iter().sum();
        let sy: f64 = p.iter().map(|v| v.ln()).sum();
        let sxx: f64 = times.iter().map(|t| t * t).sum();
        let sxy: f64 = times.iter().zip(p).map(|(t, v)| t * v.ln()).sum();
        -(n * sxy - sx * sy) / (n * sxx - sx * sx)
    }

    #[test]
    fn decay_rates_zero_temperature() {
        let j = OhmicBathDensity { gamma: 1e-5, cutoff: 1e12 };
        let w = TAU * 5e9;
        let (down, up) = decay_rates(|x| j.j(x), w, ThermalParams::new(0.0));
        assert_eq!(up, 0.0);
        assert!((down - 2.0 * PI * j.j(w)).abs() / down < 1e-15);
    }

    #[test]
    fn decay_rates_detailed_balance() {
        let j = OhmicBathDensity { gamma: 3e-6, cutoff: 1e12 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let w = TAU * rng.gen_range(1e9..10e9);
            let t = rng.gen_range(0.01..0.5);
            let thermal = ThermalParams::new(t);
            let (down, up) = decay_rates(|x| j.j(x), w, thermal);
            let expected = (-thermal.x(w)).exp();
            assert!((up / down - expected).abs() / expected < 1e-12);
        }
    }

    #[test]
    fn decay_rates_ln3_occupation() {
        // beta hbar w = ln 3 -> n = 1/2 -> down = 3/2 Gamma, up = 1/2 Gamma
        let j = OhmicBathDensity { gamma: 1e-5, cutoff: 1e13 };
        let w = TAU * 5e9;
        let t = HBAR * w / (crate::KB * 3f64.ln());
        let (down, up) = decay_rates(|x| j.j(x), w, ThermalParams::new(t));
        let gamma = 2.0 * PI * j.j(w);
        assert!((down - 1.5 * gamma).abs() / gamma < 1e-12);
        assert!((up - 0.5 * gamma).abs() / gamma < 1e-12);
    }

    #[test]
    fn single_qubit_population_decay_matches_analytic() {
        let model = reference_model(0.0);
        let gen = build_generator(&model).unwrap();
        assert_eq!(gen.jumps.len(), 1);
        let gamma = gen.jumps[0].rate;
        let tmax = 3.0 / gamma;
        let t_grid: Vec<f64> = (0..40).map(|i| i as f64 * tmax / 39.0).collect();
        let traj = evolve(&gen, &excited(), &t_grid).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let pe = s[[1, 1]].re;
            assert!((pe - (-gamma * t).exp()).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn zero_generator_is_identity_dynamics() {
        let gen = LindbladGenerator {
            dim: 2,
            hamiltonian: Array2::zeros((2, 2)),
            jumps: vec![],
            rate_matrices: None,
            lamb_shift: Array2::zeros((2, 2)),
        };
        let rho0 = ndarray::array![
            [c(0.25), Complex64::new(0.1, 0.05)],
            [Complex64::new(0.1, -0.05), c(0.75)]
        ];
        let traj = evolve(&gen, &rho0, &[0.0, 1.0, 2.0]).unwrap();
        for s in &traj.states {
            for (a, b) in s.iter().zip(rho0.iter()) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn finite_temperature_relaxes_to_gibbs_weight() {
        let model = reference_model(150.0);
        let gen = build_generator(&model).unwrap();
        let (down, up) = (gen.jumps[0].rate, gen.jumps[1].rate);
        let total = down + up;
        let tmax = 22.0 / total;
        let t_grid = vec![0.0, tmax];
        let traj = evolve(&gen, &excited(), &t_grid).unwrap();
        let pe = traj.states[1][[1, 1]].re;
        let x = ThermalParams::new(0.150).x(model.qubits[0].omega);
        let gibbs = (-x).exp() / (1.0 + (-x).exp());
        assert!((pe - gibbs).abs() < 1e-7, "pe={pe} gibbs={gibbs}");
    }

    #[test]
    fn rk4_fourth_order_convergence() {
        let model = reference_model(0.0);
        let gen = build_generator(&model).unwrap();
        let gamma = gen.jumps[0].rate;
        let t_grid = vec![0.0, 1.0 / gamma];
        let exact = (-1.0f64).exp();
        let mut errs = Vec::new();
        for steps in [4usize, 8, 16, 32] {
            let traj = evolve_fixed(&gen, &excited(), &t_grid, steps);
            errs.push((traj.states[1][[1, 1]].re - exact).abs());
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                ratio > 16.0 / 1.5 && ratio < 16.0 * 1.5,
                "order ratio {ratio}, errors {errs:?}"
            );
        }
    }

    #[test]
    fn separate_baths_factorize_without_direct_coupling() {
        let spec = parse_netlist(
            "qubit A freq=5GHz C=80fF\n\
             qubit B freq=5.3GHz C=80fF\n\
             resistor RL R=50ohm cutoff=628GHz T=0K\n\
             resistor RR R=50ohm cutoff=628GHz T=0K\n\
             cap A RL Cg=0.8fF\n\
             cap B RR Cg=0.8fF\n\
             cap A B Cc=0.000001fF\n",
        )
        .unwrap();
        let wc = spec.resistors[0].cutoff;
        let dw = 20.0 * TAU * 5.3e9 / 400.0;
        let bath = || synthesize(|w| ohmic_impedance(50.0, wc, w).re, dw, 400).unwrap();
        let mut model = weak_coupling_model(&spec, &[bath(), bath()]).unwrap();
        // the vestigial coupling capacitor leaves an O(C_c/C_A) direct term;
        // drop it so the generator factorizes exactly
        model.direct_coupling = 0.0;
        let gen = build_generator(&model).unwrap();
        let rates: Vec<f64> = gen.jumps.iter().map(|j| j.rate).collect();
        assert_eq!(rates.len(), 2);
        // |ee> product state: each qubit decays at its own local rate
        let mut rho0: Array2<Complex64> = Array2::zeros((4, 4));
        rho0[[3, 3]] = c(1.0);
        let tmax = 1.0 / rates[0];
        let t_grid: Vec<f64> = (0..10).map(|i| i as f64 * tmax / 9.0).collect();
        let traj = evolve(&gen, &rho0, &t_grid).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let pe_a = s[[2, 2]].re + s[[3, 3]].re;
            let pe_b = s[[1, 1]].re + s[[3, 3]].re;
            assert!(
                (pe_a - (-rates[0] * t).exp()).abs() < 1e-7,
                "t={t} pe_a={pe_a} expected={} diff={}",
                (-rates[0] * t).exp(),
                (pe_a - (-rates[0] * t).exp()).abs()
            );
            assert!((pe_b - (-rates[1] * t).exp()).abs() < 1e-7);
        }
    }

    #[test]
    fn common_bath_antisymmetric_state_is_dark() {
        let gen = build_generator(&common_bath_model(5.0)).unwrap();
        // (|eg> - |ge>)/sqrt(2): indices eg=2, ge=1
        let mut rho: Array2<Complex64> = Array2::zeros((4, 4));
        rho[[1, 1]] = c(0.5);
        rho[[2, 2]] = c(0.5);
        rho[[1, 2]] = c(-0.5);
        rho[[2, 1]] = c(-0.5);
        let image = apply(&gen, &rho);
        let rate_scale = gen.jumps[0].rate;
        let max = image.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(max / rate_scale < 1e-10, "residual {}", max / rate_scale);
    }

    #[test]
    fn common_bath_symmetric_state_superradiant() {
        let model = common_bath_model(5.0);
        let gen = build_generator(&model).unwrap();
        let single = build_generator(&reference_model(0.0)).unwrap();
        let gamma_single = single.jumps[0].rate;
        let mut rho: Array2<Complex64> = Array2::zeros((4, 4));
        rho[[1, 1]] = c(0.5);
        rho[[2, 2]] = c(0.5);
        rho[[1, 2]] = c(0.5);
        rho[[2, 1]] = c(0.5);
        let tmax = 0.5 / gamma_single;
        let t_grid: Vec<f64> = (0..30).map(|i| i as f64 * tmax / 29.0).collect();
        let traj = evolve(&gen, &rho, &t_grid).unwrap();
        let survival: Vec<f64> = traj
            .states
            .iter()
            .map(|s| 0.5 * (s[[1, 1]].re + s[[2, 2]].re + s[[1, 2]].re + s[[2, 1]].re))
            .collect();
        let rate = log_linear_rate(&traj.times, &survival);
        let rel = (rate - 2.0 * gamma_single).abs() / (2.0 * gamma_single);
        assert!(rel < 1e-6, "rate {rate}, expected {}", 2.0 * gamma_single);
    }

    #[test]
    fn common_bath_rate_matrices_correlated() {
        let gen = build_generator(&common_bath_model(5.0)).unwrap();
        let rm = gen.rate_matrices.as_ref().unwrap();
        let g = rm.down[[0, 0]];
        for j in 0..2 {
            for k in 0..2 {
                assert!((rm.down[[j, k]] - g).abs() / g < 1e-12);
            }
        }
        assert!(rm.up.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn detuned_common_bath_rejected() {
        let err = build_generator(&common_bath_model(5.4)).unwrap_err();
        assert!(matches!(err, LindbladError::UnsupportedRegime(_)));
    }

    #[test]
    fn steady_state_is_gibbs_for_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let w = TAU * rng.gen_range(1e9..10e9);
            let t = rng.gen_range(0.02..0.5);
            let j = OhmicBathDensity { gamma: rng.gen_range(1e-7..1e-4), cutoff: 20.0 * w };
            let thermal = ThermalParams::new(t);
            let (down, up) = decay_rates(|x| j.j(x), w, thermal);
            let mut h: Array2<Complex64> = Array2::zeros((2, 2));
            h[[0, 0]] = c(-HBAR * w / 2.0);
            h[[1, 1]] = c(HBAR * w / 2.0);
            let gen = LindbladGenerator {
                dim: 2,
                hamiltonian: h,
                jumps: vec![
                    Jump { operator: sigma_minus(), rate: down },
                    Jump { operator: sigma_plus(), rate: up },
                ],
                rate_matrices: None,
                lamb_shift: Array2::zeros((2, 2)),
            };
            let rho = steady_state(&gen).unwrap();
            let x = thermal.x(w);
            let z = 1.0 + (-x).exp();
            // trace distance to diag(1/z, e^{-x}/z)
            let d = 0.5
                * ((rho[[0, 0]].re - 1.0 / z).abs()
                    + (rho[[1, 1]].re - (-x).exp() / z).abs()
                    + 2.0 * rho[[0, 1]].norm());
            assert!(d < 1e-10, "trace distance {d}");
        }
    }

    #[test]
    fn steady_state_zero_temperature_is_ground() {
        let gen = build_generator(&reference_model(0.0)).unwrap();
        let rho = steady_state(&gen).unwrap();
        assert!((rho[[0, 0]].re - 1.0).abs() < 1e-12);
        assert!(rho[[1, 1]].norm() < 1e-12);
    }

    #[test]
    fn common_bath_zero_temperature_kernel_degenerate() {
        let gen = build_generator(&common_bath_model(5.0)).unwrap();
        match steady_state(&gen) {
            Err(LindbladError::DegenerateKernel { dimension, basis }) => {
                assert!(dimension >= 2, "kernel dim {dimension}");
                // the kernel must support both |gg> and the antisymmetric
                // Bell state: project both onto the basis span
                let mut gg: Array2<Complex64> = Array2::zeros((4, 4));
                gg[[0, 0]] = c(1.0);
                let mut anti: Array2<Complex64> = Array2::zeros((4, 4));
                anti[[1, 1]] = c(0.5);
                anti[[2, 2]] = c(0.5);
                anti[[1, 2]] = c(-0.5);
                anti[[2, 1]] = c(-0.5);
                for target in [gg, anti] {
                    let norm2: f64 = target.iter().map(|v| v.norm_sqr()).sum();
                    let mut proj2 = 0.0;
                    for b in &basis {
                        let overlap: Complex64 =
                            b.iter().zip(target.iter()).map(|(x, y)| x.conj() * y).sum();
                        proj2 += overlap.norm_sqr();
                    }
                    assert!(proj2 / norm2 > 1.0 - 1e-9, "projection {}", proj2 / norm2);
                }
            }
            other => panic!("expected degenerate kernel, got {other:?}"),
        }
    }

    #[test]
    fn direct_coupling_enters_hamiltonian() {
        let spec = parse_netlist(
            "qubit A freq=5GHz C=80fF\n\
             qubit B freq=5GHz C=80fF\n\
             resistor R1 R=50ohm cutoff=628GHz T=0K\n\
             cap A R1 Cg=0.8fF\n\
             cap B R1 Cg=0.8fF\n\
             cap A B Cc=0.4fF\n",
        )
        .unwrap();
        let wc = spec.resistors[0].cutoff;
        let dw = 20.0 * TAU * 5e9 / 200.0;
        let bath = synthesize(|w| ohmic_impedance(50.0, wc, w).re, dw, 200).unwrap();
        let model = weak_coupling_model(&spec, &[bath]).unwrap();
        let gen = build_generator(&model).unwrap();
        // sigma_y sigma_y couples |gg> and |ee>
        assert!(gen.hamiltonian[[0, 3]].norm() > 0.0);
        assert!((gen.hamiltonian[[0, 3]].re + model.direct_coupling).abs() < 1e-40);
    }

    #[test]
    fn trajectory_diagnostics_within_invariants() {
        let model = reference_model(100.0);
        let gen = build_generator(&model).unwrap();
        let total: f64 = gen.jumps.iter().map(|j| j.rate).sum();
        let t_grid: Vec<f64> = (0..20).map(|i| i as f64 * 5.0 / total / 19.0).collect();
        let traj = evolve(&gen, &excited(), &t_grid).unwrap();
        for d in &traj.diagnostics {
            assert!(d.trace_deviation <= 1e-9);
            assert!(d.min_eigenvalue >= -1e-9);
            assert!(d.purity <= 1.0 + 1e-9);
        }
    }
}
