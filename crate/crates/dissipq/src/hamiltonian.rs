//! Circuit Hamiltonians: capacitance matrices, the point transformation that
//! decouples the bath momenta, structured block inversion, and the emitted
//! system-bath models (closed-form weak coupling, or numerically
//! diagonalized normal modes for strong coupling).

use ndarray::{Array1, Array2};
use ndarray_linalg::eigh::Eigh;
use ndarray_linalg::solve::Inverse;
use ndarray_linalg::UPLO;
use std::f64::consts::PI;
use thiserror::Error;

use crate::foster::{ohmic_impedance, FosterBath};
use crate::netlist::{CircuitSpec, FilterDecl, QubitDecl, ResistorDecl, TopologyClass};
use crate::HBAR;

#[derive(Debug, Error)]
pub enum HamiltonianError {
    #[error("unsupported topology {0:?}")]
    UnsupportedTopology(TopologyClass),
    #[error("point transformation matrix M is not positive definite")]
    SingularTransform,
    #[error("structured block inverse is singular (D ~ 0 or S not invertible)")]
    SingularBlock,
    #[error("weak-coupling model requested but validation reported errors")]
    WeakCouplingViolated,
}

/// Full capacitance matrix of a supported circuit, partitioned into a system
/// block and a bath block, together with the structure that generated it.
#[derive(Debug, Clone)]
pub struct CapacitanceMatrix {
    /// Dense symmetric matrix, farads.
    pub matrix: Array2<f64>,
    /// Number of system (qubit) coordinates; rows past this index are bath.
    pub partition: usize,
    /// System block S (equals the top-left partition of `matrix`).
    pub system: Array2<f64>,
    /// Per-qubit capacitance to the shared bath node, farads.
    pub g: Array1<f64>,
    /// Bare bath capacitances C_alpha (diagonal), farads.
    pub bath_diag: Array1<f64>,
}

impl CapacitanceMatrix {
    /// Total coupling capacitance loaded onto the bath node.
    pub fn shunt(&self) -> f64 {
        self.g.sum()
    }
}

/// Result of the point transformation z = Z phi with
/// Z = diag(1, M0^{-1/2} M^{1/2}), M = diag(C_alpha) + xi e e^T.
#[derive(Debug, Clone)]
pub struct PointTransformed {
    /// Transformed capacitance matrix C_z = Z^{-1} C Z^{-1}.
    pub c_z: Array2<f64>,
    /// Coupling vector f = sqrt(M0) M^{-1/2} e.
    pub f: Array1<f64>,
    /// M^{-1/2}, needed to transform the inductance matrix.
    pub m_inv_sqrt: Array2<f64>,
    pub m0: f64,
    pub xi: f64,
}

/// P = [[S, b a f^T], [b f a^T, m I + d f f^T]] in structured form.
#[derive(Debug, Clone)]
pub struct StructuredMatrix {
    pub s: Array2<f64>,
    pub a: Array1<f64>,
    pub b: f64,
    pub d: f64,
    pub f: Array1<f64>,
    /// Coefficient of the identity in the bath block.
    pub scale: f64,
}

/// Inverse of a `StructuredMatrix`, still in structured form:
/// system block dense, off-diagonal block `off (x) f`, bath block
/// `bath_scale I + bath_coeff f f^T`.
#[derive(Debug, Clone)]
pub struct StructuredInverse {
    pub system_block: Array2<f64>,
    pub off: Array1<f64>,
    pub f: Array1<f64>,
    pub bath_scale: f64,
    pub bath_coeff: f64,
}

impl StructuredMatrix {
    pub fn dense(&self) -> Array2<f64> {
        let ns = self.s.nrows();
        let nb = self.f.len();
        let n = ns + nb;
        let mut m = Array2::zeros((n, n));
        for i in 0..ns {
            for j in 0..ns {
                m[[i, j]] = self.s[[i, j]];
            }
            for k in 0..nb {
                let v = self.b * self.a[i] * self.f[k];
                m[[i, ns + k]] = v;
                m[[ns + k, i]] = v;
            }
        }
        for k in 0..nb {
            for l in 0..nb {
                m[[ns + k, ns + l]] = self.d * self.f[k] * self.f[l];
            }
            m[[ns + k, ns + k]] += self.scale;
        }
        m
    }
}

impl StructuredInverse {
    pub fn dense(&self) -> Array2<f64> {
        let ns = self.system_block.nrows();
        let nb = self.f.len();
        let n = ns + nb;
        let mut m = Array2::zeros((n, n));
        for i in 0..ns {
            for j in 0..ns {
                m[[i, j]] = self.system_block[[i, j]];
            }
            for k in 0..nb {
                let v = self.off[i] * self.f[k];
                m[[i, ns + k]] = v;
                m[[ns + k, i]] = v;
            }
        }
        for k in 0..nb {
            for l in 0..nb {
                m[[ns + k, ns + l]] = self.bath_coeff * self.f[k] * self.f[l];
            }
            m[[ns + k, ns + k]] += self.bath_scale;
        }
        m
    }
}

/// Per-qubit entry of an emitted model.
#[derive(Debug, Clone)]
pub struct ModelQubit {
    pub name: String,
    /// Bare angular frequency, rad/s.
    pub omega: f64,
    /// Effective inverse capacitance S^{-1}_jj, 1/F.
    pub inv_capacitance: f64,
    /// Charge-scale constant lambda_j = sqrt(hbar omega_j / (2 S^{-1}_jj)).
    pub lambda: f64,
}

/// Band-pass filter inserted between a qubit and its resistor.
#[derive(Debug, Clone, Copy)]
pub struct FilterParams {
    /// Resonance frequency 1/sqrt(L_f C_f), rad/s.
    pub omega_f: f64,
    /// R C_f time constant, s (the inverse bandwidth).
    pub rc: f64,
}

/// One dissipative channel: a resistor bath and the coupling of every qubit
/// to its discretized modes.
#[derive(Debug, Clone)]
pub struct BathChannel {
    pub resistor: String,
    pub resistance: f64,
    pub cutoff: f64,
    pub temperature: f64,
    pub delta_omega: f64,
    /// Mode frequencies omega_alpha, rad/s.
    pub mode_frequencies: Vec<f64>,
    /// Coupling energies g_{j,alpha} (joules), row j = qubit j. The
    /// interaction is i g_{j,alpha} sigma_j^y (a_alpha^dag - a_alpha).
    pub couplings: Array2<f64>,
    /// Dimensionless Ohmic strength gamma_j = R kappa_j^2 / hbar per qubit,
    /// where kappa_j = lambda_j (S^{-1} g)_j is the voltage-coupling charge.
    pub gamma: Vec<f64>,
    /// Transfer-function parameters if an LC filter shapes this channel.
    pub filter: Option<FilterParams>,
}

/// Closed-form weak-coupling system-bath model.
#[derive(Debug, Clone)]
pub struct SystemBathModel {
    pub topology: TopologyClass,
    pub qubits: Vec<ModelQubit>,
    /// Direct qubit-qubit coupling coefficient S^{-1}_12 lambda_A lambda_B,
    /// joules; multiplies sigma_A^y sigma_B^y.
    pub direct_coupling: f64,
    pub channels: Vec<BathChannel>,
}

/// Numerically diagonalized strong-coupling model.
#[derive(Debug, Clone)]
pub struct NormalModeModel {
    pub topology: TopologyClass,
    pub qubits: Vec<ModelQubit>,
    /// Normal-mode frequencies omega_alpha = sqrt((L_z^{-1})_aa / M0), rad/s,
    /// ascending.
    pub mode_frequencies: Vec<f64>,
    /// Rotated coupling vector f'_alpha = U_alpha f_alpha.
    pub f_rotated: Array1<f64>,
    /// Renormalized system block of C_z^{-1}, 1/F.
    pub system_inverse: Array2<f64>,
    /// Bare S^{-1} for comparison with the renormalized block.
    pub bare_inverse: Array2<f64>,
    /// Coupling energies lambda_j (S^{-1} g)_j sqrt(hbar omega_alpha / 2 M0)
    /// f'_alpha, joules; row j = qubit j.
    pub couplings: Array2<f64>,
    /// Number of near-degenerate adjacent normal-mode pairs (reported, not an
    /// error; the chosen eigenbasis is kept).
    pub degenerate_pairs: usize,
    pub m0: f64,
}

/// Free mass-scale constant: geometric mean of the qubit capacitances. Any
/// positive value gives the same physics; this one is fixed for
/// reproducibility.
pub fn default_m0(spec: &CircuitSpec) -> f64 {
    let logs: f64 = spec.qubits.iter().map(|q| q.capacitance.ln()).sum();
    (logs / spec.qubits.len() as f64).exp()
}

struct Parts<'a> {
    qubits: Vec<&'a QubitDecl>,
    /// Per qubit: the resistor its branch terminates in and the qubit-side
    /// coupling capacitance.
    attach: Vec<(&'a ResistorDecl, f64)>,
    cc: Option<f64>,
    filter: Option<&'a FilterDecl>,
}

fn cap_between(spec: &CircuitSpec, x: &str, y: &str) -> Option<f64> {
    spec.couplings
        .iter()
        .find(|c| (c.a == x && c.b == y) || (c.a == y && c.b == x))
        .map(|c| c.capacitance)
}

fn parts<'a>(spec: &'a CircuitSpec) -> Result<Parts<'a>, HamiltonianError> {
    use TopologyClass::*;
    let q: Vec<&QubitDecl> = spec.qubits.iter().collect();
    match spec.topology {
        SingleQubitBath => {
            let r = &spec.resistors[0];
            let cg = cap_between(spec, &q[0].name, &r.name).unwrap();
            Ok(Parts { qubits: q, attach: vec![(r, cg)], cc: None, filter: None })
        }
        SingleQubitFilteredBath => {
            let r = &spec.resistors[0];
            let f = &spec.filters[0];
            let cg = cap_between(spec, &q[0].name, &f.name).unwrap();
            Ok(Parts { qubits: q, attach: vec![(r, cg)], cc: None, filter: Some(f) })
        }
        TwoQubitCommonBath | TwoQubitCommonBathDirect => {
            let r = &spec.resistors[0];
            let attach = q
                .iter()
                .map(|qb| (r, cap_between(spec, &qb.name, &r.name).unwrap()))
                .collect();
            let cc = if spec.topology == TwoQubitCommonBathDirect {
                Some(cap_between(spec, &q[0].name, &q[1].name).unwrap())
            } else {
                None
            };
            Ok(Parts { qubits: q, attach, cc, filter: None })
        }
        TwoQubitSeparateBaths => {
            let mut attach = Vec::new();
            for qb in &q {
                let (r, cg) = spec
                    .resistors
                    .iter()
                    .find_map(|r| cap_between(spec, &qb.name, &r.name).map(|c| (r, c)))
                    .unwrap();
                attach.push((r, cg));
            }
            let cc = cap_between(spec, &q[0].name, &q[1].name);
            Ok(Parts { qubits: q, attach, cc, filter: None })
        }
        Unsupported => Err(HamiltonianError::UnsupportedTopology(spec.topology)),
    }
}

fn system_matrix(p: &Parts) -> Array2<f64> {
    let n = p.qubits.len();
    let cc = p.cc.unwrap_or(0.0);
    let mut s = Array2::zeros((n, n));
    for (j, qb) in p.qubits.iter().enumerate() {
        s[[j, j]] = qb.capacitance + p.attach[j].1 + cc;
    }
    if n == 2 && p.cc.is_some() {
        s[[0, 1]] = -cc;
        s[[1, 0]] = -cc;
    }
    s
}

fn invert_small(s: &Array2<f64>) -> Result<Array2<f64>, HamiltonianError> {
    s.inv().map_err(|_| HamiltonianError::SingularBlock)
}

/// Build the full capacitance matrix for a single-bath topology and the given
/// discretized bath.
pub fn build_capacitance_matrix(
    spec: &CircuitSpec,
    bath: &FosterBath,
) -> Result<CapacitanceMatrix, HamiltonianError> {
    use TopologyClass::*;
    match spec.topology {
        SingleQubitBath | TwoQubitCommonBath | TwoQubitCommonBathDirect => {}
        other => return Err(HamiltonianError::UnsupportedTopology(other)),
    }
    let p = parts(spec)?;
    let s = system_matrix(&p);
    let ns = p.qubits.len();
    let nb = bath.len();
    let g = Array1::from_iter(p.attach.iter().map(|&(_, cg)| cg));
    let bath_diag = Array1::from_iter(bath.modes.iter().map(|m| m.capacitance));
    let shunt = g.sum();
    let n = ns + nb;
    let mut m = Array2::zeros((n, n));
    for i in 0..ns {
        for j in 0..ns {
            m[[i, j]] = s[[i, j]];
        }
        for k in 0..nb {
            m[[i, ns + k]] = -g[i];
            m[[ns + k, i]] = -g[i];
        }
    }
    for k in 0..nb {
        for l in 0..nb {
            m[[ns + k, ns + l]] = shunt;
        }
        m[[ns + k, ns + k]] += bath_diag[k];
    }
    Ok(CapacitanceMatrix { matrix: m, partition: ns, system: s, g, bath_diag })
}

/// The xi that decouples the bath momenta: xi = sum_j g_j - g^T S^{-1} g.
/// Reduces to C_g - C_g^2/C_SigmaA (single qubit) and
/// 2 C_g - Tr(S^{-1}) C_g^2 (balanced two-qubit).
pub fn decoupling_xi(c: &CapacitanceMatrix) -> Result<f64, HamiltonianError> {
    let sinv = invert_small(&c.system)?;
    Ok(c.shunt() - c.g.dot(&sinv.dot(&c.g)))
}

/// Symmetric matrix functions of M = diag(bath_diag) + xi e e^T via
/// eigendecomposition, with an eigenvalue floor guarding rounding-induced
/// negatives.
fn m_alpha_roots(
    bath_diag: &Array1<f64>,
    xi: f64,
) -> Result<(Array2<f64>, Array2<f64>), HamiltonianError> {
    let nb = bath_diag.len();
    let mut m = Array2::from_diag(bath_diag);
    for k in 0..nb {
        for l in 0..nb {
            m[[k, l]] += xi;
        }
    }
    let (vals, vecs) = m
        .eigh(UPLO::Lower)
        .map_err(|_| HamiltonianError::SingularTransform)?;
    let vmax = vals.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let floor = 1e-18 * vmax;
    let mut sqrt = Array2::zeros((nb, nb));
    let mut inv_sqrt = Array2::zeros((nb, nb));
    for (idx, &v) in vals.iter().enumerate() {
        if v < -1e-12 * vmax {
            return Err(HamiltonianError::SingularTransform);
        }
        let v = v.max(floor);
        let col = vecs.column(idx);
        let (rs, ris) = (v.sqrt(), 1.0 / v.sqrt());
        for k in 0..nb {
            for l in 0..nb {
                sqrt[[k, l]] += rs * col[k] * col[l];
                inv_sqrt[[k, l]] += ris * col[k] * col[l];
            }
        }
    }
    Ok((sqrt, inv_sqrt))
}

/// Apply the point transformation Z = diag(1, M0^{-1/2} M^{1/2}) with
/// M = diag(C_alpha) + xi e e^T, returning C_z and the coupling vector f.
pub fn point_transform(
    c: &CapacitanceMatrix,
    xi: f64,
    m0: f64,
) -> Result<PointTransformed, HamiltonianError> {
    assert!(m0 > 0.0, "M0 must be positive");
    let ns = c.partition;
    let nb = c.bath_diag.len();
    let (_, m_inv_sqrt) = m_alpha_roots(&c.bath_diag, xi)?;
    let e = Array1::ones(nb);
    let f = m_inv_sqrt.dot(&e) * m0.sqrt();
    let shunt = c.shunt();
    let n = ns + nb;
    let mut c_z = Array2::zeros((n, n));
    for i in 0..ns {
        for j in 0..ns {
            c_z[[i, j]] = c.system[[i, j]];
        }
        for k in 0..nb {
            c_z[[i, ns + k]] = -c.g[i] * f[k];
            c_z[[ns + k, i]] = -c.g[i] * f[k];
        }
    }
    for k in 0..nb {
        for l in 0..nb {
            c_z[[ns + k, ns + l]] = (shunt - xi) * f[k] * f[l];
        }
        c_z[[ns + k, ns + k]] += m0;
    }
    Ok(PointTransformed { c_z, f, m_inv_sqrt, m0, xi })
}

/// Invert P = [[S, b a f^T], [b f a^T, m I + d f f^T]] in closed form.
///
/// The bath-block identity scale m is handled by conjugating with
/// diag(I, sqrt(m)) so the unit-scale rank-one formula applies.
pub fn block_inverse(p: &StructuredMatrix) -> Result<StructuredInverse, HamiltonianError> {
    if p.scale <= 0.0 {
        return Err(HamiltonianError::SingularBlock);
    }
    let sinv = invert_small(&p.s)?;
    let b = p.b / p.scale.sqrt();
    let d = p.d / p.scale;
    let f2 = p.f.dot(&p.f);
    let asa = p.a.dot(&sinv.dot(&p.a));
    let big_d = 1.0 + f2 * (d - b * b * asa);
    let magnitude = 1.0 + f2 * (d.abs() + b * b * asa.abs());
    if big_d.abs() < 1e-14 * magnitude {
        return Err(HamiltonianError::SingularBlock);
    }
    let sa = sinv.dot(&p.a);
    let ns = p.s.nrows();
    let mut system_block = sinv.clone();
    let coeff = b * b / big_d * f2;
    for i in 0..ns {
        for j in 0..ns {
            system_block[[i, j]] += coeff * sa[i] * sa[j];
        }
    }
    let off = &sa * (-b / (big_d * p.scale.sqrt()));
    let bath_coeff = (b * b * asa - d) / (big_d * p.scale);
    Ok(StructuredInverse {
        system_block,
        off,
        f: p.f.clone(),
        bath_scale: 1.0 / p.scale,
        bath_coeff,
    })
}

fn model_qubits(p: &Parts, sinv: &Array2<f64>) -> Vec<ModelQubit> {
    p.qubits
        .iter()
        .enumerate()
        .map(|(j, qb)| {
            let inv_cap = sinv[[j, j]];
            ModelQubit {
                name: qb.name.clone(),
                omega: qb.omega,
                inv_capacitance: inv_cap,
                lambda: (HBAR * qb.omega / (2.0 * inv_cap)).sqrt(),
            }
        })
        .collect()
}

fn channel_for(
    resistor: &ResistorDecl,
    bath: &FosterBath,
    kappas: &[f64],
    filter: Option<FilterParams>,
) -> BathChannel {
    let nq = kappas.len();
    let nb = bath.len();
    let mut couplings = Array2::zeros((nq, nb));
    let mut mode_frequencies = Vec::with_capacity(nb);
    for (k, mode) in bath.modes.iter().enumerate() {
        let re_z = ohmic_impedance(resistor.resistance, resistor.cutoff, mode.omega).re;
        let root = (HBAR * mode.omega * re_z * bath.delta_omega / PI).sqrt();
        mode_frequencies.push(mode.omega);
        for (j, &kappa) in kappas.iter().enumerate() {
            couplings[[j, k]] = kappa * root;
        }
    }
    let gamma = kappas
        .iter()
        .map(|&k| resistor.resistance * k * k / HBAR)
        .collect();
    BathChannel {
        resistor: resistor.name.clone(),
        resistance: resistor.resistance,
        cutoff: resistor.cutoff,
        temperature: resistor.temperature,
        delta_omega: bath.delta_omega,
        mode_frequencies,
        couplings,
        gamma,
        filter,
    }
}

/// Emit the closed-form weak-coupling system-bath model. `baths` holds one
/// synthesized FosterBath per resistor, in the order of `spec.resistors`.
pub fn weak_coupling_model(
    spec: &CircuitSpec,
    baths: &[FosterBath],
) -> Result<SystemBathModel, HamiltonianError> {
    if spec.topology == TopologyClass::Unsupported {
        return Err(HamiltonianError::UnsupportedTopology(spec.topology));
    }
    if crate::netlist::validate(spec).has_errors() {
        return Err(HamiltonianError::WeakCouplingViolated);
    }
    assert_eq!(
        baths.len(),
        spec.resistors.len(),
        "one FosterBath per resistor, in resistor order"
    );
    let p = parts(spec)?;
    let s = system_matrix(&p);
    let sinv = invert_small(&s)?;
    let qubits = model_qubits(&p, &sinv);
    let nq = qubits.len();
    let direct_coupling = if nq == 2 {
        sinv[[0, 1]] * qubits[0].lambda * qubits[1].lambda
    } else {
        0.0
    };

    let g = Array1::from_iter(p.attach.iter().map(|&(_, cg)| cg));
    let sg = sinv.dot(&g);
    let mut channels = Vec::new();
    if spec.topology == TopologyClass::TwoQubitSeparateBaths {
        // Local channels: each qubit couples only to its own resistor, with
        // weight C_g S^{-1}_jj; the cross weight through S^{-1}_12 is beyond
        // first order and drops out.
        for (j, &(r, cg)) in p.attach.iter().enumerate() {
            let bath_idx = spec.resistors.iter().position(|x| x.name == r.name).unwrap();
            let mut kappas = vec![0.0; nq];
            kappas[j] = qubits[j].lambda * cg * sinv[[j, j]];
            channels.push(channel_for(r, &baths[bath_idx], &kappas, None));
        }
    } else {
        let r = p.attach[0].0;
        let kappas: Vec<f64> = (0..nq).map(|j| qubits[j].lambda * sg[j]).collect();
        let filter = p.filter.map(|f| FilterParams {
            omega_f: f.omega_f(),
            rc: r.resistance * f.capacitance,
        });
        channels.push(channel_for(r, &baths[0], &kappas, filter));
    }

    Ok(SystemBathModel { topology: spec.topology, qubits, direct_coupling, channels })
}

/// Diagonalize the bath numerically for strong coupling (single-bath
/// topologies only; separate-bath strong coupling is out of scope, and
/// a filter inserts an extra inductive node the transform does not cover).
pub fn strong_coupling_normal_modes(
    spec: &CircuitSpec,
    bath: &FosterBath,
    m0: f64,
) -> Result<NormalModeModel, HamiltonianError> {
    use TopologyClass::*;
    match spec.topology {
        SingleQubitBath | TwoQubitCommonBath | TwoQubitCommonBathDirect => {}
        other => return Err(HamiltonianError::UnsupportedTopology(other)),
    }
    let c = build_capacitance_matrix(spec, bath)?;
    let xi = decoupling_xi(&c)?;
    let t = point_transform(&c, xi, m0)?;
    let p = parts(spec)?;
    let sinv = invert_small(&c.system)?;
    let qubits = model_qubits(&p, &sinv);
    let nq = qubits.len();
    let nb = bath.len();

    // L_z^{-1} bath block = M0 M^{-1/2} diag(1/L_alpha) M^{-1/2}.
    let l_inv = Array1::from_iter(bath.modes.iter().map(|m| 1.0 / m.inductance));
    let scaled = &t.m_inv_sqrt * &l_inv; // column scaling: (M^{-1/2})_{kl} / L_l
    let lz = scaled.dot(&t.m_inv_sqrt) * m0;
    let (vals, vecs) = lz
        .eigh(UPLO::Lower)
        .map_err(|_| HamiltonianError::SingularTransform)?;
    let vmax = vals.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut degenerate_pairs = 0;
    for w in vals.windows(2) {
        if (w[1] - w[0]).abs() < 1e-10 * vmax {
            degenerate_pairs += 1;
        }
    }
    let mode_frequencies: Vec<f64> =
        vals.iter().map(|&v| (v.max(0.0) / m0).sqrt()).collect();
    let f_rotated = vecs.t().dot(&t.f);

    // System block of C_z^{-1}: S^{-1} + |f|^2/M0 S^{-1} g g^T S^{-1}
    // (the decoupling xi makes the rank-one denominator D equal 1).
    let f2 = t.f.dot(&t.f);
    let sg = sinv.dot(&c.g);
    let mut system_inverse = sinv.clone();
    for i in 0..nq {
        for j in 0..nq {
            system_inverse[[i, j]] += f2 / m0 * sg[i] * sg[j];
        }
    }

    let mut couplings = Array2::zeros((nq, nb));
    for k in 0..nb {
        let root = (HBAR * mode_frequencies[k] / (2.0 * m0)).sqrt();
        for j in 0..nq {
            couplings[[j, k]] = qubits[j].lambda * sg[j] * root * f_rotated[k];
        }
    }

    Ok(NormalModeModel {
        topology: spec.topology,
        qubits,
        mode_frequencies,
        f_rotated,
        system_inverse,
        bare_inverse: sinv,
        couplings,
        degenerate_pairs,
        m0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::foster::synthesize;
    use crate::netlist::parse_netlist;
    use ndarray_linalg::cholesky::Cholesky;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TAU: f64 = std::f64::consts::TAU;

    fn single_qubit_spec() -> CircuitSpec {
        parse_netlist(
            "qubit A freq=5GHz C=80fF\n\
             resistor R1 R=50ohm cutoff=100GHz T=50mK\n\
             cap A R1 Cg=1fF\n",
        )
        .unwrap()
    }

    fn two_qubit_common_spec() -> CircuitSpec {
        parse_netlist(
            "qubit A freq=5GHz C=80fF\n\
             qubit B freq=5GHz C=90fF\n\
             resistor R1 R=50ohm cutoff=100GHz T=50mK\n\
             cap A R1 Cg=1fF\n\
             cap B R1 Cg=1fF\n",
        )
        .unwrap()
    }

    fn two_qubit_direct_spec() -> CircuitSpec {
        parse_netlist(
            "qubit A freq=5GHz C=80fF\n\
             qubit B freq=5.2GHz C=90fF\n\
             resistor R1 R=50ohm cutoff=100GHz T=50mK\n\
             cap A R1 Cg=1fF\n\
             cap B R1 Cg=1fF\n\
             cap A B Cc=0.5fF\n",
        )
        .unwrap()
    }

    fn separate_baths_spec() -> CircuitSpec {
        parse_netlist(
            "qubit A freq=5GHz C=80fF\n\
             qubit B freq=5.2GHz C=90fF\n\
             resistor RL R=50ohm cutoff=100GHz T=50mK\n\
             resistor RR R=100ohm cutoff=100GHz T=100mK\n\
             cap A RL Cg=1fF\n\
             cap B RR Cg=1fF\n\
             cap A B Cc=0.5fF\n",
        )
        .unwrap()
    }

    fn test_bath(n: usize) -> FosterBath {
        synthesize(|w| ohmic_impedance(50.0, TAU * 100e9, w).re, TAU * 1e9, n).unwrap()
    }

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let mut m = 0.0f64;
        for (x, y) in a.iter().zip(b.iter()) {
            m = m.max((x - y).abs());
        }
        m
    }

    #[test]
    fn single_qubit_matrix_two_modes() {
        let spec = single_qubit_spec();
        let bath = test_bath(2);
        let c = build_capacitance_matrix(&spec, &bath).unwrap();
        let cg = 1e-15;
        let ca = spec.qubits[0].capacitance;
        let (c1, c2) = (bath.modes[0].capacitance, bath.modes[1].capacitance);
        let expected = ndarray::array![
            [ca + cg, -cg, -cg],
            [-cg, c1 + cg, cg],
            [-cg, cg, c2 + cg]
        ];
        assert!(max_abs_diff(&c.matrix, &expected) < 1e-30);
    }

    #[test]
    fn common_bath_system_block_is_diagonal() {
        let spec = two_qubit_common_spec();
        let c = build_capacitance_matrix(&spec, &test_bath(5)).unwrap();
        assert_eq!(c.system[[0, 1]], 0.0);
        assert_eq!(c.system[[0, 0]], spec.qubits[0].capacitance + 1e-15);
        assert_eq!(c.system[[1, 1]], spec.qubits[1].capacitance + 1e-15);
    }

    #[test]
    fn direct_coupling_appears_in_system_matrix() {
        let spec = two_qubit_direct_spec();
        let c = build_capacitance_matrix(&spec, &test_bath(5)).unwrap();
        let cc = 0.5e-15;
        assert!((c.system[[0, 1]] + cc).abs() < 1e-32);
        assert!(
            (c.system[[0, 0]] - (spec.qubits[0].capacitance + 1e-15 + cc)).abs() < 1e-32
        );
    }

    #[test]
    fn capacitance_matrices_positive_definite() {
        for spec in [single_qubit_spec(), two_qubit_common_spec(), two_qubit_direct_spec()] {
            let c = build_capacitance_matrix(&spec, &test_bath(40)).unwrap();
            assert!(c.matrix.cholesky(UPLO::Lower).is_ok());
        }
    }

    #[test]
    fn separate_baths_matrix_unsupported() {
        let err = build_capacitance_matrix(&separate_baths_spec(), &test_bath(5)).unwrap_err();
        assert!(matches!(err, HamiltonianError::UnsupportedTopology(_)));
    }

    #[test]
    fn decoupling_xi_matches_closed_forms() {
        let spec = single_qubit_spec();
        let c = build_capacitance_matrix(&spec, &test_bath(5)).unwrap();
        let cg = 1e-15;
        let csa = spec.qubits[0].capacitance + cg;
        let xi = decoupling_xi(&c).unwrap();
        assert!((xi - (cg - cg * cg / csa)).abs() < 1e-30);

        let spec = two_qubit_common_spec();
        let c = build_capacitance_matrix(&spec, &test_bath(5)).unwrap();
        let tr = 1.0 / c.system[[0, 0]] + 1.0 / c.system[[1, 1]];
        let xi = decoupling_xi(&c).unwrap();
        assert!((xi - (2.0 * cg - tr * cg * cg)).abs() / xi < 1e-12);
    }

    #[test]
    fn point_transform_decouples_bath_block() {
        // After the transform with the decoupling xi, the bath block of
        // C_z^{-1} must be proportional to the identity (dense-inverse
        // oracle).
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for spec in [single_qubit_spec(), two_qubit_direct_spec()] {
            for _ in 0..3 {
                let n = rng.gen_range(20..=200);
                let bath = test_bath(n);
                let c = build_capacitance_matrix(&spec, &bath).unwrap();
                let xi = decoupling_xi(&c).unwrap();
                let m0 = default_m0(&spec);
                let t = point_transform(&c, xi, m0).unwrap();
                let inv = t.c_z.inv().unwrap();
                let ns = c.partition;
                let mut max_off = 0.0f64;
                for k in 0..n {
                    for l in 0..n {
                        if k != l {
                            max_off = max_off.max(inv[[ns + k, ns + l]].abs());
                        }
                    }
                }
                assert!(max_off * m0 < 1e-10, "residual {}", max_off * m0);
            }
        }
    }

    #[test]
    fn point_transform_trivial_when_uncoupled() {
        // C_g -> 0: xi -> 0, f stays finite but the off blocks vanish.
        let mut spec = single_qubit_spec();
        for c in &mut spec.couplings {
            c.capacitance = 1e-25;
        }
        let bath = test_bath(10);
        let c = build_capacitance_matrix(&spec, &bath).unwrap();
        let xi = decoupling_xi(&c).unwrap();
        let t = point_transform(&c, xi, default_m0(&spec)).unwrap();
        let inv = t.c_z.inv().unwrap();
        for k in 0..10 {
            assert!(inv[[0, 1 + k]].abs() < 1e-10 / default_m0(&spec));
        }
    }

    #[test]
    fn sherman_morrison_matches_dense_inverse() {
        let bath = test_bath(60);
        let diag = Array1::from_iter(bath.modes.iter().map(|m| m.capacitance));
        let xi = 0.7e-15;
        let nb = diag.len();
        let mut m = Array2::from_diag(&diag);
        for k in 0..nb {
            for l in 0..nb {
                m[[k, l]] += xi;
            }
        }
        let dense = m.inv().unwrap();
        // Sherman-Morrison: M^{-1} = C^{-1} - xi C^{-1}ee^T C^{-1}/(1+xi e^T C^{-1} e)
        let cinv = Array1::from_iter(diag.iter().map(|&c| 1.0 / c));
        let ecie: f64 = cinv.sum();
        let mut sm = Array2::zeros((nb, nb));
        for k in 0..nb {
            for l in 0..nb {
                sm[[k, l]] = -xi * cinv[k] * cinv[l] / (1.0 + xi * ecie);
            }
            sm[[k, k]] += cinv[k];
        }
        let scale = sm.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(max_abs_diff(&dense, &sm) / scale < 1e-12);
    }

    #[test]
    fn f_norm_matches_closed_form() {
        let spec = single_qubit_spec();
        let bath = test_bath(80);
        let c = build_capacitance_matrix(&spec, &bath).unwrap();
        let xi = decoupling_xi(&c).unwrap();
        let m0 = default_m0(&spec);
        let t = point_transform(&c, xi, m0).unwrap();
        let f2 = t.f.dot(&t.f);
        let ecie: f64 = c.bath_diag.iter().map(|&x| 1.0 / x).sum();
        let expected = m0 * ecie / (1.0 + xi * ecie);
        assert!((f2 - expected).abs() / expected < 1e-10);
    }

    #[test]
    fn block_inverse_block_diagonal_case() {
        let s = ndarray::array![[2.0, 0.5], [0.5, 3.0]];
        let f = Array1::from_vec(vec![0.3, -0.2, 0.9]);
        let p = StructuredMatrix {
            s: s.clone(),
            a: Array1::from_vec(vec![1.0, 1.0]),
            b: 0.0,
            d: 0.0,
            f,
            scale: 1.0,
        };
        let inv = block_inverse(&p).unwrap();
        let sinv = s.inv().unwrap();
        assert!(max_abs_diff(&inv.system_block, &sinv) < 1e-15);
        assert!(inv.off.iter().all(|&x| x == 0.0));
        assert_eq!(inv.bath_scale, 1.0);
        assert_eq!(inv.bath_coeff, 0.0);
    }

    #[test]
    fn block_inverse_matches_dense_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let mut s = Array2::zeros((2, 2));
            s[[0, 0]] = rng.gen_range(1.0..3.0);
            s[[1, 1]] = rng.gen_range(1.0..3.0);
            let off = rng.gen_range(-0.5..0.5);
            s[[0, 1]] = off;
            s[[1, 0]] = off;
            let a = Array1::from_vec(vec![rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5)]);
            let f = Array1::from_iter((0..50).map(|_| rng.gen_range(-1.0..1.0)));
            let p = StructuredMatrix {
                s,
                a,
                b: rng.gen_range(-0.3..0.3),
                d: rng.gen_range(-0.1..0.4),
                f,
                scale: rng.gen_range(0.5..2.0),
            };
            let inv = block_inverse(&p).unwrap().dense();
            let dense_inv = p.dense().inv().unwrap();
            let scale = dense_inv.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
            assert!(max_abs_diff(&inv, &dense_inv) / scale < 1e-12);
            // and P P^{-1} = I
            let prod = p.dense().dot(&inv);
            let eye = Array2::eye(prod.nrows());
            assert!(max_abs_diff(&prod, &eye) < 1e-12);
        }
    }

    #[test]
    fn block_inverse_reproduces_single_qubit_coefficients() {
        // For C_z of the single-qubit circuit at arbitrary xi, the inverse
        // has entries alpha/D, beta/D f, M0^{-1} I + delta/D f f^T.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let ca = rng.gen_range(50e-15..120e-15);
            let cg = rng.gen_range(0.2e-15..5e-15);
            let csa = ca + cg;
            let m0 = rng.gen_range(20e-15..200e-15);
            let xi = rng.gen_range(0.0..0.9) * cg;
            let f = Array1::from_iter((0..30).map(|_| rng.gen_range(0.1..1.0)));
            let f2 = f.dot(&f);
            let p = StructuredMatrix {
                s: ndarray::array![[csa]],
                a: Array1::from_vec(vec![1.0]),
                b: -cg,
                d: cg - xi,
                f: f.clone(),
                scale: m0,
            };
            let inv = block_inverse(&p).unwrap();
            let alpha = m0 + (cg - xi) * f2;
            let beta = cg;
            let delta = (cg * cg - csa * (cg - xi)) / m0;
            let big_d = m0 * csa + ((cg - xi) * csa - cg * cg) * f2;
            assert!((inv.system_block[[0, 0]] - alpha / big_d).abs() * big_d / alpha < 1e-12);
            assert!((inv.off[0] - beta / big_d).abs() * big_d / beta < 1e-12);
            assert!((inv.bath_scale - 1.0 / m0).abs() * m0 < 1e-13);
            assert!((inv.bath_coeff - delta / big_d).abs() / (delta / big_d).abs().max(1.0 / m0) < 1e-10);
        }
    }

    #[test]
    fn block_inverse_detects_singular_d() {
        // Choose d so that D = 1 + |f|^2 (d - b^2 a^T S^{-1} a) = 0.
        let s = ndarray::array![[1.0]];
        let f = Array1::from_vec(vec![1.0, 1.0]);
        let b = 1.0;
        let d = 1.0 - 0.5; // D = 1 + 2*(0.5 - 1.0) = 0
        let p = StructuredMatrix { s, a: Array1::from_vec(vec![1.0]), b, d, f, scale: 1.0 };
        assert!(matches!(block_inverse(&p), Err(HamiltonianError::SingularBlock)));
    }

    #[test]
    fn weak_single_qubit_coupling_weights() {
        let spec = single_qubit_spec();
        let bath = test_bath(50);
        let model = weak_coupling_model(&spec, &[bath.clone()]).unwrap();
        let q = &model.qubits[0];
        let cg = 1e-15;
        let csa = spec.qubits[0].capacitance + cg;
        let r = 50.0;
        let wc = TAU * 100e9;
        let ch = &model.channels[0];
        for (k, m) in bath.modes.iter().enumerate() {
            let expected = (cg / csa)
                * q.lambda
                * (r * HBAR * m.omega * wc * wc * bath.delta_omega
                    / (PI * (wc * wc + m.omega * m.omega)))
                    .sqrt();
            assert!((ch.couplings[[0, k]] - expected).abs() / expected < 1e-12);
        }
        assert_eq!(model.direct_coupling, 0.0);
        let gamma_expected = r * (q.lambda * cg / csa).powi(2) / HBAR;
        assert!((ch.gamma[0] - gamma_expected).abs() / gamma_expected < 1e-12);
    }

    #[test]
    fn weak_common_bath_has_no_direct_coupling() {
        let model = weak_coupling_model(&two_qubit_common_spec(), &[test_bath(20)]).unwrap();
        assert_eq!(model.direct_coupling, 0.0);
        assert_eq!(model.channels.len(), 1);
        // both qubits couple to every mode
        assert!(model.channels[0].couplings.iter().all(|&g| g > 0.0));
    }

    #[test]
    fn weak_direct_coupling_coefficient() {
        let spec = two_qubit_direct_spec();
        let model = weak_coupling_model(&spec, &[test_bath(20)]).unwrap();
        let c = build_capacitance_matrix(&spec, &test_bath(20)).unwrap();
        let sinv = c.system.inv().unwrap();
        let expected = sinv[[0, 1]] * model.qubits[0].lambda * model.qubits[1].lambda;
        assert!((model.direct_coupling - expected).abs() / expected.abs() < 1e-12);
        assert!(model.direct_coupling > 0.0); // -(-C_c) > 0
    }

    #[test]
    fn weak_separate_baths_are_local() {
        let spec = separate_baths_spec();
        let model = weak_coupling_model(&spec, &[test_bath(20), test_bath(20)]).unwrap();
        assert_eq!(model.channels.len(), 2);
        let left = model.channels.iter().find(|c| c.resistor == "RL").unwrap();
        let right = model.channels.iter().find(|c| c.resistor == "RR").unwrap();
        for k in 0..20 {
            assert!(left.couplings[[0, k]] != 0.0);
            assert_eq!(left.couplings[[1, k]], 0.0);
            assert_eq!(right.couplings[[0, k]], 0.0);
            assert!(right.couplings[[1, k]] != 0.0);
        }
        assert!(model.direct_coupling != 0.0);
    }

    #[test]
    fn weak_filtered_channel_carries_transfer_params() {
        let spec = parse_netlist(
            "qubit A freq=5GHz C=80fF\n\
             filter F1 C=400fF L=2.5nH\n\
             resistor R1 R=50ohm cutoff=100GHz T=0K\n\
             cap A F1 Cg=1fF\n\
             cap F1 R1 C=400fF\n",
        )
        .unwrap();
        let model = weak_coupling_model(&spec, &[test_bath(20)]).unwrap();
        let f = model.channels[0].filter.unwrap();
        assert!((f.rc - 50.0 * 400e-15).abs() / f.rc < 1e-12);
        let wf = 1.0 / (400e-15f64 * 2.5e-9).sqrt();
        assert!((f.omega_f - wf).abs() / wf < 1e-12);
    }

    #[test]
    fn strong_rotation_preserves_f_norm() {
        let spec = single_qubit_spec();
        let bath = test_bath(100);
        let c = build_capacitance_matrix(&spec, &bath).unwrap();
        let xi = decoupling_xi(&c).unwrap();
        let m0 = default_m0(&spec);
        let t = point_transform(&c, xi, m0).unwrap();
        let model = strong_coupling_normal_modes(&spec, &bath, m0).unwrap();
        let before = t.f.dot(&t.f);
        let after = model.f_rotated.dot(&model.f_rotated);
        assert!((before - after).abs() / before < 1e-12);
    }

    #[test]
    fn strong_m0_invariance() {
        let spec = two_qubit_direct_spec();
        let bath = test_bath(60);
        let m0 = default_m0(&spec);
        let a = strong_coupling_normal_modes(&spec, &bath, m0).unwrap();
        let b = strong_coupling_normal_modes(&spec, &bath, 2.0 * m0).unwrap();
        for k in 0..60 {
            let rel = (a.mode_frequencies[k] - b.mode_frequencies[k]).abs()
                / a.mode_frequencies[k];
            assert!(rel < 1e-10, "mode {k}: {rel}");
            // spectral weight omega_alpha f'^2 / M0 is the physical quantity
            let wa = a.mode_frequencies[k] * a.f_rotated[k].powi(2) / a.m0;
            let wb = b.mode_frequencies[k] * b.f_rotated[k].powi(2) / b.m0;
            assert!((wa - wb).abs() / wa.abs().max(1e-30) < 1e-9);
        }
        assert!(
            max_abs_diff(&a.system_inverse, &b.system_inverse)
                / a.system_inverse[[0, 0]]
                < 1e-10
        );
    }

    #[test]
    fn strong_matches_bare_modes_at_tiny_coupling() {
        let spec = parse_netlist(
            "qubit A freq=5GHz C=80fF\n\
             resistor R1 R=50ohm cutoff=100GHz T=0K\n\
             cap A R1 Cg=0.008fF\n", // C_g/C_A = 1e-4
        )
        .unwrap();
        let bath = test_bath(80);
        let model = strong_coupling_normal_modes(&spec, &bath, default_m0(&spec)).unwrap();
        for (k, m) in bath.modes.iter().enumerate() {
            let rel = (model.mode_frequencies[k] - m.omega).abs() / m.omega;
            assert!(rel < 1e-3, "mode {k}: {rel}");
        }
        let csa_inv = 1.0 / (80e-15 + 0.008e-15);
        let rel = (model.system_inverse[[0, 0]] - csa_inv).abs() / csa_inv;
        assert!(rel < 1e-3, "renormalization {rel}");
    }

    #[test]
    fn weak_strong_coupling_convergence() {
        // The gap between weak closed-form couplings and strong numeric ones
        // shrinks linearly in C_g: halving C_g twice roughly halves the
        // relative deviation each time.
        let bath = test_bath(60);
        let mut devs = Vec::new();
        for cg_ff in [0.8, 0.4, 0.2] {
            let spec = parse_netlist(&format!(
                "qubit A freq=5GHz C=80fF\n\
                 resistor R1 R=50ohm cutoff=100GHz T=0K\n\
                 cap A R1 Cg={cg_ff}fF\n"
            ))
            .unwrap();
            let weak = weak_coupling_model(&spec, &[bath.clone()]).unwrap();
            let strong = strong_coupling_normal_modes(&spec, &bath, default_m0(&spec)).unwrap();
            let mut max_rel = 0.0f64;
            for k in 0..bath.len() {
                // eigenvector signs are arbitrary, so compare magnitudes
                let w = weak.channels[0].couplings[[0, k]].abs();
                let s = strong.couplings[[0, k]].abs();
                max_rel = max_rel.max((w - s).abs() / w);
            }
            // frequency renormalization deviation
            let bare = weak.qubits[0].inv_capacitance;
            let renorm = (strong.system_inverse[[0, 0]] - bare).abs() / bare;
            devs.push((max_rel, renorm));
        }
        for w in devs.windows(2) {
            let r0 = w[0].0 / w[1].0;
            assert!(r0 > 1.4 && r0 < 3.0, "coupling deviation ratio {r0}, devs {devs:?}");
        }
        assert!(devs[0].1 < 1e-3);
    }

    #[test]
    fn strong_rejects_separate_baths() {
        let err = strong_coupling_normal_modes(
            &separate_baths_spec(),
            &test_bath(10),
            1e-13,
        )
        .unwrap_err();
        assert!(matches!(err, HamiltonianError::UnsupportedTopology(_)));
    }
}
