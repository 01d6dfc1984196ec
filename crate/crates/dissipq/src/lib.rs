//! Dissipative circuit QED toolkit.
//!
//! Turns a netlist of capacitively coupled transmon qubits, resistors, and LC
//! filters into a weak-coupling system-bath model, noise spectral densities,
//! Lindblad decay rates, and simulated open-system dynamics. An exact
//! truncated-bath reference solver cross-validates the whole pipeline.

pub mod foster;
pub mod hamiltonian;
pub mod lindblad;
pub mod netlist;
pub mod oracle;
pub mod spectra;

/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K.
pub const KB: f64 = 1.380_649e-23;
/// Elementary charge, C.
pub const ECHARGE: f64 = 1.602_176_634e-19;
