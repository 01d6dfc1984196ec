//! Line-oriented netlist DSL for qubit/resistor/filter circuits.
//!
//! Grammar (one declaration per line, `#` starts a comment):
//!
//! ```text
//! qubit    <name> freq=<Hz|MHz|GHz> C=<F|fF|pF>
//! resistor <name> R=<ohm|kohm> cutoff=<Hz|MHz|GHz> T=<K|mK>
//! filter   <name> C=<F|fF|pF> L=<H|nH|pH>
//! cap      <name> <name> Cg=<F|fF|pF>
//! ```
//!
//! `freq=` and `cutoff=` are ordinary frequencies and are converted to
//! angular rad/s internally; `omega=` and `cutoff_omega=` accept rad/s
//! directly (the canonical serializer emits the angular keys so that
//! re-parsing is exact). All stored quantities are SI.

use serde::Serialize;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use thiserror::Error;

const TAU: f64 = std::f64::consts::TAU;

#[derive(Debug, Error, PartialEq)]
pub enum NetlistError {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("duplicate element name `{0}`")]
    DuplicateName(String),
    #[error("coupling references undeclared element `{0}`")]
    DanglingReference(String),
    #[error("non-positive value for `{key}` on element `{name}`")]
    NonPositiveValue { name: String, key: String },
    #[error("unsupported unit `{0}`")]
    UnsupportedUnit(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QubitDecl {
    pub name: String,
    /// Angular frequency, rad/s.
    pub omega: f64,
    /// Qubit capacitance, F.
    pub capacitance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResistorDecl {
    pub name: String,
    /// Resistance, ohm.
    pub resistance: f64,
    /// Angular cutoff frequency, rad/s.
    pub cutoff: f64,
    /// Temperature, K. Zero means a vacuum bath.
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterDecl {
    pub name: String,
    pub capacitance: f64,
    pub inductance: f64,
}

impl FilterDecl {
    /// Resonance frequency 1/sqrt(LC), rad/s.
    pub fn omega_f(&self) -> f64 {
        1.0 / (self.inductance * self.capacitance).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingDecl {
    pub a: String,
    pub b: String,
    /// Coupling capacitance, F.
    pub capacitance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TopologyClass {
    SingleQubitBath,
    SingleQubitFilteredBath,
    TwoQubitCommonBath,
    TwoQubitCommonBathDirect,
    TwoQubitSeparateBaths,
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CircuitSpec {
    pub qubits: Vec<QubitDecl>,
    pub resistors: Vec<ResistorDecl>,
    pub filters: Vec<FilterDecl>,
    pub couplings: Vec<CouplingDecl>,
    pub topology: TopologyClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ElementKind {
    Qubit,
    Resistor,
    Filter,
}

/// What a value key is allowed to carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dimension {
    Frequency,
    AngularFrequency,
    Capacitance,
    Inductance,
    Resistance,
    Temperature,
}

/// Power-of-ten suffixes; conversion is exact scaling.
fn unit_scale(suffix: &str, dim: Dimension) -> Option<f64> {
    use Dimension::*;
    match (suffix, dim) {
        ("", _) => Some(1.0),
        ("GHz", Frequency) => Some(1e9),
        ("MHz", Frequency) => Some(1e6),
        ("fF", Capacitance) => Some(1e-15),
        ("pF", Capacitance) => Some(1e-12),
        ("nH", Inductance) => Some(1e-9),
        ("pH", Inductance) => Some(1e-12),
        ("ohm", Resistance) => Some(1.0),
        ("kohm", Resistance) => Some(1e3),
        ("K", Temperature) => Some(1.0),
        ("mK", Temperature) => Some(1e-3),
        _ => None,
    }
}

fn split_suffix(raw: &str) -> (&str, &str) {
    let idx = raw
        .char_indices()
        .find(|(i, c)| {
            // a trailing unit starts at the first alphabetic char that is not
            // part of the mantissa's exponent marker
            c.is_alphabetic() && !(*c == 'e' || *c == 'E') || {
                (*c == 'e' || *c == 'E')
                    && raw[i + 1..]
                        .chars()
                        .next()
                        .is_none_or(|n| !(n.is_ascii_digit() || n == '-' || n == '+'))
            }
        })
        .map(|(i, _)| i)
        .unwrap_or(raw.len());
    (&raw[..idx], &raw[idx..])
}

fn parse_value(
    raw: &str,
    dim: Dimension,
    line: usize,
    col: usize,
) -> Result<f64, NetlistError> {
    let (num, suffix) = split_suffix(raw);
    let scale = unit_scale(suffix, dim)
        .ok_or_else(|| NetlistError::UnsupportedUnit(suffix.to_string()))?;
    let v: f64 = num.parse().map_err(|_| NetlistError::Syntax {
        line,
        col,
        msg: format!("cannot parse number `{num}`"),
    })?;
    Ok(v * scale)
}

struct KeyValues<'a> {
    pairs: Vec<(&'a str, &'a str, usize)>,
    line: usize,
}

impl<'a> KeyValues<'a> {
    fn take(
        &mut self,
        keys: &[(&str, Dimension)],
        name: &str,
        required: bool,
    ) -> Result<Option<f64>, NetlistError> {
        for (key, dim) in keys {
            if let Some(pos) = self.pairs.iter().position(|(k, _, _)| k == key) {
                let (_, raw, col) = self.pairs.remove(pos);
                let v = parse_value(raw, *dim, self.line, col)?;
                let v = if *dim == Dimension::Frequency { v * TAU } else { v };
                if v <= 0.0 && !(*dim == Dimension::Temperature && v == 0.0) {
                    return Err(NetlistError::NonPositiveValue {
                        name: name.to_string(),
                        key: key.to_string(),
                    });
                }
                return Ok(Some(v));
            }
        }
        if required {
            Err(NetlistError::Syntax {
                line: self.line,
                col: 1,
                msg: format!("missing key `{}` for element `{name}`", keys[0].0),
            })
        } else {
            Ok(None)
        }
    }

    fn finish(self) -> Result<(), NetlistError> {
        if let Some((k, _, col)) = self.pairs.first() {
            Err(NetlistError::Syntax {
                line: self.line,
                col: *col,
                msg: format!("unknown key `{k}`"),
            })
        } else {
            Ok(())
        }
    }
}

/// Parse a netlist into a [`CircuitSpec`], converting all values to SI.
pub fn parse_netlist(text: &str) -> Result<CircuitSpec, NetlistError> {
    let mut qubits: Vec<QubitDecl> = Vec::new();
    let mut resistors: Vec<ResistorDecl> = Vec::new();
    let mut filters: Vec<FilterDecl> = Vec::new();
    let mut couplings: Vec<CouplingDecl> = Vec::new();
    let mut names: BTreeSet<String> = BTreeSet::new();

    for (lineno, raw_line) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw_line.split('#').next().unwrap_or("");
        let mut tokens = Vec::new();
        let mut offset = 0;
        for tok in content.split_whitespace() {
            let col = content[offset..].find(tok).unwrap() + offset + 1;
            offset = col - 1 + tok.len();
            tokens.push((tok, col));
        }
        if tokens.is_empty() {
            continue;
        }
        let (kind, kind_col) = tokens[0];
        let rest = &tokens[1..];
        let kv_from = |skip: usize| -> KeyValues<'_> {
            let pairs = rest[skip..]
                .iter()
                .filter_map(|(t, col)| t.split_once('=').map(|(k, v)| (k, v, *col)))
                .collect();
            KeyValues { pairs, line }
        };
        let name_at = |idx: usize| -> Result<&str, NetlistError> {
            rest.get(idx)
                .map(|(t, _)| *t)
                .filter(|t| !t.contains('='))
                .ok_or(NetlistError::Syntax {
                    line,
                    col: kind_col,
                    msg: format!("`{kind}` declaration needs a name"),
                })
        };
        match kind {
            "qubit" => {
                let name = name_at(0)?.to_string();
                let mut kv = kv_from(1);
                let omega = kv
                    .take(
                        &[
                            ("freq", Dimension::Frequency),
                            ("omega", Dimension::AngularFrequency),
                        ],
                        &name,
                        true,
                    )?
                    .unwrap();
                let capacitance =
                    kv.take(&[("C", Dimension::Capacitance)], &name, true)?.unwrap();
                kv.finish()?;
                if !names.insert(name.clone()) {
                    return Err(NetlistError::DuplicateName(name));
                }
                qubits.push(QubitDecl { name, omega, capacitance });
            }
            "resistor" => {
                let name = name_at(0)?.to_string();
                let mut kv = kv_from(1);
                let resistance =
                    kv.take(&[("R", Dimension::Resistance)], &name, true)?.unwrap();
                let cutoff = kv
                    .take(
                        &[
                            ("cutoff", Dimension::Frequency),
                            ("cutoff_omega", Dimension::AngularFrequency),
                        ],
                        &name,
                        true,
                    )?
                    .unwrap();
                let temperature =
                    kv.take(&[("T", Dimension::Temperature)], &name, true)?.unwrap();
                kv.finish()?;
                if !names.insert(name.clone()) {
                    return Err(NetlistError::DuplicateName(name));
                }
                resistors.push(ResistorDecl { name, resistance, cutoff, temperature });
            }
            "filter" => {
                let name = name_at(0)?.to_string();
                let mut kv = kv_from(1);
                let capacitance =
                    kv.take(&[("C", Dimension::Capacitance)], &name, true)?.unwrap();
                let inductance =
                    kv.take(&[("L", Dimension::Inductance)], &name, true)?.unwrap();
                kv.finish()?;
                if !names.insert(name.clone()) {
                    return Err(NetlistError::DuplicateName(name));
                }
                filters.push(FilterDecl { name, capacitance, inductance });
            }
            "cap" => {
                let a = name_at(0)?.to_string();
                let b = name_at(1)?.to_string();
                let pair = format!("{a}-{b}");
                let mut kv = kv_from(2);
                let capacitance = kv
                    .take(
                        &[
                            ("Cg", Dimension::Capacitance),
                            ("Cc", Dimension::Capacitance),
                            ("C", Dimension::Capacitance),
                        ],
                        &pair,
                        true,
                    )?
                    .unwrap();
                kv.finish()?;
                couplings.push(CouplingDecl { a, b, capacitance });
            }
            other => {
                return Err(NetlistError::Syntax {
                    line,
                    col: kind_col,
                    msg: format!("unknown element kind `{other}`"),
                });
            }
        }
    }

    if qubits.is_empty() && resistors.is_empty() && filters.is_empty() {
        return Err(NetlistError::Syntax {
            line: 1,
            col: 1,
            msg: "no elements declared".to_string(),
        });
    }
    for c in &couplings {
        for end in [&c.a, &c.b] {
            if !names.contains(end) {
                return Err(NetlistError::DanglingReference(end.clone()));
            }
        }
    }

    // Canonical element order: declarations sorted by name, couplings by the
    // (a, b) pair. Makes parse(serialize(spec)) == spec regardless of the
    // original line order.
    qubits.sort_by(|a, b| a.name.cmp(&b.name));
    resistors.sort_by(|a, b| a.name.cmp(&b.name));
    filters.sort_by(|a, b| a.name.cmp(&b.name));
    couplings.sort_by(|a, b| (&a.a, &a.b).cmp(&(&b.a, &b.b)));

    let topology = classify(&qubits, &resistors, &filters, &couplings);
    Ok(CircuitSpec { qubits, resistors, filters, couplings, topology })
}

/// Classify the coupling graph into one of the five supported topologies.
///
/// The classification is a pure function of which element kinds each coupling
/// connects; it rejects anything beyond the supported reference patterns.
fn classify(
    qubits: &[QubitDecl],
    resistors: &[ResistorDecl],
    filters: &[FilterDecl],
    couplings: &[CouplingDecl],
) -> TopologyClass {
    use TopologyClass::*;
    let kind_of = |name: &str| -> Option<ElementKind> {
        if qubits.iter().any(|q| q.name == name) {
            Some(ElementKind::Qubit)
        } else if resistors.iter().any(|r| r.name == name) {
            Some(ElementKind::Resistor)
        } else if filters.iter().any(|f| f.name == name) {
            Some(ElementKind::Filter)
        } else {
            None
        }
    };
    // Edge multiset keyed by the kinds at both ends.
    let mut qr = 0usize; // qubit-resistor
    let mut qq = 0usize; // qubit-qubit
    let mut qf = 0usize; // qubit-filter
    let mut fr = 0usize; // filter-resistor
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    for c in couplings {
        let (Some(ka), Some(kb)) = (kind_of(&c.a), kind_of(&c.b)) else {
            return Unsupported;
        };
        let key = if c.a <= c.b {
            (c.a.clone(), c.b.clone())
        } else {
            (c.b.clone(), c.a.clone())
        };
        if !seen.insert(key) {
            return Unsupported; // parallel duplicate edge
        }
        use ElementKind::*;
        match (ka.min(kb), ka.max(kb)) {
            (Qubit, Qubit) => qq += 1,
            (Qubit, Resistor) | (Resistor, Qubit) => qr += 1,
            (Qubit, Filter) | (Filter, Qubit) => qf += 1,
            (Resistor, Filter) | (Filter, Resistor) => fr += 1,
            _ => return Unsupported,
        }
    }
    let counts = (qubits.len(), resistors.len(), filters.len());
    match (counts, qq, qr, qf, fr) {
        ((1, 1, 0), 0, 1, 0, 0) => SingleQubitBath,
        ((1, 1, 1), 0, 0, 1, 1) => SingleQubitFilteredBath,
        ((2, 1, 0), 0, 2, 0, 0) => {
            // both qubits must attach to the single resistor
            let r = &resistors[0].name;
            let ok = qubits.iter().all(|q| {
                couplings.iter().any(|c| {
                    (c.a == q.name && c.b == *r) || (c.b == q.name && c.a == *r)
                })
            });
            if ok { TwoQubitCommonBath } else { Unsupported }
        }
        ((2, 1, 0), 1, 2, 0, 0) => {
            let r = &resistors[0].name;
            let ok = qubits.iter().all(|q| {
                couplings.iter().any(|c| {
                    (c.a == q.name && c.b == *r) || (c.b == q.name && c.a == *r)
                })
            });
            if ok { TwoQubitCommonBathDirect } else { Unsupported }
        }
        ((2, 2, 0), 1, 2, 0, 0) => {
            // each qubit attached to its own resistor
            let ok = qubits.iter().all(|q| {
                resistors.iter().any(|r| {
                    couplings.iter().any(|c| {
                        (c.a == q.name && c.b == r.name)
                            || (c.b == q.name && c.a == r.name)
                    })
                })
            }) && resistors.iter().all(|r| {
                couplings
                    .iter()
                    .filter(|c| c.a == r.name || c.b == r.name)
                    .count()
                    == 1
            });
            if ok { TwoQubitSeparateBaths } else { Unsupported }
        }
        _ => Unsupported,
    }
}

impl std::cmp::PartialOrd for ElementKind {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl std::cmp::Ord for ElementKind {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (*self as u8).cmp(&(*other as u8))
    }
}

fn fmt_si(v: f64) -> String {
    // 17 significant digits round-trips any f64 exactly
    format!("{v:.16e}")
}

/// Canonical serialization: sorted by kind then name, SI scientific notation,
/// angular-frequency keys so re-parsing is exact.
pub fn serialize(spec: &CircuitSpec) -> String {
    let mut out = String::new();
    let mut qubits = spec.qubits.clone();
    qubits.sort_by(|a, b| a.name.cmp(&b.name));
    for q in &qubits {
        writeln!(
            out,
            "qubit {} omega={} C={}",
            q.name,
            fmt_si(q.omega),
            fmt_si(q.capacitance)
        )
        .unwrap();
    }
    let mut resistors = spec.resistors.clone();
    resistors.sort_by(|a, b| a.name.cmp(&b.name));
    for r in &resistors {
        writeln!(
            out,
            "resistor {} R={} cutoff_omega={} T={}",
            r.name,
            fmt_si(r.resistance),
            fmt_si(r.cutoff),
            fmt_si(r.temperature)
        )
        .unwrap();
    }
    let mut filters = spec.filters.clone();
    filters.sort_by(|a, b| a.name.cmp(&b.name));
    for f in &filters {
        writeln!(
            out,
            "filter {} C={} L={}",
            f.name,
            fmt_si(f.capacitance),
            fmt_si(f.inductance)
        )
        .unwrap();
    }
    let mut couplings = spec.couplings.clone();
    couplings.sort_by(|a, b| (&a.a, &a.b).cmp(&(&b.a, &b.b)));
    for c in &couplings {
        writeln!(out, "cap {} {} Cg={}", c.a, c.b, fmt_si(c.capacitance)).unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Severity {
    Warn,
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct Finding {
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingRatio {
    pub coupling: String,
    pub qubit: String,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub topology: TopologyClass,
    pub ratios: Vec<CouplingRatio>,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Error)
    }
}

/// Weak-coupling ratio threshold above which a WARN is emitted.
pub const WEAK_COUPLING_WARN: f64 = 0.1;

/// Report weak-coupling ratios C_g/C_j for every coupling that touches a
/// qubit, and flag an unsupported topology as an error.
pub fn validate(spec: &CircuitSpec) -> ValidationReport {
    let mut ratios = Vec::new();
    let mut findings = Vec::new();
    for c in &spec.couplings {
        for end in [&c.a, &c.b] {
            if let Some(q) = spec.qubits.iter().find(|q| &q.name == end) {
                let ratio = c.capacitance / q.capacitance;
                ratios.push(CouplingRatio {
                    coupling: format!("{}-{}", c.a, c.b),
                    qubit: q.name.clone(),
                    ratio,
                });
                if ratio > WEAK_COUPLING_WARN {
                    findings.push(Finding {
                        severity: Severity::Warn,
                        message: format!(
                            "weak-coupling violated: C={:.3e} F on {}-{} gives \
                             C/C_{} = {:.4} > {}",
                            c.capacitance, c.a, c.b, q.name, ratio, WEAK_COUPLING_WARN
                        ),
                    });
                }
            }
        }
    }
    if spec.topology == TopologyClass::Unsupported {
        findings.push(Finding {
            severity: Severity::Error,
            message: "unsupported circuit topology".to_string(),
        });
    }
    ValidationReport { topology: spec.topology, ratios, findings }
}
