//! Command-line front end: netlist validation, model derivation, Foster
//! synthesis, noise spectra, master-equation evolution, steady states, and
//! the Lindblad-vs-exact-bath comparison.

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use num_complex::Complex64;
use serde_json::{json, Value};
use std::f64::consts::TAU;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use dissipq::foster::{ohmic_impedance, synthesize, FosterBath};
use dissipq::hamiltonian::{
    default_m0, strong_coupling_normal_modes, weak_coupling_model, SystemBathModel,
};
use dissipq::lindblad::{build_generator, evolve, steady_state, LindbladError};
use dissipq::netlist::{parse_netlist, validate, CircuitSpec, Severity};
use dissipq::oracle::{
    default_fit_window, extract_rate, recurrence_time, wigner_weisskopf,
};
use dissipq::spectra::{symmetrized_single_sided_psd, voltage_psd, ThermalParams};

#[derive(Parser)]
#[command(
    name = "dissipq",
    about = "Dissipative circuit-QED toolkit: netlists to Lindblad dynamics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonModel {
    /// Netlist file
    netlist: PathBuf,
    /// Bath modes per resistor
    #[arg(long, default_value_t = 400, value_parser = clap::value_parser!(u32).range(2..=5000))]
    modes: u32,
    /// Mode spacing override in GHz (default: 20 f_max / modes)
    #[arg(long)]
    delta_omega: Option<f64>,
    /// Write output here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a netlist and report topology, ratios, and findings
    Validate {
        /// Netlist file
        netlist: PathBuf,
    },
    /// Derive the system-bath model: rates, couplings, direct interaction
    Derive {
        #[command(flatten)]
        common: CommonModel,
        /// Also report exact normal-mode (strong-coupling) data
        #[arg(long)]
        strong: bool,
    },
    /// Synthesize the Foster first-form LC ladder of a resistor
    Foster {
        #[command(flatten)]
        common: CommonModel,
        /// Resistor name (default: first declared)
        #[arg(long)]
        resistor: Option<String>,
        /// Output format
        #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
        format: String,
    },
    /// Johnson-Nyquist voltage noise spectrum of a resistor
    Spectra {
        /// Netlist file
        netlist: PathBuf,
        /// Resistor name (default: first declared)
        #[arg(long)]
        resistor: Option<String>,
        /// Sweep start, GHz (may be negative)
        #[arg(long, allow_hyphen_values = true)]
        wmin: f64,
        /// Sweep end, GHz
        #[arg(long, allow_hyphen_values = true)]
        wmax: f64,
        /// Number of sweep points
        #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u32).range(2..))]
        points: u32,
        /// Write output here instead of stdout
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Integrate the Lindblad master equation and emit populations
    Evolve {
        #[command(flatten)]
        common: CommonModel,
        /// Initial state: ground, excited, bell-plus, bell-minus, or a JSON
        /// file holding a density matrix as [[..re, im pairs..]]
        #[arg(long, default_value = "excited")]
        init: String,
        /// Final time in nanoseconds
        #[arg(long)]
        tmax: f64,
        /// Number of output samples
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(2..))]
        samples: u32,
    },
    /// Solve for the stationary state of the Lindblad generator
    Steady {
        #[command(flatten)]
        common: CommonModel,
    },
    /// Compare the Lindblad decay rate against the exact finite-bath oracle
    OracleCompare {
        #[command(flatten)]
        common: CommonModel,
    },
}

/// Errors that map to exit code 1 (validation/physics failures).
struct Failure(String);

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

/// Parallelism cap: DISSIPQ_THREADS if set, otherwise the machine cores.
fn thread_cap() -> usize {
    std::env::var("DISSIPQ_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        })
}

/// Map `f` over indices 0..n on up to `thread_cap()` threads; the output
/// order is fixed by index regardless of scheduling.
fn parallel_rows<F>(n: usize, f: F) -> Vec<Vec<f64>>
where
    F: Fn(usize) -> Vec<f64> + Sync,
{
    let workers = thread_cap().min(n).max(1);
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); n];
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<&mut Vec<f64>>> =
        rows.iter_mut().map(std::sync::Mutex::new).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let row = f(i);
                **slots[i].lock().unwrap() = row;
            });
        }
    });
    rows
}

fn emit(output: &Option<PathBuf>, content: &str) -> Result<(), Failure> {
    match output {
        Some(path) => fs::write(path, content)
            .map_err(|e| Failure(format!("cannot write {}: {e}", path.display()))),
        None => {
            std::io::stdout()
                .write_all(content.as_bytes())
                .map_err(|e| Failure(format!("stdout: {e}")))
        }
    }
}

fn load_spec(path: &PathBuf) -> Result<CircuitSpec, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure(format!("cannot read {}: {e}", path.display())))?;
    Ok(parse_netlist(&text)?)
}

/// Synthesize one Foster bath per resistor, in declaration order.
fn build_baths(
    spec: &CircuitSpec,
    modes: u32,
    delta_omega_ghz: Option<f64>,
) -> Result<Vec<FosterBath>, Failure> {
    let omega_max = spec
        .qubits
        .iter()
        .map(|q| q.omega)
        .fold(0.0f64, f64::max);
    let n = modes as usize;
    let dw = match delta_omega_ghz {
        Some(g) => {
            if g <= 0.0 {
                return Err(Failure("--delta-omega must be positive".into()));
            }
            TAU * g * 1e9
        }
        None => 20.0 * omega_max / n as f64,
    };
    spec.resistors
        .iter()
        .map(|r| {
            synthesize(|w| ohmic_impedance(r.resistance, r.cutoff, w).re, dw, n)
                .map_err(Failure::from)
        })
        .collect()
}

fn build_model(common: &CommonModel) -> Result<(CircuitSpec, SystemBathModel), Failure> {
    let spec = load_spec(&common.netlist)?;
    let baths = build_baths(&spec, common.modes, common.delta_omega)?;
    let model = weak_coupling_model(&spec, &baths)?;
    Ok((spec, model))
}

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Validate { netlist } => cmd_validate(&netlist),
        Command::Derive { common, strong } => cmd_derive(&common, strong),
        Command::Foster { common, resistor, format } => cmd_foster(&common, resistor, &format),
        Command::Spectra { netlist, resistor, wmin, wmax, points, output } => {
            cmd_spectra(&netlist, resistor, wmin, wmax, points, &output)
        }
        Command::Evolve { common, init, tmax, samples } => {
            cmd_evolve(&common, &init, tmax, samples)
        }
        Command::Steady { common } => cmd_steady(&common),
        Command::OracleCompare { common } => cmd_oracle_compare(&common),
    }
}

fn cmd_validate(netlist: &PathBuf) -> Result<(), Failure> {
    let spec = load_spec(netlist)?;
    let report = validate(&spec);
    println!("topology: {:?}", report.topology);
    for r in &report.ratios {
        println!("ratio {}/{} = {:.6}", r.coupling, r.qubit, r.ratio);
    }
    for finding in &report.findings {
        let tag = match finding.severity {
            Severity::Warn => "WARN",
            Severity::Error => "ERROR",
        };
        println!("{tag} {}", finding.message);
    }
    if report.has_errors() {
        return Err(Failure("netlist has validation errors".into()));
    }
    println!("ok");
    Ok(())
}

fn cmd_derive(common: &CommonModel, strong: bool) -> Result<(), Failure> {
    let (spec, model) = build_model(common)?;
    let mut doc = json!({
        "topology": format!("{:?}", model.topology),
        "direct_coupling_joule": model.direct_coupling,
        "qubits": model.qubits.iter().map(|q| json!({
            "name": q.name,
            "omega_rad_per_s": q.omega,
            "lambda_coulomb": q.lambda,
        })).collect::<Vec<_>>(),
        "channels": model.channels.iter().map(|ch| json!({
            "resistor": ch.resistor,
            "resistance_ohm": ch.resistance,
            "cutoff_rad_per_s": ch.cutoff,
            "temperature_k": ch.temperature,
            "delta_omega_rad_per_s": ch.delta_omega,
            "modes": ch.mode_frequencies.len(),
            "gamma_per_qubit": ch.gamma.clone(),
            "filter": ch.filter.map(|f| json!({
                "omega_f_rad_per_s": f.omega_f,
                "rc_seconds": f.rc,
            })),
        })).collect::<Vec<_>>(),
    });
    if strong {
        let baths = build_baths(&spec, common.modes, common.delta_omega)?;
        let m0 = default_m0(&spec);
        let normal = strong_coupling_normal_modes(&spec, &baths[0], m0)?;
        let renormalized: Vec<Value> = normal
            .qubits
            .iter()
            .enumerate()
            .map(|(j, q)| {
                let scale = (normal.system_inverse[[j, j]] / normal.bare_inverse[[j, j]]).sqrt();
                json!({ "name": q.name, "omega_rad_per_s": q.omega * scale })
            })
            .collect();
        let first: usize = normal.mode_frequencies.len().min(10);
        doc["strong"] = json!({
            "m0_kg": normal.m0,
            "degenerate_pairs": normal.degenerate_pairs,
            "renormalized_qubits": renormalized,
            "mode_frequencies_rad_per_s": normal.mode_frequencies[..first].to_vec(),
            "couplings_joule": (0..normal.qubits.len()).map(|j| {
                (0..first).map(|a| normal.couplings[[j, a]]).collect::<Vec<_>>()
            }).collect::<Vec<_>>(),
        });
    }
    emit(&common.output, &format!("{}\n", serde_json::to_string_pretty(&doc).unwrap()))
}

fn cmd_foster(
    common: &CommonModel,
    resistor: Option<String>,
    format: &str,
) -> Result<(), Failure> {
    let spec = load_spec(&common.netlist)?;
    let idx = match &resistor {
        Some(name) => spec
            .resistors
            .iter()
            .position(|r| &r.name == name)
            .ok_or_else(|| Failure(format!("no resistor named {name}")))?,
        None => 0,
    };
    if spec.resistors.is_empty() {
        return Err(Failure("netlist declares no resistors".into()));
    }
    let baths = build_baths(&spec, common.modes, common.delta_omega)?;
    let bath = &baths[idx];
    let content = if format == "csv" {
        let mut out = String::from("index,omega,capacitance,inductance\n");
        for (i, m) in bath.modes.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                i + 1,
                fmt(m.omega),
                fmt(m.capacitance),
                fmt(m.inductance)
            ));
        }
        out
    } else {
        let doc = json!({
            "resistor": spec.resistors[idx].name,
            "delta_omega_rad_per_s": bath.delta_omega,
            "modes": bath.modes.iter().map(|m| json!({
                "omega_rad_per_s": m.omega,
                "capacitance_farad": m.capacitance,
                "inductance_henry": m.inductance,
            })).collect::<Vec<_>>(),
        });
        format!("{}\n", serde_json::to_string_pretty(&doc).unwrap())
    };
    emit(&common.output, &content)
}

fn cmd_spectra(
    netlist: &PathBuf,
    resistor: Option<String>,
    wmin_ghz: f64,
    wmax_ghz: f64,
    points: u32,
    output: &Option<PathBuf>,
) -> Result<(), Failure> {
    if wmax_ghz <= wmin_ghz {
        return Err(Failure("--wmax must exceed --wmin".into()));
    }
    let spec = load_spec(netlist)?;
    let decl = match &resistor {
        Some(name) => spec
            .resistors
            .iter()
            .find(|r| &r.name == name)
            .ok_or_else(|| Failure(format!("no resistor named {name}")))?,
        None => spec
            .resistors
            .first()
            .ok_or_else(|| Failure("netlist declares no resistors".into()))?,
    };
    let thermal = ThermalParams::new(decl.temperature);
    let (r, wc) = (decl.resistance, decl.cutoff);
    let n = points as usize;
    let w0 = TAU * wmin_ghz * 1e9;
    let w1 = TAU * wmax_ghz * 1e9;
    let rows = parallel_rows(n, |i| {
        let w = w0 + (w1 - w0) * i as f64 / (n - 1) as f64;
        let re_z = ohmic_impedance(r, wc, w).re;
        let s = voltage_psd(|x| ohmic_impedance(r, wc, x).re, w, thermal);
        let sym = if w > 0.0 {
            symmetrized_single_sided_psd(|x| ohmic_impedance(r, wc, x).re, w, thermal)
        } else {
            f64::NAN
        };
        vec![w, re_z, s, sym]
    });
    let mut out = String::from("omega,re_z,s_vv,s_symmetrized\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt(row[0]),
            fmt(row[1]),
            fmt(row[2]),
            fmt(row[3])
        ));
    }
    emit(output, &out)
}

fn initial_state(init: &str, dim: usize) -> Result<Array2<Complex64>, Failure> {
    let c = |re: f64| Complex64::new(re, 0.0);
    let mut rho = Array2::zeros((dim, dim));
    match init {
        "ground" => rho[[0, 0]] = c(1.0),
        "excited" => rho[[dim - 1, dim - 1]] = c(1.0),
        "bell-plus" | "bell-minus" => {
            if dim != 4 {
                return Err(Failure("Bell initial states need a two-qubit netlist".into()));
            }
            let sign = if init == "bell-plus" { 1.0 } else { -1.0 };
            rho[[1, 1]] = c(0.5);
            rho[[2, 2]] = c(0.5);
            rho[[1, 2]] = c(0.5 * sign);
            rho[[2, 1]] = c(0.5 * sign);
        }
        path => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure(format!("cannot read init state {path}: {e}")))?;
            let raw: Vec<Vec<[f64; 2]>> = serde_json::from_str(&text)
                .map_err(|e| Failure(format!("bad init state {path}: {e}")))?;
            if raw.len() != dim || raw.iter().any(|row| row.len() != dim) {
                return Err(Failure(format!(
                    "init state must be a {dim}x{dim} matrix of [re, im] pairs"
                )));
            }
            for (i, row) in raw.iter().enumerate() {
                for (j, &[re, im]) in row.iter().enumerate() {
                    rho[[i, j]] = Complex64::new(re, im);
                }
            }
            let tr: Complex64 = rho.diag().iter().sum();
            if (tr - c(1.0)).norm() > 1e-9 {
                return Err(Failure("init state trace must be 1".into()));
            }
        }
    }
    Ok(rho)
}

fn population_header(dim: usize) -> String {
    match dim {
        2 => "p_g,p_e".into(),
        4 => "p_gg,p_ge,p_eg,p_ee".into(),
        _ => unreachable!(),
    }
}

fn cmd_evolve(common: &CommonModel, init: &str, tmax_ns: f64, samples: u32) -> Result<(), Failure> {
    if tmax_ns <= 0.0 {
        return Err(Failure("--tmax must be positive".into()));
    }
    let (_, model) = build_model(common)?;
    let gen = build_generator(&model)?;
    let rho0 = initial_state(init, gen.dim)?;
    let n = samples as usize;
    let tmax = tmax_ns * 1e-9;
    let t_grid: Vec<f64> = (0..n).map(|i| tmax * i as f64 / (n - 1) as f64).collect();
    let traj = evolve(&gen, &rho0, &t_grid)?;
    let mut out = format!("t,{},trace_dev,min_eig\n", population_header(gen.dim));
    for ((t, state), diag) in traj.times.iter().zip(&traj.states).zip(&traj.diagnostics) {
        let pops: Vec<String> = (0..gen.dim).map(|i| fmt(state[[i, i]].re)).collect();
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt(*t),
            pops.join(","),
            fmt(diag.trace_deviation),
            fmt(diag.min_eigenvalue)
        ));
    }
    emit(&common.output, &out)
}

fn cmd_steady(common: &CommonModel) -> Result<(), Failure> {
    let (_, model) = build_model(common)?;
    let gen = build_generator(&model)?;
    let rho = match steady_state(&gen) {
        Ok(rho) => rho,
        Err(LindbladError::DegenerateKernel { dimension, .. }) => {
            return Err(Failure(format!(
                "stationary state is not unique: the generator kernel is \
                 {dimension}-dimensional (e.g. a zero-temperature common bath \
                 keeps the subradiant state dark)"
            )));
        }
        Err(e) => return Err(e.into()),
    };
    let dim = gen.dim;
    let doc = json!({
        "populations": (0..dim).map(|i| rho[[i, i]].re).collect::<Vec<_>>(),
        "purity": rho.dot(&rho).diag().iter().map(|v| v.re).sum::<f64>(),
        "rho": (0..dim).map(|i| {
            (0..dim).map(|j| vec![rho[[i, j]].re, rho[[i, j]].im]).collect::<Vec<_>>()
        }).collect::<Vec<_>>(),
    });
    emit(&common.output, &format!("{}\n", serde_json::to_string_pretty(&doc).unwrap()))
}

fn cmd_oracle_compare(common: &CommonModel) -> Result<(), Failure> {
    let (_, model) = build_model(common)?;
    if model.qubits.len() != 1 {
        return Err(Failure("oracle-compare handles single-qubit netlists".into()));
    }
    if model.channels[0].temperature != 0.0 {
        return Err(Failure("oracle-compare requires a zero-temperature bath".into()));
    }
    let gen = build_generator(&model)?;
    let gamma = gen.jumps[0].rate;
    let dw = model.channels[0].delta_omega;
    let window = default_fit_window(gamma, dw);
    let t_grid: Vec<f64> = (0..200)
        .map(|i| window.0 + (window.1 - window.0) * i as f64 / 199.0)
        .collect();
    let p = wigner_weisskopf(&model, common.modes as usize, &t_grid)?;
    let fit = extract_rate(&t_grid, &p, window)?;
    let doc = json!({
        "gamma_lindblad": gamma,
        "gamma_fitted": fit.rate,
        "relative_error": (fit.rate - gamma).abs() / gamma,
        "recurrence_time": recurrence_time(dw),
        "fit_residual": fit.residual,
    });
    emit(&common.output, &format!("{}\n", serde_json::to_string_pretty(&doc).unwrap()))
}
