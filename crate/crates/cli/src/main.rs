//! `csmpd` command-line front end.
//!
//! Exit codes: 0 success, 1 computation error, 2 configuration or usage
//! error, 64 unknown subcommand.

mod config;

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use csmpd::calibration::{
    efficiency_cofit, fit_exponential_decay, fit_stark, fit_temperature, CofitFixed, CofitPoint, FitOptions,
    StarkDataPoint, StarkGuess, TemperatureFamily, TemperaturePoint,
};
use csmpd::dynamics::{evolve_linear_model, evolve_master_equation, Dissipation, SubspaceState};
use csmpd::metrics::{self, BudgetInputs, EfficiencyBudget, NoiseBudget};
use csmpd::montecarlo::{self, BenchmarkPoint, Decoder, Readout, SimulationConfig};
use csmpd::scattering::{self, BandwidthMethod};
use csmpd::units::{hz, to_hz};
use csmpd::{ChainSpec, CycleSpec, Error};
use serde::Serialize;

use config::{Config, ConfigError};

#[derive(Parser)]
#[command(name = "csmpd", version, about = "Cascaded single microwave photon detector toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Chain configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use the bundled two-qubit device parameters.
    #[arg(long, global = true)]
    paper_fixtures: bool,
    /// Output file (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Analytic,
    Approx,
    Numeric,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Master,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Stark,
    Decay,
    Temperature,
    TemperaturePair,
    Cofit,
}

#[derive(Subcommand)]
enum Command {
    /// Transmission S21 over a detuning grid. CSV: delta_hz,re,im,abs2.
    S21 {
        #[command(flatten)]
        common: Common,
        /// Half-width of the grid [Hz]; defaults to 5(κ_0 + κ_N)/2π.
        #[arg(long)]
        span_hz: Option<f64>,
        #[arg(long, default_value_t = 2001)]
        points: usize,
    },
    /// Detector bandwidth κ_d and cooperativity.
    Bandwidth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Method::Numeric)]
        method: Method,
    },
    /// Efficiency and dark-count budgets.
    Budget {
        #[command(flatten)]
        common: Common,
    },
    /// Single-photon time evolution. CSV: time,n_b,n_Q0,...,n_w.
    Dynamics {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Model::Master)]
        model: Model,
        /// Duration [s]; defaults to 50/κ_0.
        #[arg(long)]
        t_max: Option<f64>,
        /// Output step [s]; defaults to the largest allowed.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        buffer_decay: bool,
        #[arg(long)]
        memory_decay: bool,
    },
    /// Photon-counting simulation. Writes the benchmark as JSON.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Photon fluxes [1/s], comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        flux: Vec<f64>,
        /// Duration of each flux point [s].
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        /// and | majority | q<k> for a single qubit.
        #[arg(long, default_value = "and")]
        scheme: String,
        /// Compact trace CSV (flux_index,cycle,bitstring), nonzero cycles only.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Least-squares fit of a data CSV; writes a report as JSON.
    ///
    /// Columns: stark `delta_b_hz,d_omega_hz,d_gamma`; decay `t,y`;
    /// temperature and temperature-pair `temperature,rate[,sigma]`;
    /// cofit `amplitude,eta_q0,eta_q1,eta_cascade,t1_q0,t1_q1`.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        family: Family,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 200)]
        bootstrap: usize,
        /// Stark guess: χ/2π [Hz].
        #[arg(long, default_value_t = -1.784e6, allow_hyphen_values = true)]
        chi_hz: f64,
        /// Stark guess: κ_b [1/s].
        #[arg(long, default_value_t = 5.8e6)]
        kappa_b: f64,
        /// Stark guess: ε_d/2π [Hz].
        #[arg(long, default_value_t = 90e3)]
        eps_d_hz: f64,
        /// Stark guess: detuning offset/2π [Hz].
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        offset_hz: f64,
        /// Temperature fit: line frequency [Hz]; defaults to the buffer.
        #[arg(long)]
        frequency_hz: Option<f64>,
    },
    /// Dark-count budget over temperatures. CSV: temperature,n_bar,alpha_th,alpha_err,alpha_total.
    SweepTemperature {
        #[command(flatten)]
        common: Common,
        /// Temperatures [K], comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        temperatures: Vec<f64>,
    },
    /// Figures of merit versus relative pump amplitude.
    /// CSV: amplitude,cooperativity,eta_4wm,eta_m,kappa_d_hz,p_flag0,...,eta_total.
    SweepPump {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        amplitudes: Vec<f64>,
    },
    /// Pump frequency matching lines of a two-qubit chain.
    ResonanceLines {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Compute(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig { .. } | Error::EvenMajority { .. } => Failure::Config(e.to_string()),
            e => Failure::Compute(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Config(format!("CSV: {e}"))
    }
}

type Out<T> = std::result::Result<T, Failure>;

fn load(common: &Common) -> Out<Config> {
    let text = match (&common.config, common.paper_fixtures) {
        (Some(_), true) => return Err(Failure::Config("--config and --paper-fixtures are exclusive".into())),
        (Some(path), false) => {
            fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        (None, true) => config::PAPER_FIXTURE.to_string(),
        (None, false) => return Err(Failure::Config("no chain given: pass --config <file> or --paper-fixtures".into())),
    };
    Ok(config::parse(&text)?)
}

fn sink(common: &Common) -> Out<Box<dyn Write>> {
    Ok(match &common.out {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::BufWriter::new(io::stdout())),
    })
}

fn emit_json<T: Serialize>(common: &Common, value: &T) -> Out<()> {
    let mut w = sink(common)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Failure::Compute(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn emit_csv(common: &Common, header: &[String], rows: &[Vec<f64>]) -> Out<()> {
    let mut w = csv::Writer::from_writer(sink(common)?);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

fn emit_table(common: &Common, default: Format, header: &[String], rows: &[Vec<f64>]) -> Out<()> {
    match common.format.unwrap_or(default) {
        Format::Csv => emit_csv(common, header, rows),
        Format::Json => {
            let objects: Vec<serde_json::Map<String, serde_json::Value>> = rows
                .iter()
                .map(|r| header.iter().cloned().zip(r.iter().map(|&v| serde_json::json!(v))).collect())
                .collect();
            emit_json(common, &objects)
        }
    }
}

fn emit_record<T: Serialize>(common: &Common, value: &T) -> Out<()> {
    match common.format.unwrap_or(Format::Json) {
        Format::Json => emit_json(common, value),
        Format::Csv => {
            let json = serde_json::to_value(value).map_err(|e| Failure::Compute(e.to_string()))?;
            let mut flat = Vec::new();
            flatten("", &json, &mut flat);
            let mut w = csv::Writer::from_writer(sink(common)?);
            w.write_record(["quantity", "value"])?;
            for (k, v) in flat {
                w.write_record([k, v])?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        serde_json::Value::Object(m) => m.iter().for_each(|(k, v)| flatten(&key(k), v, out)),
        serde_json::Value::Array(a) => a.iter().enumerate().for_each(|(i, v)| flatten(&key(&i.to_string()), v, out)),
        serde_json::Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Numeric FWHM, falling back to the sum-of-rates estimate when the response
/// is split.
fn detector_bandwidth(chain: &ChainSpec) -> csmpd::Result<f64> {
    match scattering::bandwidth(chain, BandwidthMethod::NumericFwhm) {
        Err(Error::MultiPeak { .. }) => scattering::bandwidth(chain, BandwidthMethod::ApproxSum),
        r => r,
    }
}

#[derive(Serialize)]
struct BudgetReport {
    cooperativity: f64,
    kappa_d: f64,
    kappa_d_hz: f64,
    efficiency: EfficiencyBudget,
    eta_total: f64,
    noise: NoiseBudget,
    alpha_err: f64,
    alpha_total: f64,
    sensitivity: f64,
}

fn budget_at(cfg: &Config, cycle: CycleSpec, environment: &csmpd::Environment) -> Out<BudgetReport> {
    let chain = &cfg.chain;
    let efficiency = metrics::efficiency_budget(chain, &cycle)?;
    let kappa_d = detector_bandwidth(chain)?;
    let noise = metrics::noise_budget(&BudgetInputs {
        qubits: &chain.qubits,
        cycle,
        eta: efficiency.eta_total,
        kappa_d,
        environment,
        buffer_frequency: cfg.buffer_frequency(),
        alpha_pump: cfg.noise.alpha_pump,
        alpha_ro: cfg.noise.alpha_ro,
        intrinsic: cfg.noise.intrinsic,
    })?;
    let sensitivity = metrics::sensitivity(noise.alpha_total, efficiency.eta_total, cfg.buffer_frequency())?;
    Ok(BudgetReport {
        cooperativity: scattering::cooperativity(chain)?,
        kappa_d,
        kappa_d_hz: to_hz(kappa_d),
        eta_total: efficiency.eta_total,
        alpha_err: noise.alpha_err(),
        alpha_total: noise.alpha_total,
        efficiency,
        noise,
        sensitivity,
    })
}

/// Simulator inputs derived from the chain: pulse-filtered flag
/// probabilities times qubit survival form the conditional chain, readout
/// keeps excited flags with probability F_RO, intrinsic flips follow the
/// per-qubit linearised rate plus an equal share of α_pump whose
/// coincidence rate over all qubits is α_pump.
fn simulation_config(cfg: &Config) -> Out<SimulationConfig> {
    let cycle = cfg.cycle()?;
    let chain = &cfg.chain;
    let n = chain.n();
    let p = scattering::filtered_flag_probabilities(chain, cycle.t_d)?;
    let survival: Vec<f64> = chain.qubits.iter().map(|q| metrics::eta_q(cycle.t_d, q.t1_pumped)).collect();
    let conversion = (0..n)
        .map(|k| {
            let prev = if k == 0 { 1.0 } else { p[k - 1] };
            if prev > 0.0 {
                (p[k] / prev * survival[k]).min(1.0)
            } else {
                0.0
            }
        })
        .collect();
    let t_cycle = cycle.t_cycle();
    let pump_share = (cfg.noise.alpha_pump * t_cycle).powf(1.0 / n as f64);
    let flip_probability = chain
        .qubits
        .iter()
        .map(|q| (metrics::alpha_q(q, &cycle) * t_cycle + pump_share).min(1.0))
        .collect();
    let readout = chain.qubits.iter().map(|q| Readout::Fidelity { excited: q.f_ro, ground: 1.0 }).collect();
    let budget = budget_at(cfg, cycle, &cfg.environment)?;
    Ok(SimulationConfig { conversion, flip_probability, readout, alpha_th: budget.noise.alpha_th, cycle })
}

fn parse_scheme(s: &str) -> Out<Decoder> {
    match s {
        "and" | "all-or-nothing" => Ok(Decoder::AllOrNothing),
        "majority" => Ok(Decoder::Majority),
        q => q
            .strip_prefix('q')
            .and_then(|k| k.parse().ok())
            .map(Decoder::Qubit)
            .ok_or_else(|| Failure::Config(format!("--scheme: unknown scheme `{s}`"))),
    }
}

#[derive(Serialize)]
struct SimulationReport {
    seed: u64,
    scheme: Decoder,
    points: Vec<BenchmarkPoint>,
    expected: montecarlo::ExpectedRate,
    fit: Option<montecarlo::BenchmarkResult>,
}

fn read_rows(path: &PathBuf, min_cols: usize) -> Out<Vec<Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| Failure::Config(format!("{}: row {}: `{s}` is not a number", path.display(), i + 1))))
            .collect::<Out<Vec<f64>>>()?;
        if row.len() < min_cols {
            return Err(Failure::Config(format!("{}: row {}: need {min_cols} columns", path.display(), i + 1)));
        }
        rows.push(row);
    }
    Ok(rows)
}

fn run(command: Command) -> Out<()> {
    match command {
        Command::S21 { common, span_hz, points } => {
            let cfg = load(&common)?;
            if points < 2 {
                return Err(Failure::Config("--points: need at least 2".into()));
            }
            let span = span_hz.map(hz).unwrap_or_else(|| scattering::default_span(&cfg.chain));
            let grid = scattering::symmetric_grid(span, points);
            let rows = grid
                .iter()
                .map(|&d| {
                    let s = scattering::s21(&cfg.chain, d)?;
                    Ok(vec![to_hz(d), s.re, s.im, s.norm_sqr()])
                })
                .collect::<csmpd::Result<Vec<_>>>()?;
            let header = ["delta_hz", "re", "im", "abs2"].map(String::from);
            emit_table(&common, Format::Csv, &header, &rows)
        }
        Command::Bandwidth { common, method } => {
            let cfg = load(&common)?;
            let m = match method {
                Method::Analytic => BandwidthMethod::AnalyticN1,
                Method::Approx => BandwidthMethod::ApproxSum,
                Method::Numeric => BandwidthMethod::NumericFwhm,
            };
            #[derive(Serialize)]
            struct Report {
                kappa_d: f64,
                kappa_d_hz: f64,
                cooperativity: f64,
                eta_4wm: f64,
            }
            let kappa_d = scattering::bandwidth(&cfg.chain, m)?;
            let c = scattering::cooperativity(&cfg.chain)?;
            emit_record(&common, &Report { kappa_d, kappa_d_hz: to_hz(kappa_d), cooperativity: c, eta_4wm: scattering::eta_4wm(c) })
        }
        Command::Budget { common } => {
            let cfg = load(&common)?;
            let report = budget_at(&cfg, cfg.cycle()?, &cfg.environment)?;
            emit_record(&common, &report)
        }
        Command::Dynamics { common, model, t_max, dt, buffer_decay, memory_decay } => {
            let cfg = load(&common)?;
            let chain = &cfg.chain;
            let dissipation = Dissipation { buffer: buffer_decay, memory: memory_decay };
            let fastest = (0..=chain.n())
                .map(|k| chain.kappa(k).max(chain.mode_detuning(k).abs()))
                .chain(chain.couplings()?.iter().map(|g| g.norm()))
                .fold(0.0, f64::max);
            let dt = dt.unwrap_or(0.05 / fastest);
            let t_max = t_max.unwrap_or(50.0 / chain.kappa(0));
            let n = chain.n();
            let trace = match model {
                Model::Master => evolve_master_equation(chain, &SubspaceState::photon_in_buffer(n), t_max, dt, dissipation)?,
                Model::Linear => {
                    let init = SubspaceState::photon_in_buffer(n).stages;
                    evolve_linear_model(chain, &init, t_max, dt, None, dissipation)?.to_trace()
                }
            };
            let cols = trace.columns();
            let mut header = vec!["time".to_string()];
            header.extend(cols.iter().map(|(n, _)| n.clone()));
            let rows: Vec<Vec<f64>> = (0..trace.time.len())
                .map(|i| std::iter::once(trace.time[i]).chain(cols.iter().map(|(_, c)| c[i])).collect())
                .collect();
            emit_table(&common, Format::Csv, &header, &rows)
        }
        Command::Simulate { common, flux, duration, scheme, trace_out } => {
            let cfg = load(&common)?;
            let decoder = parse_scheme(&scheme)?;
            let sim = simulation_config(&cfg)?;
            let expected = montecarlo::expected_rates(&sim, decoder)?;
            let mut points = Vec::with_capacity(flux.len());
            let mut trace_writer = match &trace_out {
                Some(p) => {
                    let mut w = csv::Writer::from_path(p)?;
                    w.write_record(["flux_index", "cycle", "bitstring"])?;
                    Some(w)
                }
                None => None,
            };
            for (i, &f) in flux.iter().enumerate() {
                let trace = montecarlo::simulate(&sim, f, duration, common.seed.wrapping_add(i as u64))?;
                if let Some(w) = trace_writer.as_mut() {
                    for (cycle, bits) in trace.nonzero() {
                        w.write_record([i.to_string(), cycle.to_string(), bits])?;
                    }
                }
                points.push(BenchmarkPoint::from_trace(&trace, decoder)?);
            }
            if let Some(mut w) = trace_writer {
                w.flush()?;
            }
            let fit = if points.len() >= 3 { Some(montecarlo::estimate_benchmark(&points)?) } else { None };
            emit_json(&common, &SimulationReport { seed: common.seed, scheme: decoder, points, expected, fit })
        }
        Command::Fit { common, family, data, bootstrap, chi_hz, kappa_b, eps_d_hz, offset_hz, frequency_hz } => {
            let options = FitOptions { bootstrap, seed: common.seed, ..FitOptions::default() };
            let report = match family {
                Family::Stark => {
                    let pts: Vec<StarkDataPoint> = read_rows(&data, 3)?
                        .into_iter()
                        .map(|r| StarkDataPoint { delta_b: hz(r[0]), d_omega: hz(r[1]), d_gamma: r[2] })
                        .collect();
                    let guess = StarkGuess { chi: hz(chi_hz), kappa_b, eps_d: hz(eps_d_hz), delta_offset: hz(offset_hz) };
                    fit_stark(&pts, guess, &options)?
                }
                Family::Decay => {
                    let rows = read_rows(&data, 2)?;
                    let t: Vec<f64> = rows.iter().map(|r| r[0]).collect();
                    let y: Vec<f64> = rows.iter().map(|r| r[1]).collect();
                    fit_exponential_decay(&t, &y, &options)?
                }
                Family::Temperature | Family::TemperaturePair => {
                    let pts: Vec<TemperaturePoint> = read_rows(&data, 2)?
                        .into_iter()
                        .map(|r| TemperaturePoint { temperature: r[0], rate: r[1], sigma: r.get(2).copied() })
                        .collect();
                    let fam = if let Family::Temperature = family {
                        let f = match frequency_hz {
                            Some(f) => f,
                            None => load(&common)?.buffer_frequency(),
                        };
                        TemperatureFamily::Single { frequency: f }
                    } else {
                        let cfg = load(&common)?;
                        let q = &cfg.chain.qubits;
                        if q.len() != 2 {
                            return Err(Failure::Config("temperature-pair needs a two-qubit chain".into()));
                        }
                        TemperatureFamily::Pair { f0: to_hz(q[0].omega_ge), f1: to_hz(q[1].omega_ge) }
                    };
                    fit_temperature(&pts, fam, &options)?
                }
                Family::Cofit => {
                    let cfg = load(&common)?;
                    let cycle = cfg.cycle()?;
                    let chain = &cfg.chain;
                    chain.couplings()?;
                    if chain.n() != 2 {
                        return Err(Failure::Config("cofit needs a two-qubit chain".into()));
                    }
                    let pts: Vec<CofitPoint> = read_rows(&data, 6)?
                        .into_iter()
                        .map(|r| CofitPoint { amplitude: r[0], eta_q0: r[1], eta_q1: r[2], eta_cascade: r[3], t1_q0: r[4], t1_q1: r[5] })
                        .collect();
                    let fixed = CofitFixed {
                        t_d: cycle.t_d,
                        eta_cycle: cycle.eta_cycle(),
                        f_ro: [chain.qubits[0].f_ro, chain.qubits[1].f_ro],
                        kappa_b: chain.kappa(0),
                        kappa_w: chain.kappa(2),
                        t1_spread: 0.3,
                    };
                    let g = chain.couplings()?;
                    efficiency_cofit(&pts, &fixed, [g[0].re, g[1].re, chain.kappa(1)], &options)?
                }
            };
            emit_json(&common, &report)
        }
        Command::SweepTemperature { common, temperatures } => {
            let cfg = load(&common)?;
            let cycle = cfg.cycle()?;
            let rows = temperatures
                .iter()
                .map(|&t| {
                    let env = csmpd::Environment { temperature: t, ..cfg.environment.clone() };
                    env.validate()?;
                    let b = budget_at(&cfg, cycle, &env)?;
                    Ok(vec![t, env.occupation(cfg.buffer_frequency()), b.noise.alpha_th, b.alpha_err, b.alpha_total])
                })
                .collect::<Out<Vec<_>>>()?;
            let header = ["temperature", "n_bar", "alpha_th", "alpha_err", "alpha_total"].map(String::from);
            emit_table(&common, Format::Csv, &header, &rows)
        }
        Command::SweepPump { common, amplitudes } => {
            let cfg = load(&common)?;
            let cycle = cfg.cycle()?;
            let n = cfg.chain.n();
            let rows = amplitudes
                .iter()
                .map(|&a| {
                    let chain = cfg.chain.scale_pumps(a);
                    let eff = metrics::efficiency_budget(&chain, &cycle)?;
                    let kd = detector_bandwidth(&chain)?;
                    let flags = scattering::filtered_flag_probabilities(&chain, cycle.t_d)?;
                    let mut row = vec![a, scattering::cooperativity(&chain)?, eff.eta_4wm, eff.eta_m, to_hz(kd)];
                    row.extend(flags);
                    row.push(eff.eta_total);
                    Ok(row)
                })
                .collect::<Out<Vec<_>>>()?;
            let mut header: Vec<String> = ["amplitude", "cooperativity", "eta_4wm", "eta_m", "kappa_d_hz"].map(String::from).to_vec();
            header.extend((0..n).map(|k| format!("p_flag{k}")));
            header.push("eta_total".into());
            emit_table(&common, Format::Csv, &header, &rows)
        }
        Command::ResonanceLines { common } => {
            let cfg = load(&common)?;
            let l = scattering::pump_resonance_lines(&cfg.chain)?;
            #[derive(Serialize)]
            struct Line {
                a0: f64,
                a1: f64,
                c_hz: f64,
                slope: f64,
            }
            #[derive(Serialize)]
            struct Report {
                horizontal: Line,
                diagonal: Line,
                f_p0_hz: f64,
                f_p1_hz: f64,
                f_sum_hz: f64,
            }
            let line = |d: scattering::DetuningLine| Line { a0: d.a0, a1: d.a1, c_hz: to_hz(d.c), slope: d.slope() };
            emit_record(
                &common,
                &Report {
                    horizontal: line(l.horizontal),
                    diagonal: line(l.diagonal),
                    f_p0_hz: to_hz(l.omega_p0),
                    f_p1_hz: to_hz(l.omega_p1),
                    f_sum_hz: to_hz(l.omega_sum),
                },
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                ErrorKind::InvalidSubcommand => 64,
                _ => 2,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
