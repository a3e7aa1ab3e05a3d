//! TOML configuration. Sections `[mode0..]`, `[qubit0..]`, `[pump0..]`,
//! `[cycle]`, `[environment]` and `[noise]`; frequencies in Hz are converted
//! to rad/s here and nowhere else.

use std::collections::BTreeMap;

use csmpd::metrics::IntrinsicModel;
use csmpd::units::hz;
use csmpd::{ChainSpec, CycleSpec, Environment, ModeRole, ModeSpec, PumpSpec, QubitSpec};
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::Deserialize;

/// Embedded parameter set of the two-qubit device.
pub const PAPER_FIXTURE: &str = include_str!("../fixtures/paper.toml");

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<csmpd::Error> for ConfigError {
    fn from(e: csmpd::Error) -> Self {
        ConfigError(e.to_string())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeSection {
    role: String,
    frequency: f64,
    kappa_ext: f64,
    #[serde(default)]
    kappa_int: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QubitSection {
    frequency: f64,
    chi_self: f64,
    chi_left: f64,
    chi_right: f64,
    t1: f64,
    t1_pumped: Option<f64>,
    #[serde(default)]
    p_eq: f64,
    #[serde(default)]
    p_eq_reset: f64,
    #[serde(default = "one")]
    f_ro: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PumpSection {
    xi: Option<f64>,
    /// Phase of ξ [rad].
    #[serde(default)]
    xi_phase: f64,
    /// Target coupling g4/2π [Hz]; alternative to `xi`.
    g4_hz: Option<f64>,
    #[serde(default)]
    delta_p: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CycleSection {
    t_d: f64,
    t_ro: f64,
    t_reset: f64,
    #[serde(default = "one")]
    n_reset: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvironmentSection {
    #[serde(default)]
    temperature: f64,
    /// (frequency [Hz], n̄) overrides.
    #[serde(default)]
    background: Vec<[f64; 2]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseSection {
    #[serde(default)]
    alpha_pump: f64,
    #[serde(default)]
    alpha_ro: f64,
    k_err: Option<f64>,
    c_err: Option<f64>,
}

/// Noise inputs that are not derived from the chain.
#[derive(Debug, Clone, Copy)]
pub struct Noise {
    pub alpha_pump: f64,
    pub alpha_ro: f64,
    pub intrinsic: IntrinsicModel,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub chain: ChainSpec,
    pub cycle: Option<CycleSpec>,
    pub environment: Environment,
    pub noise: Noise,
}

impl Config {
    pub fn cycle(&self) -> Result<CycleSpec, ConfigError> {
        self.cycle.ok_or_else(|| ConfigError("missing section [cycle]".into()))
    }

    /// Buffer frequency [Hz].
    pub fn buffer_frequency(&self) -> f64 {
        csmpd::units::to_hz(self.chain.modes[0].omega)
    }
}

fn section<T: DeserializeOwned>(name: &str, value: &toml::Value) -> Result<T, ConfigError> {
    T::deserialize(value.clone()).map_err(|e| ConfigError(format!("[{name}]: {e}")))
}

fn indexed<'a>(table: &'a toml::Table, prefix: &str) -> Result<Vec<(String, &'a toml::Value)>, ConfigError> {
    let mut found: BTreeMap<usize, (String, &toml::Value)> = BTreeMap::new();
    for (k, v) in table {
        if let Some(i) = k.strip_prefix(prefix).and_then(|s| s.parse::<usize>().ok()) {
            found.insert(i, (k.clone(), v));
        }
    }
    for (expect, &i) in found.keys().enumerate() {
        if i != expect {
            return Err(ConfigError(format!("[{prefix}{expect}] missing: sections must be numbered from 0 without gaps")));
        }
    }
    Ok(found.into_values().collect())
}

fn role(name: &str, s: &str) -> Result<ModeRole, ConfigError> {
    match s {
        "buffer" => Ok(ModeRole::Buffer),
        "memory" => Ok(ModeRole::Memory),
        "waste" => Ok(ModeRole::Waste),
        "readout" => Ok(ModeRole::Readout),
        other => Err(ConfigError(format!("[{name}].role: unknown role `{other}`"))),
    }
}

pub fn parse(text: &str) -> Result<Config, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError(format!("invalid TOML: {e}")))?;
    for key in table.keys() {
        let known = ["mode", "qubit", "pump"]
            .iter()
            .any(|p| key.strip_prefix(p).is_some_and(|s| s.parse::<usize>().is_ok()))
            || ["cycle", "environment", "noise"].contains(&key.as_str());
        if !known {
            return Err(ConfigError(format!("[{key}]: unknown section")));
        }
    }

    let modes = indexed(&table, "mode")?
        .into_iter()
        .map(|(name, v)| {
            let m: ModeSection = section(&name, v)?;
            Ok(ModeSpec::new(role(&name, &m.role)?, hz(m.frequency), m.kappa_ext, m.kappa_int))
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;
    let qubits = indexed(&table, "qubit")?
        .into_iter()
        .map(|(name, v)| {
            let q: QubitSection = section(&name, v)?;
            Ok(QubitSpec {
                omega_ge: hz(q.frequency),
                chi_self: hz(q.chi_self),
                chi_left: hz(q.chi_left),
                chi_right: hz(q.chi_right),
                t1: q.t1,
                t1_pumped: q.t1_pumped.unwrap_or(q.t1),
                p_eq: q.p_eq,
                p_eq_reset: q.p_eq_reset,
                f_ro: q.f_ro,
            })
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;
    let pump_sections = indexed(&table, "pump")?;
    if pump_sections.len() != qubits.len() {
        return Err(ConfigError(format!("need one [pumpK] per [qubitK]: {} pumps, {} qubits", pump_sections.len(), qubits.len())));
    }
    let pumps = pump_sections
        .into_iter()
        .zip(&qubits)
        .map(|((name, v), q)| {
            let p: PumpSection = section(&name, v)?;
            match (p.xi, p.g4_hz) {
                (Some(xi), None) => Ok(PumpSpec::new(Complex64::from_polar(xi, p.xi_phase), hz(p.delta_p))),
                (None, Some(g)) => PumpSpec::for_coupling(q, Complex64::new(hz(g), 0.0), hz(p.delta_p))
                    .map_err(|e| ConfigError(format!("[{name}].g4_hz: {e}"))),
                _ => Err(ConfigError(format!("[{name}]: give exactly one of `xi` or `g4_hz`"))),
            }
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;
    let chain = ChainSpec::new(modes, qubits, pumps)?;

    let cycle = match table.get("cycle") {
        Some(v) => {
            let c: CycleSection = section("cycle", v)?;
            Some(CycleSpec::new(c.t_d, c.t_ro, c.t_reset, c.n_reset)?)
        }
        None => None,
    };
    let env: EnvironmentSection = match table.get("environment") {
        Some(v) => section("environment", v)?,
        None => EnvironmentSection::default(),
    };
    let environment = Environment {
        temperature: env.temperature,
        background_occupations: env.background.iter().map(|&[f, n]| (f, n)).collect(),
    };
    environment.validate()?;
    let noise: NoiseSection = match table.get("noise") {
        Some(v) => section("noise", v)?,
        None => NoiseSection::default(),
    };
    let intrinsic = match (noise.k_err, noise.c_err) {
        (None, None) => IntrinsicModel::Linearized,
        (Some(k_err), Some(c_err)) => IntrinsicModel::CorrelatedPair { k_err, c_err },
        _ => return Err(ConfigError("[noise]: give both `k_err` and `c_err` or neither".into())),
    };
    for (key, v) in [("alpha_pump", noise.alpha_pump), ("alpha_ro", noise.alpha_ro)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(ConfigError(format!("[noise].{key}: must be non-negative")));
        }
    }
    Ok(Config {
        chain,
        cycle,
        environment,
        noise: Noise { alpha_pump: noise.alpha_pump, alpha_ro: noise.alpha_ro, intrinsic },
    })
}
