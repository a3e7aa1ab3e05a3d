//! Detector figures of merit: dark-count and efficiency budgets,
//! sensitivity, NEP/SNR and the temperature models used by the fitter.
//!
//! Frequencies passed to this module are cyclic [Hz]; rates are [1/s] and
//! bandwidths [rad/s].

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ChainSpec, CycleSpec, Environment, QubitSpec};
use crate::scattering;
use crate::units::{photon_energy, H, K_B};

/// Bose-Einstein occupation 1/(exp(hf/kT) - 1); zero at T = 0.
pub fn thermal_occupation(temperature: f64, frequency: f64) -> f64 {
    if temperature <= 0.0 {
        return 0.0;
    }
    1.0 / (H * frequency / (K_B * temperature)).exp_m1()
}

/// Intrinsic dark-count rate of one qubit in the operational limit
/// T_d ≪ T1: (p_eq - p_reset)/T1 · η_cycle + p_reset/T_cycle.
/// The detection window runs with the pump on, so `t1_pumped` is used.
pub fn alpha_q(qubit: &QubitSpec, cycle: &CycleSpec) -> f64 {
    (qubit.p_eq - qubit.p_eq_reset) / qubit.t1_pumped * cycle.eta_cycle() + qubit.p_eq_reset / cycle.t_cycle()
}

/// Same rate without linearising the relaxation toward p_eq during T_d.
pub fn alpha_q_exact(qubit: &QubitSpec, cycle: &CycleSpec) -> f64 {
    let decay = (-cycle.t_d / qubit.t1_pumped).exp();
    let p_end = (qubit.p_eq_reset - qubit.p_eq) * decay + qubit.p_eq;
    p_end / cycle.t_cycle()
}

/// Thermal dark-count rate η·(κ_d/4)·n̄ for a Lorentzian line, κ_d in rad/s.
pub fn alpha_th(eta: f64, kappa_d: f64, n_bar: f64) -> f64 {
    eta * kappa_d / 4.0 * n_bar
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseBudget {
    pub alpha_q: f64,
    pub alpha_pump: f64,
    pub alpha_ro: f64,
    pub alpha_th: f64,
    pub alpha_total: f64,
}

impl NoiseBudget {
    pub fn new(alpha_q: f64, alpha_pump: f64, alpha_ro: f64, alpha_th: f64) -> Result<Self> {
        for (name, v) in [("alpha_q", alpha_q), ("alpha_pump", alpha_pump), ("alpha_ro", alpha_ro), ("alpha_th", alpha_th)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be finite and >= 0"));
            }
        }
        Ok(NoiseBudget { alpha_q, alpha_pump, alpha_ro, alpha_th, alpha_total: alpha_q + alpha_pump + alpha_ro + alpha_th })
    }

    /// Non-thermal part α_err.
    pub fn alpha_err(&self) -> f64 {
        self.alpha_q + self.alpha_pump + self.alpha_ro
    }
}

/// How the intrinsic contribution of several qubits is combined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntrinsicModel {
    /// Per-qubit linearised rates; for N > 1 the coincidence rate of
    /// independent flips, Π(α_q,k T_cycle)/T_cycle.
    Linearized,
    /// Two-qubit correlated model K·n̄(T, f_Q0)·n̄(T, f_Q1) + c.
    CorrelatedPair { k_err: f64, c_err: f64 },
}

#[derive(Debug, Clone)]
pub struct BudgetInputs<'a> {
    pub qubits: &'a [QubitSpec],
    pub cycle: CycleSpec,
    /// Operational efficiency feeding the thermal term.
    pub eta: f64,
    /// Detector bandwidth [rad/s].
    pub kappa_d: f64,
    pub environment: &'a Environment,
    /// Buffer (signal) frequency [Hz].
    pub buffer_frequency: f64,
    pub alpha_pump: f64,
    pub alpha_ro: f64,
    pub intrinsic: IntrinsicModel,
}

pub fn noise_budget(inputs: &BudgetInputs) -> Result<NoiseBudget> {
    if inputs.qubits.is_empty() {
        return Err(Error::config("qubits", "need at least one qubit"));
    }
    let t_cycle = inputs.cycle.t_cycle();
    let alpha_q = match inputs.intrinsic {
        IntrinsicModel::Linearized => {
            let p: f64 = inputs.qubits.iter().map(|q| alpha_q(q, &inputs.cycle) * t_cycle).product();
            p / t_cycle
        }
        IntrinsicModel::CorrelatedPair { k_err, c_err } => {
            if inputs.qubits.len() != 2 {
                return Err(Error::config("qubits", "correlated-pair model needs two qubits"));
            }
            let f0 = crate::units::to_hz(inputs.qubits[0].omega_ge);
            let f1 = crate::units::to_hz(inputs.qubits[1].omega_ge);
            TemperatureModel::Pair { k: k_err, c: c_err, f0, f1 }.rate(inputs.environment.temperature)
        }
    };
    let n_bar = inputs.environment.occupation(inputs.buffer_frequency);
    NoiseBudget::new(alpha_q, inputs.alpha_pump, inputs.alpha_ro, alpha_th(inputs.eta, inputs.kappa_d, n_bar))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyBudget {
    pub eta_4wm: f64,
    pub eta_m: f64,
    pub eta_cycle: f64,
    pub eta_q: Vec<f64>,
    pub f_ro: Vec<f64>,
    pub eta_total: f64,
}

impl EfficiencyBudget {
    pub fn from_factors(eta_4wm: f64, eta_m: f64, eta_cycle: f64, eta_q: Vec<f64>, f_ro: Vec<f64>) -> Self {
        let eta_total = eta_4wm * eta_m * eta_cycle * eta_q.iter().product::<f64>() * f_ro.iter().product::<f64>();
        EfficiencyBudget { eta_4wm, eta_m, eta_cycle, eta_q, f_ro, eta_total }
    }
}

/// Probability that a flag raised at a uniformly distributed time inside the
/// window survives until readout: (1 - e^{-T_d/T1})·T1/T_d.
pub fn eta_q(t_d: f64, t1: f64) -> f64 {
    let x = t_d / t1;
    if x < 1e-8 {
        1.0 - x / 2.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// Operational efficiency budget of a chain. η_m is the memory efficiency
/// for N=2, 1 for N=1, and |S21(0)|²/η_4WM beyond.
pub fn efficiency_budget(chain: &ChainSpec, cycle: &CycleSpec) -> Result<EfficiencyBudget> {
    let coop = scattering::cooperativity(chain)?;
    let e4 = scattering::eta_4wm(coop);
    let em = match chain.n() {
        1 => 1.0,
        2 => scattering::chain_memory_efficiency(chain)?,
        _ => scattering::transmission(chain, 0.0)? / e4,
    };
    let eq = chain.qubits.iter().map(|q| eta_q(cycle.t_d, q.t1_pumped)).collect();
    let fro = chain.qubits.iter().map(|q| q.f_ro).collect();
    Ok(EfficiencyBudget::from_factors(e4, em, cycle.eta_cycle(), eq, fro))
}

/// Window length x = T_d/T1 maximising η_cycle·η_q, the root of
/// e^x = x + 1 + r with r = T_RO+reset/T1, found by bisection.
pub fn optimal_window_ratio(r: f64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::config("dead_time_ratio", "must be positive"));
    }
    let h = |x: f64| x.exp_m1() - x - r;
    let (mut lo, mut hi) = (0.0, 1.0);
    while h(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Power sensitivity ħω√α/η [W/√Hz].
pub fn sensitivity(alpha: f64, eta: f64, frequency: f64) -> Result<f64> {
    if eta <= 0.0 {
        return Err(Error::ZeroEfficiency);
    }
    Ok(photon_energy(frequency) * alpha.sqrt() / eta)
}

/// Noise-equivalent power ħω(1 + sqrt(1 + 4αt))/(2η√t) [W/√Hz] at
/// integration time `t`.
pub fn nep(alpha: f64, eta: f64, frequency: f64, t: f64) -> Result<f64> {
    if eta <= 0.0 {
        return Err(Error::ZeroEfficiency);
    }
    if !(t > 0.0) {
        return Err(Error::config("t", "integration time must be positive"));
    }
    Ok(photon_energy(frequency) * (1.0 + (1.0 + 4.0 * alpha * t).sqrt()) / (2.0 * eta * t.sqrt()))
}

/// Long-integration limit of [`nep`], equal to the sensitivity.
pub fn nep_asymptote(alpha: f64, eta: f64, frequency: f64) -> Result<f64> {
    sensitivity(alpha, eta, frequency)
}

/// Detection SNR of power `power` [W] integrated over `t`:
/// (ηPt/ħω)/sqrt(ηPt/ħω + αt).
pub fn snr(power: f64, eta: f64, alpha: f64, t: f64, frequency: f64) -> f64 {
    let counts = eta * power * t / photon_energy(frequency);
    counts / (counts + alpha * t).sqrt()
}

/// Temperature dependence of a dark-count contribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TemperatureModel {
    /// K·n̄(T, f) + c.
    Single { k: f64, c: f64, frequency: f64 },
    /// K·n̄(T, f0)·n̄(T, f1) + c.
    Pair { k: f64, c: f64, f0: f64, f1: f64 },
}

impl TemperatureModel {
    pub fn rate(&self, temperature: f64) -> f64 {
        match *self {
            TemperatureModel::Single { k, c, frequency } => k * thermal_occupation(temperature, frequency) + c,
            TemperatureModel::Pair { k, c, f0, f1 } => {
                k * thermal_occupation(temperature, f0) * thermal_occupation(temperature, f1) + c
            }
        }
    }
}

pub fn temperature_model(model: &TemperatureModel, temperature: f64) -> f64 {
    model.rate(temperature)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::hz;
    use proptest::prelude::*;

    fn qubit(t1: f64, p_eq: f64, p_reset: f64) -> QubitSpec {
        QubitSpec { t1, t1_pumped: t1, p_eq, p_eq_reset: p_reset, ..QubitSpec::ideal() }
    }

    #[test]
    fn thermal_occupation_values() {
        assert_eq!(thermal_occupation(0.0, 7e9), 0.0);
        assert!((thermal_occupation(0.040, 7e9) / 2.252_16e-4 - 1.0).abs() < 1e-4);
        assert!((thermal_occupation(0.044, 8.798e9) / 6.7984e-5 - 1.0).abs() < 1e-3);
        assert_eq!(thermal_occupation(1e-4, 10e9), 0.0);
    }

    #[test]
    fn alpha_q_examples() {
        let q = qubit(50e-6, 1e-3, 1e-5);
        let a1 = alpha_q(&q, &CycleSpec::new(10e-6, 1e-6, 100e-9, 1.0).unwrap());
        let a0 = alpha_q(&q, &CycleSpec::new(10e-6, 1e-6, 100e-9, 0.0).unwrap());
        assert!((a1 - 17.190).abs() < 1e-3);
        assert!((a0 - 18.909).abs() < 1e-3);
        assert_eq!(alpha_q(&qubit(50e-6, 0.0, 0.0), &CycleSpec::new(10e-6, 1e-6, 1e-7, 1.0).unwrap()), 0.0);
    }

    #[test]
    fn linearised_alpha_q_close_to_exact_for_short_windows() {
        // The linearisation overestimates by about x/2 with x = T_d/T1;
        // 5% agreement holds up to x = 0.1.
        for x in [0.01, 0.05, 0.1] {
            let q = qubit(100e-6, 2e-3, 1e-4);
            let c = CycleSpec::new(x * 100e-6, 1e-6, 1e-7, 1.0).unwrap();
            let (lin, ex) = (alpha_q(&q, &c), alpha_q_exact(&q, &c));
            assert!(lin >= ex && (lin / ex - 1.0) < 0.05, "x={x}: {lin} vs {ex}");
        }
    }

    #[test]
    fn alpha_th_examples() {
        assert_eq!(alpha_th(0.8, hz(250e3), 0.0), 0.0);
        let k = alpha_th(0.10, hz(216e3), 1.0);
        assert!((k - 33_929.0).abs() < 1.0);
        let a = alpha_th(0.8, hz(250e3), thermal_occupation(0.040, 7e9));
        assert!((a - 70.75).abs() < 0.05);
    }

    #[test]
    fn budget_sums_exactly() {
        let env = Environment::new(0.0).unwrap();
        let qubits = [qubit(30e-6, 0.0, 0.0)];
        let inputs = BudgetInputs {
            qubits: &qubits,
            cycle: CycleSpec::new(13e-6, 1.5e-6, 128e-9, 1.0).unwrap(),
            eta: 0.2,
            kappa_d: hz(240e3),
            environment: &env,
            buffer_frequency: 8.798e9,
            alpha_pump: 0.0,
            alpha_ro: 0.0,
            intrinsic: IntrinsicModel::Linearized,
        };
        assert_eq!(noise_budget(&inputs).unwrap().alpha_total, 0.0);
        let b = noise_budget(&BudgetInputs { alpha_pump: 0.12, alpha_ro: 0.01, ..inputs.clone() }).unwrap();
        assert_eq!(b.alpha_total, b.alpha_q + b.alpha_pump + b.alpha_ro + b.alpha_th);
        assert!((b.alpha_err() - 0.13).abs() < 1e-15);
    }

    #[test]
    fn correlated_pair_needs_two_qubits() {
        let env = Environment::new(0.05).unwrap();
        let qubits = [qubit(30e-6, 1e-3, 1e-4)];
        let inputs = BudgetInputs {
            qubits: &qubits,
            cycle: CycleSpec::new(13e-6, 1.5e-6, 128e-9, 1.0).unwrap(),
            eta: 0.2,
            kappa_d: hz(240e3),
            environment: &env,
            buffer_frequency: 8.798e9,
            alpha_pump: 0.0,
            alpha_ro: 0.0,
            intrinsic: IntrinsicModel::CorrelatedPair { k_err: 1.0, c_err: 0.0 },
        };
        assert!(noise_budget(&inputs).is_err());
    }

    #[test]
    fn eta_q_limits() {
        assert!((eta_q(13e-6, 1e9) - 1.0).abs() < 1e-9);
        assert!((eta_q(1.0, 1.0) - (1.0 - (-1f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn optimal_window_against_grid_scan() {
        let r = 0.05;
        let x = optimal_window_ratio(r).unwrap();
        assert!((x - 0.300_403).abs() < 1e-5);
        // η_cycle·η_q at T1 = 1: x/(x + r) · (1 - e^{-x})/x.
        let obj = |x: f64| -(-x).exp_m1() / (x + r);
        let best = (1..200_000).map(|i| i as f64 * 1e-5).max_by(|a, b| obj(*a).total_cmp(&obj(*b))).unwrap();
        assert!((best - x).abs() < 2e-5);
    }

    #[test]
    fn sensitivity_examples() {
        assert!((sensitivity(6.4, 0.25, 8.798e9).unwrap() / 5.899_16e-23 - 1.0).abs() < 1e-5);
        assert!((sensitivity(0.12, 0.25, 8.798e9).unwrap() / 8.0778e-24 - 1.0).abs() < 1e-4);
        assert_eq!(sensitivity(0.0, 0.25, 8.798e9).unwrap(), 0.0);
        assert_eq!(sensitivity(1.0, 0.0, 8.798e9), Err(Error::ZeroEfficiency));
    }

    #[test]
    fn nep_limits() {
        let hw = photon_energy(8.798e9);
        let a = nep(0.0, 0.5, 8.798e9, 4.0).unwrap();
        assert!((a - hw / (0.5 * 2.0)).abs() < 1e-12 * a);
        let t = 1e4 / 6.4;
        let full = nep(6.4, 0.25, 8.798e9, t).unwrap();
        let asym = nep_asymptote(6.4, 0.25, 8.798e9).unwrap();
        assert!((full / asym - 1.0).abs() < 0.01);
    }

    #[test]
    fn temperature_model_limits() {
        let m = TemperatureModel::Single { k: 3.3e4, c: 5.0, frequency: 8.798e9 };
        assert_eq!(m.rate(0.0), 5.0);
        assert!(m.rate(0.1) > m.rate(0.05));
        let flat = TemperatureModel::Single { k: 0.0, c: 2.0, frequency: 8.798e9 };
        assert_eq!(flat.rate(0.3), 2.0);
        let p = TemperatureModel::Pair { k: 2.8e4, c: 0.0, f0: 6.614e9, f1: 6.284e9 };
        assert_eq!(p.rate(0.0), 0.0);
    }

    proptest! {
        #[test]
        fn occupation_monotone(t in 0.005..2.0f64, f in 1e9..2e10f64, s in 1.001..2.0f64) {
            prop_assert!(thermal_occupation(t * s, f) > thermal_occupation(t, f));
            prop_assert!(thermal_occupation(t, f * s) < thermal_occupation(t, f));
        }

        #[test]
        fn occupation_classical_limit(t in 1.0..100.0f64, f in 1e6..1e8f64) {
            let x = H * f / (K_B * t);
            prop_assume!(x < 0.01);
            let n = thermal_occupation(t, f);
            prop_assert!((n * x - 1.0).abs() < 0.01);
        }

        #[test]
        fn sensitivity_homogeneity(a in 0.01..100.0f64, e in 0.01..1.0f64, s in 0.1..10.0f64) {
            let base = sensitivity(a, e, 8e9).unwrap();
            prop_assert!((sensitivity(a * s * s, e, 8e9).unwrap() - s * base).abs() <= 1e-12 * s * base);
            prop_assert!((sensitivity(a, e * s, 8e9).unwrap() - base / s).abs() <= 1e-12 * base / s);
        }

        #[test]
        fn nep_decreasing_and_round_trip(a in 0.01..100.0f64, e in 0.05..1.0f64, t in 1e-3..1e3f64) {
            let n1 = nep(a, e, 8e9, t).unwrap();
            prop_assert!(nep(a, e, 8e9, t * 1.5).unwrap() < n1);
            let s = snr(n1 / t.sqrt(), e, a, t, 8e9);
            prop_assert!((s - 1.0).abs() < 1e-9);
        }

        #[test]
        fn nep_scales_as_inverse_root_t_without_dark_counts(t in 1e-3..1e3f64) {
            let a = nep(0.0, 0.3, 8e9, t).unwrap();
            let b = nep(0.0, 0.3, 8e9, 4.0 * t).unwrap();
            prop_assert!((a / b - 2.0).abs() < 1e-12);
        }

        #[test]
        fn intrinsic_sensitivity_below_operational(aq in 0.0..10.0f64, ath in 0.0..10.0f64) {
            let b = NoiseBudget::new(aq, 0.0, 0.0, ath).unwrap();
            prop_assert!(sensitivity(b.alpha_err(), 0.3, 8e9).unwrap() <= sensitivity(b.alpha_total, 0.3, 8e9).unwrap());
        }
    }
}
