//! Domain value types shared across the toolkit.
//!
//! A [`ChainSpec`] holds N+1 resonators, N flag qubits and N pumps. Resonator
//! `0` is the buffer, resonator `N` the waste, anything in between a memory.
//! Qubit `k` (and its pump) bridges resonators `k` and `k+1`; its
//! `chi_left`/`chi_right` are the dispersive shifts to those two resonators.

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeRole {
    Buffer,
    Memory,
    Waste,
    Readout,
}

/// A linear resonator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeSpec {
    pub role: ModeRole,
    /// Angular frequency [rad/s].
    pub omega: f64,
    /// External (port) coupling rate [1/s].
    pub kappa_ext: f64,
    /// Internal loss rate [1/s].
    pub kappa_int: f64,
}

impl ModeSpec {
    pub fn new(role: ModeRole, omega: f64, kappa_ext: f64, kappa_int: f64) -> Self {
        ModeSpec { role, omega, kappa_ext, kappa_int }
    }

    pub fn kappa_total(&self) -> f64 {
        self.kappa_ext + self.kappa_int
    }

    fn validate(&self, field: &str) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::config(format!("{field}.omega"), "must be positive and finite"));
        }
        if !(self.kappa_ext >= 0.0 && self.kappa_ext.is_finite()) {
            return Err(Error::config(format!("{field}.kappa_ext"), "must be >= 0"));
        }
        if !(self.kappa_int >= 0.0 && self.kappa_int.is_finite()) {
            return Err(Error::config(format!("{field}.kappa_int"), "must be >= 0"));
        }
        if self.kappa_total() <= 0.0 {
            return Err(Error::config(format!("{field}.kappa_ext"), "total decay rate must be > 0"));
        }
        Ok(())
    }
}

/// A transmon flag qubit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitSpec {
    /// g-e transition [rad/s].
    pub omega_ge: f64,
    /// Self-Kerr χ_qq [rad/s], signed (negative for transmons).
    pub chi_self: f64,
    /// Dispersive shift to the upstream resonator [rad/s], signed.
    pub chi_left: f64,
    /// Dispersive shift to the downstream resonator [rad/s], signed.
    pub chi_right: f64,
    /// Relaxation time without pump [s].
    pub t1: f64,
    /// Relaxation time while the pump is on [s].
    pub t1_pumped: f64,
    /// Equilibrium excited population.
    pub p_eq: f64,
    /// Excited population right after active reset.
    pub p_eq_reset: f64,
    /// Readout fidelity.
    pub f_ro: f64,
}

impl QubitSpec {
    /// Qubit with ideal, lossless parameters and -2 MHz dispersive shifts.
    /// Handy when a chain is specified directly by its couplings.
    pub fn ideal() -> Self {
        let chi = -crate::units::hz(2.0e6);
        QubitSpec {
            omega_ge: crate::units::hz(6.0e9),
            chi_self: -crate::units::hz(120.0e6),
            chi_left: chi,
            chi_right: chi,
            t1: 1.0,
            t1_pumped: 1.0,
            p_eq: 0.0,
            p_eq_reset: 0.0,
            f_ro: 1.0,
        }
    }

    fn validate(&self, field: &str) -> Result<()> {
        if !(self.omega_ge > 0.0) {
            return Err(Error::config(format!("{field}.omega_ge"), "must be positive"));
        }
        if !(self.t1 > 0.0) {
            return Err(Error::config(format!("{field}.t1"), "must be positive"));
        }
        if !(self.t1_pumped > 0.0) {
            return Err(Error::config(format!("{field}.t1_pumped"), "must be positive"));
        }
        if !(0.0 <= self.p_eq_reset && self.p_eq_reset <= self.p_eq && self.p_eq < 1.0) {
            return Err(Error::config(
                format!("{field}.p_eq"),
                "need 0 <= p_eq_reset <= p_eq < 1",
            ));
        }
        if !(self.f_ro > 0.0 && self.f_ro <= 1.0) {
            return Err(Error::config(format!("{field}.f_ro"), "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Pump driving one four-wave-mixing process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpSpec {
    /// Dimensionless complex pump amplitude (phase across the junction).
    pub xi: Complex64,
    /// Detuning from the frequency matching condition [rad/s].
    pub delta_p: f64,
}

impl PumpSpec {
    pub fn new(xi: Complex64, delta_p: f64) -> Self {
        PumpSpec { xi, delta_p }
    }

    /// Pump amplitude that yields coupling `g` on `qubit`.
    pub fn for_coupling(qubit: &QubitSpec, g: Complex64, delta_p: f64) -> Result<Self> {
        let root = chi_root(qubit, 0)?;
        Ok(PumpSpec { xi: -g / root, delta_p })
    }
}

fn chi_root(qubit: &QubitSpec, index: usize) -> Result<f64> {
    let prod = qubit.chi_left * qubit.chi_right;
    if qubit.chi_left == 0.0 || qubit.chi_right == 0.0 {
        return Err(Error::DegenerateCoupling { index, reason: "a dispersive shift is zero".into() });
    }
    if prod < 0.0 {
        return Err(Error::DegenerateCoupling {
            index,
            reason: "dispersive shifts have opposite signs".into(),
        });
    }
    Ok(prod.sqrt())
}

/// Four-wave-mixing coupling g4 = -ξ·sqrt(χ_left·χ_right) [rad/s].
pub fn coupling_strength(qubit: &QubitSpec, pump: &PumpSpec) -> Result<Complex64> {
    Ok(-pump.xi * chi_root(qubit, 0)?)
}

/// The full detector chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    pub modes: Vec<ModeSpec>,
    pub qubits: Vec<QubitSpec>,
    pub pumps: Vec<PumpSpec>,
}

impl ChainSpec {
    pub fn new(modes: Vec<ModeSpec>, qubits: Vec<QubitSpec>, pumps: Vec<PumpSpec>) -> Result<Self> {
        let chain = ChainSpec { modes, qubits, pumps };
        chain.validate()?;
        Ok(chain)
    }

    /// Chain specified directly by resonator rates and couplings. Qubits are
    /// [`QubitSpec::ideal`], frequencies are nominal, pumps are tuned.
    pub fn from_rates(kappa_ext: &[f64], kappa_int: &[f64], g: &[Complex64]) -> Result<Self> {
        let n = g.len();
        if kappa_ext.len() != n + 1 || kappa_int.len() != n + 1 {
            return Err(Error::config("modes", "need one more resonator than couplings"));
        }
        let modes = (0..=n)
            .map(|k| {
                let role = match k {
                    0 => ModeRole::Buffer,
                    k if k == n => ModeRole::Waste,
                    _ => ModeRole::Memory,
                };
                ModeSpec::new(role, crate::units::hz(8.0e9 - 0.5e9 * k as f64), kappa_ext[k], kappa_int[k])
            })
            .collect();
        let qubits = vec![QubitSpec::ideal(); n];
        let pumps = g
            .iter()
            .zip(&qubits)
            .map(|(&gk, q)| PumpSpec::for_coupling(q, gk, 0.0))
            .collect::<Result<Vec<_>>>()?;
        ChainSpec::new(modes, qubits, pumps)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.qubits.len();
        if self.modes.len() != n + 1 || self.pumps.len() != n {
            return Err(Error::config(
                "modes",
                format!(
                    "need modes = qubits + 1 = pumps + 1, got {} modes, {} qubits, {} pumps",
                    self.modes.len(),
                    n,
                    self.pumps.len()
                ),
            ));
        }
        if n == 0 {
            return Err(Error::config("qubits", "a chain needs at least one qubit"));
        }
        for (k, m) in self.modes.iter().enumerate() {
            let expected = match k {
                0 => ModeRole::Buffer,
                k if k == n => ModeRole::Waste,
                _ => ModeRole::Memory,
            };
            if m.role != expected {
                return Err(Error::config(
                    format!("mode{k}.role"),
                    format!("expected {expected:?}, got {:?}", m.role),
                ));
            }
            m.validate(&format!("mode{k}"))?;
        }
        for (k, q) in self.qubits.iter().enumerate() {
            q.validate(&format!("qubit{k}"))?;
        }
        for (k, p) in self.pumps.iter().enumerate() {
            if !(p.xi.re.is_finite() && p.xi.im.is_finite()) {
                return Err(Error::config(format!("pump{k}.xi"), "must be finite"));
            }
            if !p.delta_p.is_finite() {
                return Err(Error::config(format!("pump{k}.delta_p"), "must be finite"));
            }
            chi_root(&self.qubits[k], k)?;
        }
        Ok(())
    }

    /// Non-fatal remarks about the configuration.
    pub fn warnings(&self) -> Vec<String> {
        self.qubits
            .iter()
            .enumerate()
            .filter(|(_, q)| q.t1_pumped > q.t1)
            .map(|(k, _)| format!("qubit{k}: t1_pumped exceeds t1"))
            .collect()
    }

    /// Number of flag qubits N.
    pub fn n(&self) -> usize {
        self.qubits.len()
    }

    /// Total decay rate of resonator `k`.
    pub fn kappa(&self, k: usize) -> f64 {
        self.modes[k].kappa_total()
    }

    /// Coupling g4 of stage `k`.
    pub fn g4(&self, k: usize) -> Result<Complex64> {
        Ok(-self.pumps[k].xi * chi_root(&self.qubits[k], k)?)
    }

    pub fn couplings(&self) -> Result<Vec<Complex64>> {
        (0..self.n()).map(|k| self.g4(k)).collect()
    }

    /// Rotating-frame detuning of resonator `k`: Δ_0 = 0, Δ_{k+1} = Δ_k - Δ_{p,k}.
    pub fn mode_detuning(&self, k: usize) -> f64 {
        self.pumps[..k].iter().fold(0.0, |acc, p| acc - p.delta_p)
    }

    /// Decay rate of intermediate resonator `j` back through stage `j-1`:
    /// 4|g_{j-1}|²/κ_{j-1}.
    pub fn gamma_backward(&self, j: usize) -> Result<f64> {
        Ok(4.0 * self.g4(j - 1)?.norm_sqr() / self.kappa(j - 1))
    }

    /// Decay rate of intermediate resonator `j` forward through stage `j`:
    /// 4|g_j|²/κ_{j+1}.
    pub fn gamma_forward(&self, j: usize) -> Result<f64> {
        Ok(4.0 * self.g4(j)?.norm_sqr() / self.kappa(j + 1))
    }

    /// Memory-to-buffer rate γ_mb of an N=2 chain.
    pub fn gamma_mb(&self) -> Result<f64> {
        self.require_n(2)?;
        self.gamma_backward(1)
    }

    /// Memory-to-waste rate γ_mw of an N=2 chain.
    pub fn gamma_mw(&self) -> Result<f64> {
        self.require_n(2)?;
        self.gamma_forward(1)
    }

    pub(crate) fn require_n(&self, n: usize) -> Result<()> {
        if self.n() != n {
            return Err(Error::config("qubits", format!("operation needs N = {n}, chain has N = {}", self.n())));
        }
        Ok(())
    }

    /// Copy with every pump amplitude multiplied by `s`.
    pub fn scale_pumps(&self, s: f64) -> ChainSpec {
        let mut c = self.clone();
        for p in &mut c.pumps {
            p.xi *= s;
        }
        c
    }
}

/// Detection-cycle timing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleSpec {
    /// Detection window [s].
    pub t_d: f64,
    /// Readout duration [s].
    pub t_ro: f64,
    /// Reset pulse duration [s].
    pub t_reset: f64,
    /// Mean number of reset rounds per cycle.
    pub n_reset: f64,
}

impl CycleSpec {
    pub fn new(t_d: f64, t_ro: f64, t_reset: f64, n_reset: f64) -> Result<Self> {
        let c = CycleSpec { t_d, t_ro, t_reset, n_reset };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("t_d", self.t_d), ("t_ro", self.t_ro), ("t_reset", self.t_reset)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("cycle.{name}"), "must be positive and finite"));
            }
        }
        if !(self.n_reset >= 0.0 && self.n_reset.is_finite()) {
            return Err(Error::config("cycle.n_reset", "must be >= 0"));
        }
        Ok(())
    }

    /// Time spent outside the detection window [s].
    pub fn dead_time(&self) -> f64 {
        (self.n_reset + 1.0) * self.t_ro + self.n_reset * self.t_reset
    }

    /// Full cycle length [s].
    pub fn t_cycle(&self) -> f64 {
        self.t_d + self.dead_time()
    }

    /// Duty cycle T_d / T_cycle.
    pub fn eta_cycle(&self) -> f64 {
        self.t_d / self.t_cycle()
    }
}

/// Free function form of [`CycleSpec::eta_cycle`].
pub fn eta_cycle(cycle: &CycleSpec) -> f64 {
    cycle.eta_cycle()
}

/// Thermal environment of the detector input line.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Environment {
    /// Temperature [K].
    pub temperature: f64,
    /// Mean photon number overrides as (frequency [Hz], n̄) pairs.
    pub background_occupations: Vec<(f64, f64)>,
}

impl Environment {
    pub fn new(temperature: f64) -> Result<Self> {
        let env = Environment { temperature, background_occupations: Vec::new() };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("environment.temperature", "must be >= 0"));
        }
        if self.background_occupations.iter().any(|&(_, n)| !(n >= 0.0)) {
            return Err(Error::config("environment.background_occupations", "must be >= 0"));
        }
        Ok(())
    }

    /// Mean occupation at `frequency` [Hz]; overrides match within 1 Hz.
    pub fn occupation(&self, frequency: f64) -> f64 {
        self.background_occupations
            .iter()
            .find(|(f, _)| (f - frequency).abs() < 1.0)
            .map(|&(_, n)| n)
            .unwrap_or_else(|| crate::metrics::thermal_occupation(self.temperature, frequency))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::hz;
    use proptest::prelude::*;

    fn qubit(chi_l: f64, chi_r: f64) -> QubitSpec {
        QubitSpec { chi_left: hz(chi_l), chi_right: hz(chi_r), ..QubitSpec::ideal() }
    }

    #[test]
    fn zero_pump_gives_zero_coupling() {
        let g = coupling_strength(&qubit(-1.784e6, -2e6), &PumpSpec::new(Complex64::new(0.0, 0.0), 0.0)).unwrap();
        assert_eq!(g, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn unit_pump_coupling_magnitude() {
        let g = coupling_strength(&qubit(-1.784e6, -2e6), &PumpSpec::new(Complex64::new(1.0, 0.0), 0.0)).unwrap();
        // sqrt(1.784 * 2) MHz
        assert!((g.norm() / hz(1.0) - 1.888_915e6).abs() < 10.0);
        assert!(g.re < 0.0);
    }

    #[test]
    fn pump_for_coupling_round_trips() {
        let q = qubit(-1.784e6, -2e6);
        let g = Complex64::new(-hz(130e3), 0.0);
        let p = PumpSpec::for_coupling(&q, g, 0.0).unwrap();
        let back = coupling_strength(&q, &p).unwrap();
        assert!((back - g).norm() < 1e-9 * g.norm());
    }

    #[test]
    fn degenerate_and_mixed_sign_shifts_rejected() {
        let p = PumpSpec::new(Complex64::new(0.1, 0.0), 0.0);
        assert!(matches!(coupling_strength(&qubit(0.0, -2e6), &p), Err(Error::DegenerateCoupling { .. })));
        assert!(matches!(coupling_strength(&qubit(1e6, -2e6), &p), Err(Error::DegenerateCoupling { .. })));
    }

    #[test]
    fn eta_cycle_examples() {
        let c = CycleSpec::new(10e-6, 1e-6, 100e-9, 1.0).unwrap();
        assert!((c.eta_cycle() - 10.0 / 12.1).abs() < 1e-12);
        let tiny = CycleSpec::new(10e-6, 1e-15, 1e-15, 1.0).unwrap();
        assert!((tiny.eta_cycle() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn chain_shape_is_checked() {
        let m = ModeSpec::new(ModeRole::Buffer, 1.0, 1.0, 0.0);
        let err = ChainSpec::new(vec![m], vec![QubitSpec::ideal()], vec![]).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { .. }));
    }

    #[test]
    fn pumped_t1_above_bare_is_a_warning_only() {
        let mut chain = ChainSpec::from_rates(&[1.0, 1.0], &[0.0, 0.0], &[Complex64::new(0.5, 0.0)]).unwrap();
        chain.qubits[0].t1 = 1e-5;
        chain.qubits[0].t1_pumped = 2e-5;
        assert!(chain.validate().is_ok());
        assert_eq!(chain.warnings().len(), 1);
    }

    #[test]
    fn mode_detunings_accumulate() {
        let mut chain = ChainSpec::from_rates(
            &[1.0, 1.0, 1.0],
            &[0.0; 3],
            &[Complex64::new(0.5, 0.0), Complex64::new(0.5, 0.0)],
        )
        .unwrap();
        chain.pumps[0].delta_p = 3.0;
        chain.pumps[1].delta_p = -1.0;
        assert_eq!(chain.mode_detuning(0), 0.0);
        assert_eq!(chain.mode_detuning(1), -3.0);
        assert_eq!(chain.mode_detuning(2), -2.0);
    }

    proptest! {
        #[test]
        fn coupling_is_homogeneous_in_xi(re in -2.0..2.0f64, im in -2.0..2.0f64, s in -5.0..5.0f64) {
            let q = qubit(-1.784e6, -2e6);
            let g1 = coupling_strength(&q, &PumpSpec::new(Complex64::new(re, im), 0.0)).unwrap();
            let g2 = coupling_strength(&q, &PumpSpec::new(Complex64::new(re, im) * s, 0.0)).unwrap();
            prop_assert!((g2 - g1 * s).norm() <= 1e-12 * (1.0 + g2.norm()));
        }

        #[test]
        fn eta_cycle_monotone(td in 1e-6..1e-4f64, tro in 1e-8..1e-5f64, trs in 1e-9..1e-6f64, n in 0.0..3.0f64, f in 1.01..2.0f64) {
            let base = CycleSpec::new(td, tro, trs, n).unwrap();
            let e = base.eta_cycle();
            prop_assert!(e > 0.0 && e < 1.0);
            let longer = CycleSpec { t_d: td * f, ..base };
            prop_assert!(longer.eta_cycle() > e);
            let slower_ro = CycleSpec { t_ro: tro * f, ..base };
            prop_assert!(slower_ro.eta_cycle() < e);
            if n > 0.0 {
                let slower_reset = CycleSpec { t_reset: trs * f, ..base };
                prop_assert!(slower_reset.eta_cycle() < e);
            }
        }

        #[test]
        fn gammas_scale_as_xi_squared(s in 0.1..10.0f64) {
            let g = [Complex64::new(-hz(130e3), 0.0), Complex64::new(-hz(125e3), 0.0)];
            let chain = ChainSpec::from_rates(&[5.8e6, 0.0, 3.36e6], &[0.0, 3.7e5, 0.0], &g).unwrap();
            let scaled = chain.scale_pumps(s);
            let (a, b) = (chain.gamma_mb().unwrap(), chain.gamma_mw().unwrap());
            prop_assert!(a >= 0.0 && b >= 0.0);
            prop_assert!((scaled.gamma_mb().unwrap() - s * s * a).abs() <= 1e-9 * s * s * a);
            prop_assert!((scaled.gamma_mw().unwrap() - s * s * b).abs() <= 1e-9 * s * s * b);
        }
    }
}
