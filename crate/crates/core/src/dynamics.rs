//! Time evolution of the detector in its single-excitation regime.
//!
//! Two independent descriptions are provided:
//!
//! * [`evolve_master_equation`] treats every resonator and qubit as a
//!   two-level system, ordered `r0, q0, r1, q1, ..., rN`, and integrates the
//!   full density matrix (dimension 2^(2N+1), 32 for N=2) under
//!   `H = Σ Δ_k r_k†r_k + Σ (g_k r_k σ_k† r_{k+1}† + h.c.)` with decay of
//!   the selected resonators.
//! * [`evolve_linear_model`] integrates the N+1 amplitudes of the stages
//!   `|k⟩` = photon in resonator k with qubits 0..k flagged, optionally
//!   driven through the buffer port.
//!
//! Starting from a photon in the buffer, the two agree exactly; that
//! equivalence is the central oracle of this module.

use nalgebra::DVector;
use num_complex::Complex64;
use ode_solvers::dop_shared::{IntegrationError, OutputType, System};
use ode_solvers::Dopri5;

use crate::error::{Error, Result};
use crate::model::ChainSpec;

/// Absolute and relative integrator tolerance.
pub const TOLERANCE: f64 = 1e-10;
/// Output points integrated per solver restart.
const CHUNK: usize = 256;

/// Which resonators decay into their environment. The waste always does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Dissipation {
    pub buffer: bool,
    pub memory: bool,
}

impl Dissipation {
    /// Waste only.
    pub const WASTE_ONLY: Dissipation = Dissipation { buffer: false, memory: false };
    /// Every resonator, as in the scattering model.
    pub const ALL: Dissipation = Dissipation { buffer: true, memory: true };

    fn rates(&self, chain: &ChainSpec) -> Vec<f64> {
        let n = chain.n();
        (0..=n)
            .map(|k| {
                let on = if k == 0 {
                    self.buffer
                } else if k == n {
                    true
                } else {
                    self.memory
                };
                if on {
                    chain.kappa(k)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Pure state in the stage basis: `stages[k]` is the amplitude of the photon
/// sitting in resonator k with qubits 0..k raised. Missing norm is assigned
/// to the ground state.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceState {
    pub stages: Vec<Complex64>,
    pub time: f64,
}

impl SubspaceState {
    pub fn vacuum(n: usize) -> Self {
        SubspaceState { stages: vec![Complex64::new(0.0, 0.0); n + 1], time: 0.0 }
    }

    pub fn photon_in_buffer(n: usize) -> Self {
        let mut s = Self::vacuum(n);
        s.stages[0] = Complex64::new(1.0, 0.0);
        s
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.stages.len() != n + 1 {
            return Err(Error::config("initial", format!("need {} stage amplitudes", n + 1)));
        }
        if self.stages.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::config("initial", "amplitudes must be finite"));
        }
        if self.stages.iter().map(|c| c.norm_sqr()).sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::config("initial", "total probability exceeds one"));
        }
        Ok(())
    }
}

/// Mode occupancies on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionTrace {
    pub time: Vec<f64>,
    /// `resonators[k][i]`: occupancy of resonator k at `time[i]`.
    pub resonators: Vec<Vec<f64>>,
    /// `qubits[k][i]`: excited population of qubit k.
    pub qubits: Vec<Vec<f64>>,
    /// Cumulative probability emitted by the decaying resonators.
    pub leaked: Vec<f64>,
    /// Trace of the density matrix (identically 1 up to the solver error).
    pub trace: Vec<f64>,
}

impl EvolutionTrace {
    /// Named columns in chain order: n_b, n_Q0, n_m, n_Q1, n_w for N=2.
    pub fn columns(&self) -> Vec<(String, &[f64])> {
        let n = self.qubits.len();
        let mut out = Vec::with_capacity(2 * n + 1);
        for k in 0..=n {
            let name = match k {
                0 => "n_b".to_string(),
                k if k == n => "n_w".to_string(),
                _ if n == 2 => "n_m".to_string(),
                k => format!("n_m{k}"),
            };
            out.push((name, self.resonators[k].as_slice()));
            if k < n {
                out.push((format!("n_Q{k}"), self.qubits[k].as_slice()));
            }
        }
        out
    }

    /// Population of the state with every flag raised and no photon left.
    pub fn all_flagged(&self) -> Vec<f64> {
        let n = self.qubits.len();
        self.qubits[n - 1].iter().zip(&self.resonators[n]).map(|(q, w)| q - w).collect()
    }
}

/// Coherent drive of the buffer port: β_in e^{-iδt}, |β_in|² in photons/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drive {
    pub amplitude: Complex64,
    pub delta: f64,
}

/// Stage amplitudes on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeTrace {
    pub time: Vec<f64>,
    /// `amplitudes[i][k]`: stage k at `time[i]`.
    pub amplitudes: Vec<Vec<Complex64>>,
    /// `leaked[i][k]`: probability emitted so far by resonator k.
    pub leaked: Vec<Vec<f64>>,
}

impl AmplitudeTrace {
    /// |ψ_k|² over time.
    pub fn occupancy(&self, k: usize) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a[k].norm_sqr()).collect()
    }

    /// Converts amplitudes to mode occupancies. A photon that left through
    /// resonator k leaves qubits 0..k raised.
    pub fn to_trace(&self) -> EvolutionTrace {
        let m = self.amplitudes.first().map_or(0, |a| a.len());
        let n = m.saturating_sub(1);
        let resonators: Vec<Vec<f64>> = (0..m).map(|k| self.occupancy(k)).collect();
        let qubits = (0..n)
            .map(|j| {
                (0..self.time.len())
                    .map(|i| ((j + 1)..m).map(|k| resonators[k][i] + self.leaked[i][k]).sum())
                    .collect()
            })
            .collect();
        let leaked: Vec<f64> = self.leaked.iter().map(|l| l.iter().sum()).collect();
        let trace = (0..self.time.len())
            .map(|i| {
                let inside: f64 = (0..m).map(|k| resonators[k][i]).sum();
                let ground = 1.0 - self.amplitudes[0].iter().map(|c| c.norm_sqr()).sum::<f64>();
                inside + leaked[i] + ground
            })
            .collect();
        EvolutionTrace { time: self.time.clone(), resonators, qubits, leaked, trace }
    }
}

fn check_grid(chain: &ChainSpec, rates: &[f64], t_max: f64, dt: f64) -> Result<usize> {
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(Error::config("t_max", "must be positive"));
    }
    if !(dt > 0.0) {
        return Err(Error::config("dt", "must be positive"));
    }
    let g = chain.couplings()?;
    let fastest = rates
        .iter()
        .copied()
        .chain(g.iter().map(|x| x.norm()))
        .chain((0..=chain.n()).map(|k| chain.mode_detuning(k).abs()))
        .fold(0.0, f64::max);
    if fastest > 0.0 {
        let required = 0.05 / fastest;
        if dt > required {
            return Err(Error::StepTooCoarse { dt, required });
        }
    }
    Ok((t_max / dt).round() as usize)
}

/// Integrates `sys` over `steps` intervals of `dt`, handing each output
/// state to `record`. Restarts the solver every [`CHUNK`] points so full
/// state histories are never stored.
fn integrate<S, F>(sys: &S, y0: DVector<f64>, dt: f64, steps: usize, mut record: F) -> Result<()>
where
    S: System<f64, DVector<f64>> + Clone,
    F: FnMut(usize, &DVector<f64>),
{
    record(0, &y0);
    let mut y = y0;
    let mut done = 0;
    while done < steps {
        let m = CHUNK.min(steps - done);
        let t0 = done as f64 * dt;
        let t1 = (done + m) as f64 * dt;
        let mut solver = Dopri5::from_param(
            sys.clone(),
            t0,
            t1,
            dt,
            y.clone(),
            TOLERANCE,
            TOLERANCE,
            0.9,
            0.04,
            0.2,
            10.0,
            t1 - t0,
            0.0,
            u32::MAX - 1,
            u32::MAX,
            OutputType::Dense,
        );
        solver.integrate().map_err(|e| match e {
            IntegrationError::StepSizeUnderflow { x } => Error::Integration { t: x, reason: "step size underflow".into() },
            IntegrationError::MaxNumStepReached { x, n_step } => {
                Error::Integration { t: x, reason: format!("more than {n_step} steps") }
            }
            IntegrationError::StiffnessDetected { x } => Error::Integration { t: x, reason: "stiffness detected".into() },
        })?;
        let out = solver.y_out();
        // Dense output starts at t0; keep the m points after it.
        let tail = &out[out.len() - m..];
        for (j, state) in tail.iter().enumerate() {
            record(done + j + 1, state);
        }
        y = tail[m - 1].clone();
        done += m;
    }
    Ok(())
}

#[derive(Clone)]
struct Lindblad {
    dim: usize,
    /// Sparse Hamiltonian (row, col, value).
    h: Vec<(usize, usize, Complex64)>,
    /// (site bit mask, rate) of each decaying resonator.
    decays: Vec<(usize, f64)>,
}

impl Lindblad {
    fn build(chain: &ChainSpec, rates: &[f64]) -> Result<Self> {
        let n = chain.n();
        let sites = 2 * n + 1;
        let dim = 1usize << sites;
        let res = |k: usize| 1usize << (2 * k);
        let qub = |k: usize| 1usize << (2 * k + 1);
        let g = chain.couplings()?;
        let mut h = Vec::new();
        for s in 0..dim {
            let diag: f64 = (0..=n).filter(|&k| s & res(k) != 0).map(|k| chain.mode_detuning(k)).sum();
            if diag != 0.0 {
                h.push((s, s, Complex64::new(diag, 0.0)));
            }
        }
        for (k, gk) in g.iter().enumerate() {
            if gk.norm() == 0.0 {
                continue;
            }
            for s in 0..dim {
                if s & res(k) != 0 && s & qub(k) == 0 && s & res(k + 1) == 0 {
                    let t = (s & !res(k)) | qub(k) | res(k + 1);
                    h.push((t, s, *gk));
                    h.push((s, t, gk.conj()));
                }
            }
        }
        let decays = rates.iter().enumerate().filter(|(_, &r)| r > 0.0).map(|(k, &r)| (res(k), r)).collect();
        Ok(Lindblad { dim, h, decays })
    }

    fn rho_index(&self, a: usize, b: usize) -> usize {
        2 * (a * self.dim + b)
    }
}

impl System<f64, DVector<f64>> for Lindblad {
    fn system(&self, _t: f64, y: &DVector<f64>, dy: &mut DVector<f64>) {
        let d = self.dim;
        let rho = |a: usize, b: usize| {
            let i = 2 * (a * d + b);
            Complex64::new(y[i], y[i + 1])
        };
        let mut out = vec![Complex64::new(0.0, 0.0); d * d];
        let mi = Complex64::new(0.0, -1.0);
        for &(r, c, v) in &self.h {
            // -i H ρ: row r gains v ρ[c, :]
            for b in 0..d {
                out[r * d + b] += mi * v * rho(c, b);
            }
            // +i ρ H: column c gains ρ[:, r] v
            for a in 0..d {
                out[a * d + c] -= mi * rho(a, r) * v;
            }
        }
        let mut leak = 0.0;
        for &(mask, gamma) in &self.decays {
            for a in 0..d {
                let na = (a & mask != 0) as u8 as f64;
                for b in 0..d {
                    let nb = (b & mask != 0) as u8 as f64;
                    let mut v = -0.5 * gamma * (na + nb) * rho(a, b);
                    if a & mask == 0 && b & mask == 0 {
                        v += gamma * rho(a | mask, b | mask);
                    }
                    out[a * d + b] += v;
                }
                if a & mask != 0 {
                    leak += gamma * rho(a, a).re;
                }
            }
        }
        for (i, v) in out.iter().enumerate() {
            dy[2 * i] = v.re;
            dy[2 * i + 1] = v.im;
        }
        dy[2 * d * d] = leak;
    }
}

/// Density-matrix evolution of the two-level-truncated chain.
pub fn evolve_master_equation(
    chain: &ChainSpec,
    initial: &SubspaceState,
    t_max: f64,
    dt: f64,
    dissipation: Dissipation,
) -> Result<EvolutionTrace> {
    let n = chain.n();
    initial.validate(n)?;
    let rates = dissipation.rates(chain);
    let steps = check_grid(chain, &rates, t_max, dt)?;
    let sys = Lindblad::build(chain, &rates)?;
    let d = sys.dim;

    // |ψ⟩ = Σ c_k |stage k⟩ + sqrt(1 - Σ|c_k|²) |ground⟩
    let mut psi = vec![Complex64::new(0.0, 0.0); d];
    let mut stage_index = 1usize; // resonator 0 occupied
    for k in 0..=n {
        psi[stage_index] = initial.stages[k];
        if k < n {
            stage_index = (stage_index & !(1 << (2 * k))) | (1 << (2 * k + 1)) | (1 << (2 * k + 2));
        }
    }
    let norm: f64 = initial.stages.iter().map(|c| c.norm_sqr()).sum();
    psi[0] = Complex64::new((1.0 - norm).max(0.0).sqrt(), 0.0);
    let mut y0 = DVector::zeros(2 * d * d + 1);
    for a in 0..d {
        for b in 0..d {
            let v = psi[a] * psi[b].conj();
            let i = sys.rho_index(a, b);
            y0[i] = v.re;
            y0[i + 1] = v.im;
        }
    }

    let mut trace = EvolutionTrace {
        time: Vec::with_capacity(steps + 1),
        resonators: vec![Vec::with_capacity(steps + 1); n + 1],
        qubits: vec![Vec::with_capacity(steps + 1); n],
        leaked: Vec::with_capacity(steps + 1),
        trace: Vec::with_capacity(steps + 1),
    };
    integrate(&sys, y0, dt, steps, |i, y| {
        trace.time.push(initial.time + i as f64 * dt);
        let pop = |a: usize| y[2 * (a * d + a)];
        for k in 0..=n {
            trace.resonators[k].push((0..d).filter(|a| a & (1 << (2 * k)) != 0).map(pop).sum());
        }
        for k in 0..n {
            trace.qubits[k].push((0..d).filter(|a| a & (1 << (2 * k + 1)) != 0).map(pop).sum());
        }
        trace.leaked.push(y[2 * d * d]);
        trace.trace.push((0..d).map(pop).sum());
    })?;
    Ok(trace)
}

#[derive(Clone)]
struct Linear {
    /// Diagonal -iΔ_k - κ_k/2 with active decays only.
    diag: Vec<Complex64>,
    g: Vec<Complex64>,
    rates: Vec<f64>,
    drive: Option<(Complex64, f64)>,
}

impl System<f64, DVector<f64>> for Linear {
    fn system(&self, t: f64, y: &DVector<f64>, dy: &mut DVector<f64>) {
        let m = self.diag.len();
        let c = |k: usize| Complex64::new(y[2 * k], y[2 * k + 1]);
        let mi = Complex64::new(0.0, -1.0);
        for k in 0..m {
            let mut v = self.diag[k] * c(k);
            if k > 0 {
                v += mi * self.g[k - 1] * c(k - 1);
            }
            if k + 1 < m {
                v += mi * self.g[k].conj() * c(k + 1);
            }
            if k == 0 {
                if let Some((amp, delta)) = self.drive {
                    v += amp * Complex64::from_polar(1.0, -delta * t);
                }
            }
            dy[2 * k] = v.re;
            dy[2 * k + 1] = v.im;
            dy[2 * m + k] = self.rates[k] * c(k).norm_sqr();
        }
    }
}

/// Integrates the stage amplitudes
/// dψ_k/dt = (-iΔ_k - κ_k/2)ψ_k - i g_{k-1} ψ_{k-1} - i g_k* ψ_{k+1}
/// (+ sqrt(κ_0,ext) β_in e^{-iδt} on the buffer when driven).
pub fn evolve_linear_model(
    chain: &ChainSpec,
    initial: &[Complex64],
    t_max: f64,
    dt: f64,
    drive: Option<Drive>,
    dissipation: Dissipation,
) -> Result<AmplitudeTrace> {
    let n = chain.n();
    if initial.len() != n + 1 {
        return Err(Error::config("initial", format!("need {} amplitudes", n + 1)));
    }
    let mut rates = dissipation.rates(chain);
    if drive.is_some() && rates[0] == 0.0 {
        // Driving through the port implies the port is open.
        rates[0] = chain.kappa(0);
    }
    let steps = check_grid(chain, &rates, t_max, dt)?;
    let sys = Linear {
        diag: (0..=n)
            .map(|k| Complex64::new(-rates[k] / 2.0, -chain.mode_detuning(k)))
            .collect(),
        g: chain.couplings()?,
        rates: rates.clone(),
        drive: drive.map(|d| (d.amplitude * chain.modes[0].kappa_ext.sqrt(), d.delta)),
    };
    let m = n + 1;
    let mut y0 = DVector::zeros(3 * m);
    for (k, c) in initial.iter().enumerate() {
        y0[2 * k] = c.re;
        y0[2 * k + 1] = c.im;
    }
    let mut out = AmplitudeTrace {
        time: Vec::with_capacity(steps + 1),
        amplitudes: Vec::with_capacity(steps + 1),
        leaked: Vec::with_capacity(steps + 1),
    };
    integrate(&sys, y0, dt, steps, |i, y| {
        out.time.push(i as f64 * dt);
        out.amplitudes.push((0..m).map(|k| Complex64::new(y[2 * k], y[2 * k + 1])).collect());
        out.leaked.push((0..m).map(|k| y[2 * m + k]).collect());
    })?;
    Ok(out)
}

/// Steady-state transmission |ν|²κ_N,ext/|β_in|² of the driven linear model
/// after integrating for `t_settle`.
pub fn driven_transmission(chain: &ChainSpec, delta: f64, t_settle: f64) -> Result<f64> {
    let rates = Dissipation::ALL.rates(chain);
    let fastest = rates
        .iter()
        .copied()
        .chain(chain.couplings()?.iter().map(|g| g.norm()))
        .chain((0..=chain.n()).map(|k| chain.mode_detuning(k).abs()))
        .chain(std::iter::once(delta.abs()))
        .fold(0.0, f64::max);
    let dt_max = 0.05 / fastest;
    let steps = (t_settle / dt_max).ceil().max(1.0);
    let beta = Complex64::new(1.0, 0.0);
    let tr = evolve_linear_model(
        chain,
        &vec![Complex64::new(0.0, 0.0); chain.n() + 1],
        t_settle,
        t_settle / steps,
        Some(Drive { amplitude: beta, delta }),
        Dissipation::ALL,
    )?;
    let last = tr.amplitudes.last().expect("trace has at least one point");
    Ok(last[chain.n()].norm_sqr() * chain.modes[chain.n()].kappa_ext / beta.norm_sqr())
}

/// Largest drop below a running maximum.
pub fn max_drawdown(series: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &v in series {
        peak = peak.max(v);
        worst = worst.max(peak - v);
    }
    worst
}

/// First time the series reaches half of its maximum (linear interpolation).
pub fn half_max_time(time: &[f64], series: &[f64]) -> Option<f64> {
    let max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return None;
    }
    let half = 0.5 * max;
    let i = series.iter().position(|&v| v >= half)?;
    if i == 0 {
        return Some(time[0]);
    }
    let (t0, t1, v0, v1) = (time[i - 1], time[i], series[i - 1], series[i]);
    Some(t0 + (half - v0) / (v1 - v0) * (t1 - t0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn chain(coop: f64) -> ChainSpec {
        let kw = 1.9e7;
        let kb = 0.1 * kw;
        let g1 = kb;
        let g0 = (coop * kb / kw).sqrt() * g1;
        ChainSpec::from_rates(&[kb, 0.0, kw], &[0.0, 1e3, 0.0], &[c(g0), c(g1)]).unwrap()
    }

    #[test]
    fn vacuum_stays_empty() {
        let ch = chain(1.0);
        let tr = evolve_master_equation(&ch, &SubspaceState::vacuum(2), 1e-7, 1e-9, Dissipation::WASTE_ONLY).unwrap();
        for (_, col) in tr.columns() {
            assert!(col.iter().all(|&v| v.abs() < 1e-14));
        }
        let lin = evolve_linear_model(&ch, &[c(0.0); 3], 1e-7, 1e-9, None, Dissipation::WASTE_ONLY).unwrap();
        assert!(lin.amplitudes.iter().flatten().all(|a| a.norm() == 0.0));
    }

    #[test]
    fn coarse_step_is_refused() {
        let ch = chain(1.0);
        let err = evolve_master_equation(&ch, &SubspaceState::photon_in_buffer(2), 1e-6, 1e-8, Dissipation::WASTE_ONLY)
            .unwrap_err();
        assert!(matches!(err, Error::StepTooCoarse { .. }));
    }

    #[test]
    fn master_equation_matches_linear_model() {
        let ch = chain(1.0);
        let dt = 0.05 / 1.9e7;
        let t_max = 400.0 * dt;
        let me = evolve_master_equation(&ch, &SubspaceState::photon_in_buffer(2), t_max, dt, Dissipation::WASTE_ONLY).unwrap();
        let lin = evolve_linear_model(&ch, &[c(1.0), c(0.0), c(0.0)], t_max, dt, None, Dissipation::WASTE_ONLY)
            .unwrap()
            .to_trace();
        assert_eq!(me.time.len(), lin.time.len());
        for k in 0..3 {
            for (a, b) in me.resonators[k].iter().zip(&lin.resonators[k]) {
                assert!((a - b).abs() < 1e-8);
            }
        }
        for k in 0..2 {
            for (a, b) in me.qubits[k].iter().zip(&lin.qubits[k]) {
                assert!((a - b).abs() < 1e-8);
            }
        }
        for i in 0..me.time.len() {
            let inside: f64 = (0..3).map(|k| me.resonators[k][i]).sum();
            assert!((inside + me.leaked[i] - 1.0).abs() < 1e-8);
            assert!((me.trace[i] - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn driven_steady_state_matches_scattering() {
        let ch = ChainSpec::from_rates(&[5.8e6, 0.0, 3.36e6], &[0.0, 3.7e5, 0.0], &[c(-8.17e5), c(-7.85e5)]).unwrap();
        let s = crate::scattering::transmission(&ch, 2e5).unwrap();
        let d = driven_transmission(&ch, 2e5, 5e-5).unwrap();
        assert!((d / s - 1.0).abs() < 1e-6, "{d} vs {s}");
    }

    #[test]
    fn drawdown_and_half_max() {
        assert_eq!(max_drawdown(&[0.0, 1.0, 0.5, 2.0, 1.9]), 0.5);
        assert_eq!(max_drawdown(&[0.0, 0.1, 0.2]), 0.0);
        let t = [0.0, 1.0, 2.0];
        assert_eq!(half_max_time(&t, &[0.0, 0.5, 1.0]), Some(1.0));
        assert_eq!(half_max_time(&t, &[0.0, 0.0, 0.0]), None);
    }
}
