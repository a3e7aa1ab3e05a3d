//! Least-squares calibration: AC-Stark input-power calibration, exponential
//! decay, temperature-sweep noise models and the efficiency co-fit of
//! (g_{4,0}, g_{4,1}, κ_m).
//!
//! All fits share [`fit`]: Nelder-Mead in bounds-normalised coordinates,
//! restarted from perturbed copies of the best point, followed by a seeded
//! bootstrap over resampled data for the standard errors.

use argmin::core::{CostFunction, Executor, State, TerminationReason};
use argmin::solver::neldermead::NelderMead;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{eta_q, thermal_occupation, TemperatureModel};
use crate::model::ChainSpec;
use crate::scattering::filtered_flag_probabilities;
use crate::units::HBAR;

/// Complex AC-Stark shift δω + iδγ = -4χ|ε_d|²/((κ_b + iχ)² + 4Δ_b²).
pub fn ac_stark_model(chi: f64, kappa_b: f64, eps_d: f64, delta_b: f64) -> Complex64 {
    let den = Complex64::new(kappa_b, chi).powi(2) + 4.0 * delta_b * delta_b;
    -4.0 * chi * eps_d * eps_d / den
}

/// Coherent buffer amplitudes α_{g/e} = ε_d/(κ_b/2 + i(Δ_b ∓ χ/2)) for the
/// qubit in g and e.
pub fn buffer_amplitudes(chi: f64, kappa_b: f64, eps_d: f64, delta_b: f64) -> (Complex64, Complex64) {
    let a = |s: f64| Complex64::new(eps_d, 0.0) / Complex64::new(kappa_b / 2.0, delta_b + s * chi / 2.0);
    (a(-1.0), a(1.0))
}

/// Drive amplitude converted to incoming photon flux and power at ω_b.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriveCalibration {
    /// Photons per second.
    pub flux: f64,
    /// Watts.
    pub power: f64,
}

/// |ε_d|²/(κ_b - κ_b,int) photons/s, and the power flux·ħω_b.
pub fn photon_flux_from_drive(eps_d: f64, kappa_b: f64, kappa_b_int: f64, omega_b: f64) -> Result<DriveCalibration> {
    if !(kappa_b_int >= 0.0) {
        return Err(Error::config("kappa_b_int", "must be non-negative"));
    }
    if !(kappa_b > kappa_b_int) {
        return Err(Error::config("kappa_b", "must exceed the internal loss rate"));
    }
    let flux = eps_d * eps_d / (kappa_b - kappa_b_int);
    Ok(DriveCalibration { flux, power: flux * HBAR * omega_b })
}

/// A fitted parameter with its allowed range.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub unit: String,
    pub lower: f64,
    pub upper: f64,
}

impl Parameter {
    pub fn new(name: &str, unit: &str, lower: f64, upper: f64) -> Self {
        Parameter { name: name.into(), unit: unit.into(), lower, upper }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Restarts after the first simplex run.
    pub restarts: usize,
    /// Bootstrap resamples; 0 disables the standard errors.
    pub bootstrap: usize,
    /// Iteration cap of each simplex run.
    pub max_iters: u64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { restarts: 3, bootstrap: 200, max_iters: 3000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub name: String,
    pub unit: String,
    pub value: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub parameters: Vec<Estimate>,
    /// Residual sum of squares at the estimate.
    pub rss: f64,
    pub converged: bool,
    pub iterations: u64,
    pub bootstrap_samples: usize,
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn values(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.value).collect()
    }

    pub fn std_errs(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.std_err).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Estimate> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

/// Residual function: appends the residuals of one datum for parameters `p`.
pub type Residuals<'a, D> = dyn Fn(&[f64], &D, &mut Vec<f64>) -> Result<()> + Sync + 'a;
/// Redraws the uncertain inputs of one datum for a bootstrap resample.
pub type Perturb<'a, D> = dyn Fn(&D, &mut ChaCha8Rng) -> D + Sync + 'a;

pub struct Problem<'a, D> {
    pub parameters: Vec<Parameter>,
    pub data: &'a [D],
    pub residuals: &'a Residuals<'a, D>,
    pub perturb: Option<&'a Perturb<'a, D>>,
}

impl<D: Sync> Problem<'_, D> {
    /// Residual sum of squares. Data are evaluated in parallel and summed in
    /// order, so the result does not depend on the thread count.
    pub fn rss(&self, p: &[f64], data: &[D]) -> Result<f64> {
        let parts = data
            .par_iter()
            .with_min_len(4)
            .map(|d| {
                let mut r = Vec::new();
                (self.residuals)(p, d, &mut r)?;
                Ok(r.iter().map(|x| x * x).sum::<f64>())
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(parts.iter().sum())
    }

    fn to_params(&self, u: &[f64]) -> Vec<f64> {
        self.parameters
            .iter()
            .zip(u)
            .map(|(b, &x)| b.lower + (b.upper - b.lower) * x.clamp(0.0, 1.0))
            .collect()
    }

    fn to_unit(&self, p: &[f64]) -> Vec<f64> {
        self.parameters.iter().zip(p).map(|(b, &x)| (x - b.lower) / (b.upper - b.lower)).collect()
    }
}

struct Cost<'p, 'a, D> {
    problem: &'p Problem<'a, D>,
    data: &'p [D],
    scale: f64,
}

impl<D: Sync> CostFunction for Cost<'_, '_, D> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, u: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let outside: f64 = u.iter().map(|&x| (x - x.clamp(0.0, 1.0)).powi(2)).sum();
        let p = self.problem.to_params(u);
        let rss = self.problem.rss(&p, self.data).unwrap_or(f64::MAX / 4.0);
        let c = rss / self.scale + 1e6 * outside;
        Ok(if c.is_finite() { c } else { f64::MAX / 4.0 })
    }
}

struct RunResult {
    u: Vec<f64>,
    cost: f64,
    iters: u64,
    converged: bool,
}

fn simplex_run<D: Sync>(problem: &Problem<D>, data: &[D], start: &[f64], scale: f64, max_iters: u64) -> Result<RunResult> {
    let n = start.len();
    let mut simplex = vec![start.to_vec()];
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += if v[i] > 0.9 { -0.05 } else { 0.05 };
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(SD_TOLERANCE)
        .map_err(|e| Error::Fit(e.to_string()))?;
    let res = Executor::new(Cost { problem, data, scale }, solver)
        .configure(|s| s.max_iters(max_iters))
        .timer(false)
        .run()
        .map_err(|e| Error::Fit(e.to_string()))?;
    let state = res.state();
    let u = state.get_best_param().cloned().unwrap_or_else(|| start.to_vec());
    Ok(RunResult {
        cost: state.get_best_cost(),
        iters: state.get_iter(),
        converged: matches!(state.get_termination_reason(), Some(TerminationReason::SolverConverged)),
        u,
    })
}

/// Spread of simplex costs at which a run stops. Costs are divided by the
/// incumbent residual sum, so this is relative to the current best fit.
const SD_TOLERANCE: f64 = 1e-12;

/// Best of an initial run and `restarts` runs from perturbed copies of the
/// incumbent, each restart rescaled by the incumbent residual sum.
/// Converged when the simplex met its tolerance or the last restart could
/// not improve the incumbent by more than 1e-9 relative.
fn minimize<D: Sync>(problem: &Problem<D>, data: &[D], start: &[f64], restarts: usize, max_iters: u64, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, f64, u64, bool)> {
    let u0 = problem.to_unit(start);
    let c0 = problem.rss(start, data).unwrap_or(f64::INFINITY);
    let mut scale = if c0.is_finite() && c0 > 0.0 { c0 } else { 1.0 };
    let mut best = simplex_run(problem, data, &u0, scale, max_iters)?;
    let mut best_rss = best.cost * scale;
    let mut iters = best.iters;
    let mut stalled = false;
    for _ in 0..restarts {
        if best_rss > 0.0 && best_rss.is_finite() {
            scale = best_rss;
        }
        let start: Vec<f64> = best.u.iter().map(|&x| (x + 0.02 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0)).collect();
        let run = simplex_run(problem, data, &start, scale, max_iters)?;
        let run_rss = run.cost * scale;
        iters += run.iters;
        stalled = best_rss - run_rss <= 1e-9 * best_rss.abs() + 1e-300;
        if run_rss < best_rss {
            best = run;
            best_rss = run_rss;
        }
    }
    let converged = best.converged || stalled;
    let p = problem.to_params(&best.u);
    let rss = problem.rss(&p, data)?;
    Ok((p, rss, iters, converged))
}

/// Least-squares fit with restarts and bootstrap standard errors.
pub fn fit<D: Clone + Sync>(problem: &Problem<D>, guess: &[f64], options: &FitOptions) -> Result<FitReport> {
    let n = problem.parameters.len();
    if guess.len() != n {
        return Err(Error::config("guess", format!("expected {n} values")));
    }
    for (b, &g) in problem.parameters.iter().zip(guess) {
        if !(b.lower < b.upper) {
            return Err(Error::config(&b.name, "empty bounds"));
        }
        if !(g.is_finite() && g >= b.lower && g <= b.upper) {
            return Err(Error::config(&b.name, "initial guess must be finite and inside the bounds"));
        }
    }
    let mut count = Vec::new();
    for d in problem.data {
        (problem.residuals)(guess, d, &mut count)?;
    }
    if count.len() < n {
        return Err(Error::config("data", "fewer residuals than parameters"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let (best, rss, iterations, converged) = minimize(problem, problem.data, guess, options.restarts, options.max_iters, &mut rng)?;

    let samples: Vec<Vec<f64>> = (0..options.bootstrap)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            rng.set_stream(b as u64 + 1);
            let m = problem.data.len();
            let data: Vec<D> = (0..m)
                .map(|_| {
                    let d = &problem.data[rng.random_range(0..m)];
                    match problem.perturb {
                        Some(f) => f(d, &mut rng),
                        None => d.clone(),
                    }
                })
                .collect();
            minimize(problem, &data, &best, 0, options.max_iters, &mut rng).ok().map(|r| r.0)
        })
        .collect();

    let mut warnings = Vec::new();
    if samples.len() < options.bootstrap {
        warnings.push(format!("{} bootstrap resamples failed", options.bootstrap - samples.len()));
    }
    let parameters: Vec<Estimate> = problem
        .parameters
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let std_err = if samples.len() > 1 {
                let mean = samples.iter().map(|s| s[i]).sum::<f64>() / samples.len() as f64;
                (samples.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64).sqrt()
            } else {
                f64::NAN
            };
            Estimate { name: b.name.clone(), unit: b.unit.clone(), value: best[i], std_err }
        })
        .collect();
    for p in &parameters {
        if p.std_err > 0.5 * p.value.abs() {
            warnings.push(format!("{} is poorly identified: bootstrap spread exceeds half the estimate", p.name));
        }
    }
    if !converged {
        warnings.push("simplex did not converge; reporting best point found".into());
    }
    Ok(FitReport { parameters, rss, converged, iterations, bootstrap_samples: samples.len(), warnings })
}

/// One point of a Ramsey AC-Stark measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StarkDataPoint {
    /// Probe detuning from the buffer [rad/s].
    pub delta_b: f64,
    /// Frequency shift [rad/s].
    pub d_omega: f64,
    /// Dephasing rate [1/s].
    pub d_gamma: f64,
}

/// Initial values for the Stark fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StarkGuess {
    pub chi: f64,
    pub kappa_b: f64,
    pub eps_d: f64,
    pub delta_offset: f64,
}

/// Largest excursion allowed for the detuning offset around its guess.
pub const STARK_OFFSET_RANGE: f64 = 2.0 * std::f64::consts::PI * 20e3;

/// Fits (χ, κ_b, ε_d, Δ_offset) with Δ_b = probe detuning + Δ_offset.
/// χ, κ_b and ε_d may move by a factor of 3 around the guess; the offset is
/// held within ±[`STARK_OFFSET_RANGE`].
pub fn fit_stark(data: &[StarkDataPoint], guess: StarkGuess, options: &FitOptions) -> Result<FitReport> {
    if data.iter().any(|d| !(d.delta_b.is_finite() && d.d_omega.is_finite() && d.d_gamma.is_finite())) {
        return Err(Error::config("data", "non-finite Stark point"));
    }
    if !(guess.kappa_b > 0.0 && guess.eps_d > 0.0 && guess.chi != 0.0) {
        return Err(Error::config("guess", "need kappa_b > 0, eps_d > 0 and chi != 0"));
    }
    let range = |x: f64| if x > 0.0 { (x / 3.0, x * 3.0) } else { (x * 3.0, x / 3.0) };
    let (c0, c1) = range(guess.chi);
    let (k0, k1) = range(guess.kappa_b);
    let (e0, e1) = range(guess.eps_d);
    let params = vec![
        Parameter::new("chi", "rad/s", c0, c1),
        Parameter::new("kappa_b", "1/s", k0, k1),
        Parameter::new("eps_d", "rad/s", e0, e1),
        Parameter::new("delta_offset", "rad/s", guess.delta_offset - STARK_OFFSET_RANGE, guess.delta_offset + STARK_OFFSET_RANGE),
    ];
    let residuals = |p: &[f64], d: &StarkDataPoint, out: &mut Vec<f64>| {
        let m = ac_stark_model(p[0], p[1], p[2], d.delta_b + p[3]);
        out.push(m.re - d.d_omega);
        out.push(m.im - d.d_gamma);
        Ok(())
    };
    let problem = Problem { parameters: params, data, residuals: &residuals, perturb: None };
    fit(&problem, &[guess.chi, guess.kappa_b, guess.eps_d, guess.delta_offset], options)
}

/// Fits y = A·exp(-t/T1) + B. The guess is taken from the data.
pub fn fit_exponential_decay(t: &[f64], y: &[f64], options: &FitOptions) -> Result<FitReport> {
    if t.len() != y.len() || t.len() < 3 {
        return Err(Error::config("data", "need at least 3 (t, y) pairs of equal length"));
    }
    if t.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::config("data", "non-finite value"));
    }
    let (t_min, t_max) = t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = t_max - t_min;
    if !(span > 0.0) {
        return Err(Error::config("t", "times must not all coincide"));
    }
    let (y_min, y_max) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let range = (y_max - y_min).max(f64::MIN_POSITIVE);
    let first = y[t.iter().position(|&x| x == t_min).unwrap_or(0)];
    let last = y[t.iter().position(|&x| x == t_max).unwrap_or(0)];
    let a0 = first - last;
    let level = last + a0 / std::f64::consts::E;
    let t1_0 = t
        .iter()
        .zip(y)
        .filter(|(_, &v)| (v - level).signum() == (last - level).signum() || v == level)
        .map(|(&x, _)| x - t_min)
        .fold(f64::INFINITY, f64::min)
        .clamp(span / 50.0, span);
    let params = vec![
        Parameter::new("A", "", -3.0 * range, 3.0 * range),
        Parameter::new("T1", "s", span / 1000.0, 10.0 * span),
        Parameter::new("B", "", y_min - range, y_max + range),
    ];
    let data: Vec<(f64, f64)> = t.iter().map(|&x| x - t_min).zip(y.iter().copied()).collect();
    let residuals = |p: &[f64], d: &(f64, f64), out: &mut Vec<f64>| {
        out.push(p[0] * (-d.0 / p[1]).exp() + p[2] - d.1);
        Ok(())
    };
    let problem = Problem { parameters: params, data: &data, residuals: &residuals, perturb: None };
    let mut report = fit(&problem, &[a0.clamp(-3.0 * range, 3.0 * range), t1_0, last], options)?;
    // Amplitude refers to t = 0 rather than the first sample.
    if t_min != 0.0 {
        let scale = (t_min / report.parameters[1].value).exp();
        report.parameters[0].value *= scale;
        report.parameters[0].std_err *= scale;
    }
    Ok(report)
}

/// Count rate measured at one temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperaturePoint {
    pub temperature: f64,
    pub rate: f64,
    /// Standard deviation of `rate`; unweighted when absent.
    pub sigma: Option<f64>,
}

/// Which temperature model to fit; K and c are the free parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TemperatureFamily {
    /// K·n̄(T, f) + c.
    Single { frequency: f64 },
    /// K·n̄(T, f0)·n̄(T, f1) + c.
    Pair { f0: f64, f1: f64 },
}

impl TemperatureFamily {
    pub fn model(&self, k: f64, c: f64) -> TemperatureModel {
        match *self {
            TemperatureFamily::Single { frequency } => TemperatureModel::Single { k, c, frequency },
            TemperatureFamily::Pair { f0, f1 } => TemperatureModel::Pair { k, c, f0, f1 },
        }
    }

    fn regressor(&self, temperature: f64) -> f64 {
        match *self {
            TemperatureFamily::Single { frequency } => thermal_occupation(temperature, frequency),
            TemperatureFamily::Pair { f0, f1 } => thermal_occupation(temperature, f0) * thermal_occupation(temperature, f1),
        }
    }
}

/// Fits (K, c). The model is linear in both, so a weighted linear solve
/// provides the starting point.
pub fn fit_temperature(data: &[TemperaturePoint], family: TemperatureFamily, options: &FitOptions) -> Result<FitReport> {
    if data.len() < 2 {
        return Err(Error::config("data", "need at least 2 temperatures"));
    }
    if data.iter().any(|d| !(d.temperature > 0.0 && d.rate.is_finite()) || d.sigma.is_some_and(|s| !(s > 0.0))) {
        return Err(Error::config("data", "temperatures and sigmas must be positive, rates finite"));
    }
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for d in data {
        let w = d.sigma.map_or(1.0, |s| 1.0 / (s * s));
        let x = family.regressor(d.temperature);
        s += w;
        sx += w * x;
        sy += w * d.rate;
        sxx += w * x * x;
        sxy += w * x * d.rate;
    }
    let det = s * sxx - sx * sx;
    if !(det > 0.0) {
        return Err(Error::Fit("temperatures do not separate the thermal term".into()));
    }
    let k0 = (s * sxy - sx * sy) / det;
    let c0 = (sxx * sy - sx * sxy) / det;
    let kb = k0.abs().max(1.0);
    let cb = c0.abs().max(1e-3) + sy.abs() / s;
    let params = vec![
        Parameter::new("K", "1/s", k0 - 2.0 * kb, k0 + 2.0 * kb),
        Parameter::new("c", "1/s", c0 - 2.0 * cb, c0 + 2.0 * cb),
    ];
    let residuals = |p: &[f64], d: &TemperaturePoint, out: &mut Vec<f64>| {
        let r = family.model(p[0], p[1]).rate(d.temperature) - d.rate;
        out.push(r / d.sigma.unwrap_or(1.0));
        Ok(())
    };
    let problem = Problem { parameters: params, data, residuals: &residuals, perturb: None };
    fit(&problem, &[k0, c0], options)
}

/// Measured efficiencies at one relative pump amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CofitPoint {
    pub amplitude: f64,
    pub eta_q0: f64,
    pub eta_q1: f64,
    pub eta_cascade: f64,
    /// Tabulated relaxation times under this pump amplitude [s].
    pub t1_q0: f64,
    pub t1_q1: f64,
}

/// Quantities held fixed in the co-fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CofitFixed {
    pub t_d: f64,
    pub eta_cycle: f64,
    pub f_ro: [f64; 2],
    pub kappa_b: f64,
    pub kappa_w: f64,
    /// Relative Gaussian spread of the tabulated T1 values.
    pub t1_spread: f64,
}

/// Forward model of the three efficiency curves at amplitude `a` with
/// couplings a·g_{4,k} and memory loss κ_m:
/// η_Q0 = P0 η_q0 η_cycle F0, η_Q1 = P1 η_q1 η_cycle F1 and
/// η_casc = P1 η_cycle η_q0 η_q1 F0 F1, where P_j are the pulse-filtered
/// flag probabilities (P0 counts both the memory-loss and waste paths).
pub fn cofit_forward(g4: [f64; 2], kappa_m: f64, fixed: &CofitFixed, point: &CofitPoint) -> Result<[f64; 3]> {
    let g = [Complex64::new(point.amplitude * g4[0], 0.0), Complex64::new(point.amplitude * g4[1], 0.0)];
    let chain = ChainSpec::from_rates(&[fixed.kappa_b, 0.0, fixed.kappa_w], &[0.0, kappa_m, 0.0], &g)?;
    let p = filtered_flag_probabilities(&chain, fixed.t_d)?;
    let q0 = eta_q(fixed.t_d, point.t1_q0);
    let q1 = eta_q(fixed.t_d, point.t1_q1);
    let [f0, f1] = fixed.f_ro;
    Ok([
        p[0] * q0 * fixed.eta_cycle * f0,
        p[1] * q1 * fixed.eta_cycle * f1,
        p[1] * fixed.eta_cycle * q0 * q1 * f0 * f1,
    ])
}

/// Co-fit of (g_{4,0}, g_{4,1}, κ_m) to per-qubit and cascaded efficiency
/// curves. Bootstrap resamples also redraw T1 with the configured spread.
pub fn efficiency_cofit(data: &[CofitPoint], fixed: &CofitFixed, guess: [f64; 3], options: &FitOptions) -> Result<FitReport> {
    if data.len() < 5 {
        return Err(Error::config("data", "need at least 5 amplitude points"));
    }
    if !(fixed.t_d > 0.0 && fixed.kappa_b > 0.0 && fixed.kappa_w > 0.0 && fixed.t1_spread >= 0.0) {
        return Err(Error::config("fixed", "t_d, kappa_b, kappa_w must be positive"));
    }
    if data.iter().any(|d| !(d.t1_q0 > 0.0 && d.t1_q1 > 0.0 && d.amplitude.is_finite())) {
        return Err(Error::config("data", "T1 values must be positive"));
    }
    let bound = |g: f64| {
        let m = 5.0 * g.abs().max(1.0);
        if g < 0.0 {
            (-m, -1e-3 * m)
        } else {
            (1e-3 * m, m)
        }
    };
    let (a0, a1) = bound(guess[0]);
    let (b0, b1) = bound(guess[1]);
    let km_max = 10.0 * guess[2].max(fixed.kappa_b / 10.0);
    let params = vec![
        Parameter::new("g4_0", "rad/s", a0, a1),
        Parameter::new("g4_1", "rad/s", b0, b1),
        Parameter::new("kappa_m", "1/s", 0.0, km_max),
    ];
    let residuals = |p: &[f64], d: &CofitPoint, out: &mut Vec<f64>| {
        let m = cofit_forward([p[0], p[1]], p[2], fixed, d)?;
        out.push(m[0] - d.eta_q0);
        out.push(m[1] - d.eta_q1);
        out.push(m[2] - d.eta_cascade);
        Ok(())
    };
    let spread = fixed.t1_spread;
    let perturb = move |d: &CofitPoint, rng: &mut ChaCha8Rng| {
        let draw = |t1: f64, rng: &mut ChaCha8Rng| {
            let n = Normal::new(t1, spread * t1).expect("finite spread");
            loop {
                let v = n.sample(rng);
                if v > 0.0 {
                    return v;
                }
            }
        };
        CofitPoint { t1_q0: draw(d.t1_q0, rng), t1_q1: draw(d.t1_q1, rng), ..*d }
    };
    let problem = Problem {
        parameters: params,
        data,
        residuals: &residuals,
        perturb: if spread > 0.0 { Some(&perturb) } else { None },
    };
    fit(&problem, &[guess[0], guess[1], guess[2].clamp(0.0, km_max)], options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scattering::{chain_memory_efficiency, cooperativity, eta_4wm};
    use crate::units::hz;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn quick(bootstrap: usize) -> FitOptions {
        FitOptions { bootstrap, ..FitOptions::default() }
    }

    #[test]
    fn stark_vanishes_without_drive() {
        assert_eq!(ac_stark_model(-1e7, 5.8e6, 0.0, 1e5), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn stark_dephasing_peaks_near_resonance() {
        let (chi, kb, eps) = (-hz(1.784e6), 5.8e6, hz(92.6e3));
        let grid: Vec<f64> = (-400..=400).map(|i| hz(5e3) * i as f64).collect();
        let gamma: Vec<f64> = grid.iter().map(|&d| ac_stark_model(chi, kb, eps, d).im).collect();
        assert!(gamma.iter().all(|&g| g > 0.0));
        let imax = gamma.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
        assert!(grid[imax].abs() < chi.abs());
        // Shift and dephasing are both set by the same product of amplitudes.
        for &d in &grid {
            let (ag, ae) = buffer_amplitudes(chi, kb, eps, d);
            let prod = -chi * ag.conj() * ae;
            assert!((prod - ac_stark_model(chi, kb, eps, d)).norm() <= 1e-12 * prod.norm());
        }
    }

    #[test]
    fn drive_to_flux() {
        let c = photon_flux_from_drive(hz(92.6e3), 5.8e6, 0.0, hz(8.798e9)).unwrap();
        assert!((c.flux / 58_522.0 - 1.0).abs() < 0.02);
        assert!((c.power / 341e-21 - 1.0).abs() < 0.02);
        let d = photon_flux_from_drive(2.0 * hz(92.6e3), 5.8e6, 0.0, hz(8.798e9)).unwrap();
        assert!((d.flux / c.flux - 4.0).abs() < 1e-12);
        assert_eq!(photon_flux_from_drive(0.0, 5.8e6, 0.0, 1.0).unwrap().flux, 0.0);
        assert!(photon_flux_from_drive(1.0, 5.8e6, 5.8e6, 1.0).is_err());
    }

    #[test]
    fn stark_fit_recovers_exact_data() {
        let truth = [-hz(1.784e6), 5.8e6, hz(92.6e3), hz(26e3)];
        let data: Vec<StarkDataPoint> = (-40..=40)
            .map(|i| {
                let x = hz(25e3) * i as f64;
                let m = ac_stark_model(truth[0], truth[1], truth[2], x + truth[3]);
                StarkDataPoint { delta_b: x, d_omega: m.re, d_gamma: m.im }
            })
            .collect();
        let guess = StarkGuess { chi: -hz(1.5e6), kappa_b: 5e6, eps_d: hz(80e3), delta_offset: hz(20e3) };
        let r = fit_stark(&data, guess, &quick(0)).unwrap();
        for (v, t) in r.values().iter().zip(truth) {
            assert!((v / t - 1.0).abs() < 1e-6, "{v} vs {t}");
        }
    }

    #[test]
    fn decay_fit_recovers_exact_data() {
        let t: Vec<f64> = (0..60).map(|i| 1e-6 * i as f64).collect();
        let y: Vec<f64> = t.iter().map(|&x| 0.8 * (-x / 14.4e-6).exp() + 0.05).collect();
        let r = fit_exponential_decay(&t, &y, &quick(0)).unwrap();
        assert!(r.converged);
        for (v, truth) in r.values().iter().zip([0.8, 14.4e-6, 0.05]) {
            assert!((v / truth - 1.0).abs() < 1e-6, "{v} vs {truth}");
        }
    }

    #[test]
    fn temperature_fit_recovers_exact_data() {
        let fam = TemperatureFamily::Single { frequency: 8.798e9 };
        let data: Vec<TemperaturePoint> = (0..12)
            .map(|i| {
                let t = 0.02 + 0.01 * i as f64;
                TemperaturePoint { temperature: t, rate: fam.model(3.3e4, 5.0).rate(t), sigma: None }
            })
            .collect();
        let r = fit_temperature(&data, fam, &quick(0)).unwrap();
        assert!((r.values()[0] / 3.3e4 - 1.0).abs() < 1e-6);
        assert!((r.values()[1] / 5.0 - 1.0).abs() < 1e-6);
        let pair = TemperatureFamily::Pair { f0: 6.0e9, f1: 6.3e9 };
        let data: Vec<TemperaturePoint> = (0..12)
            .map(|i| {
                let t = 0.03 + 0.01 * i as f64;
                TemperaturePoint { temperature: t, rate: pair.model(2e7, 0.3).rate(t), sigma: None }
            })
            .collect();
        let r = fit_temperature(&data, pair, &quick(0)).unwrap();
        assert!((r.values()[0] / 2e7 - 1.0).abs() < 1e-6);
        assert!((r.values()[1] / 0.3 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let t: Vec<f64> = (0..30).map(|i| 1e-6 * i as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y: Vec<f64> = t.iter().map(|&x| (-x / 14.4e-6).exp() + 0.02 * (rng.random::<f64>() - 0.5)).collect();
        let opts = FitOptions { bootstrap: 20, seed: 4, ..FitOptions::default() };
        let a = fit_exponential_decay(&t, &y, &opts).unwrap();
        let b = fit_exponential_decay(&t, &y, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.std_errs().iter().all(|s| s.is_finite() && *s > 0.0));
    }

    #[test]
    fn bootstrap_errors_shrink_as_root_n() {
        let noisy = |n: usize, seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 0.02).unwrap();
            let t: Vec<f64> = (0..n).map(|i| 60e-6 * i as f64 / (n - 1) as f64).collect();
            let y: Vec<f64> = t.iter().map(|&x| 0.8 * (-x / 14.4e-6).exp() + 0.05 + noise.sample(&mut rng)).collect();
            (t, y)
        };
        // A single data set's bootstrap error scatters by tens of percent, so
        // the scaling is checked on the mean over independent data sets.
        let opts = FitOptions { restarts: 0, bootstrap: 200, seed: 3, ..FitOptions::default() };
        let sets = 16;
        let mean_err = |n: usize, base: u64| {
            let mut acc = [0.0; 3];
            for k in 0..sets {
                let (t, y) = noisy(n, base + k);
                for (a, s) in acc.iter_mut().zip(fit_exponential_decay(&t, &y, &opts).unwrap().std_errs()) {
                    *a += s / sets as f64;
                }
            }
            acc
        };
        let small = mean_err(40, 0);
        let large = mean_err(160, 1000);
        for (s, l) in small.iter().zip(&large) {
            let ratio = s / l;
            assert!((ratio / 2.0 - 1.0).abs() < 0.2, "ratio {ratio}");
        }
    }

    #[test]
    fn invalid_guess_is_rejected() {
        let data = [(0.0, 1.0), (1.0, 2.0)];
        let residuals = |p: &[f64], d: &(f64, f64), out: &mut Vec<f64>| {
            out.push(p[0] * d.0 - d.1);
            Ok(())
        };
        let problem = Problem { parameters: vec![Parameter::new("a", "", 0.0, 1.0)], data: &data, residuals: &residuals, perturb: None };
        assert!(fit(&problem, &[2.0], &quick(0)).is_err());
    }

    fn cofit_fixture() -> (CofitFixed, Vec<CofitPoint>) {
        let fixed = CofitFixed { t_d: 13e-6, eta_cycle: 0.806, f_ro: [0.84, 0.88], kappa_b: 5.8e6, kappa_w: 3.36e6, t1_spread: 0.3 };
        let truth = [-hz(130e3), -hz(125e3)];
        let points = [0.3, 0.5, 0.7, 0.85, 1.0, 1.2, 1.4]
            .iter()
            .map(|&a| {
                let mut p = CofitPoint { amplitude: a, eta_q0: 0.0, eta_q1: 0.0, eta_cascade: 0.0, t1_q0: 30e-6 / (1.0 + a), t1_q1: 15e-6 / (1.0 + 0.5 * a) };
                let m = cofit_forward(truth, 3.7e5, &fixed, &p).unwrap();
                (p.eta_q0, p.eta_q1, p.eta_cascade) = (m[0], m[1], m[2]);
                p
            })
            .collect();
        (fixed, points)
    }

    #[test]
    fn cofit_recovers_generating_values() {
        let (fixed, data) = cofit_fixture();
        let opts = FitOptions { restarts: 1, bootstrap: 2, max_iters: 300, ..FitOptions::default() };
        let r = efficiency_cofit(&data, &fixed, [-hz(100e3), -hz(150e3), 2e5], &opts).unwrap();
        let truth = [-hz(130e3), -hz(125e3), 3.7e5];
        for (v, t) in r.values().iter().zip(truth) {
            assert!((v / t - 1.0).abs() < 0.05, "{v} vs {t}");
        }
        let v = r.values();
        let ch = ChainSpec::from_rates(&[5.8e6, 0.0, 3.36e6], &[0.0, v[2], 0.0], &[Complex64::new(v[0], 0.0), Complex64::new(v[1], 0.0)]).unwrap();
        let c = cooperativity(&ch).unwrap();
        assert!((c - 0.62).abs() < 0.02, "C = {c}");
        assert!((eta_4wm(c) - 0.95).abs() < 0.01);
        assert!((chain_memory_efficiency(&ch).unwrap() - 0.57).abs() < 0.02);
    }

    #[test]
    fn cofit_needs_five_points() {
        let (fixed, data) = cofit_fixture();
        assert!(efficiency_cofit(&data[..4], &fixed, [-1e5, -1e5, 1e5], &quick(0)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn stark_identity(chi in -2e7..-1e5f64, kb in 1e5..2e7f64, eps in 1e3..1e7f64, d in -5e7..5e7f64) {
            let (ag, ae) = buffer_amplitudes(chi, kb, eps, d);
            let a = -chi * ag.conj() * ae;
            let b = ac_stark_model(chi, kb, eps, d);
            prop_assert!((a - b).norm() <= 1e-12 * b.norm());
        }
    }
}
