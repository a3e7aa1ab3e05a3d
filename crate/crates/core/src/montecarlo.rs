//! Cycle-level stochastic simulation of detector operation.
//!
//! Each cycle draws at most one photon (signal with probability flux·T_d,
//! otherwise a thermal buffer photon), propagates it along the conditional
//! conversion chain (qubit k is flagged only if qubits 0..k were), ORs in
//! independent intrinsic flag flips and passes every flag through its
//! readout model. Random numbers come from ChaCha8 streams keyed by
//! (seed, block of cycles), so results do not depend on the thread count.
//!
//! Alongside the sampler, [`expected_rates`] gives the exact expectation of
//! every decoded count rate by enumerating the 2^N readout outcomes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::CycleSpec;
use crate::scattering::golden_max;

/// Cycles drawn from one RNG stream.
const BLOCK: usize = 4096;
/// Maximum number of re-reads in the three-branch readout policy.
pub const MAX_REREADS: u32 = 10;
/// Largest supported qubit count (bitstrings are stored as `u16`).
pub const MAX_QUBITS: usize = 16;
/// Signal probability per cycle above which the trace is flagged saturated.
pub const SATURATION: f64 = 0.1;

/// Bi-Gaussian single-qubit readout on the rotated quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IQReadoutModel {
    pub mean_g: f64,
    pub mean_e: f64,
    pub sigma: f64,
    /// I ≥ v_th is assigned e.
    pub v_th: f64,
    /// I ≤ v_th_reset is assigned g; values in between are re-read.
    pub v_th_reset: f64,
}

impl IQReadoutModel {
    /// Model with thresholds from [`optimize_threshold`].
    pub fn optimized(mean_g: f64, mean_e: f64, sigma: f64, grid: usize) -> Result<Self> {
        let (v_th, v_th_reset) = optimize_threshold(mean_g, mean_e, sigma, grid)?;
        Ok(IQReadoutModel { mean_g, mean_e, sigma, v_th, v_th_reset })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::DegenerateReadout("sigma must be positive".into()));
        }
        if !(self.mean_e > self.mean_g) {
            return Err(Error::DegenerateReadout("excited mean must exceed ground mean".into()));
        }
        if !(self.v_th_reset <= self.v_th) {
            return Err(Error::DegenerateReadout("v_th_reset must not exceed v_th".into()));
        }
        Ok(())
    }

    fn mean(&self, excited: bool) -> f64 {
        if excited {
            self.mean_e
        } else {
            self.mean_g
        }
    }

    fn midpoint(&self) -> f64 {
        0.5 * (self.mean_g + self.mean_e)
    }

    /// Exact probability that the policy assigns e, including the
    /// nearest-mean fallback after [`MAX_REREADS`] re-reads.
    pub fn assign_excited_probability(&self, excited: bool) -> f64 {
        let mu = self.mean(excited);
        let above = |v: f64| gaussian_tail((v - mu) / self.sigma);
        let a = above(self.v_th);
        let b = 1.0 - above(self.v_th_reset);
        let m = (1.0 - a - b).max(0.0);
        let draws = MAX_REREADS as i32 + 1;
        let geometric = if m < 1.0 { a * (1.0 - m.powi(draws)) / (1.0 - m) } else { 0.0 };
        let fallback = (above(self.midpoint().max(self.v_th_reset)) - a).max(0.0);
        geometric + m.powi(draws - 1) * fallback
    }
}

/// Readout channel of one qubit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Readout {
    Ideal,
    /// Assignment fidelities P(e|e) and P(g|g).
    Fidelity { excited: f64, ground: f64 },
    Iq(IQReadoutModel),
}

impl Readout {
    fn validate(&self, field: &str) -> Result<()> {
        match self {
            Readout::Ideal => Ok(()),
            Readout::Fidelity { excited, ground } => {
                if !((0.0..=1.0).contains(excited) && (0.0..=1.0).contains(ground)) {
                    return Err(Error::config(field, "fidelities must lie in [0, 1]"));
                }
                Ok(())
            }
            Readout::Iq(m) => m.validate(),
        }
    }

    /// P(assigned e | true state).
    pub fn assign_excited_probability(&self, excited: bool) -> f64 {
        match self {
            Readout::Ideal => excited as u8 as f64,
            Readout::Fidelity { excited: fe, ground: fg } => {
                if excited {
                    *fe
                } else {
                    1.0 - fg
                }
            }
            Readout::Iq(m) => m.assign_excited_probability(excited),
        }
    }

    fn sample<R: Rng>(&self, excited: bool, rng: &mut R) -> ReadoutOutcome {
        match self {
            Readout::Ideal => ReadoutOutcome { excited, rereads: 0 },
            Readout::Fidelity { .. } => {
                ReadoutOutcome { excited: rng.random::<f64>() < self.assign_excited_probability(excited), rereads: 0 }
            }
            Readout::Iq(m) => readout_sample(m, excited, rng),
        }
    }
}

/// Outcome of one readout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadoutOutcome {
    pub excited: bool,
    pub rereads: u32,
}

/// Draws I ~ N(mean(state), σ) and applies the three-branch policy:
/// I ≥ v_th → e, I ≤ v_th_reset → g, otherwise read again. After
/// [`MAX_REREADS`] re-reads the last value is assigned to the nearest mean.
pub fn readout_sample<R: Rng>(model: &IQReadoutModel, excited: bool, rng: &mut R) -> ReadoutOutcome {
    let normal = Normal::new(model.mean(excited), model.sigma).expect("sigma validated positive");
    let mut rereads = 0;
    loop {
        let i = normal.sample(rng);
        if i >= model.v_th {
            return ReadoutOutcome { excited: true, rereads };
        }
        if i <= model.v_th_reset {
            return ReadoutOutcome { excited: false, rereads };
        }
        if rereads == MAX_REREADS {
            return ReadoutOutcome { excited: i >= model.midpoint(), rereads };
        }
        rereads += 1;
    }
}

/// Upper Gaussian tail Q(x) = P(Z ≥ x).
pub fn gaussian_tail(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// ln Q(x), with the asymptotic expansion where Q underflows.
fn ln_gaussian_tail(x: f64) -> f64 {
    if x < 30.0 {
        return gaussian_tail(x).ln();
    }
    let z2 = x * x;
    -0.5 * z2 - (x * (2.0 * std::f64::consts::PI).sqrt()).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
}

/// Threshold minimising P(I_g ≥ V)/P(I_e ≥ V)², found on a uniform grid of
/// `grid` points over [mean_g - 5σ, mean_e + 5σ] and refined by
/// golden-section search between the neighbours of the best grid point.
/// Ties go to the candidate closest to the midpoint. Returns
/// (v_th, v_th_reset) with v_th_reset the mirror of v_th about the
/// equal-error point.
pub fn optimize_threshold(mean_g: f64, mean_e: f64, sigma: f64, grid: usize) -> Result<(f64, f64)> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::DegenerateReadout("sigma must be positive".into()));
    }
    if !(mean_e > mean_g) {
        return Err(Error::DegenerateReadout("excited mean must exceed ground mean".into()));
    }
    if grid < 3 {
        return Err(Error::config("grid", "need at least 3 points"));
    }
    let objective = |v: f64| ln_gaussian_tail((v - mean_g) / sigma) - 2.0 * ln_gaussian_tail((v - mean_e) / sigma);
    let mid = 0.5 * (mean_g + mean_e);
    let (lo, hi) = (mean_g - 5.0 * sigma, mean_e + 5.0 * sigma);
    let step = (hi - lo) / (grid - 1) as f64;
    let mut best = (f64::INFINITY, lo);
    for i in 0..grid {
        let v = lo + step * i as f64;
        let f = objective(v);
        let closer = (v - mid).abs() < (best.1 - mid).abs();
        if f < best.0 || (f == best.0 && closer) {
            best = (f, v);
        }
    }
    let (a, b) = ((best.1 - step).max(lo), (best.1 + step).min(hi));
    let (v, neg) = golden_max(&|v| Ok(-objective(v)), a, b)?;
    let v_th = if -neg <= best.0 { v } else { best.1 };
    // Equal σ: the equal-error point is the midpoint.
    let v_th_reset = mid - (mid - v_th).abs();
    Ok((v_th, v_th_reset))
}

/// Per-cycle probabilities driving the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    /// c_k: probability that qubit k is flagged given qubits 0..k were.
    pub conversion: Vec<f64>,
    /// Per-cycle probability of an intrinsic flag on each qubit (equilibrium
    /// population, pump-induced excess, ...). OR-ed with the photon flags.
    pub flip_probability: Vec<f64>,
    pub readout: Vec<Readout>,
    /// Thermal dark-count rate after all-or-nothing decoding [1/s].
    pub alpha_th: f64,
    pub cycle: CycleSpec,
}

impl SimulationConfig {
    /// Conditional conversion chain from the marginal flag efficiencies
    /// η_Q0 ≥ η_Q1 ≥ ... of a photon.
    pub fn conversion_from_marginals(eta_q: &[f64]) -> Result<Vec<f64>> {
        let mut prev = 1.0;
        eta_q
            .iter()
            .enumerate()
            .map(|(k, &e)| {
                if !(0.0..=prev).contains(&e) {
                    return Err(Error::config(format!("eta_q[{k}]"), "marginals must be non-increasing in [0, 1]"));
                }
                let c = if prev > 0.0 { e / prev } else { 0.0 };
                prev = e;
                Ok(c)
            })
            .collect()
    }

    pub fn n(&self) -> usize {
        self.conversion.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 || n > MAX_QUBITS {
            return Err(Error::config("conversion", format!("need 1..={MAX_QUBITS} qubits")));
        }
        if self.flip_probability.len() != n || self.readout.len() != n {
            return Err(Error::config("readout", "one entry per qubit required"));
        }
        for (k, &c) in self.conversion.iter().enumerate() {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::config(format!("conversion[{k}]"), "must lie in [0, 1]"));
            }
        }
        for (k, &p) in self.flip_probability.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("flip_probability[{k}]"), "must lie in [0, 1]"));
            }
        }
        for (k, r) in self.readout.iter().enumerate() {
            r.validate(&format!("readout[{k}]"))?;
        }
        if !(self.alpha_th >= 0.0 && self.alpha_th.is_finite()) {
            return Err(Error::config("alpha_th", "must be non-negative"));
        }
        self.cycle.validate()?;
        if self.thermal_probability() > 1.0 {
            return Err(Error::config("alpha_th", "thermal photon probability per cycle exceeds one"));
        }
        Ok(())
    }

    /// Probability that a photon in the buffer flags every qubit.
    pub fn photon_efficiency(&self) -> f64 {
        self.conversion.iter().product()
    }

    /// Thermal photon probability per cycle, α_th·T_cycle/η_AND, so that the
    /// all-or-nothing thermal count rate equals α_th.
    pub fn thermal_probability(&self) -> f64 {
        let eta = self.all_or_nothing_photon_efficiency();
        if eta > 0.0 {
            self.alpha_th * self.cycle.t_cycle() / eta
        } else {
            0.0
        }
    }

    fn all_or_nothing_photon_efficiency(&self) -> f64 {
        outcome_probability(self, true, Decoder::AllOrNothing).unwrap_or(0.0)
    }
}

/// Decoding of one cycle's bitstring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoder {
    AllOrNothing,
    Majority,
    /// A single qubit taken alone.
    Qubit(usize),
}

impl Decoder {
    fn check(&self, n: usize) -> Result<()> {
        match *self {
            Decoder::Majority if n.is_multiple_of(2) => Err(Error::EvenMajority { n }),
            Decoder::Qubit(k) if k >= n => Err(Error::config("decoder", format!("qubit {k} out of range"))),
            _ => Ok(()),
        }
    }

    fn fires(&self, bits: u16, n: usize) -> bool {
        match *self {
            Decoder::AllOrNothing => bits.count_ones() as usize == n,
            Decoder::Majority => bits.count_ones() as usize >= n.div_ceil(2),
            Decoder::Qubit(k) => bits >> k & 1 == 1,
        }
    }
}

/// Per-cycle readout bitstrings (bit k = qubit k assigned e).
#[derive(Debug, Clone, PartialEq)]
pub struct ClickTrace {
    pub n_qubits: usize,
    pub t_cycle: f64,
    pub seed: u64,
    pub photon_flux: f64,
    pub outcomes: Vec<u16>,
    /// Total re-reads issued by the readout policy.
    pub rereads: u64,
    /// Signal probability per cycle reached the saturation guard.
    pub saturated: bool,
}

impl ClickTrace {
    pub fn cycle_count(&self) -> usize {
        self.outcomes.len()
    }

    pub fn duration(&self) -> f64 {
        self.outcomes.len() as f64 * self.t_cycle
    }

    /// Start time of cycle i.
    pub fn timestamp(&self, i: usize) -> f64 {
        i as f64 * self.t_cycle
    }

    /// Bitstring of cycle i with qubit 0 first.
    pub fn bitstring(&self, i: usize) -> String {
        (0..self.n_qubits).map(|k| if self.outcomes[i] >> k & 1 == 1 { '1' } else { '0' }).collect()
    }

    /// Cycles with at least one flag, for compact output.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, String)> + '_ {
        self.outcomes.iter().enumerate().filter(|(_, &b)| b != 0).map(|(i, _)| (i, self.bitstring(i)))
    }
}

/// Decoded counts of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub fires: Vec<bool>,
    pub counts: u64,
    pub duration: f64,
}

impl Decoded {
    pub fn rate(&self) -> f64 {
        self.counts as f64 / self.duration
    }
}

pub fn decode(trace: &ClickTrace, decoder: Decoder) -> Result<Decoded> {
    decoder.check(trace.n_qubits)?;
    let fires: Vec<bool> = trace.outcomes.iter().map(|&b| decoder.fires(b, trace.n_qubits)).collect();
    let counts = fires.iter().filter(|&&f| f).count() as u64;
    Ok(Decoded { fires, counts, duration: trace.duration() })
}

/// Counts only, without the per-cycle vector.
pub fn count(trace: &ClickTrace, decoder: Decoder) -> Result<u64> {
    decoder.check(trace.n_qubits)?;
    Ok(trace.outcomes.iter().filter(|&&b| decoder.fires(b, trace.n_qubits)).count() as u64)
}

fn simulate_cycle<R: Rng>(cfg: &SimulationConfig, p_signal: f64, p_thermal: f64, rng: &mut R) -> (u16, u32) {
    let photon = rng.random::<f64>() < p_signal || rng.random::<f64>() < p_thermal;
    let mut flags = 0u16;
    if photon {
        for (k, &c) in cfg.conversion.iter().enumerate() {
            if rng.random::<f64>() < c {
                flags |= 1 << k;
            } else {
                break;
            }
        }
    }
    for (k, &p) in cfg.flip_probability.iter().enumerate() {
        if rng.random::<f64>() < p {
            flags |= 1 << k;
        }
    }
    let mut bits = 0u16;
    let mut rereads = 0;
    for (k, r) in cfg.readout.iter().enumerate() {
        let out = r.sample(flags >> k & 1 == 1, rng);
        rereads += out.rereads;
        if out.excited {
            bits |= 1 << k;
        }
    }
    (bits, rereads)
}

/// Runs ⌊duration/T_cycle⌋ cycles at the given photon flux [photons/s].
pub fn simulate(cfg: &SimulationConfig, photon_flux: f64, duration: f64, seed: u64) -> Result<ClickTrace> {
    cfg.validate()?;
    if !(photon_flux >= 0.0 && photon_flux.is_finite()) {
        return Err(Error::config("photon_flux", "must be non-negative"));
    }
    if !(duration >= 0.0 && duration.is_finite()) {
        return Err(Error::config("duration", "must be non-negative"));
    }
    let p_signal = photon_flux * cfg.cycle.t_d;
    if p_signal > 1.0 {
        return Err(Error::config("photon_flux", "more than one photon per detection window"));
    }
    let p_thermal = cfg.thermal_probability();
    let t_cycle = cfg.cycle.t_cycle();
    let cycles = (duration / t_cycle).floor() as usize;
    let blocks: Vec<(Vec<u16>, u64)> = (0..cycles.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let len = BLOCK.min(cycles - b * BLOCK);
            let mut out = Vec::with_capacity(len);
            let mut rereads = 0u64;
            for _ in 0..len {
                let (bits, r) = simulate_cycle(cfg, p_signal, p_thermal, &mut rng);
                out.push(bits);
                rereads += r as u64;
            }
            (out, rereads)
        })
        .collect();
    let rereads = blocks.iter().map(|b| b.1).sum();
    let outcomes = blocks.into_iter().flat_map(|b| b.0).collect();
    Ok(ClickTrace {
        n_qubits: cfg.n(),
        t_cycle,
        seed,
        photon_flux,
        outcomes,
        rereads,
        saturated: p_signal >= SATURATION,
    })
}

/// P(decoder fires) with or without a photon entering the chain.
fn outcome_probability(cfg: &SimulationConfig, photon: bool, decoder: Decoder) -> Result<f64> {
    let n = cfg.n();
    decoder.check(n)?;
    // Distribution of the number of photon flags.
    let prefix: Vec<f64> = match photon {
        false => {
            let mut v = vec![0.0; n + 1];
            v[0] = 1.0;
            v
        }
        true => {
            let mut v = Vec::with_capacity(n + 1);
            let mut reach = 1.0;
            for &c in &cfg.conversion {
                v.push(reach * (1.0 - c));
                reach *= c;
            }
            v.push(reach);
            v
        }
    };
    let mut total = 0.0;
    for (j, &pj) in prefix.iter().enumerate() {
        if pj == 0.0 {
            continue;
        }
        let q: Vec<f64> = (0..n)
            .map(|k| {
                let r = &cfg.readout[k];
                if k < j {
                    r.assign_excited_probability(true)
                } else {
                    let p = cfg.flip_probability[k];
                    p * r.assign_excited_probability(true) + (1.0 - p) * r.assign_excited_probability(false)
                }
            })
            .collect();
        total += pj * fire_probability(&q, |bits| decoder.fires(bits, n));
    }
    Ok(total)
}

/// Exhaustive 2^N enumeration of P(decoder fires) for independent per-qubit
/// excitation probabilities `p`.
pub fn fire_probability(p: &[f64], fires: impl Fn(u16) -> bool) -> f64 {
    let n = p.len();
    (0u32..1 << n)
        .map(|bits| bits as u16)
        .filter(|&bits| fires(bits))
        .map(|bits| (0..n).map(|k| if bits >> k & 1 == 1 { p[k] } else { 1.0 - p[k] }).product::<f64>())
        .sum()
}

/// Exhaustive enumeration for a decoder.
pub fn decoder_probability(p: &[f64], decoder: Decoder) -> Result<f64> {
    decoder.check(p.len())?;
    Ok(fire_probability(p, |b| decoder.fires(b, p.len())))
}

/// Leading-order majority-vote probability C(N, (N+1)/2) p^((N+1)/2) for
/// i.i.d. flags with small p.
pub fn majority_leading_order(n: usize, p: f64) -> Result<f64> {
    if n.is_multiple_of(2) {
        return Err(Error::EvenMajority { n });
    }
    let m = n.div_ceil(2);
    let binom = statrs::function::factorial::binomial(n as u64, m as u64);
    Ok(binom * p.powi(m as i32))
}

/// Exact expectation of a decoded count rate: rate = slope·flux + intercept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectedRate {
    pub decoder: Decoder,
    pub slope: f64,
    pub intercept: f64,
    /// P(fire | photon in the buffer).
    pub photon_efficiency: f64,
    /// P(fire | no photon).
    pub false_positive: f64,
}

pub fn expected_rates(cfg: &SimulationConfig, decoder: Decoder) -> Result<ExpectedRate> {
    cfg.validate()?;
    let a = outcome_probability(cfg, true, decoder)?;
    let b = outcome_probability(cfg, false, decoder)?;
    let p_th = cfg.thermal_probability();
    let t_cycle = cfg.cycle.t_cycle();
    let idle = p_th * a + (1.0 - p_th) * b;
    Ok(ExpectedRate {
        decoder,
        slope: cfg.cycle.t_d * (a - idle) / t_cycle,
        intercept: idle / t_cycle,
        photon_efficiency: a,
        false_positive: b,
    })
}

/// One flux point of a photon-counting benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchmarkPoint {
    pub photon_flux: f64,
    pub counts: u64,
    pub duration: f64,
    pub saturated: bool,
}

impl BenchmarkPoint {
    pub fn from_trace(trace: &ClickTrace, decoder: Decoder) -> Result<Self> {
        Ok(BenchmarkPoint {
            photon_flux: trace.photon_flux,
            counts: count(trace, decoder)?,
            duration: trace.duration(),
            saturated: trace.saturated,
        })
    }
}

/// Weighted linear fit of count rate against flux.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchmarkResult {
    /// Slope: efficiency estimate.
    pub eta: f64,
    pub eta_err: f64,
    /// Intercept: dark-count rate estimate [1/s].
    pub alpha: f64,
    pub alpha_err: f64,
    pub r_squared: f64,
    pub points_used: usize,
}

/// Weighted least squares with Poisson weights σ_i = sqrt(max(n_i, 1))/T_i.
/// Saturated points are excluded.
pub fn estimate_benchmark(points: &[BenchmarkPoint]) -> Result<BenchmarkResult> {
    if points.len() < 3 {
        return Err(Error::Benchmark("need at least 3 flux points".into()));
    }
    if !points.iter().any(|p| p.photon_flux == 0.0) {
        return Err(Error::Benchmark("need a zero-flux point".into()));
    }
    let used: Vec<&BenchmarkPoint> = points.iter().filter(|p| !p.saturated).collect();
    if used.is_empty() {
        return Err(Error::Benchmark("all points saturated".into()));
    }
    if used.len() < 2 {
        return Err(Error::Benchmark("fewer than 2 unsaturated points".into()));
    }
    if used.iter().any(|p| !(p.duration > 0.0)) {
        return Err(Error::Benchmark("zero-duration point".into()));
    }
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in &used {
        let y = p.counts as f64 / p.duration;
        let var = (p.counts.max(1) as f64) / (p.duration * p.duration);
        let w = 1.0 / var;
        s += w;
        sx += w * p.photon_flux;
        sy += w * y;
        sxx += w * p.photon_flux * p.photon_flux;
        sxy += w * p.photon_flux * y;
    }
    let det = s * sxx - sx * sx;
    if !(det > 0.0) {
        return Err(Error::Benchmark("flux points are not distinct".into()));
    }
    let eta = (s * sxy - sx * sy) / det;
    let alpha = (sxx * sy - sx * sxy) / det;
    let ybar = sy / s;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for p in &used {
        let y = p.counts as f64 / p.duration;
        let w = p.duration * p.duration / p.counts.max(1) as f64;
        ss_res += w * (y - eta * p.photon_flux - alpha).powi(2);
        ss_tot += w * (y - ybar).powi(2);
    }
    Ok(BenchmarkResult {
        eta,
        eta_err: (s / det).sqrt(),
        alpha,
        alpha_err: (sxx / det).sqrt(),
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
        points_used: used.len(),
    })
}

/// Simulates every flux (seed offset by the point index) and fits.
pub fn run_benchmark(
    cfg: &SimulationConfig,
    fluxes: &[f64],
    duration: f64,
    seed: u64,
    decoder: Decoder,
) -> Result<(Vec<ClickTrace>, BenchmarkResult)> {
    let traces = fluxes
        .iter()
        .enumerate()
        .map(|(i, &f)| simulate(cfg, f, duration, seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let points = traces.iter().map(|t| BenchmarkPoint::from_trace(t, decoder)).collect::<Result<Vec<_>>>()?;
    Ok((traces, estimate_benchmark(&points)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cycle() -> CycleSpec {
        CycleSpec::new(13e-6, 1.5e-6, 0.128e-6, 1.0).unwrap()
    }

    fn config(conversion: Vec<f64>, flips: Vec<f64>, alpha_th: f64) -> SimulationConfig {
        let n = conversion.len();
        SimulationConfig { conversion, flip_probability: flips, readout: vec![Readout::Ideal; n], alpha_th, cycle: cycle() }
    }

    #[test]
    fn silent_detector_gives_all_zero_trace() {
        let cfg = config(vec![0.6, 0.7], vec![0.0, 0.0], 0.0);
        let tr = simulate(&cfg, 0.0, 1.0, 3).unwrap();
        assert!(tr.cycle_count() > 60_000);
        assert!(tr.outcomes.iter().all(|&b| b == 0));
        assert_eq!(tr.nonzero().count(), 0);
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = config(vec![0.6, 0.7], vec![0.01, 0.02], 5.0);
        let a = simulate(&cfg, 1000.0, 0.5, 11).unwrap();
        let b = simulate(&cfg, 1000.0, 0.5, 11).unwrap();
        let c = simulate(&cfg, 1000.0, 0.5, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.outcomes, c.outcomes);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let d = pool.install(|| simulate(&cfg, 1000.0, 0.5, 11).unwrap());
        assert_eq!(a, d);
    }

    #[test]
    fn conditional_chain_orders_marginals() {
        let cfg = config(vec![0.6, 0.5], vec![0.0, 0.0], 0.0);
        let q0 = expected_rates(&cfg, Decoder::Qubit(0)).unwrap();
        let q1 = expected_rates(&cfg, Decoder::Qubit(1)).unwrap();
        let and = expected_rates(&cfg, Decoder::AllOrNothing).unwrap();
        assert!((q0.photon_efficiency - 0.6).abs() < 1e-15);
        assert!((q1.photon_efficiency - 0.3).abs() < 1e-15);
        assert!((and.photon_efficiency - 0.3).abs() < 1e-15);
        let c = SimulationConfig::conversion_from_marginals(&[0.6, 0.3]).unwrap();
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn thermal_rate_matches_alpha_th() {
        let cfg = config(vec![0.6, 0.5], vec![0.0, 0.0], 7.0);
        let r = expected_rates(&cfg, Decoder::AllOrNothing).unwrap();
        assert!((r.intercept / 7.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decoder_truth_tables() {
        let n = 2;
        let d = Decoder::AllOrNothing;
        assert!(d.fires(0b11, n));
        for b in [0b00, 0b01, 0b10] {
            assert!(!d.fires(b, n));
        }
        assert_eq!(Decoder::Majority.check(2), Err(Error::EvenMajority { n: 2 }));
        let p = 0.3;
        let maj3 = decoder_probability(&[p; 3], Decoder::Majority).unwrap();
        assert!((maj3 - (3.0 * p * p * (1.0 - p) + p * p * p)).abs() < 1e-15);
        let maj5 = decoder_probability(&[0.5; 5], Decoder::Majority).unwrap();
        assert!((maj5 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sharp_readout_is_perfect() {
        let m = IQReadoutModel::optimized(-1.0, 1.0, 1e-3, 2001).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(readout_sample(&m, true, &mut rng).excited);
            assert!(!readout_sample(&m, false, &mut rng).excited);
        }
    }

    #[test]
    fn optimized_threshold_is_ground_biased() {
        let m = IQReadoutModel::optimized(-1.0, 1.0, 0.5, 10_001).unwrap();
        assert!(m.v_th > 0.0);
        assert!(m.v_th_reset < 0.0);
        let fg = 1.0 - m.assign_excited_probability(false);
        let fe = m.assign_excited_probability(true);
        assert!(fg > fe, "{fg} {fe}");
    }

    #[test]
    fn threshold_matches_brute_force() {
        let (mg, me, s) = (0.0, 1.0, 0.3);
        let (v, _) = optimize_threshold(mg, me, s, 10_001).unwrap();
        let obj = |v: f64| gaussian_tail((v - mg) / s) / gaussian_tail((v - me) / s).powi(2);
        let (lo, hi) = (mg - 5.0 * s, me + 5.0 * s);
        let fine = 1_000_000;
        let best = (0..=fine)
            .map(|i| lo + (hi - lo) * i as f64 / fine as f64)
            .min_by(|a, b| obj(*a).partial_cmp(&obj(*b)).unwrap())
            .unwrap();
        assert!((v - best).abs() < 1e-4, "{v} {best}");
    }

    #[test]
    fn degenerate_readout_is_rejected() {
        assert!(matches!(optimize_threshold(1.0, 1.0, 0.2, 101), Err(Error::DegenerateReadout(_))));
    }

    #[test]
    fn readout_assignment_matches_sampling() {
        let m = IQReadoutModel { mean_g: -1.0, mean_e: 1.0, sigma: 0.8, v_th: 0.3, v_th_reset: -0.3 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 200_000;
        for state in [false, true] {
            let hits = (0..trials).filter(|_| readout_sample(&m, state, &mut rng).excited).count() as f64;
            let p = m.assign_excited_probability(state);
            let sd = (p * (1.0 - p) / trials as f64).sqrt();
            assert!((hits / trials as f64 - p).abs() < 4.0 * sd);
        }
    }

    #[test]
    fn noiseless_linear_data_is_recovered() {
        let pts: Vec<BenchmarkPoint> = [0.0, 100.0, 200.0, 400.0]
            .iter()
            .map(|&f| BenchmarkPoint { photon_flux: f, counts: (1000.0 * (5.0 + 0.2 * f)) as u64, duration: 1000.0, saturated: false })
            .collect();
        let r = estimate_benchmark(&pts).unwrap();
        assert!((r.eta - 0.2).abs() < 1e-12 && (r.alpha - 5.0).abs() < 1e-9);
        let sat: Vec<_> = pts.iter().map(|p| BenchmarkPoint { saturated: true, ..*p }).collect();
        assert!(matches!(estimate_benchmark(&sat), Err(Error::Benchmark(_))));
    }

    #[test]
    fn saturation_is_flagged() {
        let cfg = config(vec![0.6], vec![0.0], 0.0);
        let tr = simulate(&cfg, 0.2 / 13e-6, 1e-3, 1).unwrap();
        assert!(tr.saturated);
    }

    proptest! {
        #[test]
        fn expected_rate_is_linear(c0 in 0.1..1.0f64, c1 in 0.1..1.0f64, p in 0.0..0.01f64, f in 1.0..700.0f64) {
            let mut cfg = config(vec![c0, c1], vec![p, p], 3.0);
            cfg.readout = vec![Readout::Fidelity { excited: 0.9, ground: 0.99 }; 2];
            let r = expected_rates(&cfg, Decoder::AllOrNothing).unwrap();
            // Rebuild the rate at flux f directly from per-cycle probabilities.
            let ps = f * cfg.cycle.t_d;
            let pth = cfg.thermal_probability();
            let direct = (ps * r.photon_efficiency + (1.0 - ps) * (pth * r.photon_efficiency + (1.0 - pth) * r.false_positive)) / cfg.cycle.t_cycle();
            prop_assert!((direct - (r.slope * f + r.intercept)).abs() < 1e-9 * direct.max(1.0));
        }

        #[test]
        fn enumeration_matches_leading_order(n in prop::sample::select(vec![3usize, 5]), p in 1e-5..1e-3f64) {
            let exact = decoder_probability(&vec![p; n], Decoder::Majority).unwrap();
            let lead = majority_leading_order(n, p).unwrap();
            prop_assert!((exact / lead - 1.0).abs() < 10.0 * n as f64 * p);
        }

        #[test]
        fn optimized_beats_midpoint(ratio in 1.0..12.0f64, sigma in 0.2..2.0f64) {
            // Below separation/σ = 1 the objective's minimum lies under the midpoint.
            let sep = ratio * sigma;
            let m = IQReadoutModel::optimized(0.0, sep, sigma, 4001).unwrap();
            let mid = IQReadoutModel { v_th: sep / 2.0, v_th_reset: sep / 2.0, ..m };
            prop_assert!(m.assign_excited_probability(false) <= mid.assign_excited_probability(false) + 1e-15);
        }
    }
}
