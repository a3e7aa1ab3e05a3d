//! Semi-classical coupled-cavity model of the detector chain.
//!
//! In the single-excitation regime the chain reduces to N+1 linearly
//! coupled resonators. Driving resonator 0 at detuning δ gives the
//! tridiagonal system
//!
//! ```text
//! R_k ψ_k - i g_{k-1} ψ_{k-1} - i g_k* ψ_{k+1} = -sqrt(κ_0,ext) δ_k0
//! R_k = -i(Δ_k - δ) - κ_k/2
//! ```
//!
//! with Δ_k the rotating-frame resonator detuning set by the pump
//! detunings, and the transmission is S21 = sqrt(κ_N,ext) ψ_N for a unit
//! input amplitude.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::ChainSpec;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Mode amplitudes for a unit input drive.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleExcitation {
    pub psi: Vec<Complex64>,
    pub s21: Complex64,
}

/// Response of a chain over a detuning grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringResult {
    /// Probe detunings δ [rad/s].
    pub delta_grid: Vec<f64>,
    pub s21: Vec<Complex64>,
    /// |S21(0)|².
    pub eta_4wm: f64,
    pub cooperativity: f64,
    /// Numeric FWHM [rad/s]; `None` when the response is not single-peaked.
    pub kappa_d: Option<f64>,
}

/// Solves the tridiagonal system by forward elimination and back
/// substitution (Thomas algorithm), linear in N.
pub fn solve_single_excitation(chain: &ChainSpec, delta: f64) -> Result<SingleExcitation> {
    let mut system = Tridiagonal::new(chain)?;
    let mut psi = vec![Complex64::new(0.0, 0.0); chain.modes.len()];
    system.solve_into(delta, &mut psi)?;
    let s21 = system.out_scale * psi[psi.len() - 1];
    Ok(SingleExcitation { psi, s21 })
}

/// The chain's system with δ-independent parts precomputed, for repeated
/// solves over a detuning grid without allocation.
struct Tridiagonal {
    diag: Vec<Complex64>,
    sub: Vec<Complex64>,
    sup: Vec<Complex64>,
    rhs0: Complex64,
    out_scale: f64,
    scratch: Vec<Complex64>,
    shifted: Vec<Complex64>,
    rhs: Vec<Complex64>,
}

impl Tridiagonal {
    fn new(chain: &ChainSpec) -> Result<Self> {
        let g = chain.couplings()?;
        let n = chain.modes.len();
        Ok(Tridiagonal {
            diag: (0..n).map(|k| -I * chain.mode_detuning(k) - chain.kappa(k) / 2.0).collect(),
            sub: g.iter().map(|gk| -I * gk).collect(),
            sup: g.iter().map(|gk| -I * gk.conj()).collect(),
            rhs0: Complex64::new(-chain.modes[0].kappa_ext.sqrt(), 0.0),
            out_scale: chain.modes[n - 1].kappa_ext.sqrt(),
            scratch: vec![Complex64::new(0.0, 0.0); n],
            shifted: vec![Complex64::new(0.0, 0.0); n],
            rhs: vec![Complex64::new(0.0, 0.0); n],
        })
    }

    fn solve_into(&mut self, delta: f64, psi: &mut [Complex64]) -> Result<()> {
        for (s, d) in self.shifted.iter_mut().zip(&self.diag) {
            *s = d + I * delta;
        }
        self.rhs[0] = self.rhs0;
        thomas_into(&self.sub, &self.shifted, &self.sup, &self.rhs, &mut self.scratch, psi)
    }
}

/// Complex tridiagonal solve. `sub[k]` sits at (k+1, k), `sup[k]` at (k, k+1).
#[cfg(test)]
fn thomas(sub: &[Complex64], diag: &[Complex64], sup: &[Complex64], rhs: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut c = vec![Complex64::new(0.0, 0.0); diag.len()];
    let mut x = vec![Complex64::new(0.0, 0.0); diag.len()];
    thomas_into(sub, diag, sup, rhs, &mut c, &mut x)?;
    Ok(x)
}

fn thomas_into(
    sub: &[Complex64],
    diag: &[Complex64],
    sup: &[Complex64],
    rhs: &[Complex64],
    c: &mut [Complex64],
    x: &mut [Complex64],
) -> Result<()> {
    let n = diag.len();
    let scale = diag.iter().map(|d| d.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut pivot = diag[0];
    for k in 0..n {
        if k > 0 {
            pivot = diag[k] - sub[k - 1] * c[k - 1];
        }
        if !(pivot.norm() > 1e-300 * scale) {
            return Err(Error::SingularPivot { index: k });
        }
        if k + 1 < n {
            c[k] = sup[k] / pivot;
        }
        x[k] = if k == 0 { rhs[0] / pivot } else { (rhs[k] - sub[k - 1] * x[k - 1]) / pivot };
    }
    for k in (0..n - 1).rev() {
        let next = x[k + 1];
        x[k] -= c[k] * next;
    }
    Ok(())
}

pub fn s21(chain: &ChainSpec, delta: f64) -> Result<Complex64> {
    Ok(solve_single_excitation(chain, delta)?.s21)
}

/// Energy transmission |S21(δ)|².
pub fn transmission(chain: &ChainSpec, delta: f64) -> Result<f64> {
    Ok(s21(chain, delta)?.norm_sqr())
}

/// Probability that flag `j` is raised by an incoming photon at detuning δ:
/// the fraction of the input power dissipated anywhere past stage `j`,
/// Σ_{k>j} κ_k |ψ_k|².
pub fn flag_probabilities(chain: &ChainSpec, delta: f64) -> Result<Vec<f64>> {
    let sol = solve_single_excitation(chain, delta)?;
    Ok(flag_probabilities_from(chain, &sol.psi))
}

fn flag_probabilities_from(chain: &ChainSpec, psi: &[Complex64]) -> Vec<f64> {
    let n = chain.n();
    (0..n)
        .map(|j| ((j + 1)..=n).map(|k| chain.kappa(k) * psi[k].norm_sqr()).sum())
        .collect()
}

/// Whether intermediate resonator losses enter the cooperativity recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntermediateLoss {
    /// Frequency-matched, lossless-memory simplification.
    Neglect,
    Include,
}

/// Cooperativity with the lossless-memory simplification.
pub fn cooperativity(chain: &ChainSpec) -> Result<f64> {
    cooperativity_with(chain, IntermediateLoss::Neglect)
}

/// Back-to-front recursion Γ_{N-1} = 4|g_{N-1}|²/κ_N,
/// Γ_k = 4|g_k|²/(κ_{k+1} + Γ_{k+1}), C = Γ_0/κ_0.
pub fn cooperativity_with(chain: &ChainSpec, loss: IntermediateLoss) -> Result<f64> {
    let n = chain.n();
    let g = chain.couplings()?;
    let mut gamma = 0.0;
    for k in (0..n).rev() {
        let downstream = if k == n - 1 {
            chain.kappa(n)
        } else {
            let own = match loss {
                IntermediateLoss::Neglect => 0.0,
                IntermediateLoss::Include => chain.kappa(k + 1),
            };
            own + gamma
        };
        if !(downstream > 0.0) {
            return Err(Error::ZeroDownstreamRate { stage: k });
        }
        gamma = 4.0 * g[k].norm_sqr() / downstream;
    }
    Ok(gamma / chain.kappa(0))
}

/// Conversion efficiency 4C/(1+C)².
pub fn eta_4wm(c: f64) -> f64 {
    if c.is_infinite() {
        return 0.0;
    }
    4.0 * c / ((1.0 + c) * (1.0 + c))
}

/// Memory efficiency ((γ_mb+γ_mw)/(κ_m+γ_mb+γ_mw))².
pub fn memory_efficiency(gamma_mb: f64, gamma_mw: f64, kappa_m: f64) -> f64 {
    let s = gamma_mb + gamma_mw;
    let r = s / (kappa_m + s);
    r * r
}

/// Memory efficiency of an N=2 chain from its own rates.
pub fn chain_memory_efficiency(chain: &ChainSpec) -> Result<f64> {
    Ok(memory_efficiency(chain.gamma_mb()?, chain.gamma_mw()?, chain.kappa(1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandwidthMethod {
    /// Exact closed form for a tuned N=1 chain.
    AnalyticN1,
    /// κ_m + γ_mb + γ_mw for an N=2 chain (weak coupling).
    ApproxSum,
    /// FWHM of |S21(δ)|² found numerically.
    NumericFwhm,
}

/// Detector bandwidth κ_d [rad/s].
pub fn bandwidth(chain: &ChainSpec, method: BandwidthMethod) -> Result<f64> {
    match method {
        BandwidthMethod::AnalyticN1 => analytic_n1(chain),
        BandwidthMethod::ApproxSum => {
            Ok(chain.kappa(1) + chain.gamma_mb()? + chain.gamma_mw()?)
        }
        BandwidthMethod::NumericFwhm => numeric_fwhm(chain),
    }
}

/// FWHM of |S21|² for N=1 with a tuned pump. Setting the squared modulus
/// of the transmission denominator to twice its value at δ=0 gives a
/// quadratic in δ² whose positive root is closed form:
/// with A = |g|² + κ_bκ_w/4, B = (κ_b+κ_w)/2 and E = B² - 2A,
/// κ_d = sqrt(2(-E + sqrt(E² + 4A²))). κ_b is the total buffer rate.
fn analytic_n1(chain: &ChainSpec) -> Result<f64> {
    chain.require_n(1)?;
    if chain.pumps[0].delta_p != 0.0 {
        return Err(Error::config("pump0.delta_p", "analytic bandwidth assumes a tuned pump"));
    }
    let (kb, kw) = (chain.kappa(0), chain.kappa(1));
    let a = chain.g4(0)?.norm_sqr() + kb * kw / 4.0;
    let b = (kb + kw) / 2.0;
    let e = b * b - 2.0 * a;
    Ok((2.0 * (-e + (e * e + 4.0 * a * a).sqrt())).sqrt())
}

/// Points and half-span factor of the prescan grid.
const PRESCAN_POINTS: usize = 2001;
const PRESCAN_SPAN: f64 = 5.0;

/// Half-span of the default detuning window, 5(κ_0 + κ_N).
pub fn default_span(chain: &ChainSpec) -> f64 {
    PRESCAN_SPAN * (chain.kappa(0) + chain.kappa(chain.n()))
}

/// Evenly spaced grid on [-span, span].
pub fn symmetric_grid(span: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    (0..points).map(|i| -span + 2.0 * span * i as f64 / (points - 1) as f64).collect()
}

fn numeric_fwhm(chain: &ChainSpec) -> Result<f64> {
    let f = |d: f64| transmission(chain, d);
    let grid = symmetric_grid(default_span(chain), PRESCAN_POINTS);
    let vals = grid.iter().map(|&d| f(d)).collect::<Result<Vec<_>>>()?;
    let (imax, &vmax) = vals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid is non-empty");
    if !(vmax > 1e-300) {
        return Err(Error::NoBandwidth("flat response".into()));
    }
    let peaks: Vec<f64> = (1..vals.len() - 1)
        .filter(|&i| vals[i] > vals[i - 1] && vals[i] > vals[i + 1] && vals[i] > 0.5 * vmax)
        .map(|i| grid[i])
        .collect();
    if peaks.len() > 1 {
        return Err(Error::MultiPeak { peaks });
    }
    if imax == 0 || imax == vals.len() - 1 {
        return Err(Error::NoBandwidth("maximum at the edge of the scan window".into()));
    }

    let (d_peak, f_peak) = golden_max(&f, grid[imax - 1], grid[imax + 1])?;
    let half = 0.5 * f_peak.max(vmax);

    let left = (0..imax).rev().find(|&j| vals[j] < half);
    let right = ((imax + 1)..vals.len()).find(|&j| vals[j] < half);
    let (Some(l), Some(r)) = (left, right) else {
        return Err(Error::NoBandwidth("half maximum not reached inside the scan window".into()));
    };
    let lo = bisect_level(&f, grid[l], grid[l + 1].min(d_peak), half)?;
    let hi = bisect_level(&f, grid[r], grid[r - 1].max(d_peak), half)?;
    Ok(hi - lo)
}

/// Golden-section maximisation of `f` on [a, b].
pub(crate) fn golden_max(f: &impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64) -> Result<(f64, f64)> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    let tol = 1e-13 * (a.abs() + b.abs()).max(1e-300);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1)?;
        }
    }
    let x = 0.5 * (a + b);
    Ok((x, f(x)?))
}

/// Bisection for f(x) = level, with f(below) < level <= f(above).
fn bisect_level(f: &impl Fn(f64) -> Result<f64>, mut below: f64, mut above: f64, level: f64) -> Result<f64> {
    let tol = 1e-15 * (below.abs() + above.abs()).max(1e-300);
    for _ in 0..200 {
        if (above - below).abs() <= tol {
            break;
        }
        let mid = 0.5 * (below + above);
        if f(mid)? < level {
            below = mid;
        } else {
            above = mid;
        }
    }
    Ok(0.5 * (below + above))
}

/// Evaluates S21 over `delta_grid` together with the chain's cooperativity
/// and numeric bandwidth.
pub fn scatter(chain: &ChainSpec, delta_grid: &[f64]) -> Result<ScatteringResult> {
    let s21 = delta_grid.iter().map(|&d| s21(chain, d)).collect::<Result<Vec<_>>>()?;
    let kappa_d = match numeric_fwhm(chain) {
        Ok(k) => Some(k),
        Err(Error::MultiPeak { .. }) | Err(Error::NoBandwidth(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(ScatteringResult {
        delta_grid: delta_grid.to_vec(),
        s21,
        eta_4wm: transmission(chain, 0.0)?,
        cooperativity: cooperativity(chain)?,
        kappa_d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Envelope {
    Rectangular,
}

/// Largest grid spacing [rad/s] that resolves a window of length `t_d`:
/// one tenth of 1/t_d in cyclic frequency.
pub fn required_spacing(t_d: f64) -> f64 {
    2.0 * PI / (10.0 * t_d)
}

/// Normalised transform of a rectangular window of length `t_d`,
/// (t_d/2π) sinc(δ t_d/2), integrating to one over δ.
fn rect_kernel(delta: f64, t_d: f64) -> f64 {
    let x = 0.5 * delta * t_d;
    let sinc = if x.abs() < 1e-8 { 1.0 - x * x / 6.0 } else { x.sin() / x };
    t_d / (2.0 * PI) * sinc
}

/// Convolves sampled amplitudes with the window kernel and evaluates at δ=0
/// (trapezoid rule).
fn filter_at_zero(grid: &[f64], amp: &[Complex64], t_d: f64) -> Result<Complex64> {
    let required = required_spacing(t_d);
    let spacing = grid.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    if spacing > required * (1.0 + 1e-12) {
        return Err(Error::InsufficientResolution { spacing, required });
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..grid.len() - 1 {
        let h = grid[i + 1] - grid[i];
        let a = amp[i] * rect_kernel(-grid[i], t_d);
        let b = amp[i + 1] * rect_kernel(-grid[i + 1], t_d);
        acc += 0.5 * h * (a + b);
    }
    Ok(acc)
}

/// Efficiency seen by a finite detection window: |(S21 ∗ W)(0)|², with W
/// the normalised envelope transform.
pub fn pulse_filtered_efficiency(result: &ScatteringResult, t_d: f64, envelope: Envelope) -> Result<f64> {
    let Envelope::Rectangular = envelope;
    if !(t_d > 0.0) {
        return Err(Error::config("t_d", "must be positive"));
    }
    if result.delta_grid.len() < 2 {
        return Err(Error::config("delta_grid", "need at least two points"));
    }
    Ok(filter_at_zero(&result.delta_grid, &result.s21, t_d)?.norm_sqr())
}

/// Grid resolving a window `t_d` over the default span of `chain`.
pub fn filter_grid(chain: &ChainSpec, t_d: f64) -> Vec<f64> {
    let span = default_span(chain);
    let points = (2.0 * span / required_spacing(t_d)).ceil() as usize + 1;
    symmetric_grid(span, points | 1)
}

/// Flag probabilities seen through a rectangular detection window: each
/// mode amplitude is filtered before forming Σ_{k>j} κ_k |ψ_k|².
pub fn filtered_flag_probabilities(chain: &ChainSpec, t_d: f64) -> Result<Vec<f64>> {
    let grid = filter_grid(chain, t_d);
    let n = chain.modes.len();
    let mut system = Tridiagonal::new(chain)?;
    let mut sol = vec![Complex64::new(0.0, 0.0); n];
    let mut psi = vec![Complex64::new(0.0, 0.0); n];
    // Trapezoid weights folded into the kernel, as in `filter_at_zero`.
    for (i, &d) in grid.iter().enumerate() {
        let left = if i > 0 { d - grid[i - 1] } else { 0.0 };
        let right = if i + 1 < grid.len() { grid[i + 1] - d } else { 0.0 };
        let w = 0.5 * (left + right) * rect_kernel(-d, t_d);
        system.solve_into(d, &mut sol)?;
        for (p, s) in psi.iter_mut().zip(&sol) {
            *p += w * s;
        }
    }
    Ok(flag_probabilities_from(chain, &psi))
}

/// A line a0·Δ_p0 + a1·Δ_p1 = c in the pump-detuning plane [rad/s].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetuningLine {
    pub a0: f64,
    pub a1: f64,
    pub c: f64,
}

impl DetuningLine {
    /// dΔ_p0/dΔ_p1 along the line (Δ_p1 on the horizontal axis).
    pub fn slope(&self) -> f64 {
        if self.a0 == 0.0 {
            f64::INFINITY
        } else {
            -self.a1 / self.a0
        }
    }

    pub fn contains(&self, dp0: f64, dp1: f64, tol: f64) -> bool {
        (self.a0 * dp0 + self.a1 * dp1 - self.c).abs() <= tol
    }
}

/// Resonance lines of an N=2 chain, in detunings and in absolute pump
/// frequencies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonanceLines {
    /// First conversion only: Δ_p0 = 0, horizontal with Δ_p1 on the x axis.
    pub horizontal: DetuningLine,
    /// Full cascade: Δ_p0 + Δ_p1 = 0, slope -1.
    pub diagonal: DetuningLine,
    /// Matched pump 0 frequency [rad/s].
    pub omega_p0: f64,
    /// Matched pump 1 frequency [rad/s].
    pub omega_p1: f64,
    /// ω_p0 + ω_p1 along the diagonal [rad/s].
    pub omega_sum: f64,
}

/// Frequency matching for an N=2 chain. Shifts are signed (negative for
/// transmons): the converted photon lands in the downstream resonator
/// pulled by the newly excited qubit, and each qubit is Stark shifted by
/// its own pump by 2|ξ|²χ_qq.
pub fn pump_resonance_lines(chain: &ChainSpec) -> Result<ResonanceLines> {
    chain.require_n(2)?;
    let (b, m, w) = (chain.modes[0].omega, chain.modes[1].omega, chain.modes[2].omega);
    let (q0, q1) = (&chain.qubits[0], &chain.qubits[1]);
    let (p0, p1) = (&chain.pumps[0], &chain.pumps[1]);
    let q0_eff = q0.omega_ge + 2.0 * p0.xi.norm_sqr() * q0.chi_self;
    let q1_eff = q1.omega_ge + 2.0 * p1.xi.norm_sqr() * q1.chi_self;
    let m_flagged = m + q0.chi_right;
    let w_flagged = w + q1.chi_right;
    let omega_p0 = q0_eff + m_flagged - b;
    let omega_p1 = q1_eff + w_flagged - m_flagged;
    Ok(ResonanceLines {
        horizontal: DetuningLine { a0: 1.0, a1: 0.0, c: 0.0 },
        diagonal: DetuningLine { a0: 1.0, a1: 1.0, c: 0.0 },
        omega_p0,
        omega_p1,
        omega_sum: omega_p0 + omega_p1,
    })
}
