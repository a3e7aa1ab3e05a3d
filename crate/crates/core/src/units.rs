//! Physical constants (exact SI values) and the single Hz <-> rad/s boundary.

use std::f64::consts::PI;

/// Planck constant [J s].
pub const H: f64 = 6.626_070_15e-34;
/// Reduced Planck constant [J s].
pub const HBAR: f64 = H / (2.0 * PI);
/// Boltzmann constant [J/K].
pub const K_B: f64 = 1.380_649e-23;

/// Cyclic frequency [Hz] to angular frequency [rad/s].
#[inline]
pub fn hz(f: f64) -> f64 {
    2.0 * PI * f
}

/// Angular frequency [rad/s] to cyclic frequency [Hz].
#[inline]
pub fn to_hz(omega: f64) -> f64 {
    omega / (2.0 * PI)
}

/// Photon energy ħω at a cyclic frequency [Hz], in joules.
#[inline]
pub fn photon_energy(f: f64) -> f64 {
    H * f
}
