//! Physical constants (CODATA 2018 exact or recommended values) and
//! species data used throughout the crate.

/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K.
pub const K_B: f64 = 1.380_649e-23;
/// Elementary charge, C.
pub const E_CHARGE: f64 = 1.602_176_634e-19;
/// Vacuum permittivity, F/m.
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;
/// Atomic mass unit, kg.
pub const AMU: f64 = 1.660_539_066_60e-27;

/// Mass of a 40Ca+ ion, taken as 40 u.
pub const CA40_MASS: f64 = 40.0 * AMU;

/// Wavelength of the S1/2 - D5/2 qubit laser, m.
pub const QUBIT_WAVELENGTH: f64 = 729e-9;

/// Zeeman sensitivity of the S1/2(m=+1/2) - D5/2(m=+5/2) qubit transition, Hz per microgauss.
///
/// Ratio of the frequency-shift and field columns of the line-noise table
/// (104 Hz / 37.2 uG); agrees with the stretched-state Lande factors.
pub const QUBIT_FIELD_SENSITIVITY_HZ_PER_UG: f64 = 2.80;

/// Coulomb constant e^2 / (4 pi eps0), J m.
pub fn coulomb_constant() -> f64 {
    E_CHARGE * E_CHARGE / (4.0 * std::f64::consts::PI * EPSILON_0)
}
