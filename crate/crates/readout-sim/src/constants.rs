//! CODATA physical constants (SI) and unit conversions.

pub const HBAR: f64 = 1.054_571_817e-34; // J s
pub const H_PLANCK: f64 = 6.626_070_15e-34; // J s
pub const C: f64 = 299_792_458.0; // m/s
pub const EPSILON0: f64 = 8.854_187_812_8e-12; // F/m
pub const KB: f64 = 1.380_649e-23; // J/K
pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24; // J/T
pub const AMU: f64 = 1.660_539_066_60e-27; // kg
pub const E_CHARGE: f64 = 1.602_176_634e-19; // C
pub const A_BOHR: f64 = 5.291_772_109_03e-11; // m
pub const G_EARTH: f64 = 9.806_65; // m/s^2

/// 1 atomic unit of polarizability in SI (C^2 m^2 / J).
pub const ALPHA_AU: f64 = 1.648_777_274_36e-41;

/// cm^-1 -> angular frequency (rad/s): omega = 2 pi c * (100 * E_cm).
pub fn cm_to_omega(e_cm: f64) -> f64 {
    2.0 * std::f64::consts::PI * C * 100.0 * e_cm
}

/// cm^-1 -> wavelength in m.
pub fn cm_to_lambda(e_cm: f64) -> f64 {
    0.01 / e_cm
}

#[derive(Debug, Clone, Copy)]
pub struct PhysicalConstants {
    pub hbar: f64,
    pub c: f64,
    pub epsilon0: f64,
    pub kb: f64,
    pub bohr_magneton: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            hbar: HBAR,
            c: C,
            epsilon0: EPSILON0,
            kb: KB,
            bohr_magneton: BOHR_MAGNETON,
        }
    }
}
