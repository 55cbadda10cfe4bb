//! Loader for the bundled 171Yb atomic-data file.

use once_cell::sync::Lazy;
use serde::Deserialize;

pub const YB171_TOML: &str = include_str!("../data/yb171.toml");

#[derive(Debug, Clone, Deserialize)]
pub struct AtomicData {
    pub schema_version: u32,
    pub species: String,
    pub mass_u: f64,
    pub nuclear_spin: f64,
    pub probe: ProbeLine,
    pub trap: TrapData,
    pub ground: GroundData,
    pub excited: ExcitedData,
    pub correction: CorrectionData,
    pub cascade: CascadeData,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ProbeLine {
    pub upper_term: String,
    pub energy_cm: f64,
    pub gamma_over_2pi_hz: f64,
    pub g_excited_hz_per_gauss: f64,
    pub g_ground_hz_per_gauss: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TrapData {
    pub wavelength_nm: f64,
    pub power_w: f64,
    pub waist_nm: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct GroundData {
    pub background_alpha_s_au: f64,
    pub lines: Vec<GroundLine>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct GroundLine {
    pub name: String,
    pub energy_cm: f64,
    pub j_upper: f64,
    pub d_au: f64,
    pub source: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ExcitedData {
    pub term: String,
    pub energy_cm: f64,
    pub lines: Vec<PartnerLine>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PartnerLine {
    pub name: String,
    pub energy_cm: f64,
    pub j_partner: f64,
    pub d_au: f64,
    pub source: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CorrectionData {
    pub pin_wavelength_nm: f64,
    pub alpha_diff_half: f64,
    pub alpha_diff_threehalf: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CascadeData {
    pub gamma_3p0_over_2pi_hz: f64,
    pub gamma_3p1_over_2pi_hz: f64,
    pub gamma_3p2_over_2pi_hz: f64,
    pub source: String,
}

impl ProbeLine {
    pub fn wavelength(&self) -> f64 {
        crate::constants::cm_to_lambda(self.energy_cm)
    }
    pub fn gamma(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.gamma_over_2pi_hz
    }
    /// Saturation intensity I_sat = pi h c Gamma / (3 lambda^3), W/m^2.
    pub fn isat(&self) -> f64 {
        let l = self.wavelength();
        std::f64::consts::PI * crate::constants::H_PLANCK * crate::constants::C * self.gamma()
            / (3.0 * l * l * l)
    }
}

impl TrapData {
    /// Peak intensity 2P / (pi w0^2), W/m^2.
    pub fn peak_intensity(&self) -> f64 {
        let w = self.waist_nm * 1e-9;
        2.0 * self.power_w / (std::f64::consts::PI * w * w)
    }
}

impl CascadeData {
    pub fn total_over_2pi(&self) -> f64 {
        self.gamma_3p0_over_2pi_hz + self.gamma_3p1_over_2pi_hz + self.gamma_3p2_over_2pi_hz
    }
    /// Fraction of 3S1 decays that do not return to the readout-cycling
    /// manifold through 3P1.
    pub fn loss_fraction(&self) -> f64 {
        1.0 - self.gamma_3p1_over_2pi_hz / self.total_over_2pi()
    }
    pub fn branch_3p1(&self) -> f64 {
        self.gamma_3p1_over_2pi_hz / self.total_over_2pi()
    }
}

pub static YB171: Lazy<AtomicData> =
    Lazy::new(|| toml::from_str(YB171_TOML).expect("bundled yb171.toml must parse"));

pub fn yb171() -> &'static AtomicData {
    &YB171
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_data_parses() {
        let d = yb171();
        assert_eq!(d.schema_version, 1);
        assert_eq!(d.ground.lines.len(), 2);
        assert_eq!(d.excited.lines.len(), 4);
        assert!(d.ground.lines.iter().all(|l| l.source == "external"));
    }

    #[test]
    fn probe_wavelength_is_556nm() {
        let l = yb171().probe.wavelength();
        assert!((l * 1e9 - 555.8).abs() < 0.05, "{}", l * 1e9);
    }

    #[test]
    fn cascade_loss_fraction_near_63_percent() {
        let f = yb171().cascade.loss_fraction();
        assert!((f - 0.63).abs() < 0.02, "{f}");
    }

    #[test]
    fn trap_peak_intensity() {
        let i = yb171().trap.peak_intensity();
        assert!((i / 9.93e9 - 1.0).abs() < 0.01, "{i}");
    }
}
