//! Probe-driven scattering channels, Raman depolarization, and
//! tweezer-induced off-resonant loss out of the readout cycle.

use crate::angular::{wigner3j, wigner6j};
use crate::atomic::TweezerConfig;
use crate::constants::{C, HBAR};
use crate::data::{AtomicData, CascadeData};
use crate::error::{Result, SimError};

pub const TAU: f64 = std::f64::consts::TAU;

#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    /// total intensity in units of Isat
    pub intensity_total: f64,
    /// (sigma-minus, pi, sigma-plus) fractions, summing to 1
    pub polarization_split: (f64, f64, f64),
    /// rad/s relative to the free-space 0 -> mF'=-3/2 line
    pub detuning: f64,
    pub duration: f64, // s
}

impl ProbeConfig {
    /// paper imaging conditions: 1 Isat per polarization component,
    /// one linewidth red-detuned, 12 ms exposure
    pub fn paper_readout(gamma: f64) -> Self {
        ProbeConfig {
            intensity_total: 3.0,
            polarization_split: (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0),
            detuning: -gamma,
            duration: 12e-3,
        }
    }
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.polarization_split;
        if a < 0.0 || b < 0.0 || c < 0.0 || (a + b + c - 1.0).abs() > 1e-12 {
            return Err(SimError::Config(
                "polarization fractions must be nonnegative and sum to 1".into(),
            ));
        }
        if self.duration <= 0.0 {
            return Err(SimError::NonPositive("probe duration".into()));
        }
        Ok(())
    }
    fn components(&self) -> (f64, f64, f64) {
        (
            self.intensity_total * self.polarization_split.0,
            self.intensity_total * self.polarization_split.1,
            self.intensity_total * self.polarization_split.2,
        )
    }
}

/// Field-dependent detunings seen by the probe, all in rad/s.
#[derive(Debug, Clone, Copy)]
pub struct FieldPoint {
    pub b_dc: f64, // G
    /// ground qubit splitting 2 pi |g_g| B
    pub delta01: f64,
    /// probe detuning from each excited mF line (index 0..4 = mF -3/2..+3/2),
    /// as seen from |0>; add delta01 for |1>
    pub zeeman_detunings: [f64; 4],
}

#[derive(Debug, Clone, Copy)]
pub struct FieldParams {
    pub g_excited_hz_per_gauss: f64,
    pub g_ground_hz_per_gauss: f64,
    /// ground trap depth |U0|/h in Hz
    pub trap_depth_hz: f64,
    /// relative differential light shifts of the |mF| = 3/2 and 1/2 pairs
    pub diff_threehalf: f64,
    pub diff_half: f64,
}

impl FieldPoint {
    pub fn build(b_gauss: f64, probe: &ProbeConfig, p: &FieldParams) -> Self {
        let mf = [-1.5, -0.5, 0.5, 1.5];
        // in-trap line position (Hz) of 0 -> mF' relative to the free-space line
        let line = |m: f64| {
            let diff = if m.abs() > 1.0 { p.diff_threehalf } else { p.diff_half };
            p.g_excited_hz_per_gauss * m * b_gauss - diff * p.trap_depth_hz
        };
        let base = line(-1.5);
        let mut det = [0.0; 4];
        for (i, &m) in mf.iter().enumerate() {
            det[i] = probe.detuning - TAU * (line(m) - base);
        }
        FieldPoint {
            b_dc: b_gauss,
            delta01: TAU * p.g_ground_hz_per_gauss.abs() * b_gauss,
            zeeman_detunings: det,
        }
    }
    fn det(&self, m: f64) -> f64 {
        self.zeeman_detunings[(m + 1.5).round() as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pol {
    SigmaMinus,
    Pi,
    SigmaPlus,
}

#[derive(Debug, Clone)]
pub struct RateChannel {
    pub from_state: u8, // ground qubit 0 or 1
    pub to_state: u8,
    pub excited_mf: f64,
    pub polarization: Pol,
    pub rate: f64, // 1/s
}

#[derive(Debug, Clone)]
pub struct RateSet {
    pub r00: f64,
    pub r01: f64,
    pub r10: f64,
    pub r11: f64,
    pub channels: Vec<RateChannel>,
}

/// Lorentzian scattering channel: (Gamma/2) * pref * s / (1 + 4(det/Gamma)^2 + s)
fn lorentz(gamma: f64, s: f64, pref: f64, det: f64) -> f64 {
    gamma / 2.0 * pref * s / (1.0 + 4.0 * (det / gamma) * (det / gamma) + s)
}

/// All ten scattering channels of the two ground states through the 3P1
/// F=3/2 manifold, with per-polarization saturation intensities.
pub fn scattering_rates(field: &FieldPoint, probe: &ProbeConfig, gamma: f64) -> RateSet {
    let (i_sm, i_pi, i_sp) = probe.components();
    let d01 = field.delta01;
    let d = |m: f64| field.det(m);
    use Pol::*;
    let chan = |from: u8, to: u8, m: f64, pol: Pol, s: f64, pref: f64, det: f64| RateChannel {
        from_state: from,
        to_state: to,
        excited_mf: m,
        polarization: pol,
        rate: lorentz(gamma, s, pref, det),
    };
    let channels = vec![
        // |0> (mF=-1/2) cycling back to |0>
        chan(0, 0, -1.5, SigmaMinus, i_sm, 1.0, d(-1.5)),
        chan(0, 0, -0.5, Pi, 2.0 / 3.0 * i_pi, 2.0 / 3.0, d(-0.5)),
        chan(0, 0, 0.5, SigmaPlus, 1.0 / 3.0 * i_sp, 1.0 / 3.0, d(0.5)),
        // |0> pumped to |1>
        chan(0, 1, -0.5, Pi, 2.0 / 3.0 * i_pi, 1.0 / 3.0, d(-0.5)),
        chan(0, 1, 0.5, SigmaPlus, 1.0 / 3.0 * i_sp, 2.0 / 3.0, d(0.5)),
        // |1> (mF=+1/2) pumped to |0>
        chan(1, 0, -0.5, SigmaMinus, 2.0 / 3.0 * i_sm, 1.0 / 3.0, d(-0.5) + d01),
        chan(1, 0, 0.5, Pi, 1.0 / 3.0 * i_pi, 2.0 / 3.0, d(0.5) + d01),
        // |1> cycling back to |1>
        chan(1, 1, -0.5, SigmaMinus, 1.0 / 3.0 * i_sm, 1.0 / 3.0, d(-0.5) + d01),
        chan(1, 1, 0.5, Pi, 2.0 / 3.0 * i_pi, 2.0 / 3.0, d(0.5) + d01),
        chan(1, 1, 1.5, SigmaPlus, i_sp, 1.0, d(1.5) + d01),
    ];
    let sum = |f: u8, t: u8| -> f64 {
        channels
            .iter()
            .filter(|c| c.from_state == f && c.to_state == t)
            .map(|c| c.rate)
            .sum()
    };
    RateSet {
        r00: sum(0, 0),
        r01: sum(0, 1),
        r10: sum(1, 0),
        r11: sum(1, 1),
        channels,
    }
}

/// Effective two-photon Raman Rabi frequency through the mF' = +-1/2
/// intermediate states, Omega = sum_m sqrt(2/9) Gamma^2/(2 Delta_m) (I/3)/(2 Isat).
pub fn raman_rabi(field: &FieldPoint, probe: &ProbeConfig, gamma: f64) -> Result<f64> {
    let mut omega = 0.0;
    for m in [-0.5, 0.5] {
        let det = field.det(m);
        if det.abs() < 1e-3 * gamma {
            return Err(SimError::ResonanceProximity(format!(
                "Raman intermediate mF' = {m}"
            )));
        }
        omega += (2.0f64 / 9.0).sqrt() * gamma * gamma / (2.0 * det)
            * (probe.intensity_total / 3.0)
            / 2.0;
    }
    Ok(omega)
}

/// Steady-state 3P1 population on a driven cycling transition:
/// P = (1/2) s / (1 + 4(Delta/Gamma)^2 + s).
pub fn excited_fraction(intensity_isat: f64, detuning: f64, gamma: f64) -> f64 {
    0.5 * intensity_isat / (1.0 + 4.0 * (detuning / gamma) * (detuning / gamma) + intensity_isat)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurvivalModel {
    /// every 3S1 excitation ejects the atom (dashed curve)
    Pessimistic,
    /// decays returning to 3P1 survive; only the 3P0/3P2 branch is lost
    Optimistic,
}

/// mF-dependent reduction of the off-resonant scattering rate for a
/// pi-polarized tweezer: 3 * sum_F' (2F+1)(2F'+1) |3j 6j|^2.
pub fn mf_reduction_factor(f: f64, m_f: f64, nuclear_spin: f64) -> f64 {
    let mut s = 0.0;
    for fp in [0.5, 1.5] {
        if m_f.abs() > fp {
            continue;
        }
        let w3 = wigner3j(fp, 1.0, f, m_f, 0.0, -m_f);
        let w6 = wigner6j(1.0, 1.0, 1.0, fp, f, nuclear_spin);
        s += (2.0 * f + 1.0) * (2.0 * fp + 1.0) * (w3 * w6) * (w3 * w6);
    }
    3.0 * s
}

/// Off-resonant scattering of trap photons on 3P1 -> 3S1, weighted by the
/// in-probe excited-state fraction; returns (loss_rate 1/s, lifetime s).
pub fn offresonant_loss(
    tweezer: &TweezerConfig,
    initial_mf: f64,
    probe_intensity_isat: f64,
    probe_detuning: f64,
    model: SurvivalModel,
    data: &AtomicData,
) -> Result<(f64, f64)> {
    let e_3s1_cm = data
        .excited
        .lines
        .iter()
        .find(|l| l.name.contains("3S1"))
        .map(|l| l.energy_cm - data.excited.energy_cm)
        .ok_or_else(|| SimError::Config("no 3S1 partner line in data".into()))?;
    let omega0 = crate::constants::cm_to_omega(e_3s1_cm);
    let omega = TAU * C / tweezer.wavelength;
    if ((omega - omega0) / omega0).abs() < 1e-6 {
        return Err(SimError::TrapResonant("3P1 <-> 3S1".into()));
    }
    let gamma1 = TAU * data.cascade.gamma_3p1_over_2pi_hz; // partial width of 3S1 -> 3P1
    let i_trap = tweezer.peak_intensity();
    let gamma_sc = 3.0 * std::f64::consts::PI * C * C * gamma1 * gamma1
        / (2.0 * HBAR * omega0.powi(3))
        * (omega / omega0).powi(3)
        * (1.0 / (omega0 - omega) + 1.0 / (omega0 + omega)).powi(2)
        * i_trap;
    let red = mf_reduction_factor(1.5, initial_mf, data.nuclear_spin);
    let p_exc = excited_fraction(
        probe_intensity_isat,
        probe_detuning,
        TAU * data.probe.gamma_over_2pi_hz,
    );
    let excitation_rate = gamma_sc * red * p_exc;
    let loss_rate = match model {
        SurvivalModel::Pessimistic => excitation_rate,
        SurvivalModel::Optimistic => excitation_rate * data.cascade.loss_fraction(),
    };
    Ok((loss_rate, 1.0 / loss_rate))
}

/// Normalized decay distribution over (F_l, m_l) of a hyperfine state
/// (J_u, F_u, m_u) decaying to electronic level J_l with hyperfine levels
/// `f_lowers`, nuclear spin 1/2.
fn decay_dist(
    j_u: f64,
    f_u: f64,
    m_u: f64,
    j_l: f64,
    f_lowers: &[f64],
) -> Vec<((f64, f64), f64)> {
    let i = 0.5;
    let mut out: Vec<((f64, f64), f64)> = Vec::new();
    for &fl in f_lowers {
        let s6 = wigner6j(j_u, f_u, i, fl, j_l, 1.0);
        let strength = (2.0 * f_u + 1.0) * (2.0 * fl + 1.0) * s6 * s6;
        for q in [-1.0, 0.0, 1.0] {
            let ml = m_u + q;
            if ml.abs() > fl {
                continue;
            }
            let w3 = wigner3j(fl, 1.0, f_u, -ml, q, m_u);
            let amp = w3 * w3 * strength;
            if amp > 0.0 {
                if let Some(e) = out.iter_mut().find(|e| e.0 == (fl, ml)) {
                    e.1 += amp;
                } else {
                    out.push(((fl, ml), amp));
                }
            }
        }
    }
    let tot: f64 = out.iter().map(|e| e.1).sum();
    out.iter_mut().for_each(|e| e.1 /= tot);
    out
}

/// Probability that a single 3S1 excitation from the cycling state ends with
/// the ground qubit flipped: branch back through 3P1, then enumerate the
/// two-step spontaneous cascade to the ground mF = +1/2 state.
pub fn depol_after_repump(cascade: &CascadeData) -> f64 {
    // pi tweezer light from 3P1 F=3/2 m=-3/2 reaches only 3S1 F=3/2 m=-3/2
    let step1 = decay_dist(1.0, 1.5, -1.5, 1.0, &[0.5, 1.5]); // 3S1 -> 3P1
    let mut flip = 0.0;
    for ((f, m), w) in step1 {
        let step2 = decay_dist(1.0, f, m, 0.0, &[0.5]); // 3P1 -> 1S0
        for ((_, ml), w2) in step2 {
            if ml == 0.5 {
                flip += w * w2;
            }
        }
    }
    cascade.branch_3p1() * flip
}

/// Rabi frequency from an AC field: Omega = (1/2) g mu_B B_AC / hbar, i.e.
/// Omega/2pi = |g| B_AC / 2 with g in Hz/G per mF.
pub fn ac_rabi_from_field(b_ac_gauss: f64, g_hz_per_gauss: f64) -> f64 {
    assert!(b_ac_gauss >= 0.0);
    TAU * g_hz_per_gauss.abs() * b_ac_gauss / 2.0
}

/// Qubit Larmor splitting: delta01/2pi = |g_g| B.
pub fn larmor_splitting_hz(b_gauss: f64, g_hz_per_gauss: f64) -> f64 {
    g_hz_per_gauss.abs() * b_gauss
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atomic::PolarizabilityModel;
    use crate::data::yb171;
    use approx::assert_abs_diff_eq;

    fn setup() -> (FieldParams, ProbeConfig, f64) {
        let d = yb171();
        let model = PolarizabilityModel::from_data(d).unwrap();
        let tw = TweezerConfig::from_data(&d.trap);
        let gamma = d.probe.gamma();
        let params = FieldParams {
            g_excited_hz_per_gauss: d.probe.g_excited_hz_per_gauss,
            g_ground_hz_per_gauss: d.probe.g_ground_hz_per_gauss,
            trap_depth_hz: model.trap_depth_hz(&tw).unwrap(),
            diff_threehalf: d.correction.alpha_diff_threehalf,
            diff_half: d.correction.alpha_diff_half,
        };
        (params, ProbeConfig::paper_readout(gamma), gamma)
    }

    #[test]
    fn cycling_channel_rate_oracle() {
        // sigma- channel alone at Delta = -Gamma, I = 1 Isat: Gamma/2 * 1/6
        let gamma = yb171().probe.gamma();
        let r = lorentz(gamma, 1.0, 1.0, -gamma);
        assert_abs_diff_eq!(r, gamma / 12.0, epsilon = 1e-9);
        assert!((r - 95.2e3).abs() < 1e3, "{r}");
    }

    #[test]
    fn r00_dominates_at_paper_field() {
        let (p, probe, gamma) = setup();
        let f = FieldPoint::build(58.0, &probe, &p);
        let r = scattering_rates(&f, &probe, gamma);
        assert!(r.r00 > 50e3, "{}", r.r00);
        assert!(r.r01 < 0.05 * r.r00);
        assert!(r.channels.iter().all(|c| c.rate >= 0.0));
        assert_abs_diff_eq!(
            r.r00,
            r.channels
                .iter()
                .filter(|c| c.from_state == 0 && c.to_state == 0)
                .map(|c| c.rate)
                .sum::<f64>(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn depolarizing_rates_inverse_square_in_b() {
        let (p, probe, gamma) = setup();
        let bs: Vec<f64> = (0..15)
            .map(|i| 30.0 * (200.0f64 / 30.0).powf(i as f64 / 14.0))
            .collect();
        let ys: Vec<f64> = bs
            .iter()
            .map(|&b| {
                let f = FieldPoint::build(b, &probe, &p);
                let r = scattering_rates(&f, &probe, gamma);
                (r.r01 + r.r10).ln()
            })
            .collect();
        let xs: Vec<f64> = bs.iter().map(|b| b.ln()).collect();
        let slope = crate::analysis::linear_fit(&xs, &ys).0;
        assert!((slope + 2.0).abs() < 0.1, "{slope}");
        // monotone decrease above 20 G
        let mut prev = f64::INFINITY;
        for b in [20.0, 40.0, 80.0, 160.0] {
            let f = FieldPoint::build(b, &probe, &p);
            let r = scattering_rates(&f, &probe, gamma);
            assert!(r.r01 + r.r10 < prev);
            prev = r.r01 + r.r10;
        }
    }

    #[test]
    fn pure_sigma_minus_gives_zero_r01() {
        let (p, mut probe, gamma) = setup();
        probe.polarization_split = (1.0, 0.0, 0.0);
        let f = FieldPoint::build(58.0, &probe, &p);
        let r = scattering_rates(&f, &probe, gamma);
        assert_eq!(r.r01, 0.0);
    }

    #[test]
    fn raman_rabi_scales_inverse_b_and_oracle() {
        let (p, probe, gamma) = setup();
        let om = |b: f64| {
            raman_rabi(&FieldPoint::build(b, &probe, &p), &probe, gamma)
                .unwrap()
                .abs()
        };
        // large-field check: doubling B about halves Omega
        let ratio = om(400.0) / om(800.0);
        assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
        // plug-in oracle at 58 G
        let f = FieldPoint::build(58.0, &probe, &p);
        let mut expect = 0.0;
        for m in [-0.5, 0.5] {
            expect += (2.0f64 / 9.0).sqrt() * gamma * gamma / (2.0 * f.det(m)) / 2.0;
        }
        assert_abs_diff_eq!(raman_rabi(&f, &probe, gamma).unwrap(), expect, epsilon = 1e-9);
        // zero intensity
        let mut probe0 = probe;
        probe0.intensity_total = 0.0;
        assert_eq!(raman_rabi(&f, &probe0, gamma).unwrap(), 0.0);
    }

    #[test]
    fn excited_fraction_cases() {
        let gamma = 1.0;
        assert_abs_diff_eq!(excited_fraction(1.0, 0.0, gamma), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(
            excited_fraction(1.0, -gamma, gamma),
            1.0 / 12.0,
            epsilon = 1e-12
        );
        assert!(excited_fraction(1e12, 0.0, gamma) < 0.5);
        assert!(excited_fraction(1e12, 0.0, gamma) > 0.499);
        // strictly decreasing in |Delta|
        let mut prev = 1.0;
        for d in [0.0, 0.5, 1.0, 2.0] {
            let e = excited_fraction(1.0, d, gamma);
            assert!(e < prev);
            prev = e;
        }
    }

    #[test]
    fn reduction_factors() {
        assert_abs_diff_eq!(mf_reduction_factor(1.5, 1.5, 0.5), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(mf_reduction_factor(1.5, 0.5, 0.5), 1.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn loss_lifetimes_near_paper() {
        let d = yb171();
        let tw = TweezerConfig::from_data(&d.trap);
        let gamma = d.probe.gamma();
        let (_, t32) = offresonant_loss(&tw, 1.5, 1.0, -gamma, SurvivalModel::Pessimistic, d).unwrap();
        let (_, t12) = offresonant_loss(&tw, 0.5, 1.0, -gamma, SurvivalModel::Pessimistic, d).unwrap();
        assert!((t32 / 0.8 - 1.0).abs() < 0.15, "{t32}");
        assert!((t12 / 2.5 - 1.0).abs() < 0.15, "{t12}");
        let (_, t32o) = offresonant_loss(&tw, 1.5, 1.0, -gamma, SurvivalModel::Optimistic, d).unwrap();
        assert!(t32o > t32);
    }

    #[test]
    fn trap_resonance_guard() {
        let d = yb171();
        let mut tw = TweezerConfig::from_data(&d.trap);
        // 3S1 - 3P1 gap = 14702.685 cm^-1 -> 680.15 nm
        tw.wavelength = 0.01 / 14702.685;
        let e = offresonant_loss(&tw, 1.5, 1.0, 0.0, SurvivalModel::Pessimistic, d);
        assert!(matches!(e, Err(SimError::TrapResonant(_))));
    }

    #[test]
    fn depol_after_repump_is_0082() {
        let v = depol_after_repump(&yb171().cascade);
        assert!((v - 0.082).abs() < 0.002, "{v}");
    }

    #[test]
    fn depol_after_repump_no_return_path() {
        let c = CascadeData {
            gamma_3p0_over_2pi_hz: 2.05e6,
            gamma_3p1_over_2pi_hz: 0.0,
            gamma_3p2_over_2pi_hz: 9.43e6,
            source: "external".into(),
        };
        assert_eq!(depol_after_repump(&c), 0.0);
    }

    #[test]
    fn ac_rabi_oracle() {
        let om = ac_rabi_from_field(0.29, 750.0);
        assert!((om / TAU - 110.0).abs() < 5.0, "{}", om / TAU);
        assert_eq!(ac_rabi_from_field(0.0, 750.0), 0.0);
        assert!((larmor_splitting_hz(58.0, -750.0) - 43.5e3).abs() < 100.0);
    }
}
