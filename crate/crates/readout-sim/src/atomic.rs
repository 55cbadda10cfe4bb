//! Polarizabilities, light shifts, and Stark+Zeeman state mixing.
//!
//! Sum-over-states polarizabilities are evaluated in atomic units from the
//! bundled line list; light shifts convert to SI via the tweezer intensity.

use crate::angular::wigner6j;
use crate::constants::{self, ALPHA_AU, C, EPSILON0, HBAR, H_PLANCK};
use crate::data::{AtomicData, TrapData};
use crate::error::{Result, SimError};
use nalgebra::{Complex, SMatrix};

/// Energy conversion: 1 cm^-1 in atomic units (Hartree).
pub const AU_PER_CM: f64 = 4.556_335_252_9e-6;

pub fn omega_au_from_lambda_nm(lambda_nm: f64) -> f64 {
    AU_PER_CM * 1e7 / lambda_nm
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelState {
    pub term_label: String,
    pub f: f64,
    pub m_f: f64,
    /// frequency shift per field per mF, Hz/G
    pub g_factor: f64,
}

#[derive(Debug, Clone)]
pub struct TransitionLine {
    pub lower: LevelState,
    pub upper: LevelState,
    pub wavelength: f64,      // m
    pub linewidth_gamma: f64, // rad/s
    pub isat: f64,            // W/m^2
    pub branching_ratio: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct TweezerConfig {
    pub wavelength: f64,   // m
    pub power: f64,        // W
    pub waist_radius: f64, // m, 1/e^2
}

impl TweezerConfig {
    pub fn from_data(t: &TrapData) -> Self {
        TweezerConfig {
            wavelength: t.wavelength_nm * 1e-9,
            power: t.power_w,
            waist_radius: t.waist_nm * 1e-9,
        }
    }
    pub fn peak_intensity(&self) -> f64 {
        2.0 * self.power / (std::f64::consts::PI * self.waist_radius * self.waist_radius)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PolarizationState {
    pub gamma_ellipticity: f64, // rad
    pub theta_tilt: f64,        // rad
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PolarizabilitySet {
    pub alpha_scalar: f64, // a.u.
    pub alpha_vector: f64,
    pub alpha_tensor: f64,
}

/// One partner line for the sum-over-states evaluation; `omega_ki_cm` is the
/// signed transition energy E_k - E_i in cm^-1 (negative for downward).
#[derive(Debug, Clone)]
pub struct SumLine {
    pub name: String,
    pub j_partner: f64,
    pub omega_ki_cm: f64,
    pub d_au: f64,
}

fn phase(x: f64) -> f64 {
    if (x.round() as i64).rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Per-line coefficient of |d|^2 in the reduced polarizability alpha^(K).
fn alpha_k_coeff(j: f64, jp: f64, wki_au: f64, omega_au: f64, k: u32) -> f64 {
    let kf = k as f64;
    let sj = wigner6j(1.0, kf, 1.0, j, jp, j);
    let rk = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    phase(kf + j + 1.0)
        * (2.0 * kf + 1.0).sqrt()
        * phase(jp)
        * sj
        * (1.0 / (wki_au - omega_au) + rk / (wki_au + omega_au))
}

/// Per-line coefficients of |d|^2 in (alpha_S, alpha_V, alpha_T) for a level
/// with electronic J, hyperfine F, nuclear spin I.
fn svt_coeffs(j: f64, f: f64, i: f64, jp: f64, wki_au: f64, omega_au: f64) -> (f64, f64, f64) {
    let cs = alpha_k_coeff(j, jp, wki_au, omega_au, 0) / (3.0 * (2.0 * j + 1.0)).sqrt();
    let mut cv = 0.0;
    let mut ct = 0.0;
    if f > 0.01 {
        cv = phase(j + i + f)
            * (2.0 * f * (2.0 * f + 1.0) / (f + 1.0)).sqrt()
            * wigner6j(f, 1.0, f, j, i, j)
            * alpha_k_coeff(j, jp, wki_au, omega_au, 1);
    }
    if f > 0.6 {
        ct = phase(j + i + f + 1.0)
            * (2.0 * f * (2.0 * f - 1.0) * (2.0 * f + 1.0) / (3.0 * (f + 1.0) * (2.0 * f + 3.0)))
                .sqrt()
            * wigner6j(f, 2.0, f, j, i, j)
            * alpha_k_coeff(j, jp, wki_au, omega_au, 2);
    }
    (cs, cv, ct)
}

fn check_resonance(lines: &[SumLine], omega_au: f64) -> Result<()> {
    for l in lines {
        let wki = l.omega_ki_cm.abs() * AU_PER_CM;
        if wki > 0.0 && ((wki - omega_au) / wki).abs() < 1e-9 {
            return Err(SimError::ResonanceProximity(l.name.clone()));
        }
    }
    Ok(())
}

/// Sum-over-states polarizability of a (J, F) level at angular frequency
/// `omega_au` (atomic units), in atomic units.
pub fn polarizability(
    j: f64,
    f: f64,
    nuclear_spin: f64,
    lines: &[SumLine],
    omega_au: f64,
) -> Result<PolarizabilitySet> {
    check_resonance(lines, omega_au)?;
    let mut out = PolarizabilitySet::default();
    for l in lines {
        let (cs, cv, ct) = svt_coeffs(j, f, nuclear_spin, l.j_partner, l.omega_ki_cm * AU_PER_CM, omega_au);
        let d2 = l.d_au * l.d_au;
        out.alpha_scalar += cs * d2;
        out.alpha_vector += cv * d2;
        out.alpha_tensor += ct * d2;
    }
    Ok(out)
}

/// Solve the 2x2 linear system formed by the |mF|=3/2 and |mF|=1/2 relative
/// light shifts (theta = 0, tensor factors +1 and -1):
///   d32 * g = delta_alpha_S + alpha_T
///   d12 * g = delta_alpha_S - alpha_T
pub fn solve_polarizability_correction(
    diff_half: f64,
    diff_threehalf: f64,
    ground_alpha: f64,
) -> Result<(f64, f64)> {
    // kept general: row coefficients from the tensor factors
    let a: [[f64; 2]; 2] = [[1.0, 1.0], [1.0, -1.0]]; // [dAS, aT] rows: |3/2|, |1/2|
    let b = [diff_threehalf * ground_alpha, diff_half * ground_alpha];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det.abs() < 1e-12 {
        return Err(SimError::SingularSystem("polarizability correction".into()));
    }
    let d_as = (b[0] * a[1][1] - a[0][1] * b[1]) / det;
    let a_t = (a[0][0] * b[1] - b[0] * a[1][0]) / det;
    Ok((a_t, d_as))
}

/// The full polarizability model for 1S0 and 3P1 built from the data file,
/// with the measurement-driven additive correction pinned at the operating
/// wavelength.
#[derive(Debug, Clone)]
pub struct PolarizabilityModel {
    nuclear_spin: f64,
    ground_lines: Vec<SumLine>,
    background: f64,
    excited_lines: Vec<SumLine>,
    pub off_s: f64,
    pub off_t: f64,
    pub solved_alpha_t: f64,
    pub solved_delta_alpha_s: f64,
}

impl PolarizabilityModel {
    pub fn from_data(d: &AtomicData) -> Result<Self> {
        let ground_lines: Vec<SumLine> = d
            .ground
            .lines
            .iter()
            .map(|l| SumLine {
                name: l.name.clone(),
                j_partner: l.j_upper,
                omega_ki_cm: l.energy_cm,
                d_au: l.d_au,
            })
            .collect();
        let excited_lines: Vec<SumLine> = d
            .excited
            .lines
            .iter()
            .map(|l| SumLine {
                name: l.name.clone(),
                j_partner: l.j_partner,
                omega_ki_cm: l.energy_cm - d.excited.energy_cm,
                d_au: l.d_au,
            })
            .collect();
        let mut m = PolarizabilityModel {
            nuclear_spin: d.nuclear_spin,
            ground_lines,
            background: d.ground.background_alpha_s_au,
            excited_lines,
            off_s: 0.0,
            off_t: 0.0,
            solved_alpha_t: 0.0,
            solved_delta_alpha_s: 0.0,
        };
        let pin = omega_au_from_lambda_nm(d.correction.pin_wavelength_nm);
        let g0 = m.ground_scalar_au(pin)?;
        let (a_t, d_as) = solve_polarizability_correction(
            d.correction.alpha_diff_half,
            d.correction.alpha_diff_threehalf,
            g0,
        )?;
        let raw = m.excited_raw_au(pin)?;
        m.off_s = (raw.alpha_scalar - g0) - d_as;
        m.off_t = raw.alpha_tensor - a_t;
        m.solved_alpha_t = a_t;
        m.solved_delta_alpha_s = d_as;
        Ok(m)
    }

    /// Ground 1S0 scalar polarizability (a.u.) at omega in a.u.
    pub fn ground_scalar_au(&self, omega_au: f64) -> Result<f64> {
        let p = polarizability(0.0, 0.5, self.nuclear_spin, &self.ground_lines, omega_au)?;
        Ok(p.alpha_scalar + self.background)
    }

    /// Raw (uncorrected) 3P1 F=3/2 polarizabilities.
    pub fn excited_raw_au(&self, omega_au: f64) -> Result<PolarizabilitySet> {
        polarizability(1.0, 1.5, self.nuclear_spin, &self.excited_lines, omega_au)
    }

    /// Corrected 3P1 polarizabilities: scalar and tensor shifted so that the
    /// measured differential light shifts are reproduced at the pinned
    /// wavelength; the vector part is left as computed.
    pub fn excited_corrected_au(&self, omega_au: f64) -> Result<PolarizabilitySet> {
        let mut p = self.excited_raw_au(omega_au)?;
        p.alpha_scalar -= self.off_s;
        p.alpha_tensor -= self.off_t;
        Ok(p)
    }

    pub fn ground_scalar(&self, lambda_nm: f64) -> Result<f64> {
        self.ground_scalar_au(omega_au_from_lambda_nm(lambda_nm))
    }
    pub fn excited_raw(&self, lambda_nm: f64) -> Result<PolarizabilitySet> {
        self.excited_raw_au(omega_au_from_lambda_nm(lambda_nm))
    }
    pub fn excited_corrected(&self, lambda_nm: f64) -> Result<PolarizabilitySet> {
        self.excited_corrected_au(omega_au_from_lambda_nm(lambda_nm))
    }

    /// Ground-state trap depth |U0|/h in Hz for the given tweezer.
    pub fn trap_depth_hz(&self, tw: &TweezerConfig) -> Result<f64> {
        let a = self.ground_scalar(tw.wavelength * 1e9)?;
        Ok(au_to_hz_per_au(tw.peak_intensity()) * a)
    }
}

/// Light-shift conversion factor: Hz of |U|/h per a.u. of polarizability at
/// intensity I.
pub fn au_to_hz_per_au(intensity: f64) -> f64 {
    intensity / (2.0 * EPSILON0 * C) * ALPHA_AU / H_PLANCK
}

/// Total light shift (J, negative for a red-detuned trap) of a state with
/// polarizabilities `pol` (a.u.) at the tweezer peak intensity.
pub fn light_shift(
    pol: &PolarizabilitySet,
    tweezer: &TweezerConfig,
    theta_tilt: f64,
    f: f64,
    m_f: f64,
) -> f64 {
    let mut alpha = pol.alpha_scalar;
    if f >= 1.0 {
        let ang = (3.0 * theta_tilt.cos().powi(2) - 1.0) / 2.0;
        let zee = (3.0 * m_f * m_f - f * (f + 1.0)) / (f * (2.0 * f - 1.0));
        alpha += pol.alpha_tensor * ang * zee;
    }
    -tweezer.peak_intensity() / (2.0 * EPSILON0 * C) * alpha * ALPHA_AU
}

/// Reduced dipole matrix element (C m) from a partial linewidth:
/// Gamma = omega^3 |d|^2 / (3 pi eps0 hbar c^3 (2J'+1)).
pub fn reduced_dipole_from_lifetime(line: &TransitionLine, j_upper: f64) -> Result<f64> {
    if line.linewidth_gamma <= 0.0 || line.wavelength <= 0.0 {
        return Err(SimError::NonPositive(
            "linewidth and wavelength must be positive".into(),
        ));
    }
    let omega = 2.0 * std::f64::consts::PI * C / line.wavelength;
    let gamma_partial = line.linewidth_gamma * line.branching_ratio;
    let d2 = gamma_partial * 3.0 * std::f64::consts::PI * EPSILON0 * HBAR * C.powi(3)
        * (2.0 * j_upper + 1.0)
        / omega.powi(3);
    Ok(d2.sqrt())
}

/// Partial linewidth (rad/s) from a reduced dipole element in a.u.
pub fn linewidth_from_reduced_dipole(d_au: f64, lambda: f64, j_upper: f64) -> f64 {
    let d = d_au * constants::E_CHARGE * constants::A_BOHR;
    let omega = 2.0 * std::f64::consts::PI * C / lambda;
    omega.powi(3) * d * d
        / (3.0 * std::f64::consts::PI * EPSILON0 * HBAR * C.powi(3) * (2.0 * j_upper + 1.0))
}

#[derive(Debug, Clone)]
pub enum MagicSearchResult {
    Crossings(Vec<f64>),
    /// identical levels: zero differential everywhere; endpoints returned
    DegenerateEverywhere(f64, f64),
}

/// Roots of the differential polarizability between the ground state and the
/// corrected 3P1 |mF| state (theta = 0) over `range_nm`, by sign-change
/// bisection on a 0.1 nm grid refined to 1e-4 nm. `mf_abs = None` asks for
/// the Zeeman-convergence points where the corrected tensor part vanishes.
pub fn magic_wavelength_search(
    model: &PolarizabilityModel,
    mf_abs: Option<f64>,
    range_nm: (f64, f64),
) -> Result<MagicSearchResult> {
    let diff = |nm: f64| -> Result<f64> {
        let p = model.excited_corrected(nm)?;
        match mf_abs {
            Some(m) => {
                let t_factor = if m > 1.0 { 1.0 } else { -1.0 };
                Ok(p.alpha_scalar + t_factor * p.alpha_tensor - model.ground_scalar(nm)?)
            }
            None => Ok(p.alpha_tensor),
        }
    };
    let (lo, hi) = range_nm;
    let n = ((hi - lo) / 0.1).ceil() as usize;
    let mut roots = Vec::new();
    let mut x0 = lo;
    let mut f0 = diff(x0)?;
    for i in 1..=n {
        let x1 = lo + (hi - lo) * i as f64 / n as f64;
        let f1 = diff(x1)?;
        if f0 == 0.0 {
            roots.push(x0);
        } else if f0 * f1 < 0.0 {
            // bisect
            let (mut a, mut b, mut fa) = (x0, x1, f0);
            while b - a > 1e-4 {
                let m = 0.5 * (a + b);
                let fm = diff(m)?;
                if fa * fm <= 0.0 {
                    b = m;
                } else {
                    a = m;
                    fa = fm;
                }
            }
            roots.push(0.5 * (a + b));
        }
        x0 = x1;
        f0 = f1;
    }
    Ok(MagicSearchResult::Crossings(roots))
}

/// Differential-polarizability root search between two named levels per the
/// public operation signature; identical levels short-circuit to the
/// degenerate result.
pub fn magic_wavelengths_between(
    model: &PolarizabilityModel,
    level_a: &LevelState,
    level_b: &LevelState,
    range_nm: (f64, f64),
) -> Result<MagicSearchResult> {
    if level_a == level_b {
        return Ok(MagicSearchResult::DegenerateEverywhere(range_nm.0, range_nm.1));
    }
    let (g, e) = if level_a.term_label == "1S0" {
        (level_a, level_b)
    } else {
        (level_b, level_a)
    };
    debug_assert_eq!(g.term_label, "1S0");
    magic_wavelength_search(model, Some(e.m_f.abs()), range_nm)
}

#[derive(Debug, Clone)]
pub struct MixingResult {
    /// eigenvalues in Hz, ascending
    pub eigenvalues: [f64; 4],
    /// populations[k][m] = |<mF_m | eigenstate_k>|^2, basis mF = -3/2..+3/2
    pub populations: [[f64; 4]; 4],
}

impl MixingResult {
    /// index of the eigenstate with maximal overlap with bare mF = -3/2
    pub fn tracked_index(&self) -> usize {
        (0..4)
            .max_by(|&a, &b| {
                self.populations[a][0]
                    .partial_cmp(&self.populations[b][0])
                    .unwrap()
            })
            .unwrap()
    }
    /// mF = -1/2 admixture in the readout eigenstate
    pub fn admixture(&self) -> f64 {
        self.populations[self.tracked_index()][1]
    }
}

/// Diagonalize Zeeman + AC Stark in the 3P1 F=3/2 subspace.
///
/// The Stark operator (a.u. polarizabilities, converted to Hz at the tweezer
/// intensity) uses the corrected tensor part and the computed vector part,
/// with the polarization unit vector parametrized by ellipticity gamma and
/// tilt theta. Diagonalization goes through the real-symmetric 8x8
/// embedding [[A, -B], [B, A]] of the complex Hermitian H = A + iB.
pub fn stark_zeeman_mixing(
    b_gauss: f64,
    tweezer: &TweezerConfig,
    pol: &PolarizationState,
    model: &PolarizabilityModel,
    g_excited_hz_per_gauss: f64,
) -> Result<MixingResult> {
    assert!(b_gauss > 0.0, "B must be positive");
    let f = 1.5;
    let mf: [f64; 4] = [-1.5, -0.5, 0.5, 1.5];
    let lambda_nm = tweezer.wavelength * 1e9;
    let p = model.excited_corrected(lambda_nm)?;
    let (a_t, a_v) = (p.alpha_tensor, p.alpha_vector);
    let conv = au_to_hz_per_au(tweezer.peak_intensity());

    type C64 = Complex<f64>;
    let mut fx = SMatrix::<f64, 4, 4>::zeros();
    let mut fy_im = SMatrix::<f64, 4, 4>::zeros(); // Fy = i * fy_im (purely imaginary)
    for i in 0..3 {
        let m = mf[i];
        let c = (f * (f + 1.0) - m * (m + 1.0)).sqrt();
        fx[(i + 1, i)] += c / 2.0;
        fx[(i, i + 1)] += c / 2.0;
        fy_im[(i + 1, i)] += c / 2.0; // (F+ - F-)/(2i): lower +, upper -
        fy_im[(i, i + 1)] -= c / 2.0;
    }
    let fz = SMatrix::<f64, 4, 4>::from_diagonal(&nalgebra::SVector::<f64, 4>::from(mf));

    let (g, th) = (pol.gamma_ellipticity, pol.theta_tilt);
    let uz = C64::new(g.cos() * th.cos(), -(g.sin() * th.sin()));
    let ux = C64::new(g.cos() * th.sin(), g.sin() * th.cos());
    // u* x u with u = (ux, 0, uz): only the y component survives,
    // (u* x u)_y = u*_z u_x - u*_x u_z (purely imaginary)
    let cy = uz.conj() * ux - ux.conj() * uz;
    let cxv = C64::new(0.0, 0.0);
    let czv = C64::new(0.0, 0.0);

    // complex 4x4 Hermitian H = Hz - conv * alpha_op
    let mut h = [[C64::new(0.0, 0.0); 4]; 4];
    // u.F and (u.F)^dagger
    let mut uf = [[C64::new(0.0, 0.0); 4]; 4];
    let mut usf = [[C64::new(0.0, 0.0); 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            uf[r][c] = ux * C64::new(fx[(r, c)], 0.0) + uz * C64::new(fz[(r, c)], 0.0);
            usf[r][c] =
                ux.conj() * C64::new(fx[(r, c)], 0.0) + uz.conj() * C64::new(fz[(r, c)], 0.0);
        }
    }
    // anticommutator {u*.F, u.F}
    let mut anti = [[C64::new(0.0, 0.0); 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            let mut s = C64::new(0.0, 0.0);
            for k in 0..4 {
                s += usf[r][k] * uf[k][c] + uf[r][k] * usf[k][c];
            }
            anti[r][c] = s;
        }
    }
    let norm_t = 2.0 * f * (2.0 * f - 1.0);
    for r in 0..4 {
        for c in 0..4 {
            // (u* x u) . F = cx Fx + cy Fy + cz Fz, with cx = cz = 0 here
            let fy_rc = C64::new(0.0, fy_im[(r, c)]);
            let vec_op = cxv * C64::new(fx[(r, c)], 0.0) + cy * fy_rc + czv * C64::new(fz[(r, c)], 0.0);
            let tensor = (anti[r][c] * C64::new(3.0, 0.0)
                - C64::new(2.0 * f * (f + 1.0) * if r == c { 1.0 } else { 0.0 }, 0.0))
                / C64::new(norm_t, 0.0);
            let alpha_op = tensor * C64::new(a_t, 0.0)
                - C64::i() * vec_op * C64::new(a_v / (2.0 * f), 0.0);
            h[r][c] = -alpha_op * C64::new(conv, 0.0);
        }
        h[r][r] += C64::new(g_excited_hz_per_gauss * mf[r] * b_gauss, 0.0);
    }

    // real-symmetric embedding
    let mut e = SMatrix::<f64, 8, 8>::zeros();
    for r in 0..4 {
        for c in 0..4 {
            e[(r, c)] = h[r][c].re;
            e[(r + 4, c + 4)] = h[r][c].re;
            e[(r, c + 4)] = -h[r][c].im;
            e[(r + 4, c)] = h[r][c].im;
        }
    }
    let eig = nalgebra::SymmetricEigen::new(e);
    let mut pairs: Vec<(f64, nalgebra::SVector<f64, 8>)> = (0..8)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned()))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut eigenvalues = [0.0; 4];
    let mut populations = [[0.0; 4]; 4];
    for k in 0..4 {
        // eigenvalues come in duplicated pairs; take every other one
        let (val, ref vec) = pairs[2 * k];
        eigenvalues[k] = val;
        for (m, pop) in populations[k].iter_mut().enumerate() {
            *pop = vec[m] * vec[m] + vec[m + 4] * vec[m + 4];
        }
        let norm: f64 = populations[k].iter().sum();
        populations[k].iter_mut().for_each(|pop| *pop /= norm);
    }
    Ok(MixingResult {
        eigenvalues,
        populations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::yb171;
    use approx::assert_abs_diff_eq;

    fn model() -> PolarizabilityModel {
        PolarizabilityModel::from_data(yb171()).unwrap()
    }

    #[test]
    fn ground_scalar_at_759() {
        let a = model().ground_scalar(759.0).unwrap();
        assert!((a - 186.0).abs() < 3.0, "{a}");
    }

    #[test]
    fn excited_raw_at_759() {
        let p = model().excited_raw(759.0).unwrap();
        assert!((p.alpha_scalar - 233.0).abs() < 5.0, "{}", p.alpha_scalar);
        assert!((p.alpha_tensor - 87.0).abs() < 5.0, "{}", p.alpha_tensor);
        // frozen regression values
        assert_abs_diff_eq!(p.alpha_scalar, 232.9554, epsilon = 1e-3);
        assert_abs_diff_eq!(p.alpha_vector, -439.7087, epsilon = 1e-3);
        assert_abs_diff_eq!(p.alpha_tensor, 86.9178, epsilon = 1e-3);
    }

    #[test]
    fn tensor_zero_for_half_f() {
        let m = model();
        let lines: Vec<SumLine> = m.ground_lines.clone();
        let p = polarizability(0.0, 0.5, 0.5, &lines, omega_au_from_lambda_nm(700.0)).unwrap();
        assert_eq!(p.alpha_tensor, 0.0);
    }

    #[test]
    fn correction_solve_matches_paper() {
        let (a_t, d_as) = solve_polarizability_correction(-0.030, 0.25, 186.0).unwrap();
        assert!((a_t - 26.0).abs() < 1.0, "{a_t}");
        assert!((d_as - 20.0).abs() < 1.0, "{d_as}");
    }

    #[test]
    fn correction_solve_round_trip() {
        let (a_t0, d_as0) = (31.7, 14.2);
        let g = 184.3;
        let d32 = (d_as0 + a_t0) / g;
        let d12 = (d_as0 - a_t0) / g;
        let (a_t, d_as) = solve_polarizability_correction(d12, d32, g).unwrap();
        assert_abs_diff_eq!(a_t, a_t0, epsilon = 1e-10);
        assert_abs_diff_eq!(d_as, d_as0, epsilon = 1e-10);
    }

    #[test]
    fn correction_equal_differentials_no_tensor() {
        let (a_t, _) = solve_polarizability_correction(0.1, 0.1, 186.0).unwrap();
        assert_abs_diff_eq!(a_t, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn resonance_guard() {
        let m = model();
        // 1P1 at 25068.222 cm^-1 -> 398.9 nm
        let nm = 1e7 / 25068.222;
        let err = m.ground_scalar(nm);
        assert!(matches!(err, Err(SimError::ResonanceProximity(_))));
    }

    #[test]
    fn light_shift_magic_angle_kills_tensor() {
        let tw = TweezerConfig::from_data(&yb171().trap);
        let p = PolarizabilitySet {
            alpha_scalar: 100.0,
            alpha_vector: 0.0,
            alpha_tensor: 50.0,
        };
        let th = (1.0f64 / 3.0).sqrt().acos();
        let u32_ = light_shift(&p, &tw, th, 1.5, 1.5);
        let u12 = light_shift(&p, &tw, th, 1.5, 0.5);
        assert_abs_diff_eq!(u32_, u12, epsilon = u32_.abs() * 1e-12);
    }

    #[test]
    fn light_shift_even_in_mf() {
        let tw = TweezerConfig::from_data(&yb171().trap);
        let p = PolarizabilitySet {
            alpha_scalar: 120.0,
            alpha_vector: -50.0,
            alpha_tensor: 30.0,
        };
        for m in [0.5, 1.5] {
            assert_eq!(
                light_shift(&p, &tw, 0.3, 1.5, m),
                light_shift(&p, &tw, 0.3, 1.5, -m)
            );
        }
    }

    #[test]
    fn reduced_dipole_scaling_and_oracle() {
        let lower = LevelState {
            term_label: "1S0".into(),
            f: 0.5,
            m_f: 0.5,
            g_factor: -750.0,
        };
        let upper = LevelState {
            term_label: "3P1".into(),
            f: 1.5,
            m_f: 0.5,
            g_factor: 1.4e6,
        };
        let mk = |gamma: f64| TransitionLine {
            lower: lower.clone(),
            upper: upper.clone(),
            wavelength: 555.8e-9,
            linewidth_gamma: gamma,
            isat: 1.4,
            branching_ratio: 1.0,
        };
        let g = 2.0 * std::f64::consts::PI * 182e3;
        let d1 = reduced_dipole_from_lifetime(&mk(g), 1.0).unwrap();
        let d2 = reduced_dipole_from_lifetime(&mk(2.0 * g), 1.0).unwrap();
        assert_abs_diff_eq!(d2 / d1, 2f64.sqrt(), epsilon = 1e-12);
        // direct plug-in of the inversion formula
        let omega = 2.0 * std::f64::consts::PI * C / 555.8e-9;
        let expect = (g * 3.0 * std::f64::consts::PI * EPSILON0 * HBAR * C.powi(3) * 3.0
            / omega.powi(3))
        .sqrt();
        assert_abs_diff_eq!(d1, expect, epsilon = expect * 1e-12);
        // zero branching -> zero element
        let mut l0 = mk(g);
        l0.branching_ratio = 0.0;
        assert_eq!(reduced_dipole_from_lifetime(&l0, 1.0).unwrap(), 0.0);
        // round trip against the forward linewidth formula
        let d_au = d1 / (constants::E_CHARGE * constants::A_BOHR);
        assert_abs_diff_eq!(
            linewidth_from_reduced_dipole(d_au, 555.8e-9, 1.0),
            g,
            epsilon = g * 1e-10
        );
    }

    #[test]
    fn magic_crossings_near_paper_values() {
        let m = model();
        let r = magic_wavelength_search(&m, Some(1.5), (765.0, 790.0)).unwrap();
        let MagicSearchResult::Crossings(roots) = r else {
            panic!()
        };
        assert_eq!(roots.len(), 1);
        assert_abs_diff_eq!(roots[0], 776.483, epsilon = 0.01);
        let r2 = magic_wavelength_search(&m, None, (770.0, 830.0)).unwrap();
        let MagicSearchResult::Crossings(roots2) = r2 else {
            panic!()
        };
        assert_eq!(roots2.len(), 1);
        assert_abs_diff_eq!(roots2[0], 798.611, epsilon = 0.01);
    }

    #[test]
    fn magic_degenerate_identical_levels() {
        let m = model();
        let l = LevelState {
            term_label: "1S0".into(),
            f: 0.5,
            m_f: 0.5,
            g_factor: -750.0,
        };
        let r = magic_wavelengths_between(&m, &l, &l.clone(), (750.0, 800.0)).unwrap();
        assert!(matches!(r, MagicSearchResult::DegenerateEverywhere(..)));
    }

    #[test]
    fn mixing_pure_states_for_aligned_linear_pol() {
        let m = model();
        let tw = TweezerConfig::from_data(&yb171().trap);
        let pol = PolarizationState {
            gamma_ellipticity: 0.0,
            theta_tilt: 0.0,
        };
        let r = stark_zeeman_mixing(58.0, &tw, &pol, &m, 1.4e6).unwrap();
        for k in 0..4 {
            let max: f64 = r.populations[k].iter().cloned().fold(0.0, f64::max);
            assert!(max > 1.0 - 1e-12, "eigenstate {k} not pure: {max}");
        }
    }

    #[test]
    fn mixing_populations_normalized() {
        let m = model();
        let tw = TweezerConfig::from_data(&yb171().trap);
        let pol = PolarizationState {
            gamma_ellipticity: 1.0f64.to_radians(),
            theta_tilt: 0.0,
        };
        let r = stark_zeeman_mixing(58.0, &tw, &pol, &m, 1.4e6).unwrap();
        for k in 0..4 {
            let s: f64 = r.populations[k].iter().sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
        // frozen oracle: admixture at 58 G, gamma = 1 deg
        assert!((r.admixture() / 6.0592e-6 - 1.0).abs() < 5e-3, "{}", r.admixture());
    }
}
