//! `readout`: config-driven front end over readout-sim. One subcommand per
//! scenario plus `figures`, which regenerates every paper-figure dataset.
//! Each run writes plot-ready CSV/JSON and a manifest (config hash + seed) so
//! outputs are reproducible and audit-able; reruns with identical config are
//! byte-identical.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use readout_sim::analysis::{
    self, bootstrap_fidelity, fit_mixture, optimal_threshold, release_recapture_temperature,
    BootstrapConfig, Estimator, MixtureFit, OutcomeTable, RecaptureModel,
};
use readout_sim::atomic::{
    magic_wavelength_search, solve_polarizability_correction, MagicSearchResult,
    PolarizabilityModel, TweezerConfig,
};
use readout_sim::circuit::{
    feedforward_circuit, simulate_ensemble, variable_basis_sequence, zeno_circuit, Basis, Circuit,
    InitialState, Logic, ReadoutErrorModel, ShotRecord,
};
use readout_sim::constants;
use readout_sim::data::yb171;
use readout_sim::dynamics::{depol_curve, zeno_predictions, DepolCurveConfig, RotationPulse};
use readout_sim::emission::{collection_efficiency, CollectionGeometry, EmissionCase};
use readout_sim::par;
use readout_sim::rates::{offresonant_loss, SurvivalModel};
use readout_sim::spam::{
    corner_uncertainty, pi_pulse_circuit, solve, standard_system, three_image_circuit,
    two_image_circuit, FixedInputs, StandardMeasurements,
};

#[derive(Parser)]
#[command(name = "readout", about = "171Yb repetitive readout toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML scenario config; defaults reproduce the paper conditions
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG root seed (mandatory here or in the config)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// cap the worker-thread count
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Fig. 3(b): predicted depolarization probability vs magnetic field
    PredictDepolCurve,
    /// Monte Carlo shots of a named circuit preset
    SimulateCircuit {
        /// include hidden-state truth columns in the shot CSV
        #[arg(long)]
        truth_columns: bool,
    },
    /// fit + threshold + bootstrap a photon-count dataset
    AnalyzeDataset,
    /// invert measured SPAM estimators (or a simulated round trip)
    SpamCorrect,
    /// Fig. 6: repeated weak-rotation measurement sequences
    Zeno,
    /// Fig. 7: feedforward active-reset sequences
    Feedforward,
    /// polarizability spectra, correction solve, magic crossings
    PolarizabilityScan,
    /// off-resonant tweezer scattering loss lifetimes
    LossLifetime,
    /// dipole-pattern photon collection efficiencies
    CollectionEfficiency,
    /// release-recapture thermometry forward model + temperature fit
    ReleaseRecapture,
    /// regenerate every figure dataset under --out
    Figures,
}

// ---------------------------------------------------------------------------
// config schema

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioConfig {
    seed: Option<u64>,
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    depol_curve: DepolCurveSection,
    #[serde(default)]
    simulate: SimulateSection,
    #[serde(default)]
    analyze: AnalyzeSection,
    #[serde(default)]
    spam: SpamSection,
    #[serde(default)]
    zeno: ZenoSection,
    #[serde(default)]
    feedforward: FeedforwardSection,
    #[serde(default)]
    polarizability: PolarizabilitySection,
    #[serde(default)]
    loss: LossSection,
    #[serde(default)]
    collection: CollectionSection,
    #[serde(default)]
    recapture: RecaptureSection,
}

/// Error-model overrides on top of `base` ("paper" or "ideal").
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelConfig {
    base: Option<String>,
    loading_p: Option<f64>,
    eta_op: Option<f64>,
    eta_surv_b: Option<f64>,
    eta_surv_d: Option<f64>,
    p_depol_db: Option<f64>,
    p_depol_bd: Option<f64>,
    pulse_infidelity: Option<f64>,
    feedforward_latency: Option<f64>,
}

impl ModelConfig {
    fn build(&self) -> Result<ReadoutErrorModel> {
        let mut m = match self.base.as_deref() {
            None | Some("paper") => ReadoutErrorModel::paper_averaged(),
            Some("ideal") => ReadoutErrorModel::ideal(),
            Some(other) => bail!("model.base = {other:?}; expected \"paper\" or \"ideal\""),
        };
        let probs = [
            ("loading_p", self.loading_p, &mut m.loading_p),
            ("eta_op", self.eta_op, &mut m.eta_op),
            ("eta_surv_b", self.eta_surv_b, &mut m.eta_surv_b),
            ("eta_surv_d", self.eta_surv_d, &mut m.eta_surv_d),
            ("p_depol_db", self.p_depol_db, &mut m.p_depol_db),
            ("p_depol_bd", self.p_depol_bd, &mut m.p_depol_bd),
            ("pulse_infidelity", self.pulse_infidelity, &mut m.pulse_infidelity),
        ];
        for (name, value, slot) in probs {
            if let Some(v) = value {
                if !(0.0..=1.0).contains(&v) {
                    bail!("model.{name} = {v} is outside [0, 1]");
                }
                *slot = v;
            }
        }
        if let Some(t) = self.feedforward_latency {
            if t < 0.0 {
                bail!("model.feedforward_latency = {t} s is negative");
            }
            m.feedforward_latency = t;
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DepolCurveSection {
    b_min_gauss: f64,
    b_max_gauss: f64,
    points: usize,
    /// "log" or "linear"
    spacing: String,
    duration_s: f64,
}

impl Default for DepolCurveSection {
    fn default() -> Self {
        DepolCurveSection {
            b_min_gauss: 5.0,
            b_max_gauss: 200.0,
            points: 40,
            spacing: "log".into(),
            duration_s: 12e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SimulateSection {
    /// two-image | fig3c | fig12 | zzxx | zxzx
    circuit: String,
    shots: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            circuit: "fig3c".into(),
            shots: 17_500,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct AnalyzeSection {
    /// CSV of photon counts, one column named `column`
    input: Option<PathBuf>,
    column: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SpamSection {
    shots: usize,
    /// (value, sigma) pairs; when all six are given the simulation round
    /// trip is skipped and the stated measurements are inverted directly
    fill_fraction: Option<(f64, f64)>,
    eta_op: Option<(f64, f64)>,
    eta_surv_b: Option<(f64, f64)>,
    p_depol_db: Option<(f64, f64)>,
    p_depol_bd: Option<(f64, f64)>,
    eta_pi: Option<(f64, f64)>,
}

impl Default for SpamSection {
    fn default() -> Self {
        SpamSection {
            shots: 17_500,
            fill_fraction: None,
            eta_op: None,
            eta_surv_b: None,
            p_depol_db: None,
            p_depol_bd: None,
            eta_pi: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ZenoSection {
    n: usize,
    /// per-step rotation angles (rad)
    thetas: Vec<f64>,
    p_depol: f64,
    shots: usize,
}

impl Default for ZenoSection {
    fn default() -> Self {
        ZenoSection {
            n: 10,
            thetas: vec![0.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0, PI],
            p_depol: 0.0127,
            shots: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FeedforwardSection {
    loops: usize,
    /// "xor" (always restore) or "alternate" (XNOR on odd loops)
    schedule: String,
    shots: usize,
}

impl Default for FeedforwardSection {
    fn default() -> Self {
        FeedforwardSection {
            loops: 6,
            schedule: "xor".into(),
            shots: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PolarizabilitySection {
    lambda_min_nm: f64,
    lambda_max_nm: f64,
    points: usize,
}

impl Default for PolarizabilitySection {
    fn default() -> Self {
        PolarizabilitySection {
            lambda_min_nm: 750.0,
            lambda_max_nm: 810.0,
            points: 241,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LossSection {
    /// probe detuning in linewidths (negative = red)
    detuning_gamma: f64,
    intensity_isat: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            detuning_gamma: -1.0,
            intensity_isat: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CollectionSection {
    numerical_aperture: f64,
    samples: usize,
}

impl Default for CollectionSection {
    fn default() -> Self {
        CollectionSection {
            numerical_aperture: 0.6,
            samples: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RecaptureSection {
    temperature_uk: f64,
    release_times_us: Vec<f64>,
    samples: usize,
    fit_grid_uk: Vec<f64>,
}

impl Default for RecaptureSection {
    fn default() -> Self {
        RecaptureSection {
            temperature_uk: 10.0,
            release_times_us: (0..=20).map(|i| 2.0 * i as f64).collect(),
            samples: 20_000,
            fit_grid_uk: (2..=40).map(|i| i as f64).collect(),
        }
    }
}

impl ScenarioConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let cfg: ScenarioConfig = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("cannot read config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("invalid config {}", p.display()))?
            }
            None => ScenarioConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let d = &self.depol_curve;
        if d.b_min_gauss <= 0.0 || d.b_max_gauss <= d.b_min_gauss {
            bail!(
                "depol_curve field range [{}, {}] G must be positive and increasing",
                d.b_min_gauss,
                d.b_max_gauss
            );
        }
        if d.points < 2 {
            bail!("depol_curve.points = {} but at least 2 are needed", d.points);
        }
        if !matches!(d.spacing.as_str(), "log" | "linear") {
            bail!("depol_curve.spacing = {:?}; expected \"log\" or \"linear\"", d.spacing);
        }
        if d.duration_s < 0.0 {
            bail!("depol_curve.duration_s = {} is negative", d.duration_s);
        }
        if !(0.0..1.0).contains(&(self.collection.numerical_aperture - f64::EPSILON))
            && !(0.0..=1.0).contains(&self.collection.numerical_aperture)
        {
            bail!(
                "collection.numerical_aperture = {} is outside (0, 1]",
                self.collection.numerical_aperture
            );
        }
        if !(0.0..=1.0).contains(&self.zeno.p_depol) {
            bail!("zeno.p_depol = {} is outside [0, 1]", self.zeno.p_depol);
        }
        if self.zeno.n < 2 {
            bail!("zeno.n = {} but at least 2 measurements are needed", self.zeno.n);
        }
        if !matches!(self.feedforward.schedule.as_str(), "xor" | "alternate") {
            bail!(
                "feedforward.schedule = {:?}; expected \"xor\" or \"alternate\"",
                self.feedforward.schedule
            );
        }
        if self.recapture.temperature_uk <= 0.0 {
            bail!("recapture.temperature_uk = {} must be positive", self.recapture.temperature_uk);
        }
        if self.recapture.release_times_us.iter().any(|&t| t < 0.0) {
            bail!("recapture.release_times_us contains a negative release time");
        }
        if let Some(p) = &self.analyze.input {
            if !p.exists() {
                bail!("analyze.input {} does not exist", p.display());
            }
        }
        self.model.build().map(|_| ())
    }
}

// ---------------------------------------------------------------------------
// manifests and reports

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Serialize)]
struct Manifest<'a> {
    scenario: &'a str,
    seed: u64,
    /// FNV-1a 64 of the effective (defaults-resolved) TOML config
    config_fnv1a64: String,
    outputs: Vec<String>,
}

fn write_manifest(
    dir: &Path,
    scenario: &str,
    seed: u64,
    cfg: &ScenarioConfig,
    outputs: &[PathBuf],
) -> Result<PathBuf> {
    let toml_text = toml::to_string(cfg).context("serialize effective config")?;
    let manifest = Manifest {
        scenario,
        seed,
        config_fnv1a64: format!("{:016x}", fnv1a64(toml_text.as_bytes())),
        outputs: outputs
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// scenarios

fn run_depol_curve(cfg: &ScenarioConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let sec = &cfg.depol_curve;
    let model = PolarizabilityModel::from_data(yb171())?;
    let mut dcfg = DepolCurveConfig::paper(&model)?;
    dcfg.duration = sec.duration_s;
    let n = sec.points;
    let grid: Vec<f64> = (0..n)
        .map(|i| {
            let f = i as f64 / (n - 1) as f64;
            match sec.spacing.as_str() {
                "log" => sec.b_min_gauss * (sec.b_max_gauss / sec.b_min_gauss).powf(f),
                _ => sec.b_min_gauss + (sec.b_max_gauss - sec.b_min_gauss) * f,
            }
        })
        .collect();
    let pts = depol_curve(&grid, &dcfg)?;
    let path = dir.join("depol_curve.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["b_gauss", "p_depol"])?;
    for (b, p) in &pts {
        w.write_record([b.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(vec![path])
}

fn circuit_preset(name: &str) -> Result<Circuit> {
    Ok(match name {
        "two-image" => two_image_circuit(),
        "fig3c" => three_image_circuit(),
        "fig12" => pi_pulse_circuit(),
        "zzxx" => variable_basis_sequence(
            &[Basis::PlusZ, Basis::MinusZ, Basis::PlusX, Basis::MinusX],
            InitialState::Plus,
        )?,
        "zxzx" => variable_basis_sequence(
            &[Basis::PlusZ, Basis::PlusX, Basis::MinusZ, Basis::MinusX],
            InitialState::Plus,
        )?,
        other => bail!(
            "unknown circuit preset {other:?}; expected two-image, fig3c, fig12, zzxx or zxzx"
        ),
    })
}

fn write_shots_csv(path: &Path, shots: &[ShotRecord], truth_columns: bool) -> Result<()> {
    let n = shots[0].bits.len();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["shot".to_string()];
    header.extend((0..n).map(|i| format!("count_{i}")));
    header.extend((0..n).map(|i| format!("bit_{i}")));
    header.extend(["loaded".into(), "lost_at".into(), "sequence_time_s".into()]);
    if truth_columns {
        header.extend((0..n).map(|i| format!("truth_before_{i}")));
        header.extend((0..n).map(|i| format!("truth_after_{i}")));
    }
    w.write_record(&header)?;
    for (si, s) in shots.iter().enumerate() {
        let mut row = vec![si.to_string()];
        row.extend(s.counts.iter().map(|c| format!("{c:.3}")));
        row.extend(s.bits.iter().map(|b| (*b as u8).to_string()));
        row.push((s.loaded as u8).to_string());
        row.push(s.lost_at.map_or(String::new(), |i| i.to_string()));
        row.push(format!("{:.6}", s.sequence_time));
        if truth_columns {
            row.extend(s.truth_before.iter().map(|t| t.code().to_string()));
            row.extend(s.truth_after.iter().map(|t| t.code().to_string()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn run_simulate(cfg: &ScenarioConfig, seed: u64, dir: &Path, truth: bool) -> Result<Vec<PathBuf>> {
    let model = cfg.model.build()?;
    let circuit = circuit_preset(&cfg.simulate.circuit)?;
    let shots = simulate_ensemble(&circuit, &model, cfg.simulate.shots, seed)?;
    let path = dir.join("shots.csv");
    write_shots_csv(&path, &shots, truth)?;

    #[derive(Serialize)]
    struct SimReport {
        circuit: String,
        shots: usize,
        bright_fraction_per_readout: Vec<f64>,
    }
    let table = OutcomeTable::from_records(&shots);
    let report = SimReport {
        circuit: cfg.simulate.circuit.clone(),
        shots: cfg.simulate.shots,
        bright_fraction_per_readout: (0..shots[0].bits.len())
            .map(|k| analysis::estimate(&table, &Estimator::bright_fraction(k)))
            .collect::<readout_sim::Result<_>>()?,
    };
    let rpath = dir.join("report.json");
    write_json(&rpath, &report)?;
    Ok(vec![path, rpath])
}

fn run_analyze(cfg: &ScenarioConfig, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    let input = cfg.analyze.input.as_ref().ok_or_else(|| {
        anyhow!("analyze-dataset needs analyze.input in the config, pointing at a counts CSV")
    })?;
    let column = cfg.analyze.column.as_deref().unwrap_or("count");
    let mut rdr = csv::Reader::from_path(input)
        .with_context(|| format!("cannot open {}", input.display()))?;
    let idx = rdr
        .headers()?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| anyhow!("{} has no column {column:?}", input.display()))?;
    let mut counts = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        counts.push(rec[idx].parse::<f64>().with_context(|| {
            format!("non-numeric value {:?} in column {column:?}", &rec[idx])
        })?);
    }
    if counts.len() < 100 {
        bail!("{} has only {} counts; at least 100 are needed", input.display(), counts.len());
    }
    let fit = fit_mixture(&counts)?;
    let rep = optimal_threshold(&fit);
    let (boot_mean, boot_std) = bootstrap_fidelity(&counts, &BootstrapConfig::paper(seed))?;

    #[derive(Serialize)]
    struct AnalyzeReport {
        n_counts: usize,
        p0: f64,
        mu0: f64,
        sigma0: f64,
        p1: f64,
        mu1: f64,
        sigma1: f64,
        threshold: f64,
        fidelity: f64,
        f0: f64,
        f1: f64,
        bootstrap_mean: f64,
        bootstrap_std: f64,
    }
    let path = dir.join("report.json");
    write_json(
        &path,
        &AnalyzeReport {
            n_counts: counts.len(),
            p0: fit.p0,
            mu0: fit.mu0,
            sigma0: fit.sigma0,
            p1: fit.p1,
            mu1: fit.mu1,
            sigma1: fit.sigma1,
            threshold: rep.theta,
            fidelity: rep.f,
            f0: rep.f0,
            f1: rep.f1,
            bootstrap_mean: boot_mean,
            bootstrap_std: boot_std,
        },
    )?;
    Ok(vec![path])
}

fn raw_estimates(surv: &OutcomeTable, depol: &OutcomeTable, pi: &OutcomeTable) -> Result<[f64; 6]> {
    Ok([
        analysis::estimate(surv, &Estimator::bright_fraction(0))?,
        analysis::estimate(surv, &Estimator::op_efficiency(0, 1))?,
        analysis::estimate(surv, &Estimator::survival_bright(0, 1))?,
        analysis::estimate(depol, &Estimator::depol_db(0, 1, 2))?,
        analysis::estimate(depol, &Estimator::depol_bd(0, 1, 2))?,
        0.5 * (analysis::estimate(pi, &Estimator::conditional((1, true), vec![(0, false), (2, true)]))?
            + analysis::estimate(pi, &Estimator::conditional((1, false), vec![(0, true), (2, true)]))?),
    ])
}

fn run_spam(cfg: &ScenarioConfig, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    let model = cfg.model.build()?;
    let sec = &cfg.spam;
    let rep = optimal_threshold(&MixtureFit {
        p0: 0.5,
        p1: 0.5,
        mu0: model.mixture.mu0,
        sigma0: model.mixture.sigma0,
        mu1: model.mixture.mu1,
        sigma1: model.mixture.sigma1,
        fit_residual: 0.0,
    });
    let fixed = FixedInputs {
        f0: rep.f0,
        f1: rep.f1,
        eta_surv_d: model.eta_surv_d,
    };

    let explicit = [
        sec.fill_fraction,
        sec.eta_op,
        sec.eta_surv_b,
        sec.p_depol_db,
        sec.p_depol_bd,
        sec.eta_pi,
    ];
    let (measured, truth) = if explicit.iter().all(Option::is_some) {
        let v: Vec<(f64, f64)> = explicit.iter().map(|m| m.unwrap()).collect();
        (
            StandardMeasurements {
                fill_fraction: v[0],
                eta_op: v[1],
                eta_surv_b: v[2],
                p_depol_db: v[3],
                p_depol_bd: v[4],
                eta_pi: v[5],
            },
            None,
        )
    } else if explicit.iter().any(Option::is_some) {
        bail!("spam: give all six measured pairs or none (none = simulated round trip)");
    } else {
        let surv = simulate_ensemble(&two_image_circuit(), &model, sec.shots, seed)?;
        let depol = simulate_ensemble(&three_image_circuit(), &model, sec.shots, seed + 1)?;
        let pi = simulate_ensemble(&pi_pulse_circuit(), &model, sec.shots, seed + 2)?;
        let raw = raw_estimates(
            &OutcomeTable::from_records(&surv),
            &OutcomeTable::from_records(&depol),
            &OutcomeTable::from_records(&pi),
        )?;
        let sigma = |p: f64| (p * (1.0 - p) / sec.shots as f64).sqrt().max(1e-4) * 3.0;
        (
            StandardMeasurements {
                fill_fraction: (raw[0], sigma(raw[0])),
                eta_op: (raw[1], sigma(raw[1])),
                eta_surv_b: (raw[2], sigma(raw[2])),
                p_depol_db: (raw[3], sigma(raw[3])),
                p_depol_bd: (raw[4], sigma(raw[4])),
                eta_pi: (raw[5], sigma(raw[5])),
            },
            Some([
                model.loading_p,
                model.eta_op,
                model.eta_surv_b,
                model.p_depol_db,
                model.p_depol_bd,
                (1.0 - model.pulse_infidelity).powi(2),
            ]),
        )
    };

    let system = standard_system(&measured, &fixed)?;
    let mut result = solve(&system, &[0.7, 0.9, 0.9, 0.05, 0.05, 0.9])?;
    let (unc, warnings) = corner_uncertainty(&system, &result)?;
    result.uncertainties = unc;
    result.warnings.extend(warnings);

    #[derive(Serialize)]
    struct SpamReport {
        parameter: Vec<&'static str>,
        measured: Vec<f64>,
        corrected: Vec<f64>,
        corner_uncertainty: Vec<f64>,
        truth: Option<Vec<f64>>,
        residual_norm: f64,
        warnings: Vec<String>,
    }
    let report = SpamReport {
        parameter: vec!["fill_fraction", "eta_op", "eta_surv_b", "p_depol_db", "p_depol_bd", "eta_pi"],
        measured: vec![
            measured.fill_fraction.0,
            measured.eta_op.0,
            measured.eta_surv_b.0,
            measured.p_depol_db.0,
            measured.p_depol_bd.0,
            measured.eta_pi.0,
        ],
        corrected: result.values.clone(),
        corner_uncertainty: result.uncertainties.clone(),
        truth: truth.map(|t| t.to_vec()),
        residual_norm: result.residual_norm,
        warnings: result.warnings.clone(),
    };
    let path = dir.join("report.json");
    write_json(&path, &report)?;
    Ok(vec![path])
}

fn run_zeno(cfg: &ScenarioConfig, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    let sec = &cfg.zeno;
    let mut model = ReadoutErrorModel::ideal();
    model.p_depol_db = sec.p_depol;
    model.p_depol_bd = sec.p_depol;
    let curve_path = dir.join("zeno_psame.csv");
    let all_path = dir.join("zeno_allsame.csv");
    let mut wc = csv::Writer::from_path(&curve_path)?;
    wc.write_record(["theta_step_rad", "index", "p_same_mc", "p_same_model"])?;
    let mut wa = csv::Writer::from_path(&all_path)?;
    wa.write_record(["theta_step_rad", "p_all_same_mc", "p_all_same_model"])?;
    for (ti, &theta) in sec.thetas.iter().enumerate() {
        let theta_total = theta * (sec.n - 1) as f64;
        let circuit = zeno_circuit(theta_total, sec.n)?;
        let shots = simulate_ensemble(&circuit, &model, sec.shots, seed + ti as u64)?;
        let (p_same, p_all) = zeno_predictions(theta_total, sec.n, sec.p_depol);
        for (i, &model_p) in p_same.iter().enumerate().take(sec.n).skip(1) {
            let mc = shots.iter().filter(|s| s.bits[i] == s.bits[0]).count() as f64
                / shots.len() as f64;
            wc.write_record([
                theta.to_string(),
                i.to_string(),
                mc.to_string(),
                model_p.to_string(),
            ])?;
        }
        let mc_all = shots
            .iter()
            .filter(|s| s.bits[..sec.n].iter().all(|&b| b == s.bits[0]))
            .count() as f64
            / shots.len() as f64;
        wa.write_record([theta.to_string(), mc_all.to_string(), p_all.to_string()])?;
    }
    wc.flush()?;
    wa.flush()?;
    Ok(vec![curve_path, all_path])
}

fn run_feedforward(cfg: &ScenarioConfig, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    let sec = &cfg.feedforward;
    let model = cfg.model.build()?;
    let schedule = sec.schedule.clone();
    let circuit = feedforward_circuit(
        sec.loops,
        move |k| match schedule.as_str() {
            "alternate" if k % 2 == 1 => Logic::Xnor,
            _ => Logic::Xor,
        },
        RotationPulse::pi(1.0),
    );
    let shots = simulate_ensemble(&circuit, &model, sec.shots, seed)?;
    let kept: Vec<&ShotRecord> = shots.iter().filter(|s| *s.bits.last().unwrap()).collect();
    if kept.is_empty() {
        bail!("feedforward: no shots survived the final atom-readout post-selection");
    }
    let n_meas = 2 * sec.loops + 1;
    let path = dir.join("feedforward.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["index", "p_same"])?;
    for i in 0..n_meas {
        let p = kept.iter().filter(|s| s.bits[i] == s.bits[0]).count() as f64 / kept.len() as f64;
        w.write_record([i.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(vec![path])
}

fn run_polarizability(cfg: &ScenarioConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let sec = &cfg.polarizability;
    if sec.lambda_max_nm <= sec.lambda_min_nm || sec.points < 2 {
        bail!(
            "polarizability scan [{}, {}] nm with {} points must be increasing with >= 2 points",
            sec.lambda_min_nm,
            sec.lambda_max_nm,
            sec.points
        );
    }
    let model = PolarizabilityModel::from_data(yb171())?;
    let path = dir.join("polarizability.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["lambda_nm", "alpha_s_ground_au", "alpha_s_excited_au", "alpha_t_excited_au"])?;
    for i in 0..sec.points {
        let lambda = sec.lambda_min_nm
            + (sec.lambda_max_nm - sec.lambda_min_nm) * i as f64 / (sec.points - 1) as f64;
        // skip grid points sitting on a resonance pole
        if let (Ok(g), Ok(e)) = (model.ground_scalar(lambda), model.excited_raw(lambda)) {
            w.write_record([
                lambda.to_string(),
                g.to_string(),
                e.alpha_scalar.to_string(),
                e.alpha_tensor.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let exc759 = model.excited_raw(759.0)?;
    let (alpha_t_corr, delta_alpha_s) = solve_polarizability_correction(-0.030, 0.25, 186.0)?;
    let crossing = match magic_wavelength_search(&model, Some(1.5), (765.0, 790.0))? {
        MagicSearchResult::Crossings(r) => r,
        MagicSearchResult::DegenerateEverywhere(..) => Vec::new(),
    };
    let convergence = match magic_wavelength_search(&model, None, (790.0, 830.0))? {
        MagicSearchResult::Crossings(r) => r,
        MagicSearchResult::DegenerateEverywhere(..) => Vec::new(),
    };

    #[derive(Serialize)]
    struct PolReport {
        alpha_s_ground_759_au: f64,
        alpha_s_excited_759_au: f64,
        alpha_t_excited_759_au: f64,
        corrected_alpha_t_au: f64,
        corrected_delta_alpha_s_au: f64,
        magic_crossings_nm: Vec<f64>,
        zeeman_convergence_nm: Vec<f64>,
    }
    let rpath = dir.join("report.json");
    write_json(
        &rpath,
        &PolReport {
            alpha_s_ground_759_au: model.ground_scalar(759.0)?,
            alpha_s_excited_759_au: exc759.alpha_scalar,
            alpha_t_excited_759_au: exc759.alpha_tensor,
            corrected_alpha_t_au: alpha_t_corr,
            corrected_delta_alpha_s_au: delta_alpha_s,
            magic_crossings_nm: crossing,
            zeeman_convergence_nm: convergence,
        },
    )?;
    Ok(vec![path, rpath])
}

fn run_loss(cfg: &ScenarioConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let sec = &cfg.loss;
    if sec.intensity_isat < 0.0 {
        bail!("loss.intensity_isat = {} is negative", sec.intensity_isat);
    }
    let d = yb171();
    let tw = TweezerConfig::from_data(&d.trap);
    let detuning = sec.detuning_gamma * d.probe.gamma();
    let path = dir.join("loss_lifetimes.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["abs_mf", "model", "rate_per_s", "lifetime_s"])?;
    for &mf in &[1.5, 0.5] {
        for (model, name) in [
            (SurvivalModel::Pessimistic, "pessimistic"),
            (SurvivalModel::Optimistic, "optimistic"),
        ] {
            let (rate, lifetime) =
                offresonant_loss(&tw, mf, sec.intensity_isat, detuning, model, d)?;
            w.write_record([mf.to_string(), name.into(), rate.to_string(), lifetime.to_string()])?;
        }
    }
    w.flush()?;

    #[derive(Serialize)]
    struct LossReport {
        loss_branching_3p0_3p2: f64,
    }
    let rpath = dir.join("report.json");
    write_json(
        &rpath,
        &LossReport {
            loss_branching_3p0_3p2: d.cascade.loss_fraction(),
        },
    )?;
    Ok(vec![path, rpath])
}

fn run_collection(cfg: &ScenarioConfig, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    let sec = &cfg.collection;
    let geo = CollectionGeometry {
        numerical_aperture: sec.numerical_aperture,
        sample_count: sec.samples,
    };
    let path = dir.join("collection.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["case", "efficiency", "std_error"])?;
    let mut eff = Vec::new();
    for (case, name, si) in [
        (EmissionCase::Isotropic, "isotropic", 0u64),
        (EmissionCase::MinusThreeHalf, "mf_-3/2", 1),
        (EmissionCase::MinusOneHalf, "mf_-1/2", 2),
    ] {
        let (e, se) = collection_efficiency(&geo, case, seed + si);
        w.write_record([name.into(), e.to_string(), se.to_string()])?;
        eff.push(e);
    }
    w.flush()?;

    #[derive(Serialize)]
    struct CollectionReport {
        ratio_half_over_threehalf: f64,
        analytic_isotropic_cap: f64,
    }
    let na = sec.numerical_aperture;
    let rpath = dir.join("report.json");
    write_json(
        &rpath,
        &CollectionReport {
            ratio_half_over_threehalf: eff[2] / eff[1],
            analytic_isotropic_cap: 1.0 - (1.0 - na * na).sqrt(),
        },
    )?;
    Ok(vec![path, rpath])
}

fn run_recapture(cfg: &ScenarioConfig, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    let sec = &cfg.recapture;
    let d = yb171();
    let pol = PolarizabilityModel::from_data(d)?;
    let tw = TweezerConfig::from_data(&d.trap);
    let model = RecaptureModel {
        depth_hz: pol.trap_depth_hz(&tw)?,
        waist_m: tw.waist_radius,
        wavelength_m: tw.wavelength,
        mass_kg: d.mass_u * constants::AMU,
        samples: sec.samples,
        seed,
    };
    let times: Vec<f64> = sec.release_times_us.iter().map(|t| t * 1e-6).collect();
    let truth_k = sec.temperature_uk * 1e-6;
    let probs = model.curve(truth_k, &times);
    let path = dir.join("recapture_curve.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["release_time_us", "p_recapture"])?;
    for (t, p) in sec.release_times_us.iter().zip(&probs) {
        w.write_record([t.to_string(), p.to_string()])?;
    }
    w.flush()?;

    let curve: Vec<(f64, f64)> = times.iter().copied().zip(probs.iter().copied()).collect();
    let grid: Vec<f64> = sec.fit_grid_uk.iter().map(|t| t * 1e-6).collect();
    let fitted = release_recapture_temperature(&curve, &model, &grid)?;

    #[derive(Serialize)]
    struct RecaptureReport {
        truth_temperature_uk: f64,
        fitted_temperature_uk: f64,
        trap_depth_hz: f64,
    }
    let rpath = dir.join("report.json");
    write_json(
        &rpath,
        &RecaptureReport {
            truth_temperature_uk: sec.temperature_uk,
            fitted_temperature_uk: fitted * 1e6,
            trap_depth_hz: model.depth_hz,
        },
    )?;
    Ok(vec![path, rpath])
}

// ---------------------------------------------------------------------------
// dispatch

fn scenario_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::PredictDepolCurve => "predict-depol-curve",
        Command::SimulateCircuit { .. } => "simulate-circuit",
        Command::AnalyzeDataset => "analyze-dataset",
        Command::SpamCorrect => "spam-correct",
        Command::Zeno => "zeno",
        Command::Feedforward => "feedforward",
        Command::PolarizabilityScan => "polarizability-scan",
        Command::LossLifetime => "loss-lifetime",
        Command::CollectionEfficiency => "collection-efficiency",
        Command::ReleaseRecapture => "release-recapture",
        Command::Figures => "figures",
    }
}

fn run_one(cmd: &Command, cfg: &ScenarioConfig, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let outputs = match cmd {
        Command::PredictDepolCurve => run_depol_curve(cfg, dir)?,
        Command::SimulateCircuit { truth_columns } => run_simulate(cfg, seed, dir, *truth_columns)?,
        Command::AnalyzeDataset => run_analyze(cfg, seed, dir)?,
        Command::SpamCorrect => run_spam(cfg, seed, dir)?,
        Command::Zeno => run_zeno(cfg, seed, dir)?,
        Command::Feedforward => run_feedforward(cfg, seed, dir)?,
        Command::PolarizabilityScan => run_polarizability(cfg, dir)?,
        Command::LossLifetime => run_loss(cfg, dir)?,
        Command::CollectionEfficiency => run_collection(cfg, seed, dir)?,
        Command::ReleaseRecapture => run_recapture(cfg, seed, dir)?,
        Command::Figures => unreachable!("figures fans out before run_one"),
    };
    write_manifest(dir, scenario_name(cmd), seed, cfg, &outputs)?;
    Ok(outputs)
}

fn run_figures(cfg: &ScenarioConfig, seed: u64, out: &Path) -> Result<()> {
    let runs: Vec<(&str, Command, ScenarioConfig)> = vec![
        ("fig3b_depol_curve", Command::PredictDepolCurve, cfg.clone()),
        ("fig3c_circuit", Command::SimulateCircuit { truth_columns: false }, cfg.clone()),
        ("fig12_circuit", Command::SimulateCircuit { truth_columns: false }, {
            let mut c = cfg.clone();
            c.simulate.circuit = "fig12".into();
            c
        }),
        ("fig5_zzxx", Command::SimulateCircuit { truth_columns: false }, {
            let mut c = cfg.clone();
            c.simulate.circuit = "zzxx".into();
            c.model.base = Some("ideal".into());
            c
        }),
        ("fig5_zxzx", Command::SimulateCircuit { truth_columns: false }, {
            let mut c = cfg.clone();
            c.simulate.circuit = "zxzx".into();
            c.model.base = Some("ideal".into());
            c
        }),
        ("fig6_zeno", Command::Zeno, cfg.clone()),
        ("fig7a_feedforward_xor", Command::Feedforward, cfg.clone()),
        ("fig7c_feedforward_alternate", Command::Feedforward, {
            let mut c = cfg.clone();
            c.feedforward.schedule = "alternate".into();
            c
        }),
        ("spam_round_trip", Command::SpamCorrect, cfg.clone()),
        ("polarizability", Command::PolarizabilityScan, cfg.clone()),
        ("loss_lifetimes", Command::LossLifetime, cfg.clone()),
        ("collection", Command::CollectionEfficiency, cfg.clone()),
        ("release_recapture", Command::ReleaseRecapture, cfg.clone()),
    ];
    let mut dirs = Vec::new();
    for (name, cmd, sub_cfg) in &runs {
        run_one(cmd, sub_cfg, seed, &out.join(name))
            .with_context(|| format!("figures sub-run {name}"))?;
        dirs.push(name.to_string());
    }
    #[derive(Serialize)]
    struct FiguresManifest {
        scenario: &'static str,
        seed: u64,
        runs: Vec<String>,
    }
    fs::create_dir_all(out)?;
    write_json(
        &out.join("manifest.json"),
        &FiguresManifest {
            scenario: "figures",
            seed,
            runs: dirs,
        },
    )?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        par::configure_threads(n).map_err(|e| anyhow!("cannot configure thread pool: {e}"))?;
    }
    let cfg = ScenarioConfig::load(cli.config.as_deref())?;
    let seed = cli
        .seed
        .or(cfg.seed)
        .ok_or_else(|| anyhow!("a seed is required: pass --seed or set `seed` in the config"))?;
    match &cli.command {
        Command::Figures => run_figures(&cfg, seed, &cli.out),
        cmd => run_one(cmd, &cfg, seed, &cli.out).map(|_| ()),
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    scenario: &'a str,
    message: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = ErrorReport {
                error: ErrorBody {
                    scenario: scenario_name(&cli.command),
                    message: format!("{e:#}"),
                },
            };
            eprintln!("{}", serde_json::to_string(&report).unwrap());
            ExitCode::FAILURE
        }
    }
}
