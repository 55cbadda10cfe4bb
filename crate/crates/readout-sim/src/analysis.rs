//! Histogram fitting, threshold optimization, conditional estimators,
//! bootstrap statistics, lifetime fits and release-recapture thermometry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as NormalDist};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::circuit::ShotRecord;
use crate::constants;
use crate::error::{Result, SimError};
use crate::par;

/// Ordinary least squares y = a + b x; returns (b, a) — slope first.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(u, v)| u * v).sum();
    let b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let a = (sy - b * sx) / n;
    (b, a)
}

// ---------------------------------------------------------------------------
// mixture model

#[derive(Debug, Clone, Copy)]
pub struct MixtureFit {
    pub p0: f64,
    pub p1: f64,
    pub mu0: f64,
    pub sigma0: f64,
    pub mu1: f64,
    pub sigma1: f64,
    /// mean negative log-likelihood per sample at the optimum
    pub fit_residual: f64,
}

impl MixtureFit {
    pub fn validate(&self) -> Result<()> {
        if (self.p0 + self.p1 - 1.0).abs() > 1e-9 {
            return Err(SimError::Config("mixture weights must sum to 1".into()));
        }
        if self.sigma0 <= 0.0 || self.sigma1 <= 0.0 {
            return Err(SimError::Config("mixture sigma must be positive".into()));
        }
        if self.mu1 <= self.mu0 {
            return Err(SimError::Config("mixture requires mu1 > mu0".into()));
        }
        Ok(())
    }
}

fn gauss_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-(z * z) / 2.0).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Intersection of p0 f0(x) and p1 f1(x) between the means (the larger root
/// of the quadratic when the variances differ).
pub fn gaussian_intersection(p0: f64, mu0: f64, s0: f64, p1: f64, mu1: f64, s1: f64) -> f64 {
    let a = 1.0 / (2.0 * s1 * s1) - 1.0 / (2.0 * s0 * s0);
    let b = mu0 / (s0 * s0) - mu1 / (s1 * s1);
    let c = mu1 * mu1 / (2.0 * s1 * s1) - mu0 * mu0 / (2.0 * s0 * s0)
        + (p0 * s1 / (p1 * s0)).ln();
    if a.abs() < 1e-14 {
        return -c / b;
    }
    let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
    let r1 = (-b + disc) / (2.0 * a);
    let r2 = (-b - disc) / (2.0 * a);
    // prefer a root between the means; with both in range (possible for very
    // unequal sigmas) take the fidelity-maximizing stationary point
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let fid = |x: f64| {
        p0 * std_normal.cdf((x - mu0) / s0) + p1 * std_normal.cdf((mu1 - x) / s1)
    };
    let (lo, hi) = (mu0.min(mu1), mu0.max(mu1));
    let in_range: Vec<f64> = [r1, r2].into_iter().filter(|r| *r > lo && *r < hi).collect();
    match in_range.len() {
        1 => in_range[0],
        2 => {
            if fid(in_range[0]) >= fid(in_range[1]) {
                in_range[0]
            } else {
                in_range[1]
            }
        }
        _ => {
            let mid = (mu0 + mu1) / 2.0;
            if (r1 - mid).abs() < (r2 - mid).abs() {
                r1
            } else {
                r2
            }
        }
    }
}

fn histogram(counts: &[f64], n_bins: usize) -> (Vec<usize>, f64, f64) {
    let lo = counts.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = counts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / n_bins as f64).max(1e-12);
    let mut bins = vec![0usize; n_bins];
    for &c in counts {
        let k = (((c - lo) / width) as usize).min(n_bins - 1);
        bins[k] += 1;
    }
    (bins, lo, width)
}

/// Initialize (mu0, mu1) from the histogram's two highest well-separated
/// modes; None when no second mode stands out.
fn two_modes(counts: &[f64]) -> Option<(f64, f64)> {
    let n_bins = 60;
    let (bins, lo, width) = histogram(counts, n_bins);
    let k_max = bins
        .iter()
        .enumerate()
        .max_by_key(|(_, n)| **n)
        .map(|(k, _)| k)?;
    // second mode: highest bin at least 1/6 of the range away, tall enough
    // to not be a tail fluctuation of the first mode
    let min_sep = n_bins / 6;
    let mut best: Option<(usize, usize)> = None;
    for (k, &n) in bins.iter().enumerate() {
        if k.abs_diff(k_max) < min_sep {
            continue;
        }
        if best.is_none_or(|(_, bn)| n > bn) {
            best = Some((k, n));
        }
    }
    let (k2, n2) = best?;
    let span = k_max.abs_diff(k2);
    // count expected this far out if the data were a single Gaussian around
    // the main mode: compare against the bins midway between the two modes
    let mid = (k_max + k2) / 2;
    let valley = bins[mid.saturating_sub(1)..=(mid + 1).min(n_bins - 1)]
        .iter()
        .copied()
        .min()
        .unwrap_or(0);
    if n2 < 5 || span < min_sep || n2 <= valley + (valley as f64).sqrt() as usize {
        return None;
    }
    let center = |k: usize| lo + (k as f64 + 0.5) * width;
    let (a, b) = (center(k_max), center(k2));
    Some((a.min(b), a.max(b)))
}

/// Unbinned two-component Gaussian expectation-maximization.
pub fn fit_mixture(counts: &[f64]) -> Result<MixtureFit> {
    if counts.len() < 100 {
        return Err(SimError::Config(format!(
            "mixture fit needs >= 100 samples, got {}",
            counts.len()
        )));
    }
    let n = counts.len() as f64;
    let (init0, init1) = two_modes(counts)
        .ok_or_else(|| SimError::DegenerateData("no two separated histogram modes".into()))?;
    let spread = (init1 - init0) / 4.0;
    let (mut p0, mut mu0, mut s0) = (0.5, init0, spread.max(0.5));
    let (mut p1, mut mu1, mut s1) = (0.5, init1, spread.max(0.5));

    let mut ll_prev = f64::NEG_INFINITY;
    let max_iter = 10_000;
    let mut resp = vec![0.0f64; counts.len()];
    for iter in 0..max_iter {
        // E step
        let mut ll = 0.0;
        for (i, &x) in counts.iter().enumerate() {
            let w0 = p0 * gauss_pdf(x, mu0, s0);
            let w1 = p1 * gauss_pdf(x, mu1, s1);
            let tot = (w0 + w1).max(1e-300);
            resp[i] = w0 / tot;
            ll += tot.ln();
        }
        if (ll - ll_prev).abs() < 1e-9 {
            let fit = finish_mixture(p0, mu0, s0, p1, mu1, s1, -ll / n)?;
            return Ok(fit);
        }
        ll_prev = ll;
        // M step
        let n0: f64 = resp.iter().sum();
        let n1 = n - n0;
        if n0 < 1.0 || n1 < 1.0 {
            return Err(SimError::DegenerateData(
                "one mixture component collapsed".into(),
            ));
        }
        mu0 = counts.iter().zip(&resp).map(|(x, r)| x * r).sum::<f64>() / n0;
        mu1 = counts
            .iter()
            .zip(&resp)
            .map(|(x, r)| x * (1.0 - r))
            .sum::<f64>()
            / n1;
        s0 = (counts
            .iter()
            .zip(&resp)
            .map(|(x, r)| r * (x - mu0) * (x - mu0))
            .sum::<f64>()
            / n0)
            .sqrt()
            .max(1e-6);
        s1 = (counts
            .iter()
            .zip(&resp)
            .map(|(x, r)| (1.0 - r) * (x - mu1) * (x - mu1))
            .sum::<f64>()
            / n1)
            .sqrt()
            .max(1e-6);
        p0 = n0 / n;
        p1 = n1 / n;
        if iter == max_iter - 1 {
            // distinguish slow convergence from overlapping components
            if (mu1 - mu0).abs() < 0.5 * (s0 + s1) {
                return Err(SimError::DegenerateData(
                    "components overlap; data look single-mode".into(),
                ));
            }
        }
    }
    Err(SimError::FitNonConvergence(max_iter))
}

#[allow(clippy::too_many_arguments)]
fn finish_mixture(
    p0: f64,
    mu0: f64,
    s0: f64,
    p1: f64,
    mu1: f64,
    s1: f64,
    residual: f64,
) -> Result<MixtureFit> {
    let (p0, mu0, s0, p1, mu1, s1) = if mu0 <= mu1 {
        (p0, mu0, s0, p1, mu1, s1)
    } else {
        (p1, mu1, s1, p0, mu0, s0)
    };
    if (mu1 - mu0).abs() < 0.5 * (s0 + s1) {
        return Err(SimError::DegenerateData(
            "components overlap; data look single-mode".into(),
        ));
    }
    let fit = MixtureFit {
        p0,
        p1,
        mu0,
        sigma0: s0,
        mu1,
        sigma1: s1,
        fit_residual: residual,
    };
    fit.validate()?;
    Ok(fit)
}

#[derive(Debug, Clone, Copy)]
pub struct ThresholdReport {
    pub theta: f64,
    pub f: f64,
    pub f0: f64,
    pub f1: f64,
}

/// Threshold at the weighted-component intersection; fidelities via Gaussian
/// CDFs, F = P0 F0 + P1 F1.
pub fn optimal_threshold(fit: &MixtureFit) -> ThresholdReport {
    let theta = gaussian_intersection(fit.p0, fit.mu0, fit.sigma0, fit.p1, fit.mu1, fit.sigma1);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let f0 = std_normal.cdf((theta - fit.mu0) / fit.sigma0);
    let f1 = std_normal.cdf((fit.mu1 - theta) / fit.sigma1);
    ThresholdReport {
        theta,
        f: fit.p0 * f0 + fit.p1 * f1,
        f0,
        f1,
    }
}

/// Classification fidelity at an arbitrary threshold (for grid checks and
/// threshold sweeps).
pub fn fidelity_at(fit: &MixtureFit, theta: f64) -> f64 {
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let f0 = std_normal.cdf((theta - fit.mu0) / fit.sigma0);
    let f1 = std_normal.cdf((fit.mu1 - theta) / fit.sigma1);
    fit.p0 * f0 + fit.p1 * f1
}

// ---------------------------------------------------------------------------
// outcome tables and estimators

#[derive(Debug, Clone)]
pub struct OutcomeTable {
    pub bits: Vec<Vec<bool>>,
    pub mask: Vec<bool>,
}

impl OutcomeTable {
    pub fn from_records(records: &[ShotRecord]) -> Self {
        OutcomeTable {
            bits: records.iter().map(|r| r.bits.clone()).collect(),
            mask: vec![true; records.len()],
        }
    }

    pub fn from_bits(bits: Vec<Vec<bool>>) -> Self {
        let n = bits.len();
        OutcomeTable {
            bits,
            mask: vec![true; n],
        }
    }

    pub fn n_readouts(&self) -> usize {
        self.bits.first().map_or(0, |b| b.len())
    }

    pub fn n_selected(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Post-select in place; the predicate sees each shot's bit string.
    pub fn post_select(&mut self, keep: impl Fn(&[bool]) -> bool) {
        for (bits, m) in self.bits.iter().zip(self.mask.iter_mut()) {
            if *m {
                *m = keep(bits);
            }
        }
    }

    fn selected(&self) -> impl Iterator<Item = &Vec<bool>> {
        self.bits
            .iter()
            .zip(&self.mask)
            .filter(|(_, m)| **m)
            .map(|(b, _)| b)
    }

    /// Count shots matching every (readout, outcome) pair.
    pub fn count_matching(&self, conditions: &[(usize, bool)]) -> usize {
        self.selected()
            .filter(|bits| conditions.iter().all(|&(k, v)| bits[k] == v))
            .count()
    }

    fn subset(&self, indices: &[usize]) -> OutcomeTable {
        OutcomeTable {
            bits: indices.iter().map(|&i| self.bits[i].clone()).collect(),
            mask: vec![true; indices.len()],
        }
    }
}

#[derive(Debug, Clone)]
pub enum Estimator {
    /// Pr(bright) of one readout — the fill fraction p*.
    BrightFraction(usize),
    /// Pr(target | all given) over post-selected shots.
    Conditional {
        target: (usize, bool),
        given: Vec<(usize, bool)>,
    },
    /// State-averaged pi-pulse transfer:
    /// eta_pi = 1/2 [Pr(B_b|D_a,B_c) + Pr(D_b|B_a,B_c)]
    PiEta { a: usize, b: usize, c: usize },
    /// Unitary pi-pulse fidelity:
    /// F_pi = 1/2 [sqrt(Pr(B_b|D_a,B_c)) + sqrt(Pr(D_b|B_a,B_c))]
    PiFidelity { a: usize, b: usize, c: usize },
}

impl Estimator {
    pub fn bright_fraction(k: usize) -> Self {
        Estimator::BrightFraction(k)
    }
    pub fn conditional(target: (usize, bool), given: Vec<(usize, bool)>) -> Self {
        Estimator::Conditional { target, given }
    }
    /// eta_surv^B = Pr(B_b | B_a)
    pub fn survival_bright(a: usize, b: usize) -> Self {
        Estimator::conditional((b, true), vec![(a, true)])
    }
    /// eta_OP = Pr(B_a | B_b): pump efficiency, post-selecting on survival
    pub fn op_efficiency(a: usize, b: usize) -> Self {
        Estimator::conditional((a, true), vec![(b, true)])
    }
    /// P_depol^DB = Pr(B_b | D_a, B_c)
    pub fn depol_db(a: usize, b: usize, c: usize) -> Self {
        Estimator::conditional((b, true), vec![(a, false), (c, true)])
    }
    /// P_depol^BD = Pr(D_b | B_a, B_c)
    pub fn depol_bd(a: usize, b: usize, c: usize) -> Self {
        Estimator::conditional((b, false), vec![(a, true), (c, true)])
    }
}

fn conditional_probability(
    table: &OutcomeTable,
    target: (usize, bool),
    given: &[(usize, bool)],
) -> Result<f64> {
    let denom = table.count_matching(given);
    if denom == 0 {
        return Err(SimError::EmptyConditioningSet(format!("{given:?}")));
    }
    let mut all = given.to_vec();
    all.push(target);
    Ok(table.count_matching(&all) as f64 / denom as f64)
}

pub fn estimate(table: &OutcomeTable, estimator: &Estimator) -> Result<f64> {
    match estimator {
        Estimator::BrightFraction(k) => {
            let n = table.n_selected();
            if n == 0 {
                return Err(SimError::EmptyConditioningSet("post-selection mask".into()));
            }
            Ok(table.count_matching(&[(*k, true)]) as f64 / n as f64)
        }
        Estimator::Conditional { target, given } => conditional_probability(table, *target, given),
        Estimator::PiEta { a, b, c } => {
            let db = conditional_probability(table, (*b, true), &[(*a, false), (*c, true)])?;
            let bd = conditional_probability(table, (*b, false), &[(*a, true), (*c, true)])?;
            Ok(0.5 * (db + bd))
        }
        Estimator::PiFidelity { a, b, c } => {
            let db = conditional_probability(table, (*b, true), &[(*a, false), (*c, true)])?;
            let bd = conditional_probability(table, (*b, false), &[(*a, true), (*c, true)])?;
            Ok(0.5 * (db.sqrt() + bd.sqrt()))
        }
    }
}

/// Analytic binomial standard deviation for a count-ratio estimator.
pub fn binomial_std(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

// ---------------------------------------------------------------------------
// bootstrap

#[derive(Debug, Clone, Copy)]
pub struct BootstrapConfig {
    pub n_sets: usize,
    pub set_size: usize,
    pub seed: u64,
}

impl BootstrapConfig {
    /// 200 sets of 500 realizations each.
    pub fn paper(seed: u64) -> Self {
        BootstrapConfig {
            n_sets: 200,
            set_size: 500,
            seed,
        }
    }
}

/// Generic resample-with-replacement bootstrap over `n_items` indices;
/// returns (mean, std) of the per-set estimates.
pub fn bootstrap_fn(
    n_items: usize,
    config: &BootstrapConfig,
    eval: impl Fn(&[usize]) -> Result<f64> + Sync + Send,
) -> Result<(f64, f64)> {
    if config.n_sets == 0 || config.set_size == 0 {
        return Err(SimError::Config("bootstrap counts must be positive".into()));
    }
    if config.set_size > n_items {
        return Err(SimError::Config(format!(
            "bootstrap set_size {} exceeds {} available shots",
            config.set_size, n_items
        )));
    }
    let estimates: Vec<Result<f64>> = par::map_indexed(config.n_sets, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(par::derive_seed(config.seed, s as u64));
        let idx: Vec<usize> = (0..config.set_size)
            .map(|_| rng.gen_range(0..n_items))
            .collect();
        eval(&idx)
    });
    let ok: Vec<f64> = estimates.iter().filter_map(|r| r.as_ref().ok()).copied().collect();
    let failed = config.n_sets - ok.len();
    if failed * 2 > config.n_sets {
        return Err(SimError::BootstrapFailure {
            failed,
            total: config.n_sets,
        });
    }
    let mean = ok.iter().sum::<f64>() / ok.len() as f64;
    let var = ok.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (ok.len() as f64 - 1.0).max(1.0);
    Ok((mean, var.sqrt()))
}

pub fn bootstrap(
    table: &OutcomeTable,
    estimator: &Estimator,
    config: &BootstrapConfig,
) -> Result<(f64, f64)> {
    let selected: Vec<usize> = (0..table.bits.len()).filter(|&i| table.mask[i]).collect();
    bootstrap_fn(selected.len(), config, |idx| {
        let chosen: Vec<usize> = idx.iter().map(|&i| selected[i]).collect();
        estimate(&table.subset(&chosen), estimator)
    })
}

/// Bootstrap over raw photon counts: refit the mixture and re-threshold per
/// set, returning (mean F, std F).
pub fn bootstrap_fidelity(counts: &[f64], config: &BootstrapConfig) -> Result<(f64, f64)> {
    bootstrap_fn(counts.len(), config, |idx| {
        let sample: Vec<f64> = idx.iter().map(|&i| counts[i]).collect();
        Ok(optimal_threshold(&fit_mixture(&sample)?).f)
    })
}

// ---------------------------------------------------------------------------
// three-readout fidelity sweep

#[derive(Debug, Clone)]
pub struct FidelitySweep {
    pub theta_b: Vec<f64>,
    /// Pr(B_c | B_a, B_b) — None where the conditioning set is empty
    pub f_read_b: Vec<Option<f64>>,
    /// Pr(D_c | B_a, D_b)
    pub f_read_d: Vec<Option<f64>>,
    pub plateau_b: f64,
    pub plateau_d: f64,
}

/// Sweep the middle-readout threshold of an (atom readout, qubit readout,
/// atom readout) dataset; thresholds a and c stay at their fit optima.
pub fn three_readout_fidelity_sweep(counts: &[[f64; 3]]) -> Result<FidelitySweep> {
    let col = |k: usize| -> Vec<f64> { counts.iter().map(|r| r[k]).collect() };
    let fit_a = fit_mixture(&col(0))?;
    let fit_b = fit_mixture(&col(1))?;
    let fit_c = fit_mixture(&col(2))?;
    let theta_a = optimal_threshold(&fit_a).theta;
    let theta_c = optimal_threshold(&fit_c).theta;

    let lo = fit_b.mu0 - 2.0 * fit_b.sigma0;
    let hi = fit_b.mu1 + fit_b.sigma1;
    let n_grid = 120;
    let mut sweep = FidelitySweep {
        theta_b: Vec::with_capacity(n_grid),
        f_read_b: Vec::with_capacity(n_grid),
        f_read_d: Vec::with_capacity(n_grid),
        plateau_b: f64::NAN,
        plateau_d: f64::NAN,
    };
    for g in 0..n_grid {
        let tb = lo + (hi - lo) * g as f64 / (n_grid - 1) as f64;
        sweep.theta_b.push(tb);
        let (mut nbb, mut nbb_c, mut nbd, mut nbd_c) = (0usize, 0usize, 0usize, 0usize);
        for row in counts {
            if row[0] <= theta_a {
                continue;
            }
            if row[1] > tb {
                nbb += 1;
                if row[2] > theta_c {
                    nbb_c += 1;
                }
            } else {
                nbd += 1;
                if row[2] <= theta_c {
                    nbd_c += 1;
                }
            }
        }
        sweep
            .f_read_b
            .push((nbb > 0).then(|| nbb_c as f64 / nbb as f64));
        sweep
            .f_read_d
            .push((nbd > 0).then(|| nbd_c as f64 / nbd as f64));
    }
    // limiting plateaus: average the last/first few resolved grid points
    let tail: Vec<f64> = sweep.f_read_b.iter().rev().filter_map(|v| *v).take(5).collect();
    let head: Vec<f64> = sweep.f_read_d.iter().filter_map(|v| *v).take(5).collect();
    if tail.is_empty() || head.is_empty() {
        return Err(SimError::EmptyConditioningSet("fidelity-sweep plateaus".into()));
    }
    sweep.plateau_b = tail.iter().sum::<f64>() / tail.len() as f64;
    sweep.plateau_d = head.iter().sum::<f64>() / head.len() as f64;
    Ok(sweep)
}

// ---------------------------------------------------------------------------
// correlation matrix

/// Pearson correlation between binary outcome columns over post-selected
/// shots; zero-variance entries come back as None rather than NaN.
pub fn correlation_matrix(table: &OutcomeTable) -> Result<Vec<Vec<Option<f64>>>> {
    let m = table.n_readouts();
    if m < 2 {
        return Err(SimError::Config("correlation needs >= 2 readouts".into()));
    }
    let rows: Vec<&Vec<bool>> = table.selected().collect();
    let n = rows.len();
    if n == 0 {
        return Err(SimError::EmptyConditioningSet("post-selection mask".into()));
    }
    let mean: Vec<f64> = (0..m)
        .map(|k| rows.iter().filter(|r| r[k]).count() as f64 / n as f64)
        .collect();
    let var: Vec<f64> = (0..m).map(|k| mean[k] * (1.0 - mean[k])).collect();
    let mut out = vec![vec![None; m]; m];
    for i in 0..m {
        out[i][i] = Some(1.0);
        for j in (i + 1)..m {
            if var[i] <= 0.0 || var[j] <= 0.0 {
                continue;
            }
            let mut cov = 0.0;
            for r in &rows {
                cov += (r[i] as u8 as f64 - mean[i]) * (r[j] as u8 as f64 - mean[j]);
            }
            cov /= n as f64;
            let rho = cov / (var[i] * var[j]).sqrt();
            out[i][j] = Some(rho);
            out[j][i] = Some(rho);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// lifetime fits

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayKind {
    /// y = A exp(-t / tau); returns tau
    Exponential,
    /// y = A exp(-(t / tau)^2); returns the Gaussian 1/e time (T2*-style)
    GaussianContrast,
}

#[derive(Debug, Clone, Copy)]
pub struct LifetimeFit {
    pub amplitude: f64,
    pub tau: f64,
    pub tau_std: f64,
}

/// Weighted least-squares decay fit (Gauss-Newton with step halving).
pub fn lifetime_fit(series: &[(f64, f64, f64)], kind: DecayKind) -> Result<LifetimeFit> {
    if series.len() < 4 {
        return Err(SimError::Config("lifetime fit needs >= 4 points".into()));
    }
    let w: Vec<f64> = series
        .iter()
        .map(|&(_, _, e)| if e > 0.0 { 1.0 / e } else { 1.0 })
        .collect();
    // init from a log-linear fit over positive values
    let logpts: Vec<(f64, f64)> = series
        .iter()
        .filter(|&&(_, y, _)| y > 0.0)
        .map(|&(t, y, _)| {
            let x = match kind {
                DecayKind::Exponential => t,
                DecayKind::GaussianContrast => t * t,
            };
            (x, y.ln())
        })
        .collect();
    if logpts.len() < 2 {
        return Err(SimError::LifetimeFitNonConvergence(
            "fewer than two positive samples".into(),
        ));
    }
    let xs: Vec<f64> = logpts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = logpts.iter().map(|p| p.1).collect();
    let (slope, a0) = linear_fit(&xs, &ys);
    if slope >= 0.0 {
        return Err(SimError::LifetimeFitNonConvergence(
            "series does not decay".into(),
        ));
    }
    let mut amp = a0.exp();
    let mut tau = match kind {
        DecayKind::Exponential => -1.0 / slope,
        DecayKind::GaussianContrast => (-1.0 / slope).sqrt(),
    };

    let model = |amp: f64, tau: f64, t: f64| -> f64 {
        match kind {
            DecayKind::Exponential => amp * (-t / tau).exp(),
            DecayKind::GaussianContrast => amp * (-(t / tau) * (t / tau)).exp(),
        }
    };
    let chi2 = |amp: f64, tau: f64| -> f64 {
        series
            .iter()
            .zip(&w)
            .map(|(&(t, y, _), &wi)| {
                let r = wi * (y - model(amp, tau, t));
                r * r
            })
            .sum()
    };
    let mut c_prev = chi2(amp, tau);
    for _iter in 0..200 {
        // weighted Jacobian and residual
        let (mut jtj, mut jtr) = ([[0.0f64; 2]; 2], [0.0f64; 2]);
        for (&(t, y, _), &wi) in series.iter().zip(&w) {
            let f = model(amp, tau, t);
            let dfda = f / amp;
            let dfdtau = match kind {
                DecayKind::Exponential => f * t / (tau * tau),
                DecayKind::GaussianContrast => f * 2.0 * t * t / (tau * tau * tau),
            };
            let j = [wi * dfda, wi * dfdtau];
            let r = wi * (y - f);
            for a in 0..2 {
                for b in 0..2 {
                    jtj[a][b] += j[a] * j[b];
                }
                jtr[a] += j[a] * r;
            }
        }
        let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
        if det.abs() < 1e-300 {
            return Err(SimError::LifetimeFitNonConvergence("singular normal equations".into()));
        }
        let da = (jtr[0] * jtj[1][1] - jtr[1] * jtj[0][1]) / det;
        let dtau = (jtr[1] * jtj[0][0] - jtr[0] * jtj[1][0]) / det;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let (na, ntau) = (amp + lambda * da, tau + lambda * dtau);
            if ntau > 0.0 && na.is_finite() {
                let c = chi2(na, ntau);
                if c <= c_prev {
                    amp = na;
                    tau = ntau;
                    accepted = c_prev - c > 1e-14 * (1.0 + c_prev);
                    c_prev = c;
                    break;
                }
            }
            lambda /= 2.0;
        }
        if !accepted {
            // converged: parameter std from the normal-equation covariance
            let sigma_tau = (jtj[0][0] / det).sqrt();
            return Ok(LifetimeFit {
                amplitude: amp,
                tau,
                tau_std: sigma_tau,
            });
        }
    }
    Err(SimError::LifetimeFitNonConvergence("iteration limit".into()))
}

// ---------------------------------------------------------------------------
// release-recapture thermometry

#[derive(Debug, Clone, Copy)]
pub struct RecaptureModel {
    pub depth_hz: f64,
    pub waist_m: f64,
    pub wavelength_m: f64,
    pub mass_kg: f64,
    pub samples: usize,
    pub seed: u64,
}

impl RecaptureModel {
    pub fn rayleigh_range(&self) -> f64 {
        std::f64::consts::PI * self.waist_m * self.waist_m / self.wavelength_m
    }

    fn depth_joule(&self) -> f64 {
        constants::H_PLANCK * self.depth_hz
    }

    /// radial / axial harmonic frequencies of the Gaussian trap (rad/s)
    pub fn trap_frequencies(&self) -> (f64, f64) {
        let u0 = self.depth_joule();
        let zr = self.rayleigh_range();
        let omega_r = (4.0 * u0 / (self.mass_kg * self.waist_m * self.waist_m)).sqrt();
        let omega_z = (2.0 * u0 / (self.mass_kg * zr * zr)).sqrt();
        (omega_r, omega_z)
    }

    fn potential(&self, x: f64, y: f64, z: f64) -> f64 {
        let zr = self.rayleigh_range();
        let expand = 1.0 + (z / zr) * (z / zr);
        let rho2 = x * x + y * y;
        -self.depth_joule() / expand
            * (-2.0 * rho2 / (self.waist_m * self.waist_m * expand)).exp()
    }

    /// Monte Carlo recapture probability after a diabatic release of
    /// duration `t`: thermal sampling in the harmonic expansion, ballistic
    /// flight with gravity along -x (a radial axis), recapture iff the total
    /// energy in the restored trap is negative.
    pub fn recapture_probability(&self, temperature: f64, t: f64, seed_index: u64) -> f64 {
        let (omega_r, omega_z) = self.trap_frequencies();
        let kt = constants::KB * temperature;
        let sx = (kt / self.mass_kg).sqrt() / omega_r;
        let sz = (kt / self.mass_kg).sqrt() / omega_z;
        let sv = (kt / self.mass_kg).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(par::derive_seed(self.seed, seed_index));
        let pos_r = NormalDist::new(0.0, sx).unwrap();
        let pos_z = NormalDist::new(0.0, sz).unwrap();
        let vel = NormalDist::new(0.0, sv).unwrap();
        let mut captured = 0usize;
        for _ in 0..self.samples {
            let (mut x, mut y, mut z) = (
                pos_r.sample(&mut rng),
                pos_r.sample(&mut rng),
                pos_z.sample(&mut rng),
            );
            let (mut vx, vy, vz) = (vel.sample(&mut rng), vel.sample(&mut rng), vel.sample(&mut rng));
            x += vx * t - 0.5 * constants::G_EARTH * t * t;
            vx -= constants::G_EARTH * t;
            y += vy * t;
            z += vz * t;
            let energy = 0.5 * self.mass_kg * (vx * vx + vy * vy + vz * vz)
                + self.potential(x, y, z);
            if energy < 0.0 {
                captured += 1;
            }
        }
        captured as f64 / self.samples as f64
    }

    pub fn curve(&self, temperature: f64, times: &[f64]) -> Vec<f64> {
        times
            .iter()
            .enumerate()
            .map(|(i, &t)| self.recapture_probability(temperature, t, i as u64))
            .collect()
    }
}

/// Scan the forward model over a temperature grid and return the
/// least-squares-best temperature; a best fit at a grid edge is flagged.
pub fn release_recapture_temperature(
    curve: &[(f64, f64)],
    model: &RecaptureModel,
    temperature_grid: &[f64],
) -> Result<f64> {
    if temperature_grid.len() < 3 {
        return Err(SimError::Config("temperature grid too small".into()));
    }
    let times: Vec<f64> = curve.iter().map(|p| p.0).collect();
    let sse: Vec<f64> = par::map_indexed(temperature_grid.len(), |k| {
        let pred = model.curve(temperature_grid[k], &times);
        curve
            .iter()
            .zip(&pred)
            .map(|(&(_, y), &p)| (y - p) * (y - p))
            .sum::<f64>()
    });
    let best = sse
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap();
    let t_best = temperature_grid[best];
    if best == 0 || best == temperature_grid.len() - 1 {
        return Err(SimError::TemperatureOutsideGrid(t_best));
    }
    Ok(t_best)
}
