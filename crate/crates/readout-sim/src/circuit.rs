//! Shot-by-shot measurement-circuit simulator with phenomenological error
//! channels and hidden truth labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dynamics::{apply_pulse, QubitDensity, RotationPulse};
use crate::error::{Result, SimError};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Logic {
    Xor,
    Xnor,
}

#[derive(Debug, Clone)]
pub enum Block {
    /// State-selective image: bright iff atom present and in |0>.
    QubitReadout,
    /// Pump-then-image: bright iff atom present (either qubit state).
    AtomReadout,
    /// Flips |1> -> |0> with probability eta_OP.
    OpticalPump,
    Rotate(RotationPulse),
    Hold(f64),
    /// Classical gate over earlier readout bits; fires `action` when the
    /// logic evaluates true, after a feedforward-latency hold.
    Conditional {
        logic: Logic,
        sources: Vec<usize>,
        action: RotationPulse,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialState {
    Zero,
    One,
    Plus,
    /// Stochastic loading: atom present with probability `loading_p`, dark
    /// until optically pumped.
    Unloaded,
}

#[derive(Debug, Clone)]
pub struct Circuit {
    pub blocks: Vec<Block>,
    pub initial: InitialState,
}

impl Circuit {
    pub fn new(initial: InitialState, blocks: Vec<Block>) -> Self {
        Circuit { blocks, initial }
    }

    pub fn n_readouts(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| matches!(b, Block::QubitReadout | Block::AtomReadout))
            .count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_readouts() == 0 {
            return Err(SimError::MalformedCircuit(
                "circuit has no readout block".into(),
            ));
        }
        let mut seen = 0usize;
        for block in &self.blocks {
            match block {
                Block::QubitReadout | Block::AtomReadout => seen += 1,
                Block::Conditional { sources, .. } => {
                    if sources.is_empty() {
                        return Err(SimError::MalformedCircuit(
                            "conditional with no source bits".into(),
                        ));
                    }
                    for &s in sources {
                        if s >= seen {
                            return Err(SimError::MalformedCircuit(format!(
                                "conditional references readout {s} before it exists"
                            )));
                        }
                    }
                }
                Block::Hold(t) if *t < 0.0 => {
                    return Err(SimError::MalformedCircuit("negative hold".into()));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Two-Gaussian photon-count model; component weights are implicit in the
/// circuit being simulated.
#[derive(Debug, Clone, Copy)]
pub struct CountMixture {
    pub mu0: f64,
    pub sigma0: f64,
    pub mu1: f64,
    pub sigma1: f64,
}

impl CountMixture {
    /// Bright/dark count model of the experiment: mu0 ~ 1.0, sigma0 ~ 2,
    /// mu1 ~ 37 photons. The bright width is stored as 13 rather than the
    /// quoted ~16: a true Gaussian of width 16 cannot reproduce the printed
    /// fidelities (F0 = 0.997, F1 = 0.991), while 13 matches all three; the
    /// histogram's larger spread lives in its non-Gaussian tail.
    pub fn paper() -> Self {
        CountMixture {
            mu0: 1.0,
            sigma0: 2.0,
            mu1: 37.0,
            sigma1: 13.0,
        }
    }

    /// Overlap-free model for noiseless simulations.
    pub fn separated() -> Self {
        CountMixture {
            mu0: 0.0,
            sigma0: 1.0,
            mu1: 200.0,
            sigma1: 5.0,
        }
    }

    /// Classification threshold for the feedforward controller: equal-weight
    /// intersection f0(x) = f1(x) between the means.
    pub fn threshold(&self) -> f64 {
        crate::analysis::gaussian_intersection(
            0.5, self.mu0, self.sigma0, 0.5, self.mu1, self.sigma1,
        )
    }
}

#[derive(Debug, Clone)]
pub struct ReadoutErrorModel {
    pub loading_p: f64,
    pub eta_op: f64,
    pub eta_surv_b: f64,
    pub eta_surv_d: f64,
    /// dark -> bright flip probability applied after a readout
    pub p_depol_db: f64,
    /// bright -> dark flip probability applied after a readout
    pub p_depol_bd: f64,
    /// flat pulse infidelity epsilon; pi-pulse transfer becomes (1-eps)^2 on
    /// classical states. 0 trusts each RotationPulse's own unitary.
    pub pulse_infidelity: f64,
    pub mixture: CountMixture,
    pub feedforward_latency: f64,
    /// background vacuum-loss rate applied during Hold blocks (1/s)
    pub hold_loss_rate: f64,
    /// bright-state lifetime applied during Hold blocks (s); None = off
    pub hold_t1: Option<f64>,
}

impl ReadoutErrorModel {
    pub fn ideal() -> Self {
        ReadoutErrorModel {
            loading_p: 1.0,
            eta_op: 1.0,
            eta_surv_b: 1.0,
            eta_surv_d: 1.0,
            p_depol_db: 0.0,
            p_depol_bd: 0.0,
            pulse_infidelity: 0.0,
            mixture: CountMixture::separated(),
            feedforward_latency: 0.0,
            hold_loss_rate: 0.0,
            hold_t1: None,
        }
    }

    /// Array-averaged parameters from the experiment's summary table.
    pub fn paper_averaged() -> Self {
        ReadoutErrorModel {
            loading_p: 0.68,
            eta_op: 0.972,
            eta_surv_b: 0.966,
            eta_surv_d: 0.996,
            p_depol_db: 0.012,
            p_depol_bd: 0.012,
            pulse_infidelity: 0.003,
            mixture: CountMixture::paper(),
            feedforward_latency: 0.070,
            hold_loss_rate: 0.0,
            hold_t1: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.loading_p,
            self.eta_op,
            self.eta_surv_b,
            self.eta_surv_d,
            self.p_depol_db,
            self.p_depol_bd,
            self.pulse_infidelity,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(SimError::Config(
                "error-model probability outside [0, 1]".into(),
            ));
        }
        if self.mixture.sigma0 <= 0.0 || self.mixture.sigma1 <= 0.0 {
            return Err(SimError::Config("mixture sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Hidden per-readout truth, recorded alongside the sampled counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthState {
    Zero,
    One,
    Lost,
}

impl TruthState {
    pub fn code(&self) -> u8 {
        match self {
            TruthState::Zero => 0,
            TruthState::One => 1,
            TruthState::Lost => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShotRecord {
    pub counts: Vec<f64>,
    pub bits: Vec<bool>,
    /// hidden state just before / just after each readout
    pub truth_before: Vec<TruthState>,
    pub truth_after: Vec<TruthState>,
    pub loaded: bool,
    /// readout index during/after which the atom was lost, if any
    pub lost_at: Option<usize>,
    /// classical register seen by the feedforward controller
    pub classical_bits: Vec<bool>,
    /// indices of blocks whose (conditional) pulse actually fired
    pub pulses_applied: Vec<usize>,
    /// total wall time modeled, including feedforward latency
    pub sequence_time: f64,
}

// internal hidden state during a shot
struct AtomState {
    present: bool,
    bloch: QubitDensity,
}

impl AtomState {
    fn truth(&self) -> TruthState {
        if !self.present {
            TruthState::Lost
        } else if self.bloch.rho00 >= 0.5 {
            TruthState::Zero
        } else {
            TruthState::One
        }
    }
}

fn collapse(state: &mut AtomState, rng: &mut ChaCha8Rng) -> bool {
    // Born-rule projection onto |0>/|1>; returns true for |0> (bright)
    let p0 = state.bloch.rho00.clamp(0.0, 1.0);
    let zero = rng.gen_bool(p0);
    state.bloch = if zero {
        QubitDensity::ground()
    } else {
        QubitDensity::excited()
    };
    zero
}

fn eval_logic(logic: Logic, sources: &[usize], bits: &[Option<bool>]) -> Result<bool> {
    let mut acc = false;
    for &s in sources {
        let b = bits
            .get(s)
            .copied()
            .flatten()
            .ok_or(SimError::UnresolvedBit(s, bits.len()))?;
        acc ^= b;
    }
    Ok(match logic {
        Logic::Xor => acc,
        Logic::Xnor => !acc,
    })
}

/// Pure controller decision: should the feedforward pulse fire?
pub fn feedforward_controller(logic: Logic, sources: &[usize], bits: &[Option<bool>]) -> Result<bool> {
    eval_logic(logic, sources, bits)
}

pub fn simulate_shot(circuit: &Circuit, model: &ReadoutErrorModel, seed: u64) -> Result<ShotRecord> {
    circuit.validate()?;
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let threshold = model.mixture.threshold();
    let f0 = Normal::new(model.mixture.mu0, model.mixture.sigma0).unwrap();
    let f1 = Normal::new(model.mixture.mu1, model.mixture.sigma1).unwrap();

    let mut state = match circuit.initial {
        InitialState::Zero => AtomState {
            present: true,
            bloch: QubitDensity::ground(),
        },
        InitialState::One => AtomState {
            present: true,
            bloch: QubitDensity::excited(),
        },
        InitialState::Plus => {
            let mut rho = QubitDensity::ground();
            rho = apply_pulse(&RotationPulse::pi_half(1.0), &rho);
            AtomState {
                present: true,
                bloch: rho,
            }
        }
        InitialState::Unloaded => {
            let present = rng.gen_bool(model.loading_p);
            // loading leaves the nuclear spin unpolarized: 50/50 mixture
            let bright = rng.gen_bool(0.5);
            AtomState {
                present,
                bloch: if bright {
                    QubitDensity::ground()
                } else {
                    QubitDensity::excited()
                },
            }
        }
    };
    let loaded = state.present;

    let n_readouts = circuit.n_readouts();
    let mut rec = ShotRecord {
        counts: Vec::with_capacity(n_readouts),
        bits: Vec::with_capacity(n_readouts),
        truth_before: Vec::with_capacity(n_readouts),
        truth_after: Vec::with_capacity(n_readouts),
        loaded,
        lost_at: None,
        classical_bits: Vec::with_capacity(n_readouts),
        pulses_applied: Vec::new(),
        sequence_time: 0.0,
    };
    let mut resolved: Vec<Option<bool>> = Vec::new();

    for (bi, block) in circuit.blocks.iter().enumerate() {
        match block {
            Block::OpticalPump => {
                if state.present && state.bloch.rho11 >= 0.5 && rng.gen_bool(model.eta_op) {
                    state.bloch = QubitDensity::ground();
                }
            }
            Block::QubitReadout | Block::AtomReadout => {
                if matches!(block, Block::AtomReadout)
                    && state.present
                    && state.bloch.rho11 >= 0.5
                    && rng.gen_bool(model.eta_op)
                {
                    // pump-then-image variant
                    state.bloch = QubitDensity::ground();
                }
                rec.truth_before.push(state.truth());
                let bright_state = state.present && collapse(&mut state, &mut rng);
                let count = if bright_state {
                    f1.sample(&mut rng)
                } else {
                    f0.sample(&mut rng)
                };
                let idx = rec.counts.len();
                rec.counts.push(count);
                let bit = count > threshold;
                rec.bits.push(bit);
                rec.classical_bits.push(bit);
                resolved.push(Some(bit));
                if state.present {
                    let survives = if bright_state {
                        rng.gen_bool(model.eta_surv_b)
                    } else {
                        rng.gen_bool(model.eta_surv_d)
                    };
                    if !survives {
                        state.present = false;
                        rec.lost_at.get_or_insert(idx);
                    } else {
                        // depolarization acts after the count was sampled
                        let flip = if bright_state {
                            rng.gen_bool(model.p_depol_bd)
                        } else {
                            rng.gen_bool(model.p_depol_db)
                        };
                        if flip {
                            state.bloch = if bright_state {
                                QubitDensity::excited()
                            } else {
                                QubitDensity::ground()
                            };
                        }
                    }
                }
                rec.truth_after.push(state.truth());
            }
            Block::Rotate(pulse) => {
                if state.present {
                    apply_noisy_pulse(pulse, model, &mut state, &mut rng);
                    rec.pulses_applied.push(bi);
                }
            }
            Block::Hold(t) => {
                rec.sequence_time += t;
                apply_hold(*t, model, &mut state, &mut rng, &mut rec);
            }
            Block::Conditional {
                logic,
                sources,
                action,
            } => {
                let fire = eval_logic(*logic, sources, &resolved)?;
                rec.sequence_time += model.feedforward_latency;
                apply_hold(
                    model.feedforward_latency,
                    model,
                    &mut state,
                    &mut rng,
                    &mut rec,
                );
                if fire && state.present {
                    apply_noisy_pulse(action, model, &mut state, &mut rng);
                    rec.pulses_applied.push(bi);
                }
            }
        }
    }
    Ok(rec)
}

fn apply_noisy_pulse(
    pulse: &RotationPulse,
    model: &ReadoutErrorModel,
    state: &mut AtomState,
    rng: &mut ChaCha8Rng,
) {
    if model.pulse_infidelity > 0.0 {
        // flat model: transfer amplitude scaled by (1 - eps) so a pi pulse
        // transfers with probability (1 - eps)^2
        let om = pulse.omega_eff();
        let theta = om * pulse.length;
        let amp = ((theta / 2.0).sin() * (1.0 - model.pulse_infidelity)).clamp(-1.0, 1.0);
        let eff = RotationPulse {
            length: 2.0 * amp.asin() / om,
            ..*pulse
        };
        state.bloch = apply_pulse(&eff, &state.bloch);
    } else {
        state.bloch = apply_pulse(pulse, &state.bloch);
    }
    let _ = rng;
}

fn apply_hold(
    t: f64,
    model: &ReadoutErrorModel,
    state: &mut AtomState,
    rng: &mut ChaCha8Rng,
    rec: &mut ShotRecord,
) {
    if !state.present || t <= 0.0 {
        return;
    }
    if model.hold_loss_rate > 0.0 {
        let p_lost = 1.0 - (-t * model.hold_loss_rate).exp();
        if rng.gen_bool(p_lost) {
            state.present = false;
            if !rec.counts.is_empty() {
                rec.lost_at.get_or_insert(rec.counts.len() - 1);
            } else {
                rec.lost_at.get_or_insert(0);
            }
            return;
        }
    }
    if let Some(t1) = model.hold_t1 {
        // bright-state decay |0> -> |1> with rate 1/T1
        let p_decay = 1.0 - (-t / t1).exp();
        if state.bloch.rho00 >= 0.5 && rng.gen_bool(p_decay) {
            state.bloch = QubitDensity::excited();
        }
    }
}

pub fn simulate_ensemble(
    circuit: &Circuit,
    model: &ReadoutErrorModel,
    n_shots: usize,
    root_seed: u64,
) -> Result<Vec<ShotRecord>> {
    circuit.validate()?;
    model.validate()?;
    let shots = par::map_indexed(n_shots, |i| {
        simulate_shot(circuit, model, par::derive_seed(root_seed, i as u64))
    });
    shots.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    PlusZ,
    MinusZ,
    PlusX,
    MinusX,
}

/// Compile a list of basis choices into (pre-rotation, qubit readout,
/// post-rotation) triples. Rotations use unit Rabi frequency; identity
/// rotations are omitted.
pub fn variable_basis_sequence(bases: &[Basis], initial: InitialState) -> Result<Circuit> {
    if bases.is_empty() {
        return Err(SimError::MalformedCircuit("empty basis list".into()));
    }
    let mut blocks = Vec::new();
    for &basis in bases {
        let pre = basis_rotation(basis);
        if let Some(p) = pre {
            blocks.push(Block::Rotate(p));
        }
        blocks.push(Block::QubitReadout);
        if let Some(p) = pre {
            blocks.push(Block::Rotate(inverse_pulse(&p)));
        }
    }
    Ok(Circuit::new(initial, blocks))
}

fn basis_rotation(basis: Basis) -> Option<RotationPulse> {
    use std::f64::consts::PI;
    match basis {
        Basis::PlusZ => None,
        // pi about x: +z <-> -z
        Basis::MinusZ => Some(RotationPulse::pi(1.0)),
        // R_{-y}(pi/2): +x -> +z
        Basis::PlusX => Some(RotationPulse {
            omega0: 1.0,
            detuning: 0.0,
            length: PI / 2.0,
            phase: -PI / 2.0,
        }),
        // R_{+y}(pi/2): -x -> +z
        Basis::MinusX => Some(RotationPulse {
            omega0: 1.0,
            detuning: 0.0,
            length: PI / 2.0,
            phase: PI / 2.0,
        }),
    }
}

fn inverse_pulse(p: &RotationPulse) -> RotationPulse {
    RotationPulse {
        phase: p.phase + std::f64::consts::PI,
        ..*p
    }
}

/// Zeno circuit of Fig. 6(a): initialize |+>, an initial readout, then
/// N-1 interleaved rotations R(theta_tot/(N-1)) and readouts, with a final
/// atom readout for survival post-selection.
pub fn zeno_circuit(theta_total: f64, n: usize) -> Result<Circuit> {
    if n < 1 {
        return Err(SimError::MalformedCircuit("zeno needs n >= 1".into()));
    }
    let mut blocks = vec![Block::QubitReadout];
    if n > 1 {
        let step = RotationPulse {
            omega0: 1.0,
            detuning: 0.0,
            length: theta_total / (n - 1) as f64,
            phase: 0.0,
        };
        for _ in 1..n {
            blocks.push(Block::Rotate(step));
            blocks.push(Block::QubitReadout);
        }
    }
    blocks.push(Block::AtomReadout);
    Ok(Circuit::new(InitialState::Plus, blocks))
}

/// Fig. 7 active-reset circuit: initialize |+>, an initial readout, then
/// `n_loops` loops of (pi/2, readout, conditional pulse on the initial and
/// latest bits under the per-loop schedule, readout), with a final atom
/// readout for post-selection.
pub fn feedforward_circuit(
    n_loops: usize,
    schedule: impl Fn(usize) -> Logic,
    pulse: RotationPulse,
) -> Circuit {
    let mut blocks = vec![Block::QubitReadout];
    for k in 1..=n_loops {
        blocks.push(Block::Rotate(RotationPulse::pi_half(1.0)));
        blocks.push(Block::QubitReadout);
        blocks.push(Block::Conditional {
            logic: schedule(k),
            sources: vec![0, 2 * k - 1],
            action: pulse,
        });
        blocks.push(Block::QubitReadout);
    }
    blocks.push(Block::AtomReadout);
    Circuit::new(InitialState::Plus, blocks)
}
