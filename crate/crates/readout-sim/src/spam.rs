//! SPAM correction: directed weighted acyclic probability graphs over
//! measurement sequences, conditioned path-sum models, and numerical
//! inversion of measured-vs-model systems with corner-based uncertainties.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::circuit::{Block, Circuit, InitialState};
use crate::error::{Result, SimError};
use crate::par;

// canonical parameter registry shared by every graph
pub const PARAM_NAMES: [&str; 9] = [
    "p",          // loading probability
    "eta_op",     // optical-pump efficiency
    "eta_surv_b", // bright-state survival per readout
    "eta_surv_d", // dark-state survival per readout
    "p_depol_db", // dark -> bright flip after a readout
    "p_depol_bd", // bright -> dark flip after a readout
    "eta_pi",     // pi-pulse transfer probability
    "f0",         // dark discrimination fidelity (fixed input)
    "f1",         // bright discrimination fidelity (fixed input)
];

pub fn param_index(name: &str) -> Option<usize> {
    PARAM_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Factor {
    P(usize),
    OneMinus(usize),
    Const(f64),
}

impl Factor {
    fn eval(&self, params: &[f64]) -> f64 {
        match self {
            Factor::P(k) => params[*k],
            Factor::OneMinus(k) => 1.0 - params[*k],
            Factor::Const(c) => *c,
        }
    }

    fn label(&self) -> String {
        match self {
            Factor::P(k) => PARAM_NAMES[*k].to_string(),
            Factor::OneMinus(k) => format!("(1-{})", PARAM_NAMES[*k]),
            Factor::Const(c) => format!("{c}"),
        }
    }
}

/// Product of factors; empty product = 1.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Weight(pub Vec<Factor>);

impl Weight {
    fn one() -> Self {
        Weight(Vec::new())
    }
    fn eval(&self, params: &[f64]) -> f64 {
        self.0.iter().map(|f| f.eval(params)).product()
    }
    fn label(&self) -> String {
        if self.0.is_empty() {
            "1".to_string()
        } else {
            self.0
                .iter()
                .map(|f| f.label())
                .collect::<Vec<_>>()
                .join("*")
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub label: String,
    /// Some((readout index, bright?)) on readout-outcome nodes
    pub outcome: Option<(usize, bool)>,
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: Weight,
}

#[derive(Debug, Clone)]
pub struct ProbGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub n_readouts: usize,
}

// hidden system state carried between layers
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Hidden {
    Zero,
    One,
    Empty,
}

impl Hidden {
    fn tag(&self) -> &'static str {
        match self {
            Hidden::Zero => "0",
            Hidden::One => "1",
            Hidden::Empty => "lost",
        }
    }
}

struct Builder {
    graph: ProbGraph,
    // reachable hidden states at the current layer -> node index
    frontier: HashMap<Hidden, usize>,
    layer: usize,
}

impl Builder {
    fn node(&mut self, label: String, outcome: Option<(usize, bool)>) -> usize {
        self.graph.nodes.push(Node { label, outcome });
        self.graph.nodes.len() - 1
    }

    fn edge(&mut self, from: usize, to: usize, weight: Weight) {
        self.graph.edges.push(Edge { from, to, weight });
    }

    /// Advance the frontier through a transition map: for each current
    /// hidden state, a list of (next state, weight).
    fn transition(&mut self, name: &str, map: impl Fn(Hidden) -> Vec<(Hidden, Weight)>) {
        self.layer += 1;
        let layer = self.layer;
        let old = std::mem::take(&mut self.frontier);
        let mut next: HashMap<Hidden, usize> = HashMap::new();
        // accumulate parallel edges into one node per target state
        for (&state, &from) in old.iter() {
            for (to_state, w) in map(state) {
                let to = *next.entry(to_state).or_insert_with_key(|s| {
                    let label = format!("{name}{layer}:{}", s.tag());
                    self.graph.nodes.push(Node {
                        label,
                        outcome: None,
                    });
                    self.graph.nodes.len() - 1
                });
                self.graph.edges.push(Edge {
                    from,
                    to,
                    weight: w,
                });
            }
        }
        self.frontier = next;
    }
}

fn p(name: &str) -> Factor {
    Factor::P(param_index(name).unwrap())
}
fn q(name: &str) -> Factor {
    Factor::OneMinus(param_index(name).unwrap())
}

fn pump_map(state: Hidden) -> Vec<(Hidden, Weight)> {
    match state {
        Hidden::One => vec![
            (Hidden::Zero, Weight(vec![p("eta_op")])),
            (Hidden::One, Weight(vec![q("eta_op")])),
        ],
        s => vec![(s, Weight::one())],
    }
}

fn classify_pulse(pulse: &crate::dynamics::RotationPulse) -> Result<f64> {
    if pulse.detuning != 0.0 {
        return Err(SimError::UnsupportedBlock(
            "detuned pulse in probability graph".into(),
        ));
    }
    Ok(pulse.omega0 * pulse.length)
}

/// Build the probability graph for a circuit over the canonical parameters.
/// Supported blocks: readouts, optical pump, resonant pi and pi/2 pulses
/// (pi/2 is an ideal 1/2-1/2 splitter), and holds (identity).
pub fn build_graph(circuit: &Circuit) -> Result<ProbGraph> {
    circuit.validate()?;
    let mut b = Builder {
        graph: ProbGraph {
            nodes: Vec::new(),
            edges: Vec::new(),
            n_readouts: circuit.n_readouts(),
        },
        frontier: HashMap::new(),
        layer: 0,
    };
    let start = b.node("Start".into(), None);
    match circuit.initial {
        InitialState::Unloaded => {
            // loading leaves the spin unpolarized: half bright, half dark
            let n0 = b.node("loaded:0".into(), None);
            let n1 = b.node("loaded:1".into(), None);
            let empty = b.node("loaded:lost".into(), None);
            b.edge(start, n0, Weight(vec![p("p"), Factor::Const(0.5)]));
            b.edge(start, n1, Weight(vec![p("p"), Factor::Const(0.5)]));
            b.edge(start, empty, Weight(vec![q("p")]));
            b.frontier.insert(Hidden::Zero, n0);
            b.frontier.insert(Hidden::One, n1);
            b.frontier.insert(Hidden::Empty, empty);
        }
        InitialState::Zero => {
            let n = b.node("init:0".into(), None);
            b.edge(start, n, Weight::one());
            b.frontier.insert(Hidden::Zero, n);
        }
        InitialState::One => {
            let n = b.node("init:1".into(), None);
            b.edge(start, n, Weight::one());
            b.frontier.insert(Hidden::One, n);
        }
        InitialState::Plus => {
            let n0 = b.node("init:0".into(), None);
            let n1 = b.node("init:1".into(), None);
            b.edge(start, n0, Weight(vec![Factor::Const(0.5)]));
            b.edge(start, n1, Weight(vec![Factor::Const(0.5)]));
            b.frontier.insert(Hidden::Zero, n0);
            b.frontier.insert(Hidden::One, n1);
        }
    }

    let mut readout = 0usize;
    for block in &circuit.blocks {
        match block {
            Block::OpticalPump => b.transition("pump", pump_map),
            Block::Hold(_) => {}
            Block::Rotate(pulse) => {
                let theta = classify_pulse(pulse)?;
                if (theta - std::f64::consts::PI).abs() < 1e-9 {
                    b.transition("pi", |s| match s {
                        Hidden::Zero => vec![
                            (Hidden::One, Weight(vec![p("eta_pi")])),
                            (Hidden::Zero, Weight(vec![q("eta_pi")])),
                        ],
                        Hidden::One => vec![
                            (Hidden::Zero, Weight(vec![p("eta_pi")])),
                            (Hidden::One, Weight(vec![q("eta_pi")])),
                        ],
                        Hidden::Empty => vec![(Hidden::Empty, Weight::one())],
                    });
                } else if (theta - std::f64::consts::PI / 2.0).abs() < 1e-9 {
                    // ideal splitter
                    b.transition("half", |s| match s {
                        Hidden::Empty => vec![(Hidden::Empty, Weight::one())],
                        _ => vec![
                            (Hidden::Zero, Weight(vec![Factor::Const(0.5)])),
                            (Hidden::One, Weight(vec![Factor::Const(0.5)])),
                        ],
                    });
                } else {
                    return Err(SimError::UnsupportedBlock(format!(
                        "rotation angle {theta} not pi or pi/2"
                    )));
                }
            }
            Block::QubitReadout | Block::AtomReadout => {
                if matches!(block, Block::AtomReadout) {
                    b.transition("pump", pump_map);
                }
                let k = readout;
                readout += 1;
                // image: branch each hidden state into Bright/Dark outcome
                // nodes that remember the hidden state
                b.layer += 1;
                let old = std::mem::take(&mut b.frontier);
                let mut outcome_nodes: Vec<(usize, Hidden, bool)> = Vec::new();
                for (&state, &from) in old.iter() {
                    let (wb, wd) = match state {
                        Hidden::Zero => (Weight(vec![p("f1")]), Weight(vec![q("f1")])),
                        _ => (Weight(vec![q("f0")]), Weight(vec![p("f0")])),
                    };
                    for (bright, w) in [(true, wb), (false, wd)] {
                        let label = format!(
                            "R{k}:{}|{}",
                            if bright { "B" } else { "D" },
                            state.tag()
                        );
                        let n = b.node(label, Some((k, bright)));
                        b.edge(from, n, w);
                        outcome_nodes.push((n, state, bright));
                    }
                }
                // survival + post-readout depolarization
                b.layer += 1;
                let layer = b.layer;
                let mut next: HashMap<Hidden, usize> = HashMap::new();
                for (from, state, _) in outcome_nodes {
                    let branches: Vec<(Hidden, Weight)> = match state {
                        Hidden::Zero => vec![
                            (
                                Hidden::Zero,
                                Weight(vec![p("eta_surv_b"), q("p_depol_bd")]),
                            ),
                            (
                                Hidden::One,
                                Weight(vec![p("eta_surv_b"), p("p_depol_bd")]),
                            ),
                            (Hidden::Empty, Weight(vec![q("eta_surv_b")])),
                        ],
                        Hidden::One => vec![
                            (
                                Hidden::One,
                                Weight(vec![p("eta_surv_d"), q("p_depol_db")]),
                            ),
                            (
                                Hidden::Zero,
                                Weight(vec![p("eta_surv_d"), p("p_depol_db")]),
                            ),
                            (Hidden::Empty, Weight(vec![q("eta_surv_d")])),
                        ],
                        Hidden::Empty => vec![(Hidden::Empty, Weight::one())],
                    };
                    for (to_state, w) in branches {
                        let to = *next.entry(to_state).or_insert_with_key(|s| {
                            b.graph.nodes.push(Node {
                                label: format!("after{layer}:{}", s.tag()),
                                outcome: None,
                            });
                            b.graph.nodes.len() - 1
                        });
                        b.edge(from, to, w);
                    }
                }
                b.frontier = next;
            }
            Block::Conditional { .. } => {
                return Err(SimError::UnsupportedBlock(
                    "conditional block in probability graph".into(),
                ));
            }
        }
    }
    Ok(b.graph)
}

impl ProbGraph {
    fn outgoing(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (e, edge) in self.edges.iter().enumerate() {
            out[edge.from].push(e);
        }
        out
    }

    /// Verify outgoing weights sum to 1 on all non-terminal nodes at a
    /// parameter point.
    pub fn check_normalization(&self, params: &[f64], tol: f64) -> Result<()> {
        for (n, edges) in self.outgoing().iter().enumerate() {
            if edges.is_empty() {
                continue;
            }
            let sum: f64 = edges.iter().map(|&e| self.edges[e].weight.eval(params)).sum();
            if (sum - 1.0).abs() > tol {
                return Err(SimError::Config(format!(
                    "node `{}` outgoing weights sum to {sum}",
                    self.nodes[n].label
                )));
            }
        }
        Ok(())
    }

    /// Graphviz DOT export for visual inspection.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph spam {\n  rankdir=LR;\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "  n{i} [label=\"{}\"];", n.label);
        }
        for e in &self.edges {
            let _ = writeln!(
                s,
                "  n{} -> n{} [label=\"{}\"];",
                e.from,
                e.to,
                e.weight.label()
            );
        }
        s.push_str("}\n");
        s
    }
}

/// Predicate over readout outcomes: numerator paths must match
/// `given` and `target`; denominator paths only `given`.
#[derive(Debug, Clone, Default)]
pub struct Condition {
    pub target: Vec<(usize, bool)>,
    pub given: Vec<(usize, bool)>,
}

#[derive(Debug, Clone)]
pub struct PathModel {
    graph: ProbGraph,
    numerator_conditions: Vec<(usize, bool)>,
    denominator_conditions: Vec<(usize, bool)>,
}

fn conditioned_mass(graph: &ProbGraph, conditions: &[(usize, bool)], params: &[f64]) -> f64 {
    let blocked = |node: usize| -> bool {
        graph.nodes[node]
            .outcome
            .map(|(k, v)| conditions.iter().any(|&(ck, cv)| ck == k && cv != v))
            .unwrap_or(false)
    };
    let mut mass = vec![0.0f64; graph.nodes.len()];
    mass[0] = 1.0;
    let out = graph.outgoing();
    let mut terminal = 0.0;
    for n in 0..graph.nodes.len() {
        if mass[n] == 0.0 {
            continue;
        }
        if out[n].is_empty() {
            terminal += mass[n];
            continue;
        }
        for &e in &out[n] {
            let edge = &graph.edges[e];
            if blocked(edge.to) {
                continue;
            }
            mass[edge.to] += mass[n] * edge.weight.eval(params);
        }
    }
    terminal
}

impl PathModel {
    pub fn evaluate(&self, params: &[f64]) -> Result<f64> {
        let den = conditioned_mass(&self.graph, &self.denominator_conditions, params);
        if den <= 0.0 {
            return Err(SimError::ZeroDenominator(format!(
                "denominator evaluates to {den}"
            )));
        }
        let num = conditioned_mass(&self.graph, &self.numerator_conditions, params);
        Ok(num / den)
    }
}

pub fn path_model(graph: &ProbGraph, condition: &Condition) -> Result<PathModel> {
    for &(k, _) in condition.given.iter().chain(&condition.target) {
        if k >= graph.n_readouts {
            return Err(SimError::UnresolvedBit(k, graph.n_readouts));
        }
    }
    // structural satisfiability of the conditioning events: positive mass at
    // an interior parameter point
    let interior = [0.5f64; PARAM_NAMES.len()];
    if conditioned_mass(graph, &condition.given, &interior) <= 0.0 {
        return Err(SimError::ZeroDenominator(format!(
            "no path satisfies {:?}",
            condition.given
        )));
    }
    let mut numerator_conditions = condition.given.clone();
    numerator_conditions.extend_from_slice(&condition.target);
    Ok(PathModel {
        graph: graph.clone(),
        numerator_conditions,
        denominator_conditions: condition.given.clone(),
    })
}

/// Model side of one equation: a conditioned ratio or a fixed linear
/// combination of ratios (the state-averaged pi-pulse estimator).
#[derive(Debug, Clone)]
pub enum ModelExpr {
    Single(PathModel),
    Combination(Vec<(f64, PathModel)>),
}

impl ModelExpr {
    pub fn evaluate(&self, params: &[f64]) -> Result<f64> {
        match self {
            ModelExpr::Single(m) => m.evaluate(params),
            ModelExpr::Combination(terms) => {
                let mut v = 0.0;
                for (c, m) in terms {
                    v += c * m.evaluate(params)?;
                }
                Ok(v)
            }
        }
    }
}

/// One constrained equation: model value must match `measured`.
#[derive(Debug, Clone)]
pub struct Equation {
    pub model: ModelExpr,
    pub measured: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone)]
pub struct MeasurementSystem {
    pub equations: Vec<Equation>,
    /// indices (into PARAM_NAMES) of the solved parameters
    pub unknowns: Vec<usize>,
    /// fixed values for every parameter; unknowns get overwritten
    pub fixed: [f64; PARAM_NAMES.len()],
}

impl MeasurementSystem {
    pub fn validate(&self) -> Result<()> {
        if self.equations.len() < self.unknowns.len() {
            return Err(SimError::Config(format!(
                "{} equations cannot constrain {} unknowns",
                self.equations.len(),
                self.unknowns.len()
            )));
        }
        Ok(())
    }

    fn assemble(&self, x: &[f64]) -> [f64; PARAM_NAMES.len()] {
        let mut params = self.fixed;
        for (i, &k) in self.unknowns.iter().enumerate() {
            params[k] = x[i];
        }
        params
    }

    pub fn residuals(&self, x: &[f64]) -> Result<DVector<f64>> {
        let params = self.assemble(x);
        let mut r = DVector::zeros(self.equations.len());
        for (i, eq) in self.equations.iter().enumerate() {
            r[i] = eq.model.evaluate(&params)? - eq.measured;
        }
        Ok(r)
    }
}

#[derive(Debug, Clone)]
pub struct CorrectionResult {
    /// solved values, ordered like `system.unknowns`
    pub values: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    /// RMS corner deviations; empty until corner_uncertainty runs
    pub uncertainties: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Damped (Gauss-)Newton with numerical Jacobian, box-projected to [0,1].
pub fn solve(system: &MeasurementSystem, initial_guess: &[f64]) -> Result<CorrectionResult> {
    system.validate()?;
    let n = system.unknowns.len();
    if initial_guess.len() != n {
        return Err(SimError::Config("initial guess length mismatch".into()));
    }
    let mut x: Vec<f64> = initial_guess.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let mut r = system.residuals(&x)?;
    let mut trace = format!("|r0|={:.3e}", r.norm());
    let max_iter = 100;
    for iter in 0..max_iter {
        if r.norm() < 1e-10 {
            return Ok(CorrectionResult {
                values: x,
                residual_norm: r.norm(),
                iterations: iter,
                uncertainties: Vec::new(),
                warnings: Vec::new(),
            });
        }
        // numerical Jacobian, central differences
        let h = 1e-7;
        let m = system.equations.len();
        let mut jac = DMatrix::zeros(m, n);
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] = (xp[j] + h).min(1.0);
            xm[j] = (xm[j] - h).max(0.0);
            let rp = system.residuals(&xp)?;
            let rm = system.residuals(&xm)?;
            let dx = xp[j] - xm[j];
            for i in 0..m {
                jac[(i, j)] = (rp[i] - rm[i]) / dx;
            }
        }
        // damped Gauss-Newton with Levenberg-Marquardt escalation when a
        // raw step cannot reduce the residual
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let scale = jtj.diagonal().max().max(1e-12);
        let mut improved = false;
        let mut singular_raw = false;
        let mut mu = 0.0f64;
        'escalate: for _ in 0..12 {
            let mut damped = jtj.clone();
            for d in 0..n {
                damped[(d, d)] += mu * scale;
            }
            if let Some(step) = damped.lu().solve(&jtr) {
                let mut lambda = 1.0;
                for _ in 0..60 {
                    let xt: Vec<f64> = x
                        .iter()
                        .zip(step.iter())
                        .map(|(xi, si)| (xi - lambda * si).clamp(0.0, 1.0))
                        .collect();
                    if let Ok(rt) = system.residuals(&xt) {
                        if rt.norm() < r.norm() * (1.0 - 1e-12) {
                            x = xt;
                            r = rt;
                            improved = true;
                            break 'escalate;
                        }
                    }
                    lambda /= 2.0;
                }
            } else if mu == 0.0 {
                singular_raw = true;
            }
            mu = if mu == 0.0 { 1e-8 } else { mu * 100.0 };
        }
        let _ = write!(trace, " -> |r{}|={:.3e}", iter + 1, r.norm());
        if !improved {
            if r.norm() < 1e-8 {
                return Ok(CorrectionResult {
                    values: x,
                    residual_norm: r.norm(),
                    iterations: iter,
                    uncertainties: Vec::new(),
                    warnings: vec![format!("best-effort solution, |r|={:.3e}", r.norm())],
                });
            }
            if singular_raw {
                return Err(SimError::JacobianSingular { iter, trace });
            }
            return Err(SimError::NewtonNonConvergence {
                iter,
                trace,
            });
        }
    }
    if r.norm() < 1e-8 {
        // best-effort convergence within the result-type residual bound
        return Ok(CorrectionResult {
            values: x,
            residual_norm: r.norm(),
            iterations: max_iter,
            uncertainties: Vec::new(),
            warnings: vec![format!("best-effort solution, |r|={:.3e}", r.norm())],
        });
    }
    Err(SimError::NewtonNonConvergence {
        iter: max_iter,
        trace,
    })
}

/// Re-solve at every +/- sigma corner of the measured values; uncertainty =
/// RMS deviation of corner solutions from the nominal one.
pub fn corner_uncertainty(
    system: &MeasurementSystem,
    result: &CorrectionResult,
) -> Result<(Vec<f64>, Vec<String>)> {
    let n_meas = system.equations.len();
    if n_meas > 16 {
        return Err(SimError::Config(format!(
            "corner propagation over {n_meas} measurements exceeds the 2^16 guard"
        )));
    }
    let corners = 1usize << n_meas;
    let solutions: Vec<std::result::Result<Vec<f64>, String>> =
        par::map_indexed(corners, |c| {
            let mut sys = system.clone();
            for (i, eq) in sys.equations.iter_mut().enumerate() {
                let sign = if (c >> i) & 1 == 1 { 1.0 } else { -1.0 };
                eq.measured = (eq.measured + sign * eq.sigma).clamp(0.0, 1.0);
            }
            solve(&sys, &result.values)
                .map(|r| r.values)
                .map_err(|e| format!("corner {c:b}: {e}"))
        });
    let mut warnings = Vec::new();
    let mut sum_sq = vec![0.0f64; system.unknowns.len()];
    let mut n_ok = 0usize;
    for sol in solutions {
        match sol {
            Ok(values) => {
                n_ok += 1;
                for (s, (v, v0)) in sum_sq.iter_mut().zip(values.iter().zip(&result.values)) {
                    *s += (v - v0) * (v - v0);
                }
            }
            Err(w) => warnings.push(w),
        }
    }
    if n_ok == 0 {
        return Err(SimError::NewtonNonConvergence {
            iter: 0,
            trace: "every corner solve failed".into(),
        });
    }
    let unc: Vec<f64> = sum_sq.iter().map(|s| (s / n_ok as f64).sqrt()).collect();
    Ok((unc, warnings))
}

// ---------------------------------------------------------------------------
// the standard three-image + pi-pulse system

/// Measured inputs for the standard correction, as (value, sigma).
#[derive(Debug, Clone, Copy)]
pub struct StandardMeasurements {
    pub fill_fraction: (f64, f64),
    pub eta_op: (f64, f64),
    pub eta_surv_b: (f64, f64),
    pub p_depol_db: (f64, f64),
    pub p_depol_bd: (f64, f64),
    pub eta_pi: (f64, f64),
}

/// Fixed (not solved) parameters: discrimination fidelities stay uncorrected
/// and the dark survival comes from the separate dark-lifetime fit.
#[derive(Debug, Clone, Copy)]
pub struct FixedInputs {
    pub f0: f64,
    pub f1: f64,
    pub eta_surv_d: f64,
}

/// Two-image survival/pumping sequence: two atom readouts in quick
/// succession; eta_surv^B = Pr(B_b|B_a) and eta_OP = Pr(B_a|B_b), the
/// latter because a dark-then-bright record is dominated by a pump
/// failure in the first image.
pub fn two_image_circuit() -> Circuit {
    Circuit::new(
        InitialState::Unloaded,
        vec![Block::AtomReadout, Block::AtomReadout],
    )
}

/// Fig. 3(c) depolarization circuit: two qubit images on the unpolarized
/// loaded mixture, then a presence check. No pumping, so the dark-at-a
/// set is dominated by genuinely dark atoms.
pub fn three_image_circuit() -> Circuit {
    Circuit::new(
        InitialState::Unloaded,
        vec![Block::QubitReadout, Block::QubitReadout, Block::AtomReadout],
    )
}

/// Fig. 12 three-readout pi-pulse sequence: image, pi pulse, image,
/// presence check, again on the unpolarized loaded mixture.
pub fn pi_pulse_circuit() -> Circuit {
    use crate::dynamics::RotationPulse;
    Circuit::new(
        InitialState::Unloaded,
        vec![
            Block::QubitReadout,
            Block::Rotate(RotationPulse::pi(1.0)),
            Block::QubitReadout,
            Block::AtomReadout,
        ],
    )
}

/// Assemble the 6-unknown system (p, eta_op, eta_surv_b, both depol
/// directions, eta_pi) from the two standard circuits.
pub fn standard_system(
    measured: &StandardMeasurements,
    fixed: &FixedInputs,
) -> Result<MeasurementSystem> {
    let surv_graph = build_graph(&two_image_circuit())?;
    let depol_graph = build_graph(&three_image_circuit())?;
    let pi_graph = build_graph(&pi_pulse_circuit())?;

    let cond = |target: Vec<(usize, bool)>, given: Vec<(usize, bool)>| Condition { target, given };
    let equations = vec![
        Equation {
            model: ModelExpr::Single(path_model(&surv_graph, &cond(vec![(0, true)], vec![]))?),
            measured: measured.fill_fraction.0,
            sigma: measured.fill_fraction.1,
        },
        Equation {
            model: ModelExpr::Single(path_model(
                &surv_graph,
                &cond(vec![(0, true)], vec![(1, true)]),
            )?),
            measured: measured.eta_op.0,
            sigma: measured.eta_op.1,
        },
        Equation {
            model: ModelExpr::Single(path_model(
                &surv_graph,
                &cond(vec![(1, true)], vec![(0, true)]),
            )?),
            measured: measured.eta_surv_b.0,
            sigma: measured.eta_surv_b.1,
        },
        Equation {
            model: ModelExpr::Single(path_model(
                &depol_graph,
                &cond(vec![(1, true)], vec![(0, false), (2, true)]),
            )?),
            measured: measured.p_depol_db.0,
            sigma: measured.p_depol_db.1,
        },
        Equation {
            model: ModelExpr::Single(path_model(
                &depol_graph,
                &cond(vec![(1, false)], vec![(0, true), (2, true)]),
            )?),
            measured: measured.p_depol_bd.0,
            sigma: measured.p_depol_bd.1,
        },
        Equation {
            // state-averaged pi transfer on the pulse sequence
            model: ModelExpr::Combination(vec![
                (
                    0.5,
                    path_model(
                        &pi_graph,
                        &cond(vec![(1, true)], vec![(0, false), (2, true)]),
                    )?,
                ),
                (
                    0.5,
                    path_model(
                        &pi_graph,
                        &cond(vec![(1, false)], vec![(0, true), (2, true)]),
                    )?,
                ),
            ]),
            measured: measured.eta_pi.0,
            sigma: measured.eta_pi.1,
        },
    ];
    let mut fixed_vec = [0.5f64; PARAM_NAMES.len()];
    fixed_vec[param_index("f0").unwrap()] = fixed.f0;
    fixed_vec[param_index("f1").unwrap()] = fixed.f1;
    fixed_vec[param_index("eta_surv_d").unwrap()] = fixed.eta_surv_d;
    let system = MeasurementSystem {
        equations,
        unknowns: ["p", "eta_op", "eta_surv_b", "p_depol_db", "p_depol_bd", "eta_pi"]
            .iter()
            .map(|n| param_index(n).unwrap())
            .collect(),
        fixed: fixed_vec,
    };
    system.validate()?;
    Ok(system)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn truth_params() -> [f64; PARAM_NAMES.len()] {
        let mut v = [0.0; PARAM_NAMES.len()];
        v[param_index("p").unwrap()] = 0.68;
        v[param_index("eta_op").unwrap()] = 0.972;
        v[param_index("eta_surv_b").unwrap()] = 0.966;
        v[param_index("eta_surv_d").unwrap()] = 0.996;
        v[param_index("p_depol_db").unwrap()] = 0.012;
        v[param_index("p_depol_bd").unwrap()] = 0.012;
        v[param_index("eta_pi").unwrap()] = 0.994;
        v[param_index("f0").unwrap()] = 0.997;
        v[param_index("f1").unwrap()] = 0.991;
        v
    }

    #[test]
    fn single_readout_bright_terminal() {
        // p* = p eta_op f1 + (1 - p eta_op)(1 - f0)
        let circuit = Circuit::new(
            InitialState::Unloaded,
            vec![Block::OpticalPump, Block::QubitReadout],
        );
        let graph = build_graph(&circuit).unwrap();
        let model = path_model(
            &graph,
            &Condition {
                target: vec![(0, true)],
                given: vec![],
            },
        )
        .unwrap();
        let params = truth_params();
        let (p, eta_op) = (0.68, 0.972);
        let (f0, f1) = (0.997, 0.991);
        // 50/50 loaded mixture: the bright half stays, the dark half pumps
        let bright = p * 0.5 * (1.0 + eta_op);
        let expected = bright * f1 + (1.0 - bright) * (1.0 - f0);
        assert_relative_eq!(model.evaluate(&params).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn no_pulse_means_no_eta_pi_edges() {
        let graph = build_graph(&three_image_circuit()).unwrap();
        let k = param_index("eta_pi").unwrap();
        let uses_eta_pi = graph.edges.iter().any(|e| {
            e.weight
                .0
                .iter()
                .any(|f| matches!(f, Factor::P(i) | Factor::OneMinus(i) if *i == k))
        });
        assert!(!uses_eta_pi);
    }

    #[test]
    fn graph_normalization_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for graph in [
            build_graph(&three_image_circuit()).unwrap(),
            build_graph(&pi_pulse_circuit()).unwrap(),
        ] {
            for _ in 0..100 {
                let params: Vec<f64> =
                    (0..PARAM_NAMES.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
                graph.check_normalization(&params, 1e-12).unwrap();
            }
        }
    }

    #[test]
    fn path_model_in_unit_interval() {
        let graph = build_graph(&pi_pulse_circuit()).unwrap();
        let model = path_model(
            &graph,
            &Condition {
                target: vec![(1, true)],
                given: vec![(0, false), (2, true)],
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let params: Vec<f64> = (0..PARAM_NAMES.len())
                .map(|_| rng.gen_range(0.05..0.95))
                .collect();
            let v = model.evaluate(&params).unwrap();
            assert!((0.0..=1.0).contains(&v), "model value {v}");
        }
    }

    #[test]
    fn trivial_condition_is_one() {
        let graph = build_graph(&three_image_circuit()).unwrap();
        let model = path_model(&graph, &Condition::default()).unwrap();
        assert_relative_eq!(model.evaluate(&truth_params()).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unsatisfiable_condition_zero_denominator() {
        let graph = build_graph(&three_image_circuit()).unwrap();
        assert!(matches!(
            path_model(
                &graph,
                &Condition {
                    target: vec![],
                    given: vec![(5, true)],
                }
            ),
            Err(SimError::UnresolvedBit(5, 3))
        ));
    }

    #[test]
    fn near_perfect_measurements_identity_correction() {
        // exactly perfect measurements make the depolarization conditioning
        // sets empty, so probe just inside the corner instead
        let mut truth = truth_params();
        for name in ["p", "eta_op", "eta_surv_b", "eta_pi"] {
            truth[param_index(name).unwrap()] = 0.999;
        }
        for name in ["p_depol_db", "p_depol_bd"] {
            truth[param_index(name).unwrap()] = 1e-4;
        }
        let measured = forward_measurements(&truth);
        let fixed = FixedInputs {
            f0: 0.997,
            f1: 0.991,
            eta_surv_d: 0.996,
        };
        let system = standard_system(&measured, &fixed).unwrap();
        let result = solve(&system, &[0.9, 0.9, 0.9, 0.1, 0.1, 0.9]).unwrap();
        for (i, &k) in system.unknowns.iter().enumerate() {
            assert!(
                (result.values[i] - truth[k]).abs() < 1e-7,
                "{:?}",
                result.values
            );
        }
    }

    fn forward_measurements(truth: &[f64; PARAM_NAMES.len()]) -> StandardMeasurements {
        let system = standard_system(
            &StandardMeasurements {
                fill_fraction: (0.0, 0.0),
                eta_op: (0.0, 0.0),
                eta_surv_b: (0.0, 0.0),
                p_depol_db: (0.0, 0.0),
                p_depol_bd: (0.0, 0.0),
                eta_pi: (0.0, 0.0),
            },
            &FixedInputs {
                f0: truth[param_index("f0").unwrap()],
                f1: truth[param_index("f1").unwrap()],
                eta_surv_d: truth[param_index("eta_surv_d").unwrap()],
            },
        )
        .unwrap();
        let vals: Vec<f64> = system
            .equations
            .iter()
            .map(|eq| eq.model.evaluate(truth).unwrap())
            .collect();
        StandardMeasurements {
            fill_fraction: (vals[0], 0.003),
            eta_op: (vals[1], 0.003),
            eta_surv_b: (vals[2], 0.003),
            p_depol_db: (vals[3], 0.002),
            p_depol_bd: (vals[4], 0.002),
            eta_pi: (vals[5], 0.002),
        }
    }

    #[test]
    fn round_trip_recovers_truth() {
        let truth = truth_params();
        let measured = forward_measurements(&truth);
        let fixed = FixedInputs {
            f0: 0.997,
            f1: 0.991,
            eta_surv_d: 0.996,
        };
        let system = standard_system(&measured, &fixed).unwrap();
        // perturbed initial guess
        let result = solve(&system, &[0.5, 0.9, 0.9, 0.05, 0.05, 0.9]).unwrap();
        let expected = [0.68, 0.972, 0.966, 0.012, 0.012, 0.994];
        for (v, e) in result.values.iter().zip(expected) {
            assert!((v - e).abs() < 1e-8, "{:?}", result.values);
        }
        assert!(result.residual_norm < 1e-10);
    }

    #[test]
    fn solver_fixed_point_random_truths() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let mut truth = truth_params();
            for name in ["p", "eta_op", "eta_surv_b", "eta_pi"] {
                truth[param_index(name).unwrap()] = rng.gen_range(0.5..1.0);
            }
            for name in ["p_depol_db", "p_depol_bd"] {
                truth[param_index(name).unwrap()] = rng.gen_range(0.0..0.2);
            }
            let measured = forward_measurements(&truth);
            let fixed = FixedInputs {
                f0: 0.997,
                f1: 0.991,
                eta_surv_d: 0.996,
            };
            let system = standard_system(&measured, &fixed).unwrap();
            let result = solve(&system, &[0.7, 0.8, 0.8, 0.1, 0.1, 0.8]).unwrap();
            for (i, &k) in system.unknowns.iter().enumerate() {
                assert!(
                    (result.values[i] - truth[k]).abs() < 1e-6,
                    "{}: {} vs {}",
                    PARAM_NAMES[k],
                    result.values[i],
                    truth[k]
                );
            }
        }
    }

    #[test]
    fn zero_sigma_zero_uncertainty() {
        let truth = truth_params();
        let mut measured = forward_measurements(&truth);
        measured.fill_fraction.1 = 0.0;
        measured.eta_op.1 = 0.0;
        measured.eta_surv_b.1 = 0.0;
        measured.p_depol_db.1 = 0.0;
        measured.p_depol_bd.1 = 0.0;
        measured.eta_pi.1 = 0.0;
        let fixed = FixedInputs {
            f0: 0.997,
            f1: 0.991,
            eta_surv_d: 0.996,
        };
        let system = standard_system(&measured, &fixed).unwrap();
        let result = solve(&system, &[0.7, 0.9, 0.9, 0.05, 0.05, 0.9]).unwrap();
        let (unc, warnings) = corner_uncertainty(&system, &result).unwrap();
        assert!(warnings.is_empty());
        for u in unc {
            assert!(u < 1e-7, "uncertainty {u}");
        }
    }

    #[test]
    fn corner_uncertainty_scale() {
        let truth = truth_params();
        let measured = forward_measurements(&truth);
        let fixed = FixedInputs {
            f0: 0.997,
            f1: 0.991,
            eta_surv_d: 0.996,
        };
        let system = standard_system(&measured, &fixed).unwrap();
        let result = solve(&system, &[0.7, 0.9, 0.9, 0.05, 0.05, 0.9]).unwrap();
        let (unc, _) = corner_uncertainty(&system, &result).unwrap();
        // corrected depol uncertainty ~ 0.003 for ~0.002-scale input sigmas
        let k = system
            .unknowns
            .iter()
            .position(|&u| u == param_index("p_depol_db").unwrap())
            .unwrap();
        assert!(
            (0.001..0.01).contains(&unc[k]),
            "depol uncertainty {}",
            unc[k]
        );
    }

    #[test]
    fn monotone_correction_in_measured_depol() {
        // 1-parameter slice: only p_depol_db unknown, only its equation;
        // raising the measured conditional must raise the corrected value
        let truth = truth_params();
        let graph = build_graph(&three_image_circuit()).unwrap();
        let model = path_model(
            &graph,
            &Condition {
                target: vec![(1, true)],
                given: vec![(0, false), (2, true)],
            },
        )
        .unwrap();
        let mut prev = -1.0;
        for raw in [0.015, 0.02, 0.025, 0.03, 0.04] {
            let system = MeasurementSystem {
                equations: vec![Equation {
                    model: ModelExpr::Single(model.clone()),
                    measured: raw,
                    sigma: 0.002,
                }],
                unknowns: vec![param_index("p_depol_db").unwrap()],
                fixed: truth,
            };
            let result = solve(&system, &[0.05]).unwrap();
            assert!(
                result.values[0] > prev,
                "corrected depol not monotone: {} after {}",
                result.values[0],
                prev
            );
            prev = result.values[0];
        }
    }

    #[test]
    fn linear_toy_corner_matches_analytic() {
        // single unknown p with identity model: corner RMS = input sigma
        let circuit = Circuit::new(InitialState::Unloaded, vec![Block::AtomReadout]);
        let graph = build_graph(&circuit).unwrap();
        let model = path_model(
            &graph,
            &Condition {
                target: vec![(0, true)],
                given: vec![],
            },
        )
        .unwrap();
        let mut fixed = [1.0f64; PARAM_NAMES.len()];
        fixed[param_index("f0").unwrap()] = 1.0;
        let system = MeasurementSystem {
            equations: vec![Equation {
                model: ModelExpr::Single(model),
                measured: 0.8,
                sigma: 0.01,
            }],
            unknowns: vec![param_index("p").unwrap()],
            fixed,
        };
        let result = solve(&system, &[0.5]).unwrap();
        assert_relative_eq!(result.values[0], 0.8, epsilon = 1e-8);
        let (unc, _) = corner_uncertainty(&system, &result).unwrap();
        assert!((unc[0] - 0.01).abs() / 0.01 < 0.2, "corner RMS {}", unc[0]);
    }

    #[test]
    fn dot_export_mentions_every_node() {
        let graph = build_graph(&three_image_circuit()).unwrap();
        let dot = graph.to_dot();
        assert!(dot.starts_with("digraph"));
        assert!(dot.contains("Start"));
        assert!(dot.contains("R0:B|0"));
    }

    #[test]
    fn empirical_frequencies_match_path_model() {
        use crate::circuit::{simulate_ensemble, ReadoutErrorModel};
        let circuit = three_image_circuit();
        let graph = build_graph(&circuit).unwrap();
        let mut model = ReadoutErrorModel::paper_averaged();
        model.pulse_infidelity = 0.006; // eta_pi = 0.994 when pulses appear
        let n = 100_000;
        let shots = simulate_ensemble(&circuit, &model, n, 31).unwrap();
        let mut params = truth_params();
        // match the simulator's discrimination fidelities for its mixture
        // the controller thresholds at the equal-weight intersection
        let fit = crate::analysis::MixtureFit {
            p0: 0.5,
            p1: 0.5,
            mu0: model.mixture.mu0,
            sigma0: model.mixture.sigma0,
            mu1: model.mixture.mu1,
            sigma1: model.mixture.sigma1,
            fit_residual: 0.0,
        };
        let rep = crate::analysis::optimal_threshold(&fit);
        params[param_index("f0").unwrap()] = rep.f0;
        params[param_index("f1").unwrap()] = rep.f1;
        // every length-3 outcome pattern within 3 sigma binomial
        for pattern in 0..8usize {
            let target: Vec<(usize, bool)> =
                (0..3).map(|k| (k, (pattern >> k) & 1 == 1)).collect();
            let predicted = path_model(
                &graph,
                &Condition {
                    target: target.clone(),
                    given: vec![],
                },
            )
            .unwrap()
            .evaluate(&params)
            .unwrap();
            let empirical = shots
                .iter()
                .filter(|s| target.iter().all(|&(k, v)| s.bits[k] == v))
                .count() as f64
                / n as f64;
            let sigma = (predicted * (1.0 - predicted) / n as f64).sqrt().max(1e-4);
            assert!(
                (empirical - predicted).abs() < 3.5 * sigma,
                "pattern {pattern:03b}: {empirical} vs {predicted}"
            );
        }
    }
}
