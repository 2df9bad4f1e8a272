//! Cycle- and bit-accurate interpreter for [`DatapathIr`].
//!
//! Registers sample on cycle boundaries, then combinational nodes settle in
//! topological order — two phases, no event queue, which is exact for a pure
//! feed-forward pipeline. Every node value is checked against its declared
//! range; an excursion is a width-policy bug and aborts with the node id.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ring::{self, Direction, RingParams};
use crate::rtl::{DatapathIr, IrOp, Operand, Source};
use crate::{Error, Result};

/// One stimulus application. Inputs are held between entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StimulusEntry {
    pub cycle: u64,
    pub inputs: Vec<u64>,
    pub mode: Direction,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stimulus {
    pub entries: Vec<StimulusEntry>,
}

impl Stimulus {
    /// One vector per cycle starting at 0, all in the same mode.
    pub fn back_to_back(vectors: &[Vec<u64>], mode: Direction) -> Stimulus {
        Stimulus {
            entries: vectors
                .iter()
                .enumerate()
                .map(|(i, v)| StimulusEntry { cycle: i as u64, inputs: v.clone(), mode })
                .collect(),
        }
    }
}

/// Everything one simulation produced.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub stimulus: Stimulus,
    /// Output vector at every simulated cycle.
    pub observed: Vec<(u64, Vec<u64>)>,
    /// Cycles from first input to first valid output (delta-probe measured).
    pub latency_measured: u32,
    /// Smallest gap between output changes once the pipeline fills.
    pub ii_measured: u32,
}

struct Evaluator<'a> {
    ir: &'a DatapathIr,
    values: Vec<u128>,
    reg_next: Vec<(usize, u128)>,
}

impl<'a> Evaluator<'a> {
    fn new(ir: &'a DatapathIr) -> Self {
        Evaluator { ir, values: vec![0; ir.nodes.len()], reg_next: Vec::new() }
    }

    fn operand(&self, op: Operand) -> u128 {
        let base = match op.source {
            Source::Node(id) => self.values[id],
            Source::Const(c) => c as u128,
        };
        base << op.shl
    }

    /// One clock cycle: sample registers, then settle combinational logic.
    fn step(&mut self, inputs: &[u64], mode: u64, outputs: &mut Vec<u64>) -> Result<()> {
        self.reg_next.clear();
        for (id, node) in self.ir.nodes.iter().enumerate() {
            if let IrOp::Reg { d } = node.op {
                self.reg_next.push((id, self.operand(d)));
            }
        }
        for &(id, v) in &self.reg_next {
            self.values[id] = v;
        }
        outputs.clear();
        for (id, node) in self.ir.nodes.iter().enumerate() {
            let v = match node.op {
                IrOp::Input { lane } => inputs[lane as usize] as u128,
                IrOp::Mode => mode as u128,
                IrOp::Add { a, b } => self.operand(a) + self.operand(b),
                IrOp::Sub { a, b } => {
                    let (x, y) = (self.operand(a), self.operand(b));
                    x.checked_sub(y).ok_or(Error::Underflow { node: id })?
                }
                IrOp::CondSubQ { a } => {
                    let x = self.operand(a);
                    let q = self.ir.params.q as u128;
                    if x >= q {
                        x - q
                    } else {
                        x
                    }
                }
                IrOp::Mux { sel, a, b } => {
                    if self.values[sel] == 0 {
                        self.operand(a)
                    } else {
                        self.operand(b)
                    }
                }
                IrOp::Shr { a, amount } => self.values[a] >> amount,
                IrOp::Reg { .. } => continue,
                IrOp::Output { d, .. } => {
                    let v = self.operand(d);
                    outputs.push(v as u64);
                    v
                }
            };
            if v > node.max_value {
                return Err(Error::WidthOverflow { node: id, value: v, max: node.max_value });
            }
            self.values[id] = v;
        }
        Ok(())
    }
}

fn mode_bit(d: Direction) -> u64 {
    match d {
        Direction::Forward => 0,
        Direction::Inverse => 1,
    }
}

fn validate_stimulus(ir: &DatapathIr, stim: &Stimulus) -> Result<()> {
    let n = ir.params.n;
    let q = ir.params.q;
    let mut last: Option<u64> = None;
    for e in &stim.entries {
        if e.inputs.len() != n {
            return Err(Error::StimulusArity { cycle: e.cycle, got: e.inputs.len(), expected: n });
        }
        for (pos, &v) in e.inputs.iter().enumerate() {
            if v >= q {
                return Err(Error::CoeffRange { value: v, pos, q });
            }
        }
        if let Some(prev) = last {
            if e.cycle <= prev {
                return Err(Error::Parse {
                    what: "stimulus",
                    detail: format!("cycle {} out of order", e.cycle),
                });
            }
        }
        last = Some(e.cycle);
    }
    Ok(())
}

/// Latency measured behaviorally: a held delta vector into a zero-state
/// pipeline first perturbs the outputs exactly when the wave arrives. The
/// all-zero state is a fixed point of the datapath, so the measurement is
/// exact for balanced pipelines.
pub fn measure_latency(ir: &DatapathIr) -> Result<u32> {
    let mut delta = vec![0u64; ir.params.n];
    delta[0] = 1;
    let mut ev = Evaluator::new(ir);
    let mut out = Vec::with_capacity(ir.params.n);
    for cycle in 0..(ir.latency as u64 + 4) {
        ev.step(&delta, 0, &mut out)?;
        if out.iter().any(|&v| v != 0) {
            return Ok(cycle as u32);
        }
    }
    Err(Error::IrInvariant("delta probe never reached the outputs".into()))
}

/// Run `stimulus` through the datapath, recording every output cycle plus
/// the measured latency and initiation interval.
pub fn simulate(ir: &DatapathIr, stimulus: &Stimulus) -> Result<SimRun> {
    validate_stimulus(ir, stimulus)?;
    let latency = measure_latency(ir)?;
    let n = ir.params.n;
    let last_cycle = stimulus.entries.last().map_or(0, |e| e.cycle);
    let total = last_cycle + latency as u64 + 2;

    let mut ev = Evaluator::new(ir);
    let mut observed = Vec::with_capacity(total as usize);
    let mut inputs = vec![0u64; n];
    let mut mode = stimulus.entries.first().map_or(0, |e| mode_bit(e.mode));
    let mut next = 0usize;
    let mut out = Vec::with_capacity(n);
    for cycle in 0..total {
        if next < stimulus.entries.len() && stimulus.entries[next].cycle == cycle {
            inputs.copy_from_slice(&stimulus.entries[next].inputs);
            mode = mode_bit(stimulus.entries[next].mode);
            next += 1;
        }
        ev.step(&inputs, mode, &mut out)?;
        observed.push((cycle, out.clone()));
    }

    // Output spacing: gaps between output changes once the pipeline fills.
    let mut changes = Vec::new();
    for w in observed.windows(2) {
        if w[1].0 as u32 > latency && w[0].1 != w[1].1 {
            changes.push(w[1].0);
        }
    }
    let ii = changes
        .windows(2)
        .map(|w| (w[1] - w[0]) as u32)
        .min()
        .unwrap_or(1);

    Ok(SimRun { stimulus: stimulus.clone(), observed, latency_measured: latency, ii_measured: ii })
}

/// Initiation interval with back-to-back distinct vectors for 3x latency
/// cycles. The transform is a bijection, so distinct inputs force distinct
/// outputs; a spacing of 1 means one N-point transform per clock.
pub fn measure_ii(ir: &DatapathIr) -> Result<u32> {
    let q = ir.params.q;
    let n = ir.params.n;
    let cycles = (3 * ir.latency).max(8) as u64;
    let vectors: Vec<Vec<u64>> = (0..cycles)
        .map(|t| {
            // t encoded base-q across the lanes keeps every vector distinct.
            let mut v = vec![0u64; n];
            let mut rem = t + 1;
            for lane in v.iter_mut() {
                *lane = rem % q;
                rem /= q;
                if rem == 0 {
                    break;
                }
            }
            v
        })
        .collect();
    let run = simulate(ir, &Stimulus::back_to_back(&vectors, Direction::Forward))?;
    Ok(run.ii_measured)
}

/// Location of the first divergence from the golden model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mismatch {
    pub direction: Direction,
    pub cycle: u64,
    pub lane: usize,
    pub expected: u64,
    pub got: u64,
}

/// Verdict of a golden-model equivalence run.
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub passed: bool,
    pub seed: u64,
    pub trials: u64,
    pub corner_vectors: usize,
    pub vectors_checked: u64,
    pub latency: u32,
    pub ii: u32,
    pub roundtrip_ok: bool,
    pub first_mismatch: Option<Mismatch>,
}

impl fmt::Display for EquivalenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "passed = {}", self.passed)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "trials = {}", self.trials)?;
        writeln!(f, "corner_vectors = {}", self.corner_vectors)?;
        writeln!(f, "vectors_checked = {}", self.vectors_checked)?;
        writeln!(f, "latency = {}", self.latency)?;
        writeln!(f, "ii = {}", self.ii)?;
        writeln!(f, "roundtrip = {}", self.roundtrip_ok)?;
        match &self.first_mismatch {
            None => writeln!(f, "first_mismatch = none"),
            Some(m) => writeln!(
                f,
                "first_mismatch = {:?} cycle {} lane {} expected {} got {}",
                m.direction, m.cycle, m.lane, m.expected, m.got
            ),
        }
    }
}

/// The fixed corner vectors: all-zero, all-(Q-1), and deltas at the four
/// corner positions.
pub fn corner_vectors(params: &RingParams) -> Vec<Vec<u64>> {
    let n = params.n;
    let mut corners = vec![vec![0u64; n], vec![params.q - 1; n]];
    for pos in [0, 1, n - 2, n - 1] {
        let mut v = vec![0u64; n];
        v[pos] = 1;
        corners.push(v);
    }
    corners
}

/// Stream the corner set plus seeded random vectors through both modes,
/// comparing every output against the golden transforms, then chain
/// inverse after forward and demand the identity.
pub fn check_equivalence(
    ir: &DatapathIr,
    params: &RingParams,
    trials: u64,
    seed: u64,
) -> Result<EquivalenceReport> {
    if trials == 0 {
        return Err(Error::Parse { what: "trials", detail: "must be at least 1".into() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors = corner_vectors(params);
    let corner_count = vectors.len();
    for _ in 0..trials {
        vectors.push((0..params.n).map(|_| rng.gen_range(0..params.q)).collect());
    }

    let latency = measure_latency(ir)?;
    let mut first_mismatch = None;
    let mut vectors_checked = 0u64;

    let run_mode = |dir: Direction,
                        inputs: &[Vec<u64>],
                        golden: &dyn Fn(&[u64]) -> Result<Vec<u64>>,
                        first_mismatch: &mut Option<Mismatch>|
     -> Result<Vec<Vec<u64>>> {
        let run = simulate(ir, &Stimulus::back_to_back(inputs, dir))?;
        let mut outs = Vec::with_capacity(inputs.len());
        for (i, vec_in) in inputs.iter().enumerate() {
            let want = golden(vec_in)?;
            let cycle = i as u64 + latency as u64;
            let got = &run.observed[cycle as usize].1;
            if got != &want && first_mismatch.is_none() {
                let lane = want.iter().zip(got).position(|(w, g)| w != g).unwrap();
                *first_mismatch = Some(Mismatch {
                    direction: dir,
                    cycle,
                    lane,
                    expected: want[lane],
                    got: got[lane],
                });
            }
            outs.push(got.clone());
        }
        Ok(outs)
    };

    let fwd_golden = |v: &[u64]| ring::ntt_forward(v, params);
    let fwd_outs = run_mode(Direction::Forward, &vectors, &fwd_golden, &mut first_mismatch)?;
    vectors_checked += vectors.len() as u64;

    let inv_golden = |v: &[u64]| ring::ntt_inverse(v, params);
    let inv_inputs: Vec<Vec<u64>> = vectors.iter().map(|v| fwd_golden(v).unwrap()).collect();
    run_mode(Direction::Inverse, &inv_inputs, &inv_golden, &mut first_mismatch)?;
    vectors_checked += inv_inputs.len() as u64;

    // Chained designs: the forward stream feeds a second run in inverse
    // mode; the result must be the original stream.
    let mut roundtrip_ok = true;
    let chained = run_mode(Direction::Inverse, &fwd_outs, &inv_golden, &mut first_mismatch)?;
    for (orig, back) in vectors.iter().zip(&chained) {
        if orig != back {
            roundtrip_ok = false;
            break;
        }
    }
    vectors_checked += fwd_outs.len() as u64;

    let ii = measure_ii(ir)?;
    Ok(EquivalenceReport {
        passed: first_mismatch.is_none() && roundtrip_ok,
        seed,
        trials,
        corner_vectors: corner_count,
        vectors_checked,
        latency,
        ii,
        roundtrip_ok,
        first_mismatch,
    })
}

/// Write vectors in the interchange format: one vector per line, N hex
/// coefficients separated by spaces.
pub fn write_vectors(vectors: &[Vec<u64>], header: &str) -> String {
    let mut s = String::new();
    if !header.is_empty() {
        s.push_str(&format!("# {header}\n"));
    }
    for v in vectors {
        let line: Vec<String> = v.iter().map(|x| format!("{x:x}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

/// Parse the vector interchange format; `#` starts a comment.
pub fn read_vectors(text: &str, n: usize) -> Result<Vec<Vec<u64>>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != n {
            return Err(Error::Parse {
                what: "vector file",
                detail: format!("line {}: {} fields, expected {n}", lineno + 1, fields.len()),
            });
        }
        let mut v = Vec::with_capacity(n);
        for f in fields {
            v.push(u64::from_str_radix(f, 16).map_err(|e| Error::Parse {
                what: "vector file",
                detail: format!("line {}: {e}", lineno + 1),
            })?);
        }
        out.push(v);
    }
    Ok(out)
}
