//! Design-time NTT hardware generator.
//!
//! For a fixed ring (Q, N) of a lattice-based scheme, every multiplier in an
//! NTT datapath — twiddle factors, the Barrett constants R and Q, the iNTT
//! normalization — is a constant known before synthesis. This crate folds
//! each of those constants into a minimal network of shifts and
//! adders/subtractors, assembles a fully-unrolled, fully-pipelined N-point
//! NTT/iNTT datapath from them, emits the result as synthesizable
//! multiplier-free Verilog, and proves the netlist bit-exact against a golden
//! software model with a built-in cycle-accurate interpreter.
//!
//! Module map:
//! - [`ring`]: ring parameter derivation, twiddle schedules, golden NTT/iNTT
//!   and the O(N^2) schoolbook oracle.
//! - [`barrett`]: bit-exact fixed-width model of the Barrett-reduced
//!   radix-2 butterfly.
//! - [`mcm`]: single/multiple constant multiplication — CSD recoding,
//!   exhaustive optimal search for small adder counts, and a deterministic
//!   sharing heuristic for the rest.
//! - [`rtl`]: datapath IR construction, pipeline balancing, structural
//!   metrics.
//! - [`verilog`]: text emission plus a reparser for round-trip checks.
//! - [`sim`]: cycle-accurate IR interpreter, equivalence checking and
//!   throughput measurement.

pub mod barrett;
pub mod mcm;
pub mod ring;
pub mod rtl;
pub mod sim;
pub mod verilog;

/// Crate-wide error type. Variants map onto the CLI exit-code policy:
/// input validation failures exit 2, verification mismatches exit 1, and
/// internal invariant violations (width overflow, unbalanced pipeline) exit 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("modulus {0} is not an odd prime")]
    NotPrime(u64),
    #[error("modulus {0} out of supported range (3 <= Q < 2^31)")]
    ModulusRange(u64),
    #[error("length {0} is not a supported power of two")]
    BadLength(usize),
    #[error("order {order} does not divide Q-1 = {qm1}")]
    BadOrder { order: u64, qm1: u64 },
    #[error("no element of order {order} exists mod {q}")]
    NoRoot { q: u64, order: u64 },
    #[error("Q = {q} is not 1 mod {modulus}, required for the {what} variant")]
    BadDivisibility { q: u64, modulus: u64, what: &'static str },
    #[error("index {index} out of range for {bits} bits")]
    IndexRange { index: usize, bits: u32 },
    #[error("coefficient {value} at position {pos} is not below the modulus {q}")]
    CoeffRange { value: u64, pos: usize, q: u64 },
    #[error("length mismatch: got {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("value {value} outside the reduction domain [0, {limit})")]
    ReduceDomain { value: u128, limit: u128 },
    #[error("constant {0} is not a positive integer in range for decomposition")]
    BadConstant(u64),
    #[error("constant {c} does not fit the requested width {width}")]
    ConstantWidth { c: u64, width: u32 },
    #[error("empty target set for constant multiplication")]
    EmptyTargets,
    #[error("twiddle pair ({w}, {w_inv}) is inconsistent mod {q}")]
    BadTwiddlePair { w: u64, w_inv: u64, q: u64 },
    #[error("plan coverage gap at stage {stage}, butterfly {butterfly}")]
    PlanGap { stage: u32, butterfly: u32 },
    #[error("plan does not match schedule at stage {stage}, butterfly {butterfly}")]
    PlanMismatch { stage: u32, butterfly: u32 },
    #[error("pipeline policy rejected: {0}")]
    BadPolicy(&'static str),
    #[error("datapath node {node} value {value} exceeds its declared range {max}")]
    WidthOverflow { node: usize, value: u128, max: u128 },
    #[error("datapath node {node} underflowed in subtraction")]
    Underflow { node: usize },
    #[error("datapath invariant violated: {0}")]
    IrInvariant(String),
    #[error("stimulus vector at cycle {cycle} has arity {got}, expected {expected}")]
    StimulusArity { cycle: u64, got: usize, expected: usize },
    #[error("malformed {what}: {detail}")]
    Parse { what: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
