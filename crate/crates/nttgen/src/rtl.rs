//! Datapath IR: the fully-unrolled, fully-pipelined N-point NTT/iNTT netlist.
//!
//! The datapath instantiates all (N/2)*stages butterflies spatially. One mode
//! bit selects the direction:
//!
//! - forward: Cooley-Tukey dataflow, natural-order input, stage `s` folds the
//!   schedule's constants into each butterfly's multiplier network;
//! - inverse: Gentleman-Sande dataflow through the *same* stage wiring. The
//!   merge order demands bit-reversed data, so inverse mode permutes the
//!   input and output boundaries (wiring, muxed by mode), routes the
//!   multiplier after the subtract instead of before the add, and selects the
//!   inverse-direction product tap. Physical stage `s` then performs the
//!   merge that undoes forward stage `stages-1-s`, which fixes which inverse
//!   constant each butterfly position folds.
//!
//! Every multiplier is an adder-graph instance; no generic multiplication
//! node kind exists. Widths are exact value-range bounds and the simulator
//! treats any excursion beyond them as a hard error.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::mcm::{self, AdderGraph, GraphNode, OpKind};
use crate::ring::{brv, Direction, RingParams, TwiddleSchedule};
use crate::{Error, Result};

pub type NodeId = usize;

/// Operand: a node (optionally left-shifted, i.e. routed through wires) or a
/// literal constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Node(NodeId),
    Const(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Operand {
    pub source: Source,
    pub shl: u32,
}

impl Operand {
    pub fn node(id: NodeId) -> Self {
        Operand { source: Source::Node(id), shl: 0 }
    }
    pub fn shifted(id: NodeId, shl: u32) -> Self {
        Operand { source: Source::Node(id), shl }
    }
    pub fn constant(c: u64) -> Self {
        Operand { source: Source::Const(c), shl: 0 }
    }
}

/// Node kinds. Arithmetic is unsigned; subtraction operands are arranged so
/// the result is provably non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IrOp {
    /// Coefficient input port.
    Input { lane: u32 },
    /// Mode input port: 0 forward, 1 inverse.
    Mode,
    Add { a: Operand, b: Operand },
    Sub { a: Operand, b: Operand },
    /// a >= Q ? a - Q : a (one adder plus a carry select in hardware).
    CondSubQ { a: Operand },
    /// sel == 0 ? a : b.
    Mux { sel: NodeId, a: Operand, b: Operand },
    /// Constant right shift (a part select; free in hardware).
    Shr { a: NodeId, amount: u32 },
    /// Pipeline register.
    Reg { d: Operand },
    /// Output port sink.
    Output { lane: u32, d: Operand },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IrNode {
    pub op: IrOp,
    /// Exact value-range bound; also defines the width.
    pub max_value: u128,
    pub width: u32,
    /// (NTT stage, scalar butterfly ordinal); the scaling bank uses the
    /// pseudo-stage index `stages`.
    pub stage: Option<(u32, u32)>,
}

/// Pipeline registering policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelinePolicy {
    /// Maximum adders (add/sub/cond-sub) on any register-to-register path.
    /// `u32::MAX` disables internal registers.
    pub max_adder_depth: u32,
    pub register_inputs: bool,
    pub register_outputs: bool,
}

impl Default for PipelinePolicy {
    fn default() -> Self {
        PipelinePolicy { max_adder_depth: 2, register_inputs: true, register_outputs: true }
    }
}

/// Width-annotated netlist of the full N-point transform.
#[derive(Debug, Clone)]
pub struct DatapathIr {
    pub params: RingParams,
    pub nodes: Vec<IrNode>,
    /// Coefficient input nodes in lane order.
    pub inputs: Vec<NodeId>,
    pub mode: NodeId,
    /// Output sink nodes in lane order.
    pub outputs: Vec<NodeId>,
    /// Total pipeline depth in cycles.
    pub latency: u32,
    pub policy: PipelinePolicy,
    /// Correction stages instantiated after each Barrett subtract.
    pub corrections: u8,
    /// Adder totals of all instantiated constant multipliers.
    pub opt_adders: u64,
    /// Same sites realized by plain CSD, the baseline.
    pub csd_adders: u64,
}

/// Constant-multiplier plans for one element butterfly position.
#[derive(Debug, Clone)]
pub struct PairPlan {
    pub fwd_const: u64,
    pub inv_const: u64,
    /// MCM graph with outputs for both constants.
    pub mcm: AdderGraph,
}

/// All adder-graph plans a datapath build consumes.
#[derive(Debug, Clone)]
pub struct DatapathPlans {
    /// [stage][element butterfly].
    pub per_butterfly: Vec<Vec<PairPlan>>,
    /// Barrett quotient multiplier (input width 2n).
    pub reduce_r: AdderGraph,
    /// Barrett t*Q multiplier.
    pub reduce_q: AdderGraph,
    /// iNTT normalization multiplier.
    pub inv_scale: AdderGraph,
}

fn bits_u128(v: u128) -> u32 {
    128 - v.leading_zeros()
}

/// Which inverse-schedule slot a physical butterfly folds: physical stage s
/// merges what forward stage stages-1-s split, and within a stage the
/// Gentleman-Sande block index is the bit-reversed butterfly offset.
fn inverse_slot(stages: u32, s: u32, offset: usize) -> (usize, usize) {
    let level = (stages - 1 - s) as usize;
    let block = brv(offset, level as u32);
    (level, block)
}

/// Schedule constant at (stage, block) — every butterfly of a block shares it.
fn schedule_const(
    sched: &TwiddleSchedule,
    params: &RingParams,
    stage: usize,
    block: usize,
) -> Result<u64> {
    let e_count = params.element_count();
    let len = e_count >> (stage + 1);
    let ordinal = block * len * params.lane_width();
    sched
        .constant_at(stage, ordinal)
        .ok_or(Error::PlanGap { stage: stage as u32, butterfly: ordinal as u32 })
}

/// Derive the per-butterfly constant-multiplier plans from the two
/// schedules. Pair graphs are deduplicated by constant pair; exact-search
/// results are cached across pairs.
pub fn plan_datapath(
    params: &RingParams,
    fwd: &TwiddleSchedule,
    inv: &TwiddleSchedule,
) -> Result<DatapathPlans> {
    let e_count = params.element_count();
    let mut pair_cache: BTreeMap<(u64, u64), AdderGraph> = BTreeMap::new();
    let mut exact_cache = mcm::ExactCache::default();
    let mut per_butterfly = Vec::with_capacity(params.stages as usize);
    for s in 0..params.stages as usize {
        let len = e_count >> (s + 1);
        let mut plans = Vec::with_capacity(e_count / 2);
        for block in 0..(1usize << s) {
            let fwd_const = schedule_const(fwd, params, s, block)?;
            for t in 0..len {
                let (level, inv_block) = inverse_slot(params.stages, s as u32, t);
                let inv_const = schedule_const(inv, params, level, inv_block)?;
                let mcm = match pair_cache.get(&(fwd_const, inv_const)) {
                    Some(g) => g.clone(),
                    None => {
                        let g = mcm::mcm_decompose_cached(
                            &[fwd_const, inv_const],
                            params.bits,
                            &mut exact_cache,
                        )?;
                        pair_cache.insert((fwd_const, inv_const), g.clone());
                        g
                    }
                };
                plans.push(PairPlan { fwd_const, inv_const, mcm });
            }
        }
        per_butterfly.push(plans);
    }
    Ok(DatapathPlans {
        per_butterfly,
        reduce_r: mcm::scm_decompose(params.barrett_r, 2 * params.bits, 3)?,
        reduce_q: mcm::scm_decompose(params.q, params.bits, 3)?,
        inv_scale: mcm::scm_decompose(params.inv_scale, params.bits, 3)?,
    })
}

struct IrBuilder {
    params: RingParams,
    nodes: Vec<IrNode>,
    tag: Option<(u32, u32)>,
}

impl IrBuilder {
    fn operand_max(&self, op: Operand) -> u128 {
        let base = match op.source {
            Source::Node(id) => self.nodes[id].max_value,
            Source::Const(c) => c as u128,
        };
        base << op.shl
    }

    fn push(&mut self, op: IrOp, max_value: u128) -> NodeId {
        self.nodes.push(IrNode {
            op,
            max_value,
            width: bits_u128(max_value).max(1),
            stage: self.tag,
        });
        self.nodes.len() - 1
    }

    fn add(&mut self, a: Operand, b: Operand) -> NodeId {
        let max = self.operand_max(a) + self.operand_max(b);
        self.push(IrOp::Add { a, b }, max)
    }

    fn sub(&mut self, a: Operand, b: Operand, max: u128) -> NodeId {
        self.push(IrOp::Sub { a, b }, max)
    }

    fn cond_sub_q(&mut self, a: NodeId) -> NodeId {
        let q = self.params.q as u128;
        let in_max = self.nodes[a].max_value;
        debug_assert!(in_max >= q && in_max < 2 * q, "cond-sub input range {in_max}");
        self.push(IrOp::CondSubQ { a: Operand::node(a) }, (q - 1).min(in_max))
    }

    fn mux(&mut self, sel: NodeId, a: Operand, b: Operand) -> NodeId {
        let max = self.operand_max(a).max(self.operand_max(b));
        self.push(IrOp::Mux { sel, a, b }, max)
    }

    /// Instantiate an adder graph on `input`; returns the IR node and
    /// residual shift for each output constant. Node bounds are the exact
    /// fundamental * input_max products.
    fn instantiate(&mut self, graph: &AdderGraph, input: NodeId) -> BTreeMap<u64, (NodeId, u32)> {
        let input_max = self.nodes[input].max_value;
        let mut map: Vec<NodeId> = Vec::with_capacity(graph.nodes.len());
        for (i, gnode) in graph.nodes.iter().enumerate() {
            match *gnode {
                GraphNode::Input => map.push(input),
                GraphNode::Op { kind, lhs, lhs_shift, rhs, rhs_shift, negate_lhs } => {
                    let a = Operand::shifted(map[lhs], lhs_shift);
                    let b = Operand::shifted(map[rhs], rhs_shift);
                    let max = graph.fundamental_of[i] as u128 * input_max;
                    let id = match (kind, negate_lhs) {
                        (OpKind::Add, false) => {
                            let id = self.add(a, b);
                            self.nodes[id].max_value = max;
                            self.nodes[id].width = bits_u128(max);
                            id
                        }
                        (OpKind::Add, true) => self.sub(b, a, max),
                        (OpKind::Sub, false) => self.sub(a, b, max),
                        (OpKind::Sub, true) => unreachable!("rejected by graph validation"),
                    };
                    map.push(id);
                }
            }
        }
        graph
            .outputs
            .iter()
            .map(|(&c, tap)| (c, (map[tap.node], tap.shift)))
            .collect()
    }

    /// Barrett reduction of `x` (value < Q^2) to [0, Q): quotient estimate
    /// via the R graph, one right shift by 2n, a t*Q subtract, then the
    /// sized number of conditional corrections.
    fn barrett(&mut self, x: NodeId, plans: &DatapathPlans, corrections: u8) -> NodeId {
        let q = self.params.q as u128;
        let two_n = 2 * self.params.bits;
        debug_assert!(self.nodes[x].max_value < q * q);
        let xr = self.instantiate(&plans.reduce_r, x);
        let (xr_node, xr_shift) = xr[&self.params.barrett_r];
        let t_max = (self.nodes[xr_node].max_value << xr_shift) >> two_n;
        let t = self.push(IrOp::Shr { a: xr_node, amount: two_n - xr_shift }, t_max);
        let tq = self.instantiate(&plans.reduce_q, t);
        let (tq_node, tq_shift) = tq[&self.params.q];
        debug_assert_eq!(tq_shift, 0, "Q is odd");
        // r_raw = x - t*Q < 2Q: t is at most floor(x/Q) and undershoots by
        // less than x/4^n + 1 <= 2.
        let r_raw_max = (2 * q - 1).min(self.nodes[x].max_value);
        let mut r = self.sub(Operand::node(x), Operand::node(tq_node), r_raw_max);
        for _ in 0..corrections {
            if self.nodes[r].max_value < q {
                break;
            }
            r = self.cond_sub_q(r);
        }
        r
    }

    /// One scalar butterfly on wire pair (A, B).
    ///
    /// forward: (A + Bw, A - Bw); inverse: (A + B, (A - B) * w').
    fn butterfly(
        &mut self,
        a: NodeId,
        b: NodeId,
        plan: &PairPlan,
        plans: &DatapathPlans,
        mode: NodeId,
        corrections: u8,
    ) -> (NodeId, NodeId) {
        let q = self.params.q;
        let pre_sum_raw = self.add(Operand::node(a), Operand::node(b));
        let pre_sum = self.cond_sub_q(pre_sum_raw);
        let a_plus_q = self.add(Operand::node(a), Operand::constant(q));
        let pre_diff_raw =
            self.sub(Operand::node(a_plus_q), Operand::node(b), (2 * q - 1) as u128);
        let pre_diff = self.cond_sub_q(pre_diff_raw);

        let mul_in = self.mux(mode, Operand::node(b), Operand::node(pre_diff));
        let taps = self.instantiate(&plan.mcm, mul_in);
        let (fwd_node, fwd_shift) = taps[&plan.fwd_const];
        let (inv_node, inv_shift) = taps[&plan.inv_const];
        let prod = self.mux(
            mode,
            Operand::shifted(fwd_node, fwd_shift),
            Operand::shifted(inv_node, inv_shift),
        );
        let reduced = self.barrett(prod, plans, corrections);

        let post_sum_raw = self.add(Operand::node(a), Operand::node(reduced));
        let post_sum = self.cond_sub_q(post_sum_raw);
        let post_diff_raw =
            self.sub(Operand::node(a_plus_q), Operand::node(reduced), (2 * q - 1) as u128);
        let post_diff = self.cond_sub_q(post_diff_raw);

        let out_a = self.mux(mode, Operand::node(post_sum), Operand::node(pre_sum));
        let out_b = self.mux(mode, Operand::node(post_diff), Operand::node(reduced));
        (out_a, out_b)
    }
}

/// Lane permutation applied at the boundaries in inverse mode: bit reversal
/// on element indices, lanes of an element kept together.
fn boundary_perm(params: &RingParams, lane: usize) -> usize {
    let lanes = params.lane_width();
    let element = lane / lanes;
    brv(element, params.stages) * lanes + lane % lanes
}

/// Assemble the combinational datapath and pipeline it per `policy`.
///
/// `fwd` and `inv` are the two twiddle schedules; `plans` must cover every
/// butterfly position with adder graphs matching the schedule constants.
pub fn build_datapath(
    params: &RingParams,
    fwd: &TwiddleSchedule,
    inv: &TwiddleSchedule,
    plans: &DatapathPlans,
    policy: &PipelinePolicy,
) -> Result<DatapathIr> {
    validate_policy(policy)?;
    let corrections = correction_stages(params);
    validate_plans(params, fwd, inv, plans)?;

    let mut b = IrBuilder { params: params.clone(), nodes: Vec::new(), tag: None };
    let q = params.q as u128;

    let mode = b.push(IrOp::Mode, 1);
    let inputs: Vec<NodeId> = (0..params.n)
        .map(|lane| b.push(IrOp::Input { lane: lane as u32 }, q - 1))
        .collect();

    // Inverse mode consumes the lanes bit-reversed (by element); a mux per
    // permuted lane selects between the two wirings.
    let mut wires: Vec<NodeId> = (0..params.n)
        .map(|lane| {
            let src = boundary_perm(params, lane);
            if src == lane {
                inputs[lane]
            } else {
                b.mux(mode, Operand::node(inputs[lane]), Operand::node(inputs[src]))
            }
        })
        .collect();

    let lanes = params.lane_width();
    let e_count = params.element_count();
    for s in 0..params.stages {
        let len = e_count >> (s + 1);
        let mut ordinal = 0u32;
        let mut elem_index = 0usize;
        for block in 0..(1usize << s) {
            for t in 0..len {
                let plan = &plans.per_butterfly[s as usize][elem_index];
                elem_index += 1;
                let lo = (block * 2 * len + t) * lanes;
                let hi = lo + len * lanes;
                for c in 0..lanes {
                    b.tag = Some((s, ordinal));
                    ordinal += 1;
                    let (x, y) =
                        b.butterfly(wires[lo + c], wires[hi + c], plan, plans, mode, corrections);
                    wires[lo + c] = x;
                    wires[hi + c] = y;
                }
            }
        }
        b.tag = None;
    }

    // iNTT normalization bank, bypassed in forward mode.
    let scaled: Vec<NodeId> = (0..params.n)
        .map(|lane| {
            b.tag = Some((params.stages, lane as u32));
            let taps = b.instantiate(&plans.inv_scale, wires[lane]);
            let (node, shift) = taps[&params.inv_scale];
            debug_assert_eq!(shift, 0, "inv_scale is odd");
            let r = b.barrett(node, plans, corrections);
            b.tag = None;
            r
        })
        .collect();

    let outputs: Vec<NodeId> = (0..params.n)
        .map(|lane| {
            let src = boundary_perm(params, lane);
            let mux = b.mux(mode, Operand::node(wires[lane]), Operand::node(scaled[src]));
            let max = b.nodes[mux].max_value;
            b.push(IrOp::Output { lane: lane as u32, d: Operand::node(mux) }, max)
        })
        .collect();

    let (opt_adders, csd_adders) = adder_totals(params, plans)?;
    let comb = DatapathIr {
        params: params.clone(),
        nodes: b.nodes,
        inputs,
        mode,
        outputs,
        latency: 0,
        policy: *policy,
        corrections,
        opt_adders,
        csd_adders,
    };
    let ir = insert_pipeline(&comb, policy)?;
    ir.check()?;
    Ok(ir)
}

/// Correction stages needed after the Barrett subtract. r_raw < 2Q holds for
/// every x < Q^2, so a single stage suffices; kept data-driven so a changed
/// range bound resizes the hardware automatically.
fn correction_stages(params: &RingParams) -> u8 {
    let r_raw_max = 2 * params.q - 1;
    let mut stages = 0u8;
    let mut m = r_raw_max;
    while m >= params.q {
        m -= params.q;
        stages += 1;
    }
    stages
}

fn validate_policy(policy: &PipelinePolicy) -> Result<()> {
    if policy.max_adder_depth == 0 {
        return Err(Error::BadPolicy("max_adder_depth must be at least 1"));
    }
    Ok(())
}

fn validate_plans(
    params: &RingParams,
    fwd: &TwiddleSchedule,
    inv: &TwiddleSchedule,
    plans: &DatapathPlans,
) -> Result<()> {
    let e_count = params.element_count();
    if plans.per_butterfly.len() != params.stages as usize {
        return Err(Error::PlanGap { stage: plans.per_butterfly.len() as u32, butterfly: 0 });
    }
    for s in 0..params.stages as usize {
        let len = e_count >> (s + 1);
        let expected = len << s;
        let stage_plans = &plans.per_butterfly[s];
        if stage_plans.len() != expected {
            return Err(Error::PlanGap { stage: s as u32, butterfly: stage_plans.len() as u32 });
        }
        let mut elem = 0usize;
        for block in 0..(1usize << s) {
            let want_fwd = schedule_const(fwd, params, s, block)?;
            for t in 0..len {
                let plan = &stage_plans[elem];
                let ordinal = ((block * len + t) * params.lane_width()) as u32;
                let (level, inv_block) = inverse_slot(params.stages, s as u32, t);
                let want_inv = schedule_const(inv, params, level, inv_block)?;
                if plan.fwd_const != want_fwd
                    || plan.inv_const != want_inv
                    || !plan.mcm.outputs.contains_key(&plan.fwd_const)
                    || !plan.mcm.outputs.contains_key(&plan.inv_const)
                {
                    return Err(Error::PlanMismatch { stage: s as u32, butterfly: ordinal });
                }
                elem += 1;
            }
        }
    }
    for (g, c) in [
        (&plans.reduce_r, params.barrett_r),
        (&plans.reduce_q, params.q),
        (&plans.inv_scale, params.inv_scale),
    ] {
        if !g.outputs.contains_key(&c) {
            return Err(Error::PlanGap { stage: params.stages, butterfly: 0 });
        }
    }
    Ok(())
}

/// Optimized vs CSD-baseline adder totals over every instantiated
/// constant-multiplier site.
fn adder_totals(params: &RingParams, plans: &DatapathPlans) -> Result<(u64, u64)> {
    let csd_cost = |c: u64| -> Result<u64> {
        Ok(if c == 1 { 0 } else { mcm::csd_recode(c)?.adder_cost() as u64 })
    };
    let lanes = params.lane_width() as u64;
    let site_csd = csd_cost(params.barrett_r)? + csd_cost(params.q)?;
    let site_opt = (plans.reduce_r.cost() + plans.reduce_q.cost()) as u64;
    let mut opt = 0u64;
    let mut csd = 0u64;
    for stage_plans in &plans.per_butterfly {
        for plan in stage_plans {
            let pair_csd = csd_cost(plan.fwd_const)? + csd_cost(plan.inv_const)?;
            opt += lanes * (plan.mcm.cost() as u64 + site_opt);
            csd += lanes * (pair_csd + site_csd);
        }
    }
    // Per-element normalization bank: inv_scale multiplier plus one more
    // Barrett reduction per lane.
    let n = params.n as u64;
    opt += n * (plans.inv_scale.cost() as u64 + site_opt);
    csd += n * (csd_cost(params.inv_scale)? + site_csd);
    Ok((opt, csd))
}

fn adder_weight(op: &IrOp) -> u32 {
    match op {
        IrOp::Add { .. } | IrOp::Sub { .. } | IrOp::CondSubQ { .. } => 1,
        _ => 0,
    }
}

/// Re-balance the pipeline: strip existing registers, then insert register
/// layers so no register-to-register path exceeds the adder-depth bound and
/// every input-to-output path crosses the same number of registers.
pub fn insert_pipeline(ir: &DatapathIr, policy: &PipelinePolicy) -> Result<DatapathIr> {
    validate_policy(policy)?;

    // -- strip registers --------------------------------------------------
    // old id -> (resolved old id, accumulated shift)
    let mut resolve: Vec<(NodeId, u32)> = Vec::with_capacity(ir.nodes.len());
    for (id, node) in ir.nodes.iter().enumerate() {
        match node.op {
            IrOp::Reg { d } => match d.source {
                Source::Node(s) => {
                    let (rs, rshl) = resolve[s];
                    resolve.push((rs, rshl + d.shl));
                }
                Source::Const(_) => {
                    return Err(Error::IrInvariant(format!("register {id} latches a constant")))
                }
            },
            _ => resolve.push((id, 0)),
        }
    }
    let resolve_operand = |op: Operand| -> Operand {
        match op.source {
            Source::Node(s) => {
                let (rs, rshl) = resolve[s];
                Operand { source: Source::Node(rs), shl: op.shl + rshl }
            }
            Source::Const(_) => op,
        }
    };

    let comb: Vec<NodeId> = (0..ir.nodes.len())
        .filter(|&id| !matches!(ir.nodes[id].op, IrOp::Reg { .. }))
        .collect();

    // -- level assignment --------------------------------------------------
    let depth = policy.max_adder_depth;
    let in_base: u32 = policy.register_inputs.into();
    let mut level: HashMap<NodeId, u32> = HashMap::with_capacity(comb.len());
    let mut cut: HashMap<NodeId, u32> = HashMap::with_capacity(comb.len());
    let mut max_cut = in_base;
    for &id in &comb {
        let node = &ir.nodes[id];
        if matches!(node.op, IrOp::Input { .. } | IrOp::Mode) {
            level.insert(id, 0);
            cut.insert(id, 0);
            continue;
        }
        let mut lvl = 0u32;
        for opnd in DatapathIr::operand_sources(&node.op) {
            if let Source::Node(s) = resolve_operand(opnd).source {
                lvl = lvl.max(level[&s]);
            }
        }
        lvl += adder_weight(&node.op);
        level.insert(id, lvl);
        if !matches!(node.op, IrOp::Output { .. }) {
            let c = in_base + if lvl == 0 || depth == u32::MAX { 0 } else { (lvl - 1) / depth };
            cut.insert(id, c);
            max_cut = max_cut.max(c);
        }
    }
    let out_cut = max_cut + u32::from(policy.register_outputs);

    // -- rebuild with register chains ---------------------------------------
    let mut nodes: Vec<IrNode> = Vec::with_capacity(ir.nodes.len());
    let mut new_id: HashMap<NodeId, NodeId> = HashMap::with_capacity(comb.len());
    let mut delay_cache: HashMap<(NodeId, u32), NodeId> = HashMap::new();

    for &id in &comb {
        let node = ir.nodes[id];
        let my_cut = if matches!(node.op, IrOp::Output { .. }) { out_cut } else { cut[&id] };

        let mut delayed = |nodes: &mut Vec<IrNode>, src_old: NodeId, k: u32| -> NodeId {
            let mut cur = new_id[&src_old];
            for step in 1..=k {
                if let Some(&hit) = delay_cache.get(&(src_old, step)) {
                    cur = hit;
                    continue;
                }
                let proto = nodes[cur];
                nodes.push(IrNode {
                    op: IrOp::Reg { d: Operand::node(cur) },
                    max_value: proto.max_value,
                    width: proto.width,
                    stage: ir.nodes[src_old].stage,
                });
                cur = nodes.len() - 1;
                delay_cache.insert((src_old, step), cur);
            }
            cur
        };

        macro_rules! remap {
            ($op:expr) => {{
                let r = resolve_operand($op);
                match r.source {
                    Source::Node(s) => Operand {
                        source: Source::Node(delayed(&mut nodes, s, my_cut - cut[&s])),
                        shl: r.shl,
                    },
                    Source::Const(_) => r,
                }
            }};
        }

        let op = match node.op {
            IrOp::Input { lane } => IrOp::Input { lane },
            IrOp::Mode => IrOp::Mode,
            IrOp::Add { a, b } => IrOp::Add { a: remap!(a), b: remap!(b) },
            IrOp::Sub { a, b } => IrOp::Sub { a: remap!(a), b: remap!(b) },
            IrOp::CondSubQ { a } => IrOp::CondSubQ { a: remap!(a) },
            IrOp::Mux { sel, a, b } => {
                let rsel = resolve_operand(Operand::node(sel));
                let Source::Node(s) = rsel.source else { unreachable!() };
                if rsel.shl != 0 {
                    return Err(Error::IrInvariant("shifted select line".into()));
                }
                let dsel = delayed(&mut nodes, s, my_cut - cut[&s]);
                IrOp::Mux { sel: dsel, a: remap!(a), b: remap!(b) }
            }
            IrOp::Shr { a, amount } => {
                let r = resolve_operand(Operand::node(a));
                let Source::Node(s) = r.source else { unreachable!() };
                if r.shl != 0 {
                    return Err(Error::IrInvariant("shifted shr operand".into()));
                }
                IrOp::Shr { a: delayed(&mut nodes, s, my_cut - cut[&s]), amount }
            }
            IrOp::Output { lane, d } => IrOp::Output { lane, d: remap!(d) },
            IrOp::Reg { .. } => unreachable!(),
        };
        nodes.push(IrNode { op, ..node });
        new_id.insert(id, nodes.len() - 1);
    }

    Ok(DatapathIr {
        params: ir.params.clone(),
        nodes,
        inputs: ir.inputs.iter().map(|i| new_id[i]).collect(),
        mode: new_id[&ir.mode],
        outputs: ir.outputs.iter().map(|o| new_id[o]).collect(),
        latency: out_cut,
        policy: *policy,
        corrections: ir.corrections,
        opt_adders: ir.opt_adders,
        csd_adders: ir.csd_adders,
    })
}

impl DatapathIr {
    pub(crate) fn operand_sources(op: &IrOp) -> Vec<Operand> {
        match *op {
            IrOp::Input { .. } | IrOp::Mode => vec![],
            IrOp::Add { a, b } | IrOp::Sub { a, b } => vec![a, b],
            IrOp::CondSubQ { a } => vec![a],
            IrOp::Mux { sel, a, b } => vec![Operand::node(sel), a, b],
            IrOp::Shr { a, .. } => vec![Operand::node(a)],
            IrOp::Reg { d } => vec![d],
            IrOp::Output { d, .. } => vec![d],
        }
    }

    /// Structural invariants: topological order, exact widths, balanced
    /// register counts on every reconverging path, the adder-depth bound,
    /// and the butterfly census. Generic multiplication cannot appear by
    /// construction (no such node kind exists); this is the IR-side audit.
    pub fn check(&self) -> Result<()> {
        let mut reg_depth: Vec<u32> = Vec::with_capacity(self.nodes.len());
        let mut seg_depth: Vec<u32> = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            if node.width != bits_u128(node.max_value).max(1) {
                return Err(Error::IrInvariant(format!("node {id} width/bound mismatch")));
            }
            let mut rd: Option<u32> = None;
            let mut sd = 0u32;
            for opnd in Self::operand_sources(&node.op) {
                if let Source::Node(s) = opnd.source {
                    if s >= id {
                        return Err(Error::IrInvariant(format!("node {id} breaks topo order")));
                    }
                    match rd {
                        None => rd = Some(reg_depth[s]),
                        Some(prev) if prev != reg_depth[s] => {
                            return Err(Error::IrInvariant(format!(
                                "node {id} merges paths with {prev} and {} registers",
                                reg_depth[s]
                            )));
                        }
                        _ => {}
                    }
                    sd = sd.max(seg_depth[s]);
                }
            }
            let rd = rd.unwrap_or(0);
            if matches!(node.op, IrOp::Reg { .. }) {
                reg_depth.push(rd + 1);
                seg_depth.push(0);
            } else {
                reg_depth.push(rd);
                seg_depth.push(sd + adder_weight(&node.op));
            }
            if self.policy.max_adder_depth != u32::MAX
                && *seg_depth.last().unwrap() > self.policy.max_adder_depth
            {
                return Err(Error::IrInvariant(format!("node {id} exceeds the adder depth bound")));
            }
        }
        for &o in &self.outputs {
            if reg_depth[o] != self.latency {
                return Err(Error::IrInvariant(format!(
                    "output {o} sees {} registers, latency says {}",
                    reg_depth[o], self.latency
                )));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for node in &self.nodes {
            if let Some((s, b)) = node.stage {
                if s < self.params.stages {
                    seen.insert((s, b));
                }
            }
        }
        if seen.len() != self.params.total_butterflies() {
            return Err(Error::IrInvariant(format!(
                "butterfly census {} != {}",
                seen.len(),
                self.params.total_butterflies()
            )));
        }
        self.check_mode_cone()
    }

    /// Mode-correctness analog: the mode bit (and its delay chain) may only
    /// drive mux selects. Direction therefore changes select decisions, never
    /// the arithmetic itself.
    fn check_mode_cone(&self) -> Result<()> {
        let mut in_cone = vec![false; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            match node.op {
                IrOp::Mode => in_cone[id] = true,
                IrOp::Reg { d } => {
                    if let Source::Node(s) = d.source {
                        in_cone[id] = in_cone[s];
                    }
                }
                _ => {}
            }
        }
        for (id, node) in self.nodes.iter().enumerate() {
            // Mux selects are the only legitimate consumers; registers may
            // carry the cone (the mode delay chain).
            let data_operands = match node.op {
                IrOp::Mux { a, b, .. } => vec![a, b],
                IrOp::Reg { .. } => continue,
                ref other => Self::operand_sources(other),
            };
            for op in data_operands {
                if let Source::Node(s) = op.source {
                    if in_cone[s] {
                        return Err(Error::IrInvariant(format!(
                            "node {id} uses the mode bit as a data operand"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn count(&self, pred: impl Fn(&IrOp) -> bool) -> u64 {
        self.nodes.iter().filter(|n| pred(&n.op)).count() as u64
    }
}

/// Per-stage node census.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageCounts {
    pub stage: u32,
    pub adders: u64,
    pub subs: u64,
    pub muxes: u64,
    pub regs: u64,
}

/// Structural cost metrics of one datapath.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsReport {
    pub adders: u64,
    pub subs: u64,
    pub muxes: u64,
    pub regs: u64,
    pub latency: u32,
    pub butterflies: u64,
    pub csd_adders: u64,
    pub opt_adders: u64,
    pub per_stage: Vec<StageCounts>,
}

/// Count the structural resources of the IR. Conditional subtractions count
/// as adders (each is one adder plus a carry select).
pub fn structural_report(ir: &DatapathIr) -> MetricsReport {
    let mut per_stage: BTreeMap<u32, StageCounts> = BTreeMap::new();
    let mut total = StageCounts { stage: 0, adders: 0, subs: 0, muxes: 0, regs: 0 };
    for node in &ir.nodes {
        let slot = node.stage.map(|(s, _)| s);
        let mut bump = |f: fn(&mut StageCounts) -> &mut u64| {
            *f(&mut total) += 1;
            if let Some(s) = slot {
                let e = per_stage
                    .entry(s)
                    .or_insert(StageCounts { stage: s, adders: 0, subs: 0, muxes: 0, regs: 0 });
                *f(e) += 1;
            }
        };
        match node.op {
            IrOp::Add { .. } | IrOp::CondSubQ { .. } => bump(|c| &mut c.adders),
            IrOp::Sub { .. } => bump(|c| &mut c.subs),
            IrOp::Mux { .. } => bump(|c| &mut c.muxes),
            IrOp::Reg { .. } => bump(|c| &mut c.regs),
            _ => {}
        }
    }
    let butterflies: std::collections::BTreeSet<(u32, u32)> = ir
        .nodes
        .iter()
        .filter_map(|n| n.stage)
        .filter(|&(s, _)| s < ir.params.stages)
        .collect();
    MetricsReport {
        adders: total.adders,
        subs: total.subs,
        muxes: total.muxes,
        regs: total.regs,
        latency: ir.latency,
        butterflies: butterflies.len() as u64,
        csd_adders: ir.csd_adders,
        opt_adders: ir.opt_adders,
        per_stage: per_stage.into_values().collect(),
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "adders = {}", self.adders)?;
        writeln!(f, "subs = {}", self.subs)?;
        writeln!(f, "muxes = {}", self.muxes)?;
        writeln!(f, "regs = {}", self.regs)?;
        writeln!(f, "latency = {}", self.latency)?;
        writeln!(f, "butterflies = {}", self.butterflies)?;
        writeln!(f, "csd_adders = {}", self.csd_adders)?;
        writeln!(f, "opt_adders = {}", self.opt_adders)?;
        for s in &self.per_stage {
            writeln!(
                f,
                "stage {} : adders={} subs={} muxes={} regs={}",
                s.stage, s.adders, s.subs, s.muxes, s.regs
            )?;
        }
        Ok(())
    }
}

/// Schedules, plans and pipelined datapath in one call.
pub fn generate(params: &RingParams, policy: &PipelinePolicy) -> Result<DatapathIr> {
    let fwd = crate::ring::twiddle_schedule(params, Direction::Forward);
    let inv = crate::ring::twiddle_schedule(params, Direction::Inverse);
    let plans = plan_datapath(params, &fwd, &inv)?;
    build_datapath(params, &fwd, &inv, &plans, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::{derive_params, twiddle_schedule, Scheme, Variant};

    fn toy() -> RingParams {
        derive_params(17, 8, Variant::Full).unwrap()
    }

    #[test]
    fn toy_structure() {
        let p = toy();
        let ir = generate(&p, &PipelinePolicy::default()).unwrap();
        let report = structural_report(&ir);
        assert_eq!(report.butterflies, 12);
        assert!(report.regs > 0);
        ir.check().unwrap();
    }

    #[test]
    fn unbounded_policy_means_io_regs_only() {
        let p = toy();
        let policy = PipelinePolicy {
            max_adder_depth: u32::MAX,
            register_inputs: false,
            register_outputs: false,
        };
        let ir = generate(&p, &policy).unwrap();
        assert_eq!(ir.latency, 0);
        assert_eq!(structural_report(&ir).regs, 0);

        let policy = PipelinePolicy {
            max_adder_depth: u32::MAX,
            register_inputs: true,
            register_outputs: true,
        };
        let ir2 = insert_pipeline(&ir, &policy).unwrap();
        assert_eq!(ir2.latency, 2);
        ir2.check().unwrap();
    }

    #[test]
    fn rebalance_is_idempotent() {
        let p = toy();
        let policy = PipelinePolicy::default();
        let ir = generate(&p, &policy).unwrap();
        let again = insert_pipeline(&ir, &policy).unwrap();
        assert_eq!(ir.latency, again.latency);
        assert_eq!(ir.nodes.len(), again.nodes.len());
        again.check().unwrap();

        let deeper =
            insert_pipeline(&ir, &PipelinePolicy { max_adder_depth: 1, ..policy }).unwrap();
        assert!(deeper.latency > ir.latency);
        deeper.check().unwrap();
    }

    #[test]
    fn plan_mismatch_is_rejected_with_coordinates() {
        let p = toy();
        let fwd = twiddle_schedule(&p, Direction::Forward);
        let inv = twiddle_schedule(&p, Direction::Inverse);
        let mut plans = plan_datapath(&p, &fwd, &inv).unwrap();

        let dropped = plans.per_butterfly[1].pop().unwrap();
        let err = build_datapath(&p, &fwd, &inv, &plans, &PipelinePolicy::default()).unwrap_err();
        assert!(matches!(err, Error::PlanGap { stage: 1, .. }), "{err}");
        plans.per_butterfly[1].push(dropped);

        let orig = plans.per_butterfly[2][1].fwd_const;
        plans.per_butterfly[2][1].fwd_const = (orig + 1) % p.q;
        let err = build_datapath(&p, &fwd, &inv, &plans, &PipelinePolicy::default()).unwrap_err();
        assert!(matches!(err, Error::PlanMismatch { stage: 2, .. }), "{err}");
    }

    #[test]
    fn kyber_counts() {
        let p = Scheme::Kyber.params();
        let ir = generate(&p, &PipelinePolicy::default()).unwrap();
        let report = structural_report(&ir);
        assert_eq!(report.butterflies, 896);
        assert_eq!(ir.params.stages, 7);
        assert!(report.opt_adders < report.csd_adders);
    }

    #[test]
    fn correction_stage_count() {
        assert_eq!(correction_stages(&toy()), 1);
        assert_eq!(correction_stages(&Scheme::Dilithium.params()), 1);
    }
}
