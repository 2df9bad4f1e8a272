//! Verilog-2001 emission and the structural reparser.
//!
//! The emitted netlist uses only `+`, `-`, constant part-selects and
//! concatenations (shifts), ternary selects, and registers. Constants appear
//! as sized literals absorbed into expressions; there is no `*`, no memory,
//! no twiddle ROM. Conditional subtraction is emitted as a carry-select
//! idiom: add the two's complement of Q, steer on the carry bit.
//!
//! The reparser consumes exactly this emitted subset. It exists so a round
//! trip (emit, parse, simulate) can be checked against the IR interpreter
//! bit for bit, and so text-level structure (operator census, port widths,
//! multiplier-freedom) can be audited without trusting the emitter.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::ring::Direction;
use crate::rtl::{DatapathIr, IrOp, Operand, Source};
use crate::sim::Stimulus;
use crate::{Error, Result};

/// Render an operand: plain wire, shifted wire (a zero concat), or literal.
fn expr(names: &[String], op: Operand) -> String {
    match op.source {
        Source::Node(id) => {
            let name = &names[id];
            if op.shl == 0 {
                name.clone()
            } else {
                format!("{{{name}, {}'b{}}}", op.shl, "0".repeat(op.shl as usize))
            }
        }
        Source::Const(c) => {
            let w = 64 - c.leading_zeros().min(63);
            format!("{w}'d{c}")
        }
    }
}

fn tag_comment(node: &crate::rtl::IrNode, stages: u32) -> String {
    match node.stage {
        Some((s, b)) if s < stages => format!(" // s{s} b{b}"),
        Some((_, b)) => format!(" // scale lane {b}"),
        None => String::new(),
    }
}

/// Emit the datapath as one flat synthesizable module. Deterministic text
/// for identical IR.
pub fn emit_verilog(ir: &DatapathIr, module_name: &str) -> Result<String> {
    ir.check()?;
    let bits = ir.params.bits;
    let n = ir.params.n;
    let mut names: Vec<String> = Vec::with_capacity(ir.nodes.len());
    for (id, node) in ir.nodes.iter().enumerate() {
        names.push(match node.op {
            IrOp::Input { lane } => format!("x{lane}"),
            IrOp::Mode => "mode".to_string(),
            _ => format!("n{id}"),
        });
    }

    let mut s = String::with_capacity(ir.nodes.len() * 48);
    let _ = writeln!(s, "// {module_name}: {n}-point NTT/iNTT datapath, Q = {}.", ir.params.q);
    let _ = writeln!(s, "// mode 0: forward transform; mode 1: inverse with normalization.");
    let _ = writeln!(s, "// All coefficients must be below Q. Latency {} cycles, one", ir.latency);
    let _ = writeln!(s, "// transform accepted per clock.");
    let _ = writeln!(s, "module {module_name} (");
    let _ = writeln!(s, "    input wire clk,");
    let _ = writeln!(s, "    input wire rst,");
    let _ = writeln!(s, "    input wire mode,");
    for lane in 0..n {
        let _ = writeln!(s, "    input wire [{}:0] x{lane},", bits - 1);
    }
    for lane in 0..n {
        let comma = if lane + 1 == n { "" } else { "," };
        let _ = writeln!(s, "    output wire [{}:0] y{lane}{comma}", bits - 1);
    }
    let _ = writeln!(s, ");");

    let mut regs: Vec<usize> = Vec::new();
    for (id, node) in ir.nodes.iter().enumerate() {
        let w = node.width;
        let name = &names[id];
        let tag = tag_comment(node, ir.params.stages);
        match node.op {
            IrOp::Input { .. } | IrOp::Mode => {}
            IrOp::Add { a, b } => {
                let _ = writeln!(
                    s,
                    "wire [{}:0] {name} = {} + {};{tag}",
                    w - 1,
                    expr(&names, a),
                    expr(&names, b)
                );
            }
            IrOp::Sub { a, b } => {
                let _ = writeln!(
                    s,
                    "wire [{}:0] {name} = {} - {};{tag}",
                    w - 1,
                    expr(&names, a),
                    expr(&names, b)
                );
            }
            IrOp::CondSubQ { a } => {
                let Source::Node(src) = a.source else {
                    return Err(Error::IrInvariant("cond-sub of a constant".into()));
                };
                if a.shl != 0 {
                    return Err(Error::IrInvariant("cond-sub of a shifted operand".into()));
                }
                let wi = ir.nodes[src].width;
                let comp = (1u128 << wi) - ir.params.q as u128;
                let _ = writeln!(
                    s,
                    "wire [{wi}:0] {name}c = {} + {}'d{comp};{tag}",
                    names[src],
                    wi + 1
                );
                let _ = writeln!(
                    s,
                    "wire [{}:0] {name} = {name}c[{wi}] ? {name}c[{}:0] : {}[{}:0];{tag}",
                    w - 1,
                    w - 1,
                    names[src],
                    w - 1
                );
            }
            IrOp::Mux { sel, a, b } => {
                let _ = writeln!(
                    s,
                    "wire [{}:0] {name} = {} ? {} : {};{tag}",
                    w - 1,
                    names[sel],
                    expr(&names, b),
                    expr(&names, a)
                );
            }
            IrOp::Shr { a, amount } => {
                let _ = writeln!(
                    s,
                    "wire [{}:0] {name} = {}[{}:{amount}];{tag}",
                    w - 1,
                    names[a],
                    amount + w - 1
                );
            }
            IrOp::Reg { .. } => {
                let _ = writeln!(s, "reg [{}:0] {name};{tag}", w - 1);
                regs.push(id);
            }
            IrOp::Output { lane, d } => {
                let _ = writeln!(s, "assign y{lane} = {};", expr(&names, d));
            }
        }
    }

    if !regs.is_empty() {
        let _ = writeln!(s, "always @(posedge clk) begin");
        let _ = writeln!(s, "    if (rst) begin");
        for &id in &regs {
            let _ = writeln!(s, "        {} <= {}'d0;", names[id], ir.nodes[id].width);
        }
        let _ = writeln!(s, "    end else begin");
        for &id in &regs {
            let IrOp::Reg { d } = ir.nodes[id].op else { unreachable!() };
            let _ = writeln!(s, "        {} <= {};", names[id], expr(&names, d));
        }
        let _ = writeln!(s, "    end");
        let _ = writeln!(s, "end");
    }
    let _ = writeln!(s, "endmodule");
    Ok(s)
}

/// Reject any text containing a generic multiplication operator. Comments
/// are stripped first so the scan reflects actual logic.
pub fn assert_multiplier_free(text: &str) -> Result<()> {
    for (lineno, line) in text.lines().enumerate() {
        let code = line.split("//").next().unwrap_or("");
        if code.contains('*') {
            return Err(Error::Parse {
                what: "verilog text",
                detail: format!("line {}: multiplication operator present", lineno + 1),
            });
        }
    }
    Ok(())
}

/// Operator census of emitted text, for cross-checking against the IR.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TextOpCounts {
    pub plus: u64,
    pub minus: u64,
    pub ternary: u64,
    pub regs: u64,
    pub assigns: u64,
}

/// The counts `emit_verilog` is expected to produce for this IR:
/// adds and conditional subtractions each contribute one `+`, conditional
/// subtractions and muxes one ternary apiece.
pub fn expected_text_counts(ir: &DatapathIr) -> TextOpCounts {
    let mut c = TextOpCounts::default();
    for node in &ir.nodes {
        match node.op {
            IrOp::Add { .. } => c.plus += 1,
            IrOp::Sub { .. } => c.minus += 1,
            IrOp::CondSubQ { .. } => {
                c.plus += 1;
                c.ternary += 1;
            }
            IrOp::Mux { .. } => c.ternary += 1,
            IrOp::Reg { .. } => c.regs += 1,
            IrOp::Output { .. } => c.assigns += 1,
            _ => {}
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum POperand {
    Ref(usize),
    Slice(usize, u32, u32),
    Concat(usize, u32),
    Lit(u128),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum PExpr {
    Copy(POperand),
    Add(POperand, POperand),
    Sub(POperand, POperand),
    Ternary { cond: POperand, then: POperand, other: POperand },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SignalKind {
    Port(u32),
    Wire(u32),
    Reg(u32),
}

/// A netlist reconstructed from emitted text: enough structure to count
/// operators and to re-simulate it cycle for cycle.
#[derive(Debug, Clone)]
pub struct ParsedNetlist {
    pub module: String,
    pub input_ports: Vec<(String, u32)>,
    pub output_ports: Vec<(String, u32)>,
    pub counts: TextOpCounts,
    signals: Vec<SignalKind>,
    index: HashMap<String, usize>,
    wires: Vec<(usize, PExpr)>,
    reg_updates: Vec<(usize, POperand)>,
    assigns: Vec<(u32, usize)>,
}

struct Parser<'t> {
    text: &'t str,
    netlist: ParsedNetlist,
}

fn perr(lineno: usize, detail: impl Into<String>) -> Error {
    Error::Parse { what: "verilog text", detail: format!("line {}: {}", lineno + 1, detail.into()) }
}

impl<'t> Parser<'t> {
    fn intern(&mut self, name: &str, kind: SignalKind, lineno: usize) -> Result<usize> {
        if self.netlist.index.contains_key(name) {
            return Err(perr(lineno, format!("redefinition of {name}")));
        }
        self.netlist.signals.push(kind);
        let id = self.netlist.signals.len() - 1;
        self.netlist.index.insert(name.to_string(), id);
        Ok(id)
    }

    fn lookup(&self, name: &str, lineno: usize) -> Result<usize> {
        self.netlist
            .index
            .get(name)
            .copied()
            .ok_or_else(|| perr(lineno, format!("unknown signal {name}")))
    }

    fn parse_operand(&self, tok: &str, lineno: usize) -> Result<POperand> {
        let tok = tok.trim();
        if let Some(rest) = tok.strip_prefix('{') {
            // {name, k'b000}
            let inner = rest.strip_suffix('}').ok_or_else(|| perr(lineno, "unclosed concat"))?;
            let (name, pad) = inner.split_once(',').ok_or_else(|| perr(lineno, "bad concat"))?;
            let pad = pad.trim();
            let (k, rest) = pad.split_once("'b").ok_or_else(|| perr(lineno, "bad concat pad"))?;
            let k: u32 = k.parse().map_err(|_| perr(lineno, "bad concat width"))?;
            if rest.chars().any(|c| c != '0') {
                return Err(perr(lineno, "concat pad must be zeros"));
            }
            return Ok(POperand::Concat(self.lookup(name.trim(), lineno)?, k));
        }
        if let Some((w, v)) = tok.split_once("'d") {
            let _w: u32 = w.parse().map_err(|_| perr(lineno, "bad literal width"))?;
            let v: u128 = v.parse().map_err(|_| perr(lineno, "bad literal"))?;
            return Ok(POperand::Lit(v));
        }
        if let Some((name, sel)) = tok.split_once('[') {
            let sel = sel.strip_suffix(']').ok_or_else(|| perr(lineno, "unclosed select"))?;
            let id = self.lookup(name.trim(), lineno)?;
            return match sel.split_once(':') {
                Some((h, l)) => {
                    let h: u32 = h.trim().parse().map_err(|_| perr(lineno, "bad select"))?;
                    let l: u32 = l.trim().parse().map_err(|_| perr(lineno, "bad select"))?;
                    Ok(POperand::Slice(id, h, l))
                }
                None => {
                    let b: u32 = sel.trim().parse().map_err(|_| perr(lineno, "bad bit select"))?;
                    Ok(POperand::Slice(id, b, b))
                }
            };
        }
        Ok(POperand::Ref(self.lookup(tok, lineno)?))
    }

    fn parse_expr(&mut self, rhs: &str, lineno: usize) -> Result<PExpr> {
        let rhs = rhs.trim();
        // Top-level scan: brackets and braces hide the colons of part
        // selects and the commas of concats.
        let top_level = |needles: &[char]| -> Option<(usize, char)> {
            let mut depth = 0i32;
            for (i, ch) in rhs.char_indices() {
                match ch {
                    '[' | '{' => depth += 1,
                    ']' | '}' => depth -= 1,
                    c if depth == 0 && needles.contains(&c) => return Some((i, c)),
                    _ => {}
                }
            }
            None
        };
        if let Some((qpos, _)) = top_level(&['?']) {
            let cond = self.parse_operand(&rhs[..qpos], lineno)?;
            let rest = &rhs[qpos + 1..];
            let mut depth = 0i32;
            let mut cpos = None;
            for (i, ch) in rest.char_indices() {
                match ch {
                    '[' | '{' => depth += 1,
                    ']' | '}' => depth -= 1,
                    ':' if depth == 0 => {
                        cpos = Some(i);
                        break;
                    }
                    _ => {}
                }
            }
            let cpos = cpos.ok_or_else(|| perr(lineno, "ternary missing colon"))?;
            let then = self.parse_operand(&rest[..cpos], lineno)?;
            let other = self.parse_operand(&rest[cpos + 1..], lineno)?;
            self.netlist.counts.ternary += 1;
            return Ok(PExpr::Ternary { cond, then, other });
        }
        if let Some((i, ch)) = top_level(&['+', '-']) {
            let a = self.parse_operand(&rhs[..i], lineno)?;
            let b = self.parse_operand(&rhs[i + 1..], lineno)?;
            return Ok(if ch == '+' {
                self.netlist.counts.plus += 1;
                PExpr::Add(a, b)
            } else {
                self.netlist.counts.minus += 1;
                PExpr::Sub(a, b)
            });
        }
        Ok(PExpr::Copy(self.parse_operand(rhs, lineno)?))
    }
}

fn parse_width(decl: &str, lineno: usize) -> Result<u32> {
    // "[h:0]" -> h+1
    let decl = decl.trim();
    if !decl.starts_with('[') {
        return Ok(1);
    }
    let inner = decl
        .strip_prefix('[')
        .and_then(|d| d.strip_suffix(":0]"))
        .ok_or_else(|| perr(lineno, "bad width decl"))?;
    let h: u32 = inner.parse().map_err(|_| perr(lineno, "bad width"))?;
    Ok(h + 1)
}

/// Parse text previously produced by [`emit_verilog`].
pub fn parse_netlist(text: &str) -> Result<ParsedNetlist> {
    let mut p = Parser {
        text,
        netlist: ParsedNetlist {
            module: String::new(),
            input_ports: Vec::new(),
            output_ports: Vec::new(),
            counts: TextOpCounts::default(),
            signals: Vec::new(),
            index: HashMap::new(),
            wires: Vec::new(),
            reg_updates: Vec::new(),
            assigns: Vec::new(),
        },
    };
    #[derive(PartialEq)]
    enum Section {
        Header,
        Body,
        AlwaysReset,
        AlwaysUpdate,
        AlwaysClose,
    }
    let mut section = Section::Header;
    for (lineno, raw) in p.text.lines().enumerate() {
        let line = raw.split("//").next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match section {
            Section::Header => {
                if let Some(rest) = line.strip_prefix("module ") {
                    p.netlist.module = rest.trim_end_matches('(').trim().to_string();
                } else if let Some(rest) = line.strip_prefix("input wire") {
                    let rest = rest.trim().trim_end_matches(',');
                    let (decl, name) = match rest.rfind(' ') {
                        Some(pos) => (&rest[..pos], rest[pos + 1..].trim()),
                        None => ("", rest),
                    };
                    let w = parse_width(decl, lineno)?;
                    let id = p.intern(name, SignalKind::Port(w), lineno)?;
                    let _ = id;
                    p.netlist.input_ports.push((name.to_string(), w));
                } else if let Some(rest) = line.strip_prefix("output wire") {
                    let rest = rest.trim().trim_end_matches(',');
                    let (decl, name) = match rest.rfind(' ') {
                        Some(pos) => (&rest[..pos], rest[pos + 1..].trim()),
                        None => ("", rest),
                    };
                    let w = parse_width(decl, lineno)?;
                    p.netlist.output_ports.push((name.to_string(), w));
                } else if line == ");" {
                    section = Section::Body;
                } else {
                    return Err(perr(lineno, format!("unexpected header line `{line}`")));
                }
            }
            Section::Body => {
                if let Some(rest) = line.strip_prefix("wire ") {
                    let rest = rest.trim_end_matches(';');
                    let (lhs, rhs) =
                        rest.split_once('=').ok_or_else(|| perr(lineno, "wire without value"))?;
                    let lhs = lhs.trim();
                    let (decl, name) = lhs
                        .rfind(' ')
                        .map(|pos| (&lhs[..pos], lhs[pos + 1..].trim()))
                        .ok_or_else(|| perr(lineno, "bad wire decl"))?;
                    let w = parse_width(decl, lineno)?;
                    let e = p.parse_expr(rhs, lineno)?;
                    let id = p.intern(name, SignalKind::Wire(w), lineno)?;
                    p.netlist.wires.push((id, e));
                } else if let Some(rest) = line.strip_prefix("reg ") {
                    let rest = rest.trim_end_matches(';');
                    let (decl, name) = rest
                        .rfind(' ')
                        .map(|pos| (&rest[..pos], rest[pos + 1..].trim()))
                        .ok_or_else(|| perr(lineno, "bad reg decl"))?;
                    let w = parse_width(decl, lineno)?;
                    p.intern(name, SignalKind::Reg(w), lineno)?;
                    p.netlist.counts.regs += 1;
                } else if let Some(rest) = line.strip_prefix("assign ") {
                    let rest = rest.trim_end_matches(';');
                    let (lhs, rhs) =
                        rest.split_once('=').ok_or_else(|| perr(lineno, "bad assign"))?;
                    let lane: u32 = lhs
                        .trim()
                        .strip_prefix('y')
                        .and_then(|l| l.parse().ok())
                        .ok_or_else(|| perr(lineno, "assign to non-output"))?;
                    let src = p.lookup(rhs.trim(), lineno)?;
                    p.netlist.assigns.push((lane, src));
                    p.netlist.counts.assigns += 1;
                } else if line.starts_with("always @(posedge clk)") {
                    section = Section::AlwaysReset;
                } else if line == "endmodule" {
                    break;
                } else {
                    return Err(perr(lineno, format!("unexpected body line `{line}`")));
                }
            }
            Section::AlwaysReset => {
                if line.starts_with("end else begin") {
                    section = Section::AlwaysUpdate;
                } else if line.starts_with("if (rst) begin") || line.contains("<=") {
                    // reset assignments carry no structure worth keeping
                } else {
                    return Err(perr(lineno, format!("unexpected reset line `{line}`")));
                }
            }
            Section::AlwaysUpdate => {
                if line == "end" {
                    section = Section::AlwaysClose;
                } else if let Some((lhs, rhs)) = line.trim_end_matches(';').split_once("<=") {
                    let id = p.lookup(lhs.trim(), lineno)?;
                    let d = p.parse_operand(rhs.trim(), lineno)?;
                    p.netlist.reg_updates.push((id, d));
                } else {
                    return Err(perr(lineno, format!("unexpected update line `{line}`")));
                }
            }
            Section::AlwaysClose => {
                if line == "end" {
                    section = Section::Body;
                } else {
                    return Err(perr(lineno, format!("unexpected line `{line}` after always")));
                }
            }
        }
    }
    Ok(p.netlist)
}

impl ParsedNetlist {
    fn width_of(&self, id: usize) -> u32 {
        match self.signals[id] {
            SignalKind::Port(w) | SignalKind::Wire(w) | SignalKind::Reg(w) => w,
        }
    }

    fn eval_operand(&self, values: &[u128], op: &POperand) -> u128 {
        match *op {
            POperand::Ref(id) => values[id],
            POperand::Slice(id, h, l) => {
                let v = values[id] >> l;
                let bits = h - l + 1;
                v & ((1u128 << bits) - 1)
            }
            POperand::Concat(id, k) => values[id] << k,
            POperand::Lit(v) => v,
        }
    }

    /// Two-phase cycle-accurate evaluation, mirroring the IR interpreter but
    /// with plain Verilog truncate-to-width semantics.
    pub fn simulate(&self, stimulus: &Stimulus, cycles: u64) -> Result<Vec<Vec<u64>>> {
        let mut values = vec![0u128; self.signals.len()];
        let lane_count = self.input_ports.iter().filter(|(n, _)| n.starts_with('x')).count();
        let mut inputs = vec![0u64; lane_count];
        let mut mode = stimulus.entries.first().map_or(0u128, |e| match e.mode {
            Direction::Forward => 0,
            Direction::Inverse => 1,
        });
        let mut next = 0usize;
        let mut out = Vec::with_capacity(cycles as usize);
        let mask = |w: u32, v: u128| v & (((1u128 << w) - 1) | ((w >= 128) as u128).wrapping_neg());
        for cycle in 0..cycles {
            if next < stimulus.entries.len() && stimulus.entries[next].cycle == cycle {
                let e = &stimulus.entries[next];
                if e.inputs.len() != lane_count {
                    return Err(Error::StimulusArity {
                        cycle,
                        got: e.inputs.len(),
                        expected: lane_count,
                    });
                }
                inputs.copy_from_slice(&e.inputs);
                mode = match e.mode {
                    Direction::Forward => 0,
                    Direction::Inverse => 1,
                };
                next += 1;
            }
            // Registers sample their d-inputs simultaneously.
            let sampled: Vec<(usize, u128)> = self
                .reg_updates
                .iter()
                .map(|(id, d)| (*id, mask(self.width_of(*id), self.eval_operand(&values, d))))
                .collect();
            for (id, v) in sampled {
                values[id] = v;
            }
            // Ports settle, then wires in declaration order.
            for (name, _) in &self.input_ports {
                let id = self.index[name];
                values[id] = match name.as_str() {
                    "clk" | "rst" => 0,
                    "mode" => mode,
                    _ => {
                        let lane: usize = name[1..].parse().map_err(|_| Error::Parse {
                            what: "verilog text",
                            detail: format!("port {name}"),
                        })?;
                        inputs[lane] as u128
                    }
                };
            }
            for (id, e) in &self.wires {
                let v = match e {
                    PExpr::Copy(a) => self.eval_operand(&values, a),
                    PExpr::Add(a, b) => self.eval_operand(&values, a) + self.eval_operand(&values, b),
                    PExpr::Sub(a, b) => {
                        let (x, y) = (self.eval_operand(&values, a), self.eval_operand(&values, b));
                        // Verilog wraps at the expression width; widths are
                        // sized so this only happens on dead select arms.
                        x.wrapping_sub(y)
                    }
                    PExpr::Ternary { cond, then, other } => {
                        if self.eval_operand(&values, cond) != 0 {
                            self.eval_operand(&values, then)
                        } else {
                            self.eval_operand(&values, other)
                        }
                    }
                };
                values[*id] = mask(self.width_of(*id), v);
            }
            let mut lanes = vec![0u64; self.assigns.len()];
            for (lane, src) in &self.assigns {
                lanes[*lane as usize] = values[*src] as u64;
            }
            out.push(lanes);
        }
        Ok(out)
    }
}

/// Cross-check the reparsed structure against the IR it came from: operator
/// census and port shapes must match exactly.
pub fn verify_structure(ir: &DatapathIr, parsed: &ParsedNetlist) -> Result<()> {
    let want = expected_text_counts(ir);
    if parsed.counts != want {
        return Err(Error::IrInvariant(format!(
            "text census {:?} does not match IR {:?}",
            parsed.counts, want
        )));
    }
    let n = ir.params.n;
    let data_inputs = parsed.input_ports.iter().filter(|(p, _)| p.starts_with('x')).count();
    if data_inputs != n || parsed.output_ports.len() != n {
        return Err(Error::IrInvariant(format!(
            "port census {data_inputs}x{} does not match N={n}",
            parsed.output_ports.len()
        )));
    }
    for (name, w) in parsed.input_ports.iter().filter(|(p, _)| p.starts_with('x')) {
        if *w != ir.params.bits {
            return Err(Error::IrInvariant(format!("port {name} width {w}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::{derive_params, Scheme, Variant};
    use crate::rtl::{self, PipelinePolicy};
    use crate::sim;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn toy_emit_parse_roundtrip_is_bit_exact() {
        let p = derive_params(17, 8, Variant::Full).unwrap();
        let ir = rtl::generate(&p, &PipelinePolicy::default()).unwrap();
        let text = emit_verilog(&ir, "toy_ntt8").unwrap();
        assert_multiplier_free(&text).unwrap();
        let parsed = parse_netlist(&text).unwrap();
        assert_eq!(parsed.module, "toy_ntt8");
        verify_structure(&ir, &parsed).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for dir in [Direction::Forward, Direction::Inverse] {
            let vectors: Vec<Vec<u64>> =
                (0..40).map(|_| (0..8).map(|_| rng.gen_range(0..p.q)).collect()).collect();
            let stim = Stimulus::back_to_back(&vectors, dir);
            let ir_run = sim::simulate(&ir, &stim).unwrap();
            let cycles = ir_run.observed.len() as u64;
            let text_run = parsed.simulate(&stim, cycles).unwrap();
            for (c, (_, want)) in ir_run.observed.iter().enumerate() {
                assert_eq!(&text_run[c], want, "cycle {c} mode {dir:?}");
            }
        }
    }

    #[test]
    fn emission_is_deterministic() {
        let p = derive_params(17, 8, Variant::Full).unwrap();
        let a = emit_verilog(&rtl::generate(&p, &PipelinePolicy::default()).unwrap(), "m").unwrap();
        let b = emit_verilog(&rtl::generate(&p, &PipelinePolicy::default()).unwrap(), "m").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kyber_text_structure() {
        let p = Scheme::Kyber.params();
        let ir = rtl::generate(&p, &PipelinePolicy::default()).unwrap();
        let text = emit_verilog(&ir, "kyber_ntt256").unwrap();
        assert_multiplier_free(&text).unwrap();
        let parsed = parse_netlist(&text).unwrap();
        verify_structure(&ir, &parsed).unwrap();
        // 256 coefficient ports of 12 bits each way.
        assert_eq!(parsed.input_ports.iter().filter(|(n, _)| n.starts_with('x')).count(), 256);
        assert!(parsed.input_ports.iter().all(|(n, w)| !n.starts_with('x') || *w == 12));
        assert_eq!(parsed.output_ports.len(), 256);

        // A short bit-exact pass at full scale.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let vectors: Vec<Vec<u64>> =
            (0..4).map(|_| (0..p.n).map(|_| rng.gen_range(0..p.q)).collect()).collect();
        let stim = Stimulus::back_to_back(&vectors, Direction::Inverse);
        let ir_run = sim::simulate(&ir, &stim).unwrap();
        let text_run = parsed.simulate(&stim, ir_run.observed.len() as u64).unwrap();
        for (c, (_, want)) in ir_run.observed.iter().enumerate() {
            assert_eq!(&text_run[c], want, "cycle {c}");
        }
    }

    #[test]
    fn corrupted_text_is_rejected_or_diverges() {
        let p = derive_params(17, 8, Variant::Full).unwrap();
        let ir = rtl::generate(&p, &PipelinePolicy::default()).unwrap();
        let text = emit_verilog(&ir, "toy_ntt8").unwrap();
        // Flip one adder into a subtractor: parses fine, but the census no
        // longer matches the IR.
        let broken = text.replacen(" + ", " - ", 1);
        let parsed = parse_netlist(&broken).unwrap();
        assert!(verify_structure(&ir, &parsed).is_err());
    }
}
