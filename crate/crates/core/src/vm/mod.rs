//! Interpreter for plain and instrumented programs.

mod diff;

use serde::{Deserialize, Serialize};

use crate::ir::{
    BinOp, Callee, CmpPred, Function, InstKind, IntWidth, Operand, Program, Ty,
};
use crate::runtime::{
    Bounds, QueryError, Runtime, RuntimeConfig, RuntimeStats, Trap, GLOBAL_BASE, POISON,
    STACK_BASE,
};

pub use diff::{run_differential, verdicts_equivalent, DiffResult};

pub const DEFAULT_STEP_LIMIT: u64 = 10_000_000;
const MAX_CALL_DEPTH: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmConfig {
    pub step_limit: u64,
    /// Record violations and continue instead of halting on the first.
    pub keep_going: bool,
    pub runtime: RuntimeConfig,
}

impl Default for VmConfig {
    fn default() -> Self {
        VmConfig {
            step_limit: DEFAULT_STEP_LIMIT,
            keep_going: false,
            runtime: RuntimeConfig::default(),
        }
    }
}

/// Outcome of a run. `sites` lists the faulting instruction's ordinal first,
/// followed by the ordinals of checks an optimized check stands in for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Verdict {
    Ok,
    Oob {
        sites: Vec<u32>,
        function: String,
        src: u64,
        dst: u64,
        size: u64,
        bounds: Option<Bounds>,
    },
    Uaf {
        sites: Vec<u32>,
        function: String,
        addr: u64,
    },
    DoubleFree {
        sites: Vec<u32>,
        function: String,
        addr: u64,
    },
    InvalidFree {
        sites: Vec<u32>,
        function: String,
        addr: u64,
    },
    AssertFail {
        sites: Vec<u32>,
        function: String,
        dst: u64,
        size: u64,
        bounds: Bounds,
    },
    LimitExceeded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictKind {
    Ok,
    Oob,
    Uaf,
    DoubleFree,
    InvalidFree,
    AssertFail,
    LimitExceeded,
}

impl VerdictKind {
    /// A failed merged assert is the same finding as a failed range check.
    pub fn normalized(self) -> VerdictKind {
        match self {
            VerdictKind::AssertFail => VerdictKind::Oob,
            k => k,
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            VerdictKind::Ok => 0,
            VerdictKind::Oob | VerdictKind::AssertFail => 10,
            VerdictKind::Uaf => 11,
            VerdictKind::DoubleFree => 12,
            VerdictKind::InvalidFree => 13,
            VerdictKind::LimitExceeded => 20,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            VerdictKind::Ok => "ok",
            VerdictKind::Oob => "oob",
            VerdictKind::Uaf => "uaf",
            VerdictKind::DoubleFree => "double-free",
            VerdictKind::InvalidFree => "invalid-free",
            VerdictKind::AssertFail => "assert-fail",
            VerdictKind::LimitExceeded => "limit-exceeded",
        }
    }

    pub fn parse(s: &str) -> Option<VerdictKind> {
        [
            VerdictKind::Ok,
            VerdictKind::Oob,
            VerdictKind::Uaf,
            VerdictKind::DoubleFree,
            VerdictKind::InvalidFree,
            VerdictKind::AssertFail,
            VerdictKind::LimitExceeded,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

impl Verdict {
    pub fn kind(&self) -> VerdictKind {
        match self {
            Verdict::Ok => VerdictKind::Ok,
            Verdict::Oob { .. } => VerdictKind::Oob,
            Verdict::Uaf { .. } => VerdictKind::Uaf,
            Verdict::DoubleFree { .. } => VerdictKind::DoubleFree,
            Verdict::InvalidFree { .. } => VerdictKind::InvalidFree,
            Verdict::AssertFail { .. } => VerdictKind::AssertFail,
            Verdict::LimitExceeded => VerdictKind::LimitExceeded,
        }
    }

    pub fn sites(&self) -> &[u32] {
        match self {
            Verdict::Oob { sites, .. }
            | Verdict::Uaf { sites, .. }
            | Verdict::DoubleFree { sites, .. }
            | Verdict::InvalidFree { sites, .. }
            | Verdict::AssertFail { sites, .. } => sites,
            Verdict::Ok | Verdict::LimitExceeded => &[],
        }
    }

    /// Ordinal of the instruction that faulted.
    pub fn site(&self) -> Option<u32> {
        self.sites().first().copied()
    }

    pub fn exit_code(&self) -> i32 {
        self.kind().exit_code()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub verdict: Verdict,
    /// Every violation seen; more than one only in keep-going mode.
    pub violations: Vec<Verdict>,
    /// Program instructions executed (runtime instructions excluded, so the
    /// step limit bites identically with and without instrumentation).
    pub steps: u64,
    /// Calls into the runtime: range checks, cast checks, escapes, range
    /// queries.
    pub runtime_calls: u64,
    /// Inline merged asserts executed.
    pub asserts: u64,
    pub stats: RuntimeStats,
    /// Values printed by `@print_i64`.
    pub output: Vec<i64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RangeState {
    Live,
    Stale,
    Unallocated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Reg {
    Word(u64),
    Range(Bounds, RangeState),
}

impl Reg {
    fn word(self) -> u64 {
        match self {
            Reg::Word(w) => w,
            Reg::Range(..) => 0,
        }
    }
}

struct Frame {
    func: usize,
    regs: Vec<Reg>,
    block: usize,
    prev_block: Option<usize>,
    idx: usize,
    /// Register in the caller receiving the return value.
    ret_to: Option<usize>,
}

enum Flow {
    Next,
    Jump(usize),
    Call(usize, Vec<u64>, Option<usize>),
    Return(Option<u64>),
}

/// Runs `p` from its entry function.
pub fn run(p: &Program, cfg: &VmConfig) -> ExecutionReport {
    Vm::new(p, cfg).execute()
}

struct Vm<'a> {
    p: &'a Program,
    cfg: VmConfig,
    rt: Runtime,
    globals: Vec<u64>,
    ordinals: Vec<Vec<Vec<Option<u32>>>>,
    stack_top: u64,
    steps: u64,
    runtime_calls: u64,
    asserts: u64,
    output: Vec<i64>,
    violations: Vec<Verdict>,
}

impl<'a> Vm<'a> {
    fn new(p: &'a Program, cfg: &VmConfig) -> Self {
        let mut rt = Runtime::new(cfg.runtime);
        let mut globals = Vec::with_capacity(p.globals.len());
        let mut next = GLOBAL_BASE;
        for (i, g) in p.globals.iter().enumerate() {
            let size = p.global_size(crate::ir::GlobalId(i as u32)).max(1);
            rt.memory.map(next, size);
            rt.memory
                .write_bytes(next, &g.init)
                .expect("global region is mapped");
            globals.push(next);
            next = (next + size).next_multiple_of(16);
        }
        Vm {
            p,
            cfg: *cfg,
            rt,
            globals,
            ordinals: p.source_ordinals(),
            stack_top: STACK_BASE,
            steps: 0,
            runtime_calls: 0,
            asserts: 0,
            output: Vec::new(),
            violations: Vec::new(),
        }
    }

    fn report(self, verdict: Verdict) -> ExecutionReport {
        ExecutionReport {
            verdict,
            violations: self.violations,
            steps: self.steps,
            runtime_calls: self.runtime_calls,
            asserts: self.asserts,
            stats: self.rt.stats(),
            output: self.output,
        }
    }

    fn new_frame(&self, func: usize, args: &[u64], ret_to: Option<usize>) -> Frame {
        let f = &self.p.functions[func];
        let mut regs = vec![Reg::Word(0); f.values.len()];
        for (pv, a) in f.params.iter().zip(args) {
            regs[pv.index()] = Reg::Word(*a);
        }
        Frame {
            func,
            regs,
            block: 0,
            prev_block: None,
            idx: 0,
            ret_to,
        }
    }

    fn execute(mut self) -> ExecutionReport {
        let Some(entry) = self.p.function_by_name(&self.p.entry) else {
            return self.report(Verdict::LimitExceeded);
        };
        let mut stack = vec![self.new_frame(entry.0 as usize, &[], None)];
        loop {
            let frame = stack.last_mut().expect("non-empty call stack");
            let f = &self.p.functions[frame.func];
            let Some(inst) = f.blocks[frame.block].insts.get(frame.idx) else {
                // Falling off a block only happens in malformed input.
                return self.finish(Verdict::LimitExceeded);
            };
            let ordinal = self.ordinals[frame.func][frame.block][frame.idx];
            if ordinal.is_some() {
                self.steps += 1;
                if self.steps > self.cfg.step_limit {
                    return self.finish(Verdict::LimitExceeded);
                }
            }
            let flow = match self.step(f, frame, &inst.kind, inst.result, ordinal) {
                Ok(flow) => flow,
                Err(v) => {
                    self.violations.push(v.clone());
                    if self.cfg.keep_going {
                        Flow::Next
                    } else {
                        return self.report(v);
                    }
                }
            };
            match flow {
                Flow::Next => frame.idx += 1,
                Flow::Jump(target) => {
                    frame.prev_block = Some(frame.block);
                    frame.block = target;
                    frame.idx = 0;
                    self.eval_phis(stack.last_mut().expect("frame"));
                }
                Flow::Call(callee, args, ret_to) => {
                    frame.idx += 1;
                    if stack.len() >= MAX_CALL_DEPTH {
                        return self.finish(Verdict::LimitExceeded);
                    }
                    let mut callee_frame = self.new_frame(callee, &args, ret_to);
                    self.eval_phis(&mut callee_frame);
                    stack.push(callee_frame);
                }
                Flow::Return(value) => {
                    let done = stack.pop().expect("frame");
                    match stack.last_mut() {
                        None => return self.finish(Verdict::Ok),
                        Some(caller) => {
                            if let (Some(r), Some(v)) = (done.ret_to, value) {
                                caller.regs[r] = Reg::Word(v);
                            }
                        }
                    }
                }
            }
        }
    }

    fn finish(self, verdict: Verdict) -> ExecutionReport {
        match self.violations.first().cloned() {
            Some(first) if verdict == Verdict::Ok => self.report(first),
            _ => self.report(verdict),
        }
    }

    /// Phis at the head of the current block read their inputs together.
    fn eval_phis(&self, frame: &mut Frame) {
        let f = &self.p.functions[frame.func];
        let block = &f.blocks[frame.block];
        let mut updates = Vec::new();
        for inst in &block.insts {
            let InstKind::Phi { ty, incoming } = &inst.kind else {
                break;
            };
            let from = frame.prev_block.map(|b| crate::ir::BlockId(b as u32));
            let v = incoming
                .iter()
                .find(|(_, b)| Some(*b) == from)
                .map(|(op, _)| self.operand(frame, *op, ty))
                .unwrap_or(0);
            updates.push((inst.result.expect("phi result").index(), v));
        }
        for (r, v) in updates {
            frame.regs[r] = Reg::Word(v);
        }
    }

    fn operand(&self, frame: &Frame, op: Operand, ty: &Ty) -> u64 {
        match op {
            Operand::Value(v) => frame.regs[v.index()].word(),
            Operand::Global(g) => self.globals[g.0 as usize],
            Operand::Imm(i) => match ty {
                Ty::Int(w) => w.normalize(i as u64),
                _ => i as u64,
            },
        }
    }

    fn word(&self, frame: &Frame, op: Operand) -> u64 {
        self.operand(frame, op, &Ty::I64)
    }

    fn sites_of(site: &crate::ir::Site) -> Vec<u32> {
        site.all()
    }

    fn program_site(ordinal: Option<u32>) -> Vec<u32> {
        ordinal.into_iter().collect()
    }

    fn step(
        &mut self,
        f: &Function,
        frame: &mut Frame,
        kind: &InstKind,
        result: Option<crate::ir::ValueId>,
        ordinal: Option<u32>,
    ) -> Result<Flow, Verdict> {
        let set = |frame: &mut Frame, v: u64| {
            if let Some(r) = result {
                frame.regs[r.index()] = Reg::Word(v);
            }
        };
        let fname = || f.name.clone();
        match kind {
            InstKind::Alloc { size } => {
                let n = self.word(frame, *size);
                let addr = self.rt.alloc(n).unwrap_or(0);
                set(frame, addr);
            }
            InstKind::Free { ptr } => {
                let addr = self.word(frame, *ptr);
                self.rt.free(addr).map_err(|t| match t {
                    Trap::DoubleFree { addr } => Verdict::DoubleFree {
                        sites: Self::program_site(ordinal),
                        function: fname(),
                        addr,
                    },
                    _ => Verdict::InvalidFree {
                        sites: Self::program_site(ordinal),
                        function: fname(),
                        addr,
                    },
                })?;
            }
            InstKind::Slot { ty } => {
                let size = self.p.size_of(ty).max(1);
                let addr = self.stack_top;
                self.stack_top = (addr + size).next_multiple_of(8);
                self.rt.memory.map(addr, size);
                set(frame, addr);
            }
            InstKind::PtrAdd {
                elem,
                base,
                indices,
                ..
            } => {
                let b = self.word(frame, *base);
                let off = self.ptradd_offset(frame, elem, indices);
                set(frame, b.wrapping_add(off as u64));
            }
            InstKind::Cast { value, to } => {
                let v = self.operand(frame, *value, &self.p.operand_ty(f, *value));
                let v = match to {
                    Ty::Int(w) => w.normalize(v),
                    _ => v,
                };
                set(frame, v);
            }
            InstKind::Load { ty, ptr } => {
                let addr = self.word(frame, *ptr);
                let width = self.p.size_of(ty);
                let v = match self.mem_ok(addr, width) {
                    true => self.rt.memory.read_uint(addr, width).unwrap_or(0),
                    false => {
                        self.fault(f, addr, ordinal)?;
                        0
                    }
                };
                let v = match ty {
                    Ty::Int(w) => w.normalize(v),
                    _ => v,
                };
                set(frame, v);
            }
            InstKind::Store { ty, value, ptr } => {
                let addr = self.word(frame, *ptr);
                let v = self.operand(frame, *value, ty);
                let width = self.p.size_of(ty);
                if self.mem_ok(addr, width) {
                    self.rt
                        .memory
                        .write_uint(addr, width, v)
                        .expect("probed writable");
                } else {
                    self.fault(f, addr, ordinal)?;
                }
            }
            InstKind::Const { ty, value } => {
                let v = match ty {
                    Ty::Int(w) => w.normalize(*value as u64),
                    _ => *value as u64,
                };
                set(frame, v);
            }
            InstKind::Bin { op, ty, lhs, rhs } => {
                let w = int_width(ty);
                let a = self.operand(frame, *lhs, ty) as i64;
                let b = self.operand(frame, *rhs, ty) as i64;
                set(frame, w.normalize(binop(*op, a, b) as u64));
            }
            InstKind::Cmp { pred, ty, lhs, rhs } => {
                let a = self.operand(frame, *lhs, ty) as i64;
                let b = self.operand(frame, *rhs, ty) as i64;
                let r = match pred {
                    CmpPred::Eq => a == b,
                    CmpPred::Ne => a != b,
                    CmpPred::Lt => a < b,
                    CmpPred::Le => a <= b,
                    CmpPred::Gt => a > b,
                    CmpPred::Ge => a >= b,
                };
                set(frame, r as u64);
            }
            InstKind::Br { target } => return Ok(Flow::Jump(target.index())),
            InstKind::CondBr {
                cond,
                then_to,
                else_to,
            } => {
                let c = self.word(frame, *cond);
                let t = if c != 0 { then_to } else { else_to };
                return Ok(Flow::Jump(t.index()));
            }
            InstKind::Phi { .. } => {}
            InstKind::Call { callee, args } => match callee {
                Callee::PrintI64 => {
                    let v = self.word(frame, args[0]);
                    self.output.push(v as i64);
                }
                Callee::Func(id) => {
                    let g = self.p.function(*id);
                    let vals = args
                        .iter()
                        .zip(&g.params)
                        .map(|(a, pv)| self.operand(frame, *a, g.value_ty(*pv)))
                        .collect();
                    return Ok(Flow::Call(id.0 as usize, vals, result.map(|r| r.index())));
                }
            },
            InstKind::Ret { value } => {
                let v = value.map(|op| self.operand(frame, op, &f.ret));
                return Ok(Flow::Return(v));
            }
            InstKind::CheckRange {
                src,
                dst,
                size,
                site,
            } => {
                self.runtime_calls += 1;
                let s = self.word(frame, *src);
                let d = self.word(frame, *dst);
                self.rt
                    .check_range(s, d, *size)
                    .map_err(|t| self.check_trap(f, t, site))?;
            }
            InstKind::CastCheck { ptr, size, site } => {
                self.runtime_calls += 1;
                let a = self.word(frame, *ptr);
                self.rt
                    .cast_check(a, *size)
                    .map_err(|t| self.check_trap(f, t, site))?;
            }
            InstKind::Escape { loc, value, .. } => {
                self.runtime_calls += 1;
                let l = self.word(frame, *loc);
                let v = self.word(frame, *value);
                self.rt.escape(l, v);
            }
            InstKind::GetRange { ptr } => {
                self.runtime_calls += 1;
                let a = self.word(frame, *ptr);
                // A stale or unallocated range is reported by the asserts
                // that consume it, at their own sites.
                let reg = match self.rt.get_range(a) {
                    Ok(b) => Reg::Range(b, RangeState::Live),
                    Err(QueryError::NotHeap) => Reg::Range(Bounds::ALL, RangeState::Live),
                    Err(QueryError::Stale(b)) => Reg::Range(b, RangeState::Stale),
                    Err(QueryError::Unallocated(b)) => Reg::Range(b, RangeState::Unallocated),
                };
                if let Some(r) = result {
                    frame.regs[r.index()] = reg;
                }
            }
            InstKind::AssertRange {
                range,
                dst,
                size,
                site,
            } => {
                self.asserts += 1;
                let d = self.word(frame, *dst);
                let Operand::Value(rv) = range else {
                    unreachable!("validated range operand")
                };
                let (bounds, state) = match frame.regs[rv.index()] {
                    Reg::Range(b, s) => (b, s),
                    Reg::Word(_) => (Bounds::ALL, RangeState::Live),
                };
                match state {
                    RangeState::Stale => {
                        return Err(Verdict::Uaf {
                            sites: Self::sites_of(site),
                            function: fname(),
                            addr: d,
                        })
                    }
                    RangeState::Unallocated => {
                        return Err(Verdict::AssertFail {
                            sites: Self::sites_of(site),
                            function: fname(),
                            dst: d,
                            size: *size,
                            bounds,
                        })
                    }
                    RangeState::Live if !bounds.admits(d, *size) => {
                        return Err(Verdict::AssertFail {
                            sites: Self::sites_of(site),
                            function: fname(),
                            dst: d,
                            size: *size,
                            bounds,
                        })
                    }
                    RangeState::Live => {}
                }
            }
        }
        Ok(Flow::Next)
    }

    fn mem_ok(&self, addr: u64, width: u64) -> bool {
        addr != POISON
            && (0..width).all(|i| {
                addr.checked_add(i)
                    .is_some_and(|a| self.rt.memory.is_mapped(a))
            })
    }

    fn fault(&self, f: &Function, addr: u64, ordinal: Option<u32>) -> Result<(), Verdict> {
        Err(Verdict::Uaf {
            sites: Self::program_site(ordinal),
            function: f.name.clone(),
            addr,
        })
    }

    fn check_trap(&self, f: &Function, t: Trap, site: &crate::ir::Site) -> Verdict {
        match t {
            Trap::OutOfBounds {
                src,
                dst,
                size,
                bounds,
            } => Verdict::Oob {
                sites: Self::sites_of(site),
                function: f.name.clone(),
                src,
                dst,
                size,
                bounds,
            },
            Trap::UseAfterFree { addr } | Trap::DoubleFree { addr } | Trap::InvalidFree { addr } => {
                Verdict::Uaf {
                    sites: Self::sites_of(site),
                    function: f.name.clone(),
                    addr,
                }
            }
        }
    }

    fn ptradd_offset(&self, frame: &Frame, elem: &Ty, indices: &[Operand]) -> i64 {
        let mut off: i64 = 0;
        let mut cur = elem.clone();
        let mut scaled = true;
        for (k, idx) in indices.iter().enumerate() {
            if k == 0 || scaled {
                let i = self.word(frame, *idx) as i64;
                off = off.wrapping_add(i.wrapping_mul(self.p.size_of(&cur) as i64));
                scaled = false;
                continue;
            }
            let (Ty::Record(tid), Operand::Imm(fi)) = (&cur, idx) else {
                break;
            };
            let field = &self.p.type_def(*tid).fields[*fi as usize];
            off = off.wrapping_add(field.offset as i64);
            scaled = field.trailing;
            cur = field.ty.clone();
        }
        off
    }
}

fn int_width(ty: &Ty) -> IntWidth {
    match ty {
        Ty::Int(w) => *w,
        _ => IntWidth::I64,
    }
}

fn binop(op: BinOp, a: i64, b: i64) -> i64 {
    match op {
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Mul => a.wrapping_mul(b),
        BinOp::Div => {
            if b == 0 {
                0
            } else {
                a.wrapping_div(b)
            }
        }
        BinOp::Rem => {
            if b == 0 {
                0
            } else {
                a.wrapping_rem(b)
            }
        }
        BinOp::And => a & b,
        BinOp::Or => a | b,
        BinOp::Xor => a ^ b,
        BinOp::Shl => a.wrapping_shl((b & 63) as u32),
        BinOp::Shr => a.wrapping_shr((b & 63) as u32),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::{instrument_program, InstrumentOptions};
    use crate::ir::parse_program;

    const RELOAD_BUGS: &str = "
fn @main() {
entry:
  %slot = slot i8*
  %buf = alloc 16
  store i8* %buf, %slot
  %b1 = load i8*, %slot
  %p = ptradd i8, %b1, 32
  store i8 120, %p
  %b2 = load i8*, %slot
  free %b2
  %b3 = load i8*, %slot
  %q = ptradd i8, %b3, 1
  store i8 121, %q
  ret
}
";

    fn instrumented(src: &str) -> Program {
        let p = parse_program(src).unwrap();
        instrument_program(&p, InstrumentOptions::default()).unwrap().0
    }

    #[test]
    fn plain_overflow_runs_silently() {
        let p = parse_program(RELOAD_BUGS).unwrap();
        let r = run(&p, &VmConfig::default());
        assert_eq!(r.verdict, Verdict::Ok);
        assert_eq!(r.runtime_calls, 0);
    }

    #[test]
    fn instrumented_overflow_is_caught() {
        let r = run(&instrumented(RELOAD_BUGS), &VmConfig::default());
        assert_eq!(r.verdict.kind(), VerdictKind::Oob);
        assert_eq!(r.verdict.site(), Some(4));
        let Verdict::Oob { src, dst, bounds, .. } = r.verdict else { unreachable!() };
        assert_eq!(dst - src, 32);
        assert_eq!(bounds.unwrap().upper - bounds.unwrap().lower, 32);
    }

    #[test]
    fn dangling_pointer_is_neutralized() {
        let src = RELOAD_BUGS.replace("ptradd i8, %b1, 32", "ptradd i8, %b1, 8");
        let r = run(&instrumented(&src), &VmConfig::default());
        assert_eq!(r.verdict.kind(), VerdictKind::Uaf);
        // The reload yields POISON; the store through it faults.
        let Verdict::Uaf { addr, sites, .. } = &r.verdict else { unreachable!() };
        assert_eq!(*addr, POISON + 1);
        assert_eq!(sites, &vec![10]);
        assert_eq!(r.stats.neutralized, 1);
    }

    #[test]
    fn keep_going_lists_every_violation() {
        let src = RELOAD_BUGS.replace("ptradd i8, %b3, 1", "ptradd i8, %b3, 40");
        let cfg = VmConfig {
            keep_going: true,
            ..VmConfig::default()
        };
        let r = run(&instrumented(&src), &cfg);
        assert_eq!(r.verdict.kind(), VerdictKind::Oob);
        assert!(r.violations.len() >= 2, "{:?}", r.violations);
    }

    #[test]
    fn loops_calls_and_output() {
        let src = "
fn @sum(%n: i64) -> i64 {
entry:
  br loop
loop:
  %i = phi i64 [0, entry], [%i2, loop]
  %acc = phi i64 [0, entry], [%acc2, loop]
  %acc2 = binop add i64 %acc, %i
  %i2 = binop add i64 %i, 1
  %c = cmp lt i64 %i2, %n
  condbr %c, loop, done
done:
  ret %acc2
}
fn @main() {
entry:
  %s = call @sum(10)
  call @print_i64(%s)
  %d = binop div i64 %s, 0
  call @print_i64(%d)
  %t = const i8 200
  %u = cast %t to i64
  call @print_i64(%u)
  ret
}
";
        let p = parse_program(src).unwrap();
        let r = run(&p, &VmConfig::default());
        assert_eq!(r.verdict, Verdict::Ok);
        assert_eq!(r.output, vec![45, 0, -56]);
    }

    #[test]
    fn step_limit_stops_infinite_loops() {
        let src = "fn @main() {\nentry:\n  br entry\n}\n";
        let p = parse_program(src).unwrap();
        let cfg = VmConfig {
            step_limit: 1000,
            ..VmConfig::default()
        };
        let r = run(&p, &cfg);
        assert_eq!(r.verdict, Verdict::LimitExceeded);
        assert_eq!(r.verdict.exit_code(), 20);
        assert_eq!(r.steps, 1001);
    }

    #[test]
    fn free_misuse_verdicts() {
        let src = "
fn @main() {
entry:
  %a = alloc 8
  free %a
  free %a
  ret
}
";
        let r = run(&parse_program(src).unwrap(), &VmConfig::default());
        assert_eq!(r.verdict.kind(), VerdictKind::DoubleFree);
        assert_eq!(r.verdict.site(), Some(2));
        let src = "
fn @main() {
entry:
  %a = alloc 8
  %b = ptradd i8, %a, 1
  free %b
  ret
}
";
        let r = run(&parse_program(src).unwrap(), &VmConfig::default());
        assert_eq!(r.verdict.kind(), VerdictKind::InvalidFree);
        assert_eq!(r.verdict.exit_code(), 13);
    }

    #[test]
    fn reports_are_deterministic() {
        let p = instrumented(RELOAD_BUGS);
        let a = serde_json::to_string(&run(&p, &VmConfig::default())).unwrap();
        let b = serde_json::to_string(&run(&p, &VmConfig::default())).unwrap();
        assert_eq!(a, b);
    }
}
