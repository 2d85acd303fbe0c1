//! Structural checks on a parsed program.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{
    BlockId, Callee, DominatorInfo, Function, InstKind, Operand, Pos, Program, RecordKind, Ty,
    ValueDef,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    /// `@func:label:index`, `type Name`, `global @name`, or `program`.
    pub location: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: {}: {}", self.location, self.message)
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

struct Sink(Vec<Diagnostic>);

impl Sink {
    fn error(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.0.push(Diagnostic {
            severity: Severity::Error,
            location: location.into(),
            message: message.into(),
        });
    }

    fn warning(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.0.push(Diagnostic {
            severity: Severity::Warning,
            location: location.into(),
            message: message.into(),
        });
    }
}

/// Checks type layouts, globals, the entry point, and every function body.
/// An empty result (or one holding only warnings) means the program is
/// well-formed.
pub fn validate_program(p: &Program) -> Vec<Diagnostic> {
    let mut sink = Sink(Vec::new());
    validate_types(p, &mut sink);
    for g in &p.globals {
        let loc = format!("global @{}", g.name);
        if !g.elem.is_first_class() && !matches!(g.elem, Ty::Record(_)) {
            sink.error(&loc, format!("element type {} is not storable", p.ty_name(&g.elem)));
        }
        if g.count == Some(0) {
            sink.error(&loc, "zero-length array");
        }
        if g.init.len() as u64 > p.size_of(&g.elem) * g.count.unwrap_or(1) {
            sink.error(&loc, "initializer longer than the global");
        }
    }
    match p.function_by_name(&p.entry) {
        None => sink.error("program", format!("entry function @{} not found", p.entry)),
        Some(id) if !p.function(id).params.is_empty() => {
            sink.error("program", format!("entry function @{} takes parameters", p.entry))
        }
        Some(_) => {}
    }
    for f in &p.functions {
        validate_function(p, f, &mut sink);
    }
    sink.0
}

fn validate_types(p: &Program, sink: &mut Sink) {
    for (i, t) in p.types.iter().enumerate() {
        let loc = format!("type {}", t.name);
        if !t.align.is_power_of_two() {
            sink.error(&loc, format!("alignment {} is not a power of two", t.align));
        }
        for (k, fld) in t.fields.iter().enumerate() {
            if matches!(&fld.ty, Ty::Record(id) if id.0 as usize == i) {
                sink.error(&loc, format!("field {} contains its own type", fld.name));
                continue;
            }
            if !fld.ty.is_first_class() && !matches!(fld.ty, Ty::Record(_)) {
                sink.error(&loc, format!("field {} has non-storable type", fld.name));
                continue;
            }
            if fld.trailing {
                if t.kind != RecordKind::Flexible {
                    sink.error(&loc, format!("trailing array {} in a non-flexible record", fld.name));
                } else if k + 1 != t.fields.len() {
                    sink.error(&loc, format!("trailing array {} is not the last field", fld.name));
                }
                if fld.offset != t.byte_size {
                    sink.error(
                        &loc,
                        format!("trailing array {} must start at the prefix size", fld.name),
                    );
                }
            } else if fld.offset + p.size_of(&fld.ty) > t.byte_size {
                sink.error(
                    &loc,
                    format!(
                        "field {} at {} of size {} exceeds size {}",
                        fld.name,
                        fld.offset,
                        p.size_of(&fld.ty),
                        t.byte_size
                    ),
                );
            }
        }
        if t.fields.windows(2).any(|w| w[1].offset <= w[0].offset) {
            sink.error(&loc, "field offsets must strictly increase");
        }
        if t.kind == RecordKind::Flexible && !t.fields.last().is_some_and(|f| f.trailing) {
            sink.error(&loc, "flexible record needs a trailing array as its last field");
        }
        if t.byte_size == 0 && t.kind == RecordKind::Record {
            sink.error(&loc, "record of size zero");
        }
    }
}

fn validate_function(p: &Program, f: &Function, sink: &mut Sink) {
    let fname = format!("@{}", f.name);
    if f.blocks.is_empty() {
        sink.error(&fname, "function has no blocks");
        return;
    }
    if !matches!(f.ret, Ty::Void) && !f.ret.is_first_class() {
        sink.error(&fname, format!("return type {} is not first-class", p.ty_name(&f.ret)));
    }
    for v in &f.params {
        if !f.value_ty(*v).is_first_class() {
            sink.error(&fname, format!("parameter %{} is not first-class", f.value_name(*v)));
        }
    }
    let mut names = HashSet::new();
    for v in &f.values {
        if !names.insert(v.name.as_str()) {
            sink.error(&fname, format!("value name %{} used twice", v.name));
        }
    }
    let loc = |pos: Pos| format!("{}:{}:{}", fname, f.block(pos.block).label, pos.index);

    let info = DominatorInfo::new(f);
    let defs = f.value_defs();
    let mut seen_defs = vec![0u32; f.values.len()];
    for (_, inst) in f.positions() {
        if let Some(r) = inst.result {
            seen_defs[r.index()] += 1;
        }
    }
    for p_ in &f.params {
        seen_defs[p_.index()] += 1;
    }
    for (i, n) in seen_defs.iter().enumerate() {
        if *n > 1 {
            sink.error(&fname, format!("%{} defined more than once", f.values[i].name));
        }
    }

    for (b, block) in f.blocks.iter().enumerate() {
        let bid = BlockId(b as u32);
        if !info.reachable(bid) {
            sink.warning(format!("{}:{}", fname, block.label), "unreachable block");
        }
        match block.insts.last() {
            Some(last) if last.kind.is_terminator() => {}
            _ => sink.error(
                format!("{}:{}", fname, block.label),
                "block does not end in a terminator",
            ),
        }
        let mut past_phis = false;
        for (i, inst) in block.insts.iter().enumerate() {
            let pos = Pos::new(bid, i);
            if inst.kind.is_terminator() && i + 1 != block.insts.len() {
                sink.error(loc(pos), "terminator in the middle of a block");
            }
            if let InstKind::Phi { incoming, .. } = &inst.kind {
                if past_phis {
                    sink.error(loc(pos), "phi after a non-phi instruction");
                }
                let preds: HashSet<BlockId> = info.cfg.preds[b].iter().copied().collect();
                let mut labels = HashSet::new();
                for (_, from) in incoming {
                    if !labels.insert(*from) {
                        sink.error(loc(pos), format!("phi lists {} twice", f.block(*from).label));
                    }
                }
                if info.reachable(bid) && labels != preds {
                    sink.error(loc(pos), "phi incoming blocks differ from predecessors");
                }
            } else {
                past_phis = true;
            }
            if inst.kind.is_runtime() && !p.instrumented {
                sink.error(loc(pos), "runtime instruction in an uninstrumented program");
            }
            check_types(p, f, pos, &inst.kind, inst.result, &mut |m| sink.error(loc(pos), m));

            if !info.reachable(bid) {
                continue;
            }
            // SSA: every used value is defined and its definition dominates
            // the use (for phis, the end of the incoming block).
            let uses: Vec<(Operand, Pos)> = match &inst.kind {
                InstKind::Phi { incoming, .. } => incoming
                    .iter()
                    .map(|(op, from)| {
                        let end = f.block(*from).insts.len();
                        (*op, Pos::new(*from, end))
                    })
                    .collect(),
                k => k.operands().into_iter().map(|op| (op, pos)).collect(),
            };
            for (op, at) in uses {
                let Operand::Value(v) = op else { continue };
                let Some(def) = defs.get(v.index()) else {
                    sink.error(loc(pos), "operand refers to a missing value");
                    continue;
                };
                match def {
                    ValueDef::Param(_) => {}
                    ValueDef::Undefined => {
                        sink.error(loc(pos), format!("%{} is never defined", f.value_name(v)))
                    }
                    ValueDef::Inst(d) => {
                        let ok = if at == pos {
                            d.block == pos.block && d.index < pos.index
                                || d.block != pos.block && info.dom.dominates(d.block, pos.block)
                        } else {
                            info.reachable(at.block) && info.dominates(*d, at)
                        };
                        if !ok && (at == pos || info.reachable(at.block)) {
                            sink.error(
                                loc(pos),
                                format!("use of %{} not dominated by its definition", f.value_name(v)),
                            );
                        }
                    }
                }
            }
        }
    }
}

fn check_types(
    p: &Program,
    f: &Function,
    _pos: Pos,
    kind: &InstKind,
    result: Option<super::ValueId>,
    err: &mut dyn FnMut(String),
) {
    let ty = |op: Operand| p.operand_ty(f, op);
    let name = |t: &Ty| p.ty_name(t);
    let want_int = |op: Operand, what: &str, err: &mut dyn FnMut(String)| {
        if !ty(op).is_int() {
            err(format!("{what} must be an integer, found {}", name(&ty(op))));
        }
    };
    let want_ptr = |op: Operand, what: &str, err: &mut dyn FnMut(String)| {
        if !ty(op).is_ptr() {
            err(format!("{what} must be a pointer, found {}", name(&ty(op))));
        }
    };
    let produces = match kind {
        InstKind::Alloc { .. }
        | InstKind::Slot { .. }
        | InstKind::PtrAdd { .. }
        | InstKind::Cast { .. }
        | InstKind::Load { .. }
        | InstKind::Const { .. }
        | InstKind::Bin { .. }
        | InstKind::Cmp { .. }
        | InstKind::Phi { .. }
        | InstKind::GetRange { .. } => Some(true),
        InstKind::Call { .. } => None,
        _ => Some(false),
    };
    match (produces, result) {
        (Some(true), None) => err("instruction result is not named".into()),
        (Some(false), Some(_)) => err("instruction produces no value".into()),
        _ => {}
    }
    match kind {
        InstKind::Alloc { size } => want_int(*size, "allocation size", err),
        InstKind::Free { ptr } => want_ptr(*ptr, "freed operand", err),
        InstKind::Slot { ty: t } => {
            if !t.is_first_class() && !matches!(t, Ty::Record(_)) {
                err(format!("slot of non-storable type {}", name(t)));
            }
        }
        InstKind::PtrAdd {
            elem,
            base,
            indices,
            ..
        } => {
            let bt = ty(*base);
            match bt.pointee() {
                Some(pt) if pt == elem => {}
                _ => err(format!(
                    "ptradd over {} needs a {}* base, found {}",
                    name(elem),
                    name(elem),
                    name(&bt)
                )),
            }
            for i in indices {
                want_int(*i, "ptradd index", err);
            }
        }
        InstKind::Cast { value, to } => {
            let from = ty(*value);
            let ok = (from.is_ptr() && to.is_ptr())
                || (from.is_int() && to.is_int())
                || (from.is_ptr() && to.is_int());
            if !ok {
                err(format!("cannot cast {} to {}", name(&from), name(to)));
            }
        }
        InstKind::Load { ty: t, ptr } => {
            if !t.is_first_class() {
                err(format!("load of non-first-class type {}", name(t)));
            }
            if ty(*ptr).pointee() != Some(t) {
                err(format!("load of {} through {}", name(t), name(&ty(*ptr))));
            }
        }
        InstKind::Store { ty: t, value, ptr } => {
            if !t.is_first_class() {
                err(format!("store of non-first-class type {}", name(t)));
            }
            let vt = ty(*value);
            if vt != *t && !(matches!(value, Operand::Imm(_)) && t.is_int()) {
                err(format!("stored value is {}, expected {}", name(&vt), name(t)));
            }
            if ty(*ptr).pointee() != Some(t) {
                err(format!("store of {} through {}", name(t), name(&ty(*ptr))));
            }
        }
        InstKind::Const { ty: t, .. } => {
            if !t.is_int() {
                err(format!("constant of non-integer type {}", name(t)));
            }
        }
        InstKind::Bin { ty: t, lhs, rhs, .. } | InstKind::Cmp { ty: t, lhs, rhs, .. } => {
            if !t.is_int() {
                err(format!("arithmetic on non-integer type {}", name(t)));
            }
            for op in [lhs, rhs] {
                if !matches!(op, Operand::Imm(_)) && ty(*op) != *t {
                    err(format!("operand is {}, expected {}", name(&ty(*op)), name(t)));
                }
            }
        }
        InstKind::CondBr { cond, .. } => want_int(*cond, "branch condition", err),
        InstKind::Phi { ty: t, incoming } => {
            for (op, _) in incoming {
                if !matches!(op, Operand::Imm(_)) && ty(*op) != *t {
                    err(format!("phi input is {}, expected {}", name(&ty(*op)), name(t)));
                }
                if matches!(op, Operand::Imm(_)) && !t.is_int() {
                    err("integer literal flowing into a pointer phi".into());
                }
            }
        }
        InstKind::Call { callee, args } => match callee {
            Callee::PrintI64 => {
                if args.len() != 1 {
                    err("@print_i64 takes one argument".into());
                } else {
                    want_int(args[0], "printed value", err);
                }
                if result.is_some() {
                    err("@print_i64 returns nothing".into());
                }
            }
            Callee::Func(id) => {
                let g = p.function(*id);
                if g.params.len() != args.len() {
                    err(format!(
                        "@{} takes {} arguments, got {}",
                        g.name,
                        g.params.len(),
                        args.len()
                    ));
                } else {
                    for (a, pv) in args.iter().zip(&g.params) {
                        let pt = g.value_ty(*pv);
                        let at = ty(*a);
                        if at != *pt && !(matches!(a, Operand::Imm(_)) && pt.is_int()) {
                            err(format!("argument is {}, expected {}", name(&at), name(pt)));
                        }
                    }
                }
                if result.is_some() && g.ret == Ty::Void {
                    err(format!("@{} returns nothing", g.name));
                }
            }
        },
        InstKind::Ret { value } => match (value, &f.ret) {
            (None, Ty::Void) => {}
            (None, t) => err(format!("missing return value of type {}", name(t))),
            (Some(_), Ty::Void) => err("return value in a void function".into()),
            (Some(v), t) => {
                if ty(*v) != *t && !(matches!(v, Operand::Imm(_)) && t.is_int()) {
                    err(format!("returned {}, expected {}", name(&ty(*v)), name(t)));
                }
            }
        },
        InstKind::CheckRange { src, dst, .. } => {
            want_ptr(*src, "range check source", err);
            want_ptr(*dst, "range check destination", err);
        }
        InstKind::CastCheck { ptr, .. } => want_ptr(*ptr, "cast check operand", err),
        InstKind::Escape { loc, value, .. } => {
            match ty(*loc).pointee() {
                Some(t) if t.is_ptr() => {}
                _ => err(format!("escape location must be a pointer to a pointer, found {}", name(&ty(*loc)))),
            }
            want_ptr(*value, "escaped value", err);
        }
        InstKind::GetRange { ptr } => want_ptr(*ptr, "range query operand", err),
        InstKind::AssertRange { range, dst, .. } => {
            if ty(*range) != Ty::Range {
                err(format!("assertrange needs a range, found {}", name(&ty(*range))));
            }
            want_ptr(*dst, "asserted pointer", err);
        }
        InstKind::Br { .. } => {}
    }
}
