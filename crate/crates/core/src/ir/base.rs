//! Pointer provenance: which object a pointer value was derived from.

use std::collections::HashSet;

use super::{Function, GlobalId, InstKind, Operand, Pos, ValueDef, ValueId};

/// The value a pointer chain starts from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaseRef {
    Value(ValueId),
    Global(GlobalId),
}

/// What kind of memory a base value points into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Origin {
    Heap,
    Global,
    Stack,
    /// Parameters, loaded pointers, call results, and phis of mixed origin.
    Unknown,
}

impl Origin {
    pub fn may_be_heap(self) -> bool {
        matches!(self, Origin::Heap | Origin::Unknown)
    }
}

/// One `ptradd` or `cast` link between a pointer and its base.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainStep {
    pub pos: Pos,
    pub offset: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BaseInfo {
    pub base: BaseRef,
    pub origin: Origin,
    /// Sum of the constant offsets along the chain, if all are constant.
    pub offset: Option<u64>,
    /// Steps from the traced pointer back to the base, nearest first.
    pub chain: Vec<ChainStep>,
}

/// Follows `ptradd` and `cast` links backward from `op` to the value they
/// start from.
pub fn trace_base(f: &Function, defs: &[ValueDef], op: Operand) -> BaseInfo {
    let mut info = walk_chain(f, defs, op);
    if let BaseRef::Value(v) = info.base {
        if v.index() < f.values.len() {
            info.origin = value_origin(f, defs, v, &mut HashSet::new());
        }
    }
    info
}

/// Chain walk only; `origin` is left as `Unknown` for value bases.
fn walk_chain(f: &Function, defs: &[ValueDef], op: Operand) -> BaseInfo {
    let mut chain = Vec::new();
    let mut offset = Some(0u64);
    let mut cur = op;
    loop {
        let v = match cur {
            Operand::Global(g) => {
                return BaseInfo {
                    base: BaseRef::Global(g),
                    origin: Origin::Global,
                    offset,
                    chain,
                }
            }
            Operand::Value(v) => v,
            Operand::Imm(_) => {
                // Integers never become pointers; treat as opaque.
                return BaseInfo {
                    base: BaseRef::Value(ValueId(u32::MAX)),
                    origin: Origin::Unknown,
                    offset: None,
                    chain,
                };
            }
        };
        let next = match defs.get(v.index()) {
            Some(ValueDef::Inst(pos)) => match &f.inst(*pos).kind {
                InstKind::PtrAdd {
                    base,
                    static_offset,
                    ..
                } => {
                    offset = match (offset, static_offset) {
                        (Some(a), Some(b)) => a.checked_add(*b),
                        _ => None,
                    };
                    chain.push(ChainStep {
                        pos: *pos,
                        offset: *static_offset,
                    });
                    Some(*base)
                }
                InstKind::Cast { value, .. } => {
                    chain.push(ChainStep {
                        pos: *pos,
                        offset: Some(0),
                    });
                    Some(*value)
                }
                _ => None,
            },
            _ => None,
        };
        match next {
            Some(n) if chain.len() <= f.values.len() => cur = n,
            _ => {
                return BaseInfo {
                    base: BaseRef::Value(v),
                    origin: Origin::Unknown,
                    offset,
                    chain,
                }
            }
        }
    }
}

fn value_origin(f: &Function, defs: &[ValueDef], v: ValueId, seen: &mut HashSet<ValueId>) -> Origin {
    if !seen.insert(v) {
        return Origin::Unknown;
    }
    let origin = phi_aware_origin(f, defs, v, seen);
    seen.remove(&v);
    origin
}

fn phi_aware_origin(
    f: &Function,
    defs: &[ValueDef],
    v: ValueId,
    seen: &mut HashSet<ValueId>,
) -> Origin {
    let Some(ValueDef::Inst(pos)) = defs.get(v.index()) else {
        return Origin::Unknown;
    };
    match &f.inst(*pos).kind {
        InstKind::Alloc { .. } => Origin::Heap,
        InstKind::Slot { .. } => Origin::Stack,
        InstKind::Phi { incoming, .. } => {
            let mut acc = None;
            for (op, _) in incoming {
                let o = match *op {
                    Operand::Global(_) => Origin::Global,
                    Operand::Imm(_) => Origin::Unknown,
                    Operand::Value(_) => {
                        match walk_chain(f, defs, *op).base {
                            BaseRef::Global(_) => Origin::Global,
                            BaseRef::Value(b) if b.index() < f.values.len() => {
                                value_origin(f, defs, b, seen)
                            }
                            BaseRef::Value(_) => Origin::Unknown,
                        }
                    }
                };
                acc = match acc {
                    None => Some(o),
                    Some(a) if a == o => Some(a),
                    Some(_) => return Origin::Unknown,
                };
            }
            acc.unwrap_or(Origin::Unknown)
        }
        _ => Origin::Unknown,
    }
}

/// Static heap classification of a pointer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeapClass {
    Heap,
    NonHeap,
    Unknown,
}

impl HeapClass {
    /// Instrumentation treats unknown pointers as heap pointers.
    pub fn needs_check(self) -> bool {
        self != HeapClass::NonHeap
    }
}

pub fn is_heap_pointer(f: &Function, defs: &[ValueDef], op: Operand) -> HeapClass {
    match trace_base(f, defs, op).origin {
        Origin::Heap => HeapClass::Heap,
        Origin::Global | Origin::Stack => HeapClass::NonHeap,
        Origin::Unknown => HeapClass::Unknown,
    }
}
