//! Drops range checks on constant field accesses through pointers to
//! fixed-size records. Cast checks guarantee such a pointer has room for the
//! whole record.

use std::collections::HashSet;

use super::{remove_at, PassStats};
use crate::ir::{Function, InstKind, Operand, Program, RecordKind, Ty, ValueDef};

pub(super) fn run(p: &Program, f: &mut Function, ps: &mut PassStats) {
    let defs = f.value_defs();
    let mut dead = HashSet::new();
    for (pos, inst) in f.positions() {
        let InstKind::CheckRange { dst, size, .. } = &inst.kind else {
            continue;
        };
        ps.examined += 1;
        if field_in_record(p, f, &defs, *dst, *size) {
            dead.insert(pos);
        }
    }
    ps.removed += dead.len() as u64;
    remove_at(f, &dead);
}

fn field_in_record(p: &Program, f: &Function, defs: &[ValueDef], dst: Operand, size: u64) -> bool {
    let Operand::Value(v) = dst else { return false };
    let Some(ValueDef::Inst(pos)) = defs.get(v.index()) else {
        return false;
    };
    let InstKind::PtrAdd {
        base,
        static_offset: Some(off),
        ..
    } = &f.inst(*pos).kind
    else {
        return false;
    };
    let Ty::Ptr(inner) = p.operand_ty(f, *base) else {
        return false;
    };
    let Ty::Record(tid) = *inner else { return false };
    let def = p.type_def(tid);
    def.kind == RecordKind::Record && off.checked_add(size).is_some_and(|e| e <= def.byte_size)
}
