//! Drops checks that cannot fail given sizes already known at compile time.

use std::collections::HashSet;

use super::window::lifetime_stable;
use super::{checks, const_alloc, remove_at, CheckInfo, CheckKind, PassStats};
use crate::ir::{DominatorInfo, Function, InstKind, Operand, Program, Ty, ValueDef};

pub(super) fn run(p: &Program, f: &mut Function, ps: &mut PassStats) {
    let defs = f.value_defs();
    let dom = DominatorInfo::new(f);
    let all = checks(f, &defs, &dom);
    let mut dead = HashSet::new();
    for c in &all {
        ps.examined += 1;
        if c.kind == CheckKind::Cast && narrowing_cast(p, f, &defs, c) {
            dead.insert(c.pos);
            continue;
        }
        let Some(extent) = c.extent() else { continue };
        let by_alloc = const_alloc(f, &defs, c.base).is_some_and(|(apos, n)| {
            extent <= n.saturating_add(1)
                && dom.dominates(apos, c.pos)
                && lifetime_stable(f, &dom.cfg, apos, c.pos, false)
        });
        let by_cast = || {
            all.iter().any(|d| {
                d.kind == CheckKind::Cast
                    && d.pos != c.pos
                    && d.base == c.base
                    && covers(d, c)
                    && dom.dominates(d.pos, c.pos)
                    && lifetime_stable(f, &dom.cfg, d.pos, c.pos, false)
            })
        };
        if by_alloc || by_cast() {
            dead.insert(c.pos);
        }
    }
    ps.removed += dead.len() as u64;
    remove_at(f, &dead);
}

/// A passed cast check at `d` proves the check at `c` passes too.
fn covers(d: &CheckInfo, c: &CheckInfo) -> bool {
    let (Some(od), Some(ed), Some(oc), Some(ec)) = (d.offset, d.extent(), c.offset, c.extent())
    else {
        return false;
    };
    let start_ok = match c.kind {
        CheckKind::Cast => od <= oc,
        // A range check consults the object of its source pointer, which may
        // sit anywhere on the chain from the base.
        CheckKind::Range => od == 0,
    };
    start_ok && ec <= ed
}

/// The checked cast converts from a pointee at least as large as the target.
fn narrowing_cast(p: &Program, f: &Function, defs: &[ValueDef], c: &CheckInfo) -> bool {
    let Operand::Value(v) = c.ptr else { return false };
    let Some(ValueDef::Inst(pos)) = defs.get(v.index()) else {
        return false;
    };
    let InstKind::Cast { value, .. } = &f.inst(*pos).kind else {
        return false;
    };
    match p.operand_ty(f, *value) {
        Ty::Ptr(inner) if *inner != Ty::Void => {
            let src = p.size_of(&inner);
            src > 0 && src >= c.size
        }
        _ => false,
    }
}
