//! Drops escape tracking for stores that write back a pointer derived from
//! the value just loaded from the same location (`p->mem++`). The location
//! already holds a recorded pointer into the same object.

use std::collections::HashSet;

use super::window::{between, touches_heap_lifetime};
use super::{remove_at, PassStats};
use crate::ir::{trace_base, BaseRef, DominatorInfo, Function, InstKind, Operand, Pos, ValueDef};

pub(super) fn run(f: &mut Function, ps: &mut PassStats) {
    let defs = f.value_defs();
    let dom = DominatorInfo::new(f);
    let mut dead = HashSet::new();
    for (pos, inst) in f.positions() {
        let InstKind::Escape { loc, value, .. } = &inst.kind else {
            continue;
        };
        ps.examined += 1;
        if self_update(f, &defs, &dom, pos, *loc, *value) {
            dead.insert(pos);
        }
    }
    ps.removed += dead.len() as u64;
    remove_at(f, &dead);
}

fn self_update(
    f: &Function,
    defs: &[ValueDef],
    dom: &DominatorInfo,
    esc: Pos,
    loc: Operand,
    value: Operand,
) -> bool {
    if !dom.reachable(esc.block) {
        return false;
    }
    let BaseRef::Value(root) = trace_base(f, defs, value).base else {
        return false;
    };
    let Some(ValueDef::Inst(lpos)) = defs.get(root.index()) else {
        return false;
    };
    let InstKind::Load { ptr, .. } = &f.inst(*lpos).kind else {
        return false;
    };
    if *ptr != loc || !dom.dominates(*lpos, esc) {
        return false;
    }
    let win = between(f, &dom.cfg, *lpos, esc);
    f.positions().all(|(p, i)| {
        !win[p.block.index()][p.index]
            || !(touches_heap_lifetime(&i.kind, false)
                || matches!(&i.kind, InstKind::Store { ptr, .. } if *ptr == loc))
    })
}

#[cfg(test)]
mod tests {
    use crate::instrument::{instrument_program, InstrumentOptions};
    use crate::ir::parse_program;
    use crate::optimize::{run_pipeline, OptFlags, Pass, SiteCounts};

    fn escapes_left(body: &str) -> (u64, u64) {
        let src = format!(
            "fn @f(%s: i8**) {{\nentry:\n{body}  ret\n}}\nfn @main() {{\nentry:\n  ret\n}}\n"
        );
        let p = parse_program(&src).unwrap();
        let (q, _) = instrument_program(&p, InstrumentOptions::default()).unwrap();
        let (r, _) = run_pipeline(&q, OptFlags::only(Pass::SelfEscape)).unwrap();
        (SiteCounts::of(&q).escapes, SiteCounts::of(&r).escapes)
    }

    #[test]
    fn increment_in_place_is_elided() {
        let body = "  %m = load i8*, %s\n  %n = ptradd i8, %m, 1\n  store i8* %n, %s\n";
        assert_eq!(escapes_left(body), (1, 0));
    }

    #[test]
    fn fresh_pointer_is_kept() {
        let body = "  %m = alloc 8\n  store i8* %m, %s\n";
        assert_eq!(escapes_left(body), (1, 1));
    }

    #[test]
    fn intervening_free_keeps_escape() {
        let body = "  %m = load i8*, %s\n  free %m\n  %n = ptradd i8, %m, 1\n  store i8* %n, %s\n";
        assert_eq!(escapes_left(body), (1, 1));
    }

    #[test]
    fn different_location_keeps_escape() {
        let body = "  %m = load i8*, %s\n  %t = ptradd i8*, %s, 1\n  store i8* %m, %t\n";
        assert_eq!(escapes_left(body), (1, 1));
    }
}
