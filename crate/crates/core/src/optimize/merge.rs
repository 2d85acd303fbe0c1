//! Replaces the range checks of one base with a single range query at their
//! nearest common dominator plus inline bound assertions.

use std::collections::HashSet;

use super::window::lifetime_stable;
use super::{checks, CheckKind, CheckInfo, PassStats};
use crate::ir::{
    BaseRef, DominatorInfo, Function, Inst, InstKind, Operand, Pos, Ty, ValueDef, ValueId,
};

pub(super) fn run(f: &mut Function, ps: &mut PassStats) {
    let mut done: HashSet<BaseRef> = HashSet::new();
    let mut first = true;
    loop {
        let defs = f.value_defs();
        let dom = DominatorInfo::new(f);
        let ranges: Vec<CheckInfo> = checks(f, &defs, &dom)
            .into_iter()
            .filter(|c| c.kind == CheckKind::Range)
            .collect();
        if first {
            ps.examined += ranges.len() as u64;
            first = false;
        }
        let next = ranges
            .iter()
            .map(|c| c.base)
            .find(|b| !done.contains(b));
        let Some(base) = next else { break };
        done.insert(base);
        let members: Vec<&CheckInfo> = ranges.iter().filter(|c| c.base == base).collect();
        if members.len() < 2 && members.iter().all(|c| c.offset.is_some()) {
            continue;
        }
        if let Some(g) = rewrite_group(f, &defs, &dom, base, &members) {
            ps.merged += members.len() as u64;
            ps.rewritten += 1;
            *f = g;
        }
    }
}

fn rewrite_group(
    f: &Function,
    defs: &[ValueDef],
    dom: &DominatorInfo,
    base: BaseRef,
    members: &[&CheckInfo],
) -> Option<Function> {
    let BaseRef::Value(bv) = base else { return None };
    let base_def = *defs.get(bv.index())?;
    if base_def == ValueDef::Undefined {
        return None;
    }
    let mut ncd = members[0].pos.block;
    for m in &members[1..] {
        ncd = dom.dom.common(ncd, m.pos.block)?;
    }
    // Candidate query points: the common dominator and each block above it,
    // shallowest loop nesting first, then nearest to the members.
    let depth = dom.loop_depth();
    let mut points = Vec::new();
    let mut d = Some(ncd);
    while let Some(b) = d {
        let at = if b == ncd {
            members
                .iter()
                .filter(|m| m.pos.block == ncd)
                .map(|m| m.pos.index)
                .min()
                .unwrap_or(f.block(ncd).insts.len() - 1)
        } else {
            f.block(b).insts.len() - 1
        };
        let after_def = match base_def {
            ValueDef::Inst(p) if p.block == b => p.index < at,
            ValueDef::Inst(p) => dom.dom.dominates(p.block, b),
            _ => true,
        };
        if !after_def {
            break;
        }
        points.push((depth[b.index()], points.len(), Pos::new(b, at)));
        d = dom.dom.idom(b);
    }
    points.sort();
    points
        .into_iter()
        .find_map(|(_, _, init)| rewrite_at(f, bv, init, members))
}

fn rewrite_at(f: &Function, bv: ValueId, init: Pos, members: &[&CheckInfo]) -> Option<Function> {
    let (ncd, at) = (init.block, init.index);
    let mut g = f.clone();
    let range = g.new_value("range", Ty::Range);
    g.blocks[ncd.index()].insts.insert(
        at,
        Inst::with_result(
            range,
            InstKind::GetRange {
                ptr: Operand::Value(bv),
            },
        ),
    );
    let shift = |p: Pos| -> Pos {
        if p.block == ncd && p.index >= at {
            Pos::new(p.block, p.index + 1)
        } else {
            p
        }
    };
    let mut moved = Vec::with_capacity(members.len());
    for m in members {
        let p = shift(m.pos);
        let inst = &mut g.blocks[p.block.index()].insts[p.index];
        let InstKind::CheckRange { dst, size, site, .. } = &inst.kind else {
            return None;
        };
        inst.kind = InstKind::AssertRange {
            range: Operand::Value(range),
            dst: *dst,
            size: *size,
            site: site.clone(),
        };
        moved.push(p);
    }
    let cfg = crate::ir::Cfg::new(&g);
    moved
        .iter()
        .all(|&p| lifetime_stable(&g, &cfg, init, p, true))
        .then_some(g)
}

#[cfg(test)]
mod tests {
    use crate::instrument::{instrument_program, InstrumentOptions};
    use crate::ir::{parse_program, print_program, validate_program, Program};
    use crate::optimize::{run_pipeline, OptFlags, Pass, SiteCounts};

    fn merged(src: &str) -> (Program, SiteCounts) {
        let p = parse_program(src).unwrap();
        let (q, _) = instrument_program(&p, InstrumentOptions::default()).unwrap();
        let (r, _) = run_pipeline(&q, OptFlags::only(Pass::Merge)).unwrap();
        assert!(validate_program(&r).is_empty(), "{:?}", validate_program(&r));
        let c = SiteCounts::of(&r);
        (r, c)
    }

    #[test]
    fn two_dynamic_checks_share_one_query() {
        let src = "
fn @foo(%ptr: i8*, %i: i64, %j: i64) {
entry:
  %a = ptradd i8, %ptr, %i
  store i8 120, %a
  %b = ptradd i8, %ptr, %j
  store i8 121, %b
  ret
}
fn @main() {
entry:
  ret
}
";
        let (r, c) = merged(src);
        assert_eq!((c.range_inits, c.asserts, c.range_checks), (1, 2, 0));
        let text = print_program(&r);
        assert!(text.contains("%range = getrange %ptr"), "{text}");
        assert!(text.contains("assertrange %range, %a, 1 !0"), "{text}");
    }

    #[test]
    fn lone_static_check_stays() {
        let src = "fn @f(%p: i8*) {\nentry:\n  %a = ptradd i8, %p, 3\n  ret\n}\nfn @main() {\nentry:\n  ret\n}\n";
        let (_, c) = merged(src);
        assert_eq!((c.range_inits, c.range_checks), (0, 1));
    }

    #[test]
    fn query_goes_to_common_dominator() {
        let src = "
fn @f(%p: i8*, %c: i64, %i: i64) {
entry:
  condbr %c, l, r
l:
  %a = ptradd i8, %p, %i
  br join
r:
  %b = ptradd i8, %p, 2
  br join
join:
  ret
}
fn @main() {
entry:
  ret
}
";
        let (r, c) = merged(src);
        assert_eq!((c.range_inits, c.asserts), (1, 2));
        let entry = &r.functions[0].blocks[0];
        assert!(matches!(entry.insts[0].kind, crate::ir::InstKind::GetRange { .. }));
    }

    #[test]
    fn free_after_query_blocks_merge() {
        let src = "
fn @f(%p: i8*, %i: i64) {
entry:
  %a = ptradd i8, %p, %i
  store i8 1, %a
  free %p
  %b = ptradd i8, %p, %i
  ret
}
fn @main() {
entry:
  ret
}
";
        let (_, c) = merged(src);
        assert_eq!((c.range_inits, c.range_checks), (0, 2));
    }

    #[test]
    fn query_leaves_the_loop() {
        let src = "
fn @f(%p: i8*, %n: i64) {
entry:
  br head
head:
  %i = phi i64 [0, entry], [%i2, body]
  %c = cmp lt i64 %i, %n
  condbr %c, body, done
body:
  %a = ptradd i8, %p, %i
  store i8 0, %a
  %i2 = binop add i64 %i, 1
  br head
done:
  ret
}
fn @main() {
entry:
  ret
}
";
        let (r, c) = merged(src);
        assert_eq!((c.range_inits, c.asserts), (1, 1));
        let entry = &r.functions[0].blocks[0];
        assert!(matches!(entry.insts[0].kind, crate::ir::InstKind::GetRange { .. }));
    }

    #[test]
    fn free_in_loop_keeps_query_inside() {
        let src = "
fn @f(%s: i8**, %n: i64) {
entry:
  br head
head:
  %i = phi i64 [0, entry], [%i2, body]
  %c = cmp lt i64 %i, %n
  condbr %c, body, done
body:
  %p = load i8*, %s
  %a = ptradd i8, %p, %i
  store i8 0, %a
  free %p
  %i2 = binop add i64 %i, 1
  br head
done:
  ret
}
fn @main() {
entry:
  ret
}
";
        let (r, c) = merged(src);
        assert_eq!((c.range_inits, c.asserts), (1, 1));
        let body = &r.functions[0].blocks[2];
        assert!(matches!(body.insts[2].kind, crate::ir::InstKind::GetRange { .. }));
    }
}
