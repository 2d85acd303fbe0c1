//! Path queries between two instructions of one function.

use std::collections::VecDeque;

use crate::ir::{BlockId, Callee, Cfg, Function, InstKind, Pos};

/// Marks, per block, which instructions lie on some path from `a` to `b`
/// that does not pass through `a` again. `a` itself is excluded; `b` is
/// included only when a path passes through it before reaching it again.
pub fn between(f: &Function, cfg: &Cfg, a: Pos, b: Pos) -> Vec<Vec<bool>> {
    let fwd = forward_from(f, cfg, a);
    let bwd = backward_to(f, cfg, a, b);
    fwd.into_iter()
        .zip(bwd)
        .map(|(x, y)| x.into_iter().zip(y).map(|(p, q)| p && q).collect())
        .collect()
}

fn blank(f: &Function) -> Vec<Vec<bool>> {
    f.blocks.iter().map(|b| vec![false; b.insts.len()]).collect()
}

fn forward_from(f: &Function, cfg: &Cfg, a: Pos) -> Vec<Vec<bool>> {
    let mut seen = blank(f);
    let ab = a.block.index();
    seen[ab][a.index + 1..].fill(true);
    let mut entered = vec![false; f.blocks.len()];
    let mut queue: VecDeque<BlockId> = cfg.succs[ab].iter().copied().collect();
    while let Some(s) = queue.pop_front() {
        let si = s.index();
        if entered[si] {
            continue;
        }
        entered[si] = true;
        if si == ab {
            seen[si][..a.index].fill(true);
            continue;
        }
        seen[si].fill(true);
        queue.extend(cfg.succs[si].iter().copied());
    }
    seen
}

fn backward_to(f: &Function, cfg: &Cfg, a: Pos, b: Pos) -> Vec<Vec<bool>> {
    let mut seen = blank(f);
    let (ab, bb) = (a.block.index(), b.block.index());
    if ab == bb && a.index < b.index {
        seen[bb][a.index + 1..b.index].fill(true);
        return seen;
    }
    seen[bb][..b.index].fill(true);
    let mut entered = vec![false; f.blocks.len()];
    let mut queue: VecDeque<BlockId> = cfg.preds[bb].iter().copied().collect();
    while let Some(q) = queue.pop_front() {
        let qi = q.index();
        if entered[qi] {
            continue;
        }
        entered[qi] = true;
        if qi == ab {
            seen[qi][a.index + 1..].fill(true);
            continue;
        }
        seen[qi].fill(true);
        queue.extend(cfg.preds[qi].iter().copied());
    }
    seen
}

/// Instructions that may release or reuse heap memory.
pub fn touches_heap_lifetime(kind: &InstKind, allocs_too: bool) -> bool {
    match kind {
        InstKind::Free { .. } => true,
        InstKind::Call {
            callee: Callee::Func(_),
            ..
        } => true,
        InstKind::Alloc { .. } => allocs_too,
        _ => false,
    }
}

/// No path from `a` to `b` frees memory or calls a function.
pub fn lifetime_stable(f: &Function, cfg: &Cfg, a: Pos, b: Pos, allocs_too: bool) -> bool {
    let win = between(f, cfg, a, b);
    f.positions()
        .all(|(pos, inst)| !win[pos.block.index()][pos.index] || !touches_heap_lifetime(&inst.kind, allocs_too))
}

/// Instructions that can neither trap, print, nor loop by themselves.
pub fn is_quiet(kind: &InstKind) -> bool {
    matches!(
        kind,
        InstKind::Const { .. }
            | InstKind::Bin { .. }
            | InstKind::Cmp { .. }
            | InstKind::Phi { .. }
            | InstKind::Br { .. }
            | InstKind::CondBr { .. }
            | InstKind::PtrAdd { .. }
            | InstKind::Cast { .. }
            | InstKind::Escape { .. }
            | InstKind::GetRange { .. }
    )
}

/// Every path leaving `from` reaches `to` after finitely many quiet
/// instructions: the region between them is acyclic and contains nothing
/// that traps, prints, calls, or returns.
pub fn quiet_reach(f: &Function, cfg: &Cfg, from: Pos, to: Pos) -> bool {
    let mut rpo_idx = vec![usize::MAX; f.blocks.len()];
    for (i, b) in cfg.rpo.iter().enumerate() {
        rpo_idx[b.index()] = i;
    }
    let (fb, tb) = (from.block.index(), to.block.index());
    if rpo_idx[fb] == usize::MAX || rpo_idx[tb] == usize::MAX {
        return false;
    }
    let quiet_range = |b: usize, lo: usize, hi: usize| {
        f.blocks[b].insts[lo..hi].iter().all(|i| is_quiet(&i.kind))
    };
    if fb == tb && from.index < to.index {
        return quiet_range(fb, from.index + 1, to.index);
    }
    let len = |b: usize| f.blocks[b].insts.len();
    if !quiet_range(fb, from.index + 1, len(fb)) {
        return false;
    }
    let mut entered = vec![false; f.blocks.len()];
    let mut stack = vec![fb];
    while let Some(b) = stack.pop() {
        if cfg.succs[b].is_empty() {
            return false;
        }
        for s in &cfg.succs[b] {
            let si = s.index();
            if rpo_idx[si] == usize::MAX || rpo_idx[si] <= rpo_idx[b] {
                return false;
            }
            if entered[si] {
                continue;
            }
            entered[si] = true;
            if si == tb {
                if !quiet_range(si, 0, to.index) {
                    return false;
                }
                continue;
            }
            if !quiet_range(si, 0, len(si)) {
                return false;
            }
            stack.push(si);
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    fn func(src: &str) -> Function {
        parse_program(src).unwrap().functions.remove(0)
    }

    fn pos(b: u32, i: usize) -> Pos {
        Pos::new(BlockId(b), i)
    }

    const LOOP: &str = "
fn @main(%n: i64) {
entry:
  %a = alloc 8
  br head
head:
  %i = phi i64 [0, entry], [%j, body]
  %c = cmp lt i64 %i, %n
  condbr %c, body, out
body:
  free %a
  %j = binop add i64 %i, 1
  br head
out:
  ret
}
";

    #[test]
    fn loop_body_lies_between_entry_and_head() {
        let f = func(LOOP);
        let cfg = Cfg::new(&f);
        let w = between(&f, &cfg, pos(0, 0), pos(1, 1));
        assert!(w[2].iter().all(|x| *x));
        assert!(w[0][1]);
        assert!(!w[3].iter().any(|x| *x));
        assert!(!lifetime_stable(&f, &cfg, pos(0, 0), pos(1, 1), false));
        assert!(lifetime_stable(&f, &cfg, pos(0, 0), pos(0, 1), false));
    }

    #[test]
    fn quiet_reach_rejects_cycles_and_side_effects() {
        let f = func(LOOP);
        let cfg = Cfg::new(&f);
        assert!(quiet_reach(&f, &cfg, pos(1, 0), pos(1, 2)));
        assert!(!quiet_reach(&f, &cfg, pos(1, 2), pos(3, 0)));
        assert!(!quiet_reach(&f, &cfg, pos(2, 0), pos(1, 1)));
        let diamond = func(
            "
fn @main(%c: i64) {
entry:
  %x = const i64 1
  condbr %c, l, r
l:
  %y = binop add i64 %x, 1
  br join
r:
  br join
join:
  ret
}
",
        );
        let cfg = Cfg::new(&diamond);
        assert!(quiet_reach(&diamond, &cfg, pos(0, 0), pos(3, 0)));
        assert!(!quiet_reach(&diamond, &cfg, pos(0, 0), pos(1, 1)));
    }
}
