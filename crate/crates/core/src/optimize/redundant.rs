//! Removes range checks implied by another check on the same base.

use std::collections::{HashMap, HashSet};

use super::window::{lifetime_stable, quiet_reach};
use super::{checks, remove_at, CheckKind, PassStats};
use crate::ir::{BaseRef, DominatorInfo, Function, InstKind, Pos};

/// A range check with a constant offset from its base.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RangeCandidate {
    pub pos: Pos,
    pub id: u32,
    pub base: BaseRef,
    pub offset: u64,
    pub size: u64,
}

impl RangeCandidate {
    pub fn extent(&self) -> u64 {
        self.offset.saturating_add(self.size)
    }
}

/// Whether a passing check `a` makes check `b` redundant: `a` reaches at
/// least as far from the same base, and either runs before `b` with no
/// free or call in between, or runs after `b` with nothing in between that
/// could trap or have visible effects.
pub fn redundant_pair(
    f: &Function,
    dom: &DominatorInfo,
    a: &RangeCandidate,
    b: &RangeCandidate,
) -> bool {
    if a.pos == b.pos || a.base != b.base || a.offset < b.offset || a.extent() < b.extent() {
        return false;
    }
    (dom.dominates(a.pos, b.pos) && lifetime_stable(f, &dom.cfg, a.pos, b.pos, false))
        || (dom.postdominates(a.pos, b.pos) && quiet_reach(f, &dom.cfg, b.pos, a.pos))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Survivor {
    pub pos: Pos,
    pub id: u32,
    pub offset: u64,
    /// Every check this one stands in for, with its offset.
    pub absorbed: Vec<(u32, u64)>,
}

#[derive(Clone, Debug)]
pub struct RedundantOutcome {
    pub function: Function,
    pub stats: PassStats,
    /// Candidates with a constant offset, in reverse postorder.
    pub candidates: Vec<RangeCandidate>,
    pub survivors: Vec<Survivor>,
    /// Rounds of the fixed-point loop, including the final one that finds
    /// nothing.
    pub iterations: usize,
}

/// Candidates for redundancy removal in `f`.
pub fn range_candidates(f: &Function, dom: &DominatorInfo) -> Vec<RangeCandidate> {
    let defs = f.value_defs();
    checks(f, &defs, dom)
        .into_iter()
        .filter(|c| c.kind == CheckKind::Range)
        .filter_map(|c| {
            Some(RangeCandidate {
                pos: c.pos,
                id: c.site.id,
                base: c.base,
                offset: c.offset?,
                size: c.size,
            })
        })
        .collect()
}

/// Fixed-point elimination: group candidates by base, and each round remove
/// the first redundant member found, letting the survivor keep the larger
/// offset. Rounds stop when no group has a redundant pair.
pub fn remove_redundant(f: &Function) -> RedundantOutcome {
    let dom = DominatorInfo::new(f);
    let cands = range_candidates(f, &dom);
    let mut groups: Vec<(BaseRef, Vec<usize>)> = Vec::new();
    for (i, c) in cands.iter().enumerate() {
        match groups.iter_mut().find(|(b, _)| *b == c.base) {
            Some((_, members)) => members.push(i),
            None => groups.push((c.base, vec![i])),
        }
    }
    let mut memo: HashMap<(usize, usize), bool> = HashMap::new();
    let mut pair = |i: usize, j: usize| {
        *memo
            .entry((i, j))
            .or_insert_with(|| redundant_pair(f, &dom, &cands[i], &cands[j]))
    };
    let mut alive = vec![true; cands.len()];
    let mut offset: Vec<u64> = cands.iter().map(|c| c.offset).collect();
    let mut absorbed: Vec<Vec<(u32, u64)>> = vec![Vec::new(); cands.len()];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let found = groups.iter().find_map(|(_, members)| {
            members.iter().copied().filter(|&i| alive[i]).find_map(|i| {
                members
                    .iter()
                    .copied()
                    .find(|&j| j != i && alive[j] && pair(i, j))
                    .map(|j| (i, j))
            })
        });
        let Some((keep, drop)) = found else { break };
        alive[drop] = false;
        offset[keep] = offset[keep].max(offset[drop]);
        let moved = std::mem::take(&mut absorbed[drop]);
        absorbed[keep].push((cands[drop].id, cands[drop].offset));
        absorbed[keep].extend(moved);
    }

    let mut out = f.clone();
    let dead: HashSet<Pos> = (0..cands.len())
        .filter(|&i| !alive[i])
        .map(|i| cands[i].pos)
        .collect();
    let mut survivors = Vec::new();
    for i in (0..cands.len()).filter(|&i| alive[i]) {
        let c = &cands[i];
        if !absorbed[i].is_empty() {
            let inst = &mut out.blocks[c.pos.block.index()].insts[c.pos.index];
            if let InstKind::CheckRange { site, .. } = &mut inst.kind {
                site.absorbed.extend(absorbed[i].iter().map(|(id, _)| *id));
                site.absorbed.sort_unstable();
                site.absorbed.dedup();
            }
        }
        survivors.push(Survivor {
            pos: c.pos,
            id: c.id,
            offset: offset[i],
            absorbed: absorbed[i].clone(),
        });
    }
    remove_at(&mut out, &dead);
    let stats = PassStats {
        examined: cands.len() as u64,
        removed: dead.len() as u64,
        ..PassStats::default()
    };
    RedundantOutcome {
        function: out,
        stats,
        candidates: cands,
        survivors,
        iterations,
    }
}
