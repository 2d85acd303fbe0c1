//! Dominator and post-dominator trees (Cooper, Harvey, Kennedy iteration).

use super::{BlockId, Cfg, Function, Pos};

/// Immediate-dominator tree over `n` nodes. For post-dominators there is one
/// extra virtual exit node, numbered `n`, that every `ret` block flows to.
#[derive(Clone, Debug)]
pub struct DomTree {
    idom: Vec<Option<usize>>,
    depth: Vec<usize>,
    root: usize,
    /// Number of real blocks; nodes at or past this index are virtual.
    real: usize,
}

impl DomTree {
    fn build(n: usize, root: usize, succs: &[Vec<usize>]) -> DomTree {
        let mut order = vec![usize::MAX; n];
        let mut rpo = Vec::new();
        let mut seen = vec![false; n];
        let mut stack = vec![(root, 0usize)];
        seen[root] = true;
        let mut post = Vec::new();
        while let Some(&mut (b, ref mut next)) = stack.last_mut() {
            if let Some(&s) = succs[b].get(*next) {
                *next += 1;
                if !seen[s] {
                    seen[s] = true;
                    stack.push((s, 0));
                }
            } else {
                post.push(b);
                stack.pop();
            }
        }
        rpo.extend(post.iter().rev().copied());
        for (i, &b) in rpo.iter().enumerate() {
            order[b] = i;
        }
        let mut preds = vec![Vec::new(); n];
        for (b, ss) in succs.iter().enumerate() {
            if !seen[b] {
                continue;
            }
            for &s in ss {
                preds[s].push(b);
            }
        }

        let mut idom: Vec<Option<usize>> = vec![None; n];
        idom[root] = Some(root);
        let intersect = |idom: &[Option<usize>], mut a: usize, mut b: usize| {
            while a != b {
                while order[a] > order[b] {
                    a = idom[a].expect("processed node");
                }
                while order[b] > order[a] {
                    b = idom[b].expect("processed node");
                }
            }
            a
        };
        let mut changed = true;
        while changed {
            changed = false;
            for &b in rpo.iter().skip(1) {
                let mut new_idom = None;
                for &p in &preds[b] {
                    if idom[p].is_none() {
                        continue;
                    }
                    new_idom = Some(match new_idom {
                        None => p,
                        Some(cur) => intersect(&idom, p, cur),
                    });
                }
                if new_idom.is_some() && idom[b] != new_idom {
                    idom[b] = new_idom;
                    changed = true;
                }
            }
        }

        let mut depth = vec![0; n];
        for &b in rpo.iter().skip(1) {
            if let Some(d) = idom[b] {
                depth[b] = depth[d] + 1;
            }
        }
        idom[root] = None;
        DomTree {
            idom,
            depth,
            root,
            real: n,
        }
    }

    fn in_tree(&self, b: usize) -> bool {
        b == self.root || self.idom[b].is_some()
    }

    /// Immediate dominator of `b`; `None` for the root and unreachable nodes.
    pub fn idom(&self, b: BlockId) -> Option<BlockId> {
        self.idom
            .get(b.index())
            .copied()
            .flatten()
            .filter(|&d| d < self.real)
            .map(|d| BlockId(d as u32))
    }

    /// Reflexive dominance between blocks.
    pub fn dominates(&self, a: BlockId, b: BlockId) -> bool {
        self.dominates_idx(a.index(), b.index())
    }

    fn dominates_idx(&self, a: usize, mut b: usize) -> bool {
        if a >= self.idom.len() || b >= self.idom.len() || !self.in_tree(a) || !self.in_tree(b) {
            return false;
        }
        while self.depth[b] > self.depth[a] {
            b = self.idom[b].expect("non-root node has idom");
        }
        a == b
    }

    /// Nearest common dominator of two blocks in the tree.
    pub fn common(&self, a: BlockId, b: BlockId) -> Option<BlockId> {
        let (mut a, mut b) = (a.index(), b.index());
        if !self.in_tree(a) || !self.in_tree(b) {
            return None;
        }
        while self.depth[a] > self.depth[b] {
            a = self.idom[a]?;
        }
        while self.depth[b] > self.depth[a] {
            b = self.idom[b]?;
        }
        while a != b {
            a = self.idom[a]?;
            b = self.idom[b]?;
        }
        (a < self.real).then_some(BlockId(a as u32))
    }

    pub fn contains(&self, b: BlockId) -> bool {
        b.index() < self.real && self.in_tree(b.index())
    }
}

pub fn compute_dominators(f: &Function) -> DomTree {
    let cfg = Cfg::new(f);
    let n = cfg.len().max(1);
    let mut succs: Vec<Vec<usize>> = cfg
        .succs
        .iter()
        .map(|s| s.iter().map(|b| b.index()).collect())
        .collect();
    succs.resize(n, Vec::new());
    DomTree::build(n, 0, &succs)
}

/// Post-dominators, computed as dominators of the reversed graph rooted at a
/// virtual exit fed by every reachable `ret` block.
pub fn compute_postdominators(f: &Function) -> DomTree {
    let cfg = Cfg::new(f);
    let n = cfg.len();
    let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for b in 0..n {
        if !cfg.reachable[b] {
            continue;
        }
        for s in &cfg.succs[b] {
            rev[s.index()].push(b);
        }
    }
    for e in cfg.exits() {
        rev[n].push(e.index());
    }
    let mut t = DomTree::build(n + 1, n, &rev);
    t.real = n;
    t
}

/// Dominator and post-dominator trees for one function, plus
/// instruction-level queries.
#[derive(Clone, Debug)]
pub struct DominatorInfo {
    pub cfg: Cfg,
    pub dom: DomTree,
    pub postdom: DomTree,
}

impl DominatorInfo {
    pub fn new(f: &Function) -> Self {
        DominatorInfo {
            cfg: Cfg::new(f),
            dom: compute_dominators(f),
            postdom: compute_postdominators(f),
        }
    }

    pub fn reachable(&self, b: BlockId) -> bool {
        self.cfg.reachable.get(b.index()).copied().unwrap_or(false)
    }

    /// Every path from entry to `b` passes through `a` first. Reflexive.
    pub fn dominates(&self, a: Pos, b: Pos) -> bool {
        if a.block == b.block {
            return a.index <= b.index && self.reachable(a.block);
        }
        self.dom.dominates(a.block, b.block)
    }

    /// Number of natural loops containing each block. Back edges sharing a
    /// header form one loop.
    pub fn loop_depth(&self) -> Vec<u32> {
        let n = self.cfg.len();
        let mut bodies: Vec<(BlockId, Vec<bool>)> = Vec::new();
        for &t in &self.cfg.rpo {
            for &h in &self.cfg.succs[t.index()] {
                if !self.dom.dominates(h, t) {
                    continue;
                }
                let k = match bodies.iter().position(|(x, _)| *x == h) {
                    Some(k) => k,
                    None => {
                        let mut body = vec![false; n];
                        body[h.index()] = true;
                        bodies.push((h, body));
                        bodies.len() - 1
                    }
                };
                let body = &mut bodies[k].1;
                let mut stack = vec![t];
                while let Some(b) = stack.pop() {
                    if std::mem::replace(&mut body[b.index()], true) {
                        continue;
                    }
                    stack.extend(self.cfg.preds[b.index()].iter().copied());
                }
            }
        }
        let mut depth = vec![0u32; n];
        for (_, body) in bodies {
            for (d, inside) in depth.iter_mut().zip(body) {
                *d += u32::from(inside);
            }
        }
        depth
    }

    /// Every path from `b` to function exit passes through `a`. Reflexive.
    pub fn postdominates(&self, a: Pos, b: Pos) -> bool {
        if a.block == b.block {
            return a.index >= b.index && self.postdom.contains(a.block);
        }
        self.postdom.dominates(a.block, b.block)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    fn diamond() -> Function {
        let src = "
fn @main() {
entry:
  %c = const i64 1
  condbr %c, left, right
left:
  br join
right:
  br join
join:
  ret
}
";
        parse_program(src).unwrap().functions.remove(0)
    }

    #[test]
    fn diamond_dominators() {
        let f = diamond();
        let d = compute_dominators(&f);
        let b = |i| BlockId(i);
        assert!(d.dominates(b(0), b(3)));
        assert!(!d.dominates(b(1), b(3)));
        assert_eq!(d.idom(b(3)), Some(b(0)));
        assert_eq!(d.common(b(1), b(2)), Some(b(0)));
        let pd = compute_postdominators(&f);
        assert!(pd.dominates(b(3), b(0)));
        assert!(!pd.dominates(b(1), b(0)));
        assert_eq!(pd.idom(b(0)), Some(b(3)));
    }

    #[test]
    fn unreachable_block_is_dominated_by_nothing() {
        let src = "
fn @main() {
entry:
  ret
dead:
  br entry
}
";
        let f = parse_program(src).unwrap().functions.remove(0);
        let d = compute_dominators(&f);
        assert!(!d.dominates(BlockId(0), BlockId(1)));
        assert!(!d.contains(BlockId(1)));
    }

    #[test]
    fn infinite_loop_is_outside_postdom_tree() {
        let src = "
fn @main() {
entry:
  %c = const i64 0
  condbr %c, spin, done
spin:
  br spin
done:
  ret
}
";
        let f = parse_program(src).unwrap().functions.remove(0);
        let info = DominatorInfo::new(&f);
        assert!(!info.postdom.contains(BlockId(1)));
        assert!(info.postdominates(Pos::new(BlockId(2), 0), Pos::new(BlockId(2), 0)));
        assert!(info.postdominates(Pos::new(BlockId(2), 0), Pos::new(BlockId(0), 0)));
    }

    #[test]
    fn loop_depth_counts_nesting() {
        let src = "
fn @main() {
entry:
  %c = const i64 0
  br outer
outer:
  condbr %c, inner, done
inner:
  condbr %c, inner, latch
latch:
  condbr %c, outer, outer
done:
  ret
}
";
        let p = parse_program(src).unwrap();
        let info = DominatorInfo::new(&p.functions[0]);
        assert_eq!(info.loop_depth(), vec![0, 1, 2, 1, 0]);
    }
}
