use super::{BlockId, Function};

/// Successor and predecessor lists plus a reverse postorder from the entry
/// block (block 0).
#[derive(Clone, Debug)]
pub struct Cfg {
    pub succs: Vec<Vec<BlockId>>,
    pub preds: Vec<Vec<BlockId>>,
    /// Reachable blocks in reverse postorder.
    pub rpo: Vec<BlockId>,
    pub reachable: Vec<bool>,
}

impl Cfg {
    pub fn new(f: &Function) -> Self {
        let n = f.blocks.len();
        let mut succs = vec![Vec::new(); n];
        let mut preds = vec![Vec::new(); n];
        for (b, block) in f.blocks.iter().enumerate() {
            if let Some(t) = block.terminator() {
                for s in t.kind.successors() {
                    if s.index() < n {
                        succs[b].push(s);
                        preds[s.index()].push(BlockId(b as u32));
                    }
                }
            }
        }
        let mut reachable = vec![false; n];
        let mut post = Vec::with_capacity(n);
        if n > 0 {
            // Iterative DFS keeping (block, next successor index).
            let mut stack = vec![(0usize, 0usize)];
            reachable[0] = true;
            while let Some(&mut (b, ref mut next)) = stack.last_mut() {
                if let Some(s) = succs[b].get(*next) {
                    *next += 1;
                    let s = s.index();
                    if !reachable[s] {
                        reachable[s] = true;
                        stack.push((s, 0));
                    }
                } else {
                    post.push(BlockId(b as u32));
                    stack.pop();
                }
            }
        }
        post.reverse();
        Cfg {
            succs,
            preds,
            rpo: post,
            reachable,
        }
    }

    pub fn len(&self) -> usize {
        self.succs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.succs.is_empty()
    }

    /// Blocks ending in `ret`, i.e. reachable blocks with no successors.
    pub fn exits(&self) -> Vec<BlockId> {
        self.rpo
            .iter()
            .copied()
            .filter(|b| self.succs[b.index()].is_empty())
            .collect()
    }
}
